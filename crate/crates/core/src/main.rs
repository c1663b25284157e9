fn main() {
    std::process::exit(revgnn::cli::run());
}
