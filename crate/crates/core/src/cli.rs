//! Command-line frontend: prepare / train / eval / ablate /
//! export-embeddings / dump-config.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical abort, 4 artifact
//! mismatch.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::evalkit::{self, Evaluator};
use crate::graphstore::{self, load_edges, load_features, make_split};
use crate::stage2::ClusterState;
use crate::trainer::{
    load_prepared, node_embeddings, prepared_data_hash, TrainConfig, Trainer, Variant,
};

#[derive(Parser)]
#[command(
    name = "revgnn",
    version,
    about = "Two-stage graph-contrastive reviewer recommendation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Intern catalogs, draw the train/test split, pool scholar features,
    /// and write the prepared data directory.
    Prepare {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a prepared directory and write a checkpoint plus epoch log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Apply one ablation variant (e.g. `no-stage2`, `-Knowl.`, `C=4`).
        #[arg(long)]
        ablate: Option<String>,
        /// Epoch CSV destination (defaults to `<out>.log.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Rank candidates for every test submission and write the metric report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        report: PathBuf,
        /// Optional per-candidate detail export.
        #[arg(long)]
        detail: Option<PathBuf>,
        /// Optional raw score export.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Optional SVG bar chart of the four metrics.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Train and evaluate a grid of ablation variants across seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated variants: full, -Knowl., -Behav., -Stage-2,
        /// uniform-neg, C=<n>.
        #[arg(long)]
        variants: String,
        /// Comma-separated training seeds.
        #[arg(long)]
        seeds: String,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        /// Optional SVG chart of median recall per variant.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Export stage-2 node embeddings and cluster assignments.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective default configuration.
    DumpConfig,
}

/// Parses argv, runs one subcommand, and maps errors onto the exit-code
/// contract.
pub fn run() -> i32 {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("REVGNN_THREADS") {
        if let Ok(n) = threads.trim().parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite(_) => 3,
                Error::ArtifactMismatch(_) => 4,
                _ => 2,
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Prepare {
            edges,
            features,
            seed,
            out,
        } => prepare(&edges, &features, seed, &out),
        Command::Train {
            config,
            data,
            out,
            ablate,
            log,
        } => train(&config, &data, &out, ablate.as_deref(), log.as_deref()),
        Command::Eval {
            checkpoint,
            data,
            k,
            report,
            detail,
            scores,
            plot,
        } => eval(
            &checkpoint,
            &data,
            k,
            &report,
            detail.as_deref(),
            scores.as_deref(),
            plot.as_deref(),
        ),
        Command::Ablate {
            config,
            data,
            variants,
            seeds,
            k,
            out,
            plot,
        } => ablate(&config, &data, &variants, &seeds, k, &out, plot.as_deref()),
        Command::ExportEmbeddings {
            checkpoint,
            data,
            out,
        } => export_embeddings(&checkpoint, &data, &out),
        Command::DumpConfig => {
            print!("{}", TrainConfig::default().render());
            Ok(())
        }
    }
}

fn prepare(edges: &Path, features: &Path, seed: u64, out: &Path) -> Result<(), Error> {
    let mut graph = load_edges(edges)?;
    make_split(&mut graph, seed);
    let mut feats = load_features(features, &graph)?;
    graphstore::pool_scholar_features(&graph, &mut feats)?;
    if feats.ignored_nodes > 0 {
        eprintln!(
            "warning: {} feature rows referenced unknown nodes and were ignored",
            feats.ignored_nodes
        );
    }
    if graph.duplicate_count() > 0 {
        eprintln!(
            "warning: {} duplicate edges collapsed",
            graph.duplicate_count()
        );
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let mut scholars = String::new();
    for id in graph.scholar_ids() {
        scholars.push_str(id);
        scholars.push('\n');
    }
    let mut submissions = String::new();
    for id in graph.submission_ids() {
        submissions.push_str(id);
        submissions.push('\n');
    }
    write_file(&out.join("scholars.txt"), &scholars)?;
    write_file(&out.join("submissions.txt"), &submissions)?;
    write_file(&out.join("split.tsv"), &graphstore::render_split(&graph))?;
    write_file(
        &out.join("submission_features.tsv"),
        &graphstore::render_features(graph.submission_ids(), feats.submission_matrix()),
    )?;
    write_file(
        &out.join("scholar_features.tsv"),
        &graphstore::render_features(graph.scholar_ids(), feats.scholar_matrix()),
    )?;

    let stats = graphstore::compute_stats(&graph)?;
    let hash = prepared_data_hash(out)?;
    let stats_text = format!(
        "scholars = {}\nsubmissions = {}\nreviews = {}\ndensity = {:e}\nduplicates = {}\nseed = {}\ndata_hash = {:016x}\n",
        stats.scholars,
        stats.submissions,
        stats.reviews,
        stats.density,
        graph.duplicate_count(),
        seed,
        hash
    );
    write_file(&out.join("stats.txt"), &stats_text)?;
    print!("{stats_text}");
    Ok(())
}

fn train(
    config_path: &Path,
    data_dir: &Path,
    out: &Path,
    ablate: Option<&str>,
    log_path: Option<&Path>,
) -> Result<(), Error> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Error::io(config_path.display().to_string(), e))?;
    let mut config = TrainConfig::parse(&text, &config_path.display().to_string())?;
    if let Some(token) = ablate {
        config = Variant::parse(token)?.apply(config);
    }
    let data = load_prepared(data_dir)?;
    let mut trainer = Trainer::new(config, &data)?;
    let log = trainer.fit()?;
    trainer.save_checkpoint(out)?;
    let log_dest = match log_path {
        Some(p) => p.to_path_buf(),
        None => {
            let mut name = out.as_os_str().to_owned();
            name.push(".log.csv");
            PathBuf::from(name)
        }
    };
    write_file(&log_dest, &log)?;
    eprintln!(
        "trained {} epochs, checkpoint {} log {}",
        trainer.epoch,
        out.display(),
        log_dest.display()
    );
    Ok(())
}

fn eval(
    checkpoint: &Path,
    data_dir: &Path,
    k: usize,
    report_path: &Path,
    detail: Option<&Path>,
    scores: Option<&Path>,
    plot: Option<&Path>,
) -> Result<(), Error> {
    if k == 0 {
        return Err(Error::Input("k must be >= 1".to_string()));
    }
    let data = load_prepared(data_dir)?;
    let trainer = Trainer::load_checkpoint(checkpoint, &data)?;
    let ev = Evaluator::new(&trainer.model, &data)?;
    let cfg = &trainer.model.config;
    let report = ev.evaluate(k, cfg.seed, cfg.hash(), cfg.log_timing)?;
    write_file(report_path, &evalkit::render_report(&report))?;
    if let Some(p) = detail {
        write_file(p, &evalkit::render_detail(&report, &data))?;
    }
    if let Some(p) = scores {
        write_file(p, &evalkit::render_scores(&report, &data))?;
    }
    if let Some(p) = plot {
        let labels = [
            format!("R@{k}"),
            format!("N@{k}"),
            format!("HR@{k}"),
            format!("P@{k}"),
        ];
        let values = [
            report.recall,
            report.ndcg,
            report.hit_ratio,
            report.precision,
        ];
        write_file(p, &svg_bar_chart("evaluation metrics", &labels, &values))?;
    }
    println!(
        "R@{k} {:.6}  N@{k} {:.6}  HR@{k} {:.6}  P@{k} {:.6}",
        report.recall, report.ndcg, report.hit_ratio, report.precision
    );
    Ok(())
}

fn ablate(
    config_path: &Path,
    data_dir: &Path,
    variants_arg: &str,
    seeds_arg: &str,
    k: usize,
    out: &Path,
    plot: Option<&Path>,
) -> Result<(), Error> {
    // Validate every flag before touching any file.
    let variants: Vec<Variant> = variants_arg
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(Variant::parse)
        .collect::<Result<_, _>>()?;
    if variants.is_empty() {
        return Err(Error::Input("no variants given".to_string()));
    }
    let seeds: Vec<u64> = seeds_arg
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::Input(format!("bad seed `{t}`")))
        })
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err(Error::Input("no seeds given".to_string()));
    }
    if k == 0 {
        return Err(Error::Input("k must be >= 1".to_string()));
    }

    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Error::io(config_path.display().to_string(), e))?;
    let base = TrainConfig::parse(&text, &config_path.display().to_string())?;
    let data = load_prepared(data_dir)?;

    let mut rows = String::from("variant,seed,recall,ndcg,hit_ratio,precision\n");
    let mut per_variant: Vec<(String, Vec<[f64; 4]>)> = Vec::new();
    for variant in &variants {
        let mut metrics = Vec::new();
        for &seed in &seeds {
            let mut cfg = variant.apply(base.clone());
            cfg.seed = seed;
            let mut trainer = Trainer::new(cfg, &data)?;
            trainer.fit()?;
            let ev = Evaluator::new(&trainer.model, &data)?;
            let cfg = &trainer.model.config;
            let report = ev.evaluate(k, seed, cfg.hash(), false)?;
            rows.push_str(&format!(
                "{},{},{},{},{},{}\n",
                variant.name(),
                seed,
                report.recall,
                report.ndcg,
                report.hit_ratio,
                report.precision
            ));
            metrics.push([
                report.recall,
                report.ndcg,
                report.hit_ratio,
                report.precision,
            ]);
        }
        per_variant.push((variant.name(), metrics));
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    write_file(&out.join("ablation.csv"), &rows)?;

    // Pairwise significance per metric; exact mode for <= 8 seeds per side.
    let metric_names = ["recall", "ndcg", "hit_ratio", "precision"];
    let mut pvals = String::from("variant_a,variant_b,metric,u,p\n");
    for i in 0..per_variant.len() {
        for j in i + 1..per_variant.len() {
            for (m, name) in metric_names.iter().enumerate() {
                let a: Vec<f64> = per_variant[i].1.iter().map(|r| r[m]).collect();
                let b: Vec<f64> = per_variant[j].1.iter().map(|r| r[m]).collect();
                let mw = if a.len() <= 8 && b.len() <= 8 {
                    evalkit::mann_whitney_u_exact(&a, &b)?
                } else {
                    evalkit::mann_whitney_u(&a, &b)?
                };
                pvals.push_str(&format!(
                    "{},{},{},{},{}\n",
                    per_variant[i].0, per_variant[j].0, name, mw.u, mw.p
                ));
            }
        }
    }
    write_file(&out.join("pvalues.csv"), &pvals)?;

    if let Some(p) = plot {
        let labels: Vec<String> = per_variant.iter().map(|(n, _)| n.clone()).collect();
        let medians: Vec<f64> = per_variant
            .iter()
            .map(|(_, ms)| median(ms.iter().map(|r| r[0])))
            .collect();
        // A pure cluster sweep plots as a line over C; anything else is bars.
        let cluster_axis: Option<Vec<f64>> = variants
            .iter()
            .map(|v| match v {
                Variant::Clusters(n) => Some(*n as f64),
                _ => None,
            })
            .collect();
        let svg = match cluster_axis {
            Some(xs) if xs.len() > 1 => {
                svg_line_chart(&format!("recall@{k} vs cluster count"), &xs, &medians)
            }
            _ => svg_bar_chart(&format!("median recall@{k} by variant"), &labels, &medians),
        };
        write_file(p, &svg)?;
    }
    print!("{rows}");
    Ok(())
}

fn export_embeddings(checkpoint: &Path, data_dir: &Path, out: &Path) -> Result<(), Error> {
    let data = load_prepared(data_dir)?;
    let trainer = Trainer::load_checkpoint(checkpoint, &data)?;
    let (_, embeddings) = node_embeddings(&trainer.model, &data)?;

    let mut node_ids: Vec<String> = Vec::with_capacity(data.graph.node_count());
    for id in data.graph.scholar_ids() {
        node_ids.push(id.clone());
    }
    for id in data.graph.submission_ids() {
        node_ids.push(id.clone());
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    write_file(
        &out.join("embeddings.tsv"),
        &graphstore::render_features(&node_ids, &embeddings),
    )?;

    if trainer.model.config.enable_stage2 {
        let centers = trainer
            .model
            .store
            .value(trainer.model.stage2.centers)
            .clone();
        let state = ClusterState::from_embeddings(&embeddings, &centers);
        write_file(&out.join("clusters.tsv"), &state.render(&node_ids))?;
    }
    Ok(())
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    if v.is_empty() {
        return f64::NAN;
    }
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const SVG_MARGIN: f64 = 60.0;

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        SVG_W / 2.0
    )
}

fn svg_bar_chart(title: &str, labels: &[String], values: &[f64]) -> String {
    let mut svg = svg_header(title);
    let max = values.iter().cloned().fold(f64::EPSILON, f64::max);
    let plot_w = SVG_W - 2.0 * SVG_MARGIN;
    let plot_h = SVG_H - 2.0 * SVG_MARGIN;
    let slot = plot_w / values.len() as f64;
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let h = (v / max).max(0.0) * plot_h;
        let x = SVG_MARGIN + i as f64 * slot + slot * 0.15;
        let y = SVG_H - SVG_MARGIN - h;
        svg.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"#4878a8\"/>\n",
            slot * 0.7
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{label}</text>\n",
            x + slot * 0.35,
            SVG_H - SVG_MARGIN + 16.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{v:.4}</text>\n",
            x + slot * 0.35,
            y - 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn svg_line_chart(title: &str, xs: &[f64], ys: &[f64]) -> String {
    let mut svg = svg_header(title);
    let (xmin, xmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let ymax = ys.iter().cloned().fold(f64::EPSILON, f64::max);
    let plot_w = SVG_W - 2.0 * SVG_MARGIN;
    let plot_h = SVG_H - 2.0 * SVG_MARGIN;
    let sx = |x: f64| {
        SVG_MARGIN
            + if xmax > xmin {
                (x - xmin) / (xmax - xmin) * plot_w
            } else {
                plot_w / 2.0
            }
    };
    let sy = |y: f64| SVG_H - SVG_MARGIN - (y / ymax) * plot_h;
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y)))
        .collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#4878a8\" stroke-width=\"2\" points=\"{}\"/>\n",
        points.join(" ")
    ));
    for (&x, &y) in xs.iter().zip(ys) {
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"#4878a8\"/>\n",
            sx(x),
            sy(y)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{x}</text>\n",
            sx(x),
            SVG_H - SVG_MARGIN + 16.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
