//! Ranking protocol and evaluation: top-K candidate ranking through the
//! decoder, the four aggregate metrics, the Mann-Whitney U significance
//! utility, and report files.
//!
//! NDCG here discounts position k (counted from 1) by log2(2 + k). This is
//! deliberate and differs from the more common log2(1 + k) convention;
//! comparisons against other toolkits must account for it.

use rayon::prelude::*;

use crate::decoder::{self, DecoderWeights};
use crate::error::Error;
use crate::numcore::dense::DenseMatrix;
use crate::trainer::{node_embeddings, Model, PreparedData};

/// One evaluated submission: the truth set and the ranked candidate list
/// with scores.
#[derive(Debug, Clone)]
pub struct SubmissionRanking {
    pub submission: u32,
    pub truth: Vec<u32>,
    pub ranked: Vec<(u32, f64)>,
}

/// Aggregates plus per-submission detail for one evaluation run.
#[derive(Debug, Clone)]
pub struct RankingReport {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub hit_ratio: f64,
    pub precision: f64,
    pub rows: Vec<SubmissionRanking>,
    pub seed: u64,
    pub config_hash: u64,
    pub wall_seconds: f64,
}

/// Truth set and (already ranked) candidate ids for one query.
#[derive(Debug, Clone)]
pub struct RankedQuery {
    pub truth: Vec<u32>,
    pub ranked: Vec<u32>,
}

fn contains(set: &[u32], v: u32) -> bool {
    set.contains(&v)
}

fn eval_queries(queries: &[RankedQuery]) -> Result<Vec<&RankedQuery>, Error> {
    let live: Vec<&RankedQuery> = queries.iter().filter(|q| !q.truth.is_empty()).collect();
    if live.is_empty() {
        return Err(Error::Input(
            "evaluation set is empty: no query has a truth item".to_string(),
        ));
    }
    Ok(live)
}

/// Mean over queries of |truth ∩ top-K| / |truth|.
pub fn recall_at_k(queries: &[RankedQuery], k: usize) -> Result<f64, Error> {
    let live = eval_queries(queries)?;
    let mut total = 0.0;
    for q in &live {
        let hits = q
            .ranked
            .iter()
            .take(k)
            .filter(|&&r| contains(&q.truth, r))
            .count();
        total += hits as f64 / q.truth.len() as f64;
    }
    Ok(total / live.len() as f64)
}

/// Mean over queries of |truth ∩ top-K| / K (the list size is taken as K
/// even when fewer candidates exist).
pub fn precision_at_k(queries: &[RankedQuery], k: usize) -> Result<f64, Error> {
    let live = eval_queries(queries)?;
    let mut total = 0.0;
    for q in &live {
        let hits = q
            .ranked
            .iter()
            .take(k)
            .filter(|&&r| contains(&q.truth, r))
            .count();
        total += hits as f64 / k as f64;
    }
    Ok(total / live.len() as f64)
}

fn dcg_discount(position_from_1: usize) -> f64 {
    // Position k contributes (2^rel - 1) / log2(2 + k).
    ((2 + position_from_1) as f64).log2()
}

/// Mean over queries of DCG@K / IDCG@K with binary relevance.
pub fn ndcg_at_k(queries: &[RankedQuery], k: usize) -> Result<f64, Error> {
    let live = eval_queries(queries)?;
    let mut total = 0.0;
    for q in &live {
        let mut dcg = 0.0;
        for (i, r) in q.ranked.iter().take(k).enumerate() {
            if contains(&q.truth, *r) {
                dcg += 1.0 / dcg_discount(i + 1);
            }
        }
        let ideal_hits = q.truth.len().min(k);
        let mut idcg = 0.0;
        for i in 0..ideal_hits {
            idcg += 1.0 / dcg_discount(i + 1);
        }
        if idcg > 0.0 {
            total += dcg / idcg;
        }
    }
    Ok(total / live.len() as f64)
}

/// Total hits within K over the total number of truth items.
pub fn hit_ratio_at_k(queries: &[RankedQuery], k: usize) -> Result<f64, Error> {
    let live = eval_queries(queries)?;
    let mut hits = 0usize;
    let mut truths = 0usize;
    for q in &live {
        hits += q
            .ranked
            .iter()
            .take(k)
            .filter(|&&r| contains(&q.truth, r))
            .count();
        truths += q.truth.len();
    }
    Ok(hits as f64 / truths as f64)
}

/// Rank-sum U statistic with a two-sided p-value.
#[derive(Debug, Clone, Copy)]
pub struct MannWhitney {
    pub u: f64,
    pub p: f64,
}

fn midranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut all: Vec<(f64, usize)> = a
        .iter()
        .copied()
        .enumerate()
        .map(|(i, v)| (v, i))
        .chain(b.iter().copied().enumerate().map(|(i, v)| (v, a.len() + i)))
        .collect();
    all.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("non-finite sample value"));
    let n = all.len();
    let mut ranks = vec![0.0; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for item in &all[i..=j] {
            ranks[item.1] = rank;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }
    (ranks, tie_sizes)
}

fn u_statistic(a: &[f64], b: &[f64]) -> (f64, Vec<usize>) {
    let (ranks, ties) = midranks(a, b);
    let r_a: f64 = ranks[..a.len()].iter().sum();
    let u = r_a - (a.len() * (a.len() + 1)) as f64 / 2.0;
    (u, ties)
}

/// Standard normal survival function (Abramowitz-Stegun erf polynomial,
/// absolute error below 1.5e-7 — sufficient for comparative reporting).
fn normal_sf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf_abs = 1.0 - poly * (-x * x).exp();
    let erf = if x < 0.0 { -erf_abs } else { erf_abs };
    0.5 * (1.0 - erf)
}

/// Two-sided Mann-Whitney U test via the tie-corrected normal
/// approximation. Identical samples give `u = n_a n_b / 2`, `p = 1`.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, Error> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input(
            "mann-whitney requires non-empty samples".to_string(),
        ));
    }
    let (u, ties) = u_statistic(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let mean = na * nb / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitney { u: mean, p: 1.0 });
    }
    let z = (u - mean) / var.sqrt();
    let p = (2.0 * normal_sf(z.abs())).min(1.0);
    Ok(MannWhitney { u, p })
}

/// Exact two-sided permutation p-value for small samples (n <= 8 per side):
/// the fraction of label assignments whose U is at least as far from the
/// null mean as the observed one. Handles ties by construction.
pub fn mann_whitney_u_exact(a: &[f64], b: &[f64]) -> Result<MannWhitney, Error> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input(
            "mann-whitney requires non-empty samples".to_string(),
        ));
    }
    if a.len() > 8 || b.len() > 8 {
        return Err(Error::Input(
            "exact mode supports at most 8 values per side".to_string(),
        ));
    }
    let (u_obs, _) = u_statistic(a, b);
    let mean = (a.len() * b.len()) as f64 / 2.0;
    let observed_dev = (u_obs - mean).abs();

    let mut pool: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    pool.sort_by(|x, y| x.partial_cmp(y).expect("non-finite sample value"));
    let n = pool.len();
    let k = a.len();
    let mut extreme = 0usize;
    let mut total = 0usize;
    // Enumerate all k-subsets of indices as the "a" side.
    let mut choose: Vec<usize> = (0..k).collect();
    loop {
        let sel: Vec<f64> = choose.iter().map(|&i| pool[i]).collect();
        let rest: Vec<f64> = (0..n)
            .filter(|i| !choose.contains(i))
            .map(|i| pool[i])
            .collect();
        let (u, _) = u_statistic(&sel, &rest);
        if (u - mean).abs() >= observed_dev - 1e-12 {
            extreme += 1;
        }
        total += 1;
        // Next combination.
        let mut i = k;
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            if choose[i] != i + n - k {
                choose[i] += 1;
                for j in i + 1..k {
                    choose[j] = choose[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                return Ok(MannWhitney {
                    u: u_obs,
                    p: extreme as f64 / total as f64,
                });
            }
        }
        if choose[0] > n - k {
            break;
        }
    }
    Ok(MannWhitney {
        u: u_obs,
        p: extreme as f64 / total as f64,
    })
}

/// Scores candidates for submissions through the decoder over fixed
/// embeddings. Ranking is deterministic: descending score with ascending
/// scholar index on ties.
pub struct Evaluator<'a> {
    pub data: &'a PreparedData,
    pub embeddings: DenseMatrix,
    weights: DecoderWeights<'a>,
    history_cap: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a Model, data: &'a PreparedData) -> Result<Self, Error> {
        let (_, decoder_input) = node_embeddings(model, data)?;
        decoder_input.assert_finite("decoder input embeddings")?;
        Ok(Evaluator {
            data,
            embeddings: decoder_input,
            weights: model.decoder.resolve(&model.store),
            history_cap: model.config.history_cap,
        })
    }

    /// Decoder logit for every scholar against one submission. Ranking on
    /// logits orders exactly like ranking on probabilities, without losing
    /// resolution where the sigmoid saturates.
    fn score_scholars(&self, submission: u32) -> Vec<f64> {
        let g = &self.data.graph;
        let h_v = self.embeddings.row(g.submission_node(submission) as usize);
        let ctx = decoder::candidate_context(&self.weights, h_v);
        (0..g.scholar_count() as u32)
            .map(|sch| {
                let hist = self.data.history_for(sch, submission, self.history_cap);
                let rows: Vec<&[f64]> = hist
                    .iter()
                    .map(|&p| self.embeddings.row(g.submission_node(p) as usize))
                    .collect();
                let h_u = self.embeddings.row(g.scholar_node(sch) as usize);
                decoder::logit_with_context(&self.weights, &ctx, h_u, &rows)
            })
            .collect()
    }

    fn ranked(&self, submission: u32, k: usize, exclude_train: bool) -> Vec<(u32, f64)> {
        let logits = self.score_scholars(submission);
        let excluded = &self.data.submission_train[submission as usize];
        let mut order: Vec<(u32, f64)> = logits
            .into_iter()
            .enumerate()
            .filter(|(s, _)| !exclude_train || !excluded.contains(&(*s as u32)))
            .map(|(s, v)| (s as u32, v))
            .collect();
        order.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("scores are finite")
                .then(a.0.cmp(&b.0))
        });
        order.truncate(k);
        // Report probabilities; the order was fixed on logits.
        for slot in &mut order {
            slot.1 = decoder::probability(slot.1);
        }
        order
    }

    /// Top-K scholars for a submission, excluding its train-linked scholars.
    pub fn rank_candidates(&self, submission: u32, k: usize) -> Result<Vec<(u32, f64)>, Error> {
        if submission as usize >= self.data.graph.submission_count() {
            return Err(Error::Input(format!(
                "unknown submission index {submission}"
            )));
        }
        Ok(self.ranked(submission, k, true))
    }

    /// Held-out protocol: rank non-train scholars per submission, score
    /// against the test-edge truth sets.
    pub fn evaluate(
        &self,
        k: usize,
        seed: u64,
        config_hash: u64,
        timing: bool,
    ) -> Result<RankingReport, Error> {
        let t0 = std::time::Instant::now();
        let truths = self.data.graph.test_scholars_by_submission();
        let evaluated: Vec<u32> = (0..self.data.graph.submission_count() as u32)
            .filter(|&s| !truths[s as usize].is_empty())
            .collect();
        let rows: Vec<SubmissionRanking> = evaluated
            .par_iter()
            .map(|&s| SubmissionRanking {
                submission: s,
                truth: truths[s as usize].clone(),
                ranked: self.ranked(s, k, true),
            })
            .collect();
        let queries: Vec<RankedQuery> = rows
            .iter()
            .map(|r| RankedQuery {
                truth: r.truth.clone(),
                ranked: r.ranked.iter().map(|&(s, _)| s).collect(),
            })
            .collect();
        Ok(RankingReport {
            k,
            recall: recall_at_k(&queries, k)?,
            ndcg: ndcg_at_k(&queries, k)?,
            hit_ratio: hit_ratio_at_k(&queries, k)?,
            precision: precision_at_k(&queries, k)?,
            rows,
            seed,
            config_hash,
            wall_seconds: if timing {
                t0.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    }

    /// Overfit oracle: rank every scholar (no exclusion) and score against
    /// the train edges as truth.
    pub fn train_recall_at_k(&self, k: usize) -> Result<f64, Error> {
        let truths = self.data.submission_train.clone();
        let evaluated: Vec<u32> = (0..self.data.graph.submission_count() as u32)
            .filter(|&s| !truths[s as usize].is_empty())
            .collect();
        let queries: Vec<RankedQuery> = evaluated
            .par_iter()
            .map(|&s| RankedQuery {
                truth: truths[s as usize].clone(),
                ranked: self
                    .ranked(s, k, false)
                    .into_iter()
                    .map(|(sch, _)| sch)
                    .collect(),
            })
            .collect();
        recall_at_k(&queries, k)
    }
}

/// Aggregate CSV: metric columns in the fixed order `R@K,N@K,HR@K,P@K`,
/// then run metadata.
pub fn render_report(report: &RankingReport) -> String {
    let k = report.k;
    format!(
        "R@{k},N@{k},HR@{k},P@{k},seed,config_hash,wall_seconds\n{},{},{},{},{},{:016x},{:.3}\n",
        report.recall,
        report.ndcg,
        report.hit_ratio,
        report.precision,
        report.seed,
        report.config_hash,
        report.wall_seconds
    )
}

/// Detail export: `submission_id<TAB>rank<TAB>scholar_id<TAB>score<TAB>is_hit`.
pub fn render_detail(report: &RankingReport, data: &PreparedData) -> String {
    let g = &data.graph;
    let mut out = String::new();
    for row in &report.rows {
        for (rank, &(sch, score)) in row.ranked.iter().enumerate() {
            let hit = row.truth.contains(&sch);
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                g.submission_id(row.submission),
                rank + 1,
                g.scholar_id(sch),
                score,
                if hit { 1 } else { 0 }
            ));
        }
    }
    out
}

/// Score export: `submission_id<TAB>scholar_id<TAB>score`.
pub fn render_scores(report: &RankingReport, data: &PreparedData) -> String {
    let g = &data.graph;
    let mut out = String::new();
    for row in &report.rows {
        for &(sch, score) in &row.ranked {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                g.submission_id(row.submission),
                g.scholar_id(sch),
                score
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphstore::{load_edges_from, load_features_from, make_split};
    use crate::numcore::rng::Rng;
    use crate::synth::PlantedSpec;
    use crate::trainer::{TrainConfig, Trainer};

    fn q(truth: &[u32], ranked: &[u32]) -> RankedQuery {
        RankedQuery {
            truth: truth.to_vec(),
            ranked: ranked.to_vec(),
        }
    }

    #[test]
    fn recall_precision_hand_counts() {
        let queries = [q(&[1, 2], &[1, 9])];
        assert_eq!(recall_at_k(&queries, 2).unwrap(), 0.5);
        assert_eq!(precision_at_k(&queries, 2).unwrap(), 0.5);
        let perfect = [q(&[1, 2], &[2, 1, 7])];
        assert_eq!(recall_at_k(&perfect, 2).unwrap(), 1.0);
        let miss = [q(&[1], &[5, 6])];
        assert_eq!(recall_at_k(&miss, 2).unwrap(), 0.0);
        assert_eq!(precision_at_k(&miss, 2).unwrap(), 0.0);
    }

    #[test]
    fn empty_evaluation_set_is_an_error() {
        let queries = [q(&[], &[1, 2])];
        assert!(recall_at_k(&queries, 2).is_err());
        assert!(recall_at_k(&[], 2).is_err());
    }

    #[test]
    fn ndcg_examples_from_the_discount_formula() {
        // Single truth at rank 1: DCG = IDCG = 1/log2(3).
        let top = [q(&[4], &[4, 9])];
        assert!((ndcg_at_k(&top, 2).unwrap() - 1.0).abs() < 1e-12);

        // Truth at rank 2, K=2: DCG = 1/log2(4) = 0.5, IDCG = 1/log2(3).
        let second = [q(&[4], &[9, 4])];
        let want = 0.5 / (1.0 / 3.0f64.log2());
        assert!((ndcg_at_k(&second, 2).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.7925).abs() < 1e-4, "fixture value {want}");

        let none = [q(&[4], &[7, 9])];
        assert_eq!(ndcg_at_k(&none, 2).unwrap(), 0.0);
    }

    #[test]
    fn hit_ratio_examples() {
        let all = [q(&[1], &[1]), q(&[2], &[2])];
        assert_eq!(hit_ratio_at_k(&all, 1).unwrap(), 1.0);
        let half = [q(&[1], &[1]), q(&[2], &[9])];
        assert_eq!(hit_ratio_at_k(&half, 1).unwrap(), 0.5);
        let none = [q(&[1], &[8]), q(&[2], &[9])];
        assert_eq!(hit_ratio_at_k(&none, 1).unwrap(), 0.0);
    }

    #[test]
    fn metrics_stay_in_unit_interval_with_oversized_truth() {
        // |T| > K must not push any metric above 1.
        let queries = [q(&[1, 2, 3, 4, 5], &[1, 2])];
        for v in [
            recall_at_k(&queries, 2).unwrap(),
            precision_at_k(&queries, 2).unwrap(),
            ndcg_at_k(&queries, 2).unwrap(),
            hit_ratio_at_k(&queries, 2).unwrap(),
        ] {
            assert!((0.0..=1.0).contains(&v), "metric {v} out of range");
        }
    }

    // Independent naive reference implementations.
    fn brute_metrics(queries: &[RankedQuery], k: usize) -> (f64, f64, f64, f64) {
        let live: Vec<&RankedQuery> = queries.iter().filter(|x| !x.truth.is_empty()).collect();
        let m = live.len() as f64;
        let mut recall = 0.0;
        let mut precision = 0.0;
        let mut ndcg = 0.0;
        let mut hits_total = 0.0;
        let mut truth_total = 0.0;
        for query in &live {
            let mut hits = 0.0;
            let mut dcg = 0.0;
            for pos in 0..k.min(query.ranked.len()) {
                let is_hit = query.truth.iter().any(|&t| t == query.ranked[pos]);
                if is_hit {
                    hits += 1.0;
                    dcg += (2.0f64.powi(1) - 1.0) / ((2 + (pos + 1)) as f64).log2();
                }
            }
            let mut idcg = 0.0;
            for pos in 0..k.min(query.truth.len()) {
                idcg += (2.0f64.powi(1) - 1.0) / ((2 + (pos + 1)) as f64).log2();
            }
            recall += hits / query.truth.len() as f64;
            precision += hits / k as f64;
            if idcg > 0.0 {
                ndcg += dcg / idcg;
            }
            hits_total += hits;
            truth_total += query.truth.len() as f64;
        }
        (
            recall / m,
            ndcg / m,
            hits_total / truth_total,
            precision / m,
        )
    }

    #[test]
    fn metrics_match_brute_force_on_random_instances() {
        let mut rng = Rng::from_seed(41);
        for _ in 0..100 {
            let n_sub = 1 + rng.next_index(10);
            let n_sch = 2 + rng.next_index(19);
            let k = 1 + rng.next_index(n_sch);
            let queries: Vec<RankedQuery> = (0..n_sub)
                .map(|_| {
                    let mut scholars: Vec<u32> = (0..n_sch as u32).collect();
                    rng.shuffle(&mut scholars);
                    let truth_n = 1 + rng.next_index(3.min(n_sch));
                    let mut truth: Vec<u32> = Vec::new();
                    while truth.len() < truth_n {
                        let t = rng.next_index(n_sch) as u32;
                        if !truth.contains(&t) {
                            truth.push(t);
                        }
                    }
                    let keep = 1 + rng.next_index(n_sch);
                    RankedQuery {
                        truth,
                        ranked: scholars.into_iter().take(keep).collect(),
                    }
                })
                .collect();
            let (r, n, h, p) = brute_metrics(&queries, k);
            assert!((recall_at_k(&queries, k).unwrap() - r).abs() < 1e-12);
            assert!((ndcg_at_k(&queries, k).unwrap() - n).abs() < 1e-12);
            assert!((hit_ratio_at_k(&queries, k).unwrap() - h).abs() < 1e-12);
            assert!((precision_at_k(&queries, k).unwrap() - p).abs() < 1e-12);
        }
    }

    #[test]
    fn ndcg_ignores_order_below_last_relevant() {
        let mut rng = Rng::from_seed(43);
        for _ in 0..50 {
            let truth = vec![3u32];
            let mut tail: Vec<u32> = (10..18).collect();
            let base = vec![7u32, 3, tail[0], tail[1], tail[2]];
            rng.shuffle(&mut tail);
            let shuffled = vec![7u32, 3, tail[0], tail[1], tail[2]];
            let a = [q(&truth, &base)];
            let b = [q(&truth, &shuffled)];
            let k = 5;
            assert_eq!(
                ndcg_at_k(&a, k).unwrap().to_bits(),
                ndcg_at_k(&b, k).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn mann_whitney_identical_samples() {
        let a = [0.4, 0.4, 0.4];
        let mw = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(mw.u, 4.5);
        assert_eq!(mw.p, 1.0);
    }

    #[test]
    fn mann_whitney_separated_samples() {
        let mw = mann_whitney_u(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(mw.u, 0.0);
        assert!(mw.p < 0.1, "p {}", mw.p);
        let flipped = mann_whitney_u(&[10.0, 11.0, 12.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(flipped.u, 9.0);
    }

    #[test]
    fn mann_whitney_exact_mode() {
        let mw = mann_whitney_u_exact(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(mw.u, 0.0);
        // Fully separated with n=3 per side: 2 of C(6,3)=20 assignments are
        // as extreme.
        assert!((mw.p - 0.1).abs() < 1e-12, "p {}", mw.p);
        let nine: Vec<f64> = (0..9).map(|i| i as f64).collect();
        assert!(mann_whitney_u_exact(&nine, &[1.0]).is_err());
        // Identical samples stay insignificant.
        let same = mann_whitney_u_exact(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!(same.p, 1.0);
    }

    #[test]
    fn normal_sf_reference_values() {
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_sf(1.96) - 0.0249979).abs() < 1e-5);
        assert!((normal_sf(-1.0) - 0.8413447).abs() < 1e-5);
    }

    fn tiny_world() -> (crate::trainer::PreparedData, TrainConfig) {
        let spec = PlantedSpec {
            blocks: 2,
            scholars: 10,
            submissions: 6,
            reviews_per_submission: 2,
            feature_dim: 4,
            feature_noise: 0.02,
            seed: 5,
        };
        let mut g = load_edges_from(spec.edge_text().as_bytes(), "edges").unwrap();
        make_split(&mut g, 5);
        let feats = load_features_from(spec.feature_text().as_bytes(), "feats", &g).unwrap();
        let data = crate::trainer::PreparedData::build(g, feats, 77).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            d_b: 4,
            d_k: 4,
            clusters: 2,
            neg_cap: 4,
            attention_hidden: 3,
            ..Default::default()
        };
        (data, cfg)
    }

    #[test]
    fn rank_candidates_is_deterministic_and_excludes_train() {
        let (data, cfg) = tiny_world();
        let trainer = Trainer::new(cfg, &data).unwrap();
        let ev1 = Evaluator::new(&trainer.model, &data).unwrap();
        let ev2 = Evaluator::new(&trainer.model, &data).unwrap();
        for s in 0..data.graph.submission_count() as u32 {
            let a = ev1.rank_candidates(s, 5).unwrap();
            let b = ev2.rank_candidates(s, 5).unwrap();
            assert_eq!(a, b);
            for (sch, _) in &a {
                assert!(
                    !data.submission_train[s as usize].contains(sch),
                    "train-linked scholar leaked into ranking"
                );
            }
        }
        assert!(ev1.rank_candidates(999, 5).is_err());
    }

    #[test]
    fn ranking_ties_break_by_lower_index() {
        // With all-zero decoder params every score is 0.5: pure index order.
        let (data, cfg) = tiny_world();
        let mut trainer = Trainer::new(cfg, &data).unwrap();
        for id in trainer.model.decoder.all_ids() {
            let (r, c) = {
                let v = trainer.model.store.value(id);
                (v.rows(), v.cols())
            };
            *trainer.model.store.value_mut(id) = DenseMatrix::zeros(r, c);
        }
        let ev = Evaluator::new(&trainer.model, &data).unwrap();
        let ranked = ev.rank_candidates(0, 4).unwrap();
        let ids: Vec<u32> = ranked.iter().map(|&(s, _)| s).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(ids, sorted, "ties must fall back to ascending index");
    }

    #[test]
    fn report_rendering_is_deterministic() {
        let (data, cfg) = tiny_world();
        let trainer = Trainer::new(cfg, &data).unwrap();
        let ev = Evaluator::new(&trainer.model, &data).unwrap();
        let r1 = ev.evaluate(3, 42, 0xFEED, false).unwrap();
        let r2 = ev.evaluate(3, 42, 0xFEED, false).unwrap();
        assert_eq!(render_report(&r1), render_report(&r2));
        assert!(render_report(&r1).starts_with("R@3,N@3,HR@3,P@3"));
        assert_eq!(render_detail(&r1, &data), render_detail(&r2, &data));
        for v in [r1.recall, r1.ndcg, r1.hit_ratio, r1.precision] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
