//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per criterion
//! and exits non-zero if any criterion fails.
//!
//! Set `DCLBM_MOVIELENS_DIR` to a directory holding `u.data` and `u.item`, or
//! place them under `data/ml-100k` in the workspace, to run the MovieLens check.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use dclbm::cli::{
    ingest_edge_list, run_movielens_analysis, run_simulation_harness, summarize_harness, HarnessDesign, IngestMode,
    MovieLensOptions, Variant,
};
use dclbm::eval::{adjusted_rand_index, chi_square_independence, population_objective, separation_g, soft_confusion};
use dclbm::model::{canonicalize, complete_log_likelihood, marginal_log_likelihood_bruteforce, LogFactorial};
use dclbm::spectral_init::init_posteriors;
use dclbm::synth::{sample, DegreeLaw};
use dclbm::vem::{m_step, objective_full, objective_hat, FitContext};
use dclbm::{fit, BipartiteGraph, BlockParams, FitConfig, Labels, Posteriors, SpectralConfig, SynthConfig};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn random_stochastic(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // a power of a uniform draw spreads rows from near-uniform to near-one-hot
    let sharp: f64 = rng.random_range(0.5..6.0);
    let mut q = DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>().powf(sharp) + 1e-9);
    for mut row in q.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    q
}

fn random_simplex(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.02).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn random_counts(m: usize, n: usize, max: u64, rng: &mut ChaCha8Rng) -> BipartiteGraph {
    loop {
        let triples: Vec<_> = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, rng.random_range(0..=max)))
            .collect();
        let g = BipartiteGraph::from_triples(m, n, triples).unwrap();
        if g.total_weight() > 0 {
            return g;
        }
    }
}

fn random_block_config(rng: &mut ChaCha8Rng, seed: u64) -> SynthConfig {
    let (k, l) = (rng.random_range(1..=4), rng.random_range(1..=4));
    SynthConfig {
        m: rng.random_range(10..=100),
        n: rng.random_range(10..=100),
        pi: random_simplex(k, rng),
        rho: random_simplex(l, rng),
        theta_law: DegreeLaw::Uniform { lo: 0.3, hi: 1.7 },
        lambda_law: DegreeLaw::Uniform { lo: 0.3, hi: 1.7 },
        mu_base: DMatrix::from_fn(k, l, |_, _| rng.random_range(0.01..0.6)),
        r: 1.0,
        seed,
    }
}

fn c1_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let configs: Vec<SynthConfig> = (0..100).map(|t| random_block_config(&mut rng, 1000 + t)).collect();
    let results: Vec<(usize, usize, f64)> = configs
        .par_iter()
        .enumerate()
        .map(|(t, cfg)| {
            let s = sample(cfg).unwrap();
            let (k, l) = (fit_k(t), fit_l(t));
            let init = if t % 2 == 0 {
                init_posteriors(&s.graph, k, l, &SpectralConfig { seed: t as u64, ..SpectralConfig::default() })
                    .unwrap()
                    .posteriors
            } else {
                let mut r = ChaCha8Rng::seed_from_u64(t as u64);
                Posteriors::new(random_stochastic(cfg.m, k, &mut r), random_stochastic(cfg.n, l, &mut r)).unwrap()
            };
            let res = fit(&s.graph, k, l, &init, &FitConfig::default()).unwrap();
            let mut violations = 0;
            let mut worst = 0.0f64;
            for w in res.objective_trace.windows(2) {
                let drop = (w[0] - w[1]) / w[0].abs().max(1.0);
                worst = worst.max(drop);
                if w[1] < w[0] - 1e-9 * w[0].abs() {
                    violations += 1;
                }
            }
            (violations, res.objective_trace.len(), worst)
        })
        .collect();
    let violations: usize = results.iter().map(|r| r.0).sum();
    let steps: usize = results.iter().map(|r| r.1).sum();
    let worst = results.iter().map(|r| r.2).fold(0.0, f64::max);
    verdict(
        violations == 0,
        format!("100 instances, {steps} iterations, {violations} decreases, largest relative drop {worst:.2e}"),
    )
}

// fitted cluster counts for instance t, independent of its generating K, L
fn fit_k(t: usize) -> usize {
    1 + t % 4
}

fn fit_l(t: usize) -> usize {
    1 + (t / 4) % 4
}

fn c2_m_step_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut beaten = 0;
    let mut worst_gap = f64::INFINITY;
    for _ in 0..50 {
        let (m, n) = (rng.random_range(4..30), rng.random_range(4..30));
        let (k, l) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let g = random_counts(m, n, rng.random_range(1..5), &mut rng);
        let ctx = FitContext::new(&g).unwrap();
        let p = Posteriors::new(random_stochastic(m, k, &mut rng), random_stochastic(n, l, &mut rng)).unwrap();
        let step = m_step(&ctx, &p, &FitConfig::default()).unwrap();
        let hat = BlockParams {
            pi: step.pi.clone(),
            rho: step.rho.clone(),
            theta: ctx.theta.clone(),
            lambda: ctx.lambda.clone(),
            mu: step.mu.clone(),
        };
        let best = objective_full(&g, &p, &hat).unwrap();
        for t in 0..200 {
            let scale = [1e-3, 1e-2, 0.1, 1.0][t % 4];
            let mut jitter = |v: f64| v * (scale * rng.random_range(-1.0..1.0f64)).exp();
            let mut renorm = |v: &[f64]| {
                let w: Vec<f64> = v.iter().map(|&x| jitter(x)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect::<Vec<_>>()
            };
            let (pi, rho) = (renorm(&hat.pi), renorm(&hat.rho));
            let params = BlockParams {
                pi,
                rho,
                theta: hat.theta.iter().map(|&v| v * (scale * rng.random_range(-1.0..1.0f64)).exp()).collect(),
                lambda: hat.lambda.iter().map(|&v| v * (scale * rng.random_range(-1.0..1.0f64)).exp()).collect(),
                mu: hat.mu.map(|v| v * (scale * rng.random_range(-1.0..1.0f64)).exp()),
            };
            let other = objective_full(&g, &p, &params).unwrap();
            worst_gap = worst_gap.min((best - other) / best.abs().max(1.0));
            if other > best + 1e-10 * best.abs().max(1.0) {
                beaten += 1;
            }
        }
    }
    verdict(
        beaten == 0,
        format!("50 pairs x 200 perturbations, {beaten} beat the M step, smallest relative margin {worst_gap:.2e}"),
    )
}

fn c3_jensen() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..20 {
        let g = random_counts(4, 3, 3, &mut rng);
        let params = BlockParams::new(
            random_simplex(2, &mut rng),
            random_simplex(2, &mut rng),
            (0..4).map(|_| rng.random_range(0.2..2.0)).collect(),
            (0..3).map(|_| rng.random_range(0.2..2.0)).collect(),
            DMatrix::from_fn(2, 2, |_, _| rng.random_range(0.05..3.0)),
        )
        .unwrap();
        let marginal = marginal_log_likelihood_bruteforce(&g, &params).unwrap();
        let lf = LogFactorial::new().graph_sum(&g);
        for _ in 0..100 {
            let p = Posteriors::new(random_stochastic(4, 2, &mut rng), random_stochastic(3, 2, &mut rng)).unwrap();
            let bound = objective_full(&g, &p, &params).unwrap() - lf;
            tightest = tightest.min(marginal - bound);
            if bound > marginal + 1e-9 * marginal.abs().max(1.0) {
                violations += 1;
            }
        }
    }
    verdict(
        violations == 0,
        format!("20 instances x 100 product measures, {violations} violations, tightest gap {tightest:.3e}"),
    )
}

fn c4_scaling_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let g = random_counts(9, 7, 4, &mut rng);
    let z = Labels::new((0..9).map(|i| i % 3).collect(), 3).unwrap();
    let w = Labels::new((0..7).map(|j| j % 2).collect(), 2).unwrap();
    let p = Posteriors::new(random_stochastic(9, 3, &mut rng), random_stochastic(7, 2, &mut rng)).unwrap();
    let theta: Vec<f64> = (0..9).map(|_| rng.random_range(0.2..2.0)).collect();
    let lambda: Vec<f64> = (0..7).map(|_| rng.random_range(0.2..2.0)).collect();
    let mu = DMatrix::from_fn(3, 2, |_, _| rng.random_range(0.1..3.0));
    let (pi, rho) = (random_simplex(3, &mut rng), random_simplex(2, &mut rng));
    let base = BlockParams::new(pi.clone(), rho.clone(), theta.clone(), lambda.clone(), mu.clone()).unwrap();
    let j0 = objective_full(&g, &p, &base).unwrap();
    let c0 = complete_log_likelihood(&g, &z, &w, &base).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (c1, c2): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let moved = BlockParams::new(
            pi.clone(),
            rho.clone(),
            theta.iter().map(|t| t * c1.exp()).collect(),
            lambda.iter().map(|l| l * c2.exp()).collect(),
            mu.map(|v| v * (-c1 - c2).exp()),
        )
        .unwrap();
        let j = objective_full(&g, &p, &moved).unwrap();
        let c = complete_log_likelihood(&g, &z, &w, &moved).unwrap();
        worst = worst.max(((j - j0) / j0).abs()).max(((c - c0) / c0).abs());
    }
    verdict(worst <= 1e-10, format!("100 (c1, c2) draws, largest relative change {worst:.2e}"))
}

fn mean_of(summary: &[(f64, String, String, f64)], r: f64, side: &str, method: &str) -> f64 {
    summary
        .iter()
        .find(|(rr, s, m, _)| *rr == r && s == side && m == method)
        .map(|t| t.3)
        .expect("summary entry")
}

fn c5_figure_one() -> Outcome {
    let design = HarnessDesign::paper(Variant::Dc, 20, 505);
    let rows = run_simulation_harness(&design).unwrap();
    let summary = summarize_harness(&rows);
    let grid = &design.r_grid;
    let dc = |r: f64, side: &str| mean_of(&summary, r, side, "dclbm");
    let sc = |r: f64, side: &str| mean_of(&summary, r, side, "spectral");
    let monotone = ["row", "col"]
        .iter()
        .all(|side| grid.windows(2).all(|w| dc(w[1], side) >= dc(w[0], side)));
    let beats_sc = grid.iter().all(|&r| dc(r, "row") >= sc(r, "row") && dc(r, "col") >= sc(r, "col"));
    let rows_easier = grid.iter().all(|&r| dc(r, "row") >= dc(r, "col"));
    let top = dc(1.0, "row") >= 0.95;
    let table: Vec<String> = grid
        .iter()
        .map(|&r| {
            format!(
                "r={r}: dc {:.3}/{:.3} sc {:.3}/{:.3}",
                dc(r, "row"),
                dc(r, "col"),
                sc(r, "row"),
                sc(r, "col")
            )
        })
        .collect();
    verdict(
        monotone && beats_sc && rows_easier && top,
        format!(
            "(a) {monotone} (b) {beats_sc} (c) {rows_easier} (d) {top}; row/col means {}",
            table.join("; ")
        ),
    )
}

fn c6_figure_two() -> Outcome {
    let design = HarnessDesign::paper(Variant::Classical, 20, 606);
    let rows = run_simulation_harness(&design).unwrap();
    let summary = summarize_harness(&rows);
    let row_ari = mean_of(&summary, 1.0, "row", "dclbm");
    let table: Vec<String> = design
        .r_grid
        .iter()
        .map(|&r| format!("r={r}: {:.3}/{:.3}", mean_of(&summary, r, "row", "dclbm"), mean_of(&summary, r, "col", "dclbm")))
        .collect();
    verdict(
        row_ari >= 0.9,
        format!("mean row ARI at r=1 {row_ari:.4}; dc row/col means {}", table.join("; ")),
    )
}

fn normalized_gap(m: usize, seed: u64) -> f64 {
    let n = m * 5 / 4;
    let cfg = SynthConfig {
        m,
        n,
        ..SynthConfig::paper_design(1.0, seed)
    };
    let s = sample(&cfg).unwrap();
    let rates = s.rates();
    let canon = canonicalize(&s.z, &s.w, &rates).unwrap();
    let truth = Posteriors::from_labels(&s.z, &s.w, 0.0);
    let ctx = FitContext::new(&s.graph).unwrap();
    let j_hat = objective_hat(&ctx, &truth, &cfg.pi, &cfg.rho, &canon.mu).unwrap();
    let j_bar = population_objective(&canon.theta, &canon.lambda, &rates, &truth.qz, &truth.qw, &canon.mu).unwrap();
    let mean_rate = rates.mean();
    (j_hat - j_bar).abs() / (m as f64 * n as f64 * mean_rate)
}

fn c7_uniform_convergence_trend() -> Outcome {
    let scales = [100usize, 200, 400];
    let gaps: Vec<f64> = scales
        .iter()
        .map(|&m| (0..10u64).into_par_iter().map(|rep| normalized_gap(m, 7000 + rep)).sum::<f64>() / 10.0)
        .collect();
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    verdict(
        decreasing,
        format!(
            "mean normalized gap m=100: {:.4e}, m=200: {:.4e}, m=400: {:.4e}",
            gaps[0], gaps[1], gaps[2]
        ),
    )
}

// All set partitions of n elements as restricted growth strings.
fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    fn rec(i: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=max + 1 {
            cur[i] = v;
            rec(i + 1, max.max(v), cur, out);
        }
    }
    if n == 0 {
        return out;
    }
    rec(1, 0, &mut cur, &mut out);
    out
}

fn pair_counting_ari(a: &[usize], b: &[usize]) -> f64 {
    let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let denom = (both + only_a) * (only_a + neither) + (both + only_b) * (only_b + neither);
    if denom == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    2.0 * (both * neither - only_a * only_b) / denom
}

fn c8_metric_oracles() -> Outcome {
    let mut ari_pairs = 0usize;
    let mut ari_worst = 0.0f64;
    for n in 2..=8 {
        let parts = set_partitions(n);
        let (count, worst) = parts
            .par_iter()
            .map(|a| {
                let mut worst = 0.0f64;
                for b in &parts {
                    let got = adjusted_rand_index(a, b).unwrap();
                    worst = worst.max((got - pair_counting_ari(a, b)).abs());
                }
                (parts.len(), worst)
            })
            .reduce(|| (0, 0.0), |x, y| (x.0 + y.0, x.1.max(y.1)));
        ari_pairs += count;
        ari_worst = ari_worst.max(worst);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut dense_worst = 0.0f64;
    for _ in 0..50 {
        let (m, n, k, l) = (rng.random_range(2..9), rng.random_range(2..9), rng.random_range(1..4), rng.random_range(1..4));
        let z = Labels::new((0..m).map(|_| rng.random_range(0..k)).collect(), k).unwrap();
        let w = Labels::new((0..n).map(|_| rng.random_range(0..l)).collect(), l).unwrap();
        let (k2, l2) = (rng.random_range(1..4), rng.random_range(1..4));
        let qz = random_stochastic(m, k2, &mut rng);
        let qw = random_stochastic(n, l2, &mut rng);
        let mu_t = DMatrix::from_fn(k, l, |_, _| rng.random_range(0.1..3.0));
        let mu = DMatrix::from_fn(k2, l2, |_, _| rng.random_range(0.1..3.0));

        let r = soft_confusion(&z.one_hot(0.0), &qz).unwrap().0;
        for a in 0..k {
            for b in 0..k2 {
                let mut s = 0.0;
                for i in 0..m {
                    if z.as_slice()[i] == a {
                        s += qz[(i, b)];
                    }
                }
                dense_worst = dense_worst.max((r[(a, b)] - s / m as f64).abs());
            }
        }

        let got = separation_g(&z, &w, &qz, &qw, &mu_t, &mu).unwrap();
        let mut expected = 0.0;
        for a in 0..k {
            for b in 0..l {
                for a2 in 0..k2 {
                    for b2 in 0..l2 {
                        let mut rz = 0.0;
                        for i in 0..m {
                            if z.as_slice()[i] == a {
                                rz += qz[(i, a2)];
                            }
                        }
                        let mut rw = 0.0;
                        for j in 0..n {
                            if w.as_slice()[j] == b {
                                rw += qw[(j, b2)];
                            }
                        }
                        let (x, y) = (mu_t[(a, b)], mu[(a2, b2)]);
                        expected += rz / m as f64 * rw / n as f64 * (x * (x / y).ln() - x + y);
                    }
                }
            }
        }
        dense_worst = dense_worst.max((got - expected).abs() / expected.abs().max(1.0));
    }

    let chi = chi_square_independence(&[vec![20, 5], vec![5, 20]]).unwrap();
    let p_two_sig = format!("{:.1e}", chi.p_value);
    let chi_ok = (chi.statistic - 18.0).abs() <= 1e-9 && p_two_sig == "2.2e-5";

    verdict(
        ari_worst <= 1e-12 && dense_worst <= 1e-12 && chi_ok,
        format!(
            "ARI vs pair counting on {ari_pairs} partition pairs: max err {ari_worst:.1e}; confusion/G max err {dense_worst:.1e}; chi-square {} p {}",
            chi.statistic, p_two_sig
        ),
    )
}

fn c9_generator() -> Outcome {
    let cfg = SynthConfig {
        m: 100,
        n: 100,
        pi: vec![1.0],
        rho: vec![1.0],
        theta_law: DegreeLaw::Unit,
        lambda_law: DegreeLaw::Unit,
        mu_base: DMatrix::from_element(1, 1, 1.0),
        r: 1.0,
        seed: 909,
    };
    let s = sample(&cfg).unwrap();
    let mean = s.graph.total_weight() as f64 / 1e4;
    let se = (1.0f64 / 1e4).sqrt();
    let moments_ok = (mean - 1.0).abs() <= 3.0 * se;

    let planted = sample(&SynthConfig::paper_design(0.7, 910)).unwrap();
    let rates = planted.rates();
    let canon = canonicalize(&planted.z, &planted.w, &rates).unwrap();
    let (zs, ws) = (planted.z.as_slice(), planted.w.as_slice());
    let mut worst = 0.0f64;
    for i in 0..rates.nrows() {
        for j in 0..rates.ncols() {
            let back = canon.theta[i] * canon.lambda[j] * canon.mu[(zs[i], ws[j])];
            worst = worst.max((back - rates[(i, j)]).abs() / rates[(i, j)]);
        }
    }
    verdict(
        moments_ok && worst <= 1e-9,
        format!("Poisson(1) mean {mean:.4} (3 SE = {:.4}); canonical round-trip max rel err {worst:.1e}", 3.0 * se),
    )
}

fn movielens_dir() -> Option<PathBuf> {
    let candidates = std::env::var_os("DCLBM_MOVIELENS_DIR")
        .map(PathBuf::from)
        .into_iter()
        .chain([PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k")]);
    candidates.into_iter().find(|d| d.join("u.data").is_file() && d.join("u.item").is_file())
}

fn c10_movielens() -> Outcome {
    let Some(dir) = movielens_dir() else {
        return Outcome::Skip("MovieLens 100k not found (set DCLBM_MOVIELENS_DIR)".into());
    };
    let data = ingest_edge_list(&dir.join("u.data"), IngestMode::Binary).unwrap();
    let (m, n, total) = (data.graph.rows(), data.graph.cols(), data.graph.total_weight());
    if (m, n, total) != (943, 1682, 100_000) {
        return Outcome::Fail(format!("ingested {m} x {n} with {total} ones"));
    }
    let (_, _, summary) = run_movielens_analysis(&dir.join("u.data"), &dir.join("u.item"), &MovieLensOptions::default()).unwrap();
    verdict(
        summary.p_value < 1e-3,
        format!(
            "{} single-category movies, chi-square {:.2} on {} dof, p = {:.3e}",
            summary.single_category_movies, summary.chi_square_statistic, summary.chi_square_dof, summary.p_value
        ),
    )
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("C1 coordinate-ascent monotonicity", c1_monotonicity),
        ("C2 M-step optimality", c2_m_step_optimality),
        ("C3 Jensen bound vs enumeration", c3_jensen),
        ("C4 scaling-family invariance", c4_scaling_invariance),
        ("C5 planted DC design trends", c5_figure_one),
        ("C6 classical design efficiency", c6_figure_two),
        ("C7 uniform-convergence trend", c7_uniform_convergence_trend),
        ("C8 metric oracles", c8_metric_oracles),
        ("C9 generator moments", c9_generator),
        ("C10 MovieLens association", c10_movielens),
    ];
    // `cargo test -- <filter>` passes a filter argument; honor it loosely
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (tag, detail) = match check() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        *counts.entry(tag).or_default() += 1;
        println!("{tag} {name} [{:.1}s]: {detail}", start.elapsed().as_secs_f64());
    }
    println!(
        "acceptance: {} passed, {} failed, {} skipped",
        counts.get("PASS").unwrap_or(&0),
        counts.get("FAIL").unwrap_or(&0),
        counts.get("SKIP").unwrap_or(&0)
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
