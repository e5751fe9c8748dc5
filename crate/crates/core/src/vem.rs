//! Variational EM for the degree-corrected latent block model.
//!
//! The degree parameters are fixed once at the scaled degrees
//! (`theta_i = d_i / (n sqrt(D))`, `lambda_j = d_j / (m sqrt(D))`); each
//! iteration then runs the closed-form M step for `(pi, rho, mu)` followed by
//! the factorized E step, rows first and columns second. Every half-step is an
//! exact coordinate maximization, so the criterion never decreases.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bigraph::BipartiteGraph;
use crate::error::{Error, Result};
use crate::model::{check_row_stochastic, clamp_mu, BlockParams, Posteriors, MU_CLAMP};
use crate::numeric::{softmax_in_place, xlogx, xlogy};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Stop once `|J_t - J_{t-1}| <= tol * (|J_{t-1}| + 1)`.
    pub tol: f64,
    /// Floor applied to `pi` and `rho` before renormalizing.
    pub min_pi: f64,
    pub mu_clamp: (f64, f64),
    pub track_trace: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            min_pi: 1e-10,
            mu_clamp: MU_CLAMP,
            track_trace: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        if !(self.mu_clamp.0 > 0.0) || self.mu_clamp.0 > self.mu_clamp.1 {
            return Err(Error::InvalidArgument("mu_clamp must satisfy 0 < lo <= hi".into()));
        }
        if !(self.min_pi >= 0.0) {
            return Err(Error::InvalidArgument("min_pi must be non-negative".into()));
        }
        Ok(())
    }
}

/// A graph together with its fixed scaled degree parameters.
#[derive(Debug, Clone)]
pub struct FitContext<'g> {
    pub graph: &'g BipartiteGraph,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl<'g> FitContext<'g> {
    pub fn new(graph: &'g BipartiteGraph) -> Result<Self> {
        let (theta, lambda) = graph.scaled_degree_params()?;
        Ok(Self { graph, theta, lambda })
    }

    /// `sum_ij A_ij (log theta_i + log lambda_j)`, the term separating the
    /// full criterion from the reduced one.
    pub fn degree_term(&self) -> f64 {
        degree_term(self.graph, &self.theta, &self.lambda).expect("scaled degrees are positive on every stored entry")
    }
}

fn degree_term(g: &BipartiteGraph, theta: &[f64], lambda: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (i, j, a) in g.entries() {
        if !(theta[i] > 0.0 && lambda[j] > 0.0) {
            return Err(Error::ZeroRateWithCount { row: i, col: j });
        }
        s += a as f64 * (theta[i].ln() + lambda[j].ln());
    }
    Ok(s)
}

fn check_shapes(g: &BipartiteGraph, p: &Posteriors, k: usize, l: usize) -> Result<()> {
    if p.qz.nrows() != g.rows() || p.qw.nrows() != g.cols() {
        return Err(Error::Dimension(format!(
            "posteriors are {}x{} / {}x{} for a {}x{} graph",
            p.qz.nrows(),
            p.qz.ncols(),
            p.qw.nrows(),
            p.qw.ncols(),
            g.rows(),
            g.cols()
        )));
    }
    if p.qz.ncols() != k || p.qw.ncols() != l {
        return Err(Error::Dimension(format!(
            "posteriors have {}/{} clusters, parameters {k}/{l}",
            p.qz.ncols(),
            p.qw.ncols()
        )));
    }
    Ok(())
}

// Every term of the criterion except sum A (log theta + log lambda).
#[allow(clippy::too_many_arguments)]
fn reduced_objective(
    g: &BipartiteGraph,
    qz: &DMatrix<f64>,
    qw: &DMatrix<f64>,
    theta: &[f64],
    lambda: &[f64],
    pi: &[f64],
    rho: &[f64],
    mu: &DMatrix<f64>,
) -> f64 {
    let (k, l) = mu.shape();
    // -sum_kl mu_kl (sum_i theta_i qz_ik)(sum_j lambda_j qw_jl)
    let theta_mass: Vec<f64> = (0..k).map(|c| (0..g.rows()).map(|i| theta[i] * qz[(i, c)]).sum()).collect();
    let lambda_mass: Vec<f64> = (0..l).map(|c| (0..g.cols()).map(|j| lambda[j] * qw[(j, c)]).sum()).collect();
    let mut rate = 0.0;
    for a in 0..k {
        for b in 0..l {
            rate += mu[(a, b)] * theta_mass[a] * lambda_mass[b];
        }
    }

    let log_mu = mu.map(f64::ln);
    let mut counts = 0.0;
    let mut s = vec![0.0; l];
    for i in 0..g.rows() {
        s.iter_mut().for_each(|v| *v = 0.0);
        for (j, a) in g.row(i) {
            for b in 0..l {
                s[b] += a as f64 * qw[(j, b)];
            }
        }
        for a in 0..k {
            let q = qz[(i, a)];
            if q != 0.0 {
                counts += q * (0..l).map(|b| s[b] * log_mu[(a, b)]).sum::<f64>();
            }
        }
    }

    let prior: f64 = qz.row_iter().map(|r| r.iter().zip(pi).map(|(&q, &p)| xlogy(q, p)).sum::<f64>()).sum::<f64>()
        + qw.row_iter().map(|r| r.iter().zip(rho).map(|(&q, &p)| xlogy(q, p)).sum::<f64>()).sum::<f64>();
    let entropy: f64 = -qz.iter().map(|&q| xlogx(q)).sum::<f64>() - qw.iter().map(|&q| xlogx(q)).sum::<f64>();

    -rate + counts + prior + entropy
}

/// The variational criterion `J(qz, qw, params)` including the degree term
/// and both entropies (constant `-sum log A_ij!` excluded).
pub fn objective_full(g: &BipartiteGraph, p: &Posteriors, params: &BlockParams) -> Result<f64> {
    params.check_graph(g)?;
    check_shapes(g, p, params.k(), params.l())?;
    let deg = degree_term(g, &params.theta, &params.lambda)?;
    Ok(deg + reduced_objective(g, &p.qz, &p.qw, &params.theta, &params.lambda, &params.pi, &params.rho, &params.mu))
}

/// The reduced criterion with the degree parameters fixed at the scaled
/// degrees and the constant degree term dropped.
pub fn objective_hat(ctx: &FitContext<'_>, p: &Posteriors, pi: &[f64], rho: &[f64], mu: &DMatrix<f64>) -> Result<f64> {
    if mu.nrows() != pi.len() || mu.ncols() != rho.len() {
        return Err(Error::Dimension("mu does not match pi/rho".into()));
    }
    check_shapes(ctx.graph, p, pi.len(), rho.len())?;
    Ok(reduced_objective(ctx.graph, &p.qz, &p.qw, &ctx.theta, &ctx.lambda, pi, rho, mu))
}

/// Parameters produced by one M step, with notes on degenerate clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub pi: Vec<f64>,
    pub rho: Vec<f64>,
    pub mu: DMatrix<f64>,
    /// Row clusters whose mean membership fell below the floor.
    pub empty_row_clusters: Vec<usize>,
    pub empty_col_clusters: Vec<usize>,
    /// Blocks with zero soft exposure, whose rate was set to the clamp floor.
    pub empty_blocks: Vec<(usize, usize)>,
}

fn floored_means(q: &DMatrix<f64>, floor: f64) -> (Vec<f64>, Vec<usize>) {
    let rows = q.nrows() as f64;
    let mut emptied = Vec::new();
    let mut p: Vec<f64> = (0..q.ncols())
        .map(|c| {
            let mean = q.column(c).sum() / rows;
            if mean < floor {
                emptied.push(c);
                floor
            } else {
                mean
            }
        })
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    (p, emptied)
}

/// Closed-form maximizer of the criterion over `(pi, rho, mu)` given posteriors.
pub fn m_step(ctx: &FitContext<'_>, p: &Posteriors, cfg: &FitConfig) -> Result<MStep> {
    let g = ctx.graph;
    let (k, l) = (p.k(), p.l());
    check_shapes(g, p, k, l)?;
    let (pi, empty_row_clusters) = floored_means(&p.qz, cfg.min_pi);
    let (rho, empty_col_clusters) = floored_means(&p.qw, cfg.min_pi);

    let theta_mass: Vec<f64> = (0..k).map(|c| (0..g.rows()).map(|i| ctx.theta[i] * p.qz[(i, c)]).sum()).collect();
    let lambda_mass: Vec<f64> = (0..l).map(|c| (0..g.cols()).map(|j| ctx.lambda[j] * p.qw[(j, c)]).sum()).collect();

    let mut weight = DMatrix::<f64>::zeros(k, l);
    let mut s = vec![0.0; l];
    for i in 0..g.rows() {
        s.iter_mut().for_each(|v| *v = 0.0);
        for (j, a) in g.row(i) {
            for b in 0..l {
                s[b] += a as f64 * p.qw[(j, b)];
            }
        }
        for a in 0..k {
            let q = p.qz[(i, a)];
            for b in 0..l {
                weight[(a, b)] += q * s[b];
            }
        }
    }

    let mut empty_blocks = Vec::new();
    let mut mu = DMatrix::zeros(k, l);
    for a in 0..k {
        for b in 0..l {
            let exposure = theta_mass[a] * lambda_mass[b];
            mu[(a, b)] = if exposure > 0.0 {
                weight[(a, b)] / exposure
            } else {
                empty_blocks.push((a, b));
                cfg.mu_clamp.0
            };
        }
    }
    Ok(MStep {
        pi,
        rho,
        mu: clamp_mu(mu, cfg.mu_clamp),
        empty_row_clusters,
        empty_col_clusters,
        empty_blocks,
    })
}

/// Row posteriors maximizing the criterion given column posteriors and
/// parameters: `qz_ik` proportional to `exp(g1(i, k))`.
pub fn e_step_rows(ctx: &FitContext<'_>, qw: &DMatrix<f64>, pi: &[f64], mu: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = ctx.graph;
    if qw.nrows() != g.cols() || qw.ncols() != mu.ncols() || pi.len() != mu.nrows() {
        return Err(Error::Dimension("e_step_rows: qw, pi and mu disagree".into()));
    }
    let (k, l) = mu.shape();
    let log_mu = mu.map(f64::ln);
    let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
    // t_l = sum_j lambda_j qw_jl, so the rate term costs O(K L) per row
    let t: Vec<f64> = (0..l).map(|b| (0..g.cols()).map(|j| ctx.lambda[j] * qw[(j, b)]).sum()).collect();
    let rate: Vec<f64> = (0..k).map(|a| (0..l).map(|b| t[b] * mu[(a, b)]).sum()).collect();

    let rows: Vec<Vec<f64>> = (0..g.rows())
        .into_par_iter()
        .map(|i| {
            let mut s = vec![0.0; l];
            for (j, a) in g.row(i) {
                for b in 0..l {
                    s[b] += a as f64 * qw[(j, b)];
                }
            }
            let mut logits: Vec<f64> = (0..k)
                .map(|a| -ctx.theta[i] * rate[a] + (0..l).map(|b| s[b] * log_mu[(a, b)]).sum::<f64>() + log_pi[a])
                .collect();
            if softmax_in_place(&mut logits) {
                Ok(logits)
            } else {
                Err(Error::NoAdmissibleCluster(i))
            }
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(g.rows(), k, |i, a| rows[i][a]))
}

/// Column posteriors maximizing the criterion given row posteriors and
/// parameters: `qw_jl` proportional to `exp(g2(j, l))`.
pub fn e_step_cols(ctx: &FitContext<'_>, qz: &DMatrix<f64>, rho: &[f64], mu: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = ctx.graph;
    if qz.nrows() != g.rows() || qz.ncols() != mu.nrows() || rho.len() != mu.ncols() {
        return Err(Error::Dimension("e_step_cols: qz, rho and mu disagree".into()));
    }
    let (k, l) = mu.shape();
    let log_mu = mu.map(f64::ln);
    let log_rho: Vec<f64> = rho.iter().map(|p| p.ln()).collect();
    let t: Vec<f64> = (0..k).map(|a| (0..g.rows()).map(|i| ctx.theta[i] * qz[(i, a)]).sum()).collect();
    let rate: Vec<f64> = (0..l).map(|b| (0..k).map(|a| t[a] * mu[(a, b)]).sum()).collect();

    let cols: Vec<Vec<f64>> = (0..g.cols())
        .into_par_iter()
        .map(|j| {
            let mut s = vec![0.0; k];
            for (i, a) in g.col(j) {
                for c in 0..k {
                    s[c] += a as f64 * qz[(i, c)];
                }
            }
            let mut logits: Vec<f64> = (0..l)
                .map(|b| -ctx.lambda[j] * rate[b] + (0..k).map(|a| s[a] * log_mu[(a, b)]).sum::<f64>() + log_rho[b])
                .collect();
            if softmax_in_place(&mut logits) {
                Ok(logits)
            } else {
                Err(Error::NoAdmissibleColumnCluster(j))
            }
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(g.cols(), l, |j, b| cols[j][b]))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    pub empty_row_clusters: Vec<usize>,
    pub empty_col_clusters: Vec<usize>,
    pub empty_blocks: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub posteriors: Posteriors,
    /// `theta`/`lambda` are the fixed scaled degrees.
    pub params: BlockParams,
    /// Reduced criterion after each full iteration (empty unless tracked).
    pub objective_trace: Vec<f64>,
    /// Final value of the reduced criterion.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: FitDiagnostics,
}

/// Runs variational EM from `init` until the reduced criterion stabilizes.
pub fn fit(g: &BipartiteGraph, k: usize, l: usize, init: &Posteriors, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if k == 0 || l == 0 {
        return Err(Error::InvalidArgument("K and L must be at least 1".into()));
    }
    check_shapes(g, init, k, l)?;
    check_row_stochastic(&init.qz, "qz")?;
    check_row_stochastic(&init.qw, "qw")?;
    let ctx = FitContext::new(g)?;

    let mut post = init.clone();
    let mut trace = Vec::new();
    let mut previous: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_m = None;
    let mut objective = f64::NAN;

    for iteration in 1..=cfg.max_iter {
        iterations = iteration;
        let m = m_step(&ctx, &post, cfg)?;
        let qz = e_step_rows(&ctx, &post.qw, &m.pi, &m.mu)?;
        let qw = e_step_cols(&ctx, &qz, &m.rho, &m.mu)?;
        post = Posteriors { qz, qw };

        objective = objective_hat(&ctx, &post, &m.pi, &m.rho, &m.mu)?;
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective {
                iteration,
                value: objective,
            });
        }
        if cfg.track_trace {
            trace.push(objective);
        }
        last_m = Some(m);
        if let Some(prev) = previous {
            if (objective - prev).abs() <= cfg.tol * (prev.abs() + 1.0) {
                converged = true;
                break;
            }
        }
        previous = Some(objective);
    }

    let m = last_m.expect("max_iter >= 1");
    let diagnostics = FitDiagnostics {
        empty_row_clusters: m.empty_row_clusters.clone(),
        empty_col_clusters: m.empty_col_clusters.clone(),
        empty_blocks: m.empty_blocks.clone(),
    };
    if !diagnostics.empty_row_clusters.is_empty() || !diagnostics.empty_col_clusters.is_empty() {
        log::warn!(
            "fit ended with emptied clusters: rows {:?}, cols {:?}",
            diagnostics.empty_row_clusters,
            diagnostics.empty_col_clusters
        );
    }
    let params = BlockParams {
        pi: m.pi,
        rho: m.rho,
        theta: ctx.theta,
        lambda: ctx.lambda,
        mu: m.mu,
    };
    Ok(FitResult {
        posteriors: post,
        params,
        objective_trace: trace,
        objective,
        iterations,
        converged,
        diagnostics,
    })
}
