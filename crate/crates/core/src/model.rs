//! Parameter and posterior containers, the complete-data log-likelihood,
//! the enumeration oracle for the marginal likelihood, and the canonical
//! parameterization of a block-rank-one rate matrix.

use std::collections::HashMap;

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::bigraph::BipartiteGraph;
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

/// Default clamp range for block rates.
pub const MU_CLAMP: (f64, f64) = (1e-10, 1e10);

const ROW_SUM_TOL: f64 = 1e-12;
const PROB_SUM_TOL: f64 = 1e-9;

/// Hard cluster assignment, 0-based, with the number of clusters it ranges over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    labels: Vec<usize>,
    k: usize,
}

impl Labels {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("cluster count must be positive".into()));
        }
        if let Some((pos, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} at position {pos} is outside 0..{k}"
            )));
        }
        Ok(Self { labels, k })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Members per cluster.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Indicator matrix smoothed as `(1 - eps k) * onehot + eps`.
    pub fn one_hot(&self, eps: f64) -> DMatrix<f64> {
        let k = self.k;
        let hot = 1.0 - eps * k as f64;
        DMatrix::from_fn(self.labels.len(), k, |i, c| {
            if self.labels[i] == c {
                hot + eps
            } else {
                eps
            }
        })
    }

    /// Relabels cluster `c` as `perm[c]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            labels: self.labels.iter().map(|&l| perm[l]).collect(),
            k: self.k,
        }
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.labels
    }
}

/// Row-stochastic membership matrices for rows (`m x K`) and columns (`n x L`).
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub qz: DMatrix<f64>,
    pub qw: DMatrix<f64>,
}

impl Posteriors {
    pub fn new(qz: DMatrix<f64>, qw: DMatrix<f64>) -> Result<Self> {
        check_row_stochastic(&qz, "qz")?;
        check_row_stochastic(&qw, "qw")?;
        Ok(Self { qz, qw })
    }

    pub fn from_labels(z: &Labels, w: &Labels, eps: f64) -> Self {
        Self {
            qz: z.one_hot(eps),
            qw: w.one_hot(eps),
        }
    }

    pub fn k(&self) -> usize {
        self.qz.ncols()
    }

    pub fn l(&self) -> usize {
        self.qw.ncols()
    }
}

pub(crate) fn check_row_stochastic(q: &DMatrix<f64>, name: &str) -> Result<()> {
    if q.ncols() == 0 {
        return Err(Error::Dimension(format!("{name} has no columns")));
    }
    for (i, row) in q.row_iter().enumerate() {
        if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} row {i} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL * q.ncols() as f64 {
            return Err(Error::InvalidArgument(format!("{name} row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// The model parameters `(pi, rho, theta, lambda, mu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub pi: Vec<f64>,
    pub rho: Vec<f64>,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: DMatrix<f64>,
}

impl BlockParams {
    /// Validates shapes and probability vectors. `mu` is clamped into [`MU_CLAMP`].
    pub fn new(pi: Vec<f64>, rho: Vec<f64>, theta: Vec<f64>, lambda: Vec<f64>, mu: DMatrix<f64>) -> Result<Self> {
        check_probability(&pi, "pi")?;
        check_probability(&rho, "rho")?;
        if mu.nrows() != pi.len() || mu.ncols() != rho.len() {
            return Err(Error::Dimension(format!(
                "mu is {}x{} but pi/rho have lengths {}/{}",
                mu.nrows(),
                mu.ncols(),
                pi.len(),
                rho.len()
            )));
        }
        if theta.iter().chain(&lambda).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("degree parameters must be finite and non-negative".into()));
        }
        Ok(Self {
            pi,
            rho,
            theta,
            lambda,
            mu: clamp_mu(mu, MU_CLAMP),
        })
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn l(&self) -> usize {
        self.rho.len()
    }

    pub(crate) fn check_graph(&self, g: &BipartiteGraph) -> Result<()> {
        if self.theta.len() != g.rows() || self.lambda.len() != g.cols() {
            return Err(Error::Dimension(format!(
                "theta/lambda lengths {}/{} do not match graph {}x{}",
                self.theta.len(),
                self.lambda.len(),
                g.rows(),
                g.cols()
            )));
        }
        Ok(())
    }
}

fn check_probability(p: &[f64], name: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Dimension(format!("{name} is empty")));
    }
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidArgument(format!("{name} has an entry outside [0, 1]")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidArgument(format!("{name} sums to {s}")));
    }
    Ok(())
}

pub fn clamp_mu(mut mu: DMatrix<f64>, (lo, hi): (f64, f64)) -> DMatrix<f64> {
    mu.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    mu
}

/// `log(a!)` memoised per distinct count.
#[derive(Debug, Default)]
pub struct LogFactorial {
    cache: HashMap<u64, f64>,
}

impl LogFactorial {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, a: u64) -> f64 {
        if a < 2 {
            return 0.0;
        }
        *self.cache.entry(a).or_insert_with(|| ln_gamma(a as f64 + 1.0))
    }

    /// `sum_ij log(A_ij!)` over the graph.
    pub fn graph_sum(&mut self, g: &BipartiteGraph) -> f64 {
        g.entries().map(|(_, _, a)| self.get(a)).sum()
    }
}

/// `log P(z, w, A; params)` under the Poisson degree-corrected block model.
pub fn complete_log_likelihood(g: &BipartiteGraph, z: &Labels, w: &Labels, params: &BlockParams) -> Result<f64> {
    params.check_graph(g)?;
    if z.len() != g.rows() || w.len() != g.cols() {
        return Err(Error::Dimension("label vectors do not match graph shape".into()));
    }
    if z.k() != params.k() || w.k() != params.l() {
        return Err(Error::Dimension("label ranges do not match pi/rho".into()));
    }
    let (zs, ws) = (z.as_slice(), w.as_slice());

    let prior: f64 = zs.iter().map(|&k| params.pi[k].ln()).sum::<f64>()
        + ws.iter().map(|&l| params.rho[l].ln()).sum::<f64>();

    // sum_ij theta_i lambda_j mu_{z_i w_j} through per-cluster degree totals
    let mut theta_block = vec![0.0; params.k()];
    for (i, &k) in zs.iter().enumerate() {
        theta_block[k] += params.theta[i];
    }
    let mut lambda_block = vec![0.0; params.l()];
    for (j, &l) in ws.iter().enumerate() {
        lambda_block[l] += params.lambda[j];
    }
    let mut rate_total = 0.0;
    for k in 0..params.k() {
        for l in 0..params.l() {
            rate_total += theta_block[k] * lambda_block[l] * params.mu[(k, l)];
        }
    }

    let mut lf = LogFactorial::new();
    let mut counts = 0.0;
    for (i, j, a) in g.entries() {
        let rate = params.theta[i] * params.lambda[j] * params.mu[(zs[i], ws[j])];
        if !(rate > 0.0) {
            return Err(Error::ZeroRateWithCount { row: i, col: j });
        }
        counts += a as f64 * rate.ln() - lf.get(a);
    }
    Ok(prior - rate_total + counts)
}

/// Enumeration bound for [`marginal_log_likelihood_bruteforce`].
pub const ENUMERATION_BOUND: f64 = 1e7;

/// `log sum_{z, w} P(z, w, A)` by enumerating every labeling. Oracle scale only.
pub fn marginal_log_likelihood_bruteforce(g: &BipartiteGraph, params: &BlockParams) -> Result<f64> {
    params.check_graph(g)?;
    let (m, n, k, l) = (g.rows(), g.cols(), params.k(), params.l());
    let terms = (k as f64).powi(m as i32) * (l as f64).powi(n as i32);
    if terms > ENUMERATION_BOUND {
        return Err(Error::EnumerationTooLarge {
            terms,
            bound: ENUMERATION_BOUND,
        });
    }
    let mut z = vec![0usize; m];
    let mut logs = Vec::with_capacity(terms as usize);
    loop {
        let zl = Labels::new(z.clone(), k)?;
        let mut w = vec![0usize; n];
        loop {
            let wl = Labels::new(w.clone(), l)?;
            logs.push(complete_log_likelihood(g, &zl, &wl, params)?);
            if !advance(&mut w, l) {
                break;
            }
        }
        if !advance(&mut z, k) {
            break;
        }
    }
    Ok(log_sum_exp(&logs))
}

// Odometer increment over {0..base}^len; false once it wraps.
fn advance(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Canonical `(theta*, lambda*, mu*)` of a block-rank-one rate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Canonical {
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: DMatrix<f64>,
}

const BLOCK_CONSTANCY_TOL: f64 = 1e-9;

/// Normalizes the conditional mean matrix `rates` (`m x n`) given the true
/// labels: `theta*_i` is the row mean over the square root of the grand mean,
/// `lambda*_j` likewise for columns, and `mu*_kl = rate_ij / (theta*_i lambda*_j)`
/// which must agree across every `(i, j)` in block `(k, l)`.
pub fn canonicalize(z: &Labels, w: &Labels, rates: &DMatrix<f64>) -> Result<Canonical> {
    let (m, n) = rates.shape();
    if z.len() != m || w.len() != n {
        return Err(Error::Dimension(format!(
            "rates are {m}x{n} but labels have lengths {}/{}",
            z.len(),
            w.len()
        )));
    }
    if rates.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidArgument("rates must be finite and strictly positive".into()));
    }
    for (c, &s) in z.sizes().iter().enumerate() {
        if s == 0 {
            return Err(Error::EmptyCluster(c));
        }
    }
    for (c, &s) in w.sizes().iter().enumerate() {
        if s == 0 {
            return Err(Error::EmptyCluster(c));
        }
    }

    let grand = rates.sum() / (m * n) as f64;
    let root = grand.sqrt();
    let theta: Vec<f64> = (0..m).map(|i| rates.row(i).sum() / n as f64 / root).collect();
    let lambda: Vec<f64> = (0..n).map(|j| rates.column(j).sum() / m as f64 / root).collect();

    let (zs, ws) = (z.as_slice(), w.as_slice());
    let mut mu = DMatrix::from_element(z.k(), w.k(), f64::NAN);
    let mut worst = DMatrix::from_element(z.k(), w.k(), 0.0f64);
    for i in 0..m {
        for j in 0..n {
            let (k, l) = (zs[i], ws[j]);
            let value = rates[(i, j)] / (theta[i] * lambda[j]);
            if mu[(k, l)].is_nan() {
                mu[(k, l)] = value;
            } else {
                let dev = ((value - mu[(k, l)]) / mu[(k, l)]).abs();
                worst[(k, l)] = worst[(k, l)].max(dev);
            }
        }
    }
    for k in 0..z.k() {
        for l in 0..w.k() {
            if worst[(k, l)] > BLOCK_CONSTANCY_TOL {
                return Err(Error::NotBlockRankOne {
                    k,
                    l,
                    deviation: worst[(k, l)],
                });
            }
        }
    }
    Ok(Canonical { theta, lambda, mu })
}

/// Per-row argmax of both posterior matrices; ties go to the smallest index.
pub fn hard_labels(p: &Posteriors) -> (Labels, Labels) {
    (argmax_rows(&p.qz), argmax_rows(&p.qw))
}

pub(crate) fn argmax_rows(q: &DMatrix<f64>) -> Labels {
    let labels = q
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Labels {
        labels,
        k: q.ncols(),
    }
}
