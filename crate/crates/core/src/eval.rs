//! Clustering metrics and diagnostics: adjusted Rand index, soft confusion
//! matrices and the induced partition distance, Poisson KL divergence, the
//! separation functional, the population criterion, label alignment and
//! Pearson's chi-square test of independence.

use std::collections::HashMap;

use nalgebra::DMatrix;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::model::Labels;

/// `R_ab = (1/m) sum_i p_ia p~_ib`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftConfusion(pub DMatrix<f64>);

impl SoftConfusion {
    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().take(self.0.nrows().min(self.0.ncols())).sum()
    }
}

pub fn soft_confusion(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<SoftConfusion> {
    if p.nrows() != q.nrows() {
        return Err(Error::Dimension(format!("row counts differ: {} vs {}", p.nrows(), q.nrows())));
    }
    if p.nrows() == 0 {
        return Err(Error::EmptyInput("soft confusion of zero rows".into()));
    }
    Ok(SoftConfusion(p.transpose() * q / p.nrows() as f64))
}

/// `d(p, q) = 1 - Tr R(p, q)`.
pub fn partition_distance(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    if p.ncols() != q.ncols() {
        return Err(Error::Dimension(format!("cluster counts differ: {} vs {}", p.ncols(), q.ncols())));
    }
    Ok(1.0 - soft_confusion(p, q)?.trace())
}

/// Distance between `(qz, qw, mu)` triples: both partition distances plus
/// the entrywise L1 distance of the rate matrices.
pub fn triple_distance(
    a: (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
    b: (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
) -> Result<f64> {
    if a.2.shape() != b.2.shape() {
        return Err(Error::Dimension("rate matrices differ in shape".into()));
    }
    let l1: f64 = a.2.iter().zip(b.2.iter()).map(|(x, y)| (x - y).abs()).sum();
    Ok(partition_distance(a.0, b.0)? + partition_distance(a.1, b.1)? + l1)
}

/// `a log(a/b) - (a - b)`.
pub fn kl_poisson(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidArgument(format!("Poisson KL needs positive rates, got ({a}, {b})")));
    }
    Ok((a * (a / b).ln() - (a - b)).max(0.0))
}

/// Confusion-weighted Poisson KL between the true block rates and a candidate
/// `(qz, qw, mu)`. Zero on the truth and its relabelings.
pub fn separation_g(
    z: &Labels,
    w: &Labels,
    qz: &DMatrix<f64>,
    qw: &DMatrix<f64>,
    mu_true: &DMatrix<f64>,
    mu: &DMatrix<f64>,
) -> Result<f64> {
    if mu_true.shape() != (z.k(), w.k()) || mu.shape() != (qz.ncols(), qw.ncols()) {
        return Err(Error::Dimension("rate matrices do not match label ranges".into()));
    }
    let rz = soft_confusion(&z.one_hot(0.0), qz)?.0;
    let rw = soft_confusion(&w.one_hot(0.0), qw)?.0;
    let mut kl = DMatrix::zeros(mu_true.len(), mu.len());
    for (ti, &t) in mu_true.iter().enumerate() {
        for (ci, &c) in mu.iter().enumerate() {
            kl[(ti, ci)] = kl_poisson(t, c)?;
        }
    }
    let (kt, lt) = mu_true.shape();
    let (kc, lc) = mu.shape();
    let mut total = 0.0;
    for k in 0..kt {
        for l in 0..lt {
            for k2 in 0..kc {
                for l2 in 0..lc {
                    total += rz[(k, k2)] * rw[(l, l2)] * kl[(k + l * kt, k2 + l2 * kc)];
                }
            }
        }
    }
    Ok(total)
}

/// Population criterion:
/// `-sum_ij theta*_i lambda*_j sum_kl qz_ik qw_jl mu_kl + sum_ij E[A_ij] sum_kl qz_ik qw_jl log mu_kl`.
pub fn population_objective(
    theta: &[f64],
    lambda: &[f64],
    rates: &DMatrix<f64>,
    qz: &DMatrix<f64>,
    qw: &DMatrix<f64>,
    mu: &DMatrix<f64>,
) -> Result<f64> {
    let (m, n) = rates.shape();
    if theta.len() != m || lambda.len() != n || qz.nrows() != m || qw.nrows() != n || mu.shape() != (qz.ncols(), qw.ncols()) {
        return Err(Error::Dimension("population objective inputs disagree".into()));
    }
    if mu.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("mu must be positive".into()));
    }
    let log_mu = mu.map(f64::ln);
    // row-side projections: qz mu and qz log(mu), each m x L
    let qz_mu = qz * mu;
    let qz_log_mu = qz * &log_mu;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            let mut rate = 0.0;
            let mut log_rate = 0.0;
            for l in 0..qw.ncols() {
                rate += qz_mu[(i, l)] * qw[(j, l)];
                log_rate += qz_log_mu[(i, l)] * qw[(j, l)];
            }
            total += -theta[i] * lambda[j] * rate + rates[(i, j)] * log_rate;
        }
    }
    Ok(total)
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings (arbitrary label values).
///
/// When the chance-corrected denominator vanishes the result is 1 for
/// identical partitions and 0 otherwise.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("label lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("adjusted Rand index of empty labelings".into()));
    }
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
        *cells.entry((x, y)).or_default() += 1;
    }
    let index: f64 = cells.values().map(|&c| comb2(c as f64)).sum();
    let sum_a: f64 = rows.values().map(|&c| comb2(c as f64)).sum();
    let sum_b: f64 = cols.values().map(|&c| comb2(c as f64)).sum();
    let pairs = comb2(a.len() as f64);
    let expected = if pairs > 0.0 { sum_a * sum_b / pairs } else { 0.0 };
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        let identical = cells.len() == rows.len() && cells.len() == cols.len();
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square test of independence on an `R x C` count table.
pub fn chi_square_independence(table: &[Vec<u64>]) -> Result<ChiSquare> {
    let r = table.len();
    if r == 0 || table[0].is_empty() {
        return Err(Error::EmptyInput("empty contingency table".into()));
    }
    let c = table[0].len();
    if table.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension("ragged contingency table".into()));
    }
    let row_sums: Vec<f64> = table.iter().map(|row| row.iter().sum::<u64>() as f64).collect();
    let col_sums: Vec<f64> = (0..c).map(|j| table.iter().map(|row| row[j]).sum::<u64>() as f64).collect();
    if let Some(i) = row_sums.iter().position(|&s| s == 0.0) {
        return Err(Error::ZeroMargin(format!("row {i}")));
    }
    if let Some(j) = col_sums.iter().position(|&s| s == 0.0) {
        return Err(Error::ZeroMargin(format!("column {j}")));
    }
    let total: f64 = row_sums.iter().sum();
    let mut statistic = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / total;
            statistic += (obs as f64 - expected).powi(2) / expected;
        }
    }
    let dof = (r - 1) * (c - 1);
    let p_value = if dof == 0 || statistic <= 0.0 {
        1.0
    } else {
        gamma_ur(dof as f64 / 2.0, statistic / 2.0)
    };
    Ok(ChiSquare { statistic, dof, p_value })
}

// Exhaustive search is used up to this many clusters, Hungarian beyond.
const EXHAUSTIVE_LIMIT: usize = 8;

/// Permutation `s` (candidate cluster `c` maps to reference cluster `s[c]`)
/// maximizing `sum_c R(ref, cand)[s[c], c]`.
pub fn align_labels(reference: &Labels, candidate: &DMatrix<f64>) -> Result<Vec<usize>> {
    let k = reference.k();
    if candidate.ncols() != k {
        return Err(Error::Dimension(format!("K mismatch: {k} vs {}", candidate.ncols())));
    }
    let r = soft_confusion(&reference.one_hot(0.0), candidate)?.0;
    Ok(if k <= EXHAUSTIVE_LIMIT {
        best_permutation_exhaustive(&r)
    } else {
        hungarian_max(&r)
    })
}

/// Convenience wrapper for hard candidate labels.
pub fn align_hard_labels(reference: &Labels, candidate: &Labels) -> Result<Vec<usize>> {
    align_labels(reference, &candidate.one_hot(0.0))
}

/// `sum_c R[s[c], c]`.
pub fn permuted_trace(r: &DMatrix<f64>, s: &[usize]) -> f64 {
    s.iter().enumerate().map(|(c, &ref_c)| r[(ref_c, c)]).sum()
}

/// Heap's algorithm over all permutations, keeping the first maximum.
pub(crate) fn best_permutation_exhaustive(r: &DMatrix<f64>) -> Vec<usize> {
    let k = r.nrows();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_val = permuted_trace(r, &perm);
    let mut counters = vec![0usize; k];
    let mut i = 1;
    while i < k {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            let v = permuted_trace(r, &perm);
            if v > best_val {
                best_val = v;
                best = perm.clone();
            }
            counters[i] += 1;
            i = 1;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    best
}

/// Hungarian algorithm (shortest augmenting path, O(K^3)) maximizing the
/// permuted trace.
pub(crate) fn hungarian_max(r: &DMatrix<f64>) -> Vec<usize> {
    let n = r.nrows();
    // cost[row = candidate c][col = reference] = -R[ref, c]
    let cost = |c: usize, rf: usize| -r[(rf, c)];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut s = vec![0usize; n];
    for j in 1..=n {
        s[p[j] - 1] = j - 1;
    }
    s
}

/// `(1/m) sum_i sum_c |q_ic - 1(z_i = s[c])|`.
pub fn aligned_l1_error(reference: &Labels, q: &DMatrix<f64>, s: &[usize]) -> Result<f64> {
    if q.nrows() != reference.len() || q.ncols() != s.len() {
        return Err(Error::Dimension("aligned L1 inputs disagree".into()));
    }
    let z = reference.as_slice();
    let mut total = 0.0;
    for i in 0..q.nrows() {
        for c in 0..q.ncols() {
            let target = if z[i] == s[c] { 1.0 } else { 0.0 };
            total += (q[(i, c)] - target).abs();
        }
    }
    Ok(total / q.nrows() as f64)
}
