//! Spectral initialization of row and column labels.
//!
//! Rows are clustered on the similarity `A A^T` and columns on `A^T A`, each
//! following Ng, Jordan and Weiss: form `D^{-1/2} S D^{-1/2}` with `D` the
//! similarity row sums, take its top-`k` eigenvectors, normalize each row of
//! the eigenvector matrix to unit length, and run k-means on those rows.
//!
//! The Gram similarities are never materialized; they are applied as
//! `A (A^T x)` through the graph's two sparse views.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bigraph::{BipartiteGraph, Side};
use crate::error::{Error, Result};
use crate::model::{Labels, Posteriors};
use crate::numeric::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConfig {
    pub k: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub seed: u64,
    /// Residual tolerance `||M v - theta v||` on the normalized similarity.
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    /// One-hot smoothing `eps` used by [`init_posteriors`].
    pub smoothing: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            k: 2,
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            seed: 0,
            eig_tol: 1e-8,
            eig_max_iter: 20_000,
            smoothing: 1e-6,
        }
    }
}

/// A symmetric similarity matrix accessed through matrix-vector products.
pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;

    /// `out = S x`.
    fn apply(&self, x: &[f64], out: &mut [f64]);

    /// `S 1`.
    fn row_sums(&self) -> Vec<f64> {
        let ones = vec![1.0; self.dim()];
        let mut out = vec![0.0; self.dim()];
        self.apply(&ones, &mut out);
        out
    }
}

/// Matrix-free `A A^T` (rows) or `A^T A` (columns).
#[derive(Debug, Clone, Copy)]
pub struct GramOperator<'g> {
    graph: &'g BipartiteGraph,
    side: Side,
}

pub fn gram_similarity(g: &BipartiteGraph, side: Side) -> GramOperator<'_> {
    GramOperator { graph: g, side }
}

impl GramOperator<'_> {
    /// Dense copy of the similarity, for small instances and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut s = DMatrix::zeros(dim, dim);
        let mut e = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        for c in 0..dim {
            e[c] = 1.0;
            self.apply(&e, &mut col);
            s.column_mut(c).copy_from_slice(&col);
            e[c] = 0.0;
        }
        s
    }
}

impl SymmetricOperator for GramOperator<'_> {
    fn dim(&self) -> usize {
        match self.side {
            Side::Rows => self.graph.rows(),
            Side::Cols => self.graph.cols(),
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let g = self.graph;
        match self.side {
            Side::Rows => {
                let t: Vec<f64> = (0..g.cols())
                    .map(|j| g.col(j).map(|(i, a)| a as f64 * x[i]).sum())
                    .collect();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = g.row(i).map(|(j, a)| a as f64 * t[j]).sum();
                }
            }
            Side::Cols => {
                let t: Vec<f64> = (0..g.rows())
                    .map(|i| g.row(i).map(|(j, a)| a as f64 * x[j]).sum())
                    .collect();
                for (j, o) in out.iter_mut().enumerate() {
                    *o = g.col(j).map(|(i, a)| a as f64 * t[i]).sum();
                }
            }
        }
    }
}

/// A dense symmetric similarity.
#[derive(Debug, Clone)]
pub struct DenseSimilarity(pub DMatrix<f64>);

impl SymmetricOperator for DenseSimilarity {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

/// `D^{-1/2} S D^{-1/2}`, with isolated nodes (zero row sum) mapped to zero.
struct Normalized<'a, S: SymmetricOperator + ?Sized> {
    inner: &'a S,
    inv_sqrt_deg: Vec<f64>,
}

impl<S: SymmetricOperator + ?Sized> Normalized<'_, S> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let scaled: Vec<f64> = x.iter().zip(&self.inv_sqrt_deg).map(|(a, b)| a * b).collect();
        self.inner.apply(&scaled, out);
        out.iter_mut().zip(&self.inv_sqrt_deg).for_each(|(o, b)| *o *= b);
    }

    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(x.nrows(), x.ncols());
        let cols: Vec<Vec<f64>> = (0..x.ncols())
            .into_par_iter()
            .map(|c| {
                let mut out = vec![0.0; x.nrows()];
                self.apply(x.column(c).as_slice(), &mut out);
                out
            })
            .collect();
        for (c, col) in cols.iter().enumerate() {
            y.column_mut(c).copy_from_slice(col);
        }
        y
    }

    fn dense(&self) -> DMatrix<f64> {
        let dim = self.inv_sqrt_deg.len();
        let mut s = DMatrix::zeros(dim, dim);
        let mut e = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        for c in 0..dim {
            e[c] = 1.0;
            self.apply(&e, &mut col);
            s.column_mut(c).copy_from_slice(&col);
            e[c] = 0.0;
        }
        // exact symmetry for the dense solver
        (&s + s.transpose()) * 0.5
    }
}

/// Eigenpairs sorted by decreasing eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

// Below this dimension the normalized similarity is formed densely.
const DENSE_LIMIT: usize = 96;

/// Top-`k` eigenpairs of the normalized similarity `D^{-1/2} S D^{-1/2}`.
///
/// Small problems are solved densely; larger ones by block subspace iteration
/// with Rayleigh-Ritz extraction and an oversampled block, stopping once every
/// wanted Ritz pair has residual at most `cfg.eig_tol`.
pub fn normalized_top_eigenpairs<S: SymmetricOperator + ?Sized>(op: &S, k: usize, cfg: &SpectralConfig) -> Result<EigenPairs> {
    let inv_sqrt_deg = op
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let norm = Normalized { inner: op, inv_sqrt_deg };
    top_eigenpairs(&norm, k, cfg)
}

fn top_eigenpairs<S: SymmetricOperator + ?Sized>(op: &Normalized<'_, S>, k: usize, cfg: &SpectralConfig) -> Result<EigenPairs> {
    let dim = op.inv_sqrt_deg.len();
    let k = k.min(dim);
    let block = (k + k.max(10)).min(dim);
    if dim <= DENSE_LIMIT || block == dim {
        let (values, vectors) = sorted_eigen(op.dense());
        return Ok(EigenPairs {
            values: values[..k].to_vec(),
            vectors: vectors.columns(0, k).into_owned(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xE16));
    let start = DMatrix::from_fn(dim, block, |_, _| rng.random_range(-1.0..1.0));
    let mut basis = start.qr().q();
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.eig_max_iter {
        let image = op.apply_block(&basis);
        let h = basis.transpose() * &image;
        let h = (&h + h.transpose()) * 0.5;
        let (values, coeffs) = sorted_eigen(h);
        let ritz = &basis * &coeffs;
        let ritz_image = &image * &coeffs;

        residual = (0..k)
            .map(|c| (ritz_image.column(c) - ritz.column(c) * values[c]).norm())
            .fold(0.0, f64::max);
        if residual <= cfg.eig_tol {
            return Ok(EigenPairs {
                values: values[..k].to_vec(),
                vectors: ritz.columns(0, k).into_owned(),
            });
        }
        basis = ritz_image.qr().q();
    }
    Err(Error::EigenNotConverged {
        iterations: cfg.eig_max_iter,
        residual,
    })
}

/// Outcome of [`spectral_cluster`]: labels plus the nodes that had no
/// similarity to anything and were parked in cluster 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLabels {
    pub labels: Labels,
    pub isolated: Vec<usize>,
}

pub fn spectral_cluster<S: SymmetricOperator + ?Sized>(op: &S, cfg: &SpectralConfig) -> Result<SpectralLabels> {
    if cfg.k == 0 || cfg.kmeans_restarts == 0 {
        return Err(Error::InvalidArgument("spectral clustering needs k >= 1 and restarts >= 1".into()));
    }
    let dim = op.dim();
    let degrees = op.row_sums();
    let isolated: Vec<usize> = (0..dim).filter(|&i| !(degrees[i] > 0.0)).collect();
    if cfg.k == 1 {
        return Ok(SpectralLabels {
            labels: Labels::new(vec![0; dim], 1)?,
            isolated,
        });
    }
    let active: Vec<usize> = (0..dim).filter(|&i| degrees[i] > 0.0).collect();
    let mut labels = vec![0usize; dim];
    if !active.is_empty() {
        let pairs = normalized_top_eigenpairs(op, cfg.k, cfg)?;
        let embedding = row_normalize(&DMatrix::from_fn(active.len(), pairs.vectors.ncols(), |r, c| {
            pairs.vectors[(active[r], c)]
        }));
        let km = kmeans(&embedding, cfg.k, cfg.kmeans_restarts, cfg.kmeans_max_iter, cfg.seed);
        for (r, &i) in active.iter().enumerate() {
            labels[i] = km.assignment[r];
        }
    }
    Ok(SpectralLabels {
        labels: Labels::new(labels, cfg.k)?,
        isolated,
    })
}

/// Scales each row to unit Euclidean norm; zero rows stay zero.
pub fn row_normalize(u: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = u.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

/// k-means with k-means++ seeding over the rows of `points`, best of
/// `restarts` runs by within-cluster sum of squares (ties to the earlier run).
/// Cluster ids are renumbered in order of first appearance.
pub fn kmeans(points: &DMatrix<f64>, k: usize, restarts: usize, max_iter: usize, seed: u64) -> KMeansResult {
    let n = points.nrows();
    if n <= k {
        return KMeansResult {
            assignment: (0..n).collect(),
            inertia: 0.0,
        };
    }
    let rows: Vec<DVector<f64>> = points.row_iter().map(|r| r.transpose()).collect();
    let runs: Vec<KMeansResult> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| lloyd(&rows, k, max_iter, derive_seed(seed, r as u64)))
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.inertia < runs[best].inertia {
            best = r;
        }
    }
    let mut result = runs.into_iter().nth(best).expect("at least one restart");
    result.assignment = first_appearance_order(&result.assignment, k);
    result
}

fn first_appearance_order(assign: &[usize], k: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    assign
        .iter()
        .map(|&a| {
            if map[a] == usize::MAX {
                map[a] = next;
                next += 1;
            }
            map[a]
        })
        .collect()
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(rows: &[DVector<f64>], k: usize, max_iter: usize, seed: u64) -> KMeansResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows.len();

    // k-means++ seeding
    let mut centers = vec![rows[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
        for (i, p) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, p) in rows.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = rows[0].len();
        let mut sums = vec![DVector::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (p, &c) in rows.iter().zip(&assignment) {
            sums[c] += p;
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            } else {
                // re-seed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&rows[a], &centers[assignment[a]]);
                        let db = sq_dist(&rows[b], &centers[assignment[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("non-empty");
                centers[c] = rows[far].clone();
            }
        }
    }
    let inertia = rows
        .iter()
        .zip(&assignment)
        .map(|(p, &c)| sq_dist(p, &centers[c]))
        .sum();
    KMeansResult { assignment, inertia }
}

/// Spectral initial posteriors for a fit with `k` row and `l` column clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInit {
    pub posteriors: Posteriors,
    pub row_labels: Labels,
    pub col_labels: Labels,
    pub isolated_rows: Vec<usize>,
    pub isolated_cols: Vec<usize>,
}

pub fn init_posteriors(g: &BipartiteGraph, k: usize, l: usize, cfg: &SpectralConfig) -> Result<SpectralInit> {
    let rows = spectral_cluster(&gram_similarity(g, Side::Rows), &SpectralConfig { k, ..cfg.clone() })?;
    let cols = spectral_cluster(&gram_similarity(g, Side::Cols), &SpectralConfig { k: l, ..cfg.clone() })?;
    if !rows.isolated.is_empty() || !cols.isolated.is_empty() {
        log::info!(
            "spectral init: {} isolated rows and {} isolated columns parked in cluster 1",
            rows.isolated.len(),
            cols.isolated.len()
        );
    }
    Ok(SpectralInit {
        posteriors: Posteriors::from_labels(&rows.labels, &cols.labels, cfg.smoothing),
        row_labels: rows.labels,
        col_labels: cols.labels,
        isolated_rows: rows.isolated,
        isolated_cols: cols.isolated,
    })
}
