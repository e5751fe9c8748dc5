//! Degree-corrected latent block model generator with known ground truth.
//!
//! Every entry `A_ij` draws from its own ChaCha stream keyed by
//! `(seed, i, j)`, so the sampled graph does not depend on how rows are
//! scheduled across threads.

use nalgebra::{dmatrix, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bigraph::BipartiteGraph;
use crate::error::{Error, Result};
use crate::model::Labels;

/// Law of the per-node degree parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DegreeLaw {
    /// Every parameter equals 1 (classical latent block model).
    Unit,
    Uniform { lo: f64, hi: f64 },
}

impl DegreeLaw {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            DegreeLaw::Unit => 1.0,
            DegreeLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DegreeLaw::Unit => Ok(()),
            DegreeLaw::Uniform { lo, hi } if lo > 0.0 && hi >= lo && hi.is_finite() => Ok(()),
            DegreeLaw::Uniform { lo, hi } => Err(Error::InvalidArgument(format!("bad uniform degree law ({lo}, {hi})"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub m: usize,
    pub n: usize,
    pub pi: Vec<f64>,
    pub rho: Vec<f64>,
    pub theta_law: DegreeLaw,
    pub lambda_law: DegreeLaw,
    /// `K x L` base block rates, multiplied by `r`.
    pub mu_base: DMatrix<f64>,
    pub r: f64,
    pub seed: u64,
}

/// The simulation design block-rate matrix scaled by the density factor `r`.
pub fn paper_mu(r: f64) -> Result<DMatrix<f64>> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("density factor must be positive, got {r}")));
    }
    Ok(dmatrix![
        0.15, 0.05, 0.05, 0.06;
        0.05, 0.15, 0.05, 0.08;
        0.05, 0.05, 0.15, 0.10
    ] * r)
}

impl SynthConfig {
    /// 800 x 1000, K = 3, L = 4, uniform priors, Uniform(0.5, 1.5) degrees,
    /// `mu = paper_mu(r)`.
    pub fn paper_design(r: f64, seed: u64) -> Self {
        Self {
            m: 800,
            n: 1000,
            pi: vec![1.0 / 3.0; 3],
            rho: vec![0.25; 4],
            theta_law: DegreeLaw::Uniform { lo: 0.5, hi: 1.5 },
            lambda_law: DegreeLaw::Uniform { lo: 0.5, hi: 1.5 },
            mu_base: paper_mu(1.0).expect("r = 1 is valid"),
            r,
            seed,
        }
    }

    /// Same design with every degree parameter fixed at 1.
    pub fn classical(mut self) -> Self {
        self.theta_law = DegreeLaw::Unit;
        self.lambda_law = DegreeLaw::Unit;
        self
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn l(&self) -> usize {
        self.rho.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::EmptyShape { m: self.m, n: self.n });
        }
        for (name, p) in [("pi", &self.pi), ("rho", &self.rho)] {
            let s: f64 = p.iter().sum();
            if p.is_empty() || p.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("{name} is not a probability vector")));
            }
        }
        if self.mu_base.shape() != (self.k(), self.l()) {
            return Err(Error::Dimension(format!(
                "mu_base is {:?}, expected {}x{}",
                self.mu_base.shape(),
                self.k(),
                self.l()
            )));
        }
        if self.mu_base.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("mu_base must be strictly positive".into()));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidArgument("r must be positive".into()));
        }
        self.theta_law.validate()?;
        self.lambda_law.validate()
    }
}

/// A generated instance and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub graph: BipartiteGraph,
    pub z: Labels,
    pub w: Labels,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `r * mu_base`.
    pub mu: DMatrix<f64>,
}

impl SynthSample {
    /// Exact conditional means `E[A_ij | z, w] = theta_i lambda_j mu_{z_i w_j}`.
    pub fn rates(&self) -> DMatrix<f64> {
        let (z, w) = (self.z.as_slice(), self.w.as_slice());
        DMatrix::from_fn(self.theta.len(), self.lambda.len(), |i, j| {
            self.theta[i] * self.lambda[j] * self.mu[(z[i], w[j])]
        })
    }
}

fn categorical(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &pc) in p.iter().enumerate() {
        acc += pc;
        if u < acc {
            return c;
        }
    }
    // rounding left u above the cumulative total; fall back to the last positive class
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

const INVERSION_LIMIT: f64 = 10.0;

/// Poisson draw: sequential inversion for small means, `rand_distr`'s
/// rejection sampler otherwise.
pub fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean < INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut x = 0u64;
        while u >= cdf && x < 1000 {
            x += 1;
            p *= mean / x as f64;
            cdf += p;
            if p == 0.0 {
                break;
            }
        }
        x
    } else {
        Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
    }
}

/// Draws labels, degree parameters and the Poisson adjacency.
pub fn sample(cfg: &SynthConfig) -> Result<SynthSample> {
    cfg.validate()?;
    let base = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rng = base.clone();
    rng.set_stream(0);

    let z: Vec<usize> = (0..cfg.m).map(|_| categorical(&cfg.pi, &mut rng)).collect();
    let w: Vec<usize> = (0..cfg.n).map(|_| categorical(&cfg.rho, &mut rng)).collect();
    let theta: Vec<f64> = (0..cfg.m).map(|_| cfg.theta_law.draw(&mut rng)).collect();
    let lambda: Vec<f64> = (0..cfg.n).map(|_| cfg.lambda_law.draw(&mut rng)).collect();
    let mu = &cfg.mu_base * cfg.r;

    let n = cfg.n;
    let triples: Vec<(usize, usize, u64)> = (0..cfg.m)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut entry_rng = base.clone();
            let (z, w, theta, lambda, mu) = (&z, &w, &theta, &lambda, &mu);
            (0..n).filter_map(move |j| {
                entry_rng.set_stream(1 + (i * n + j) as u64);
                entry_rng.set_word_pos(0);
                let a = poisson(theta[i] * lambda[j] * mu[(z[i], w[j])], &mut entry_rng);
                (a > 0).then_some((i, j, a))
            })
        })
        .collect();

    Ok(SynthSample {
        graph: BipartiteGraph::from_triples(cfg.m, cfg.n, triples)?,
        z: Labels::new(z, cfg.k())?,
        w: Labels::new(w, cfg.l())?,
        theta,
        lambda,
        mu,
    })
}
