//! Data ingestion, fitting runs with restarts, the simulation harness, the
//! MovieLens workflow and result serialization.
//!
//! Cluster labels are 0-based everywhere in the library and 1-based in every
//! file this module reads or writes.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bigraph::BipartiteGraph;
use crate::error::{Error, Result};
use crate::eval::{adjusted_rand_index, chi_square_independence, ChiSquare};
use crate::model::{hard_labels, Labels, Posteriors};
use crate::numeric::derive_seed;
use crate::spectral_init::{init_posteriors, SpectralConfig};
use crate::synth::{sample, SynthConfig};
use crate::vem::{fit, FitConfig, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    /// Sum weights of repeated pairs.
    Counts,
    /// Any positive total becomes 1.
    Binary,
}

/// A graph read from an edge list with its id maps (dense index -> original id).
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub graph: BipartiteGraph,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

#[derive(Default)]
struct IdMap {
    index: HashMap<String, usize>,
    ids: Vec<String>,
}

impl IdMap {
    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.index.insert(id.to_owned(), i);
        self.ids.push(id.to_owned());
        i
    }
}

/// Parses `row_id <ws> col_id [<ws> weight ...]` lines. Ids get dense indices
/// in first-appearance order. Blank lines and `#` comments are skipped;
/// fields past the third are ignored. In binary mode the weight column is
/// ignored entirely.
pub fn parse_edge_list<R: BufRead>(reader: R, mode: IngestMode) -> Result<Ingested> {
    let mut rows = IdMap::default();
    let mut cols = IdMap::default();
    let mut triples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(r), Some(c)) = (fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected at least two fields, got {line:?}"),
            });
        };
        let weight = match (mode, fields.next()) {
            (IngestMode::Binary, _) | (IngestMode::Counts, None) => 1,
            (IngestMode::Counts, Some(w)) => w.parse::<u64>().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("weight {w:?} is not a non-negative integer"),
            })?,
        };
        triples.push((rows.intern(r), cols.intern(c), weight));
    }
    if triples.is_empty() {
        return Err(Error::EmptyInput("edge list has no entries".into()));
    }
    let (m, n) = (rows.ids.len(), cols.ids.len());
    let graph = match mode {
        IngestMode::Counts => BipartiteGraph::from_triples(m, n, triples)?,
        IngestMode::Binary => {
            let summed = BipartiteGraph::from_triples(m, n, triples)?;
            let ones: Vec<_> = summed.entries().map(|(i, j, _)| (i, j, 1)).collect();
            BipartiteGraph::from_triples(m, n, ones)?
        }
    };
    Ok(Ingested {
        graph,
        row_ids: rows.ids,
        col_ids: cols.ids,
    })
}

pub fn ingest_edge_list(path: &Path, mode: IngestMode) -> Result<Ingested> {
    parse_edge_list(BufReader::new(File::open(path)?), mode)
}

/// Writes `row_id \t col_id \t weight` for every stored entry, row-major.
pub fn write_edge_list<W: Write>(data: &Ingested, mut out: W) -> Result<()> {
    for (i, j, a) in data.graph.entries() {
        writeln!(out, "{}\t{}\t{}", data.row_ids[i], data.col_ids[j], a)?;
    }
    Ok(())
}

fn write_id_map(path: &Path, ids: &[String]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "index\tid")?;
    for (i, id) in ids.iter().enumerate() {
        writeln!(out, "{i}\t{id}")?;
    }
    out.flush()?;
    Ok(())
}

/// How initial posteriors are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    Spectral,
    Random,
    /// 1-based `(id, cluster)` CSV files for rows and columns.
    Given { rows: PathBuf, cols: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    EdgeList { path: PathBuf, mode: IngestMode },
    Synth(SynthConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub input: Input,
    pub k: usize,
    pub l: usize,
    pub init: InitMode,
    pub seed: u64,
    pub fit: FitConfig,
    pub spectral: SpectralConfig,
    pub restarts: usize,
    pub out: Option<PathBuf>,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l == 0 {
            return Err(Error::InvalidArgument("K and L must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        self.fit.validate()
    }
}

/// Uniformly random hard labels, smoothed like the spectral initializer.
pub fn random_posteriors(m: usize, n: usize, k: usize, l: usize, eps: f64, seed: u64) -> Posteriors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Labels::new((0..m).map(|_| rng.random_range(0..k)).collect(), k).expect("in range");
    let w = Labels::new((0..n).map(|_| rng.random_range(0..l)).collect(), l).expect("in range");
    Posteriors::from_labels(&z, &w, eps)
}

fn read_given_labels(path: &Path, ids: &[String], k: usize) -> Result<Labels> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut labels = vec![None; ids.len()];
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    for (lineno, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse_err = |message: String| Error::Parse { line: lineno + 2, message };
        let id = rec.get(0).ok_or_else(|| parse_err("missing id".into()))?;
        let cluster: usize = rec
            .get(1)
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| parse_err("cluster is not a positive integer".into()))?;
        if cluster == 0 || cluster > k {
            return Err(parse_err(format!("cluster {cluster} outside 1..={k}")));
        }
        let &i = index.get(id).ok_or_else(|| parse_err(format!("unknown id {id:?}")))?;
        labels[i] = Some(cluster - 1);
    }
    let labels: Vec<usize> = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::InvalidArgument(format!("no initial label for id {:?}", ids[i]))))
        .collect::<Result<_>>()?;
    Labels::new(labels, k)
}

/// Result of a run: the winning fit plus every restart's final criterion.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub fit: FitResult,
    pub restart_objectives: Vec<f64>,
    pub winner: usize,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

/// Fits with `restarts` starts and keeps the highest final criterion
/// (earliest restart on ties). Restart 0 uses `first`; the others use random
/// labels from seeds derived from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn fit_with_restarts(
    g: &BipartiteGraph,
    k: usize,
    l: usize,
    first: Posteriors,
    restarts: usize,
    seed: u64,
    fit_cfg: &FitConfig,
    eps: f64,
) -> Result<(FitResult, Vec<f64>, usize)> {
    let results: Vec<FitResult> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let init = if r == 0 {
                first.clone()
            } else {
                random_posteriors(g.rows(), g.cols(), k, l, eps, derive_seed(seed, r as u64))
            };
            fit(g, k, l, &init, fit_cfg)
        })
        .collect::<Result<_>>()?;
    let objectives: Vec<f64> = results.iter().map(|f| f.objective).collect();
    let mut winner = 0;
    for (r, &o) in objectives.iter().enumerate() {
        if o > objectives[winner] {
            winner = r;
        }
    }
    let best = results.into_iter().nth(winner).expect("non-empty");
    Ok((best, objectives, winner))
}

pub fn run_fit(spec: &RunSpec) -> Result<RunOutcome> {
    spec.validate()?;
    let data = match &spec.input {
        Input::EdgeList { path, mode } => ingest_edge_list(path, *mode)?,
        Input::Synth(cfg) => {
            let s = sample(cfg)?;
            Ingested {
                row_ids: (1..=s.graph.rows()).map(|i| i.to_string()).collect(),
                col_ids: (1..=s.graph.cols()).map(|j| j.to_string()).collect(),
                graph: s.graph,
            }
        }
    };
    let g = &data.graph;
    let eps = spec.spectral.smoothing;
    let first = match &spec.init {
        InitMode::Spectral => {
            let cfg = SpectralConfig {
                seed: spec.seed,
                ..spec.spectral.clone()
            };
            init_posteriors(g, spec.k, spec.l, &cfg)?.posteriors
        }
        InitMode::Random => random_posteriors(g.rows(), g.cols(), spec.k, spec.l, eps, derive_seed(spec.seed, 0)),
        InitMode::Given { rows, cols } => {
            let z = read_given_labels(rows, &data.row_ids, spec.k)?;
            let w = read_given_labels(cols, &data.col_ids, spec.l)?;
            Posteriors::from_labels(&z, &w, eps)
        }
    };
    let (best, objectives, winner) =
        fit_with_restarts(g, spec.k, spec.l, first, spec.restarts, spec.seed, &spec.fit, eps)?;
    let outcome = RunOutcome {
        fit: best,
        restart_objectives: objectives,
        winner,
        row_ids: data.row_ids,
        col_ids: data.col_ids,
    };
    if let Some(dir) = &spec.out {
        write_fit_outputs(dir, &outcome.row_ids, &outcome.col_ids, &outcome.fit)?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsJson {
    pub pi: Vec<f64>,
    pub rho: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn write_labels(path: &Path, ids: &[String], labels: &Labels) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "cluster"])?;
    for (id, &c) in ids.iter().zip(labels.as_slice()) {
        w.write_record([id.as_str(), &(c + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_posterior(path: &Path, ids: &[String], q: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_owned()];
    header.extend((1..=q.ncols()).map(|c| format!("cluster_{c}")));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(q.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `row_labels.csv`, `col_labels.csv`, `qz.csv`, `qw.csv`,
/// `params.json`, `trace.csv` and the two id maps into `dir`.
pub fn write_fit_outputs(dir: &Path, row_ids: &[String], col_ids: &[String], result: &FitResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (z, w) = hard_labels(&result.posteriors);
    write_labels(&dir.join("row_labels.csv"), row_ids, &z)?;
    write_labels(&dir.join("col_labels.csv"), col_ids, &w)?;
    write_posterior(&dir.join("qz.csv"), row_ids, &result.posteriors.qz)?;
    write_posterior(&dir.join("qw.csv"), col_ids, &result.posteriors.qw)?;
    write_id_map(&dir.join("row_ids.tsv"), row_ids)?;
    write_id_map(&dir.join("col_ids.tsv"), col_ids)?;

    let params = ParamsJson {
        pi: result.params.pi.clone(),
        rho: result.params.rho.clone(),
        mu: matrix_rows(&result.params.mu),
        theta: result.params.theta.clone(),
        lambda: result.params.lambda.clone(),
        objective: result.objective,
        iterations: result.iterations,
        converged: result.converged,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("params.json"))?), &params)?;

    let mut trace = csv::Writer::from_path(dir.join("trace.csv"))?;
    trace.write_record(["iteration", "objective"])?;
    for (t, v) in result.objective_trace.iter().enumerate() {
        trace.write_record([(t + 1).to_string(), v.to_string()])?;
    }
    trace.flush()?;
    Ok(())
}

/// Reads a labels CSV written by [`write_fit_outputs`] back to 0-based labels.
pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, usize)>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .records()
        .enumerate()
        .map(|(lineno, rec)| {
            let rec = rec?;
            let cluster: usize = rec.get(1).and_then(|c| c.parse().ok()).ok_or(Error::Parse {
                line: lineno + 2,
                message: "bad cluster".into(),
            })?;
            Ok((rec.get(0).unwrap_or_default().to_owned(), cluster - 1))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// simulation harness

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Degree parameters drawn from Uniform(0.5, 1.5).
    Dc,
    /// Degree parameters fixed at 1.
    Classical,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Dc => "dc",
            Variant::Classical => "classical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessDesign {
    pub r_grid: Vec<f64>,
    pub replicates: usize,
    pub variant: Variant,
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub fit: FitConfig,
    pub spectral: SpectralConfig,
}

impl HarnessDesign {
    /// The 800 x 1000, K = 3, L = 4 design over `r in {0.4, 0.6, 0.8, 1.0}`.
    pub fn paper(variant: Variant, replicates: usize, seed: u64) -> Self {
        Self {
            r_grid: vec![0.4, 0.6, 0.8, 1.0],
            replicates,
            variant,
            seed,
            m: 800,
            n: 1000,
            fit: FitConfig {
                track_trace: false,
                ..FitConfig::default()
            },
            spectral: SpectralConfig::default(),
        }
    }

    fn synth_config(&self, r: f64, seed: u64) -> SynthConfig {
        let base = SynthConfig {
            m: self.m,
            n: self.n,
            ..SynthConfig::paper_design(r, seed)
        };
        match self.variant {
            Variant::Dc => base,
            Variant::Classical => base.classical(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnessRow {
    pub variant: String,
    pub r: f64,
    pub replicate: usize,
    pub side: String,
    pub method: String,
    pub ari: f64,
}

pub const HARNESS_METHODS: [&str; 2] = ["dclbm", "spectral"];

/// For every `(r, replicate)`: sample, run spectral initialization, fit from
/// it, and record both ARIs against the planted labels. Replicate `t` uses
/// the same derived seed at every `r`.
pub fn run_simulation_harness(design: &HarnessDesign) -> Result<Vec<HarnessRow>> {
    let jobs: Vec<(usize, f64, usize)> = design
        .r_grid
        .iter()
        .enumerate()
        .flat_map(|(ri, &r)| (0..design.replicates).map(move |rep| (ri, r, rep)))
        .collect();
    let per_job: Vec<Vec<HarnessRow>> = jobs
        .par_iter()
        .map(|&(_, r, rep)| {
            let seed = derive_seed(design.seed, rep as u64);
            let s = sample(&design.synth_config(r, seed))?;
            let k = s.z.k();
            let l = s.w.k();
            let spectral = SpectralConfig {
                seed: derive_seed(seed, 1),
                ..design.spectral.clone()
            };
            let init = init_posteriors(&s.graph, k, l, &spectral)?;
            let fitted = fit(&s.graph, k, l, &init.posteriors, &design.fit)?;
            let (z_hat, w_hat) = hard_labels(&fitted.posteriors);
            let row = |side: &str, method: &str, ari: f64| HarnessRow {
                variant: design.variant.as_str().into(),
                r,
                replicate: rep,
                side: side.into(),
                method: method.into(),
                ari,
            };
            Ok(vec![
                row("row", "dclbm", adjusted_rand_index(z_hat.as_slice(), s.z.as_slice())?),
                row("col", "dclbm", adjusted_rand_index(w_hat.as_slice(), s.w.as_slice())?),
                row("row", "spectral", adjusted_rand_index(init.row_labels.as_slice(), s.z.as_slice())?),
                row("col", "spectral", adjusted_rand_index(init.col_labels.as_slice(), s.w.as_slice())?),
            ])
        })
        .collect::<Result<_>>()?;
    Ok(per_job.into_iter().flatten().collect())
}

/// Long-format CSV: `variant,r,replicate,side,method,ari`.
pub fn write_harness_csv<W: Write>(rows: &[HarnessRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["variant", "r", "replicate", "side", "method", "ari"])?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean ARI per `(r, side, method)`, in grid order.
pub fn summarize_harness(rows: &[HarnessRow]) -> Vec<(f64, String, String, f64)> {
    let mut keys: Vec<(f64, String, String)> = Vec::new();
    let mut sums: HashMap<(u64, String, String), (f64, usize)> = HashMap::new();
    for row in rows {
        let key = (row.r.to_bits(), row.side.clone(), row.method.clone());
        let e = sums.entry(key).or_insert_with(|| {
            keys.push((row.r, row.side.clone(), row.method.clone()));
            (0.0, 0)
        });
        e.0 += row.ari;
        e.1 += 1;
    }
    keys.into_iter()
        .map(|(r, side, method)| {
            let (s, c) = sums[&(r.to_bits(), side.clone(), method.clone())];
            (r, side, method, s / c as f64)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// MovieLens

/// Reads a `|`-separated item table (`u.item` layout): the first field is the
/// item id and the trailing run of `0`/`1` fields are the genre flags.
pub fn parse_item_genres<R: Read>(mut reader: R) -> Result<Vec<(String, Vec<bool>)>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    // u.item is Latin-1; titles are irrelevant so a lossy decode is enough
    let text = String::from_utf8_lossy(&bytes);
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        let flag_count = fields.iter().skip(1).rev().take_while(|f| **f == "0" || **f == "1").count();
        if flag_count == 0 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "no genre flags found".into(),
            });
        }
        let flags = fields[fields.len() - flag_count..].iter().map(|f| *f == "1").collect();
        out.push((fields[0].to_owned(), flags));
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("item table".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: u64,
    pub hi: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterHistogram {
    pub cluster: usize,
    pub bins: Vec<HistogramBin>,
}

/// Equal-width histogram over `[0, max]` with `bins` bins.
pub fn degree_histogram(degrees: &[u64], max: u64, bins: usize) -> Vec<HistogramBin> {
    let width = (max / bins as u64 + 1).max(1);
    let mut out: Vec<HistogramBin> = (0..bins as u64)
        .map(|b| HistogramBin {
            lo: b * width,
            hi: (b + 1) * width,
            count: 0,
        })
        .collect();
    for &d in degrees {
        let b = ((d / width) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MovieLensSummary {
    pub users: usize,
    pub movies: usize,
    pub ratings: u64,
    pub k: usize,
    pub l: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub user_cluster_sizes: Vec<usize>,
    pub movie_cluster_sizes: Vec<usize>,
    /// Row `k`: percentage of user cluster `k`'s ratings that fall in each movie cluster.
    pub rating_percentages: Vec<Vec<f64>>,
    pub user_degree_histograms: Vec<ClusterHistogram>,
    pub movie_degree_histograms: Vec<ClusterHistogram>,
    pub single_category_movies: usize,
    /// Genre flag positions kept as contingency columns.
    pub categories: Vec<usize>,
    /// Rows: estimated movie clusters (1-based order, empty clusters dropped).
    pub contingency_clusters: Vec<usize>,
    pub contingency: Vec<Vec<u64>>,
    pub chi_square_statistic: f64,
    pub chi_square_dof: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovieLensOptions {
    pub k: usize,
    pub l: usize,
    pub seed: u64,
    pub restarts: usize,
    pub fit: FitConfig,
    pub spectral: SpectralConfig,
    pub histogram_bins: usize,
}

impl Default for MovieLensOptions {
    fn default() -> Self {
        Self {
            k: 3,
            l: 4,
            seed: 0,
            restarts: 1,
            fit: FitConfig::default(),
            spectral: SpectralConfig::default(),
            histogram_bins: 20,
        }
    }
}

/// Estimated movie clusters against single-genre categories.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTable {
    pub counts: Vec<Vec<u64>>,
    /// 0-based cluster of each table row.
    pub clusters: Vec<usize>,
    /// Genre flag position of each table column.
    pub categories: Vec<usize>,
    pub single_category: usize,
}

/// Builds the cluster x category table over single-genre movies, dropping
/// rows and columns with a zero margin.
pub fn cluster_category_table(
    movie_labels: &Labels,
    col_ids: &[String],
    genres: &[(String, Vec<bool>)],
) -> Result<CategoryTable> {
    let by_id: HashMap<&str, usize> = col_ids.iter().enumerate().map(|(j, s)| (s.as_str(), j)).collect();
    let n_flags = genres.iter().map(|(_, f)| f.len()).max().unwrap_or(0);
    let mut table = vec![vec![0u64; n_flags]; movie_labels.k()];
    let mut single = 0;
    for (id, flags) in genres {
        let mut set = flags.iter().enumerate().filter(|(_, &f)| f);
        let (Some((cat, _)), None) = (set.next(), set.next()) else {
            continue;
        };
        let Some(&j) = by_id.get(id.as_str()) else {
            continue;
        };
        single += 1;
        table[movie_labels.as_slice()[j]][cat] += 1;
    }
    if single == 0 {
        return Err(Error::EmptyInput("no single-category movies in the item table".into()));
    }
    let keep_rows: Vec<usize> = (0..table.len()).filter(|&r| table[r].iter().any(|&v| v > 0)).collect();
    let keep_cols: Vec<usize> = (0..n_flags).filter(|&c| table.iter().any(|row| row[c] > 0)).collect();
    let reduced = keep_rows
        .iter()
        .map(|&r| keep_cols.iter().map(|&c| table[r][c]).collect())
        .collect();
    Ok(CategoryTable {
        counts: reduced,
        clusters: keep_rows,
        categories: keep_cols,
        single_category: single,
    })
}

/// Summary statistics of a fitted user x movie biclustering.
pub fn summarize_movielens(
    data: &Ingested,
    fitted: &FitResult,
    genres: &[(String, Vec<bool>)],
    bins: usize,
) -> Result<MovieLensSummary> {
    let g = &data.graph;
    let (z, w) = hard_labels(&fitted.posteriors);
    let (k, l) = (z.k(), w.k());
    let mut counts = vec![vec![0u64; l]; k];
    for (i, j, a) in g.entries() {
        counts[z.as_slice()[i]][w.as_slice()[j]] += a;
    }
    let rating_percentages = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .map(|&c| if total > 0 { 100.0 * c as f64 / total as f64 } else { 0.0 })
                .collect()
        })
        .collect();

    let histograms = |labels: &Labels, degrees: &[u64]| {
        let max = degrees.iter().copied().max().unwrap_or(0);
        (0..labels.k())
            .map(|c| {
                let members: Vec<u64> = labels
                    .as_slice()
                    .iter()
                    .zip(degrees)
                    .filter(|(&lab, _)| lab == c)
                    .map(|(_, &d)| d)
                    .collect();
                ClusterHistogram {
                    cluster: c + 1,
                    bins: degree_histogram(&members, max, bins),
                }
            })
            .collect()
    };

    let table = cluster_category_table(&w, &data.col_ids, genres)?;
    let ChiSquare {
        statistic,
        dof,
        p_value,
    } = chi_square_independence(&table.counts)?;

    Ok(MovieLensSummary {
        users: g.rows(),
        movies: g.cols(),
        ratings: g.total_weight(),
        k,
        l,
        objective: fitted.objective,
        iterations: fitted.iterations,
        converged: fitted.converged,
        user_cluster_sizes: z.sizes(),
        movie_cluster_sizes: w.sizes(),
        rating_percentages,
        user_degree_histograms: histograms(&z, g.row_degrees()),
        movie_degree_histograms: histograms(&w, g.col_degrees()),
        single_category_movies: table.single_category,
        categories: table.categories,
        contingency_clusters: table.clusters.into_iter().map(|c| c + 1).collect(),
        contingency: table.counts,
        chi_square_statistic: statistic,
        chi_square_dof: dof,
        p_value,
    })
}

/// Binary user x movie matrix from `u.data`, spectral-initialized fit, and the
/// cluster-versus-genre independence test over single-genre movies.
pub fn run_movielens_analysis(
    ratings: &Path,
    items: &Path,
    opts: &MovieLensOptions,
) -> Result<(Ingested, FitResult, MovieLensSummary)> {
    let data = ingest_edge_list(ratings, IngestMode::Binary)?;
    let genres = parse_item_genres(File::open(items)?)?;
    let spectral = SpectralConfig {
        seed: opts.seed,
        ..opts.spectral.clone()
    };
    let init = init_posteriors(&data.graph, opts.k, opts.l, &spectral)?;
    let (fitted, _, _) = fit_with_restarts(
        &data.graph,
        opts.k,
        opts.l,
        init.posteriors,
        opts.restarts,
        opts.seed,
        &opts.fit,
        spectral.smoothing,
    )?;
    let summary = summarize_movielens(&data, &fitted, &genres, opts.histogram_bins)?;
    Ok((data, fitted, summary))
}

// ---------------------------------------------------------------------------
// configuration file

/// Flat `key = value` configuration (TOML syntax). Every key is optional;
/// command-line flags override it and built-in defaults fill the rest.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub init: Option<String>,
    pub init_rows: Option<PathBuf>,
    pub init_cols: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub restarts: Option<usize>,
    pub mode: Option<IngestMode>,
    pub min_pi: Option<f64>,
    pub smoothing: Option<f64>,
    pub kmeans_restarts: Option<usize>,
    pub eig_tol: Option<f64>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn binary_collapses_duplicates() {
        let data = parse_edge_list(Cursor::new("u1\tm1\nu1\tm1\n"), IngestMode::Binary).unwrap();
        assert_eq!(data.graph.get(0, 0), 1);
        let counts = parse_edge_list(Cursor::new("u1\tm1\nu1\tm1\n"), IngestMode::Counts).unwrap();
        assert_eq!(counts.graph.get(0, 0), 2);
    }

    #[test]
    fn first_appearance_ids() {
        let data = parse_edge_list(Cursor::new("b x 2\na y\n# note\n\nb y 3\n"), IngestMode::Counts).unwrap();
        assert_eq!(data.row_ids, vec!["b", "a"]);
        assert_eq!(data.col_ids, vec!["x", "y"]);
        assert_eq!(data.graph.get(0, 0), 2);
        assert_eq!(data.graph.get(1, 1), 1);
        assert_eq!(data.graph.get(0, 1), 3);
    }

    #[test]
    fn movielens_rows_ignore_rating_in_binary_mode() {
        let text = "196\t242\t3\t881250949\n186\t302\t3\t891717742\n196\t302\t5\t1\n";
        let data = parse_edge_list(Cursor::new(text), IngestMode::Binary).unwrap();
        assert_eq!((data.graph.rows(), data.graph.cols()), (2, 2));
        assert_eq!(data.graph.total_weight(), 3);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_edge_list(Cursor::new("a b 1\nlonely\n"), IngestMode::Counts) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_edge_list(Cursor::new("a b 1\nc d -4\n"), IngestMode::Counts) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_edge_list(Cursor::new("a b 1.5\n"), IngestMode::Counts) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_edge_list(Cursor::new("\n# only comments\n"), IngestMode::Counts), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn item_genres_parse() {
        let text = "1|Toy Story (1995)|01-Jan-1995||http://x|0|0|0|1|1|1|0\n2|GoldenEye (1995)|01-Jan-1995||http://y|0|1|0|0|0|0|0\n";
        let g = parse_item_genres(Cursor::new(text)).unwrap();
        assert_eq!(g[0].0, "1");
        assert_eq!(g[0].1, vec![false, false, false, true, true, true, false]);
        assert_eq!(g[1].1.iter().filter(|&&f| f).count(), 1);
    }

    #[test]
    fn contingency_uses_single_category_movies() {
        let w = Labels::new(vec![0, 1, 1, 0], 3).unwrap();
        let ids: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let genres = vec![
            ("a".to_string(), vec![true, false, false]),
            ("b".to_string(), vec![false, true, false]),
            ("c".to_string(), vec![true, true, false]),
            ("d".to_string(), vec![true, false, false]),
            ("zz".to_string(), vec![false, true, false]),
        ];
        let t = cluster_category_table(&w, &ids, &genres).unwrap();
        assert_eq!(t.single_category, 3);
        assert_eq!(t.clusters, vec![0, 1]);
        assert_eq!(t.categories, vec![0, 1]);
        assert_eq!(t.counts, vec![vec![2, 0], vec![0, 1]]);
        let none = vec![("a".to_string(), vec![true, true, false])];
        assert!(cluster_category_table(&w, &ids, &none).is_err());
    }

    #[test]
    fn histogram_bins_cover_range() {
        let h = degree_histogram(&[0, 5, 19, 20, 40], 40, 4);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 5);
        assert_eq!(h[0].lo, 0);
        assert!(h.last().unwrap().hi > 40);
    }

    #[test]
    fn config_parses_flat_keys() {
        let c = FileConfig::parse("k = 3\nl = 4\ntol = 1e-6\nmode = \"binary\"\n").unwrap();
        assert_eq!(c.k, Some(3));
        assert_eq!(c.mode, Some(IngestMode::Binary));
        assert!(FileConfig::parse("bogus = 1").is_err());
    }

    #[test]
    fn empty_harness_has_header_only() {
        let design = HarnessDesign {
            replicates: 0,
            ..HarnessDesign::paper(Variant::Dc, 0, 1)
        };
        let rows = run_simulation_harness(&design).unwrap();
        assert!(rows.is_empty());
        let mut buf = Vec::new();
        write_harness_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "variant,r,replicate,side,method,ari\n");
    }
}
