//! `dclbm` command-line entry point.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dclbm::cli::{
    run_fit, run_movielens_analysis, run_simulation_harness, summarize_harness, write_edge_list, write_fit_outputs,
    write_harness_csv, FileConfig, HarnessDesign, Ingested, IngestMode, InitMode, Input, MovieLensOptions, RunSpec,
    Variant,
};
use dclbm::synth::sample;
use dclbm::{Error, FitConfig, Result, SpectralConfig, SynthConfig};

#[derive(Parser)]
#[command(name = "dclbm", version, about = "Degree-corrected latent block model biclustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to an edge list.
    Fit(FitArgs),
    /// Run the planted-partition simulation grid and write an ARI table.
    Simulate(SimulateArgs),
    /// Fit the MovieLens 100k user x movie matrix and test clusters against genres.
    Movielens(MovieLensArgs),
    /// Sample one planted instance and write it as an edge list.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Spectral,
    Random,
    Given,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// Edge list: `row_id col_id [weight]` per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long, value_enum)]
    init: Option<InitKind>,
    /// Row labels CSV (`id,cluster`, 1-based) for `--init given`.
    #[arg(long)]
    init_rows: Option<PathBuf>,
    /// Column labels CSV for `--init given`.
    #[arg(long)]
    init_cols: Option<PathBuf>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<IngestMode>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "dc")]
    variant: Variant,
    /// Comma-separated density factors.
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.6,0.8,1.0")]
    r_grid: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, default_value_t = 800)]
    m: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct MovieLensArgs {
    /// `u.data`
    #[arg(long)]
    ratings: PathBuf,
    /// `u.item`
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 800)]
    m: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    #[arg(long, value_enum, default_value = "dc")]
    variant: Variant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    path.as_deref().map(FileConfig::load).transpose().map(Option::unwrap_or_default)
}

fn fit_config(common: &Common, file: &FileConfig) -> FitConfig {
    let d = FitConfig::default();
    FitConfig {
        tol: common.tol.or(file.tol).unwrap_or(d.tol),
        max_iter: common.max_iter.or(file.max_iter).unwrap_or(d.max_iter),
        min_pi: file.min_pi.unwrap_or(d.min_pi),
        ..d
    }
}

fn spectral_config(file: &FileConfig) -> SpectralConfig {
    let d = SpectralConfig::default();
    SpectralConfig {
        smoothing: file.smoothing.unwrap_or(d.smoothing),
        kmeans_restarts: file.kmeans_restarts.unwrap_or(d.kmeans_restarts),
        eig_tol: file.eig_tol.unwrap_or(d.eig_tol),
        ..d
    }
}

fn init_mode(args: &FitArgs, file: &FileConfig) -> Result<InitMode> {
    let kind = match (args.init, file.init.as_deref()) {
        (Some(k), _) => k,
        (None, None) => InitKind::Spectral,
        (None, Some(s)) => InitKind::from_str(s, true).map_err(|_| Error::Config(format!("unknown init {s:?}")))?,
    };
    Ok(match kind {
        InitKind::Spectral => InitMode::Spectral,
        InitKind::Random => InitMode::Random,
        InitKind::Given => {
            let rows = args.init_rows.clone().or_else(|| file.init_rows.clone());
            let cols = args.init_cols.clone().or_else(|| file.init_cols.clone());
            match (rows, cols) {
                (Some(rows), Some(cols)) => InitMode::Given { rows, cols },
                _ => return Err(Error::InvalidArgument("--init given needs --init-rows and --init-cols".into())),
            }
        }
    })
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let file = load_config(&args.common.config)?;
    let spec = RunSpec {
        input: Input::EdgeList {
            path: args.input.clone(),
            mode: args.mode.or(file.mode).unwrap_or(IngestMode::Counts),
        },
        k: args.k.or(file.k).ok_or_else(|| Error::InvalidArgument("--k is required".into()))?,
        l: args.l.or(file.l).ok_or_else(|| Error::InvalidArgument("--l is required".into()))?,
        init: init_mode(&args, &file)?,
        seed: args.common.seed.or(file.seed).unwrap_or(0),
        fit: fit_config(&args.common, &file),
        spectral: spectral_config(&file),
        restarts: args.restarts.or(file.restarts).unwrap_or(1),
        out: Some(args.out.clone()),
    };
    let outcome = run_fit(&spec)?;
    log::info!("restart objectives: {:?}", outcome.restart_objectives);
    println!(
        "objective {:.6} after {} iterations (converged: {}, restart {})",
        outcome.fit.objective, outcome.fit.iterations, outcome.fit.converged, outcome.winner
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let file = load_config(&args.common.config)?;
    let design = HarnessDesign {
        r_grid: args.r_grid,
        m: args.m,
        n: args.n,
        fit: FitConfig {
            track_trace: false,
            ..fit_config(&args.common, &file)
        },
        spectral: spectral_config(&file),
        ..HarnessDesign::paper(args.variant, args.replicates, args.common.seed.or(file.seed).unwrap_or(0))
    };
    let rows = run_simulation_harness(&design)?;
    match &args.out {
        Some(path) => write_harness_csv(&rows, BufWriter::new(File::create(path)?))?,
        None => write_harness_csv(&rows, io::stdout().lock())?,
    }
    for (r, side, method, mean) in summarize_harness(&rows) {
        eprintln!("r={r:<4} {side:<4} {method:<9} mean ARI {mean:.4}");
    }
    Ok(())
}

fn cmd_movielens(args: MovieLensArgs) -> Result<()> {
    let file = load_config(&args.common.config)?;
    let d = MovieLensOptions::default();
    let opts = MovieLensOptions {
        k: args.k.or(file.k).unwrap_or(d.k),
        l: args.l.or(file.l).unwrap_or(d.l),
        seed: args.common.seed.or(file.seed).unwrap_or(d.seed),
        restarts: args.restarts.or(file.restarts).unwrap_or(d.restarts),
        fit: fit_config(&args.common, &file),
        spectral: spectral_config(&file),
        ..d
    };
    let (data, fitted, summary) = run_movielens_analysis(&args.ratings, &args.items, &opts)?;
    write_fit_outputs(&args.out, &data.row_ids, &data.col_ids, &fitted)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(args.out.join("summary.json"))?), &summary)?;
    println!(
        "{} users x {} movies, {} single-category movies, chi-square {:.3} on {} dof, p = {:.3e}",
        summary.users,
        summary.movies,
        summary.single_category_movies,
        summary.chi_square_statistic,
        summary.chi_square_dof,
        summary.p_value
    );
    Ok(())
}

fn write_truth(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "id,cluster")?;
    for (i, c) in labels.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, c + 1)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let base = SynthConfig {
        m: args.m,
        n: args.n,
        ..SynthConfig::paper_design(args.r, args.seed)
    };
    let cfg = match args.variant {
        Variant::Dc => base,
        Variant::Classical => base.classical(),
    };
    let s = sample(&cfg)?;
    fs::create_dir_all(&args.out)?;
    let data = Ingested {
        row_ids: (1..=s.graph.rows()).map(|i| i.to_string()).collect(),
        col_ids: (1..=s.graph.cols()).map(|j| j.to_string()).collect(),
        graph: s.graph,
    };
    let mut edges = BufWriter::new(File::create(args.out.join("edges.tsv"))?);
    write_edge_list(&data, &mut edges)?;
    edges.flush()?;
    write_truth(&args.out.join("row_truth.csv"), s.z.as_slice())?;
    write_truth(&args.out.join("col_truth.csv"), s.w.as_slice())?;
    println!("{} x {} graph with {} entries", data.graph.rows(), data.graph.cols(), data.graph.nnz());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Movielens(a) => cmd_movielens(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
