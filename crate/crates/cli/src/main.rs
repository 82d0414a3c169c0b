use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kem::dynamics::{estimate_operator, evolve, StateDistribution};
use kem::error::{Error, Result};
use kem::io;
use kem::pipeline::{
    bundle, cross_validate, predict_holdout, run_experiment, ExperimentConfig, FitOptions, Model,
    TruthSource,
};
use kem::processes::{
    generate_hmm, integrate_sde, random_embed, DriftField, HmmSpec, SdeSpec, Series,
};

/// Kernel eps-machine reconstruction from observed time series.
#[derive(Parser)]
#[command(name = "kem", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark process realization as CSV.
    Generate(GenerateArgs),
    /// Fit a model and persist it as a bundle directory.
    Fit(FitArgs),
    /// Write the eigenvalue spectrum of a fitted model.
    Spectrum(ModelOutArgs),
    /// Write the reduced state coordinates of a fitted model.
    Coords(ModelOutArgs),
    /// Cluster states and emit the transition graph (JSON and DOT).
    Graph(GraphArgs),
    /// Write the evolution operator matrix as CSV.
    Operator(OperatorArgs),
    /// Evolve a delta distribution from a training sample forward.
    Evolve(EvolveArgs),
    /// Forecast a test series from a fitted model.
    Predict(PredictArgs),
    /// Run a full experiment preset end to end.
    Run(RunArgs),
    /// Cross-validate kernel bandwidth and regularization on forecasts.
    Cv(CvArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Process: even, mess3, lorenz63 or lorenz96.
    #[arg(long)]
    process: String,
    /// Number of output samples.
    #[arg(long)]
    n: usize,
    /// Integration step for the flows.
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Thermal noise amplitude.
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    /// Measurement noise standard deviation (for lorenz96 with an
    /// embedding this is the per-component embedding noise).
    #[arg(long, default_value_t = 0.0)]
    nu: f64,
    /// State dimension for lorenz96.
    #[arg(long, default_value_t = 5)]
    dim: usize,
    /// Lorenz-96 forcing.
    #[arg(long, default_value_t = 8.0)]
    forcing: f64,
    /// Random high-dimensional embedding size (0 = none).
    #[arg(long, default_value_t = 0)]
    embed_dim: usize,
    /// Transient steps discarded before sampling.
    #[arg(long, default_value_t = 1000)]
    transient: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment preset: even-process, mess3, lorenz63 or lorenz96.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON experiment configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shrink the training size by this factor.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    n_pairs: Option<usize>,
    /// Kernel bandwidth applied to both past and future kernels.
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(name), None) => ExperimentConfig::preset(name)?,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text)?
            }
            _ => {
                return Err(Error::validation(
                    "exactly one of --preset or --config is required",
                ))
            }
        };
        if let Some(s) = self.scale {
            cfg.scale(s)?;
        }
        if let Some(n) = self.n_pairs {
            cfg.n_pairs = n;
        }
        if let Some(xi) = self.xi {
            cfg.xi_x = xi;
            cfg.xi_y = xi;
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(m) = self.m_max {
            cfg.m_max = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Bundle output directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// Also dump the past-window Gram matrix (binary, 8-byte count header).
    #[arg(long)]
    dump_gram: Option<PathBuf>,
}

#[derive(Args)]
struct ModelOutArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    model: PathBuf,
    /// DBSCAN radius on the leading psi coordinates.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    /// Number of leading coordinates to cluster on.
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// DOT rendering output path.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct OperatorArgs {
    #[arg(long)]
    model: PathBuf,
    /// Emit the operator advanced this many of its own steps.
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvolveArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training sample index for the initial delta distribution.
    #[arg(long)]
    sample: usize,
    /// Unit-step operator applications.
    #[arg(long)]
    steps: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test series CSV (same layout as `generate`).
    #[arg(long)]
    test: PathBuf,
    /// Forecast horizon in sample steps.
    #[arg(long)]
    horizon_steps: usize,
    /// Operator spacing in sample steps (re-estimates the operator if it
    /// differs from the fitted one).
    #[arg(long, default_value_t = 5)]
    every: usize,
    #[arg(long, default_value_t = 100)]
    probes: usize,
    /// Samples between consecutive probes.
    #[arg(long, default_value_t = 50)]
    spacing: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated bandwidth grid.
    #[arg(long, value_delimiter = ',')]
    xi_grid: Vec<f64>,
    /// Comma-separated regularization grid.
    #[arg(long, value_delimiter = ',')]
    eps_grid: Vec<f64>,
    /// Score table output (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let series: Series = match args.process.as_str() {
        "even" => generate_hmm(&HmmSpec::even_process(), args.n, args.seed)?,
        "mess3" => generate_hmm(&HmmSpec::mess3(0.6, 0.15), args.n, args.seed)?,
        "lorenz63" => {
            let spec = SdeSpec {
                drift: DriftField::lorenz63_standard(),
                eta: args.eta,
                nu: args.nu,
                dt: args.dt,
                seed: args.seed,
            };
            integrate_sde(&spec, args.n, &[1.0, 1.0, 25.0], args.transient)?
        }
        "lorenz96" => {
            let spec = SdeSpec {
                drift: DriftField::Lorenz96 { dim: args.dim, forcing: args.forcing },
                eta: args.eta,
                nu: if args.embed_dim > 0 { 0.0 } else { args.nu },
                dt: args.dt,
                seed: args.seed,
            };
            let mut initial = vec![args.forcing; args.dim];
            initial[0] += 0.29;
            let base = integrate_sde(&spec, args.n, &initial, args.transient)?;
            if args.embed_dim > 0 {
                random_embed(&base, args.embed_dim, args.nu * args.nu, args.seed)?.series
            } else {
                base
            }
        }
        other => {
            return Err(Error::validation(format!(
                "unknown process '{other}'; expected even, mess3, lorenz63 or lorenz96"
            )))
        }
    };
    io::write_series_csv(&args.out, &series)
}

fn load_model(path: &PathBuf) -> Result<Model> {
    bundle::load(path)
}

fn write_or_print(out: &Option<PathBuf>, contents: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, contents)?;
            Ok(())
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn spectrum(args: &ModelOutArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let mut text = String::from("index,eigenvalue\n");
    for (i, l) in model.basis.spectrum_with_tail().iter().enumerate() {
        text.push_str(&format!("{i},{l}\n"));
    }
    write_or_print(&args.out, &text)
}

fn coords(args: &ModelOutArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let coords = model.basis.coords();
    let m = coords.ncols();
    let mut text = (1..=m).map(|c| format!("s{c}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for i in 0..coords.nrows() {
        let row: Vec<String> = coords.row(i).iter().map(|v| format!("{v}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_or_print(&args.out, &text)
}

fn graph(args: &GraphArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let cfg = &model.config;
    let radius = args.radius.unwrap_or(cfg.cluster_radius);
    let min_pts = args.min_pts.unwrap_or(cfg.cluster_min_pts);
    let dims = args.dims.unwrap_or(cfg.cluster_dims);
    let (_, graph) = model.graph(radius, min_pts, dims)?;
    let json = serde_json::to_string_pretty(&graph)?;
    write_or_print(&args.out, &json)?;
    if let Some(dot_path) = &args.dot {
        std::fs::write(dot_path, graph.to_dot())?;
    }
    Ok(())
}

fn operator(args: &OperatorArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let m = model.operator.power(args.steps);
    let mut text = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_or_print(&args.out, &text)
}

fn evolve_cmd(args: &EvolveArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let q0 = StateDistribution::delta(args.sample, &model.basis)?;
    let q = evolve(&q0, &model.operator_unit, args.steps)?;
    let coords = q.coords(&model.basis);
    let out = serde_json::json!({
        "sample": args.sample,
        "steps": args.steps,
        "coefficients": q.coeffs,
        "coords": coords,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let mut model = load_model(&args.model)?;
    if args.every != model.operator.step {
        model.operator = estimate_operator(
            &model.basis,
            &model.pairs.t,
            &model.pairs.segment_starts,
            model.pairs.dt,
            args.every,
        )?;
    }
    let test = io::read_series_csv(&args.test)?;
    let run = predict_holdout(
        &model,
        &test,
        &TruthSource::CleanSeries(&test),
        args.horizon_steps,
        args.probes,
        args.spacing,
    )?;
    let d = model.pairs.dim;
    let mut text = String::from("probe,step");
    for c in 0..d {
        text.push_str(&format!(",truth{c}"));
    }
    for c in 0..d {
        text.push_str(&format!(",pred{c}"));
    }
    text.push_str(",err\n");
    for row in &run.rows {
        text.push_str(&format!("{},{}", row.probe, row.step));
        for v in &row.truth {
            text.push_str(&format!(",{v}"));
        }
        for v in &row.pred {
            text.push_str(&format!(",{v}"));
        }
        text.push_str(&format!(",{}\n", row.err));
    }
    std::fs::write(&args.out, text)?;
    eprintln!(
        "horizons: {:?}\nmodel rmse: {:?}\npersistence rmse: {:?}",
        run.horizons, run.model_rmse, run.persistence_rmse
    );
    Ok(())
}

fn main_inner() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate(args) => generate(args),
        Command::Fit(args) => {
            let cfg = args.config.resolve()?;
            let options = FitOptions { dump_gram: args.dump_gram.clone() };
            let model = kem::pipeline::fit(&cfg, &options)?;
            bundle::save(&model, &args.out_dir)
        }
        Command::Spectrum(args) => spectrum(args),
        Command::Coords(args) => coords(args),
        Command::Graph(args) => graph(args),
        Command::Operator(args) => operator(args),
        Command::Evolve(args) => evolve_cmd(args),
        Command::Predict(args) => predict(args),
        Command::Run(args) => {
            let cfg = args.config.resolve()?;
            let summary = run_experiment(&cfg, &args.out_dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Cv(args) => {
            let cfg = args.config.resolve()?;
            let report = cross_validate(&cfg, &args.xi_grid, &args.eps_grid)?;
            let json = serde_json::to_string_pretty(&report)?;
            write_or_print(&args.out, &json)
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
