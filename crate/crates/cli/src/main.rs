//! `roaid`: generate data, build grids, fit, evaluate and certify vector
//! field models from the command line.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use roaid::dynamics::{sample_dataset, system_registry, VectorField};
use roaid::estimator::{certify_decay, cross_validate, evaluate, fit, lattice_values, EvalBox};
use roaid::grid::{generate_polar_grid, greedy_cover_grid, verify_cover, GridSet, RegionSpec};
use roaid::io;
use roaid::kernels::{assemble_gram, Centers, KernelSpec};
use roaid::program::{assemble_program, FitConfig};
use roaid::registry::Params;

#[derive(Parser, Debug)]
#[command(name = "roaid", version, about = "Identify vector fields with a prescribed region of attraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample noisy derivative data along simulated trajectories.
    Gen(GenArgs),
    /// Build or verify an (alpha, beta)-grid.
    #[command(subcommand)]
    Grid(GridCommand),
    /// Fit a model, optionally choosing the kernel width and lambda by cross-validation.
    Fit(FitArgs),
    /// Compare a model against a reference system.
    Eval(EvalArgs),
    /// Check the decay condition by sampling the region.
    Certify(CertifyArgs),
    /// Write model values on a lattice as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value = "eq27-stable")]
    system: String,
    /// Initial states, `;`-separated, components `,`-separated.
    #[arg(long, default_value = "1,-1;-1,-1", allow_hyphen_values = true)]
    inits: String,
    /// Samples per trajectory.
    #[arg(long, default_value_t = 19)]
    n: usize,
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0.001)]
    noise_var: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum GridCommand {
    Make(GridMakeArgs),
    Verify(GridVerifyArgs),
}

#[derive(Args, Debug)]
struct GridMakeArgs {
    #[arg(long)]
    radius: f64,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Polar layout `RADIALxANGULAR`, e.g. `15x20`.
    #[arg(long, conflicts_with = "greedy")]
    polar: Option<String>,
    /// Greedy lattice cover; needs --alpha and --beta.
    #[arg(long, requires_all = ["alpha", "beta"])]
    greedy: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    oversample: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GridVerifyArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 1.5)]
    radius: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelFamily {
    Gaussian,
    Polynomial,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Required unless --no-roa is given.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 1.5)]
    radius: f64,
    #[arg(long, value_enum, default_value = "gaussian")]
    kernel: KernelFamily,
    /// Gaussian width, or `auto` to cross-validate over --sigma-grid.
    #[arg(long, default_value = "auto")]
    sigma: String,
    #[arg(long, default_value = "1,2,4,8")]
    sigma_grid: String,
    #[arg(long, default_value_t = 3)]
    degree: u32,
    #[arg(long, default_value_t = 1.0)]
    offset: f64,
    /// Regularization weight, or `auto` to cross-validate over --lambda-grid.
    #[arg(long, default_value = "auto")]
    lambda: String,
    #[arg(long, default_value = "1e-6,1e-4,1e-2")]
    lambda_grid: String,
    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 5)]
    cv: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fix P = I and drop the grid constraints.
    #[arg(long)]
    no_roa: bool,
    /// Also write the cross-validation table as JSON.
    #[arg(long)]
    cv_table: Option<PathBuf>,
    /// Write the conic program in text form and exit without solving.
    #[arg(long)]
    dump_program: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "eq27-stable")]
    truth: String,
    /// `unit` or `lo1,lo2,..:hi1,hi2,..`.
    #[arg(long, default_value = "unit", allow_hyphen_values = true)]
    r#box: String,
    #[arg(long, default_value_t = 51)]
    res: usize,
    /// Rollout initial states, `;`-separated.
    #[arg(long, allow_hyphen_values = true)]
    rollouts: Option<String>,
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    radius: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "unit", allow_hyphen_values = true)]
    r#box: String,
    #[arg(long, default_value_t = 41)]
    res: usize,
    /// Add reference values and residuals from this system.
    #[arg(long)]
    truth: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// A bad flag value detected after clap parsing.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Grid verification ran but found a gap.
#[derive(Debug)]
struct Uncovered;

impl fmt::Display for Uncovered {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("grid does not cover the region")
    }
}

impl std::error::Error for Uncovered {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    if err.downcast_ref::<Uncovered>().is_some() {
        return 4;
    }
    match err.downcast_ref::<roaid::Error>() {
        Some(roaid::Error::InvalidParameter(_))
        | Some(roaid::Error::DimensionMismatch { .. })
        | Some(roaid::Error::UnknownStrategy { .. }) => 2,
        Some(roaid::Error::Divergence { .. }) | Some(roaid::Error::NonFinite { .. }) => 3,
        Some(roaid::Error::CoverFailure { .. }) => 4,
        Some(roaid::Error::Solver { .. }) | Some(roaid::Error::Invariant(_)) => 5,
        _ => 1,
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|_| UsageError(format!("not a number: `{t}`")).into())
        })
        .collect()
}

fn parse_points(s: &str, dim: Option<usize>) -> Result<Vec<DVector<f64>>> {
    let pts: Vec<DVector<f64>> = s
        .split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_list(t).map(DVector::from_vec))
        .collect::<Result<_>>()?;
    if let Some(n) = dim {
        if let Some(p) = pts.iter().find(|p| p.len() != n) {
            return usage(format!("point {:?} does not have dimension {n}", p.as_slice()));
        }
    }
    Ok(pts)
}

fn parse_box(s: &str, dim: usize) -> Result<EvalBox> {
    if s == "unit" {
        return Ok(EvalBox::unit(dim));
    }
    let Some((lo, hi)) = s.split_once(':') else {
        return usage(format!("box must be `unit` or `lo,..:hi,..`, got `{s}`"));
    };
    Ok(EvalBox::new(parse_list(lo)?, parse_list(hi)?)?)
}

fn system(name: &str) -> Result<Box<dyn VectorField>> {
    Ok(system_registry().create(name, &Params::new())?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Writes a JSON report to `out`, or to stdout when no path is given.
fn emit<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => io::write_json(path, value)?,
        None => println!("{}", io::to_json_string(value)?),
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let field = system(&args.system)?;
    let inits = parse_points(&args.inits, Some(field.dim()))?;
    let mut data = sample_dataset(field.as_ref(), &inits, args.n, args.t_end, args.noise_var, args.seed)?;
    data.meta.system = Some(args.system.clone());
    match args.format {
        Format::Json => io::write_dataset(&args.out, &data)?,
        Format::Csv => io::write_dataset_csv(create(&args.out)?, &data)?,
    }
    eprintln!("wrote {} pairs to {}", data.len(), args.out.display());
    Ok(())
}

fn cmd_grid_make(args: &GridMakeArgs) -> Result<()> {
    let region = RegionSpec::ball(args.dim, args.radius)?;
    let grid = match (&args.polar, args.greedy) {
        (Some(spec), false) => {
            let Some((nr, na)) = spec.split_once('x') else {
                return usage(format!("--polar expects RADIALxANGULAR, got `{spec}`"));
            };
            let (Ok(nr), Ok(na)) = (nr.parse(), na.parse()) else {
                return usage(format!("--polar expects RADIALxANGULAR, got `{spec}`"));
            };
            generate_polar_grid(&region, nr, na)?
        }
        (None, true) => greedy_cover_grid(
            &region,
            args.alpha.expect("required by clap"),
            args.beta.expect("required by clap"),
            args.oversample,
        )?,
        _ => return usage("exactly one of --polar or --greedy is required"),
    };
    match args.format {
        Format::Json => io::write_grid(&args.out, &grid)?,
        Format::Csv => io::write_grid_csv(create(&args.out)?, &grid)?,
    }
    eprintln!("wrote {} grid points to {}", grid.len(), args.out.display());
    Ok(())
}

fn cmd_grid_verify(args: &GridVerifyArgs) -> Result<()> {
    let grid = io::read_grid(&args.grid)?;
    let region = RegionSpec::ball(grid.dim, args.radius)?;
    let report = verify_cover(&grid, args.alpha, args.beta, &region, args.samples, args.seed);
    emit(&report, None)?;
    if report.covered {
        Ok(())
    } else {
        Err(Uncovered.into())
    }
}

fn fit_config(no_roa: bool, lambda: f64) -> FitConfig {
    if no_roa {
        FitConfig::ablation(lambda)
    } else {
        FitConfig::constrained(lambda)
    }
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    if args.out.is_none() && args.dump_program.is_none() {
        return usage("one of --out or --dump-program is required");
    }
    let data = io::read_dataset(&args.data)?;
    let region = RegionSpec::ball(data.dim, args.radius)?;
    let grid = match (&args.grid, args.no_roa) {
        (Some(path), _) => io::read_grid(path)?,
        (None, true) => GridSet::empty(data.dim),
        (None, false) => return usage("--grid is required unless --no-roa is given"),
    };

    let kernels: Vec<KernelSpec> = match (args.kernel, args.sigma.as_str()) {
        (KernelFamily::Polynomial, _) => vec![KernelSpec::polynomial(args.degree, args.offset)],
        (KernelFamily::Gaussian, "auto") => parse_list(&args.sigma_grid)?
            .into_iter()
            .map(KernelSpec::gaussian)
            .collect(),
        (KernelFamily::Gaussian, s) => vec![KernelSpec::gaussian(parse_list(s)?[0])],
    };
    let lambdas = match args.lambda.as_str() {
        "auto" => parse_list(&args.lambda_grid)?,
        s => parse_list(s)?,
    };
    if lambdas.len() != 1 && args.lambda != "auto" {
        return usage("--lambda takes a single value or `auto`");
    }

    let (kernel, lambda) = if kernels.len() == 1 && lambdas.len() == 1 {
        (kernels[0], lambdas[0])
    } else {
        let base = fit_config(args.no_roa, lambdas[0]);
        let cv = cross_validate(&data, &region, &grid, &kernels, &lambdas, args.cv, args.seed, &base)?;
        eprintln!("cross-validation selected {} with lambda = {}", cv.kernel, cv.lambda);
        if let Some(path) = &args.cv_table {
            io::write_json(path, &cv.table)?;
        }
        (cv.kernel, cv.lambda)
    };
    let config = fit_config(args.no_roa, lambda);

    if let Some(path) = &args.dump_program {
        let grid_points = if config.include_grid_constraints {
            grid.points.clone()
        } else {
            Vec::new()
        };
        let centers = Centers::new(data.dim, data.xs.clone(), grid_points)?;
        let gram = assemble_gram(kernel.build()?.as_ref(), &centers);
        let program = assemble_program(&gram, &data, &centers, &config)?;
        let mut w = create(path)?;
        program.canonicalize().dump(&mut w)?;
        w.flush()?;
        eprintln!("wrote conic program to {}", path.display());
        if args.out.is_none() {
            return Ok(());
        }
    }

    let model = fit(&data, &region, &grid, &kernel, &config)?;
    let out = args.out.as_deref().expect("checked above");
    io::write_model(out, &model)?;
    if let Some(d) = model.diagnostics() {
        eprintln!(
            "solved in {} iterations ({:.1} ms), objective {:.6e}",
            d.iterations, d.solve_time_ms, d.program.objective
        );
    }
    eprintln!("wrote model to {}", out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let truth = system(&args.truth)?;
    let n = model.dim();
    let eval_box = parse_box(&args.r#box, n)?;
    let inits = match &args.rollouts {
        Some(s) => parse_points(s, Some(n))?,
        None => Vec::new(),
    };
    let report = evaluate(&model, truth.as_ref(), &eval_box, args.res, &inits, args.t_end, args.dt)?;
    if let Some(r2) = report.r_squared {
        eprintln!("R^2 = {r2:.4}");
    }
    emit(&report, args.out.as_deref())
}

fn cmd_certify(args: &CertifyArgs) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let region = RegionSpec::ball(model.dim(), args.radius)?;
    let report = certify_decay(&model, &region, args.samples, args.seed)?;
    emit(&report, args.out.as_deref())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let eval_box = parse_box(&args.r#box, model.dim())?;
    let truth = args.truth.as_deref().map(system).transpose()?;
    let reference: &dyn VectorField = match &truth {
        Some(t) => t.as_ref(),
        None => &model,
    };
    let vals = lattice_values(&model, reference, &eval_box, args.res)?;
    io::write_lattice_csv(create(&args.out)?, &vals, truth.is_some())?;
    eprintln!("wrote {} lattice points to {}", vals.points.len(), args.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Grid(GridCommand::Make(a)) => cmd_grid_make(a),
        Command::Grid(GridCommand::Verify(a)) => cmd_grid_verify(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Export(a) => cmd_export(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
