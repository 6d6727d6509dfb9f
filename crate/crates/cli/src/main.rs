use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use specmarket::equilibrium::{clearing_residual, portfolios, FieldAssignment, PortfolioField};
use specmarket::mc::{control_value, SimConfig};
use specmarket::solver::{solve_hjb, solve_zero_vol, PriceField};
use specmarket::static_market::{expectations, static_limits, static_price};
use specmarket::sweep::{apply, SweepParam};
use specmarket::verify::{self, VerifyOptions};
use specmarket::{Error, GridSpec, MarketSpec, Mode};

mod output;

use output::{RunSummary, SweepRow};

#[derive(Parser)]
#[command(name = "specmarket", version, about = "Equilibrium prices for markets with heterogeneous beliefs and quadratic carry costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct GridArgs {
    /// Number of space nodes.
    #[arg(long, default_value_t = 801)]
    grid_nx: usize,
    /// Number of time steps; chosen from the CFL bound when omitted.
    #[arg(long)]
    grid_nt: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    domain_width_multiplier: f64,
}

#[derive(Args, Clone, Debug)]
struct SimArgs {
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    /// Euler step; defaults to T/1000.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CliMode {
    Full,
    LimitLong,
    LimitShort,
    ZeroVol,
}

impl CliMode {
    fn mode(self) -> Mode {
        match self {
            CliMode::Full => Mode::Full,
            CliMode::LimitLong => Mode::LimitLong,
            CliMode::LimitShort | CliMode::ZeroVol => Mode::LimitShort,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CliMode::Full => "full",
            CliMode::LimitLong => "limit-long",
            CliMode::LimitShort => "limit-short",
            CliMode::ZeroVol => "zero-vol",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the dynamic price field and equilibrium portfolios.
    Solve {
        config: PathBuf,
        /// Also compute the buy-and-hold price from each agent's expectation.
        #[arg(long = "static")]
        with_static: bool,
        /// Also estimate v(0, x0) by simulation under the equilibrium assignment.
        #[arg(long)]
        mc: bool,
        #[arg(long, value_enum, default_value = "full")]
        mode: CliMode,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Dynamic and static prices along a one-parameter family.
    Sweep {
        config: PathBuf,
        /// One of s-scale, alpha_plus, alpha_minus, common-scale.
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value = "full")]
        mode: CliMode,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the acceptance suite.
    Verify {
        /// Comma-separated criterion numbers.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Writes verify.json here when given.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_theta: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Io(String),
    Verify(Vec<u32>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verify(_) => 1,
            Failure::Core(Error::Cfl { .. }) => 3,
            Failure::Core(Error::NonFinite { .. } | Error::TooManyClamped { .. }) => 4,
            Failure::Core(_) | Failure::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(msg) => f.write_str(msg),
            Failure::Verify(ids) => write!(f, "verification failed: criteria {ids:?}"),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve {
            config,
            with_static,
            mc,
            mode,
            grid,
            sim,
            out_dir,
        } => cmd_solve(&config, with_static, mc.then_some(&sim), mode, &grid, &out_dir),
        Command::Sweep {
            config,
            param,
            values,
            mode,
            grid,
            out_dir,
        } => cmd_sweep(&config, param, &values, mode, &grid, &out_dir),
        Command::Verify {
            only,
            paths,
            seed,
            out_dir,
            perturb_theta,
        } => cmd_verify(only, paths, seed, out_dir.as_deref(), perturb_theta),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn load(config: &Path) -> CliResult<(MarketSpec, String)> {
    let text =
        std::fs::read_to_string(config).map_err(|e| Failure::Io(format!("cannot read {}: {e}", config.display())))?;
    let spec = MarketSpec::from_json(&text)?;
    let hash = output::spec_hash(&spec.to_json()?);
    Ok((spec, hash))
}

fn make_grid(spec: &MarketSpec, args: &GridArgs) -> CliResult<GridSpec> {
    let grid = GridSpec::for_spec(spec, args.grid_nx, args.domain_width_multiplier)?;
    Ok(match args.grid_nt {
        Some(nt) => grid.with_nt(nt),
        None => grid,
    })
}

fn solve(spec: &MarketSpec, grid: &GridSpec, mode: CliMode) -> CliResult<PriceField> {
    Ok(match mode {
        CliMode::ZeroVol => solve_zero_vol(spec, grid)?,
        m => solve_hjb(spec, grid, m.mode())?,
    })
}

/// Static price in the mode's market: the root of the clearing condition for
/// finite costs, the largest expectation for free longs, and the no-short
/// price otherwise.
fn static_for(spec: &MarketSpec, grid: &GridSpec, mode: CliMode) -> CliResult<(f64, Vec<f64>, Vec<f64>)> {
    let e = expectations(spec, grid)?;
    Ok(match mode {
        CliMode::Full => {
            let eq = static_price(&e, spec)?;
            (eq.p_sta, eq.q, e)
        }
        CliMode::LimitLong => (static_limits(&e, spec)?.p_inf, Vec::new(), e),
        CliMode::LimitShort | CliMode::ZeroVol => (static_limits(&e, spec)?.p_no_short, Vec::new(), e),
    })
}

fn warnings_for(spec: &MarketSpec, pf: &PortfolioField) -> Vec<String> {
    let mut warnings = Vec::new();
    let costs = spec.agent_costs();
    if costs.alpha_minus.iter().zip(&costs.alpha_plus).any(|(m, p)| m > p) {
        warnings.push("some agent has alpha_minus > alpha_plus (shorting cheaper than holding)".to_string());
    }
    if pf.tie_nodes() > 0 {
        warnings.push(format!(
            "supply split among tied optimists at {} nodes",
            pf.tie_nodes()
        ));
    }
    warnings
}

fn cmd_solve(
    config: &Path,
    with_static: bool,
    sim: Option<&SimArgs>,
    mode: CliMode,
    grid_args: &GridArgs,
    out_dir: &Path,
) -> CliResult<()> {
    let (spec, hash) = load(config)?;
    let grid = make_grid(&spec, grid_args)?;
    let mut summary = RunSummary::new("solve", hash, mode.name(), &grid);

    let start = Instant::now();
    let field = solve(&spec, &grid, mode)?;
    summary.timing("solve", start);
    let start = Instant::now();
    let pf = portfolios(&field, &spec)?;
    summary.residual = Some(clearing_residual(&pf, &spec));
    summary.timing("portfolios", start);
    summary.p_dyn = Some(field.p_dyn());
    summary.warnings = warnings_for(&spec, &pf);

    if with_static {
        let start = Instant::now();
        match static_for(&spec, &grid, mode) {
            Ok((p_sta, q, e)) => {
                summary.p_sta = Some(p_sta);
                summary.gap = Some(p_sta - field.p_dyn());
                summary.e = e;
                summary.q = q;
            }
            Err(Failure::Core(e)) => summary.warnings.push(format!("static price skipped: {e}")),
            Err(other) => return Err(other),
        }
        summary.timing("static", start);
    }
    if let Some(sim) = sim {
        let start = Instant::now();
        let dt = sim.dt.unwrap_or(spec.horizon / 1000.0);
        let cfg = SimConfig::new(sim.paths, dt, sim.seed).with_domain(grid.x_lo, grid.x_hi);
        let est = control_value(&spec, &FieldAssignment::new(&pf, &spec), &cfg)?;
        summary.mc = Some(est);
        summary.timing("mc", start);
    }

    output::prepare_dir(out_dir)?;
    output::write_field(&out_dir.join("solution.csv"), &field, &pf)?;
    output::write_summary(out_dir, &summary)?;
    print!("{}", summary.brief());
    Ok(())
}

fn cmd_sweep(
    config: &Path,
    param: SweepParam,
    values: &[f64],
    mode: CliMode,
    grid_args: &GridArgs,
    out_dir: &Path,
) -> CliResult<()> {
    let (base, hash) = load(config)?;
    let base_grid = make_grid(&base, grid_args)?;
    let mut summary = RunSummary::new("sweep", hash, mode.name(), &base_grid);
    summary.param = Some(param.name().to_string());
    let start = Instant::now();
    let mut residual: f64 = 0.0;
    for &value in values {
        let spec = apply(&base, param, value)?;
        let grid = make_grid(&spec, grid_args)?;
        let field = solve(&spec, &grid, mode)?;
        let pf = portfolios(&field, &spec)?;
        residual = residual.max(clearing_residual(&pf, &spec));
        let p_dyn = field.p_dyn();
        let p_sta = match static_for(&spec, &grid, mode) {
            Ok((p, ..)) => Some(p),
            Err(Failure::Core(e)) => {
                summary.warnings.push(format!("{param}={value}: static price skipped: {e}"));
                None
            }
            Err(other) => return Err(other),
        };
        summary.rows.push(SweepRow {
            value,
            p_dyn,
            p_sta,
            gap: p_sta.map(|p| p - p_dyn),
        });
    }
    summary.residual = Some(residual);
    summary.timing("sweep", start);
    output::prepare_dir(out_dir)?;
    output::write_sweep(&out_dir.join("sweep.csv"), param, &summary.rows)?;
    output::write_summary(out_dir, &summary)?;
    print!("{}", summary.brief());
    Ok(())
}

fn cmd_verify(only: Vec<u32>, paths: usize, seed: u64, out_dir: Option<&Path>, perturb_theta: f64) -> CliResult<()> {
    let opts = VerifyOptions {
        only: (!only.is_empty()).then_some(only),
        theta_bias: perturb_theta,
        paths,
        seed,
    };
    let report = verify::run(&opts)?;
    println!("{report}");
    if let Some(dir) = out_dir {
        output::prepare_dir(dir)?;
        output::write_json(&dir.join("verify.json"), &report)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verify(report.failed()))
    }
}
