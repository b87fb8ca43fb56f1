use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use structpop::config::Config;
use structpop::harness::{
    run_birth_extraction, run_intertwining, run_range_inclusion, run_sign_sweep, run_steady_state_check, SignSweepRow,
};
use structpop::io::{write_density, write_kernel, write_trajectory};
use structpop::irreducibility::analyze;
use structpop::pde::{solve_pde_upwind, solve_pde_voc};
use structpop::renewal::solve_renewal;
use structpop::spectral::{build_l_lambda, sign_test, solve_characteristic_root, spectral_radius};
use structpop::{
    AgeKernelSet, BirthHistory, Discretization, EquivalenceReport, HistorySource, RenewalOptions, RunSettings, Scheme,
    UpwindOptions, VitalRates,
};

#[derive(Parser, Debug)]
#[command(name = "structpop", version, about = "Size-structured population model: PDE and renewal formulations")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Builtin model to use when no config file is given.
    #[arg(long, global = true, default_value = "constant")]
    model: String,
    /// Number of grid cells.
    #[arg(long = "N", global = true)]
    cells: Option<usize>,
    /// Number of time steps per horizon Γ.
    #[arg(long = "M", global = true)]
    steps: Option<usize>,
    /// Final time.
    #[arg(long = "T", global = true)]
    t_end: Option<f64>,
    /// Output directory, or a `.csv` file for single-output commands.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the randomized irreducibility fuzz.
    #[arg(long, global = true, default_value_t = 20_240_611)]
    seed: u64,
    /// Renormalize trajectories once per Γ.
    #[arg(long, global = true)]
    renormalize: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Spectral radius of L, characteristic root and sign verdict.
    Spectral {
        /// Also report r(L_λ) at this λ.
        #[arg(long)]
        lambda: Option<f64>,
        /// Write the kernel matrix as `i,j,value`.
        #[arg(long)]
        dump_kernel: Option<PathBuf>,
    },
    /// Irreducibility verdicts, witnesses and the R-iteration trace.
    Irreducibility {
        /// Additionally check the implication chain on this many random models.
        #[arg(long, default_value_t = 0)]
        fuzz: usize,
    },
    /// Solve the PDE with the upwind or variation-of-constants scheme.
    SimulatePde {
        #[arg(long, default_value = "upwind")]
        scheme: String,
        #[arg(long, default_value_t = 0.9)]
        cfl: f64,
    },
    /// Solve the renewal equation from a constant history.
    SimulateRenewal {
        #[arg(long, default_value_t = 1.0)]
        phi: f64,
    },
    /// Run one of the equivalence experiments.
    Equivalence {
        #[arg(long, value_enum)]
        experiment: Experiment,
        /// History shape for intertwining and birth extraction.
        #[arg(long, value_enum, default_value = "constant")]
        history: HistoryShape,
        /// Scale factors for the sign sweep.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
        thetas: Vec<f64>,
        /// Skip the run at doubled resolution.
        #[arg(long)]
        no_refine: bool,
        /// Override the experiment tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Steady-state correspondence in both directions.
    SteadyState {
        /// Divide β by r(L) first.
        #[arg(long)]
        auto_rescale: bool,
        #[arg(long)]
        no_refine: bool,
        #[arg(long, default_value_t = 3e-2)]
        tol: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Experiment {
    Intertwining,
    Birth,
    Steady,
    Range,
    Signs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HistoryShape {
    Constant,
    Smooth,
}

struct RunContext {
    config: Config,
    model: VitalRates,
    cells: usize,
    out: Option<PathBuf>,
}

impl RunContext {
    fn new(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(path) => Config::from_file(path).with_context(|| format!("reading {}", path.display()))?,
            None => Config::builtin(&cli.model),
        };
        if let Some(n) = cli.cells {
            config.grid.cells = n;
        }
        if let Some(m) = cli.steps {
            config.grid.steps = Some(m);
        }
        if let Some(t) = cli.t_end {
            config.run.t_end = Some(t);
        }
        let model = config.load_model()?;
        let cells = config.grid.cells;
        Ok(RunContext { config, model, cells, out: cli.out.clone() })
    }

    fn disc(&self) -> Result<Discretization> {
        Ok(Discretization::new(self.model.clone(), self.cells)?)
    }

    fn steps(&self, disc: &Discretization) -> Result<usize> {
        Ok(self.config.steps(disc.horizon())?)
    }

    fn t_end(&self, horizon: f64, default_horizons: f64) -> f64 {
        self.config.run.t_end.unwrap_or(default_horizons * horizon)
    }

    /// Path of an output file: `--out` itself when it names a `.csv`,
    /// otherwise `name` inside the `--out` directory (default: current).
    fn output(&self, name: &str) -> Result<PathBuf> {
        match &self.out {
            Some(p) if p.extension().is_some_and(|e| e == "csv") => {
                if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(parent)?;
                }
                Ok(p.clone())
            }
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Ok(dir.join(name))
            }
            None => Ok(PathBuf::from(name)),
        }
    }

    fn directory(&self) -> Result<PathBuf> {
        match &self.out {
            Some(p) if p.extension().is_some_and(|e| e == "csv") => {
                bail!("this command writes several files; --out must be a directory")
            }
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Ok(dir.clone())
            }
            None => Ok(PathBuf::from(".")),
        }
    }

    fn settings(&self, horizons: f64, refine: bool) -> Result<RunSettings> {
        if self.config.grid.steps.is_some_and(|m| m != self.cells) {
            bail!("experiments use M = N");
        }
        if !(horizons > 0.0 && horizons <= 8.0) {
            bail!("experiment horizon must lie in (0, 8Γ], got {horizons}Γ");
        }
        Ok(RunSettings { cells: self.cells, horizons, refine, ..RunSettings::default() })
    }
}

fn spectral(ctx: &RunContext, lambda: Option<f64>, dump: Option<&Path>) -> Result<bool> {
    let disc = ctx.disc()?;
    let verdict = sign_test(&disc, 1e-10)?;
    println!("radius,{}", verdict.radius);
    match solve_characteristic_root(&disc, 1e-10) {
        Ok(root) => println!("lambda_star,{}", root.lambda),
        Err(e) => println!("lambda_star,NA ({e})"),
    }
    println!("sign,{}", verdict.sign.as_str());
    if let Some(l) = lambda {
        let k = build_l_lambda(&disc, l);
        let r = spectral_radius(&k, disc.grid().weights(), 1e-10, 10_000)?;
        println!("radius_at_lambda,{l},{}", r.radius);
    }
    if let Some(path) = dump {
        let k = build_l_lambda(&disc, lambda.unwrap_or(0.0));
        write_kernel(path, &k)?;
        info!("kernel written to {}", path.display());
    }
    Ok(true)
}

fn random_bumps(rng: &mut ChaCha8Rng) -> Result<VitalRates> {
    let bumps: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.05..0.5),
                rng.random_range(0.5..5.0),
            ]
        })
        .collect();
    let beta = move |s: f64, y: f64| -> f64 {
        bumps
            .iter()
            .map(|[cs, cy, r, a]| {
                let rho2 = ((s - cs).powi(2) + (y - cy).powi(2)) / (r * r);
                if rho2 < 1.0 {
                    a * (1.0 - rho2).powi(2)
                } else {
                    0.0
                }
            })
            .sum()
    };
    Ok(VitalRates::new("bumps", beta, |_| 0.1, |s| 1.0 + 0.5 * s, None)?)
}

fn irreducibility(ctx: &RunContext, fuzz: usize, seed: u64) -> Result<bool> {
    let report = analyze(&ctx.disc()?);
    println!("semigroup_irreducible,{}", report.semigroup_irreducible);
    println!("l_irreducible_grid,{}", report.l_irreducible_grid);
    println!("l_sufficient,{}", report.l_sufficient);
    if let Some(a) = report.witness_alpha {
        println!("witness_alpha,{a}");
    }
    if let Some(c) = &report.witness_component {
        let nodes: Vec<String> = c.iter().map(|i| i.to_string()).collect();
        println!("witness_component,{}", nodes.join(" "));
    }
    println!("n,r");
    for (n, x) in report.r_trace.iter().enumerate() {
        println!("{n},{x}");
    }
    let mut ok = report.chain_holds();
    if fuzz > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut violations = 0;
        for _ in 0..fuzz {
            let disc = Discretization::new(random_bumps(&mut rng)?, 100)?;
            violations += usize::from(!analyze(&disc).chain_holds());
        }
        println!("fuzz_violations,{violations},{fuzz}");
        ok &= violations == 0;
    }
    Ok(ok)
}

fn simulate_pde(ctx: &RunContext, scheme: &str, cfl: f64, renormalize: bool) -> Result<bool> {
    let scheme: Scheme = scheme.parse()?;
    let disc = ctx.disc()?;
    let steps = ctx.steps(&disc)?;
    let t_end = ctx.t_end(disc.horizon(), 3.0);
    let p0: Vec<f64> = disc.grid().nodes().iter().map(|s| s * (1.0 - s)).collect();
    let traj = match scheme {
        Scheme::Upwind => {
            let dt = disc.horizon() / steps as f64;
            solve_pde_upwind(&disc, &p0, t_end, UpwindOptions { cfl, output_dt: Some(dt), renormalize })?
        }
        Scheme::Voc => solve_pde_voc(&disc, &AgeKernelSet::build(&disc, steps)?, &p0, t_end, renormalize)?,
        Scheme::KFromRenewal => bail!("use simulate-renewal for the renewal route"),
    };
    let path = ctx.output(&format!("traj_pde_{}.csv", scheme.as_str()))?;
    write_trajectory(&path, disc.grid(), &traj.times, &traj.columns)?;
    println!("wrote {} ({} times)", path.display(), traj.times.len());
    Ok(true)
}

fn simulate_renewal(ctx: &RunContext, phi: f64, renormalize: bool) -> Result<bool> {
    let disc = ctx.disc()?;
    let steps = ctx.steps(&disc)?;
    let kernels = AgeKernelSet::build(&disc, steps)?;
    let t_end = ctx.t_end(disc.horizon(), 3.0);
    let history = BirthHistory::constant_in_time(&vec![phi; disc.grid().len()], steps, kernels.dt());
    let traj = solve_renewal(&disc, &kernels, &history, t_end, RenewalOptions { renormalize })?;
    let path = ctx.output("traj_renewal.csv")?;
    write_trajectory(&path, disc.grid(), &traj.times(), &traj.values)?;
    println!("wrote {} ({} times)", path.display(), traj.len());
    Ok(true)
}

const REPORT_HEADER: &str = "experiment,model,N,M,summary,fine,ratio,tolerance,passed";

fn report_line(rep: &EquivalenceReport) -> String {
    let (n, m) = rep.resolutions[0];
    let fine = rep.discrepancies.get(1).map_or(String::new(), |d| d.to_string());
    let ratio = rep.ratio().map_or(String::new(), |r| r.to_string());
    format!(
        "{},{},{n},{m},{},{fine},{ratio},{},{}",
        rep.experiment,
        rep.model,
        rep.summary(),
        rep.tolerance,
        rep.passed()
    )
}

fn write_reports(dir: &Path, reports: &[&EquivalenceReport]) -> Result<bool> {
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for rep in reports {
        let line = report_line(rep);
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
        let table: String = std::iter::once("t,discrepancy\n".to_string())
            .chain(rep.table.iter().map(|(t, d)| format!("{t},{d}\n")))
            .collect();
        fs::write(dir.join(format!("traj_{}.csv", rep.experiment)), table)?;
    }
    fs::write(dir.join("report.csv"), text)?;
    Ok(reports.iter().all(|r| r.passed()))
}

fn write_sign_rows(dir: &Path, rows: &[SignSweepRow]) -> Result<bool> {
    let mut text = String::from("model,theta,radius_margin,lambda_star,pde_rate,renewal_rate,consistent\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model,
            r.theta,
            r.radius_margin,
            r.lambda_star,
            r.pde_rate,
            r.renewal_rate,
            r.consistent()
        ));
    }
    print!("{text}");
    fs::write(dir.join("report.csv"), text)?;
    Ok(rows.iter().all(|r| r.consistent()))
}

fn steady_state(ctx: &RunContext, auto: bool, refine: bool, tol: f64) -> Result<bool> {
    let disc = ctx.disc()?;
    let horizons = ctx.config.run.t_end.map_or(3.0, |t| t / disc.horizon());
    let settings = ctx.settings(horizons, refine)?;
    let dir = ctx.directory()?;
    let rep = run_steady_state_check(&ctx.model, &settings, auto, tol)?;
    write_density(&dir.join("steady_density.csv"), disc.grid(), &rep.steady_density)?;
    write_density(&dir.join("steady_births.csv"), disc.grid(), &rep.steady_births)?;
    println!("radius,{},rescale,{}", rep.radius, rep.rescale);
    write_reports(&dir, &[&rep.density_direction, &rep.birth_direction])
}

fn equivalence(
    ctx: &RunContext,
    experiment: Experiment,
    history: HistoryShape,
    thetas: &[f64],
    refine: bool,
    tol: Option<f64>,
) -> Result<bool> {
    let disc = ctx.disc()?;
    let dir = ctx.directory()?;
    let hist = match history {
        HistoryShape::Constant => HistorySource::Constant(1.0),
        HistoryShape::Smooth => HistorySource::profile(|s, t| (1.0 + s) * (1.5 + 0.5 * (2.0 * t).cos())),
    };
    match experiment {
        Experiment::Intertwining | Experiment::Birth => {
            let horizons = ctx.config.run.t_end.map_or(3.0, |t| t / disc.horizon());
            let settings = ctx.settings(horizons, refine)?;
            let tol = tol.unwrap_or(5e-2);
            let rep = match experiment {
                Experiment::Intertwining => run_intertwining(&ctx.model, &hist, &settings, tol)?,
                _ => run_birth_extraction(&ctx.model, &hist, &settings, tol)?,
            };
            write_reports(&dir, &[&rep])
        }
        Experiment::Steady => steady_state(ctx, true, refine, tol.unwrap_or(3e-2)),
        Experiment::Range => {
            let t = ctx.config.run.t_end.unwrap_or(1.5 * disc.horizon());
            let settings = ctx.settings(t / disc.horizon(), refine)?;
            let rep = run_range_inclusion(&ctx.model, &|s| s, t / disc.horizon(), &settings, tol.unwrap_or(5e-2))?;
            write_reports(&dir, &[&rep])
        }
        Experiment::Signs => {
            let horizons = ctx.config.run.t_end.map_or(8.0, |t| t / disc.horizon());
            let rows = run_sign_sweep(&ctx.model, thetas, ctx.cells, horizons)?;
            write_sign_rows(&dir, &rows)
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let ctx = RunContext::new(cli)?;
    info!("model {} on {} cells", ctx.model.name(), ctx.cells);
    match &cli.command {
        Command::Spectral { lambda, dump_kernel } => spectral(&ctx, *lambda, dump_kernel.as_deref()),
        Command::Irreducibility { fuzz } => irreducibility(&ctx, *fuzz, cli.seed),
        Command::SimulatePde { scheme, cfl } => simulate_pde(&ctx, scheme, *cfl, cli.renormalize),
        Command::SimulateRenewal { phi } => simulate_renewal(&ctx, *phi, cli.renormalize),
        Command::Equivalence { experiment, history, thetas, no_refine, tol } => {
            equivalence(&ctx, *experiment, *history, thetas, !no_refine, *tol)
        }
        Command::SteadyState { auto_rescale, no_refine, tol } => steady_state(&ctx, *auto_rescale, !no_refine, *tol),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
