use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qslab::density::Side;
use qslab::deriv;
use qslab::report::{
    self, load_grid, load_samples, Cell, Check, FixedPointChecks, LemmaConfig, MomentsConfig, Run,
    RunConfig, Section, SimulationConfig, Table, TailConfig, CONFIG_KEYS,
};
use qslab::{Error, Result};

/// Numerical laboratory for the limiting QuickSort distribution.
///
/// Every command writes its files into the run directory given by --out,
/// together with manifest.json. Exit status: 0 when all checks pass, 1 when a
/// check fails (reports are still written), 2 on usage or configuration errors.
#[derive(Parser, Debug)]
#[command(name = "qslab", version, after_help = CONFIG_KEYS)]
struct Cli {
    /// Worker threads; changes wall time only, never output bytes.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run directory for all outputs.
    #[arg(long, global = true, default_value = "qslab-run")]
    out: PathBuf,

    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact moments of the comparison count up to --nmax.
    Moments {
        #[arg(long)]
        nmax: usize,
        /// Largest n computed in rational arithmetic.
        #[arg(long, default_value_t = qslab::moments::DEFAULT_EXACT_CAP)]
        exact_cap: usize,
    },
    /// Monte Carlo samples of Z_n = (X_n - E X_n) / n.
    Simulate {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        count: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = qslab::sim::DEFAULT_LEAF_SIZE)]
        leaf_size: usize,
    },
    /// Solve the fixed-point equation with the [solver] settings of a config.
    Solve(ConfigArg),
    /// Kolmogorov-Smirnov distance between a grid CDF and a sample file.
    Compare {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        ks_max: f64,
    },
    /// Tail fits, envelopes and limsup proxies for a grid.
    Tails {
        #[arg(long)]
        grid: PathBuf,
        /// Coarser solution of the same problem, used to trim the windows.
        #[arg(long)]
        coarse: Option<PathBuf>,
        #[arg(long, value_parser = parse_pair)]
        left_window: Option<(f64, f64)>,
        #[arg(long, value_parser = parse_pair)]
        right_window: Option<(f64, f64)>,
        #[command(flatten)]
        config: OptionalConfig,
    },
    /// Tail lemma recurrences on a grid.
    Lemmas {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        b: f64,
        #[arg(long)]
        delta: f64,
        /// Largest k for both tails.
        #[arg(long)]
        kmax: usize,
        /// Largest k for the right tail, if different.
        #[arg(long)]
        kmax_right: Option<usize>,
    },
    /// Landau-Kolmogorov check of order (n, k) on both tails.
    Lk {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0, 2.0])]
        xs: Vec<f64>,
        #[arg(long, default_value_t = deriv::DEFAULT_LK_SLACK)]
        slack: f64,
    },
    /// Full pipeline: moments, simulation, solver, lemmas, tails, derivatives.
    Report {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// TOML config file, or `default`.
    #[arg(long)]
    config: String,
}

#[derive(Args, Debug)]
struct OptionalConfig {
    /// TOML config file, or `default`.
    #[arg(long, default_value = "default")]
    config: String,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected A,B, got {s}"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((a, b))
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

/// Stand-in for a config file: the parsed subcommand with its arguments.
fn args_text(cmd: &Command) -> String {
    format!("{cmd:?}")
}

/// Emits the sections, writes the manifest and reports pass/fail.
fn finish(mut run: Run, sections: &[Section]) -> Result<bool> {
    run.emit(sections)?;
    run.finish()?;
    let failed: Vec<&Check> = sections
        .iter()
        .flat_map(|s| &s.checks)
        .filter(|c| !c.pass)
        .collect();
    for c in &failed {
        log::error!("check failed: {} = {} (want {})", c.name, c.value, c.limit);
    }
    Ok(failed.is_empty())
}

fn run(cli: Cli) -> Result<bool> {
    let out = cli.out.as_path();
    let argv = command_line();
    let args = args_text(&cli.command);
    match cli.command {
        Command::Moments { nmax, exact_cap } => {
            let cfg = MomentsConfig {
                n_max: nmax,
                exact_cap,
                ..MomentsConfig::default()
            };
            let run = Run::new(out, &argv, &args, 0)?;
            let (s, _) = report::moments_section(&cfg, false)?;
            finish(run, &[s])
        }
        Command::Simulate {
            n,
            count,
            seed,
            leaf_size,
        } => {
            let seed = RunConfig::default().resolve_seed(seed)?;
            let cfg = SimulationConfig {
                n,
                count,
                leaf_size,
                ..SimulationConfig::default()
            };
            let mut run = Run::new(out, &argv, &args, seed)?;
            let samples = run.timed("simulation", || report::simulate(&cfg, seed))?;
            run.write_samples("samples.qszs", &samples)?;
            let mut csv = Vec::new();
            samples.write_csv(&mut csv)?;
            run.write_text("samples.csv", &String::from_utf8(csv).expect("ascii"))?;
            let mut s = report::simulation_section(&cfg, &samples, "samples.qszs");
            // the limit-variance check is meaningful only for large n
            s.checks.clear();
            finish(run, &[s])
        }
        Command::Solve(ConfigArg { config }) => {
            let (cfg, text) = RunConfig::load(&config)?;
            let mut run = Run::new(out, &argv, &text, 0)?;
            let (s, grid) = run.timed("solve", || report::solve_section(&cfg.solver, "solver"))?;
            if let Some(g) = &grid {
                run.write_grid("grid.qsdg", g)?;
                run.write_text("grid.json", &report::to_json17(&g.to_json())?)?;
            }
            finish(run, &[s])
        }
        Command::Compare {
            grid,
            samples,
            ks_max,
        } => {
            let g = load_grid(&grid)?;
            let smp = load_samples(&samples)?;
            let run = Run::new(out, &argv, &args, smp.seed)?;
            let checks = FixedPointChecks {
                ks_max,
                mean_tol: f64::INFINITY,
                variance_tol: f64::INFINITY,
                ..Default::default()
            };
            let mut s = report::fixed_point_section(&g, Some(&smp), &checks);
            s.checks.retain(|c| c.name == "fixed_point.ks");
            s.name = "compare".into();
            s.summary["grid"] = json!(grid.to_string_lossy());
            s.summary["samples"] = json!(samples.to_string_lossy());
            finish(run, &[s])
        }
        Command::Tails {
            grid,
            coarse,
            left_window,
            right_window,
            config,
        } => {
            let (cfg, text) = RunConfig::load(&config.config)?;
            let tcfg = TailConfig {
                left_window: left_window.unwrap_or(cfg.tails.left_window),
                right_window: right_window.unwrap_or(cfg.tails.right_window),
                ..cfg.tails
            };
            let g = load_grid(&grid)?;
            let c = coarse.as_deref().map(load_grid).transpose()?;
            let run = Run::new(out, &argv, &text, 0)?;
            let s = report::tails_section(&g, c.as_ref(), &tcfg)?;
            finish(run, &[s])
        }
        Command::Lemmas {
            grid,
            eps,
            b,
            delta,
            kmax,
            kmax_right,
        } => {
            let g = load_grid(&grid)?;
            let lcfg = LemmaConfig {
                eps,
                left_k_max: kmax,
                b,
                delta,
                right_k_max: kmax_right.unwrap_or(kmax),
                ..LemmaConfig::default()
            };
            let run = Run::new(out, &argv, &args, 0)?;
            let s = report::lemma_section(&g, &lcfg)?;
            finish(run, &[s])
        }
        Command::Lk {
            grid,
            n,
            k,
            xs,
            slack,
        } => {
            let g = load_grid(&grid)?;
            let run = Run::new(out, &argv, &args, 0)?;
            let s = lk_section(&g, n, k, &xs, slack)?;
            finish(run, &[s])
        }
        Command::Report { config, seed } => {
            let (cfg, text) = RunConfig::load(&config.config)?;
            let seed = cfg.resolve_seed(seed)?;
            let outcome = report::run_report(&cfg, &text, seed, out)?;
            for c in outcome
                .sections
                .iter()
                .flat_map(|s| &s.checks)
                .filter(|c| !c.pass)
            {
                log::error!("check failed: {} = {} (want {})", c.name, c.value, c.limit);
            }
            Ok(outcome.passed())
        }
    }
}

fn lk_section(
    g: &qslab::DensityGrid,
    n: usize,
    k: usize,
    xs: &[f64],
    slack: f64,
) -> Result<Section> {
    let mut t = Table::new(
        "lk.csv",
        &[
            "side", "x", "norm_0", "norm_k", "norm_n", "rhs", "ratio", "pass",
        ],
    );
    let mut checks = Vec::new();
    for side in [Side::Left, Side::Right] {
        let r = deriv::verify_lk(g, side, k, n, xs, slack)?;
        for row in &r.rows {
            t.push(vec![
                side.to_string().into(),
                row.x.into(),
                row.norm_0.into(),
                row.norm_k.into(),
                row.norm_n.into(),
                row.rhs.into(),
                row.ratio.into(),
                Cell::from(row.pass),
            ]);
        }
        checks.push(Check::at_most(&format!("lk.{side}"), r.worst_ratio, slack));
    }
    let mut s = Section::new(
        "lk",
        json!({ "n": n, "k": k, "bound": deriv::lk_bound(n, k)?, "slack": slack }),
    );
    s.tables.push(t);
    s.checks = checks;
    Ok(s)
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            log::warn!("thread pool already initialised: {e}");
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Convergence { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    init_threads(cli.threads);
    let out: &Path = &cli.out.clone();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("qslab: {e} (run directory {})", out.display());
            ExitCode::from(exit_code_for(&e))
        }
    }
}
