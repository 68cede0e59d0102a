use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use wbqp::harness::{
    bench_csv, benchmark, compare_friction, qp_at_step, report, run_scenario, HarnessError, Mode,
    Scenario, SolverKind, BUILTIN_SCENARIOS,
};

#[derive(Parser)]
#[command(name = "wbqp", version, about = "Whole-body QP balance and walking controller harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario closed loop and write its trace.
    Run(Common),
    /// Record a scenario's QP sequence and time each solver on it.
    Bench(Common),
    /// Compare friction-cone parameterizations over several seeds.
    FrictionCompare {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 10)]
        runs: u64,
    },
    /// Write the QP assembled at a given control step.
    DumpQp {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        step: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    ActiveSet,
    InteriorPoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Balance,
    Walk,
}

#[derive(Args)]
struct Common {
    /// Scenario file, or a builtin name (balance, stand, push, walk).
    #[arg(long, default_value = "balance")]
    scenario: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario mode; the matching plan section must exist.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

impl Common {
    fn load(&self) -> Result<Scenario> {
        let mut sc = if Path::new(&self.scenario).exists() {
            let text = fs::read_to_string(&self.scenario)
                .with_context(|| format!("reading {}", self.scenario))?;
            Scenario::from_toml(&text)?
        } else if let Some(sc) = Scenario::builtin(&self.scenario) {
            sc
        } else {
            let names: Vec<_> = BUILTIN_SCENARIOS.iter().map(|(n, _)| *n).collect();
            bail!("no scenario file or builtin named {:?} (builtins: {})", self.scenario, names.join(", "));
        };
        if let Some(s) = self.solver {
            sc.solver = match s {
                SolverArg::ActiveSet => SolverKind::ActiveSet,
                SolverArg::InteriorPoint => SolverKind::InteriorPoint,
            };
        }
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(m) = self.mode {
            sc.mode = match m {
                ModeArg::Balance => Mode::Balance,
                ModeArg::Walk => Mode::Walk,
            };
        }
        sc.validate()?;
        Ok(sc)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(c) => {
            let sc = c.load()?;
            let trace = run_scenario(&sc)?;
            let dir = c.out_dir()?;
            let (csv, summary) = report(&trace);
            let stem = format!("{}-{}", sc.name, sc.solver.label());
            write(dir.join(format!("{stem}.csv")), &csv)?;
            write(dir.join(format!("{stem}-histogram.csv")), &trace.histogram_csv())?;
            write(dir.join("summary.txt"), &summary)?;
            print!("{summary}");
        }
        Command::Bench(c) => {
            let sc = c.load()?;
            let rows = benchmark(&sc)?;
            let csv = bench_csv(&rows);
            write(c.out_dir()?.join(format!("{}-bench.csv", sc.name)), &csv)?;
            print!("{csv}");
        }
        Command::FrictionCompare { common, runs } => {
            let sc = common.load()?;
            let seeds: Vec<u64> = (sc.seed..sc.seed + runs).collect();
            let cmp = compare_friction(&sc, &seeds)?;
            let text = cmp.to_text();
            write(common.out_dir()?.join(format!("{}-friction.txt", sc.name)), &text)?;
            print!("{text}");
        }
        Command::DumpQp { common, step } => {
            let sc = common.load()?;
            let Some(qp) = qp_at_step(&sc, step)? else {
                bail!("scenario has no step {step}");
            };
            let text = format!("{}\n# rows\n{}", qp.qp.to_text(), qp.provenance_text());
            write(common.out_dir()?.join(format!("{}-step{step}.qp", sc.name)), &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(HarnessError::Abort { dump, .. }) = e.downcast_ref::<HarnessError>() {
                eprintln!("error: {e}");
                let path = Path::new("abort.qp");
                if fs::write(path, dump).is_ok() {
                    eprintln!("failing QP written to {}", path.display());
                }
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
