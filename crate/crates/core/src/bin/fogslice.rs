//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use fogslice_core::engine::{
    emit_report, emit_sweep, run_episode, run_sweep, Config, EngineError, PolicyKind, THREADS_ENV,
};
use fogslice_core::game::oracle::exhaustive_welfare;
use fogslice_core::game::{check_core, solve_social_welfare, CoreOptions, GameInstance, WelfareOptions};

#[derive(Parser)]
#[command(name = "fogslice", version, about = "Energy-harvesting fog slicing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write slots.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// no_coop, nearest_neighbor, radius_coop, myopic or bpomdp[:DEPTH];
        /// defaults to the config's policy.
        #[arg(long)]
        policy: Option<PolicyKind>,
        /// Defaults to the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every value of one config key for several replications.
    #[command(after_help = format!("Worker threads default to the core count; set {THREADS_ENV} to override."))]
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted config key, e.g. topology.rtt or arrivals.0.high.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; may be empty.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config file and print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve a game instance and compare it with brute-force enumeration.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
        /// Offload-fraction grid step of the brute-force search.
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        /// Relative welfare tolerance.
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        /// Largest coalition checked for profitable deviations (0 skips the check).
        #[arg(long, default_value_t = 3)]
        coalition: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fogslice: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cmd: Command) -> Result<(), EngineError> {
    match cmd {
        Command::Run {
            config,
            policy,
            seed,
            out,
        } => {
            let cfg = Config::load(&config)?;
            let policy = policy.unwrap_or(cfg.policy);
            let report = run_episode(&cfg, policy, seed.unwrap_or(cfg.seed))?;
            emit_report(&report, &out)?;
            let a = &report.aggregates;
            println!(
                "policy={policy} seed={} slots={} nodes={} total_offloaded={:.6} discounted_reward={:.6} uncertified_slots={}",
                report.seed, a.slots, a.nodes, a.total_offloaded, a.discounted_total, a.uncertified_slots
            );
        }
        Command::Sweep {
            config,
            axis,
            values,
            reps,
            policy,
            out,
        } => {
            let cfg = Config::load(&config)?;
            let values: Vec<String> = values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(String::from)
                .collect();
            let result = run_sweep(&cfg, policy, &axis, &values, reps)?;
            emit_sweep(&result, &out)?;
            println!("{axis},offloaded_mean,offloaded_stderr,discounted_mean,discounted_stderr");
            for r in &result.rows {
                println!(
                    "{},{:.6},{:.6},{:.6},{:.6}",
                    r.value, r.offloaded_mean, r.offloaded_stderr, r.discounted_mean, r.discounted_stderr
                );
            }
        }
        Command::Validate { config } => {
            let cfg = Config::load(&config)?;
            let text = toml::to_string(&cfg.to_table()).map_err(|e| EngineError::Runtime(e.to_string()))?;
            print!("{text}");
        }
        Command::Oracle {
            instance,
            step,
            tolerance,
            coalition,
        } => oracle(&instance, step, tolerance, coalition)?,
    }
    Ok(())
}

fn oracle(path: &PathBuf, step: f64, tolerance: f64, coalition: usize) -> Result<(), EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
    let inst = GameInstance::from_text(&text).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
    if !(step > 0.0 && step <= 1.0) {
        return Err(EngineError::Config(format!("step {step} outside (0, 1]")));
    }
    let net = &inst.network;
    let sol = solve_social_welfare(net, &inst.arrivals, &inst.budgets, &WelfareOptions::default())
        .map_err(|e| EngineError::Runtime(e.to_string()))?;
    let brute = exhaustive_welfare(net, &inst.arrivals, &inst.budgets, step);
    let gap = (brute.welfare - sol.welfare) / brute.welfare.abs().max(1e-12);
    let matches = gap <= tolerance;
    let core = (coalition > 0).then(|| {
        check_core(
            net,
            &inst.arrivals,
            &inst.budgets,
            &sol.agreement,
            &CoreOptions {
                n_max: coalition,
                alpha_step: step,
            },
        )
    });
    let summary = json!({
        "solver_welfare": sol.welfare,
        "oracle_welfare": brute.welfare,
        "relative_shortfall": gap.max(0.0),
        "within_tolerance": matches,
        "certified": sol.certified,
        "energy": sol.agreement.energy.0,
        "rewards": sol.agreement.rewards,
        "core": core,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    if !matches {
        return Err(EngineError::Runtime(format!(
            "solver welfare {} is below brute force {} by more than {tolerance} relative",
            sol.welfare, brute.welfare
        )));
    }
    if core.as_ref().is_some_and(|c| !c.in_core()) {
        return Err(EngineError::Runtime("profitable coalition deviation found".into()));
    }
    Ok(())
}
