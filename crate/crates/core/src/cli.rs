//! The `collapse-lab` command line.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{
    dff_lower_bound, per_token_ambiguity_dim, pgop_overhead_fraction, pgop_param_overhead,
    recovery_ambiguity_dim,
};
use crate::error::{LabError, Result};
use crate::harness::{self, ExperimentReport};
use crate::io::{parse_config, write_report, Experiment, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "collapse-lab", version, about = "Seeded rank-collapse and head-symmetry experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// LayerNorm rank trials and rank neutrality along forward traces.
    Exp1(RunArgs),
    /// Residual ablation: rank per layer with and without skip connections.
    Exp2(RunArgs),
    /// Gauge sweep over conditioning and head subsets.
    Exp3(RunArgs),
    /// Planted alignment index against MHA rank.
    Exp4(RunArgs),
    /// Parametric simulation of rank dynamics against alignment.
    Sim(RunArgs),
    /// Pairwise head-subspace angles against alignment.
    Angles(RunArgs),
    /// Finite-difference order of the first-order remainder.
    Linearity(RunArgs),
    /// Rank of sums and of residual MHA outputs.
    GenericRank(RunArgs),
    /// Closed-form dimension and parameter counts.
    Formulas(FormulaArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run file; omitted keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV and JSON reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 1 if any pass_* assertion fails.
    #[arg(long)]
    check: bool,
    /// Relative singular-value threshold for numerical rank.
    #[arg(long)]
    rel_tol: Option<f64>,
}

#[derive(Debug, Args)]
struct FormulaArgs {
    /// Sequence length.
    #[arg(long, default_value_t = 512)]
    n: u64,
    #[arg(long, default_value_t = 12)]
    heads: u64,
    #[arg(long, default_value_t = 64)]
    dk: u64,
    #[arg(long, default_value_t = 768)]
    d_model: u64,
    /// MHA output rank; defaults to d_model.
    #[arg(long)]
    rank: Option<u64>,
    /// Positional-encoding width; defaults to d_model.
    #[arg(long)]
    d_pe: Option<u64>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (experiment, args) = match cli.command {
        Command::Formulas(f) => {
            return match formulas(&f) {
                Ok(text) => {
                    print!("{text}");
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_USAGE
                }
            }
        }
        Command::Exp1(a) => (Experiment::Exp1, a),
        Command::Exp2(a) => (Experiment::Exp2, a),
        Command::Exp3(a) => (Experiment::Exp3, a),
        Command::Exp4(a) => (Experiment::Exp4, a),
        Command::Sim(a) => (Experiment::Sim, a),
        Command::Angles(a) => (Experiment::Angles, a),
        Command::Linearity(a) => (Experiment::Linearity, a),
        Command::GenericRank(a) => (Experiment::GenericRank, a),
    };
    let cfg = match resolve(experiment, &args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let reports = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    // Files are written only after every computation has finished.
    let mut failed = false;
    for report in &reports {
        match write_report(report, &cfg.output_dir) {
            Ok(paths) => {
                for p in paths {
                    println!("wrote {}", p.display());
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        }
        for (key, ok) in report.checks() {
            println!("{} {}.{}", if ok { "PASS" } else { "FAIL" }, report.name, key);
            failed |= !ok;
        }
    }
    if cfg.check_mode && failed {
        EXIT_CHECK_FAILED
    } else {
        EXIT_OK
    }
}

fn resolve(experiment: Experiment, args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let cfg = parse_config(path)?;
            if cfg.experiment != experiment {
                return Err(LabError::Config(format!(
                    "{} names experiment {} but the subcommand is {experiment}",
                    path.display(),
                    cfg.experiment
                )));
            }
            cfg
        }
        None => RunConfig::new(experiment),
    };
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(tol) = args.rel_tol {
        cfg.set_rel_tol(tol)?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.check_mode |= args.check;
    Ok(cfg)
}

/// Runs the configured experiment; `exp1` yields two reports.
pub fn run_experiment(cfg: &RunConfig) -> Result<Vec<ExperimentReport>> {
    Ok(match cfg.experiment {
        Experiment::Exp1 => vec![
            harness::ln_rank_trials(&cfg.ln_trials)?,
            harness::exp1_rank_neutrality(&cfg.exp1)?,
        ],
        Experiment::Exp2 => vec![harness::exp2_residual_ablation(&cfg.exp2)?],
        Experiment::Exp3 => vec![harness::exp3_gauge_sweep(&cfg.exp3)?],
        Experiment::Exp4 => vec![harness::exp4_alpha_vs_rank(&cfg.exp4)?],
        Experiment::Sim => vec![harness::parametric_sim(&cfg.sim)?],
        Experiment::Angles => vec![harness::angles_vs_alpha(&cfg.sim)?],
        Experiment::Linearity => vec![harness::local_linearity_check(&cfg.linearity)?],
        Experiment::GenericRank => vec![harness::generic_rank_increase_check(&cfg.generic_rank)?],
    })
}

fn formulas(f: &FormulaArgs) -> Result<String> {
    let rank = f.rank.unwrap_or(f.d_model);
    let d_pe = f.d_pe.unwrap_or(f.d_model);
    Ok(format!(
        "recovery_ambiguity_dim {}\nper_token_ambiguity_dim {}\ndff_lower_bound {}\npgop_param_overhead {}\npgop_overhead_fraction {:.6}\n",
        recovery_ambiguity_dim(f.n, f.heads, f.dk),
        per_token_ambiguity_dim(f.heads, f.dk),
        dff_lower_bound(f.d_model, rank)?,
        pgop_param_overhead(f.heads, f.d_model, d_pe),
        pgop_overhead_fraction(f.heads, f.d_model, d_pe),
    ))
}
