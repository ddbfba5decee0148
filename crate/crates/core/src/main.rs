use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;

use erm_ipm::barrier::{builtin_catalog, check_barrier, Barrier};
use erm_ipm::dynsparsifier::{run_bench, Adversary, BenchConfig, DecrementalConfig};
use erm_ipm::frontend::{dualize, load_instance, primal_spec_from_json, save_instance};
use erm_ipm::ipm::{solve, solve_with_diagnostics, write_diagnostics, IpmConfig, Mode, Profile};
use erm_ipm::{ErmError, Result};

#[derive(Parser)]
#[command(name = "erm-ipm", version, about = "Robust interior point solver for block-structured ERM")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Sketched,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Faithful,
    Aggressive,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdversaryArg {
    Maxlev,
    Random,
    Churn,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => Mode::Exact,
            ModeArg::Sketched => Mode::Sketched,
        }
    }
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Faithful => Profile::Faithful,
            ProfileArg::Aggressive => Profile::Aggressive,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve an instance file.
    Solve {
        instance: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, value_enum, default_value = "exact")]
        mode: ModeArg,
        #[arg(long, env = "ERM_IPM_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "aggressive")]
        profile: ProfileArg,
        /// Per-iteration CSV diagnostics.
        #[arg(long)]
        diag: Option<PathBuf>,
        /// Check centrality, feasibility and step bounds every iteration.
        #[arg(long)]
        instrumented: bool,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Convert a primal ERM description into a standard-form instance.
    Dualize {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Store A in a binary sidecar file.
        #[arg(long)]
        sidecar: bool,
    },
    /// Drive the leverage-score sparsifier with an update stream.
    SparsifyBench {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        d: usize,
        #[arg(long, default_value_t = 1e6)]
        kappa: f64,
        #[arg(long, value_enum, default_value = "maxlev")]
        adversary: AdversaryArg,
        #[arg(long, default_value_t = 2000)]
        updates: usize,
        #[arg(long, env = "ERM_IPM_SEED", default_value_t = 0)]
        seed: u64,
        /// Per-batch CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run exact and sketched modes side by side.
    CompareExact {
        instance: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, env = "ERM_IPM_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "aggressive")]
        profile: ProfileArg,
    },
    /// Finite-difference and parameter checks of the built-in barriers.
    CheckBarriers {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, env = "ERM_IPM_SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Solve {
            instance,
            eps,
            mode,
            seed,
            profile,
            diag,
            instrumented,
            report,
        } => {
            let inst = load_instance(&instance)?;
            let mut cfg = IpmConfig::for_instance(&inst, profile.into(), mode.into())
                .with_seed(seed)
                .instrumented(instrumented);
            cfg.record_diagnostics = diag.is_some();
            let (res, records) = solve_with_diagnostics(&inst, eps, cfg);
            if let Some(p) = &diag {
                write_diagnostics(p, &records)?;
            }
            let rep = match res {
                Ok(r) => r,
                Err(e) => {
                    if let Some(p) = &diag {
                        eprintln!("diagnostics written to {}", p.display());
                    }
                    return Err(e);
                }
            };
            println!("objective: {:.9e}", rep.objective);
            println!("gap bound: {:.3e}", rep.gap_bound);
            println!("iterations: {}", rep.iterations);
            println!("residual: {:.3e}", rep.residual);
            if !rep.converged {
                println!("warning: iteration cap reached");
            }
            if !rep.violations.is_empty() {
                println!("violations: {}", rep.violations.len());
            }
            if let Some(p) = report {
                let mut f = std::fs::File::create(p)?;
                erm_ipm::ipm::write_report(&mut f, &rep)?;
            }
            Ok(())
        }
        Cmd::Dualize { spec, output, sidecar } => {
            let p = primal_spec_from_json(&std::fs::read_to_string(&spec)?)?;
            let inst = dualize(&p)?;
            save_instance(&inst, &output, sidecar)?;
            println!("wrote {} (n = {}, d = {}, blocks = {})", output.display(), inst.n(), inst.d(), inst.m());
            Ok(())
        }
        Cmd::SparsifyBench {
            n,
            d,
            kappa,
            adversary,
            updates,
            seed,
            csv,
        } => {
            let cfg = BenchConfig {
                n,
                d,
                kappa,
                adversary: match adversary {
                    AdversaryArg::Maxlev => Adversary::MaxLev,
                    AdversaryArg::Random => Adversary::Random,
                    AdversaryArg::Churn => Adversary::Churn,
                },
                updates,
                seed,
                sparsifier: DecrementalConfig {
                    instrumented: true,
                    ..DecrementalConfig::default()
                },
            };
            let (summary, records) = run_bench(&cfg)?;
            if let Some(p) = csv {
                let mut w = csv::Writer::from_path(p).map_err(|e| ErmError::Io(e.into()))?;
                for r in &records {
                    w.serialize(r).map_err(|e| ErmError::Io(e.into()))?;
                }
                w.flush()?;
            }
            println!("batches: {} (bound {:.1})", summary.batches, summary.batch_bound);
            println!(
                "sum tau: final {:.4}, max {:.4} (bound {:.1})",
                summary.final_sum_tau, summary.max_sum_tau, summary.sum_tau_bound
            );
            println!(
                "oracle violations: {} rows over {} batches; spectral failures {}",
                summary.violations, summary.violating_batches, summary.spectral_failures
            );
            Ok(())
        }
        Cmd::CompareExact {
            instance,
            eps,
            seeds,
            seed,
            profile,
        } => {
            let inst = load_instance(&instance)?;
            println!("seed,exact,sketched,delta,exact_violations,sketched_violations");
            for k in 0..seeds {
                let s = seed.wrapping_add(k);
                let exact = solve(
                    &inst,
                    eps,
                    IpmConfig::for_instance(&inst, profile.into(), Mode::Exact).instrumented(true),
                )?;
                let sk = solve(
                    &inst,
                    eps,
                    IpmConfig::for_instance(&inst, profile.into(), Mode::Sketched)
                        .with_seed(s)
                        .instrumented(true),
                )?;
                println!(
                    "{s},{:.17e},{:.17e},{:.3e},{},{}",
                    exact.objective,
                    sk.objective,
                    sk.objective - exact.objective,
                    exact.violations.len(),
                    sk.violations.len()
                );
            }
            Ok(())
        }
        Cmd::CheckBarriers { trials, seed } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut failed = 0;
            for b in builtin_catalog() {
                let r = check_barrier(&b, trials, &mut rng)?;
                let ok = r.passes(1e-5);
                if !ok {
                    failed += 1;
                }
                println!(
                    "{:<16} grad {:.2e}  hess {:.2e}  nu ratio {:.4}  third-order ratio {:.4}  {}",
                    b.name(),
                    r.grad_fd_rel,
                    r.hess_fd_rel,
                    r.max_nu_ratio,
                    r.max_third_ratio,
                    if ok { "ok" } else { "FAIL" }
                );
            }
            if failed > 0 {
                return Err(ErmError::Numerical(format!("{failed} barrier(s) failed the checks")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
