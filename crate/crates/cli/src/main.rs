use std::path::PathBuf;
use std::process::ExitCode;

use affconv_cli::ablate::cmd_ablate;
use affconv_cli::commands::{cmd_bench, cmd_make_toyset, cmd_posmap, cmd_render, BenchOp};
use affconv_cli::config::RunConfig;
use affconv_cli::gradcheck::{self, Target};
use affconv_cli::train::{cmd_train, parse_stages};
use affconv_cli::NumericalFailure;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "affconv", version, about = "Affine-convolution face modelling harness")]
struct Cli {
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Kernels are single-threaded, so only 1 is meaningful.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Finite-difference gradient checks; JSON report in <out>/gradcheck.json.
    Gradcheck {
        #[arg(long, default_value = "all")]
        target: Target,
    },
    /// Synthesize a toy dataset into <out>.
    MakeToyset {
        #[arg(long, default_value_t = 250)]
        n: usize,
        #[arg(long)]
        resolution: Option<usize>,
        /// Render every sample in the canonical pose.
        #[arg(long)]
        identity_pose: bool,
    },
    /// Three-stage training.
    Train {
        /// 1, 2, 3 or all.
        #[arg(long, default_value = "all")]
        stage: String,
        /// Toy set directory; overrides the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Affine versus vanilla downsampling on the diffuse task.
    AblateAffconv {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// UV position map of an OBJ mesh (the bundled head by default).
    Posmap {
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value_t = 512)]
        resolution: usize,
    },
    /// Render a toy sample from its components or a checkpoint.
    Render {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Forward + backward timings of conv and affine conv.
    Bench {
        /// conv, affconv or both.
        #[arg(long, default_value = "both")]
        op: String,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        repeats: usize,
    },
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        bail!(UsageError("--threads must be at least 1".into()));
    }
    let mut cfg = run_config(&cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Gradcheck { target } => {
            let report = gradcheck::run(*target)?;
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            std::fs::write(out.join("gradcheck.json"), serde_json::to_string_pretty(&report)?)?;
            let worst = report.groups.iter().map(|g| g.report.max_rel_error).fold(0.0, f64::max);
            println!(
                "{} groups, {} zero cases, worst relative error {worst:.3e}",
                report.groups.len(),
                report.zero_cases.len()
            );
            if !report.passed {
                return Err(NumericalFailure(format!("gradient check failed: {}", report.failures.join(", "))).into());
            }
        }
        Command::MakeToyset {
            n,
            resolution,
            identity_pose,
        } => {
            let r = resolution.unwrap_or(cfg.resolution);
            cmd_make_toyset(*n, cfg.seed, r, *identity_pose, out)?;
            println!("wrote {n} samples at {r}x{r} to {}", out.display());
        }
        Command::Train { stage, data } => {
            if let Some(d) = data {
                cfg.dataset.path = d.clone();
            }
            let stages = parse_stages(stage).map_err(|e| UsageError(e.to_string()))?;
            let report = cmd_train(cfg, out, &stages)?;
            println!("{}", serde_json::to_string_pretty(&report.final_eval)?);
        }
        Command::AblateAffconv { data, steps } => {
            if let Some(d) = data {
                cfg.dataset.path = d.clone();
            }
            if let Some(s) = steps {
                cfg.ablation.steps = *s;
            }
            let r = cmd_ablate(&cfg, out)?;
            println!(
                "misaligned: affine {:.5} vanilla {:.5} ratio {:.3}; identity pose: affine {:.5} vanilla {:.5} gap {:.1}%",
                r.misaligned.affine.held_out_l1,
                r.misaligned.vanilla.held_out_l1,
                r.misaligned.ratio,
                r.identity_pose.affine.held_out_l1,
                r.identity_pose.vanilla.held_out_l1,
                100.0 * r.identity_pose.gap()
            );
        }
        Command::Posmap { mesh, resolution } => {
            let s = cmd_posmap(mesh.as_deref(), *resolution, out)?;
            let rt = &s.round_trip;
            println!(
                "{}x{} coverage {:.4}; round-trip max interior error {:.3e} (tolerance {:.3e}) {}",
                rt.resolution,
                rt.resolution,
                rt.coverage,
                rt.max_interior_error,
                rt.tolerance,
                if rt.passes() { "ok" } else { "FAILED" }
            );
            if !rt.passes() {
                return Err(NumericalFailure("round-trip error above tolerance".into()).into());
            }
        }
        Command::Render {
            data,
            index,
            checkpoint,
        } => {
            let data = data.clone().unwrap_or(cfg.dataset.path.clone());
            let s = cmd_render(&data, *index, checkpoint.as_deref(), &cfg, out)?;
            println!(
                "sample {}: {} covered pixels, composite L1 vs input {:.5}",
                s.index, s.covered_pixels, s.input_l1
            );
        }
        Command::Bench { op, sizes, repeats } => {
            let ops = match op.as_str() {
                "conv" => vec![BenchOp::Conv],
                "affconv" => vec![BenchOp::Affconv],
                "both" => vec![BenchOp::Conv, BenchOp::Affconv],
                _ => bail!(UsageError(format!("--op must be conv, affconv or both, got `{op}`"))),
            };
            cmd_bench(&ops, sizes, *repeats, cfg.seed, out)?;
        }
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<NumericalFailure>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<affconv::Error>() {
            match e {
                affconv::Error::NonFinite { .. } | affconv::Error::NonFiniteGradient(_) => return 2,
                affconv::Error::Io(_)
                | affconv::Error::Format(_)
                | affconv::Error::Parse { .. }
                | affconv::Error::Image(_) => return 3,
                _ => {}
            }
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
