use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use mea_core::config::RunConfig;
use mea_core::group::RotationAngle;
use mea_core::mea::{apply_isometric_overlay, augment_demonstrations, phase_anchor_discrepancy, verify_multigroup_conditions, AugmentMode, IsometricGroup, IsometricOverlay};
use mea_core::rl::{evaluate, improvement_timestep, train_q, QModel};
use mea_core::sim::{EnvConfig, KinSim};
use mea_core::store::{load_episodes, save_episodes, write_summary_csv, EpisodeFile};
use mea_core::trajectory::{Episode, Origin, ReplayBuffer};
use mea_core::voxel::export_episode_pgm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "mea", version, about = "Multi-group equivariant augmentation pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override, applied after the file (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted demonstrations.
    Demo {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-episode CSV summary.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Annotate every episode with its phase boundary H_p.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Augment demonstrations (MEA plus the optional isometric overlay).
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        per_demo: Option<usize>,
        #[arg(long)]
        mode: Option<AugmentMode>,
        /// none, so2 or c4.
        #[arg(long)]
        isometric: Option<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Replay augmented episodes and check the multi-group conditions.
    Verify {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        aug: PathBuf,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Export depth-image channels of episodes as PGM files.
    Project {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Only this episode (default: all).
        #[arg(long)]
        episode: Option<usize>,
    },
    /// Train the linear Q model on one or more episode files.
    Train {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Evaluate a trained model with greedy rollouts.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        rollouts: usize,
        /// Reset seed of the first rollout (default: the model's eval seed).
        #[arg(long)]
        first_seed: Option<u64>,
    },
}

/// Model file: the learner plus the environment it was evaluated in.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    env: EnvConfig,
    eval_seed: u64,
    model: QModel,
}

#[derive(Serialize)]
struct VerifyReport {
    episodes: usize,
    feasible: usize,
    conditions_pass: usize,
    feasible_fraction: f64,
    max_observation_discrepancy: f64,
    max_anchor_error: f64,
    failures: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MEA_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
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

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<mea_core::Error>() {
            return if core.is_io() { EXIT_IO } else { EXIT_VALIDATION };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.set_pair(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64> {
    match flag {
        Some(s) => Ok(s),
        None => cfg
            .seed()?
            .ok_or_else(|| anyhow!("a seed is required: pass --seed or set seed in the config")),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| mea_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(BufWriter::new(f))
}

fn write_csv(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut w = create(path)?;
    write_summary_csv(&mut w, episodes)?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Demo { n, seed, out, csv } => {
            let seed = require_seed(seed, &cfg)?;
            let env = cfg.env()?;
            let sim = KinSim::new(env.clone())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let demos: Vec<Episode> = (0..n).map(|_| sim.scripted_demo(rng.random())).collect();
            if let Some(bad) = demos.iter().position(|d| !d.is_success()) {
                bail!("scripted demonstration {bad} did not succeed");
            }
            save_episodes(&out, &env, &demos)?;
            if let Some(p) = csv {
                write_csv(&p, &demos)?;
            }
            info!("wrote {n} demonstrations to {}", out.display());
        }
        Command::Segment { input, out } => {
            let EpisodeFile { env, mut episodes } = load_episodes(&input)?;
            let segmenter = cfg.segmenter(&env)?;
            for ep in &mut episodes {
                ep.phase_boundary = Some(segmenter.segment(ep, env.delta_xyz)?);
            }
            save_episodes(&out, &env, &episodes)?;
        }
        Command::Augment {
            input,
            out,
            seed,
            per_demo,
            mode,
            isometric,
            csv,
        } => {
            let seed = require_seed(seed, &cfg)?;
            let EpisodeFile { env, episodes } = load_episodes(&input)?;
            let mut cfg = cfg;
            if let Some(m) = mode {
                cfg.set("aug.mode", &m.to_string())?;
            }
            let mut policy = cfg.policy(&env)?;
            if let Some(k) = per_demo {
                policy.augmentations_per_demo = k;
            }
            if let Some(iso) = isometric {
                policy.isometric_overlay = match iso.as_str() {
                    "none" => None,
                    g => Some(IsometricOverlay {
                        group: g.parse::<IsometricGroup>().map_err(|e| anyhow!(e))?,
                        copies: policy.isometric_overlay.map_or(4, |o| o.copies),
                    }),
                };
            }
            let segmenter = cfg.segmenter(&env)?;
            let demos: Vec<Episode> = episodes.into_iter().filter(|e| e.origin == Origin::Demonstration).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let augmented = augment_demonstrations(&demos, &env, &policy, &segmenter, &mut rng)?;
            save_episodes(&out, &env, &augmented)?;
            if let Some(p) = csv {
                write_csv(&p, &augmented)?;
            }
            info!("wrote {} augmented episodes to {}", augmented.len(), out.display());
        }
        Command::Verify { gt, aug, report } => {
            let gt = load_episodes(&gt)?;
            let aug = load_episodes(&aug)?;
            if gt.env != aug.env {
                bail!("ground-truth and augmented files were recorded with different environments");
            }
            let sim = KinSim::new(gt.env.clone())?;
            let r = verify(&sim, &gt.episodes, &aug.episodes)?;
            let text = serde_json::to_string_pretty(&r)?;
            stdout_line(&text)?;
            if let Some(p) = report {
                let mut w = create(&p)?;
                writeln!(w, "{text}")?;
                w.flush()?;
            }
            if r.feasible != r.episodes || r.conditions_pass != r.episodes {
                bail!("{} of {} episodes failed verification", r.episodes - r.feasible.min(r.conditions_pass), r.episodes);
            }
        }
        Command::Project {
            input,
            out_dir,
            episode,
        } => {
            let file = load_episodes(&input)?;
            let grid = cfg.voxel()?;
            let selected: Vec<usize> = match episode {
                Some(k) if k < file.episodes.len() => vec![k],
                Some(k) => bail!("episode {k} does not exist ({} episodes)", file.episodes.len()),
                None => (0..file.episodes.len()).collect(),
            };
            for k in selected {
                export_episode_pgm(&file.episodes[k], k, &grid, &out_dir)?;
            }
        }
        Command::Train {
            inputs,
            seed,
            model,
            curve,
            svg,
        } => {
            let seed = require_seed(seed, &cfg)?;
            let rl = cfg.rl()?;
            let mut buffer: Option<ReplayBuffer> = None;
            for path in &inputs {
                let file = load_episodes(path)?;
                let buf = buffer.get_or_insert_with(|| ReplayBuffer::new(file.env.clone(), None));
                if *buf.env() != file.env {
                    bail!("{} was recorded with a different environment", path.display());
                }
                buf.extend(file.episodes)?;
            }
            let buffer = buffer.expect("at least one input");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (q, eval_curve) = train_q(&buffer, &rl, &mut rng)?;
            let mf = ModelFile {
                env: buffer.env().clone(),
                eval_seed: rl.eval_seed,
                model: q,
            };
            let mut w = create(&model)?;
            serde_json::to_writer(&mut w, &mf)?;
            w.flush()?;
            let mut w = create(&curve)?;
            eval_curve.write_csv(&mut w)?;
            w.flush()?;
            if let Some(p) = svg {
                let mut w = create(&p)?;
                w.write_all(eval_curve.to_svg().as_bytes())?;
                w.flush()?;
            }
            info!(
                "final success {:?}, improvement timestep {:?}",
                eval_curve.final_success(),
                improvement_timestep(&eval_curve)
            );
        }
        Command::Eval {
            model,
            out,
            rollouts,
            first_seed,
        } => {
            let text = std::fs::read_to_string(&model).map_err(|e| mea_core::Error::Io {
                path: model.clone(),
                source: e,
            })?;
            let mf: ModelFile =
                serde_json::from_str(&text).with_context(|| format!("parsing model {}", model.display()))?;
            mf.model.validate(mf.model.features.dim(mf.env.object_count))?;
            let sim = KinSim::new(mf.env.clone())?;
            let results = evaluate(&mf.model, &sim, first_seed.unwrap_or(mf.eval_seed), rollouts)?;
            let mut w = create(&out)?;
            {
                let mut wtr = csv_writer(&mut w);
                for r in &results {
                    wtr.serialize(r)?;
                }
                wtr.flush()?;
            }
            w.flush()?;
            let n = results.len().max(1) as f64;
            stdout_line(&format!(
                "success_rate={:.4} mean_score={:.4}",
                results.iter().filter(|r| r.success).count() as f64 / n,
                results.iter().map(|r| r.score).sum::<f64>() / n
            ))?;
        }
    }
    Ok(())
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn stdout_line(text: &str) -> std::io::Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r,
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

fn verify(sim: &KinSim, gt: &[Episode], aug: &[Episode]) -> Result<VerifyReport> {
    let mut r = VerifyReport {
        episodes: aug.len(),
        feasible: 0,
        conditions_pass: 0,
        feasible_fraction: 0.0,
        max_observation_discrepancy: 0.0,
        max_anchor_error: 0.0,
        failures: Vec::new(),
    };
    for (i, ep) in aug.iter().enumerate() {
        let s0 = ep
            .meta
            .initial_state
            .as_ref()
            .ok_or_else(|| anyhow!("augmented episode {i} has no initial state"))?;
        let report = sim.replay_check(ep, s0)?;
        r.max_observation_discrepancy = r.max_observation_discrepancy.max(report.max_discrepancy);
        if report.feasible {
            r.feasible += 1;
        } else {
            r.failures.push(format!("episode {i}: replay mismatch at t = {:?}", report.first_mismatch));
        }
        let Some(src) = ep.meta.source.and_then(|s| gt.get(s)) else {
            r.failures.push(format!("episode {i}: no source demonstration"));
            continue;
        };
        let gt_s0 = src
            .meta
            .initial_state
            .as_ref()
            .ok_or_else(|| anyhow!("demonstration {:?} has no initial state", ep.meta.source))?;
        // Rotated copies are checked against the demonstration rotated by the same angle.
        let reference = match ep.meta.isometric_angle {
            Some(a) => apply_isometric_overlay(src, RotationAngle(a)),
            None => src.clone(),
        };
        let reference_s0 = reference.meta.initial_state.clone().unwrap_or_else(|| gt_s0.clone());
        let cond = verify_multigroup_conditions(&reference, ep, sim, &reference_s0, s0);
        if let Some(h_p) = ep.phase_boundary {
            let anchor = phase_anchor_discrepancy(sim, &reference, ep, &reference_s0, s0, h_p)?;
            r.max_anchor_error = r.max_anchor_error.max(anchor);
        }
        if cond.all_pass() {
            r.conditions_pass += 1;
        } else {
            r.failures.push(format!("episode {i}: conditions {cond:?}"));
        }
    }
    r.feasible_fraction = if aug.is_empty() { 1.0 } else { r.feasible as f64 / aug.len() as f64 };
    Ok(r)
}
