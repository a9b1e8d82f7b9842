//! The ten acceptance criteria. Each prints one PASS/FAIL line; the test
//! fails if any criterion does.
//!
//! Run with `cargo test -p mea-core --test acceptance`.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mea_core::config::RunConfig;
use mea_core::group::{GroupElement, RotationAngle, Translation3, Vec3, C4};
use mea_core::mea::*;
use mea_core::phase::Segmenter;
use mea_core::rl::{fit, improvement_timestep, train_q, FeatTransition, QModel, RlConfig};
use mea_core::sim::{DiscreteAction, EnvConfig, KinSim};
use mea_core::trajectory::{Action, Episode, PointCloud, ReplayBuffer};
use mea_core::voxel::{project, voxelize, DepthImage, VoxelGridConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Written straight to stdout so the lines show up without `--nocapture`.
fn report(n: usize, name: &str, o: &Outcome, elapsed: Duration, budget: Duration) -> bool {
    let in_time = elapsed <= budget;
    let pass = o.pass && in_time;
    let line = format!(
        "[{}] {n:>2}. {name}: {} ({:.2?}, budget {:.0?}{})\n",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed,
        budget,
        if in_time { "" } else { ", over budget" },
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    pass
}

struct FeasibilityRun {
    episodes: usize,
    demos: usize,
    infeasible: usize,
    max_discrepancy: f64,
    flag_mismatches: usize,
    max_anchor: f64,
}

fn feasibility_run() -> FeasibilityRun {
    let mut run = FeasibilityRun {
        episodes: 0,
        demos: 0,
        infeasible: 0,
        max_discrepancy: 0.0,
        flag_mismatches: 0,
        max_anchor: 0.0,
    };
    for env in [EnvConfig::default(), EnvConfig::discrete()] {
        let sim = KinSim::new(env.clone()).unwrap();
        let seg = Segmenter::height(env.l_z);
        let mut policy = match env.action_space {
            mea_core::sim::ActionSpace::Continuous => AugmentationPolicy::continuous(),
            mea_core::sim::ActionSpace::Discrete => AugmentationPolicy::discrete(),
        };
        policy.isometric_overlay = None;
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for demo in common::demos(&sim, seed, 10) {
                run.demos += 1;
                let h_p = seg.segment(&demo, env.delta_xyz).unwrap();
                for _ in 0..10 {
                    let aug = augment_episode(&demo, h_p, &policy, &env, &mut rng).unwrap();
                    let s0 = common::initial(&aug);
                    run.episodes += 1;
                    let report = sim.replay_check(&aug, s0).unwrap();
                    if !report.feasible || report.max_discrepancy > 1e-9 {
                        run.infeasible += 1;
                    }
                    run.max_discrepancy = run.max_discrepancy.max(report.max_discrepancy);
                    let flags_match = aug
                        .transitions
                        .iter()
                        .zip(&demo.transitions)
                        .all(|(a, b)| a.reward == b.reward && a.terminal == b.terminal);
                    if !flags_match {
                        run.flag_mismatches += 1;
                    }
                    let gt = sim.replay(&demo, common::initial(&demo)).unwrap();
                    run.max_anchor = run.max_anchor.max(gt[h_p].max_difference(&report.states[h_p]));
                }
            }
        }
    }
    run
}

fn criterion_1(run: &FeasibilityRun) -> Outcome {
    outcome(
        run.episodes >= 1000 && run.demos >= 50 && run.infeasible == 0 && run.flag_mismatches == 0,
        format!(
            "{}/{} episodes from {} demos feasible, max discrepancy {:.1e}, {} reward/terminal mismatches",
            run.episodes - run.infeasible,
            run.episodes,
            run.demos,
            run.max_discrepancy,
            run.flag_mismatches
        ),
    )
}

fn criterion_2(run: &FeasibilityRun) -> Outcome {
    outcome(
        run.max_anchor <= 1e-9,
        format!("max state difference at H_p {:.1e} over {} episodes", run.max_anchor, run.episodes),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let vec3 = |rng: &mut ChaCha8Rng| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let mut check = |err: f64| {
        worst = worst.max(err);
        if err > 1e-12 {
            failures += 1;
        }
    };
    for _ in 0..1000 {
        let (a, b) = (rng.random_range(-PI..PI), rng.random_range(-PI..PI));
        let v = vec3(&mut rng);
        let (g, h) = (RotationAngle(a), RotationAngle(b));
        check((g.compose(h).apply_vec3(&v) - g.apply_vec3(&h.apply_vec3(&v))).amax());
        let (s, t) = (Translation3(vec3(&mut rng)), Translation3(vec3(&mut rng)));
        check((s.compose(&t).apply(&v) - s.apply(&t.apply(&v))).amax());
    }
    for _ in 0..1000 {
        let v = vec3(&mut rng);
        let g = RotationAngle(rng.random_range(-PI..PI));
        check((g.inverse().apply_vec3(&g.apply_vec3(&v)) - v).amax());
        check((g.compose(g.inverse()).apply_vec3(&v) - v).amax());
        let s = Translation3(vec3(&mut rng));
        check((s.inverse().apply(&s.apply(&v)) - v).amax());
    }
    outcome(failures == 0, format!("{failures} failures, worst error {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let mut mismatches = 0;
    let mut count = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for env in [EnvConfig::default(), EnvConfig::discrete()] {
        let sim = KinSim::new(env.clone()).unwrap();
        let seg = Segmenter::height(env.l_z);
        for mut demo in common::demos(&sim, 4, 50) {
            count += 1;
            let h_p = seg.segment(&demo, env.delta_xyz).unwrap();
            demo.phase_boundary = Some(h_p);
            let aug = match env.action_space {
                mea_core::sim::ActionSpace::Continuous => {
                    let actions: Vec<Action> = demo.transitions[..h_p].iter().map(|t| t.action).collect();
                    let mut aug = transform_episode(&demo, h_p, &actions, env.delta_xyz, env.delta_theta);
                    aug.meta.initial_state =
                        Some(reconstruct_initial_state(common::initial(&demo), &demo, &aug, h_p, &env));
                    aug
                }
                mea_core::sim::ActionSpace::Discrete => {
                    let policy = AugmentationPolicy {
                        discrete_trivial_prob: 1.0,
                        ..AugmentationPolicy::discrete()
                    };
                    let aug = augment_episode(&demo, h_p, &policy, &env, &mut rng).unwrap();
                    if aug.meta.group_sequence != Some(GroupSequence::trivial(demo.horizon())) {
                        mismatches += 1;
                    }
                    aug
                }
            };
            let same = aug.transitions == demo.transitions
                && aug.phase_boundary == demo.phase_boundary
                && aug.meta.initial_state == demo.meta.initial_state
                && aug.meta.source == demo.meta.source
                && aug.meta.isometric_angle == demo.meta.isometric_angle;
            if !same {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{} of {count} episodes differ", mismatches))
}

fn shifted_image(img: &DepthImage, dx: i64, dy: i64, x: i64, y: i64) -> Option<u16> {
    let (sx, sy) = (x - dx, y - dy);
    let n = img.n as i64;
    ((0..n).contains(&sx) && (0..n).contains(&sy)).then(|| img.get(sx as usize, sy as usize))
}

fn criterion_5() -> Outcome {
    let cfg = VoxelGridConfig::default();
    let size = cfg.voxel_size();
    let n = cfg.n_voxel;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    for _ in 0..100 {
        // Voxel centres with jitter well inside each voxel, so shifting by
        // whole voxel sizes cannot cross a boundary through rounding.
        let pts: Vec<Vec3> = (0..rng.random_range(1..200))
            .map(|_| {
                let idx = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n - 16)];
                let jitter = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
                cfg.voxel_center(idx) + jitter.component_mul(&size)
            })
            .collect();
        let cloud = PointCloud::new(pts);
        let base = project(&voxelize(&[&cloud], &cfg), &cfg);

        let (dx, dy) = (rng.random_range(-10i64..=10), rng.random_range(-10i64..=10));
        let moved = cloud.translated(&Vec3::new(dx as f64 * size.x, dy as f64 * size.y, 0.0));
        let img = project(&voxelize(&[&moved], &cfg), &cfg);
        for y in 0..n as i64 {
            for x in 0..n as i64 {
                if let Some(v) = shifted_image(&base, dx, dy, x, y) {
                    if img.get(x as usize, y as usize) != v {
                        failures += 1;
                    }
                }
            }
        }

        let k = rng.random_range(0..16u16);
        let lifted = cloud.translated(&Vec3::new(0.0, 0.0, k as f64 * size.z));
        let img = project(&voxelize(&[&lifted], &cfg), &cfg);
        for (a, b) in img.pixels.iter().zip(&base.pixels) {
            let expected = if *b == 0 { 0 } else { b + k };
            if *a != expected {
                failures += 1;
            }
        }
    }
    outcome(failures == 0, format!("100 clouds, {failures} pixel mismatches"))
}

fn criterion_6() -> Outcome {
    let mut escapes = 0;
    for a in DiscreteAction::ALL {
        for q in 0..4 {
            let g = GroupElement::Discrete { c4: C4::new(q).unwrap() };
            let b = augment_action_discrete(a, &g);
            let in_set = DiscreteAction::ALL.contains(&b)
                && DiscreteAction::from_command(&b.to_command(1.0)).is_some();
            // The rotated command must equal the command rotated by the angle.
            let cmd = a.to_command(1.0);
            let rotated = C4::new(q).unwrap().angle().apply_vec3(&cmd.xyz);
            let consistent = (rotated - b.to_command(1.0).xyz).amax() < 1e-12;
            if !(in_set && consistent) {
                escapes += 1;
            }
        }
    }
    let policy = AugmentationPolicy::discrete();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let seq = sample_group_sequence(&policy, 9_999, 10_000, &mut rng);
    let frac = seq.elements.iter().filter(|g| g.is_trivial()).count() as f64 / 10_000.0;
    outcome(
        escapes == 0 && (frac - 0.70).abs() <= 0.02,
        format!("{escapes} of 36 rotations leave the action set; trivial fraction {frac:.4}"),
    )
}

fn criterion_7() -> Outcome {
    let sim = KinSim::new(EnvConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for demo in common::demos(&sim, 7, 20) {
        let angle = RotationAngle(rng.random_range(0.0..TAU));
        let overlaid = apply_isometric_overlay(&demo, angle);
        let s0 = common::initial(&demo).rotated_about_world_z(angle);
        let report = sim.replay_check(&overlaid, &s0).unwrap();
        worst = worst.max(report.max_discrepancy);
        if !report.feasible {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{} of 20 overlaid demos feasible, max discrepancy {worst:.1e}", 20 - failures))
}

fn benchmark_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.conf");
    RunConfig::load(&path).unwrap()
}

fn criterion_8() -> Outcome {
    let cfg = benchmark_config();
    let env = cfg.env().unwrap();
    let policy = cfg.policy(&env).unwrap();
    let seg = cfg.segmenter(&env).unwrap();
    let rl = cfg.rl().unwrap();
    let sim = KinSim::new(env.clone()).unwrap();

    let (mut base_total, mut aug_total, mut wins) = (0.0, 0.0, 0);
    let mut per_seed = Vec::new();
    for seed in 0..5u64 {
        let demos: Vec<Episode> = (0..2).map(|i| sim.scripted_demo(seed * 1000 + i)).collect();
        let augs = augment_demonstrations(&demos, &env, &policy, &seg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let rl_seed = RlConfig {
            eval_seed: rl.eval_seed + seed * 100,
            ..rl
        };
        let run = |with_aug: bool| {
            let mut buf = ReplayBuffer::new(env.clone(), None);
            buf.extend(demos.clone()).unwrap();
            if with_aug {
                buf.extend(augs.clone()).unwrap();
            }
            train_q(&buf, &rl_seed, &mut ChaCha8Rng::seed_from_u64(seed + 77)).unwrap().1
        };
        let (base, aug) = (run(false), run(true));
        let (b, a) = (base.final_success().unwrap(), aug.final_success().unwrap());
        base_total += b;
        aug_total += a;
        let (tb, ta) = (improvement_timestep(&base), improvement_timestep(&aug));
        let faster = match (ta, tb) {
            (Some(x), Some(y)) => x < y,
            (Some(_), None) => true,
            _ => false,
        };
        wins += faster as usize;
        let show = |t: Option<usize>| t.map_or("never".to_string(), |s| s.to_string());
        per_seed.push(format!("{b:.2}/{a:.2}@{}/{}", show(tb), show(ta)));
    }
    let (base_mean, aug_mean) = (base_total / 5.0, aug_total / 5.0);
    let gain = aug_mean - base_mean;
    outcome(
        gain >= 0.20 && wins >= 4,
        format!(
            "final success {base_mean:.2} without vs {aug_mean:.2} with augmentation (+{:.0} pp), \
             earlier improvement in {wins}/5 seeds [base/aug success @ base/aug step: {}]",
            gain * 100.0,
            per_seed.join(", ")
        ),
    )
}

fn criterion_9() -> Outcome {
    // (reward, next state, done) for each (state, action).
    let mdp = [[(0.0, 1usize, false), (0.2, 0, false)], [(0.0, 0, false), (1.0, 1, true)]];
    let gamma: f64 = 0.9;
    let mut oracle = [[0.0f64; 2]; 2];
    for _ in 0..10_000 {
        let prev = oracle;
        for s in 0..2 {
            for a in 0..2 {
                let (r, s2, done): (f64, usize, bool) = mdp[s][a];
                oracle[s][a] = r + if done { 0.0 } else { gamma * prev[s2][0].max(prev[s2][1]) };
            }
        }
    }
    let one_hot = |s: usize| if s == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
    let data: Vec<FeatTransition> = (0..4)
        .map(|i| {
            let (s, a) = (i / 2, i % 2);
            let (reward, s2, done) = mdp[s][a];
            FeatTransition {
                state: one_hot(s),
                action: a,
                reward,
                next_state: one_hot(s2),
                done,
            }
        })
        .collect();
    let cfg = RlConfig {
        gamma,
        learning_rate: 0.5,
        updates: 4_000,
        batch_size: 4,
        eval_interval: 4_000,
        bias: false,
        ..RlConfig::default()
    };
    let mut model = QModel::zeros(2, 2, false, cfg.features);
    fit(&mut model, &data, &cfg, &mut ChaCha8Rng::seed_from_u64(9), |_, _| Ok(())).unwrap();
    let err = (0..4)
        .map(|i| (model.q(&one_hot(i / 2), i % 2) - oracle[i / 2][i % 2]).abs())
        .fold(0.0, f64::max);
    outcome(err <= 1e-6, format!("max |Q − Q*| = {err:.1e}"))
}

/// The `mea` binary next to this test executable (`target/<profile>/mea`),
/// unless `MEA_BIN` points elsewhere.
fn cli_binary() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("MEA_BIN") {
        return Some(PathBuf::from(p));
    }
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let bin = dir.join(format!("mea{}", std::env::consts::EXE_SUFFIX));
    bin.exists().then_some(bin)
}

fn run_pipeline(bin: &Path, dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let quick = ["--set", "rl.updates=600", "--set", "rl.eval_interval=200", "--set", "rl.eval_rollouts=3"];
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("demo", vec!["--set".into(), "env.action_space=discrete".into(), "demo".into(), "--n".into(), "2".into(), "--seed".into(), "7".into(), "--out".into(), p("demos.jsonl"), "--csv".into(), p("demos.csv")]),
        ("segment", vec!["segment".into(), "--in".into(), p("demos.jsonl"), "--out".into(), p("segmented.jsonl")]),
        ("augment", vec!["augment".into(), "--in".into(), p("segmented.jsonl"), "--out".into(), p("aug.jsonl"), "--seed".into(), "3".into(), "--per-demo".into(), "20".into(), "--csv".into(), p("aug.csv")]),
        ("verify", vec!["verify".into(), "--gt".into(), p("segmented.jsonl"), "--aug".into(), p("aug.jsonl"), "--report".into(), p("verify.json")]),
        ("project", vec!["project".into(), "--in".into(), p("aug.jsonl"), "--out-dir".into(), p("pgm"), "--episode".into(), "0".into()]),
        ("train", quick.iter().map(|s| s.to_string()).chain(["train".into(), "--in".into(), p("aug.jsonl"), "--seed".into(), "5".into(), "--model".into(), p("model.json"), "--curve".into(), p("curve.csv"), "--svg".into(), p("curve.svg")]).collect()),
        ("eval", vec!["eval".into(), "--model".into(), p("model.json"), "--out".into(), p("eval.csv"), "--rollouts".into(), "5".into()]),
    ];
    let mut outputs = Vec::new();
    for (name, args) in steps {
        let out = Command::new(bin).args(&args).output().map_err(|e| format!("{name}: {e}"))?;
        if !out.status.success() {
            return Err(format!("{name} exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
        }
        outputs.push((format!("{name}:stdout"), out.stdout));
    }
    let mut files: Vec<PathBuf> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        outputs.push((rel, std::fs::read(&f).map_err(|e| e.to_string())?));
    }
    Ok(outputs)
}

fn criterion_10() -> Outcome {
    let Some(bin) = cli_binary() else {
        return outcome(false, "mea binary not found; build it with `cargo build -p mea-cli` or set MEA_BIN");
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = match (run_pipeline(&bin, a.path()), run_pipeline(&bin, b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e),
    };
    let names = |r: &[(String, Vec<u8>)]| r.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    if names(&ra) != names(&rb) {
        return outcome(false, "runs produced different sets of artifacts");
    }
    // Paths differ between the two runs, so stdout is compared after
    // substituting the run directory.
    let normalize = |bytes: &[u8], dir: &Path| {
        String::from_utf8_lossy(bytes)
            .replace(&*dir.to_string_lossy(), "<dir>")
            .into_bytes()
    };
    let differing: Vec<&str> = ra
        .iter()
        .zip(&rb)
        .filter(|((_, x), (_, y))| normalize(x, a.path()) != normalize(y, b.path()))
        .map(|((n, _), _)| n.as_str())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("7 subcommands, {} artifacts byte-identical across two runs", ra.len())
        } else {
            format!("differing outputs: {}", differing.join(", "))
        },
    )
}

#[test]
fn acceptance_criteria() {
    let secs = Duration::from_secs;
    let mut all = true;

    let t = Instant::now();
    let run = feasibility_run();
    let shared = t.elapsed();
    all &= report(1, "feasibility oracle", &criterion_1(&run), shared, secs(60));
    all &= report(2, "phase-boundary anchoring", &criterion_2(&run), shared, secs(60));

    let timed: [(usize, &str, fn() -> Outcome, Duration); 8] = [
        (3, "group-algebra laws", criterion_3, secs(1)),
        (4, "identity augmentation", criterion_4, secs(5)),
        (5, "projection equivariance", criterion_5, secs(5)),
        (6, "discrete closure and sampler calibration", criterion_6, secs(5)),
        (7, "isometric overlay", criterion_7, secs(60)),
        (8, "sampling-efficiency benchmark", criterion_8, secs(600)),
        (9, "tabular Q fixed point", criterion_9, secs(1)),
        (10, "CLI determinism", criterion_10, secs(300)),
    ];
    for (n, name, f, budget) in timed {
        let t = Instant::now();
        let o = f();
        all &= report(n, name, &o, t.elapsed(), budget);
    }
    assert!(all, "at least one acceptance criterion failed");
}
