//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Positional arguments select criteria by number (`-- 1 7 9`); without any,
//! all nine run. Criteria 5 and 6 train real models and take most of the time.

use std::cell::RefCell;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use collabdqn::dataset::{self, Split};
use collabdqn::parallel;
use collabdqn_core::env::{self, Landmark, LandmarkSet, Observation, Scan, ScaleLadder, Termination, Volume};
use collabdqn_core::eval::{self, run_test_episode, EvalConfig, QFunction};
use collabdqn_core::nn::{grad_check, jitter_off_kinks, GradCheckConfig, Layer, LayerKind, LayerParams, Network};
use collabdqn_core::qmodel::{Architecture, CollabQNet, ParamCount};
use collabdqn_core::rng::{self, Rng};
use collabdqn_core::synth::SynthConfig;
use collabdqn_core::trainer::{bellman_targets, TrainConfig, Trainer, Transition};
use collabdqn_core::{Result as CoreResult, Tensor, ACTIONS};
use rand::Rng as _;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", gradient_suite),
        (2, "Bellman oracle", bellman_oracle),
        (3, "freezing isolation", freezing_isolation),
        (4, "parameter-sharing arithmetic", sharing_arithmetic),
        (5, "desk-scale learning", desk_scale_learning),
        (6, "collaboration non-inferiority", collaboration),
        (7, "termination guarantee", termination),
        (8, "determinism", determinism),
        (9, "evaluation protocol", protocol),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

// ---------------------------------------------------------------- 1

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0f32..1.0)).unwrap()
}

fn random_layer(kind: LayerKind, seed: u64) -> LayerParams {
    let mut r = rng::seeded(seed);
    let mut p = LayerParams::he_uniform(kind, &mut r).unwrap();
    for b in p.bias.data_mut() {
        *b = r.random_range(-0.1f32..0.1);
    }
    p
}

fn dense(i: usize, o: usize, seed: u64) -> Layer {
    Layer::Dense(random_layer(LayerKind::Dense { in_width: i, out_width: o }, seed))
}

fn conv(i: usize, o: usize, k: usize, p: usize, seed: u64) -> Layer {
    Layer::Conv3d(random_layer(
        LayerKind::Conv3d {
            in_channels: i,
            out_channels: o,
            kernel: k,
            padding: p,
        },
        seed,
    ))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut relu_input = random_tensor(&[2, 50], 6);
    jitter_off_kinks(&mut relu_input, 1e-2);
    let reference = CollabQNet::build(1, 15, &Architecture::default(), 21).unwrap();
    let mut reference_layers = reference.trunk().layers.clone();
    reference_layers.extend(reference.head(0).layers.iter().cloned());
    let mut reference_input = random_tensor(&[1, 4, 15, 15, 15], 22);
    for v in reference_input.data_mut() {
        *v = 0.5 * (*v + 1.0);
    }
    let sampled = GradCheckConfig {
        step: 1e-5,
        samples_per_tensor: Some(12),
        ..GradCheckConfig::default()
    };
    let cases = [
        ("dense", Network::new(vec![dense(8, 4, 1)]), random_tensor(&[3, 8], 2), GradCheckConfig::default()),
        ("relu", Network::new(vec![Layer::Relu]), relu_input, GradCheckConfig::default()),
        ("conv3d", Network::new(vec![conv(2, 3, 3, 1, 7)]), random_tensor(&[2, 2, 4, 5, 3], 8), GradCheckConfig::default()),
        ("maxpool3d", Network::new(vec![Layer::MaxPool3d { window: 2 }]), random_tensor(&[1, 2, 4, 4, 5], 9), GradCheckConfig::default()),
        (
            "flatten stack",
            Network::new(vec![conv(1, 2, 2, 0, 10), Layer::Relu, Layer::Flatten, dense(54, 3, 11)]),
            random_tensor(&[2, 1, 4, 4, 4], 12),
            GradCheckConfig::default(),
        ),
        ("reference network", Network::new(reference_layers), reference_input, sampled),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (name, net, input, cfg) in &cases {
        let report = grad_check(net, input, cfg).map_err(|e| format!("{name}: {e}"))?;
        ensure!(report.passed(), "{name}: max relative error {:.2e}", report.max_rel_error());
        for l in &report.layers {
            ensure!(l.skipped * 2 < l.checked, "{name}: {} of {} entries skipped in {}", l.skipped, l.checked, l.label);
            checked += l.checked;
        }
        worst = worst.max(report.max_rel_error());
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{checked} entries, max relative error {worst:.2e} < 1e-3, {:.1}s < 60s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 2

fn bellman_oracle() -> Outcome {
    let mut r = rng::seeded(77);
    let mut total = 0;
    for case in 0..2000 {
        let b = 1 + case % 64;
        let gamma = if case % 10 == 0 { [0.0, 1.0, 0.9][case % 3] } else { r.random_range(0.0f32..=1.0) };
        let rewards: Vec<f32> = (0..b).map(|_| r.random_range(-5.0f32..5.0)).collect();
        let terminals: Vec<bool> = (0..b).map(|_| r.random_bool(0.3)).collect();
        // Coarse values force ties between actions.
        let q = Tensor::from_fn(&[b, ACTIONS], |_| {
            if case % 4 == 0 {
                r.random_range(-2i32..=2) as f32
            } else {
                r.random_range(-10.0f32..10.0)
            }
        })
        .unwrap();
        let got = bellman_targets(&rewards, &terminals, &q, gamma).map_err(|e| e.to_string())?;
        ensure!(got.len() == b, "case {case}: {} targets for {b} transitions", got.len());
        for i in 0..b {
            let expected = if terminals[i] {
                rewards[i]
            } else {
                let row = &q.data()[i * ACTIONS..(i + 1) * ACTIONS];
                let mut best = row[0];
                for &v in &row[1..] {
                    if v > best {
                        best = v;
                    }
                }
                rewards[i] + gamma * best
            };
            ensure!(got[i].to_bits() == expected.to_bits(), "case {case} row {i}: {} vs {expected}", got[i]);
            total += 1;
        }
    }
    Ok(format!("2000 batches of 1..=64, {total} targets bitwise equal to the scalar loop"))
}

// ---------------------------------------------------------------- 3

fn tiny_arch() -> Architecture {
    Architecture {
        conv_channels: vec![2, 3],
        kernel: 3,
        padding: 1,
        pool_window: 2,
        head_hidden: vec![6],
    }
}

fn random_scans(n: usize, k: usize, shape: [usize; 3], seed: u64) -> Vec<Scan> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|i| {
            let len = shape.iter().product();
            let v = Volume::new(shape, [1.0, 1.5, 0.8], (0..len).map(|_| r.random::<f32>()).collect()).unwrap();
            let marks = (0..k)
                .map(|j| Landmark {
                    name: format!("L{j}"),
                    position: shape.map(|e| r.random_range(1.0..(e - 2) as f64)),
                })
                .collect();
            Scan::new(format!("s{i}"), v, LandmarkSet::new(marks).unwrap()).unwrap()
        })
        .collect()
}

fn names(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("L{j}")).collect()
}

fn freezing_isolation() -> Outcome {
    let data = random_scans(3, 3, [14, 12, 13], 1);
    let mut cfg = TrainConfig {
        arch: tiny_arch(),
        replay_capacity: 500,
        warmup: 40,
        batch_size: 8,
        target_sync: 7,
        max_episode_steps: 30,
        steps: 60,
        seed: 2,
        ..TrainConfig::default()
    };
    cfg.env.roi_extent = 5;
    cfg.optimizer.learning_rate = 1e-3;
    let mut t = Trainer::new(&data, &names(3), cfg).map_err(|e| e.to_string())?;
    t.warmup().map_err(|e| e.to_string())?;
    t.train_batch_step(&[false; 3]).map_err(|e| e.to_string())?;
    let snapshot = |t: &Trainer| -> Vec<(String, Vec<u32>)> { t.net().param_names().into_iter().zip(t.net().params()).map(|(n, p)| (n, bits(p))).collect() };
    let buffer = |t: &Trainer| -> Vec<Transition> { t.replay().iter(1).copied().collect() };
    let before = snapshot(&t);
    let buffer_before = buffer(&t);
    let steps = 5;
    for _ in 0..steps {
        let losses = t.train_batch_step(&[false, true, false]).map_err(|e| e.to_string())?;
        ensure!(losses[1].is_none() && losses[0].is_some() && losses[2].is_some(), "losses {losses:?}");
    }
    let after = snapshot(&t);
    let mut frozen_tensors = 0;
    let mut moved = 0;
    for ((name, a), (_, b)) in before.iter().zip(&after) {
        if name.starts_with("head1.") {
            ensure!(a == b, "{name} changed while frozen");
            frozen_tensors += 1;
        } else {
            ensure!(a != b, "{name} did not change");
            moved += 1;
        }
    }
    ensure!(buffer(&t) == buffer_before, "frozen agent's buffer changed");
    Ok(format!(
        "{steps} steps with the second of 3 agents frozen: {frozen_tensors} head tensors and {} transitions bitwise unchanged, {moved} trunk/other-head tensors changed",
        buffer_before.len()
    ))
}

// ---------------------------------------------------------------- 4

fn sharing_arithmetic() -> Outcome {
    let reference = Architecture::default().param_count(15).map_err(|e| e.to_string())?;
    let net = CollabQNet::build(2, 15, &Architecture::default(), 0).map_err(|e| e.to_string())?;
    let stored: usize = net.params().iter().map(|t| t.len()).sum();
    ensure!(stored == reference.total(2), "network holds {stored} parameters, count says {}", reference.total(2));
    let mut r = rng::seeded(4);
    let mut counts = vec![reference, ParamCount { trunk: 1, per_head: 1 }];
    counts.extend((0..200).map(|_| ParamCount {
        trunk: r.random_range(1..2_000_000),
        per_head: r.random_range(1..2_000_000),
    }));
    for c in &counts {
        for k in [1usize, 2, 3, 5] {
            let closed = (k - 1) as f64 * c.trunk as f64 / (k as f64 * (c.trunk + c.per_head) as f64);
            let got = c.reduction_ratio(k);
            ensure!((got - closed).abs() <= 1e-12, "{c:?} K={k}: {got} vs {closed}");
        }
    }
    Ok(format!(
        "closed form holds for K in {{1,2,3,5}} on {} counts; reference net (trunk {}, head {}) K=2 ratio {:.4} ({:.1}%), versus the ~5% qualitative figure",
        counts.len(),
        reference.trunk,
        reference.per_head,
        reference.reduction_ratio(2),
        100.0 * reference.reduction_ratio(2)
    ))
}

// ---------------------------------------------------------------- 5 and 6

const SEEDS: u64 = 5;
const STEPS: u64 = 4000;
const LANDMARKS: [&str; 2] = ["L0", "L1"];

struct Data {
    train: Vec<Scan>,
    test: Vec<Scan>,
    _dir: tempfile::TempDir,
}

fn data() -> &'static Data {
    static DATA: OnceLock<Data> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        let workers = parallel::worker_count(false).unwrap();
        dataset::generate(&root, &SynthConfig::default(), 40, 10, false, workers).unwrap();
        Data {
            train: dataset::load_split(&root, Split::Train, workers).unwrap(),
            test: dataset::load_split(&root, Split::Test, workers).unwrap(),
            _dir: dir,
        }
    })
}

fn learning_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig {
        batch_size: 16,
        update_every: 4,
        steps: STEPS,
        target_sync: (STEPS / 10).clamp(100, 2500),
        seed,
        ..TrainConfig::default()
    };
    c.arch.conv_channels = vec![8, 16, 16];
    c.optimizer.learning_rate = 5e-4;
    c
}

struct Run {
    /// Mean test error per landmark, in mm.
    errors: Vec<f64>,
    never_move: Vec<f64>,
    params: usize,
    elapsed: Duration,
}

fn train_and_evaluate(landmarks: &[String], seed: u64) -> Run {
    let d = data();
    let start = Instant::now();
    let cfg = learning_config(seed);
    let mut t = Trainer::new(&d.train, landmarks, cfg.clone()).unwrap();
    t.train(|_, _| Ok(())).unwrap();
    let elapsed = start.elapsed();
    let net = t.into_net();
    let workers = parallel::worker_count(false).unwrap();
    let eval_cfg = EvalConfig {
        env: cfg.env.clone(),
        max_frames: 500,
    };
    let report = parallel::evaluate(&net, &d.test, landmarks, &eval_cfg, workers).unwrap();
    let still = parallel::evaluate(&net, &d.test, landmarks, &EvalConfig { max_frames: 0, ..eval_cfg }, workers).unwrap();
    let run = Run {
        errors: report.landmarks.iter().map(|l| l.stats.mean).collect(),
        never_move: still.landmarks.iter().map(|l| l.stats.mean).collect(),
        params: net.params().iter().map(|t| t.len()).sum(),
        elapsed,
    };
    eprintln!(
        "  seed {seed} {landmarks:?}: error {:.2?} mm, never-move {:.2?} mm, trained in {:.0}s",
        run.errors,
        run.never_move,
        elapsed.as_secs_f64()
    );
    run
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn collab_runs() -> &'static [Run] {
    static RUNS: OnceLock<Vec<Run>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let all: Vec<String> = LANDMARKS.iter().map(|s| s.to_string()).collect();
        (0..SEEDS).map(|seed| train_and_evaluate(&all, seed)).collect()
    })
}

fn single_runs() -> &'static [[Run; 2]] {
    static RUNS: OnceLock<Vec<[Run; 2]>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..SEEDS)
            .map(|seed| LANDMARKS.map(|l| train_and_evaluate(&[l.to_string()], seed)))
            .collect()
    })
}

fn desk_scale_learning() -> Outcome {
    let runs = collab_runs();
    let spacing = data().test[0].volume.spacing();
    ensure!(spacing == [1.0; 3], "voxel spacing {spacing:?} is not 1 mm");
    let mut good = 0;
    let mut lines = Vec::new();
    for (seed, run) in runs.iter().enumerate() {
        let (err, base) = (mean(&run.errors), mean(&run.never_move));
        let ok = err <= 4.0 && err <= 0.25 * base && run.elapsed < Duration::from_secs(30 * 60);
        good += ok as usize;
        lines.push(format!("seed {seed}: {err:.2} vs never-move {base:.2}{}", if ok { "" } else { " (miss)" }));
    }
    let detail = format!("{STEPS} steps/run, {good}/{SEEDS} seeds at <= 4 voxels and <= 25% of never-move; {}", lines.join(", "));
    ensure!(good >= 4, "{detail}");
    Ok(detail)
}

fn collaboration() -> Outcome {
    let collab = collab_runs();
    let single = single_runs();
    let collab_mean = mean(&collab.iter().map(|r| mean(&r.errors)).collect::<Vec<_>>());
    let single_mean = mean(&single.iter().map(|[a, b]| 0.5 * (a.errors[0] + b.errors[0])).collect::<Vec<_>>());
    let (shared, separate) = (collab[0].params, single[0][0].params + single[0][1].params);
    let detail = format!(
        "collab {collab_mean:.2} mm vs two single-agent nets {single_mean:.2} mm (ratio {:.3}, limit 1.10); parameters {shared} vs {separate}",
        collab_mean / single_mean
    );
    ensure!(collab_mean <= 1.10 * single_mean && shared < separate, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 7

struct RandomPolicy {
    agents: usize,
    roi: usize,
    rng: RefCell<Rng>,
}

impl QFunction for RandomPolicy {
    fn agent_count(&self) -> usize {
        self.agents
    }

    fn roi_extent(&self) -> usize {
        self.roi
    }

    fn q_values(&self, pairs: &[(usize, &Observation)]) -> CoreResult<Vec<[f32; ACTIONS]>> {
        let mut r = self.rng.borrow_mut();
        Ok(pairs.iter().map(|_| std::array::from_fn(|_| r.random::<f32>())).collect())
    }
}

fn termination() -> Outcome {
    let mut r = rng::seeded(7);
    let ladders = [vec![1], vec![2, 1], vec![3, 2, 1], vec![4, 2, 1]];
    let (mut oscillating, mut exhausted, mut reduced) = (0, 0, 0);
    for episode in 0..1000u64 {
        let shape = [0; 3].map(|_| r.random_range(6..28));
        let ladder = ladders[episode as usize % ladders.len()].clone();
        let k = r.random_range(1..=3);
        let scan = random_scans(1, k, shape, 1000 + episode).pop().unwrap();
        let targets = scan.targets(&names(k)).map_err(|e| e.to_string())?;
        let cfg = EvalConfig {
            env: env::EnvConfig {
                roi_extent: 5,
                ladder: ScaleLadder::new(ladder.clone()).unwrap(),
            },
            max_frames: r.random_range(0..200),
        };
        let policy = RandomPolicy {
            agents: k,
            roi: 5,
            rng: RefCell::new(rng::seeded(episode)),
        };
        let start = shape.map(|e| r.random_range(0..e as i64));
        for o in run_test_episode(&policy, &scan, &targets, start, &cfg).map_err(|e| e.to_string())? {
            ensure!(o.steps <= cfg.max_frames, "episode {episode}: {} steps over a budget of {}", o.steps, cfg.max_frames);
            ensure!(o.final_scale == ladder[o.scale_reductions], "episode {episode}: scale {} after {} reductions", o.final_scale, o.scale_reductions);
            reduced += o.scale_reductions;
            match o.termination {
                Termination::Oscillating => {
                    oscillating += 1;
                    ensure!(o.final_scale == 1 && o.scale_reductions == ladder.len() - 1, "episode {episode}: oscillation ended at scale {}", o.final_scale);
                }
                Termination::FrameBudgetExhausted => {
                    exhausted += 1;
                    ensure!(o.steps == cfg.max_frames, "episode {episode}: budget end after {} of {}", o.steps, cfg.max_frames);
                }
                other => return Err(format!("episode {episode}: unexpected termination {other:?}")),
            }
        }
    }
    ensure!(oscillating > 100, "only {oscillating} oscillation endings");
    Ok(format!("1000 episodes: {oscillating} oscillation and {exhausted} budget endings, {reduced} scale reductions, all within budget"))
}

// ---------------------------------------------------------------- 8

const PIPELINE: &str = r#"{
  "generate": {"train_count": 3, "test_count": 2},
  "synth": {"shape": [24, 24, 24]},
  "train": {
    "env": {"roi_extent": 7},
    "arch": {"conv_channels": [3, 4], "head_hidden": [16]},
    "warmup": 60,
    "replay_capacity": 1000,
    "batch_size": 8,
    "steps": 5000,
    "episodes": 6,
    "max_episode_steps": 40,
    "target_sync": 25
  },
  "evaluate": {"max_frames": 60, "format": "csv"}
}"#;

fn pipeline(dir: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    std::fs::write(dir.join("run.json"), PIPELINE).map_err(|e| e.to_string())?;
    for cmd in ["generate", "train", "evaluate"] {
        let out = Command::new(env!("CARGO_BIN_EXE_collabdqn"))
            .current_dir(dir)
            .args(["--config", "run.json", "--deterministic", "--seed", "31", cmd])
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |p: &str| std::fs::read(dir.join(p)).map_err(|e| format!("{p}: {e}"));
    Ok((read("run/model.ckpt")?, read("run/report/report.csv")?))
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    ensure!(first.0 == second.0, "checkpoints differ");
    ensure!(first.1 == second.1, "CSV reports differ");
    Ok(format!("checkpoint ({} bytes) and CSV ({} bytes) byte-identical across two pipelines", first.0.len(), first.1.len()))
}

// ---------------------------------------------------------------- 9

fn protocol() -> Outcome {
    let mut r = rng::seeded(9);
    for _ in 0..100 {
        let shape = [0; 3].map(|_| r.random_range(4..400));
        let grid = env::start_grid(shape);
        ensure!(grid.len() == 19, "{shape:?}: {} points", grid.len());
        let mut distinct = grid.clone();
        distinct.sort();
        distinct.dedup();
        ensure!(distinct.len() == 19, "{shape:?}: repeated points");
        for p in &grid {
            ensure!((0..3).all(|a| (0..shape[a] as i64).contains(&p[a])), "{shape:?}: {p:?} outside");
        }
    }
    let mut cfg = EvalConfig {
        max_frames: 20,
        ..EvalConfig::default()
    };
    cfg.env.roi_extent = 5;
    let mut cases = 0;
    for k in 1..=3 {
        for volumes in 1..=3 {
            let scans = random_scans(volumes, k, [13, 11, 12], (10 * k + volumes) as u64);
            let net = CollabQNet::build(k, 5, &tiny_arch(), k as u64).map_err(|e| e.to_string())?;
            let report = eval::evaluate(&net, &scans, &names(k), &cfg).map_err(|e| e.to_string())?;
            ensure!(report.episodes.len() == volumes * 19 * k, "K={k}, {volumes} volumes: {} episodes", report.episodes.len());
            for l in &report.landmarks {
                let n = report.episodes.iter().filter(|e| e.landmark == l.name).count();
                ensure!(n == volumes * 19, "{}: {n} episodes", l.name);
                ensure!(l.per_volume.len() == volumes, "{}: {} volume rows", l.name, l.per_volume.len());
            }
            cases += 1;
        }
    }
    Ok(format!("19 distinct in-bounds starts for 100 random shapes; episode count = volumes x 19 x K in {cases} evaluations"))
}
