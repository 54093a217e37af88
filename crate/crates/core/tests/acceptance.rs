//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p qnmarl-core --test acceptance -- 1 3 5` runs a subset.

mod common;

use std::time::Instant;

use qnmarl_core::marl::{ExperimentConfig, Trainer};
use qnmarl_core::qaoa::{mitigate_readout, parameter_shift_grad, zne_extrapolate, Ansatz, ConfusionMatrix, GradientMode, QaoaPolicy};
use qnmarl_core::quantum::{run_circuit, CostTable, Gate};
use qnmarl_core::report::{self, read_metrics, read_trajectories, write_metrics, RunConfig, PLOT_FILES};
use qnmarl_core::snn::{lif_step, Experience, LifConfig, LifState, NetShape, SpikingQNet};
use qnmarl_core::TrainRecord;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_gate(n: usize, rng: &mut ChaCha8Rng) -> Gate {
    let q = rng.random_range(0..n);
    let t = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    match rng.random_range(0..6) {
        0 => Gate::H(q),
        1 => Gate::Ry(q, t),
        2 => Gate::Rx(q, t),
        3 if n > 1 => {
            let target = (q + 1 + rng.random_range(0..n - 1)) % n;
            Gate::Cz { control: q, target }
        }
        4 => Gate::CostPhase { cost: CostTable::new((0..1 << n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap(), gamma: t },
        _ => Gate::ZRotation { mask: rng.random_range(1..1usize << n), angle: t },
    }
}

fn max_amplitude_error(a: &[num_complex::Complex64], b: &[num_complex::Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for k in 0..100 {
        // Raw circuits on one to three qubits.
        let n = 1 + k % 3;
        let gates: Vec<Gate> = (0..12).map(|_| random_gate(n, &mut rng)).collect();
        let fast = run_circuit(n, &gates).map_err(|e| e.to_string())?;
        worst = worst.max(max_amplitude_error(fast.amplitudes(), &common::dense_run(n, &gates)));

        // Planner states on three qubits, both ansatz families.
        let ansatz = if k % 2 == 0 { Ansatz::Qaoa } else { Ansatz::Pqc };
        let depth = 1 + k % 3;
        let params: Vec<f64> = (0..QaoaPolicy::param_count(3, depth, ansatz)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let policy = QaoaPolicy::new(3, depth, ansatz, params).map_err(|e| e.to_string())?;
        let angles: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..std::f64::consts::PI)).collect();
        let cost = CostTable::new((0..8).map(|_| rng.random_range(0.0..3.0)).collect()).unwrap();
        let fast = policy.build_state(&angles, &cost).map_err(|e| e.to_string())?;
        worst = worst.max(max_amplitude_error(fast.amplitudes(), &common::dense_policy_state(&policy, &angles, &cost)));
    }
    let secs = t0.elapsed().as_secs_f64();
    check(worst < 1e-10 && secs < 10.0, format!("max amplitude error {worst:.2e} over 200 circuits in {secs:.2} s"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(3..=6);
        let depth = rng.random_range(1..=3);
        let params: Vec<f64> = (0..2 * depth).map(|_| rng.random_range(-1.5..1.5)).collect();
        let policy = QaoaPolicy::new(n, depth, Ansatz::Qaoa, params.clone()).map_err(|e| e.to_string())?;
        let angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::PI)).collect();
        let values: Vec<f64> = (0..1 << n).map(|_| rng.random_range(0.0..3.0)).collect();
        let cost = CostTable::new(values.clone()).unwrap();
        let circuit = policy.bound_circuit(&angles, &cost);
        let objective = |p: &[f64]| (p.iter().zip(&values).map(|(a, b)| a * b).sum::<f64>(), values.clone());
        let shift = parameter_shift_grad(&policy, &circuit, objective, GradientMode::Exact, &mut rng).map_err(|e| e.to_string())?;
        let f = |theta: &[f64]| {
            let p = QaoaPolicy::new(n, depth, Ansatz::Qaoa, theta.to_vec()).unwrap();
            p.build_state(&angles, &cost).unwrap().expectation(&cost).unwrap()
        };
        let fd = common::finite_difference(f, &params, 1e-5);
        worst = worst.max(common::relative_error(&shift, &fd, 1e-6));
    }
    check(worst < 1e-4, format!("worst relative error {worst:.2e} over 50 instances"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut zne_worst = 0.0f64;
    for _ in 0..100 {
        let (a, b, c) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
        let e = |l: f64| a + b * l + c * l * l;
        let got = zne_extrapolate([e(1.0), e(2.0), e(3.0)]).map_err(|e| e.to_string())?;
        zne_worst = zne_worst.max((got - a).abs());
    }
    let mut readout_worst = 0.0f64;
    for k in 0..100 {
        let dim = 1 << (1 + k % 4);
        // Diagonally dominant column-stochastic matrix.
        let mut m = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>());
        for j in 0..dim {
            let s: f64 = m.column(j).sum();
            let keep = rng.random_range(0.7..0.95);
            for i in 0..dim {
                m[(i, j)] = (1.0 - keep) * m[(i, j)] / s + if i == j { keep } else { 0.0 };
            }
        }
        let mut truth: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let s: f64 = truth.iter().sum();
        truth.iter_mut().for_each(|p| *p /= s);
        let cm = ConfusionMatrix::new(m).map_err(|e| e.to_string())?;
        let observed = cm.apply(&truth);
        let back = mitigate_readout(&cm, &observed).map_err(|e| e.to_string())?;
        readout_worst = readout_worst.max(back.probs.iter().zip(&truth).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    check(
        zne_worst < 1e-9 && readout_worst < 1e-10,
        format!("ZNE worst error {zne_worst:.2e}; readout worst error {readout_worst:.2e} over 100 matrices"),
    )
}

fn lif_euler_error() -> f64 {
    let cfg = LifConfig::default();
    let mut worst = 0.0f64;
    for (u0, input) in [(0.0, 0.9), (0.5, 0.0), (0.95, 0.2), (0.0, 0.999)] {
        let mut state = LifState::new(1, &cfg);
        state.u[0] = u0;
        for t in 1..=100 {
            let (next, spikes) = lif_step(&state, &cfg, &[input]).unwrap();
            assert!(!spikes[0], "sub-threshold drive must not spike");
            state = next;
            let exact = input + (u0 - input) * (-(t as f64) * cfg.dt / cfg.tau_m).exp();
            worst = worst.max((state.u[0] - exact).abs());
        }
    }
    worst
}

struct Runs {
    full: Option<(Vec<TrainRecord>, f64)>,
    ci: Option<(Vec<TrainRecord>, f64)>,
}

fn ci_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.world.n_agents = 4;
    c.world.dims = [20, 20, 5];
    c.train.episodes = 60;
    c.train.epsilon_decay_episodes = 45;
    c
}

fn train(config: ExperimentConfig) -> Result<(Vec<TrainRecord>, f64), String> {
    let t0 = Instant::now();
    let mut trainer = Trainer::new(config).map_err(|e| e.to_string())?;
    trainer.train(|_, _, _| {}).map_err(|e| e.to_string())?;
    Ok((trainer.records().to_vec(), t0.elapsed().as_secs_f64()))
}

impl Runs {
    fn full(&mut self) -> Result<&(Vec<TrainRecord>, f64), String> {
        if self.full.is_none() {
            self.full = Some(train(ExperimentConfig::default())?);
        }
        Ok(self.full.as_ref().unwrap())
    }

    fn ci(&mut self) -> Result<&(Vec<TrainRecord>, f64), String> {
        if self.ci.is_none() {
            self.ci = Some(train(ci_config())?);
        }
        Ok(self.ci.as_ref().unwrap())
    }
}

fn criterion_4(runs: &mut Runs) -> Outcome {
    let err = lif_euler_error();
    let (records, _) = runs.full()?;
    let breaches: u64 = records.iter().map(|r| r.refractory_breaches).sum();
    check(
        err < 0.05 && breaches == 0,
        format!("Euler vs exponential max error {err:.4}; {breaches} refractory breaches over {} episodes", records.len()),
    )
}

fn toy_features(s: usize) -> Vec<f64> {
    if s == 0 {
        vec![1.0, 0.0, 1.0]
    } else {
        vec![0.0, 1.0, 1.0]
    }
}

/// Two states, two actions; action `a` moves to state `a` and pays +0.1 for
/// switching, −0.1 for staying. Optimal: always switch.
fn toy_mdp(seed: u64) -> Option<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = SpikingQNet::new(NetShape::new(3, 16, 2).unwrap(), LifConfig::default(), &mut rng).unwrap();
    let mut buf = Vec::new();
    let mut s = 0usize;
    for _ in 0..500 {
        let a = rng.random_range(0..2usize);
        let r = if a != s { 0.1 } else { -0.1 };
        buf.push(Experience {
            state: toy_features(s),
            plan: None,
            action: a,
            reward: r,
            next_state: toy_features(a),
            next_plan: None,
            next_mask: None,
            terminal: false,
        });
        s = a;
    }
    let greedy_optimal = |net: &SpikingQNet, rng: &mut ChaCha8Rng| {
        (0..2).all(|s| {
            let mut q = [0.0; 2];
            for _ in 0..32 {
                let x = net.encode(&toy_features(s), rng);
                let v = net.forward_q(&x, None).unwrap().0;
                q[0] += v[0];
                q[1] += v[1];
            }
            let best = if q[1] > q[0] { 1 } else { 0 };
            best != s
        })
    };
    for u in 1..=2000 {
        let batch: Vec<Experience> = (0..32).map(|_| buf[rng.random_range(0..buf.len())].clone()).collect();
        net.td_update(&batch, 0.5, 0.001, &mut rng).unwrap();
        if u % 50 == 0 {
            net.sync_target();
        }
        if u % 100 == 0 && greedy_optimal(&net, &mut rng) {
            return Some(u);
        }
    }
    None
}

fn criterion_5() -> Outcome {
    let t0 = Instant::now();
    let solved: Vec<Option<usize>> = (0..10).map(toy_mdp).collect();
    let n = solved.iter().filter(|s| s.is_some()).count();
    let secs = t0.elapsed().as_secs_f64();
    check(n >= 8 && secs < 120.0, format!("{n}/10 seeds greedy-optimal within 2000 updates {solved:?} in {secs:.1} s"))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn smoothed_kl(records: &[TrainRecord], episode: usize) -> f64 {
    let end = episode.min(records.len());
    mean(records[end.saturating_sub(10)..end].iter().map(|r| r.kl_nats))
}

fn criterion_6(runs: &mut Runs) -> Outcome {
    let delta = ExperimentConfig::default().train.delta_safety;
    let (full, full_secs) = runs.full()?.clone();
    let early = mean(full[..50].iter().map(|r| r.violation_rate));
    let late = mean(full[150..].iter().map(|r| r.violation_rate));
    let a = late <= 0.5 * early && late <= delta;
    let (kl20, kl200) = (smoothed_kl(&full, 20), smoothed_kl(&full, 200));
    let b = kl200 <= kl20;
    let min_entropy = full.iter().map(|r| r.spike_entropy).fold(f64::INFINITY, f64::min);
    let c = min_entropy >= 0.1;

    let (ci, ci_secs) = runs.ci()?.clone();
    let q = ci.len() / 4;
    let ci_early = mean(ci[..q].iter().map(|r| r.violation_rate));
    let ci_late = mean(ci[ci.len() - q..].iter().map(|r| r.violation_rate));
    let ci_ok = ci_late <= 0.5 * ci_early && ci_secs <= 300.0;
    check(
        a && b && c && ci_ok && full_secs <= 1800.0,
        format!(
            "(a) violation rate {early:.4} -> {late:.4} [{}]; (b) smoothed KL {kl20:.4} -> {kl200:.4} [{}]; (c) min entropy {min_entropy:.3} nats [{}]; \
             full run {full_secs:.0} s; CI violation rate {ci_early:.4} -> {ci_late:.4} in {ci_secs:.0} s [{}]",
            ok(a),
            ok(b),
            ok(c),
            ok(ci_ok)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn small_run_config(dir: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.experiment.world.n_agents = 3;
    c.experiment.world.dims = [10, 10, 3];
    c.experiment.world.n_nofly_zones = 2;
    c.experiment.world.n_targets = 4;
    c.experiment.world.max_steps = 20;
    c.experiment.train.episodes = 12;
    c.experiment.train.epsilon_decay_episodes = 8;
    c.experiment.train.eval_every = 6;
    c.experiment.train.eval_episodes = 2;
    c.report.out_dir = dir.to_path_buf();
    c
}

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        report::run(&small_run_config(d), |_| {}).map_err(|e| e.to_string())?;
    }
    let mut same = true;
    for f in ["metrics.csv", "trajectories.jsonl"] {
        let x = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(f)).map_err(|e| e.to_string())?;
        same &= x == y && !x.is_empty();
    }
    check(same, "metrics.csv and trajectories.jsonl byte-identical across two seeded runs".into())
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let cfg = small_run_config(dir);
    report::run(&cfg, |_| {}).map_err(|e| e.to_string())?;
    let err = |e: qnmarl_core::Error| e.to_string();

    let rows = read_metrics(&dir.join("metrics.csv")).map_err(err)?;
    let again = dir.join("metrics.again.csv");
    write_metrics(&again, &rows).map_err(err)?;
    let csv_ok = std::fs::read(dir.join("metrics.csv")).unwrap() == std::fs::read(&again).unwrap();

    let trajs = read_trajectories(&dir.join("trajectories.jsonl")).map_err(err)?;
    let lines: Vec<String> = trajs.iter().map(|t| report::trajectory_json(t).unwrap()).collect();
    let jsonl_ok = std::fs::read_to_string(dir.join("trajectories.jsonl")).unwrap() == lines.iter().map(|l| format!("{l}\n")).collect::<String>();

    let text = std::fs::read_to_string(dir.join("checkpoint.json")).unwrap();
    let ckpt = report::load_checkpoint(&dir.join("checkpoint.json")).map_err(err)?;
    let ckpt_ok = ckpt.to_json().map_err(err)? == text;

    let world: qnmarl_core::env::LayoutDocument = serde_json::from_str(&std::fs::read_to_string(dir.join("world.json")).unwrap()).map_err(|e| e.to_string())?;
    let world_ok = serde_json::to_string(&world).unwrap() == std::fs::read_to_string(dir.join("world.json")).unwrap();

    let mut svg_ok = true;
    let mut notes = Vec::new();
    for name in PLOT_FILES {
        let text = std::fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let doc = roxmltree::Document::parse(&text).map_err(|e| format!("{name}: {e}"))?;
        let polylines: Vec<usize> = doc
            .descendants()
            .filter(|n| n.has_tag_name("polyline"))
            .map(|n| n.attribute("points").unwrap_or("").split_whitespace().count())
            .collect();
        let good = match name {
            "trajectories.svg" => {
                let last: Vec<_> = trajs.iter().filter(|t| t.episode == rows.len()).collect();
                polylines.len() == last.len() && last.iter().zip(&polylines).all(|(t, &p)| t.path.len() == p)
            }
            "heatmap.svg" => {
                let cells = doc.descendants().filter(|n| n.has_tag_name("rect") && n.attribute("data-count").is_some()).count();
                cells == cfg.experiment.world.dims[0] * cfg.experiment.world.dims[1]
            }
            _ => polylines == vec![rows.len()],
        };
        if !good {
            notes.push(name);
        }
        svg_ok &= good;
    }
    check(
        csv_ok && jsonl_ok && ckpt_ok && world_ok && svg_ok,
        format!(
            "csv {} jsonl {} checkpoint {} world {} svg {}{}",
            ok(csv_ok),
            ok(jsonl_ok),
            ok(ckpt_ok),
            ok(world_ok),
            ok(svg_ok),
            if notes.is_empty() { String::new() } else { format!(" (bad point counts: {notes:?})") }
        ),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let mut runs = Runs { full: None, ci: None };
    let names = [
        "quantum oracle equivalence",
        "parameter-shift gradient",
        "mitigation exactness",
        "LIF fidelity",
        "SNN toy MDP",
        "desk-scale trends",
        "determinism",
        "artifact integrity",
    ];
    let mut failed = 0;
    for (i, name) in names.iter().enumerate() {
        let k = i + 1;
        if !run(k) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = match k {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(&mut runs),
            5 => criterion_5(),
            6 => criterion_6(&mut runs),
            7 => criterion_7(),
            _ => criterion_8(),
        };
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {k} {name}: {d} ({secs:.1} s)"),
            Err(d) => {
                failed += 1;
                println!("FAIL {k} {name}: {d} ({secs:.1} s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
