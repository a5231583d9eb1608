//! Acceptance gate. Runs every criterion in turn, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.
//!
//! The full learning criteria (6, 7, 9) train on the default Cart-Pole setup
//! and take the bulk of the runtime; everything else finishes in seconds.
//! `ACCEPTANCE_ONLY=1,4,5` restricts the run to a subset; criterion 9 reuses
//! the agents trained by 6 and criterion 8 the logs written by 7, so those
//! prerequisites run whenever their dependants are selected.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use efontl::agents::{ensemble_uncertainty, DuelingQNet, QArch};
use efontl::envs::Team;
use efontl::harness::{
    run_with_threads, sarnd_demo, save_agents, ExperimentConfig, Mode, RunOutput,
};
use efontl::nn::{Conv1x1, Dense, Layer, Matrix, Network};
use efontl::replay::{Origin, PrioritizedReplay, PriorityConfig, Transition};
use efontl::transfer::{
    hdc_indices, lec_indices, rdc_indices, select_source_bp, select_source_ubar,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let scratch = scratch.path();
    let mut selected: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    if let Some(sel) = selected.as_mut() {
        for (dependant, prerequisite) in [(9, 6), (8, 7)] {
            if sel.contains(&dependant) {
                sel.insert(prerequisite);
            }
        }
    }
    let mut failed = Vec::new();
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            println!("criterion {id:>2} SKIP {name}");
            return;
        }
        let start = Instant::now();
        let v = f();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {tag} {name}: {} [{:.1}s]",
            v.detail,
            start.elapsed().as_secs_f64()
        );
        std::io::stdout().flush().ok();
        if !v.pass {
            failed.push(id);
        }
    };

    report(1, "sa-RND sensitivity", &mut || sensitivity(scratch));
    report(2, "filter oracles", &mut filter_oracles);
    report(3, "source-selection oracles", &mut source_selection);
    report(4, "gradient fidelity", &mut gradient_fidelity);
    report(5, "prioritized replay distribution", &mut per_distribution);
    report(10, "determinism", &mut || determinism(scratch));
    let mut jury = Vec::new();
    report(6, "Cart-Pole learning smoke test", &mut || {
        smoke_test(scratch, &mut jury)
    });
    report(9, "baseline degeneracies", &mut || degeneracies(&jury));
    let mut cartpole_runs = Vec::new();
    report(7, "EF-OnTL non-degradation", &mut || {
        non_degradation(scratch, &mut cartpole_runs)
    });
    report(8, "protocol fidelity", &mut || {
        protocol_fidelity(scratch, &cartpole_runs)
    });

    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- criterion 1

fn sensitivity(dir: &Path) -> Verdict {
    let start = Instant::now();
    let mut spikes = 0;
    let mut second_ok = true;
    let mut rnd_ok = true;
    let mut notes = Vec::new();
    for seed in 0..5 {
        let trace = match sarnd_demo(&dir.join(format!("sarnd_{seed}.csv")), seed) {
            Ok(t) => t,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        let [(rnd_first, sa_first), (_, sa_second)] = trace.jumps(20);
        let (s1, s2, r1) = (sa_first.sigmas(), sa_second.sigmas(), rnd_first.sigmas());
        if s1 >= 3.0 {
            spikes += 1;
        }
        if s1 >= 3.0 && s2 >= 3.0 && s2 >= s1 {
            second_ok = false;
        }
        if r1 >= 1.5 {
            rnd_ok = false;
        }
        notes.push(format!("{s1:.1}/{s2:.1}/{r1:.1}"));
    }
    let fast = start.elapsed() < Duration::from_secs(60);
    verdict(
        spikes >= 4 && second_ok && rnd_ok && fast,
        format!(
            "{spikes}/5 seeds spike >=3sd; sigmas sa@250/sa@275/rnd@250 per seed: {}",
            notes.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn oracle_minmax(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter()
        .map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 })
        .collect()
}

/// Full sort by descending key, ties by position.
fn oracle_top(keys: &[f64], b: usize) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = keys.iter().cloned().zip(0..).collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    pairs.into_iter().take(b).map(|p| p.1).collect()
}

fn synthetic_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // coarse grids produce plenty of exact ties
    let levels: f64 = [4.0, 16.0, 1e6][rng.gen_range(0..3)];
    let scale = rng.gen_range(0.01..100.0);
    (0..n)
        .map(|_| (rng.gen_range(-1.0..1.0) * levels).round() / levels * scale)
        .collect()
}

fn filter_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..200 {
        let n = rng.gen_range(1..=1000);
        let b = rng.gen_range(0..=n + 20);
        let delta = synthetic_values(&mut rng, n);
        let surprise: Vec<f64> = synthetic_values(&mut rng, n)
            .iter()
            .map(|v| v * v)
            .collect();

        if hdc_indices(&delta, b) != oracle_top(&delta, b) {
            return verdict(false, format!("HdC mismatch on buffer {case}"));
        }

        let mut sorted = delta.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let above: BTreeSet<usize> = (0..n).filter(|&i| delta[i] > median).collect();
        let picked = rdc_indices(&delta, b, &mut rng);
        let unique: BTreeSet<usize> = picked.iter().cloned().collect();
        if unique.len() != picked.len()
            || !unique.is_subset(&above)
            || picked.len() != b.min(above.len())
        {
            return verdict(
                false,
                format!("RdC outside the above-median set on buffer {case}"),
            );
        }

        let dm = oracle_minmax(&delta);
        let sm = oracle_minmax(&surprise);
        let scores: Vec<f64> = dm.iter().zip(&sm).map(|(a, c)| a + c).collect();
        if lec_indices(&delta, &surprise, b) != oracle_top(&scores, b) {
            return verdict(false, format!("LEC mismatch on buffer {case}"));
        }
    }
    verdict(true, "200 buffers: HdC and LEC equal the full-sort oracle, RdC within the strict-above-median set")
}

// ---------------------------------------------------------------- criterion 3

fn brute_argmin(v: &[Option<f64>]) -> Option<usize> {
    let best = v.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    v.iter().position(|x| *x == Some(best))
}

fn brute_bp(histories: &[Vec<f64>], window: usize) -> Option<usize> {
    let means: Vec<Option<f64>> = histories
        .iter()
        .map(|h| {
            let w = &h[h.len().saturating_sub(window)..];
            (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64)
        })
        .collect();
    let best = means
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    means.iter().position(|m| *m == Some(best))
}

fn source_selection() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..500 {
        let n = rng.gen_range(1..=12);
        let means: Vec<Option<f64>> = (0..n)
            .map(|_| rng.gen_bool(0.9).then(|| rng.gen_range(0..40) as f64 / 8.0))
            .collect();
        let got = select_source_ubar(&means);
        if got != brute_argmin(&means) {
            return verdict(false, format!("U_BAR mismatch on set {case}"));
        }
        let c = rng.gen_range(0.01..100.0);
        let scaled: Vec<Option<f64>> = means.iter().map(|m| m.map(|v| v * c)).collect();
        if select_source_ubar(&scaled) != got {
            return verdict(false, format!("U_BAR not scale invariant on set {case}"));
        }

        // integer returns, as Cart-Pole produces
        let histories: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let len = rng.gen_range(0..300);
                (0..len).map(|_| rng.gen_range(0..12) as f64).collect()
            })
            .collect();
        let window = rng.gen_range(1..=250);
        let refs: Vec<&[f64]> = histories.iter().map(|h| &h[..]).collect();
        let got = select_source_bp(&refs, window);
        if got != brute_bp(&histories, window) {
            return verdict(false, format!("BP mismatch on set {case}"));
        }
        let c = 2f64.powi(rng.gen_range(-20..20));
        let scaled: Vec<Vec<f64>> = histories
            .iter()
            .map(|h| h.iter().map(|v| v * c).collect())
            .collect();
        let srefs: Vec<&[f64]> = scaled.iter().map(|h| &h[..]).collect();
        if select_source_bp(&srefs, window) != got {
            return verdict(false, format!("BP not scale invariant on set {case}"));
        }
    }
    verdict(
        true,
        "500 sets: both selectors equal brute force and are scale invariant",
    )
}

// ---------------------------------------------------------------- criterion 4

const FD_EPS: f64 = 1e-5;

/// Relative error with a floor on the denominator so that gradients that are
/// zero up to rounding do not dominate.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

fn jitter(params: Vec<&mut [f64]>, rng: &mut ChaCha8Rng, scale: f64) {
    for p in params {
        p.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
}

/// Parameter coordinates to probe: all of them, or `limit` random ones.
fn coordinates(
    shapes: &[usize],
    limit: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = shapes
        .iter()
        .enumerate()
        .flat_map(|(t, &len)| (0..len).map(move |i| (t, i)))
        .collect();
    if let Some(k) = limit {
        all.shuffle(rng);
        all.truncate(k);
    }
    all
}

fn proj_objective(outputs: &[Matrix], proj: &[Matrix]) -> f64 {
    outputs
        .iter()
        .zip(proj)
        .map(|(o, p)| {
            o.as_slice()
                .iter()
                .zip(p.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum()
}

fn network_fd(net: &mut Network, x: &Matrix, rng: &mut ChaCha8Rng, limit: Option<usize>) -> f64 {
    let proj: Vec<Matrix> = net
        .output_dims()
        .iter()
        .map(|&d| random_matrix(rng, x.rows(), d, 1.0))
        .collect();
    net.forward_train(x).unwrap();
    let analytic = net.backward(&proj).unwrap();
    let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut worst: f64 = 0.0;
    for (t, i) in coordinates(&shapes, limit, rng) {
        let orig = net.params()[t][i];
        net.params_mut()[t][i] = orig + FD_EPS;
        let up = proj_objective(&net.forward(x).unwrap(), &proj);
        net.params_mut()[t][i] = orig - FD_EPS;
        let down = proj_objective(&net.forward(x).unwrap(), &proj);
        net.params_mut()[t][i] = orig;
        worst = worst.max(rel_err(analytic.0[t][i], (up - down) / (2.0 * FD_EPS)));
    }
    worst
}

fn dueling_fd(q: &mut DuelingQNet, x: &Matrix, rng: &mut ChaCha8Rng, limit: Option<usize>) -> f64 {
    let proj: Vec<Matrix> = (0..q.heads())
        .map(|_| random_matrix(rng, x.rows(), q.actions(), 1.0))
        .collect();
    q.forward_train(x).unwrap();
    let analytic = q.backward(&proj).unwrap();
    let shapes: Vec<usize> = q.network().params().iter().map(|p| p.len()).collect();
    let mut worst: f64 = 0.0;
    for (t, i) in coordinates(&shapes, limit, rng) {
        let orig = q.network().params()[t][i];
        q.network_mut().params_mut()[t][i] = orig + FD_EPS;
        let up = proj_objective(&q.head_q_batch(x).unwrap(), &proj);
        q.network_mut().params_mut()[t][i] = orig - FD_EPS;
        let down = proj_objective(&q.head_q_batch(x).unwrap(), &proj);
        q.network_mut().params_mut()[t][i] = orig;
        worst = worst.max(rel_err(analytic.0[t][i], (up - down) / (2.0 * FD_EPS)));
    }
    worst
}

/// Small network mixing every layer kind, with a random number of branches.
fn random_mixed_network(rng: &mut ChaCha8Rng) -> Network {
    let positions = rng.gen_range(1..10);
    let c0 = rng.gen_range(1..4);
    let c1 = rng.gen_range(1..8);
    let hidden = rng.gen_range(2..24);
    let mut trunk = vec![
        Layer::Conv1x1(Conv1x1::new(c0, c1, positions, rng)),
        Layer::Relu,
    ];
    if rng.gen_bool(0.5) {
        let c2 = rng.gen_range(1..8);
        trunk.push(Layer::Conv1x1(Conv1x1::new(c1, c2, positions, rng)));
        trunk.push(Layer::Relu);
        trunk.push(Layer::Dense(Dense::new(c2 * positions, hidden, rng)));
    } else {
        trunk.push(Layer::Dense(Dense::new(c1 * positions, hidden, rng)));
    }
    trunk.push(Layer::Relu);
    let branches = (0..rng.gen_range(0..5))
        .map(|_| {
            let out = rng.gen_range(1..6);
            if rng.gen_bool(0.3) {
                let w = rng.gen_range(2..10);
                vec![
                    Layer::Dense(Dense::new(hidden, w, rng)),
                    Layer::Relu,
                    Layer::Dense(Dense::new(w, out, rng)),
                ]
            } else {
                vec![Layer::Dense(Dense::new(hidden, out, rng))]
            }
        })
        .collect();
    Network::new(c0 * positions, trunk, branches).unwrap()
}

fn gradient_fidelity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut kinds = [0usize; 4];
    for k in 0..100 {
        let batch = rng.gen_range(1..4);
        let err = match k % 4 {
            // full-size Cart-Pole dueling ensembles, every coordinate
            0 => {
                let mut q = DuelingQNet::new(QArch::CartPole, 1 + k / 4 % 5, &mut rng);
                jitter(q.network_mut().params_mut(), &mut rng, 0.3);
                let x = random_matrix(&mut rng, batch, 4, 1.0);
                dueling_fd(&mut q, &x, &mut rng, None)
            }
            // full-size Predator-Prey dueling ensembles, sampled coordinates
            1 => {
                let mut q = DuelingQNet::new(QArch::PredatorPrey, 1 + k / 4 % 5, &mut rng);
                jitter(q.network_mut().params_mut(), &mut rng, 0.2);
                let x = random_matrix(&mut rng, batch, 27, 1.0);
                dueling_fd(&mut q, &x, &mut rng, Some(1500))
            }
            // estimator predictor at full width, sampled coordinates
            2 => {
                let input = [10, 128][k / 4 % 2];
                let mut net = Network::new(
                    input,
                    vec![
                        Layer::Dense(Dense::new(input, 512, &mut rng)),
                        Layer::Relu,
                        Layer::Dense(Dense::new(512, 1024, &mut rng)),
                    ],
                    Vec::new(),
                )
                .unwrap();
                jitter(net.params_mut(), &mut rng, 0.1);
                let x = random_matrix(&mut rng, batch, input, 1.0);
                network_fd(&mut net, &x, &mut rng, Some(400))
            }
            _ => {
                let mut net = random_mixed_network(&mut rng);
                jitter(net.params_mut(), &mut rng, 1.0);
                let x = random_matrix(&mut rng, batch, net.input_dim(), 1.0);
                network_fd(&mut net, &x, &mut rng, None)
            }
        };
        kinds[k % 4] += 1;
        worst = worst.max(err);
    }
    verdict(
        worst <= 1e-4,
        format!(
            "max relative error {worst:.2e} over {} Cart-Pole, {} Predator-Prey, {} estimator and {} mixed networks",
            kinds[0], kinds[1], kinds[2], kinds[3]
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn per_distribution() -> Verdict {
    let mut replay = PrioritizedReplay::new(16, PriorityConfig::default());
    for p in 1..=16 {
        let t = Transition {
            state: vec![p as f64],
            action: 0,
            reward: 0.0,
            next_state: vec![p as f64],
            terminal: false,
        };
        replay.push_with_priority(t, Origin::Own, p as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0u64; 16];
    let draws = 1_000_000;
    for _ in 0..draws / 1000 {
        for idx in replay.sample(1000, &mut rng).unwrap().indices {
            counts[idx.slot] += 1;
        }
    }
    let mass: Vec<f64> = (1..=16).map(|p| (p as f64).powf(0.6)).collect();
    let total: f64 = mass.iter().sum();
    let worst = counts
        .iter()
        .zip(&mass)
        .map(|(&c, m)| (c as f64 / draws as f64 - m / total).abs())
        .fold(0.0, f64::max);
    verdict(
        worst <= 0.005,
        format!("max absolute frequency error {worst:.5} over 10^6 draws"),
    )
}

// ---------------------------------------------------------------- criterion 10

fn files_equal(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for n in names {
        let x = std::fs::read(a.join(n)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(n)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{n} differs"));
        }
    }
    Ok(())
}

fn determinism(dir: &Path) -> Verdict {
    let mut cp = ExperimentConfig::cartpole();
    cp.max_episode = 300;
    cp.transfer.start_episode = 100;
    cp.transfer.frequency = 100;
    cp.agent.learn_start_episode = 20;
    cp.seed = 10;
    let mut pp = ExperimentConfig::predator_prey();
    pp.max_episode = 40;
    pp.max_timestep = 40;
    pp.transfer.start_episode = 20;
    pp.transfer.frequency = 10;
    pp.agent.learn_start_episode = 5;
    pp.seed = 10;
    let mut checked = 0;
    for (name, cfg) in [("cartpole", cp), ("pp", pp)] {
        for rep in 0..2 {
            let out = match run_with_threads(&cfg, 1) {
                Ok(o) => o,
                Err(e) => return verdict(false, format!("{name}: {e}")),
            };
            if let Err(e) = out.write(&dir.join(format!("det_{name}_{rep}"))) {
                return verdict(false, format!("{name}: {e}"));
            }
        }
        let names = [
            "training.csv",
            "transfer.csv",
            "budget.csv",
            "checkpoints/agent0.ckpt",
        ];
        if let Err(e) = files_equal(
            &dir.join(format!("det_{name}_0")),
            &dir.join(format!("det_{name}_1")),
            &names,
        ) {
            return verdict(false, format!("{name}: {e}"));
        }
        checked += names.len();
    }
    verdict(true, format!("{checked} output files byte-identical across repeated Cart-Pole and Predator-Prey runs"))
}

// ---------------------------------------------------------------- criterion 6

fn first_mean100_at(returns: &[f64], level: f64) -> Option<usize> {
    (100..=returns.len()).find(|&i| returns[i - 100..i].iter().sum::<f64>() / 100.0 >= level)
}

fn smoke_test(dir: &Path, jury: &mut Vec<PathBuf>) -> Verdict {
    let start = Instant::now();
    let mut solved = 0;
    let mut notes = Vec::new();
    for seed in 0..5 {
        let mut cfg = ExperimentConfig::cartpole();
        cfg.mode = Mode::NoTransfer;
        cfg.agents = 1;
        cfg.seed = seed;
        cfg.stop_at_mean100 = Some(195.0);
        let out = match run_with_threads(&cfg, 1) {
            Ok(o) => o,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        match first_mean100_at(&out.returns_of(0), 195.0) {
            Some(ep) => {
                solved += 1;
                notes.push(format!("{ep}"));
            }
            None => notes.push("-".into()),
        }
        let agent_dir = dir.join(format!("smoke_{seed}"));
        if let Err(e) = save_agents(&out.agents, &cfg, &agent_dir) {
            return verdict(false, e.to_string());
        }
        jury.push(agent_dir.join("agent0.ckpt"));
    }
    let fast = start.elapsed() <= Duration::from_secs(15 * 60);
    verdict(
        solved >= 3 && fast,
        format!(
            "{solved}/5 seeds reach a 100-episode mean of 195 (episode per seed: {})",
            notes.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn degeneracies(jury: &[PathBuf]) -> Verdict {
    if jury.len() != 5 {
        return verdict(false, "jury checkpoints unavailable");
    }
    let mut eb = ExperimentConfig::cartpole();
    eb.mode = Mode::EbAdv;
    eb.advice.jury = jury.to_vec();
    eb.advice.eb_threshold = 0.31;
    eb.trace_episodes = 20;
    eb.checkpoints = false;
    let mut reference = eb.clone();
    reference.mode = Mode::NoTransfer;
    reference.agent.heads = 5;
    let (a, b) = match (run_with_threads(&eb, 1), run_with_threads(&reference, 1)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return verdict(false, e.to_string()),
    };
    let identical = a.training_csv() == b.training_csv()
        && a.trace == b.trace
        && a.agents
            .iter()
            .zip(&b.agents)
            .all(|(x, y)| x.online().tensors() == y.online().tensors());
    if !identical {
        return verdict(
            false,
            "EB-Adv above 0.3 diverges from the 5-head no-transfer run",
        );
    }

    // budget identity under real consumption, for both advice baselines
    let mut consuming = eb.clone();
    consuming.advice.eb_threshold = ExperimentConfig::cartpole().advice.eb_threshold;
    consuming.seed = 1;
    let mut neb = ExperimentConfig::cartpole();
    neb.mode = Mode::NebAdv;
    neb.checkpoints = false;
    let mut spent = Vec::new();
    for (name, cfg) in [("EB-Adv", &consuming), ("nEB-Adv", &neb)] {
        let out = match run_with_threads(cfg, 1) {
            Ok(o) => o,
            Err(e) => return verdict(false, format!("{name}: {e}")),
        };
        match budget_identity(&out) {
            Ok(s) => spent.push(format!("{name} {s}")),
            Err(e) => return verdict(false, format!("{name}: {e}")),
        }
    }

    // ensemble uncertainty levels on trained and random 5-head networks
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut nets: Vec<DuelingQNet> = b.agents.iter().map(|lp| lp.online().clone()).collect();
    nets.extend((0..20).map(|_| DuelingQNet::new(QArch::CartPole, 5, &mut rng)));
    let mut seen = BTreeSet::new();
    for net in &nets {
        for _ in 0..2000 {
            let obs: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let u = ensemble_uncertainty(net, &obs).unwrap();
            let level = [0.0, 0.2, 0.3]
                .into_iter()
                .find(|l: &f64| (u - l).abs() < 1e-12);
            match level {
                Some(l) => {
                    seen.insert((l * 10.0).round() as i64);
                }
                None => {
                    return verdict(
                        false,
                        format!("ensemble uncertainty {u} outside {{0, 0.2, 0.3}}"),
                    )
                }
            }
        }
    }
    verdict(
        true,
        format!(
            "EB-Adv at 0.31 bit-identical to 5-head no-transfer; consumed+remaining=initial ({}); levels seen {:?}",
            spent.join(", "),
            seen.iter().map(|l| *l as f64 / 10.0).collect::<Vec<_>>()
        ),
    )
}

fn budget_identity(out: &RunOutput) -> Result<String, String> {
    let cfg = &out.config;
    let mut consumed_total = 0;
    for agent in 0..out.agents.len() {
        let rows: Vec<_> = out.budget.iter().filter(|r| r.agent == agent).collect();
        let Some(last) = rows.last() else {
            return Err(format!("no budget rows for agent {agent}"));
        };
        let (initial, consumed) = match cfg.mode {
            // one unit per advised episode
            Mode::EbAdv => (
                cfg.advice.eb_budget,
                rows.iter().filter(|r| r.advices_used > 0).count() as u64,
            ),
            _ => (
                cfg.advice.neb_budget,
                rows.iter().map(|r| r.advices_used).sum(),
            ),
        };
        if consumed + last.remaining != initial {
            return Err(format!(
                "agent {agent}: {consumed} + {} != {initial}",
                last.remaining
            ));
        }
        if rows.windows(2).any(|w| w[1].remaining > w[0].remaining) {
            return Err(format!("agent {agent}: remaining budget increased"));
        }
        consumed_total += consumed;
    }
    if consumed_total == 0 {
        return Err("no advice was ever consumed".into());
    }
    Ok(format!("{consumed_total} units spent"))
}

// ---------------------------------------------------------------- criterion 7

fn final_mean(out: &RunOutput, episodes: usize) -> f64 {
    let from = out.config.max_episode - episodes;
    let tail: Vec<f64> = out
        .episodes
        .iter()
        .filter(|r| r.episode > from)
        .map(|r| r.ret)
        .collect();
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

fn non_degradation(dir: &Path, keep: &mut Vec<PathBuf>) -> Verdict {
    let mut ef = Vec::new();
    let mut nt = Vec::new();
    for seed in 0..5 {
        let mut cfg = ExperimentConfig::cartpole();
        cfg.seed = seed;
        cfg.checkpoints = false;
        let mut base = cfg.clone();
        base.mode = Mode::NoTransfer;
        for (cfg, sink) in [(&cfg, &mut ef), (&base, &mut nt)] {
            let out = match run_with_threads(cfg, 1) {
                Ok(o) => o,
                Err(e) => return verdict(false, format!("seed {seed}: {e}")),
            };
            sink.push(final_mean(&out, 200));
            if cfg.mode == Mode::EfOntl {
                let d = dir.join(format!("efontl_{seed}"));
                if let Err(e) = out.write(&d) {
                    return verdict(false, e.to_string());
                }
                keep.push(d);
            }
        }
    }
    let (m_ef, s_ef) = mean_std(&ef);
    let (m_nt, s_nt) = mean_std(&nt);
    let pooled = ((s_ef * s_ef + s_nt * s_nt) / 2.0).sqrt();
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.1}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    verdict(
        m_ef >= m_nt - pooled,
        format!(
            "final-200 mean {m_ef:.1} (EF-OnTL: {}) vs {m_nt:.1} (no transfer: {}), pooled sd {pooled:.1}, superior: {}",
            fmt(&ef),
            fmt(&nt),
            m_ef > m_nt
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

struct CsvRow {
    episode: usize,
    source: usize,
    target: usize,
    batch: usize,
}

fn read_transfer_csv(path: &Path) -> Result<Vec<CsvRow>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    if lines.next() != Some("episode,source,target,batch,dconf_mean,dconf_min,dconf_max") {
        return Err("unexpected transfer header".into());
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| {
                f.get(i)
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or(format!("bad row {l:?}"))
            };
            Ok(CsvRow {
                episode: num(0)?,
                source: num(1)?,
                target: num(2)?,
                batch: num(3)?,
            })
        })
        .collect()
}

fn check_protocol(
    rows: &[CsvRow],
    events: &[usize],
    budget: usize,
    members: &[usize],
) -> Result<(), String> {
    let seen: BTreeSet<usize> = rows.iter().map(|r| r.episode).collect();
    if seen.iter().cloned().collect::<Vec<_>>() != events {
        return Err(format!("transfer episodes {seen:?}, expected {events:?}"));
    }
    for &ep in events {
        let at: Vec<&CsvRow> = rows.iter().filter(|r| r.episode == ep).collect();
        let sources: BTreeSet<usize> = at.iter().map(|r| r.source).collect();
        if sources.len() != 1 {
            return Err(format!("episode {ep}: {} sources", sources.len()));
        }
        let mut targets: Vec<usize> = at.iter().map(|r| r.target).collect();
        targets.sort_unstable();
        let expected: Vec<usize> = members
            .iter()
            .cloned()
            .filter(|m| !sources.contains(m))
            .collect();
        if targets != expected {
            return Err(format!(
                "episode {ep}: targets {targets:?}, expected {expected:?}"
            ));
        }
        if at.iter().any(|r| r.batch > budget) {
            return Err(format!("episode {ep}: batch above budget {budget}"));
        }
    }
    Ok(())
}

fn protocol_fidelity(dir: &Path, cartpole_runs: &[PathBuf]) -> Verdict {
    if cartpole_runs.is_empty() {
        return verdict(false, "Cart-Pole transfer logs unavailable");
    }
    let cp = ExperimentConfig::cartpole();
    let cp_events: Vec<usize> = (600..=1800).step_by(200).collect();
    for d in cartpole_runs {
        let rows = match read_transfer_csv(&d.join("transfer.csv")) {
            Ok(r) => r,
            Err(e) => return verdict(false, e),
        };
        if let Err(e) = check_protocol(
            &rows,
            &cp_events,
            cp.transfer.budget,
            &(0..cp.agents).collect::<Vec<_>>(),
        ) {
            return verdict(false, format!("Cart-Pole {}: {e}", d.display()));
        }
    }

    // Predator-Prey at the default schedule, with short episodes and learning
    // switched off to keep the horizon affordable.
    let mut pp = ExperimentConfig::predator_prey();
    pp.max_episode = 3100;
    pp.max_timestep = 4;
    pp.agent.learn_start_episode = usize::MAX;
    pp.checkpoints = false;
    let mut pp_checked = 0;
    for (team, members) in [(Team::Red, [0, 1, 2, 3]), (Team::Green, [4, 5, 6, 7])] {
        pp.sharing_team = team;
        let out = match run_with_threads(&pp, 1) {
            Ok(o) => o,
            Err(e) => return verdict(false, format!("Predator-Prey: {e}")),
        };
        let d = dir.join(format!("pp_{}", team.name()));
        if let Err(e) = out.write(&d) {
            return verdict(false, e.to_string());
        }
        let rows = match read_transfer_csv(&d.join("transfer.csv")) {
            Ok(r) => r,
            Err(e) => return verdict(false, e),
        };
        if let Err(e) = check_protocol(&rows, &[2500, 2800, 3100], pp.transfer.budget, &members) {
            return verdict(false, format!("Predator-Prey {}: {e}", team.name()));
        }
        let leaked = (0..8)
            .filter(|i| !members.contains(i))
            .any(|i| out.agents[i].replay().transferred_received() > 0);
        if leaked {
            return verdict(
                false,
                format!(
                    "non-sharing team received tuples with {} sharing",
                    team.name()
                ),
            );
        }
        pp_checked += 1;
    }
    verdict(
        true,
        format!(
            "{} Cart-Pole logs at {cp_events:?}; {pp_checked} Predator-Prey logs at [2500, 2800, 3100]",
            cartpole_runs.len()
        ),
    )
}
