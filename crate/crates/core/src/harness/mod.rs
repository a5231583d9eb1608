//! Experiment orchestration: configuration, seeded training runs, greedy
//! evaluation, checkpoints and the uncertainty-sensitivity demo.

pub mod config;
mod eval;
mod run;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{sweep_grid, AdviceConfig, EnvKind, ExperimentConfig, Mode, SWEEP_BUDGETS};
pub use eval::{
    evaluate_cartpole, evaluate_pp, mean_ci95, ConstantPolicy, EvalReport, Greedy, Metric, Policy,
    RandomPolicy,
};
pub use run::{
    run, run_with_threads, stream, threads_from_env, EpisodeRow, RunOutput, TRAINING_CSV_HEADER,
};

use crate::agents::{DuelingQNet, LearningProcess, QArch};
use crate::baselines::jury_member;
use crate::nn::Checkpoint;
use crate::uncertainty::{sensitivity_protocol, SensitivitySchedule, SensitivityTrace};
use crate::{Error, Result};

fn agent_file(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("agent{i}.ckpt"))
}

/// Writes one checkpoint per agent, tagged with the run's identity.
pub fn save_agents(agents: &[LearningProcess], cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, lp) in agents.iter().enumerate() {
        let mut ck = lp.to_checkpoint();
        ck.meta.push(("agent".into(), i.to_string()));
        ck.meta.push(("env".into(), cfg.env.to_string()));
        ck.meta.push(("mode".into(), cfg.mode.to_string()));
        ck.meta.push(("seed".into(), cfg.seed.to_string()));
        ck.save(&agent_file(dir, i))?;
    }
    Ok(())
}

fn agent_checkpoints(dir: &Path) -> Result<Vec<Checkpoint>> {
    let mut out = Vec::new();
    while agent_file(dir, out.len()).exists() {
        out.push(Checkpoint::load(&agent_file(dir, out.len()))?);
    }
    if out.is_empty() {
        return Err(Error::Checkpoint(format!(
            "no agent checkpoints in {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Loads the online networks saved by [`save_agents`], in agent order.
pub fn load_agents(dir: &Path) -> Result<(QArch, Vec<DuelingQNet>)> {
    let cks = agent_checkpoints(dir)?;
    let arch = match cks[0].meta("arch") {
        Some("cartpole") => QArch::CartPole,
        Some("pp") => QArch::PredatorPrey,
        other => return Err(Error::Checkpoint(format!("unknown arch {other:?}"))),
    };
    let nets = cks
        .iter()
        .map(|c| jury_member(arch, c))
        .collect::<Result<Vec<_>>>()?;
    Ok((arch, nets))
}

/// Rebuilds learning processes for `cfg` and loads their saved parameters.
pub fn restore_agents(dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<LearningProcess>> {
    let arch = match cfg.env {
        EnvKind::CartPole => QArch::CartPole,
        EnvKind::PredatorPrey => QArch::PredatorPrey,
    };
    let mut lp_cfg = cfg.agent.clone();
    lp_cfg.heads = cfg.heads();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    agent_checkpoints(dir)?
        .iter()
        .map(|ck| {
            let mut lp = LearningProcess::new(arch, lp_cfg.clone(), &mut rng);
            lp.load_checkpoint(ck)?;
            Ok(lp)
        })
        .collect()
}

/// Greedy evaluation of the agents saved in `dir`.
pub fn evaluate_checkpoints(
    dir: &Path,
    episodes: usize,
    max_steps: Option<usize>,
    seed: u64,
) -> Result<EvalReport> {
    let (arch, nets) = load_agents(dir)?;
    let n = nets.len();
    let policy = Greedy(nets);
    match arch {
        QArch::CartPole => evaluate_cartpole(&policy, n, episodes, max_steps.unwrap_or(400), seed),
        QArch::PredatorPrey => {
            let expected = 2 * crate::envs::PpConfig::default().predators_per_team;
            if n != expected {
                return Err(Error::Checkpoint(format!(
                    "predator-prey evaluation needs {expected} agents, found {n}"
                )));
            }
            evaluate_pp(&policy, episodes, max_steps.unwrap_or(200), seed)
        }
    }
}

/// Runs the action-switch sensitivity experiment and writes its CSV.
pub fn sarnd_demo(out: &Path, seed: u64) -> Result<SensitivityTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = sensitivity_protocol(SensitivitySchedule::default(), &mut rng)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(out, trace.to_csv()).map_err(|e| Error::io(out, e))?;
    Ok(trace)
}

/// One EF-OnTL config per grid setting, derived from `base`.
pub fn sweep_configs(base: &ExperimentConfig, budgets: &[usize]) -> Vec<ExperimentConfig> {
    sweep_grid(budgets)
        .into_iter()
        .map(|(b, ss, tm)| {
            let mut c = base.clone();
            c.mode = Mode::EfOntl;
            c.transfer.budget = b;
            c.transfer.selection = ss;
            c.transfer.method = tm;
            c
        })
        .collect()
}
