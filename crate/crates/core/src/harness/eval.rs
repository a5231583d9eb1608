//! Greedy evaluation of trained agents.

use std::fmt::Write as _;

use rand::{Rng, RngCore};

use super::run::stream;
use crate::agents::DuelingQNet;
use crate::envs::{CartPole, CartPoleParams, MultiAgentEnv, PpConfig, PredatorPrey, Team};
use crate::Result;

const EVAL: u64 = 6;

/// Action choice for evaluation episodes.
pub trait Policy {
    fn act(&self, agent: usize, obs: &[f64], rng: &mut dyn RngCore) -> Result<usize>;
}

/// Greedy actions of trained networks, one per agent.
#[derive(Debug, Clone)]
pub struct Greedy(pub Vec<DuelingQNet>);

impl Policy for Greedy {
    fn act(&self, agent: usize, obs: &[f64], _rng: &mut dyn RngCore) -> Result<usize> {
        self.0[agent].greedy(obs)
    }
}

/// Uniformly random actions.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub actions: usize,
}

impl Policy for RandomPolicy {
    fn act(&self, _agent: usize, _obs: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
        Ok(rng.gen_range(0..self.actions))
    }
}

/// A fixed action for every agent.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub usize);

impl Policy for ConstantPolicy {
    fn act(&self, _agent: usize, _obs: &[f64], _rng: &mut dyn RngCore) -> Result<usize> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub metrics: Vec<Metric>,
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value,ci95\n");
        for m in &self.metrics {
            let _ = writeln!(s, "{},{:?},{:?}", m.name, m.value, m.ci95);
        }
        s
    }

    fn push(&mut self, name: impl Into<String>, samples: &[f64]) {
        let (value, ci95) = mean_ci95(samples);
        self.metrics.push(Metric {
            name: name.into(),
            value,
            ci95,
        });
    }
}

/// Sample mean and `1.96 · s / √n` (0 for fewer than two samples).
pub fn mean_ci95(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Average return of each agent on its own Cart-Pole instance, plus the pooled mean.
pub fn evaluate_cartpole(
    policy: &dyn Policy,
    agents: usize,
    episodes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    let mut pooled = Vec::with_capacity(agents * episodes);
    let mut per_agent = Vec::with_capacity(agents);
    for agent in 0..agents {
        let mut rng = stream(seed, EVAL, agent as u64);
        let mut env = CartPole::new(CartPoleParams {
            max_steps,
            ..CartPoleParams::default()
        });
        let mut returns = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let mut obs = env.reset(&mut rng).remove(0);
            let mut ret = 0.0;
            loop {
                let a = policy.act(agent, &obs, &mut rng)?;
                let step = env.step(&[a], &mut rng)?;
                ret += step.rewards[0];
                obs = step.observations[0].clone();
                if step.done {
                    break;
                }
            }
            returns.push(ret);
        }
        pooled.extend_from_slice(&returns);
        per_agent.push(returns);
    }
    report.push("avg_return", &pooled);
    for (i, r) in per_agent.iter().enumerate() {
        report.push(format!("agent{i}_avg_return"), r);
    }
    Ok(report)
}

/// Team metrics over greedy Predator-Prey episodes: summed team reward,
/// own-prey catches, and win probability (a team wins by catching all of
/// its prey first; simultaneous finishes and timeouts count half).
pub fn evaluate_pp(
    policy: &dyn Policy,
    episodes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<EvalReport> {
    let cfg = PpConfig {
        max_steps,
        ..PpConfig::default()
    };
    let mut env = PredatorPrey::new(cfg);
    let mut rng = stream(seed, EVAL, 0);
    let mut reward = [Vec::new(), Vec::new()];
    let mut catches = [Vec::new(), Vec::new()];
    let mut wins = [Vec::new(), Vec::new()];
    for _ in 0..episodes {
        let mut obs = env.reset(&mut rng);
        let mut r = [0.0; 2];
        let mut c = [0.0; 2];
        loop {
            let actions = (0..obs.len())
                .map(|i| policy.act(i, &obs[i], &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let step = env.step(&actions, &mut rng)?;
            for (i, rew) in step.rewards.iter().enumerate() {
                r[env.team_of_predator(i).index()] += rew;
            }
            let ev = env.last_events();
            for t in 0..2 {
                c[t] += ev.catches[t] as f64;
            }
            obs = step.observations;
            if step.done {
                break;
            }
        }
        let done = [
            env.remaining(Team::Red) == 0,
            env.remaining(Team::Green) == 0,
        ];
        for t in 0..2 {
            let w = match (done[t], done[1 - t]) {
                (true, false) => 1.0,
                (false, true) => 0.0,
                _ => 0.5,
            };
            wins[t].push(w);
            reward[t].push(r[t]);
            catches[t].push(c[t]);
        }
    }
    let mut report = EvalReport::default();
    for team in [Team::Red, Team::Green] {
        let t = team.index();
        report.push(format!("{}_avg_reward", team.name()), &reward[t]);
        report.push(format!("{}_avg_catch", team.name()), &catches[t]);
        report.push(format!("{}_win_probability", team.name()), &wins[t]);
    }
    Ok(report)
}
