//! The training loop: per-step acting, uncertainty labelling and learning,
//! with transfer barriers or per-step advice depending on the mode.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{EnvKind, ExperimentConfig, Mode};
use crate::agents::{LearningProcess, QArch};
use crate::baselines::{
    neb_adv_decide, AdviceBudget, BudgetRow, EbAdvisor, Jury, BUDGET_CSV_HEADER,
};
use crate::envs::{CartPole, CartPoleParams, MultiAgentEnv, PpConfig, PredatorPrey, Team};
use crate::replay::Transition;
use crate::transfer::{transfer_step, Peer, TransferBuffer, TransferReport, TRANSFER_CSV_HEADER};
use crate::uncertainty::{Estimator, EstimatorMode, StateEncoder};
use crate::{Error, Result};

const NET_INIT: u64 = 1;
const ACT: u64 = 2;
const ENV: u64 = 3;
const TRANSFER: u64 = 4;
const EST_INIT: u64 = 5;

/// Independent ChaCha stream for one purpose of one agent.
pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((tag << 32) | index);
    r
}

/// Parallelism cap from `EFONTL_THREADS`; unset or invalid means one thread.
pub fn threads_from_env() -> usize {
    std::env::var("EFONTL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub agent: usize,
    pub ret: f64,
    pub steps: usize,
    pub mean_u: Option<f64>,
}

pub const TRAINING_CSV_HEADER: &str = "episode,agent,return,steps,mean_u";

impl EpisodeRow {
    pub fn csv(&self) -> String {
        let u = self.mean_u.map(|u| format!("{u:?}")).unwrap_or_default();
        format!(
            "{},{},{:?},{},{}",
            self.episode, self.agent, self.ret, self.steps, u
        )
    }
}

/// Labels transitions with the estimator's visit-time uncertainty.
///
/// The estimator's update pass already computes the pre-update error of every
/// queued sample, which is exactly the estimate at visit time, so labels are
/// taken from there; samples still queued at an episode boundary are labelled
/// by a direct estimate and skipped when their update later fires.
#[derive(Debug, Clone, Default)]
struct Labeller {
    unlabelled: VecDeque<Transition>,
    skip: usize,
    sum: f64,
    count: usize,
}

impl Labeller {
    fn observe(
        &mut self,
        est: &mut Estimator,
        tb: &mut TransferBuffer,
        t: Transition,
    ) -> Result<()> {
        let out = est.observe(&t)?;
        self.unlabelled.push_back(t);
        if let Some(us) = out {
            for u in us.into_iter().skip(self.skip) {
                let t = self
                    .unlabelled
                    .pop_front()
                    .expect("one queued transition per label");
                self.push(tb, t, u);
            }
            self.skip = 0;
        }
        Ok(())
    }

    fn flush(&mut self, est: &Estimator, tb: &mut TransferBuffer) -> Result<()> {
        if self.unlabelled.is_empty() {
            return Ok(());
        }
        let ts: Vec<Transition> = self.unlabelled.drain(..).collect();
        let us = est.estimate_batch(&ts.iter().collect::<Vec<_>>())?;
        for (t, u) in ts.into_iter().zip(us) {
            self.push(tb, t, u);
        }
        self.skip = est.pending();
        Ok(())
    }

    fn push(&mut self, tb: &mut TransferBuffer, transition: Transition, u: f64) {
        self.sum += u;
        self.count += 1;
        tb.push(crate::transfer::UTuple { transition, u });
    }

    fn take_mean(&mut self) -> Option<f64> {
        let m = (self.count > 0).then(|| self.sum / self.count as f64);
        self.sum = 0.0;
        self.count = 0;
        m
    }
}

struct Slot {
    id: usize,
    peer: Peer,
    /// Takes part in the mode's mechanism (transfer or advice).
    member: bool,
    labels: bool,
    labeller: Labeller,
    rnd: Option<Estimator>,
    neb_budget: AdviceBudget,
    neb_used: u64,
    advisor: Option<EbAdvisor>,
    rng: ChaCha8Rng,
    env: Option<CartPole>,
    env_rng: ChaCha8Rng,
    stopped: bool,
    trace: String,
}

impl std::borrow::Borrow<Peer> for Slot {
    fn borrow(&self) -> &Peer {
        &self.peer
    }
}

impl std::borrow::BorrowMut<Peer> for Slot {
    fn borrow_mut(&mut self) -> &mut Peer {
        &mut self.peer
    }
}

impl Slot {
    fn new(cfg: &ExperimentConfig, id: usize, member: bool) -> Self {
        let seed = cfg.seed;
        let arch = arch_of(cfg.env);
        let mut lp_cfg = cfg.agent.clone();
        lp_cfg.heads = cfg.heads();
        let lp = LearningProcess::new(arch, lp_cfg, &mut stream(seed, NET_INIT, id as u64));
        let mut est_rng = stream(seed, EST_INIT, id as u64);
        let encoder = match cfg.env {
            EnvKind::CartPole => StateEncoder::Identity { dim: 4 },
            EnvKind::PredatorPrey => StateEncoder::pp(&mut est_rng),
        };
        let estimator = Estimator::new(
            EstimatorMode::Full,
            encoder.clone(),
            cfg.estimator,
            &mut est_rng,
        );
        let rnd = (cfg.mode == Mode::NebAdv && member)
            .then(|| Estimator::new(EstimatorMode::State, encoder, cfg.estimator, &mut est_rng));
        let env = (cfg.env == EnvKind::CartPole).then(|| {
            CartPole::new(CartPoleParams {
                max_steps: cfg.max_timestep,
                ..CartPoleParams::default()
            })
        });
        Self {
            id,
            peer: Peer {
                lp,
                estimator,
                buffer: TransferBuffer::new(cfg.transfer.buffer_capacity),
                returns: Vec::new(),
            },
            member,
            labels: (cfg.mode == Mode::EfOntl && member) || cfg.track_uncertainty,
            labeller: Labeller::default(),
            rnd,
            neb_budget: AdviceBudget::new(cfg.advice.neb_budget),
            neb_used: 0,
            advisor: (cfg.mode == Mode::EbAdv && member)
                .then(|| EbAdvisor::new(cfg.advice.eb_threshold, cfg.advice.eb_budget)),
            rng: stream(seed, ACT, id as u64),
            env,
            env_rng: stream(seed, ENV, id as u64),
            stopped: false,
            trace: String::new(),
        }
    }

    fn begin_episode(&mut self, episode: usize, cfg: &ExperimentConfig) {
        self.peer
            .lp
            .set_progress((episode - 1) as f64 / cfg.max_episode as f64);
        if let Some(a) = self.advisor.as_mut() {
            a.begin_episode();
        }
        self.neb_used = 0;
    }

    /// Own policy action unless the advisor takes over.
    fn own_or_eb_action(
        &mut self,
        obs: &[f64],
        episode: usize,
        jury: Option<&Jury>,
    ) -> Result<usize> {
        if let (Some(adv), Some(jury)) = (self.advisor.as_mut(), jury) {
            if let Some(a) = adv.decide(self.peer.lp.online(), jury, obs)? {
                return Ok(a);
            }
        }
        self.peer.lp.act(obs, episode - 1, &mut self.rng)
    }

    fn absorb(&mut self, t: Transition, episode: usize) -> Result<()> {
        self.peer.lp.remember(t.clone());
        if let Some(rnd) = self.rnd.as_mut() {
            rnd.observe(&t)?;
        }
        if self.labels {
            self.labeller
                .observe(&mut self.peer.estimator, &mut self.peer.buffer, t)?;
        }
        if self.peer.lp.learning_enabled(episode - 1) {
            self.peer.lp.learn_step(&mut self.rng)?;
        }
        Ok(())
    }

    fn end_episode(
        &mut self,
        episode: usize,
        ret: f64,
        steps: usize,
        stop_at: Option<f64>,
    ) -> Result<(EpisodeRow, Option<BudgetRow>)> {
        if self.labels {
            self.labeller
                .flush(&self.peer.estimator, &mut self.peer.buffer)?;
        }
        self.peer.returns.push(ret);
        if let Some(th) = stop_at {
            let r = &self.peer.returns;
            if r.len() >= 100 && r[r.len() - 100..].iter().sum::<f64>() / 100.0 >= th {
                self.stopped = true;
            }
        }
        let budget = if let Some(a) = &self.advisor {
            Some(BudgetRow {
                episode,
                agent: self.id,
                mechanism: "eb_adv",
                advices_used: a.advised_steps(),
                remaining: a.budget.remaining(),
            })
        } else if self.rnd.is_some() {
            Some(BudgetRow {
                episode,
                agent: self.id,
                mechanism: "neb_adv",
                advices_used: self.neb_used,
                remaining: self.neb_budget.remaining(),
            })
        } else {
            None
        };
        Ok((
            EpisodeRow {
                episode,
                agent: self.id,
                ret,
                steps,
                mean_u: self.labeller.take_mean(),
            },
            budget,
        ))
    }
}

fn arch_of(env: EnvKind) -> QArch {
    match env {
        EnvKind::CartPole => QArch::CartPole,
        EnvKind::PredatorPrey => QArch::PredatorPrey,
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    /// Sorted by episode, then agent.
    pub episodes: Vec<EpisodeRow>,
    pub transfers: Vec<TransferReport>,
    pub budget: Vec<BudgetRow>,
    pub agents: Vec<LearningProcess>,
    pub trace: String,
}

impl RunOutput {
    pub fn training_csv(&self) -> String {
        let mut s = format!("{TRAINING_CSV_HEADER}\n");
        for r in &self.episodes {
            let _ = writeln!(s, "{}", r.csv());
        }
        s
    }

    pub fn transfer_csv(&self) -> String {
        let mut s = format!("{TRANSFER_CSV_HEADER}\n");
        for r in &self.transfers {
            s.push_str(&r.to_csv_rows());
        }
        s
    }

    pub fn budget_csv(&self) -> String {
        let mut s = format!("{BUDGET_CSV_HEADER}\n");
        for r in &self.budget {
            let _ = writeln!(s, "{}", r.csv());
        }
        s
    }

    /// Returns of one agent in episode order.
    pub fn returns_of(&self, agent: usize) -> Vec<f64> {
        self.episodes
            .iter()
            .filter(|r| r.agent == agent)
            .map(|r| r.ret)
            .collect()
    }

    /// Writes CSVs, the resolved config and (if enabled) checkpoints to `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: &str| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        put("config.txt", &self.config.to_text())?;
        put("training.csv", &self.training_csv())?;
        put("transfer.csv", &self.transfer_csv())?;
        put("budget.csv", &self.budget_csv())?;
        if !self.trace.is_empty() {
            put("trace.txt", &self.trace)?;
        }
        if self.config.checkpoints {
            super::save_agents(&self.agents, &self.config, &dir.join("checkpoints"))?;
        }
        Ok(())
    }
}

/// Runs one seeded experiment with the parallelism from `EFONTL_THREADS`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_with_threads(cfg, threads_from_env())
}

/// Runs one seeded experiment. Results do not depend on `threads`.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let jury = if cfg.mode == Mode::EbAdv {
        Some(Jury::load(arch_of(cfg.env), &cfg.advice.jury)?)
    } else {
        None
    };
    match cfg.env {
        EnvKind::CartPole => run_cartpole(cfg, jury.as_ref(), threads),
        EnvKind::PredatorPrey => run_pp(cfg, jury.as_ref()),
    }
}

struct Collected {
    episodes: Vec<EpisodeRow>,
    budget: Vec<BudgetRow>,
    transfers: Vec<TransferReport>,
}

impl Collected {
    fn new() -> Self {
        Self {
            episodes: Vec::new(),
            budget: Vec::new(),
            transfers: Vec::new(),
        }
    }

    fn finish(mut self, cfg: &ExperimentConfig, slots: Vec<Slot>) -> RunOutput {
        self.episodes.sort_by_key(|r| (r.episode, r.agent));
        self.budget.sort_by_key(|r| (r.episode, r.agent));
        let trace = slots.iter().map(|s| s.trace.as_str()).collect();
        RunOutput {
            config: cfg.clone(),
            episodes: self.episodes,
            transfers: self.transfers,
            budget: self.budget,
            agents: slots.into_iter().map(|s| s.peer.lp).collect(),
            trace,
        }
    }
}

fn maybe_transfer(
    cfg: &ExperimentConfig,
    slots: &mut [Slot],
    episode: usize,
    rng: &mut ChaCha8Rng,
    out: &mut Collected,
) -> Result<()> {
    if cfg.mode != Mode::EfOntl || !cfg.transfer.is_transfer_episode(episode) {
        return Ok(());
    }
    let members: Vec<usize> = slots.iter().filter(|s| s.member).map(|s| s.id).collect();
    out.transfers
        .push(transfer_step(slots, &members, &cfg.transfer, episode, rng)?);
    Ok(())
}

fn run_cartpole(cfg: &ExperimentConfig, jury: Option<&Jury>, threads: usize) -> Result<RunOutput> {
    let mut slots: Vec<Slot> = (0..cfg.agents).map(|i| Slot::new(cfg, i, true)).collect();
    let mut transfer_rng = stream(cfg.seed, TRANSFER, 0);
    let mut out = Collected::new();
    if cfg.mode == Mode::NebAdv {
        for episode in 1..=cfg.max_episode {
            if slots.iter().all(|s| s.stopped) {
                break;
            }
            cp_lockstep_episode(&mut slots, episode, cfg, &mut out)?;
        }
        return Ok(out.finish(cfg, slots));
    }
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let mut first = 1;
    while first <= cfg.max_episode {
        let last = if cfg.mode == Mode::EfOntl {
            (first..=cfg.max_episode)
                .find(|&e| cfg.transfer.is_transfer_episode(e))
                .unwrap_or(cfg.max_episode)
        } else {
            cfg.max_episode
        };
        let segment = |s: &mut Slot| -> Result<Vec<(EpisodeRow, Option<BudgetRow>)>> {
            let mut rows = Vec::new();
            for episode in first..=last {
                if s.stopped {
                    break;
                }
                rows.push(cp_episode(s, episode, cfg, jury)?);
            }
            Ok(rows)
        };
        let results: Vec<Result<Vec<_>>> = match &pool {
            Some(p) => p.install(|| slots.par_iter_mut().map(segment).collect()),
            None => slots.iter_mut().map(segment).collect(),
        };
        for r in results {
            for (e, b) in r? {
                out.episodes.push(e);
                out.budget.extend(b);
            }
        }
        maybe_transfer(cfg, &mut slots, last, &mut transfer_rng, &mut out)?;
        if slots.iter().all(|s| s.stopped) {
            break;
        }
        first = last + 1;
    }
    Ok(out.finish(cfg, slots))
}

fn cp_episode(
    s: &mut Slot,
    episode: usize,
    cfg: &ExperimentConfig,
    jury: Option<&Jury>,
) -> Result<(EpisodeRow, Option<BudgetRow>)> {
    s.begin_episode(episode, cfg);
    let tracing = s.id == 0 && episode <= cfg.trace_episodes;
    let mut env = s.env.take().expect("cart-pole slot owns an environment");
    let mut obs = env.reset(&mut s.env_rng).remove(0);
    let (mut ret, mut steps) = (0.0, 0);
    let result = (|| -> Result<()> {
        loop {
            let action = s.own_or_eb_action(&obs, episode, jury)?;
            let step = env.step(&[action], &mut s.env_rng)?;
            if tracing {
                let _ = writeln!(
                    s.trace,
                    "{episode} {}",
                    env.trace_line(steps, &[action], &step.rewards)
                );
            }
            let next = step.observations[0].clone();
            ret += step.rewards[0];
            steps += 1;
            s.absorb(
                Transition {
                    state: std::mem::replace(&mut obs, next.clone()),
                    action,
                    reward: step.rewards[0],
                    next_state: next,
                    terminal: step.terminal,
                },
                episode,
            )?;
            if step.done {
                return Ok(());
            }
        }
    })();
    s.env = Some(env);
    result?;
    s.end_episode(episode, ret, steps, cfg.stop_at_mean100)
}

/// Members that could pay for advice right now, among `candidates`.
fn neb_askers(
    slots: &[Slot],
    candidates: impl Iterator<Item = usize>,
    members: &[usize],
) -> Vec<usize> {
    // with no peers, or too little budget left to pay them all, asking is pointless
    let cost = members.len().saturating_sub(1) as u64;
    candidates
        .filter(|&i| slots[i].member && cost > 0 && slots[i].neb_budget.remaining() >= cost)
        .collect()
}

/// `u[q][k]`: member `k`'s state uncertainty on asker `q`'s observation. One
/// batched pass per estimator, so every asker in a tick sees the same
/// estimator state.
fn neb_uncertainties(slots: &[Slot], members: &[usize], obs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    if obs.is_empty() {
        return Ok(Vec::new());
    }
    let probes: Vec<Transition> = obs
        .iter()
        .map(|o| Transition {
            state: o.to_vec(),
            action: 0,
            reward: 0.0,
            next_state: o.to_vec(),
            terminal: false,
        })
        .collect();
    let refs: Vec<&Transition> = probes.iter().collect();
    let mut u = vec![Vec::with_capacity(members.len()); obs.len()];
    for &j in members {
        let est = slots[j]
            .rnd
            .as_ref()
            .expect("advice members carry a state estimator");
        for (row, v) in u.iter_mut().zip(est.estimate_batch(&refs)?) {
            row.push(v);
        }
    }
    Ok(u)
}

/// Peer-advice decision for slot `i` on `obs` given the members' uncertainties.
fn neb_action(
    slots: &mut [Slot],
    i: usize,
    obs: &[f64],
    u: &[f64],
    members: &[usize],
) -> Result<Option<usize>> {
    let me = members
        .iter()
        .position(|&j| j == i)
        .expect("asking agent is a member");
    let mut budget = slots[i].neb_budget.clone();
    let advice = neb_adv_decide(
        me,
        u,
        |k| slots[members[k]].peer.lp.greedy(obs),
        &mut budget,
    )?;
    if advice.is_some() {
        slots[i].neb_used += (members.len() - 1) as u64;
    }
    slots[i].neb_budget = budget;
    Ok(advice)
}

/// Advice for every asker this tick, indexed by slot.
fn neb_round(
    slots: &mut [Slot],
    askers: &[usize],
    obs: &[Vec<f64>],
    members: &[usize],
) -> Result<Vec<Option<usize>>> {
    let queries: Vec<&[f64]> = askers.iter().map(|&i| &obs[i][..]).collect();
    let u = neb_uncertainties(slots, members, &queries)?;
    let mut advice = vec![None; slots.len()];
    for (&i, ui) in askers.iter().zip(&u) {
        advice[i] = neb_action(slots, i, &obs[i], ui, members)?;
    }
    Ok(advice)
}

fn cp_lockstep_episode(
    slots: &mut [Slot],
    episode: usize,
    cfg: &ExperimentConfig,
    out: &mut Collected,
) -> Result<()> {
    let members: Vec<usize> = (0..slots.len()).filter(|&i| !slots[i].stopped).collect();
    let mut obs = Vec::with_capacity(slots.len());
    let mut live = vec![false; slots.len()];
    for &i in &members {
        slots[i].begin_episode(episode, cfg);
        let s = &mut slots[i];
        let env = s.env.as_mut().expect("cart-pole slot owns an environment");
        obs.push(env.reset(&mut s.env_rng).remove(0));
        live[i] = true;
    }
    let mut obs: Vec<Vec<f64>> = {
        let mut full = vec![Vec::new(); slots.len()];
        for (k, &i) in members.iter().enumerate() {
            full[i] = std::mem::take(&mut obs[k]);
        }
        full
    };
    let mut ret = vec![0.0; slots.len()];
    let mut steps = vec![0usize; slots.len()];
    while live.iter().any(|&l| l) {
        let askers = neb_askers(
            slots,
            members.iter().copied().filter(|&i| live[i]),
            &members,
        );
        let advice = neb_round(slots, &askers, &obs, &members)?;
        for &i in &members {
            if !live[i] {
                continue;
            }
            let action = match advice[i] {
                Some(a) => a,
                None => {
                    let s = &mut slots[i];
                    s.peer.lp.act(&obs[i], episode - 1, &mut s.rng)?
                }
            };
            let s = &mut slots[i];
            let env = s.env.as_mut().expect("cart-pole slot owns an environment");
            let step = env.step(&[action], &mut s.env_rng)?;
            if s.id == 0 && episode <= cfg.trace_episodes {
                let _ = writeln!(
                    s.trace,
                    "{episode} {}",
                    env.trace_line(steps[i], &[action], &step.rewards)
                );
            }
            let next = step.observations[0].clone();
            ret[i] += step.rewards[0];
            steps[i] += 1;
            let state = std::mem::replace(&mut obs[i], next.clone());
            s.absorb(
                Transition {
                    state,
                    action,
                    reward: step.rewards[0],
                    next_state: next,
                    terminal: step.terminal,
                },
                episode,
            )?;
            if step.done {
                live[i] = false;
            }
        }
    }
    for &i in &members {
        let (e, b) = slots[i].end_episode(episode, ret[i], steps[i], cfg.stop_at_mean100)?;
        out.episodes.push(e);
        out.budget.extend(b);
    }
    Ok(())
}

fn run_pp(cfg: &ExperimentConfig, jury: Option<&Jury>) -> Result<RunOutput> {
    let pp_cfg = PpConfig {
        max_steps: cfg.max_timestep,
        ..PpConfig::default()
    };
    let mut env = PredatorPrey::new(pp_cfg);
    let n = 2 * pp_cfg.predators_per_team;
    let mut env_rng = stream(cfg.seed, ENV, 0);
    // predators 0..k are red, k..2k green
    let team_of = |i: usize| {
        if i < pp_cfg.predators_per_team {
            Team::Red
        } else {
            Team::Green
        }
    };
    let mut slots: Vec<Slot> = (0..n)
        .map(|i| Slot::new(cfg, i, team_of(i) == cfg.sharing_team))
        .collect();
    let members: Vec<usize> = slots.iter().filter(|s| s.member).map(|s| s.id).collect();
    let mut transfer_rng = stream(cfg.seed, TRANSFER, 0);
    let mut out = Collected::new();
    for episode in 1..=cfg.max_episode {
        for s in slots.iter_mut() {
            s.begin_episode(episode, cfg);
        }
        let mut obs = env.reset(&mut env_rng);
        let mut ret = vec![0.0; n];
        let mut steps = 0;
        loop {
            let advice = if cfg.mode == Mode::NebAdv {
                let askers = neb_askers(&slots, 0..n, &members);
                neb_round(&mut slots, &askers, &obs, &members)?
            } else {
                vec![None; n]
            };
            let mut actions = Vec::with_capacity(n);
            for i in 0..n {
                let a = match advice[i] {
                    Some(a) => a,
                    None => slots[i].own_or_eb_action(&obs[i], episode, jury)?,
                };
                actions.push(a);
            }
            let step = env.step(&actions, &mut env_rng)?;
            if episode <= cfg.trace_episodes {
                let _ = writeln!(
                    slots[0].trace,
                    "{episode} {}",
                    env.trace_line(steps, &actions, &step.rewards)
                );
            }
            steps += 1;
            for i in 0..n {
                ret[i] += step.rewards[i];
                let t = Transition {
                    state: std::mem::take(&mut obs[i]),
                    action: actions[i],
                    reward: step.rewards[i],
                    next_state: step.observations[i].clone(),
                    terminal: step.terminal,
                };
                slots[i].absorb(t, episode)?;
            }
            obs = step.observations;
            if step.done {
                break;
            }
        }
        for i in 0..n {
            let (e, b) = slots[i].end_episode(episode, ret[i], steps, None)?;
            out.episodes.push(e);
            out.budget.extend(b);
        }
        maybe_transfer(cfg, &mut slots, episode, &mut transfer_rng, &mut out)?;
    }
    Ok(out.finish(cfg, slots))
}
