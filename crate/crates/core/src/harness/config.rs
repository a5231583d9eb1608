//! Experiment configuration in a small sectioned `key = value` format.
//!
//! ```text
//! # comment
//! [experiment]
//! env = cartpole
//! mode = ef_ontl
//! [transfer]
//! budget = 500
//! ```
//!
//! Every key is optional; missing keys keep the environment's defaults, which
//! are applied when `env` is read, so `env` should come first.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agents::{Exploration, LpConfig};
use crate::envs::Team;
use crate::transfer::{SourceSelection, TransferConfig, TransferMethod};
use crate::uncertainty::EstimatorConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    CartPole,
    PredatorPrey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    EfOntl,
    NoTransfer,
    NebAdv,
    EbAdv,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::PredatorPrey => "pp",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" | "cart-pole" => Ok(EnvKind::CartPole),
            "pp" | "predator-prey" | "predator_prey" => Ok(EnvKind::PredatorPrey),
            _ => Err(Error::Config(format!("unknown environment {s:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::EfOntl => "ef_ontl",
            Mode::NoTransfer => "no_transfer",
            Mode::NebAdv => "neb_adv",
            Mode::EbAdv => "eb_adv",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ef_ontl" => Ok(Mode::EfOntl),
            "no_transfer" => Ok(Mode::NoTransfer),
            "neb_adv" => Ok(Mode::NebAdv),
            "eb_adv" => Ok(Mode::EbAdv),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdviceConfig {
    /// Per-agent peer-advice units.
    pub neb_budget: u64,
    /// Per-agent advised episodes.
    pub eb_budget: u64,
    pub eb_threshold: f64,
    pub jury: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub mode: Mode,
    pub seed: u64,
    /// Independent runs launched by the CLI when no seed is given.
    pub runs: u64,
    pub max_episode: usize,
    pub max_timestep: usize,
    /// Cart-Pole learners; ignored for Predator-Prey (always 4 per team).
    pub agents: usize,
    /// Predator-Prey team that transfers or takes advice.
    pub sharing_team: Team,
    pub transfer: TransferConfig,
    pub agent: LpConfig,
    pub estimator: EstimatorConfig,
    /// Run the sa-RND estimator even when the mode does not need it.
    pub track_uncertainty: bool,
    pub advice: AdviceConfig,
    /// Stop once every agent's 100-episode mean return reaches this value.
    pub stop_at_mean100: Option<f64>,
    pub checkpoints: bool,
    /// Episodes (from the first) whose per-step trace is written.
    pub trace_episodes: usize,
}

impl ExperimentConfig {
    pub fn cartpole() -> Self {
        Self {
            env: EnvKind::CartPole,
            mode: Mode::EfOntl,
            seed: 0,
            runs: 20,
            max_episode: 1800,
            max_timestep: 400,
            agents: 5,
            sharing_team: Team::Red,
            transfer: TransferConfig::cartpole(),
            agent: LpConfig::cartpole(),
            estimator: EstimatorConfig::default(),
            track_uncertainty: false,
            advice: AdviceConfig {
                neb_budget: 30_000,
                eb_budget: 300,
                eb_threshold: 0.25,
                jury: Vec::new(),
            },
            stop_at_mean100: None,
            checkpoints: true,
            trace_episodes: 0,
        }
    }

    pub fn predator_prey() -> Self {
        Self {
            env: EnvKind::PredatorPrey,
            max_episode: 8000,
            max_timestep: 200,
            agents: 4,
            transfer: TransferConfig::predator_prey(),
            agent: LpConfig::predator_prey(),
            advice: AdviceConfig {
                neb_budget: 85_000,
                eb_budget: 6000,
                eb_threshold: 0.02,
                jury: Vec::new(),
            },
            ..Self::cartpole()
        }
    }

    pub fn for_env(env: EnvKind) -> Self {
        match env {
            EnvKind::CartPole => Self::cartpole(),
            EnvKind::PredatorPrey => Self::predator_prey(),
        }
    }

    /// Advantage heads actually used: the expert-advice baseline needs an ensemble.
    pub fn heads(&self) -> usize {
        if self.mode == Mode::EbAdv {
            5
        } else {
            self.agent.heads
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_episode == 0 || self.max_timestep == 0 {
            return bad("max_episode and max_timestep must be positive");
        }
        if self.env == EnvKind::CartPole && self.agents == 0 {
            return bad("at least one agent is required");
        }
        if self.agent.batch_size == 0
            || self.agent.replay_capacity == 0
            || self.agent.target_period == 0
        {
            return bad("batch_size, replay_capacity and target_period must be positive");
        }
        if !(self.agent.gamma >= 0.0 && self.agent.gamma <= 1.0) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.agent.learning_rate > 0.0) || !(self.estimator.learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.agent.heads == 0 {
            return bad("heads must be positive");
        }
        if self.estimator.batch_size == 0 {
            return bad("estimator batch_size must be positive");
        }
        if let Exploration::Softmax { temperature } = self.agent.exploration {
            if !(temperature > 0.0) {
                return bad("softmax temperature must be positive");
            }
        }
        self.transfer.validate()?;
        if self.mode == Mode::EbAdv && self.advice.jury.is_empty() {
            return bad("eb_adv needs jury checkpoints (advice.jury)");
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::cartpole();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(&section, key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::Config(format!(
                    "{key}: expected true/false, got {v:?}"
                ))),
            }
        }
        match (section, key) {
            ("experiment", "env") => {
                let env: EnvKind = value.parse()?;
                if env != self.env {
                    let (mode, seed) = (self.mode, self.seed);
                    *self = Self::for_env(env);
                    self.mode = mode;
                    self.seed = seed;
                }
            }
            ("experiment", "mode") => self.mode = value.parse()?,
            ("experiment", "seed") => self.seed = num(key, value)?,
            ("experiment", "runs") => self.runs = num(key, value)?,
            ("experiment", "max_episode") => self.max_episode = num(key, value)?,
            ("experiment", "max_timestep") => self.max_timestep = num(key, value)?,
            ("experiment", "agents") => self.agents = num(key, value)?,
            ("experiment", "sharing_team") => {
                self.sharing_team = Team::from_name(value)
                    .ok_or_else(|| Error::Config(format!("unknown team {value:?}")))?
            }
            ("experiment", "stop_at_mean100") => self.stop_at_mean100 = Some(num(key, value)?),
            ("transfer", "budget") => self.transfer.budget = num(key, value)?,
            ("transfer", "frequency") => self.transfer.frequency = num(key, value)?,
            ("transfer", "selection") => {
                self.transfer.selection = value.parse::<SourceSelection>()?
            }
            ("transfer", "method") => self.transfer.method = value.parse::<TransferMethod>()?,
            ("transfer", "start_episode") => self.transfer.start_episode = num(key, value)?,
            ("transfer", "bp_window") => self.transfer.bp_window = num(key, value)?,
            ("transfer", "buffer_capacity") => self.transfer.buffer_capacity = num(key, value)?,
            ("agent", "gamma") => self.agent.gamma = num(key, value)?,
            ("agent", "learning_rate") => self.agent.learning_rate = num(key, value)?,
            ("agent", "batch_size") => self.agent.batch_size = num(key, value)?,
            ("agent", "replay_capacity") => self.agent.replay_capacity = num(key, value)?,
            ("agent", "target_period") => self.agent.target_period = num(key, value)?,
            ("agent", "learn_start_episode") => self.agent.learn_start_episode = num(key, value)?,
            ("agent", "heads") => self.agent.heads = num(key, value)?,
            ("agent", "alpha") => self.agent.priority.alpha = num(key, value)?,
            ("agent", "beta_start") => self.agent.priority.beta_start = num(key, value)?,
            ("agent", "min_priority") => self.agent.priority.min_priority = num(key, value)?,
            ("agent", "temperature") => {
                self.agent.exploration = Exploration::Softmax {
                    temperature: num(key, value)?,
                }
            }
            ("agent", "epsilon_zero_at") => {
                self.agent.exploration = Exploration::EpsilonDecay {
                    start: 1.0,
                    zero_at: num(key, value)?,
                }
            }
            ("estimator", "learning_rate") => self.estimator.learning_rate = num(key, value)?,
            ("estimator", "batch_size") => self.estimator.batch_size = num(key, value)?,
            ("estimator", "hidden") => self.estimator.hidden = num(key, value)?,
            ("estimator", "embedding") => self.estimator.embedding = num(key, value)?,
            ("estimator", "track") => self.track_uncertainty = flag(key, value)?,
            ("advice", "neb_budget") => self.advice.neb_budget = num(key, value)?,
            ("advice", "eb_budget") => self.advice.eb_budget = num(key, value)?,
            ("advice", "eb_threshold") => self.advice.eb_threshold = num(key, value)?,
            ("advice", "jury") => {
                self.advice.jury = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            ("output", "checkpoints") => self.checkpoints = flag(key, value)?,
            ("output", "trace_episodes") => self.trace_episodes = num(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?} in section [{section}]"
                )))
            }
        }
        Ok(())
    }

    /// Serializes every setting; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let t = &self.transfer;
        let a = &self.agent;
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "env = {}", self.env);
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "runs = {}", self.runs);
        let _ = writeln!(s, "max_episode = {}", self.max_episode);
        let _ = writeln!(s, "max_timestep = {}", self.max_timestep);
        let _ = writeln!(s, "agents = {}", self.agents);
        let _ = writeln!(s, "sharing_team = {}", self.sharing_team.name());
        if let Some(v) = self.stop_at_mean100 {
            let _ = writeln!(s, "stop_at_mean100 = {v:?}");
        }
        let _ = writeln!(s, "\n[transfer]");
        let _ = writeln!(s, "budget = {}", t.budget);
        let _ = writeln!(s, "frequency = {}", t.frequency);
        let _ = writeln!(s, "selection = {}", t.selection);
        let _ = writeln!(s, "method = {}", t.method);
        let _ = writeln!(s, "start_episode = {}", t.start_episode);
        let _ = writeln!(s, "bp_window = {}", t.bp_window);
        let _ = writeln!(s, "buffer_capacity = {}", t.buffer_capacity);
        let _ = writeln!(s, "\n[agent]");
        let _ = writeln!(s, "gamma = {:?}", a.gamma);
        let _ = writeln!(s, "learning_rate = {:?}", a.learning_rate);
        let _ = writeln!(s, "batch_size = {}", a.batch_size);
        let _ = writeln!(s, "replay_capacity = {}", a.replay_capacity);
        let _ = writeln!(s, "target_period = {}", a.target_period);
        let _ = writeln!(s, "learn_start_episode = {}", a.learn_start_episode);
        let _ = writeln!(s, "heads = {}", a.heads);
        let _ = writeln!(s, "alpha = {:?}", a.priority.alpha);
        let _ = writeln!(s, "beta_start = {:?}", a.priority.beta_start);
        let _ = writeln!(s, "min_priority = {:?}", a.priority.min_priority);
        match a.exploration {
            Exploration::Softmax { temperature } => {
                let _ = writeln!(s, "temperature = {temperature:?}");
            }
            Exploration::EpsilonDecay { zero_at, .. } => {
                let _ = writeln!(s, "epsilon_zero_at = {zero_at}");
            }
            Exploration::Greedy => {}
        }
        let e = &self.estimator;
        let _ = writeln!(s, "\n[estimator]");
        let _ = writeln!(s, "learning_rate = {:?}", e.learning_rate);
        let _ = writeln!(s, "batch_size = {}", e.batch_size);
        let _ = writeln!(s, "hidden = {}", e.hidden);
        let _ = writeln!(s, "embedding = {}", e.embedding);
        let _ = writeln!(s, "track = {}", self.track_uncertainty);
        let _ = writeln!(s, "\n[advice]");
        let _ = writeln!(s, "neb_budget = {}", self.advice.neb_budget);
        let _ = writeln!(s, "eb_budget = {}", self.advice.eb_budget);
        let _ = writeln!(s, "eb_threshold = {:?}", self.advice.eb_threshold);
        let jury: Vec<String> = self
            .advice
            .jury
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        let _ = writeln!(s, "jury = {}", jury.join(","));
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "checkpoints = {}", self.checkpoints);
        let _ = writeln!(s, "trace_episodes = {}", self.trace_episodes);
        s
    }
}

/// The 18 EF-OnTL settings: budget × source selection × transfer method.
pub fn sweep_grid(budgets: &[usize]) -> Vec<(usize, SourceSelection, TransferMethod)> {
    let mut out = Vec::new();
    for &b in budgets {
        for ss in SourceSelection::ALL {
            for tm in TransferMethod::ALL {
                out.push((b, ss, tm));
            }
        }
    }
    out
}

pub const SWEEP_BUDGETS: [usize; 3] = [500, 1500, 5000];
