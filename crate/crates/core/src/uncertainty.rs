//! Distillation-based epistemic uncertainty: RND over states and sa-RND
//! over full interactions `(s, a, r, s')`.
//!
//! A frozen random target network embeds the encoded input; a predictor is
//! trained to match it. The mean squared prediction error is the uncertainty,
//! so familiar inputs score low.

use std::fmt::Write as _;

use rand::Rng;

use crate::envs::{
    Cell, Entity, Heading, PpConfig, PredatorPrey, Team, OBS_CHANNELS, OBS_POSITIONS,
};
use crate::nn::{Conv1x1, Dense, Layer, Matrix, Network, Optimizer, OptimizerKind};
use crate::replay::Transition;
use crate::{Error, Result};

/// What the estimator looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    /// `enc(s)` only (RND).
    State,
    /// `[enc(s), a, r, enc(s')]` (sa-RND).
    Full,
}

/// Fixed state encoder applied before the distillation networks.
#[derive(Debug, Clone)]
pub enum StateEncoder {
    Identity {
        dim: usize,
    },
    /// Frozen random 1×1 convolution, flattened channel-major.
    Conv(Layer),
}

impl StateEncoder {
    pub fn pp<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StateEncoder::Conv(Layer::Conv1x1(Conv1x1::new(
            OBS_CHANNELS,
            7,
            OBS_POSITIONS,
            rng,
        )))
    }

    pub fn in_dim(&self) -> usize {
        match self {
            StateEncoder::Identity { dim } => *dim,
            StateEncoder::Conv(l) => l.in_dim().expect("conv has a fixed input"),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            StateEncoder::Identity { dim } => *dim,
            StateEncoder::Conv(l) => l.out_dim(l.in_dim().expect("conv has a fixed input")),
        }
    }

    fn encode_into(&self, state: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if state.len() != self.in_dim() {
            return Err(Error::Dimension {
                context: "estimator state",
                expected: self.in_dim(),
                got: state.len(),
            });
        }
        match self {
            StateEncoder::Identity { .. } => out.extend_from_slice(state),
            StateEncoder::Conv(l) => {
                out.extend_from_slice(l.forward(&Matrix::row_vector(state)).as_slice())
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub hidden: usize,
    pub embedding: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            embedding: 1024,
            learning_rate: 1e-2,
            batch_size: 8,
        }
    }
}

/// RND / sa-RND uncertainty estimator.
#[derive(Debug, Clone)]
pub struct Estimator {
    mode: EstimatorMode,
    encoder: StateEncoder,
    target: Network,
    predictor: Network,
    optimizer: Optimizer,
    batch_size: usize,
    pending: Vec<Vec<f64>>,
    updates: u64,
}

impl Estimator {
    pub fn new<R: Rng + ?Sized>(
        mode: EstimatorMode,
        encoder: StateEncoder,
        cfg: EstimatorConfig,
        rng: &mut R,
    ) -> Self {
        let input = input_dim(mode, &encoder);
        let target = Network::new(
            input,
            vec![Layer::Dense(Dense::new(input, cfg.embedding, rng))],
            vec![],
        )
        .expect("single layer");
        let predictor = Network::new(
            input,
            vec![
                Layer::Dense(Dense::new(input, cfg.hidden, rng)),
                Layer::Relu,
                Layer::Dense(Dense::new(cfg.hidden, cfg.embedding, rng)),
            ],
            vec![],
        )
        .expect("consistent predictor");
        Self::from_parts(mode, encoder, target, predictor, cfg).expect("matching widths")
    }

    /// Cart-Pole estimator: identity encoding, 4 (state) or 10 (full) inputs.
    pub fn cartpole<R: Rng + ?Sized>(mode: EstimatorMode, rng: &mut R) -> Self {
        Self::new(
            mode,
            StateEncoder::Identity { dim: 4 },
            EstimatorConfig::default(),
            rng,
        )
    }

    /// Predator-Prey estimator: 63 encoded values per state, 128 inputs in full mode.
    pub fn predator_prey<R: Rng + ?Sized>(mode: EstimatorMode, rng: &mut R) -> Self {
        let encoder = StateEncoder::pp(rng);
        Self::new(mode, encoder, EstimatorConfig::default(), rng)
    }

    /// Assembles an estimator from explicit networks (both must map the
    /// encoded input to the same width).
    pub fn from_parts(
        mode: EstimatorMode,
        encoder: StateEncoder,
        target: Network,
        predictor: Network,
        cfg: EstimatorConfig,
    ) -> Result<Self> {
        let input = input_dim(mode, &encoder);
        for (net, what) in [(&target, "target"), (&predictor, "predictor")] {
            if net.input_dim() != input || net.output_dims().len() != 1 {
                return Err(Error::Config(format!(
                    "{what} network does not take {input} inputs"
                )));
            }
        }
        if target.output_dims() != predictor.output_dims() {
            return Err(Error::Config("target and predictor widths differ".into()));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config(
                "estimator batch size must be positive".into(),
            ));
        }
        let optimizer = Optimizer::new(OptimizerKind::rmsprop(), cfg.learning_rate, &predictor);
        Ok(Self {
            mode,
            encoder,
            target,
            predictor,
            optimizer,
            batch_size: cfg.batch_size,
            pending: Vec::with_capacity(cfg.batch_size),
            updates: 0,
        })
    }

    pub fn mode(&self) -> EstimatorMode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        input_dim(self.mode, &self.encoder)
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    pub fn predictor(&self) -> &Network {
        &self.predictor
    }

    /// Optimizer steps taken so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn encode(&self, t: &Transition) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(self.input_dim());
        self.encoder.encode_into(&t.state, &mut v)?;
        if self.mode == EstimatorMode::Full {
            v.push(t.action as f64);
            v.push(t.reward);
            self.encoder.encode_into(&t.next_state, &mut v)?;
        }
        Ok(v)
    }

    fn errors(&self, x: &Matrix) -> Result<Vec<f64>> {
        let target = self.target.forward(x)?.remove(0);
        let pred = self.predictor.forward(x)?.remove(0);
        Ok(row_mse(&pred, &target))
    }

    /// Current uncertainty of one interaction. Pure.
    pub fn estimate(&self, t: &Transition) -> Result<f64> {
        Ok(self.errors(&Matrix::row_vector(&self.encode(t)?))?[0])
    }

    pub fn estimate_batch(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let rows = batch
            .iter()
            .map(|t| self.encode(t))
            .collect::<Result<Vec<_>>>()?;
        self.errors(&Matrix::from_rows(&rows)?)
    }

    /// Queues an interaction for distillation. When the queue reaches the
    /// batch size, takes one optimizer step on the mean error and returns the
    /// pre-update uncertainty of each queued sample, in queue order.
    pub fn observe(&mut self, t: &Transition) -> Result<Option<Vec<f64>>> {
        let x = self.encode(t)?;
        self.pending.push(x);
        if self.pending.len() < self.batch_size {
            return Ok(None);
        }
        let x = Matrix::from_rows(&self.pending)?;
        self.pending.clear();
        let target = self.target.forward(&x)?.remove(0);
        let pred = self.predictor.forward_train(&x)?.remove(0);
        let per_sample = row_mse(&pred, &target);
        let scale = 2.0 / (pred.rows() * pred.cols()) as f64;
        let mut grad = Matrix::zeros(pred.rows(), pred.cols());
        for ((g, p), y) in grad
            .as_mut_slice()
            .iter_mut()
            .zip(pred.as_slice())
            .zip(target.as_slice())
        {
            *g = scale * (p - y);
        }
        let grads = self.predictor.backward(&[grad])?;
        self.optimizer.step(&mut self.predictor, &grads)?;
        self.updates += 1;
        Ok(Some(per_sample))
    }
}

fn input_dim(mode: EstimatorMode, encoder: &StateEncoder) -> usize {
    match mode {
        EstimatorMode::State => encoder.out_dim(),
        EstimatorMode::Full => 2 * encoder.out_dim() + 2,
    }
}

fn row_mse(pred: &Matrix, target: &Matrix) -> Vec<f64> {
    pred.iter_rows()
        .zip(target.iter_rows())
        .map(|(p, y)| p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64)
        .collect()
}

/// Min-max normalization to `[0, 1]`; a constant series maps to zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Phase lengths and actions of the action-switch sensitivity experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivitySchedule {
    pub warmup: usize,
    pub switch: usize,
    pub back: usize,
    pub first_action: usize,
    pub second_action: usize,
}

impl Default for SensitivitySchedule {
    fn default() -> Self {
        Self {
            warmup: 250,
            switch: 25,
            back: 25,
            first_action: 0,
            second_action: 1,
        }
    }
}

impl SensitivitySchedule {
    pub fn len(&self) -> usize {
        self.warmup + self.switch + self.back
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn action_at(&self, step: usize) -> usize {
        if step < self.warmup || step >= self.warmup + self.switch {
            self.first_action
        } else {
            self.second_action
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityRow {
    pub step: usize,
    pub action: usize,
    pub u_rnd: f64,
    pub u_sarnd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTrace {
    pub schedule: SensitivitySchedule,
    pub rows: Vec<SensitivityRow>,
}

/// Size of a jump at `step` relative to the preceding `window` values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    /// `u[step]` minus the trailing mean.
    pub rise: f64,
    pub trailing_std: f64,
}

impl Jump {
    /// Rise in units of trailing standard deviations.
    pub fn sigmas(&self) -> f64 {
        if self.trailing_std > 0.0 {
            self.rise / self.trailing_std
        } else if self.rise > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

pub fn jump_at(series: &[f64], step: usize, window: usize) -> Jump {
    assert!(
        step >= window && step < series.len(),
        "jump window out of range"
    );
    let w = &series[step - window..step];
    let mean = w.iter().sum::<f64>() / window as f64;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / window as f64;
    Jump {
        rise: series[step] - mean,
        trailing_std: var.sqrt(),
    }
}

impl SensitivityTrace {
    pub fn rnd(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.u_rnd).collect()
    }

    pub fn sarnd(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.u_sarnd).collect()
    }

    /// Jumps at the first and second action switch, for (RND, sa-RND).
    pub fn jumps(&self, window: usize) -> [(Jump, Jump); 2] {
        let s1 = self.schedule.warmup;
        let s2 = s1 + self.schedule.switch;
        let (rnd, sa) = (self.rnd(), self.sarnd());
        [
            (jump_at(&rnd, s1, window), jump_at(&sa, s1, window)),
            (jump_at(&rnd, s2, window), jump_at(&sa, s2, window)),
        ]
    }

    /// `step,action,u_rnd,u_sarnd,u_rnd_norm,u_sarnd_norm`, one row per step.
    pub fn to_csv(&self) -> String {
        let rn = min_max_normalize(&self.rnd());
        let sn = min_max_normalize(&self.sarnd());
        let mut out = String::from("step,action,u_rnd,u_sarnd,u_rnd_norm,u_sarnd_norm\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{:?},{:?}",
                r.step, r.action, r.u_rnd, r.u_sarnd, rn[i], sn[i]
            );
        }
        out
    }
}

/// The two observations visited by the sensitivity experiment: one red
/// predator facing a prey, and the same predator after rotating left.
pub fn sensitivity_states() -> [Vec<f64>; 2] {
    let prey = vec![Entity {
        cell: Cell { row: 4, col: 5 },
        heading: Heading::Down,
        team: Team::Red,
    }];
    let make = |heading| {
        let predators = vec![Entity {
            cell: Cell { row: 5, col: 5 },
            heading,
            team: Team::Red,
        }];
        PredatorPrey::from_scene(PpConfig::default(), predators, prey.clone())
            .expect("fixed scene is valid")
            .observe(0)
    };
    [make(Heading::Up), make(Heading::Left)]
}

/// Feeds both estimators the same interaction stream. Every step visits both
/// fixed states, each transitioning into the other, under the action given by
/// `schedule`; the recorded uncertainty is the mean over the two interactions
/// before that step's distillation updates.
pub fn sensitivity_protocol<R: Rng + ?Sized>(
    schedule: SensitivitySchedule,
    rng: &mut R,
) -> Result<SensitivityTrace> {
    let mut rnd = Estimator::predator_prey(EstimatorMode::State, rng);
    let mut sarnd = Estimator::predator_prey(EstimatorMode::Full, rng);
    let states = sensitivity_states();
    let step_reward = PpConfig::default().rewards.step;
    let mut rows = Vec::with_capacity(schedule.len());
    for step in 0..schedule.len() {
        let action = schedule.action_at(step);
        let visits: Vec<Transition> = [(0, 1), (1, 0)]
            .iter()
            .map(|&(from, to)| Transition {
                state: states[from].clone(),
                action,
                reward: step_reward,
                next_state: states[to].clone(),
                terminal: false,
            })
            .collect();
        let refs: Vec<&Transition> = visits.iter().collect();
        let u_rnd = rnd.estimate_batch(&refs)?.iter().sum::<f64>() / 2.0;
        let u_sarnd = sarnd.estimate_batch(&refs)?.iter().sum::<f64>() / 2.0;
        for t in &visits {
            rnd.observe(t)?;
            sarnd.observe(t)?;
        }
        rows.push(SensitivityRow {
            step,
            action,
            u_rnd,
            u_sarnd,
        });
    }
    Ok(SensitivityTrace { schedule, rows })
}
