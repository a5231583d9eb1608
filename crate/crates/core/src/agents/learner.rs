use rand::{Rng, RngCore};

use super::explore::Exploration;
use super::qnet::{DuelingQNet, QArch};
use crate::nn::{argmax, Checkpoint, Matrix, Optimizer};
use crate::replay::{Origin, PrioritizedReplay, PriorityConfig, Transition};
use crate::{Error, Result};

/// Hyperparameters of one learning process.
#[derive(Debug, Clone, PartialEq)]
pub struct LpConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Gradient updates between hard target replacements.
    pub target_period: u64,
    /// First episode at which gradient updates run.
    pub learn_start_episode: usize,
    pub priority: PriorityConfig,
    pub exploration: Exploration,
    /// Number of advantage heads; 1 is the plain dueling network.
    pub heads: usize,
}

impl LpConfig {
    pub fn cartpole() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 1e-5,
            batch_size: 32,
            replay_capacity: 10_000,
            target_period: 1000,
            learn_start_episode: 100,
            priority: PriorityConfig::default(),
            exploration: Exploration::Softmax { temperature: 1.0 },
            heads: 1,
        }
    }

    pub fn predator_prey() -> Self {
        Self {
            target_period: 10_000,
            exploration: Exploration::EpsilonDecay {
                start: 1.0,
                zero_at: 7450,
            },
            ..Self::cartpole()
        }
    }

    pub fn for_arch(arch: QArch) -> Self {
        match arch {
            QArch::CartPole => Self::cartpole(),
            QArch::PredatorPrey => Self::predator_prey(),
        }
    }
}

/// Online/target dueling networks with their optimizer and prioritized replay.
#[derive(Debug, Clone)]
pub struct LearningProcess {
    cfg: LpConfig,
    online: DuelingQNet,
    target: DuelingQNet,
    optimizer: Optimizer,
    replay: PrioritizedReplay,
    updates: u64,
}

impl LearningProcess {
    pub fn new<R: Rng + ?Sized>(arch: QArch, cfg: LpConfig, rng: &mut R) -> Self {
        let online = DuelingQNet::new(arch, cfg.heads, rng);
        let target = online.clone();
        let optimizer = Optimizer::adam(cfg.learning_rate, online.network());
        let replay = PrioritizedReplay::new(cfg.replay_capacity, cfg.priority);
        Self {
            cfg,
            online,
            target,
            optimizer,
            replay,
            updates: 0,
        }
    }

    pub fn config(&self) -> &LpConfig {
        &self.cfg
    }

    pub fn arch(&self) -> QArch {
        self.online.arch()
    }

    pub fn online(&self) -> &DuelingQNet {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut DuelingQNet {
        &mut self.online
    }

    pub fn target(&self) -> &DuelingQNet {
        &self.target
    }

    pub fn replay(&self) -> &PrioritizedReplay {
        &self.replay
    }

    pub fn replay_mut(&mut self) -> &mut PrioritizedReplay {
        &mut self.replay
    }

    /// Gradient updates performed so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.online.q_values(obs)
    }

    pub fn greedy(&self, obs: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }

    /// Training-time action under the configured exploration policy.
    pub fn act(&self, obs: &[f64], episode: usize, rng: &mut dyn RngCore) -> Result<usize> {
        let q = self.q_values(obs)?;
        Ok(self.cfg.exploration.select(&q, episode, rng))
    }

    /// Stores one of the agent's own transitions.
    pub fn remember(&mut self, t: Transition) {
        self.replay.push(t, Origin::Own);
    }

    /// Anneals the IS exponent; `progress` is the fraction of training elapsed.
    pub fn set_progress(&mut self, progress: f64) {
        let beta = self.cfg.priority.beta_at(progress);
        self.replay.set_beta(beta);
    }

    pub fn learning_enabled(&self, episode: usize) -> bool {
        episode >= self.cfg.learn_start_episode
    }

    fn targets(&self, batch: &[&Transition]) -> Result<Vec<Vec<f64>>> {
        let next = Matrix::from_rows(&batch.iter().map(|t| &t.next_state[..]).collect::<Vec<_>>())?;
        let heads = self.target.head_q_batch(&next)?;
        Ok(heads
            .iter()
            .map(|q| {
                batch
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        if t.terminal {
                            t.reward
                        } else {
                            let best = q.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                            t.reward + self.cfg.gamma * best
                        }
                    })
                    .collect()
            })
            .collect())
    }

    /// Signed errors `Q_online(s,a) − y`, averaged over heads.
    fn signed_errors(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let y = self.targets(batch)?;
        let states = Matrix::from_rows(&batch.iter().map(|t| &t.state[..]).collect::<Vec<_>>())?;
        let q = self.online.head_q_batch(&states)?;
        let h = q.len() as f64;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                q.iter()
                    .zip(&y)
                    .map(|(qh, yh)| qh.get(i, t.action) - yh[i])
                    .sum::<f64>()
                    / h
            })
            .collect())
    }

    /// Squared TD error of one transition: the expected-surprise measure.
    pub fn td_error(&self, t: &Transition) -> Result<f64> {
        Ok(self.td_errors(&[t])?[0])
    }

    /// Batched `td_error`.
    pub fn td_errors(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        Ok(self
            .signed_errors(batch)?
            .into_iter()
            .map(|d| d * d)
            .collect())
    }

    /// One prioritized minibatch update. Returns `None` while the replay
    /// holds fewer transitions than a batch.
    pub fn learn_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        let n = self.cfg.batch_size;
        if self.replay.len() < n || n == 0 {
            return Ok(None);
        }
        let sample = self.replay.sample(n, rng)?;
        let batch: Vec<&Transition> = sample
            .indices
            .iter()
            .map(|&i| &self.replay.get(i).transition)
            .collect();
        let y = self.targets(&batch)?;
        let states = Matrix::from_rows(&batch.iter().map(|t| &t.state[..]).collect::<Vec<_>>())?;
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let heads = self.cfg.heads;
        let q = self.online.forward_train(&states)?;

        let scale = 1.0 / (heads * n) as f64;
        let mut loss = 0.0;
        let mut abs_err = vec![0.0; n];
        let mut grads = Vec::with_capacity(heads);
        for (qh, yh) in q.iter().zip(&y) {
            let mut g = Matrix::zeros(n, qh.cols());
            for i in 0..n {
                let d = qh.get(i, actions[i]) - yh[i];
                let w = sample.weights[i];
                loss += scale * w * d * d;
                g.set(i, actions[i], 2.0 * scale * w * d);
                abs_err[i] += d.abs() / heads as f64;
            }
            grads.push(g);
        }
        let g = self.online.backward(&grads)?;
        self.optimizer.step(self.online.network_mut(), &g)?;
        self.replay.update_priorities(&sample.indices, &abs_err);
        self.updates += 1;
        if self.updates.is_multiple_of(self.cfg.target_period) {
            self.sync_target();
        }
        Ok(Some(loss))
    }

    /// Hard replacement of the target network by the online network.
    pub fn sync_target(&mut self) {
        self.target
            .network_mut()
            .copy_params_from(self.online.network())
            .expect("online and target share a layout");
    }

    /// Online-network parameters with layout metadata.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.push(("arch".into(), self.arch().name().into()));
        ck.meta.push(("heads".into(), self.cfg.heads.to_string()));
        ck.meta.push(("updates".into(), self.updates.to_string()));
        ck.push_group("online", self.online.tensors());
        ck
    }

    /// Loads online parameters from a checkpoint and syncs the target.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.meta("arch") != Some(self.arch().name()) {
            return Err(Error::Checkpoint(format!(
                "checkpoint arch {:?} does not match {}",
                ck.meta("arch"),
                self.arch().name()
            )));
        }
        if ck.meta("heads") != Some(&self.cfg.heads.to_string()) {
            return Err(Error::Checkpoint(format!(
                "checkpoint heads {:?} does not match {}",
                ck.meta("heads"),
                self.cfg.heads
            )));
        }
        self.online.load_tensors(&ck.group("online"))?;
        if let Some(u) = ck.meta("updates") {
            self.updates = u
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad update count {u:?}")))?;
        }
        self.sync_target();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lp(heads: usize) -> LearningProcess {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        LearningProcess::new(
            QArch::CartPole,
            LpConfig {
                heads,
                ..LpConfig::cartpole()
            },
            &mut rng,
        )
    }

    fn transition(state: [f64; 4], reward: f64, terminal: bool) -> Transition {
        Transition {
            state: state.to_vec(),
            action: 1,
            reward,
            next_state: vec![0.1, 0.0, -0.1, 0.2],
            terminal,
        }
    }

    /// Zeroes the last layer of every branch and sets the value bias, so Q is constant.
    fn constant_q(net: &mut DuelingQNet, value: f64) {
        // trunk (4 tensors), value branch (2), advantage heads (2 each)
        for p in net.network_mut().params_mut().into_iter().skip(4) {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        net.network_mut().params_mut()[5][0] = value;
    }

    #[test]
    fn td_error_examples() {
        let mut l = lp(1);
        constant_q(l.online_mut(), 0.0);
        l.sync_target();
        assert_eq!(l.td_error(&transition([0.0; 4], 0.0, true)).unwrap(), 0.0);
        assert_eq!(l.td_error(&transition([0.0; 4], 1.0, true)).unwrap(), 1.0);
        // target Q ≡ 1, online Q ≡ 0
        let mut t = l.target.clone();
        constant_q(&mut t, 1.0);
        l.target = t;
        let e = l.td_error(&transition([0.3; 4], 0.0, false)).unwrap();
        assert!((e - 0.9801).abs() < 1e-12, "{e}");
    }

    #[test]
    fn target_replacement_copies_exactly_at_period() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut l = LearningProcess::new(
            QArch::CartPole,
            LpConfig {
                batch_size: 4,
                target_period: 5,
                learning_rate: 1e-3,
                ..LpConfig::cartpole()
            },
            &mut rng,
        );
        for i in 0..8 {
            l.remember(transition([i as f64 * 0.1, 0.0, 0.0, 0.0], 1.0, i % 2 == 0));
        }
        let before: Vec<Vec<f64>> = l
            .target
            .network()
            .params()
            .iter()
            .map(|p| p.to_vec())
            .collect();
        for _ in 0..4 {
            l.learn_step(&mut rng).unwrap().unwrap();
        }
        let mid: Vec<Vec<f64>> = l
            .target
            .network()
            .params()
            .iter()
            .map(|p| p.to_vec())
            .collect();
        assert_eq!(before, mid);
        l.learn_step(&mut rng).unwrap().unwrap();
        assert_eq!(l.updates(), 5);
        let online: Vec<Vec<f64>> = l
            .online
            .network()
            .params()
            .iter()
            .map(|p| p.to_vec())
            .collect();
        let target: Vec<Vec<f64>> = l
            .target
            .network()
            .params()
            .iter()
            .map(|p| p.to_vec())
            .collect();
        assert_eq!(online, target);
        assert_ne!(online, before);
        // online-vs-online TD error equals target-based TD error right after replacement
        let t = transition([0.2, 0.1, 0.0, -0.1], 0.5, false);
        let q_next = l.online.q_values(&t.next_state).unwrap();
        let y = 0.5 + 0.99 * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let d = l.online.q_values(&t.state).unwrap()[1] - y;
        assert!((l.td_error(&t).unwrap() - d * d).abs() < 1e-12);
    }

    #[test]
    fn underfull_buffer_is_a_no_op() {
        let mut l = lp(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..31 {
            l.remember(transition([0.0; 4], 1.0, true));
        }
        assert_eq!(l.learn_step(&mut rng).unwrap(), None);
        assert_eq!(l.updates(), 0);
    }

    #[test]
    fn zero_error_batch_leaves_parameters_unchanged() {
        let mut l = lp(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // all-zero weights make every Q exactly 0 on any gemm path
        for p in l.online_mut().network_mut().params_mut() {
            p.fill(0.0);
        }
        let s = [0.1, 0.2, 0.3, 0.4];
        for _ in 0..32 {
            l.remember(transition(s, 0.0, true));
        }
        let before: Vec<Vec<f64>> = l
            .online
            .network()
            .params()
            .iter()
            .map(|p| p.to_vec())
            .collect();
        let loss = l.learn_step(&mut rng).unwrap().unwrap();
        assert_eq!(loss, 0.0);
        let after: Vec<Vec<f64>> = l
            .online
            .network()
            .params()
            .iter()
            .map(|p| p.to_vec())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn single_transition_loss_trends_down() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = LearningProcess::new(
            QArch::CartPole,
            LpConfig {
                batch_size: 1,
                ..LpConfig::cartpole()
            },
            &mut rng,
        );
        l.remember(transition([0.3, -0.2, 0.05, 0.1], 1.0, true));
        let losses: Vec<f64> = (0..500)
            .map(|_| l.learn_step(&mut rng).unwrap().unwrap())
            .collect();
        let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(
            losses[499] < 0.5 * losses[0],
            "{} -> {}",
            losses[0],
            losses[499]
        );
        assert!(rises <= 25, "{rises} increases");
    }

    #[test]
    fn greedy_exploration_matches_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pp = lp(1);
        pp.cfg.exploration = Exploration::EpsilonDecay {
            start: 1.0,
            zero_at: 10,
        };
        for i in 0..50 {
            let s = [i as f64 * 0.03, -0.1, 0.2, 0.0];
            assert_eq!(pp.act(&s, 10, &mut rng).unwrap(), pp.greedy(&s).unwrap());
        }
    }

    #[test]
    fn checkpoint_restores_online_and_target() {
        let a = lp(5);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut b = LearningProcess::new(
            QArch::CartPole,
            LpConfig {
                heads: 5,
                ..LpConfig::cartpole()
            },
            &mut rng,
        );
        let ck = Checkpoint::parse(&a.to_checkpoint().to_text()).unwrap();
        b.load_checkpoint(&ck).unwrap();
        let s = [0.01, 0.02, 0.03, 0.04];
        assert_eq!(a.q_values(&s).unwrap(), b.q_values(&s).unwrap());
        assert_eq!(b.target.q_values(&s).unwrap(), b.q_values(&s).unwrap());
        let mut c = lp(1);
        assert!(c.load_checkpoint(&ck).is_err());
    }

    #[test]
    fn ensemble_learn_step_runs() {
        let mut l = lp(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in 0..40 {
            l.remember(transition([i as f64 * 0.01; 4], 1.0, false));
        }
        assert!(l.learn_step(&mut rng).unwrap().unwrap() > 0.0);
    }
}
