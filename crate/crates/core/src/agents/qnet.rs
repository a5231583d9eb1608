use rand::Rng;

use crate::baselines::majority_vote;
use crate::envs::{OBS_CHANNELS, OBS_POSITIONS};
use crate::nn::{argmax, Conv1x1, Dense, Gradients, Layer, Matrix, Network, Tensor};
use crate::{Error, Result};

/// Network layout for one of the built-in tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QArch {
    /// FC(4,128) → FC(128,64), value FC(64,1), advantage FC(64,2).
    CartPole,
    /// Conv1x1(3,7) → Conv1x1(7,15) → flatten → FC(135,256), value FC(256,1), advantage FC(256,5).
    PredatorPrey,
}

impl QArch {
    pub fn obs_dim(self) -> usize {
        match self {
            QArch::CartPole => 4,
            QArch::PredatorPrey => OBS_CHANNELS * OBS_POSITIONS,
        }
    }

    pub fn actions(self) -> usize {
        match self {
            QArch::CartPole => 2,
            QArch::PredatorPrey => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QArch::CartPole => "cartpole",
            QArch::PredatorPrey => "pp",
        }
    }

    fn build<R: Rng + ?Sized>(self, heads: usize, rng: &mut R) -> Network {
        let (trunk, width) = match self {
            QArch::CartPole => (
                vec![
                    Layer::Dense(Dense::new(4, 128, rng)),
                    Layer::Relu,
                    Layer::Dense(Dense::new(128, 64, rng)),
                    Layer::Relu,
                ],
                64,
            ),
            QArch::PredatorPrey => (
                vec![
                    Layer::Conv1x1(Conv1x1::new(OBS_CHANNELS, 7, OBS_POSITIONS, rng)),
                    Layer::Relu,
                    Layer::Conv1x1(Conv1x1::new(7, 15, OBS_POSITIONS, rng)),
                    Layer::Relu,
                    Layer::Dense(Dense::new(15 * OBS_POSITIONS, 256, rng)),
                    Layer::Relu,
                ],
                256,
            ),
        };
        let mut branches = vec![vec![Layer::Dense(Dense::new(width, 1, rng))]];
        for _ in 0..heads {
            branches.push(vec![Layer::Dense(Dense::new(width, self.actions(), rng))]);
        }
        Network::new(self.obs_dim(), trunk, branches)
            .expect("built-in architectures are consistent")
    }
}

/// `Q_a = V + A_a − mean(A)`.
pub fn dueling_combine(value: f64, advantages: &[f64]) -> Vec<f64> {
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    advantages.iter().map(|a| value + a - mean).collect()
}

/// Dueling Q-network with one value branch and `heads` advantage branches.
///
/// With several heads each head defines its own Q-function over the shared
/// value; the acting Q-vector is the mean over heads.
#[derive(Debug, Clone)]
pub struct DuelingQNet {
    arch: QArch,
    heads: usize,
    net: Network,
}

impl DuelingQNet {
    pub fn new<R: Rng + ?Sized>(arch: QArch, heads: usize, rng: &mut R) -> Self {
        assert!(heads >= 1, "at least one advantage head");
        Self {
            arch,
            heads,
            net: arch.build(heads, rng),
        }
    }

    pub fn from_network(arch: QArch, heads: usize, net: Network) -> Result<Self> {
        let mut dims = vec![1];
        dims.extend(std::iter::repeat_n(arch.actions(), heads));
        if net.input_dim() != arch.obs_dim() || net.output_dims() != dims {
            return Err(Error::Config(format!(
                "network does not match {} dueling layout with {heads} heads",
                arch.name()
            )));
        }
        Ok(Self { arch, heads, net })
    }

    pub fn arch(&self) -> QArch {
        self.arch
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn actions(&self) -> usize {
        self.arch.actions()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    fn combine(&self, outputs: &[Matrix]) -> Vec<Matrix> {
        let values = &outputs[0];
        outputs[1..]
            .iter()
            .map(|adv| {
                let mut q = Matrix::zeros(adv.rows(), adv.cols());
                for r in 0..adv.rows() {
                    q.row_mut(r)
                        .copy_from_slice(&dueling_combine(values.get(r, 0), adv.row(r)));
                }
                q
            })
            .collect()
    }

    /// Per-head Q matrices for a batch of observations.
    pub fn head_q_batch(&self, obs: &Matrix) -> Result<Vec<Matrix>> {
        Ok(self.combine(&self.net.forward(obs)?))
    }

    /// Head-averaged Q matrix for a batch.
    pub fn q_batch(&self, obs: &Matrix) -> Result<Matrix> {
        let heads = self.head_q_batch(obs)?;
        Ok(mean_heads(heads))
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.q_batch(&Matrix::row_vector(obs))?.into_vec())
    }

    pub fn head_q_values(&self, obs: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .head_q_batch(&Matrix::row_vector(obs))?
            .into_iter()
            .map(Matrix::into_vec)
            .collect())
    }

    pub fn greedy(&self, obs: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }

    /// Recording forward pass; returns per-head Q matrices.
    pub fn forward_train(&mut self, obs: &Matrix) -> Result<Vec<Matrix>> {
        let outputs = self.net.forward_train(obs)?;
        Ok(self.combine(&outputs))
    }

    /// Backpropagates per-head Q gradients through the dueling combination.
    pub fn backward(&mut self, dq: &[Matrix]) -> Result<Gradients> {
        if dq.len() != self.heads {
            return Err(Error::Dimension {
                context: "per-head Q gradients",
                expected: self.heads,
                got: dq.len(),
            });
        }
        let rows = dq[0].rows();
        let mut dv = Matrix::zeros(rows, 1);
        let mut grads = Vec::with_capacity(self.heads + 1);
        for g in dq {
            let mut da = Matrix::zeros(rows, g.cols());
            for r in 0..rows {
                let row = g.row(r);
                let total: f64 = row.iter().sum();
                let mean = total / row.len() as f64;
                dv.set(r, 0, dv.get(r, 0) + total);
                for (d, v) in da.row_mut(r).iter_mut().zip(row) {
                    *d = v - mean;
                }
            }
            grads.push(da);
        }
        grads.insert(0, dv);
        self.net.backward(&grads)
    }

    /// Greedy action of every head.
    pub fn head_argmaxes(&self, obs: &[f64]) -> Result<Vec<usize>> {
        Ok(self.head_q_values(obs)?.iter().map(|q| argmax(q)).collect())
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.net.tensors()
    }

    pub fn load_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        self.net.load_tensors(tensors)
    }
}

fn mean_heads(mut heads: Vec<Matrix>) -> Matrix {
    if heads.len() == 1 {
        return heads.pop().expect("one head");
    }
    let n = heads.len() as f64;
    let mut acc = heads[0].clone();
    for h in &heads[1..] {
        for (a, v) in acc.as_mut_slice().iter_mut().zip(h.as_slice()) {
            *a += v;
        }
    }
    acc.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    acc
}

/// Disagreement level of a set of head votes, in `[0, 0.3]`.
///
/// With `k` heads voting against the majority action out of `h`, the level is
/// `0.3 · k(h−k) / (⌊h/2⌋·⌈h/2⌉)`; for five heads this gives 0, 0.2 and 0.3
/// for zero, one and two dissenters.
pub fn vote_disagreement(votes: &[usize]) -> f64 {
    let h = votes.len();
    if h < 2 {
        return 0.0;
    }
    let majority = majority_vote(votes);
    let k = votes.iter().filter(|&&v| v != majority).count();
    let norm = ((h / 2) * h.div_ceil(2)) as f64;
    0.3 * (k * (h - k)) as f64 / norm
}

/// Epistemic uncertainty of an ensemble-head network on `obs`.
pub fn ensemble_uncertainty(net: &DuelingQNet, obs: &[f64]) -> Result<f64> {
    Ok(vote_disagreement(&net.head_argmaxes(obs)?))
}
