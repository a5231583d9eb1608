use rand::{Rng, RngCore};

use crate::nn::{argmax, softmax};

/// Action-selection policy during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exploration {
    /// Sample from `softmax(Q / temperature)`.
    Softmax {
        temperature: f64,
    },
    /// ε-greedy with ε decaying linearly from `start` at episode 0 to 0 at `zero_at`.
    EpsilonDecay {
        start: f64,
        zero_at: usize,
    },
    Greedy,
}

impl Exploration {
    pub fn epsilon(&self, episode: usize) -> f64 {
        match *self {
            Exploration::EpsilonDecay { start, zero_at } => {
                if episode >= zero_at || zero_at == 0 {
                    0.0
                } else {
                    start * (1.0 - episode as f64 / zero_at as f64)
                }
            }
            _ => 0.0,
        }
    }

    pub fn select(&self, q: &[f64], episode: usize, rng: &mut dyn RngCore) -> usize {
        match *self {
            Exploration::Softmax { temperature } => {
                let scaled: Vec<f64> = q.iter().map(|v| v / temperature).collect();
                sample_categorical(&softmax(&scaled), rng)
            }
            Exploration::EpsilonDecay { .. } => {
                let eps = self.epsilon(episode);
                // no draw once ε is exactly 0, keeping greedy phases RNG-free
                if eps > 0.0 && rng.gen::<f64>() < eps {
                    rng.gen_range(0..q.len())
                } else {
                    argmax(q)
                }
            }
            Exploration::Greedy => argmax(q),
        }
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(p: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}
