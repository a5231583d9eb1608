//! Experience storage: transitions, a plain FIFO replay and proportional
//! prioritized replay backed by a sum tree.

use std::collections::VecDeque;

use rand::Rng;

use crate::{Error, Result};

/// One agent-environment interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Where a stored transition came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Own,
    Transferred { source: usize, episode: usize },
}

/// Binary sum tree over `capacity` leaves with a parallel max tree.
///
/// Interior nodes are recomputed from their children on every write, so the
/// root is always the exact tree-ordered sum of the leaves.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    sum: Vec<f64>,
    max: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            sum: vec![0.0; 2 * leaves],
            max: vec![0.0; 2 * leaves],
        }
    }

    pub fn set(&mut self, index: usize, value: f64) {
        let mut node = index + self.leaves;
        self.sum[node] = value;
        self.max[node] = value;
        while node > 1 {
            node /= 2;
            self.sum[node] = self.sum[2 * node] + self.sum[2 * node + 1];
            self.max[node] = self.max[2 * node].max(self.max[2 * node + 1]);
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.sum[index + self.leaves]
    }

    pub fn total(&self) -> f64 {
        self.sum[1]
    }

    pub fn max(&self) -> f64 {
        self.max[1]
    }

    /// Leaf whose cumulative interval contains `mass` (clamped into `[0, total)`).
    /// Never returns a zero-valued leaf while the total is positive.
    pub fn find(&self, mass: f64) -> usize {
        let mut mass = mass.clamp(0.0, self.total());
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            if (mass < self.sum[left] && self.sum[left] > 0.0) || self.sum[left + 1] <= 0.0 {
                node = left;
            } else {
                mass -= self.sum[left];
                node = left + 1;
            }
        }
        node - self.leaves
    }
}

/// Handle to a sampled slot. Carries the insertion serial so that a priority
/// update aimed at an evicted transition can be recognised and dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleIndex {
    pub slot: usize,
    serial: u64,
}

#[derive(Debug, Clone)]
pub struct Stored {
    pub transition: Transition,
    pub origin: Origin,
    pub priority: f64,
    serial: u64,
}

/// Indices, importance-sampling weights and sampling probabilities of one draw.
#[derive(Debug, Clone)]
pub struct Sample {
    pub indices: Vec<SampleIndex>,
    pub weights: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Hyperparameters of proportional prioritization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityConfig {
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub min_priority: f64,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            min_priority: 1e-2,
        }
    }
}

impl PriorityConfig {
    /// Linear IS-exponent schedule over training progress in `[0, 1]`.
    pub fn beta_at(&self, progress: f64) -> f64 {
        let f = progress.clamp(0.0, 1.0);
        self.beta_start + (self.beta_end - self.beta_start) * f
    }
}

/// Proportional prioritized experience replay.
#[derive(Debug, Clone)]
pub struct PrioritizedReplay {
    capacity: usize,
    cfg: PriorityConfig,
    beta: f64,
    entries: Vec<Stored>,
    head: usize,
    serial: u64,
    tree: SumTree,
    raw: SumTree,
    stale_updates: u64,
    transferred_received: u64,
}

impl PrioritizedReplay {
    pub fn new(capacity: usize, cfg: PriorityConfig) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            cfg,
            beta: cfg.beta_start,
            entries: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            serial: 0,
            tree: SumTree::new(capacity),
            raw: SumTree::new(capacity),
            stale_updates: 0,
            transferred_received: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn config(&self) -> &PriorityConfig {
        &self.cfg
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
    }

    /// Sum of `p^alpha` over stored entries (the sum-tree root).
    pub fn total_mass(&self) -> f64 {
        self.tree.total()
    }

    /// Largest raw priority currently stored (1 for an empty buffer).
    pub fn max_priority(&self) -> f64 {
        if self.entries.is_empty() {
            1.0
        } else {
            self.raw.max()
        }
    }

    /// Number of priority updates dropped because their slot was overwritten.
    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    /// Lifetime count of transferred transitions inserted.
    pub fn transferred_received(&self) -> u64 {
        self.transferred_received
    }

    /// Transferred transitions currently stored.
    pub fn transferred_stored(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.origin, Origin::Transferred { .. }))
            .count()
    }

    pub fn get(&self, index: SampleIndex) -> &Stored {
        &self.entries[index.slot]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Stored> {
        self.entries.iter()
    }

    /// Inserts at the current maximum priority.
    pub fn push(&mut self, transition: Transition, origin: Origin) {
        self.push_with_priority(transition, origin, self.max_priority());
    }

    /// Inserts with an explicit raw priority, evicting the oldest entry when full.
    pub fn push_with_priority(&mut self, transition: Transition, origin: Origin, priority: f64) {
        assert!(
            priority.is_finite() && priority > 0.0,
            "priority must be positive and finite, got {priority}"
        );
        self.serial += 1;
        if matches!(origin, Origin::Transferred { .. }) {
            self.transferred_received += 1;
        }
        let stored = Stored {
            transition,
            origin,
            priority,
            serial: self.serial,
        };
        let slot = self.head;
        if self.entries.len() < self.capacity {
            self.entries.push(stored);
        } else {
            self.entries[slot] = stored;
        }
        self.tree.set(slot, priority.powf(self.cfg.alpha));
        self.raw.set(slot, priority);
        self.head = (self.head + 1) % self.capacity;
    }

    /// Draws `batch` entries independently with probability `p^alpha / Σ p^alpha`.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Sample> {
        if self.entries.is_empty() {
            return Err(Error::Usage(
                "cannot sample from an empty replay buffer".into(),
            ));
        }
        let total = self.tree.total();
        let n = self.entries.len() as f64;
        let mut indices = Vec::with_capacity(batch);
        let mut probabilities = Vec::with_capacity(batch);
        for _ in 0..batch {
            let slot = self.tree.find(rng.gen::<f64>() * total);
            probabilities.push(self.tree.get(slot) / total);
            indices.push(SampleIndex {
                slot,
                serial: self.entries[slot].serial,
            });
        }
        let mut weights: Vec<f64> = probabilities
            .iter()
            .map(|p| (n * p).powf(-self.beta))
            .collect();
        let max_w = weights.iter().copied().fold(0.0, f64::max);
        if max_w > 0.0 {
            weights.iter_mut().for_each(|w| *w /= max_w);
        }
        Ok(Sample {
            indices,
            weights,
            probabilities,
        })
    }

    /// Sets `p_i = |δ_i| + min_priority` for each still-live index.
    pub fn update_priorities(&mut self, indices: &[SampleIndex], td_errors: &[f64]) {
        for (idx, delta) in indices.iter().zip(td_errors) {
            match self.entries.get(idx.slot) {
                Some(e) if e.serial == idx.serial => {
                    let p = delta.abs() + self.cfg.min_priority;
                    self.entries[idx.slot].priority = p;
                    self.tree.set(idx.slot, p.powf(self.cfg.alpha));
                    self.raw.set(idx.slot, p);
                }
                _ => self.stale_updates += 1,
            }
        }
    }
}

/// Bounded FIFO replay with uniform sampling.
#[derive(Debug, Clone)]
pub struct FifoReplay {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl FifoReplay {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn sample<'a, R: Rng + ?Sized>(
        &'a self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<&'a Transition>> {
        if self.entries.is_empty() {
            return Err(Error::Usage(
                "cannot sample from an empty replay buffer".into(),
            ));
        }
        Ok((0..batch)
            .map(|_| &self.entries[rng.gen_range(0..self.entries.len())])
            .collect())
    }
}
