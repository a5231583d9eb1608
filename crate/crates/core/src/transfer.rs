//! Expert-free online transfer: uncertainty-labelled transfer buffers,
//! temporary source election, confidence-discrepancy scoring and the
//! filters that pick which experience each target receives.

use std::borrow::BorrowMut;
use std::collections::VecDeque;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::agents::LearningProcess;
use crate::replay::{Origin, Transition};
use crate::uncertainty::Estimator;
use crate::{Error, Result};

/// A transition with the uncertainty its owner had when it was visited.
#[derive(Debug, Clone, PartialEq)]
pub struct UTuple {
    pub transition: Transition,
    pub u: f64,
}

/// Bounded FIFO of labelled transitions an agent offers for transfer.
#[derive(Debug, Clone)]
pub struct TransferBuffer {
    capacity: usize,
    items: VecDeque<UTuple>,
}

impl TransferBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "transfer buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: UTuple) {
        debug_assert!(t.u >= 0.0);
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &UTuple> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&UTuple> {
        self.items.get(i)
    }

    /// Mean stored uncertainty; `None` for an empty buffer.
    pub fn mean_uncertainty(&self) -> Option<f64> {
        if self.items.is_empty() {
            None
        } else {
            Some(self.items.iter().map(|t| t.u).sum::<f64>() / self.items.len() as f64)
        }
    }
}

/// How the source of a transfer step is elected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceSelection {
    /// Lowest mean uncertainty over the transfer buffer.
    UBar,
    /// Best mean return over recent episodes.
    Bp,
}

/// Which tuples a target takes from the source buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMethod {
    /// Random among tuples above the median Δ-conf.
    Rdc,
    /// Highest Δ-conf.
    Hdc,
    /// Highest normalized Δ-conf plus normalized expected surprise.
    Lec,
}

impl SourceSelection {
    pub const ALL: [SourceSelection; 2] = [SourceSelection::UBar, SourceSelection::Bp];
}

impl TransferMethod {
    pub const ALL: [TransferMethod; 3] = [
        TransferMethod::Rdc,
        TransferMethod::Hdc,
        TransferMethod::Lec,
    ];
}

impl fmt::Display for SourceSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceSelection::UBar => "U_BAR",
            SourceSelection::Bp => "BP",
        })
    }
}

impl fmt::Display for TransferMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferMethod::Rdc => "RDC",
            TransferMethod::Hdc => "HDC",
            TransferMethod::Lec => "LEC",
        })
    }
}

impl FromStr for SourceSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "U_BAR" | "UBAR" | "U" => Ok(SourceSelection::UBar),
            "BP" => Ok(SourceSelection::Bp),
            _ => Err(Error::Config(format!("unknown source selection {s:?}"))),
        }
    }
}

impl FromStr for TransferMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RDC" => Ok(TransferMethod::Rdc),
            "HDC" => Ok(TransferMethod::Hdc),
            "LEC" => Ok(TransferMethod::Lec),
            _ => Err(Error::Config(format!("unknown transfer method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    /// Tuples per target per transfer step.
    pub budget: usize,
    /// Episodes between transfer steps.
    pub frequency: usize,
    pub selection: SourceSelection,
    pub method: TransferMethod,
    pub start_episode: usize,
    /// Episodes averaged by return-based selection.
    pub bp_window: usize,
    pub buffer_capacity: usize,
}

impl TransferConfig {
    pub fn cartpole() -> Self {
        Self {
            budget: 500,
            frequency: 200,
            selection: SourceSelection::UBar,
            method: TransferMethod::Hdc,
            start_episode: 600,
            bp_window: 200,
            buffer_capacity: 10_000,
        }
    }

    pub fn predator_prey() -> Self {
        Self {
            frequency: 300,
            start_episode: 2500,
            bp_window: 400,
            buffer_capacity: 100_000,
            ..Self::cartpole()
        }
    }

    /// Transfer fires at the start episode and every `frequency` episodes after it.
    pub fn is_transfer_episode(&self, episode: usize) -> bool {
        self.frequency > 0
            && episode >= self.start_episode
            && (episode - self.start_episode).is_multiple_of(self.frequency)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequency == 0 {
            return Err(Error::Config("transfer frequency must be positive".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::Config(
                "transfer buffer capacity must be positive".into(),
            ));
        }
        if self.bp_window == 0 {
            return Err(Error::Config("return window must be positive".into()));
        }
        Ok(())
    }
}

/// Index of the smallest mean; agents without a mean are skipped and ties go
/// to the lowest index.
pub fn select_source_ubar(means: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in means.iter().enumerate() {
        if let Some(m) = *m {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((i, m));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Mean of the last `window` entries (fewer if fewer exist).
pub fn windowed_mean(returns: &[f64], window: usize) -> Option<f64> {
    if returns.is_empty() || window == 0 {
        return None;
    }
    let tail = &returns[returns.len().saturating_sub(window)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Index of the best recent mean return; ties go to the lowest index.
pub fn select_source_bp(histories: &[&[f64]], window: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, h) in histories.iter().enumerate() {
        if let Some(m) = windowed_mean(h, window) {
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Target's current uncertainty minus the uncertainty recorded by the source.
pub fn delta_conf(target: &Estimator, t: &UTuple) -> Result<f64> {
    Ok(target.estimate(&t.transition)? - t.u)
}

/// Δ-conf of every tuple in the buffer, in buffer order.
pub fn delta_confs(target: &Estimator, tb: &TransferBuffer) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(tb.len());
    let items: Vec<&UTuple> = tb.iter().collect();
    for chunk in items.chunks(256) {
        let ts: Vec<&Transition> = chunk.iter().map(|t| &t.transition).collect();
        let est = target.estimate_batch(&ts)?;
        out.extend(est.iter().zip(chunk).map(|(e, t)| e - t.u));
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Positions of the `b` highest scores; equal scores keep buffer order.
pub fn top_b(scores: &[f64], b: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // `+ 0.0` folds -0.0 into 0.0 so equal scores tie regardless of sign
    idx.sort_by(|&i, &j| (scores[j] + 0.0).total_cmp(&(scores[i] + 0.0)));
    idx.truncate(b);
    idx
}

pub fn hdc_indices(delta: &[f64], b: usize) -> Vec<usize> {
    top_b(delta, b)
}

/// Uniform sample of up to `b` positions whose Δ-conf is strictly above the
/// median, returned in buffer order.
pub fn rdc_indices<R: Rng + ?Sized>(delta: &[f64], b: usize, rng: &mut R) -> Vec<usize> {
    let Some(m) = median(delta) else {
        return Vec::new();
    };
    let candidates: Vec<usize> = (0..delta.len()).filter(|&i| delta[i] > m).collect();
    if candidates.len() <= b {
        return candidates;
    }
    let mut picked: Vec<usize> = sample(rng, candidates.len(), b)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    picked.sort_unstable();
    picked
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; values.len()]
    }
}

/// `minmax(Δ-conf) + minmax(surprise)`, with a degenerate range mapping to 0.5.
pub fn lec_scores(delta: &[f64], surprise: &[f64]) -> Vec<f64> {
    assert_eq!(delta.len(), surprise.len(), "one surprise value per tuple");
    min_max(delta)
        .iter()
        .zip(min_max(surprise))
        .map(|(a, b)| a + b)
        .collect()
}

pub fn lec_indices(delta: &[f64], surprise: &[f64], b: usize) -> Vec<usize> {
    top_b(&lec_scores(delta, surprise), b)
}

fn gather(tb: &TransferBuffer, idx: &[usize]) -> Vec<UTuple> {
    idx.iter().map(|&i| tb.items[i].clone()).collect()
}

pub fn filter_hdc(tb: &TransferBuffer, target: &Estimator, b: usize) -> Result<Vec<UTuple>> {
    Ok(gather(tb, &hdc_indices(&delta_confs(target, tb)?, b)))
}

pub fn filter_rdc<R: Rng + ?Sized>(
    tb: &TransferBuffer,
    target: &Estimator,
    b: usize,
    rng: &mut R,
) -> Result<Vec<UTuple>> {
    Ok(gather(tb, &rdc_indices(&delta_confs(target, tb)?, b, rng)))
}

pub fn filter_lec(
    tb: &TransferBuffer,
    target: &Estimator,
    lp: &LearningProcess,
    b: usize,
) -> Result<Vec<UTuple>> {
    let delta = delta_confs(target, tb)?;
    Ok(gather(tb, &lec_indices(&delta, &surprises(lp, tb)?, b)))
}

/// Squared TD error of the target's learner on every tuple.
pub fn surprises(lp: &LearningProcess, tb: &TransferBuffer) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(tb.len());
    let items: Vec<&Transition> = tb.iter().map(|t| &t.transition).collect();
    for chunk in items.chunks(256) {
        out.extend(lp.td_errors(chunk)?);
    }
    Ok(out)
}

/// Selected positions and their Δ-conf under `method`.
pub fn select_batch<R: Rng + ?Sized>(
    method: TransferMethod,
    tb: &TransferBuffer,
    target: &Estimator,
    lp: &LearningProcess,
    b: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if b == 0 || tb.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let delta = delta_confs(target, tb)?;
    let idx = match method {
        TransferMethod::Hdc => hdc_indices(&delta, b),
        TransferMethod::Rdc => rdc_indices(&delta, b, rng),
        TransferMethod::Lec => lec_indices(&delta, &surprises(lp, tb)?, b),
    };
    let d = idx.iter().map(|&i| delta[i]).collect();
    Ok((idx, d))
}

/// Inserts a received batch into the target's prioritized replay at max priority.
pub fn integrate_batch(lp: &mut LearningProcess, batch: &[UTuple], source: usize, episode: usize) {
    for t in batch {
        lp.replay_mut().push(
            t.transition.clone(),
            Origin::Transferred { source, episode },
        );
    }
}

/// Everything of one agent that takes part in transfer.
#[derive(Debug, Clone)]
pub struct Peer {
    pub lp: LearningProcess,
    pub estimator: Estimator,
    pub buffer: TransferBuffer,
    /// Undiscounted return of every completed training episode.
    pub returns: Vec<f64>,
}

/// One `(transfer step, target)` record.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRow {
    pub episode: usize,
    pub source: usize,
    pub target: usize,
    pub batch: usize,
    pub dconf_mean: Option<f64>,
    pub dconf_min: Option<f64>,
    pub dconf_max: Option<f64>,
}

pub const TRANSFER_CSV_HEADER: &str = "episode,source,target,batch,dconf_mean,dconf_min,dconf_max";

impl TransferRow {
    pub fn csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            self.source,
            self.target,
            self.batch,
            f(self.dconf_mean),
            f(self.dconf_min),
            f(self.dconf_max)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub episode: usize,
    pub source: Option<usize>,
    pub rows: Vec<TransferRow>,
    /// Why no transfer happened, if it did not.
    pub skipped: Option<String>,
}

impl TransferReport {
    pub fn to_csv_rows(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.csv());
        }
        s
    }
}

/// One transfer step among the peers listed in `members` (agent ids are
/// positions in `peers`). Elects a source, then every other member filters
/// the source buffer with its own estimator and integrates the batch.
pub fn transfer_step<P: BorrowMut<Peer>, R: Rng + ?Sized>(
    peers: &mut [P],
    members: &[usize],
    cfg: &TransferConfig,
    episode: usize,
    rng: &mut R,
) -> Result<TransferReport> {
    let skip = |why: &str| TransferReport {
        episode,
        source: None,
        rows: Vec::new(),
        skipped: Some(why.to_string()),
    };
    if members.len() < 2 {
        return Ok(skip("fewer than two participating agents"));
    }
    let chosen = match cfg.selection {
        SourceSelection::UBar => {
            let means: Vec<Option<f64>> = members
                .iter()
                .map(|&i| peers[i].borrow().buffer.mean_uncertainty())
                .collect();
            select_source_ubar(&means)
        }
        SourceSelection::Bp => {
            let hist: Vec<&[f64]> = members
                .iter()
                .map(|&i| &peers[i].borrow().returns[..])
                .collect();
            select_source_bp(&hist, cfg.bp_window)
        }
    };
    let Some(pos) = chosen else {
        return Ok(skip("no eligible source"));
    };
    let source = members[pos];
    if peers[source].borrow().buffer.is_empty() {
        return Ok(skip("source transfer buffer is empty"));
    }
    let mut rows = Vec::with_capacity(members.len() - 1);
    for &target in members.iter().filter(|&&m| m != source) {
        let (idx, delta) = {
            let tb = &peers[source].borrow().buffer;
            let t = peers[target].borrow();
            select_batch(cfg.method, tb, &t.estimator, &t.lp, cfg.budget, rng)?
        };
        let batch = gather(&peers[source].borrow().buffer, &idx);
        integrate_batch(&mut peers[target].borrow_mut().lp, &batch, source, episode);
        let stat = |f: fn(f64, f64) -> f64| delta.iter().copied().reduce(f);
        rows.push(TransferRow {
            episode,
            source,
            target,
            batch: batch.len(),
            dconf_mean: (!delta.is_empty()).then(|| delta.iter().sum::<f64>() / delta.len() as f64),
            dconf_min: stat(f64::min),
            dconf_max: stat(f64::max),
        });
    }
    Ok(TransferReport {
        episode,
        source: Some(source),
        rows,
        skipped: None,
    })
}
