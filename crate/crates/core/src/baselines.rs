//! Advice-based baselines: peer advising driven by relative confidence
//! (nEB-Adv) and expert-jury advising gated by ensemble disagreement (EB-Adv).

use std::path::Path;

use crate::agents::{ensemble_uncertainty, DuelingQNet, QArch};
use crate::nn::Checkpoint;
use crate::{Error, Result};

/// Most frequent action; ties go to the lowest action id.
pub fn majority_vote(votes: &[usize]) -> usize {
    let n = votes.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n];
    for &v in votes {
        counts[v] += 1;
    }
    let mut best = 0;
    for (a, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = a;
        }
    }
    best
}

/// Finite supply of advice units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdviceBudget {
    initial: u64,
    remaining: u64,
}

impl AdviceBudget {
    pub fn new(initial: u64) -> Self {
        Self {
            initial,
            remaining: initial,
        }
    }

    pub fn initial(&self) -> u64 {
        self.initial
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    pub fn consumed(&self) -> u64 {
        self.initial - self.remaining
    }

    /// Takes `n` units if that many remain; otherwise takes nothing.
    pub fn try_consume(&mut self, n: u64) -> bool {
        if n <= self.remaining {
            self.remaining -= n;
            true
        } else {
            false
        }
    }
}

/// Whether `agent` is strictly the most uncertain of all peers.
pub fn is_strictly_most_uncertain(agent: usize, uncertainties: &[f64]) -> bool {
    let own = uncertainties[agent];
    uncertainties
        .iter()
        .enumerate()
        .all(|(j, &u)| j == agent || own > u)
}

/// Peer-advice decision. `uncertainties[j]` is peer `j`'s state uncertainty
/// on the asking agent's observation; `peer_action(j)` is peer `j`'s greedy
/// action there. Returns the advised action, or `None` to act normally.
/// Each advising peer costs one budget unit.
pub fn neb_adv_decide<F>(
    agent: usize,
    uncertainties: &[f64],
    mut peer_action: F,
    budget: &mut AdviceBudget,
) -> Result<Option<usize>>
where
    F: FnMut(usize) -> Result<usize>,
{
    let peers = uncertainties.len();
    if peers < 2 || !is_strictly_most_uncertain(agent, uncertainties) {
        return Ok(None);
    }
    if !budget.try_consume((peers - 1) as u64) {
        return Ok(None);
    }
    let votes = (0..peers)
        .filter(|&j| j != agent)
        .map(&mut peer_action)
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(majority_vote(&votes)))
}

/// Trained agents whose majority greedy action is given as advice.
#[derive(Debug, Clone)]
pub struct Jury {
    members: Vec<DuelingQNet>,
}

impl Jury {
    pub fn new(members: Vec<DuelingQNet>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("a jury needs at least one member".into()));
        }
        Ok(Self { members })
    }

    /// Loads single-head networks of `arch` from checkpoint files.
    pub fn load<P: AsRef<Path>>(arch: QArch, paths: &[P]) -> Result<Self> {
        let members = paths
            .iter()
            .map(|p| jury_member(arch, &Checkpoint::load(p.as_ref())?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn advise(&self, obs: &[f64]) -> Result<usize> {
        let votes = self
            .members
            .iter()
            .map(|m| m.greedy(obs))
            .collect::<Result<Vec<_>>>()?;
        Ok(majority_vote(&votes))
    }
}

/// Rebuilds a network from a learning-process checkpoint.
pub fn jury_member(arch: QArch, ck: &Checkpoint) -> Result<DuelingQNet> {
    if ck.meta("arch") != Some(arch.name()) {
        return Err(Error::Checkpoint(format!(
            "jury checkpoint arch {:?} does not match {}",
            ck.meta("arch"),
            arch.name()
        )));
    }
    let heads: usize = ck
        .meta("heads")
        .and_then(|h| h.parse().ok())
        .ok_or_else(|| Error::Checkpoint("jury checkpoint lacks a head count".into()))?;
    // parameters are overwritten below, so the init stream is irrelevant
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    let mut net = DuelingQNet::new(arch, heads, &mut rng);
    net.load_tensors(&ck.group("online"))?;
    Ok(net)
}

/// Per-agent expert-advice state: once the agent's ensemble disagreement
/// exceeds the threshold, the jury drives it until the episode ends.
#[derive(Debug, Clone)]
pub struct EbAdvisor {
    pub threshold: f64,
    pub budget: AdviceBudget,
    advising: bool,
    advised_steps: u64,
}

impl EbAdvisor {
    pub fn new(threshold: f64, episodes: u64) -> Self {
        Self {
            threshold,
            budget: AdviceBudget::new(episodes),
            advising: false,
            advised_steps: 0,
        }
    }

    pub fn begin_episode(&mut self) {
        self.advising = false;
        self.advised_steps = 0;
    }

    pub fn is_advising(&self) -> bool {
        self.advising
    }

    /// Steps advised during the current episode.
    pub fn advised_steps(&self) -> u64 {
        self.advised_steps
    }

    /// Advised action for this step, or `None` to act normally.
    pub fn decide(
        &mut self,
        agent: &DuelingQNet,
        jury: &Jury,
        obs: &[f64],
    ) -> Result<Option<usize>> {
        if !self.advising
            && self.budget.remaining() > 0
            && ensemble_uncertainty(agent, obs)? > self.threshold
        {
            self.budget.try_consume(1);
            self.advising = true;
        }
        if !self.advising {
            return Ok(None);
        }
        self.advised_steps += 1;
        Ok(Some(jury.advise(obs)?))
    }
}

/// One row of the budget-consumption log.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRow {
    pub episode: usize,
    pub agent: usize,
    pub mechanism: &'static str,
    pub advices_used: u64,
    pub remaining: u64,
}

pub const BUDGET_CSV_HEADER: &str = "episode,agent,mechanism,advices_used_this_episode,remaining";

impl BudgetRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.episode, self.agent, self.mechanism, self.advices_used, self.remaining
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{LearningProcess, LpConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn majority_examples() {
        assert_eq!(majority_vote(&[0, 0, 1]), 0);
        assert_eq!(majority_vote(&[1, 2, 2]), 2);
        assert_eq!(majority_vote(&[0, 1]), 0);
        assert_eq!(majority_vote(&[3, 1, 3, 1]), 1);
    }

    #[test]
    fn neb_adv_examples() {
        let mut budget = AdviceBudget::new(30_000);
        let actions = [1, 0, 1, 1, 0];
        let u = [0.9, 0.1, 0.2, 0.3, 0.4];
        let got = neb_adv_decide(0, &u, |j| Ok(actions[j]), &mut budget).unwrap();
        // peers 1..4 vote 0,1,1,0 → tie → 0
        assert_eq!(got, Some(0));
        assert_eq!(budget.remaining(), 30_000 - 4);

        let got = neb_adv_decide(1, &u, |j| Ok(actions[j]), &mut budget).unwrap();
        assert_eq!(got, None);
        assert_eq!(budget.remaining(), 30_000 - 4);

        let tied = [0.5, 0.5, 0.1];
        assert_eq!(
            neb_adv_decide(0, &tied, |_| Ok(1), &mut budget).unwrap(),
            None
        );

        let mut low = AdviceBudget::new(3);
        assert_eq!(neb_adv_decide(0, &u, |_| Ok(1), &mut low).unwrap(), None);
        assert_eq!(low.remaining(), 3);

        let mut solo = AdviceBudget::new(10);
        assert_eq!(
            neb_adv_decide(0, &[1.0], |_| Ok(1), &mut solo).unwrap(),
            None
        );
    }

    fn ensemble_net(seed: u64) -> DuelingQNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DuelingQNet::new(QArch::CartPole, 5, &mut rng)
    }

    /// Sets advantage head `h` to prefer action `a` everywhere.
    fn force_heads(net: &mut DuelingQNet, prefs: &[usize]) {
        let mut params = net.network_mut().params_mut();
        // trunk 4 tensors, value 2, then (weight, bias) per head
        for (h, &a) in prefs.iter().enumerate() {
            params[6 + 2 * h].iter_mut().for_each(|v| *v = 0.0);
            let bias = &mut params[7 + 2 * h];
            bias.iter_mut().for_each(|v| *v = 0.0);
            bias[a] = 1.0;
        }
    }

    fn jury(action: usize) -> Jury {
        let members = (0..3)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
                let mut n = DuelingQNet::new(QArch::CartPole, 1, &mut rng);
                let mut params = n.network_mut().params_mut();
                params[6].iter_mut().for_each(|v| *v = 0.0);
                params[7].iter_mut().for_each(|v| *v = 0.0);
                params[7][action] = 1.0;
                n
            })
            .collect();
        Jury::new(members).unwrap()
    }

    #[test]
    fn eb_adv_examples() {
        let obs = [0.0, 0.1, 0.0, -0.1];
        let j = jury(1);

        let mut net = ensemble_net(1);
        force_heads(&mut net, &[0, 0, 0, 1, 1]);
        let mut adv = EbAdvisor::new(0.25, 300);
        adv.begin_episode();
        assert_eq!(adv.decide(&net, &j, &obs).unwrap(), Some(1));
        assert_eq!(adv.budget.remaining(), 299);
        // stays advised for the rest of the episode, no extra cost
        force_heads(&mut net, &[0; 5]);
        assert_eq!(adv.decide(&net, &j, &obs).unwrap(), Some(1));
        assert_eq!(adv.budget.remaining(), 299);
        adv.begin_episode();
        assert_eq!(adv.decide(&net, &j, &obs).unwrap(), None);

        force_heads(&mut net, &[0, 0, 0, 0, 1]);
        assert_eq!(
            adv.decide(&net, &j, &obs).unwrap(),
            None,
            "0.2 is below 0.25"
        );

        let mut empty = EbAdvisor::new(0.25, 0);
        force_heads(&mut net, &[0, 0, 0, 1, 1]);
        empty.begin_episode();
        assert_eq!(empty.decide(&net, &j, &obs).unwrap(), None);
    }

    #[test]
    fn jury_loads_from_learner_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for i in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let lp = LearningProcess::new(QArch::CartPole, LpConfig::cartpole(), &mut rng);
            let p = dir.path().join(format!("agent{i}.ckpt"));
            lp.to_checkpoint().save(&p).unwrap();
            paths.push(p);
        }
        let j = Jury::load(QArch::CartPole, &paths).unwrap();
        assert_eq!(j.len(), 3);
        assert!(j.advise(&[0.0; 4]).unwrap() < 2);
        assert!(Jury::load(QArch::PredatorPrey, &paths).is_err());
    }

    proptest! {
        #[test]
        fn budget_identity(initial in 0u64..1000, draws in prop::collection::vec(0u64..50, 0..100)) {
            let mut b = AdviceBudget::new(initial);
            for d in draws {
                let before = b.remaining();
                b.try_consume(d);
                prop_assert!(b.remaining() <= before);
                prop_assert_eq!(b.consumed() + b.remaining(), initial);
            }
        }

        #[test]
        fn majority_is_a_mode(votes in prop::collection::vec(0usize..5, 1..30)) {
            let m = majority_vote(&votes);
            let count = |a: usize| votes.iter().filter(|&&v| v == a).count();
            prop_assert!((0..5).all(|a| count(a) < count(m) || (count(a) == count(m) && a >= m)));
        }
    }
}
