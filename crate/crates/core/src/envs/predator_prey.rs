use rand::seq::index::sample;
use rand::{Rng, RngCore};

use super::{join_f64, join_usize, JointStep, MultiAgentEnv};
use crate::{Error, Result};

pub const OBS_CHANNELS: usize = 3;
pub const OBS_POSITIONS: usize = 9;
/// Largest code per observation channel (type, team, heading); observations
/// carry `code / max` so every input lies in `[0, 1]`.
pub const OBS_CODE_MAX: [f64; OBS_CHANNELS] = [3.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Team {
    Red,
    Green,
}

impl Team {
    pub fn index(self) -> usize {
        match self {
            Team::Red => 0,
            Team::Green => 1,
        }
    }

    pub fn other(self) -> Team {
        match self {
            Team::Red => Team::Green,
            Team::Green => Team::Red,
        }
    }

    fn code(self) -> f64 {
        match self {
            Team::Red => 1.0,
            Team::Green => 2.0,
        }
    }

    pub fn from_name(s: &str) -> Option<Team> {
        match s {
            "red" => Some(Team::Red),
            "green" => Some(Team::Green),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Team::Red => "red",
            Team::Green => "green",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    Up,
    Down,
    Left,
    Right,
}

impl Heading {
    const ALL: [Heading; 4] = [Heading::Up, Heading::Down, Heading::Left, Heading::Right];

    fn delta(self) -> (isize, isize) {
        match self {
            Heading::Up => (-1, 0),
            Heading::Down => (1, 0),
            Heading::Left => (0, -1),
            Heading::Right => (0, 1),
        }
    }

    fn rotate_left(self) -> Heading {
        match self {
            Heading::Up => Heading::Left,
            Heading::Left => Heading::Down,
            Heading::Down => Heading::Right,
            Heading::Right => Heading::Up,
        }
    }

    fn rotate_right(self) -> Heading {
        match self {
            Heading::Up => Heading::Right,
            Heading::Right => Heading::Down,
            Heading::Down => Heading::Left,
            Heading::Left => Heading::Up,
        }
    }

    fn code(self) -> f64 {
        match self {
            Heading::Up => 1.0,
            Heading::Down => 2.0,
            Heading::Left => 3.0,
            Heading::Right => 4.0,
        }
    }

    fn letter(self) -> char {
        match self {
            Heading::Up => 'U',
            Heading::Down => 'D',
            Heading::Left => 'L',
            Heading::Right => 'R',
        }
    }
}

/// Predator action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpAction {
    RotateLeft,
    RotateRight,
    Forward,
    Pick,
    Hold,
}

impl PpAction {
    pub const COUNT: usize = 5;

    pub fn from_index(i: usize) -> Option<PpAction> {
        Some(match i {
            0 => PpAction::RotateLeft,
            1 => PpAction::RotateRight,
            2 => PpAction::Forward,
            3 => PpAction::Pick,
            4 => PpAction::Hold,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entity {
    pub cell: Cell,
    pub heading: Heading,
    pub team: Team,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prey {
    pub entity: Entity,
    pub alive: bool,
}

/// Reward scheme. Every predator pays `step` each step on top of its action outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpRewards {
    pub step: f64,
    pub catch: f64,
    pub miscatch: f64,
    pub empty_pick: f64,
}

impl Default for PpRewards {
    fn default() -> Self {
        Self {
            step: -0.01,
            catch: 1.0,
            miscatch: -1.0,
            empty_pick: -0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpConfig {
    pub size: usize,
    pub predators_per_team: usize,
    pub prey_per_team: usize,
    pub max_steps: usize,
    pub rewards: PpRewards,
}

impl Default for PpConfig {
    fn default() -> Self {
        Self {
            size: 12,
            predators_per_team: 4,
            prey_per_team: 2,
            max_steps: 200,
            rewards: PpRewards::default(),
        }
    }
}

/// Per-team counters for one step (or accumulated over an episode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PpEvents {
    pub catches: [usize; 2],
    pub miscatches: [usize; 2],
    pub empty_picks: [usize; 2],
}

impl PpEvents {
    pub fn add(&mut self, o: &PpEvents) {
        for t in 0..2 {
            self.catches[t] += o.catches[t];
            self.miscatches[t] += o.miscatches[t];
            self.empty_picks[t] += o.empty_picks[t];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Occupant {
    Predator(usize),
    Prey(usize),
}

/// Two-team grid predator-prey.
///
/// Predators `0..k` are red and `k..2k` green, likewise for prey. Predators
/// act in ascending index order, so a later mover sees earlier moves; prey
/// then take a uniformly random move each.
#[derive(Debug, Clone)]
pub struct PredatorPrey {
    cfg: PpConfig,
    predators: Vec<Entity>,
    prey: Vec<Prey>,
    grid: Vec<Option<Occupant>>,
    remaining: [usize; 2],
    steps: usize,
    done: bool,
    last_events: PpEvents,
}

impl PredatorPrey {
    pub fn new(cfg: PpConfig) -> Self {
        Self {
            cfg,
            predators: Vec::new(),
            prey: Vec::new(),
            grid: vec![None; cfg.size * cfg.size],
            remaining: [0; 2],
            steps: 0,
            done: true,
            last_events: PpEvents::default(),
        }
    }

    pub fn config(&self) -> &PpConfig {
        &self.cfg
    }

    pub fn predators(&self) -> &[Entity] {
        &self.predators
    }

    pub fn prey(&self) -> &[Prey] {
        &self.prey
    }

    /// Prey of `team` not yet captured.
    pub fn remaining(&self, team: Team) -> usize {
        self.remaining[team.index()]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn last_events(&self) -> PpEvents {
        self.last_events
    }

    pub fn team_of_predator(&self, i: usize) -> Team {
        self.predators[i].team
    }

    /// Starts an episode from an explicit layout.
    pub fn from_scene(cfg: PpConfig, predators: Vec<Entity>, prey: Vec<Entity>) -> Result<Self> {
        let mut env = Self::new(cfg);
        env.install(predators, prey)?;
        Ok(env)
    }

    fn install(&mut self, predators: Vec<Entity>, prey: Vec<Entity>) -> Result<()> {
        self.grid.fill(None);
        self.remaining = [0; 2];
        for (i, p) in predators.iter().enumerate() {
            self.occupy(p.cell, Occupant::Predator(i))?;
        }
        for (j, p) in prey.iter().enumerate() {
            self.occupy(p.cell, Occupant::Prey(j))?;
            self.remaining[p.team.index()] += 1;
        }
        self.predators = predators;
        self.prey = prey
            .into_iter()
            .map(|entity| Prey {
                entity,
                alive: true,
            })
            .collect();
        self.steps = 0;
        self.done = false;
        self.last_events = PpEvents::default();
        Ok(())
    }

    fn occupy(&mut self, cell: Cell, who: Occupant) -> Result<()> {
        if cell.row >= self.cfg.size || cell.col >= self.cfg.size {
            return Err(Error::Config(format!("cell {cell:?} outside the grid")));
        }
        let idx = cell.row * self.cfg.size + cell.col;
        if self.grid[idx].is_some() {
            return Err(Error::Config(format!("cell {cell:?} already occupied")));
        }
        self.grid[idx] = Some(who);
        Ok(())
    }

    fn at(&self, row: isize, col: isize) -> Option<Option<Occupant>> {
        let n = self.cfg.size as isize;
        if row < 0 || col < 0 || row >= n || col >= n {
            None
        } else {
            Some(self.grid[row as usize * self.cfg.size + col as usize])
        }
    }

    fn faced(e: &Entity) -> (isize, isize) {
        let (dr, dc) = e.heading.delta();
        (e.cell.row as isize + dr, e.cell.col as isize + dc)
    }

    /// Random layout: every entity on a distinct cell with a random heading.
    pub fn randomize(&mut self, rng: &mut dyn RngCore) {
        let k = self.cfg.predators_per_team;
        let m = self.cfg.prey_per_team;
        let cells = sample(rng, self.cfg.size * self.cfg.size, 2 * k + 2 * m).into_vec();
        let make = |idx: usize, team: Team, rng: &mut dyn RngCore| Entity {
            cell: Cell {
                row: cells[idx] / self.cfg.size,
                col: cells[idx] % self.cfg.size,
            },
            heading: Heading::ALL[rng.gen_range(0..4)],
            team,
        };
        let mut predators = Vec::with_capacity(2 * k);
        for i in 0..2 * k {
            let team = if i < k { Team::Red } else { Team::Green };
            predators.push(make(i, team, rng));
        }
        let mut prey = Vec::with_capacity(2 * m);
        for j in 0..2 * m {
            let team = if j < m { Team::Red } else { Team::Green };
            prey.push(make(2 * k + j, team, rng));
        }
        self.install(predators, prey)
            .expect("sampled cells are distinct and in bounds");
    }

    /// 3×3 window centred on the cell the predator faces, channel-major:
    /// `[type(9), team(9), heading(9)]`, positions row-major from the top-left.
    pub fn observe(&self, predator: usize) -> Vec<f64> {
        let (fr, fc) = Self::faced(&self.predators[predator]);
        let mut obs = vec![0.0; OBS_CHANNELS * OBS_POSITIONS];
        for dr in 0..3 {
            for dc in 0..3 {
                let p = dr * 3 + dc;
                let (kind, team, heading) =
                    match self.at(fr + dr as isize - 1, fc + dc as isize - 1) {
                        None => (1.0, 0.0, 0.0),
                        Some(None) => (0.0, 0.0, 0.0),
                        Some(Some(Occupant::Predator(i))) => {
                            let e = &self.predators[i];
                            (2.0, e.team.code(), e.heading.code())
                        }
                        Some(Some(Occupant::Prey(j))) => {
                            let e = &self.prey[j].entity;
                            (3.0, e.team.code(), e.heading.code())
                        }
                    };
                obs[p] = kind / OBS_CODE_MAX[0];
                obs[OBS_POSITIONS + p] = team / OBS_CODE_MAX[1];
                obs[2 * OBS_POSITIONS + p] = heading / OBS_CODE_MAX[2];
            }
        }
        obs
    }

    fn move_forward(&mut self, who: Occupant) {
        let e = match who {
            Occupant::Predator(i) => self.predators[i],
            Occupant::Prey(j) => self.prey[j].entity,
        };
        let (r, c) = Self::faced(&e);
        if let Some(None) = self.at(r, c) {
            let n = self.cfg.size;
            self.grid[e.cell.row * n + e.cell.col] = None;
            let cell = Cell {
                row: r as usize,
                col: c as usize,
            };
            self.grid[cell.row * n + cell.col] = Some(who);
            match who {
                Occupant::Predator(i) => self.predators[i].cell = cell,
                Occupant::Prey(j) => self.prey[j].entity.cell = cell,
            }
        }
    }

    fn pick(&mut self, i: usize, events: &mut PpEvents) -> f64 {
        let r = self.cfg.rewards;
        let pred = self.predators[i];
        let (row, col) = Self::faced(&pred);
        match self.at(row, col) {
            Some(Some(Occupant::Prey(j))) => {
                let prey_team = self.prey[j].entity.team;
                self.prey[j].alive = false;
                self.grid[row as usize * self.cfg.size + col as usize] = None;
                self.remaining[prey_team.index()] -= 1;
                if prey_team == pred.team {
                    events.catches[pred.team.index()] += 1;
                    r.catch
                } else {
                    events.miscatches[pred.team.index()] += 1;
                    r.miscatch
                }
            }
            _ => {
                events.empty_picks[pred.team.index()] += 1;
                r.empty_pick
            }
        }
    }

    /// Applies one joint predator action, then moves the prey.
    pub fn step_joint(
        &mut self,
        actions: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<f64>, PpEvents)> {
        if self.done {
            return Err(Error::Usage(
                "predator-prey stepped after the episode ended".into(),
            ));
        }
        if actions.len() != self.predators.len() {
            return Err(Error::Dimension {
                context: "predator joint action",
                expected: self.predators.len(),
                got: actions.len(),
            });
        }
        let parsed: Vec<PpAction> = actions
            .iter()
            .map(|&a| {
                PpAction::from_index(a)
                    .ok_or_else(|| Error::Usage(format!("predator action {a} out of range")))
            })
            .collect::<Result<_>>()?;

        let mut events = PpEvents::default();
        let mut rewards = vec![self.cfg.rewards.step; self.predators.len()];
        for (i, action) in parsed.into_iter().enumerate() {
            match action {
                PpAction::RotateLeft => {
                    self.predators[i].heading = self.predators[i].heading.rotate_left()
                }
                PpAction::RotateRight => {
                    self.predators[i].heading = self.predators[i].heading.rotate_right()
                }
                PpAction::Forward => self.move_forward(Occupant::Predator(i)),
                PpAction::Pick => rewards[i] += self.pick(i, &mut events),
                PpAction::Hold => {}
            }
        }
        self.steps += 1;
        let exhausted = self.remaining.contains(&0);
        if !exhausted {
            for j in 0..self.prey.len() {
                if !self.prey[j].alive {
                    continue;
                }
                match rng.gen_range(0..4) {
                    0 => self.prey[j].entity.heading = self.prey[j].entity.heading.rotate_left(),
                    1 => self.prey[j].entity.heading = self.prey[j].entity.heading.rotate_right(),
                    2 => self.move_forward(Occupant::Prey(j)),
                    _ => {}
                }
            }
        }
        self.done = exhausted || self.steps >= self.cfg.max_steps;
        self.last_events = events;
        Ok((rewards, events))
    }

    /// Cells held by live entities; used by occupancy checks.
    pub fn occupied_cells(&self) -> Vec<Cell> {
        self.predators
            .iter()
            .map(|e| e.cell)
            .chain(self.prey.iter().filter(|p| p.alive).map(|p| p.entity.cell))
            .collect()
    }
}

impl MultiAgentEnv for PredatorPrey {
    fn agent_count(&self) -> usize {
        2 * self.cfg.predators_per_team
    }

    fn observation_dim(&self) -> usize {
        OBS_CHANNELS * OBS_POSITIONS
    }

    fn action_count(&self) -> usize {
        PpAction::COUNT
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        self.randomize(rng);
        (0..self.predators.len()).map(|i| self.observe(i)).collect()
    }

    fn step(&mut self, actions: &[usize], rng: &mut dyn RngCore) -> Result<JointStep> {
        let (rewards, _) = self.step_joint(actions, rng)?;
        let terminal = self.remaining.contains(&0);
        Ok(JointStep {
            observations: (0..self.predators.len()).map(|i| self.observe(i)).collect(),
            rewards,
            done: self.done,
            terminal,
        })
    }

    /// `step | P<i>:row,col,heading,team ... | Y<j>:row,col,heading,team|- ... | a=.. | r=..`
    fn trace_line(&self, step: usize, actions: &[usize], rewards: &[f64]) -> String {
        let mut line = format!("{step} |");
        for (i, e) in self.predators.iter().enumerate() {
            line.push_str(&format!(
                " P{i}:{},{},{},{}",
                e.cell.row,
                e.cell.col,
                e.heading.letter(),
                e.team.name()
            ));
        }
        line.push_str(" |");
        for (j, p) in self.prey.iter().enumerate() {
            if p.alive {
                let e = &p.entity;
                line.push_str(&format!(
                    " Y{j}:{},{},{},{}",
                    e.cell.row,
                    e.cell.col,
                    e.heading.letter(),
                    e.team.name()
                ));
            } else {
                line.push_str(&format!(" Y{j}:-"));
            }
        }
        line.push_str(&format!(
            " | a={} | r={}",
            join_usize(actions),
            join_f64(rewards)
        ));
        line
    }
}
