use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActionClock, Env, EnvSpec, StepResult};
use crate::error::{Error, Result};

pub const STAY: usize = 0;
const MOVES: [(i64, i64); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub size: usize,
    pub n_agents: usize,
    pub n_items: usize,
    /// Steps one move takes for each agent. Staying always takes one step.
    pub move_durations: Vec<usize>,
    pub episode_limit: usize,
    pub step_penalty: f64,
    pub delivery_reward: f64,
}

impl GridConfig {
    /// 3x3 grid, three agents with move durations 1, 2 and 3, two items.
    pub fn small() -> Self {
        GridConfig {
            size: 3,
            n_agents: 3,
            n_items: 2,
            move_durations: vec![1, 2, 3],
            episode_limit: 50,
            step_penalty: 0.1,
            delivery_reward: 10.0,
        }
    }

    /// Same layout with durations 1, 1, 2: small enough to enumerate exactly.
    pub fn oracle() -> Self {
        GridConfig {
            move_durations: vec![1, 1, 2],
            ..Self::small()
        }
    }

    pub fn large() -> Self {
        GridConfig {
            size: 5,
            n_items: 3,
            ..Self::small()
        }
    }

    fn validate(&self) -> Result<()> {
        let cells = self.size * self.size;
        if self.size == 0 || self.n_agents < 2 {
            return Err(Error::config("env.grid_size", "need a non-empty grid and >= 2 agents"));
        }
        if self.move_durations.len() != self.n_agents || self.move_durations.contains(&0) {
            return Err(Error::config("env.durations", "one positive duration per agent"));
        }
        if self.n_items + self.n_agents > cells {
            return Err(Error::config("env.grid_size", "grid too small for items and agents"));
        }
        Ok(())
    }
}

/// Cooperative delivery on a square grid.
///
/// An item is delivered when at least two agents stand on its cell after a
/// step. Every step costs `step_penalty`; each delivery pays
/// `delivery_reward`. Moves take the mover's duration and take effect when
/// they complete. Moves off the grid are unavailable.
#[derive(Clone, Debug)]
pub struct AsyncGridworld {
    config: GridConfig,
    spec: EnvSpec,
    clock: ActionClock,
    positions: Vec<(usize, usize)>,
    items: Vec<(usize, usize)>,
    delivered: Vec<bool>,
    t: usize,
    time_limit: bool,
}

impl AsyncGridworld {
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let cells = config.size * config.size;
        let n = config.n_agents;
        let durations = config
            .move_durations
            .iter()
            .map(|&d| {
                let mut row = vec![d; MOVES.len()];
                row[STAY] = 1;
                row
            })
            .collect();
        let spec = EnvSpec {
            name: if config.size == 3 { "gridworld".into() } else { format!("gridworld{}", config.size) },
            n_agents: n,
            action_count: MOVES.len(),
            obs_dim: 18 + cells + 1,
            state_dim: n * cells + n * 4 + n + config.n_items * cells + config.n_items,
            durations,
            episode_limit: config.episode_limit,
        };
        let mut env = AsyncGridworld {
            clock: ActionClock::new(n),
            positions: vec![(0, 0); n],
            items: vec![(0, 0); config.n_items],
            delivered: vec![false; config.n_items],
            config,
            spec,
            t: 0,
            time_limit: true,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn items(&self) -> &[(usize, usize)] {
        &self.items
    }

    pub fn delivered(&self) -> &[bool] {
        &self.delivered
    }

    fn cell(&self, (r, c): (usize, usize)) -> usize {
        r * self.config.size + c
    }

    fn target(&self, (r, c): (usize, usize), action: usize) -> Option<(usize, usize)> {
        let (dr, dc) = MOVES[action];
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        let s = self.config.size as i64;
        (0..s).contains(&nr).then_some(())?;
        (0..s).contains(&nc).then_some(())?;
        Some((nr as usize, nc as usize))
    }

    fn available(&self, agent: usize) -> Vec<bool> {
        (0..MOVES.len())
            .map(|a| self.target(self.positions[agent], a).is_some())
            .collect()
    }

    fn max_duration(&self) -> f64 {
        self.config.move_durations.iter().copied().max().unwrap_or(1) as f64
    }

    fn observation(&self, agent: usize) -> Vec<f64> {
        let cells = self.config.size * self.config.size;
        let mut o = vec![0.0; 18 + cells + 1];
        let (r, c) = self.positions[agent];
        let s = self.config.size as i64;
        for (k, (dr, dc)) in (-1..=1).flat_map(|dr| (-1..=1).map(move |dc| (dr, dc))).enumerate() {
            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
            if !(0..s).contains(&nr) || !(0..s).contains(&nc) {
                o[2 * k + 1] = 1.0;
                continue;
            }
            let here = (nr as usize, nc as usize);
            if self.items.iter().zip(&self.delivered).any(|(&p, &d)| !d && p == here) {
                o[2 * k] = 1.0;
            }
        }
        o[18 + self.cell((r, c))] = 1.0;
        o[18 + cells] = self.clock.remaining[agent] as f64 / self.max_duration();
        o
    }

    fn state(&self) -> Vec<f64> {
        let cells = self.config.size * self.config.size;
        let n = self.config.n_agents;
        let mut s = vec![0.0; self.spec.state_dim];
        for (i, &p) in self.positions.iter().enumerate() {
            s[i * cells + self.cell(p)] = 1.0;
        }
        let base = n * cells;
        for i in 0..n {
            if let Some(a) = self.clock.running_while_busy(i) {
                if a != STAY {
                    s[base + 4 * i + a - 1] = 1.0;
                }
            }
            s[base + 4 * n + i] = self.clock.remaining[i] as f64 / self.max_duration();
        }
        let base = base + 5 * n;
        for (k, &p) in self.items.iter().enumerate() {
            s[base + k * cells + self.cell(p)] = 1.0;
        }
        let base = base + self.config.n_items * cells;
        for (k, &d) in self.delivered.iter().enumerate() {
            s[base + k] = d as u8 as f64;
        }
        s
    }

    fn all_delivered(&self) -> bool {
        self.delivered.iter().all(|&d| d)
    }
}

impl Env for AsyncGridworld {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = self.config.size;
        let mut cells: Vec<(usize, usize)> = (0..size).flat_map(|r| (0..size).map(move |c| (r, c))).collect();
        cells.shuffle(&mut rng);
        let k = self.config.n_items;
        self.items = cells[..k].to_vec();
        self.positions = cells[k..k + self.config.n_agents].to_vec();
        self.delivered = vec![false; k];
        self.clock = ActionClock::new(self.config.n_agents);
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.all_delivered() {
            return Err(Error::contract("step after episode end"));
        }
        let avail: Vec<Vec<bool>> = (0..self.config.n_agents).map(|i| self.available(i)).collect();
        self.clock.validate(&self.spec, joint_action, &avail)?;
        for (agent, action) in self.clock.advance(&self.spec, joint_action) {
            // Availability was checked when the move started.
            self.positions[agent] = self.target(self.positions[agent], action).expect("in-bounds move");
        }
        self.t += 1;
        let mut reward = -self.config.step_penalty;
        for k in 0..self.items.len() {
            if self.delivered[k] {
                continue;
            }
            let here = self.positions.iter().filter(|&&p| p == self.items[k]).count();
            if here >= 2 {
                self.delivered[k] = true;
                reward += self.config.delivery_reward;
            }
        }
        let mut out = self.observe();
        out.reward = reward;
        out.truncated = !out.terminated && self.time_limit && self.t >= self.spec.episode_limit;
        Ok(out)
    }

    fn running_action(&self, agent: usize) -> Option<usize> {
        self.clock.running_while_busy(agent)
    }

    fn phase(&self, agent: usize) -> usize {
        self.clock.remaining[agent]
    }

    fn markov_key(&self) -> Vec<i64> {
        let mut key = Vec::new();
        for &(r, c) in self.positions.iter().chain(&self.items) {
            key.push(r as i64);
            key.push(c as i64);
        }
        for i in 0..self.config.n_agents {
            key.push(self.clock.remaining[i] as i64);
            key.push(self.clock.running_while_busy(i).map_or(-1, |a| a as i64));
        }
        key.extend(self.delivered.iter().map(|&d| d as i64));
        key
    }

    fn set_time_limit(&mut self, enabled: bool) {
        self.time_limit = enabled;
    }

    fn success(&self) -> bool {
        self.all_delivered()
    }

    fn observe(&self) -> StepResult {
        let n = self.config.n_agents;
        let terminated = self.all_delivered();
        StepResult {
            state: self.state(),
            observations: (0..n).map(|i| self.observation(i)).collect(),
            reward: 0.0,
            terminated,
            truncated: false,
            decision_mask: if terminated { vec![false; n] } else { self.clock.decision_mask() },
            available_actions: (0..n).map(|i| self.available(i)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> AsyncGridworld {
        AsyncGridworld::new(GridConfig::small()).unwrap()
    }

    #[test]
    fn dimensions() {
        let g = small();
        assert_eq!(g.spec().obs_dim, 28);
        assert_eq!(g.spec().state_dim, 62);
        let large = AsyncGridworld::new(GridConfig::large()).unwrap();
        assert_eq!(large.observe().state.len(), large.spec().state_dim);
        assert_eq!(large.observe().observations[0].len(), large.spec().obs_dim);
    }

    #[test]
    fn reset_is_deterministic_and_seed_dependent() {
        let mut a = small();
        let mut b = small();
        assert_eq!(a.reset(11), b.reset(11));
        let layouts: std::collections::HashSet<_> = (0..20)
            .map(|s| {
                a.reset(s);
                (a.items().to_vec(), a.positions().to_vec())
            })
            .collect();
        assert!(layouts.len() > 10);
    }

    #[test]
    fn layout_has_no_overlaps() {
        let mut g = small();
        for seed in 0..50 {
            g.reset(seed);
            let mut cells: Vec<_> = g.items().iter().chain(g.positions()).copied().collect();
            cells.sort();
            cells.dedup();
            assert_eq!(cells.len(), 5);
        }
    }

    #[test]
    fn slow_move_lands_on_completion() {
        let mut g = small();
        g.reset(3);
        // Agent 2 moves with duration 3; find an available move.
        let a = (1..5).find(|&a| g.observe().available_actions[2][a]).unwrap();
        let start = g.positions()[2];
        let target = g.target(start, a).unwrap();
        let mut joint = vec![STAY, STAY, a];
        for step in 0..3 {
            let r = g.step(&joint).unwrap();
            if step < 2 {
                assert_eq!(g.positions()[2], start);
                assert!(!r.decision_mask[2]);
                assert_eq!(g.running_action(2), Some(a));
                assert_eq!(g.phase(2), 2 - step);
            } else {
                assert!(r.decision_mask[2]);
            }
            joint = vec![STAY, STAY, 0];
            if r.terminated {
                return;
            }
        }
        assert_eq!(g.positions()[2], target);
    }

    #[test]
    fn off_grid_moves_are_unavailable() {
        let mut g = small();
        for seed in 0..20 {
            let r = g.reset(seed);
            for (i, &(row, col)) in g.positions().iter().enumerate() {
                assert_eq!(r.available_actions[i][1], row > 0);
                assert_eq!(r.available_actions[i][2], row < 2);
                assert_eq!(r.available_actions[i][3], col > 0);
                assert_eq!(r.available_actions[i][4], col < 2);
                assert!(r.available_actions[i][STAY]);
            }
        }
        g.reset(0);
        g.positions[0] = (0, 0);
        let before = g.markov_key();
        assert!(matches!(g.step(&[1, 0, 0]), Err(Error::Contract(_))));
        assert_eq!(g.markov_key(), before);
    }

    #[test]
    fn two_agents_on_an_item_deliver_it() {
        let mut g = small();
        g.reset(0);
        let item = g.items()[0];
        g.positions[0] = item;
        g.positions[1] = item;
        let r = g.step(&[STAY, STAY, STAY]).unwrap();
        assert!(g.delivered()[0]);
        assert!((r.reward - 9.9).abs() < 1e-12);
        let r = g.step(&[STAY, STAY, STAY]).unwrap();
        assert!((r.reward + 0.1).abs() < 1e-12);
    }

    #[test]
    fn episode_truncates_at_limit() {
        let mut g = small();
        g.reset(5);
        let mut last = g.observe();
        for _ in 0..g.spec().episode_limit {
            last = g.step(&[STAY, STAY, STAY]).unwrap();
        }
        assert!(last.truncated && !last.terminated);
    }
}
