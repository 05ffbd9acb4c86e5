use super::{ActionClock, Env, EnvSpec, StepResult};
use crate::error::Result;

/// Two-player game resolved over two steps.
///
/// The row agent commits at t = 0 to an action lasting two steps. The column
/// agent also acts at t = 0 (that choice has no effect), then at t = 1 sees
/// which row action is in progress and chooses again. When both finish, the
/// shared reward is `row_values[row] * column_values[column]`.
///
/// Observation: `[start, row chose 0, row chose 1, remaining steps]`.
/// State: `[t == 0, t == 1, row running 0, row running 1]`.
#[derive(Clone, Debug)]
pub struct AsyncMatrixGame {
    spec: EnvSpec,
    row_values: [f64; 2],
    column_values: [f64; 2],
    clock: ActionClock,
    t: usize,
    row_choice: Option<usize>,
    terminated: bool,
    last_reward: f64,
    time_limit: bool,
}

const ROW: usize = 0;
const COL: usize = 1;

impl Default for AsyncMatrixGame {
    fn default() -> Self {
        Self::new([1.0, 2.0], [1.0, 2.0])
    }
}

impl AsyncMatrixGame {
    pub fn new(row_values: [f64; 2], column_values: [f64; 2]) -> Self {
        let spec = EnvSpec {
            name: "matrix".into(),
            n_agents: 2,
            action_count: 2,
            obs_dim: 4,
            state_dim: 4,
            durations: vec![vec![2, 2], vec![1, 1]],
            episode_limit: 3,
        };
        AsyncMatrixGame {
            spec,
            row_values,
            column_values,
            clock: ActionClock::new(2),
            t: 0,
            row_choice: None,
            terminated: false,
            last_reward: 0.0,
            time_limit: true,
        }
    }

    /// Both agents take one step per action: the synchronous special case.
    pub fn synchronous() -> Self {
        let mut g = Self::default();
        g.spec.durations = vec![vec![1, 1], vec![1, 1]];
        g.spec.name = "matrix_sync".into();
        g
    }

    pub fn payoff(&self, row: usize, column: usize) -> f64 {
        self.row_values[row] * self.column_values[column]
    }

    pub fn max_payoff(&self) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for r in 0..2 {
            for c in 0..2 {
                best = best.max(self.payoff(r, c));
            }
        }
        best
    }

    fn observation(&self, agent: usize) -> Vec<f64> {
        let mut o = vec![0.0; 4];
        if self.terminated {
            // all-zero tokens after the game resolves
        } else if let Some(r) = self.row_choice {
            o[1 + r] = 1.0;
        } else {
            o[0] = 1.0;
        }
        o[3] = self.clock.remaining[agent] as f64;
        o
    }

    fn state(&self) -> Vec<f64> {
        let mut s = vec![0.0; 4];
        if !self.terminated && self.t < 2 {
            s[self.t] = 1.0;
        }
        if let Some(r) = self.clock.running_while_busy(ROW) {
            s[2 + r] = 1.0;
        }
        s
    }
}

impl Env for AsyncMatrixGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.clock = ActionClock::new(2);
        self.t = 0;
        self.row_choice = None;
        self.terminated = false;
        self.last_reward = 0.0;
        self.observe()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.terminated {
            return Err(crate::error::Error::contract("step after episode end"));
        }
        let avail = self.observe().available_actions;
        self.clock.validate(&self.spec, joint_action, &avail)?;
        if self.clock.deciding(ROW) {
            self.row_choice = Some(joint_action[ROW]);
        }
        let column_now = self.clock.deciding(COL).then_some(joint_action[COL]);
        let completed = self.clock.advance(&self.spec, joint_action);
        self.t += 1;

        let row_done = completed.iter().any(|&(i, _)| i == ROW);
        let mut reward = 0.0;
        // The game resolves when a row action completes on the second step,
        // together with the column's reply.
        if row_done && self.t >= 2 {
            if let (Some(r), Some(c)) = (self.row_choice, column_now) {
                reward = self.payoff(r, c);
            }
            self.terminated = true;
        }
        self.last_reward = reward;
        let mut out = self.observe();
        out.reward = reward;
        out.truncated = !self.terminated && self.time_limit && self.t >= self.spec.episode_limit;
        Ok(out)
    }

    fn running_action(&self, agent: usize) -> Option<usize> {
        self.clock.running_while_busy(agent)
    }

    fn phase(&self, agent: usize) -> usize {
        self.clock.remaining[agent]
    }

    fn markov_key(&self) -> Vec<i64> {
        vec![
            self.t as i64,
            self.row_choice.map_or(-1, |r| r as i64),
            self.clock.remaining[ROW] as i64,
            self.terminated as i64,
        ]
    }

    fn set_time_limit(&mut self, enabled: bool) {
        self.time_limit = enabled;
    }

    fn success(&self) -> bool {
        self.terminated && self.last_reward >= self.max_payoff()
    }

    fn observe(&self) -> StepResult {
        StepResult {
            state: self.state(),
            observations: (0..2).map(|i| self.observation(i)).collect(),
            reward: 0.0,
            terminated: self.terminated,
            truncated: false,
            decision_mask: if self.terminated {
                vec![false; 2]
            } else {
                self.clock.decision_mask()
            },
            available_actions: vec![vec![true; 2]; 2],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn play(row: usize, column: usize) -> (Vec<f64>, StepResult) {
        let mut g = AsyncMatrixGame::default();
        let first = g.reset(0);
        assert_eq!(first.decision_mask, vec![true, true]);
        let mid = g.step(&[row, 0]).unwrap();
        assert_eq!(mid.decision_mask, vec![false, true]);
        assert!(!mid.terminated);
        let last = g.step(&[0, column]).unwrap();
        (vec![mid.reward, last.reward], last)
    }

    #[test]
    fn payoff_is_product_of_values() {
        let (r, last) = play(1, 1);
        assert_eq!(r, vec![0.0, 4.0]);
        assert!(last.terminated);
        assert_eq!(play(0, 0).0[1], 1.0);
        assert_eq!(play(0, 1).0[1], 2.0);
        assert_eq!(play(1, 0).0[1], 2.0);
    }

    #[test]
    fn reset_shows_start_token_to_both() {
        let mut g = AsyncMatrixGame::default();
        let r = g.reset(7);
        for o in &r.observations {
            assert_eq!(o[..3], [1.0, 0.0, 0.0]);
        }
        assert_eq!(r, g.reset(7));
    }

    #[test]
    fn column_sees_running_row_action() {
        let mut g = AsyncMatrixGame::default();
        g.reset(0);
        let mid = g.step(&[1, 0]).unwrap();
        assert_eq!(mid.observations[1][..3], [0.0, 0.0, 1.0]);
        assert_eq!(g.running_action(0), Some(1));
        assert_eq!(g.running_action(1), None);
    }

    #[test]
    fn ignored_action_of_busy_agent() {
        let mut g = AsyncMatrixGame::default();
        g.reset(0);
        g.step(&[0, 0]).unwrap();
        // Row is busy: even an out-of-range id is ignored.
        assert_eq!(g.step(&[99, 1]).unwrap().reward, 2.0);
    }

    #[test]
    fn out_of_range_for_decider_is_contract_error() {
        let mut g = AsyncMatrixGame::default();
        g.reset(0);
        assert!(matches!(g.step(&[2, 0]), Err(Error::Contract(_))));
        // unchanged after the failed step
        assert_eq!(g.observe().decision_mask, vec![true, true]);
    }

    #[test]
    fn synchronous_variant_resolves_on_second_step() {
        let mut g = AsyncMatrixGame::synchronous();
        g.reset(0);
        let a = g.step(&[1, 0]).unwrap();
        assert_eq!(a.decision_mask, vec![true, true]);
        let b = g.step(&[1, 1]).unwrap();
        assert!(b.terminated);
        assert_eq!(b.reward, 4.0);
    }
}
