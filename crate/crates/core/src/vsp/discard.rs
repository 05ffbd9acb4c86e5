use crate::envs::Env;
use crate::error::Result;

/// One agent's view of a whole action: what it saw when it chose, what it
/// chose, and the discounted reward accumulated while the action ran.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroTransition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// Steps the action actually ran (shorter if the episode ended first).
    pub duration: usize,
    /// Observation at the agent's next decision; `None` if the episode ended.
    pub next_obs: Option<Vec<f64>>,
    pub terminated: bool,
}

/// Rolls out one episode from `seed` and returns, per agent, only its own
/// macro-transitions; the interim decisions of other agents are invisible.
/// `policy(agent, obs, available)` is queried at each of the agent's
/// decisions.
pub fn collect_discarding<E: Env>(
    env: &mut E,
    seed: u64,
    gamma: f64,
    mut policy: impl FnMut(usize, &[f64], &[bool]) -> usize,
) -> Result<Vec<Vec<MacroTransition>>> {
    let n = env.spec().n_agents;
    let blank = env.spec().action_count;
    let mut r = env.reset(seed);
    let mut streams: Vec<Vec<MacroTransition>> = vec![Vec::new(); n];
    // Open transition and the discount applied to its next reward.
    let mut open: Vec<Option<(MacroTransition, f64)>> = vec![None; n];

    loop {
        let mut joint = vec![blank; n];
        for i in 0..n {
            if r.decision_mask[i] {
                if let Some((mut tr, _)) = open[i].take() {
                    tr.next_obs = Some(r.observations[i].clone());
                    streams[i].push(tr);
                }
                let a = policy(i, &r.observations[i], &r.available_actions[i]);
                joint[i] = a;
                open[i] = Some((
                    MacroTransition {
                        obs: r.observations[i].clone(),
                        action: a,
                        reward: 0.0,
                        duration: 0,
                        next_obs: None,
                        terminated: false,
                    },
                    1.0,
                ));
            }
        }
        r = env.step(&joint)?;
        for (tr, discount) in open.iter_mut().flatten() {
            tr.reward += *discount * r.reward;
            tr.duration += 1;
            *discount *= gamma;
        }
        if r.done() {
            for i in 0..n {
                if let Some((mut tr, _)) = open[i].take() {
                    tr.terminated = r.terminated;
                    if !r.terminated && r.decision_mask[i] {
                        tr.next_obs = Some(r.observations[i].clone());
                    }
                    streams[i].push(tr);
                }
            }
            return Ok(streams);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{AsyncMatrixGame, StepResult};
    use crate::error::Error;

    /// One agent, fixed rewards per step, actions of duration `d`.
    #[derive(Clone)]
    struct Tape {
        spec: crate::envs::EnvSpec,
        rewards: Vec<f64>,
        t: usize,
        left: usize,
    }

    impl Tape {
        fn new(d: usize, rewards: Vec<f64>) -> Self {
            Tape {
                spec: crate::envs::EnvSpec {
                    name: "tape".into(),
                    n_agents: 1,
                    action_count: 1,
                    obs_dim: 1,
                    state_dim: 1,
                    durations: vec![vec![d]],
                    episode_limit: rewards.len(),
                },
                rewards,
                t: 0,
                left: 0,
            }
        }
    }

    impl Env for Tape {
        fn spec(&self) -> &crate::envs::EnvSpec {
            &self.spec
        }
        fn reset(&mut self, _: u64) -> StepResult {
            self.t = 0;
            self.left = 0;
            self.observe()
        }
        fn step(&mut self, _: &[usize]) -> Result<StepResult> {
            if self.t >= self.rewards.len() {
                return Err(Error::contract("done"));
            }
            if self.left == 0 {
                self.left = self.spec.durations[0][0];
            }
            self.left -= 1;
            let r = self.rewards[self.t];
            self.t += 1;
            let mut out = self.observe();
            out.reward = r;
            out.terminated = self.t == self.rewards.len();
            Ok(out)
        }
        fn running_action(&self, _: usize) -> Option<usize> {
            (self.left > 0).then_some(0)
        }
        fn phase(&self, _: usize) -> usize {
            self.left
        }
        fn markov_key(&self) -> Vec<i64> {
            vec![self.t as i64, self.left as i64]
        }
        fn set_time_limit(&mut self, _: bool) {}
        fn success(&self) -> bool {
            false
        }
        fn observe(&self) -> StepResult {
            StepResult {
                state: vec![self.t as f64],
                observations: vec![vec![self.t as f64]],
                reward: 0.0,
                terminated: false,
                truncated: false,
                decision_mask: vec![self.left == 0],
                available_actions: vec![vec![true]],
            }
        }
    }

    #[test]
    fn three_step_reward_is_discounted() {
        let mut env = Tape::new(3, vec![1.0, 2.0, 3.0]);
        let s = collect_discarding(&mut env, 0, 0.99, |_, _, _| 0).unwrap();
        assert_eq!(s[0].len(), 1);
        let expect = 1.0 + 0.99 * 2.0 + 0.99 * 0.99 * 3.0;
        assert!((s[0][0].reward - expect).abs() < 1e-12);
        assert_eq!(s[0][0].duration, 3);
        assert!(s[0][0].terminated);
    }

    #[test]
    fn unit_durations_give_per_step_transitions() {
        let mut env = Tape::new(1, vec![1.0, 2.0, 3.0]);
        let s = collect_discarding(&mut env, 0, 0.99, |_, _, _| 0).unwrap();
        let rewards: Vec<f64> = s[0].iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0, 3.0]);
        assert_eq!(s[0][0].next_obs, Some(vec![1.0]));
    }

    #[test]
    fn stream_lengths_count_decisions() {
        let mut env = AsyncMatrixGame::default();
        let s = collect_discarding(&mut env, 0, 0.99, |_, _, _| 1).unwrap();
        assert_eq!(s[0].len(), 1);
        assert_eq!(s[1].len(), 2);
        assert!((s[0][0].reward - 0.99 * 4.0).abs() < 1e-12);
        assert_eq!(s[1][1].reward, 4.0);
        assert_eq!(s[1][0].reward, 0.0);
    }
}
