use std::collections::{HashMap, VecDeque};

use crate::envs::{Env, StepResult};
use crate::error::{Error, Result};

/// Reachable-state cap for exhaustive enumeration.
pub const DEFAULT_STATE_BUDGET: usize = 10_000;

/// What a policy sees at one state: the per-agent local view.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionView {
    pub observations: Vec<Vec<f64>>,
    pub deciding: Vec<bool>,
    pub available: Vec<Vec<bool>>,
}

impl DecisionView {
    fn from_step(r: &StepResult) -> Self {
        DecisionView {
            observations: r.observations.clone(),
            deciding: r.decision_mask.clone(),
            available: r.available_actions.clone(),
        }
    }
}

/// A deterministic simulator that can be cloned and stepped from any state.
///
/// `apply` takes one action per base agent; entries of non-deciding agents
/// are ignored. Both the raw environment and the VSP wrapper implement this,
/// so the same policy drives both.
pub trait Enumerable: Clone {
    fn n_agents(&self) -> usize;
    fn action_count(&self) -> usize;
    /// Full Markov key of the current state.
    fn key(&self) -> Vec<i64>;
    /// Key of the corresponding raw state (the identity for raw sources).
    fn projected_key(&self) -> Vec<i64> {
        self.key()
    }
    fn view(&self) -> DecisionView;
    /// Steps once. Returns `(reward, terminated)`.
    fn apply(&mut self, choices: &[usize]) -> Result<(f64, bool)>;
}

/// An [`Env`] viewed as an [`Enumerable`], starting from its current state.
#[derive(Clone, Debug)]
pub struct RawSource<E: Env> {
    env: E,
    last: StepResult,
}

impl<E: Env> RawSource<E> {
    pub fn new(env: E) -> Self {
        let last = env.observe();
        RawSource { env, last }
    }

    pub fn env(&self) -> &E {
        &self.env
    }
}

impl<E: Env> Enumerable for RawSource<E> {
    fn n_agents(&self) -> usize {
        self.env.spec().n_agents
    }
    fn action_count(&self) -> usize {
        self.env.spec().action_count
    }
    fn key(&self) -> Vec<i64> {
        self.env.markov_key()
    }
    fn view(&self) -> DecisionView {
        DecisionView::from_step(&self.last)
    }
    fn apply(&mut self, choices: &[usize]) -> Result<(f64, bool)> {
        self.last = self.env.step(choices)?;
        Ok((self.last.reward, self.last.terminated))
    }
}

/// One deterministic outcome of a joint action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    /// Joint action encoded in base `action_count + 1` (agent 0 least
    /// significant); non-deciding agents carry BLANK = `action_count`.
    pub joint: u64,
    pub next: usize,
    pub reward: f64,
}

/// Explicit transition and reward tables over reachable states.
///
/// Every transition is deterministic (each bundled environment is, once
/// reset), so each `(state, joint action)` row holds a single successor with
/// probability one. All terminal successors share one absorbing state.
#[derive(Clone, Debug)]
pub struct TabularModel {
    pub n_agents: usize,
    pub action_count: usize,
    pub keys: Vec<Vec<i64>>,
    pub projected: Vec<Vec<i64>>,
    pub views: Vec<DecisionView>,
    pub transitions: Vec<Vec<Transition>>,
    pub initial: usize,
    pub terminal: usize,
    index: HashMap<Vec<i64>, usize>,
}

impl TabularModel {
    pub fn state_count(&self) -> usize {
        self.keys.len()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.iter().map(Vec::len).sum()
    }

    pub fn lookup(&self, key: &[i64]) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn encode(&self, choices: &[usize]) -> u64 {
        encode(choices, self.action_count)
    }

    pub fn decode(&self, joint: u64) -> Vec<usize> {
        let base = self.action_count as u64 + 1;
        let mut rest = joint;
        (0..self.n_agents)
            .map(|_| {
                let a = (rest % base) as usize;
                rest /= base;
                a
            })
            .collect()
    }

    /// `P(. | s, a)` as `(next, probability)` pairs.
    pub fn successors(&self, state: usize, action: usize) -> [(usize, f64); 1] {
        [(self.transitions[state][action].next, 1.0)]
    }

    pub fn find(&self, state: usize, choices: &[usize]) -> Option<&Transition> {
        let code = self.encode(choices);
        self.transitions[state].iter().find(|t| t.joint == code)
    }
}

fn encode(choices: &[usize], action_count: usize) -> u64 {
    let base = action_count as u64 + 1;
    choices.iter().rev().fold(0u64, |acc, &a| acc * base + a as u64)
}

/// Joint choices at a view: the product of available actions over deciding
/// agents, BLANK for the rest.
pub fn joint_choices(view: &DecisionView, action_count: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for i in 0..view.deciding.len() {
        let options: Vec<usize> = if view.deciding[i] {
            (0..action_count).filter(|&a| view.available[i][a]).collect()
        } else {
            vec![action_count]
        };
        out = out
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |&a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}

/// Breadth-first enumeration of every state reachable from `source`.
/// Refuses with [`Error::Budget`] once more than `budget` non-terminal
/// states are discovered.
pub fn build_tabular<S: Enumerable>(source: S, budget: usize) -> Result<TabularModel> {
    let n_agents = source.n_agents();
    let action_count = source.action_count();
    if ((action_count + 1) as f64).powi(n_agents as i32) > u64::MAX as f64 {
        return Err(Error::contract("joint action code does not fit in 64 bits"));
    }
    let terminal_key = vec![i64::MIN];
    let mut model = TabularModel {
        n_agents,
        action_count,
        keys: vec![source.key()],
        projected: vec![source.projected_key()],
        views: vec![source.view()],
        transitions: vec![Vec::new()],
        initial: 0,
        terminal: usize::MAX,
        index: HashMap::new(),
    };
    model.index.insert(source.key(), 0);
    let mut queue = VecDeque::from([(0usize, source)]);
    let mut discovered = 1usize;

    while let Some((s, src)) = queue.pop_front() {
        let view = model.views[s].clone();
        let mut row = Vec::new();
        for choices in joint_choices(&view, action_count) {
            let mut next_src = src.clone();
            let (reward, terminated) = next_src.apply(&choices)?;
            let next = if terminated {
                if model.terminal == usize::MAX {
                    model.terminal = model.keys.len();
                    model.index.insert(terminal_key.clone(), model.terminal);
                    model.keys.push(terminal_key.clone());
                    model.projected.push(terminal_key.clone());
                    model.views.push(DecisionView {
                        observations: vec![Vec::new(); n_agents],
                        deciding: vec![false; n_agents],
                        available: vec![vec![false; action_count]; n_agents],
                    });
                    model.transitions.push(Vec::new());
                }
                model.terminal
            } else {
                let key = next_src.key();
                match model.index.get(&key) {
                    Some(&id) => id,
                    None => {
                        discovered += 1;
                        if discovered > budget {
                            return Err(Error::Budget {
                                what: "reachable states",
                                count: discovered,
                                limit: budget,
                            });
                        }
                        let id = model.keys.len();
                        model.index.insert(key.clone(), id);
                        model.keys.push(key);
                        model.projected.push(next_src.projected_key());
                        model.views.push(next_src.view());
                        model.transitions.push(Vec::new());
                        queue.push_back((id, next_src));
                        id
                    }
                }
            };
            row.push(Transition {
                joint: encode(&choices, action_count),
                next,
                reward,
            });
        }
        model.transitions[s] = row;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{enumerate_tabular, enumerate_tabular_with_budget, AsyncGridworld, AsyncMatrixGame, GridConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matrix_game_is_tiny() {
        let m = enumerate_tabular(&AsyncMatrixGame::default()).unwrap();
        // root, two row commitments, terminal
        assert_eq!(m.state_count(), 4);
        assert!(m.state_count() <= 10);
        assert_eq!(m.transitions[m.initial].len(), 4);
    }

    #[test]
    fn codes_round_trip() {
        let m = enumerate_tabular(&AsyncMatrixGame::default()).unwrap();
        for row in &m.transitions {
            for t in row {
                assert_eq!(m.encode(&m.decode(t.joint)), t.joint);
            }
        }
    }

    #[test]
    fn budget_refusal_reports_count() {
        let env = AsyncGridworld::new(GridConfig::oracle()).unwrap();
        match enumerate_tabular_with_budget(&env, 50) {
            Err(Error::Budget { count, limit, .. }) => {
                assert_eq!(limit, 50);
                assert!(count > 50);
            }
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn tabular_model_replays_live_trajectories() {
        let env = AsyncGridworld::new(GridConfig::oracle()).unwrap();
        let m = enumerate_tabular(&env).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let mut live = env.clone();
            live.set_time_limit(false);
            let mut s = m.initial;
            for _ in 0..40 {
                let obs = live.observe();
                let choices: Vec<usize> = (0..3)
                    .map(|i| {
                        if !obs.decision_mask[i] {
                            return 5;
                        }
                        let avail: Vec<usize> = (0..5).filter(|&a| obs.available_actions[i][a]).collect();
                        avail[rng.gen_range(0..avail.len())]
                    })
                    .collect();
                let r = live.step(&choices).unwrap();
                let t = m.find(s, &choices).expect("enumerated joint action");
                assert_eq!(t.reward, r.reward);
                if r.terminated {
                    assert_eq!(t.next, m.terminal);
                    break;
                }
                assert_eq!(m.keys[t.next], live.markov_key());
                s = t.next;
            }
        }
    }
}
