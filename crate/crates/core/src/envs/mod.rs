//! Cooperative environments with per-action durations.
//!
//! Every environment shares one asynchrony contract: an agent that starts an
//! action of duration `d` at step `t` is not asked for a new action at
//! `t+1 .. t+d-1` and decides again at `t+d`. Actions supplied for agents
//! that are not deciding are ignored.

mod gridworld;
mod matrix;

pub use gridworld::{AsyncGridworld, GridConfig};
pub use matrix::AsyncMatrixGame;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{build_tabular, RawSource, TabularModel, DEFAULT_STATE_BUDGET};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub n_agents: usize,
    pub action_count: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    /// `durations[agent][action]`, every entry >= 1.
    pub durations: Vec<Vec<usize>>,
    pub episode_limit: usize,
}

impl EnvSpec {
    pub fn duration(&self, agent: usize, action: usize) -> usize {
        self.durations[agent][action]
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode_limit == 0 {
            return Err(Error::contract("episode_limit must be >= 1"));
        }
        if self.durations.len() != self.n_agents
            || self.durations.iter().any(|d| d.len() != self.action_count)
        {
            return Err(Error::shape("duration table must be n_agents x action_count"));
        }
        if self.durations.iter().flatten().any(|&d| d == 0) {
            return Err(Error::contract("every duration must be >= 1"));
        }
        Ok(())
    }

    /// True when every action of every agent takes a single step.
    pub fn is_synchronous(&self) -> bool {
        self.durations.iter().flatten().all(|&d| d == 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    /// Shared by all agents.
    pub reward: f64,
    pub terminated: bool,
    /// Episode cut off by the step limit (not a terminal state).
    pub truncated: bool,
    /// `decision_mask[i]`: agent `i` must choose a new action this step.
    pub decision_mask: Vec<bool>,
    /// Actions each agent could start this step.
    pub available_actions: Vec<Vec<bool>>,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Env: Clone + Send {
    fn spec(&self) -> &EnvSpec;

    /// Deterministic for a given seed; every agent decides at t = 0.
    fn reset(&mut self, seed: u64) -> StepResult;

    /// Advances one time step. Entries for non-deciding agents are ignored;
    /// an out-of-range or unavailable action for a deciding agent is a
    /// contract error and leaves the environment untouched.
    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult>;

    /// The action agent `agent` is executing, if it is not deciding now.
    fn running_action(&self, agent: usize) -> Option<usize>;

    /// Remaining steps of the running action (0 while deciding).
    fn phase(&self, agent: usize) -> usize;

    /// Markov state key, excluding the episode clock.
    fn markov_key(&self) -> Vec<i64>;

    /// Enables or disables truncation at `episode_limit`. Enumeration turns it
    /// off so the tabular model describes the untruncated dynamics.
    fn set_time_limit(&mut self, enabled: bool);

    /// Whether the episode so far counts as a success.
    fn success(&self) -> bool;

    /// The current step result without advancing (reward 0).
    fn observe(&self) -> StepResult;
}

/// Per-agent "remaining steps" bookkeeping shared by the environments.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) struct ActionClock {
    pub remaining: Vec<usize>,
    pub running: Vec<Option<usize>>,
}

impl ActionClock {
    pub fn new(n: usize) -> Self {
        ActionClock {
            remaining: vec![0; n],
            running: vec![None; n],
        }
    }

    pub fn deciding(&self, agent: usize) -> bool {
        self.remaining[agent] == 0
    }

    pub fn decision_mask(&self) -> Vec<bool> {
        self.remaining.iter().map(|&r| r == 0).collect()
    }

    /// Checks the actions of deciding agents against `available`.
    pub fn validate(&self, spec: &EnvSpec, joint: &[usize], available: &[Vec<bool>]) -> Result<()> {
        if joint.len() != spec.n_agents {
            return Err(Error::contract(format!(
                "joint action has {} entries for {} agents",
                joint.len(),
                spec.n_agents
            )));
        }
        for (i, &a) in joint.iter().enumerate() {
            if !self.deciding(i) {
                continue;
            }
            if a >= spec.action_count {
                return Err(Error::contract(format!(
                    "agent {i}: action {a} out of range 0..{}",
                    spec.action_count
                )));
            }
            if !available[i][a] {
                return Err(Error::contract(format!("agent {i}: action {a} unavailable")));
            }
        }
        Ok(())
    }

    /// Starts actions for deciding agents, advances one step, and returns
    /// `(agent, action)` for every action that completed during the step.
    pub fn advance(&mut self, spec: &EnvSpec, joint: &[usize]) -> Vec<(usize, usize)> {
        for (i, &a) in joint.iter().enumerate() {
            if self.deciding(i) {
                self.running[i] = Some(a);
                self.remaining[i] = spec.duration(i, a);
            }
        }
        let mut done = Vec::new();
        for i in 0..spec.n_agents {
            self.remaining[i] -= 1;
            if self.remaining[i] == 0 {
                done.push((i, self.running[i].take().expect("running action")));
            }
        }
        done
    }

    pub fn running_while_busy(&self, agent: usize) -> Option<usize> {
        if self.deciding(agent) {
            None
        } else {
            self.running[agent]
        }
    }
}

/// Explicit transition and reward tables over the states reachable from the
/// environment's current state, with the step limit disabled.
pub fn enumerate_tabular<E: Env>(env: &E) -> Result<TabularModel> {
    enumerate_tabular_with_budget(env, DEFAULT_STATE_BUDGET)
}

pub fn enumerate_tabular_with_budget<E: Env>(env: &E, budget: usize) -> Result<TabularModel> {
    let mut env = env.clone();
    env.set_time_limit(false);
    build_tabular(RawSource::new(env), budget)
}

/// Runtime-selectable environment.
#[derive(Clone, Debug)]
pub enum AnyEnv {
    Matrix(AsyncMatrixGame),
    Grid(AsyncGridworld),
}

impl Env for AnyEnv {
    fn spec(&self) -> &EnvSpec {
        match self {
            AnyEnv::Matrix(e) => e.spec(),
            AnyEnv::Grid(e) => e.spec(),
        }
    }
    fn reset(&mut self, seed: u64) -> StepResult {
        match self {
            AnyEnv::Matrix(e) => e.reset(seed),
            AnyEnv::Grid(e) => e.reset(seed),
        }
    }
    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        match self {
            AnyEnv::Matrix(e) => e.step(joint_action),
            AnyEnv::Grid(e) => e.step(joint_action),
        }
    }
    fn running_action(&self, agent: usize) -> Option<usize> {
        match self {
            AnyEnv::Matrix(e) => e.running_action(agent),
            AnyEnv::Grid(e) => e.running_action(agent),
        }
    }
    fn phase(&self, agent: usize) -> usize {
        match self {
            AnyEnv::Matrix(e) => e.phase(agent),
            AnyEnv::Grid(e) => e.phase(agent),
        }
    }
    fn markov_key(&self) -> Vec<i64> {
        match self {
            AnyEnv::Matrix(e) => e.markov_key(),
            AnyEnv::Grid(e) => e.markov_key(),
        }
    }
    fn set_time_limit(&mut self, enabled: bool) {
        match self {
            AnyEnv::Matrix(e) => e.set_time_limit(enabled),
            AnyEnv::Grid(e) => e.set_time_limit(enabled),
        }
    }
    fn success(&self) -> bool {
        match self {
            AnyEnv::Matrix(e) => e.success(),
            AnyEnv::Grid(e) => e.success(),
        }
    }
    fn observe(&self) -> StepResult {
        match self {
            AnyEnv::Matrix(e) => e.observe(),
            AnyEnv::Grid(e) => e.observe(),
        }
    }
}
