use super::{SlotEnv, SlotPhase, WrapperMode};
use crate::envs::Env;
use crate::error::Result;
use crate::oracle::{DecisionView, Enumerable};

/// The VSP-wrapped environment as an enumeration source.
///
/// Its key extends the raw Markov key with the recorded decision
/// observations and running actions; `projected_key` drops them again so
/// states can be matched with the raw model.
#[derive(Clone, Debug)]
pub struct VspSource<E: Env> {
    wrapper: SlotEnv<E>,
}

impl<E: Env> VspSource<E> {
    /// Wraps `env` in its current state.
    pub fn new(env: E) -> Self {
        VspSource {
            wrapper: SlotEnv::new(env, WrapperMode::Vsp),
        }
    }

    pub fn wrapper(&self) -> &SlotEnv<E> {
        &self.wrapper
    }
}

impl<E: Env> Enumerable for VspSource<E> {
    fn n_agents(&self) -> usize {
        self.wrapper.n_agents()
    }

    fn action_count(&self) -> usize {
        self.wrapper.action_count()
    }

    fn key(&self) -> Vec<i64> {
        let mut key = self.wrapper.env().markov_key();
        let st = &self.wrapper.current().state;
        for a in &st.decision_actions {
            key.push(a.map_or(-1, |a| a as i64));
        }
        key.extend(st.decision_obs.iter().map(|v| v.to_bits() as i64));
        key
    }

    fn projected_key(&self) -> Vec<i64> {
        self.wrapper.env().markov_key()
    }

    fn view(&self) -> DecisionView {
        let cur = self.wrapper.current();
        let n = self.n_agents();
        let real = &cur.slots[..n];
        DecisionView {
            observations: real.iter().map(|s| s.obs.clone()).collect(),
            deciding: real.iter().map(|s| s.phase == SlotPhase::Deciding).collect(),
            available: real
                .iter()
                .map(|s| s.allowed[..self.action_count()].to_vec())
                .collect(),
        }
    }

    fn apply(&mut self, choices: &[usize]) -> Result<(f64, bool)> {
        let view = self.view();
        let decisions: Vec<Option<usize>> = choices
            .iter()
            .zip(&view.deciding)
            .map(|(&a, &d)| d.then_some(a))
            .collect();
        let s = self.wrapper.wrap_step(&decisions)?;
        Ok((s.reward, s.terminated))
    }
}
