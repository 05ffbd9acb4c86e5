use serde::Serialize;

use super::eval::{policy_eval, value_iteration, QTable};
use super::policy::Policy;
use super::tabular::{build_tabular, TabularModel};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::oracle::RawSource;
use crate::vsp::VspSource;

/// Largest allowed `|Q_raw - Q_vsp|` on corresponding pairs.
pub const EQUIVALENCE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct Deviation {
    pub label: String,
    pub max_abs_diff: f64,
    /// Projected raw key and joint action code of the worst pair.
    pub worst_state: Vec<i64>,
    pub worst_joint: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub env: String,
    pub gamma: f64,
    pub raw_states: usize,
    pub vsp_states: usize,
    pub compared_pairs: usize,
    pub policies: Vec<Deviation>,
    pub optimal: Deviation,
    pub max_abs_diff: f64,
    pub passed: bool,
}

/// Both models of the same environment, built once and reused.
pub struct ModelPair {
    pub raw: TabularModel,
    pub vsp: TabularModel,
    /// For each VSP state, the matching raw state.
    pub raw_of: Vec<usize>,
    /// For each VSP transition, the raw transition with the same joint action.
    pub raw_transition: Vec<Vec<usize>>,
}

impl ModelPair {
    pub fn build<E: Env>(env: &E, budget: usize) -> Result<Self> {
        let mut env = env.clone();
        env.set_time_limit(false);
        let raw = build_tabular(RawSource::new(env.clone()), budget)?;
        let vsp = build_tabular(VspSource::new(env), budget)?;
        let mut raw_of = Vec::with_capacity(vsp.state_count());
        let mut raw_transition = Vec::with_capacity(vsp.state_count());
        for s in 0..vsp.state_count() {
            let r = if s == vsp.terminal {
                raw.terminal
            } else {
                raw.lookup(&vsp.projected[s]).ok_or_else(|| {
                    Error::contract(format!("VSP state {:?} has no raw counterpart", vsp.projected[s]))
                })?
            };
            let mut row = Vec::with_capacity(vsp.transitions[s].len());
            for t in &vsp.transitions[s] {
                let k = raw.transitions[r]
                    .iter()
                    .position(|u| u.joint == t.joint)
                    .ok_or_else(|| Error::contract("joint action missing from the raw model"))?;
                row.push(k);
            }
            if row.len() != raw.transitions[r].len() {
                return Err(Error::contract("raw and VSP joint action sets differ"));
            }
            raw_of.push(r);
            raw_transition.push(row);
        }
        Ok(ModelPair {
            raw,
            vsp,
            raw_of,
            raw_transition,
        })
    }

    pub fn compare(&self, label: impl Into<String>, raw_q: &QTable, vsp_q: &QTable) -> Deviation {
        let mut dev = Deviation {
            label: label.into(),
            max_abs_diff: 0.0,
            worst_state: Vec::new(),
            worst_joint: Vec::new(),
        };
        for s in 0..self.vsp.state_count() {
            let r = self.raw_of[s];
            let d = (raw_q.v[r] - vsp_q.v[s]).abs();
            if d > dev.max_abs_diff || d.is_nan() {
                dev.max_abs_diff = d;
                dev.worst_state = self.raw.projected[r].clone();
                dev.worst_joint = Vec::new();
            }
            for (k, &rk) in self.raw_transition[s].iter().enumerate() {
                let d = (raw_q.q[r][rk] - vsp_q.q[s][k]).abs();
                if d > dev.max_abs_diff || d.is_nan() {
                    dev.max_abs_diff = d;
                    dev.worst_state = self.raw.projected[r].clone();
                    dev.worst_joint = self.raw.decode(self.raw.transitions[r][rk].joint);
                }
            }
        }
        dev
    }

    pub fn compared_pairs(&self) -> usize {
        self.vsp.transition_count()
    }
}

/// Evaluates every policy on the raw and the VSP-wrapped model, plus the
/// optimal values of both, and compares all corresponding `(s, a)` pairs.
pub fn vsp_equivalence_test<E: Env>(
    env: &E,
    gamma: f64,
    policies: &[&dyn Policy],
    budget: usize,
) -> Result<EquivalenceReport> {
    let pair = ModelPair::build(env, budget)?;
    let mut devs = Vec::with_capacity(policies.len());
    for (k, p) in policies.iter().enumerate() {
        let rq = policy_eval(&pair.raw, *p, gamma)?;
        let vq = policy_eval(&pair.vsp, *p, gamma)?;
        devs.push(pair.compare(format!("policy_{k}"), &rq, &vq));
    }
    let optimal = pair.compare("optimal", &value_iteration(&pair.raw, gamma)?, &value_iteration(&pair.vsp, gamma)?);
    let max_abs_diff = devs
        .iter()
        .chain(std::iter::once(&optimal))
        .map(|d| d.max_abs_diff)
        .fold(0.0, f64::max);
    Ok(EquivalenceReport {
        env: env.spec().name.clone(),
        gamma,
        raw_states: pair.raw.state_count(),
        vsp_states: pair.vsp.state_count(),
        compared_pairs: pair.compared_pairs(),
        policies: devs,
        optimal,
        max_abs_diff,
        passed: max_abs_diff < EQUIVALENCE_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::AsyncMatrixGame;
    use crate::oracle::{RandomPolicy, DEFAULT_STATE_BUDGET};

    #[test]
    fn matrix_game_models_agree() {
        let fam = RandomPolicy::family(0, 5);
        let ps: Vec<&dyn Policy> = fam.iter().map(|p| p as &dyn Policy).collect();
        let rep = vsp_equivalence_test(&AsyncMatrixGame::default(), 0.99, &ps, DEFAULT_STATE_BUDGET).unwrap();
        assert!(rep.passed, "{rep:?}");
        // Each row commitment has one recorded decision observation.
        assert_eq!(rep.vsp_states, rep.raw_states);
    }

    #[test]
    fn synchronous_game_is_trivially_identical() {
        let pair = ModelPair::build(&AsyncMatrixGame::synchronous(), DEFAULT_STATE_BUDGET).unwrap();
        assert_eq!(pair.raw.keys.len(), pair.vsp.keys.len());
        for s in 0..pair.vsp.state_count() {
            assert_eq!(pair.vsp.transitions[s], pair.raw.transitions[pair.raw_of[s]]);
        }
    }
}
