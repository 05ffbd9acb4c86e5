use rand::Rng;

use super::policy::Policy;
use super::tabular::{Enumerable, TabularModel};
use crate::error::{Error, Result};

/// Stop once a full sweep changes no value by more than this.
pub const RESIDUAL_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 1_000_000;

/// State values and per-transition action values.
#[derive(Clone, Debug)]
pub struct QTable {
    pub v: Vec<f64>,
    /// `q[s][k]` belongs to `model.transitions[s][k]`.
    pub q: Vec<Vec<f64>>,
}

impl QTable {
    fn from_values(model: &TabularModel, v: Vec<f64>, gamma: f64) -> Self {
        let q = model
            .transitions
            .iter()
            .map(|row| row.iter().map(|t| t.reward + gamma * v[t.next]).collect())
            .collect();
        QTable { v, q }
    }

    pub fn root(&self, model: &TabularModel) -> f64 {
        self.v[model.initial]
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::contract(format!("gamma {gamma} outside [0, 1]")));
    }
    Ok(())
}

/// Gauss-Seidel sweeps of `update` until the max-abs change is below
/// [`RESIDUAL_TOL`]. `update(s, v)` returns the backed-up value of `s`.
fn sweep_to_fixed_point(n: usize, terminal: usize, mut update: impl FnMut(usize, &[f64]) -> f64) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    // Reverse discovery order puts deep states first, which propagates
    // values from the terminal side in fewer sweeps.
    let order: Vec<usize> = (0..n).rev().filter(|&s| s != terminal).collect();
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        residual = 0.0;
        for &s in &order {
            let new = update(s, &v);
            residual = residual.max((new - v[s]).abs());
            v[s] = new;
        }
        if !residual.is_finite() {
            break;
        }
        if residual < RESIDUAL_TOL {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_SWEEPS,
        residual,
    })
}

/// Exact `Q^pi` by iterating the Bellman expectation operator. `gamma = 1`
/// is accepted and converges on models whose policy reaches the terminal
/// state with certainty in bounded time, such as acyclic ones.
pub fn policy_eval(model: &TabularModel, policy: &dyn Policy, gamma: f64) -> Result<QTable> {
    check_gamma(gamma)?;
    let weighted: Vec<Vec<(f64, usize, f64)>> = model
        .transitions
        .iter()
        .enumerate()
        .map(|(s, row)| {
            let view = &model.views[s];
            let per_agent: Vec<Option<Vec<f64>>> = (0..model.n_agents)
                .map(|i| view.deciding[i].then(|| policy.probs(i, &view.observations[i], &view.available[i])))
                .collect();
            row.iter()
                .filter_map(|t| {
                    let choices = model.decode(t.joint);
                    let p: f64 = per_agent
                        .iter()
                        .zip(&choices)
                        .map(|(probs, &a)| probs.as_ref().map_or(1.0, |pr| pr[a]))
                        .product();
                    (p > 0.0).then_some((p, t.next, t.reward))
                })
                .collect()
        })
        .collect();
    let v = sweep_to_fixed_point(model.state_count(), model.terminal, |s, v| {
        weighted[s].iter().map(|&(p, next, r)| p * (r + gamma * v[next])).sum()
    })?;
    Ok(QTable::from_values(model, v, gamma))
}

/// Exact `Q*` over centralized joint actions.
pub fn value_iteration(model: &TabularModel, gamma: f64) -> Result<QTable> {
    check_gamma(gamma)?;
    let v = sweep_to_fixed_point(model.state_count(), model.terminal, |s, v| {
        model.transitions[s]
            .iter()
            .map(|t| t.reward + gamma * v[t.next])
            .fold(f64::NEG_INFINITY, f64::max)
    })?;
    Ok(QTable::from_values(model, v, gamma))
}

/// Mean discounted return and its standard error over sampled rollouts
/// from `source`'s current state.
pub fn monte_carlo<S: Enumerable>(
    source: &S,
    policy: &dyn Policy,
    gamma: f64,
    episodes: usize,
    max_steps: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let a = source.action_count();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = source.clone();
        let mut ret = 0.0;
        let mut discount = 1.0;
        for _ in 0..max_steps {
            let view = s.view();
            let choices: Vec<usize> = (0..s.n_agents())
                .map(|i| {
                    if !view.deciding[i] {
                        return a;
                    }
                    let p = policy.probs(i, &view.observations[i], &view.available[i]);
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = None;
                    for (k, &pk) in p.iter().enumerate() {
                        if pk > 0.0 {
                            pick = Some(k);
                            acc += pk;
                            if u < acc {
                                break;
                            }
                        }
                    }
                    pick.expect("some available action")
                })
                .collect();
            let (r, done) = s.apply(&choices)?;
            ret += discount * r;
            discount *= gamma;
            if done {
                break;
            }
        }
        returns.push(ret);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{enumerate_tabular, AsyncMatrixGame};
    use crate::oracle::policy::{RandomPolicy, UniformPolicy};
    use crate::oracle::tabular::{build_tabular, DecisionView};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One non-terminal state that loops to itself with reward `r`, or a
    /// chain of `len` states ending with `r`.
    #[derive(Clone)]
    struct Chain {
        pos: usize,
        len: Option<usize>,
        r: f64,
    }

    impl Enumerable for Chain {
        fn n_agents(&self) -> usize {
            1
        }
        fn action_count(&self) -> usize {
            1
        }
        fn key(&self) -> Vec<i64> {
            vec![self.pos as i64]
        }
        fn view(&self) -> DecisionView {
            DecisionView {
                observations: vec![vec![0.0]],
                deciding: vec![true],
                available: vec![vec![true]],
            }
        }
        fn apply(&mut self, _: &[usize]) -> Result<(f64, bool)> {
            match self.len {
                None => Ok((self.r, false)),
                Some(l) => {
                    self.pos += 1;
                    let done = self.pos == l;
                    Ok((if done { self.r } else { 0.0 }, done))
                }
            }
        }
    }

    #[test]
    fn self_loop_is_a_geometric_series() {
        let m = build_tabular(Chain { pos: 0, len: None, r: 1.0 }, 10).unwrap();
        let q = policy_eval(&m, &UniformPolicy, 0.99).unwrap();
        assert!((q.root(&m) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn zero_discount_gives_rewards() {
        let m = enumerate_tabular(&AsyncMatrixGame::default()).unwrap();
        let q = policy_eval(&m, &RandomPolicy::new(1), 0.0).unwrap();
        for (s, row) in m.transitions.iter().enumerate() {
            for (k, t) in row.iter().enumerate() {
                assert_eq!(q.q[s][k], t.reward);
            }
        }
    }

    #[test]
    fn chain_root_value() {
        let (len, r, gamma) = (6, 3.0, 0.9_f64);
        let m = build_tabular(Chain { pos: 0, len: Some(len), r }, 100).unwrap();
        let q = value_iteration(&m, gamma).unwrap();
        assert!((q.root(&m) - gamma.powi(len as i32 - 1) * r).abs() < 1e-12);
    }

    #[test]
    fn matrix_game_optimum() {
        let m = enumerate_tabular(&AsyncMatrixGame::default()).unwrap();
        assert!((value_iteration(&m, 1.0).unwrap().root(&m) - 4.0).abs() < 1e-12);
        assert!((value_iteration(&m, 0.99).unwrap().root(&m) - 3.96).abs() < 1e-12);
    }

    #[test]
    fn optimum_dominates_every_policy() {
        let m = enumerate_tabular(&AsyncMatrixGame::default()).unwrap();
        let star = value_iteration(&m, 0.99).unwrap();
        for p in RandomPolicy::family(3, 20) {
            let q = policy_eval(&m, &p, 0.99).unwrap();
            for s in 0..m.state_count() {
                assert!(star.v[s] >= q.v[s] - 1e-12);
            }
        }
    }

    #[test]
    fn monte_carlo_agrees_within_three_sigma() {
        let env = AsyncMatrixGame::default();
        let m = enumerate_tabular(&env).unwrap();
        let p = RandomPolicy::new(17);
        let exact = policy_eval(&m, &p, 0.99).unwrap().root(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = crate::oracle::RawSource::new(env);
        let (mean, se) = monte_carlo(&src, &p, 0.99, 100_000, 10, &mut rng).unwrap();
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn divergent_undiscounted_loop_is_reported() {
        let m = build_tabular(Chain { pos: 0, len: None, r: 1.0 }, 10).unwrap();
        assert!(matches!(
            value_iteration(&m, 1.0),
            Err(Error::NonConvergence { .. })
        ));
    }
}
