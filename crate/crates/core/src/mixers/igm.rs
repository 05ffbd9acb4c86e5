use super::{MixerInput, SlotLayout};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use crate::vsp::SlotPhase;

/// Largest joint space [`check_igm`] will enumerate.
pub const IGM_BUDGET: usize = 1_000_000;

const CHUNK: usize = 4096;

/// One state of a mixer and the candidate utilities of every slot.
#[derive(Clone, Debug)]
pub struct IgmProblem {
    pub n_agents: usize,
    /// `2n` slot phases.
    pub phases: Vec<SlotPhase>,
    pub state: Vec<f64>,
    /// Per slot: one utility per candidate action for deciding slots, a
    /// single frozen value for executing slots and active proxies, nothing
    /// for masked slots.
    pub utilities: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IgmVerdict {
    pub holds: bool,
    /// Per slot, the index into its candidates (0 for frozen or masked).
    pub joint_argmax: Vec<usize>,
    pub individual_argmax: Vec<usize>,
    pub joint_count: usize,
    pub joint_max: f64,
    pub value_at_individual: f64,
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl IgmProblem {
    fn validate(&self) -> Result<Vec<usize>> {
        let w = 2 * self.n_agents;
        if self.phases.len() != w || self.utilities.len() != w {
            return Err(Error::shape(format!("IGM problem needs {w} slots")));
        }
        let mut sizes = Vec::with_capacity(w);
        for (k, (p, u)) in self.phases.iter().zip(&self.utilities).enumerate() {
            let ok = match p {
                SlotPhase::Masked => u.is_empty(),
                SlotPhase::Deciding => k < self.n_agents && !u.is_empty(),
                SlotPhase::Executing => u.len() == 1,
            };
            if !ok {
                return Err(Error::contract(format!(
                    "slot {k} is {} with {} candidates",
                    p.as_str(),
                    u.len()
                )));
            }
            sizes.push(u.len().max(1));
        }
        Ok(sizes)
    }
}

/// Enumerates every joint choice of the deciding slots, mixes each with
/// `forward`, and checks that the joint argmax equals the per-slot argmaxes.
/// Ties go to the lowest index on both sides: per slot, the lowest action;
/// jointly, the lexicographically first choice with slot 0 most significant.
pub fn check_igm<F>(problem: &IgmProblem, mut forward: F) -> Result<IgmVerdict>
where
    F: FnMut(&mut Graph, &MixerInput) -> Result<Var>,
{
    let sizes = problem.validate()?;
    let total = sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
    let total = match total {
        Some(t) if t <= IGM_BUDGET => t,
        _ => {
            return Err(Error::Budget {
                what: "joint actions".into(),
                count: total.unwrap_or(usize::MAX),
                limit: IGM_BUDGET,
            })
        }
    };
    let w = sizes.len();
    let decode = |mut code: usize| {
        let mut idx = vec![0; w];
        for k in (0..w).rev() {
            idx[k] = code % sizes[k];
            code /= sizes[k];
        }
        idx
    };
    let row_layout = SlotLayout::new(problem.n_agents, problem.phases.clone())?;
    let value = |idx: &[usize], k: usize| problem.utilities[k].get(idx[k]).copied().unwrap_or(0.0);

    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut start = 0;
    while start < total {
        let rows = CHUNK.min(total - start);
        let mut q = Vec::with_capacity(rows * w);
        for code in start..start + rows {
            let idx = decode(code);
            q.extend((0..w).map(|k| value(&idx, k)));
        }
        let mut g = Graph::new();
        let states: Vec<f64> = (0..rows).flat_map(|_| problem.state.iter().copied()).collect();
        let input = MixerInput {
            utilities: g.constant(Tensor::new(vec![rows, w], q)?),
            state: g.constant(Tensor::new(vec![rows, problem.state.len()], states)?),
            layout: row_layout.repeat_rows(rows),
        };
        let out = forward(&mut g, &input)?;
        for (r, &v) in g.value(out).data().iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("mixer output for joint {}", start + r)));
            }
            if v > best.0 {
                best = (v, start + r);
            }
        }
        start += rows;
    }

    let joint_argmax = decode(best.1);
    let individual_argmax: Vec<usize> = problem.utilities.iter().map(|u| if u.len() > 1 { first_argmax(u) } else { 0 }).collect();
    let code = individual_argmax.iter().zip(&sizes).fold(0, |acc, (&i, &s)| acc * s + i);
    // Recompute the mixed value at the individual argmax for reporting.
    let mut g = Graph::new();
    let q: Vec<f64> = (0..w).map(|k| value(&individual_argmax, k)).collect();
    let input = MixerInput {
        utilities: g.constant(Tensor::new(vec![1, w], q)?),
        state: g.constant(Tensor::new(vec![1, problem.state.len()], problem.state.clone())?),
        layout: row_layout,
    };
    let out = forward(&mut g, &input)?;
    let value_at_individual = g.value(out).item();
    Ok(IgmVerdict {
        holds: code == best.1,
        joint_argmax,
        individual_argmax,
        joint_count: total,
        joint_max: best.0,
        value_at_individual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use SlotPhase::*;

    fn problem(utilities: Vec<Vec<f64>>) -> IgmProblem {
        IgmProblem {
            n_agents: 2,
            phases: vec![Deciding, Deciding, Masked, Masked],
            state: vec![0.0],
            utilities,
        }
    }

    #[test]
    fn sum_satisfies_igm() {
        let p = problem(vec![vec![0.1, 0.9, 0.3], vec![2.0, -1.0], vec![], vec![]]);
        let v = check_igm(&p, |g, x| Ok(g.sum_rows(x.utilities))).unwrap();
        assert!(v.holds);
        assert_eq!(v.joint_count, 6);
        assert_eq!(v.joint_argmax, vec![1, 0, 0, 0]);
    }

    #[test]
    fn negated_product_breaks_igm() {
        // Q = -q0 q1 is maximised by opposite signs, not by each maximum.
        let p = problem(vec![vec![-1.0, 2.0], vec![-3.0, 1.0], vec![], vec![]]);
        let v = check_igm(&p, |g, x| {
            let a = g.slice_cols(x.utilities, 0, 1)?;
            let b = g.slice_cols(x.utilities, 1, 2)?;
            let m = g.mul(a, b)?;
            Ok(g.scale(m, -1.0))
        })
        .unwrap();
        assert!(!v.holds);
        assert!(v.joint_max > v.value_at_individual);
    }

    #[test]
    fn ties_resolve_to_lowest_ids() {
        let p = problem(vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![], vec![]]);
        let v = check_igm(&p, |g, x| Ok(g.sum_rows(x.utilities))).unwrap();
        assert!(v.holds);
        assert_eq!(v.joint_argmax, vec![0; 4]);
    }

    #[test]
    fn oversized_joint_space_is_refused() {
        let p = problem(vec![vec![0.0; 1001], vec![0.0; 1000], vec![], vec![]]);
        let r = check_igm(&p, |g, x| Ok(g.sum_rows(x.utilities)));
        assert!(matches!(r, Err(Error::Budget { .. })));
    }

    #[test]
    fn malformed_problems_are_rejected() {
        let p = problem(vec![vec![0.0], vec![0.0], vec![1.0], vec![]]);
        assert!(check_igm(&p, |g, x| Ok(g.sum_rows(x.utilities))).is_err());
    }
}
