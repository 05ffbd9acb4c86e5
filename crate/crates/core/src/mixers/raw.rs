//! Mixers with fixed coefficients: the additive baseline and the raw MVD
//! expansions, before any hypernetwork or sign constraint.

use super::MixerInput;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

fn tiled_row(rows: usize, row: &[f64]) -> Tensor {
    let data = (0..rows).flat_map(|_| row.iter().copied()).collect();
    Tensor::new(vec![rows, row.len()], data).expect("tiled row")
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::shape(format!("{what}: {got} coefficients, expected {want}")));
    }
    Ok(())
}

/// `k0 + sum_k k_k Q_k` over unmasked slots.
fn linear_part(g: &mut Graph, input: &MixerInput, k0: f64, k: &[f64]) -> Result<Var> {
    input.check(g)?;
    check_len("slot weights", k.len(), 2 * input.layout.n_agents)?;
    let q = input.masked_utilities(g)?;
    let kt = g.constant(tiled_row(input.layout.rows, k));
    let weighted = g.mul(q, kt)?;
    let s = g.sum_rows(weighted);
    Ok(g.add_scalar(s, k0))
}

/// `k_{d,C} Q_d prod_{c in C} Q'_c` for every row where `d` decides and
/// every proxy in `C` is active; zero elsewhere.
fn interaction(g: &mut Graph, q: Var, input: &MixerInput, d: usize, proxies: &[usize], k: f64) -> Result<Var> {
    let l = &input.layout;
    let n = l.n_agents;
    let mut term = g.slice_cols(q, d, d + 1)?;
    for &c in proxies {
        let qc = g.slice_cols(q, n + c, n + c + 1)?;
        term = g.mul(term, qc)?;
    }
    let col: Vec<f64> = (0..l.rows)
        .map(|r| {
            let on = l.is_deciding(r, d) && proxies.iter().all(|&c| l.proxy_active(r, c));
            if on {
                k
            } else {
                0.0
            }
        })
        .collect();
    let col = g.constant(Tensor::new(vec![l.rows, 1], col)?);
    g.mul(term, col)
}

/// `Q = k0 + sum_k k_k Q_k` over the unmasked slots.
pub fn mix_additive(g: &mut Graph, input: &MixerInput, k0: f64, k: &[f64]) -> Result<Var> {
    linear_part(g, input, k0, k)
}

/// Coefficients of the second-order expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct MvdParams {
    pub k0: f64,
    /// One per slot, `2n`.
    pub k: Vec<f64>,
    /// `pair[d][c]` multiplies `Q_d Q'_c`; the diagonal is never used since an
    /// agent cannot decide while its own action runs.
    pub pair: Vec<Vec<f64>>,
}

/// `Q = k0 + sum_k k_k Q_k + sum_{d, c} k_{d c} Q_d Q'_c`, pairs taken over
/// deciding real slots and active proxies.
pub fn mix_mvd(g: &mut Graph, input: &MixerInput, p: &MvdParams) -> Result<Var> {
    let n = input.layout.n_agents;
    check_len("pair rows", p.pair.len(), n)?;
    let mut out = linear_part(g, input, p.k0, &p.k)?;
    let q = input.masked_utilities(g)?;
    for d in 0..n {
        check_len("pair row", p.pair[d].len(), n)?;
        for c in (0..n).filter(|&c| c != d) {
            let t = interaction(g, q, input, d, &[c], p.pair[d][c])?;
            out = g.add(out, t)?;
        }
    }
    Ok(out)
}

/// Coefficients of an order-`K` expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct KOrderParams {
    pub k0: f64,
    pub k: Vec<f64>,
    /// `(d, proxies, k)`: coefficient of `Q_d` times the proxies' utilities.
    pub terms: Vec<(usize, Vec<usize>, f64)>,
}

/// Order-`K` expansion: every term multiplies one deciding utility by up to
/// `K - 1` distinct active proxy utilities.
pub fn mix_mvd_korder(g: &mut Graph, input: &MixerInput, p: &KOrderParams, order: usize) -> Result<Var> {
    let n = input.layout.n_agents;
    if !(1..=n).contains(&order) {
        return Err(Error::contract(format!("order {order} outside 1..={n}")));
    }
    let mut out = linear_part(g, input, p.k0, &p.k)?;
    let q = input.masked_utilities(g)?;
    for (d, proxies, k) in &p.terms {
        let mut sorted = proxies.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if *d >= n
            || proxies.is_empty()
            || proxies.len() >= order
            || sorted.len() != proxies.len()
            || sorted.iter().any(|&c| c >= n || c == *d)
        {
            return Err(Error::contract(format!(
                "term ({d}, {proxies:?}) invalid for order {order} with {n} agents"
            )));
        }
        let t = interaction(g, q, input, *d, proxies, *k)?;
        out = g.add(out, t)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixers::SlotLayout;
    use crate::vsp::SlotPhase::*;

    fn input(g: &mut Graph, q: &[f64], layout: SlotLayout) -> MixerInput {
        let rows = layout.rows;
        let w = q.len() / rows;
        MixerInput {
            utilities: g.input(Tensor::new(vec![rows, w], q.to_vec()).unwrap()),
            state: g.constant(Tensor::zeros(&[rows, 1])),
            layout,
        }
    }

    #[test]
    fn hand_computed_pair_value() {
        // Agent 0 decides, agent 1 runs an action; its proxy is active.
        let layout = SlotLayout::new(2, vec![Deciding, Executing, Masked, Executing]).unwrap();
        let mut g = Graph::new();
        let x = input(&mut g, &[2.0, 3.0, 0.0, 5.0], layout);
        let p = MvdParams {
            k0: 1.0,
            k: vec![0.5, 0.25, 9.0, 2.0],
            pair: vec![vec![0.0, 0.1], vec![7.0, 0.0]],
        };
        let q = mix_mvd(&mut g, &x, &p).unwrap();
        let expect = 1.0 + 0.5 * 2.0 + 0.25 * 3.0 + 2.0 * 5.0 + 0.1 * 2.0 * 5.0;
        assert!((g.value(q).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn gradients_follow_the_expansion() {
        let layout = SlotLayout::new(2, vec![Deciding, Executing, Masked, Executing]).unwrap();
        let mut g = Graph::new();
        let x = input(&mut g, &[2.0, 3.0, 0.0, 5.0], layout);
        let p = MvdParams {
            k0: 0.0,
            k: vec![0.5, 0.25, 9.0, 2.0],
            pair: vec![vec![0.0, 0.1], vec![7.0, 0.0]],
        };
        let q = mix_mvd(&mut g, &x, &p).unwrap();
        let grads = g.backward(q).unwrap();
        let d = grads.get(x.utilities).unwrap();
        assert!((d[0] - (0.5 + 0.1 * 5.0)).abs() < 1e-12);
        assert!((d[1] - 0.25).abs() < 1e-12);
        assert_eq!(d[2], 0.0);
        assert!((d[3] - (2.0 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn korder_rejects_bad_orders_and_terms() {
        let layout = SlotLayout::new(2, vec![Deciding; 4]).unwrap();
        let mut g = Graph::new();
        let x = input(&mut g, &[0.0; 4], layout);
        let p = KOrderParams {
            k0: 0.0,
            k: vec![0.0; 4],
            terms: vec![(0, vec![1], 1.0)],
        };
        assert!(mix_mvd_korder(&mut g, &x, &p, 0).is_err());
        assert!(mix_mvd_korder(&mut g, &x, &p, 3).is_err());
        assert!(mix_mvd_korder(&mut g, &x, &p, 1).is_err());
        assert!(mix_mvd_korder(&mut g, &x, &p, 2).is_ok());
        let own = KOrderParams {
            terms: vec![(0, vec![0], 1.0)],
            ..p
        };
        assert!(mix_mvd_korder(&mut g, &x, &own, 2).is_err());
    }
}
