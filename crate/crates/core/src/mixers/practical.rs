use rand::Rng;

use super::{HeadMode, MixerInput};
use crate::error::{Error, Result};
use crate::tensor::nn::{Linear, Mlp};
use crate::tensor::{Graph, ParamId, ParamSet, Tensor, Var};

/// Proxy sets `C` paired with each deciding agent `d` for an order-`K`
/// expansion: all subsets of the other agents of size `1..K`, smallest first,
/// lexicographic within a size.
pub fn interaction_terms(n_agents: usize, order: usize) -> Vec<Vec<Vec<usize>>> {
    fn subsets(pool: &[usize], size: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..pool.len() {
            cur.push(pool[i]);
            subsets(pool, size, i + 1, cur, out);
            cur.pop();
        }
    }
    (0..n_agents)
        .map(|d| {
            let pool: Vec<usize> = (0..n_agents).filter(|&c| c != d).collect();
            let mut out = Vec::new();
            for size in 1..order {
                subsets(&pool, size, 0, &mut Vec::new(), &mut out);
            }
            out
        })
        .collect()
}

#[derive(Clone, Debug)]
enum Combine {
    Direct,
    /// State-conditioned logits over heads.
    Softmax(Mlp),
    /// `sum |w2| relu(|W1| q_h + b1) + sum |w_skip| q_h + b2`.
    Mlp {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        skip: ParamId,
        b2: ParamId,
    },
}

/// State-conditioned MVD mixer. For one head,
///
/// `Q = f0 + sum_k |f_k| Q_k + sum_d Q_d sum_C |f_{d C}| prod_{c in C} (Q'_c + Qmin) / 2`
///
/// where `k` runs over unmasked slots, `d` over deciding agents and `C` over
/// sets of active proxies. Every coefficient of `Q_d` is nonnegative once
/// `Qmin` lifts the proxy utilities above zero.
#[derive(Clone, Debug)]
pub struct PracticalMvd {
    pub n_agents: usize,
    pub order: usize,
    pub head_mode: HeadMode,
    pub heads: usize,
    terms: Vec<Vec<Vec<usize>>>,
    slot_w: Mlp,
    term_w: Option<Mlp>,
    bias: Mlp,
    combine: Combine,
}

impl PracticalMvd {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        n_agents: usize,
        state_dim: usize,
        order: usize,
        head_mode: HeadMode,
        heads: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(1..=n_agents).contains(&order) {
            return Err(Error::contract(format!("order {order} outside 1..={n_agents}")));
        }
        let heads = if head_mode == HeadMode::Direct { 1 } else { heads.max(1) };
        let terms = interaction_terms(n_agents, order);
        let per_agent = terms[0].len();
        let slot_w = Mlp::new(params, &format!("{name}.hyper_slot"), state_dim, hidden, heads * 2 * n_agents, rng);
        let term_w = (per_agent > 0).then(|| {
            Mlp::new(
                params,
                &format!("{name}.hyper_pair"),
                state_dim,
                hidden,
                heads * n_agents * per_agent,
                rng,
            )
        });
        let bias = Mlp::new(params, &format!("{name}.hyper_bias"), state_dim, hidden, heads, rng);
        let combine = match head_mode {
            HeadMode::Direct => Combine::Direct,
            HeadMode::Softmax => Combine::Softmax(Mlp::new(
                params,
                &format!("{name}.head_logits"),
                state_dim,
                hidden,
                heads,
                rng,
            )),
            HeadMode::Mlp => {
                let width = 2 * heads;
                let l1 = Linear::new(params, &format!("{name}.head_mlp.0"), heads, width, rng);
                let l2 = Linear::new(params, &format!("{name}.head_mlp.1"), width, 1, rng);
                let bound = 1.0 / (heads as f64).sqrt();
                let skip = params.add(
                    format!("{name}.head_skip"),
                    Tensor::new(vec![heads, 1], (0..heads).map(|_| rng.gen_range(-bound..=bound)).collect())
                        .expect("skip shape"),
                );
                Combine::Mlp {
                    w1: l1.weight,
                    b1: l1.bias,
                    w2: l2.weight,
                    skip,
                    b2: l2.bias,
                }
            }
        };
        Ok(PracticalMvd {
            n_agents,
            order,
            head_mode,
            heads,
            terms,
            slot_w,
            term_w,
            bias,
            combine,
        })
    }

    fn per_agent_terms(&self) -> usize {
        self.terms[0].len()
    }

    /// `[rows, n * T]` products of shifted proxy utilities, zero where the
    /// term is inactive in that row.
    fn interaction_features(&self, g: &mut Graph, input: &MixerInput, q: Var, offset: f64) -> Result<Var> {
        let n = self.n_agents;
        let l = &input.layout;
        let proxies = g.slice_cols(q, n, 2 * n)?;
        let lifted = g.add_scalar(proxies, offset);
        let shifted = g.scale(lifted, 0.5);
        let mut cols = Vec::new();
        let mut mask = vec![0.0; l.rows * n * self.per_agent_terms()];
        let width = n * self.per_agent_terms();
        for (d, sets) in self.terms.iter().enumerate() {
            for (j, set) in sets.iter().enumerate() {
                let mut f = g.slice_cols(shifted, set[0], set[0] + 1)?;
                for &c in &set[1..] {
                    let fc = g.slice_cols(shifted, c, c + 1)?;
                    f = g.mul(f, fc)?;
                }
                cols.push(f);
                for r in 0..l.rows {
                    if l.is_deciding(r, d) && set.iter().all(|&c| l.proxy_active(r, c)) {
                        mask[r * width + d * self.per_agent_terms() + j] = 1.0;
                    }
                }
            }
        }
        let feats = g.concat_cols(&cols)?;
        let mask = g.constant(Tensor::new(vec![l.rows, width], mask)?);
        g.mul(feats, mask)
    }

    /// `[rows, heads]` per-head mixed values.
    fn head_values(&self, g: &mut Graph, params: &ParamSet, input: &MixerInput, offset: f64) -> Result<Var> {
        let n = self.n_agents;
        let q = input.masked_utilities(g)?;
        let s = input.state;
        let slot_w = self.slot_w.forward(g, params, s)?;
        let slot_w = g.abs(slot_w);
        let bias = self.bias.forward(g, params, s)?;
        let inter = match &self.term_w {
            Some(net) => {
                let w = net.forward(g, params, s)?;
                let w = g.abs(w);
                let feats = self.interaction_features(g, input, q, offset)?;
                let q_real = g.slice_cols(q, 0, n)?;
                let dmask = g.constant(input.layout.deciding_mask());
                let q_dec = g.mul(q_real, dmask)?;
                Some((w, feats, q_dec))
            }
            None => None,
        };
        let t = self.per_agent_terms();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let wh = g.slice_cols(slot_w, h * 2 * n, (h + 1) * 2 * n)?;
            let lin = g.mul(wh, q)?;
            let mut v = g.sum_rows(lin);
            if let Some((w, feats, q_dec)) = inter {
                let wh = g.slice_cols(w, h * n * t, (h + 1) * n * t)?;
                let wf = g.mul(wh, feats)?;
                let coef = g.group_sum(wf, t)?;
                let cq = g.mul(coef, q_dec)?;
                let iv = g.sum_rows(cq);
                v = g.add(v, iv)?;
            }
            let bh = g.slice_cols(bias, h, h + 1)?;
            heads.push(g.add(v, bh)?);
        }
        if heads.len() == 1 {
            return Ok(heads[0]);
        }
        g.concat_cols(&heads)
    }

    /// `[rows, 1]`. `offset` is the current `Qmin` lift.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, input: &MixerInput, offset: f64) -> Result<Var> {
        let hv = self.head_values(g, params, input, offset)?;
        match &self.combine {
            Combine::Direct => Ok(hv),
            Combine::Softmax(logits) => {
                let z = logits.forward(g, params, input.state)?;
                let w = g.softmax(z);
                let wq = g.mul(w, hv)?;
                Ok(g.sum_rows(wq))
            }
            Combine::Mlp { w1, b1, w2, skip, b2 } => {
                let w1 = g.param(params, *w1);
                let w1 = g.abs(w1);
                let b1 = g.param(params, *b1);
                let w2 = g.param(params, *w2);
                let w2 = g.abs(w2);
                let skip = g.param(params, *skip);
                let skip = g.abs(skip);
                let b2 = g.param(params, *b2);
                let hid = g.linear(hv, w1, b1)?;
                let hid = g.relu(hid);
                let out = g.linear(hid, w2, b2)?;
                let sk = g.matmul(hv, skip)?;
                g.add(out, sk)
            }
        }
    }

    /// `|f_{d c}|` for every ordered pair, averaged over heads, per state.
    pub fn pair_weights(&self, params: &ParamSet, states: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
        let net = self
            .term_w
            .as_ref()
            .ok_or_else(|| Error::contract("mixer of order 1 has no pair weights"))?;
        let n = self.n_agents;
        let t = self.per_agent_terms();
        let mut g = Graph::new();
        let s = g.constant(Tensor::from_rows(states)?);
        let w = net.forward(&mut g, params, s)?;
        let w = g.value(w);
        Ok((0..states.len())
            .map(|r| {
                let row = w.row(r);
                let mut m = vec![vec![0.0; n]; n];
                for (d, sets) in self.terms.iter().enumerate() {
                    for (j, set) in sets.iter().enumerate().filter(|(_, s)| s.len() == 1) {
                        let sum: f64 = (0..self.heads).map(|h| row[h * n * t + d * t + j].abs()).sum();
                        m[d][set[0]] = sum / self.heads as f64;
                    }
                }
                m
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_lists() {
        assert!(interaction_terms(3, 1).iter().all(|t| t.is_empty()));
        assert_eq!(interaction_terms(3, 2)[1], vec![vec![0], vec![2]]);
        assert_eq!(interaction_terms(3, 3)[0], vec![vec![1], vec![2], vec![1, 2]]);
        assert_eq!(interaction_terms(4, 3)[0].len(), 3 + 3);
    }
}
