use rand::Rng;

use super::MixerInput;
use crate::error::Result;
use crate::tensor::nn::{Linear, Mlp};
use crate::tensor::{Graph, ParamSet, Var};

/// Hypernetwork mixer with absolute-valued weights, so `Q` is monotone in
/// every slot utility: `Q = |w2(s)| . elu(|W1(s)| q + b1(s)) + V(s)`.
#[derive(Clone, Debug)]
pub struct QmixMixer {
    pub n_agents: usize,
    pub embed_dim: usize,
    hyper_w1: Mlp,
    hyper_b1: Linear,
    hyper_w2: Mlp,
    value: Mlp,
}

impl QmixMixer {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        n_agents: usize,
        state_dim: usize,
        embed_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let slots = 2 * n_agents;
        QmixMixer {
            n_agents,
            embed_dim,
            hyper_w1: Mlp::new(params, &format!("{name}.hyper_w1"), state_dim, hidden, slots * embed_dim, rng),
            hyper_b1: Linear::new(params, &format!("{name}.hyper_b1"), state_dim, embed_dim, rng),
            hyper_w2: Mlp::new(params, &format!("{name}.hyper_w2"), state_dim, hidden, embed_dim, rng),
            value: Mlp::new(params, &format!("{name}.value"), state_dim, hidden, 1, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, input: &MixerInput) -> Result<Var> {
        let q = input.masked_utilities(g)?;
        let s = input.state;
        // Column e * 2n + k of w1 weights slot k into hidden unit e.
        let w1 = self.hyper_w1.forward(g, params, s)?;
        let w1 = g.abs(w1);
        let tiled = g.concat_cols(&vec![q; self.embed_dim])?;
        let prod = g.mul(w1, tiled)?;
        let pre = g.group_sum(prod, 2 * self.n_agents)?;
        let b1 = self.hyper_b1.forward(g, params, s)?;
        let pre = g.add(pre, b1)?;
        let h = g.elu(pre);
        let w2 = self.hyper_w2.forward(g, params, s)?;
        let w2 = g.abs(w2);
        let hw = g.mul(h, w2)?;
        let y = g.sum_rows(hw);
        let v = self.value.forward(g, params, s)?;
        g.add(y, v)
    }
}
