use rand::Rng;

use super::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// `x W + b` on the tape.
pub fn forward_linear(g: &mut Graph, input: Var, weight: Var, bias: Var) -> Result<Var> {
    g.linear(input, weight, bias)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialisation for weight and bias.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = params.add(format!("{name}.weight"), uniform(rng, &[in_dim, out_dim], bound));
        let bias = params.add(format!("{name}.bias"), uniform(rng, &[out_dim], bound));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        forward_linear(g, x, w, b)
    }
}

/// Two-layer perceptron with a ReLU between the layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Mlp {
            first: Linear::new(params, &format!("{name}.0"), in_dim, hidden, rng),
            second: Linear::new(params, &format!("{name}.1"), hidden, out_dim, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.second.out_dim
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let h = self.first.forward(g, params, x)?;
        let h = g.relu(h);
        self.second.forward(g, params, h)
    }
}

/// Recurrent agent network: input projection, GRU cell, linear utility head.
///
/// Gate layout inside the fused `[*, 3H]` projections is reset, update,
/// candidate. `h' = (1 - z) * n + z * h`.
#[derive(Clone, Debug)]
pub struct GruAgentNet {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub action_count: usize,
    pub fc_in: Linear,
    pub gate_x: Linear,
    pub gate_h: Linear,
    pub head: Linear,
}

impl GruAgentNet {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        action_count: usize,
        rng: &mut impl Rng,
    ) -> Self {
        GruAgentNet {
            input_dim,
            hidden_dim,
            action_count,
            fc_in: Linear::new(params, &format!("{name}.fc_in"), input_dim, hidden_dim, rng),
            gate_x: Linear::new(params, &format!("{name}.gru.x"), hidden_dim, 3 * hidden_dim, rng),
            gate_h: Linear::new(params, &format!("{name}.gru.h"), hidden_dim, 3 * hidden_dim, rng),
            head: Linear::new(params, &format!("{name}.head"), hidden_dim, action_count, rng),
        }
    }

    /// One recurrent step on a batch of rows. `input` is `[m, input_dim]`,
    /// `h_prev` is `[m, hidden_dim]`. Returns `(utilities, h_next)`.
    pub fn step(&self, g: &mut Graph, params: &ParamSet, input: Var, h_prev: Var) -> Result<(Var, Var)> {
        let (_, w) = g.value(input).dims2();
        if w != self.input_dim {
            return Err(Error::shape(format!(
                "agent input has {w} features, net expects {}",
                self.input_dim
            )));
        }
        if g.value(h_prev).dims2().1 != self.hidden_dim {
            return Err(Error::shape("hidden state width"));
        }
        let hd = self.hidden_dim;
        let x = self.fc_in.forward(g, params, input)?;
        let x = g.relu(x);
        let gx = self.gate_x.forward(g, params, x)?;
        let gh = self.gate_h.forward(g, params, h_prev)?;

        let rx = g.slice_cols(gx, 0, hd)?;
        let rh = g.slice_cols(gh, 0, hd)?;
        let r = g.add(rx, rh)?;
        let r = g.sigmoid(r);

        let zx = g.slice_cols(gx, hd, 2 * hd)?;
        let zh = g.slice_cols(gh, hd, 2 * hd)?;
        let z = g.add(zx, zh)?;
        let z = g.sigmoid(z);

        let nx = g.slice_cols(gx, 2 * hd, 3 * hd)?;
        let nh = g.slice_cols(gh, 2 * hd, 3 * hd)?;
        let rn = g.mul(r, nh)?;
        let n = g.add(nx, rn)?;
        let n = g.tanh(n);

        let diff = g.sub(h_prev, n)?;
        let zd = g.mul(z, diff)?;
        let h_next = g.add(n, zd)?;
        let q = self.head.forward(g, params, h_next)?;
        Ok((q, h_next))
    }

    /// Concatenates `[obs ; a_prev_onehot]` and runs [`GruAgentNet::step`].
    pub fn gru_step(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        obs: Var,
        h_prev: Var,
        a_prev_onehot: Var,
    ) -> Result<(Var, Var)> {
        let input = g.concat_cols(&[obs, a_prev_onehot])?;
        self.step(g, params, input, h_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(ps: &mut ParamSet, input: usize, hidden: usize, actions: usize) -> GruAgentNet {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        GruAgentNet::new(ps, "agent", input, hidden, actions, &mut rng)
    }

    #[test]
    fn zero_weights_give_head_bias() {
        let mut ps = ParamSet::new();
        let n = net(&mut ps, 4, 5, 3);
        for t in ps.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        ps.get_mut(n.head.bias).data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let mut g = Graph::new();
        let obs = g.constant(Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap());
        let a = g.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
        let h = g.constant(Tensor::new(vec![1, 5], vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap());
        let (q, h2) = n.gru_step(&mut g, &ps, obs, h, a).unwrap();
        assert_eq!(g.value(q).data(), &[0.5, -1.0, 2.0]);
        assert_eq!(g.shape(h2), &[1, 5]);
    }

    #[test]
    fn closed_update_gate_returns_candidate() {
        let hd = 3;
        let mut ps = ParamSet::new();
        let n = net(&mut ps, 2, hd, 2);
        // Saturate the update gate shut: sigmoid(-1e3) == 0 exactly.
        for j in hd..2 * hd {
            ps.get_mut(n.gate_x.bias).data_mut()[j] = -1e3;
        }
        let obs = [0.4, -0.2];
        let h = [0.3, -0.6, 0.9];
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2], obs.to_vec()).unwrap());
        let hv = g.constant(Tensor::new(vec![1, hd], h.to_vec()).unwrap());
        let (_, h_next) = n.step(&mut g, &ps, x, hv).unwrap();

        // Hand evaluation of the candidate state.
        let lin = |l: &Linear, v: &[f64]| -> Vec<f64> {
            let w = ps.get(l.weight).data();
            let b = ps.get(l.bias).data();
            (0..l.out_dim)
                .map(|o| b[o] + (0..l.in_dim).map(|i| v[i] * w[i * l.out_dim + o]).sum::<f64>())
                .collect()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let xin: Vec<f64> = lin(&n.fc_in, &obs).into_iter().map(|v| v.max(0.0)).collect();
        let gx = lin(&n.gate_x, &xin);
        let gh = lin(&n.gate_h, &h);
        let cand: Vec<f64> = (0..hd)
            .map(|j| {
                let r = sig(gx[j] + gh[j]);
                (gx[2 * hd + j] + r * gh[2 * hd + j]).tanh()
            })
            .collect();
        for (a, b) in g.value(h_next).data().iter().zip(&cand) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn hidden_state_stays_bounded() {
        let mut ps = ParamSet::new();
        let n = net(&mut ps, 3, 8, 2);
        let mut g = Graph::new();
        let mut h = g.constant(Tensor::zeros(&[1, 8]));
        for step in 0..200 {
            let v = (step as f64).sin() * 10.0;
            let x = g.constant(Tensor::new(vec![1, 3], vec![v, -v, 1.0]).unwrap());
            let (_, h2) = n.step(&mut g, &ps, x, h).unwrap();
            h = h2;
        }
        assert!(g.value(h).data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn wrong_input_width_is_a_dimension_error() {
        let mut ps = ParamSet::new();
        let n = net(&mut ps, 3, 4, 2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2]));
        let h = g.constant(Tensor::zeros(&[1, 4]));
        assert!(matches!(n.step(&mut g, &ps, x, h), Err(Error::Shape(_))));
    }
}
