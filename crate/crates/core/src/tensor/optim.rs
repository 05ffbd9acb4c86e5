use super::ParamSet;
use crate::error::{Error, Result};

/// Adam with bias-corrected moments. Moment buffers are created lazily and
/// laid out in parameter order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, (0.9, 0.999), 1e-8)
    }

    pub fn with_betas(lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Adam {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, param: usize) -> Option<&[f64]> {
        self.first.get(param).map(Vec::as_slice)
    }

    pub fn second_moment(&self, param: usize) -> Option<&[f64]> {
        self.second.get(param).map(Vec::as_slice)
    }

    /// Applies one update to every parameter that requires a gradient.
    /// Missing gradients count as zero. Fails before touching anything if a
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for id in params.ids() {
            let t = params.get(id);
            if let Some(g) = t.grad() {
                if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of `{}` at element {pos} is {}",
                        params.name(id),
                        g[pos]
                    )));
                }
            }
        }
        if self.first.len() != params.len() {
            self.first = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, t) in params.tensors_mut().enumerate() {
            if !t.requires_grad() {
                continue;
            }
            let grad = t.grad().map(<[f64]>::to_vec);
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let data = t.data_mut();
            for j in 0..data.len() {
                let gj = grad.as_ref().map_or(0.0, |g| g[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(value: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::vector(vec![value]));
        ps
    }

    fn set_grad(ps: &mut ParamSet, g: f64) {
        let id = ps.ids().next().unwrap();
        ps.get_mut(id).zero_grad();
        ps.get_mut(id).accumulate_grad(&[g]);
    }

    #[test]
    fn zero_gradient_on_fresh_state_leaves_params() {
        let mut ps = one_param(1.5);
        let mut opt = Adam::new(5e-4);
        set_grad(&mut ps, 0.0);
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.iter().next().unwrap().1.data(), &[1.5]);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut ps = one_param(0.0);
        let mut opt = Adam::new(5e-4);
        set_grad(&mut ps, 2.0);
        opt.step(&mut ps).unwrap();
        let (m, v) = (opt.first_moment(0).unwrap()[0], opt.second_moment(0).unwrap()[0]);
        set_grad(&mut ps, 0.0);
        opt.step(&mut ps).unwrap();
        assert!((opt.first_moment(0).unwrap()[0] - 0.9 * m).abs() < 1e-15);
        assert!((opt.second_moment(0).unwrap()[0] - 0.999 * v).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_approaches_lr_times_sign() {
        // With g constant, m_hat = g and v_hat = g^2 exactly, so every step is
        // lr * g / (|g| + eps).
        let lr = 5e-4;
        for g in [3.0, -0.25] {
            let mut ps = one_param(0.0);
            let mut opt = Adam::new(lr);
            let mut last = 0.0;
            for _ in 0..500 {
                set_grad(&mut ps, g);
                opt.step(&mut ps).unwrap();
                let now = ps.iter().next().unwrap().1.data()[0];
                let delta = now - last;
                last = now;
                assert!((delta + lr * f64::signum(g)).abs() < 1e-9, "{delta}");
            }
        }
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut ps = one_param(1.0);
        let mut opt = Adam::new(5e-4);
        set_grad(&mut ps, f64::NAN);
        let err = opt.step(&mut ps).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert!(err.to_string().contains("`w`"));
        assert_eq!(ps.iter().next().unwrap().1.data(), &[1.0]);
        assert_eq!(opt.steps_taken(), 0);
    }
}
