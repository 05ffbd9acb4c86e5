use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tabular::DecisionView;

/// A decentralized stochastic policy: each agent's action distribution
/// depends only on its own observation.
pub trait Policy {
    /// Probabilities over `0..available.len()`, zero on unavailable actions.
    fn probs(&self, agent: usize, obs: &[f64], available: &[bool]) -> Vec<f64>;

    /// Probability of `choices` at `view` (BLANK entries of non-deciding
    /// agents are ignored).
    fn joint_prob(&self, view: &DecisionView, choices: &[usize]) -> f64 {
        let mut p = 1.0;
        for i in 0..choices.len() {
            if view.deciding[i] {
                p *= self.probs(i, &view.observations[i], &view.available[i])[choices[i]];
            }
        }
        p
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn probs(&self, _agent: usize, _obs: &[f64], available: &[bool]) -> Vec<f64> {
        let k = available.iter().filter(|&&a| a).count() as f64;
        available.iter().map(|&a| if a { 1.0 / k } else { 0.0 }).collect()
    }
}

/// A random observation-keyed policy. For every `(agent, observation)` the
/// weights of available actions are drawn uniformly from (0, 1] with a
/// generator seeded by hashing the seed, agent id and observation bits, then
/// normalized, so the same input always yields the same distribution.
#[derive(Clone, Copy, Debug)]
pub struct RandomPolicy {
    pub seed: u64,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { seed }
    }

    /// `count` policies with seeds derived from `seed`.
    pub fn family(seed: u64, count: usize) -> Vec<RandomPolicy> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| RandomPolicy::new(rng.gen())).collect()
    }
}

impl Policy for RandomPolicy {
    fn probs(&self, agent: usize, obs: &[f64], available: &[bool]) -> Vec<f64> {
        let mut h = DefaultHasher::new();
        self.seed.hash(&mut h);
        agent.hash(&mut h);
        for v in obs {
            v.to_bits().hash(&mut h);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let w: Vec<f64> = available
            .iter()
            .map(|&a| {
                let u = 1.0 - rng.gen::<f64>();
                if a {
                    u
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_policy_is_a_stable_distribution() {
        let p = RandomPolicy::new(4);
        let avail = [true, false, true, true];
        let a = p.probs(1, &[0.0, 1.0], &avail);
        assert_eq!(a, p.probs(1, &[0.0, 1.0], &avail));
        assert_eq!(a[1], 0.0);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().enumerate().all(|(i, &x)| i == 1 || x > 0.0));
        assert_ne!(a, p.probs(0, &[0.0, 1.0], &avail));
    }

    #[test]
    fn family_members_differ() {
        let fam = RandomPolicy::family(0, 5);
        let d: Vec<_> = fam.iter().map(|p| p.probs(0, &[1.0], &[true, true])).collect();
        assert!(d.windows(2).all(|w| w[0] != w[1]));
    }
}
