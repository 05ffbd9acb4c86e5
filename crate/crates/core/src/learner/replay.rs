use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::vsp::SlotPhase;

/// One stored episode. Per-step vectors have `len + 1` entries (the last is
/// the state after the final step) unless noted.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub n_agents: usize,
    pub action_count: usize,
    /// Real-slot observations, `[t][agent]`.
    pub obs: Vec<Vec<Vec<f64>>>,
    /// Mixer state input.
    pub states: Vec<Vec<f64>>,
    /// `[t][slot]`, `2n` per step.
    pub phases: Vec<Vec<SlotPhase>>,
    /// Real-slot action masks over `0..=BLANK`, `[t][agent]`.
    pub allowed: Vec<Vec<Vec<bool>>>,
    /// Running action of each agent (what its proxy stands for).
    pub running: Vec<Vec<Option<usize>>>,
    /// Step at which each running action was chosen.
    pub decision_steps: Vec<Vec<Option<usize>>>,
    /// `len` entries: action per slot, BLANK on masked slots.
    pub actions: Vec<Vec<usize>>,
    /// `len` entries.
    pub rewards: Vec<f64>,
    /// True if the episode ended in a terminal state rather than a time limit.
    pub terminated: bool,
    /// Online utilities seen while acting, `[t][agent][action]`.
    pub recorded_q: Vec<Vec<Vec<f64>>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Checks that every stored action satisfied its step's mask.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_agents;
        let blank = self.action_count;
        for (t, acts) in self.actions.iter().enumerate() {
            for (k, &a) in acts.iter().enumerate() {
                let ok = match self.phases[t][k] {
                    SlotPhase::Masked => a == blank,
                    _ if k < n => self.allowed[t][k][a],
                    _ => self.running[t][k - n] == Some(a),
                };
                if !ok {
                    return Err(Error::contract(format!("step {t} slot {k}: stored action {a} violates its mask")));
                }
            }
        }
        Ok(())
    }
}

/// Episodes sampled for one update, padded to the longest.
#[derive(Clone, Debug)]
pub struct EpisodeBatch {
    pub episodes: Vec<Episode>,
    pub max_len: usize,
}

impl EpisodeBatch {
    pub fn new(episodes: Vec<Episode>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let max_len = episodes.iter().map(Episode::len).max().unwrap_or(0);
        Ok(EpisodeBatch { episodes, max_len })
    }

    pub fn size(&self) -> usize {
        self.episodes.len()
    }

    /// `[t * B + b]`: one for steps that exist in episode `b`.
    pub fn fill_mask(&self) -> Vec<f64> {
        let b = self.size();
        (0..self.max_len * b)
            .map(|r| if r / b < self.episodes[r % b].len() { 1.0 } else { 0.0 })
            .collect()
    }
}

/// FIFO ring of episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            episodes: VecDeque::with_capacity(capacity.min(1024)),
        }
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Episode> {
        self.episodes.get(i)
    }

    /// Indices of `size` distinct episodes, uniformly at random.
    pub fn sample_indices(&self, size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if size > self.len() {
            return Err(Error::contract(format!("sample of {size} from {} episodes", self.len())));
        }
        Ok(sample(rng, self.len(), size).into_vec())
    }

    pub fn sample(&self, size: usize, rng: &mut impl Rng) -> Result<EpisodeBatch> {
        let idx = self.sample_indices(size, rng)?;
        EpisodeBatch::new(idx.into_iter().map(|i| self.episodes[i].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stub(len: usize, tag: f64) -> Episode {
        Episode {
            n_agents: 1,
            action_count: 1,
            obs: vec![vec![vec![tag]]; len + 1],
            states: vec![vec![]; len + 1],
            phases: vec![vec![SlotPhase::Deciding, SlotPhase::Masked]; len + 1],
            allowed: vec![vec![vec![true, false]]; len + 1],
            running: vec![vec![None]; len + 1],
            decision_steps: vec![vec![None]; len + 1],
            actions: vec![vec![0, 1]; len],
            rewards: vec![tag; len],
            terminated: true,
            recorded_q: vec![vec![vec![0.0, 0.0]]; len + 1],
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2);
        for k in 0..3 {
            b.push(stub(1, k as f64));
        }
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(0).unwrap().rewards, vec![1.0]);
    }

    #[test]
    fn samples_are_distinct() {
        let mut b = ReplayBuffer::new(10);
        for k in 0..10 {
            b.push(stub(1, k as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut idx = b.sample_indices(10, &mut rng).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
        assert!(b.sample(11, &mut rng).is_err());
    }

    #[test]
    fn fill_mask_pads_short_episodes() {
        let batch = EpisodeBatch::new(vec![stub(2, 0.0), stub(1, 1.0)]).unwrap();
        assert_eq!(batch.max_len, 2);
        assert_eq!(batch.fill_mask(), vec![1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn validation_catches_bad_actions() {
        let mut e = stub(1, 0.0);
        assert!(e.validate().is_ok());
        e.actions[0][1] = 0;
        assert!(e.validate().is_err());
    }
}
