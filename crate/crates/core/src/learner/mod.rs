//! Centralised training with decentralised execution: episode collection
//! through the slot wrapper, episodic replay, TD targets from target
//! networks, and end-to-end updates of agents and mixer.

mod replay;
mod trace;

pub use replay::{Episode, EpisodeBatch, ReplayBuffer};
pub use trace::{dump_credit_trace, write_trace_csv, TraceRecord, TraceSlot};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{AnyEnv, Env};
use crate::error::{Error, Result};
use crate::mixers::{Mixer, MixerConfig, MixerInput, QminTracker, SlotLayout};
use crate::tensor::nn::GruAgentNet;
use crate::tensor::optim::Adam;
use crate::tensor::{Graph, ParamSet, Tensor, Var};
use crate::vsp::{SlotEnv, SlotPhase, SlotStep, WrapperMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub buffer_size: usize,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_finish: f64,
    pub eps_anneal_steps: u64,
    /// Counted in collected episodes.
    pub target_update_interval: u64,
    pub test_interval: u64,
    pub test_episodes: usize,
    pub total_timesteps: u64,
    pub learning_rate: f64,
    pub seed: u64,
    pub agent_hidden: usize,
    pub grad_clip: f64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            buffer_size: 5000,
            gamma: 0.99,
            eps_start: 1.0,
            eps_finish: 0.05,
            eps_anneal_steps: 50_000,
            target_update_interval: 200,
            test_interval: 2000,
            test_episodes: 20,
            total_timesteps: 20_000,
            learning_rate: 0.0005,
            seed: 0,
            agent_hidden: 64,
            grad_clip: 10.0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(format!("train.{key}"), msg));
        if !(0.0 <= self.eps_finish && self.eps_finish <= self.eps_start && self.eps_start <= 1.0) {
            return bad("eps_start", format!("need 0 <= {} <= {} <= 1", self.eps_finish, self.eps_start));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", format!("{} outside [0, 1)", self.gamma));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_size {
            return bad("batch_size", format!("need 0 < {} <= buffer_size {}", self.batch_size, self.buffer_size));
        }
        if self.target_update_interval == 0 || self.test_interval == 0 {
            return bad("target_update_interval", "intervals must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("{} is not a positive step size", self.learning_rate));
        }
        if self.agent_hidden == 0 {
            return bad("agent_hidden", "must be positive".into());
        }
        if self.workers != 1 {
            return bad("workers", "only single-worker collection is supported".into());
        }
        Ok(())
    }
}

/// Linear anneal from `eps_start` to `eps_finish`, constant afterwards.
pub fn epsilon_at(step: u64, cfg: &TrainConfig) -> f64 {
    if cfg.eps_anneal_steps == 0 || step >= cfg.eps_anneal_steps {
        return cfg.eps_finish;
    }
    let frac = step as f64 / cfg.eps_anneal_steps as f64;
    cfg.eps_start + frac * (cfg.eps_finish - cfg.eps_start)
}

/// One row of the metrics sink.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episodes: u64,
    /// Mean training loss since the previous row, if any update ran.
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub test_mean_return: f64,
    pub test_return_std: f64,
    pub q_min_offset: f64,
}

pub const METRICS_VERSION: &str = "# async-credit metrics v1";
pub const METRICS_HEADER: &str = "step,episodes,loss,epsilon,test_mean_return,test_return_std,q_min_offset";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.episodes,
            self.loss.map(|l| l.to_string()).unwrap_or_default(),
            self.epsilon,
            self.test_mean_return,
            self.test_return_std,
            self.q_min_offset
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub q_min_offset: f64,
    /// Smallest `Q'_c + offset` fed to the mixer in this update.
    pub min_shifted_proxy: Option<f64>,
}

/// Everything needed to build a [`Learner`].
#[derive(Clone, Debug)]
pub struct LearnerSpec {
    pub env: AnyEnv,
    pub mode: WrapperMode,
    pub use_extended_state: bool,
    pub mixer: MixerConfig,
    pub train: TrainConfig,
}

pub struct Learner {
    pub spec: LearnerSpec,
    pub env: SlotEnv<AnyEnv>,
    pub agent: GruAgentNet,
    pub mixer: Mixer,
    pub online: ParamSet,
    pub target: ParamSet,
    pub tracker: QminTracker,
    pub buffer: ReplayBuffer,
    optimizer: Adam,
    explore_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    seed_rng: ChaCha8Rng,
    test_rng: ChaCha8Rng,
    pub t_env: u64,
    pub episodes: u64,
    pub syncs: u64,
    pub updates: u64,
    /// Tracker offset after each update.
    pub offset_trace: Vec<f64>,
    /// Smallest shifted proxy utility of each update that had active proxies.
    pub shifted_trace: Vec<f64>,
}

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn argmax_allowed(q: &[f64], allowed: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (a, (&v, &ok)) in q.iter().zip(allowed).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(a);
        }
    }
    best
}

impl Learner {
    pub fn new(spec: LearnerSpec) -> Result<Self> {
        spec.train.validate()?;
        let env_spec = spec.env.spec().clone();
        env_spec.validate()?;
        let n = env_spec.n_agents;
        let a = env_spec.action_count;
        let env = SlotEnv::new(spec.env.clone(), spec.mode);
        let state_dim = if spec.use_extended_state {
            env.extended_state_dim()
        } else {
            env_spec.state_dim
        };
        let mut init = stream(spec.train.seed, 1);
        let mut online = ParamSet::new();
        let input_dim = env_spec.obs_dim + a + 1 + n;
        let agent = GruAgentNet::new(&mut online, "agent", input_dim, spec.train.agent_hidden, a + 1, &mut init);
        let mixer = Mixer::new(&spec.mixer, &mut online, n, state_dim, &mut init)?;
        let mut target = online.clone();
        target.set_requires_grad(false);
        let seed = spec.train.seed;
        Ok(Learner {
            env,
            agent,
            mixer,
            online,
            target,
            tracker: QminTracker::new(),
            buffer: ReplayBuffer::new(spec.train.buffer_size),
            optimizer: Adam::new(spec.train.learning_rate),
            explore_rng: stream(seed, 2),
            sample_rng: stream(seed, 3),
            seed_rng: stream(seed, 4),
            test_rng: stream(seed, 5),
            t_env: 0,
            episodes: 0,
            syncs: 0,
            updates: 0,
            offset_trace: Vec::new(),
            shifted_trace: Vec::new(),
            spec,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.env.n_agents()
    }

    pub fn action_count(&self) -> usize {
        self.env.action_count()
    }

    fn obs_dim(&self) -> usize {
        self.spec.env.spec().obs_dim
    }

    /// Agent-network input rows: `[obs ; prev action one-hot ; agent id]`.
    fn input_rows(&self, rows: &[(Option<&[f64]>, Option<usize>, usize)]) -> Result<Tensor> {
        let (d, a, n) = (self.obs_dim(), self.action_count(), self.n_agents());
        let width = d + a + 1 + n;
        let mut data = vec![0.0; rows.len() * width];
        for (r, (obs, prev, agent)) in rows.iter().enumerate() {
            let row = &mut data[r * width..(r + 1) * width];
            if let Some(o) = obs {
                row[..d].copy_from_slice(o);
            }
            if let Some(p) = prev {
                row[d + p] = 1.0;
            }
            row[d + a + 1 + agent] = 1.0;
        }
        Tensor::new(vec![rows.len(), width], data)
    }

    /// Rolls out one episode. Deciding slots pick epsilon-greedily under
    /// their masks; every other slot takes its forced action.
    pub fn collect_episode(&mut self, epsilon: f64, seed: u64) -> Result<Episode> {
        let n = self.n_agents();
        let a = self.action_count();
        let hd = self.spec.train.agent_hidden;
        let ext = self.spec.use_extended_state;
        let mut cur: SlotStep = self.env.reset(seed);
        let mut h = Tensor::zeros(&[n, hd]);
        let mut prev: Vec<Option<usize>> = vec![None; n];
        let mut ep = Episode {
            n_agents: n,
            action_count: a,
            obs: Vec::new(),
            states: Vec::new(),
            phases: Vec::new(),
            allowed: Vec::new(),
            running: Vec::new(),
            decision_steps: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: false,
            recorded_q: Vec::new(),
        };
        loop {
            ep.obs.push(cur.slots[..n].iter().map(|s| s.obs.clone()).collect());
            ep.states.push(cur.state.mixer_input(ext));
            ep.phases.push(cur.slots.iter().map(|s| s.phase).collect());
            ep.allowed.push(cur.slots[..n].iter().map(|s| s.allowed.clone()).collect());
            ep.running.push(cur.state.decision_actions.clone());
            ep.decision_steps.push(cur.state.decision_steps.clone());

            let rows: Vec<_> = (0..n).map(|i| (Some(cur.slots[i].obs.as_slice()), prev[i], i)).collect();
            let mut g = Graph::new();
            let x = g.constant(self.input_rows(&rows)?);
            let hv = g.constant(h);
            let (q, h2) = self.agent.step(&mut g, &self.online, x, hv)?;
            let qv = g.value(q);
            ep.recorded_q.push((0..n).map(|i| qv.row(i).to_vec()).collect());
            h = g.value(h2).clone();
            if cur.done() {
                break;
            }

            let mut decisions = vec![None; n];
            for i in 0..n {
                let slot = &cur.slots[i];
                if slot.phase != SlotPhase::Deciding {
                    continue;
                }
                let choices: Vec<usize> = (0..=a).filter(|&k| slot.allowed[k]).collect();
                if choices.is_empty() {
                    return Err(Error::contract(format!("agent {i} is deciding with no allowed action")));
                }
                let explore = epsilon > 0.0 && self.explore_rng.gen::<f64>() < epsilon;
                decisions[i] = Some(if explore {
                    choices[self.explore_rng.gen_range(0..choices.len())]
                } else {
                    argmax_allowed(&ep.recorded_q.last().unwrap()[i], &slot.allowed).expect("non-empty")
                });
            }
            let action = self.env.complete(&decisions)?;
            let slots = action.slots();
            for i in 0..n {
                prev[i] = Some(slots[i]);
            }
            ep.actions.push(slots);
            cur = self.env.step(&action)?;
            ep.rewards.push(cur.reward);
        }
        ep.terminated = cur.terminated;
        Ok(ep)
    }

    /// Recurrent unroll over a padded batch. The result is
    /// `[(T + 1) * B * n, A + 1]` with row `(t * B + b) * n + i`.
    pub fn unroll(&self, g: &mut Graph, params: &ParamSet, batch: &EpisodeBatch) -> Result<Var> {
        let n = self.n_agents();
        let b_count = batch.size();
        let mut h = g.constant(Tensor::zeros(&[b_count * n, self.spec.train.agent_hidden]));
        let mut outs = Vec::with_capacity(batch.max_len + 1);
        for t in 0..=batch.max_len {
            let mut rows = Vec::with_capacity(b_count * n);
            for ep in &batch.episodes {
                for i in 0..n {
                    if t <= ep.len() {
                        let prev = (t > 0).then(|| ep.actions[t - 1][i]);
                        rows.push((Some(ep.obs[t][i].as_slice()), prev, i));
                    } else {
                        rows.push((None, None, i));
                    }
                }
            }
            let x = g.constant(self.input_rows(&rows)?);
            let (q, h2) = self.agent.step(g, params, x, h)?;
            outs.push(q);
            h = h2;
        }
        g.concat_rows(&outs)
    }

    fn flat_index(&self, batch: &EpisodeBatch, t: usize, b: usize, agent: usize, action: usize) -> usize {
        let n = self.n_agents();
        ((t * batch.size() + b) * n + agent) * (self.action_count() + 1) + action
    }

    /// Gather indices, layout and states for the mixer at step `t + shift`
    /// of every row `t * B + b`, `t < max_len`. With `greedy` the real-slot
    /// actions are argmaxes of `q_values` under the step's masks instead of
    /// the stored actions.
    fn mixer_rows(
        &self,
        batch: &EpisodeBatch,
        shift: usize,
        greedy: Option<&[f64]>,
        state_dim: usize,
    ) -> Result<(Vec<Option<usize>>, SlotLayout, Tensor)> {
        let n = self.n_agents();
        let a1 = self.action_count() + 1;
        let b_count = batch.size();
        let rows = batch.max_len * b_count;
        let mut index = Vec::with_capacity(rows * 2 * n);
        let mut phases = Vec::with_capacity(rows * 2 * n);
        let mut states = vec![0.0; rows * state_dim];
        for t in 0..batch.max_len {
            for (b, ep) in batch.episodes.iter().enumerate() {
                let r = t * b_count + b;
                let step = t + shift;
                if t >= ep.len() {
                    index.extend(std::iter::repeat_n(None, 2 * n));
                    phases.extend(std::iter::repeat_n(SlotPhase::Masked, 2 * n));
                    continue;
                }
                states[r * state_dim..(r + 1) * state_dim].copy_from_slice(&ep.states[step]);
                for k in 0..2 * n {
                    let phase = ep.phases[step][k];
                    phases.push(phase);
                    if phase == SlotPhase::Masked {
                        index.push(None);
                        continue;
                    }
                    let idx = if k < n {
                        let act = match greedy {
                            None => ep.actions[step][k],
                            Some(q) => {
                                let base = self.flat_index(batch, step, b, k, 0);
                                argmax_allowed(&q[base..base + a1], &ep.allowed[step][k])
                                    .ok_or_else(|| Error::contract("unmasked slot with no allowed action"))?
                            }
                        };
                        self.flat_index(batch, step, b, k, act)
                    } else {
                        let c = k - n;
                        let (td, act) = ep.decision_steps[step][c]
                            .zip(ep.running[step][c])
                            .ok_or_else(|| Error::contract(format!("active proxy {k} without a recorded decision")))?;
                        self.flat_index(batch, td, b, c, act)
                    };
                    index.push(Some(idx));
                }
            }
        }
        let layout = SlotLayout::new(n, phases)?;
        Ok((index, layout, Tensor::new(vec![rows, state_dim], states)?))
    }

    fn state_dim(&self) -> usize {
        if self.spec.use_extended_state {
            self.env.extended_state_dim()
        } else {
            self.spec.env.spec().state_dim
        }
    }

    fn proxy_values(g: &Graph, utilities: Var, layout: &SlotLayout) -> Vec<f64> {
        let n = layout.n_agents;
        let v = g.value(utilities).data();
        (0..layout.rows)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .filter(|&(r, c)| layout.proxy_active(r, c))
            .map(|(r, c)| v[r * 2 * n + n + c])
            .collect()
    }

    /// Builds the loss of one batch. Returns the graph, the loss node, the
    /// smallest shifted proxy utility and the TD targets. Updates the tracker
    /// first.
    fn loss_graph(&mut self, batch: &EpisodeBatch) -> Result<(Graph, Var, Option<f64>, Vec<f64>)> {
        let n = self.n_agents();
        let b_count = batch.size();
        let rows = batch.max_len * b_count;
        let gamma = self.spec.train.gamma;
        let sd = self.state_dim();
        let mut g = Graph::new();
        let q_online = self.unroll(&mut g, &self.online, batch)?;
        let q_target = self.unroll(&mut g, &self.target, batch)?;

        let (idx, layout, states) = self.mixer_rows(batch, 0, None, sd)?;
        let utilities = g.gather(q_online, idx, vec![rows, 2 * n])?;
        let tq = g.value(q_target).data().to_vec();
        let (nidx, nlayout, nstates) = self.mixer_rows(batch, 1, Some(&tq), sd)?;
        let next_utilities = g.gather(q_target, nidx, vec![rows, 2 * n])?;

        let online_proxies = Self::proxy_values(&g, utilities, &layout);
        let target_proxies = Self::proxy_values(&g, next_utilities, &nlayout);
        let offset = self.tracker.update(online_proxies.iter().chain(&target_proxies).copied());
        let min_shifted = online_proxies
            .iter()
            .chain(&target_proxies)
            .map(|v| v + offset)
            .reduce(f64::min);

        let state = g.constant(states);
        let input = MixerInput { utilities, state, layout };
        let q_tot = self.mixer.forward(&mut g, &self.online, &input, offset)?;
        let nstate = g.constant(nstates);
        let next = MixerInput {
            utilities: next_utilities,
            state: nstate,
            layout: nlayout,
        };
        let q_next = self.mixer.forward(&mut g, &self.target, &next, offset)?;

        let fill = batch.fill_mask();
        let qn = g.value(q_next).data();
        let mut y = vec![0.0; rows];
        for t in 0..batch.max_len {
            for (b, ep) in batch.episodes.iter().enumerate() {
                if t >= ep.len() {
                    continue;
                }
                let r = t * b_count + b;
                let done = ep.terminated && t + 1 == ep.len();
                y[r] = ep.rewards[t] + if done { 0.0 } else { gamma * qn[r] };
            }
        }
        let count: f64 = fill.iter().sum();
        let targets = y.clone();
        let y = g.constant(Tensor::new(vec![rows, 1], y)?);
        let fill = g.constant(Tensor::new(vec![rows, 1], fill)?);
        let td = g.sub(q_tot, y)?;
        let sq = g.square(td)?;
        let masked = g.mul(sq, fill)?;
        let total = g.sum(masked);
        let loss = g.scale(total, 1.0 / count.max(1.0));
        Ok((g, loss, min_shifted, targets))
    }

    /// TD targets of every row `t * B + b`; zero on fill rows.
    pub fn td_targets(&mut self, batch: &EpisodeBatch) -> Result<Vec<f64>> {
        Ok(self.loss_graph(batch)?.3)
    }

    /// Masked mean-squared TD error of `batch`, without updating anything
    /// except the tracker.
    pub fn batch_loss(&mut self, batch: &EpisodeBatch) -> Result<f64> {
        let (g, loss, _, _) = self.loss_graph(batch)?;
        Ok(g.value(loss).item())
    }

    pub fn train_step(&mut self, batch: &EpisodeBatch) -> Result<TrainStats> {
        let (g, loss, min_shifted, _) = self.loss_graph(batch)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            let lens: Vec<usize> = batch.episodes.iter().map(Episode::len).collect();
            return Err(Error::NonFinite(format!(
                "loss {value} at update {} (episode lengths {lens:?}, offset {})",
                self.updates,
                self.tracker.offset()
            )));
        }
        let grads = g.backward(loss)?;
        self.online.zero_grad();
        grads.accumulate_into(&mut self.online);
        let grad_norm = self.online.clip_grad_norm(self.spec.train.grad_clip);
        self.optimizer.step(&mut self.online)?;
        self.online.zero_grad();
        self.updates += 1;
        let offset = self.tracker.offset();
        self.offset_trace.push(offset);
        if let Some(m) = min_shifted {
            self.shifted_trace.push(m);
        }
        Ok(TrainStats {
            loss: value,
            grad_norm,
            q_min_offset: offset,
            min_shifted_proxy: min_shifted,
        })
    }

    /// Hard copy of the online parameters into the target set.
    pub fn sync_targets(&mut self) -> Result<()> {
        self.target.copy_from(&self.online)?;
        self.syncs += 1;
        Ok(())
    }

    /// Greedy rollouts from the test seed stream.
    pub fn evaluate(&mut self, episodes: usize) -> Result<Evaluation> {
        let mut returns = Vec::with_capacity(episodes);
        let mut successes = 0;
        for _ in 0..episodes {
            let seed = self.test_rng.gen();
            let ep = self.collect_episode(0.0, seed)?;
            returns.push(ep.total_reward());
            if self.env.env().success() {
                successes += 1;
            }
        }
        let k = episodes.max(1) as f64;
        let mean = returns.iter().sum::<f64>() / k;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k;
        Ok(Evaluation {
            returns,
            mean,
            std: var.sqrt(),
            success_rate: successes as f64 / k,
        })
    }

    fn metrics_row(&mut self, losses: &mut Vec<f64>) -> Result<MetricsRow> {
        let eval = self.evaluate(self.spec.train.test_episodes)?;
        let loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        losses.clear();
        Ok(MetricsRow {
            step: self.t_env,
            episodes: self.episodes,
            loss,
            epsilon: epsilon_at(self.t_env, &self.spec.train),
            test_mean_return: eval.mean,
            test_return_std: eval.std,
            q_min_offset: self.tracker.offset(),
        })
    }

    /// Collects, stores and (once the buffer holds a batch) trains on one
    /// episode; syncs targets on schedule. Returns the update statistics.
    pub fn train_episode(&mut self) -> Result<Option<TrainStats>> {
        let eps = epsilon_at(self.t_env, &self.spec.train);
        let seed = self.seed_rng.gen();
        let ep = self.collect_episode(eps, seed)?;
        self.t_env += ep.len() as u64;
        self.buffer.push(ep);
        self.episodes += 1;
        let mut stats = None;
        if self.buffer.len() >= self.spec.train.batch_size {
            let batch = self.buffer.sample(self.spec.train.batch_size, &mut self.sample_rng)?;
            stats = Some(self.train_step(&batch)?);
        }
        if self.episodes % self.spec.train.target_update_interval == 0 {
            self.sync_targets()?;
        }
        Ok(stats)
    }

    /// Trains to `total_timesteps`, evaluating at the start, every
    /// `test_interval` steps and once at the end.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricsRow) -> Result<()>) -> Result<Vec<MetricsRow>> {
        let cfg = self.spec.train.clone();
        let mut rows = Vec::new();
        let mut losses = Vec::new();
        let row = self.metrics_row(&mut losses)?;
        on_row(&row)?;
        rows.push(row);
        let mut next_test = cfg.test_interval;
        while self.t_env < cfg.total_timesteps {
            if let Some(s) = self.train_episode()? {
                losses.push(s.loss);
            }
            if self.t_env >= next_test && self.t_env < cfg.total_timesteps {
                let row = self.metrics_row(&mut losses)?;
                on_row(&row)?;
                rows.push(row);
                while next_test <= self.t_env {
                    next_test += cfg.test_interval;
                }
            }
        }
        let row = self.metrics_row(&mut losses)?;
        on_row(&row)?;
        rows.push(row);
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::AsyncMatrixGame;

    #[test]
    fn epsilon_schedule() {
        let c = TrainConfig::default();
        assert_eq!(epsilon_at(0, &c), 1.0);
        assert!((epsilon_at(25_000, &c) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon_at(50_000, &c), 0.05);
        assert_eq!(epsilon_at(90_000, &c), 0.05);
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { gamma: 1.0, ..Default::default() },
            TrainConfig { eps_finish: 0.5, eps_start: 0.2, ..Default::default() },
            TrainConfig { batch_size: 10, buffer_size: 5, ..Default::default() },
            TrainConfig { workers: 2, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config { .. })));
        }
    }

    fn matrix_learner() -> Learner {
        Learner::new(LearnerSpec {
            env: AnyEnv::Matrix(AsyncMatrixGame::default()),
            mode: WrapperMode::Vsp,
            use_extended_state: false,
            mixer: MixerConfig::default(),
            train: TrainConfig {
                batch_size: 4,
                agent_hidden: 8,
                ..Default::default()
            },
        })
        .unwrap()
    }

    #[test]
    fn target_sync_makes_outputs_identical() {
        let mut l = matrix_learner();
        for _ in 0..4 {
            l.train_episode().unwrap();
        }
        let batch = l.buffer.sample(4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut g = Graph::new();
        let a = l.unroll(&mut g, &l.online, &batch).unwrap();
        let b = l.unroll(&mut g, &l.target, &batch).unwrap();
        assert_ne!(g.value(a), g.value(b));
        l.sync_targets().unwrap();
        let mut g = Graph::new();
        let a = l.unroll(&mut g, &l.online, &batch).unwrap();
        let b = l.unroll(&mut g, &l.target, &batch).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn stored_episodes_respect_masks() {
        let mut l = matrix_learner();
        for s in 0..10 {
            let ep = l.collect_episode(1.0, s).unwrap();
            ep.validate().unwrap();
            assert_eq!(ep.len(), 2);
        }
    }
}
