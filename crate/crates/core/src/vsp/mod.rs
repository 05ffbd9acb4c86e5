//! Slot view of an asynchronous environment.
//!
//! Every step exposes `2n` slots: `n` real agents followed by `n` proxies,
//! proxy `n + i` paired with real agent `i`. Under [`WrapperMode::Vsp`] an
//! agent that is mid-action takes the BLANK action while its proxy replays
//! the running action with the observation the agent held when it committed
//! to it. The padding, discarding and pass-through modes reuse the same slot
//! layout with every proxy masked.

mod discard;
mod source;

pub use discard::{collect_discarding, MacroTransition};
pub use source::VspSource;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::{Env, StepResult};
use crate::error::{Error, Result};

/// Reserved action id for "no new decision"; one past the env's last action.
pub fn blank(action_count: usize) -> usize {
    action_count
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WrapperMode {
    Vsp,
    PadBlank,
    PadRecent,
    Discard,
    None,
}

impl WrapperMode {
    pub const ALL: [WrapperMode; 5] = [
        WrapperMode::Vsp,
        WrapperMode::PadBlank,
        WrapperMode::PadRecent,
        WrapperMode::Discard,
        WrapperMode::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WrapperMode::Vsp => "vsp",
            WrapperMode::PadBlank => "pad_blank",
            WrapperMode::PadRecent => "pad_recent",
            WrapperMode::Discard => "discard",
            WrapperMode::None => "none",
        }
    }
}

impl fmt::Display for WrapperMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WrapperMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WrapperMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config("wrapper.mode", format!("unknown mode `{s}` (vsp, pad_blank, pad_recent, discard, none)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Real,
    Proxy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotPhase {
    Deciding,
    Executing,
    Masked,
}

impl SlotPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotPhase::Deciding => "deciding",
            SlotPhase::Executing => "executing",
            SlotPhase::Masked => "masked",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentSlot {
    pub slot_id: usize,
    pub kind: SlotKind,
    pub phase: SlotPhase,
    /// Real agent a proxy stands in for; `None` on real slots.
    pub paired_real: Option<usize>,
    /// Input of the shared agent network for this slot.
    pub obs: Vec<f64>,
    /// Allowed actions over `0..=BLANK`; all false for masked slots.
    pub allowed: Vec<bool>,
}

impl AgentSlot {
    /// The single permitted action, if the mask leaves exactly one.
    pub fn forced_action(&self) -> Option<usize> {
        let mut it = self.allowed.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i);
        match (it.next(), it.next()) {
            (Some(a), None) => Some(a),
            _ => None,
        }
    }

    pub fn is_masked(&self) -> bool {
        self.phase == SlotPhase::Masked
    }

    /// The real agent whose network evaluates this slot.
    pub fn agent(&self, n: usize) -> usize {
        self.paired_real.unwrap_or(self.slot_id % n)
    }
}

/// `s` plus, for every executing agent, its decision-time observation and
/// running action.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedState {
    pub base_state: Vec<f64>,
    /// `n * obs_dim` entries; rows of deciding agents are zero.
    pub decision_obs: Vec<f64>,
    pub decision_actions: Vec<Option<usize>>,
    /// Step at which each running action was chosen.
    pub decision_steps: Vec<Option<usize>>,
}

impl ExtendedState {
    /// The `[s ; o_c]` vector.
    pub fn vector(&self) -> Vec<f64> {
        let mut v = self.base_state.clone();
        v.extend_from_slice(&self.decision_obs);
        v
    }

    pub fn len(&self) -> usize {
        self.base_state.len() + self.decision_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// State fed to mixers, `s` by default or `[s ; o_c]` when extended.
    pub fn mixer_input(&self, extended: bool) -> Vec<f64> {
        if extended {
            self.vector()
        } else {
            self.base_state.clone()
        }
    }
}

/// One action per slot, BLANK for masked slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtendedJointAction {
    pub real_actions: Vec<usize>,
    pub proxy_actions: Vec<usize>,
}

impl ExtendedJointAction {
    pub fn from_slots(actions: &[usize]) -> Self {
        let n = actions.len() / 2;
        ExtendedJointAction {
            real_actions: actions[..n].to_vec(),
            proxy_actions: actions[n..].to_vec(),
        }
    }

    pub fn slots(&self) -> Vec<usize> {
        let mut v = self.real_actions.clone();
        v.extend_from_slice(&self.proxy_actions);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotStep {
    pub t: usize,
    pub state: ExtendedState,
    pub slots: Vec<AgentSlot>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl SlotStep {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }

    pub fn n_agents(&self) -> usize {
        self.slots.len() / 2
    }

    pub fn action_mask(&self) -> Vec<Vec<bool>> {
        self.slots.iter().map(|s| s.allowed.clone()).collect()
    }

    pub fn unmasked_proxies(&self) -> Vec<usize> {
        let n = self.n_agents();
        (n..2 * n).filter(|&k| !self.slots[k].is_masked()).collect()
    }
}

/// Deliberate wrapper bugs for testing the verification suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Proxies get the wrong forced action and the current observation.
    ProxyDecouple,
}

#[derive(Clone, Debug)]
pub struct SlotEnv<E: Env> {
    env: E,
    mode: WrapperMode,
    fault: Option<Fault>,
    raw: StepResult,
    current: SlotStep,
    decision_obs: Vec<Option<Vec<f64>>>,
    decision_steps: Vec<Option<usize>>,
    t: usize,
}

impl<E: Env> SlotEnv<E> {
    pub fn new(env: E, mode: WrapperMode) -> Self {
        let n = env.spec().n_agents;
        let raw = env.observe();
        let mut w = SlotEnv {
            env,
            mode,
            fault: None,
            current: SlotStep {
                t: 0,
                state: ExtendedState {
                    base_state: Vec::new(),
                    decision_obs: Vec::new(),
                    decision_actions: vec![None; n],
                    decision_steps: vec![None; n],
                },
                slots: Vec::new(),
                reward: 0.0,
                terminated: false,
                truncated: false,
            },
            raw,
            decision_obs: vec![None; n],
            decision_steps: vec![None; n],
            t: 0,
        };
        w.current = w.build(0.0, false);
        w
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self.current = self.build(self.current.reward, self.current.truncated);
        self
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn mode(&self) -> WrapperMode {
        self.mode
    }

    pub fn current(&self) -> &SlotStep {
        &self.current
    }

    pub fn raw(&self) -> &StepResult {
        &self.raw
    }

    pub fn n_agents(&self) -> usize {
        self.env.spec().n_agents
    }

    pub fn action_count(&self) -> usize {
        self.env.spec().action_count
    }

    /// Length of `[s ; o_c]`.
    pub fn extended_state_dim(&self) -> usize {
        self.env.spec().state_dim + self.n_agents() * self.env.spec().obs_dim
    }

    pub fn action_mask(&self) -> Vec<Vec<bool>> {
        self.current.action_mask()
    }

    pub fn reset(&mut self, seed: u64) -> SlotStep {
        self.raw = self.env.reset(seed);
        let n = self.n_agents();
        self.decision_obs = vec![None; n];
        self.decision_steps = vec![None; n];
        self.t = 0;
        self.current = self.build(0.0, false);
        self.current.clone()
    }

    fn build(&self, reward: f64, truncated: bool) -> SlotStep {
        let n = self.n_agents();
        let a = self.action_count();
        let obs_dim = self.env.spec().obs_dim;
        let blank = blank(a);
        let raw = &self.raw;
        let terminated = raw.terminated;
        let mut slots = Vec::with_capacity(2 * n);
        let mut decision_obs = vec![0.0; n * obs_dim];
        let mut decision_actions = vec![None; n];
        let mut decision_steps = vec![None; n];

        let only = |k: usize| {
            let mut m = vec![false; a + 1];
            m[k] = true;
            m
        };
        let available = |i: usize| {
            let mut m = raw.available_actions[i].clone();
            m.push(false);
            m
        };

        for i in 0..n {
            let running = if terminated { None } else { self.env.running_action(i) };
            if let Some(r) = running {
                decision_actions[i] = Some(r);
                decision_steps[i] = self.decision_steps[i];
                if let Some(o) = &self.decision_obs[i] {
                    decision_obs[i * obs_dim..(i + 1) * obs_dim].copy_from_slice(o);
                }
            }
            let (phase, allowed) = if terminated {
                (SlotPhase::Masked, vec![false; a + 1])
            } else if self.mode == WrapperMode::None {
                (SlotPhase::Deciding, available(i))
            } else {
                match running {
                    None => (SlotPhase::Deciding, available(i)),
                    Some(r) => match self.mode {
                        WrapperMode::Vsp | WrapperMode::PadBlank => (SlotPhase::Executing, only(blank)),
                        WrapperMode::PadRecent => (SlotPhase::Executing, only(r)),
                        _ => (SlotPhase::Masked, vec![false; a + 1]),
                    },
                }
            };
            slots.push(AgentSlot {
                slot_id: i,
                kind: SlotKind::Real,
                phase,
                paired_real: None,
                obs: raw.observations[i].clone(),
                allowed,
            });
        }
        for i in 0..n {
            let mut slot = AgentSlot {
                slot_id: n + i,
                kind: SlotKind::Proxy,
                phase: SlotPhase::Masked,
                paired_real: Some(i),
                obs: vec![0.0; obs_dim],
                allowed: vec![false; a + 1],
            };
            if let (WrapperMode::Vsp, Some(r)) = (self.mode, decision_actions[i]) {
                slot.phase = SlotPhase::Executing;
                match self.fault {
                    None => {
                        slot.obs = decision_obs[i * obs_dim..(i + 1) * obs_dim].to_vec();
                        slot.allowed = only(r);
                    }
                    Some(Fault::ProxyDecouple) => {
                        slot.obs = raw.observations[i].clone();
                        slot.allowed = only((r + 1) % a);
                    }
                }
            }
            slots.push(slot);
        }
        SlotStep {
            t: self.t,
            state: ExtendedState {
                base_state: raw.state.clone(),
                decision_obs,
                decision_actions,
                decision_steps,
            },
            slots,
            reward,
            terminated,
            truncated,
        }
    }

    /// Steps with one action per slot. Every action must be allowed by the
    /// current mask; masked slots must carry BLANK.
    pub fn step(&mut self, action: &ExtendedJointAction) -> Result<SlotStep> {
        let n = self.n_agents();
        let blank = blank(self.action_count());
        if self.current.done() {
            return Err(Error::contract("step after episode end"));
        }
        let flat = action.slots();
        if flat.len() != 2 * n {
            return Err(Error::contract(format!("{} slot actions for {} slots", flat.len(), 2 * n)));
        }
        for (slot, &a) in self.current.slots.iter().zip(&flat) {
            let ok = if slot.is_masked() {
                a == blank
            } else {
                slot.allowed.get(a).copied().unwrap_or(false)
            };
            if !ok {
                return Err(Error::contract(format!(
                    "slot {} ({:?}, {}) cannot take action {a}",
                    slot.slot_id,
                    slot.kind,
                    slot.phase.as_str()
                )));
            }
        }
        let base: Vec<usize> = (0..n)
            .map(|i| if self.raw.decision_mask[i] { flat[i] } else { blank })
            .collect();
        let before = self.raw.observations.clone();
        let deciding = self.raw.decision_mask.clone();
        self.raw = self.env.step(&base)?;
        for i in 0..n {
            if deciding[i] {
                self.decision_obs[i] = Some(before[i].clone());
                self.decision_steps[i] = Some(self.t);
            }
            if self.env.running_action(i).is_none() {
                self.decision_obs[i] = None;
                self.decision_steps[i] = None;
            }
        }
        self.t += 1;
        self.current = self.build(self.raw.reward, self.raw.truncated);
        Ok(self.current.clone())
    }

    /// Steps with choices for deciding real slots only: `decisions[i]` must
    /// be `Some` exactly when real slot `i` is deciding. Executing slots and
    /// proxies take their forced actions.
    pub fn wrap_step(&mut self, decisions: &[Option<usize>]) -> Result<SlotStep> {
        let action = self.complete(decisions)?;
        self.step(&action)
    }

    /// Fills in forced actions around the decisions of deciding slots.
    pub fn complete(&self, decisions: &[Option<usize>]) -> Result<ExtendedJointAction> {
        let n = self.n_agents();
        let blank = blank(self.action_count());
        if decisions.len() != n {
            return Err(Error::contract(format!("{} decisions for {n} agents", decisions.len())));
        }
        let mut flat = Vec::with_capacity(2 * n);
        for (k, slot) in self.current.slots.iter().enumerate() {
            let supplied = if k < n { decisions[k] } else { None };
            let a = match (slot.phase, supplied) {
                (SlotPhase::Deciding, Some(a)) => a,
                (SlotPhase::Deciding, None) => {
                    return Err(Error::contract(format!("slot {k} is deciding but got no decision")))
                }
                (_, Some(a)) => {
                    return Err(Error::contract(format!(
                        "decision {a} supplied for non-deciding slot {k}"
                    )))
                }
                (SlotPhase::Masked, None) => blank,
                (SlotPhase::Executing, None) => slot.forced_action().expect("executing slots are forced"),
            };
            flat.push(a);
        }
        Ok(ExtendedJointAction::from_slots(&flat))
    }
}

/// Padding baseline: a [`SlotEnv`] whose executing agents repeat BLANK
/// (`recent == false`) or their running action, with every proxy masked.
pub fn wrap_padding<E: Env>(env: E, recent: bool) -> SlotEnv<E> {
    SlotEnv::new(env, if recent { WrapperMode::PadRecent } else { WrapperMode::PadBlank })
}

/// Checks the wrapper's proxy bookkeeping against the environment itself:
/// under VSP, proxy `n + i` is unmasked exactly while agent `i` runs an
/// action, is forced to that action, and sees the observation recorded at
/// the decision; under every other mode all proxies are masked.
pub fn check_pair_coherence<E: Env>(
    env: &E,
    step: &SlotStep,
    mode: WrapperMode,
    decision_obs: &[Option<Vec<f64>>],
) -> Result<()> {
    let n = env.spec().n_agents;
    for i in 0..n {
        let proxy = &step.slots[n + i];
        let running = if step.terminated { None } else { env.running_action(i) };
        let expect_active = mode == WrapperMode::Vsp && running.is_some();
        if proxy.is_masked() == expect_active {
            return Err(Error::contract(format!(
                "proxy {} masked={} while agent {i} running={running:?}",
                n + i,
                proxy.is_masked()
            )));
        }
        if step.state.decision_actions[i] != running {
            return Err(Error::contract(format!(
                "recorded running action of agent {i} is {:?}, env says {running:?}",
                step.state.decision_actions[i]
            )));
        }
        if expect_active {
            if proxy.forced_action() != running {
                return Err(Error::contract(format!(
                    "proxy {} forced to {:?} but agent {i} runs {running:?}",
                    n + i,
                    proxy.forced_action()
                )));
            }
            if let Some(o) = decision_obs.get(i).and_then(|o| o.as_ref()) {
                if &proxy.obs != o {
                    return Err(Error::contract(format!(
                        "proxy {} observation differs from agent {i}'s decision-time observation",
                        n + i
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{AsyncGridworld, AsyncMatrixGame, GridConfig};

    fn grid() -> AsyncGridworld {
        AsyncGridworld::new(GridConfig::small()).unwrap()
    }

    #[test]
    fn reset_has_no_active_proxy_and_fixed_layout() {
        for mode in WrapperMode::ALL {
            let mut w = SlotEnv::new(grid(), mode);
            let s = w.reset(2);
            assert!(s.unmasked_proxies().is_empty());
            assert_eq!(s.slots.len(), 6);
            assert_eq!(s.state.len(), 62 + 3 * 28);
            assert_eq!(s.state.vector()[..62], w.env().observe().state[..]);
            for slot in &s.slots[..3] {
                assert_eq!(slot.phase, SlotPhase::Deciding);
                assert!(!slot.allowed[5]);
            }
            for slot in &s.slots[3..] {
                assert!(slot.allowed.iter().all(|&a| !a));
            }
        }
    }

    #[test]
    fn matrix_proxy_replays_row_commitment() {
        let mut w = SlotEnv::new(AsyncMatrixGame::default(), WrapperMode::Vsp);
        let s0 = w.reset(0);
        let row_obs = s0.slots[0].obs.clone();
        let s1 = w.wrap_step(&[Some(1), Some(0)]).unwrap();
        assert_eq!(s1.unmasked_proxies(), vec![2]);
        assert_eq!(s1.slots[2].forced_action(), Some(1));
        assert_eq!(s1.slots[2].obs, row_obs);
        assert_eq!(s1.slots[0].forced_action(), Some(2));
        assert_eq!(s1.state.decision_steps[0], Some(0));
        assert_eq!(s1.state.decision_obs[..4], row_obs[..]);
        assert_eq!(s1.state.decision_obs[4..], [0.0; 4]);
        let s2 = w.wrap_step(&[None, Some(1)]).unwrap();
        assert_eq!(s2.reward, 4.0);
        assert!(s2.terminated);
    }

    #[test]
    fn decision_for_executing_slot_is_rejected() {
        let mut w = SlotEnv::new(AsyncMatrixGame::default(), WrapperMode::Vsp);
        w.reset(0);
        w.wrap_step(&[Some(0), Some(0)]).unwrap();
        assert!(matches!(w.wrap_step(&[Some(0), Some(1)]), Err(Error::Contract(_))));
        assert!(matches!(w.wrap_step(&[None, None]), Err(Error::Contract(_))));
        // Proxy ordered off its running action.
        let bad = ExtendedJointAction {
            real_actions: vec![2, 1],
            proxy_actions: vec![1, 2],
        };
        assert!(matches!(w.step(&bad), Err(Error::Contract(_))));
    }

    #[test]
    fn padding_modes() {
        let mut blank_w = wrap_padding(AsyncMatrixGame::default(), false);
        let mut recent_w = wrap_padding(AsyncMatrixGame::default(), true);
        blank_w.reset(0);
        recent_w.reset(0);
        let b = blank_w.wrap_step(&[Some(1), Some(0)]).unwrap();
        let r = recent_w.wrap_step(&[Some(1), Some(0)]).unwrap();
        assert_eq!(b.slots[0].forced_action(), Some(2));
        assert_eq!(r.slots[0].forced_action(), Some(1));
        assert!(b.unmasked_proxies().is_empty() && r.unmasked_proxies().is_empty());
    }

    #[test]
    fn three_step_move_activates_proxy_for_two_steps() {
        let mut w = SlotEnv::new(grid(), WrapperMode::Vsp);
        let s = w.reset(4);
        let a = (1..5).find(|&a| s.slots[2].allowed[a]).unwrap();
        let obs_t = s.slots[2].obs.clone();
        let mut last = w.wrap_step(&[Some(0), Some(0), Some(a)]).unwrap();
        for k in 0..2 {
            if last.terminated {
                return;
            }
            assert_eq!(last.unmasked_proxies(), vec![5], "step {k}");
            assert_eq!(last.slots[5].forced_action(), Some(a));
            assert_eq!(last.slots[5].obs, obs_t);
            assert_eq!(last.slots[2].phase, SlotPhase::Executing);
            let d: Vec<_> = last.slots[..3]
                .iter()
                .map(|s| (s.phase == SlotPhase::Deciding).then_some(0))
                .collect();
            last = w.wrap_step(&d).unwrap();
        }
        assert!(last.unmasked_proxies().is_empty() || last.terminated);
        assert_eq!(last.slots[2].phase, SlotPhase::Deciding);
    }

    #[test]
    fn fault_breaks_pair_coherence() {
        let mut w = SlotEnv::new(AsyncMatrixGame::default(), WrapperMode::Vsp).with_fault(Some(Fault::ProxyDecouple));
        w.reset(0);
        let s = w.wrap_step(&[Some(1), Some(0)]).unwrap();
        assert!(check_pair_coherence(w.env(), &s, WrapperMode::Vsp, &[]).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in WrapperMode::ALL {
            assert_eq!(m.as_str().parse::<WrapperMode>().unwrap(), m);
        }
        assert!(matches!("async".parse::<WrapperMode>(), Err(Error::Config { .. })));
    }
}
