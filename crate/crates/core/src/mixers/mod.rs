//! Value-decomposition mixers over the `2n` slot utilities.
//!
//! Slot `k < n` is real agent `k`; slot `n + i` is the proxy of agent `i`.
//! Utilities of masked slots are zero and every mixer multiplies by the slot
//! mask, so a masked entry never reaches the output.

mod igm;
mod monotonic;
mod practical;
mod qmin;
mod raw;

pub use igm::{check_igm, IgmProblem, IgmVerdict, IGM_BUDGET};
pub use monotonic::QmixMixer;
pub use practical::{interaction_terms, PracticalMvd};
pub use qmin::QminTracker;
pub use raw::{mix_additive, mix_mvd, mix_mvd_korder, KOrderParams, MvdParams};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamSet, Tensor, Var};
use crate::vsp::{AgentSlot, SlotPhase};

/// Phase of every slot for every batch row, row-major `[rows, 2n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotLayout {
    pub n_agents: usize,
    pub rows: usize,
    pub phases: Vec<SlotPhase>,
}

impl SlotLayout {
    pub fn new(n_agents: usize, phases: Vec<SlotPhase>) -> Result<Self> {
        if n_agents == 0 || phases.len() % (2 * n_agents) != 0 {
            return Err(Error::shape(format!(
                "{} slot phases for {n_agents} agents",
                phases.len()
            )));
        }
        Ok(SlotLayout {
            n_agents,
            rows: phases.len() / (2 * n_agents),
            phases,
        })
    }

    pub fn from_slots(n_agents: usize, rows: &[&[AgentSlot]]) -> Result<Self> {
        Self::new(n_agents, rows.iter().flat_map(|r| r.iter().map(|s| s.phase)).collect())
    }

    pub fn phase(&self, row: usize, slot: usize) -> SlotPhase {
        self.phases[row * 2 * self.n_agents + slot]
    }

    pub fn row(&self, row: usize) -> &[SlotPhase] {
        let w = 2 * self.n_agents;
        &self.phases[row * w..(row + 1) * w]
    }

    pub fn is_deciding(&self, row: usize, agent: usize) -> bool {
        self.phase(row, agent) == SlotPhase::Deciding
    }

    /// Proxy of `agent` stands in for a running action.
    pub fn proxy_active(&self, row: usize, agent: usize) -> bool {
        self.phase(row, self.n_agents + agent) != SlotPhase::Masked
    }

    fn mask(&self, f: impl Fn(usize, usize) -> bool, width: usize) -> Tensor {
        let data = (0..self.rows)
            .flat_map(|r| (0..width).map(move |k| (r, k)))
            .map(|(r, k)| if f(r, k) { 1.0 } else { 0.0 })
            .collect();
        Tensor::new(vec![self.rows, width], data).expect("mask shape")
    }

    /// `[rows, 2n]`, one for every unmasked slot.
    pub fn active_mask(&self) -> Tensor {
        self.mask(|r, k| self.phase(r, k) != SlotPhase::Masked, 2 * self.n_agents)
    }

    /// `[rows, n]`, one for deciding real slots.
    pub fn deciding_mask(&self) -> Tensor {
        self.mask(|r, i| self.is_deciding(r, i), self.n_agents)
    }

    /// This layout with every row repeated `times` times in place.
    pub fn repeat_rows(&self, times: usize) -> Self {
        let w = 2 * self.n_agents;
        let mut phases = Vec::with_capacity(self.phases.len() * times);
        for r in 0..self.rows {
            for _ in 0..times {
                phases.extend_from_slice(&self.phases[r * w..(r + 1) * w]);
            }
        }
        SlotLayout {
            n_agents: self.n_agents,
            rows: self.rows * times,
            phases,
        }
    }
}

/// Everything a mixer consumes for a batch of rows.
#[derive(Clone, Debug)]
pub struct MixerInput {
    /// `[rows, 2n]` chosen-action utilities, zero on masked slots.
    pub utilities: Var,
    /// `[rows, state_dim]`.
    pub state: Var,
    pub layout: SlotLayout,
}

impl MixerInput {
    pub fn check(&self, g: &Graph) -> Result<()> {
        let (r, w) = g.value(self.utilities).dims2();
        if w != 2 * self.layout.n_agents || r != self.layout.rows || g.value(self.state).dims2().0 != r {
            return Err(Error::shape(format!(
                "mixer input: utilities [{r}, {w}] for {} rows of {} agents",
                self.layout.rows, self.layout.n_agents
            )));
        }
        Ok(())
    }

    /// Utilities with masked slots forced to exactly zero.
    pub(crate) fn masked_utilities(&self, g: &mut Graph) -> Result<Var> {
        let m = g.constant(self.layout.active_mask());
        g.mul(self.utilities, m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerFamily {
    Additive,
    Monotonic,
    Mvd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    Direct,
    Softmax,
    Mlp,
}

macro_rules! named_enum {
    ($t:ty, $key:literal, $($v:path => $s:literal),+) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $($v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::config($key, format!("unknown value `{s}`"))),
                }
            }
        }
    };
}

named_enum!(MixerFamily, "mixer.family",
    MixerFamily::Additive => "additive",
    MixerFamily::Monotonic => "monotonic",
    MixerFamily::Mvd => "mvd");
named_enum!(HeadMode, "mixer.head_mode",
    HeadMode::Direct => "direct",
    HeadMode::Softmax => "softmax",
    HeadMode::Mlp => "mlp");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub family: MixerFamily,
    /// Interaction order `K` of the MVD family.
    pub order: usize,
    pub head_mode: HeadMode,
    /// Head count for the softmax and mlp modes (direct always uses one).
    pub heads: usize,
    pub hypernet_hidden: usize,
    /// Hidden width of the monotonic mixer.
    pub embed_dim: usize,
}

impl Default for MixerConfig {
    fn default() -> Self {
        MixerConfig {
            family: MixerFamily::Mvd,
            order: 2,
            head_mode: HeadMode::Mlp,
            heads: 4,
            hypernet_hidden: 64,
            embed_dim: 32,
        }
    }
}

impl MixerConfig {
    pub fn validate(&self, n_agents: usize) -> Result<()> {
        if self.family == MixerFamily::Mvd && !(1..=n_agents).contains(&self.order) {
            return Err(Error::config(
                "mixer.order",
                format!("order {} outside 1..={n_agents}", self.order),
            ));
        }
        if self.heads == 0 || self.hypernet_hidden == 0 || self.embed_dim == 0 {
            return Err(Error::config("mixer.heads", "sizes must be positive"));
        }
        Ok(())
    }
}

/// The mixer used by the learner.
#[derive(Clone, Debug)]
pub enum Mixer {
    /// Unweighted sum over unmasked slots.
    Additive,
    Monotonic(QmixMixer),
    Mvd(PracticalMvd),
}

impl Mixer {
    pub fn new(
        config: &MixerConfig,
        params: &mut ParamSet,
        n_agents: usize,
        state_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate(n_agents)?;
        Ok(match config.family {
            MixerFamily::Additive => Mixer::Additive,
            MixerFamily::Monotonic => Mixer::Monotonic(QmixMixer::new(
                params,
                "mixer",
                n_agents,
                state_dim,
                config.embed_dim,
                config.hypernet_hidden,
                rng,
            )),
            MixerFamily::Mvd => Mixer::Mvd(PracticalMvd::new(
                params,
                "mixer",
                n_agents,
                state_dim,
                config.order,
                config.head_mode,
                config.heads,
                config.hypernet_hidden,
                rng,
            )?),
        })
    }

    /// `[rows, 1]` global values. `q_min_offset` only affects the MVD family.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, input: &MixerInput, q_min_offset: f64) -> Result<Var> {
        input.check(g)?;
        match self {
            Mixer::Additive => {
                let q = input.masked_utilities(g)?;
                Ok(g.sum_rows(q))
            }
            Mixer::Monotonic(m) => m.forward(g, params, input),
            Mixer::Mvd(m) => m.forward(g, params, input, q_min_offset),
        }
    }

    /// Per state, the `n x n` matrix of `|f_{d c}|` (deciding `d`, proxy of
    /// `c`), averaged over heads. `None` for mixers without pair terms.
    pub fn pair_weights(&self, params: &ParamSet, states: &[Vec<f64>]) -> Result<Option<Vec<Vec<Vec<f64>>>>> {
        match self {
            Mixer::Mvd(m) if m.order >= 2 => m.pair_weights(params, states).map(Some),
            _ => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse() {
        assert_eq!("mvd".parse::<MixerFamily>().unwrap(), MixerFamily::Mvd);
        assert_eq!("softmax".parse::<HeadMode>().unwrap(), HeadMode::Softmax);
        assert!(matches!("qplex".parse::<MixerFamily>(), Err(Error::Config { .. })));
    }

    #[test]
    fn order_out_of_range_is_rejected() {
        let cfg = MixerConfig {
            order: 4,
            ..MixerConfig::default()
        };
        assert!(cfg.validate(3).is_err());
        assert!(MixerConfig::default().validate(2).is_ok());
    }

    #[test]
    fn layout_masks() {
        use SlotPhase::*;
        let l = SlotLayout::new(2, vec![Deciding, Executing, Masked, Executing]).unwrap();
        assert_eq!(l.active_mask().data(), &[1.0, 1.0, 0.0, 1.0]);
        assert_eq!(l.deciding_mask().data(), &[1.0, 0.0]);
        assert!(l.proxy_active(0, 1) && !l.proxy_active(0, 0));
        assert_eq!(l.repeat_rows(3).rows, 3);
    }
}
