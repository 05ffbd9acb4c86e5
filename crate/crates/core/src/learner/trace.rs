use std::io::Write;

use super::{Episode, Learner};
use crate::error::{Error, Result};
use crate::vsp::SlotPhase;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSlot {
    pub slot_id: usize,
    pub phase: SlotPhase,
    /// Utility of the slot's action; `None` when masked.
    pub q_value: Option<f64>,
    /// For a deciding real slot, `|f_{d c}|` towards each active proxy `c`.
    pub pair_weights: Vec<Option<f64>>,
}

/// Credit assignment at one step of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub slots: Vec<TraceSlot>,
}

/// One record per step of `episode`, using the utilities recorded while
/// acting and the learner's current mixer weights.
pub fn dump_credit_trace(learner: &Learner, episode: &Episode) -> Result<Vec<TraceRecord>> {
    let n = episode.n_agents;
    let len = episode.len();
    let weights = learner.mixer.pair_weights(&learner.online, &episode.states[..len])?;
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let phases = &episode.phases[t];
        let mut slots = Vec::with_capacity(2 * n);
        for (k, &phase) in phases.iter().enumerate() {
            let q_value = match phase {
                SlotPhase::Masked => None,
                _ if k < n => Some(episode.recorded_q[t][k][episode.actions[t][k]]),
                _ => {
                    let c = k - n;
                    let (td, a) = episode.decision_steps[t][c]
                        .zip(episode.running[t][c])
                        .ok_or_else(|| Error::contract("active proxy without a recorded decision"))?;
                    Some(episode.recorded_q[td][c][a])
                }
            };
            let pair_weights = (0..n)
                .map(|c| {
                    let w = weights.as_ref()?;
                    let live = k < n && phase == SlotPhase::Deciding && phases[n + c] != SlotPhase::Masked;
                    live.then(|| w[t][k][c])
                })
                .collect();
            slots.push(TraceSlot {
                slot_id: k,
                phase,
                q_value,
                pair_weights,
            });
        }
        out.push(TraceRecord { step: t, slots });
    }
    Ok(out)
}

/// Long-format CSV, one row per (step, slot). Writes the header when
/// `header` is set.
pub fn write_trace_csv(
    out: &mut impl Write,
    records: &[TraceRecord],
    episode: usize,
    n_agents: usize,
    header: bool,
) -> std::io::Result<()> {
    if header {
        write!(out, "step,slot_id,phase,q_value")?;
        for c in 0..n_agents {
            write!(out, ",pair_w_{c}")?;
        }
        writeln!(out, ",episode")?;
    }
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        for s in &r.slots {
            write!(out, "{},{},{},{}", r.step, s.slot_id, s.phase.as_str(), cell(s.q_value))?;
            for &w in &s.pair_weights {
                write!(out, ",{}", cell(w))?;
            }
            writeln!(out, ",{episode}")?;
        }
    }
    Ok(())
}
