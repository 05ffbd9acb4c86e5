//! Python bindings: configuration-driven training, evaluation, traces, the
//! verification suite and the raw mixers.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use async_credit::config::RunConfig;
use async_credit::learner::{dump_credit_trace, Learner};
use async_credit::mixers::{mix_additive, mix_mvd, MvdParams, QminTracker, SlotLayout};
use async_credit::oracle::{additive_fit, mvd_fit, PayoffTable};
use async_credit::run::{load_learner, save_learner};
use async_credit::tensor::{Graph, Tensor};
use async_credit::verify::{run_verify, MixerCase, VerifyOptions};
use async_credit::vsp::{Fault, SlotPhase};
use async_credit::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn phase(s: &str) -> PyResult<SlotPhase> {
    match s {
        "deciding" => Ok(SlotPhase::Deciding),
        "executing" => Ok(SlotPhase::Executing),
        "masked" => Ok(SlotPhase::Masked),
        _ => Err(PyValueError::new_err(format!("unknown slot phase `{s}`"))),
    }
}

/// One row of `2n` slots: agents first, then their proxies.
fn single_row(phases: &[String], utilities: Vec<f64>) -> PyResult<MixerCase> {
    let phases = phases.iter().map(|p| phase(p)).collect::<PyResult<Vec<_>>>()?;
    if phases.len() != utilities.len() || phases.len() % 2 != 0 {
        return Err(PyValueError::new_err("need one utility per slot and an even slot count"));
    }
    let n = phases.len() / 2;
    Ok(MixerCase {
        layout: SlotLayout::new(n, phases).map_err(err)?,
        utilities,
        states: vec![0.0],
        state_dim: 1,
    })
}

/// Additive mixer on one row: `k0 + sum_k k[k] Q_k` over unmasked slots.
#[pyfunction]
#[pyo3(signature = (phases, utilities, k0, k))]
fn additive(phases: Vec<String>, utilities: Vec<f64>, k0: f64, k: Vec<f64>) -> PyResult<f64> {
    let case = single_row(&phases, utilities)?;
    let mut g = Graph::new();
    let x = case.input(&mut g);
    let q = mix_additive(&mut g, &x, k0, &k).map_err(err)?;
    Ok(g.value(q).item())
}

/// Pairwise multiplicative mixer on one row. `pair[d][c]` weights deciding
/// agent `d` against the proxy of agent `c`.
#[pyfunction]
#[pyo3(signature = (phases, utilities, k0, k, pair))]
fn mvd(phases: Vec<String>, utilities: Vec<f64>, k0: f64, k: Vec<f64>, pair: Vec<Vec<f64>>) -> PyResult<f64> {
    let case = single_row(&phases, utilities)?;
    let mut g = Graph::new();
    let x = case.input(&mut g);
    let q = mix_mvd(&mut g, &x, &MvdParams { k0, k, pair }).map_err(err)?;
    Ok(g.value(q).item())
}

/// Residuals `(additive, multiplicative)` of the least-squares fits to a
/// 2x2 payoff table whose actions carry the given utilities.
#[pyfunction]
#[pyo3(signature = (values, action_values = vec![1.0, 2.0]))]
fn fit_residuals(values: Vec<Vec<f64>>, action_values: Vec<f64>) -> PyResult<(f64, f64)> {
    let t = PayoffTable::with_identity_utilities(values, action_values).map_err(err)?;
    Ok((additive_fit(&t).map_err(err)?.residual, mvd_fit(&t).map_err(err)?.residual))
}

/// Runs the self-check suite. Returns `(passed, [(name, passed, max_deviation, detail)])`.
#[pyfunction]
#[pyo3(signature = (seed = 0, inject_fault = None, instances = 20))]
fn verify(seed: u64, inject_fault: Option<&str>, instances: usize) -> PyResult<(bool, Vec<(String, bool, f64, String)>)> {
    let fault = match inject_fault {
        None => None,
        Some("proxy_decouple") => Some(Fault::ProxyDecouple),
        Some(f) => return Err(PyValueError::new_err(format!("unknown fault `{f}`"))),
    };
    let r = run_verify(&VerifyOptions {
        fault,
        seed,
        instances,
        ..Default::default()
    });
    Ok((
        r.passed,
        r.groups.into_iter().map(|g| (g.name, g.passed, g.max_deviation, g.detail)).collect(),
    ))
}

/// Running minimum of proxy utilities.
#[pyclass(name = "QminTracker")]
#[derive(Default)]
struct PyQminTracker(QminTracker);

#[pymethods]
impl PyQminTracker {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    fn update(&mut self, values: Vec<f64>) -> f64 {
        self.0.update(values)
    }

    #[getter]
    fn offset(&self) -> f64 {
        self.0.offset()
    }
}

/// A learner built from dotted config keys, e.g.
/// `Trainer({"env.name": "matrix", "train.seed": "1"})`.
#[pyclass(unsendable)]
struct Trainer {
    config: RunConfig,
    learner: Learner,
}

#[pymethods]
impl Trainer {
    #[new]
    #[pyo3(signature = (overrides = None, config_path = None))]
    fn new(overrides: Option<Vec<(String, String)>>, config_path: Option<PathBuf>) -> PyResult<Self> {
        let config = RunConfig::load(config_path.as_deref(), &overrides.unwrap_or_default()).map_err(err)?;
        let learner = Learner::new(config.learner_spec().map_err(err)?).map_err(err)?;
        Ok(Trainer { config, learner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (config, learner) = load_learner(&path).map_err(err)?;
        Ok(Trainer { config, learner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_learner(&path, &self.learner, &self.config).map_err(err)
    }

    /// Resolved configuration as a JSON string.
    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.config).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Collects one episode and trains if the buffer holds a batch. Returns
    /// the loss of the update, if one ran.
    fn train_episode(&mut self) -> PyResult<Option<f64>> {
        Ok(self.learner.train_episode().map_err(err)?.map(|s| s.loss))
    }

    /// Trains to `train.total_timesteps`; returns the metrics rows as CSV lines.
    fn run(&mut self) -> PyResult<Vec<String>> {
        let rows = self.learner.run(|_| Ok(())).map_err(err)?;
        Ok(rows.iter().map(|r| r.csv()).collect())
    }

    /// Greedy `(mean, std, success_rate)` over `episodes` rollouts.
    fn evaluate(&mut self, episodes: usize) -> PyResult<(f64, f64, f64)> {
        let e = self.learner.evaluate(episodes).map_err(err)?;
        Ok((e.mean, e.std, e.success_rate))
    }

    /// Greedy episode trace: `(step, slot_id, phase, q_value, pair_weights)` per slot.
    #[pyo3(signature = (seed = 0))]
    #[allow(clippy::type_complexity)]
    fn trace(&mut self, seed: u64) -> PyResult<Vec<(usize, usize, String, Option<f64>, Vec<Option<f64>>)>> {
        let ep = self.learner.collect_episode(0.0, seed).map_err(err)?;
        let recs = dump_credit_trace(&self.learner, &ep).map_err(err)?;
        Ok(recs
            .into_iter()
            .flat_map(|r| {
                r.slots
                    .into_iter()
                    .map(move |s| (r.step, s.slot_id, s.phase.as_str().to_string(), s.q_value, s.pair_weights))
            })
            .collect())
    }

    /// Agent utilities for one observation batch row-major `[n, obs]`, zero
    /// hidden state and no previous action.
    fn initial_utilities(&self, observations: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let n = self.learner.n_agents();
        if observations.len() != n {
            return Err(PyValueError::new_err(format!("expected {n} observations")));
        }
        let a = self.learner.action_count();
        let mut rows = Vec::with_capacity(n);
        for (i, o) in observations.iter().enumerate() {
            let mut row = o.clone();
            row.extend(std::iter::repeat_n(0.0, a + 1));
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            rows.push(row);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&rows).map_err(err)?);
        let h = g.constant(Tensor::zeros(&[n, self.learner.spec.train.agent_hidden]));
        let (q, _) = self.learner.agent.step(&mut g, &self.learner.online, x, h).map_err(err)?;
        let q = g.value(q);
        Ok((0..n).map(|i| q.row(i).to_vec()).collect())
    }

    #[getter]
    fn t_env(&self) -> u64 {
        self.learner.t_env
    }

    #[getter]
    fn episodes(&self) -> u64 {
        self.learner.episodes
    }

    #[getter]
    fn q_min_offset(&self) -> f64 {
        self.learner.tracker.offset()
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.learner.n_agents()
    }
}

#[pymodule]
fn async_credit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(additive, m)?)?;
    m.add_function(wrap_pyfunction!(mvd, m)?)?;
    m.add_function(wrap_pyfunction!(fit_residuals, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_class::<PyQminTracker>()?;
    m.add_class::<Trainer>()?;
    Ok(())
}
