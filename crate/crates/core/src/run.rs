//! Run directories: manifests, metrics files, checkpoints and traces.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::learner::{dump_credit_trace, write_trace_csv, Learner, MetricsRow, METRICS_HEADER, METRICS_VERSION};
use crate::mixers::{HeadMode, QminTracker};
use crate::tensor::{load_checkpoint, save_checkpoint};
use crate::vsp::WrapperMode;

pub const OUTDIR_ENV: &str = "ASYNC_CREDIT_OUTDIR";
pub const DEFAULT_OUTDIR: &str = "runs";
pub const FINAL_CHECKPOINT: &str = "checkpoints/final.ckpt";

/// Output root: the explicit path, else `$ASYNC_CREDIT_OUTDIR`, else `runs`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTDIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTDIR))
}

pub fn default_run_id(cfg: &RunConfig) -> String {
    format!(
        "{}-{}-{}-s{}-{}",
        cfg.env.name,
        cfg.mixer.family,
        cfg.wrapper.mode,
        cfg.train.seed,
        chrono::Utc::now().format("%Y%m%dT%H%M%S%.3f")
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    pub seed: u64,
    pub started: String,
    pub finished: Option<String>,
    pub config: RunConfig,
    pub final_mean_return: Option<f64>,
    pub t_env: u64,
    pub episodes: u64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let p = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join("manifest.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Result of one finished training run.
pub struct RunOutcome {
    pub dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub learner: Learner,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Trains `cfg` into `<root>/<run_id>`, streaming metrics as they arrive.
pub fn train_run(cfg: &RunConfig, root: &Path, run_id: &str, mut on_row: impl FnMut(&MetricsRow)) -> Result<RunOutcome> {
    let dir = root.join(run_id);
    for sub in ["checkpoints", "traces"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut manifest = RunManifest {
        run_id: run_id.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.train.seed,
        started: now(),
        finished: None,
        config: cfg.clone(),
        final_mean_return: None,
        t_env: 0,
        episodes: 0,
    };
    manifest.write(&dir)?;

    let mut learner = Learner::new(cfg.learner_spec()?)?;
    let mp = dir.join("metrics.csv");
    let mut metrics = BufWriter::new(File::create(&mp).map_err(|e| Error::io(&mp, e))?);
    writeln!(metrics, "{METRICS_VERSION}\n{METRICS_HEADER}").map_err(|e| Error::io(&mp, e))?;
    let rows = learner.run(|row| {
        writeln!(metrics, "{}", row.csv()).and_then(|_| metrics.flush()).map_err(|e| Error::io(&mp, e))?;
        on_row(row);
        Ok(())
    })?;
    drop(metrics);

    save_learner(&dir.join(FINAL_CHECKPOINT), &learner, cfg)?;
    write_traces(&dir.join("traces/final.csv"), &mut learner, 1, cfg.train.seed)?;

    manifest.finished = Some(now());
    manifest.final_mean_return = rows.last().map(|r| r.test_mean_return);
    manifest.t_env = learner.t_env;
    manifest.episodes = learner.episodes;
    manifest.write(&dir)?;
    Ok(RunOutcome { dir, rows, learner })
}

/// Online parameters plus the config and tracker offset needed to rebuild.
pub fn save_learner(path: &Path, learner: &Learner, cfg: &RunConfig) -> Result<()> {
    let mut meta = BTreeMap::new();
    meta.insert("config".into(), serde_json::to_string(cfg).map_err(|e| Error::Format(e.to_string()))?);
    meta.insert("q_min_offset".into(), learner.tracker.offset().to_string());
    meta.insert("t_env".into(), learner.t_env.to_string());
    save_checkpoint(path, &learner.online, &meta)
}

pub fn load_learner(path: &Path) -> Result<(RunConfig, Learner)> {
    let ck = load_checkpoint(path)?;
    let cfg_text = ck
        .metadata
        .get("config")
        .ok_or_else(|| Error::Format(format!("{}: checkpoint has no config", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(cfg_text).map_err(|e| Error::Format(e.to_string()))?;
    let mut learner = Learner::new(cfg.learner_spec()?)?;
    learner.online.copy_from(&ck.params)?;
    learner.target.copy_from(&ck.params)?;
    if let Some(off) = ck.metadata.get("q_min_offset") {
        let off: f64 = off.parse().map_err(|_| Error::Format("bad q_min_offset".into()))?;
        learner.tracker = QminTracker::from_offset(off);
    }
    Ok((cfg, learner))
}

/// Greedy episodes written as one long-format trace. Returns the row count.
pub fn write_traces(path: &Path, learner: &mut Learner, episodes: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6163_65);
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let n = learner.n_agents();
    let mut rows = 0;
    for e in 0..episodes {
        let ep = learner.collect_episode(0.0, rng.gen())?;
        let recs = dump_credit_trace(learner, &ep)?;
        rows += recs.len() * 2 * n;
        write_trace_csv(&mut f, &recs, e, n, e == 0).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

/// Axes for `ablate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Proxy,
    Order,
    HeadMode,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proxy" => Ok(AblationAxis::Proxy),
            "order" => Ok(AblationAxis::Order),
            "head_mode" => Ok(AblationAxis::HeadMode),
            _ => Err(Error::config("axis", format!("unknown axis `{s}` (proxy, order, head_mode)"))),
        }
    }
}

/// One labelled config per cell of the axis, everything else from `base`.
pub fn ablation_cells(axis: AblationAxis, base: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
    let mut out = Vec::new();
    match axis {
        AblationAxis::Proxy => {
            for m in [WrapperMode::Vsp, WrapperMode::PadBlank, WrapperMode::PadRecent] {
                let mut c = base.clone();
                c.wrapper.mode = m;
                out.push((m.to_string(), c));
            }
        }
        AblationAxis::Order => {
            for k in 1..=3 {
                let mut c = base.clone();
                c.mixer.order = k;
                out.push((format!("order_{k}"), c));
            }
        }
        AblationAxis::HeadMode => {
            for h in [HeadMode::Direct, HeadMode::Softmax, HeadMode::Mlp] {
                let mut c = base.clone();
                c.mixer.head_mode = h;
                out.push((h.to_string(), c));
            }
        }
    }
    for (_, c) in &out {
        c.validate()?;
    }
    Ok(out)
}
