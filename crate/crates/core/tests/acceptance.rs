//! Acceptance run: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use async_credit::config::RunConfig;
use async_credit::envs::{AsyncGridworld, AsyncMatrixGame, GridConfig};
use async_credit::learner::{Learner, MetricsRow};
use async_credit::mixers::HeadMode;
use async_credit::oracle::{additive_fit, mvd_fit, vsp_equivalence_test, PayoffTable, Policy, RandomPolicy, DEFAULT_STATE_BUDGET};
use async_credit::run::train_run;
use async_credit::tensor::gradcheck::GradCheckReport;
use async_credit::verify::{gradcheck_agent, gradcheck_mixer, igm_draws, reduction_gap, MixerKind, GRADCHECK_TOL};
use async_credit::vsp::WrapperMode;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Agent GRU width for the learning criteria (desk-scale budget).
const AGENT_HIDDEN: usize = 32;
const STEPS: u64 = 20_000;
const EQUIVALENCE_TOL: f64 = 1e-10;
/// Max-abs residual of the best additive fit to [[1, 2], [2, 4]]:
/// the interaction contrast (1 - 2 - 2 + 4) / 4.
const ADDITIVE_PRODUCT_RESIDUAL: f64 = 0.25;
const MVD_RESIDUAL_TOL: f64 = 1e-10;
const GRAD_INSTANCES: usize = 100;
const IGM_DRAWS: usize = 1000;
const REDUCTION_INPUTS: usize = 1000;

struct Outcome {
    passed: bool,
    detail: String,
}

fn line(id: usize, name: &str, elapsed: Duration, o: &Outcome) -> bool {
    println!(
        "{} [{id}] {name}: {} ({:.1}s)",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64()
    );
    o.passed
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let t = Instant::now();
    let o = f();
    (o, t.elapsed())
}

fn equivalence() -> Outcome {
    let fam = RandomPolicy::family(0, 50);
    let ps: Vec<&dyn Policy> = fam.iter().map(|p| p as &dyn Policy).collect();
    let m = vsp_equivalence_test(&AsyncMatrixGame::default(), 0.99, &ps, DEFAULT_STATE_BUDGET).unwrap();
    let g = vsp_equivalence_test(&AsyncGridworld::new(GridConfig::oracle()).unwrap(), 0.99, &ps, DEFAULT_STATE_BUDGET).unwrap();
    let worst = m.max_abs_diff.max(g.max_abs_diff);
    let worst_opt = m.optimal.max_abs_diff.max(g.optimal.max_abs_diff);
    Outcome {
        passed: worst < EQUIVALENCE_TOL && worst_opt < EQUIVALENCE_TOL,
        detail: format!(
            "matrix {:.2e}, gridworld {:.2e} over 50 policies; optimal tables {:.2e}",
            m.max_abs_diff, g.max_abs_diff, worst_opt
        ),
    }
}

fn separation() -> Outcome {
    let add = additive_fit(&PayoffTable::product()).unwrap();
    let mvd = mvd_fit(&PayoffTable::product()).unwrap();
    Outcome {
        passed: add.residual > 1e-3
            && (add.residual - ADDITIVE_PRODUCT_RESIDUAL).abs() < 1e-12
            && mvd.residual < MVD_RESIDUAL_TOL,
        detail: format!("additive residual {}, multiplicative residual {:.2e}", add.residual, mvd.residual),
    }
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    let mut checked = 0;
    for kind in MixerKind::ALL {
        let mut rep = GradCheckReport::default();
        for _ in 0..GRAD_INSTANCES {
            rep.merge(gradcheck_mixer(kind, &mut rng).unwrap());
        }
        worst = worst.max(rep.max_rel_error);
        checked += rep.checked;
        if !rep.passes(GRADCHECK_TOL) {
            failed.push(kind.name());
        }
    }
    let mut rep = GradCheckReport::default();
    for _ in 0..GRAD_INSTANCES {
        rep.merge(gradcheck_agent(&mut rng).unwrap());
    }
    worst = worst.max(rep.max_rel_error);
    checked += rep.checked;
    if !rep.passes(GRADCHECK_TOL) {
        failed.push("agent".into());
    }
    Outcome {
        passed: failed.is_empty() && worst < GRADCHECK_TOL,
        detail: format!(
            "{} mixers plus the agent network, {checked} entries, max relative error {worst:.2e}{}",
            MixerKind::ALL.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(" ")) }
        ),
    }
}

fn igm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut violations = 0;
    let mut min_grad = f64::INFINITY;
    let mut parts = Vec::new();
    for head in [HeadMode::Direct, HeadMode::Softmax, HeadMode::Mlp] {
        let mut v = 0;
        for order in [2, 3] {
            let s = igm_draws(head, order, IGM_DRAWS / 2, &mut rng).unwrap();
            v += s.violations;
            min_grad = min_grad.min(s.min_deciding_gradient);
        }
        violations += v;
        parts.push(format!("{head} {v}/{IGM_DRAWS}"));
    }
    Outcome {
        passed: violations == 0 && min_grad >= 0.0,
        detail: format!("violations {}; smallest deciding-slot gradient {min_grad:.3e}", parts.join(", ")),
    }
}

fn reductions() -> Outcome {
    let gap = reduction_gap(REDUCTION_INPUTS, &mut ChaCha8Rng::seed_from_u64(300)).unwrap();
    Outcome {
        passed: gap == 0.0,
        detail: format!("max |difference| {gap} over {REDUCTION_INPUTS} inputs"),
    }
}

fn config(env: &str, seed: u64, order: usize, mode: WrapperMode) -> RunConfig {
    let mut c = RunConfig::default();
    c.env.name = env.into();
    c.mixer.order = order;
    c.mixer.head_mode = HeadMode::Mlp;
    c.wrapper.mode = mode;
    c.train.seed = seed;
    c.train.agent_hidden = AGENT_HIDDEN;
    c.train.total_timesteps = STEPS;
    c
}

struct Trained {
    rows: Vec<MetricsRow>,
    offsets: Vec<f64>,
    shifted: Vec<f64>,
}

fn train(cfg: &RunConfig) -> Trained {
    let mut l = Learner::new(cfg.learner_spec().unwrap()).unwrap();
    let rows = l.run(|_| Ok(())).unwrap();
    Trained {
        rows,
        offsets: l.offset_trace.clone(),
        shifted: l.shifted_trace.clone(),
    }
}

fn final_return(t: &Trained) -> f64 {
    t.rows.last().unwrap().test_mean_return
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let mut all = true;
    let (o, d) = timed(equivalence);
    all &= line(1, "vsp equivalence", d, &Outcome { passed: o.passed && d.as_secs() < 60, ..o });
    let (o, d) = timed(separation);
    all &= line(2, "function-class separation", d, &Outcome { passed: o.passed && d.as_secs_f64() < 1.0, ..o });
    let (o, d) = timed(gradients);
    all &= line(3, "gradient integrity", d, &Outcome { passed: o.passed && d.as_secs() < 60, ..o });
    let (o, d) = timed(igm);
    all &= line(4, "igm and monotonicity", d, &o);
    let (o, d) = timed(reductions);
    all &= line(5, "reduction equalities", d, &o);

    let t6 = Instant::now();
    let matrix: Vec<Trained> = SEEDS.iter().map(|&s| train(&config("matrix", s, 2, WrapperMode::Vsp))).collect();
    let grid1: Vec<Trained> = SEEDS.iter().map(|&s| train(&config("gridworld", s, 1, WrapperMode::Vsp))).collect();
    let grid2: Vec<Trained> = SEEDS.iter().map(|&s| train(&config("gridworld", s, 2, WrapperMode::Vsp))).collect();
    let d6 = t6.elapsed();
    let optimum = AsyncMatrixGame::default().max_payoff();
    let hits = matrix
        .iter()
        .filter(|t| t.rows.iter().any(|r| (r.test_mean_return - optimum).abs() < 1e-9))
        .count();
    let r1: Vec<f64> = grid1.iter().map(final_return).collect();
    let r2: Vec<f64> = grid2.iter().map(final_return).collect();
    let o6 = Outcome {
        passed: hits >= 4 && mean(&r2) >= mean(&r1) && d6.as_secs() < 30 * 60,
        detail: format!(
            "matrix optimum {optimum} reached by {hits}/5 seeds; gridworld MVD(2) {:.3} [{}] vs MVD(1) {:.3} [{}]",
            mean(&r2),
            fmt(&r2),
            mean(&r1),
            fmt(&r1)
        ),
    };
    all &= line(6, "desk-scale learning", d6, &o6);

    let t7 = Instant::now();
    let pad: Vec<Trained> = SEEDS.iter().map(|&s| train(&config("gridworld", s, 2, WrapperMode::PadBlank))).collect();
    let d7 = t7.elapsed();
    let rp: Vec<f64> = pad.iter().map(final_return).collect();
    let o7 = Outcome {
        passed: mean(&r2) >= mean(&rp),
        detail: format!("gridworld vsp {:.3} [{}] vs pad_blank {:.3} [{}]", mean(&r2), fmt(&r2), mean(&rp), fmt(&rp)),
    };
    all &= line(7, "vsp versus padding", d7, &o7);

    let runs: Vec<&Trained> = matrix.iter().chain(&grid1).chain(&grid2).chain(&pad).collect();
    let monotone = runs.iter().all(|t| t.offsets.windows(2).all(|w| w[1] >= w[0]));
    let min_shift = runs.iter().flat_map(|t| t.shifted.iter().copied()).fold(f64::INFINITY, f64::min);
    let updates: usize = runs.iter().map(|t| t.offsets.len()).sum();
    let o8 = Outcome {
        passed: monotone && min_shift >= 0.0,
        detail: format!("{updates} updates over {} runs; offsets monotone: {monotone}; smallest shifted proxy {min_shift:.3e}", runs.len()),
    };
    all &= line(8, "q-min tracker invariant", Duration::ZERO, &o8);

    let (o9, d9) = timed(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config("gridworld", 7, 2, WrapperMode::Vsp);
        c.train.total_timesteps = 3000;
        c.train.test_interval = 500;
        let read = |id: &str| {
            train_run(&c, dir.path(), id, |_| {}).unwrap();
            std::fs::read(dir.path().join(id).join("metrics.csv")).unwrap()
        };
        let (a, b) = (read("first"), read("second"));
        Outcome {
            passed: a == b,
            detail: format!("two runs, {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
        }
    });
    all &= line(9, "determinism", d9, &o9);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
