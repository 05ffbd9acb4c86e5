//! The self-check suite behind `async-credit verify`: exact oracles for the
//! wrapper, fits for the function-class gap, and property checks for the
//! mixers and networks. Each group yields a named pass/fail entry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::envs::{AnyEnv, AsyncGridworld, AsyncMatrixGame, Env, GridConfig};
use crate::error::Result;
use crate::mixers::{
    check_igm, mix_additive, mix_mvd, mix_mvd_korder, HeadMode, IgmProblem, KOrderParams, MixerInput, MvdParams,
    PracticalMvd, QminTracker, QmixMixer, SlotLayout,
};
use crate::oracle::{additive_fit, mvd_fit, vsp_equivalence_test, PayoffTable, Policy, RandomPolicy, DEFAULT_STATE_BUDGET};
use crate::tensor::gradcheck::{check_params, GradCheckReport};
use crate::tensor::nn::GruAgentNet;
use crate::tensor::{Graph, ParamSet, Tensor, Var};
use crate::vsp::{check_pair_coherence, Fault, SlotEnv, SlotPhase, WrapperMode};

/// Relative-error bound for the gradient checks.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GroupResult {
    pub name: String,
    pub passed: bool,
    pub max_deviation: f64,
    pub checked: usize,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub groups: Vec<GroupResult>,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub fault: Option<Fault>,
    pub matrix_policies: usize,
    pub grid_policies: usize,
    /// Random instances per mixer for gradient, IGM and reduction checks.
    pub instances: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            fault: None,
            matrix_policies: 50,
            grid_policies: 10,
            instances: 20,
            seed: 0,
        }
    }
}

/// A random batch of mixer inputs with consistent slot phases.
#[derive(Clone, Debug)]
pub struct MixerCase {
    pub layout: SlotLayout,
    pub utilities: Vec<f64>,
    pub states: Vec<f64>,
    pub state_dim: usize,
}

impl MixerCase {
    pub fn random(rng: &mut impl Rng, n: usize, rows: usize, state_dim: usize) -> Self {
        let mut phases = Vec::with_capacity(rows * 2 * n);
        for _ in 0..rows {
            let mut real = Vec::with_capacity(n);
            let mut proxy = Vec::with_capacity(n);
            for _ in 0..n {
                // deciding / executing with proxy / padded / discarded
                let (r, p) = match rng.gen_range(0..8) {
                    0..=3 => (SlotPhase::Deciding, SlotPhase::Masked),
                    4..=6 => (SlotPhase::Executing, SlotPhase::Executing),
                    _ => (SlotPhase::Masked, SlotPhase::Masked),
                };
                real.push(r);
                proxy.push(p);
            }
            phases.extend(real);
            phases.extend(proxy);
        }
        let utilities = phases
            .iter()
            .map(|p| if *p == SlotPhase::Masked { 0.0 } else { rng.gen_range(-2.0..2.0) })
            .collect();
        let states = (0..rows * state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        MixerCase {
            layout: SlotLayout::new(n, phases).expect("consistent layout"),
            utilities,
            states,
            state_dim,
        }
    }

    pub fn rows(&self) -> usize {
        self.layout.rows
    }

    fn width(&self) -> usize {
        2 * self.layout.n_agents
    }

    /// Mixer input with utilities as an untracked constant.
    pub fn input(&self, g: &mut Graph) -> MixerInput {
        let u = g.constant(Tensor::new(vec![self.rows(), self.width()], self.utilities.clone()).unwrap());
        self.input_with(g, u)
    }

    pub fn input_with(&self, g: &mut Graph, utilities: Var) -> MixerInput {
        let state = g.constant(Tensor::new(vec![self.rows(), self.state_dim], self.states.clone()).unwrap());
        MixerInput {
            utilities,
            state,
            layout: self.layout.clone(),
        }
    }

    pub fn utilities_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows(), self.width()], self.utilities.clone()).unwrap()
    }
}

/// Mixers covered by the gradient checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MixerKind {
    Additive,
    Monotonic,
    Mvd,
    KOrder(usize),
    Practical(HeadMode, usize),
}

impl MixerKind {
    pub const ALL: [MixerKind; 9] = [
        MixerKind::Additive,
        MixerKind::Monotonic,
        MixerKind::Mvd,
        MixerKind::KOrder(2),
        MixerKind::KOrder(3),
        MixerKind::Practical(HeadMode::Direct, 2),
        MixerKind::Practical(HeadMode::Softmax, 2),
        MixerKind::Practical(HeadMode::Mlp, 2),
        MixerKind::Practical(HeadMode::Mlp, 3),
    ];

    pub fn name(&self) -> String {
        match self {
            MixerKind::Additive => "additive".into(),
            MixerKind::Monotonic => "monotonic".into(),
            MixerKind::Mvd => "mvd".into(),
            MixerKind::KOrder(k) => format!("mvd_korder_{k}"),
            MixerKind::Practical(h, k) => format!("mvd_practical_{h}_{k}"),
        }
    }
}

fn random_korder(rng: &mut impl Rng, n: usize, order: usize) -> KOrderParams {
    let mut terms = Vec::new();
    for d in 0..n {
        for set in &crate::mixers::interaction_terms(n, order)[d] {
            terms.push((d, set.clone(), rng.gen_range(-1.0..1.0)));
        }
    }
    KOrderParams {
        k0: rng.gen_range(-1.0..1.0),
        k: (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        terms,
    }
}

fn random_mvd(rng: &mut impl Rng, n: usize) -> MvdParams {
    MvdParams {
        k0: rng.gen_range(-1.0..1.0),
        k: (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        pair: (0..n)
            .map(|d| (0..n).map(|c| if c == d { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect())
            .collect(),
    }
}

/// Finite-difference check of one random instance of `kind`, differentiating
/// with respect to the mixer parameters and the slot utilities.
pub fn gradcheck_mixer(kind: MixerKind, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let n = 3;
    let rows = 4;
    let sd = 3;
    let case = MixerCase::random(rng, n, rows, sd);
    let mut ps = ParamSet::new();
    let u_id = ps.add("utilities", case.utilities_tensor());
    let weights: Vec<f64> = (0..rows).map(|_| rng.gen_range(0.5..1.5)).collect();
    let offset = rng.gen_range(2.0..3.0);
    enum Built {
        Additive(f64, Vec<f64>),
        Mvd(MvdParams),
        KOrder(KOrderParams, usize),
        Qmix(QmixMixer),
        Practical(PracticalMvd),
    }
    let built = match kind {
        MixerKind::Additive => Built::Additive(rng.gen_range(-1.0..1.0), (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        MixerKind::Mvd => Built::Mvd(random_mvd(rng, n)),
        MixerKind::KOrder(k) => Built::KOrder(random_korder(rng, n, k), k),
        MixerKind::Monotonic => Built::Qmix(QmixMixer::new(&mut ps, "m", n, sd, 4, 6, rng)),
        MixerKind::Practical(h, k) => Built::Practical(PracticalMvd::new(&mut ps, "m", n, sd, k, h, 4, 6, rng)?),
    };
    let mut f = |g: &mut Graph, p: &ParamSet| -> Result<Var> {
        let u = g.param(p, u_id);
        let x = case.input_with(g, u);
        let q = match &built {
            Built::Additive(k0, k) => mix_additive(g, &x, *k0, k)?,
            Built::Mvd(m) => mix_mvd(g, &x, m)?,
            Built::KOrder(m, k) => mix_mvd_korder(g, &x, m, *k)?,
            Built::Qmix(m) => m.forward(g, p, &x)?,
            Built::Practical(m) => m.forward(g, p, &x, offset)?,
        };
        let w = g.constant(Tensor::new(vec![rows, 1], weights.clone())?);
        let wq = g.mul(q, w)?;
        Ok(g.sum(wq))
    };
    check_params(&mut ps, Some(4), rng, &mut f)
}

/// Finite-difference check of a short recurrent unroll of the agent network.
pub fn gradcheck_agent(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut ps = ParamSet::new();
    let net = GruAgentNet::new(&mut ps, "agent", 4, 5, 3, rng);
    let steps = 3;
    let rows = 2;
    let inputs: Vec<Tensor> = (0..steps)
        .map(|_| Tensor::new(vec![rows, 4], (0..rows * 4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let weights = Tensor::new(vec![rows, 3], (0..rows * 3).map(|_| rng.gen_range(0.5..1.5)).collect())?;
    check_params(&mut ps, Some(6), rng, |g, p| {
        let mut h = g.constant(Tensor::zeros(&[rows, 5]));
        let w = g.constant(weights.clone());
        let mut total = None;
        for x in &inputs {
            let xv = g.constant(x.clone());
            let (q, h2) = net.step(g, p, xv, h)?;
            h = h2;
            let wq = g.mul(q, w)?;
            let s = g.sum(wq);
            total = Some(match total {
                None => s,
                Some(t) => g.add(t, s)?,
            });
        }
        Ok(total.expect("at least one step"))
    })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IgmSummary {
    pub draws: usize,
    pub violations: usize,
    /// Smallest `dQ/dQ_d` over deciding slots at the probed utilities.
    pub min_deciding_gradient: f64,
}

/// Random practical mixers, utility tables and states; checks IGM by
/// enumeration and probes the gradient sign on deciding slots.
pub fn igm_draws(head: HeadMode, order: usize, draws: usize, rng: &mut ChaCha8Rng) -> Result<IgmSummary> {
    let n = 3;
    let sd = 4;
    let actions = 4;
    let mut out = IgmSummary {
        draws,
        violations: 0,
        min_deciding_gradient: f64::INFINITY,
    };
    for _ in 0..draws {
        let mut ps = ParamSet::new();
        let mixer = PracticalMvd::new(&mut ps, "m", n, sd, order, head, 4, 8, rng)?;
        let mut phases = vec![SlotPhase::Masked; 2 * n];
        loop {
            for i in 0..n {
                if rng.gen_bool(0.5) {
                    phases[i] = SlotPhase::Deciding;
                    phases[n + i] = SlotPhase::Masked;
                } else {
                    phases[i] = SlotPhase::Executing;
                    phases[n + i] = SlotPhase::Executing;
                }
            }
            if phases[..n].contains(&SlotPhase::Deciding) {
                break;
            }
        }
        let utilities: Vec<Vec<f64>> = phases
            .iter()
            .enumerate()
            .map(|(k, p)| match p {
                SlotPhase::Deciding => (0..actions).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                SlotPhase::Executing => vec![rng.gen_range(-3.0..3.0) * if k >= n { 1.0 } else { 0.5 }],
                SlotPhase::Masked => Vec::new(),
            })
            .collect();
        let mut tracker = QminTracker::new();
        let offset = tracker.update((n..2 * n).filter(|&k| phases[k] != SlotPhase::Masked).map(|k| utilities[k][0]));
        let problem = IgmProblem {
            n_agents: n,
            phases: phases.clone(),
            state: (0..sd).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            utilities: utilities.clone(),
        };
        let v = check_igm(&problem, |g, x| mixer.forward(g, &ps, x, offset))?;
        if !v.holds {
            out.violations += 1;
        }
        // gradient probe at a random joint choice
        let q: Vec<f64> = utilities
            .iter()
            .map(|u| if u.is_empty() { 0.0 } else { u[rng.gen_range(0..u.len())] })
            .collect();
        let mut g = Graph::new();
        let uv = g.input(Tensor::new(vec![1, 2 * n], q)?);
        let state = g.constant(Tensor::new(vec![1, sd], problem.state.clone())?);
        let x = MixerInput {
            utilities: uv,
            state,
            layout: SlotLayout::new(n, phases.clone())?,
        };
        let y = mixer.forward(&mut g, &ps, &x, offset)?;
        let grads = g.backward(y)?;
        let d = grads.get(uv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; 2 * n]);
        for i in (0..n).filter(|&i| phases[i] == SlotPhase::Deciding) {
            out.min_deciding_gradient = out.min_deciding_gradient.min(d[i]);
        }
    }
    Ok(out)
}

/// Largest `|a - b|` across the reduction identities on `count` random
/// inputs: order 1 vs additive, order 2 vs pairwise, zero pairs vs additive.
pub fn reduction_gap(count: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = 3;
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let case = MixerCase::random(rng, n, 1, 1);
        let m = random_mvd(rng, n);
        let mut g = Graph::new();
        let x = case.input(&mut g);
        let add = mix_additive(&mut g, &x, m.k0, &m.k)?;
        let k1 = mix_mvd_korder(
            &mut g,
            &x,
            &KOrderParams {
                k0: m.k0,
                k: m.k.clone(),
                terms: Vec::new(),
            },
            1,
        )?;
        let mvd = mix_mvd(&mut g, &x, &m)?;
        let terms = (0..n)
            .flat_map(|d| (0..n).filter(move |&c| c != d).map(move |c| (d, c)))
            .map(|(d, c)| (d, vec![c], m.pair[d][c]))
            .collect();
        let k2 = mix_mvd_korder(
            &mut g,
            &x,
            &KOrderParams {
                k0: m.k0,
                k: m.k.clone(),
                terms,
            },
            2,
        )?;
        let zero = mix_mvd(
            &mut g,
            &x,
            &MvdParams {
                pair: vec![vec![0.0; n]; n],
                ..m.clone()
            },
        )?;
        let v = |g: &Graph, a: Var| g.value(a).item();
        worst = worst
            .max((v(&g, add) - v(&g, k1)).abs())
            .max((v(&g, mvd) - v(&g, k2)).abs())
            .max((v(&g, add) - v(&g, zero)).abs());
    }
    Ok(worst)
}

/// Rolls random episodes through the VSP wrapper and checks every step's
/// proxies against an independent record of decision observations. Returns
/// the number of steps checked.
pub fn pair_coherence_rollouts(env: &AnyEnv, fault: Option<Fault>, episodes: usize, seed: u64) -> Result<usize> {
    let n = env.spec().n_agents;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = SlotEnv::new(env.clone(), WrapperMode::Vsp).with_fault(fault);
    let mut checked = 0;
    for _ in 0..episodes {
        let mut step = w.reset(rng.gen());
        let mut decision_obs: Vec<Option<Vec<f64>>> = vec![None; n];
        loop {
            check_pair_coherence(w.env(), &step, WrapperMode::Vsp, &decision_obs)?;
            checked += 1;
            if step.done() {
                break;
            }
            let raw = w.raw().clone();
            let decisions: Vec<Option<usize>> = (0..n)
                .map(|i| {
                    (step.slots[i].phase == SlotPhase::Deciding).then(|| {
                        let ok: Vec<usize> = (0..step.slots[i].allowed.len()).filter(|&a| step.slots[i].allowed[a]).collect();
                        ok[rng.gen_range(0..ok.len())]
                    })
                })
                .collect();
            for i in 0..n {
                if raw.decision_mask[i] {
                    decision_obs[i] = Some(raw.observations[i].clone());
                }
            }
            step = w.wrap_step(&decisions)?;
            for (i, o) in decision_obs.iter_mut().enumerate() {
                if w.env().running_action(i).is_none() {
                    *o = None;
                }
            }
        }
    }
    Ok(checked)
}

fn group(name: &str, f: impl FnOnce() -> Result<(bool, f64, usize, String)>) -> GroupResult {
    match f() {
        Ok((passed, max_deviation, checked, detail)) => GroupResult {
            name: name.into(),
            passed,
            max_deviation,
            checked,
            detail,
        },
        Err(e) => GroupResult {
            name: name.into(),
            passed: false,
            max_deviation: f64::NAN,
            checked: 0,
            detail: e.to_string(),
        },
    }
}

fn equivalence_group(env: &impl Env, policies: usize, seed: u64) -> Result<(bool, f64, usize, String)> {
    let fam = RandomPolicy::family(seed, policies);
    let ps: Vec<&dyn Policy> = fam.iter().map(|p| p as &dyn Policy).collect();
    let rep = vsp_equivalence_test(env, 0.99, &ps, DEFAULT_STATE_BUDGET)?;
    Ok((
        rep.passed,
        rep.max_abs_diff,
        rep.compared_pairs * (policies + 1),
        format!("{} raw / {} vsp states, {} policies plus optimum", rep.raw_states, rep.vsp_states, policies),
    ))
}

pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let mut groups = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let matrix = AnyEnv::Matrix(AsyncMatrixGame::default());
    let grid = AsyncGridworld::new(GridConfig::oracle()).expect("oracle preset");

    groups.push(group("vsp_equivalence_matrix", || equivalence_group(&matrix, opts.matrix_policies, opts.seed)));
    groups.push(group("vsp_equivalence_gridworld", || equivalence_group(&grid, opts.grid_policies, opts.seed)));
    groups.push(group("vsp_pair_coherence", || {
        let a = pair_coherence_rollouts(&matrix, opts.fault, 20, opts.seed)?;
        let grid = AnyEnv::Grid(AsyncGridworld::new(GridConfig::small())?);
        let b = pair_coherence_rollouts(&grid, opts.fault, 20, opts.seed)?;
        Ok((true, 0.0, a + b, "proxy masks, forced actions and observations match the environment".into()))
    }));
    groups.push(group("function_class_separation", || {
        let add = additive_fit(&PayoffTable::product())?;
        let mvd = mvd_fit(&PayoffTable::product())?;
        Ok((
            add.residual > 1e-3 && mvd.residual < 1e-10,
            mvd.residual,
            2,
            format!("additive residual {}, multiplicative residual {:e}", add.residual, mvd.residual),
        ))
    }));
    groups.push(group("mixer_reductions", || {
        let gap = reduction_gap(opts.instances * 10, &mut rng)?;
        Ok((gap == 0.0, gap, opts.instances * 10, "order-1, order-2 and zero-pair identities".into()))
    }));
    groups.push(group("gradient_checks", || {
        let mut worst = GradCheckReport::default();
        let mut failed = Vec::new();
        for kind in MixerKind::ALL {
            let mut rep = GradCheckReport::default();
            for _ in 0..opts.instances {
                rep.merge(gradcheck_mixer(kind, &mut rng)?);
            }
            if !rep.passes(GRADCHECK_TOL) {
                failed.push(kind.name());
            }
            worst.merge(rep);
        }
        let mut rep = GradCheckReport::default();
        for _ in 0..opts.instances {
            rep.merge(gradcheck_agent(&mut rng)?);
        }
        if !rep.passes(GRADCHECK_TOL) {
            failed.push("agent".into());
        }
        worst.merge(rep);
        Ok((
            failed.is_empty(),
            worst.max_rel_error,
            worst.checked,
            if failed.is_empty() { "all mixers and the agent network".into() } else { format!("failed: {}", failed.join(", ")) },
        ))
    }));
    groups.push(group("igm_monotonicity", || {
        let mut violations = 0;
        let mut min_grad = f64::INFINITY;
        let mut draws = 0;
        for head in [HeadMode::Direct, HeadMode::Softmax, HeadMode::Mlp] {
            let s = igm_draws(head, 2, opts.instances, &mut rng)?;
            violations += s.violations;
            min_grad = min_grad.min(s.min_deciding_gradient);
            draws += s.draws;
        }
        Ok((
            violations == 0 && min_grad >= 0.0,
            violations as f64,
            draws,
            format!("{violations} violations, smallest deciding-slot gradient {min_grad}"),
        ))
    }));
    groups.push(group("qmin_tracker", || {
        let mut t = QminTracker::new();
        let mut last = 0.0;
        let mut ok = true;
        let mut seen = Vec::new();
        for _ in 0..200 {
            let batch: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..3.0)).collect();
            let off = t.update(batch.iter().copied());
            seen.extend(batch);
            ok &= off >= last && seen.iter().all(|v| v + off >= 0.0);
            last = off;
        }
        Ok((ok, 0.0, 200, format!("final offset {last}")))
    }));

    let passed = groups.iter().all(|g| g.passed);
    VerifyReport { passed, groups }
}
