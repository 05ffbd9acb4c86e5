//! Exact ground truth for small instances: enumerated models, tabular
//! evaluation, and least-squares fits of one-shot payoff tables.

mod equivalence;
mod eval;
mod fit;
mod policy;
mod tabular;

pub use equivalence::{vsp_equivalence_test, Deviation, EquivalenceReport, ModelPair, EQUIVALENCE_TOL};
pub use eval::{monte_carlo, policy_eval, value_iteration, QTable, MAX_SWEEPS, RESIDUAL_TOL};
pub use fit::{additive_fit, mvd_fit, Fit, PayoffTable};
pub use policy::{Policy, RandomPolicy, UniformPolicy};
pub use tabular::{
    build_tabular, joint_choices, DecisionView, Enumerable, RawSource, TabularModel, Transition,
    DEFAULT_STATE_BUDGET,
};
