//! Sharp bounds and minimax-regret dosage choice from limited dose-trial
//! evidence, assuming efficacy and adverse effects weakly increase with dose.
//!
//! * [`model`]: threshold distributions, outcome distributions, welfare.
//! * [`linprog`]: dense two-phase simplex.
//! * [`identification`]: the identification polytope and bounds over it.
//! * [`decision`]: clinical and planner minimax-regret decisions.
//! * [`trial`]: subject records, plug-in decisions, Monte Carlo regret.
//! * [`illustration`]: the two-arm worked example with reference values.

pub mod decision;
pub mod identification;
pub mod illustration;
pub mod linprog;
pub mod model;
pub mod trial;

pub use decision::{
    allocation_mmr, allocation_mmr_grid, allocation_mmr_t2, allocation_worst_case_regret, clinical_mmr,
    pairwise_worst_case, Allocation, AllocationDecision, AllocationMethod, AllocationOptions, ClinicalDecision,
    DecisionError, GridSearch, RegretModel,
};
pub use identification::{
    bound_linear, bound_net_welfare, bound_outcome_prob, build_constraints, check_consistency,
    independence_bounds, Consistency, ConstraintSystem, IdentificationError, IndependenceBounds, Interval,
    Restrictions,
};
pub use model::{
    expected_welfare, net_welfare_coefficients, outcome_of, push_forward, CostSpec, DoseGrid, ModelError,
    OutcomeCell, OutcomeDistribution, ThresholdDistribution, ThresholdFunctional, TrialArm, TrialEvidence,
    WelfareSpec,
};
pub use trial::{
    as_if_decide, ingest, simulate_regret, AsIfOptions, Decision, DecisionMode, RegretReport, SubjectRecord,
    TrialDesign, TrialError,
};
