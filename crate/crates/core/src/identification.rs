//! Identification region of the threshold-dose distribution.
//!
//! Trial evidence at doses `t_1 < ... < t_K` pins four quadrant sums of `q`
//! per arm. Together with total probability and non-negativity these
//! equalities describe a polytope `Q`; every outcome probability and every
//! net-welfare value at an untested dose is a linear functional of `q`, so its
//! sharp bounds are the minimum and maximum of an LP over `Q`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linprog::{FeasibleBasis, LpError, LpOutcome, Phase1};
use crate::model::{
    net_welfare_coefficients, CostSpec, DoseGrid, ModelError, OutcomeCell, ThresholdDistribution,
    ThresholdFunctional, TrialEvidence, WelfareSpec,
};

/// Interval ordering slack.
pub const INTERVAL_TOL: f64 = 1e-9;
/// Tolerance for the factorisation check under independence.
pub const FACTORIZATION_TOL: f64 = 1e-6;
/// Slack for the monotonicity pre-checks.
const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdentificationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("evidence grid (T = {evidence}) differs from requested grid (T = {requested})")]
    GridMismatch { evidence: usize, requested: usize },
    #[error("the independence restriction is not linear; use independence_bounds instead")]
    UnsupportedRestriction,
    #[error("independence cannot be combined with concurrent thresholds")]
    ContradictoryRestrictions,
    #[error("trial evidence is inconsistent with monotone dose response and the imposed restrictions")]
    Inconsistent,
    #[error("independence refuted: arm at dose {dose} deviates from the product of its marginals by {deviation:e}")]
    RestrictionRefuted { dose: usize, deviation: f64 },
    #[error("LP for a bounded functional returned {0:?}")]
    UnexpectedStatus(crate::linprog::LpStatus),
    #[error("interval lower end {lo} exceeds upper end {hi}")]
    InvalidInterval { lo: f64, hi: f64 },
}

/// Optional restrictions on the joint threshold distribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Restrictions {
    /// `q(h, 0) = 0` for all `h`: no adverse effects at zero dose.
    pub no_ae_at_zero: bool,
    /// `q(h, i) = 0` for `h != i`: one threshold governs both outcomes.
    pub concurrent_thresholds: bool,
    /// `t_d` independent of `t_e`.
    pub independence: bool,
}

impl Restrictions {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), IdentificationError> {
        if self.independence && self.concurrent_thresholds {
            return Err(IdentificationError::ContradictoryRestrictions);
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.no_ae_at_zero {
            out.push("no_ae_at_zero");
        }
        if self.concurrent_thresholds {
            out.push("concurrent_thresholds");
        }
        if self.independence {
            out.push("independence");
        }
        out
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, IdentificationError> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi + INTERVAL_TOL {
            return Err(IdentificationError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn shifted(&self, by: f64) -> Self {
        Self { lo: self.lo + by, hi: self.hi + by }
    }
}

/// What an equality row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowTag {
    TotalProbability,
    Arm { arm: usize, dose: usize, cell: OutcomeCell },
    NoAeAtZero { t_d: usize },
    ConcurrentThresholds { t_d: usize, t_e: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
    pub tag: RowTag,
}

/// Equality system whose non-negative solutions form the identification
/// region. Column `h*(T+2) + i` holds `q(h, i)`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ConstraintSystem {
    grid: DoseGrid,
    restrictions: Restrictions,
    evidence_doses: Vec<usize>,
    rows: Vec<ConstraintRow>,
    #[serde(skip)]
    phase1: OnceLock<Result<Phase1, LpError>>,
}

impl Clone for ConstraintSystem {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid,
            restrictions: self.restrictions,
            evidence_doses: self.evidence_doses.clone(),
            rows: self.rows.clone(),
            phase1: OnceLock::new(),
        }
    }
}

/// Builds the identification constraints for `evidence` under `restrictions`.
pub fn build_constraints(
    evidence: &TrialEvidence,
    restrictions: Restrictions,
    grid: &DoseGrid,
) -> Result<ConstraintSystem, IdentificationError> {
    restrictions.validate()?;
    if restrictions.independence {
        return Err(IdentificationError::UnsupportedRestriction);
    }
    if evidence.grid() != grid {
        return Err(IdentificationError::GridMismatch {
            evidence: evidence.grid().max_dose(),
            requested: grid.max_dose(),
        });
    }
    let n = grid.support_len();
    let mut rows = vec![ConstraintRow { coeffs: vec![1.0; grid.cell_count()], rhs: 1.0, tag: RowTag::TotalProbability }];
    for (k, arm) in evidence.arms().iter().enumerate() {
        grid.check_dose(arm.dose)?;
        for cell in OutcomeCell::ALL {
            let f = ThresholdFunctional::outcome_indicator(*grid, arm.dose, cell)?;
            rows.push(ConstraintRow {
                coeffs: f.coeffs().to_vec(),
                rhs: arm.outcomes.prob(cell),
                tag: RowTag::Arm { arm: k, dose: arm.dose, cell },
            });
        }
    }
    let unit = |h: usize, i: usize| {
        let mut coeffs = vec![0.0; grid.cell_count()];
        coeffs[grid.index(h, i)] = 1.0;
        coeffs
    };
    if restrictions.no_ae_at_zero {
        for h in 0..n {
            rows.push(ConstraintRow { coeffs: unit(h, 0), rhs: 0.0, tag: RowTag::NoAeAtZero { t_d: h } });
        }
    }
    if restrictions.concurrent_thresholds {
        for h in 0..n {
            for i in (0..n).filter(|&i| i != h) {
                rows.push(ConstraintRow {
                    coeffs: unit(h, i),
                    rhs: 0.0,
                    tag: RowTag::ConcurrentThresholds { t_d: h, t_e: i },
                });
            }
        }
    }
    Ok(ConstraintSystem {
        grid: *grid,
        restrictions,
        evidence_doses: evidence.doses(),
        rows,
        phase1: OnceLock::new(),
    })
}

impl ConstraintSystem {
    pub fn grid(&self) -> &DoseGrid {
        &self.grid
    }

    pub fn restrictions(&self) -> Restrictions {
        self.restrictions
    }

    pub fn evidence_doses(&self) -> &[usize] {
        &self.evidence_doses
    }

    pub fn rows(&self) -> &[ConstraintRow] {
        &self.rows
    }

    pub fn num_columns(&self) -> usize {
        self.grid.cell_count()
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.coeffs.clone()).collect()
    }

    pub fn rhs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rhs).collect()
    }

    /// Numerical rank of the equality matrix (Gaussian elimination with
    /// partial pivoting).
    pub fn rank(&self) -> usize {
        matrix_rank(&self.matrix(), 1e-9)
    }

    /// Phase-one result, computed once.
    pub fn phase1(&self) -> Result<&Phase1, IdentificationError> {
        self.phase1
            .get_or_init(|| FeasibleBasis::find(&self.matrix(), &self.rhs()))
            .as_ref()
            .map_err(|e| IdentificationError::Lp(e.clone()))
    }

    pub fn is_feasible(&self) -> Result<bool, IdentificationError> {
        Ok(matches!(self.phase1()?, Phase1::Feasible(_)))
    }

    /// The reusable feasible basis, or [`IdentificationError::Inconsistent`].
    pub fn feasible_basis(&self) -> Result<&FeasibleBasis, IdentificationError> {
        match self.phase1()? {
            Phase1::Feasible(basis) => Ok(basis),
            Phase1::Infeasible(_) => Err(IdentificationError::Inconsistent),
        }
    }

    /// Maximum of `f(q)` over the identification region.
    pub fn maximize(&self, f: &ThresholdFunctional) -> Result<f64, IdentificationError> {
        self.extreme(f, true)
    }

    /// Minimum of `f(q)` over the identification region.
    pub fn minimize(&self, f: &ThresholdFunctional) -> Result<f64, IdentificationError> {
        self.extreme(f, false)
    }

    fn extreme(&self, f: &ThresholdFunctional, max: bool) -> Result<f64, IdentificationError> {
        if f.grid() != &self.grid {
            return Err(IdentificationError::GridMismatch {
                evidence: self.grid.max_dose(),
                requested: f.grid().max_dose(),
            });
        }
        let basis = self.feasible_basis()?;
        let out = if max { basis.maximize(f.coeffs())? } else { basis.minimize(f.coeffs())? };
        match out {
            LpOutcome::Optimal(s) => Ok(s.value + f.offset()),
            other => Err(IdentificationError::UnexpectedStatus(other.status())),
        }
    }
}

/// Rank of a dense matrix.
pub fn matrix_rank(rows: &[Vec<f64>], tol: f64) -> usize {
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let m = a.len();
    let n = a.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..n {
        if rank == m {
            break;
        }
        let (pivot, value) = (rank..m)
            .map(|r| (r, a[r][col].abs()))
            .fold((rank, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if value <= tol {
            continue;
        }
        a.swap(rank, pivot);
        let pivot_row = a[rank].clone();
        for row in a.iter_mut().skip(rank + 1) {
            let factor = row[col] / pivot_row[col];
            if factor != 0.0 {
                for (x, y) in row.iter_mut().zip(&pivot_row).skip(col) {
                    *x -= factor * y;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Which monotonicity implication a pair of arms violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonotoneCondition {
    /// `p[d(t) = 1]` must not increase with dose.
    DiseaseNonincreasing,
    /// `p[e(t) = 1]` must not decrease with dose.
    AdverseNondecreasing,
    /// `p[(0,1)]` must not decrease with dose.
    AdverseOnlyNondecreasing,
    /// `p[(1,0)]` must not increase with dose.
    DiseaseOnlyNonincreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneViolation {
    pub condition: MonotoneCondition,
    pub lower_dose: usize,
    pub upper_dose: usize,
    pub lower_value: f64,
    pub upper_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Consistency {
    Consistent { witness: ThresholdDistribution },
    Inconsistent { certificate: Vec<f64>, violations: Vec<MonotoneViolation> },
}

impl Consistency {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Consistency::Consistent { .. })
    }
}

/// Necessary conditions across consecutive arms.
pub fn monotone_violations(evidence: &TrialEvidence) -> Vec<MonotoneViolation> {
    let mut out = Vec::new();
    for pair in evidence.arms().windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        let checks = [
            (MonotoneCondition::DiseaseNonincreasing, lo.outcomes.disease_prob(), hi.outcomes.disease_prob(), false),
            (MonotoneCondition::AdverseNondecreasing, lo.outcomes.adverse_prob(), hi.outcomes.adverse_prob(), true),
            (
                MonotoneCondition::AdverseOnlyNondecreasing,
                lo.outcomes.prob(OutcomeCell::AdverseOnly),
                hi.outcomes.prob(OutcomeCell::AdverseOnly),
                true,
            ),
            (
                MonotoneCondition::DiseaseOnlyNonincreasing,
                lo.outcomes.prob(OutcomeCell::DiseaseOnly),
                hi.outcomes.prob(OutcomeCell::DiseaseOnly),
                false,
            ),
        ];
        for (condition, a, b, increasing) in checks {
            let violated = if increasing { b < a - MONOTONE_TOL } else { b > a + MONOTONE_TOL };
            if violated {
                out.push(MonotoneViolation {
                    condition,
                    lower_dose: lo.dose,
                    upper_dose: hi.dose,
                    lower_value: a,
                    upper_value: b,
                });
            }
        }
    }
    out
}

/// Checks whether some threshold distribution reproduces `evidence` under
/// monotone dose response and `restrictions`.
pub fn check_consistency(
    evidence: &TrialEvidence,
    restrictions: Restrictions,
    grid: &DoseGrid,
) -> Result<Consistency, IdentificationError> {
    let cs = build_constraints(evidence, restrictions, grid)?;
    consistency_of(&cs, evidence)
}

/// Consistency verdict for an already-built system.
pub fn consistency_of(cs: &ConstraintSystem, evidence: &TrialEvidence) -> Result<Consistency, IdentificationError> {
    let violations = monotone_violations(evidence);
    match cs.phase1()? {
        Phase1::Feasible(basis) => {
            if !violations.is_empty() {
                return Err(IdentificationError::Lp(LpError::Numerical(
                    "LP feasible although a necessary monotonicity condition fails".into(),
                )));
            }
            let witness = ThresholdDistribution::normalized(cs.grid, basis.point())?;
            Ok(Consistency::Consistent { witness })
        }
        Phase1::Infeasible(certificate) => {
            Ok(Consistency::Inconsistent { certificate: certificate.clone(), violations })
        }
    }
}

/// Sharp `[min, max]` of `f(q)` over the identification region.
pub fn bound_linear(cs: &ConstraintSystem, f: &ThresholdFunctional) -> Result<Interval, IdentificationError> {
    let lo = cs.minimize(f)?;
    let hi = cs.maximize(f)?;
    Interval::new(lo, hi.max(lo))
}

/// Sharp bounds on `p[d(t), e(t)] = cell`.
pub fn bound_outcome_prob(
    cs: &ConstraintSystem,
    dose: usize,
    cell: OutcomeCell,
) -> Result<Interval, IdentificationError> {
    let f = ThresholdFunctional::outcome_indicator(cs.grid, dose, cell)?;
    bound_linear(cs, &f)
}

/// Sharp bounds `[ω_tL, ω_tU]` on net welfare at `dose`.
pub fn bound_net_welfare(
    cs: &ConstraintSystem,
    dose: usize,
    w: &WelfareSpec,
    g: &CostSpec,
) -> Result<Interval, IdentificationError> {
    let f = net_welfare_coefficients(&cs.grid, dose, w, g)?;
    bound_linear(cs, &f)
}

/// Bounds under statistical independence of the two thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndependenceBounds {
    /// `p[d(t) = 1]`.
    pub disease: Interval,
    /// `p[e(t) = 1]`.
    pub adverse: Interval,
    pub net_welfare: Interval,
}

/// Expected welfare when disease and AE are independent with the given
/// marginal probabilities.
pub fn factorized_welfare(disease: f64, adverse: f64, w: &WelfareSpec) -> f64 {
    let (a, b) = (disease, adverse);
    w.value(OutcomeCell::Neither) * (1.0 - a) * (1.0 - b)
        + w.value(OutcomeCell::DiseaseOnly) * a * (1.0 - b)
        + w.value(OutcomeCell::AdverseOnly) * (1.0 - a) * b
        + w.value(OutcomeCell::Both) * a * b
}

/// Largest cellwise deviation of an arm's joint from the product of its marginals.
fn factorization_deviation(p: &crate::model::OutcomeDistribution) -> f64 {
    let (a, b) = (p.disease_prob(), p.adverse_prob());
    OutcomeCell::ALL
        .iter()
        .map(|&c| {
            let pd = if c.disease() { a } else { 1.0 - a };
            let pe = if c.adverse() { b } else { 1.0 - b };
            (p.prob(c) - pd * pe).abs()
        })
        .fold(0.0, f64::max)
}

/// Bounds on the two marginals and on net welfare at `dose` assuming
/// `t_d` and `t_e` are independent.
///
/// Each marginal is bracketed by the neighbouring trial arms (or by 0 and 1
/// outside the tested range). Welfare is bilinear in the two marginals, so its
/// extremes over the rectangle sit at the corners.
pub fn independence_bounds(
    evidence: &TrialEvidence,
    grid: &DoseGrid,
    dose: usize,
    w: &WelfareSpec,
    g: &CostSpec,
) -> Result<IndependenceBounds, IdentificationError> {
    if evidence.grid() != grid {
        return Err(IdentificationError::GridMismatch {
            evidence: evidence.grid().max_dose(),
            requested: grid.max_dose(),
        });
    }
    grid.check_dose(dose)?;
    if g.values().len() != grid.dose_count() {
        return Err(ModelError::Length { expected: grid.dose_count(), actual: g.values().len() }.into());
    }
    let worst = evidence
        .arms()
        .iter()
        .map(|arm| (arm.dose, factorization_deviation(&arm.outcomes)))
        .fold(None, |acc: Option<(usize, f64)>, x| match acc {
            Some(best) if best.1 >= x.1 => Some(best),
            _ => Some(x),
        });
    if let Some((dose, deviation)) = worst {
        if deviation > FACTORIZATION_TOL {
            return Err(IdentificationError::RestrictionRefuted { dose, deviation });
        }
    }

    let arms = evidence.arms();
    let below = arms.iter().rev().find(|a| a.dose <= dose);
    let above = arms.iter().find(|a| a.dose >= dose);
    let disease = Interval::new(
        above.map_or(0.0, |a| a.outcomes.disease_prob()),
        below.map_or(1.0, |a| a.outcomes.disease_prob()),
    )?;
    let adverse = Interval::new(
        below.map_or(0.0, |a| a.outcomes.adverse_prob()),
        above.map_or(1.0, |a| a.outcomes.adverse_prob()),
    )?;

    let corners = [
        factorized_welfare(disease.lo, adverse.lo, w),
        factorized_welfare(disease.lo, adverse.hi, w),
        factorized_welfare(disease.hi, adverse.lo, w),
        factorized_welfare(disease.hi, adverse.hi, w),
    ];
    let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(IndependenceBounds { disease, adverse, net_welfare: Interval::new(lo, hi)?.shifted(-g.at(dose)) })
}

/// Bounds on all four outcome cells and net welfare at one dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseBounds {
    pub dose: usize,
    /// In canonical cell order.
    pub outcomes: [Interval; 4],
    pub net_welfare: Interval,
}

pub fn dose_bounds(
    cs: &ConstraintSystem,
    dose: usize,
    w: &WelfareSpec,
    g: &CostSpec,
) -> Result<DoseBounds, IdentificationError> {
    let mut outcomes = [Interval::point(0.0); 4];
    for cell in OutcomeCell::ALL {
        outcomes[cell.index()] = bound_outcome_prob(cs, dose, cell)?;
    }
    Ok(DoseBounds { dose, outcomes, net_welfare: bound_net_welfare(cs, dose, w, g)? })
}

/// Whether threshold pair `(h, i)` is compatible with the linear restrictions.
pub fn admissible_pair(restrictions: Restrictions, h: usize, i: usize) -> bool {
    !(restrictions.no_ae_at_zero && i == 0) && !(restrictions.concurrent_thresholds && h != i)
}
