//! Minimax-regret dose choice.
//!
//! The clinician picks one dose; the planner picks a fractional allocation
//! over doses. In both cases the regret of an action in state `q` is
//! `max_d ω_d(q) - ω_action(q)`, and swapping the order of the two
//! maximisations turns the worst case into one LP per competing dose.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identification::{bound_net_welfare, ConstraintSystem, IdentificationError, Interval};
use crate::model::{net_welfare_coefficients, CostSpec, DoseGrid, ModelError, ThresholdFunctional, WelfareSpec};

/// Regrets within this distance are treated as ties.
const TIE_TOL: f64 = 1e-12;
/// Largest tolerated disagreement between the closed-form and LP regret.
const CROSS_CHECK_TOL: f64 = 1e-7;
/// Default cap on the number of grid allocations evaluated.
pub const DEFAULT_GRID_BUDGET: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecisionError {
    #[error(transparent)]
    Identification(#[from] IdentificationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("allocation has {actual} entries, expected {expected}")]
    AllocationLength { expected: usize, actual: usize },
    #[error("allocation entries must be non-negative and sum to 1 (sum = {sum})")]
    InvalidAllocation { sum: f64 },
    #[error("grid resolution must be at least 1")]
    ZeroResolution,
    #[error("grid would evaluate {count} allocations, above the budget of {budget}; use a smaller resolution or coarse-to-fine search")]
    GridBudget { count: u128, budget: u64 },
    #[error("the analytical rule needs T = 2 with point-identified welfare at doses 0 and 2")]
    AnalyticalNotApplicable,
    #[error("closed-form regret {closed_form} disagrees with LP regret {lp}")]
    CrossCheck { closed_form: f64, lp: f64 },
    #[error("interval lower end {lo} exceeds upper end {hi}")]
    InvalidInterval { lo: f64, hi: f64 },
}

/// Fractional assignment of a population over doses `0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    delta: Vec<f64>,
}

impl Allocation {
    pub fn new(delta: Vec<f64>) -> Result<Self, DecisionError> {
        let sum: f64 = delta.iter().sum();
        if delta.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(DecisionError::InvalidAllocation { sum });
        }
        Ok(Self { delta })
    }

    /// Everyone receives `dose`.
    pub fn vertex(grid: &DoseGrid, dose: usize) -> Result<Self, DecisionError> {
        grid.check_dose(dose)?;
        let mut delta = vec![0.0; grid.dose_count()];
        delta[dose] = 1.0;
        Ok(Self { delta })
    }

    pub fn shares(&self) -> &[f64] {
        &self.delta
    }

    pub fn share(&self, dose: usize) -> f64 {
        self.delta[dose]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalDecision {
    pub chosen_dose: usize,
    pub mmr_value: f64,
    pub per_dose_max_regret: Vec<f64>,
    /// Entry `[c][d]` is `max_q ω_d(q) - ω_c(q)`; the diagonal is zero.
    pub per_pair_worst_case: Vec<Vec<f64>>,
    /// Smallest unclamped regret seen, for diagnosing LP noise.
    pub min_raw_regret: f64,
    pub lp_solves: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMethod {
    AnalyticalT2,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub allocation: Allocation,
    pub mmr_value: f64,
    /// `1/M` for grid searches, 0 for the analytical rule.
    pub grid_step: f64,
    pub method: AllocationMethod,
    /// Closed-form regret from the analytical rule, when it was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form_value: Option<f64>,
    pub candidates_evaluated: u64,
    pub lp_solves: usize,
}

/// How the allocation simplex is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GridSearch {
    /// All multiples of `1/resolution`.
    Full { resolution: usize },
    /// A full pass at `coarse`, then `fine` restricted to a box of two coarse
    /// steps around the coarse incumbent.
    CoarseToFine { coarse: usize, fine: usize },
}

impl GridSearch {
    pub fn default_for(grid: &DoseGrid) -> Self {
        if grid.max_dose() <= 3 {
            GridSearch::Full { resolution: 100 }
        } else {
            GridSearch::CoarseToFine { coarse: 20, fine: 200 }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationOptions {
    pub search: GridSearch,
    pub budget: u64,
    /// Use the closed-form rule whenever it applies.
    pub prefer_analytical: bool,
}

impl AllocationOptions {
    pub fn default_for(grid: &DoseGrid) -> Self {
        Self { search: GridSearch::default_for(grid), budget: DEFAULT_GRID_BUDGET, prefer_analytical: true }
    }

    pub fn grid(resolution: usize) -> Self {
        Self { search: GridSearch::Full { resolution }, budget: DEFAULT_GRID_BUDGET, prefer_analytical: false }
    }
}

/// Net-welfare functionals for every dose over one identification region.
pub struct RegretModel<'a> {
    cs: &'a ConstraintSystem,
    net: Vec<ThresholdFunctional>,
}

impl<'a> RegretModel<'a> {
    pub fn new(cs: &'a ConstraintSystem, w: &WelfareSpec, g: &CostSpec) -> Result<Self, DecisionError> {
        let grid = cs.grid();
        let net = grid
            .doses()
            .map(|t| net_welfare_coefficients(grid, t, w, g))
            .collect::<Result<Vec<_>, _>>()?;
        cs.feasible_basis()?;
        Ok(Self { cs, net })
    }

    pub fn grid(&self) -> &DoseGrid {
        self.cs.grid()
    }

    /// `max_q ω_d(q) - ω_c(q)`, zero without an LP when `c == d`.
    pub fn pairwise(&self, chosen: usize, rival: usize) -> Result<f64, DecisionError> {
        self.grid().check_dose(chosen)?;
        self.grid().check_dose(rival)?;
        if chosen == rival {
            return Ok(0.0);
        }
        Ok(self.cs.maximize(&self.net[rival].minus(&self.net[chosen]))?)
    }

    /// Unclamped worst-case regret of `allocation`.
    pub fn allocation_regret_raw(&self, allocation: &Allocation) -> Result<f64, DecisionError> {
        let grid = *self.grid();
        if allocation.shares().len() != grid.dose_count() {
            return Err(DecisionError::AllocationLength {
                expected: grid.dose_count(),
                actual: allocation.shares().len(),
            });
        }
        let parts: Vec<&ThresholdFunctional> = self.net.iter().collect();
        let mixed = ThresholdFunctional::combination(grid, &parts, allocation.shares());
        let mut worst = f64::NEG_INFINITY;
        for rival in &self.net {
            worst = worst.max(self.cs.maximize(&rival.minus(&mixed))?);
        }
        Ok(worst)
    }

    pub fn allocation_regret(&self, allocation: &Allocation) -> Result<f64, DecisionError> {
        Ok(self.allocation_regret_raw(allocation)?.max(0.0))
    }

    pub fn clinical(&self) -> Result<ClinicalDecision, DecisionError> {
        let doses = self.grid().dose_count();
        let mut pairs = vec![vec![0.0; doses]; doses];
        let mut lp_solves = 0;
        let mut min_raw = f64::INFINITY;
        let mut per_dose = Vec::with_capacity(doses);
        for c in 0..doses {
            let mut worst = 0.0f64;
            for d in (0..doses).filter(|&d| d != c) {
                let v = self.pairwise(c, d)?;
                lp_solves += 1;
                pairs[c][d] = v;
                min_raw = min_raw.min(v);
                worst = worst.max(v);
            }
            per_dose.push(worst);
        }
        let (chosen_dose, mmr_value) = per_dose
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (t, v)| if v < best.1 - TIE_TOL { (t, v) } else { best });
        Ok(ClinicalDecision {
            chosen_dose,
            mmr_value,
            per_dose_max_regret: per_dose,
            per_pair_worst_case: pairs,
            min_raw_regret: if min_raw.is_finite() { min_raw } else { 0.0 },
            lp_solves,
        })
    }

    /// Minimises worst-case regret over a grid of allocations.
    pub fn allocation_grid(&self, search: GridSearch, budget: u64) -> Result<AllocationDecision, DecisionError> {
        let parts = self.grid().dose_count();
        match search {
            GridSearch::Full { resolution } => {
                let bounds = vec![(0, resolution); parts];
                self.search_box(resolution, &bounds, budget)
            }
            GridSearch::CoarseToFine { coarse, fine } => {
                let first = self.search_box(coarse, &vec![(0, coarse); parts], budget)?;
                if fine == 0 {
                    return Err(DecisionError::ZeroResolution);
                }
                let radius = 2.0 / coarse as f64;
                let bounds: Vec<(usize, usize)> = first
                    .allocation
                    .shares()
                    .iter()
                    .map(|&s| {
                        let lo = ((s - radius) * fine as f64 - 1e-9).ceil().max(0.0) as usize;
                        let hi = ((s + radius) * fine as f64 + 1e-9).floor().min(fine as f64) as usize;
                        (lo, hi)
                    })
                    .collect();
                let mut second = self.search_box(fine, &bounds, budget)?;
                second.candidates_evaluated += first.candidates_evaluated;
                second.lp_solves += first.lp_solves;
                Ok(second)
            }
        }
    }

    fn search_box(
        &self,
        resolution: usize,
        bounds: &[(usize, usize)],
        budget: u64,
    ) -> Result<AllocationDecision, DecisionError> {
        if resolution == 0 {
            return Err(DecisionError::ZeroResolution);
        }
        let count = count_bounded_compositions(resolution, bounds);
        if count > budget as u128 {
            return Err(DecisionError::GridBudget { count, budget });
        }
        let candidates = bounded_compositions(resolution, bounds);
        let scale = resolution as f64;
        let regrets: Vec<f64> = candidates
            .par_iter()
            .map(|parts| {
                let alloc = Allocation { delta: parts.iter().map(|&k| k as f64 / scale).collect() };
                self.allocation_regret(&alloc)
            })
            .collect::<Result<_, _>>()?;
        // Candidates are in ascending lexicographic order, so the first minimiser wins ties.
        let (best, value) = regrets
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 - TIE_TOL { (k, v) } else { acc });
        let allocation = Allocation { delta: candidates[best].iter().map(|&k| k as f64 / scale).collect() };
        Ok(AllocationDecision {
            allocation,
            mmr_value: value,
            grid_step: 1.0 / scale,
            method: AllocationMethod::Grid,
            closed_form_value: None,
            candidates_evaluated: candidates.len() as u64,
            lp_solves: candidates.len() * self.net.len(),
        })
    }

    /// Closed-form allocation for `T = 2` when welfare at doses 0 and 2 is
    /// point-identified, with its regret recomputed by LP.
    pub fn allocation_analytical(&self) -> Result<AllocationDecision, DecisionError> {
        let grid = *self.grid();
        if grid.max_dose() != 2 {
            return Err(DecisionError::AnalyticalNotApplicable);
        }
        let mut omega = Vec::with_capacity(3);
        for f in &self.net {
            omega.push(Interval::new(self.cs.minimize(f)?, self.cs.maximize(f)?)?);
        }
        if omega[0].width() > 1e-9 || omega[2].width() > 1e-9 {
            return Err(DecisionError::AnalyticalNotApplicable);
        }
        let omega1 = Interval { lo: omega[1].lo, hi: omega[1].hi.max(omega[1].lo) };
        let mut decision = allocation_mmr_t2(omega[0].lo, omega[2].lo, omega1)?;
        let lp = self.allocation_regret(&decision.allocation)?;
        let closed_form = decision.mmr_value;
        if (lp - closed_form).abs() > CROSS_CHECK_TOL {
            return Err(DecisionError::CrossCheck { closed_form, lp });
        }
        decision.closed_form_value = Some(closed_form);
        decision.mmr_value = lp;
        decision.lp_solves = 6 + self.net.len();
        Ok(decision)
    }

    pub fn allocation(&self, options: &AllocationOptions) -> Result<AllocationDecision, DecisionError> {
        if options.prefer_analytical {
            match self.allocation_analytical() {
                Err(DecisionError::AnalyticalNotApplicable) => {}
                other => return other,
            }
        }
        self.allocation_grid(options.search, options.budget)
    }
}

/// `max_q [ω_rival(q) - ω_chosen(q)]` over the identification region.
pub fn pairwise_worst_case(
    cs: &ConstraintSystem,
    chosen: usize,
    rival: usize,
    w: &WelfareSpec,
    g: &CostSpec,
) -> Result<f64, DecisionError> {
    RegretModel::new(cs, w, g)?.pairwise(chosen, rival)
}

/// Minimax-regret single dose; ties go to the lowest dose.
pub fn clinical_mmr(cs: &ConstraintSystem, w: &WelfareSpec, g: &CostSpec) -> Result<ClinicalDecision, DecisionError> {
    RegretModel::new(cs, w, g)?.clinical()
}

/// Worst-case regret of a fixed allocation, clamped at zero.
pub fn allocation_worst_case_regret(
    cs: &ConstraintSystem,
    allocation: &Allocation,
    w: &WelfareSpec,
    g: &CostSpec,
) -> Result<f64, DecisionError> {
    RegretModel::new(cs, w, g)?.allocation_regret(allocation)
}

/// Grid minimiser over all allocations with entries in multiples of `1/resolution`.
pub fn allocation_mmr_grid(
    cs: &ConstraintSystem,
    w: &WelfareSpec,
    g: &CostSpec,
    resolution: usize,
) -> Result<AllocationDecision, DecisionError> {
    RegretModel::new(cs, w, g)?.allocation_grid(GridSearch::Full { resolution }, DEFAULT_GRID_BUDGET)
}

/// Planner decision, using the closed form when it applies and `options` allow it.
pub fn allocation_mmr(
    cs: &ConstraintSystem,
    w: &WelfareSpec,
    g: &CostSpec,
    options: &AllocationOptions,
) -> Result<AllocationDecision, DecisionError> {
    RegretModel::new(cs, w, g)?.allocation(options)
}

/// Closed-form minimax-regret allocation for `T = 2` with welfare known at
/// doses 0 and 2 and only bounded at dose 1.
///
/// The dose with the larger known welfare shares the population with dose 1
/// in proportion to how far each could fall short; the other dose gets
/// nothing. When `ω0 == ω2` the remainder goes to dose 0.
pub fn allocation_mmr_t2(omega0: f64, omega2: f64, omega1: Interval) -> Result<AllocationDecision, DecisionError> {
    let Interval { lo, hi } = omega1;
    if !(omega0.is_finite() && omega2.is_finite() && lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(DecisionError::InvalidInterval { lo, hi });
    }
    let (best_known, known_dose) = if omega2 > omega0 { (omega2, 2) } else { (omega0, 0) };
    let mut delta = vec![0.0; 3];
    let value = if lo >= best_known {
        delta[1] = 1.0;
        0.0
    } else if hi <= best_known {
        delta[known_dose] = 1.0;
        0.0
    } else {
        let span = hi - lo;
        delta[1] = (hi - best_known) / span;
        delta[known_dose] = (best_known - lo) / span;
        (hi - best_known) * (best_known - lo) / span
    };
    Ok(AllocationDecision {
        allocation: Allocation { delta },
        mmr_value: value,
        grid_step: 0.0,
        method: AllocationMethod::AnalyticalT2,
        closed_form_value: Some(value),
        candidates_evaluated: 1,
        lp_solves: 0,
    })
}

/// `[ω_tL, ω_tU]` for every dose.
pub fn net_welfare_bounds(
    cs: &ConstraintSystem,
    w: &WelfareSpec,
    g: &CostSpec,
) -> Result<Vec<Interval>, DecisionError> {
    cs.grid().doses().map(|t| Ok(bound_net_welfare(cs, t, w, g)?)).collect()
}

/// Number of ways to write `total` as an ordered sum with part `k` in `bounds[k]`.
fn count_bounded_compositions(total: usize, bounds: &[(usize, usize)]) -> u128 {
    let mut ways = vec![0u128; total + 1];
    ways[0] = 1;
    for &(lo, hi) in bounds {
        let mut next = vec![0u128; total + 1];
        for (s, &n) in ways.iter().enumerate().filter(|(_, n)| **n > 0) {
            for k in lo..=hi.min(total - s) {
                next[s + k] = next[s + k].saturating_add(n);
            }
        }
        ways = next;
    }
    ways[total]
}

/// All bounded compositions of `total`, in ascending lexicographic order.
fn bounded_compositions(total: usize, bounds: &[(usize, usize)]) -> Vec<Vec<usize>> {
    // max_rest[k] = largest sum achievable by parts k.. (for pruning)
    let mut max_rest = vec![0usize; bounds.len() + 1];
    let mut min_rest = vec![0usize; bounds.len() + 1];
    for k in (0..bounds.len()).rev() {
        max_rest[k] = max_rest[k + 1] + bounds[k].1;
        min_rest[k] = min_rest[k + 1] + bounds[k].0;
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(bounds.len());
    fn recurse(
        k: usize,
        remaining: usize,
        bounds: &[(usize, usize)],
        min_rest: &[usize],
        max_rest: &[usize],
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if k == bounds.len() {
            if remaining == 0 {
                out.push(current.clone());
            }
            return;
        }
        let (lo, hi) = bounds[k];
        for v in lo..=hi.min(remaining) {
            let rest = remaining - v;
            if rest < min_rest[k + 1] || rest > max_rest[k + 1] {
                continue;
            }
            current.push(v);
            recurse(k + 1, rest, bounds, min_rest, max_rest, current, out);
            current.pop();
        }
    }
    recurse(0, total, bounds, &min_rest, &max_rest, &mut current, &mut out);
    out
}
