//! Domain types linking threshold-dose distributions, dose-indexed outcome
//! distributions and expected welfare.
//!
//! A patient is summarised by two threshold doses: `t_d`, the smallest dose
//! at which the disease is prevented, and `t_e`, the smallest dose at which an
//! adverse effect (AE) occurs. Thresholds live on `0..=T+1`, where `T+1`
//! means "never". At dose `t` the patient has the disease iff `t < t_d` and
//! has an AE iff `t >= t_e`.
//!
//! All arrays over outcome cells use the fixed order
//! `(0,0), (1,0), (0,1), (1,1)` for `(disease, adverse)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating that probabilities sum to one.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("maximum dose must be at least 1, got {0}")]
    MaxDoseTooSmall(usize),
    #[error("dose {dose} outside 0..={max_dose}")]
    DoseOutOfRange { dose: usize, max_dose: usize },
    #[error("threshold {threshold} outside 0..={limit}")]
    ThresholdOutOfRange { threshold: usize, limit: usize },
    #[error("expected {expected} values, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("value at position {index} is not finite")]
    NonFinite { index: usize },
    #[error("probability at position {index} is negative ({value})")]
    Negative { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("counts are all zero")]
    EmptyCounts,
    #[error("welfare values violate w(0,0) > max[w(0,1), w(1,0)] >= min[w(0,1), w(1,0)] > w(1,1)")]
    UnrealisticWelfare,
    #[error("cost at dose {dose} is negative or below the cost of a smaller dose")]
    UnrealisticCost { dose: usize },
    #[error("trial evidence needs between 1 and {max} arms, got {actual}")]
    ArmCount { actual: usize, max: usize },
    #[error("dose {0} appears in more than one arm")]
    DuplicateDose(usize),
    #[error("arm sample size must be positive")]
    ZeroSampleSize,
}

/// The integer doses `0..=T` and the threshold support `0..=T+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DoseGrid {
    max_dose: usize,
}

impl DoseGrid {
    pub fn new(max_dose: usize) -> Result<Self, ModelError> {
        if max_dose < 1 {
            return Err(ModelError::MaxDoseTooSmall(max_dose));
        }
        Ok(Self { max_dose })
    }

    /// `T`.
    pub fn max_dose(&self) -> usize {
        self.max_dose
    }

    /// Number of doses, `T+1`.
    pub fn dose_count(&self) -> usize {
        self.max_dose + 1
    }

    /// Size of the threshold support, `T+2`.
    pub fn support_len(&self) -> usize {
        self.max_dose + 2
    }

    /// Threshold index meaning "never".
    pub fn never(&self) -> usize {
        self.max_dose + 1
    }

    /// Number of cells in a joint threshold array, `(T+2)^2`.
    pub fn cell_count(&self) -> usize {
        self.support_len() * self.support_len()
    }

    pub fn doses(&self) -> std::ops::RangeInclusive<usize> {
        0..=self.max_dose
    }

    /// Flat column index of threshold pair `(h, i)`.
    #[inline]
    pub fn index(&self, h: usize, i: usize) -> usize {
        h * self.support_len() + i
    }

    pub fn check_dose(&self, dose: usize) -> Result<(), ModelError> {
        if dose > self.max_dose {
            return Err(ModelError::DoseOutOfRange { dose, max_dose: self.max_dose });
        }
        Ok(())
    }

    fn check_threshold(&self, threshold: usize) -> Result<(), ModelError> {
        if threshold > self.never() {
            return Err(ModelError::ThresholdOutOfRange { threshold, limit: self.never() });
        }
        Ok(())
    }
}

/// Joint (disease, adverse effect) outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeCell {
    /// (0, 0)
    Neither,
    /// (1, 0)
    DiseaseOnly,
    /// (0, 1)
    AdverseOnly,
    /// (1, 1)
    Both,
}

impl OutcomeCell {
    pub const ALL: [OutcomeCell; 4] = [
        OutcomeCell::Neither,
        OutcomeCell::DiseaseOnly,
        OutcomeCell::AdverseOnly,
        OutcomeCell::Both,
    ];

    pub fn from_flags(disease: bool, adverse: bool) -> Self {
        match (disease, adverse) {
            (false, false) => OutcomeCell::Neither,
            (true, false) => OutcomeCell::DiseaseOnly,
            (false, true) => OutcomeCell::AdverseOnly,
            (true, true) => OutcomeCell::Both,
        }
    }

    pub fn disease(self) -> bool {
        matches!(self, OutcomeCell::DiseaseOnly | OutcomeCell::Both)
    }

    pub fn adverse(self) -> bool {
        matches!(self, OutcomeCell::AdverseOnly | OutcomeCell::Both)
    }

    /// Position in the canonical cell order.
    pub fn index(self) -> usize {
        self as usize
    }

    /// `(d, e)` as 0/1 integers.
    pub fn flags(self) -> (u8, u8) {
        (self.disease() as u8, self.adverse() as u8)
    }

    pub fn label(self) -> &'static str {
        match self {
            OutcomeCell::Neither => "(0,0)",
            OutcomeCell::DiseaseOnly => "(1,0)",
            OutcomeCell::AdverseOnly => "(0,1)",
            OutcomeCell::Both => "(1,1)",
        }
    }
}

/// Outcome at `dose` for a patient with thresholds `(t_d, t_e)`.
pub fn outcome_of(
    grid: &DoseGrid,
    dose: usize,
    t_d: usize,
    t_e: usize,
) -> Result<OutcomeCell, ModelError> {
    grid.check_dose(dose)?;
    grid.check_threshold(t_d)?;
    grid.check_threshold(t_e)?;
    Ok(cell_at(dose, t_d, t_e))
}

#[inline]
pub(crate) fn cell_at(dose: usize, t_d: usize, t_e: usize) -> OutcomeCell {
    OutcomeCell::from_flags(dose < t_d, dose >= t_e)
}

fn validate_probabilities(values: &[f64]) -> Result<(), ModelError> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(ModelError::NonFinite { index });
        }
        if value < 0.0 {
            return Err(ModelError::Negative { index, value });
        }
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(ModelError::NotNormalized { sum });
    }
    Ok(())
}

fn normalize(values: &[f64]) -> Result<Vec<f64>, ModelError> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(ModelError::NonFinite { index });
        }
        if value < 0.0 {
            return Err(ModelError::Negative { index, value });
        }
    }
    let sum: f64 = values.iter().sum();
    if sum <= 0.0 {
        return Err(ModelError::EmptyCounts);
    }
    Ok(values.iter().map(|v| v / sum).collect())
}

/// Joint distribution `q(t_d = h, t_e = i)` over `{0..T+1}^2`, stored row-major
/// in `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDistribution {
    grid: DoseGrid,
    mass: Vec<f64>,
}

impl ThresholdDistribution {
    pub fn new(grid: DoseGrid, mass: Vec<f64>) -> Result<Self, ModelError> {
        if mass.len() != grid.cell_count() {
            return Err(ModelError::Length { expected: grid.cell_count(), actual: mass.len() });
        }
        validate_probabilities(&mass)?;
        Ok(Self { grid, mass })
    }

    /// Builds from nested rows `mass[h][i]`.
    pub fn from_rows(grid: DoseGrid, rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        if rows.len() != grid.support_len() {
            return Err(ModelError::Length { expected: grid.support_len(), actual: rows.len() });
        }
        let mut mass = Vec::with_capacity(grid.cell_count());
        for row in rows {
            if row.len() != grid.support_len() {
                return Err(ModelError::Length { expected: grid.support_len(), actual: row.len() });
            }
            mass.extend_from_slice(row);
        }
        Self::new(grid, mass)
    }

    pub fn from_fn(grid: DoseGrid, f: impl Fn(usize, usize) -> f64) -> Result<Self, ModelError> {
        let n = grid.support_len();
        let mass = (0..n).flat_map(|h| (0..n).map(move |i| (h, i))).map(|(h, i)| f(h, i)).collect();
        Self::new(grid, mass)
    }

    /// Rescales non-negative weights to sum to one.
    pub fn normalized(grid: DoseGrid, weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.len() != grid.cell_count() {
            return Err(ModelError::Length { expected: grid.cell_count(), actual: weights.len() });
        }
        Ok(Self { grid, mass: normalize(&weights)? })
    }

    /// All mass on a single threshold pair.
    pub fn point_mass(grid: DoseGrid, t_d: usize, t_e: usize) -> Result<Self, ModelError> {
        grid.check_threshold(t_d)?;
        grid.check_threshold(t_e)?;
        let mut mass = vec![0.0; grid.cell_count()];
        mass[grid.index(t_d, t_e)] = 1.0;
        Ok(Self { grid, mass })
    }

    pub fn grid(&self) -> &DoseGrid {
        &self.grid
    }

    pub fn get(&self, t_d: usize, t_e: usize) -> f64 {
        self.mass[self.grid.index(t_d, t_e)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mass
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.mass.chunks(self.grid.support_len()).map(<[f64]>::to_vec).collect()
    }

    /// Marginal distribution of `t_d`.
    pub fn disease_thresholds(&self) -> Vec<f64> {
        self.mass.chunks(self.grid.support_len()).map(|row| row.iter().sum()).collect()
    }

    /// Marginal distribution of `t_e`.
    pub fn adverse_thresholds(&self) -> Vec<f64> {
        let n = self.grid.support_len();
        (0..n).map(|i| (0..n).map(|h| self.get(h, i)).sum()).collect()
    }
}

/// Probabilities of the four outcome cells at one dose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    p: [f64; 4],
}

impl OutcomeDistribution {
    pub fn new(p: [f64; 4]) -> Result<Self, ModelError> {
        validate_probabilities(&p)?;
        Ok(Self { p })
    }

    /// Rescales non-negative weights to sum to one. Only used on explicit request.
    pub fn normalized(weights: [f64; 4]) -> Result<Self, ModelError> {
        let v = normalize(&weights)?;
        Ok(Self { p: [v[0], v[1], v[2], v[3]] })
    }

    pub fn from_counts(counts: [u64; 4]) -> Result<Self, ModelError> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(ModelError::EmptyCounts);
        }
        let n = total as f64;
        Ok(Self { p: counts.map(|c| c as f64 / n) })
    }

    pub(crate) fn from_parts_unchecked(p: [f64; 4]) -> Self {
        Self { p }
    }

    pub fn prob(&self, cell: OutcomeCell) -> f64 {
        self.p[cell.index()]
    }

    pub fn probs(&self) -> [f64; 4] {
        self.p
    }

    /// `p[d = 1]`.
    pub fn disease_prob(&self) -> f64 {
        self.p[1] + self.p[3]
    }

    /// `p[e = 1]`.
    pub fn adverse_prob(&self) -> f64 {
        self.p[2] + self.p[3]
    }
}

/// Outcome-contingent expected welfare `E[w(d, e)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareSpec {
    w: [f64; 4],
}

impl WelfareSpec {
    pub fn new(w: [f64; 4]) -> Result<Self, ModelError> {
        if let Some(index) = w.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { index });
        }
        Ok(Self { w })
    }

    /// Like [`WelfareSpec::new`] but also requires the realistic ordering.
    pub fn strict(w: [f64; 4]) -> Result<Self, ModelError> {
        let spec = Self::new(w)?;
        spec.check_realistic()?;
        Ok(spec)
    }

    pub fn check_realistic(&self) -> Result<(), ModelError> {
        let [w00, w10, w01, w11] = self.w;
        let hi = w01.max(w10);
        let lo = w01.min(w10);
        if w00 > hi && lo > w11 {
            Ok(())
        } else {
            Err(ModelError::UnrealisticWelfare)
        }
    }

    pub fn value(&self, cell: OutcomeCell) -> f64 {
        self.w[cell.index()]
    }

    pub fn values(&self) -> [f64; 4] {
        self.w
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, ModelError> {
        Self::new(self.w.map(|v| v * factor))
    }
}

/// Expected treatment cost `E[g(t)]` for each dose, in welfare units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    g: Vec<f64>,
}

impl CostSpec {
    pub fn new(grid: &DoseGrid, g: Vec<f64>) -> Result<Self, ModelError> {
        if g.len() != grid.dose_count() {
            return Err(ModelError::Length { expected: grid.dose_count(), actual: g.len() });
        }
        if let Some(index) = g.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { index });
        }
        Ok(Self { g })
    }

    /// Like [`CostSpec::new`] but requires non-negative, weakly increasing costs.
    pub fn strict(grid: &DoseGrid, g: Vec<f64>) -> Result<Self, ModelError> {
        let spec = Self::new(grid, g)?;
        spec.check_realistic()?;
        Ok(spec)
    }

    pub fn zero(grid: &DoseGrid) -> Self {
        Self { g: vec![0.0; grid.dose_count()] }
    }

    /// `g(t) = slope * t`.
    pub fn linear(grid: &DoseGrid, slope: f64) -> Result<Self, ModelError> {
        Self::new(grid, grid.doses().map(|t| slope * t as f64).collect())
    }

    pub fn check_realistic(&self) -> Result<(), ModelError> {
        let mut previous = 0.0;
        for (dose, &cost) in self.g.iter().enumerate() {
            if cost < previous {
                return Err(ModelError::UnrealisticCost { dose });
            }
            previous = cost;
        }
        Ok(())
    }

    pub fn at(&self, dose: usize) -> f64 {
        self.g[dose]
    }

    pub fn values(&self) -> &[f64] {
        &self.g
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { g: self.g.iter().map(|v| v * factor).collect() }
    }
}

/// One arm of a dose trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialArm {
    pub dose: usize,
    pub outcomes: OutcomeDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<u64>,
}

impl TrialArm {
    pub fn new(dose: usize, outcomes: OutcomeDistribution) -> Self {
        Self { dose, outcomes, sample_size: None }
    }

    pub fn with_sample_size(mut self, n: u64) -> Self {
        self.sample_size = Some(n);
        self
    }
}

/// Outcome distributions revealed at the `K` trial doses, sorted by dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEvidence {
    grid: DoseGrid,
    arms: Vec<TrialArm>,
}

impl TrialEvidence {
    /// Sorts arms by dose and rejects empty, oversized, duplicated or
    /// out-of-range designs.
    pub fn new(grid: DoseGrid, mut arms: Vec<TrialArm>) -> Result<Self, ModelError> {
        if arms.is_empty() || arms.len() > grid.dose_count() {
            return Err(ModelError::ArmCount { actual: arms.len(), max: grid.dose_count() });
        }
        for arm in &arms {
            grid.check_dose(arm.dose)?;
            if arm.sample_size == Some(0) {
                return Err(ModelError::ZeroSampleSize);
            }
        }
        arms.sort_by_key(|a| a.dose);
        if let Some(pair) = arms.windows(2).find(|w| w[0].dose == w[1].dose) {
            return Err(ModelError::DuplicateDose(pair[0].dose));
        }
        Ok(Self { grid, arms })
    }

    /// Evidence a full-population trial would reveal at `doses` if `q` were true.
    pub fn from_threshold_distribution(
        q: &ThresholdDistribution,
        doses: &[usize],
    ) -> Result<Self, ModelError> {
        let grid = *q.grid();
        let arms = doses
            .iter()
            .map(|&t| Ok(TrialArm::new(t, push_forward(q, t)?)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        Self::new(grid, arms)
    }

    pub fn grid(&self) -> &DoseGrid {
        &self.grid
    }

    pub fn arms(&self) -> &[TrialArm] {
        &self.arms
    }

    pub fn doses(&self) -> Vec<usize> {
        self.arms.iter().map(|a| a.dose).collect()
    }

    pub fn arm_at(&self, dose: usize) -> Option<&TrialArm> {
        self.arms.iter().find(|a| a.dose == dose)
    }
}

/// Sum of `q(h, i)` over `h in hs`, `i in is`.
fn block_sum(
    q: &ThresholdDistribution,
    hs: std::ops::Range<usize>,
    is: std::ops::Range<usize>,
) -> f64 {
    hs.map(|h| is.clone().map(|i| q.get(h, i)).sum::<f64>()).sum()
}

/// Outcome distribution at `dose` implied by threshold distribution `q`.
///
/// Each cell is a quadrant sum of `q`: `(0,0)` is `t_d <= t < t_e`, `(1,0)` is
/// `t_d > t, t_e > t`, `(0,1)` is `t_d <= t, t_e <= t` and `(1,1)` is
/// `t_d > t >= t_e`.
pub fn push_forward(q: &ThresholdDistribution, dose: usize) -> Result<OutcomeDistribution, ModelError> {
    let grid = q.grid();
    grid.check_dose(dose)?;
    let n = grid.support_len();
    let low = 0..dose + 1;
    let high = dose + 1..n;
    let p = [
        block_sum(q, low.clone(), high.clone()),
        block_sum(q, high.clone(), high.clone()),
        block_sum(q, low.clone(), low.clone()),
        block_sum(q, high, low),
    ];
    Ok(OutcomeDistribution::from_parts_unchecked(p))
}

/// `sum_cells w(cell) * p(cell)`, without cost.
pub fn expected_welfare(p: &OutcomeDistribution, w: &WelfareSpec) -> f64 {
    OutcomeCell::ALL.iter().map(|&c| w.value(c) * p.prob(c)).sum()
}

/// A linear functional `q -> sum_{h,i} coeffs(h,i) q(h,i) + offset` on
/// threshold distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFunctional {
    grid: DoseGrid,
    coeffs: Vec<f64>,
    offset: f64,
}

impl ThresholdFunctional {
    pub fn new(grid: DoseGrid, coeffs: Vec<f64>, offset: f64) -> Result<Self, ModelError> {
        if coeffs.len() != grid.cell_count() {
            return Err(ModelError::Length { expected: grid.cell_count(), actual: coeffs.len() });
        }
        if let Some(index) = coeffs.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { index });
        }
        Ok(Self { grid, coeffs, offset })
    }

    pub fn from_fn(grid: DoseGrid, f: impl Fn(usize, usize) -> f64) -> Result<Self, ModelError> {
        let n = grid.support_len();
        let coeffs = (0..n).flat_map(|h| (0..n).map(move |i| (h, i))).map(|(h, i)| f(h, i)).collect();
        Self::new(grid, coeffs, 0.0)
    }

    /// Indicator of the set of threshold pairs producing `cell` at `dose`.
    pub fn outcome_indicator(grid: DoseGrid, dose: usize, cell: OutcomeCell) -> Result<Self, ModelError> {
        grid.check_dose(dose)?;
        Self::from_fn(grid, |h, i| if cell_at(dose, h, i) == cell { 1.0 } else { 0.0 })
    }

    pub fn grid(&self) -> &DoseGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, t_d: usize, t_e: usize) -> f64 {
        self.coeffs[self.grid.index(t_d, t_e)]
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn evaluate(&self, q: &ThresholdDistribution) -> f64 {
        debug_assert_eq!(q.grid(), &self.grid);
        self.coeffs.iter().zip(q.as_slice()).map(|(c, m)| c * m).sum::<f64>() + self.offset
    }

    /// `self - other`, including offsets.
    pub fn minus(&self, other: &Self) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
            offset: self.offset - other.offset,
        }
    }

    /// `sum_k weights[k] * parts[k]`.
    pub fn combination(grid: DoseGrid, parts: &[&Self], weights: &[f64]) -> Self {
        let mut coeffs = vec![0.0; grid.cell_count()];
        let mut offset = 0.0;
        for (part, &weight) in parts.iter().zip(weights) {
            if weight == 0.0 {
                continue;
            }
            for (acc, c) in coeffs.iter_mut().zip(&part.coeffs) {
                *acc += weight * c;
            }
            offset += weight * part.offset;
        }
        Self { grid, coeffs, offset }
    }
}

/// Coefficients `c_t(h, i) = w(outcome at t)` with offset `-g(t)`, so that net
/// welfare at `dose` is linear in `q`.
pub fn net_welfare_coefficients(
    grid: &DoseGrid,
    dose: usize,
    w: &WelfareSpec,
    g: &CostSpec,
) -> Result<ThresholdFunctional, ModelError> {
    grid.check_dose(dose)?;
    if g.values().len() != grid.dose_count() {
        return Err(ModelError::Length { expected: grid.dose_count(), actual: g.values().len() });
    }
    let mut f = ThresholdFunctional::from_fn(*grid, |h, i| w.value(cell_at(dose, h, i)))?;
    f.offset = -g.at(dose);
    Ok(f)
}

/// Net welfare `E{w[d(t), e(t)]} - E[g(t)]` at every dose under `q`.
pub fn net_welfare_profile(
    q: &ThresholdDistribution,
    w: &WelfareSpec,
    g: &CostSpec,
) -> Result<Vec<f64>, ModelError> {
    q.grid()
        .doses()
        .map(|t| Ok(expected_welfare(&push_forward(q, t)?, w) - g.at(t)))
        .collect()
}
