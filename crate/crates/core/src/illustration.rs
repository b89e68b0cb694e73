//! Worked two-arm example: doses 0 and 2 tested, dose 1 untested, with the
//! reference welfare values and five cost schedules. [`run_illustration`]
//! recomputes every published number and reports each as a pass/fail check.

use serde::{Deserialize, Serialize};

use crate::decision::{DecisionError, RegretModel};
use crate::identification::{bound_net_welfare, bound_outcome_prob, build_constraints, Restrictions};
use crate::model::{
    expected_welfare, push_forward, CostSpec, DoseGrid, OutcomeCell, ThresholdDistribution, TrialEvidence,
    WelfareSpec,
};

pub const PUSH_FORWARD_TOL: f64 = 0.001;
pub const WELFARE_TOL: f64 = 0.001;
pub const COMPONENT_BOUND_TOL: f64 = 0.005;
pub const WELFARE_BOUND_TOL: f64 = 0.001;
pub const CLINICAL_VALUE_TOL: f64 = 0.001;
pub const ALLOCATION_TOL: f64 = 0.002;
pub const ALLOCATION_VALUE_TOL: f64 = 0.002;

/// Published outcome table, rows `t = 0, 1, 2`, canonical cell order.
pub const OUTCOME_TABLE: [[f64; 4]; 3] = [
    [0.25, 0.75, 0.0, 0.0],
    [0.333, 0.333, 0.167, 0.167],
    [0.25, 0.083, 0.5, 0.166],
];
pub const EXPECTED_WELFARE: [f64; 3] = [0.4375, 0.542, 0.6458];
/// Bounds on the four cells at `t = 1`, canonical order.
pub const DOSE_ONE_CELL_BOUNDS: [(f64, f64); 4] = [(0.0, 0.75), (0.083, 0.75), (0.0, 0.5), (0.0, 0.67)];
pub const DOSE_ONE_WELFARE_BOUNDS: (f64, f64) = (0.2708, 0.8125);

pub fn grid() -> DoseGrid {
    DoseGrid::new(2).expect("T = 2 is valid")
}

pub fn welfare() -> WelfareSpec {
    WelfareSpec::new([1.0, 0.25, 0.75, 0.0]).expect("finite welfare")
}

/// `q(h, 0) = 0` and `q(h, i) = 1/12` for `i >= 1`.
pub fn threshold_distribution() -> ThresholdDistribution {
    ThresholdDistribution::from_fn(grid(), |_, i| if i == 0 { 0.0 } else { 1.0 / 12.0 })
        .expect("uniform mass is a distribution")
}

pub fn evidence() -> TrialEvidence {
    TrialEvidence::from_threshold_distribution(&threshold_distribution(), &[0, 2]).expect("valid arms")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostScenario {
    pub name: &'static str,
    pub cost: Vec<f64>,
    pub clinical_dose: usize,
    pub clinical_value: f64,
    pub allocation: [f64; 3],
    pub allocation_value: f64,
}

pub fn scenarios() -> Vec<CostScenario> {
    let linear = |slope: f64| vec![0.0, slope, 2.0 * slope];
    vec![
        CostScenario {
            name: "g(t) = 0",
            cost: linear(0.0),
            clinical_dose: 2,
            clinical_value: 0.167,
            allocation: [0.0, 0.308, 0.692],
            allocation_value: 0.116,
        },
        CostScenario {
            name: "g(t) = 0.05t",
            cost: linear(0.05),
            clinical_dose: 2,
            clinical_value: 0.217,
            allocation: [0.0, 0.4, 0.6],
            allocation_value: 0.13,
        },
        CostScenario {
            name: "g(t) = 0.1t",
            cost: linear(0.1),
            clinical_dose: 2,
            clinical_value: 0.267,
            allocation: [0.0, 0.49, 0.51],
            allocation_value: 0.136,
        },
        CostScenario {
            name: "g(t) = 0.15t",
            cost: linear(0.15),
            clinical_dose: 0,
            clinical_value: 0.225,
            allocation: [0.59, 0.41, 0.0],
            allocation_value: 0.132,
        },
        CostScenario {
            name: "g = (0, 0, 0.30)",
            cost: vec![0.0, 0.0, 0.30],
            clinical_dose: 1,
            clinical_value: 0.167,
            allocation: [0.308, 0.692, 0.0],
            allocation_value: 0.115,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCheck {
    pub name: String,
    pub expected: f64,
    pub actual: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Whether the value depends on the welfare specification.
    pub welfare_dependent: bool,
}

impl GoldenCheck {
    fn new(name: String, expected: f64, actual: f64, tolerance: f64, welfare_dependent: bool) -> Self {
        let passed = (actual - expected).abs() <= tolerance + 1e-12;
        Self { name, expected, actual, tolerance, passed, welfare_dependent }
    }
}

/// Runs the full example with welfare `w` in place of the reference values.
pub fn run_illustration(w: &WelfareSpec) -> Result<Vec<GoldenCheck>, DecisionError> {
    let grid = grid();
    let q = threshold_distribution();
    let mut checks = Vec::new();

    for t in grid.doses() {
        let p = push_forward(&q, t)?;
        for cell in OutcomeCell::ALL {
            checks.push(GoldenCheck::new(
                format!("p{} at t={t}", cell.label()),
                OUTCOME_TABLE[t][cell.index()],
                p.prob(cell),
                PUSH_FORWARD_TOL,
                false,
            ));
        }
    }
    for t in grid.doses() {
        let e = expected_welfare(&push_forward(&q, t)?, w);
        checks.push(GoldenCheck::new(format!("E[w] at t={t}"), EXPECTED_WELFARE[t], e, WELFARE_TOL, true));
    }

    let cs = build_constraints(&evidence(), Restrictions::none(), &grid)?;
    for cell in OutcomeCell::ALL {
        let b = bound_outcome_prob(&cs, 1, cell)?;
        let (lo, hi) = DOSE_ONE_CELL_BOUNDS[cell.index()];
        checks.push(GoldenCheck::new(format!("p{} at t=1 lower", cell.label()), lo, b.lo, COMPONENT_BOUND_TOL, false));
        checks.push(GoldenCheck::new(format!("p{} at t=1 upper", cell.label()), hi, b.hi, COMPONENT_BOUND_TOL, false));
    }
    let b = bound_net_welfare(&cs, 1, w, &CostSpec::zero(&grid))?;
    checks.push(GoldenCheck::new("ω1 lower".into(), DOSE_ONE_WELFARE_BOUNDS.0, b.lo, WELFARE_BOUND_TOL, true));
    checks.push(GoldenCheck::new("ω1 upper".into(), DOSE_ONE_WELFARE_BOUNDS.1, b.hi, WELFARE_BOUND_TOL, true));

    for s in scenarios() {
        let cost = CostSpec::new(&grid, s.cost.clone())?;
        let model = RegretModel::new(&cs, w, &cost)?;
        let clinical = model.clinical()?;
        checks.push(GoldenCheck::new(
            format!("{}: clinical dose", s.name),
            s.clinical_dose as f64,
            clinical.chosen_dose as f64,
            0.0,
            true,
        ));
        checks.push(GoldenCheck::new(
            format!("{}: clinical MMR value", s.name),
            s.clinical_value,
            clinical.mmr_value,
            CLINICAL_VALUE_TOL,
            true,
        ));
        let alloc = model.allocation_analytical()?;
        for (t, &expected) in s.allocation.iter().enumerate() {
            checks.push(GoldenCheck::new(
                format!("{}: allocation share t={t}", s.name),
                expected,
                alloc.allocation.share(t),
                ALLOCATION_TOL,
                true,
            ));
        }
        checks.push(GoldenCheck::new(
            format!("{}: allocation MMR value", s.name),
            s.allocation_value,
            alloc.mmr_value,
            ALLOCATION_VALUE_TOL,
            true,
        ));
    }
    Ok(checks)
}
