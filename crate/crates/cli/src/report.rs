//! Result documents (JSON) and their plain-text rendering.

use std::fmt::Write as _;

use dosechoice::illustration::GoldenCheck;
use dosechoice::identification::MonotoneViolation;
use dosechoice::{AllocationMethod, Interval, OutcomeCell, RegretReport};
use serde::{Deserialize, Serialize};

use crate::problem::ProblemFile;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub echo: Option<Echo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bounds: Vec<DoseBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub independence: Vec<IndependenceBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<RegretReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<GoldenCheck>,
    pub diagnostics: Diagnostics,
}

impl ResultDocument {
    pub fn new(command: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            echo: None,
            consistency: None,
            bounds: Vec::new(),
            independence: Vec::new(),
            decision: None,
            simulation: None,
            checks: Vec::new(),
            diagnostics: Diagnostics::default(),
        }
    }
}

/// Inputs as interpreted: probabilities after parsing, raw counts kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Echo {
    pub problem: ProblemFile,
    pub cost: Vec<f64>,
    pub arms: Vec<EchoArm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoArm {
    pub dose: usize,
    pub probabilities: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyBlock {
    pub consistent: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<MonotoneViolation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Vec<f64>>,
    /// Feasible threshold distribution as `T + 2` rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub independence_refuted: Option<Refutation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refutation {
    pub dose: usize,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseBlock {
    pub dose: usize,
    pub tested: bool,
    /// Cell intervals in order (0,0), (1,0), (0,1), (1,1).
    pub outcomes: [Interval; 4],
    pub net_welfare: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceBlock {
    pub dose: usize,
    pub disease: Interval,
    pub adverse: Interval,
    pub net_welfare: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionBlock {
    Clinical {
        chosen_dose: usize,
        mmr_value: f64,
        per_dose_max_regret: Vec<f64>,
        min_raw_regret: f64,
    },
    Allocation {
        allocation: Vec<f64>,
        mmr_value: f64,
        method: AllocationMethod,
        grid_step: f64,
        /// `(welfare range) × grid_step`; zero for the closed form.
        value_tolerance: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        closed_form_value: Option<f64>,
        candidates_evaluated: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub lp_solves: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

fn interval(i: &Interval, digits: usize) -> String {
    format!("[{:.*}, {:.*}]", digits, i.lo, digits, i.hi)
}

/// Human-readable report: 4 decimals for probabilities and welfare, 3 for regrets.
pub fn render_text(doc: &ResultDocument) -> String {
    let mut out = String::new();
    if let Some(echo) = &doc.echo {
        let _ = writeln!(out, "doses 0..={}, welfare {:?}", echo.problem.max_dose, echo.problem.welfare);
        let _ = writeln!(out, "cost {:?}", echo.cost);
        if !echo.problem.restrictions.is_empty() {
            let _ = writeln!(out, "restrictions: {}", echo.problem.restrictions.join(", "));
        }
        for arm in &echo.arms {
            let p: Vec<String> = arm.probabilities.iter().map(|v| format!("{v:.4}")).collect();
            let n = arm.sample_size.map(|n| format!("  N = {n}")).unwrap_or_default();
            let _ = writeln!(out, "arm at dose {}: ({}){n}", arm.dose, p.join(", "));
        }
        out.push('\n');
    }
    if let Some(c) = &doc.consistency {
        let _ = writeln!(out, "{}", if c.consistent { "consistent" } else { "inconsistent" });
        for v in &c.violations {
            let _ = writeln!(
                out,
                "  {:?}: dose {} has {:.4}, dose {} has {:.4}",
                v.condition, v.lower_dose, v.lower_value, v.upper_dose, v.upper_value
            );
        }
        if let Some(r) = &c.independence_refuted {
            let _ = writeln!(out, "  independence refuted at dose {} (deviation {:.2e})", r.dose, r.deviation);
        }
    }
    if !doc.bounds.is_empty() {
        let _ = writeln!(out, "dose  cell   interval");
        for b in &doc.bounds {
            for cell in OutcomeCell::ALL {
                let _ = writeln!(out, "{:>4}  p{}  {}", b.dose, cell.label(), interval(&b.outcomes[cell.index()], 4));
            }
            let tag = if b.tested { "  (tested)" } else { "" };
            let _ = writeln!(out, "{:>4}  ω       {}{tag}", b.dose, interval(&b.net_welfare, 4));
        }
    }
    if !doc.independence.is_empty() {
        let _ = writeln!(out, "independence bounds");
        for b in &doc.independence {
            let _ = writeln!(
                out,
                "{:>4}  p[d=1] {}  p[e=1] {}  ω {}",
                b.dose,
                interval(&b.disease, 4),
                interval(&b.adverse, 4),
                interval(&b.net_welfare, 4)
            );
        }
    }
    match &doc.decision {
        Some(DecisionBlock::Clinical { chosen_dose, mmr_value, per_dose_max_regret, .. }) => {
            let _ = writeln!(out, "clinical MMR dose {chosen_dose}, max regret {mmr_value:.3}");
            let r: Vec<String> = per_dose_max_regret.iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(out, "max regret by dose: {}", r.join(", "));
        }
        Some(DecisionBlock::Allocation { allocation, mmr_value, method, grid_step, value_tolerance, .. }) => {
            let a: Vec<String> = allocation.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(out, "MMR allocation ({}), max regret {mmr_value:.3}", a.join(", "));
            match method {
                AllocationMethod::AnalyticalT2 => {
                    let _ = writeln!(out, "method: analytical_t2");
                }
                AllocationMethod::Grid => {
                    let _ = writeln!(out, "method: grid, step {grid_step}, value within {value_tolerance:.3}");
                }
            }
        }
        None => {}
    }
    if let Some(sim) = &doc.simulation {
        let _ = writeln!(out, "replications {} (seed {}), inconsistent {}", sim.replications, sim.seed, sim.inconsistent.len());
        if let Some(s) = &sim.summary {
            let _ = writeln!(
                out,
                "regret mean {:.3}  median {:.3}  q90 {:.3}  q99 {:.3}  max {:.3}",
                s.mean, s.q50, s.q90, s.q99, s.max
            );
        }
        for (label, f) in &sim.decision_frequency {
            let _ = writeln!(out, "  {label}: {f:.4}");
        }
    }
    for c in &doc.checks {
        let _ = writeln!(
            out,
            "{}  {}: expected {}, got {:.4} (tol {})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.expected,
            c.actual,
            c.tolerance
        );
    }
    let d = &doc.diagnostics;
    if let (Some(cols), Some(rows), Some(rank)) = (d.columns, d.constraint_rows, d.rank) {
        let _ = writeln!(out, "\n{cols} columns, {rows} rows, rank {rank}, {} LP solves", d.lp_solves);
    }
    if let Some(r) = d.repair_distance {
        let _ = writeln!(out, "evidence repaired, sup-norm shift {r:.4}");
    }
    if let Some(ms) = d.elapsed_ms {
        let _ = writeln!(out, "elapsed {ms:.1} ms");
    }
    out
}
