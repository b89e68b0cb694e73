//! Subject-level trial data, plug-in ("as-if") decisions and Monte Carlo
//! evaluation of their regret.
//!
//! Records are delimited text with header `dose,d,e[,id]`. Every row must
//! parse; malformed rows are reported, never skipped.
//!
//! Simulation draws each replication from its own ChaCha8 stream:
//! `ChaCha8Rng::seed_from_u64(seed)` with `set_stream(replication_index)`.
//! Arm samples are multinomial counts built from sequential binomial draws
//! over the cells in canonical order. The same seed therefore reproduces the
//! same report regardless of how replications are scheduled.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::{AllocationDecision, AllocationOptions, ClinicalDecision, DecisionError, RegretModel};
use crate::identification::{
    build_constraints, monotone_violations, IdentificationError, MonotoneViolation, Restrictions, RowTag,
};
use crate::linprog::{self, LinearProgram, LpOutcome};
use crate::model::{
    net_welfare_profile, push_forward, CostSpec, DoseGrid, ModelError, OutcomeCell, OutcomeDistribution,
    ThresholdDistribution, TrialArm, TrialEvidence, WelfareSpec,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrialError {
    #[error("record {record}: {message}")]
    Ingest { record: usize, message: String },
    #[error("no subject records")]
    Empty,
    #[error("malformed delimited input: {0}")]
    Format(String),
    #[error("invalid trial design: {0}")]
    Design(String),
    #[error("evidence is inconsistent with monotone dose response ({} monotonicity violations); enable repair to project it", violations.len())]
    Inconsistent { violations: Vec<MonotoneViolation> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Identification(#[from] IdentificationError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Lp(#[from] linprog::LpError),
}

/// One trial subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub arm_dose: usize,
    pub d: u8,
    pub e: u8,
    pub id: Option<String>,
}

impl SubjectRecord {
    pub fn new(arm_dose: usize, cell: OutcomeCell) -> Self {
        let (d, e) = cell.flags();
        Self { arm_dose, d, e, id: None }
    }

    pub fn cell(&self) -> Option<OutcomeCell> {
        match (self.d, self.e) {
            (0 | 1, 0 | 1) => Some(OutcomeCell::from_flags(self.d == 1, self.e == 1)),
            _ => None,
        }
    }
}

fn parse_flag(raw: &str, name: &str, record: usize) -> Result<u8, TrialError> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(TrialError::Ingest { record, message: format!("field `{name}` must be 0 or 1, got `{other}`") }),
    }
}

/// Reads `dose,d,e[,id]` records. Record numbers in errors are 1-based data rows.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<SubjectRecord>, TrialError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| TrialError::Format(e.to_string()))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let with_id = match names.as_slice() {
        ["dose", "d", "e"] => false,
        ["dose", "d", "e", "id"] => true,
        _ => return Err(TrialError::Format(format!("expected header `dose,d,e[,id]`, got `{}`", names.join(",")))),
    };
    let mut out = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let record = k + 1;
        let row = row.map_err(|e| TrialError::Ingest { record, message: e.to_string() })?;
        let expected = if with_id { 4 } else { 3 };
        if row.len() != expected {
            return Err(TrialError::Ingest { record, message: format!("expected {expected} fields, got {}", row.len()) });
        }
        let arm_dose = row[0]
            .parse::<usize>()
            .map_err(|_| TrialError::Ingest { record, message: format!("dose `{}` is not a non-negative integer", &row[0]) })?;
        let d = parse_flag(&row[1], "d", record)?;
        let e = parse_flag(&row[2], "e", record)?;
        let id = if with_id && !row[3].is_empty() { Some(row[3].to_string()) } else { None };
        out.push(SubjectRecord { arm_dose, d, e, id });
    }
    Ok(out)
}

/// Writes records with the header `dose,d,e` (plus `id` if any record has one).
pub fn write_records<W: Write>(writer: W, records: &[SubjectRecord]) -> Result<(), TrialError> {
    let with_id = records.iter().any(|r| r.id.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| TrialError::Format(e.to_string());
    if with_id {
        wtr.write_record(["dose", "d", "e", "id"]).map_err(io)?;
    } else {
        wtr.write_record(["dose", "d", "e"]).map_err(io)?;
    }
    for r in records {
        let mut fields = vec![r.arm_dose.to_string(), r.d.to_string(), r.e.to_string()];
        if with_id {
            fields.push(r.id.clone().unwrap_or_default());
        }
        wtr.write_record(&fields).map_err(io)?;
    }
    wtr.flush().map_err(|e| TrialError::Format(e.to_string()))
}

/// Empirical evidence: one arm per distinct dose with cell frequencies.
pub fn ingest(records: &[SubjectRecord], grid: &DoseGrid) -> Result<TrialEvidence, TrialError> {
    if records.is_empty() {
        return Err(TrialError::Empty);
    }
    let mut counts: BTreeMap<usize, [u64; 4]> = BTreeMap::new();
    for (k, r) in records.iter().enumerate() {
        let record = k + 1;
        if r.arm_dose > grid.max_dose() {
            return Err(TrialError::Ingest {
                record,
                message: format!("dose {} outside 0..={}", r.arm_dose, grid.max_dose()),
            });
        }
        let cell = r.cell().ok_or_else(|| TrialError::Ingest {
            record,
            message: format!("outcomes must be binary, got d={} e={}", r.d, r.e),
        })?;
        counts.entry(r.arm_dose).or_insert([0; 4])[cell.index()] += 1;
    }
    evidence_from_counts(grid, &counts)
}

/// Evidence from per-dose cell counts.
pub fn evidence_from_counts(grid: &DoseGrid, counts: &BTreeMap<usize, [u64; 4]>) -> Result<TrialEvidence, TrialError> {
    let arms = counts
        .iter()
        .map(|(&dose, &c)| {
            let n: u64 = c.iter().sum();
            Ok(TrialArm::new(dose, OutcomeDistribution::from_counts(c)?).with_sample_size(n))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(TrialEvidence::new(*grid, arms)?)
}

/// Arm doses and sample sizes of a trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialDesign {
    doses: Vec<usize>,
    sizes: Vec<u64>,
}

impl TrialDesign {
    pub fn new(grid: &DoseGrid, doses: Vec<usize>, sizes: Vec<u64>) -> Result<Self, TrialError> {
        if doses.is_empty() || doses.len() != sizes.len() {
            return Err(TrialError::Design(format!("{} doses but {} arm sizes", doses.len(), sizes.len())));
        }
        if doses.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TrialError::Design("arm doses must be strictly increasing".into()));
        }
        if let Some(&d) = doses.iter().find(|&&d| d > grid.max_dose()) {
            return Err(TrialError::Design(format!("dose {d} outside 0..={}", grid.max_dose())));
        }
        if sizes.contains(&0) {
            return Err(TrialError::Design("arm sizes must be positive".into()));
        }
        Ok(Self { doses, sizes })
    }

    pub fn doses(&self) -> &[usize] {
        &self.doses
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DecisionMode {
    Clinical,
    Allocation(AllocationOptions),
}

/// Settings shared by plug-in decisions and their simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsIfOptions {
    pub restrictions: Restrictions,
    pub mode: DecisionMode,
    /// Project inconsistent empirical evidence onto the nearest consistent
    /// evidence (sup-norm) instead of failing.
    pub repair: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Decision {
    Clinical(ClinicalDecision),
    Allocation(AllocationDecision),
}

impl Decision {
    /// Net welfare achieved under the true per-dose welfare `omega`.
    pub fn achieved(&self, omega: &[f64]) -> f64 {
        match self {
            Decision::Clinical(c) => omega[c.chosen_dose],
            Decision::Allocation(a) => a.allocation.shares().iter().zip(omega).map(|(s, w)| s * w).sum(),
        }
    }

    pub fn mmr_value(&self) -> f64 {
        match self {
            Decision::Clinical(c) => c.mmr_value,
            Decision::Allocation(a) => a.mmr_value,
        }
    }

    /// Short key used for decision frequencies.
    pub fn label(&self) -> String {
        match self {
            Decision::Clinical(c) => format!("dose {}", c.chosen_dose),
            Decision::Allocation(a) => {
                let parts: Vec<String> = a.allocation.shares().iter().map(|s| format!("{s:.3}")).collect();
                format!("({})", parts.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsIfDecision {
    pub decision: Decision,
    /// Sup-norm distance moved by repair, when repair ran.
    pub repair_distance: Option<f64>,
    pub evidence: TrialEvidence,
}

/// Nearest (sup-norm) evidence consistent with monotone response and the
/// restrictions, and the distance moved.
pub fn repair_evidence(evidence: &TrialEvidence, restrictions: Restrictions) -> Result<(TrialEvidence, f64), TrialError> {
    let grid = *evidence.grid();
    let cs = build_constraints(evidence, restrictions, &grid)?;
    let n = grid.cell_count();
    let arm_rows: Vec<_> = cs.rows().iter().filter(|r| matches!(r.tag, RowTag::Arm { .. })).collect();
    let other_rows: Vec<_> = cs.rows().iter().filter(|r| !matches!(r.tag, RowTag::Arm { .. })).collect();
    let k = arm_rows.len();
    // columns: q (n) | eps | s_plus (k) | s_minus (k)
    let width = n + 1 + 2 * k;
    let mut a = Vec::with_capacity(other_rows.len() + 2 * k);
    let mut b = Vec::with_capacity(other_rows.len() + 2 * k);
    for row in &other_rows {
        let mut r = row.coeffs.clone();
        r.resize(width, 0.0);
        a.push(r);
        b.push(row.rhs);
    }
    for (j, row) in arm_rows.iter().enumerate() {
        let mut upper = row.coeffs.clone();
        upper.resize(width, 0.0);
        let mut lower = upper.clone();
        upper[n] = -1.0;
        upper[n + 1 + j] = 1.0;
        lower[n] = 1.0;
        lower[n + 1 + k + j] = -1.0;
        a.push(upper);
        b.push(row.rhs);
        a.push(lower);
        b.push(row.rhs);
    }
    let mut objective = vec![0.0; width];
    objective[n] = 1.0;
    let lp = LinearProgram::minimize(objective, a, b)?;
    let LpOutcome::Optimal(solution) = linprog::solve(&lp)? else {
        return Err(TrialError::Lp(linprog::LpError::Numerical("repair LP is not optimal".into())));
    };
    let q = ThresholdDistribution::normalized(grid, solution.point[..n].to_vec())?;
    let arms = evidence
        .arms()
        .iter()
        .map(|arm| {
            let mut repaired = TrialArm::new(arm.dose, push_forward(&q, arm.dose)?);
            repaired.sample_size = arm.sample_size;
            Ok(repaired)
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok((TrialEvidence::new(grid, arms)?, solution.value))
}

/// Plug-in decision treating `evidence` as exact.
pub fn decide_from_evidence(
    evidence: &TrialEvidence,
    w: &WelfareSpec,
    g: &CostSpec,
    options: &AsIfOptions,
) -> Result<AsIfDecision, TrialError> {
    let grid = *evidence.grid();
    let mut evidence = evidence.clone();
    let mut cs = build_constraints(&evidence, options.restrictions, &grid)?;
    let mut repair_distance = None;
    if !cs.is_feasible()? {
        if !options.repair {
            return Err(TrialError::Inconsistent { violations: monotone_violations(&evidence) });
        }
        let (repaired, distance) = repair_evidence(&evidence, options.restrictions)?;
        evidence = repaired;
        cs = build_constraints(&evidence, options.restrictions, &grid)?;
        repair_distance = Some(distance);
    }
    let model = RegretModel::new(&cs, w, g)?;
    let decision = match &options.mode {
        DecisionMode::Clinical => Decision::Clinical(model.clinical()?),
        DecisionMode::Allocation(opts) => Decision::Allocation(model.allocation(opts)?),
    };
    Ok(AsIfDecision { decision, repair_distance, evidence })
}

/// Ingests subject records and decides as if the empirical frequencies were exact.
pub fn as_if_decide(
    records: &[SubjectRecord],
    grid: &DoseGrid,
    w: &WelfareSpec,
    g: &CostSpec,
    options: &AsIfOptions,
) -> Result<AsIfDecision, TrialError> {
    let evidence = ingest(records, grid)?;
    decide_from_evidence(&evidence, w, g, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub mean: f64,
    pub max: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub replications: usize,
    pub seed: u64,
    /// True net welfare at each dose.
    pub true_net_welfare: Vec<f64>,
    /// `max_t ω_t - min_t ω_t`, an upper bound on any regret.
    pub welfare_range: f64,
    /// True regret of each decided replication, in replication order.
    pub regrets: Vec<f64>,
    /// Indices of replications whose evidence was inconsistent (repair off).
    pub inconsistent: Vec<usize>,
    /// Number of replications whose evidence was repaired.
    pub repaired: usize,
    pub summary: Option<RegretSummary>,
    /// Share of decided replications per decision.
    pub decision_frequency: BTreeMap<String, f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sample_counts(p: &OutcomeDistribution, n: u64, rng: &mut ChaCha8Rng) -> Result<[u64; 4], TrialError> {
    let probs = p.probs();
    let mut counts = [0u64; 4];
    let mut remaining_n = n;
    let mut remaining_p = 1.0f64;
    for k in 0..3 {
        if remaining_n == 0 {
            break;
        }
        let share = if remaining_p > 0.0 { (probs[k] / remaining_p).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(remaining_n, share)
            .map_err(|e| TrialError::Design(format!("binomial draw failed: {e}")))?
            .sample(rng);
        counts[k] = draw;
        remaining_n -= draw;
        remaining_p -= probs[k];
    }
    counts[3] = remaining_n;
    Ok(counts)
}

/// Draws one replication's empirical evidence.
pub fn sample_evidence(
    true_q: &ThresholdDistribution,
    design: &TrialDesign,
    seed: u64,
    replication: u64,
) -> Result<TrialEvidence, TrialError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    let mut counts = BTreeMap::new();
    for (&dose, &n) in design.doses().iter().zip(design.sizes()) {
        let p = push_forward(true_q, dose)?;
        counts.insert(dose, sample_counts(&p, n, &mut rng)?);
    }
    evidence_from_counts(true_q.grid(), &counts)
}

enum Replication {
    Decided { regret: f64, label: String, repaired: bool },
    Inconsistent,
}

/// Monte Carlo regret of the plug-in rule when `true_q` generates the data.
pub fn simulate_regret(
    true_q: &ThresholdDistribution,
    design: &TrialDesign,
    w: &WelfareSpec,
    g: &CostSpec,
    options: &AsIfOptions,
    replications: usize,
    seed: u64,
) -> Result<RegretReport, TrialError> {
    if replications == 0 {
        return Err(TrialError::Design("at least one replication is required".into()));
    }
    let omega = net_welfare_profile(true_q, w, g)?;
    let best = omega.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst = omega.iter().copied().fold(f64::INFINITY, f64::min);

    let results: Vec<Replication> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let evidence = sample_evidence(true_q, design, seed, rep as u64)?;
            match decide_from_evidence(&evidence, w, g, options) {
                Ok(out) => Ok(Replication::Decided {
                    regret: (best - out.decision.achieved(&omega)).max(0.0),
                    label: out.decision.label(),
                    repaired: out.repair_distance.is_some(),
                }),
                Err(TrialError::Inconsistent { .. }) => Ok(Replication::Inconsistent),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, TrialError>>()?;

    let mut regrets = Vec::new();
    let mut inconsistent = Vec::new();
    let mut repaired = 0;
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Replication::Decided { regret, label, repaired: fixed } => {
                regrets.push(regret);
                *tally.entry(label).or_default() += 1;
                repaired += usize::from(fixed);
            }
            Replication::Inconsistent => inconsistent.push(rep),
        }
    }
    let decided = regrets.len();
    let summary = (decided > 0).then(|| {
        let mut sorted = regrets.clone();
        sorted.sort_by(f64::total_cmp);
        RegretSummary {
            mean: regrets.iter().sum::<f64>() / decided as f64,
            max: sorted[decided - 1],
            q50: quantile(&sorted, 0.5),
            q90: quantile(&sorted, 0.9),
            q99: quantile(&sorted, 0.99),
        }
    });
    let decision_frequency = tally.into_iter().map(|(k, c)| (k, c as f64 / decided as f64)).collect();
    Ok(RegretReport {
        replications,
        seed,
        true_net_welfare: omega,
        welfare_range: best - worst,
        regrets,
        inconsistent,
        repaired,
        summary,
        decision_frequency,
    })
}
