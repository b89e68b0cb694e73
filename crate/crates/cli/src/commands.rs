use std::path::Path;

use anyhow::{bail, Result};
use dosechoice::decision::net_welfare_bounds;
use dosechoice::identification::{dose_bounds, IdentificationError};
use dosechoice::illustration;
use dosechoice::trial::decide_from_evidence;
use dosechoice::{
    build_constraints, check_consistency, independence_bounds, simulate_regret, AllocationMethod, AsIfOptions,
    Consistency, ConstraintSystem, CostSpec, Decision, DecisionMode, DoseGrid, Restrictions, TrialError,
    TrialEvidence, WelfareSpec,
};

use crate::problem::{ModeInput, ProblemFile, SearchInput};
use crate::report::{
    ConsistencyBlock, DecisionBlock, DoseBlock, Echo, EchoArm, IndependenceBlock, Refutation, ResultDocument,
};

/// What the process should report besides the document itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    /// Evidence contradicts the model; exit code 2.
    Inconsistent,
    /// A reference check failed; exit code 1.
    ChecksFailed,
}

struct Loaded {
    problem: ProblemFile,
    grid: DoseGrid,
    welfare: WelfareSpec,
    cost: CostSpec,
    restrictions: Restrictions,
    evidence: TrialEvidence,
}

impl Loaded {
    fn new(problem: ProblemFile, records: Option<&Path>) -> Result<Self> {
        Ok(Self {
            grid: problem.grid()?,
            welfare: problem.welfare_spec()?,
            cost: problem.cost_spec()?,
            restrictions: problem.restriction_flags()?,
            evidence: problem.evidence(records)?,
            problem,
        })
    }

    /// Restrictions that enter the LP; independence is handled separately.
    fn linear(&self) -> Restrictions {
        Restrictions { independence: false, ..self.restrictions }
    }

    fn echo(&self, records: Option<&Path>, evidence: &TrialEvidence) -> Echo {
        Echo {
            problem: self.problem.clone(),
            cost: self.cost.values().to_vec(),
            arms: evidence
                .arms()
                .iter()
                .map(|a| EchoArm { dose: a.dose, probabilities: a.outcomes.probs(), sample_size: a.sample_size })
                .collect(),
            records_file: records.map(|p| p.display().to_string()),
        }
    }

    fn refutation(&self) -> Result<Option<Refutation>> {
        if !self.restrictions.independence {
            return Ok(None);
        }
        match independence_bounds(&self.evidence, &self.grid, 0, &self.welfare, &self.cost) {
            Ok(_) => Ok(None),
            Err(IdentificationError::RestrictionRefuted { dose, deviation }) => Ok(Some(Refutation { dose, deviation })),
            Err(e) => Err(e.into()),
        }
    }
}

fn structure(doc: &mut ResultDocument, cs: &ConstraintSystem) {
    doc.diagnostics.columns = Some(cs.num_columns());
    doc.diagnostics.constraint_rows = Some(cs.rows().len());
    doc.diagnostics.rank = Some(cs.rank());
}

fn consistency_block(c: Consistency, grid: &DoseGrid) -> ConsistencyBlock {
    match c {
        Consistency::Consistent { witness } => ConsistencyBlock {
            consistent: true,
            violations: Vec::new(),
            certificate: None,
            witness: Some(witness.as_slice().chunks(grid.support_len()).map(<[f64]>::to_vec).collect()),
            independence_refuted: None,
        },
        Consistency::Inconsistent { certificate, violations } => ConsistencyBlock {
            consistent: false,
            violations,
            certificate: Some(certificate),
            witness: None,
            independence_refuted: None,
        },
    }
}

pub fn check(problem: ProblemFile, records: Option<&Path>) -> Result<(ResultDocument, Verdict)> {
    let input = Loaded::new(problem, records)?;
    let mut doc = ResultDocument::new("check");
    doc.echo = Some(input.echo(records, &input.evidence));
    let cs = build_constraints(&input.evidence, input.linear(), &input.grid)?;
    structure(&mut doc, &cs);
    let verdict = check_consistency(&input.evidence, input.linear(), &input.grid)?;
    doc.diagnostics.lp_solves = 1;
    let mut block = consistency_block(verdict, &input.grid);
    block.independence_refuted = input.refutation()?;
    if block.independence_refuted.is_some() {
        block.consistent = false;
    }
    let ok = block.consistent;
    doc.consistency = Some(block);
    Ok((doc, if ok { Verdict::Ok } else { Verdict::Inconsistent }))
}

pub fn bounds(problem: ProblemFile, records: Option<&Path>, dose: Option<usize>) -> Result<(ResultDocument, Verdict)> {
    let input = Loaded::new(problem, records)?;
    let mut doc = ResultDocument::new("bounds");
    doc.echo = Some(input.echo(records, &input.evidence));
    let doses: Vec<usize> = match dose {
        Some(t) => {
            input.grid.check_dose(t)?;
            vec![t]
        }
        None => input.grid.doses().collect(),
    };
    let cs = build_constraints(&input.evidence, input.linear(), &input.grid)?;
    structure(&mut doc, &cs);
    if !cs.is_feasible()? {
        let verdict = check_consistency(&input.evidence, input.linear(), &input.grid)?;
        doc.consistency = Some(consistency_block(verdict, &input.grid));
        return Ok((doc, Verdict::Inconsistent));
    }
    let tested = input.evidence.doses();
    for &t in &doses {
        let b = dose_bounds(&cs, t, &input.welfare, &input.cost)?;
        doc.diagnostics.lp_solves += 10;
        doc.bounds.push(DoseBlock { dose: t, tested: tested.contains(&t), outcomes: b.outcomes, net_welfare: b.net_welfare });
    }
    if input.restrictions.independence {
        if let Some(refuted) = input.refutation()? {
            doc.consistency = Some(ConsistencyBlock {
                consistent: false,
                violations: Vec::new(),
                certificate: None,
                witness: None,
                independence_refuted: Some(refuted),
            });
            return Ok((doc, Verdict::Inconsistent));
        }
        for &t in &doses {
            let b = independence_bounds(&input.evidence, &input.grid, t, &input.welfare, &input.cost)?;
            doc.independence.push(IndependenceBlock {
                dose: t,
                disease: b.disease,
                adverse: b.adverse,
                net_welfare: b.net_welfare,
            });
        }
    }
    Ok((doc, Verdict::Ok))
}

pub fn decide(
    problem: ProblemFile,
    records: Option<&Path>,
    mode: ModeInput,
    resolution: Option<usize>,
    search: Option<SearchInput>,
) -> Result<(ResultDocument, Verdict)> {
    let input = Loaded::new(problem, records)?;
    if input.restrictions.independence {
        bail!("minimax-regret decisions under the independence restriction are not supported; use `bounds`");
    }
    let mut doc = ResultDocument::new("decide");
    let mode = match mode {
        ModeInput::Clinical => DecisionMode::Clinical,
        ModeInput::Allocation => DecisionMode::Allocation(input.problem.allocation_options(resolution, search)?),
    };
    let options = AsIfOptions { restrictions: input.restrictions, mode, repair: input.problem.options.repair };
    let outcome = match decide_from_evidence(&input.evidence, &input.welfare, &input.cost, &options) {
        Ok(o) => o,
        Err(TrialError::Inconsistent { .. }) => {
            doc.echo = Some(input.echo(records, &input.evidence));
            let verdict = check_consistency(&input.evidence, input.restrictions, &input.grid)?;
            doc.consistency = Some(consistency_block(verdict, &input.grid));
            return Ok((doc, Verdict::Inconsistent));
        }
        Err(e) => return Err(e.into()),
    };
    doc.echo = Some(input.echo(records, &input.evidence));
    doc.diagnostics.repair_distance = outcome.repair_distance;
    let cs = build_constraints(&outcome.evidence, input.restrictions, &input.grid)?;
    structure(&mut doc, &cs);
    let omega = net_welfare_bounds(&cs, &input.welfare, &input.cost)?;
    let tested = outcome.evidence.doses();
    for t in input.grid.doses() {
        let b = dose_bounds(&cs, t, &input.welfare, &input.cost)?;
        doc.bounds.push(DoseBlock { dose: t, tested: tested.contains(&t), outcomes: b.outcomes, net_welfare: b.net_welfare });
    }
    let range = omega.iter().map(|i| i.hi).fold(f64::NEG_INFINITY, f64::max)
        - omega.iter().map(|i| i.lo).fold(f64::INFINITY, f64::min);
    doc.decision = Some(match outcome.decision {
        Decision::Clinical(c) => {
            doc.diagnostics.lp_solves = c.lp_solves;
            DecisionBlock::Clinical {
                chosen_dose: c.chosen_dose,
                mmr_value: c.mmr_value,
                per_dose_max_regret: c.per_dose_max_regret,
                min_raw_regret: c.min_raw_regret,
            }
        }
        Decision::Allocation(a) => {
            doc.diagnostics.lp_solves = a.lp_solves;
            DecisionBlock::Allocation {
                allocation: a.allocation.shares().to_vec(),
                mmr_value: a.mmr_value,
                method: a.method,
                grid_step: a.grid_step,
                value_tolerance: if a.method == AllocationMethod::Grid { range * a.grid_step } else { 0.0 },
                closed_form_value: a.closed_form_value,
                candidates_evaluated: a.candidates_evaluated,
            }
        }
    });
    Ok((doc, Verdict::Ok))
}

pub fn simulate(problem: ProblemFile, replications: Option<usize>, seed: Option<u64>) -> Result<(ResultDocument, Verdict)> {
    let welfare = problem.welfare_spec()?;
    let cost = problem.cost_spec()?;
    let restrictions = problem.restriction_flags()?;
    if restrictions.independence {
        bail!("simulation under the independence restriction is not supported");
    }
    let (q, design, sim) = problem.simulation_inputs()?;
    let mode = match sim.mode {
        ModeInput::Clinical => DecisionMode::Clinical,
        ModeInput::Allocation => DecisionMode::Allocation(problem.allocation_options(None, None)?),
    };
    let options = AsIfOptions { restrictions, mode, repair: problem.options.repair };
    let reps = replications.unwrap_or(sim.replications);
    let seed = seed.or(sim.seed).or(problem.options.seed).unwrap_or(0);
    let report = simulate_regret(&q, &design, &welfare, &cost, &options, reps, seed)?;
    let mut doc = ResultDocument::new("simulate");
    doc.echo = Some(Echo { problem: problem.clone(), cost: cost.values().to_vec(), arms: Vec::new(), records_file: None });
    doc.simulation = Some(report);
    Ok((doc, Verdict::Ok))
}

pub fn illustrate(perturb_welfare: Option<f64>) -> Result<(ResultDocument, Verdict)> {
    let mut w = illustration::welfare().values();
    if let Some(delta) = perturb_welfare {
        w[0] += delta;
    }
    let checks = illustration::run_illustration(&WelfareSpec::new(w)?)?;
    let mut doc = ResultDocument::new("illustrate");
    let failed = checks.iter().any(|c| !c.passed);
    doc.checks = checks;
    Ok((doc, if failed { Verdict::ChecksFailed } else { Verdict::Ok }))
}
