//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::ExitCode;
use std::time::Instant;

use dosechoice::decision::net_welfare_bounds;
use dosechoice::identification::IdentificationError;
use dosechoice::illustration;
use dosechoice::{
    allocation_mmr, bound_linear, bound_net_welfare, bound_outcome_prob, build_constraints, clinical_mmr,
    expected_welfare, independence_bounds, push_forward, simulate_regret, AllocationOptions, AsIfOptions,
    ConstraintSystem, CostSpec, DecisionMode, DoseGrid, GridSearch, OutcomeCell, OutcomeDistribution, RegretModel,
    Restrictions, ThresholdDistribution, ThresholdFunctional, TrialArm, TrialDesign, TrialEvidence, WelfareSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn new() -> Self {
        Self { failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }

    fn close(&mut self, expected: f64, actual: f64, tol: f64, name: &str) {
        self.check((actual - expected).abs() <= tol, || {
            format!("{name}: expected {expected} ± {tol}, got {actual:.6}")
        });
    }
}

fn paper_welfare() -> WelfareSpec {
    WelfareSpec::new([1.0, 0.25, 0.75, 0.0]).unwrap()
}

fn illustration_q() -> ThresholdDistribution {
    let grid = DoseGrid::new(2).unwrap();
    ThresholdDistribution::from_fn(grid, |_, i| if i == 0 { 0.0 } else { 1.0 / 12.0 }).unwrap()
}

fn illustration_system() -> ConstraintSystem {
    let q = illustration_q();
    let ev = TrialEvidence::from_threshold_distribution(&q, &[0, 2]).unwrap();
    build_constraints(&ev, Restrictions::none(), q.grid()).unwrap()
}

struct Scenario {
    name: &'static str,
    cost: [f64; 3],
    clinical_dose: usize,
    clinical_value: f64,
    allocation: [f64; 3],
    allocation_value: f64,
}

const SCENARIOS: [Scenario; 5] = [
    Scenario { name: "g=0", cost: [0.0, 0.0, 0.0], clinical_dose: 2, clinical_value: 0.167, allocation: [0.0, 0.308, 0.692], allocation_value: 0.116 },
    Scenario { name: "g=0.05t", cost: [0.0, 0.05, 0.10], clinical_dose: 2, clinical_value: 0.217, allocation: [0.0, 0.4, 0.6], allocation_value: 0.13 },
    Scenario { name: "g=0.1t", cost: [0.0, 0.1, 0.2], clinical_dose: 2, clinical_value: 0.267, allocation: [0.0, 0.49, 0.51], allocation_value: 0.136 },
    Scenario { name: "g=0.15t", cost: [0.0, 0.15, 0.30], clinical_dose: 0, clinical_value: 0.225, allocation: [0.59, 0.41, 0.0], allocation_value: 0.132 },
    Scenario { name: "g=(0,0,0.3)", cost: [0.0, 0.0, 0.30], clinical_dose: 1, clinical_value: 0.167, allocation: [0.308, 0.692, 0.0], allocation_value: 0.115 },
];

fn push_forward_table(r: &mut Report) {
    let table = [[0.25, 0.75, 0.0, 0.0], [0.333, 0.333, 0.167, 0.167], [0.25, 0.083, 0.5, 0.167]];
    let q = illustration_q();
    for (t, row) in table.iter().enumerate() {
        let p = push_forward(&q, t).unwrap();
        for cell in OutcomeCell::ALL {
            r.close(row[cell.index()], p.prob(cell), 0.001, &format!("p{} at t={t}", cell.label()));
        }
    }
}

fn welfare_values(r: &mut Report) {
    let q = illustration_q();
    for (t, expected) in [0.4375, 0.542, 0.6458].into_iter().enumerate() {
        let e = expected_welfare(&push_forward(&q, t).unwrap(), &paper_welfare());
        r.close(expected, e, 0.001, &format!("E[w] at t={t}"));
    }
}

fn dose_one_bounds(r: &mut Report) {
    let cs = illustration_system();
    let expected = [(0.0, 0.75), (0.083, 0.75), (0.0, 0.5), (0.0, 0.67)];
    for cell in OutcomeCell::ALL {
        let b = bound_outcome_prob(&cs, 1, cell).unwrap();
        let (lo, hi) = expected[cell.index()];
        r.close(lo, b.lo, 0.005, &format!("p{} lower", cell.label()));
        r.close(hi, b.hi, 0.005, &format!("p{} upper", cell.label()));
    }
    let grid = *cs.grid();
    let b = bound_net_welfare(&cs, 1, &paper_welfare(), &CostSpec::zero(&grid)).unwrap();
    r.close(0.2708, b.lo, 0.001, "ω1 lower");
    r.close(0.8125, b.hi, 0.001, "ω1 upper");
}

fn decisions(r: &mut Report) {
    let cs = illustration_system();
    let grid = *cs.grid();
    let w = paper_welfare();
    for s in &SCENARIOS {
        let g = CostSpec::new(&grid, s.cost.to_vec()).unwrap();
        let model = RegretModel::new(&cs, &w, &g).unwrap();
        let c = model.clinical().unwrap();
        r.check(c.chosen_dose == s.clinical_dose, || {
            format!("{}: clinical dose expected {}, got {}", s.name, s.clinical_dose, c.chosen_dose)
        });
        r.close(s.clinical_value, c.mmr_value, 0.001, &format!("{}: clinical value", s.name));
        let a = model.allocation_analytical().unwrap();
        for t in 0..3 {
            r.close(s.allocation[t], a.allocation.share(t), 0.002, &format!("{}: allocation share t={t}", s.name));
        }
        r.close(s.allocation_value, a.mmr_value, 0.002, &format!("{}: allocation value", s.name));
    }
}

fn grid_agreement(r: &mut Report) {
    let cs = illustration_system();
    let grid = *cs.grid();
    let w = paper_welfare();
    for s in &SCENARIOS {
        let g = CostSpec::new(&grid, s.cost.to_vec()).unwrap();
        let model = RegretModel::new(&cs, &w, &g).unwrap();
        let exact = model.allocation_analytical().unwrap();
        let fine = model.allocation_grid(GridSearch::Full { resolution: 1000 }, 2_000_000).unwrap();
        r.close(exact.mmr_value, fine.mmr_value, 0.002, &format!("{}: grid value", s.name));
        for t in 0..3 {
            r.close(exact.allocation.share(t), fine.allocation.share(t), 0.002, &format!("{}: grid share t={t}", s.name));
        }
    }
}

fn random_q(rng: &mut ChaCha8Rng, grid: DoseGrid) -> ThresholdDistribution {
    let mut weights: Vec<f64> = (0..grid.cell_count())
        .map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random::<f64>() })
        .collect();
    let anchor = rng.random_range(0..weights.len());
    weights[anchor] += 0.05;
    ThresholdDistribution::normalized(grid, weights).unwrap()
}

fn random_doses(rng: &mut ChaCha8Rng, grid: DoseGrid, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = grid.doses().collect();
    while all.len() > k {
        all.remove(rng.random_range(0..all.len()));
    }
    all
}

fn polytope_dimension(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let grid = DoseGrid::new(rng.random_range(2..=5)).unwrap();
        let k = rng.random_range(1..=grid.max_dose());
        let q = random_q(&mut rng, grid);
        let ev = TrialEvidence::from_threshold_distribution(&q, &random_doses(&mut rng, grid, k)).unwrap();
        let cs = build_constraints(&ev, Restrictions::none(), &grid).unwrap();
        r.check(cs.rank() == 3 * k + 1, || format!("T={} K={k}: rank {}", grid.max_dose(), cs.rank()));
    }
}

fn single_dose_oracle(r: &mut Report) {
    let grid = DoseGrid::new(1).unwrap();
    let ev = TrialEvidence::new(grid, vec![TrialArm::new(0, OutcomeDistribution::new([0.25, 0.75, 0.0, 0.0]).unwrap())]).unwrap();
    let cs = build_constraints(&ev, Restrictions::none(), &grid).unwrap();
    let f = dosechoice::net_welfare_coefficients(&grid, 1, &paper_welfare(), &CostSpec::zero(&grid)).unwrap();
    let b = bound_linear(&cs, &f).unwrap();
    r.close(0.1875, b.lo, 1e-9, "derived case lower");
    r.close(1.0, b.hi, 1e-9, "derived case upper");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 0..100 {
        let q = random_q(&mut rng, grid);
        let k = rng.random_range(1..=2);
        let ev = TrialEvidence::from_threshold_distribution(&q, &random_doses(&mut rng, grid, k)).unwrap();
        let cs = build_constraints(&ev, Restrictions::none(), &grid).unwrap();
        let coeffs: Vec<f64> = (0..grid.cell_count()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = ThresholdFunctional::new(grid, coeffs, 0.0).unwrap();
        let b = bound_linear(&cs, &f).unwrap();
        let (lo, hi) = common::vertex_extremes(&cs.matrix(), &cs.rhs(), f.coeffs()).unwrap();
        r.check((b.lo - lo).abs() <= 1e-9 && (b.hi - hi).abs() <= 1e-9, || {
            format!("instance {n}: LP [{}, {}] vs vertices [{lo}, {hi}]", b.lo, b.hi)
        });
    }
}

fn restricted_variant(q: &ThresholdDistribution, concurrent: bool) -> ThresholdDistribution {
    let grid = *q.grid();
    let n = grid.support_len();
    let weights = (0..grid.cell_count())
        .map(|k| {
            let (h, i) = (k / n, k % n);
            let keep = if concurrent { h == i } else { i != 0 };
            if keep { q.as_slice()[k] + 1e-3 } else { 0.0 }
        })
        .collect();
    ThresholdDistribution::normalized(grid, weights).unwrap()
}

fn property_suite(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 0..200 {
        let grid = DoseGrid::new(rng.random_range(2..=4)).unwrap();
        let concurrent = rng.random_bool(0.5);
        let q = restricted_variant(&random_q(&mut rng, grid), concurrent);
        let k = rng.random_range(1..=grid.max_dose());
        let doses = random_doses(&mut rng, grid, k);
        let w = WelfareSpec::new(std::array::from_fn(|_| rng.random_range(-1.0..2.0))).unwrap();
        let g = CostSpec::new(&grid, (0..grid.dose_count()).map(|_| rng.random_range(0.0..0.3)).collect()).unwrap();

        let ev = TrialEvidence::from_threshold_distribution(&q, &doses).unwrap();
        let cs = build_constraints(&ev, Restrictions::none(), &grid).unwrap();
        for arm in ev.arms() {
            for cell in OutcomeCell::ALL {
                let b = bound_outcome_prob(&cs, arm.dose, cell).unwrap();
                r.check(b.width() <= 1e-8, || format!("instance {n}: width {} at trial dose {}", b.width(), arm.dose));
            }
        }

        let base = net_welfare_bounds(&cs, &w, &g).unwrap();
        let extra = grid.doses().find(|d| !doses.contains(d));
        let r_flags = Restrictions { no_ae_at_zero: !concurrent, concurrent_thresholds: concurrent, independence: false };
        let mut narrower = vec![build_constraints(&ev, r_flags, &grid).unwrap()];
        if let Some(extra) = extra {
            let mut more = doses.clone();
            more.push(extra);
            more.sort();
            narrower.push(build_constraints(&TrialEvidence::from_threshold_distribution(&q, &more).unwrap(), Restrictions::none(), &grid).unwrap());
        }
        for sys in &narrower {
            for (a, b) in base.iter().zip(net_welfare_bounds(sys, &w, &g).unwrap()) {
                r.check(b.lo >= a.lo - 1e-9 && b.hi <= a.hi + 1e-9, || format!("instance {n}: {b:?} wider than {a:?}"));
            }
        }

        let opts = if grid.max_dose() == 2 { AllocationOptions::default_for(&grid) } else { AllocationOptions::grid(8) };
        let clinical = clinical_mmr(&cs, &w, &g).unwrap();
        let alloc = allocation_mmr(&cs, &w, &g, &opts).unwrap();
        r.check(clinical.per_dose_max_regret.iter().all(|&v| v >= -1e-9) && alloc.mmr_value >= -1e-9, || {
            format!("instance {n}: negative regret")
        });
        r.check(alloc.mmr_value <= clinical.mmr_value + 1e-9, || {
            format!("instance {n}: planner {} above clinical {}", alloc.mmr_value, clinical.mmr_value)
        });

        let (w2, g2) = (w.scaled(2.0).unwrap(), g.scaled(2.0));
        let clinical2 = clinical_mmr(&cs, &w2, &g2).unwrap();
        let alloc2 = allocation_mmr(&cs, &w2, &g2, &opts).unwrap();
        r.check(clinical.chosen_dose == clinical2.chosen_dose, || format!("instance {n}: scaling moved the dose"));
        r.check(alloc.allocation == alloc2.allocation, || format!("instance {n}: scaling moved the allocation"));
        r.check((2.0 * clinical.mmr_value - clinical2.mmr_value).abs() <= 1e-9 * (1.0 + clinical2.mmr_value.abs()), || {
            format!("instance {n}: regret did not scale")
        });
    }
}

fn simulation(r: &mut Report) {
    let q = illustration_q();
    let grid = *q.grid();
    let design = TrialDesign::new(&grid, vec![0, 2], vec![1_000_000, 1_000_000]).unwrap();
    let opts = AsIfOptions { restrictions: Restrictions::none(), mode: DecisionMode::Clinical, repair: false };
    let run = || simulate_regret(&q, &design, &paper_welfare(), &CostSpec::zero(&grid), &opts, 20, 2024).unwrap();
    let a = run();
    let dose_two = a.decision_frequency.get("dose 2").copied().unwrap_or(0.0) * a.regrets.len() as f64 / 20.0;
    r.check(dose_two >= 0.95, || format!("dose 2 chosen in {:.0}% of replications", 100.0 * dose_two));
    let mean = a.summary.as_ref().map_or(f64::INFINITY, |s| s.mean);
    r.check(mean <= 0.001, || format!("mean regret {mean}"));
    let b = run();
    let same = a == b && a.regrets.iter().zip(&b.regrets).all(|(x, y)| x.to_bits() == y.to_bits());
    r.check(same, || "reruns differ".into());
}

fn independence(r: &mut Report) {
    let grid = DoseGrid::new(2).unwrap();
    let product = |pd: f64, pe: f64| {
        OutcomeDistribution::new([(1.0 - pd) * (1.0 - pe), pd * (1.0 - pe), (1.0 - pd) * pe, pd * pe]).unwrap()
    };
    let ev = TrialEvidence::new(grid, vec![TrialArm::new(0, product(0.75, 0.0)), TrialArm::new(2, product(0.25, 0.6))]).unwrap();
    let w = paper_welfare();
    let b = independence_bounds(&ev, &grid, 1, &w, &CostSpec::zero(&grid)).unwrap();
    r.close(0.2875, b.net_welfare.lo, 1e-9, "ω1 lower");
    r.close(0.8125, b.net_welfare.hi, 1e-9, "ω1 upper");

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for a in 0..=100 {
        for c in 0..=100 {
            let pd = b.disease.lo + (b.disease.hi - b.disease.lo) * a as f64 / 100.0;
            let pe = b.adverse.lo + (b.adverse.hi - b.adverse.lo) * c as f64 / 100.0;
            let v = expected_welfare(&product(pd, pe), &w);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    r.close(lo, b.net_welfare.lo, 1e-6, "grid scan lower");
    r.close(hi, b.net_welfare.hi, 1e-6, "grid scan upper");

    let illustration_ev = illustration::evidence();
    match independence_bounds(&illustration_ev, &grid, 1, &w, &CostSpec::zero(&grid)) {
        Err(IdentificationError::RestrictionRefuted { .. }) => {}
        other => r.check(false, || format!("illustration arm at t=2 expected to refute independence, got {other:?}")),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn(&mut Report)); 10] = [
        ("golden push-forward table", push_forward_table),
        ("golden expected welfare", welfare_values),
        ("golden bounds at the untested dose", dose_one_bounds),
        ("golden clinical and allocation decisions", decisions),
        ("grid and analytical allocations agree", grid_agreement),
        ("polytope dimension 3K+1", polytope_dimension),
        ("vertex-enumeration oracle for T=1", single_dose_oracle),
        ("property suite over 200 instances", property_suite),
        ("large-sample simulation", simulation),
        ("independence bounds", independence),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let mut report = Report::new();
        let t0 = Instant::now();
        run(&mut report);
        let verdict = if report.failures.is_empty() { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict}  {name} ({:.1}s)", k + 1, t0.elapsed().as_secs_f64());
        for f in &report.failures {
            println!("             {f}");
        }
        failed += usize::from(!report.failures.is_empty());
    }
    println!("{} of {} criteria passed in {:.1}s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
