//! Dense two-phase simplex for `max/min c·x  s.t.  A·x = b, x >= 0`.
//!
//! Problems in this crate are tiny (at most a few dozen columns), so the
//! solver keeps a full tableau and uses Bland's smallest-index rule for both
//! the entering and the leaving variable. The artificial columns are kept
//! for the whole solve; they hold the current basis inverse, which gives dual
//! multipliers and Farkas certificates without a separate factorisation.
//!
//! Phase one can be run once per constraint system ([`FeasibleBasis::find`])
//! and then reused for any number of objectives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum residual `|A·x - b|` accepted for a feasible point.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Smallest admissible pivot magnitude.
pub const PIVOT_TOL: f64 = 1e-11;
/// Tolerance for comparing reported objective values.
pub const VALUE_TOL: f64 = 1e-9;

/// Entering threshold on reduced costs.
const COST_TOL: f64 = 1e-10;
/// Column entries below this are treated as exact zeros in the ratio test.
const ZERO_TOL: f64 = 1e-14;
/// Minimum magnitude used when pivoting a zero-level artificial out of the basis.
const DRIVE_OUT_TOL: f64 = 1e-9;
/// Ratios closer than this are ties for Bland's leaving rule.
const RATIO_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    objective: Vec<f64>,
    eq_matrix: Vec<Vec<f64>>,
    eq_rhs: Vec<f64>,
    sense: Sense,
}

impl LinearProgram {
    pub fn new(
        objective: Vec<f64>,
        eq_matrix: Vec<Vec<f64>>,
        eq_rhs: Vec<f64>,
        sense: Sense,
    ) -> Result<Self, LpError> {
        validate_system(&eq_matrix, &eq_rhs, Some(objective.len()))?;
        if objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("objective"));
        }
        Ok(Self { objective, eq_matrix, eq_rhs, sense })
    }

    pub fn maximize(objective: Vec<f64>, eq_matrix: Vec<Vec<f64>>, eq_rhs: Vec<f64>) -> Result<Self, LpError> {
        Self::new(objective, eq_matrix, eq_rhs, Sense::Maximize)
    }

    pub fn minimize(objective: Vec<f64>, eq_matrix: Vec<Vec<f64>>, eq_rhs: Vec<f64>) -> Result<Self, LpError> {
        Self::new(objective, eq_matrix, eq_rhs, Sense::Minimize)
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn eq_matrix(&self) -> &[Vec<f64>] {
        &self.eq_matrix
    }

    pub fn eq_rhs(&self) -> &[f64] {
        &self.eq_rhs
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSolution {
    pub value: f64,
    pub point: Vec<f64>,
    /// Multipliers `y` with `y·b = value`; `y·A_j >= c_j` for a maximisation
    /// and `y·A_j <= c_j` for a minimisation.
    pub duals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LpOutcome {
    Optimal(OptimalSolution),
    /// `certificate` is a Farkas vector `y` with `yᵀA <= 0` and `yᵀb > 0`.
    Infeasible { certificate: Vec<f64> },
    Unbounded,
}

impl LpOutcome {
    pub fn status(&self) -> LpStatus {
        match self {
            LpOutcome::Optimal(_) => LpStatus::Optimal,
            LpOutcome::Infeasible { .. } => LpStatus::Infeasible,
            LpOutcome::Unbounded => LpStatus::Unbounded,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal(s) => Some(s.value),
            _ => None,
        }
    }

    pub fn optimal(&self) -> Option<&OptimalSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Feasibility {
    Feasible(Vec<f64>),
    Infeasible(Vec<f64>),
}

/// Solves `lp` from scratch.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    match FeasibleBasis::find_with_vars(&lp.eq_matrix, &lp.eq_rhs, lp.num_vars())? {
        Phase1::Infeasible(certificate) => Ok(LpOutcome::Infeasible { certificate }),
        Phase1::Feasible(basis) => basis.optimize(&lp.objective, lp.sense),
    }
}

/// Phase-one feasibility of `{x >= 0 : A·x = b}`.
pub fn check_feasible(eq_matrix: &[Vec<f64>], eq_rhs: &[f64]) -> Result<Feasibility, LpError> {
    Ok(match FeasibleBasis::find(eq_matrix, eq_rhs)? {
        Phase1::Feasible(basis) => Feasibility::Feasible(basis.point()),
        Phase1::Infeasible(certificate) => Feasibility::Infeasible(certificate),
    })
}

fn validate_system(a: &[Vec<f64>], b: &[f64], n: Option<usize>) -> Result<usize, LpError> {
    if a.len() != b.len() {
        return Err(LpError::Dimension(format!("{} rows but {} right-hand sides", a.len(), b.len())));
    }
    let n = match (n, a.first()) {
        (Some(n), _) => n,
        (None, Some(row)) => row.len(),
        (None, None) => return Err(LpError::Dimension("no variables".into())),
    };
    if n == 0 {
        return Err(LpError::Dimension("no variables".into()));
    }
    for (r, row) in a.iter().enumerate() {
        if row.len() != n {
            return Err(LpError::Dimension(format!("row {r} has {} columns, expected {n}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("equality matrix"));
        }
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(LpError::NonFinite("right-hand side"));
    }
    Ok(n)
}

enum Step {
    Optimal,
    Unbounded,
}

/// Dense tableau `[B⁻¹A' | B⁻¹ | B⁻¹b']` for the sign-normalised system.
#[derive(Debug, Clone)]
struct Tableau {
    rows: usize,
    vars: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.data[r * self.width + self.width - 1]
    }

    fn pivot(&mut self, row: usize, col: usize, reduced: &mut [f64]) {
        let w = self.width;
        let p = self.data[row * w + col];
        for v in &mut self.data[row * w..(row + 1) * w] {
            *v /= p;
        }
        self.data[row * w + col] = 1.0;
        let (before, rest) = self.data.split_at_mut(row * w);
        let (pivot_row, after) = rest.split_at_mut(w);
        for other in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let factor = other[col];
            if factor != 0.0 {
                for (x, &y) in other.iter_mut().zip(pivot_row.iter()) {
                    *x -= factor * y;
                }
                other[col] = 0.0;
            }
        }
        let factor = reduced[col];
        if factor != 0.0 {
            for (x, &y) in reduced.iter_mut().zip(pivot_row.iter()) {
                *x -= factor * y;
            }
            reduced[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Bland's rule simplex on a maximisation with reduced costs `reduced`.
    /// Artificial columns never enter.
    fn run(&mut self, reduced: &mut [f64]) -> Result<Step, LpError> {
        let limit = 100 * (self.rows + self.vars) + 1000;
        for _ in 0..limit {
            let Some(col) = (0..self.vars).find(|&j| reduced[j] > COST_TOL) else {
                return Ok(Step::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            let mut tiny = false;
            for r in 0..self.rows {
                let a = self.at(r, col);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((br, best)) => {
                            if ratio < best - RATIO_TIE_TOL
                                || (ratio <= best + RATIO_TIE_TOL && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, best))
                            }
                        }
                    };
                } else if a > ZERO_TOL {
                    tiny = true;
                }
            }
            match leave {
                Some((row, _)) => self.pivot(row, col, reduced),
                None if tiny => {
                    return Err(LpError::Numerical(format!(
                        "column {col} has only pivots below {PIVOT_TOL:e}"
                    )))
                }
                None => return Ok(Step::Unbounded),
            }
        }
        Err(LpError::Numerical(format!("no convergence within {limit} pivots")))
    }

    /// `c_Bᵀ B⁻¹` for basic costs `basic_cost`.
    fn multipliers(&self, basic_cost: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let cb = basic_cost(self.basis[r]);
            if cb != 0.0 {
                for (k, yk) in y.iter_mut().enumerate() {
                    *yk += cb * self.at(r, self.vars + k);
                }
            }
        }
        y
    }

    fn primal(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.vars];
        for r in 0..self.rows {
            if self.basis[r] < self.vars {
                x[self.basis[r]] = self.rhs(r);
            }
        }
        x
    }
}

/// Outcome of phase one.
#[derive(Debug, Clone)]
pub enum Phase1 {
    Feasible(FeasibleBasis),
    /// Farkas certificate, normalised to unit max-norm.
    Infeasible(Vec<f64>),
}

/// A feasible basis of `{x >= 0 : A·x = b}` reusable across objectives.
#[derive(Debug, Clone)]
pub struct FeasibleBasis {
    matrix: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    signs: Vec<f64>,
    tableau: Tableau,
    redundant_rows: usize,
}

impl FeasibleBasis {
    pub fn find(eq_matrix: &[Vec<f64>], eq_rhs: &[f64]) -> Result<Phase1, LpError> {
        let n = validate_system(eq_matrix, eq_rhs, None)?;
        Self::find_with_vars(eq_matrix, eq_rhs, n)
    }

    /// Like [`FeasibleBasis::find`] with an explicit column count, so systems
    /// without rows are accepted.
    pub fn find_with_vars(eq_matrix: &[Vec<f64>], eq_rhs: &[f64], n: usize) -> Result<Phase1, LpError> {
        validate_system(eq_matrix, eq_rhs, Some(n))?;
        let m = eq_matrix.len();
        let width = n + m + 1;
        let signs: Vec<f64> = eq_rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
        let mut data = vec![0.0; m * width];
        for r in 0..m {
            let row = &mut data[r * width..(r + 1) * width];
            for (dst, &a) in row[..n].iter_mut().zip(&eq_matrix[r]) {
                *dst = signs[r] * a;
            }
            row[n + r] = 1.0;
            row[width - 1] = signs[r] * eq_rhs[r];
        }
        let mut tableau = Tableau { rows: m, vars: n, width, data, basis: (n..n + m).collect() };

        // maximise -sum(artificials)
        let mut reduced = vec![0.0; width];
        for r in 0..m {
            for (j, red) in reduced[..n].iter_mut().enumerate() {
                *red += tableau.at(r, j);
            }
        }
        if let Step::Unbounded = tableau.run(&mut reduced)? {
            return Err(LpError::Numerical("phase one reported an unbounded objective".into()));
        }

        let infeasibility: f64 =
            (0..m).filter(|&r| tableau.basis[r] >= n).map(|r| tableau.rhs(r).max(0.0)).sum();
        if infeasibility > FEASIBILITY_TOL {
            let y = tableau.multipliers(|col| if col >= n { -1.0 } else { 0.0 });
            let mut cert: Vec<f64> = y.iter().zip(&signs).map(|(yk, s)| -yk * s).collect();
            let scale = cert.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if scale == 0.0 {
                return Err(LpError::Numerical("empty infeasibility certificate".into()));
            }
            for v in &mut cert {
                *v /= scale;
            }
            verify_certificate(eq_matrix, eq_rhs, &cert)?;
            return Ok(Phase1::Infeasible(cert));
        }

        // Pivot zero-level artificials out; rows that cannot be pivoted are redundant.
        let mut redundant_rows = 0;
        let mut scratch = vec![0.0; width];
        for r in 0..m {
            if tableau.basis[r] < n {
                continue;
            }
            tableau.data[r * width + width - 1] = 0.0;
            let best = (0..n)
                .map(|j| (j, tableau.at(r, j).abs()))
                .fold(None, |acc: Option<(usize, f64)>, (j, v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((j, v)),
                });
            match best {
                Some((j, v)) if v > DRIVE_OUT_TOL => tableau.pivot(r, j, &mut scratch),
                _ => {
                    for v in &mut tableau.data[r * width..r * width + n] {
                        *v = 0.0;
                    }
                    redundant_rows += 1;
                }
            }
        }

        let basis = FeasibleBasis {
            matrix: eq_matrix.to_vec(),
            rhs: eq_rhs.to_vec(),
            signs,
            tableau,
            redundant_rows,
        };
        basis.check_point(&basis.tableau.primal())?;
        Ok(Phase1::Feasible(basis))
    }

    pub fn num_vars(&self) -> usize {
        self.tableau.vars
    }

    pub fn num_rows(&self) -> usize {
        self.tableau.rows
    }

    /// Rows found linearly dependent on the others during phase one.
    pub fn redundant_rows(&self) -> usize {
        self.redundant_rows
    }

    /// The basic feasible point found by phase one.
    pub fn point(&self) -> Vec<f64> {
        clamp_nonnegative(self.tableau.primal())
    }

    pub fn maximize(&self, objective: &[f64]) -> Result<LpOutcome, LpError> {
        self.optimize(objective, Sense::Maximize)
    }

    pub fn minimize(&self, objective: &[f64]) -> Result<LpOutcome, LpError> {
        self.optimize(objective, Sense::Minimize)
    }

    /// Phase two from the stored basis.
    pub fn optimize(&self, objective: &[f64], sense: Sense) -> Result<LpOutcome, LpError> {
        let n = self.tableau.vars;
        if objective.len() != n {
            return Err(LpError::Dimension(format!("objective has {} entries, expected {n}", objective.len())));
        }
        if objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("objective"));
        }
        let flip = match sense {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        };
        let cost = |col: usize| if col < n { flip * objective[col] } else { 0.0 };

        let mut tableau = self.tableau.clone();
        let mut reduced = vec![0.0; tableau.width];
        for (j, red) in reduced[..n].iter_mut().enumerate() {
            *red = cost(j);
        }
        for r in 0..tableau.rows {
            let cb = cost(tableau.basis[r]);
            if cb != 0.0 {
                for j in 0..n {
                    reduced[j] -= cb * tableau.at(r, j);
                }
            }
        }
        if let Step::Unbounded = tableau.run(&mut reduced)? {
            return Ok(LpOutcome::Unbounded);
        }

        let x = tableau.primal();
        self.check_point(&x)?;
        let x = clamp_nonnegative(x);
        let y = tableau.multipliers(cost);
        let duals = y.iter().zip(&self.signs).map(|(yk, s)| flip * yk * s).collect();
        let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpOutcome::Optimal(OptimalSolution { value, point: x, duals }))
    }

    fn check_point(&self, x: &[f64]) -> Result<(), LpError> {
        if let Some(j) = x.iter().position(|&v| v < -VALUE_TOL) {
            return Err(LpError::Numerical(format!("basic variable {j} is negative ({})", x[j])));
        }
        let residual = residual_inf(&self.matrix, &self.rhs, x);
        if residual > FEASIBILITY_TOL {
            return Err(LpError::Numerical(format!("primal residual {residual:e} exceeds tolerance")));
        }
        Ok(())
    }
}

fn clamp_nonnegative(mut x: Vec<f64>) -> Vec<f64> {
    for v in &mut x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    x
}

/// `max_r |A_r·x - b_r|`.
pub fn residual_inf(a: &[Vec<f64>], b: &[f64], x: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(row, &rhs)| (row.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() - rhs).abs())
        .fold(0.0, f64::max)
}

fn verify_certificate(a: &[Vec<f64>], b: &[f64], y: &[f64]) -> Result<(), LpError> {
    let n = a.first().map_or(0, Vec::len);
    for j in 0..n {
        let v: f64 = a.iter().zip(y).map(|(row, yk)| row[j] * yk).sum();
        if v > FEASIBILITY_TOL {
            return Err(LpError::Numerical(format!("certificate violates column {j} by {v:e}")));
        }
    }
    let yb: f64 = b.iter().zip(y).map(|(u, v)| u * v).sum();
    if yb <= 0.0 {
        return Err(LpError::Numerical("certificate does not separate the right-hand side".into()));
    }
    Ok(())
}
