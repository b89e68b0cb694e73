#![allow(dead_code)]

use dosechoice::{DoseGrid, ThresholdDistribution, TrialEvidence};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Extreme values of `c·x` over `{x >= 0 : A·x = b}` found by enumerating every
/// basic feasible solution. Only valid when the region is bounded.
pub fn vertex_extremes(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Option<(f64, f64)> {
    let vertices = basic_feasible_solutions(a, b);
    if vertices.is_empty() {
        return None;
    }
    let values: Vec<f64> = vertices.iter().map(|x| x.iter().zip(c).map(|(x, c)| x * c).sum()).collect();
    Some((
        values.iter().copied().fold(f64::INFINITY, f64::min),
        values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ))
}

pub fn basic_feasible_solutions(a: &[Vec<f64>], b: &[f64]) -> Vec<Vec<f64>> {
    let n = a.first().map_or(0, Vec::len);
    let m = a.len();
    let full = DMatrix::from_fn(m, n, |r, c| a[r][c]);
    let rhs = DVector::from_column_slice(b);
    let rank = full.rank(1e-9);
    let mut out = Vec::new();
    if rank == 0 {
        if rhs.amax() <= 1e-9 {
            out.push(vec![0.0; n]);
        }
        return out;
    }
    for subset in combinations(n, rank) {
        let sub = DMatrix::from_fn(m, rank, |r, c| a[r][subset[c]]);
        if sub.rank(1e-9) < rank {
            continue;
        }
        let Ok(x_s) = sub.clone().svd(true, true).solve(&rhs, 1e-12) else { continue };
        if (&sub * &x_s - &rhs).amax() > 1e-9 || x_s.iter().any(|&v| v < -1e-9) {
            continue;
        }
        let mut x = vec![0.0; n];
        for (k, &col) in subset.iter().enumerate() {
            x[col] = x_s[k].max(0.0);
        }
        out.push(x);
    }
    out
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn go(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for j in start..n {
            if n - j < k - current.len() {
                break;
            }
            current.push(j);
            go(j + 1, n, k, current, out);
            current.pop();
        }
    }
    go(0, n, k, &mut current, &mut out);
    out
}

/// Sparse non-negative weights over `(T+2)²` threshold pairs, normalised.
pub fn threshold_distribution(max_dose: usize) -> impl Strategy<Value = ThresholdDistribution> {
    let grid = DoseGrid::new(max_dose).unwrap();
    let n = grid.cell_count();
    (prop::collection::vec(prop_oneof![2 => Just(0.0), 3 => 0.0f64..1.0], n), 0..n).prop_map(
        move |(mut weights, anchor)| {
            weights[anchor] += 0.05;
            ThresholdDistribution::normalized(grid, weights).unwrap()
        },
    )
}

/// A nonempty strictly increasing subset of `0..=max_dose`.
pub fn dose_subset(max_dose: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(any::<bool>(), max_dose + 1).prop_filter_map("empty design", |mask| {
        let doses: Vec<usize> = mask.iter().enumerate().filter(|(_, &on)| on).map(|(t, _)| t).collect();
        (!doses.is_empty()).then_some(doses)
    })
}

/// Evidence generated by a random threshold distribution, so always consistent.
pub fn consistent_instance(max_dose: usize) -> impl Strategy<Value = (ThresholdDistribution, TrialEvidence)> {
    (threshold_distribution(max_dose), dose_subset(max_dose)).prop_map(|(q, doses)| {
        let evidence = TrialEvidence::from_threshold_distribution(&q, &doses).unwrap();
        (q, evidence)
    })
}

pub fn welfare_values() -> impl Strategy<Value = [f64; 4]> {
    [-1.0f64..2.0, -1.0f64..2.0, -1.0f64..2.0, -1.0f64..2.0]
}

pub fn cost_values(max_dose: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..0.3, max_dose + 1)
}
