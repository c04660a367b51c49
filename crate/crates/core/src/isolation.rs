//! Post-alarm fault isolation: split the nodes of the alarm-time similarity
//! network into two groups by maximizing `xᵀ Y x` over `x ∈ {±1}^N`.
//!
//! The diagonal is excluded and masked-out edges count as 0, so the
//! objective is `Σ_{i≠j observed} x_i x_j y_ij`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, tag};
use crate::snapshot::SimilaritySnapshot;

pub const MAX_BRUTE_FORCE_NODES: usize = 20;
const POWER_TOLERANCE: f64 = 1e-10;
const POWER_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsolationError {
    #[error("membership has {got} entries for {n} nodes")]
    Length { n: usize, got: usize },
    #[error("membership entry {index} is {value}; expected +1 or -1")]
    Domain { index: usize, value: i8 },
    #[error("brute force supports at most {MAX_BRUTE_FORCE_NODES} nodes, got {0}")]
    TooLarge(usize),
    #[error("need at least 2 nodes, got {0}")]
    TooSmall(usize),
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BruteForce,
    Spectral,
    SpectralRefine,
    LocalSearch,
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub method: Method,
    /// `+1` marks the anomalous side.
    pub x: Vec<i8>,
    #[serde(rename = "S")]
    pub s: Vec<usize>,
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigengap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flips: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl Membership {
    fn labeled(method: Method, y: &SimilaritySnapshot, x: Vec<i8>) -> Self {
        let label = label_anomalous(y, &x).expect("x validated by caller");
        let x: Vec<i8> = (0..x.len())
            .map(|i| if label.s.binary_search(&i).is_ok() { 1 } else { -1 })
            .collect();
        let x = if label.s.is_empty() { vec![-1; x.len()] } else { x };
        let objective = objective(y, &x).expect("valid x");
        Self {
            method,
            x,
            s: label.s,
            objective,
            eigengap: None,
            flips: None,
            warning: label.warning,
        }
    }

    /// Node order with the normal group first, for heat-map rendering.
    pub fn permutation(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.x.len()).filter(|&i| self.x[i] < 0).collect();
        order.extend((0..self.x.len()).filter(|&i| self.x[i] > 0));
        order
    }
}

fn check_signs(n: usize, x: &[i8]) -> Result<(), IsolationError> {
    if x.len() != n {
        return Err(IsolationError::Length { n, got: x.len() });
    }
    match x.iter().position(|&v| v != 1 && v != -1) {
        Some(index) => Err(IsolationError::Domain { index, value: x[index] }),
        None => Ok(()),
    }
}

pub fn objective(y: &SimilaritySnapshot, x: &[i8]) -> Result<f64, IsolationError> {
    check_signs(y.n(), x)?;
    let total: f64 = y.mask().edges().map(|(i, j)| f64::from(x[i] * x[j]) * y.y(i, j)).sum();
    Ok(2.0 * total)
}

/// Local fields `h_i = Σ_j y_ij x_j`.
fn fields(dense: &[Vec<f64>], x: &[i8]) -> Vec<f64> {
    dense
        .iter()
        .map(|row| row.iter().zip(x).map(|(a, &s)| a * f64::from(s)).sum())
        .collect()
}

/// Exact maximizer by enumeration of the `2^(N-1)` patterns with `x_0 = -1`.
/// Among tied optima the lexicographically smallest `x` (with `-1 < +1`)
/// wins; the returned labeling is then disambiguated by
/// [`label_anomalous`].
pub fn brute_force_membership(y: &SimilaritySnapshot) -> Result<Membership, IsolationError> {
    let x = brute_force_optimum(y)?;
    Ok(Membership::labeled(Method::BruteForce, y, x))
}

/// The raw enumeration result before anomalous-side labeling.
pub fn brute_force_optimum(y: &SimilaritySnapshot) -> Result<Vec<i8>, IsolationError> {
    let n = y.n();
    if n > MAX_BRUTE_FORCE_NODES {
        return Err(IsolationError::TooLarge(n));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let dense = y.dense_zero_filled();
    let mut x = vec![-1i8; n];
    let mut h = fields(&dense, &x);
    let mut value: f64 = x.iter().zip(&h).map(|(&s, hi)| f64::from(s) * hi).sum();
    let mut best_x = x.clone();
    let mut best_exact = objective(y, &x)?;
    let scale = dense.iter().flatten().map(|v| v.abs()).sum::<f64>().max(1.0);
    let tol = 1e-9 * scale;

    // Gray-code walk over nodes 1..n; each step flips one coordinate.
    for step in 1u64..(1u64 << (n - 1)) {
        let k = step.trailing_zeros() as usize + 1;
        let old = f64::from(x[k]);
        value -= 4.0 * old * h[k];
        for (hj, row) in h.iter_mut().zip(&dense) {
            *hj -= 2.0 * old * row[k];
        }
        x[k] = -x[k];
        if value > best_exact + tol {
            best_exact = objective(y, &x)?;
            best_x.clone_from(&x);
            value = best_exact;
        } else if value >= best_exact - tol {
            let exact = objective(y, &x)?;
            if exact > best_exact || (exact == best_exact && x < best_x) {
                best_exact = exact;
                best_x.clone_from(&x);
            }
        }
    }
    Ok(best_x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadingEigen {
    pub vector: Vec<f64>,
    pub value: f64,
    pub eigengap: f64,
    pub iterations: usize,
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    norm
}

/// Power iteration on `M = Y + s I` where `s` is the largest absolute row
/// sum of `Y`, so every eigenvalue of `M` is nonnegative and the dominant
/// one belongs to the algebraically largest eigenvalue of `Y`.
pub fn leading_eigenvector(dense: &[Vec<f64>], seed: u64) -> Result<LeadingEigen, IsolationError> {
    let n = dense.len();
    let shift = dense
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut m: Vec<Vec<f64>> = dense.to_vec();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] += shift;
    }

    let mut rng = seed::rng(seed::derive(seed, &[tag::SPECTRAL_START]));
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let alt = if i % 2 == 0 { 1.0 } else { -1.0 };
            alt + 1e-3 * rng.random_range(-1.0..1.0)
        })
        .collect();
    normalize(&mut v);

    let (v, mu1, iterations) = power_iterate(&m, v)?;
    // Second eigenvalue of M from the deflated matrix M - mu1 v vᵀ.
    let deflated: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, a)| a - mu1 * v[i] * v[j]).collect())
        .collect();
    let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mu2 = if n < 2 || normalize(&mut w) == 0.0 {
        0.0
    } else {
        match power_iterate(&deflated, w) {
            Ok((_, mu, _)) => mu,
            Err(IsolationError::Convergence { .. }) => 0.0,
            Err(e) => return Err(e),
        }
    };
    Ok(LeadingEigen {
        vector: v,
        value: mu1 - shift,
        eigengap: (mu1 - mu2.max(0.0)).max(0.0),
        iterations,
    })
}

fn power_iterate(m: &[Vec<f64>], mut v: Vec<f64>) -> Result<(Vec<f64>, f64, usize), IsolationError> {
    for it in 1..=POWER_MAX_ITERATIONS {
        let mut next = mat_vec(m, &v);
        if normalize(&mut next) == 0.0 {
            return Ok((v, 0.0, it));
        }
        let change = next.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        v = next;
        if change < POWER_TOLERANCE {
            let mv = mat_vec(m, &v);
            let rayleigh = mv.iter().zip(&v).map(|(a, b)| a * b).sum();
            return Ok((v, rayleigh, it));
        }
    }
    let mv = mat_vec(m, &v);
    let rayleigh: f64 = mv.iter().zip(&v).map(|(a, b)| a * b).sum();
    let residual = mv
        .iter()
        .zip(&v)
        .map(|(a, b)| (a - rayleigh * b).powi(2))
        .sum::<f64>()
        .sqrt();
    Err(IsolationError::Convergence {
        iterations: POWER_MAX_ITERATIONS,
        residual,
    })
}

/// Sign-rounded leading eigenvector of the zero-diagonal masked matrix.
pub fn spectral_membership(y: &SimilaritySnapshot, seed: u64) -> Result<Membership, IsolationError> {
    let n = y.n();
    if n < 2 {
        return Err(IsolationError::TooSmall(n));
    }
    let eig = leading_eigenvector(&y.dense_zero_filled(), seed)?;
    let x: Vec<i8> = eig.vector.iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect();
    let mut m = Membership::labeled(Method::Spectral, y, x);
    m.eigengap = Some(eig.eigengap);
    if eig.eigengap <= 1e-8 * eig.value.abs().max(1.0) {
        m.warning = Some("eigengap is zero; the split is arbitrary".into());
    }
    Ok(m)
}

/// Best-improvement single-flip hill climbing from `x0`. Each accepted flip
/// strictly increases the objective, so the walk terminates.
pub fn local_search_refine(y: &SimilaritySnapshot, x0: &[i8]) -> Result<Membership, IsolationError> {
    check_signs(y.n(), x0)?;
    let dense = y.dense_zero_filled();
    let scale = dense.iter().flatten().map(|v| v.abs()).sum::<f64>().max(1.0);
    let mut x = x0.to_vec();
    let mut h = fields(&dense, &x);
    let mut flips = 0;
    loop {
        // gain of flipping k is -4 x_k h_k
        let best =
            (0..x.len())
                .map(|k| (k, -4.0 * f64::from(x[k]) * h[k]))
                .fold(None, |acc: Option<(usize, f64)>, (k, g)| match acc {
                    Some((_, bg)) if g <= bg => acc,
                    _ => Some((k, g)),
                });
        match best {
            Some((k, gain)) if gain > 1e-12 * scale => {
                let old = f64::from(x[k]);
                for (hj, row) in h.iter_mut().zip(&dense) {
                    *hj -= 2.0 * old * row[k];
                }
                x[k] = -x[k];
                flips += 1;
            }
            _ => break,
        }
    }
    let mut m = Membership::labeled(Method::LocalSearch, y, x);
    m.flips = Some(flips);
    Ok(m)
}

/// Spectral rounding followed by local-search refinement.
pub fn spectral_refine_membership(y: &SimilaritySnapshot, seed: u64) -> Result<Membership, IsolationError> {
    let spectral = spectral_membership(y, seed)?;
    let mut refined = local_search_refine(y, &spectral.x)?;
    refined.method = Method::SpectralRefine;
    refined.eigengap = spectral.eigengap;
    if refined.warning.is_none() {
        refined.warning = spectral.warning;
    }
    Ok(refined)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub s: Vec<usize>,
    pub warning: Option<String>,
}

fn mean_similarity(y: &SimilaritySnapshot, i: usize) -> Option<f64> {
    let nb = y.neighborhood(i);
    (!nb.is_empty()).then(|| nb.members.iter().map(|&j| y.y(i, j)).sum::<f64>() / nb.len() as f64)
}

/// Picks which side of a ±1 split is anomalous: the side whose members have
/// the lower mean similarity to their neighbors. Near-ties go to the smaller
/// side, then to the side containing node 0.
pub fn label_anomalous(y: &SimilaritySnapshot, x: &[i8]) -> Result<Labeling, IsolationError> {
    check_signs(y.n(), x)?;
    let plus: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0).collect();
    let minus: Vec<usize> = (0..x.len()).filter(|&i| x[i] < 0).collect();
    if plus.is_empty() || minus.is_empty() {
        return Ok(Labeling {
            s: Vec::new(),
            warning: Some("no split: every node is on one side".into()),
        });
    }
    let score = |group: &[usize]| {
        let vals: Vec<f64> = group.iter().filter_map(|&i| mean_similarity(y, i)).collect();
        if vals.is_empty() {
            f64::INFINITY
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let (sp, sm) = (score(&plus), score(&minus));
    let tie = (sp - sm).abs() <= 1e-12 * sp.abs().max(sm.abs()).max(1.0) || (sp.is_infinite() && sm.is_infinite());
    let plus_is_anomalous = if !tie {
        sp < sm
    } else if plus.len() != minus.len() {
        plus.len() < minus.len()
    } else {
        plus[0] < minus[0]
    };
    Ok(Labeling {
        s: if plus_is_anomalous { plus } else { minus },
        warning: None,
    })
}

/// Per-node rule: flag nodes whose negative average similarity exceeds the
/// threshold.
pub fn naive_isolation(y: &SimilaritySnapshot, threshold: f64) -> Vec<usize> {
    crate::detector::node_statistics(y)
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.filter(|&r| r > threshold).map(|_| i))
        .collect()
}

/// Whether some threshold makes the naive rule recover exactly `truth`.
/// Only thresholds between consecutive distinct statistics need checking.
pub fn naive_can_isolate(y: &SimilaritySnapshot, truth: &[usize]) -> bool {
    let mut stats: Vec<f64> = crate::detector::node_statistics(y).into_iter().flatten().collect();
    stats.sort_by(f64::total_cmp);
    stats.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    candidates.extend(stats.iter().copied());
    candidates.into_iter().any(|b| naive_isolation(y, b) == truth)
}

/// The shipped counterexample for per-node isolation: an anomalous pair
/// (4, 5) that agrees with itself and disagrees with everyone else, plus a
/// weak normal node (3) that is loosely tied to the other normals and
/// strongly opposed to the pair. The weak normal's statistic exceeds the
/// anomalous nodes', so no threshold on the per-node statistic separates the
/// groups, while the joint split is unambiguous.
pub fn naive_counterexample() -> (SimilaritySnapshot, Vec<usize>) {
    const WEAK: usize = 3;
    let y = SimilaritySnapshot::from_fn(0, crate::snapshot::EdgeMask::complete(6), |i, j| {
        let anom = |k: usize| k >= 4;
        match (anom(i), anom(j)) {
            (true, true) => 0.9,
            (false, false) if i == WEAK || j == WEAK => 0.2,
            (false, false) => 0.6,
            _ if i == WEAK || j == WEAK => -0.5,
            _ => -0.2,
        }
    });
    (y, vec![4, 5])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::planted_isolation_instance;
    use crate::snapshot::EdgeMask;
    use proptest::prelude::*;

    /// Independent double-loop evaluation of `xᵀ Y x` off the diagonal.
    fn double_loop(y: &SimilaritySnapshot, x: &[i8]) -> f64 {
        let mut total = 0.0;
        for i in 0..y.n() {
            for j in 0..y.n() {
                if let Some(v) = y.get(i, j) {
                    total += f64::from(x[i]) * f64::from(x[j]) * v;
                }
            }
        }
        total
    }

    /// Unreduced enumeration over all 2^N patterns.
    fn full_enumeration_best(y: &SimilaritySnapshot) -> f64 {
        let n = y.n();
        (0u32..1 << n)
            .map(|bits| {
                let x: Vec<i8> = (0..n).map(|k| if bits >> k & 1 == 1 { 1 } else { -1 }).collect();
                double_loop(y, &x)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn random_snapshot(n: usize, seed: u64) -> SimilaritySnapshot {
        let mut rng = seed::rng(seed);
        SimilaritySnapshot::from_fn(0, EdgeMask::complete(n), |_, _| rng.random_range(-1.0..1.0))
    }

    fn block(n: usize, s: &[usize]) -> SimilaritySnapshot {
        planted_isolation_instance(n, s, 1.0, -1.0, 0.0, 0).unwrap()
    }

    #[test]
    fn objective_examples() {
        let zero = SimilaritySnapshot::from_fn(0, EdgeMask::complete(4), |_, _| 0.0);
        assert_eq!(objective(&zero, &[1, -1, 1, 1]).unwrap(), 0.0);
        let y = random_snapshot(5, 3);
        let x = [1, -1, -1, 1, -1];
        let neg: Vec<i8> = x.iter().map(|v| -v).collect();
        assert_eq!(objective(&y, &x).unwrap(), objective(&y, &neg).unwrap());
        assert!((objective(&y, &x).unwrap() - double_loop(&y, &x)).abs() < 1e-12);
        assert!(matches!(
            objective(&y, &[1, 0, 1, 1, 1]),
            Err(IsolationError::Domain { index: 1, .. })
        ));
        assert!(matches!(objective(&y, &[1, 1]), Err(IsolationError::Length { .. })));
    }

    #[test]
    fn brute_force_on_positive_matrix_keeps_everyone_together() {
        let y = SimilaritySnapshot::from_fn(0, EdgeMask::complete(5), |i, j| 0.1 + (i + j) as f64 / 10.0);
        let m = brute_force_membership(&y).unwrap();
        assert!(m.s.is_empty());
        let total: f64 = y.mask().edges().map(|(i, j)| y.y(i, j)).sum();
        assert!((m.objective - 2.0 * total).abs() < 1e-12);
    }

    #[test]
    fn brute_force_recovers_perfect_blocks() {
        let m = brute_force_membership(&block(8, &[1, 4, 6])).unwrap();
        assert_eq!(m.s, vec![1, 4, 6]);
    }

    #[test]
    fn brute_force_matches_unreduced_enumeration() {
        for seed in 0..20 {
            let y = random_snapshot(8, 100 + seed);
            let m = brute_force_membership(&y).unwrap();
            assert!((m.objective - full_enumeration_best(&y)).abs() < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn brute_force_tie_breaks_lexicographically() {
        // all-zero matrix: every pattern ties, smallest is all -1
        let zero = SimilaritySnapshot::from_fn(0, EdgeMask::complete(4), |_, _| 0.0);
        assert_eq!(brute_force_optimum(&zero).unwrap(), vec![-1, -1, -1, -1]);
        let big = SimilaritySnapshot::from_fn(0, EdgeMask::complete(21), |_, _| 0.0);
        assert_eq!(brute_force_membership(&big).unwrap_err(), IsolationError::TooLarge(21));
    }

    #[test]
    fn spectral_recovers_planted_blocks() {
        let m = spectral_membership(&block(10, &[0, 3, 7]), 1).unwrap();
        assert_eq!(m.s, vec![0, 3, 7]);
        assert!(m.eigengap.unwrap() > 1.0);
        assert!(m.warning.is_none());
    }

    #[test]
    fn spectral_on_zero_matrix_is_flagged() {
        let zero = SimilaritySnapshot::from_fn(0, EdgeMask::empty(5), |_, _| 0.0);
        let m = spectral_membership(&zero, 2).unwrap();
        assert_eq!(m.eigengap, Some(0.0));
        assert!(m.warning.is_some());
    }

    #[test]
    fn leading_eigenvector_agrees_with_dense_solver() {
        let y = random_snapshot(9, 8);
        let dense = y.dense_zero_filled();
        let eig = leading_eigenvector(&dense, 0).unwrap();
        let reference = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_fn(9, 9, |i, j| dense[i][j]));
        let mut values: Vec<f64> = reference.eigenvalues.iter().copied().collect();
        values.sort_by(|a, b| b.total_cmp(a));
        assert!((eig.value - values[0]).abs() < 1e-8);
        assert!((eig.eigengap - (values[0] - values[1])).abs() < 1e-6);
    }

    #[test]
    fn refine_fixed_point_and_single_correction() {
        let y = block(8, &[2, 5]);
        let opt = brute_force_membership(&y).unwrap();
        let same = local_search_refine(&y, &opt.x).unwrap();
        assert_eq!(same.flips, Some(0));
        assert_eq!(same.x, opt.x);

        let y = planted_isolation_instance(10, &[1, 2, 3], 0.8, -0.5, 0.05, 4).unwrap();
        let mut x: Vec<i8> = (0..10).map(|i| if (1..=3).contains(&i) { 1 } else { -1 }).collect();
        let truth = x.clone();
        x[7] = 1;
        // the flip gain predicted by the double-loop oracle
        let want_gain = double_loop(&y, &truth) - double_loop(&y, &x);
        assert!(want_gain > 0.0);
        let refined = local_search_refine(&y, &x).unwrap();
        assert_eq!(refined.flips, Some(1));
        assert_eq!(refined.s, vec![1, 2, 3]);
        assert!((refined.objective - objective(&y, &x).unwrap() - want_gain).abs() < 1e-9);
    }

    #[test]
    fn refined_spectral_attains_optimum_on_planted_instances() {
        let mut hits = 0;
        for k in 0..100 {
            let y = planted_isolation_instance(12, &[0, 5, 9], 0.8, -0.5, 0.2, 1000 + k).unwrap();
            let best = brute_force_membership(&y).unwrap();
            let got = spectral_refine_membership(&y, k).unwrap();
            assert!(got.objective <= best.objective + 1e-9);
            if (got.objective - best.objective).abs() < 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 99, "{hits}");
    }

    #[test]
    fn label_examples() {
        let small: Vec<usize> = (0..3).collect();
        let y = block(12, &small);
        let x: Vec<i8> = (0..12).map(|i| if i < 3 { -1 } else { 1 }).collect();
        assert_eq!(label_anomalous(&y, &x).unwrap().s, small);
        let pos = SimilaritySnapshot::from_fn(0, EdgeMask::complete(4), |_, _| 0.5);
        let l = label_anomalous(&pos, &[1, 1, 1, 1]).unwrap();
        assert!(l.s.is_empty() && l.warning.is_some());
        // equal sizes and symmetric scores: the side holding node 0
        let even = block(4, &[2, 3]);
        assert_eq!(label_anomalous(&even, &[1, 1, -1, -1]).unwrap().s, vec![0, 1]);
    }

    #[test]
    fn naive_examples() {
        let pos = SimilaritySnapshot::from_fn(0, EdgeMask::complete(4), |_, _| 1.0);
        assert!(naive_isolation(&pos, 0.0).is_empty());
        let lone = SimilaritySnapshot::from_fn(
            0,
            EdgeMask::complete(4),
            |i, j| if i == 2 || j == 2 { -0.4 } else { 0.8 },
        );
        assert_eq!(naive_isolation(&lone, 0.0), vec![2]);
    }

    #[test]
    fn counterexample_defeats_naive_rule_only() {
        let (y, truth) = naive_counterexample();
        let rho: Vec<f64> = crate::detector::node_statistics(&y).into_iter().flatten().collect();
        let want = [-0.2, -0.2, -0.2, 0.08, 0.04, 0.04];
        for (got, want) in rho.iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{rho:?}");
        }
        assert!(!naive_can_isolate(&y, &truth));
        let best = brute_force_membership(&y).unwrap();
        assert_eq!(best.s, truth);
        let got = spectral_refine_membership(&y, 0).unwrap();
        assert_eq!(got.s, truth);
        assert_eq!(got.objective, best.objective);
    }

    #[test]
    fn permutation_groups_normals_first() {
        let m = brute_force_membership(&block(5, &[1, 3])).unwrap();
        assert_eq!(m.permutation(), vec![0, 2, 4, 1, 3]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sign_symmetry_and_oracle_dominance(seed in 0u64..10_000, bits in 0u32..(1 << 9)) {
            let y = random_snapshot(9, seed);
            let x: Vec<i8> = (0..9).map(|k| if bits >> k & 1 == 1 { 1 } else { -1 }).collect();
            let neg: Vec<i8> = x.iter().map(|v| -v).collect();
            prop_assert_eq!(objective(&y, &x).unwrap(), objective(&y, &neg).unwrap());
            let best = brute_force_membership(&y).unwrap().objective;
            let refined = local_search_refine(&y, &x).unwrap();
            prop_assert!(refined.objective >= objective(&y, &x).unwrap() - 1e-12);
            prop_assert!(refined.flips.unwrap() <= 10 * 81);
            for m in [refined, spectral_refine_membership(&y, seed).unwrap(), spectral_membership(&y, seed).unwrap()] {
                prop_assert!(m.objective <= best + 1e-9);
            }
        }

        #[test]
        fn spectral_is_permutation_equivariant(seed in 0u64..1000, rot in 1usize..11) {
            let n = 12;
            let y = planted_isolation_instance(n, &[0, 1, 2], 0.8, -0.5, 0.2, seed).unwrap();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            // permuted[a][b] = y[perm[a]][perm[b]]
            let permuted = SimilaritySnapshot::from_fn(0, EdgeMask::complete(n), |a, b| y.y(perm[a], perm[b]));
            let base = spectral_membership(&y, 0).unwrap();
            let moved = spectral_membership(&permuted, 0).unwrap();
            let mut mapped: Vec<usize> = moved.s.iter().map(|&a| perm[a]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(mapped, base.s);
        }
    }
}
