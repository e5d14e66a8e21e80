//! Canonical probability vectors over `[q]` and the Potts pushforward.
//!
//! A [`SimplexPoint`] is a representative of `P([q]) / Aut([q])`: its
//! coordinates are stored sorted non-increasing, so two posteriors that
//! differ by a relabelling of colors compare equal.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Internal normalization tolerance.
pub const NORM_TOL: f64 = 1e-12;
/// Tolerance used by [`majorizes`].
pub const MAJORIZATION_TOL: f64 = 1e-10;
/// Tolerance for validating caller-supplied vectors.
pub const INPUT_TOL: f64 = 1e-6;
/// Entries between `-NEGATIVE_CLAMP` and zero are clamped to zero.
pub const NEGATIVE_CLAMP: f64 = 1e-9;

/// Sorted non-increasing probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexPoint {
    probs: Vec<f64>,
}

impl SimplexPoint {
    pub fn q(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// The point mass `(1, 0, ..., 0)`.
    pub fn delta(q: usize) -> Self {
        let mut probs = vec![0.0; q];
        probs[0] = 1.0;
        SimplexPoint { probs }
    }

    pub fn uniform(q: usize) -> Self {
        SimplexPoint {
            probs: vec![1.0 / q as f64; q],
        }
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.q() as f64;
        self.probs.iter().all(|&p| (p - u).abs() <= NORM_TOL)
    }

    /// Whether some coordinate is exactly zero.
    pub fn has_zero(&self) -> bool {
        self.probs.last().is_some_and(|&p| p <= 0.0)
    }

    /// Normalizes and sorts an arbitrary non-negative weight vector with a
    /// positive sum. No validation beyond debug assertions; hot paths use it.
    pub(crate) fn from_weights(mut v: Vec<f64>) -> Self {
        let s: f64 = v.iter().sum();
        debug_assert!(s > 0.0 && s.is_finite(), "degenerate weight vector {v:?}");
        for x in v.iter_mut() {
            *x /= s;
        }
        sort_desc(&mut v);
        SimplexPoint { probs: v }
    }

    /// Coordinatewise comparison used to merge atoms.
    pub fn approx_eq(&self, other: &SimplexPoint, tol: f64) -> bool {
        self.q() == other.q()
            && self
                .probs
                .iter()
                .zip(&other.probs)
                .all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Coordinatewise agreement up to a relative tolerance, so points near
    /// the boundary only match when their small coordinates do.
    pub fn approx_eq_rel(&self, other: &SimplexPoint, tol: f64) -> bool {
        self.q() == other.q()
            && self
                .probs
                .iter()
                .zip(&other.probs)
                .all(|(a, b)| (a - b).abs() <= tol * a.max(*b))
    }

    /// Lexicographic total order on coordinates, largest first.
    pub fn lex_cmp(&self, other: &SimplexPoint) -> Ordering {
        for (a, b) in self.probs.iter().zip(&other.probs) {
            match b.total_cmp(a) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.q().cmp(&other.q())
    }
}

fn sort_desc(v: &mut [f64]) {
    // stable, so ties keep their input order
    v.sort_by(|a, b| b.total_cmp(a));
}

/// Potts channel parameters `(q, λ)` with `λ ∈ [-1/(q-1), 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PottsParams {
    pub q: usize,
    pub lambda: f64,
}

impl PottsParams {
    pub fn new(q: usize, lambda: f64) -> Result<Self> {
        if q < 2 {
            return Err(invalid(format!("q must be at least 2, got {q}")));
        }
        let lo = -1.0 / (q as f64 - 1.0);
        if !(lambda >= lo - 1e-12 && lambda <= 1.0 + 1e-12) {
            return Err(invalid(format!(
                "lambda = {lambda} outside [{lo}, 1] for q = {q}"
            )));
        }
        Ok(PottsParams {
            q,
            lambda: lambda.clamp(lo, 1.0),
        })
    }

    /// Smallest admissible λ, the fully antiferromagnetic channel.
    pub fn lambda_min(q: usize) -> f64 {
        -1.0 / (q as f64 - 1.0)
    }
}

/// Sorts `v` non-increasing and renormalizes it to sum exactly one.
pub fn canonicalize(v: &[f64]) -> Result<SimplexPoint> {
    if v.len() < 2 {
        return Err(invalid(format!(
            "probability vector needs at least 2 entries, got {}",
            v.len()
        )));
    }
    let mut out = Vec::with_capacity(v.len());
    for &x in v {
        if !x.is_finite() || x < -NEGATIVE_CLAMP {
            return Err(invalid(format!("entry {x} is not a probability")));
        }
        out.push(x.max(0.0));
    }
    let s: f64 = out.iter().sum();
    if (s - 1.0).abs() > INPUT_TOL {
        return Err(invalid(format!("entries sum to {s}, expected 1")));
    }
    Ok(SimplexPoint::from_weights(out))
}

/// Majorization `b ≤_m a`: every prefix sum of `a` dominates that of `b`.
pub fn majorizes(a: &SimplexPoint, b: &SimplexPoint) -> Result<bool> {
    if a.q() != b.q() {
        return Err(Error::DimensionMismatch {
            expected: a.q(),
            found: b.q(),
        });
    }
    let (mut sa, mut sb) = (0.0, 0.0);
    for (x, y) in a.probs.iter().zip(&b.probs) {
        sa += x;
        sb += y;
        if sb > sa + MAJORIZATION_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The π-component of `FSC_π ∘ P_λ`: `λπ + (1-λ)/q`, re-canonicalized.
pub fn potts_push(pi: &SimplexPoint, p: &PottsParams) -> Result<SimplexPoint> {
    if pi.q() != p.q {
        return Err(Error::DimensionMismatch {
            expected: p.q,
            found: pi.q(),
        });
    }
    Ok(push_unchecked(pi, p.lambda))
}

pub(crate) fn push_unchecked(pi: &SimplexPoint, lambda: f64) -> SimplexPoint {
    let q = pi.q();
    let shift = (1.0 - lambda) / q as f64;
    let mut v: Vec<f64> = pi.probs.iter().map(|&x| lambda * x + shift).collect();
    if lambda < 0.0 {
        v.reverse();
    }
    for x in v.iter_mut() {
        *x = x.max(0.0);
    }
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
    SimplexPoint { probs: v }
}

/// Row-stochastic transition matrix `M[i][j] = λ·1{i=j} + (1-λ)/q`.
pub fn potts_matrix(p: &PottsParams) -> Vec<Vec<f64>> {
    let off = (1.0 - p.lambda) / p.q as f64;
    (0..p.q)
        .map(|i| {
            (0..p.q)
                .map(|j| if i == j { p.lambda + off } else { off })
                .collect()
        })
        .collect()
}
