use serde::{Deserialize, Serialize};

use super::Channel;
use crate::simplex::SimplexPoint;

/// Smallest value fed to `ln` when evaluating the SKL capacity.
pub const SKL_CLAMP: f64 = 1e-300;

/// Information measures of an FMS channel. Capacity is in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub p_e: f64,
    pub capacity: f64,
    pub chi2: f64,
    pub skl: f64,
    /// Some atom has a zero coordinate, so the true SKL capacity is `+∞`;
    /// `skl` then holds the clamped finite value.
    pub skl_saturated: bool,
}

pub(crate) fn error_point(pi: &SimplexPoint) -> f64 {
    1.0 - pi.probs()[0]
}

pub(crate) fn entropy_point(pi: &SimplexPoint) -> f64 {
    pi.probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

pub(crate) fn chi2_point(pi: &SimplexPoint) -> f64 {
    let q = pi.q() as f64;
    q * pi.probs().iter().map(|p| p * p).sum::<f64>() - 1.0
}

/// `Σ_i (π_i - 1/q) log π_i`, with `π_i` clamped away from zero.
pub fn skl_point(pi: &SimplexPoint) -> f64 {
    let u = 1.0 / pi.q() as f64;
    pi.probs()
        .iter()
        .map(|&p| (p - u) * p.max(SKL_CLAMP).ln())
        .sum()
}

/// `φ^H(π) = ((Σ√π_i)² - 1)/(q-1)`, evaluated as the pairwise sum
/// `2/(q-1) Σ_{i<j} √(π_i π_j)` to avoid cancellation near point masses.
pub(crate) fn phi_h_point(pi: &SimplexPoint) -> f64 {
    let r: Vec<f64> = pi.probs().iter().map(|p| p.sqrt()).collect();
    let mut s = 0.0;
    for i in 0..r.len() {
        for j in i + 1..r.len() {
            s += r[i] * r[j];
        }
    }
    2.0 * s / (pi.q() as f64 - 1.0)
}

pub fn measures(p: &Channel) -> Measures {
    let q = p.q() as f64;
    let mut m = Measures {
        p_e: 0.0,
        capacity: q.ln(),
        chi2: 0.0,
        skl: 0.0,
        skl_saturated: false,
    };
    for a in p.atoms() {
        let w = a.weight;
        m.p_e += w * error_point(&a.pi);
        m.capacity -= w * entropy_point(&a.pi);
        m.chi2 += w * chi2_point(&a.pi);
        m.skl += w * skl_point(&a.pi);
        m.skl_saturated |= a.pi.has_zero();
    }
    // clip rounding excursions outside the admissible ranges
    m.p_e = m.p_e.clamp(0.0, 1.0 - 1.0 / q);
    m.capacity = m.capacity.clamp(0.0, q.ln());
    m.chi2 = m.chi2.clamp(0.0, q - 1.0);
    m.skl = m.skl.max(0.0);
    m
}

/// `Φ^H(P) = Z(P^R)`, the Bhattacharyya coefficient of the binary restriction.
pub fn phi_h(p: &Channel) -> f64 {
    p.atoms()
        .iter()
        .map(|a| a.weight * phi_h_point(&a.pi))
        .sum()
}
