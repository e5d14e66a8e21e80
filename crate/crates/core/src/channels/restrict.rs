use serde::{Deserialize, Serialize};

use super::Channel;
use crate::error::{invalid, Result};

/// A BMS channel as a mixture of `BSC_Δ` components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmsChannel {
    pub atoms: Vec<(f64, f64)>,
}

impl BmsChannel {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.0).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("BMS weights sum to {total}")));
        }
        if let Some(&(_, d)) = atoms.iter().find(|a| !(0.0..=0.5).contains(&a.1)) {
            return Err(invalid(format!("Δ = {d} outside [0, 1/2]")));
        }
        Ok(BmsChannel { atoms })
    }

    /// `Σ w (1 - 2Δ)²`.
    pub fn chi2(&self) -> f64 {
        self.atoms
            .iter()
            .map(|&(w, d)| w * (1.0 - 2.0 * d).powi(2))
            .sum()
    }
}

/// Restricts the input alphabet to two colors.
///
/// Under input `1`, an `FSC_π` output reveals which coordinates `(a, b)` of
/// π sit on inputs 1 and 2; each ordered pair occurs with probability
/// `π_a/(q-1)`. Grouping ordered pairs into unordered ones gives a BSC with
/// crossover `min(π_a, π_b)/(π_a + π_b)` and weight `(π_a + π_b)/(q-1)`.
pub fn restrict_binary(p: &Channel) -> BmsChannel {
    let denom = p.q() as f64 - 1.0;
    let mut atoms = Vec::new();
    for a in p.atoms() {
        let x = a.pi.probs();
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let s = x[i] + x[j];
                if s <= 0.0 {
                    continue;
                }
                atoms.push((a.weight * s / denom, x[i].min(x[j]) / s));
            }
        }
    }
    atoms.sort_by(|l, r| l.1.total_cmp(&r.1).then(r.0.total_cmp(&l.0)));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (w, d) in atoms {
        match merged.last_mut() {
            Some(last) if (last.1 - d).abs() <= super::MERGE_TOL * d.max(last.1) => last.0 += w,
            _ => merged.push((w, d)),
        }
    }
    let total: f64 = merged.iter().map(|a| a.0).sum();
    for a in merged.iter_mut() {
        a.0 /= total;
    }
    BmsChannel { atoms: merged }
}

/// `Z = Σ w · 2√(Δ(1-Δ))`.
pub fn bhattacharyya(b: &BmsChannel) -> f64 {
    b.atoms
        .iter()
        .map(|&(w, d)| w * 2.0 * (d * (1.0 - d)).sqrt())
        .sum()
}
