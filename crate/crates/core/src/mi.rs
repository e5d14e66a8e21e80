//! Tree-side mutual-information integral for the block model: the limit
//! information that erasure-surveyed descendants carry about an unobserved
//! root, integrated over the erasure probability.

use serde::{Deserialize, Serialize};

use crate::bp::{iterate, BpParams, OffspringDist};
use crate::channels::{make_channel, measures, Channel, ChannelSpec};
use crate::constants::classify;
use crate::error::{invalid, Result};
use crate::sbm::{sbm_degree, sbm_lambda};
use crate::simplex::PottsParams;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MiRow {
    pub eps: f64,
    /// `C(E_b[(M̃_∞ ∘ P_λ)^{⋆b}])` in nats.
    pub integrand: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiIntegral {
    pub q: usize,
    pub lambda: f64,
    pub d: f64,
    pub rows: Vec<MiRow>,
    /// Trapezoid rule over the ε grid.
    pub integral: f64,
    /// Whether `(q, λ, d)` meets a certified uniqueness condition, without
    /// which the integral is not known to equal the graph quantity.
    pub certified: bool,
}

/// Settings shared by every grid point.
#[derive(Debug, Clone, Copy)]
pub struct MiSettings {
    pub k_max: usize,
    pub cap: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for MiSettings {
    fn default() -> Self {
        MiSettings {
            k_max: 60,
            cap: 10_000,
            seed: 0,
            tol: 1e-7,
        }
    }
}

/// Integrand at erasure probability `eps`: the survey `EC_ε` observes
/// every vertex except the root, so the recursion runs `M̃_{k+1} =
/// BP_W(M̃_k)` from the trivial channel and the root's own survey is left
/// off the final step.
pub fn mi_integrand(q: usize, a: f64, b: f64, eps: f64, s: &MiSettings) -> Result<MiRow> {
    let potts = PottsParams::new(q, sbm_lambda(q, a, b))?;
    let offspring = OffspringDist::poisson(sbm_degree(q, a, b))?;
    let survey = make_channel(&ChannelSpec::Erasure(eps), q)?;
    let p = BpParams::new(potts, offspring)
        .with_survey(survey)
        .with_cap(s.cap)
        .with_seed(s.seed);
    let trace = iterate(&Channel::trivial(q), &p, s.k_max, s.tol)?;
    let below = trace
        .last_pre_survey
        .as_ref()
        .expect("at least one step was taken");
    let integrand = if below.is_trivial() { 0.0 } else { measures(below).capacity };
    Ok(MiRow {
        eps,
        integrand,
        iterations: trace.rows.len() - 1,
        converged: trace.converged,
    })
}

/// Integrand on `eps_grid` (strictly increasing, inside `[0, 1]`) and its
/// trapezoid integral.
pub fn mi_integral(q: usize, a: f64, b: f64, eps_grid: &[f64], s: &MiSettings) -> Result<MiIntegral> {
    if eps_grid.len() < 2 {
        return Err(invalid("the ε grid needs at least two points"));
    }
    if eps_grid.windows(2).any(|w| !(w[1] > w[0])) || eps_grid[0] < 0.0 || eps_grid[eps_grid.len() - 1] > 1.0 {
        return Err(invalid("the ε grid must increase strictly within [0, 1]"));
    }
    let lambda = sbm_lambda(q, a, b);
    let d = sbm_degree(q, a, b);
    let rows = eps_grid
        .iter()
        .map(|&eps| mi_integrand(q, a, b, eps, s))
        .collect::<Result<Vec<_>>>()?;
    let integral = rows
        .windows(2)
        .map(|w| 0.5 * (w[1].eps - w[0].eps) * (w[0].integrand + w[1].integrand))
        .sum();
    let verdict = classify(q, lambda, d, None)?;
    Ok(MiIntegral {
        q,
        lambda,
        d,
        rows,
        integral,
        certified: verdict.low_snr_ok_cert || verdict.high_snr_ok_cert,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_community_signal_gives_zero() {
        let grid = [0.0, 0.5, 1.0];
        let out = mi_integral(3, 2.0, 2.0, &grid, &MiSettings::default()).unwrap();
        assert_eq!(out.integral, 0.0);
        assert!(out.rows.iter().all(|r| r.integrand == 0.0));
    }

    #[test]
    fn full_erasure_below_threshold_is_uninformative() {
        let row = mi_integrand(2, 3.0, 2.0, 1.0, &MiSettings::default()).unwrap();
        assert!(row.integrand < 1e-3, "{row:?}");
    }

    #[test]
    fn grid_validation() {
        let s = MiSettings::default();
        assert!(mi_integral(2, 3.0, 2.0, &[0.5], &s).is_err());
        assert!(mi_integral(2, 3.0, 2.0, &[0.5, 0.2], &s).is_err());
        assert!(mi_integral(2, 3.0, 2.0, &[0.0, 1.5], &s).is_err());
    }
}
