use serde::{Deserialize, Serialize};

use super::{bhattacharyya, measures, restrict_binary, Channel};
use crate::error::{Error, Result};
use crate::linalg::{phase_one_infeasibility, Constraint, ConstraintKind};

/// Largest `|P|·|Q|` accepted by [`degrades_exact`].
pub const EXACT_PAIR_BUDGET: usize = 400;

const MEASURE_SLACK: f64 = 1e-9;
const FEASIBILITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegradationVerdict {
    Yes,
    No,
    BudgetExceeded,
}

/// Necessary condition for `P ≤_deg Q`: every information measure moves the
/// right way. `false` certifies that `P` is not a degradation of `Q`.
pub fn degrades_necessary(p: &Channel, q: &Channel) -> Result<bool> {
    if p.q() != q.q() {
        return Err(Error::DimensionMismatch {
            expected: p.q(),
            found: q.q(),
        });
    }
    let (mp, mq) = (measures(p), measures(q));
    let skl_ok = match (mp.skl_saturated, mq.skl_saturated) {
        (true, false) => false,
        (true, true) => true,
        _ => mp.skl <= mq.skl + MEASURE_SLACK,
    };
    let zp = bhattacharyya(&restrict_binary(p));
    let zq = bhattacharyya(&restrict_binary(q));
    Ok(mp.p_e >= mq.p_e - MEASURE_SLACK
        && mp.capacity <= mq.capacity + MEASURE_SLACK
        && mp.chi2 <= mq.chi2 + MEASURE_SLACK
        && skl_ok
        && zp >= zq - MEASURE_SLACK)
}

/// Exact degradation test through the coupling characterization.
///
/// Looks for a coupling `c_ab ≥ 0` of the two π-distributions such that each
/// P-atom is majorized by the conditional mean of the Q-atoms it is coupled
/// to. Multiplying the prefix-sum conditions by `w_a` keeps them linear.
pub fn degrades_exact(p: &Channel, q: &Channel) -> Result<DegradationVerdict> {
    if p.q() != q.q() {
        return Err(Error::DimensionMismatch {
            expected: p.q(),
            found: q.q(),
        });
    }
    let (np, nq) = (p.len(), q.len());
    if np.saturating_mul(nq) > EXACT_PAIR_BUDGET {
        return Ok(DegradationVerdict::BudgetExceeded);
    }
    let k = p.q();
    let n_vars = np * nq;
    let var = |a: usize, b: usize| a * nq + b;
    let prefix = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .scan(0.0, |s, x| {
                *s += x;
                Some(*s)
            })
            .collect()
    };
    let p_prefix: Vec<Vec<f64>> = p.atoms().iter().map(|a| prefix(a.pi.probs())).collect();
    let q_prefix: Vec<Vec<f64>> = q.atoms().iter().map(|a| prefix(a.pi.probs())).collect();

    let mut rows = Vec::new();
    for (a, atom) in p.atoms().iter().enumerate() {
        let mut coeffs = vec![0.0; n_vars];
        for b in 0..nq {
            coeffs[var(a, b)] = 1.0;
        }
        rows.push(Constraint { coeffs, rhs: atom.weight, kind: ConstraintKind::Eq });
    }
    for (b, atom) in q.atoms().iter().enumerate() {
        let mut coeffs = vec![0.0; n_vars];
        for a in 0..np {
            coeffs[var(a, b)] = 1.0;
        }
        rows.push(Constraint { coeffs, rhs: atom.weight, kind: ConstraintKind::Eq });
    }
    for (a, atom) in p.atoms().iter().enumerate() {
        for j in 0..k - 1 {
            let mut coeffs = vec![0.0; n_vars];
            for b in 0..nq {
                coeffs[var(a, b)] = q_prefix[b][j];
            }
            rows.push(Constraint {
                coeffs,
                rhs: atom.weight * p_prefix[a][j],
                kind: ConstraintKind::Ge,
            });
        }
    }
    let infeasibility = phase_one_infeasibility(n_vars, &rows);
    Ok(if infeasibility <= FEASIBILITY_SLACK {
        DegradationVerdict::Yes
    } else {
        DegradationVerdict::No
    })
}
