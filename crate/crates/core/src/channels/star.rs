use rayon::prelude::*;

use super::{resample, Atom, Channel};
use crate::error::{Error, Result};
use crate::simplex::SimplexPoint;

/// Default cap on `|P|·|Q|·q!` for an exact ⋆-expansion.
pub const STAR_BUDGET: usize = 4_000_000;

/// All permutations of `0..q` in lexicographic order.
pub(crate) fn permutations(q: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..q).collect();
    loop {
        out.push(perm.clone());
        // next lexicographic permutation
        let Some(i) = (0..q.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else {
            break;
        };
        let j = (i + 1..q).rev().find(|&j| perm[j] > perm[i]).expect("successor exists");
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    out
}

pub(crate) fn factorial(n: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k))
}

/// `P ⋆ Q` with the default expansion budget.
pub fn star(p: &Channel, q: &Channel) -> Result<Channel> {
    star_with_budget(p, q, STAR_BUDGET)
}

/// ⋆-convolution: both channels observe the same input independently.
///
/// For atoms `π, π'` and each permutation `τ` the output carries weight
/// `Σ_i π_i π'_{τ(i)} / (q-1)!` at the point `(π_i π'_{τ(i)})_i`
/// normalized. The expansion is exact; coincident points are merged.
pub fn star_with_budget(p: &Channel, q: &Channel, budget: usize) -> Result<Channel> {
    if p.q() != q.q() {
        return Err(Error::DimensionMismatch {
            expected: p.q(),
            found: q.q(),
        });
    }
    // the trivial channel is the neutral element
    if p.is_trivial() {
        return Ok(q.clone().normalized());
    }
    if q.is_trivial() {
        return Ok(p.clone().normalized());
    }
    let k = p.q();
    let requested = factorial(k)
        .and_then(|f| f.checked_mul(p.len()))
        .and_then(|x| x.checked_mul(q.len()))
        .unwrap_or(usize::MAX);
    if requested > budget {
        return Err(Error::BudgetExceeded { requested, budget });
    }
    let perms = permutations(k);
    let norm = factorial(k - 1).expect("small q") as f64;

    let atoms: Vec<Atom> = p
        .atoms()
        .par_iter()
        .flat_map_iter(|a| {
            let mut local = Vec::with_capacity(q.len() * perms.len());
            for b in q.atoms() {
                let (x, y) = (a.pi.probs(), b.pi.probs());
                for tau in &perms {
                    let v: Vec<f64> = (0..k).map(|i| x[i] * y[tau[i]]).collect();
                    let s: f64 = v.iter().sum();
                    if s <= 0.0 {
                        continue;
                    }
                    local.push(Atom {
                        weight: a.weight * b.weight * s / norm,
                        pi: SimplexPoint::from_weights(v),
                    });
                }
            }
            local
        })
        .collect();
    Ok(Channel::from_parts_unchecked(k, atoms).normalized())
}

/// `P^{⋆b}`, resampling to `cap` atoms whenever an intermediate power grows
/// past it.
///
/// The zeroth power is the trivial channel, the neutral element of ⋆.
pub fn star_power(p: &Channel, b: usize, cap: usize, seed: u64) -> Result<Channel> {
    if b == 0 {
        return Ok(Channel::trivial(p.q()));
    }
    let mut acc = p.clone();
    for i in 1..b {
        acc = star(&acc, p)?;
        if acc.len() > cap {
            acc = resample(&acc, cap, seed.wrapping_add(i as u64));
        }
    }
    Ok(acc)
}
