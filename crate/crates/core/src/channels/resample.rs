use rand::Rng;

use super::{Atom, Channel};
use crate::rng;

/// Systematic (low-variance) resampling down to `cap` equally weighted atoms.
///
/// Populations already within `cap` are returned unchanged. The single
/// stratified offset comes from `seed`, so the draw is reproducible and the
/// expectation of every linear functional of π is preserved.
pub fn resample(p: &Channel, cap: usize, seed: u64) -> Channel {
    let cap = cap.max(1);
    if p.len() <= cap {
        return p.clone();
    }
    let offset: f64 = rng::stream(seed, 0).gen::<f64>();
    let step = 1.0 / cap as f64;
    let mut out = Vec::with_capacity(cap);
    let mut acc = 0.0;
    let mut idx = 0;
    let atoms = p.atoms();
    let total: f64 = atoms.iter().map(|a| a.weight).sum();
    for k in 0..cap {
        let u = (offset + k as f64) * step * total;
        while idx + 1 < atoms.len() && acc + atoms[idx].weight <= u {
            acc += atoms[idx].weight;
            idx += 1;
        }
        out.push(Atom {
            weight: step,
            pi: atoms[idx].pi.clone(),
        });
    }
    Channel::from_parts_unchecked(p.q(), out)
}
