//! FMS channels as finite populations of fully-symmetric-channel atoms.
//!
//! Every q-ary FMS channel is equivalent to a mixture of `FSC_π` channels,
//! so a [`Channel`] is just a weighted list of canonical points `π`. All
//! operations here act on that π-distribution.

mod degrade;
mod measures;
mod resample;
mod restrict;
mod star;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::simplex::{canonicalize, push_unchecked, PottsParams, SimplexPoint};

pub use degrade::{degrades_exact, degrades_necessary, DegradationVerdict, EXACT_PAIR_BUDGET};
pub use measures::{measures, phi_h, skl_point, Measures};
pub use resample::resample;
pub use restrict::{bhattacharyya, restrict_binary, BmsChannel};
pub use star::{star, star_power, star_with_budget, STAR_BUDGET};
pub(crate) use star::permutations;

/// Atoms lighter than this are dropped after expansion.
pub const WEIGHT_FLOOR: f64 = 1e-14;
/// Relative per-coordinate tolerance for merging coincident atoms.
pub const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub pi: SimplexPoint,
}

/// A q-ary FMS channel, stored as its π-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    q: usize,
    atoms: Vec<Atom>,
}

impl Channel {
    /// Builds a channel from weighted points, normalizing the weights.
    pub fn from_atoms(q: usize, atoms: Vec<Atom>) -> Result<Self> {
        if q < 2 {
            return Err(invalid("q must be at least 2"));
        }
        if atoms.is_empty() {
            return Err(invalid("a channel needs at least one atom"));
        }
        let mut total = 0.0;
        for a in &atoms {
            if a.pi.q() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    found: a.pi.q(),
                });
            }
            if !(a.weight >= 0.0 && a.weight.is_finite()) {
                return Err(invalid(format!("atom weight {} is invalid", a.weight)));
            }
            total += a.weight;
        }
        if total <= 0.0 {
            return Err(invalid("atom weights sum to zero"));
        }
        let atoms = atoms
            .into_iter()
            .filter(|a| a.weight > 0.0)
            .map(|a| Atom {
                weight: a.weight / total,
                pi: a.pi,
            })
            .collect();
        Ok(Channel { q, atoms })
    }

    /// Equal-weight population; the caller guarantees every point has length `q`.
    pub(crate) fn equal_weight(q: usize, points: Vec<SimplexPoint>) -> Self {
        let w = 1.0 / points.len() as f64;
        Channel {
            q,
            atoms: points
                .into_iter()
                .map(|pi| Atom { weight: w, pi })
                .collect(),
        }
    }

    pub(crate) fn from_parts_unchecked(q: usize, atoms: Vec<Atom>) -> Self {
        Channel { q, atoms }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn identity(q: usize) -> Self {
        Channel::single(SimplexPoint::delta(q))
    }

    pub fn trivial(q: usize) -> Self {
        Channel::single(SimplexPoint::uniform(q))
    }

    pub fn fsc(pi: SimplexPoint) -> Self {
        Channel::single(pi)
    }

    fn single(pi: SimplexPoint) -> Self {
        Channel {
            q: pi.q(),
            atoms: vec![Atom { weight: 1.0, pi }],
        }
    }

    /// Whether every atom is the uniform point.
    pub fn is_trivial(&self) -> bool {
        self.atoms.iter().all(|a| a.pi.is_uniform())
    }

    /// Weighted mean and variance of a per-atom functional.
    pub fn functional_stats(&self, f: impl Fn(&SimplexPoint) -> f64) -> (f64, f64) {
        let mut mean = 0.0;
        let mut second = 0.0;
        for a in &self.atoms {
            let v = f(&a.pi);
            mean += a.weight * v;
            second += a.weight * v * v;
        }
        (mean, (second - mean * mean).max(0.0))
    }

    /// Sorts atoms canonically and merges coincident points.
    pub fn normalized(mut self) -> Self {
        self.atoms.sort_by(|a, b| {
            a.pi.lex_cmp(&b.pi)
                .then_with(|| b.weight.total_cmp(&a.weight))
        });
        let mut merged: Vec<Atom> = Vec::with_capacity(self.atoms.len());
        for a in self.atoms {
            match merged.last_mut() {
                Some(last) if last.pi.approx_eq_rel(&a.pi, MERGE_TOL) => last.weight += a.weight,
                _ => merged.push(a),
            }
        }
        let before: f64 = merged.iter().map(|a| a.weight).sum();
        merged.retain(|a| a.weight >= WEIGHT_FLOOR * before);
        let total: f64 = merged.iter().map(|a| a.weight).sum();
        for a in merged.iter_mut() {
            a.weight /= total;
        }
        Channel {
            q: self.q,
            atoms: merged,
        }
    }

    /// Cumulative weights, for inverse-CDF atom draws.
    pub(crate) fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.atoms
            .iter()
            .map(|a| {
                acc += a.weight;
                acc
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ChannelJson::from(&self.clone().normalized()))
            .expect("channel serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ChannelJson =
            serde_json::from_str(s).map_err(|e| invalid(format!("channel JSON: {e}")))?;
        let atoms = raw
            .atoms
            .into_iter()
            .map(|(weight, probs)| {
                Ok(Atom {
                    weight,
                    pi: canonicalize(&probs)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Channel::from_atoms(raw.q, atoms)
    }
}

#[derive(Serialize, Deserialize)]
struct ChannelJson {
    q: usize,
    atoms: Vec<(f64, Vec<f64>)>,
}

impl From<&Channel> for ChannelJson {
    fn from(c: &Channel) -> Self {
        ChannelJson {
            q: c.q,
            atoms: c
                .atoms
                .iter()
                .map(|a| (a.weight, a.pi.probs().to_vec()))
                .collect(),
        }
    }
}

/// Textual channel description: `identity`, `trivial`, `potts:λ`,
/// `erasure:ε` or `fsc:p1,p2,...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChannelSpec {
    Identity,
    Trivial,
    Potts(f64),
    Erasure(f64),
    Fsc(Vec<f64>),
}

impl FromStr for ChannelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s, None),
        };
        let number = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| invalid(format!("channel `{s}` needs a parameter")))?
                .parse::<f64>()
                .map_err(|_| invalid(format!("bad channel parameter in `{s}`")))
        };
        match kind {
            "identity" | "id" => Ok(ChannelSpec::Identity),
            "trivial" => Ok(ChannelSpec::Trivial),
            "potts" => Ok(ChannelSpec::Potts(number(arg)?)),
            "erasure" | "ec" => Ok(ChannelSpec::Erasure(number(arg)?)),
            "fsc" => {
                let v = arg
                    .ok_or_else(|| invalid("fsc needs a probability vector"))?
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| invalid(format!("bad fsc vector in `{s}`")))?;
                Ok(ChannelSpec::Fsc(v))
            }
            _ => Err(invalid(format!("unknown channel kind `{kind}`"))),
        }
    }
}

impl fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelSpec::Identity => write!(f, "identity"),
            ChannelSpec::Trivial => write!(f, "trivial"),
            ChannelSpec::Potts(l) => write!(f, "potts:{l}"),
            ChannelSpec::Erasure(e) => write!(f, "erasure:{e}"),
            ChannelSpec::Fsc(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "fsc:{}", parts.join(","))
            }
        }
    }
}

/// Builds the channel described by `spec` over `[q]`.
pub fn make_channel(spec: &ChannelSpec, q: usize) -> Result<Channel> {
    if q < 2 {
        return Err(invalid("q must be at least 2"));
    }
    match spec {
        ChannelSpec::Identity => Ok(Channel::identity(q)),
        ChannelSpec::Trivial => Ok(Channel::trivial(q)),
        ChannelSpec::Potts(lambda) => {
            let p = PottsParams::new(q, *lambda)?;
            Ok(Channel::fsc(push_unchecked(&SimplexPoint::delta(q), p.lambda)))
        }
        ChannelSpec::Erasure(eps) => {
            if !(0.0..=1.0).contains(eps) {
                return Err(invalid(format!("erasure probability {eps} outside [0, 1]")));
            }
            let atoms = vec![
                Atom {
                    weight: 1.0 - eps,
                    pi: SimplexPoint::delta(q),
                },
                Atom {
                    weight: *eps,
                    pi: SimplexPoint::uniform(q),
                },
            ];
            Channel::from_atoms(q, atoms)
        }
        ChannelSpec::Fsc(v) => {
            if v.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    found: v.len(),
                });
            }
            Ok(Channel::fsc(canonicalize(v)?))
        }
    }
}

/// `P ∘ P_λ`: pushes every atom through the Potts map.
pub fn compose_potts(p: &Channel, lambda: f64) -> Result<Channel> {
    let params = PottsParams::new(p.q, lambda)?;
    Ok(Channel {
        q: p.q,
        atoms: p
            .atoms
            .iter()
            .map(|a| Atom {
                weight: a.weight,
                pi: push_unchecked(&a.pi, params.lambda),
            })
            .collect(),
    })
}

/// Draws the likelihood vector an `FSC_π` output induces when the true
/// input is `input`.
///
/// The FSC output is a permutation `τ` whose likelihood over inputs is
/// `i ↦ π_{τ⁻¹(i)}`. Given the input, the coordinate of π landing on it is
/// `j` with probability `π_j`; the remaining coordinates are placed
/// uniformly at random.
pub fn sample_likelihood<R: Rng + ?Sized>(pi: &SimplexPoint, input: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; pi.q()];
    sample_likelihood_into(pi, input, rng, &mut out);
    out
}

/// [`sample_likelihood`] writing into `out` (length `q`).
pub fn sample_likelihood_into<R: Rng + ?Sized>(pi: &SimplexPoint, input: usize, rng: &mut R, out: &mut [f64]) {
    let probs = pi.probs();
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut hit = probs.len() - 1;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            hit = j;
            break;
        }
    }
    place_likelihood(pi, input, hit, rng, out);
}

/// Completes a likelihood draw once coordinate `hit` of π is known to sit
/// on `input`: the other coordinates fill the other positions at random.
pub(crate) fn place_likelihood<R: Rng + ?Sized>(
    pi: &SimplexPoint,
    input: usize,
    hit: usize,
    rng: &mut R,
    out: &mut [f64],
) {
    let probs = pi.probs();
    let q = probs.len();
    out[input] = probs[hit];
    let rest = |j: &usize| *j != hit;
    let first = (0..q).find(rest).map(|j| probs[j]);
    if let Some(v) = first {
        if (0..q).filter(rest).all(|j| probs[j] == v) {
            // equal remaining values: their arrangement is irrelevant
            for (i, o) in out.iter_mut().enumerate() {
                if i != input {
                    *o = v;
                }
            }
            return;
        }
    }
    // remaining coordinates go to the other positions in uniformly random
    // order (inside-out Fisher-Yates over the free slots)
    let mut filled = 0usize;
    for (j, &p) in probs.iter().enumerate() {
        if j == hit {
            continue;
        }
        let r = rng.gen_range(0..=filled);
        let slot_r = skip(r, input);
        let slot_f = skip(filled, input);
        if r != filled {
            out[slot_f] = out[slot_r];
        }
        out[slot_r] = p;
        filled += 1;
    }
}

/// The `i`-th index of `0..q` with `input` removed.
#[inline]
fn skip(i: usize, input: usize) -> usize {
    if i < input {
        i
    } else {
        i + 1
    }
}

/// Draws an atom index with probability proportional to its weight.
pub(crate) fn draw_index<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = *cumulative.last().expect("non-empty channel");
    let u = rng.gen::<f64>() * total;
    cumulative
        .partition_point(|&c| c <= u)
        .min(cumulative.len() - 1)
}
