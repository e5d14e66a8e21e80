//! Monte Carlo on explicit broadcast trees: sample a tree and its labels,
//! observe it through leaf and survey channels, and compute the exact root
//! posterior by sum-product. Serves as an independent oracle for density
//! evolution and for the majority-decider variance recursions.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::{OffspringDist, OffspringKind};
use crate::channels::{draw_index, place_likelihood, Channel};
use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::simplex::PottsParams;

pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;

/// A rooted tree in breadth-first order: node 0 is the root, parents
/// precede children, and the nodes at depth `j` occupy
/// `level_start[j]..level_start[j + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeSample {
    pub parent: Vec<u32>,
    pub level_start: Vec<usize>,
}

impl TreeSample {
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.level_start.len() - 2
    }

    /// Number of nodes at depth at most `k`.
    pub fn prefix(&self, k: usize) -> usize {
        self.level_start[(k + 1).min(self.level_start.len() - 1)]
    }

    pub fn depth_of(&self, v: usize) -> usize {
        self.level_start.partition_point(|&s| s <= v) - 1
    }
}

/// Untruncated Poisson draw by sequential inverse CDF.
fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0usize;
    while u >= cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if p == 0.0 && cdf < u {
            // numerically exhausted tail
            break;
        }
    }
    k
}

fn children<R: Rng + ?Sized>(offspring: &OffspringDist, rng: &mut R) -> usize {
    match offspring.kind {
        OffspringKind::Regular(d) => d,
        OffspringKind::Poisson(d) => poisson(d, rng),
    }
}

pub fn sample_tree<R: Rng + ?Sized>(
    offspring: &OffspringDist,
    k: usize,
    rng: &mut R,
    node_budget: usize,
) -> Result<TreeSample> {
    let mut parent = vec![u32::MAX];
    let mut level_start = vec![0, 1];
    for _ in 0..k {
        let (lo, hi) = (level_start[level_start.len() - 2], level_start[level_start.len() - 1]);
        for v in lo..hi {
            let b = children(offspring, rng);
            if parent.len() + b > node_budget {
                return Err(Error::NodeBudget {
                    nodes: parent.len() + b,
                    budget: node_budget,
                });
            }
            parent.extend(std::iter::repeat(v as u32).take(b));
        }
        level_start.push(parent.len());
    }
    Ok(TreeSample { parent, level_start })
}

/// Root uniform, each child drawn from its parent's Potts row.
pub fn broadcast<R: Rng + ?Sized>(tree: &TreeSample, potts: &PottsParams, rng: &mut R) -> Vec<u8> {
    let q = potts.q;
    let keep = potts.lambda + (1.0 - potts.lambda) / q as f64;
    let other = (1.0 - potts.lambda) / q as f64;
    let mut labels = vec![0u8; tree.len()];
    labels[0] = rng.gen_range(0..q) as u8;
    for v in 1..tree.len() {
        let p = labels[tree.parent[v] as usize] as usize;
        // P(child = p) = keep, every other color `other`
        let u: f64 = rng.gen();
        labels[v] = if u < keep {
            p as u8
        } else {
            let j = (((u - keep) / other) as usize).min(q - 2);
            (if j >= p { j + 1 } else { j }) as u8
        };
    }
    labels
}

/// Per-node likelihood vectors (`len·q` values) drawn through a channel.
#[derive(Debug, Clone)]
pub struct Observation {
    pub q: usize,
    pub like: Vec<f64>,
}

impl Observation {
    pub fn draw<R: Rng + ?Sized>(channel: &Channel, labels: &[u8], rng: &mut R) -> Self {
        let q = channel.q();
        let sampler = AtomSampler::new(channel);
        let mut like = vec![0.0; labels.len() * q];
        for (v, &x) in labels.iter().enumerate() {
            sampler.draw(x as usize, rng, &mut like[v * q..(v + 1) * q]);
        }
        Observation { q, like }
    }
}

/// Precomputed tables for drawing likelihood vectors from a channel.
struct AtomSampler<'a> {
    channel: &'a Channel,
    cum: Vec<f64>,
    /// Per atom: cumulative π and, per hit coordinate, the common value of
    /// the remaining coordinates when they are all equal.
    atoms: Vec<(Vec<f64>, Vec<Option<f64>>)>,
}

impl<'a> AtomSampler<'a> {
    fn new(channel: &'a Channel) -> Self {
        let atoms = channel
            .atoms()
            .iter()
            .map(|a| {
                let p = a.pi.probs();
                let cum: Vec<f64> = p
                    .iter()
                    .scan(0.0, |acc, x| {
                        *acc += x;
                        Some(*acc)
                    })
                    .collect();
                let rest = (0..p.len())
                    .map(|hit| {
                        let mut others = (0..p.len()).filter(|&j| j != hit).map(|j| p[j]);
                        let first = others.next()?;
                        others.all(|x| x == first).then_some(first)
                    })
                    .collect();
                (cum, rest)
            })
            .collect();
        AtomSampler {
            channel,
            cum: channel.cumulative(),
            atoms,
        }
    }

    #[inline]
    fn draw<R: Rng + ?Sized>(&self, input: usize, rng: &mut R, out: &mut [f64]) {
        let a = if self.cum.len() == 1 { 0 } else { draw_index(&self.cum, rng) };
        let pi = &self.channel.atoms()[a].pi;
        let (cum, rest) = &self.atoms[a];
        let hit = if cum[0] >= 1.0 {
            0
        } else {
            let u: f64 = rng.gen();
            cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
        };
        match rest[hit] {
            Some(v) => {
                out.fill(v);
                out[input] = pi.probs()[hit];
            }
            None => place_likelihood(pi, input, hit, rng, out),
        }
    }
}

/// Root posterior of the tree truncated at depth `k`, with `leaf`
/// likelihoods applied on depth-`k` nodes and `survey` likelihoods on every
/// node of depth at most `k`.
pub fn exact_posterior(
    tree: &TreeSample,
    lambda: f64,
    k: usize,
    leaf: Option<&Observation>,
    survey: Option<&Observation>,
    q: usize,
) -> Result<Vec<f64>> {
    let mut scratch = Vec::new();
    posterior_with(tree, lambda, k, leaf, survey, q, &mut scratch)
}

fn posterior_with(
    tree: &TreeSample,
    lambda: f64,
    k: usize,
    leaf: Option<&Observation>,
    survey: Option<&Observation>,
    q: usize,
    scratch: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    if k > tree.depth() {
        return Err(invalid(format!("depth {k} exceeds the sampled depth {}", tree.depth())));
    }
    for o in [leaf, survey].into_iter().flatten() {
        if o.q != q || o.like.len() < tree.prefix(k) * q {
            return Err(invalid("observation does not match the tree"));
        }
    }
    let leaf = leaf.map(|o| o.like.as_slice());
    let survey = survey.map(|o| o.like.as_slice());
    let out = match q {
        2 => pass::<2>(tree, lambda, k, leaf, survey, scratch),
        3 => pass::<3>(tree, lambda, k, leaf, survey, scratch),
        4 => pass::<4>(tree, lambda, k, leaf, survey, scratch),
        5 => pass::<5>(tree, lambda, k, leaf, survey, scratch),
        _ => pass_dyn(tree, lambda, k, leaf, survey, q, scratch),
    };
    out.ok_or_else(|| Error::Internal("observations have zero likelihood".into()))
}

/// Leaves-to-root sum-product with `Σ_k m(k) P_λ(k|j) = λ m(j) + (1-λ)/q`
/// for messages normalized to sum 1.
fn pass<const Q: usize>(
    tree: &TreeSample,
    lambda: f64,
    k: usize,
    leaf: Option<&[f64]>,
    survey: Option<&[f64]>,
    scratch: &mut Vec<f64>,
) -> Option<Vec<f64>> {
    let n = tree.prefix(k);
    let leaf_start = tree.level_start[k];
    scratch.clear();
    match survey {
        Some(s) => scratch.extend_from_slice(&s[..n * Q]),
        None => scratch.resize(n * Q, 1.0),
    }
    if let Some(l) = leaf {
        for (m, x) in scratch[leaf_start * Q..].iter_mut().zip(&l[leaf_start * Q..n * Q]) {
            *m *= x;
        }
    }
    let shift = (1.0 - lambda) / Q as f64;
    for v in (1..n).rev() {
        let m: [f64; Q] = scratch[v * Q..v * Q + Q].try_into().expect("Q entries");
        let s: f64 = m.iter().sum();
        if !(s > 0.0) {
            return None;
        }
        let scale = lambda / s;
        let p = tree.parent[v] as usize;
        let t: &mut [f64; Q] = (&mut scratch[p * Q..p * Q + Q]).try_into().expect("Q entries");
        for j in 0..Q {
            t[j] *= scale * m[j] + shift;
        }
    }
    let s: f64 = scratch[..Q].iter().sum();
    (s > 0.0).then(|| scratch[..Q].iter().map(|x| x / s).collect())
}

fn pass_dyn(
    tree: &TreeSample,
    lambda: f64,
    k: usize,
    leaf: Option<&[f64]>,
    survey: Option<&[f64]>,
    q: usize,
    scratch: &mut Vec<f64>,
) -> Option<Vec<f64>> {
    let n = tree.prefix(k);
    let leaf_start = tree.level_start[k];
    scratch.clear();
    match survey {
        Some(s) => scratch.extend_from_slice(&s[..n * q]),
        None => scratch.resize(n * q, 1.0),
    }
    if let Some(l) = leaf {
        for (m, x) in scratch[leaf_start * q..].iter_mut().zip(&l[leaf_start * q..n * q]) {
            *m *= x;
        }
    }
    let shift = (1.0 - lambda) / q as f64;
    for v in (1..n).rev() {
        let (head, tail) = scratch.split_at_mut(v * q);
        let m = &tail[..q];
        let s: f64 = m.iter().sum();
        if !(s > 0.0) {
            return None;
        }
        let scale = lambda / s;
        let p = tree.parent[v] as usize;
        for (t, x) in head[p * q..(p + 1) * q].iter_mut().zip(m) {
            *t *= scale * x + shift;
        }
    }
    let s: f64 = scratch[..q].iter().sum();
    (s > 0.0).then(|| scratch[..q].iter().map(|x| x / s).collect())
}

/// Leaf channel `U` on the deepest level and survey `W` on every node.
/// `U = trivial` gives the survey-only scenario and `W = trivial` the
/// leaves-only one. The matching density-evolution recursion starts from
/// `M_0 = U ⋆ W` and applies `BP_W`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub leaf: Channel,
    pub survey: Channel,
}

impl Scenario {
    pub fn leaves(u: Channel) -> Self {
        let q = u.q();
        Scenario {
            leaf: u,
            survey: Channel::trivial(q),
        }
    }

    pub fn survey(w: Channel) -> Self {
        let q = w.q();
        Scenario {
            leaf: Channel::trivial(q),
            survey: w,
        }
    }

    pub fn both(u: Channel, w: Channel) -> Self {
        Scenario { leaf: u, survey: w }
    }

    pub fn name(&self) -> &'static str {
        match (self.leaf.is_trivial(), self.survey.is_trivial()) {
            (false, true) => "leaves",
            (true, false) => "survey",
            (true, true) => "none",
            (false, false) => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    fn from_samples(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = pairwise_sum(x) / n;
        let dev: Vec<f64> = x.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if x.len() > 1 { pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
        MeanSe {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 64 {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub scenario: String,
    pub k: usize,
    pub trials: usize,
    #[serde(rename = "I")]
    pub i: MeanSe,
    #[serde(rename = "Pe")]
    pub pe: MeanSe,
    pub chi2: MeanSe,
}

/// `(1 - max π, log q - H(π), q Σπ² - 1)` for one posterior.
fn functionals(pi: &[f64]) -> [f64; 3] {
    let q = pi.len() as f64;
    let mx = pi.iter().copied().fold(0.0, f64::max);
    let h: f64 = pi.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    let s2: f64 = pi.iter().map(|x| x * x).sum();
    [1.0 - mx, q.ln() - h, q * s2 - 1.0]
}

/// Estimates for every scenario at every depth `0..=k`, sharing one tree
/// and labeling per trial. Result is indexed `[scenario][depth]`.
pub fn estimate_many(
    scenarios: &[Scenario],
    potts: PottsParams,
    offspring: &OffspringDist,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<Vec<Estimate>>> {
    if trials < 2 {
        return Err(invalid("need at least two trials"));
    }
    let q = potts.q;
    for s in scenarios {
        for ch in [&s.leaf, &s.survey] {
            if ch.q() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    found: ch.q(),
                });
            }
        }
    }
    let n_s = scenarios.len();
    let width = n_s * (k + 1) * 3;
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<f64>> {
            let mut rng = rng::fast_stream(seed, t as u64);
            let tree = sample_tree(offspring, k, &mut rng, DEFAULT_NODE_BUDGET)?;
            let labels = broadcast(&tree, &potts, &mut rng);
            let mut row = Vec::with_capacity(width);
            let mut scratch = Vec::new();
            // scenarios using the same channel share its draws
            let mut drawn: Vec<(&Channel, Observation)> = Vec::new();
            for s in scenarios {
                for ch in [&s.leaf, &s.survey] {
                    if !ch.is_trivial() && !drawn.iter().any(|(c, _)| *c == ch) {
                        drawn.push((ch, Observation::draw(ch, &labels, &mut rng)));
                    }
                }
            }
            let lookup = |ch: &Channel| drawn.iter().find(|(c, _)| *c == ch).map(|(_, o)| o);
            for s in scenarios {
                let leaf = lookup(&s.leaf);
                let survey = lookup(&s.survey);
                for depth in 0..=k {
                    let post = posterior_with(&tree, potts.lambda, depth, leaf, survey, q, &mut scratch)?;
                    row.extend(functionals(&post));
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let column = |c: usize| -> Vec<f64> { per_trial.iter().map(|r| r[c]).collect() };
    Ok((0..n_s)
        .map(|si| {
            (0..=k)
                .map(|depth| {
                    let base = (si * (k + 1) + depth) * 3;
                    Estimate {
                        scenario: scenarios[si].name().to_string(),
                        k: depth,
                        trials,
                        pe: MeanSe::from_samples(&column(base)),
                        i: MeanSe::from_samples(&column(base + 1)),
                        chi2: MeanSe::from_samples(&column(base + 2)),
                    }
                })
                .collect()
        })
        .collect())
}

pub fn estimate(
    scenario: &Scenario,
    potts: PottsParams,
    offspring: &OffspringDist,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<Estimate> {
    let mut all = estimate_many(std::slice::from_ref(scenario), potts, offspring, k, trials, seed)?;
    Ok(all.remove(0).pop().expect("k + 1 depths"))
}

/// Predicted moments of the majority statistic `S_k = Σ_{v ∈ L_k} e_{ν_v}`
/// with leaves observed through `P_η`, `e_+ = 1`, `e_- = -1`, 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRecursion {
    /// `Var⁺(S_j)` for `j = 0..=k`.
    pub var_plus: Vec<f64>,
    /// `Var⁰(S_j)` for `j = 0..=k`.
    pub var_zero: Vec<f64>,
    /// Leading-order asymptotic `Var⁺(S_k)`; `None` at a pole.
    pub closed_form_plus: Option<f64>,
    /// `var_plus[k] / closed_form_plus`.
    pub ratio: Option<f64>,
}

pub fn variance_recursion(q: usize, lambda: f64, d: f64, eta: f64, k: usize, regular: bool) -> Result<VarianceRecursion> {
    PottsParams::new(q, lambda)?;
    PottsParams::new(q, eta)?;
    let qf = q as f64;
    let ind_r = if regular { 1.0 } else { 0.0 };
    let mut vp = vec![eta + 2.0 * (1.0 - eta) / qf - eta * eta];
    let mut v0 = vec![2.0 * (1.0 - eta) / qf];
    let stay = lambda + 2.0 * (1.0 - lambda) / qf;
    let cross = (1.0 - lambda) / qf;
    for j in 0..k {
        let drive = d * eta * eta * (d * lambda).powi(2 * j as i32);
        let (p, z) = (vp[j], v0[j]);
        vp.push(drive * (stay - lambda * lambda * ind_r) + d * (stay * p + cross * (qf - 2.0) * z));
        v0.push(drive * 2.0 * cross + d * (2.0 * cross * p + (lambda + cross * (qf - 2.0)) * z));
    }
    let (a, b) = (d * lambda * lambda - 1.0, d * lambda - 1.0);
    let closed = (a.abs() > 1e-12 && b.abs() > 1e-12).then(|| {
        2.0 / qf
            * ((1.0 - lambda * lambda * ind_r) / a + (1.0 - lambda * ind_r) / b * (qf - 2.0) / 2.0)
            * eta
            * eta
            * (d * lambda).powi(2 * k as i32)
    });
    let ratio = closed.map(|c| vp[k] / c);
    Ok(VarianceRecursion {
        var_plus: vp,
        var_zero: v0,
        closed_form_plus: closed,
        ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMoments {
    pub mean: MeanSe,
    pub var: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityStats {
    pub k: usize,
    pub trials: usize,
    pub plus: ConditionalMoments,
    pub minus: ConditionalMoments,
    /// Root colored outside `{+, -}`; absent for `q = 2`.
    pub zero: Option<ConditionalMoments>,
    pub predicted_mean_plus: f64,
    pub predicted_var_plus: f64,
    pub predicted_var_zero: f64,
}

fn majority_sample<R: Rng + ?Sized>(
    root: u8,
    potts: &PottsParams,
    offspring: &OffspringDist,
    eta: f64,
    k: usize,
    rng: &mut R,
) -> f64 {
    let q = potts.q;
    let keep = potts.lambda + (1.0 - potts.lambda) / q as f64;
    let other = (1.0 - potts.lambda) / q as f64;
    let step = |p: u8, keep: f64, other: f64, rng: &mut R| -> u8 {
        let u: f64 = rng.gen();
        if u < keep {
            p
        } else {
            let j = (((u - keep) / other) as usize).min(q - 2);
            (if j >= p as usize { j + 1 } else { j }) as u8
        }
    };
    let mut level = vec![root];
    for _ in 0..k {
        let mut next = Vec::with_capacity(level.len() * 4);
        for &p in &level {
            for _ in 0..children(offspring, rng) {
                next.push(step(p, keep, other, rng));
            }
        }
        level = next;
    }
    let (ek, eo) = (eta + (1.0 - eta) / q as f64, (1.0 - eta) / q as f64);
    level
        .iter()
        .map(|&x| match step(x, ek, eo, rng) {
            0 => 1.0,
            1 => -1.0,
            _ => 0.0,
        })
        .sum()
}

fn moments(x: &[f64]) -> ConditionalMoments {
    let n = x.len() as f64;
    let mean = MeanSe::from_samples(x);
    let c2: Vec<f64> = x.iter().map(|v| (v - mean.mean).powi(2)).collect();
    let c4: Vec<f64> = c2.iter().map(|v| v * v).collect();
    let var = pairwise_sum(&c2) / (n - 1.0);
    let m4 = pairwise_sum(&c4) / n;
    ConditionalMoments {
        mean,
        var: MeanSe {
            mean: var,
            se: ((m4 - var * var).max(0.0) / n).sqrt(),
        },
    }
}

/// Simulates `S_k` with the root fixed to `+`, `-` and (for `q ≥ 3`) a
/// third color, `trials` times each, and compares with the recursions.
pub fn majority_stats(
    potts: PottsParams,
    offspring: &OffspringDist,
    eta: f64,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<MajorityStats> {
    PottsParams::new(potts.q, eta)?;
    if trials < 2 {
        return Err(invalid("need at least two trials"));
    }
    let roots: Vec<u8> = if potts.q >= 3 { vec![0, 1, 2] } else { vec![0, 1] };
    let mut out = Vec::new();
    for (ri, &root) in roots.iter().enumerate() {
        let xs: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::fast_stream(rng::derive(seed, ri as u64), t as u64);
                majority_sample(root, &potts, offspring, eta, k, &mut rng)
            })
            .collect();
        out.push(moments(&xs));
    }
    let d = offspring.mean();
    let rec = variance_recursion(potts.q, potts.lambda, d, eta, k, offspring.is_regular())?;
    Ok(MajorityStats {
        k,
        trials,
        plus: out[0],
        minus: out[1],
        zero: out.get(2).copied(),
        predicted_mean_plus: eta * (d * potts.lambda).powi(k as i32),
        predicted_var_plus: rec.var_plus[k],
        predicted_var_zero: rec.var_zero[k],
    })
}

/// `(E⁺[S_k ∘ P_λ])² / E⁺[(S_k ∘ P_λ)²]` from the exact recursions; a lower
/// bound on `C_χ²((M_k ∘ P_λ)^R)` for leaf channel `P_η`.
pub fn majority_chi2_bound(q: usize, lambda: f64, d: f64, eta: f64, k: usize, regular: bool) -> Result<f64> {
    let rec = variance_recursion(q, lambda, d, eta, k, regular)?;
    let qf = q as f64;
    let mean_plus = eta * (d * lambda).powi(k as i32);
    let stay = lambda + 2.0 * (1.0 - lambda) / qf;
    let second = stay * (rec.var_plus[k] + mean_plus * mean_plus) + (1.0 - lambda) / qf * (qf - 2.0) * rec.var_zero[k];
    Ok((lambda * mean_plus).powi(2) / second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{make_channel, ChannelSpec};
    use approx::assert_abs_diff_eq;

    fn potts(q: usize, l: f64) -> PottsParams {
        PottsParams::new(q, l).unwrap()
    }

    #[test]
    fn potts_observations_have_the_right_law() {
        // top coordinate on the input with probability 2/3, each other 1/6
        let ch = make_channel(&ChannelSpec::Potts(0.5), 3).unwrap();
        let mut rng = rng::stream(4, 0);
        let n = 60_000;
        let o = Observation::draw(&ch, &vec![0u8; n], &mut rng);
        let mut top = [0usize; 3];
        for l in o.like.chunks(3) {
            top[(0..3).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap()] += 1;
        }
        let se = (2.0f64 / 9.0 / n as f64).sqrt();
        assert!((top[0] as f64 / n as f64 - 2.0 / 3.0).abs() < 5.0 * se, "{top:?}");
        assert!((top[1] as f64 / n as f64 - 1.0 / 6.0).abs() < 5.0 * se, "{top:?}");
    }

    #[test]
    fn tree_shapes() {
        let mut rng = rng::stream(1, 0);
        let t = sample_tree(&OffspringDist::regular(2), 0, &mut rng, 100).unwrap();
        assert_eq!(t.len(), 1);
        let t = sample_tree(&OffspringDist::regular(2), 3, &mut rng, 100).unwrap();
        assert_eq!(t.len(), 15);
        assert_eq!(t.level_start, vec![0, 1, 3, 7, 15]);
        for v in 1..t.len() {
            assert_eq!(t.depth_of(t.parent[v] as usize) + 1, t.depth_of(v));
        }
        assert!(matches!(
            sample_tree(&OffspringDist::regular(10), 5, &mut rng, 1000),
            Err(Error::NodeBudget { .. })
        ));
    }

    #[test]
    fn galton_watson_mean_size() {
        let off = OffspringDist::poisson(3.0).unwrap();
        let sizes: Vec<f64> = (0..100_000)
            .map(|t| sample_tree(&off, 2, &mut rng::stream(5, t), 1000).unwrap().len() as f64)
            .collect();
        let m = MeanSe::from_samples(&sizes);
        assert!((m.mean - 13.0).abs() < 3.0 * m.se, "{m:?}");
    }

    #[test]
    fn broadcast_extremes_and_marginal() {
        let mut rng = rng::stream(2, 0);
        let t = sample_tree(&OffspringDist::regular(3), 3, &mut rng, 100).unwrap();
        let l = broadcast(&t, &potts(4, 1.0), &mut rng);
        assert!(l.iter().all(|&x| x == l[0]));
        let t1 = sample_tree(&OffspringDist::regular(1), 1, &mut rng, 10).unwrap();
        let mut hits = 0usize;
        let mut total = 0usize;
        for s in 0..200_000u64 {
            let l = broadcast(&t1, &potts(2, 0.5), &mut rng::stream(3, s));
            if l[0] == 1 {
                total += 1;
                hits += (l[1] == 1) as usize;
            }
        }
        let p = hits as f64 / total as f64;
        let se = (0.75 * 0.25 / total as f64).sqrt();
        assert!((p - 0.75).abs() < 3.0 * se, "{p}");
    }

    #[test]
    fn uniform_labels_at_lambda_zero() {
        let t = sample_tree(&OffspringDist::regular(1), 1, &mut rng::stream(0, 0), 10).unwrap();
        let mut counts = [0usize; 3];
        for s in 0..60_000u64 {
            let l = broadcast(&t, &potts(3, 0.0), &mut rng::stream(4, s));
            if l[0] == 0 {
                counts[l[1] as usize] += 1;
            }
        }
        let n: usize = counts.iter().sum();
        for c in counts {
            let p = c as f64 / n as f64;
            assert!((p - 1.0 / 3.0).abs() < 4.0 * (2.0 / 9.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn posterior_examples() {
        let mut rng = rng::stream(0, 0);
        let t = sample_tree(&OffspringDist::regular(2), 1, &mut rng, 10).unwrap();
        let post = exact_posterior(&t, 0.6, 1, None, None, 2).unwrap();
        assert_eq!(post, vec![0.5, 0.5]);
        // both children seen exactly as color 1
        let obs = Observation::draw(&Channel::identity(2), &[0, 1, 1], &mut rng);
        let post = exact_posterior(&t, 0.6, 1, Some(&obs), None, 2).unwrap();
        assert_abs_diff_eq!(post[1], 16.0 / 17.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post[0], 1.0 / 17.0, epsilon = 1e-15);
        // root observed exactly
        let t0 = sample_tree(&OffspringDist::regular(2), 0, &mut rng, 10).unwrap();
        let obs = Observation::draw(&Channel::identity(3), &[2], &mut rng);
        assert_eq!(exact_posterior(&t0, 0.6, 0, None, Some(&obs), 3).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn depth_one_posterior_is_bayes() {
        let mut rng = rng::stream(9, 0);
        let t = sample_tree(&OffspringDist::regular(1), 1, &mut rng, 10).unwrap();
        let p = potts(3, 0.4);
        let rows = crate::simplex::potts_matrix(&p);
        for child in 0..3u8 {
            let obs = Observation::draw(&Channel::identity(3), &[0, child], &mut rng);
            let post = exact_posterior(&t, 0.4, 1, Some(&obs), None, 3).unwrap();
            let z: f64 = (0..3).map(|i| rows[i][child as usize]).sum();
            for i in 0..3 {
                assert_abs_diff_eq!(post[i], rows[i][child as usize] / z, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn trivial_survey_carries_no_information() {
        let sc = Scenario::survey(Channel::trivial(3));
        let e = estimate(&sc, potts(3, 0.5), &OffspringDist::regular(2), 0, 1000, 1).unwrap();
        assert!(e.i.mean.abs() < 1e-12);
    }

    #[test]
    fn depth_one_error_matches_enumeration() {
        let sc = Scenario::leaves(Channel::identity(2));
        let e = estimate(&sc, potts(2, 0.8), &OffspringDist::regular(2), 1, 100_000, 7).unwrap();
        // posterior max is 0.81/0.82 on agreement and 1/2 on disagreement;
        // agreement has probability 0.82
        let exact = 0.82 * (1.0 - 0.81 / 0.82) + 0.18 * 0.5;
        assert!((e.pe.mean - exact).abs() < 3.0 * e.pe.se, "{e:?} {exact}");
    }

    #[test]
    fn estimates_are_deterministic() {
        let w = make_channel(&ChannelSpec::Erasure(0.5), 3).unwrap();
        let sc = Scenario::both(Channel::identity(3), w);
        let off = OffspringDist::poisson(2.0).unwrap();
        let a = estimate(&sc, potts(3, 0.5), &off, 3, 500, 11).unwrap();
        let b = estimate(&sc, potts(3, 0.5), &off, 3, 500, 11).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_value(&a).unwrap();
        for key in ["scenario", "k", "trials", "I", "Pe", "chi2"] {
            assert!(json.get(key).is_some());
        }
    }

    #[test]
    fn recursion_base_and_one_step() {
        let (q, l, d, eta) = (3usize, 0.7, 3.0, 0.5);
        let r = variance_recursion(q, l, d, eta, 1, true).unwrap();
        let vp0 = 0.5 + 2.0 * 0.5 / 3.0 - 0.25;
        let v00 = 2.0 * 0.5 / 3.0;
        assert_abs_diff_eq!(r.var_plus[0], vp0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.var_zero[0], v00, epsilon = 1e-15);
        let stay = 0.7 + 0.2;
        let by_hand = 3.0 * 0.25 * (stay - 0.49) + 3.0 * (stay * vp0 + 0.1 * v00);
        assert_abs_diff_eq!(r.var_plus[1], by_hand, epsilon = 1e-14);
    }

    #[test]
    fn binary_recursion_is_scalar() {
        // with q = 2 the Var⁰ coefficients vanish and Var⁺ follows
        // v ↦ dη²(dλ)^{2j}(λ + (1-λ) - λ²) + d v
        let r = variance_recursion(2, 0.8, 3.0, 0.6, 6, true).unwrap();
        let mut vp = 0.6 + (1.0 - 0.6) - 0.36;
        assert_abs_diff_eq!(vp, r.var_plus[0], epsilon = 1e-15);
        for j in 0..6usize {
            vp = 3.0 * 0.36 * 2.4f64.powi(2 * j as i32) * (1.0 - 0.64) + 3.0 * vp;
            assert_abs_diff_eq!(vp, r.var_plus[j + 1], epsilon = 1e-12 * vp);
        }
    }

    #[test]
    fn recursion_matches_closed_form_asymptotically() {
        for regular in [true, false] {
            let r = variance_recursion(3, 0.7, 3.0, 0.5, 20, regular).unwrap();
            assert!((r.ratio.unwrap() - 1.0).abs() < 0.05, "{:?}", r.ratio);
        }
    }

    #[test]
    fn lambda_zero_kills_the_mean() {
        let s = majority_stats(potts(3, 0.0), &OffspringDist::regular(2), 0.5, 2, 2000, 3).unwrap();
        assert_eq!(s.predicted_mean_plus, 0.0);
        assert!(s.plus.mean.mean.abs() < 4.0 * s.plus.mean.se);
    }

    #[test]
    fn majority_chi2_bound_above_ks() {
        for (q, l, d, regular) in [(3usize, 0.7, 3.0, true), (4, 0.6, 4.0, false), (2, 0.8, 2.0, true)] {
            let c = crate::constants::c_small(q, l, d).unwrap();
            let ind_r = if regular { 1.0 } else { 0.0 };
            let bound = c * (d * l * l - 1.0) / (d - ind_r);
            let got = majority_chi2_bound(q, l, d, 0.5, 30, regular).unwrap();
            assert!(got >= 0.9 * bound, "q={q}: {got} vs {bound}");
        }
    }
}
