//! The belief-propagation operator on channel populations.
//!
//! One step maps `M` to `E_b (M ∘ P_λ)^{⋆b}`, optionally ⋆-convolved with a
//! survey channel `W`. Small populations are expanded exactly; once the
//! exact expansion would blow past its budget the step switches to
//! population dynamics, drawing `cap` independent posteriors of the new
//! channel.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{
    self, compose_potts, draw_index, measures, phi_h, resample, sample_likelihood, star,
    star_with_budget, Atom, Channel, Measures, STAR_BUDGET,
};
use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::simplex::{PottsParams, SimplexPoint};

/// Tail mass discarded when truncating a Poisson offspring law.
pub const POISSON_TAIL: f64 = 1e-12;
/// Default convergence tolerance on `|ΔP_e| + |ΔC| + |Δχ²|`.
pub const DEFAULT_TOL: f64 = 1e-7;

const SAMPLE_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OffspringKind {
    Regular(usize),
    Poisson(f64),
}

/// Offspring law with an explicit (possibly truncated) pmf on `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringDist {
    pub kind: OffspringKind,
    pmf: Vec<f64>,
}

impl OffspringDist {
    pub fn regular(d: usize) -> Self {
        let mut pmf = vec![0.0; d + 1];
        pmf[d] = 1.0;
        OffspringDist {
            kind: OffspringKind::Regular(d),
            pmf,
        }
    }

    /// Poisson(d) truncated once the remaining tail mass drops below
    /// [`POISSON_TAIL`], then renormalized.
    pub fn poisson(d: f64) -> Result<Self> {
        if !(d >= 0.0 && d.is_finite()) {
            return Err(invalid(format!("Poisson mean {d} must be finite and non-negative")));
        }
        let mut pmf = Vec::new();
        let mut p = (-d).exp();
        let mut cum = 0.0;
        let mut b = 0usize;
        loop {
            pmf.push(p);
            cum += p;
            // stop once past the mode and the remaining tail is negligible
            if 1.0 - cum < POISSON_TAIL && b as f64 >= d {
                break;
            }
            b += 1;
            p *= d / b as f64;
            if b > 10_000 {
                break;
            }
        }
        let total: f64 = pmf.iter().sum();
        for x in pmf.iter_mut() {
            *x /= total;
        }
        Ok(OffspringDist {
            kind: OffspringKind::Poisson(d),
            pmf,
        })
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn mean(&self) -> f64 {
        match self.kind {
            OffspringKind::Regular(d) => d as f64,
            OffspringKind::Poisson(d) => d,
        }
    }

    pub fn is_regular(&self) -> bool {
        matches!(self.kind, OffspringKind::Regular(_))
    }

    fn max_children(&self) -> usize {
        self.pmf.len() - 1
    }

    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if let OffspringKind::Regular(d) = self.kind {
            return d;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (b, &p) in self.pmf.iter().enumerate() {
            acc += p;
            if u < acc {
                return b;
            }
        }
        self.max_children()
    }
}

impl std::str::FromStr for OffspringDist {
    type Err = Error;

    /// `regular:d` or `poisson:d`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("offspring `{s}` should look like regular:3 or poisson:2.5")))?;
        match kind.trim() {
            "regular" => arg
                .trim()
                .parse::<usize>()
                .map(OffspringDist::regular)
                .map_err(|_| invalid(format!("bad regular degree in `{s}`"))),
            "poisson" => OffspringDist::poisson(
                arg.trim()
                    .parse::<f64>()
                    .map_err(|_| invalid(format!("bad Poisson mean in `{s}`")))?,
            ),
            other => Err(invalid(format!("unknown offspring kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for OffspringDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            OffspringKind::Regular(d) => write!(f, "regular:{d}"),
            OffspringKind::Poisson(d) => write!(f, "poisson:{d}"),
        }
    }
}

/// How a step evaluates the offspring mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Realization {
    /// Exact expansion when it fits the budget, population dynamics otherwise.
    Auto,
    /// Always expand exactly; budget overruns are errors.
    Exact,
    /// Always draw `cap` posteriors.
    Sampled,
}

#[derive(Debug, Clone)]
pub struct BpParams {
    pub potts: PottsParams,
    pub offspring: OffspringDist,
    pub survey: Option<Channel>,
    pub cap: usize,
    pub seed: u64,
    pub realization: Realization,
}

impl BpParams {
    pub fn new(potts: PottsParams, offspring: OffspringDist) -> Self {
        BpParams {
            potts,
            offspring,
            survey: None,
            cap: 10_000,
            seed: 0,
            realization: Realization::Auto,
        }
    }

    pub fn with_survey(mut self, survey: Channel) -> Self {
        self.survey = Some(survey);
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap.max(1);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_realization(mut self, realization: Realization) -> Self {
        self.realization = realization;
        self
    }

    fn check(&self, m: &Channel) -> Result<()> {
        if m.q() != self.potts.q {
            return Err(Error::DimensionMismatch {
                expected: self.potts.q,
                found: m.q(),
            });
        }
        if let Some(w) = &self.survey {
            if w.q() != self.potts.q {
                return Err(Error::DimensionMismatch {
                    expected: self.potts.q,
                    found: w.q(),
                });
            }
        }
        Ok(())
    }
}

/// Output of one step: the channel before and after the survey convolution.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// `E_b (M ∘ P_λ)^{⋆b}`.
    pub pre_survey: Channel,
    /// `pre_survey ⋆ W`, or `pre_survey` itself without a survey.
    pub channel: Channel,
    /// Whether a random reduction (resampling or sampling) was involved.
    pub stochastic: bool,
}

/// One application of `BP` (or `BP_W` when a survey is configured).
pub fn bp_step(m: &Channel, p: &BpParams) -> Result<Channel> {
    Ok(bp_step_detailed(m, p, 0)?.channel)
}

/// One step, seeded by `(p.seed, step)`.
pub fn bp_step_detailed(m: &Channel, p: &BpParams, step: u64) -> Result<StepOutput> {
    p.check(m)?;
    let composed = compose_potts(m, p.potts.lambda)?;
    let seed = rng::derive(p.seed, step);
    match p.realization {
        Realization::Sampled => Ok(sampled_step(&composed, p, seed)),
        Realization::Exact => exact_step(&composed, p, seed, usize::MAX),
        Realization::Auto => {
            if !exact_feasible(&composed, p) {
                return Ok(sampled_step(&composed, p, seed));
            }
            match exact_step(&composed, p, seed, 4 * p.cap) {
                Err(Error::BudgetExceeded { .. }) => Ok(sampled_step(&composed, p, seed)),
                other => other,
            }
        }
    }
}

fn exact_feasible(composed: &Channel, p: &BpParams) -> bool {
    let fact = (1..=p.potts.q).product::<usize>() as f64;
    let n = composed.len() as f64;
    let bmax = p.offspring.max_children();
    bmax <= 1 || n * n * fact <= STAR_BUDGET as f64
}

/// Exact mixture of ⋆-powers. Intermediate powers larger than `growth_cap`
/// abort with `BudgetExceeded` so that `Auto` can switch strategies.
fn exact_step(composed: &Channel, p: &BpParams, seed: u64, growth_cap: usize) -> Result<StepOutput> {
    let q = p.potts.q;
    let mut power = Channel::trivial(q);
    let mut mixture: Vec<Atom> = Vec::new();
    for (b, &mass) in p.offspring.pmf().iter().enumerate() {
        if b > 0 {
            power = star(&power, composed)?;
            if power.len() > growth_cap {
                return Err(Error::BudgetExceeded {
                    requested: power.len(),
                    budget: growth_cap,
                });
            }
        }
        if mass > 0.0 {
            mixture.extend(power.atoms().iter().map(|a| Atom {
                weight: a.weight * mass,
                pi: a.pi.clone(),
            }));
        }
    }
    let pre = Channel::from_atoms(q, mixture)?.normalized();
    let post = match &p.survey {
        Some(w) => star_with_budget(&pre, w, STAR_BUDGET)?,
        None => pre.clone(),
    };
    let stochastic = post.len() > p.cap;
    let channel = resample(&post, p.cap, seed);
    let pre_survey = if p.survey.is_some() {
        resample(&pre, p.cap, rng::derive(seed, 1))
    } else {
        channel.clone()
    };
    Ok(StepOutput {
        pre_survey,
        channel,
        stochastic,
    })
}

/// Population dynamics: each output atom is the canonical posterior of the
/// root given `b` independent child observations (and one survey
/// observation), simulated with the root color fixed to 0.
fn sampled_step(composed: &Channel, p: &BpParams, seed: u64) -> StepOutput {
    let q = p.potts.q;
    let cum = composed.cumulative();
    let survey = p.survey.as_ref().map(|w| (w, w.cumulative()));
    let n_chunks = p.cap.div_ceil(SAMPLE_CHUNK);
    let pairs: Vec<(SimplexPoint, SimplexPoint)> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let mut rng = rng::stream(seed, chunk as u64);
            let len = SAMPLE_CHUNK.min(p.cap - chunk * SAMPLE_CHUNK);
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let b = p.offspring.draw(&mut rng);
                let mut x = vec![1.0; q];
                for _ in 0..b {
                    let a = draw_index(&cum, &mut rng);
                    let l = sample_likelihood(&composed.atoms()[a].pi, 0, &mut rng);
                    multiply_rescaled(&mut x, &l);
                }
                let pre = SimplexPoint::from_weights(x.clone());
                let post = match &survey {
                    Some((w, wcum)) => {
                        let a = draw_index(wcum, &mut rng);
                        let l = sample_likelihood(&w.atoms()[a].pi, 0, &mut rng);
                        multiply_rescaled(&mut x, &l);
                        SimplexPoint::from_weights(x)
                    }
                    None => pre.clone(),
                };
                out.push((pre, post));
            }
            out
        })
        .collect();
    let (pre, post): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    StepOutput {
        pre_survey: Channel::equal_weight(q, pre),
        channel: Channel::equal_weight(q, post),
        stochastic: true,
    }
}

fn multiply_rescaled(x: &mut [f64], l: &[f64]) {
    let mut mx = 0.0f64;
    for (a, b) in x.iter_mut().zip(l) {
        *a *= b;
        mx = mx.max(*a);
    }
    if mx > 0.0 {
        for a in x.iter_mut() {
            *a /= mx;
        }
    }
}

/// Summary of `M_k` at one step of an iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub measures: Measures,
    /// `Φ^L(M_k) = C_SKL(M_k)` (clamped when saturated).
    pub phi_l: f64,
    /// `Φ^H(M_k) = Z(M_k^R)`.
    pub phi_h: f64,
    pub atoms: usize,
    /// Standard errors of `(P_e, C, χ²)` due to population sampling; zero
    /// while the channel is still exact.
    pub se: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct BpTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    pub last: Channel,
    /// `E_b (M_{k-1} ∘ P_λ)^{⋆b}` for the last step, before the survey.
    pub last_pre_survey: Option<Channel>,
}

impl BpTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,p_e,capacity,chi2,skl,phi_H,atoms\n");
        for r in &self.rows {
            let m = &r.measures;
            let _ = writeln!(
                s,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
                r.k, m.p_e, m.capacity, m.chi2, m.skl, r.phi_h, r.atoms
            );
        }
        s
    }
}

pub(crate) fn trace_row(k: usize, ch: &Channel, exact: bool) -> TraceRow {
    let m = measures(ch);
    let se = if exact {
        [0.0; 3]
    } else {
        let n_eff = 1.0 / ch.atoms().iter().map(|a| a.weight * a.weight).sum::<f64>();
        let (_, v_pe) = ch.functional_stats(|pi| 1.0 - pi.probs()[0]);
        let (_, v_h) = ch.functional_stats(|pi| {
            pi.probs().iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
        });
        let (_, v_c) = ch.functional_stats(|pi| {
            pi.q() as f64 * pi.probs().iter().map(|x| x * x).sum::<f64>()
        });
        [(v_pe / n_eff).sqrt(), (v_h / n_eff).sqrt(), (v_c / n_eff).sqrt()]
    };
    TraceRow {
        k,
        measures: m,
        phi_l: m.skl,
        phi_h: phi_h(ch),
        atoms: ch.len(),
        se,
    }
}

/// Iterates the operator from `m0`, stopping early once one step moves
/// `P_e + C + χ²` by less than `tol` in total.
pub fn iterate(m0: &Channel, p: &BpParams, k_max: usize, tol: f64) -> Result<BpTrace> {
    if k_max == 0 {
        return Err(invalid("k_max must be at least 1"));
    }
    p.check(m0)?;
    let mut exact = true;
    let mut rows = vec![trace_row(0, m0, exact)];
    let mut cur = m0.clone();
    let mut pre = None;
    let mut converged = false;
    for k in 1..=k_max {
        let out = bp_step_detailed(&cur, p, k as u64)?;
        exact &= !out.stochastic;
        let row = trace_row(k, &out.channel, exact);
        let prev = &rows[k - 1].measures;
        let delta = (row.measures.p_e - prev.p_e).abs()
            + (row.measures.capacity - prev.capacity).abs()
            + (row.measures.chi2 - prev.chi2).abs();
        rows.push(row);
        cur = out.channel;
        pre = Some(out.pre_survey);
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(BpTrace {
        rows,
        converged,
        last: cur,
        last_pre_survey: pre,
    })
}

/// Potential gaps between two coupled recursions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GapRow {
    pub k: usize,
    /// `Φ^L(M_k) - Φ^L(M̃_k)`; `None` when either side is saturated.
    pub gap_l: Option<f64>,
    /// `Φ^H(M̃_k) - Φ^H(M_k)`.
    pub gap_h: f64,
}

/// Evolves `m0` and `mtilde0` with identical seeds and records the
/// potential gaps at every step.
///
/// For `k ≥ 1` the low-SNR gap is measured on the channels before the survey
/// convolution. SKL capacity is additive under ⋆, so this equals the gap of
/// the full channels whenever that is finite, and it stays finite when the
/// survey itself has perfect atoms (erasure surveys).
pub fn phi_gap_trace(m0: &Channel, mtilde0: &Channel, p: &BpParams, k_max: usize) -> Result<Vec<GapRow>> {
    p.check(m0)?;
    p.check(mtilde0)?;
    let gap_l = |a: &Channel, b: &Channel| {
        let (ma, mb) = (measures(a), measures(b));
        (!ma.skl_saturated && !mb.skl_saturated).then(|| ma.skl - mb.skl)
    };
    let mut rows = vec![GapRow {
        k: 0,
        gap_l: gap_l(m0, mtilde0),
        gap_h: phi_h(mtilde0) - phi_h(m0),
    }];
    let (mut a, mut b) = (m0.clone(), mtilde0.clone());
    for k in 1..=k_max {
        let sa = bp_step_detailed(&a, p, k as u64)?;
        let sb = bp_step_detailed(&b, p, k as u64)?;
        rows.push(GapRow {
            k,
            gap_l: gap_l(&sa.pre_survey, &sb.pre_survey),
            gap_h: phi_h(&sb.channel) - phi_h(&sa.channel),
        });
        a = sa.channel;
        b = sb.channel;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// `C_χ²(P ∘ P_λ) ≤ λ² C_χ²(P)`.
pub fn check_chi2_contraction(p: &Channel, lambda: f64) -> Result<ContractionCheck> {
    let lhs = measures(&compose_potts(p, lambda)?).chi2;
    let rhs = lambda * lambda * measures(p).chi2;
    Ok(ContractionCheck {
        lhs,
        rhs,
        ok: lhs <= rhs + 1e-10,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityCheck {
    pub lhs: f64,
    pub sum: f64,
    pub ratio: f64,
}

/// Compares `C_χ²(P ⋆ Q)` with `C_χ²(P) + C_χ²(Q)` using an exact expansion.
pub fn check_subadditivity(p: &Channel, q: &Channel) -> Result<SubadditivityCheck> {
    let lhs = measures(&star(p, q)?).chi2;
    let sum = measures(p).chi2 + measures(q).chi2;
    let ratio = if sum == 0.0 { 1.0 } else { lhs / sum };
    Ok(SubadditivityCheck { lhs, sum, ratio })
}

/// Largest subadditivity ratio over pairs of FSC atoms drawn from a grid
/// of canonical points `(1-s, s·t, s·(1-t)·…)`; used to exhibit violations
/// for `q ≥ 3`.
pub fn subadditivity_grid_search(q: usize, steps: usize) -> Result<f64> {
    let mut points = Vec::new();
    for i in 0..=steps {
        for j in 0..=steps {
            let top = 0.3 + 0.7 * i as f64 / steps as f64;
            let second = (1.0 - top) * j as f64 / steps as f64;
            let rest = (1.0 - top - second) / (q as f64 - 2.0).max(1.0);
            let mut v = vec![top, second];
            v.extend(std::iter::repeat(rest).take(q.saturating_sub(2)));
            if q == 2 {
                v = vec![top, 1.0 - top];
            }
            points.push(crate::simplex::canonicalize(&v)?);
        }
    }
    let mut best: f64 = 0.0;
    for a in &points {
        for b in &points {
            let r = check_subadditivity(&Channel::fsc(a.clone()), &Channel::fsc(b.clone()))?;
            if r.sum > 0.0 {
                best = best.max(r.ratio);
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbeRow {
    pub eta: f64,
    pub sup_chi2: f64,
    pub final_chi2: f64,
}

/// Runs `BP_W` with Potts surveys `W = P_η` from `m0` and reports the
/// running supremum of `C_χ²(M_k)` over `1 ≤ k ≤ k_max`.
pub fn robust_reconstruction_probe(
    potts: PottsParams,
    offspring: &OffspringDist,
    etas: &[f64],
    m0: &Channel,
    k_max: usize,
    cap: usize,
    seed: u64,
) -> Result<Vec<ProbeRow>> {
    etas.iter()
        .map(|&eta| {
            let survey = channels::make_channel(&channels::ChannelSpec::Potts(eta), potts.q)?;
            let params = BpParams::new(potts, offspring.clone())
                .with_survey(survey)
                .with_cap(cap)
                .with_seed(seed);
            let trace = iterate(m0, &params, k_max, 0.0)?;
            let sup = trace.rows[1..]
                .iter()
                .map(|r| r.measures.chi2)
                .fold(0.0, f64::max);
            Ok(ProbeRow {
                eta,
                sup_chi2: sup,
                final_chi2: trace.rows.last().expect("non-empty").measures.chi2,
            })
        })
        .collect()
}
