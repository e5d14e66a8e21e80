//! Contraction constants `C^L(q,λ)`, `C^H(q,λ)` and `c^H(q,λ,d)`, and the
//! classification of parameter points against the boundary-irrelevance
//! conditions they enter.
//!
//! The inner supremum over `v ⊥ 1` is a generalized eigenvalue problem and
//! is solved exactly. The outer supremum over π is non-concave; a multistart
//! ascent gives a lower bound, so every condition is reported twice: with
//! the computed constant ("empirical") and with the proven caps `q²` and
//! `q^{5/2}` ("certified").

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{bhattacharyya, restrict_binary, Channel};
use crate::error::{invalid, Error, Result};
use crate::linalg::{complement_basis, max_generalized_eigenvalue, Matrix};
use crate::rng;
use crate::simplex::PottsParams;

/// Smallest coordinate allowed for π in the quadratic forms.
pub const PI_FLOOR: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-10;
const RANDOM_SEEDS: usize = 64;
const POLISHED_SEEDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Form {
    L,
    H,
}

fn check_inputs(pi: &[f64], v: &[f64]) -> Result<()> {
    if pi.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: pi.len(),
            found: v.len(),
        });
    }
    if let Some(x) = pi.iter().find(|&&x| !(x >= PI_FLOOR)) {
        return Err(invalid(format!("π entry {x:e} below the floor {PI_FLOOR:e}")));
    }
    let s: f64 = v.iter().sum();
    let norm = v.iter().map(|x| x.abs()).fold(1.0, f64::max);
    if s.abs() > ORTHO_TOL * norm {
        return Err(invalid(format!("v is not orthogonal to the all-ones vector (sum {s:e})")));
    }
    Ok(())
}

/// `⟨π^{-1} + π^{-2}/q, v²⟩`.
pub fn f_l(pi: &[f64], v: &[f64]) -> Result<f64> {
    check_inputs(pi, v)?;
    let q = pi.len() as f64;
    Ok(pi
        .iter()
        .zip(v)
        .map(|(p, x)| (1.0 / p + 1.0 / (q * p * p)) * x * x)
        .sum())
}

/// `‖π^{1/4}‖² ‖π^{-3/4} v‖² - ⟨π^{1/4}, π^{-3/4} v⟩²`.
pub fn f_h(pi: &[f64], v: &[f64]) -> Result<f64> {
    check_inputs(pi, v)?;
    let s: f64 = pi.iter().map(|p| p.sqrt()).sum();
    let a: f64 = pi.iter().zip(v).map(|(p, x)| x * x / p.powf(1.5)).sum();
    let b: f64 = pi.iter().zip(v).map(|(p, x)| x / p.sqrt()).sum();
    Ok((s * a - b * b).max(0.0))
}

fn form_matrix(pi: &[f64], which: Form) -> Matrix {
    let q = pi.len();
    let qf = q as f64;
    let mut m = vec![vec![0.0; q]; q];
    match which {
        Form::L => {
            for i in 0..q {
                m[i][i] = 1.0 / pi[i] + 1.0 / (qf * pi[i] * pi[i]);
            }
        }
        Form::H => {
            let s: f64 = pi.iter().map(|p| p.sqrt()).sum();
            let u: Vec<f64> = pi.iter().map(|p| 1.0 / p.sqrt()).collect();
            for i in 0..q {
                for j in 0..q {
                    m[i][j] = -u[i] * u[j];
                }
                m[i][i] += s / pi[i].powf(1.5);
            }
        }
    }
    m
}

/// `sup_{v ⊥ 1} f(λπ + (1-λ)/q, v) / f(π, v)`.
///
/// Both forms are rescaled by the diagonal of the denominator before being
/// restricted to the (transformed) complement of the all-ones vector, which
/// keeps the whitening well conditioned near the simplex boundary.
pub fn sup_over_v(pi: &[f64], lambda: f64, which: Form) -> Result<f64> {
    let q = pi.len();
    PottsParams::new(q, lambda)?;
    if let Some(x) = pi.iter().find(|&&x| !(x >= PI_FLOOR)) {
        return Err(invalid(format!("π entry {x:e} below the floor {PI_FLOOR:e}")));
    }
    if lambda == 1.0 {
        return Ok(1.0);
    }
    let shifted: Vec<f64> = pi
        .iter()
        .map(|p| (lambda * p + (1.0 - lambda) / q as f64).max(PI_FLOOR * 1e-3))
        .collect();
    let a = form_matrix(&shifted, which);
    let b = form_matrix(pi, which);
    let scale: Vec<f64> = (0..q).map(|i| 1.0 / b[i][i].sqrt()).collect();
    // v = D^{-1/2} w, so 1·v = 0 becomes g·w = 0 with g = D^{-1/2} 1
    let basis = complement_basis(&scale);
    let project = |m: &Matrix| -> Matrix {
        let scaled: Matrix = (0..q)
            .map(|i| (0..q).map(|j| m[i][j] * scale[i] * scale[j]).collect())
            .collect();
        let n = basis.len();
        let mut out = vec![vec![0.0; n]; n];
        for (r, e) in basis.iter().enumerate() {
            let se: Vec<f64> = (0..q).map(|i| (0..q).map(|j| scaled[i][j] * e[j]).sum()).collect();
            for (c, f) in basis.iter().enumerate() {
                out[r][c] = f.iter().zip(&se).map(|(x, y)| x * y).sum();
            }
        }
        out
    };
    max_generalized_eigenvalue(&project(&a), &project(&b))
        .map_err(|e| Error::Numerical(format!("denominator form is singular on 1^⊥: {e}")))
}

/// Result of the outer supremum over π.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    /// Best ratio found; a lower bound on the supremum.
    pub value: f64,
    pub argmax: Vec<f64>,
    /// Proven upper bound on the supremum.
    pub cap: f64,
}

fn floored_softmax(theta: &[f64]) -> Vec<f64> {
    let q = theta.len();
    let mx = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = theta.iter().map(|t| (t - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    let free = 1.0 - q as f64 * PI_FLOOR;
    e.iter().map(|x| PI_FLOOR + free * x / s).collect()
}

fn to_theta(pi: &[f64]) -> Vec<f64> {
    pi.iter().map(|p| p.max(PI_FLOOR).ln()).collect()
}

fn seed_points(q: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut seeds = vec![vec![1.0 / q as f64; q]];
    for k in 0..50 {
        let a = 0.5 + 0.01 * k as f64;
        let mut two = vec![0.0; q];
        two[0] = a;
        two[1] = 1.0 - a;
        seeds.push(two);
        if q > 2 {
            let mut heavy = vec![(1.0 - a) / (q as f64 - 1.0); q];
            heavy[0] = a;
            seeds.push(heavy);
        }
    }
    let mut rng = rng::stream(seed, 0);
    for _ in 0..RANDOM_SEEDS {
        let w: Vec<f64> = (0..q).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let spread = 1.0 + 4.0 * rng.gen::<f64>();
        let w: Vec<f64> = w.iter().map(|x| x.powf(spread)).collect();
        let s: f64 = w.iter().sum();
        seeds.push(w.iter().map(|x| x / s).collect());
    }
    seeds
}

fn polish(theta0: Vec<f64>, value0: f64, eval: &dyn Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let (mut theta, mut best) = (theta0, value0);
    let mut step = 1.0;
    let mut rounds = 0;
    while step > 1e-7 && rounds < 5000 {
        rounds += 1;
        let mut improved = false;
        for i in 0..theta.len() {
            for dir in [1.0, -1.0] {
                let mut t = theta.clone();
                t[i] += dir * step;
                let v = eval(&t);
                if v > best {
                    best = v;
                    theta = t;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (theta, best)
}

fn sup_over_pi(q: usize, lambda: f64, which: Form, cap: f64) -> Result<ConstantEstimate> {
    PottsParams::new(q, lambda)?;
    if lambda == 1.0 {
        return Ok(ConstantEstimate {
            value: 1.0,
            argmax: vec![1.0 / q as f64; q],
            cap,
        });
    }
    let eval = |theta: &[f64]| -> f64 {
        sup_over_v(&floored_softmax(theta), lambda, which).unwrap_or(f64::NEG_INFINITY)
    };
    let mut scored: Vec<(Vec<f64>, f64)> = seed_points(q, rng::derive(q as u64, 0xC0))
        .into_par_iter()
        .map(|pi| {
            let theta = to_theta(&pi);
            let v = eval(&theta);
            (theta, v)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(POLISHED_SEEDS);
    let polished: Vec<(Vec<f64>, f64)> = scored
        .into_par_iter()
        .map(|(t, v)| polish(t, v, &eval))
        .collect();
    let (theta, value) = polished
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty seed set");
    // the uniform point always gives ratio exactly 1
    Ok(ConstantEstimate {
        value: value.max(1.0),
        argmax: floored_softmax(&theta),
        cap,
    })
}

/// Multistart estimate of `C^L(q, λ)`, capped above by `q²`.
pub fn c_l(q: usize, lambda: f64) -> Result<ConstantEstimate> {
    sup_over_pi(q, lambda, Form::L, (q * q) as f64)
}

/// Multistart estimate of `C^H(q, λ)`, capped above by `q^{5/2}`.
pub fn c_h(q: usize, lambda: f64) -> Result<ConstantEstimate> {
    sup_over_pi(q, lambda, Form::H, (q as f64).powf(2.5))
}

/// `(2/q + (q-2)/q · (dλ²-1)/(dλ-1))^{-1}`.
pub fn c_small(q: usize, lambda: f64, d: f64) -> Result<f64> {
    let denom_pole = d * lambda - 1.0;
    if denom_pole.abs() < 1e-14 {
        return Err(invalid("c^H has a pole at dλ = 1"));
    }
    let qf = q as f64;
    Ok(1.0 / (2.0 / qf + (qf - 2.0) / qf * (d * lambda * lambda - 1.0) / denom_pole))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KsSide {
    Below,
    At,
    Above,
}

impl std::fmt::Display for KsSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KsSide::Below => "below",
            KsSide::At => "at",
            KsSide::Above => "above",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVerdict {
    pub q: usize,
    pub lambda: f64,
    pub d: f64,
    pub ks_side: KsSide,
    pub c_l: f64,
    pub c_h: f64,
    /// `NaN` at the pole `dλ = 1`.
    pub c_small: f64,
    /// `dλ² C^L < 1` with `C^L` replaced by its cap `q²`.
    pub low_snr_ok_cert: bool,
    /// `dλ² C^L < 1` with the computed `C^L`.
    pub low_snr_ok_emp: bool,
    pub high_snr_ok_cert: bool,
    pub high_snr_ok_emp: bool,
    /// The high-SNR condition with the extra factor `Z(W^R)`.
    pub w_high_snr_ok_cert: Option<bool>,
    pub w_high_snr_ok_emp: Option<bool>,
    /// `dλ² < q^{-2}`.
    pub closed_form_low: bool,
    /// `dλ² > 1 + 56 max{λ, 1/q} log q`.
    pub closed_form_high: bool,
}

impl ThresholdVerdict {
    pub fn low_snr_ok(&self) -> bool {
        self.low_snr_ok_cert
    }

    pub fn high_snr_ok(&self) -> bool {
        self.high_snr_ok_cert
    }
}

/// Classifies `(q, λ, d)` given precomputed constants.
pub fn classify_with(
    q: usize,
    lambda: f64,
    d: f64,
    c_l_est: &ConstantEstimate,
    c_h_est: &ConstantEstimate,
    survey: Option<&Channel>,
) -> Result<ThresholdVerdict> {
    PottsParams::new(q, lambda)?;
    if !(d > 0.0 && d.is_finite()) {
        return Err(invalid(format!("degree {d} must be positive")));
    }
    if let Some(w) = survey {
        if w.q() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: w.q(),
            });
        }
    }
    let snr = d * lambda * lambda;
    let ks_side = if (snr - 1.0).abs() <= 1e-12 {
        KsSide::At
    } else if snr < 1.0 {
        KsSide::Below
    } else {
        KsSide::Above
    };
    let cs = c_small(q, lambda, d).unwrap_or(f64::NAN);
    let qf = q as f64;
    let low = |c: f64| ks_side == KsSide::Below && snr * c < 1.0;
    let high_factor = |c: f64| snr * (-cs * (snr - 1.0) / 2.0).exp() * c;
    let high = |c: f64, z: f64| ks_side == KsSide::Above && high_factor(c) * z < 1.0;
    let z = survey.map(|w| bhattacharyya(&restrict_binary(w)));
    Ok(ThresholdVerdict {
        q,
        lambda,
        d,
        ks_side,
        c_l: c_l_est.value,
        c_h: c_h_est.value,
        c_small: cs,
        low_snr_ok_cert: low(c_l_est.cap),
        low_snr_ok_emp: low(c_l_est.value),
        high_snr_ok_cert: high(c_h_est.cap, 1.0),
        high_snr_ok_emp: high(c_h_est.value, 1.0),
        w_high_snr_ok_cert: z.map(|z| high(c_h_est.cap, z)),
        w_high_snr_ok_emp: z.map(|z| high(c_h_est.value, z)),
        closed_form_low: snr < 1.0 / (qf * qf),
        closed_form_high: snr > 1.0 + 56.0 * lambda.max(1.0 / qf) * qf.ln(),
    })
}

pub fn classify(q: usize, lambda: f64, d: f64, survey: Option<&Channel>) -> Result<ThresholdVerdict> {
    classify_with(q, lambda, d, &c_l(q, lambda)?, &c_h(q, lambda)?, survey)
}

/// Largest `sup_v ⟨(λπ+(1-λ)/q)^{-α}, v²⟩ / ⟨π^{-α}, v²⟩` over `trials`
/// random π; the inner supremum over `v ⊥ 1` is exact.
pub fn quad_ratio_bound_check(q: usize, alpha: f64, lambda: f64, trials: usize, seed: u64) -> Result<f64> {
    PottsParams::new(q, lambda)?;
    if !(alpha >= 1.0) {
        return Err(invalid(format!("α = {alpha} must be at least 1")));
    }
    let qf = q as f64;
    let diag_ratio = |pi: &[f64]| -> Result<f64> {
        let shifted: Vec<f64> = pi
            .iter()
            .map(|p| (lambda * p + (1.0 - lambda) / qf).max(PI_FLOOR * 1e-3))
            .collect();
        let d_b: Vec<f64> = pi.iter().map(|p| p.powf(-alpha)).collect();
        let scale: Vec<f64> = d_b.iter().map(|x| 1.0 / x.sqrt()).collect();
        let basis = complement_basis(&scale);
        let n = basis.len();
        let build = |diag: &[f64]| -> Matrix {
            (0..n)
                .map(|r| {
                    (0..n)
                        .map(|c| {
                            (0..q)
                                .map(|i| basis[r][i] * basis[c][i] * diag[i] * scale[i] * scale[i])
                                .sum()
                        })
                        .collect()
                })
                .collect()
        };
        let d_a: Vec<f64> = shifted.iter().map(|p| p.powf(-alpha)).collect();
        max_generalized_eigenvalue(&build(&d_a), &build(&d_b))
    };
    let mut best: f64 = 0.0;
    let mut rng = rng::stream(seed, 0);
    for _ in 0..trials {
        let spread = 1.0 + 6.0 * rng.gen::<f64>();
        let w: Vec<f64> = (0..q)
            .map(|_| (-rng.gen::<f64>().max(1e-300).ln()).powf(spread))
            .collect();
        let s: f64 = w.iter().sum();
        let free = 1.0 - qf * PI_FLOOR;
        let pi: Vec<f64> = w.iter().map(|x| PI_FLOOR + free * x / s).collect();
        best = best.max(diag_ratio(&pi)?);
    }
    Ok(best)
}

/// One verdict per `(λ, d)` grid point, λ-major.
pub fn phase_scan(q: usize, lambdas: &[f64], ds: &[f64]) -> Result<Vec<ThresholdVerdict>> {
    if lambdas.is_empty() || ds.is_empty() {
        return Err(invalid("phase scan grids must be non-empty"));
    }
    let per_lambda: Vec<Vec<ThresholdVerdict>> = lambdas
        .par_iter()
        .map(|&lambda| {
            let (cl, ch) = (c_l(q, lambda)?, c_h(q, lambda)?);
            ds.iter()
                .map(|&d| classify_with(q, lambda, d, &cl, &ch, None))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_lambda.into_iter().flatten().collect())
}

pub fn phase_scan_csv(rows: &[ThresholdVerdict]) -> String {
    let mut s = String::from(
        "q,lambda,d,ks_side,cL_emp,cH_emp,c_small,low_ok_cert,low_ok_emp,high_ok_cert,high_ok_emp,closed_form_low,closed_form_high\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.10e},{:.10e},{:.10e},{},{},{},{},{},{}",
            r.q,
            r.lambda,
            r.d,
            r.ks_side,
            r.c_l,
            r.c_h,
            r.c_small,
            r.low_snr_ok_cert,
            r.low_snr_ok_emp,
            r.high_snr_ok_cert,
            r.high_snr_ok_emp,
            r.closed_form_low,
            r.closed_form_high
        );
    }
    s
}
