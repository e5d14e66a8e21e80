//! End-to-end acceptance checks, one line per criterion on stderr.
//!
//! Set `FMS_ACCEPTANCE=3,8` to run a subset. Command-line behaviour tests
//! live in `cli`.

mod cli;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fms_core::bp::{bp_step_detailed, check_chi2_contraction, iterate, BpParams, OffspringDist};
use fms_core::channels::{
    bhattacharyya, compose_potts, degrades_exact, degrades_necessary, make_channel, measures, restrict_binary, skl_point, star,
    Atom, BmsChannel, Channel, ChannelSpec, DegradationVerdict,
};
use fms_core::constants::{c_h, c_l, quad_ratio_bound_check};
use fms_core::mi::{mi_integral, MiSettings};
use fms_core::sbm::{
    accuracy, bp_side_info, bp_vanilla, generate, tree_prediction_side, tree_prediction_vanilla, InitializerSpec,
    OracleInitializer, SideInfo, VanillaParams,
};
use fms_core::simplex::{canonicalize, PottsParams, SimplexPoint};
use fms_core::treesim::{estimate_many, majority_stats, variance_recursion, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_point<R: Rng>(q: usize, rng: &mut R) -> SimplexPoint {
    let spread = 1.0 + 4.0 * rng.gen::<f64>();
    let w: Vec<f64> = (0..q)
        .map(|_| (-rng.gen::<f64>().max(1e-300).ln()).powf(spread) + 1e-6)
        .collect();
    let s: f64 = w.iter().sum();
    canonicalize(&w.iter().map(|x| x / s).collect::<Vec<_>>()).unwrap()
}

fn random_channel<R: Rng>(q: usize, max_atoms: usize, rng: &mut R) -> Channel {
    let n = rng.gen_range(1..=max_atoms);
    let atoms = (0..n)
        .map(|_| Atom {
            weight: 0.05 + rng.gen::<f64>(),
            pi: random_point(q, rng),
        })
        .collect();
    Channel::from_atoms(q, atoms).unwrap().normalized()
}

fn lambda_grid(q: usize, n: usize) -> Vec<f64> {
    let lo = PottsParams::lambda_min(q);
    (0..n).map(|i| lo + (1.0 - lo) * i as f64 / (n - 1) as f64).collect()
}

fn skl_additivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for q in 2..=5 {
        for _ in 0..1000 {
            let p = Channel::fsc(random_point(q, &mut rng));
            let r = Channel::fsc(random_point(q, &mut rng));
            let lhs = measures(&star(&p, &r).unwrap()).skl;
            worst = worst.max((lhs - measures(&p).skl - measures(&r).skl).abs());
        }
    }
    outcome(worst < 1e-9, format!("max |ΔC_SKL| = {worst:.2e} over 4000 pairs"))
}

fn z_multiplicativity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = |c: &Channel| bhattacharyya(&restrict_binary(c));
    let mut worst: f64 = 0.0;
    for q in 2..=5 {
        for _ in 0..1000 {
            let p = Channel::fsc(random_point(q, &mut rng));
            let r = Channel::fsc(random_point(q, &mut rng));
            worst = worst.max((z(&star(&p, &r).unwrap()) - z(&p) * z(&r)).abs());
        }
    }
    outcome(worst < 1e-9, format!("max |ΔZ| = {worst:.2e} over 4000 pairs"))
}

fn chi2_contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut failures, mut worst) = (0, f64::NEG_INFINITY);
    for q in 2..=5 {
        let lo = PottsParams::lambda_min(q);
        for i in 0..1000 {
            let p = random_channel(q, 4, &mut rng);
            let lambda = if i == 0 { lo } else { rng.gen_range(lo..=1.0) };
            let c = check_chi2_contraction(&p, lambda).unwrap();
            worst = worst.max(c.lhs - c.rhs);
            failures += usize::from(!c.ok);
        }
    }
    outcome(
        failures == 0,
        format!("{failures} violations in 4000 pairs; max lhs − λ²·rhs = {worst:.2e}"),
    )
}

fn z_chi2_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut failures, mut worst) = (0, f64::NEG_INFINITY);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=20);
        let raw: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>() + 1e-3, rng.gen_range(0.0..=0.5))).collect();
        let s: f64 = raw.iter().map(|a| a.0).sum();
        let b = BmsChannel::new(raw.iter().map(|&(w, d)| (w / s, d)).collect()).unwrap();
        let excess = bhattacharyya(&b) - (1.0 - b.chi2()).max(0.0).sqrt();
        worst = worst.max(excess);
        failures += usize::from(excess > 1e-10);
    }
    outcome(
        failures == 0,
        format!("{failures} violations in 10⁴ populations; max Z − √(1−χ²) = {worst:.2e}"),
    )
}

fn constant_caps() -> Outcome {
    let mut pass = true;
    let (mut worst_l, mut worst_h, mut at_one): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for q in 2..=6 {
        let qf = q as f64;
        for lambda in lambda_grid(q, 50) {
            let (l, h) = (c_l(q, lambda).unwrap().value, c_h(q, lambda).unwrap().value);
            worst_l = worst_l.max(l / (qf * qf));
            worst_h = worst_h.max(h / qf.powf(2.5));
            pass &= l <= qf * qf && h <= qf.powf(2.5);
        }
        let (l1, h1) = (c_l(q, 1.0).unwrap().value, c_h(q, 1.0).unwrap().value);
        at_one = at_one.max((l1 - 1.0).abs()).max((h1 - 1.0).abs());
    }
    pass &= at_one < 1e-8;
    outcome(
        pass,
        format!("max c_L/q² = {worst_l:.3}, max c_H/q^2.5 = {worst_h:.3}, max |c(q,1) − 1| = {at_one:.1e}"),
    )
}

fn quad_ratio_bound() -> Outcome {
    let (mut failures, mut worst_margin) = (0, f64::NEG_INFINITY);
    let mut cell = 0u64;
    for alpha in [1.0, 1.5, 2.0] {
        for q in 2..=5 {
            let qf = q as f64;
            for lambda in [PottsParams::lambda_min(q), 0.0, 0.5, 1.0] {
                cell += 1;
                let best = quad_ratio_bound_check(q, alpha, lambda, 100_000, cell).unwrap();
                let margin = best - qf.powf(alpha);
                worst_margin = worst_margin.max(margin);
                failures += usize::from(margin > 1e-6);
            }
        }
    }
    outcome(
        failures == 0,
        format!("{failures} of 48 cells exceed q^α; max (ratio − q^α) = {worst_margin:.3}"),
    )
}

fn degradation_coherence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut yes, mut incoherent, mut self_fail, mut tried) = (0, 0, 0, 0);
    while yes < 200 && tried < 5000 {
        tried += 1;
        let q = rng.gen_range(2..=4);
        let p = random_channel(q, 4, &mut rng);
        let other = if rng.gen_bool(0.5) {
            let lambda = rng.gen_range(PottsParams::lambda_min(q)..=1.0);
            compose_potts(&p, lambda).unwrap()
        } else {
            star(&p, &random_channel(q, 3, &mut rng)).unwrap()
        };
        // one side is a degradation of the other; test both orders
        for (a, b) in [(&p, &other), (&other, &p)] {
            if degrades_exact(a, b).unwrap() == DegradationVerdict::Yes {
                yes += 1;
                incoherent += usize::from(!degrades_necessary(a, b).unwrap());
            }
        }
        self_fail += usize::from(degrades_exact(&p, &p).unwrap() != DegradationVerdict::Yes);
    }
    outcome(
        yes >= 200 && incoherent == 0 && self_fail == 0,
        format!("{yes} exact-yes pairs, {incoherent} fail the necessary test; {self_fail} of {tried} self-pairs not yes"),
    )
}

fn oracle_equivalence() -> Outcome {
    const TRIALS: usize = 100_000;
    const CAP: usize = 100_000;
    let offsprings: [(OffspringDist, usize); 4] = [
        (OffspringDist::regular(2), 5),
        (OffspringDist::regular(3), 5),
        (OffspringDist::poisson(3.0).unwrap(), 5),
        (OffspringDist::poisson(6.0).unwrap(), 4),
    ];
    let (mut cells, mut hits) = (0usize, 0usize);
    let mut worst = (0.0f64, String::new());
    let mut seed = 0u64;
    for q in [2usize, 3] {
        let ch = |s: ChannelSpec| make_channel(&s, q).unwrap();
        let scenarios = [
            Scenario::leaves(Channel::identity(q)),
            Scenario::leaves(ch(ChannelSpec::Potts(0.5))),
            Scenario::leaves(ch(ChannelSpec::Erasure(0.5))),
            Scenario::survey(ch(ChannelSpec::Potts(0.5))),
            Scenario::survey(ch(ChannelSpec::Erasure(0.5))),
        ];
        for lambda in [0.5, 0.8, -0.4] {
            let potts = PottsParams::new(q, lambda).unwrap();
            for (off, k) in &offsprings {
                seed += 1;
                let tree = estimate_many(&scenarios, potts, off, *k, TRIALS, seed).unwrap();
                for (si, s) in scenarios.iter().enumerate() {
                    let m0 = star(&s.leaf, &s.survey).unwrap();
                    let p = BpParams::new(potts, off.clone())
                        .with_survey(s.survey.clone())
                        .with_cap(CAP)
                        .with_seed(seed);
                    let de = iterate(&m0, &p, *k, 0.0).unwrap();
                    for depth in 1..=*k {
                        let (t, row) = (&tree[si][depth], &de.rows[depth]);
                        let m = &row.measures;
                        let pairs = [
                            (t.pe.mean, t.pe.se, m.p_e, row.se[0]),
                            (t.i.mean, t.i.se, m.capacity, row.se[1]),
                            (t.chi2.mean, t.chi2.se, m.chi2, row.se[2]),
                        ];
                        let z = pairs
                            .iter()
                            .map(|&(a, sa, b, sb)| {
                                let se = (sa * sa + sb * sb).sqrt();
                                if se == 0.0 {
                                    if (a - b).abs() < 1e-12 { 0.0 } else { f64::INFINITY }
                                } else {
                                    (a - b).abs() / se
                                }
                            })
                            .fold(0.0, f64::max);
                        cells += 1;
                        hits += usize::from(z <= 3.0);
                        if z > worst.0 {
                            worst = (z, format!("q={q} λ={lambda} {:?} {} k={depth}", off.kind, s.name()));
                        }
                    }
                }
            }
        }
    }
    let frac = hits as f64 / cells as f64;
    outcome(
        frac >= 0.95,
        format!(
            "{hits}/{cells} cells ({:.1}%) within 3 SE; worst z = {:.2} at {}",
            100.0 * frac,
            worst.0,
            worst.1
        ),
    )
}

/// Gap magnitudes must be non-increasing after burn-in until they fall
/// inside their sampling noise (or below 1e-12), and 20 steps must shrink
/// them 10× or into the noise. The noise band is 4 SE, a family-wise 3σ
/// level over the 20 comparisons.
fn gap_contracts(gaps: &[(f64, f64)], burn_in: usize) -> (bool, bool) {
    let settled = |(g, se): (f64, f64)| g.abs() <= (4.0 * se).max(1e-12);
    let monotone = gaps[burn_in..]
        .windows(2)
        .all(|w| w[1].0.abs() <= w[0].0.abs() || settled(w[1]));
    let (start, end) = (gaps[burn_in].0.abs(), gaps[burn_in + 20]);
    (monotone, end.0.abs() <= start / 10.0 || settled(end))
}

/// Mean of a per-atom functional and its standard error when the channel is
/// a sampled population.
fn functional(c: &Channel, stochastic: bool, f: impl Fn(&SimplexPoint) -> f64) -> (f64, f64) {
    let (mean, var) = c.functional_stats(f);
    (mean, if stochastic { (var / c.len() as f64).sqrt() } else { 0.0 })
}

fn gap_contraction() -> Outcome {
    const BURN_IN: usize = 2;
    let mut pass = true;
    let mut detail = Vec::new();
    for (q, lambda, d) in [(3usize, 0.1, 5.0), (3, 0.9, 70.0)] {
        let potts = PottsParams::new(q, lambda).unwrap();
        let w = make_channel(&ChannelSpec::Erasure(0.5), q).unwrap();
        let p = BpParams::new(potts, OffspringDist::poisson(d).unwrap())
            .with_survey(w)
            .with_cap(100_000)
            .with_seed(9);
        let low = d * lambda * lambda < 1.0;
        // Φ^L on the pre-survey channels, Φ^H on the full ones
        let phi = |pi: &SimplexPoint| {
            if low {
                skl_point(pi)
            } else {
                bhattacharyya(&restrict_binary(&Channel::fsc(pi.clone())))
            }
        };
        let (mut a, mut b) = (Channel::identity(q), Channel::trivial(q));
        let mut prev_stoch = false;
        let mut gaps = Vec::new();
        for k in 1..=BURN_IN + 20 {
            let sa = bp_step_detailed(&a, &p, k as u64).unwrap();
            let sb = bp_step_detailed(&b, &p, k as u64).unwrap();
            let stoch = sa.stochastic || sb.stochastic;
            let (gap, se) = if low {
                let (fa, fb) = (functional(&sa.pre_survey, stoch, phi), functional(&sb.pre_survey, stoch, phi));
                // SKL is additive, so sampling error in the previous population
                // reaches this step scaled by the mean offspring count
                let inherited = |m: &Channel| d * functional(&compose_potts(m, lambda).unwrap(), prev_stoch, phi).1;
                let se = [fa.1, fb.1, inherited(&a), inherited(&b)].iter().map(|x| x * x).sum::<f64>().sqrt();
                (fa.0 - fb.0, se)
            } else {
                let (fa, fb) = (functional(&sa.channel, stoch, phi), functional(&sb.channel, stoch, phi));
                (fb.0 - fa.0, fa.1.hypot(fb.1))
            };
            gaps.push((gap, se));
            prev_stoch = stoch;
            a = sa.channel;
            b = sb.channel;
        }
        // gaps[i] belongs to step i + 1
        let (mono, shrink) = gap_contracts(&gaps, BURN_IN - 1);
        pass &= mono && shrink;
        let shown: Vec<String> = gaps[..5].iter().map(|g| format!("{:.1e}", g.0)).collect();
        let end = gaps[BURN_IN + 19];
        detail.push(format!(
            "{} (λ={lambda}, d={d}): Φ^{} gap {} … {:.1e} ± {:.1e}, monotone={mono}, shrink={shrink}",
            if low { "low" } else { "high" },
            if low { "L" } else { "H" },
            shown.join(", "),
            end.0,
            end.1
        ));
    }
    outcome(pass, detail.join("; "))
}

fn chi2_below_ks() -> Outcome {
    let (q, lambda, d) = (5usize, 0.3, 10.0);
    let potts = PottsParams::new(q, lambda).unwrap();
    let sups: Vec<f64> = [0.01, 0.05, 0.1]
        .iter()
        .map(|&eta| {
            let w = make_channel(&ChannelSpec::Potts(eta), q).unwrap();
            let p = BpParams::new(potts, OffspringDist::poisson(d).unwrap())
                .with_survey(w)
                .with_cap(20_000)
                .with_seed(10);
            let t = iterate(&Channel::trivial(q), &p, 40, 0.0).unwrap();
            t.rows.iter().map(|r| r.measures.chi2).fold(0.0, f64::max)
        })
        .collect();
    let monotone = sups.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        monotone && sups[0] < 0.05,
        format!("sup_k χ²(M_k) at η = 0.01, 0.05, 0.1: {:.4}, {:.4}, {:.4}", sups[0], sups[1], sups[2]),
    )
}

fn majority_decider() -> Outcome {
    let potts = PottsParams::new(3, 0.7).unwrap();
    let s = majority_stats(potts, &OffspringDist::regular(3), 0.5, 4, 100_000, 11).unwrap();
    let z = |x: f64, se: f64, want: f64| (x - want).abs() / se;
    let zero = s.zero.unwrap();
    let zs = [
        z(s.plus.mean.mean, s.plus.mean.se, s.predicted_mean_plus),
        z(s.minus.mean.mean, s.minus.mean.se, -s.predicted_mean_plus),
        z(zero.mean.mean, zero.mean.se, 0.0),
        z(s.plus.var.mean, s.plus.var.se, s.predicted_var_plus),
        z(s.minus.var.mean, s.minus.var.se, s.predicted_var_plus),
        z(zero.var.mean, zero.var.se, s.predicted_var_zero),
    ];
    let ratio = variance_recursion(3, 0.7, 3.0, 0.5, 20, true).unwrap().ratio.unwrap();
    let worst = zs.iter().copied().fold(0.0, f64::max);
    outcome(
        worst <= 3.0 && (ratio - 1.0).abs() <= 0.05,
        format!("max |z| over means and variances = {worst:.2}; recursion/closed form at k=20 = {ratio:.4}"),
    )
}

fn side_information_bp() -> Outcome {
    let (q, a, b, n) = (2usize, 5.6, 1.4, 30_000);
    let spec = ChannelSpec::Erasure(0.7);
    let accs: Vec<f64> = (0..5)
        .map(|seed| {
            let inst = generate(n, q, a, b, seed).unwrap();
            let side = SideInfo::draw(&inst.labels, q, &spec, seed).unwrap();
            let out = bp_side_info(&inst.graph(), &side, inst.lambda(), None).unwrap();
            accuracy(&inst.labels, &out.labels, q).unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let pred = tree_prediction_side(q, a, b, &spec, 100_000, 0).unwrap();
    outcome(
        (mean - pred).abs() <= 0.02,
        format!("mean accuracy {mean:.4} (seeds {accs:.4?}) vs tree prediction {pred:.4}"),
    )
}

fn vanilla_bp() -> Outcome {
    let (q, a, b, n) = (2usize, 5.6, 1.4, 30_000);
    let init_spec = InitializerSpec::Potts(0.4);
    let mut accs = Vec::new();
    let mut aligned = Vec::new();
    let mut rounds = 0;
    for seed in 0..5 {
        let inst = generate(n, q, a, b, seed).unwrap();
        let init = OracleInitializer::new(&inst.labels, q, &init_spec, seed).unwrap();
        let params = VanillaParams {
            seed,
            ..VanillaParams::default()
        };
        match bp_vanilla(&inst.graph(), q, inst.lambda(), &init, &params) {
            Ok(out) => {
                rounds = out.rounds;
                accs.push(out.accuracy(&inst.labels, q).unwrap());
                aligned.push(out.aligned_fraction());
            }
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let min_aligned = aligned.iter().copied().fold(1.0, f64::min);
    let pred = tree_prediction_vanilla(q, a, b, 100_000, 0).unwrap();
    outcome(
        min_aligned >= 0.99 && (mean - pred).abs() <= 0.03,
        format!(
            "r = {rounds}: aligned ≥ {:.1}%, mean accuracy {mean:.4} (seeds {accs:.4?}) vs perfect-boundary prediction {pred:.4}",
            100.0 * min_aligned
        ),
    )
}

fn mi_integrand() -> Outcome {
    // allowed increase between neighbouring grid points from population noise
    const NOISE: f64 = 1e-3;
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let s = MiSettings::default();
    let flat = mi_integral(2, 2.0, 2.0, &grid, &s).unwrap();
    let signal = mi_integral(2, 3.0, 2.0, &grid, &s).unwrap();
    let vals: Vec<f64> = signal.rows.iter().map(|r| r.integrand).collect();
    let last = *vals.last().unwrap();
    let rise = vals.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        flat.integral == 0.0 && signal.certified && last < 1e-3 && rise <= NOISE,
        format!(
            "a=b integral = {}; q=2 a=3 b=2 certified={}, integrand at ε=1 = {last:.1e}, largest rise {rise:.1e}, integral {:.4}",
            flat.integral, signal.certified, signal.integral
        ),
    )
}

fn data_rows(bytes: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(bytes)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

fn run_fms(dir: &Path, config: &str, words: &[&str], tag: &str) -> Result<Vec<String>, String> {
    let cfg = dir.join(format!("{tag}.conf"));
    std::fs::write(&cfg, config).map_err(|e| e.to_string())?;
    let out = dir.join(format!("{tag}.out"));
    let status = Command::new(env!("CARGO_BIN_EXE_fms"))
        .args(words)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("{words:?} failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    let mut rows = data_rows(&std::fs::read(&out).map_err(|e| e.to_string())?);
    let labels = dir.join("labels.txt");
    if labels.exists() {
        rows.extend(data_rows(&std::fs::read(&labels).map_err(|e| e.to_string())?));
    }
    Ok(rows)
}

fn cli_determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("fms-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let labels = dir.join("labels.txt");
    let cases: Vec<(Vec<&str>, String)> = vec![
        (vec!["evolve"], "q = 3\nlambda = 0.6\noffspring = poisson:3\nk = 8\ncap = 2000\nseed = 5\n".into()),
        (vec!["phase"], "q = 3\nlambda_grid = 0:1:0.25\nd_grid = 2,5,20\n".into()),
        (vec!["constants"], "q = 3\nlambda_grid = -0.5:1:0.5\n".into()),
        (vec!["mi-integral"], "q = 2\na = 3\nb = 2\neps_grid = 0:1:0.5\ncap = 2000\nseed = 2\n".into()),
        (
            vec!["treesim", "estimate"],
            "q = 3\nlambda = 0.7\noffspring = regular:2\nk = 4\ntrials = 2000\nseed = 3\nleaf = identity\n".into(),
        ),
        (
            vec!["treesim", "majority"],
            "q = 3\nlambda = 0.7\nd = 3\neta = 0.5\nk = 3\ntrials = 2000\nseed = 4\n".into(),
        ),
        (
            vec!["sbm", "generate"],
            format!("n = 2000\nq = 2\na = 5.6\nb = 1.4\nseed = 6\nlabels_out = {}\n", labels.display()),
        ),
        (
            vec!["sbm", "recover-side"],
            "n = 3000\nq = 2\na = 5.6\nb = 1.4\nseed = 7\nsurvey = erasure:0.7\ncap = 2000\n".into(),
        ),
        (
            vec!["sbm", "recover-vanilla"],
            "n = 3000\nq = 2\na = 5.6\nb = 1.4\nseed = 8\nsample = 200\ncap = 2000\n".into(),
        ),
    ];
    let mut bad = Vec::new();
    for (i, (words, config)) in cases.iter().enumerate() {
        let _ = std::fs::remove_file(&labels);
        let first = run_fms(&dir, config, words, &i.to_string());
        let _ = std::fs::remove_file(&labels);
        let second = run_fms(&dir, config, words, &i.to_string());
        match (first, second) {
            (Ok(a), Ok(b)) if a == b && !a.is_empty() => {}
            (Ok(_), Ok(_)) => bad.push(format!("{} differs", words.join(" "))),
            (Err(e), _) | (_, Err(e)) => bad.push(e),
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    let n = cases.len();
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{n} commands reproduce their data rows byte for byte")
        } else {
            bad.join("; ")
        },
    )
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 15] = [
    (1, "SKL capacity is additive under ⋆", skl_additivity),
    (2, "Bhattacharyya coefficient is multiplicative under ⋆", z_multiplicativity),
    (3, "χ² contracts by λ² under Potts composition", chi2_contraction),
    (4, "Z ≤ √(1 − C_χ²) for BMS mixtures", z_chi2_bound),
    (5, "threshold constants respect their caps", constant_caps),
    (6, "quadratic-form ratio stays below q^α", quad_ratio_bound),
    (7, "exact degradation implies the necessary conditions", degradation_coherence),
    (8, "density evolution matches tree Monte Carlo", oracle_equivalence),
    (9, "boundary gap contracts at certified points", gap_contraction),
    (10, "χ² stays bounded below the KS threshold", chi2_below_ks),
    (11, "majority decider moments", majority_decider),
    (12, "side-information BP reaches the tree prediction", side_information_bp),
    (13, "anchor-aligned BP reaches the perfect-boundary prediction", vanilla_bp),
    (14, "mutual-information integrand sanity", mi_integrand),
    (15, "CLI output is deterministic", cli_determinism),
];

#[test]
fn acceptance() {
    let only: Option<Vec<usize>> = std::env::var("FMS_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (id, name, check) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let r = check();
        let _ = writeln!(
            err,
            "criterion {id:>2} {} {name}: {} [{:.1} s]",
            if r.pass { "PASS" } else { "FAIL" },
            r.detail,
            t.elapsed().as_secs_f64()
        );
        if !r.pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
