use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fms_core::bp::{iterate, BpParams, OffspringDist, Realization};
use fms_core::channels::{make_channel, Channel, ChannelSpec};
use fms_core::constants::{c_h, c_l, phase_scan, phase_scan_csv};
use fms_core::mi::{mi_integral as run_mi, MiSettings};
use fms_core::sbm::{
    self, bp_side_info, bp_vanilla, tree_prediction_side, tree_prediction_vanilla, BoundaryEstimate,
    InitializerSpec, OracleInitializer, SbmInstance, SideInfo, VanillaParams,
};
use fms_core::simplex::PottsParams;
use fms_core::treesim::{estimate_many, majority_stats, variance_recursion, Scenario};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{
    CliError, ConstantsArgs, EstimateArgs, EvolveArgs, GenerateArgs, GraphSource, MajorityArgs, MiArgs,
    PhaseArgs, RealizationArg, RecoverSideArgs, RecoverVanillaArgs, VERSION,
};

type Result<T> = std::result::Result<T, CliError>;

fn param(msg: impl Into<String>) -> CliError {
    CliError::Param(msg.into())
}

fn channel_spec(s: &str) -> Result<ChannelSpec> {
    Ok(s.parse::<ChannelSpec>()?)
}

fn channel(s: &str, q: usize) -> Result<Channel> {
    Ok(make_channel(&channel_spec(s)?, q)?)
}

/// `start:stop:step` (both ends included) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || param(format!("bad grid `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, h): (f64, f64, f64) = (
                start.trim().parse().map_err(|_| bad())?,
                stop.trim().parse().map_err(|_| bad())?,
                step.trim().parse().map_err(|_| bad())?,
            );
            if !(h > 0.0) || !(b >= a) {
                return Err(bad());
            }
            let n = ((b - a) / h + 1e-9).floor() as usize;
            // round off accumulated representation error so grid values print cleanly
            Ok((0..=n).map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12).collect())
        }
        [_] => s
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
            .collect(),
        _ => Err(bad()),
    }
}

fn csv_header(command: &str, config: &impl Serialize) -> String {
    let cfg = serde_json::to_string(config).expect("arguments serialize");
    format!("# fms {VERSION}\n# command: {command}\n# config: {cfg}\n")
}

fn json_doc(command: &str, config: &impl Serialize, body: Value) -> String {
    let mut doc = json!({
        "version": VERSION,
        "command": command,
        "params": serde_json::to_value(config).expect("arguments serialize"),
    });
    if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
        d.extend(b);
    }
    let mut s = serde_json::to_string_pretty(&doc).expect("json serializes");
    s.push('\n');
    s
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn evolve(a: &EvolveArgs) -> Result<()> {
    let potts = PottsParams::new(a.q, a.lambda)?;
    let offspring: OffspringDist = a.offspring.parse()?;
    let m0 = channel(&a.init, a.q)?;
    let realization = match a.realization {
        RealizationArg::Auto => Realization::Auto,
        RealizationArg::Exact => Realization::Exact,
        RealizationArg::Sampled => Realization::Sampled,
    };
    let mut p = BpParams::new(potts, offspring)
        .with_cap(a.cap)
        .with_seed(a.seed)
        .with_realization(realization);
    if let Some(w) = &a.survey {
        p = p.with_survey(channel(w, a.q)?);
    }
    let trace = iterate(&m0, &p, a.k, a.tol)?;
    emit(&a.out, &(csv_header("evolve", a) + &trace.to_csv()))
}

pub fn phase(a: &PhaseArgs) -> Result<()> {
    let rows = phase_scan(a.q, &parse_grid(&a.lambda_grid)?, &parse_grid(&a.d_grid)?)?;
    emit(&a.out, &(csv_header("phase", a) + &phase_scan_csv(&rows)))
}

pub fn constants(a: &ConstantsArgs) -> Result<()> {
    let mut s = csv_header("constants", a);
    s.push_str("q,lambda,cL,cL_cap,cH,cH_cap\n");
    for lambda in parse_grid(&a.lambda_grid)? {
        let (l, h) = (c_l(a.q, lambda)?, c_h(a.q, lambda)?);
        let _ = writeln!(s, "{},{},{:.10e},{},{:.10e},{:.10e}", a.q, lambda, l.value, l.cap, h.value, h.cap);
    }
    emit(&a.out, &s)
}

pub fn mi_integral(a: &MiArgs) -> Result<()> {
    let settings = MiSettings {
        k_max: a.k,
        cap: a.cap,
        seed: a.seed,
        tol: a.tol,
    };
    let out = run_mi(a.q, a.a, a.b, &parse_grid(&a.eps_grid)?, &settings)?;
    let mut s = csv_header("mi-integral", a);
    let _ = writeln!(s, "# q = {}, lambda = {}, d = {}", out.q, out.lambda, out.d);
    let _ = writeln!(s, "# integral = {:.12e} nats", out.integral);
    if !out.certified {
        s.push_str("# WARNING: formula not certified at these parameters\n");
    }
    s.push_str("eps,integrand,iterations,converged\n");
    for r in &out.rows {
        let _ = writeln!(s, "{},{:.12e},{},{}", r.eps, r.integrand, r.iterations, r.converged);
    }
    emit(&a.out, &s)
}

pub fn treesim_estimate(a: &EstimateArgs) -> Result<()> {
    let potts = PottsParams::new(a.q, a.lambda)?;
    let offspring: OffspringDist = a.offspring.parse()?;
    let pick = |s: &Option<String>| -> Result<Channel> {
        match s {
            Some(s) => channel(s, a.q),
            None => Ok(Channel::trivial(a.q)),
        }
    };
    let scenario = Scenario {
        leaf: pick(&a.leaf)?,
        survey: pick(&a.survey)?,
    };
    let rows = estimate_many(std::slice::from_ref(&scenario), potts, &offspring, a.k, a.trials, a.seed)?;
    let mut s = csv_header("treesim estimate", a);
    s.push_str("scenario,k,trials,I,I_se,Pe,Pe_se,chi2,chi2_se\n");
    for e in &rows[0] {
        let _ = writeln!(
            s,
            "{},{},{},{:.10e},{:.4e},{:.10e},{:.4e},{:.10e},{:.4e}",
            e.scenario, e.k, e.trials, e.i.mean, e.i.se, e.pe.mean, e.pe.se, e.chi2.mean, e.chi2.se
        );
    }
    emit(&a.out, &s)
}

pub fn treesim_majority(a: &MajorityArgs) -> Result<()> {
    let potts = PottsParams::new(a.q, a.lambda)?;
    let offspring = if a.poisson {
        OffspringDist::poisson(a.d)?
    } else {
        if a.d.fract() != 0.0 || a.d < 1.0 {
            return Err(param(format!("regular offspring needs a positive integer d, got {}", a.d)));
        }
        OffspringDist::regular(a.d as usize)
    };
    let stats = majority_stats(potts, &offspring, a.eta, a.k, a.trials, a.seed)?;
    let rec = variance_recursion(a.q, a.lambda, a.d, a.eta, a.ratio_depth.max(a.k), !a.poisson)?;
    let z = |emp: f64, se: f64, pred: f64| if se > 0.0 { (emp - pred) / se } else { 0.0 };
    let body = json!({
        "empirical": stats,
        "recursion": {
            "var_plus": rec.var_plus[a.k],
            "var_zero": rec.var_zero[a.k],
            "ratio_depth": a.ratio_depth.max(a.k),
            "closed_form_plus": rec.closed_form_plus,
            "closed_form_ratio": rec.ratio,
        },
        "z_scores": {
            "mean_plus": z(stats.plus.mean.mean, stats.plus.mean.se, stats.predicted_mean_plus),
            "var_plus": z(stats.plus.var.mean, stats.plus.var.se, stats.predicted_var_plus),
            "var_zero": stats.zero.map(|m| z(m.var.mean, m.var.se, stats.predicted_var_zero)),
        },
    });
    emit(&a.out, &json_doc("treesim majority", a, body))
}

pub fn sbm_generate(a: &GenerateArgs) -> Result<()> {
    let inst = sbm::generate(a.n, a.q, a.a, a.b, a.seed)?;
    if let Some(path) = &a.labels_out {
        write_file(path, &inst.labels_text())?;
    }
    emit(&a.out, &inst.graph_text())
}

fn load_instance(src: &GraphSource) -> Result<SbmInstance> {
    if let (Some(g), Some(l)) = (&src.graph, &src.labels) {
        return Ok(SbmInstance::from_text(&read_file(g)?, &read_file(l)?)?);
    }
    let need = |name: &str| param(format!("--{name} is required unless --graph and --labels are given"));
    Ok(sbm::generate(
        src.n.ok_or_else(|| need("n"))?,
        src.q.ok_or_else(|| need("q"))?,
        src.a.ok_or_else(|| need("a"))?,
        src.b.ok_or_else(|| need("b"))?,
        src.seed,
    )?)
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

pub fn sbm_recover_side(a: &RecoverSideArgs) -> Result<()> {
    let inst = load_instance(&a.source)?;
    let spec = channel_spec(&a.survey)?;
    let side = SideInfo::draw(&inst.labels, inst.q, &spec, inst.seed)?;
    let out = bp_side_info(&inst.graph(), &side, inst.lambda(), a.rounds)?;
    let acc = sbm::accuracy(&inst.labels, &out.labels, inst.q)?;
    let pred = tree_prediction_side(inst.q, inst.a, inst.b, &spec, a.cap, inst.seed)?;
    let body = json!({
        "n": inst.n,
        "rounds": out.rounds,
        "accuracy": acc,
        "stderr": binomial_se(acc, inst.n),
        "tree_prediction": pred,
    });
    emit(&a.out, &json_doc("sbm recover-side", a, body))
}

pub fn sbm_recover_vanilla(a: &RecoverVanillaArgs) -> Result<()> {
    let inst = load_instance(&a.source)?;
    let init_spec: InitializerSpec = a.init.parse()?;
    let boundary: BoundaryEstimate = a.boundary.parse()?;
    let init = OracleInitializer::new(&inst.labels, inst.q, &init_spec, inst.seed)?;
    if !init.is_valid_for_vanilla() {
        return Err(param(format!("initializer {init_spec} has a singular transition matrix")));
    }
    let params = VanillaParams {
        rounds: a.rounds,
        sample: a.sample,
        seed: inst.seed,
        reuse_global: a.reuse_global,
        boundary,
    };
    let out = bp_vanilla(&inst.graph(), inst.q, inst.lambda(), &init, &params)?;
    let acc = out.accuracy(&inst.labels, inst.q)?;
    let pred = tree_prediction_vanilla(inst.q, inst.a, inst.b, a.cap, inst.seed)?;
    let body = json!({
        "n": inst.n,
        "rounds": out.rounds,
        "evaluated": out.vertices.len(),
        "accuracy": acc,
        "stderr": binomial_se(acc, out.vertices.len()),
        "tree_prediction": pred,
        "aligned_fraction": out.aligned_fraction(),
        "anchors": out.anchors,
        "initializer_sigma_min": init.sigma_min(),
        "reuse_global": out.reuse_global,
    });
    emit(&a.out, &json_doc("sbm recover-vanilla", a, body))
}
