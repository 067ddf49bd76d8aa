use std::fs;
use std::path::{Path, PathBuf};

use descentlab::certificates::{
    certify_hybrid, deterministic_trace, fit_rate, hybrid_driver, minibatch_variance_sup, stochastic_trace,
    CertificateTrace, HybridCertParams, Scheme,
};
use descentlab::estimators::{enumerate_moments, run_unified_sgd, EstimatorKind, EstimatorState};
use descentlab::methods::{run_deterministic, MethodKind};
use descentlab::record::RunRecord;
use descentlab::schedules::StepPolicy;
use descentlab::Error as LibError;
use rayon::prelude::*;
use serde_json::Value;

use crate::config::{expand_grid, read_document, Experiment, Plan, DEFAULT_CAP};
use crate::error::{io_err, CliError};
use crate::output::{
    ensure_dir, fmt_f64, git_describe, loglog_svg, write_certificate, write_trace, Manifest,
};

fn out_dir(exp: &Experiment, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| exp.out.as_ref().map(|o| exp.base_dir.join(o)))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Executes one run of the experiment.
pub fn execute(exp: &Experiment, seed: Option<u64>) -> Result<RunRecord, CliError> {
    let mut policy = match &exp.schedule {
        Some(s) => StepPolicy::new(s.clone())?,
        // accelerated and dual-averaging runs fix their own steps
        None => StepPolicy::constant(1.0)?,
    };
    let mut run = match &exp.plan {
        Plan::Deterministic(method) => {
            let mut method = method.clone();
            if let (MethodKind::NoisyGd { seed: s, .. }, Some(seed)) = (&mut method.kind, seed) {
                *s = seed;
            }
            run_deterministic(&exp.problem, &method, &mut policy, &exp.w0, exp.horizon)?
        }
        Plan::Stochastic(driver) => {
            let seed = seed.expect("stochastic experiments carry seeds");
            run_unified_sgd(&exp.problem, driver, &mut policy, &exp.w0, exp.horizon, seed)?
        }
    };
    run.config_hash = Some(exp.config_hash());
    Ok(run)
}

struct Written {
    dir: PathBuf,
    hash: String,
}

fn persist(
    command: &str,
    exp: &Experiment,
    seed: Option<u64>,
    out: &Path,
    run: Option<&RunRecord>,
    certificate: Option<&CertificateTrace>,
) -> Result<Written, CliError> {
    let hash = exp.run_hash(seed);
    let dir = out.join(&hash);
    ensure_dir(&dir)?;
    let mut manifest = Manifest::new(command, exp.config_hash(), hash.clone(), seed, git_describe(&exp.base_dir));
    if let Some(run) = run {
        write_trace(&dir.join("trace.csv"), run)?;
        manifest.files.push("trace.csv".into());
        manifest.wall_time = run.wall_time;
    }
    if let Some(trace) = certificate {
        write_certificate(&dir.join("certificate.csv"), trace)?;
        manifest.files.push("certificate.csv".into());
    }
    manifest.write(&dir)?;
    Ok(Written { dir, hash })
}

pub fn cmd_run(config: &Path, out: Option<&Path>, seeds: &[u64]) -> Result<(), CliError> {
    let exp = Experiment::load(config, seeds)?;
    let out = out_dir(&exp, out);
    let jobs = exp.jobs();
    let results: Vec<Result<RunRecord, CliError>> = jobs.par_iter().map(|s| execute(&exp, *s)).collect();
    let mut first_err = None;
    for (seed, result) in jobs.iter().zip(results) {
        match result {
            Ok(run) => {
                let w = persist("run", &exp, *seed, &out, Some(&run), None)?;
                let last = run.rows.last().expect("runs have rows");
                println!(
                    "run {} seed={}: T={} F={} wrote {}",
                    w.hash,
                    seed.map_or("-".into(), |s| s.to_string()),
                    run.horizon(),
                    fmt_f64(last.value),
                    w.dir.display()
                );
            }
            Err(e) => {
                eprintln!("seed={}: {e}", seed.map_or("-".into(), |s| s.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn report(trace: &CertificateTrace) {
    match trace.min_slack() {
        Some(s) => println!("min slack: {}", fmt_f64(s)),
        None => println!("min slack: none (empty trace)"),
    }
    match trace.first_violation() {
        Some(v) => println!("first violation: {:?} at {} (value {})", v.kind, v.location, fmt_f64(v.value)),
        None => println!("first violation: none"),
    }
}

fn mismatch(scheme: Scheme, what: &str) -> CliError {
    CliError::Mismatch(format!("{scheme:?} cannot certify {what}"))
}

fn unsupported_as_mismatch(e: LibError) -> CliError {
    match e {
        LibError::Unsupported(msg) => CliError::Mismatch(msg),
        other => CliError::Lib(other),
    }
}

fn tree_trace(exp: &Experiment, scheme: Scheme) -> Result<CertificateTrace, CliError> {
    let driver = match &exp.plan {
        Plan::Stochastic(d) => d,
        Plan::Deterministic(m) => return Err(mismatch(scheme, &format!("the deterministic method {:?}", m.kind))),
    };
    if driver.stages > 0 || driver.loopless.is_some() || driver.prox.is_some() {
        return Err(mismatch(scheme, "multi-stage, loopless or proximal drivers"));
    }
    let schedule = exp.schedule.as_ref().expect("stochastic configs carry a schedule");
    stochastic_trace(&exp.problem, driver.estimator, schedule, &exp.w0, exp.horizon, scheme)
        .map_err(unsupported_as_mismatch)
}

fn check(trace: &CertificateTrace) -> Result<(), CliError> {
    report(trace);
    trace.check().map_err(CliError::Lib)
}

pub fn cmd_certify(config: &Path, out: Option<&Path>, seeds: &[u64]) -> Result<(), CliError> {
    let exp = Experiment::load(config, seeds)?;
    let out = out_dir(&exp, out);
    let scheme = exp
        .certificate
        .ok_or_else(|| CliError::Config("config error at `.`: missing field `certificate`".into()))?;
    match scheme {
        Scheme::SgdConvexEnumerated | Scheme::SgdNonconvexEnumerated => {
            let trace = tree_trace(&exp, scheme)?;
            let w = persist("certify", &exp, None, &out, None, Some(&trace))?;
            println!(
                "{scheme:?}: {} nodes, {} paths, root bias {}; wrote {}",
                trace.rows.len(),
                trace.paths.unwrap_or(0),
                fmt_f64(trace.root_bias.unwrap_or(0.0)),
                w.dir.display()
            );
            check(&trace)
        }
        Scheme::HybridVr => certify_hybrid_cmd(&exp, &out),
        _ => {
            let method = match &exp.plan {
                Plan::Deterministic(m) => m,
                Plan::Stochastic(_) => return Err(mismatch(scheme, "stochastic driver runs")),
            };
            if !scheme.accepts_method(&method.kind) {
                return Err(mismatch(scheme, &format!("{:?} runs", method.kind)));
            }
            let run = execute(&exp, None)?;
            let trace = deterministic_trace(&run, &exp.problem, scheme).map_err(unsupported_as_mismatch)?;
            let w = persist("certify", &exp, None, &out, Some(&run), Some(&trace))?;
            println!("{scheme:?}: {} steps; wrote {}", trace.rows.len(), w.dir.display());
            check(&trace)
        }
    }
}

fn certify_hybrid_cmd(exp: &Experiment, out: &Path) -> Result<(), CliError> {
    let driver = match &exp.plan {
        Plan::Stochastic(d) if matches!(d.estimator, EstimatorKind::Hybrid { .. }) => d,
        _ => return Err(mismatch(Scheme::HybridVr, "runs without the hybrid estimator")),
    };
    if driver.stages > 0 || driver.loopless.is_some() || driver.prox.is_some() {
        return Err(mismatch(Scheme::HybridVr, "multi-stage, loopless or proximal drivers"));
    }
    let c = exp.problem.constants();
    let l = c.l.max(c.l_average.unwrap_or(c.l));
    let provisional = HybridCertParams::for_horizon(l, exp.horizon, 0.0)?;
    let (spec, schedule) = hybrid_driver(&provisional);
    let hybrid = Experiment {
        plan: Plan::Stochastic(spec),
        schedule: Some(schedule),
        ..exp.clone()
    };
    let runs: Vec<RunRecord> = hybrid
        .seeds
        .par_iter()
        .map(|s| execute(&hybrid, Some(*s)))
        .collect::<Result<_, _>>()?;
    let sigma_hat_sq = minibatch_variance_sup(&exp.problem, 1, runs.iter().flat_map(|r| r.iterates.iter()))?;
    let params = HybridCertParams { sigma_hat_sq, ..provisional };
    println!(
        "hybrid parameters: L={} eta={} c={} beta={} sigma_hat_sq={}",
        fmt_f64(params.l),
        fmt_f64(params.eta),
        fmt_f64(params.c),
        fmt_f64(params.beta),
        fmt_f64(params.sigma_hat_sq)
    );
    let cert = certify_hybrid(&runs, &params, &exp.problem)?;
    let w = persist("certify", exp, None, out, None, Some(&cert.trace))?;
    println!(
        "ensemble of {}: mean averaged grad norm^2 {} <= bound {} + 3 s.e. {}; wrote {}",
        cert.ensemble,
        fmt_f64(cert.metric_mean),
        fmt_f64(cert.bound),
        fmt_f64(cert.margin),
        w.dir.display()
    );
    Ok(())
}

pub fn cmd_enumerate(config: &Path, out: Option<&Path>, seeds: &[u64]) -> Result<(), CliError> {
    let exp = Experiment::load(config, seeds)?;
    let out = out_dir(&exp, out);
    let scheme = exp.certificate.unwrap_or(Scheme::SgdConvexEnumerated);
    if !matches!(scheme, Scheme::SgdConvexEnumerated | Scheme::SgdNonconvexEnumerated) {
        return Err(mismatch(scheme, "expectation trees"));
    }
    let trace = tree_trace(&exp, scheme)?;
    if let Plan::Stochastic(d) = &exp.plan {
        let mut state = EstimatorState::new(d.estimator, &exp.problem, 0)?;
        if let EstimatorKind::Svrg { .. } = d.estimator {
            state.set_snapshot(&exp.problem, &exp.w0)?;
        }
        if d.estimator.is_recursive() {
            state.restart_recursion(&exp.problem, &exp.w0)?;
        }
        let m = enumerate_moments(&state, &exp.problem, &exp.w0)?;
        let mean: Vec<String> = m.mean.iter().map(|v| fmt_f64(*v)).collect();
        println!(
            "estimator {} at w0: mean [{}], variance {}, max norm^2 {}",
            d.estimator.name(),
            mean.join(", "),
            fmt_f64(m.variance),
            fmt_f64(m.max_norm_sq)
        );
    }
    let w = persist("enumerate", &exp, None, &out, None, Some(&trace))?;
    println!(
        "{scheme:?}: {} nodes, {} paths, root bias {}; wrote {}",
        trace.rows.len(),
        trace.paths.unwrap_or(0),
        fmt_f64(trace.root_bias.unwrap_or(0.0)),
        w.dir.display()
    );
    check(&trace)
}

/// `F_gap` where the optimum is known, `grad_norm_sq` otherwise.
fn metric_series(run: &RunRecord) -> (&'static str, Vec<(usize, f64)>) {
    if run.rows.iter().all(|r| r.gap.is_some()) {
        ("F_gap", run.rows.iter().map(|r| (r.t, r.gap.unwrap())).collect())
    } else {
        ("grad_norm_sq", run.rows.iter().map(|r| (r.t, r.grad_norm_sq)).collect())
    }
}

pub fn cmd_sweep(config: &Path, out: Option<&Path>, seeds: &[u64], cap: Option<usize>) -> Result<(), CliError> {
    let doc = read_document(config)?;
    let base_dir = config.parent().map(Path::to_path_buf).unwrap_or_default();
    let (grid, points) = expand_grid(&doc, &base_dir, seeds)?;
    let first = &points[0].1;
    let out = out_dir(first, out);
    let cap = cap.or(first.cap).unwrap_or(DEFAULT_CAP);
    let jobs: Vec<(usize, Option<u64>)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, (_, exp))| exp.jobs().into_iter().map(move |s| (i, s)))
        .collect();
    if jobs.len() > cap {
        return Err(CliError::Cap { runs: jobs.len(), cap });
    }
    let results: Vec<Result<RunRecord, CliError>> =
        jobs.par_iter().map(|(i, s)| execute(&points[*i].1, *s)).collect();

    let mut sweep_hash = String::new();
    for (_, exp) in &points {
        sweep_hash.push_str(&exp.config_hash());
    }
    let sweep_hash = {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(sweep_hash.as_bytes()))[..16].to_string()
    };
    let sweep_dir = out.join(format!("sweep-{sweep_hash}"));
    ensure_dir(&sweep_dir)?;
    let summary_path = sweep_dir.join("summary.csv");
    let mut summary = csv::Writer::from_path(&summary_path).map_err(|source| CliError::Csv {
        path: summary_path.clone(),
        source,
    })?;
    let csv_err = |source| CliError::Csv {
        path: summary_path.clone(),
        source,
    };
    summary
        .write_record(["grid_index", "grid_value", "seed", "metric", "final_value", "slope", "run_hash"])
        .map_err(csv_err)?;

    let mut chart: Vec<(String, Vec<Vec<(usize, f64)>>)> =
        points.iter().map(|(v, _)| (format!("{}={}", grid.path, compact(v)), Vec::new())).collect();
    let mut metric_name = "F_gap";
    let mut first_err = None;
    for ((i, seed), result) in jobs.iter().zip(results) {
        let exp = &points[*i].1;
        let run = match result {
            Ok(run) => run,
            Err(e) => {
                eprintln!("grid point {i} seed={}: {e}", seed.map_or("-".into(), |s| s.to_string()));
                first_err.get_or_insert(e);
                continue;
            }
        };
        let written = persist("sweep", exp, *seed, &out, Some(&run), None)?;
        let (name, series) = metric_series(&run);
        metric_name = name;
        let tail: Vec<(usize, f64)> = series.iter().copied().filter(|(t, _)| *t >= 1).collect();
        let slope = fit_rate(&tail, 0.5).ok();
        summary
            .write_record([
                i.to_string(),
                compact(&points[*i].0),
                seed.map_or(String::new(), |s| s.to_string()),
                name.to_string(),
                fmt_f64(series.last().map_or(f64::NAN, |p| p.1)),
                slope.map(fmt_f64).unwrap_or_default(),
                written.hash,
            ])
            .map_err(csv_err)?;
        chart[*i].1.push(series);
    }
    summary.flush().map_err(io_err(&summary_path))?;

    let lines: Vec<(String, Vec<(f64, f64)>)> = chart
        .into_iter()
        .filter(|(_, runs)| !runs.is_empty())
        .map(|(label, runs)| {
            let len = runs.iter().map(Vec::len).min().unwrap_or(0);
            let mean = (0..len)
                .filter(|&k| runs[0][k].0 >= 1)
                .map(|k| {
                    let m = runs.iter().map(|r| r[k].1).sum::<f64>() / runs.len() as f64;
                    (runs[0][k].0 as f64, m)
                })
                .collect();
            (label, mean)
        })
        .collect();
    let chart_path = sweep_dir.join("chart.svg");
    fs::write(&chart_path, loglog_svg(&format!("sweep over {}", grid.path), metric_name, &lines))
        .map_err(io_err(&chart_path))?;
    println!(
        "sweep of {} runs over {}: wrote {} and {}",
        jobs.len(),
        grid.path,
        summary_path.display(),
        chart_path.display()
    );
    first_err.map_or(Ok(()), Err)
}

fn compact(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => serde_json::to_string(other).expect("values serialize"),
    }
}

/// Log-log slope of one column of a trace CSV against `t`.
pub fn cmd_fit_rate(input: &Path, column: Option<&str>, tail: f64) -> Result<(), CliError> {
    let mut reader = csv::Reader::from_path(input).map_err(|source| CliError::Csv {
        path: input.to_path_buf(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", input.display())))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let t_col = find("t").ok_or_else(|| CliError::Config(format!("{} has no `t` column", input.display())))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec.map_err(|e| CliError::Config(format!("cannot read {}: {e}", input.display())))?);
    }
    let pick = |name: &str| -> Option<usize> {
        let c = find(name)?;
        rows.iter().all(|r| !r[c].is_empty()).then_some(c)
    };
    let (name, col) = match column {
        Some(name) => (
            name.to_string(),
            find(name).ok_or_else(|| CliError::Config(format!("{} has no `{name}` column", input.display())))?,
        ),
        None => match pick("F_gap") {
            Some(c) => ("F_gap".to_string(), c),
            None => (
                "grad_norm_sq".to_string(),
                find("grad_norm_sq")
                    .ok_or_else(|| CliError::Config(format!("{} has no metric column", input.display())))?,
            ),
        },
    };
    let mut series = Vec::with_capacity(rows.len());
    for r in &rows {
        let parse_err = |what: &str| CliError::Config(format!("non-numeric {what} in {}", input.display()));
        let t: usize = r[t_col].parse().map_err(|_| parse_err("t"))?;
        if t == 0 || r[col].is_empty() {
            continue;
        }
        let v: f64 = r[col].parse().map_err(|_| parse_err(&name))?;
        series.push((t, v));
    }
    let slope = fit_rate(&series, tail)?;
    println!("{name}: slope {} over the last {}% of {} points", fmt_f64(slope), fmt_f64(tail * 100.0), series.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use descentlab::methods::MethodSpec;
    use descentlab::problems::fixtures;
    use descentlab::schedules::ScheduleSpec;
    use descentlab::Weights;

    #[test]
    fn metric_falls_back_to_gradient_norm() {
        let problem = fixtures::half_norm_sq(2).unwrap();
        let mut policy = StepPolicy::new(ScheduleSpec::Constant { eta: 0.5 }).unwrap();
        let run = run_deterministic(
            &problem,
            &MethodSpec::new(MethodKind::Gd),
            &mut policy,
            &Weights::new(vec![1.0, 1.0]),
            3,
        )
        .unwrap();
        let (name, series) = metric_series(&run);
        assert_eq!(name, "F_gap");
        assert_eq!(series.len(), 4);
        assert_eq!(series[1], (1, 0.25));
    }
}
