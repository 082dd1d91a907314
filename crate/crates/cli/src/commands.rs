//! One function per verb; each returns the rendered output.

use std::fmt::Write;
use std::path::Path;

use radar_est::bounds::{deterministic_crlb, draw_reflectivities, emcb, stochastic_crlb, BoundResult, ParamLayout};
use radar_est::config::{load_config, ExperimentConfig};
use radar_est::estimator::{estimate, matched_psi};
use radar_est::experiments::{format_number, records_to_csv, records_to_json, run_asymptotic_sweep, run_mse_sweep};
use radar_est::numkit::psd_factor;
use radar_est::signal::{calibrate_noise, db_to_linear, synthesize, ReflectivityModel};
use radar_est::waveform::orthogonality_report;
use radar_est::{Error, Model, Result};
use serde_json::{json, Value};

use crate::{Common, Format};

pub fn run(verb: &str, config: &Path, args: &Common) -> Result<String> {
    let cfg = load_config(config)?;
    match verb {
        "validate" => validate(&cfg, args),
        "crlb" => crlb(&cfg, args),
        "emcb" => emcb_cmd(&cfg, args),
        "estimate" => estimate_cmd(&cfg, args),
        "sweep" => sweep(&cfg, args),
        "asymptote" => asymptote(&cfg, args),
        "ortho-check" => ortho(&cfg, args),
        other => Err(Error::InvalidArgument(format!("unknown verb {other}"))),
    }
}

fn model(cfg: &ExperimentConfig, args: &Common) -> Model {
    args.model.map(Model::from).unwrap_or(cfg.model)
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

/// Noise power per requested SNR, or the config's noise power when none is given.
fn noise_levels(cfg: &ExperimentConfig, args: &Common) -> Result<Vec<(Option<f64>, f64)>> {
    match &args.snr_db {
        None => Ok(vec![(None, cfg.scenario.noise_power)]),
        Some(list) => {
            let model = ReflectivityModel::stochastic(cfg.reflectivity.clone());
            list.iter()
                .map(|&db| Ok((Some(db), calibrate_noise(&cfg.scenario, &model, db_to_linear(db))?)))
                .collect()
        }
    }
}

fn validate(cfg: &ExperimentConfig, args: &Common) -> Result<String> {
    let s = &cfg.scenario;
    let v = json!({
        "label": cfg.label,
        "m_t": s.m_t(),
        "m_r": s.m_r(),
        "l_r": s.l_r(),
        "n": s.samples,
        "targets": s.target_count(),
        "params_per_target": cfg.layout.per_target,
        "model": cfg.model.to_string(),
        "auto_samples": cfg.auto_samples,
    });
    Ok(match args.format.unwrap_or(Format::Json) {
        Format::Json => json_text(&v),
        Format::Csv => format!(
            "label,m_t,m_r,l_r,n,targets\n{},{},{},{},{},{}\n",
            cfg.label,
            s.m_t(),
            s.m_r(),
            s.l_r(),
            s.samples,
            s.target_count()
        ),
    })
}

fn bound_csv(rows: &[(Option<f64>, f64, BoundResult)], layout: &ParamLayout) -> String {
    let mut out = String::from("snr_db,noise_power,param,variance\n");
    for (snr, noise, b) in rows {
        let snr = snr.map(format_number).unwrap_or_default();
        let noise = format_number(*noise);
        for (name, v) in layout.names().iter().zip(&b.per_param_variance) {
            let _ = writeln!(out, "{snr},{noise},{name},{}", format_number(*v));
        }
    }
    out
}

fn with_noise(mut v: Value, snr: Option<f64>, noise: f64) -> Value {
    let obj = v.as_object_mut().expect("bound json is an object");
    if let Some(db) = snr {
        obj.insert("snr_db".into(), json!(db));
    }
    obj.insert("noise_power".into(), json!(noise));
    v
}

fn collect_json(values: Vec<Value>) -> Value {
    if values.len() == 1 {
        values.into_iter().next().expect("one value")
    } else {
        Value::Array(values)
    }
}

fn crlb(cfg: &ExperimentConfig, args: &Common) -> Result<String> {
    let s = &cfg.scenario;
    let mut rows = Vec::new();
    for (snr, noise) in noise_levels(cfg, args)? {
        let b = match model(cfg, args) {
            Model::Stochastic => stochastic_crlb(s, &cfg.waveforms, &cfg.reflectivity, noise, &cfg.layout)?,
            Model::Deterministic => {
                let alphas = draw_reflectivities(&psd_factor(&cfg.reflectivity)?, s.path_count(), args.seed, 0);
                deterministic_crlb(s, &cfg.waveforms, &alphas, noise, &cfg.layout)?
            }
        };
        rows.push((snr, noise, b));
    }
    Ok(match args.format.unwrap_or(Format::Json) {
        Format::Json => json_text(&collect_json(
            rows.iter()
                .map(|(snr, noise, b)| with_noise(b.to_json_value(&cfg.layout), *snr, *noise))
                .collect(),
        )),
        Format::Csv => bound_csv(&rows, &cfg.layout),
    })
}

fn emcb_cmd(cfg: &ExperimentConfig, args: &Common) -> Result<String> {
    let s = &cfg.scenario;
    let trials = args.trials.unwrap_or(cfg.emcb_trials);
    let mut results = Vec::new();
    for (snr, noise) in noise_levels(cfg, args)? {
        let r = emcb(
            s,
            &cfg.waveforms,
            &cfg.reflectivity,
            noise,
            trials,
            args.seed,
            &cfg.layout,
        )?;
        results.push((snr, noise, r));
    }
    Ok(match args.format.unwrap_or(Format::Json) {
        Format::Json => json_text(&collect_json(
            results
                .iter()
                .map(|(snr, noise, r)| with_noise(r.to_json_value(&cfg.layout), *snr, *noise))
                .collect(),
        )),
        Format::Csv => {
            let rows: Vec<_> = results.into_iter().map(|(s, n, r)| (s, n, r.bound)).collect();
            bound_csv(&rows, &cfg.layout)
        }
    })
}

fn estimate_cmd(cfg: &ExperimentConfig, args: &Common) -> Result<String> {
    let levels = noise_levels(cfg, args)?;
    if levels.len() != 1 {
        return Err(Error::InvalidArgument("estimate takes a single --snr-db value".into()));
    }
    let (snr, noise) = levels[0];
    let mut s = cfg.scenario.clone();
    s.noise_power = noise;
    let m = model(cfg, args);
    let data = synthesize(
        &s,
        &cfg.waveforms,
        &ReflectivityModel::stochastic(cfg.reflectivity.clone()),
        args.seed,
    )?;
    let res = estimate(m, &s, &cfg.waveforms, &data, &cfg.search, &cfg.layout)?;
    let truth = cfg.layout.extract(&s.targets);
    let matched = matched_psi(&res, &s.targets, &cfg.layout);
    Ok(match args.format.unwrap_or(Format::Json) {
        Format::Json => {
            let mut v = res.to_json_value(&cfg.layout);
            let obj = v.as_object_mut().expect("estimate json is an object");
            obj.insert("psi_matched".into(), json!(matched));
            obj.insert("truth".into(), json!(truth));
            obj.insert("noise_power".into(), json!(noise));
            if let Some(db) = snr {
                obj.insert("snr_db".into(), json!(db));
            }
            json_text(&v)
        }
        Format::Csv => {
            let mut out = String::from("param,estimate,truth\n");
            for ((name, e), t) in cfg.layout.names().iter().zip(&matched).zip(&truth) {
                let _ = writeln!(out, "{name},{},{}", format_number(*e), format_number(*t));
            }
            out
        }
    })
}

fn sweep(cfg: &ExperimentConfig, args: &Common) -> Result<String> {
    let grid = args.snr_db.clone().unwrap_or_else(|| cfg.snr_db.clone());
    let trials = args.trials.unwrap_or(cfg.trials);
    let recs = run_mse_sweep(cfg, model(cfg, args), &grid, trials, &cfg.search, args.seed)?;
    Ok(match args.format.unwrap_or(Format::Csv) {
        Format::Csv => records_to_csv(&recs),
        Format::Json => json_text(&records_to_json(&recs)),
    })
}

fn asymptote(cfg: &ExperimentConfig, args: &Common) -> Result<String> {
    let Some(a) = &cfg.asymptotic else {
        return Err(Error::Config("config has no `asymptotic` section".into()));
    };
    let snr = match args.snr_db.as_deref() {
        None => a.snr_db,
        Some([v]) => *v,
        Some(_) => return Err(Error::InvalidArgument("asymptote takes a single --snr-db value".into())),
    };
    let trials = args.trials.unwrap_or(cfg.trials);
    let report = run_asymptotic_sweep(
        cfg,
        model(cfg, args),
        a.axis,
        &a.sizes,
        snr,
        trials,
        &cfg.search,
        args.seed,
    )?;
    if report.truncated {
        log::warn!("asymptotic sweep truncated by the memory guard");
    }
    Ok(match args.format.unwrap_or(Format::Csv) {
        Format::Csv => records_to_csv(&report.records),
        Format::Json => json_text(&json!({
            "records": records_to_json(&report.records),
            "truncated": report.truncated,
        })),
    })
}

fn ortho(cfg: &ExperimentConfig, args: &Common) -> Result<String> {
    let r = orthogonality_report(&cfg.waveforms, &cfg.scenario)?;
    Ok(match args.format.unwrap_or(Format::Json) {
        Format::Json => json_text(&json!({
            "max_cross_correlation": r.max_cross_correlation,
            "threshold": r.threshold,
            "pass": r.pass,
            "pairs_checked": r.pairs_checked,
            "empty_support_paths": r.empty_support_paths,
        })),
        Format::Csv => format!(
            "max_cross_correlation,threshold,pass,pairs_checked,empty_support_paths\n{},{},{},{},{}\n",
            format_number(r.max_cross_correlation),
            format_number(r.threshold),
            r.pass,
            r.pairs_checked,
            r.empty_support_paths
        ),
    })
}
