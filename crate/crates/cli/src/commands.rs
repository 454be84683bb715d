use std::path::Path;

use anyhow::{bail, Context, Result};
use jointrait_core::evaluation::{evaluate, BrierWeights, EvalConfig};
use jointrait_core::inference::{fit, ChainConfig, PosteriorArchive, PriorSpec};
use jointrait_core::io::{read_archive, read_dataset, read_eval_records, read_json, write_archive, write_dataset, write_json};
use jointrait_core::sim::{generate_dataset, SimScenario};
use jointrait_core::{predict, ModelSpec, PredictionRequest};
use log::{info, warn};
use serde_json::Value;

use crate::cli::{BrierWeighting, EvaluateArgs, FitArgs, PredictArgs, SimulateArgs};
use crate::PredictionResponse;

pub const SPEC_FILE: &str = "spec.json";
pub const TRUTH_FILE: &str = "truth.json";

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut scenario = match &args.scenario {
        Some(path) => read_json::<SimScenario>(path).with_context(|| format!("reading {}", path.display()))?,
        None => SimScenario::new(args.n, args.seed),
    };
    scenario.n = args.n;
    scenario.seed = args.seed;
    let (data, truth) = generate_dataset(&scenario)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_dataset(&args.out, &data, &scenario.spec)?;
    write_json(&args.out.join(SPEC_FILE), &scenario.spec)?;
    write_json(&args.out.join(TRUTH_FILE), &truth)?;
    let events = data.subjects.iter().filter(|s| s.event).count();
    info!("simulated {} subjects ({events} events) into {}", data.len(), args.out.display());
    Ok(())
}

pub fn run_fit(args: &FitArgs) -> Result<()> {
    let spec: ModelSpec = read_json(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?;
    spec.validate()?;
    let priors: PriorSpec = match &args.priors {
        Some(path) => read_json(path).with_context(|| format!("reading {}", path.display()))?,
        None => PriorSpec::default(),
    };
    let data = read_dataset(&args.data, &spec)?;
    let cfg = ChainConfig {
        n_chains: args.chains,
        n_iter: args.iter,
        n_burnin: args.burnin,
        seed: args.seed,
        thin: args.thin,
        keep_subject_effects: !args.no_subject_effects,
        fixed_association: args.fixed_association.clone(),
        ..Default::default()
    };
    info!(
        "fitting {} subjects: {} chains x {} iterations ({} burn-in)",
        data.len(),
        cfg.n_chains,
        cfg.n_iter,
        cfg.n_burnin
    );
    let started = std::time::Instant::now();
    let archive = fit(&data, &spec, &priors, &cfg)?;
    info!("sampling took {:.1}s", started.elapsed().as_secs_f64());
    write_archive(&args.out, &archive)?;
    report_fit(&archive);
    if let Some(path) = &args.summary {
        write_json(path, &archive.summary())?;
    }
    info!("wrote {}", args.out.display());
    Ok(())
}

fn report_fit(archive: &PosteriorArchive) {
    eprintln!("{:<28} {:>10} {:>9} {:>10} {:>10}", "parameter", "mean", "sd", "2.5%", "97.5%");
    for s in archive.summary() {
        eprintln!("{:<28} {:>10.4} {:>9.4} {:>10.4} {:>10.4}", s.name, s.mean, s.sd, s.q025, s.q975);
    }
    let d = &archive.diagnostics;
    let (lo, hi) = d.acceptance_range();
    eprintln!("max R-hat {:.4}; acceptance {lo:.3} to {hi:.3}", d.max_rhat());
    for w in &d.warnings {
        warn!("{w}");
    }
}

/// The subject file with command-line overrides applied, as a request.
fn prediction_request(args: &PredictArgs) -> Result<PredictionRequest> {
    let text = std::fs::read_to_string(&args.subject).with_context(|| format!("reading {}", args.subject.display()))?;
    let mut body: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.subject.display()))?;
    let Some(obj) = body.as_object_mut() else {
        bail!("{}: expected a JSON object", args.subject.display());
    };
    if let Some(l) = args.landmark {
        obj.insert("landmark".into(), l.into());
    }
    if let Some(h) = &args.horizons {
        obj.insert("horizons".into(), h.clone().into());
    }
    if let Some(s) = args.seed {
        obj.insert("seed".into(), s.into());
    }
    if let Some(n) = args.draws {
        obj.insert("n_draws".into(), n.into());
    }
    serde_json::from_value(body).with_context(|| format!("{}: invalid subject", args.subject.display()))
}

pub fn model_id(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

pub fn run_predict(args: &PredictArgs) -> Result<()> {
    let archive = read_archive(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let request = prediction_request(args)?;
    request.validate(&archive.spec)?;
    let prediction = predict(&request, &archive)?;
    for w in &prediction.warnings {
        warn!("{w}");
    }
    let response = PredictionResponse { model_id: model_id(&args.model), prediction };
    match &args.out {
        Some(path) => write_json(path, &response)?,
        None => println!("{}", serde_json::to_string_pretty(&response)?),
    }
    Ok(())
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let records = read_eval_records(&args.predictions)?;
    let cfg = EvalConfig {
        landmark: args.landmark,
        horizon: args.horizon,
        bandwidth: args.bandwidth,
        grid_size: args.grid,
        brier_weights: match args.brier_weights {
            BrierWeighting::Censoring => BrierWeights::Censoring,
            BrierWeighting::Event => BrierWeights::Event,
        },
    };
    let result = evaluate(&records, &cfg)?;
    for w in &result.warnings {
        warn!("{w}");
    }
    match result.auc {
        Some(auc) => info!("AUC {auc:.4}, Brier {:.4} over {} subjects at risk", result.bs, result.n_at_risk),
        None => info!("AUC undefined, Brier {:.4} over {} subjects at risk", result.bs, result.n_at_risk),
    }
    match &args.out {
        Some(path) => write_json(path, &result)?,
        None => println!("{}", serde_json::to_string_pretty(&result)?),
    }
    Ok(())
}
