use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;
use serde_json::{Map, Value};

use super::manifest::Run;
use super::{TrainArgs, EXIT_NUMERIC, EXIT_OK};
use crate::checkpoint;
use crate::error::{NoradError, Result};
use crate::evaluate::validation_auc;
use crate::graph::SplitManifest;
use crate::tensor::Tensor;
use crate::trainer::{FitOptions, Model, RoundSummary, TrainConfig, TrainData, Trainer};

#[derive(Debug, Serialize)]
struct TrainReport {
    status: &'static str,
    config_hash: String,
    split_manifest_hash: String,
    rounds_completed: usize,
    converged: bool,
    interrupted: bool,
    best_round: Option<usize>,
    best_val_auc: Option<f64>,
    final_elbo: Option<f64>,
    error: Option<String>,
    rounds: Vec<RoundSummary>,
}

fn overlay(base: &mut Map<String, Value>, layer: Map<String, Value>) {
    for (k, v) in layer {
        base.insert(k, v);
    }
}

/// `key=value`, the value parsed as JSON and taken as a string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| NoradError::Config(format!("expected key=value, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Defaults, then the config file, then `overrides` in order.
pub fn resolve_config(file: Option<&Path>, overrides: Vec<(String, Value)>) -> Result<TrainConfig> {
    let Value::Object(mut merged) = serde_json::to_value(TrainConfig::default())? else {
        unreachable!("config serializes to an object")
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| NoradError::io(path, e))?;
        match serde_json::from_str(&text).map_err(|e| NoradError::Config(format!("{}: {e}", path.display())))? {
            Value::Object(m) => overlay(&mut merged, m),
            _ => return Err(NoradError::Config(format!("{} must hold a JSON object", path.display()))),
        }
    }
    overlay(&mut merged, overrides.into_iter().collect());
    let config: TrainConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| NoradError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn overrides(args: &TrainArgs) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    if let Some(v) = args.seed {
        out.push(("seed".into(), v.into()));
    }
    if let Some(v) = args.outer_rounds {
        out.push(("outer_rounds".into(), v.into()));
    }
    if let Some(v) = &args.mode {
        out.push(("mode".into(), v.clone().into()));
    }
    if let Some(v) = args.alpha {
        out.push(("alpha".into(), v.into()));
    }
    if let Some(v) = args.learning_rate {
        out.push(("learning_rate".into(), v.into()));
    }
    if let Some(v) = args.k {
        out.push(("k".into(), v.into()));
    }
    for s in &args.set {
        out.push(parse_assignment(s)?);
    }
    Ok(out)
}

pub fn blockmodel_csv(b: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..b.rows() {
        let row: Vec<String> = b.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub(super) fn train(args: &TrainArgs, argv: &[String]) -> Result<i32> {
    let mut run = Run::start("train", argv, Value::Null, &args.out)?;
    let split_hash = run.input(&args.split)?;
    let manifest = SplitManifest::load(&args.split)?;
    run.input(&manifest.source.edges)?;
    run.input(&manifest.source.features)?;
    if let Some(l) = &manifest.source.labels {
        run.input(l)?;
    }
    if let Some(c) = &args.config {
        run.input(c)?;
    }
    let graph = manifest.load_graph()?;
    let split = &manifest.split;
    let config = resolve_config(args.config.as_deref(), overrides(args)?)?;
    run.set_config(serde_json::to_value(&config)?);
    run.seed(config.seed);
    info!("training {} nodes, {} train edges, config {}", graph.n(), split.train_edges.len(), config.hash());

    let data = TrainData::new(&graph, &split.train_edges, &config)?;
    let input = data.input.clone();
    let model = Model::init(config.clone(), graph.num_features())?;
    let mut trainer = Trainer::new(model, data)?;

    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        warn!("interrupt handler unavailable: {e}");
    }

    let last_path = run.out("last.json");
    let best_path = run.out("best.json");
    let has_val = !split.val_pos.is_empty() && !split.val_neg.is_empty();
    let mut validate = |m: &Model| validation_auc(m, &input, split);
    let mut best = f64::NEG_INFINITY;
    let mut on_round = |s: &RoundSummary, m: &Model| -> Result<()> {
        checkpoint::save(m, Some(s.round + 1), &last_path)?;
        if let Some(auc) = s.val_auc {
            if auc > best {
                best = auc;
                checkpoint::save(m, Some(s.round + 1), &best_path)?;
            }
        }
        info!(
            "round {} elbo {:.4} temperature {:.3} val_auc {:?}",
            s.round, s.elbo, s.temperature, s.val_auc
        );
        Ok(())
    };
    let opts = FitOptions {
        validate: if has_val { Some(&mut validate) } else { None },
        on_round: Some(&mut on_round),
        stop: Some(stop),
    };
    let result = trainer.fit(opts);

    let mut report = TrainReport {
        status: "completed",
        config_hash: config.hash(),
        split_manifest_hash: split_hash,
        rounds_completed: 0,
        converged: false,
        interrupted: false,
        best_round: None,
        best_val_auc: None,
        final_elbo: None,
        error: None,
        rounds: Vec::new(),
    };
    let trace_path = run.out("trace.jsonl");
    trainer.trace.write_jsonl(&trace_path)?;
    run.output(trace_path);
    let code = match result {
        Ok(outcome) => {
            report.rounds_completed = outcome.rounds.len();
            report.converged = outcome.converged;
            report.interrupted = outcome.interrupted;
            report.final_elbo = outcome.rounds.last().map(|r| r.elbo);
            if let Some((round, auc, _)) = &outcome.best {
                report.best_round = Some(*round);
                report.best_val_auc = Some(*auc);
                run.output(best_path.clone());
                run.output(checkpoint::blob_path(&best_path));
            }
            if outcome.interrupted {
                report.status = "interrupted";
                warn!("interrupted after {} rounds; checkpoint flushed", outcome.rounds.len());
            } else if outcome.converged {
                report.status = "converged";
            }
            report.rounds = outcome.rounds;
            let model_path = run.out("model.json");
            checkpoint::save(&trainer.model, Some(report.rounds_completed), &model_path)?;
            run.output(model_path.clone());
            run.output(checkpoint::blob_path(&model_path));
            let csv_path = run.out("blockmodel.csv");
            std::fs::write(&csv_path, blockmodel_csv(&trainer.model.blockmodel()?))
                .map_err(|e| NoradError::io(&csv_path, e))?;
            run.output(csv_path);
            EXIT_OK
        }
        Err(e @ NoradError::Numeric(_)) => {
            let good = Model {
                config: config.clone(),
                params: trainer.last_good().clone(),
            };
            let good_path = run.out("last_good.json");
            checkpoint::save(&good, None, &good_path)?;
            run.output(good_path.clone());
            run.output(checkpoint::blob_path(&good_path));
            eprintln!("{e}");
            eprintln!("last good parameters saved to {}", good_path.display());
            report.status = "numeric_failure";
            report.error = Some(e.to_string());
            EXIT_NUMERIC
        }
        Err(e) => return Err(e),
    };
    if last_path.exists() {
        run.output(last_path.clone());
        run.output(checkpoint::blob_path(&last_path));
    }
    run.write_json("train_report.json", &report)?;
    run.finish()?;
    Ok(code)
}
