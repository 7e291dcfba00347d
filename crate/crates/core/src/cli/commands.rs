use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::manifest::Run;
use super::{EvalArgs, GradcheckArgs, RectifyArgs, SplitArgs, SynthArgs, TopicsArgs, EXIT_NUMERIC, EXIT_OK};
use crate::checkpoint::{self, blob_path};
use crate::decoder::atn::{topic_distribution, TopicFilter, TopicReport};
use crate::error::{NoradError, Result};
use crate::evaluate::{class_count, evaluate, rectification_study, EvalReport, IsolatedLink};
use crate::graph::{
    isolated_nodes, load_graph, split_edges, write_edge_list, write_node_map, AttributedGraph, GraphFormat,
    SplitManifest, SplitSource, SPLIT_MANIFEST_VERSION,
};
use crate::gradcheck::GradCheckReport;
use crate::rectify::RectifyConfig;
use crate::synth::{write_instance, SynthParams};
use crate::tensor::Tensor;
use crate::trainer::{tiny_elbo_grad_check, Model};

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).map_err(|e| NoradError::io(p, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| NoradError::io(path, e))?;
    Ok(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
}

fn write_matrix(path: &Path, g: &AttributedGraph, z: &Tensor) -> Result<()> {
    let mut s = String::new();
    for i in 0..z.rows() {
        s.push_str(&g.node_names().map_or_else(|| i.to_string(), |n| n[i].clone()));
        for v in z.row(i) {
            s.push('\t');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| NoradError::io(path, e))
}

/// Loads a checkpoint and the split it is evaluated on, hashing both.
fn load_inputs(run: &mut Run, checkpoint_path: &Path, split_path: &Path) -> Result<(Model, SplitManifest, AttributedGraph, String)> {
    run.input(checkpoint_path)?;
    run.input(&blob_path(checkpoint_path))?;
    let split_hash = run.input(split_path)?;
    let (model, _) = checkpoint::load(checkpoint_path)?;
    run.seed(model.config.seed);
    let manifest = SplitManifest::load(split_path)?;
    let graph = manifest.load_graph()?;
    if graph.num_features() != model_features(&model)? {
        return Err(NoradError::Consistency(format!(
            "checkpoint expects {} attributes, graph has {}",
            model_features(&model)?,
            graph.num_features()
        )));
    }
    Ok((model, manifest, graph, split_hash))
}

fn model_features(model: &Model) -> Result<usize> {
    let name = crate::encoder::self_weight(crate::encoder::HEADS[0]);
    model
        .params
        .get(&name)
        .map(|t| t.rows())
        .ok_or_else(|| NoradError::Consistency(format!("checkpoint lacks {name}")))
}

#[derive(Serialize)]
struct SplitReport {
    n: usize,
    edges: usize,
    train_edges: usize,
    val_pos: usize,
    val_neg: usize,
    test_pos: usize,
    test_neg: usize,
    isolated_in_train: usize,
}

pub(super) fn split(args: &SplitArgs, argv: &[String]) -> Result<i32> {
    let mut run = Run::start("split", argv, serde_json::to_value(args)?, &args.out)?;
    run.seed(args.seed);
    let mut hashes = vec![run.input(&args.edges)?, run.input(&args.features)?];
    if let Some(l) = &args.labels {
        hashes.push(run.input(l)?);
    }
    let format: GraphFormat = args.format.into();
    let graph = load_graph(&args.edges, &args.features, format, args.labels.as_deref())?;
    let split = split_edges(&graph, args.train_ratio, args.val_fraction, args.seed)?;
    let manifest = SplitManifest {
        version: SPLIT_MANIFEST_VERSION,
        n: graph.n(),
        source: SplitSource {
            edges: absolute(&args.edges)?,
            features: absolute(&args.features)?,
            format,
            labels: args.labels.as_deref().map(absolute).transpose()?,
            hashes,
        },
        split,
    };
    let path = run.out("split.json");
    manifest.save(&path)?;
    run.output(path);
    let s = &manifest.split;
    for (name, edges) in [
        ("train_edges.tsv", &s.train_edges),
        ("val_pos.tsv", &s.val_pos),
        ("val_neg.tsv", &s.val_neg),
        ("test_pos.tsv", &s.test_pos),
        ("test_neg.tsv", &s.test_neg),
    ] {
        let p = run.out(name);
        write_edge_list(&p, &graph, edges)?;
        run.output(p);
    }
    let p = run.out("node_map.tsv");
    write_node_map(&p, &graph)?;
    run.output(p);
    let report = SplitReport {
        n: graph.n(),
        edges: graph.edges().len(),
        train_edges: s.train_edges.len(),
        val_pos: s.val_pos.len(),
        val_neg: s.val_neg.len(),
        test_pos: s.test_pos.len(),
        test_neg: s.test_neg.len(),
        isolated_in_train: isolated_nodes(&s.train_edges, graph.n()).len(),
    };
    println!(
        "{} nodes, {} train / {} val / {} test edges, {} isolated in train",
        report.n, report.train_edges, report.val_pos, report.test_pos, report.isolated_in_train
    );
    run.write_json("split_report.json", &report)?;
    run.finish()?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EvalOutput {
    #[serde(flatten)]
    metrics: EvalReport,
    config_hash: String,
    split_manifest_hash: String,
}

pub(super) fn eval(args: &EvalArgs, argv: &[String]) -> Result<i32> {
    let mut run = Run::start("eval", argv, serde_json::to_value(args)?, &args.out)?;
    let (model, manifest, graph, split_hash) = load_inputs(&mut run, &args.checkpoint, &args.split)?;
    let (metrics, z) = evaluate(&model, &graph, &manifest.split, args.clusters)?;
    println!("auc {:.4} ap {:.4} nmi {:?} acc {:?}", metrics.auc, metrics.ap, metrics.nmi, metrics.acc);
    let out = EvalOutput {
        metrics,
        config_hash: model.config.hash(),
        split_manifest_hash: split_hash,
    };
    run.write_json("eval_report.json", &out)?;
    if args.export_z {
        let p = run.out("z.tsv");
        write_matrix(&p, &graph, &z)?;
        run.output(p);
    }
    run.finish()?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct NodeSummary {
    node: usize,
    ll_before: Option<f64>,
    ll_after: Option<f64>,
    failure: Option<String>,
}

#[derive(Serialize)]
struct RectifyReport {
    config_hash: String,
    split_manifest_hash: String,
    epsilon: f64,
    iterations: usize,
    preserve_mask: bool,
    ascent_fraction: f64,
    failures: usize,
    /// Mean log-likelihood over successful nodes at every step.
    mean_log_likelihood: Vec<f64>,
    isolated_link: Option<IsolatedLink>,
    nodes: Vec<NodeSummary>,
}

pub(super) fn rectify(args: &RectifyArgs, argv: &[String]) -> Result<i32> {
    let mut run = Run::start("rectify", argv, serde_json::to_value(args)?, &args.out)?;
    let (model, manifest, graph, split_hash) = load_inputs(&mut run, &args.checkpoint, &args.split)?;
    let config = RectifyConfig {
        epsilon: args.epsilon,
        iterations: args.iters,
        targets: args.nodes.clone(),
        preserve_mask: args.preserve_mask,
    };
    let study = rectification_study(&model, &graph, &manifest.split, &config)?;
    let ok: Vec<_> = study.outcome.traces.iter().filter(|t| t.failure.is_none()).collect();
    let mean_log_likelihood = (0..=args.iters)
        .map(|s| ok.iter().map(|t| t.log_likelihood[s]).sum::<f64>() / ok.len().max(1) as f64)
        .collect();
    let report = RectifyReport {
        config_hash: model.config.hash(),
        split_manifest_hash: split_hash,
        epsilon: args.epsilon,
        iterations: args.iters,
        preserve_mask: args.preserve_mask,
        ascent_fraction: study.outcome.ascent_fraction(),
        failures: study.outcome.traces.len() - ok.len(),
        mean_log_likelihood,
        isolated_link: study.isolated.clone(),
        nodes: study
            .outcome
            .traces
            .iter()
            .map(|t| NodeSummary {
                node: t.node,
                ll_before: t.before(),
                ll_after: t.after(),
                failure: t.failure.clone(),
            })
            .collect(),
    };
    match &report.isolated_link {
        Some(l) => println!(
            "{} nodes rectified, isolated-node AUC {:.4} -> {:.4}",
            report.nodes.len(),
            l.auc_before,
            l.auc_after
        ),
        None => println!("{} nodes rectified, no scorable test pairs at isolated nodes", report.nodes.len()),
    }
    run.write_json("rectify_report.json", &report)?;
    let p = run.out("z_rectified.tsv");
    write_matrix(&p, &graph, &study.outcome.z)?;
    run.output(p);
    run.finish()?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct TopicsReport {
    config_hash: String,
    samples: usize,
    seed: u64,
    doc_freq_ceiling: Option<f64>,
    topics: Vec<TopicReport>,
}

pub(super) fn topics(args: &TopicsArgs, argv: &[String]) -> Result<i32> {
    let mut run = Run::start("topics", argv, serde_json::to_value(args)?, &args.out)?;
    run.input(&args.checkpoint)?;
    run.input(&blob_path(&args.checkpoint))?;
    let (model, _) = checkpoint::load(&args.checkpoint)?;
    let atn = model
        .atn()?
        .ok_or_else(|| NoradError::Contract(format!("mode {} has no topic decoder", model.config.mode)))?;
    let names = match &args.vocab {
        Some(p) => {
            run.input(p)?;
            let names = read_lines(p)?;
            if names.len() != atn.num_attributes() {
                return Err(NoradError::Consistency(format!(
                    "vocabulary has {} entries, model has {} attributes",
                    names.len(),
                    atn.num_attributes()
                )));
            }
            Some(names)
        }
        None => None,
    };
    let stop_list: HashSet<String> = match &args.stop_list {
        Some(p) => {
            run.input(p)?;
            read_lines(p)?.into_iter().collect()
        }
        None => HashSet::new(),
    };
    let (filter, ceiling) = match &args.split {
        Some(p) => {
            run.input(p)?;
            let graph = SplitManifest::load(p)?.load_graph()?;
            (TopicFilter::from_features(graph.features(), args.doc_freq_ceiling, stop_list), Some(args.doc_freq_ceiling))
        }
        None => (
            TopicFilter {
                doc_freq_ceiling: None,
                stop_list,
            },
            None,
        ),
    };
    let seed = args.seed.unwrap_or(model.config.seed);
    run.seed(seed);
    let communities: Vec<usize> = match args.community {
        Some(k) => vec![k],
        None => (0..atn.k()).collect(),
    };
    let mut topics = Vec::with_capacity(communities.len());
    for k in communities {
        let mut t = topic_distribution(&atn, k, args.samples, seed)?;
        t.select_top(args.top, names.as_deref(), &filter);
        let words: Vec<String> = t
            .top_words
            .iter()
            .map(|w| w.name.clone().unwrap_or_else(|| w.attribute.to_string()))
            .collect();
        println!("community {k}: {}", words.join(" "));
        topics.push(t);
    }
    let report = TopicsReport {
        config_hash: model.config.hash(),
        samples: args.samples,
        seed,
        doc_freq_ceiling: ceiling,
        topics,
    };
    run.write_json("topics_report.json", &report)?;
    run.finish()?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SynthReport {
    params: SynthParams,
    edges: usize,
    density: f64,
    isolated: usize,
    classes: usize,
}

pub(super) fn synth(args: &SynthArgs, argv: &[String]) -> Result<i32> {
    let mut run = Run::start("synth", argv, serde_json::to_value(args)?, &args.out)?;
    let mut params = match (&args.preset, &args.params) {
        (_, Some(p)) => {
            run.input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| NoradError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| NoradError::Config(format!("{}: {e}", p.display())))?
        }
        (Some(name), None) => SynthParams::preset(name)?,
        (None, None) => SynthParams::preset("default")?,
    };
    if let Some(s) = args.seed {
        params = params.with_seed(s);
    }
    run.set_config(serde_json::to_value(&params)?);
    run.seed(params.seed);
    let inst = params.sample()?;
    let files = write_instance(&inst, Some(&params), &args.out)?;
    for p in [&files.edges, &files.features, &files.labels, &files.planted] {
        run.output(p.clone());
    }
    let g = &inst.graph;
    let n = g.n() as f64;
    let report = SynthReport {
        edges: g.edges().len(),
        density: g.edges().len() as f64 / (n * (n - 1.0) / 2.0).max(1.0),
        isolated: isolated_nodes(g.edges(), g.n()).len(),
        classes: class_count(&inst.labels),
        params,
    };
    println!(
        "{} nodes, {} edges (density {:.4}), {} isolated, {} classes",
        g.n(),
        report.edges,
        report.density,
        report.isolated,
        report.classes
    );
    run.write_json("synth_report.json", &report)?;
    run.finish()?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct GradcheckOutput<'a> {
    #[serde(flatten)]
    report: &'a GradCheckReport,
    tolerance: f64,
    passed: bool,
}

pub(super) fn gradcheck(args: &GradcheckArgs, argv: &[String]) -> Result<i32> {
    let mut run = match &args.out {
        Some(out) => Some(Run::start("gradcheck", argv, serde_json::to_value(args)?, out)?),
        None => None,
    };
    let report = tiny_elbo_grad_check(args.seed, args.temperature, args.epsilon)?;
    let passed = report.max_rel_error < args.tolerance;
    println!(
        "max relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e}) over {} coordinates",
        report.max_rel_error, report.worst_param, report.worst_index, report.analytic, report.numeric, report.coordinates
    );
    if let Some(run) = run.as_mut() {
        run.seed(args.seed);
        run.write_json(
            "gradcheck_report.json",
            &GradcheckOutput {
                report: &report,
                tolerance: args.tolerance,
                passed,
            },
        )?;
    }
    if let Some(run) = run {
        run.finish()?;
    }
    if passed {
        Ok(EXIT_OK)
    } else {
        eprintln!("gradient check failed: {:.3e} >= {:.1e}", report.max_rel_error, args.tolerance);
        Ok(EXIT_NUMERIC)
    }
}
