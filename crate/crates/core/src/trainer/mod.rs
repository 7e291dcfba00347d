//! Variational EM: Adam ascent on the ELBO over encoder and attribute
//! decoder weights with `B` fixed, alternating with ascent on the
//! penalized edge likelihood over `B` at the deterministic representation.

mod config;
mod elbo;

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{hash_json, Representation, TrainConfig};
pub use elbo::{attribute_weight, elbo, elbo_on_tape, m_objective_on_tape, ElboTerms, ElboVars, MStepVars};

use crate::adam::AdamState;
use crate::autodiff::{ParamSet, Tape};
use crate::decoder::{osbm, AtnParams, AttributeDims, Variant, VariantRegistry};
use crate::encoder::{self, deterministic_representation, EncoderInput};
use crate::error::{NoradError, Result};
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::graph::{dense_adjacency, AttributedGraph, Edge, NormalizedAdjacency};
use crate::prior::{temperature_schedule, ReparamNoise, VariationalParams};
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor;

/// Everything the objective reads from the training graph.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub n: usize,
    pub input: EncoderInput,
    pub adjacency: Arc<Tensor>,
    pub features: Arc<Tensor>,
    pub num_edges: usize,
    pub pos_weight: f64,
}

impl TrainData {
    pub fn new(graph: &AttributedGraph, train_edges: &[Edge], config: &TrainConfig) -> Result<Self> {
        let n = graph.n();
        let adj = NormalizedAdjacency::new(train_edges, n)?;
        let pos_weight = config
            .pos_weight
            .unwrap_or_else(|| osbm::default_pos_weight(n, train_edges.len(), config.exclude_diagonal));
        Ok(TrainData {
            n,
            input: EncoderInput::new(&adj, graph.features())?,
            adjacency: Arc::new(dense_adjacency(train_edges, n)),
            features: Arc::new(graph.features().clone()),
            num_edges: train_edges.len(),
            pos_weight,
        })
    }
}

/// Configuration plus learned parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub params: ParamSet,
}

impl Model {
    /// Fresh parameters for `d` attributes, drawn from the `init` stream.
    pub fn init(config: TrainConfig, d: usize) -> Result<Self> {
        config.validate()?;
        let variant = VariantRegistry::default().get(&config.mode)?;
        let mut rng = rng::stream(config.seed, rng::INIT);
        let mut params = ParamSet::new();
        encoder::init_params(&mut params, d, config.k, &mut rng)?;
        let dims = AttributeDims {
            k: config.k,
            d,
            d_prime: config.d_prime,
            d_dprime: config.d_dprime,
        };
        variant.init_params(&mut params, dims, &mut rng)?;
        Ok(Model { config, params })
    }

    pub fn variant(&self) -> Result<Variant> {
        VariantRegistry::default().get(&self.config.mode)
    }

    pub fn encode(&self, input: &EncoderInput) -> Result<VariationalParams> {
        encoder::encode(input, &self.params, self.config.l2_normalize)
    }

    /// The representation used for prediction, clustering and the M-step.
    pub fn representation(&self, input: &EncoderInput) -> Result<Tensor> {
        let q = self.encode(input)?;
        represent(&q, self.config.m_step_representation)
    }

    pub fn blockmodel(&self) -> Result<Tensor> {
        self.variant()?.edge.blockmodel(&self.params)
    }

    pub fn atn(&self) -> Result<Option<AtnParams>> {
        if self.variant()?.attributes.models_attributes() {
            AtnParams::from_params(&self.params).map(Some)
        } else {
            Ok(None)
        }
    }
}

pub fn represent(q: &VariationalParams, mode: Representation) -> Result<Tensor> {
    match mode {
        Representation::Threshold => deterministic_representation(&q.eta, &q.mu),
        Representation::Soft => Ok(q.eta.zip_map(&q.mu, |e, m| e * m)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    E,
    M,
}

/// One inner iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub round: usize,
    pub phase: Phase,
    /// ELBO for E records, penalized edge likelihood for M records.
    pub objective: f64,
    pub edge: f64,
    pub attribute: Option<f64>,
    pub kl_bernoulli: Option<f64>,
    pub kl_gaussian: Option<f64>,
    pub penalty: Option<f64>,
    pub temperature: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| NoradError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| NoradError::io(path, e))?;
        }
        w.flush().map_err(|e| NoradError::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NoradError::io(path, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(TrainTrace { records })
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }
}

/// Per-round summary handed to observers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    /// Mean ELBO over the round's E-iterations.
    pub elbo: f64,
    pub m_objective: Option<f64>,
    pub temperature: f64,
    pub val_auc: Option<f64>,
}

pub type Validator<'a> = dyn FnMut(&Model) -> Result<f64> + 'a;
pub type RoundObserver<'a> = dyn FnMut(&RoundSummary, &Model) -> Result<()> + 'a;

#[derive(Default)]
pub struct FitOptions<'a> {
    /// Scores a snapshot on held-out edges; higher is better.
    pub validate: Option<&'a mut Validator<'a>>,
    pub on_round: Option<&'a mut RoundObserver<'a>>,
    pub stop: Option<Arc<AtomicBool>>,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub rounds: Vec<RoundSummary>,
    pub converged: bool,
    pub interrupted: bool,
    pub best: Option<(usize, f64, ParamSet)>,
}

/// Mutable training state.
pub struct Trainer {
    pub model: Model,
    pub trace: TrainTrace,
    variant: Variant,
    data: TrainData,
    adam_e: AdamState,
    adam_m: AdamState,
    noise_rng: StreamRng,
    e_iterations: usize,
    iteration: usize,
    round: usize,
    last_good: ParamSet,
    started: Instant,
}

impl Trainer {
    pub fn new(model: Model, data: TrainData) -> Result<Self> {
        let variant = model.variant()?;
        let b_slot = model.params.slot(osbm::B_NAME);
        let e_slots: Vec<usize> = model
            .params
            .iter()
            .enumerate()
            .filter(|(s, p)| p.trainable && Some(*s) != b_slot)
            .map(|(s, _)| s)
            .collect();
        let m_slots: Vec<usize> = match b_slot {
            Some(s) if variant.edge.learns_blockmodel() => vec![s],
            _ => Vec::new(),
        };
        let adam_e = AdamState::new(&model.params, e_slots);
        let adam_m = AdamState::new(&model.params, m_slots);
        Ok(Trainer {
            noise_rng: rng::stream(model.config.seed, rng::NOISE),
            last_good: model.params.clone(),
            variant,
            data,
            adam_e,
            adam_m,
            e_iterations: 0,
            iteration: 0,
            round: 0,
            trace: TrainTrace::default(),
            started: Instant::now(),
            model,
        })
    }

    pub fn data(&self) -> &TrainData {
        &self.data
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    /// Parameters at the end of the last completed round.
    pub fn last_good(&self) -> &ParamSet {
        &self.last_good
    }

    pub fn temperature(&self) -> f64 {
        let c = &self.model.config;
        temperature_schedule(self.e_iterations, c.anneal_total(), c.temperature_start, c.temperature_floor)
    }

    fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// `t_e` ascent steps on the ELBO with `B` held constant. Returns the
    /// ELBO at each step.
    pub fn e_step(&mut self) -> Result<Vec<ElboTerms>> {
        let mut out = Vec::with_capacity(self.model.config.t_e);
        let b_trainable = set_trainable(&mut self.model.params, osbm::B_NAME, false);
        let result = (|| {
            for _ in 0..self.model.config.t_e {
                let tau = self.temperature();
                let noise = ReparamNoise::draw(self.data.n, self.model.config.k, &mut self.noise_rng);
                let mut tape = Tape::new();
                let vars = elbo_on_tape(
                    &mut tape,
                    &self.data,
                    &self.model.params,
                    &self.variant,
                    &noise,
                    tau,
                    &self.model.config,
                )?;
                let terms = vars.terms(&tape);
                terms.check_finite().map_err(|e| at_iteration(e, self.iteration))?;
                let grads = self.model.params.gradients(&tape.backward(vars.total)?);
                check_grads(&grads, self.iteration)?;
                self.adam_e
                    .update(&mut self.model.params, &grads, self.model.config.learning_rate)?;
                self.trace.records.push(TraceRecord {
                    iteration: self.iteration,
                    round: self.round,
                    phase: Phase::E,
                    objective: terms.total,
                    edge: terms.edge,
                    attribute: vars.attribute.map(|_| terms.attribute),
                    kl_bernoulli: Some(terms.kl_bernoulli),
                    kl_gaussian: Some(terms.kl_gaussian),
                    penalty: None,
                    temperature: Some(tau),
                    wall_time_s: self.elapsed(),
                });
                self.iteration += 1;
                self.e_iterations += 1;
                out.push(terms);
            }
            Ok(out)
        })();
        set_trainable(&mut self.model.params, osbm::B_NAME, b_trainable);
        result
    }

    /// `t_m` ascent steps on the penalized edge likelihood over `B` at the
    /// fixed representation. A no-op when the variant pins `B`.
    pub fn m_step(&mut self) -> Result<Vec<f64>> {
        if self.adam_m.slots().is_empty() {
            return Ok(Vec::new());
        }
        let z = self.model.representation(&self.data.input)?;
        let frozen: Vec<(String, bool)> = self
            .model
            .params
            .iter()
            .filter(|p| p.name != osbm::B_NAME)
            .map(|p| (p.name.clone(), p.trainable))
            .collect();
        for (name, _) in &frozen {
            self.model.params.set_trainable(name, false);
        }
        let result = (|| {
            let mut out = Vec::with_capacity(self.model.config.t_m);
            for _ in 0..self.model.config.t_m {
                let mut tape = Tape::new();
                let vars =
                    m_objective_on_tape(&mut tape, &self.data, &self.model.params, &self.variant, &z, &self.model.config)?;
                let total = tape.scalar(vars.total);
                if !total.is_finite() {
                    return Err(at_iteration(
                        NoradError::Numeric(format!(
                            "non-finite M-step objective: edge={}, penalty={}",
                            tape.scalar(vars.edge),
                            tape.scalar(vars.penalty)
                        )),
                        self.iteration,
                    ));
                }
                let grads = self.model.params.gradients(&tape.backward(vars.total)?);
                check_grads(&grads, self.iteration)?;
                self.adam_m
                    .update(&mut self.model.params, &grads, self.model.config.learning_rate)?;
                self.trace.records.push(TraceRecord {
                    iteration: self.iteration,
                    round: self.round,
                    phase: Phase::M,
                    objective: total,
                    edge: tape.scalar(vars.edge),
                    attribute: None,
                    kl_bernoulli: None,
                    kl_gaussian: None,
                    penalty: Some(tape.scalar(vars.penalty)),
                    temperature: None,
                    wall_time_s: self.elapsed(),
                });
                self.iteration += 1;
                out.push(total);
            }
            Ok(out)
        })();
        for (name, t) in frozen {
            self.model.params.set_trainable(&name, t);
        }
        result
    }

    /// Alternates E- and M-steps for up to `outer_rounds` rounds, stopping
    /// early once the relative change of the round ELBO across
    /// `convergence_window` rounds drops below `convergence_tol`.
    pub fn fit(&mut self, mut opts: FitOptions<'_>) -> Result<FitOutcome> {
        let cfg = self.model.config.clone();
        let mut outcome = FitOutcome {
            rounds: Vec::new(),
            converged: false,
            interrupted: false,
            best: None,
        };
        for _ in 0..cfg.outer_rounds {
            if opts.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
                outcome.interrupted = true;
                break;
            }
            let e = self.e_step()?;
            let m = self.m_step()?;
            let elbo = e.iter().map(|t| t.total).sum::<f64>() / e.len() as f64;
            let val_auc = match opts.validate.as_mut() {
                Some(v) => Some(v(&self.model)?),
                None => None,
            };
            let summary = RoundSummary {
                round: self.round,
                elbo,
                m_objective: m.last().copied(),
                temperature: self.temperature(),
                val_auc,
            };
            if let Some(auc) = val_auc {
                if outcome.best.as_ref().is_none_or(|(_, b, _)| auc > *b) {
                    outcome.best = Some((self.round, auc, self.model.params.clone()));
                }
            }
            self.last_good = self.model.params.clone();
            if let Some(cb) = opts.on_round.as_mut() {
                cb(&summary, &self.model)?;
            }
            outcome.rounds.push(summary);
            self.round += 1;
            if converged(&outcome.rounds, cfg.convergence_window, cfg.convergence_tol) {
                outcome.converged = true;
                break;
            }
        }
        Ok(outcome)
    }
}

fn converged(rounds: &[RoundSummary], window: usize, tol: f64) -> bool {
    if tol <= 0.0 || rounds.len() <= window {
        return false;
    }
    let now = rounds[rounds.len() - 1].elbo;
    let then = rounds[rounds.len() - 1 - window].elbo;
    ((now - then) / then.abs().max(1e-12)).abs() < tol
}

fn set_trainable(params: &mut ParamSet, name: &str, trainable: bool) -> bool {
    let was = params.iter().find(|p| p.name == name).is_some_and(|p| p.trainable);
    params.set_trainable(name, trainable);
    was
}

fn at_iteration(e: NoradError, iteration: usize) -> NoradError {
    match e {
        NoradError::Numeric(m) => NoradError::Numeric(format!("iteration {iteration}: {m}")),
        other => other,
    }
}

fn check_grads(grads: &[Tensor], iteration: usize) -> Result<()> {
    if grads.iter().all(Tensor::all_finite) {
        Ok(())
    } else {
        Err(NoradError::Numeric(format!("iteration {iteration}: non-finite gradient")))
    }
}

/// Finite-difference check of the full ELBO gradient over every parameter
/// (including `B`) at one frozen noise draw and fixed temperature.
pub fn elbo_grad_check(
    graph: &AttributedGraph,
    config: &TrainConfig,
    temperature: f64,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let data = TrainData::new(graph, graph.edges(), config)?;
    let mut model = Model::init(config.clone(), graph.num_features())?;
    for p in model.params.iter_mut() {
        p.trainable = true;
    }
    let variant = model.variant()?;
    let noise = ReparamNoise::draw(graph.n(), config.k, &mut rng::stream(config.seed, rng::NOISE));
    grad_check(&model.params, epsilon, |p, tape| {
        Ok(elbo_on_tape(tape, &data, p, &variant, &noise, temperature, config)?.total)
    })
}

/// [`elbo_grad_check`] on the `tiny` synthetic preset (`n=12, D=8, K=4,
/// d′=8, d″=4`).
pub fn tiny_elbo_grad_check(seed: u64, temperature: f64, epsilon: f64) -> Result<GradCheckReport> {
    let inst = crate::synth::SynthParams::preset("tiny")?.with_seed(seed).sample()?;
    let config = TrainConfig {
        k: 4,
        d_prime: 8,
        d_dprime: 4,
        seed,
        ..TrainConfig::default()
    };
    elbo_grad_check(&inst.graph, &config, temperature, epsilon)
}

/// Builds a model, fits it on `train_edges` and returns the trainer.
pub fn fit(
    graph: &AttributedGraph,
    train_edges: &[Edge],
    config: TrainConfig,
    opts: FitOptions<'_>,
) -> Result<(Trainer, FitOutcome)> {
    let data = TrainData::new(graph, train_edges, &config)?;
    let model = Model::init(config, graph.num_features())?;
    let mut trainer = Trainer::new(model, data)?;
    let outcome = trainer.fit(opts)?;
    Ok((trainer, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{atn, NO_ATTR};
    use crate::synth::SynthParams;

    fn two_node_graph() -> AttributedGraph {
        AttributedGraph::new(2, Vec::new(), Tensor::from_rows(2, 1, vec![1.0, 0.0]).unwrap()).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            k: 4,
            d_prime: 4,
            d_dprime: 2,
            t_e: 5,
            t_m: 5,
            outer_rounds: 4,
            learning_rate: 0.01,
            ..TrainConfig::default()
        }
    }

    fn planted() -> AttributedGraph {
        SynthParams {
            n: 60,
            d: 16,
            ..SynthParams::preset("recovery").unwrap()
        }
        .sample()
        .unwrap()
        .graph
    }

    fn zeroed(model: &mut Model) {
        for p in model.params.iter_mut() {
            p.tensor = Tensor::zeros(p.tensor.shape());
        }
    }

    #[test]
    fn tiny_elbo_gradients_match_finite_differences() {
        for seed in 0..3 {
            let report = tiny_elbo_grad_check(seed, 0.7, 1e-5).unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn closed_form_on_edgeless_pair() {
        let g = two_node_graph();
        let config = TrainConfig {
            alpha: 1.5,
            ..small_config()
        };
        let data = TrainData::new(&g, &[], &config).unwrap();
        let mut model = Model::init(config.clone(), 1).unwrap();
        zeroed(&mut model);
        let noise = ReparamNoise::draw(2, config.k, &mut rng::stream(1, rng::NOISE));
        let terms = elbo(&data, &model.params, &model.variant().unwrap(), &noise, 0.7, &config).unwrap();
        let half = 0.5f64.ln();
        assert!((terms.edge - 2.0 * half).abs() < 1e-12);
        assert!((terms.attribute - 2.0 * half).abs() < 1e-12);
        assert!(terms.kl_bernoulli.abs() < 1e-12);
        assert!(terms.kl_gaussian.abs() < 1e-12);
        assert!((terms.total - (2.0 * half + 1.5 * 2.0 * half)).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_drops_attribute_term() {
        let g = planted();
        let config = TrainConfig {
            alpha: 0.0,
            ..small_config()
        };
        let data = TrainData::new(&g, g.edges(), &config).unwrap();
        let model = Model::init(config.clone(), g.num_features()).unwrap();
        let noise = ReparamNoise::draw(g.n(), config.k, &mut rng::stream(2, rng::NOISE));
        let mut tape = Tape::new();
        let vars = elbo_on_tape(&mut tape, &data, &model.params, &model.variant().unwrap(), &noise, 0.7, &config).unwrap();
        let terms = vars.terms(&tape);
        assert!(vars.attribute.is_none());
        assert_eq!(terms.attribute, 0.0);
        assert_eq!(terms.total, terms.edge - terms.kl_bernoulli - terms.kl_gaussian);

        let no_attr = TrainConfig {
            mode: NO_ATTR.into(),
            ..small_config()
        };
        let model = Model::init(no_attr.clone(), g.num_features()).unwrap();
        let t = elbo(&data, &model.params, &model.variant().unwrap(), &noise, 0.7, &no_attr).unwrap();
        assert_eq!(t.attribute, 0.0);
    }

    #[test]
    fn elbo_bounded_by_reconstruction() {
        let g = planted();
        let config = small_config();
        let data = TrainData::new(&g, g.edges(), &config).unwrap();
        let model = Model::init(config.clone(), g.num_features()).unwrap();
        let mut rng = rng::stream(3, rng::NOISE);
        for _ in 0..5 {
            let noise = ReparamNoise::draw(g.n(), config.k, &mut rng);
            let t = elbo(&data, &model.params, &model.variant().unwrap(), &noise, 0.7, &config).unwrap();
            assert!(t.kl_bernoulli >= 0.0 && t.kl_gaussian >= 0.0);
            assert!(t.total <= t.edge + config.alpha * t.attribute);
        }
    }

    #[test]
    fn e_step_leaves_blockmodel_bitwise() {
        let g = planted();
        let config = small_config();
        let (mut trainer, _) = fit(&g, g.edges(), TrainConfig { outer_rounds: 1, ..config }, FitOptions::default()).unwrap();
        let before = trainer.model.params.clone();
        trainer.e_step().unwrap();
        assert_eq!(trainer.model.params.get(osbm::B_NAME), before.get(osbm::B_NAME));
        assert_ne!(trainer.model.params.get(atn::T_NAME), before.get(atn::T_NAME));
        assert!(trainer.model.params.iter().find(|p| p.name == osbm::B_NAME).unwrap().trainable);
    }

    #[test]
    fn m_step_leaves_encoder_and_decoder_bitwise() {
        let g = planted();
        let (mut trainer, _) = fit(&g, g.edges(), TrainConfig { outer_rounds: 1, ..small_config() }, FitOptions::default()).unwrap();
        let before = trainer.model.params.clone();
        trainer.m_step().unwrap();
        for (a, b) in trainer.model.params.iter().zip(before.iter()) {
            if a.name == osbm::B_NAME {
                assert_ne!(a.tensor, b.tensor);
            } else {
                assert_eq!(a.tensor, b.tensor, "{}", a.name);
                assert_eq!(a.trainable, b.trainable);
            }
        }
    }

    #[test]
    fn identity_variant_never_moves_blockmodel() {
        let g = planted();
        let config = TrainConfig {
            mode: crate::decoder::IDENTITY_B.into(),
            ..small_config()
        };
        let (trainer, _) = fit(&g, g.edges(), config, FitOptions::default()).unwrap();
        assert_eq!(trainer.model.blockmodel().unwrap(), Tensor::eye(4));
        assert_eq!(trainer.trace.phase(Phase::M).count(), 0);
    }

    #[test]
    fn heavy_penalty_shrinks_blockmodel() {
        let g = planted();
        let config = TrainConfig {
            gamma: 1e3,
            t_m: 200,
            ..small_config()
        };
        let data = TrainData::new(&g, g.edges(), &config).unwrap();
        let model = Model::init(config, g.num_features()).unwrap();
        let initial = model.blockmodel().unwrap().max_abs();
        let mut trainer = Trainer::new(model, data).unwrap();
        trainer.m_step().unwrap();
        assert!(trainer.model.blockmodel().unwrap().max_abs() < 0.1 * initial);
    }

    #[test]
    fn same_seed_same_fit() {
        let g = planted();
        let run = || {
            let (t, o) = fit(&g, g.edges(), small_config(), FitOptions::default()).unwrap();
            (t.model.params, o.rounds.last().unwrap().elbo)
        };
        let (p1, e1) = run();
        let (p2, e2) = run();
        assert_eq!(e1, e2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn smoothed_elbo_rises_early() {
        let g = SynthParams::preset("default").unwrap().sample().unwrap().graph;
        let config = TrainConfig {
            k: 16,
            d_prime: 16,
            d_dprime: 8,
            t_e: 1,
            ..TrainConfig::default()
        };
        let data = TrainData::new(&g, g.edges(), &config).unwrap();
        let mut trainer = Trainer::new(Model::init(config.clone(), g.num_features()).unwrap(), data).unwrap();
        // common random numbers across iterations
        let noise = ReparamNoise::draw(g.n(), config.k, &mut rng::stream(9, rng::NOISE));
        let mut elbos = Vec::new();
        for _ in 0..50 {
            trainer.e_step().unwrap();
            let t = elbo(trainer.data(), &trainer.model.params, trainer.variant(), &noise, 0.5, &config).unwrap();
            elbos.push(t.total);
        }
        let smooth: Vec<f64> = elbos.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
        for w in smooth.windows(2) {
            assert!(w[1] >= w[0], "{smooth:?}");
        }
    }

    #[test]
    fn trace_is_ordered_and_tagged() {
        let g = planted();
        let (trainer, outcome) = fit(&g, g.edges(), small_config(), FitOptions::default()).unwrap();
        let recs = &trainer.trace.records;
        assert_eq!(recs.len(), 4 * (5 + 5));
        assert!(recs.windows(2).all(|w| w[1].iteration > w[0].iteration));
        assert_eq!(outcome.rounds.len(), 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        trainer.trace.write_jsonl(&path).unwrap();
        assert_eq!(&TrainTrace::read_jsonl(&path).unwrap(), &trainer.trace);
    }

    #[test]
    fn convergence_rule() {
        let s = |elbo| RoundSummary {
            round: 0,
            elbo,
            m_objective: None,
            temperature: 1.0,
            val_auc: None,
        };
        let flat: Vec<_> = [-100.0, -100.0, -100.0, -100.0, -100.0, -100.001].map(s).into();
        assert!(converged(&flat, 5, 1e-4));
        assert!(!converged(&flat[..5], 5, 1e-4));
        let rising: Vec<_> = [-100.0, -99.0, -98.0, -97.0, -96.0, -95.0].map(s).into();
        assert!(!converged(&rising, 5, 1e-4));
        assert!(!converged(&flat, 5, 0.0));
    }

    #[test]
    fn stop_flag_interrupts_before_next_round() {
        let g = planted();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let mut count = 0;
        let mut obs = |_: &RoundSummary, _: &Model| -> Result<()> {
            count += 1;
            if count == 2 {
                flag.store(true, Ordering::SeqCst);
            }
            Ok(())
        };
        let opts = FitOptions {
            on_round: Some(&mut obs),
            stop: Some(stop),
            ..Default::default()
        };
        let (_, outcome) = fit(&g, g.edges(), TrainConfig { outer_rounds: 10, ..small_config() }, opts).unwrap();
        assert!(outcome.interrupted);
        assert_eq!(outcome.rounds.len(), 2);
    }

    #[test]
    fn best_snapshot_tracks_validation() {
        let g = planted();
        let mut scores = [0.6, 0.9, 0.7, 0.8].into_iter();
        let mut v = |_: &Model| -> Result<f64> { Ok(scores.next().unwrap()) };
        let opts = FitOptions {
            validate: Some(&mut v),
            ..Default::default()
        };
        let (_, outcome) = fit(&g, g.edges(), small_config(), opts).unwrap();
        let (round, auc, _) = outcome.best.unwrap();
        assert_eq!((round, auc), (1, 0.9));
    }
}
