//! Seeded training loop: batch sampling, GE2E or triplet loss, Adam with
//! global gradient-norm clipping, and periodic held-out evaluation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Batch, BatchSampler, Utterance};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalOptions};
use crate::frontend::FeatureSequence;
use crate::loss::{ge2e_graph, triplet_graph, TripletConfig};
use crate::ndmath::{Graph, Tensor};

/// Training length when utterances differ in length.
pub const DEFAULT_TRAIN_FRAMES: usize = 98;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Ge2e,
    Triplet,
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ge2e" => Ok(LossKind::Ge2e),
            "triplet" => Ok(LossKind::Triplet),
            other => Err(Error::config("train", format!("unknown loss '{other}', expected ge2e or triplet"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Ge2e => "ge2e",
            LossKind::Triplet => "triplet",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub phrases_per_batch: usize,
    pub utterances_per_phrase: usize,
    pub loss: LossKind,
    pub triplet: TripletConfig,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub seed: u64,
    /// Frames per training utterance; `None` picks the shared dataset length,
    /// or [`DEFAULT_TRAIN_FRAMES`] when lengths differ.
    pub frames: Option<usize>,
    /// Held-out evaluation period in steps; 0 disables periodic evaluation.
    pub eval_every: usize,
    /// Stop once held-out aggregate AUC is at or below this.
    pub target_auc: Option<f64>,
    pub eval: EvalOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            phrases_per_batch: 8,
            utterances_per_phrase: 10,
            loss: LossKind::Ge2e,
            triplet: TripletConfig::default(),
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            seed: 0,
            frames: None,
            eval_every: 100,
            target_auc: None,
            eval: EvalOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config("train", m.to_string()));
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if self.frames == Some(0) {
            return bad("training frames must be positive");
        }
        self.triplet.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub auc: f64,
    pub eer: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub frames: usize,
}

impl TrainLog {
    /// First evaluated step whose AUC is at or below `target`.
    pub fn steps_to_reach(&self, target: f64) -> Option<usize> {
        self.evals.iter().find(|e| e.auc <= target).map(|e| e.step)
    }

    pub fn final_auc(&self) -> Option<f64> {
        self.evals.last().map(|e| e.auc)
    }
}

/// Training progress, streamed to an observer as it happens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainEvent {
    Step(StepRecord),
    Eval(EvalRecord),
}

fn training_frames(data: &[Utterance], cfg: &TrainConfig) -> usize {
    cfg.frames.unwrap_or_else(|| {
        let first = data.first().map(|u| u.features.num_frames());
        match first {
            Some(n) if data.iter().all(|u| u.features.num_frames() == n) => n,
            _ => DEFAULT_TRAIN_FRAMES,
        }
    })
}

fn gradients(model: &Model, feats: &[FeatureSequence], batch: &Batch, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true)?;
    let (x, y) = (batch.num_phrases(), batch.utterances_per_phrase());
    let loss = match cfg.loss {
        LossKind::Ge2e => {
            let refs: Vec<&FeatureSequence> = batch.indices().iter().map(|&i| &feats[i]).collect();
            let emb = model.forward_graph(&mut g, &vars, &refs)?;
            ge2e_graph(&mut g, emb, x, y)?.loss
        }
        LossKind::Triplet => {
            let trips = crate::loss::sample_triplets(x, y, rng.gen())?;
            let pick = |r: usize| &feats[batch.indices()[r]];
            let mut refs: Vec<&FeatureSequence> = trips.iter().map(|t| pick(t.anchor)).collect();
            refs.extend(trips.iter().map(|t| pick(t.positive)));
            refs.extend(trips.iter().map(|t| pick(t.negative)));
            let emb = model.forward_graph(&mut g, &vars, &refs)?;
            let a = g.slice_rows(emb, 0, x)?;
            let p = g.slice_rows(emb, x, 2 * x)?;
            let n = g.slice_rows(emb, 2 * x, 3 * x)?;
            triplet_graph(&mut g, a, p, n, cfg.triplet.margin)?
        }
    };
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "training loss" });
    }
    let grads = g.backward(loss)?;
    let grads: Vec<Tensor> = vars.iter().map(|v| grads.get_or_zeros(&g, *v)).collect();
    if grads.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite { op: "training gradient" });
    }
    Ok((value, grads))
}

/// Records one held-out evaluation; true when the AUC target is met.
fn run_eval(
    model: &Model,
    held_out: Option<&[Utterance]>,
    cfg: &TrainConfig,
    step: usize,
    log: &mut TrainLog,
    observer: &mut dyn FnMut(TrainEvent),
) -> Result<bool> {
    let Some(data) = held_out else { return Ok(false) };
    let report = evaluate(model, data, &cfg.eval)?;
    let rec = EvalRecord {
        step,
        auc: report.aggregate.auc,
        eer: report.aggregate.eer,
    };
    observer(TrainEvent::Eval(rec));
    log.evals.push(rec);
    Ok(cfg.target_auc.is_some_and(|t| rec.auc <= t))
}

/// Trains `model` in place on `train`, evaluating on `held_out` every
/// `eval_every` steps and after the last step.
pub fn train(
    model: &mut Model,
    train: &[Utterance],
    held_out: Option<&[Utterance]>,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(TrainEvent),
) -> Result<TrainLog> {
    cfg.validate()?;
    let frames = training_frames(train, cfg);
    let feats = train
        .iter()
        .map(|u| u.features.fit_length(frames))
        .collect::<Result<Vec<_>>>()?;
    let mut sampler = BatchSampler::new(train, cfg.phrases_per_batch, cfg.utterances_per_phrase, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5452_4950_4c45_5421);
    let mut adam = Adam::new(cfg.adam, model.params().tensors());
    let mut log = TrainLog {
        frames,
        ..TrainLog::default()
    };

    for step in 1..=cfg.steps {
        let batch = sampler.sample();
        let (loss, mut grads) = gradients(model, &feats, &batch, cfg, &mut rng)
            .map_err(|e| match e {
                Error::NonFinite { op } => Error::Domain {
                    module: "train",
                    detail: format!("non-finite value in {op} at step {step}; aborting"),
                },
                other => other,
            })?;
        let grad_norm = clip_grad_norm(&mut grads, cfg.clip_norm);
        adam.step(model.params_mut().tensors_mut(), &grads);
        let rec = StepRecord { step, loss, grad_norm };
        observer(TrainEvent::Step(rec));
        log.steps.push(rec);
        let periodic = cfg.eval_every > 0 && step % cfg.eval_every == 0;
        if (periodic || step == cfg.steps) && run_eval(model, held_out, cfg, step, &mut log, observer)? {
            break;
        }
    }
    Ok(log)
}
