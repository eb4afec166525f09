use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::{aggregate, phrase_metrics, score_phrase, AggregateMetrics, PhraseMetrics, ScoreSet};
use crate::dataset::{make_eval_split, EvalSplit, Utterance, DEFAULT_ENROLLMENT_SIZE};
use crate::encoder::{Embedding, Model};
use crate::error::{Error, Result};
use crate::frontend::{add_noise, FeatureExtractor, FeatureSequence};
use crate::quant::QuantizedModel;

/// Anything that maps feature sequences to embeddings.
pub trait Embedder {
    fn embed_batch(&self, feats: &[&FeatureSequence]) -> Result<Vec<Embedding>>;
}

impl Embedder for Model {
    fn embed_batch(&self, feats: &[&FeatureSequence]) -> Result<Vec<Embedding>> {
        self.embed_many(feats)
    }
}

impl Embedder for QuantizedModel {
    fn embed_batch(&self, feats: &[&FeatureSequence]) -> Result<Vec<Embedding>> {
        self.dequantized()?.embed_many(feats)
    }
}

/// Additive white noise on test utterances, SNR uniform in `[min, max]` dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub min_snr_db: f64,
    pub max_snr_db: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            min_snr_db: 3.0,
            max_snr_db: 15.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub enrollment_size: usize,
    pub split_seed: u64,
    pub exact: bool,
    pub noise: Option<NoiseConfig>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            enrollment_size: DEFAULT_ENROLLMENT_SIZE,
            split_seed: 0,
            exact: false,
            noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: EvalSplit,
    pub scores: Vec<ScoreSet>,
    pub phrases: Vec<PhraseMetrics>,
    pub aggregate: AggregateMetrics,
}

fn noisy_features(u: &Utterance, snr: f64, seed: u64) -> Result<FeatureSequence> {
    match &u.audio {
        Some(clip) => {
            let noisy = add_noise(clip, snr, seed)?;
            FeatureExtractor::new(clip.sample_rate_hz(), u.features.frame_hop_ms())?.extract(&noisy)
        }
        None => add_noise(&u.features, snr, seed),
    }
}

/// Test features, noised when configured; one SNR and seed per utterance in
/// split order.
fn test_features(data: &[Utterance], split: &EvalSplit, noise: Option<NoiseConfig>) -> Result<Vec<FeatureSequence>> {
    let idx = split.all_test();
    match noise {
        None => Ok(idx.iter().map(|&i| data[i].features.clone()).collect()),
        Some(n) => {
            if !(n.min_snr_db.is_finite() && n.max_snr_db.is_finite() && n.min_snr_db <= n.max_snr_db) {
                return Err(Error::config("evalkit", "noise SNR range must be finite with min <= max"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
            idx.iter()
                .map(|&i| {
                    let snr = if n.min_snr_db == n.max_snr_db {
                        n.min_snr_db
                    } else {
                        rng.gen_range(n.min_snr_db..=n.max_snr_db)
                    };
                    noisy_features(&data[i], snr, rng.gen())
                })
                .collect()
        }
    }
}

pub fn mean_embedding(embs: &[&[f64]]) -> Result<Embedding> {
    let first = embs.first().ok_or_else(|| Error::domain("evalkit", "no embeddings to average"))?;
    let mut c = vec![0.0; first.len()];
    for e in embs {
        if e.len() != c.len() {
            return Err(Error::dim("evalkit", "embeddings differ in length"));
        }
        for (ck, v) in c.iter_mut().zip(e.iter()) {
            *ck += v;
        }
    }
    let n = embs.len() as f64;
    Ok(c.into_iter().map(|v| v / n).collect())
}

/// Enroll K utterances per phrase, score every test utterance against every
/// centroid, and compute per-phrase and aggregate metrics.
pub fn evaluate(model: &dyn Embedder, data: &[Utterance], opts: &EvalOptions) -> Result<EvalReport> {
    let split = make_eval_split(data, opts.enrollment_size, opts.split_seed)?;
    if split.phrases.len() < 2 {
        return Err(Error::domain("evalkit", "evaluation needs at least two phrases"));
    }
    let tests = test_features(data, &split, opts.noise)?;
    let enroll_idx: Vec<usize> = split.phrases.iter().flat_map(|p| p.enrollment.iter().copied()).collect();
    let mut feats: Vec<&FeatureSequence> = enroll_idx.iter().map(|&i| &data[i].features).collect();
    feats.extend(tests.iter());
    let embs = model.embed_batch(&feats)?;
    let (enroll_embs, test_embs) = embs.split_at(enroll_idx.len());

    let labelled: Vec<(&str, &[f64])> = split
        .all_test()
        .iter()
        .zip(test_embs)
        .map(|(&i, e)| (data[i].phrase.as_str(), e.as_slice()))
        .collect();

    let mut scores = Vec::with_capacity(split.phrases.len());
    let mut offset = 0;
    for p in &split.phrases {
        let own: Vec<&[f64]> = enroll_embs[offset..offset + p.enrollment.len()]
            .iter()
            .map(Vec::as_slice)
            .collect();
        offset += p.enrollment.len();
        let centroid = mean_embedding(&own)?;
        scores.push(score_phrase(&p.phrase, &centroid, &labelled)?);
    }
    let phrases: Vec<PhraseMetrics> = scores.iter().map(|s| phrase_metrics(s, opts.exact)).collect();
    let aggregate = aggregate(&phrases)?;
    Ok(EvalReport {
        split,
        scores,
        phrases,
        aggregate,
    })
}
