use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Utterance;
use crate::error::{Error, Result};

/// X phrases × Y utterances, stored row-major as indices into the dataset.
///
/// Role convention: the equations number utterances `j = 1..Y` and enroll the
/// odd `j`. In 0-based storage that is every even column (`0, 2, 4, …`); the
/// odd columns (`1, 3, …`) are the held-out test utterances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    phrases: Vec<String>,
    utterances_per_phrase: usize,
    indices: Vec<usize>,
}

impl Batch {
    pub fn new(phrases: Vec<String>, utterances_per_phrase: usize, indices: Vec<usize>) -> Result<Self> {
        validate_batch_dims(phrases.len(), utterances_per_phrase)?;
        if indices.len() != phrases.len() * utterances_per_phrase {
            return Err(Error::dim(
                "dataset",
                format!("{} indices for a {}x{utterances_per_phrase} batch", indices.len(), phrases.len()),
            ));
        }
        let mut sorted = phrases.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != phrases.len() {
            return Err(Error::domain("dataset", "batch phrases must be distinct"));
        }
        Ok(Self {
            phrases,
            utterances_per_phrase,
            indices,
        })
    }

    pub fn num_phrases(&self) -> usize {
        self.phrases.len()
    }

    pub fn utterances_per_phrase(&self) -> usize {
        self.utterances_per_phrase
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    /// Dataset indices, row-major (phrase-major).
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn get(&self, phrase: usize, slot: usize) -> usize {
        self.indices[phrase * self.utterances_per_phrase + slot]
    }

    /// True for enrollment slots (0-based even, i.e. 1-based odd `j`).
    pub fn is_enrollment_slot(slot: usize) -> bool {
        slot % 2 == 0
    }

    pub fn enrollment_indices(&self, phrase: usize) -> Vec<usize> {
        (0..self.utterances_per_phrase)
            .filter(|s| Self::is_enrollment_slot(*s))
            .map(|s| self.get(phrase, s))
            .collect()
    }

    pub fn test_indices(&self, phrase: usize) -> Vec<usize> {
        (0..self.utterances_per_phrase)
            .filter(|s| !Self::is_enrollment_slot(*s))
            .map(|s| self.get(phrase, s))
            .collect()
    }
}

pub(crate) fn validate_batch_dims(x: usize, y: usize) -> Result<()> {
    if x < 2 {
        return Err(Error::domain("dataset", format!("batch needs at least 2 phrases, got {x}")));
    }
    if y < 2 || y % 2 != 0 {
        return Err(Error::domain(
            "dataset",
            format!("utterances per phrase must be even and >= 2, got {y}"),
        ));
    }
    Ok(())
}

/// Seeded sampler over a fixed dataset. Owns its RNG; not shared across threads.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    eligible: Vec<(String, Vec<usize>)>,
    x: usize,
    y: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(data: &[Utterance], x: usize, y: usize, seed: u64) -> Result<Self> {
        validate_batch_dims(x, y)?;
        let mut by_phrase: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, u) in data.iter().enumerate() {
            by_phrase.entry(u.phrase.as_str()).or_default().push(i);
        }
        let total = by_phrase.len();
        let eligible: Vec<(String, Vec<usize>)> = by_phrase
            .into_iter()
            .filter(|(_, v)| v.len() >= y)
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        if eligible.len() < x {
            return Err(Error::Capacity(format!(
                "need {x} phrases with at least {y} utterances each, found {} (of {total} phrases)",
                eligible.len()
            )));
        }
        Ok(Self {
            eligible,
            x,
            y,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Uniform without replacement: X phrases, then Y utterances within each.
    pub fn sample(&mut self) -> Batch {
        let chosen = sample(&mut self.rng, self.eligible.len(), self.x).into_vec();
        let mut phrases = Vec::with_capacity(self.x);
        let mut indices = Vec::with_capacity(self.x * self.y);
        for p in chosen {
            let (label, pool) = &self.eligible[p];
            phrases.push(label.clone());
            for u in sample(&mut self.rng, pool.len(), self.y) {
                indices.push(pool[u]);
            }
        }
        Batch {
            phrases,
            utterances_per_phrase: self.y,
            indices,
        }
    }
}

/// One-shot batch draw.
pub fn sample_batch(data: &[Utterance], x: usize, y: usize, seed: u64) -> Result<Batch> {
    Ok(BatchSampler::new(data, x, y, seed)?.sample())
}
