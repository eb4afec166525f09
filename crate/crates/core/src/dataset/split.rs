use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Utterance;
use crate::error::{Error, Result};

pub const DEFAULT_ENROLLMENT_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseSplit {
    pub phrase: String,
    pub enrollment: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-phrase enrollment/test partition of a dataset, phrases in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSplit {
    pub phrases: Vec<PhraseSplit>,
    pub seed: u64,
}

impl EvalSplit {
    /// Every test index across phrases, in phrase order.
    pub fn all_test(&self) -> Vec<usize> {
        self.phrases.iter().flat_map(|p| p.test.iter().copied()).collect()
    }
}

/// Randomly enrolls `k` utterances per phrase; the rest become test utterances.
pub fn make_eval_split(data: &[Utterance], k: usize, seed: u64) -> Result<EvalSplit> {
    if k == 0 {
        return Err(Error::usage("dataset", "enrollment size must be at least 1"));
    }
    let mut by_phrase: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in data.iter().enumerate() {
        by_phrase.entry(u.phrase.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phrases = Vec::with_capacity(by_phrase.len());
    for (phrase, pool) in by_phrase {
        if pool.len() <= k {
            return Err(Error::Capacity(format!(
                "phrase '{phrase}' has {} utterances; enrolling {k} leaves no test utterances",
                pool.len()
            )));
        }
        let mut picked = sample(&mut rng, pool.len(), k).into_vec();
        picked.sort_unstable();
        let enrollment: Vec<usize> = picked.iter().map(|&i| pool[i]).collect();
        let test = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| picked.binary_search(i).is_err())
            .map(|(_, &u)| u)
            .collect();
        phrases.push(PhraseSplit {
            phrase: phrase.to_string(),
            enrollment,
            test,
        });
    }
    Ok(EvalSplit { phrases, seed })
}

/// Splits each phrase's utterances into training and held-out parts; the
/// held-out part takes `round(n · fraction)` utterances, at least one.
pub fn holdout_split(data: &[Utterance], fraction: f64, seed: u64) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::usage("dataset", format!("held-out fraction must be in (0, 1), got {fraction}")));
    }
    let mut by_phrase: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in data.iter().enumerate() {
        by_phrase.entry(u.phrase.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (phrase, pool) in by_phrase {
        let k = ((pool.len() as f64 * fraction).round() as usize).max(1);
        if k >= pool.len() {
            return Err(Error::Capacity(format!(
                "phrase '{phrase}' has {} utterances, too few to hold out {k}",
                pool.len()
            )));
        }
        let mut picked = sample(&mut rng, pool.len(), k).into_vec();
        picked.sort_unstable();
        for (j, &i) in pool.iter().enumerate() {
            if picked.binary_search(&j).is_ok() {
                held.push(data[i].clone());
            } else {
                train.push(data[i].clone());
            }
        }
    }
    Ok((train, held))
}
