//! Labeled utterances, manifests, training batches and evaluation splits.

mod batch;
mod manifest;
mod split;

pub use batch::{sample_batch, Batch, BatchSampler};
pub use manifest::{format_manifest, load_manifest, Manifest, ManifestEntry, SourceKind};
pub use split::{holdout_split, make_eval_split, EvalSplit, PhraseSplit, DEFAULT_ENROLLMENT_SIZE};

pub(crate) use batch::validate_batch_dims;

use crate::frontend::{AudioClip, FeatureSequence, SynthDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub phrase: String,
    pub speaker: String,
    pub features: FeatureSequence,
    /// Source waveform, kept when the utterance was loaded from WAV.
    pub audio: Option<AudioClip>,
}

pub fn phrase_label(i: usize) -> String {
    format!("phrase{i:02}")
}

pub fn speaker_label(i: usize) -> String {
    format!("spk{i}")
}

impl Utterance {
    pub fn from_features(id: &str, phrase: &str, speaker: &str, features: FeatureSequence) -> Self {
        Self {
            id: id.to_string(),
            phrase: phrase.to_string(),
            speaker: speaker.to_string(),
            features,
            audio: None,
        }
    }
}

impl SynthDataset {
    pub fn to_utterances(&self) -> Vec<Utterance> {
        self.utterances
            .iter()
            .map(|u| Utterance {
                id: format!("p{:02}_u{:03}", u.phrase, u.index),
                phrase: phrase_label(u.phrase),
                speaker: speaker_label(u.speaker),
                features: u.features.clone(),
                audio: None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
