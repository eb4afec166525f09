//! Audio front end: log-mel features, WAV and feature-file IO, additive
//! noise and a synthetic feature generator.

mod features;
mod kwsf;
mod noise;
mod synth;
mod wav;

pub use features::{
    extract_features, AudioClip, FeatureExtractor, FeatureSequence, MelFilterbank, DEFAULT_HOP_MS,
    ENERGY_FLOOR, FRAME_LENGTH_MS, LOG_FLOOR, MEL_HIGH_HZ, MEL_LOW_HZ, NUM_MEL_BINS,
    SAMPLE_RATE_HZ,
};
pub use kwsf::{decode_features, encode_features, read_features, write_features, KWSF_MAGIC, KWSF_VERSION};
pub use noise::{add_noise, AddNoise};
pub use synth::{synth_dataset, SynthDataset, SynthSpec, SynthUtterance};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};
