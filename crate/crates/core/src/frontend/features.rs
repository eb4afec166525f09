use std::sync::Arc;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const NUM_MEL_BINS: usize = 40;
pub const FRAME_LENGTH_MS: u32 = 25;
pub const DEFAULT_HOP_MS: u32 = 10;
pub const MEL_LOW_HZ: f64 = 125.0;
pub const MEL_HIGH_HZ: f64 = 7500.0;
pub const ENERGY_FLOOR: f64 = 1e-6;
/// `ln(1e-6)`: the smallest value any feature entry can take.
pub const LOG_FLOOR: f64 = -13.815510557964274;

const FFT_SIZE: usize = 512;

/// Mono audio. Samples live in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::input("frontend", "audio clip is empty"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::input("frontend", "sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::input(
                "frontend",
                format!("sample {i} is outside [-1, 1]"),
            ));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// T×40 log-mel frames for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f64>,
    num_frames: usize,
    frame_hop_ms: u32,
}

impl FeatureSequence {
    pub fn new(data: Vec<f64>, frame_hop_ms: u32) -> Result<Self> {
        if data.is_empty() || data.len() % NUM_MEL_BINS != 0 {
            return Err(Error::dim(
                "frontend",
                format!(
                    "feature buffer of {} values is not a non-empty multiple of {NUM_MEL_BINS}",
                    data.len()
                ),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < LOG_FLOOR) {
            return Err(Error::input(
                "frontend",
                format!("feature value {i} is non-finite or below the log floor"),
            ));
        }
        Ok(Self {
            num_frames: data.len() / NUM_MEL_BINS,
            data,
            frame_hop_ms,
        })
    }

    pub fn from_frames(frames: &[Vec<f64>]) -> Result<Self> {
        if let Some(f) = frames.iter().find(|f| f.len() != NUM_MEL_BINS) {
            return Err(Error::dim(
                "frontend",
                format!("frame has {} values, expected {NUM_MEL_BINS}", f.len()),
            ));
        }
        Self::new(frames.concat(), DEFAULT_HOP_MS)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dim(&self) -> usize {
        NUM_MEL_BINS
    }

    pub fn frame_hop_ms(&self) -> u32 {
        self.frame_hop_ms
    }

    pub fn frame_length_ms(&self) -> u32 {
        FRAME_LENGTH_MS
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * NUM_MEL_BINS..(t + 1) * NUM_MEL_BINS]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(NUM_MEL_BINS)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Frames `start..end`.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.num_frames {
            return Err(Error::dim(
                "frontend",
                format!("window {start}..{end} of {} frames", self.num_frames),
            ));
        }
        Ok(Self {
            data: self.data[start * NUM_MEL_BINS..end * NUM_MEL_BINS].to_vec(),
            num_frames: end - start,
            frame_hop_ms: self.frame_hop_ms,
        })
    }

    /// Truncates or pads (with silence at the log floor) to exactly `frames` frames.
    pub fn fit_length(&self, frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::usage("frontend", "target length must be positive"));
        }
        let mut data = self.data.clone();
        data.resize(frames * NUM_MEL_BINS, LOG_FLOOR);
        Ok(Self {
            data,
            num_frames: frames,
            frame_hop_ms: self.frame_hop_ms,
        })
    }

    pub(crate) fn from_raw_unchecked(data: Vec<f64>, frame_hop_ms: u32) -> Self {
        Self {
            num_frames: data.len() / NUM_MEL_BINS,
            data,
            frame_hop_ms,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank applied to magnitude spectra.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `NUM_MEL_BINS` rows of `FFT_SIZE/2 + 1` weights.
    weights: Vec<Vec<f64>>,
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate_hz: u32) -> Self {
        let lo = hz_to_mel(MEL_LOW_HZ);
        let hi = hz_to_mel(MEL_HIGH_HZ);
        let edges_hz: Vec<f64> = (0..NUM_MEL_BINS + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (NUM_MEL_BINS + 1) as f64))
            .collect();
        let bins = FFT_SIZE / 2 + 1;
        let weights = (0..NUM_MEL_BINS)
            .map(|m| {
                let (l, c, r) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
                (0..bins)
                    .map(|k| {
                        let f = k as f64 * sample_rate_hz as f64 / FFT_SIZE as f64;
                        if f <= l || f >= r {
                            0.0
                        } else if f <= c {
                            (f - l) / (c - l)
                        } else {
                            (r - f) / (r - c)
                        }
                    })
                    .collect()
            })
            .collect();
        Self { weights, edges_hz }
    }

    pub fn center_frequencies(&self) -> &[f64] {
        &self.edges_hz[1..=NUM_MEL_BINS]
    }

    fn apply(&self, magnitude: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = w.iter().zip(magnitude).map(|(a, b)| a * b).sum();
        }
    }
}

/// Log-mel extractor with 25ms Hann frames.
pub struct FeatureExtractor {
    hop_ms: u32,
    sample_rate_hz: u32,
    filterbank: MelFilterbank,
    fft: Arc<dyn rustfft::Fft<f64>>,
    window: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(sample_rate_hz: u32, hop_ms: u32) -> Result<Self> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::input(
                "frontend",
                format!("sample rate {sample_rate_hz} Hz not supported (need {SAMPLE_RATE_HZ})"),
            ));
        }
        if hop_ms == 0 {
            return Err(Error::input("frontend", "hop must be positive"));
        }
        let frame_len = frame_len_samples(sample_rate_hz);
        let window = (0..frame_len)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / frame_len as f64).cos())
            .collect();
        Ok(Self {
            hop_ms,
            sample_rate_hz,
            filterbank: MelFilterbank::new(sample_rate_hz),
            fft: FftPlanner::new().plan_fft_forward(FFT_SIZE),
            window,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureSequence> {
        if clip.sample_rate_hz() != self.sample_rate_hz {
            return Err(Error::input(
                "frontend",
                format!("clip rate {} Hz vs extractor {} Hz", clip.sample_rate_hz(), self.sample_rate_hz),
            ));
        }
        let frame_len = self.window.len();
        let hop = (self.sample_rate_hz * self.hop_ms / 1000) as usize;
        let n = clip.samples().len();
        if n < frame_len {
            return Err(Error::input(
                "frontend",
                format!("clip of {n} samples is shorter than one {frame_len}-sample frame"),
            ));
        }
        let num_frames = 1 + (n - frame_len) / hop;
        let mut data = vec![0.0; num_frames * NUM_MEL_BINS];
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut mag = vec![0.0; FFT_SIZE / 2 + 1];
        for t in 0..num_frames {
            let frame = &clip.samples()[t * hop..t * hop + frame_len];
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < frame_len {
                    Complex::new(frame[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (m, b) in mag.iter_mut().zip(&buf) {
                *m = b.norm();
            }
            let out = &mut data[t * NUM_MEL_BINS..(t + 1) * NUM_MEL_BINS];
            self.filterbank.apply(&mag, out);
            out.iter_mut().for_each(|e| *e = e.max(ENERGY_FLOOR).ln());
        }
        Ok(FeatureSequence::from_raw_unchecked(data, self.hop_ms))
    }
}

fn frame_len_samples(sample_rate_hz: u32) -> usize {
    (sample_rate_hz * FRAME_LENGTH_MS / 1000) as usize
}

/// 25ms frames, 10ms hop, 40 log-mel bins over 125–7500 Hz.
pub fn extract_features(clip: &AudioClip) -> Result<FeatureSequence> {
    FeatureExtractor::new(clip.sample_rate_hz(), DEFAULT_HOP_MS)?.extract(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, amp: f64) -> AudioClip {
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
            .collect();
        AudioClip::new(s, 16000).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let f = extract_features(&sine(440.0, 16000, 0.5)).unwrap();
        assert_eq!(f.num_frames(), 98);
        assert_eq!(f.dim(), 40);
    }

    #[test]
    fn silence_hits_the_floor() {
        let clip = AudioClip::new(vec![0.0; 4000], 16000).unwrap();
        let f = extract_features(&clip).unwrap();
        assert!(f.data().iter().all(|v| *v == (1e-6f64).ln()));
        assert_eq!(LOG_FLOOR, (1e-6f64).ln());
    }

    #[test]
    fn short_clip_is_rejected() {
        let clip = AudioClip::new(vec![0.1; 399], 16000).unwrap();
        assert!(matches!(extract_features(&clip), Err(Error::Input { .. })));
    }

    #[test]
    fn other_rates_are_rejected() {
        let clip = AudioClip::new(vec![0.1; 8000], 8000).unwrap();
        assert!(extract_features(&clip).is_err());
    }

    #[test]
    fn pure_tone_peaks_in_bracketing_filter() {
        // Filter centres recomputed from the HTK mel formula.
        let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        let (lo, hi) = (mel(125.0), mel(7500.0));
        let centers: Vec<f64> = (1..=40).map(|i| inv(lo + (hi - lo) * i as f64 / 41.0)).collect();
        let below = centers.iter().rposition(|c| *c <= 1000.0).unwrap();
        assert!(centers[below + 1] > 1000.0);

        let f = extract_features(&sine(1000.0, 16000, 0.5)).unwrap();
        let argmaxes: Vec<usize> = f
            .frames()
            .map(|fr| {
                fr.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            })
            .collect();
        assert!(argmaxes.iter().all(|a| *a == argmaxes[0]));
        assert!(argmaxes[0] == below || argmaxes[0] == below + 1, "{argmaxes:?} vs {below}");
    }

    #[test]
    fn feature_constructor_enforces_invariants() {
        assert!(FeatureSequence::new(vec![0.0; 39], 10).is_err());
        assert!(FeatureSequence::new(vec![], 10).is_err());
        assert!(FeatureSequence::new(vec![-20.0; 40], 10).is_err());
        assert!(FeatureSequence::new(vec![0.0; 80], 10).is_ok());
    }

    #[test]
    fn fit_length_pads_with_floor() {
        let f = FeatureSequence::new(vec![1.0; 80], 10).unwrap();
        let p = f.fit_length(3).unwrap();
        assert_eq!(p.num_frames(), 3);
        assert!(p.frame(2).iter().all(|v| *v == LOG_FLOOR));
        assert_eq!(f.fit_length(1).unwrap().num_frames(), 1);
    }
}
