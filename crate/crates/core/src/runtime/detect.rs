use std::collections::VecDeque;
use std::fmt::Write;

use super::profile::{check_threshold, verify, EnrollmentProfile, ServingEncoder};
use crate::error::{Error, Result};
use crate::frontend::{AudioClip, FeatureExtractor, FeatureSequence, DEFAULT_HOP_MS, FRAME_LENGTH_MS, NUM_MEL_BINS};

pub const DEFAULT_WINDOW_FRAMES: usize = 98;
pub const DEFAULT_HOP_FRAMES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub threshold: f64,
    pub window_frames: usize,
    pub hop_frames: usize,
    /// After an acceptance, skip this many hops before scoring again. 0 disables.
    pub refractory_hops: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            window_frames: DEFAULT_WINDOW_FRAMES,
            hop_frames: DEFAULT_HOP_FRAMES,
            refractory_hops: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)?;
        if self.window_frames == 0 || self.hop_frames == 0 {
            return Err(Error::config("runtime", "window and hop must be at least one frame"));
        }
        Ok(())
    }
}

/// One accepted (window, profile) pair. Frames are `start_frame..end_frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvent {
    pub phrase: String,
    pub score: f64,
    pub start_frame: usize,
    pub end_frame: usize,
    pub threshold: f64,
}

/// Sliding-window detector over a live frame feed. Every window is embedded
/// from a fresh encoder state, so a window's score does not depend on what
/// came before it.
#[derive(Debug)]
pub struct StreamingDetector<'a> {
    encoder: &'a ServingEncoder,
    profiles: &'a [EnrollmentProfile],
    cfg: DetectorConfig,
    buffer: VecDeque<Vec<f64>>,
    seen: usize,
    frame_hop_ms: u32,
    skip_windows: usize,
}

impl<'a> StreamingDetector<'a> {
    /// Fails if any profile was enrolled with a different encoder.
    pub fn new(encoder: &'a ServingEncoder, profiles: &'a [EnrollmentProfile], cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        let d = encoder.model().embedding_dim();
        for p in profiles {
            // checks checksum and dims without scoring anything real
            verify(&vec![1.0; d], p, cfg.threshold, encoder.checksum())?;
        }
        Ok(Self {
            encoder,
            profiles,
            cfg,
            buffer: VecDeque::with_capacity(cfg.window_frames),
            seen: 0,
            frame_hop_ms: DEFAULT_HOP_MS,
            skip_windows: 0,
        })
    }

    pub fn with_frame_hop_ms(mut self, hop_ms: u32) -> Self {
        self.frame_hop_ms = hop_ms;
        self
    }

    pub fn frames_seen(&self) -> usize {
        self.seen
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.seen = 0;
        self.skip_windows = 0;
    }

    /// Consumes one frame; returns the events of the window it completes, if any.
    pub fn push_frame(&mut self, frame: &[f64]) -> Result<Vec<DetectionEvent>> {
        if frame.len() != NUM_MEL_BINS {
            return Err(Error::dim(
                "runtime",
                format!("frame has {} values, expected {NUM_MEL_BINS}", frame.len()),
            ));
        }
        let w = self.cfg.window_frames;
        if self.buffer.len() == w {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame.to_vec());
        self.seen += 1;
        if self.seen < w || (self.seen - w) % self.cfg.hop_frames != 0 {
            return Ok(Vec::new());
        }
        if self.skip_windows > 0 {
            self.skip_windows -= 1;
            return Ok(Vec::new());
        }
        let data: Vec<f64> = self.buffer.iter().flatten().copied().collect();
        let window = FeatureSequence::new(data, self.frame_hop_ms)?;
        let events = self.score_window(&window, self.seen - w)?;
        if !events.is_empty() {
            self.skip_windows = self.cfg.refractory_hops;
        }
        Ok(events)
    }

    fn score_window(&self, window: &FeatureSequence, start: usize) -> Result<Vec<DetectionEvent>> {
        let emb = self.encoder.embed(window)?;
        let mut events = Vec::new();
        for p in self.profiles {
            let (accepted, score) = verify(&emb, p, self.cfg.threshold, self.encoder.checksum())?;
            if accepted {
                events.push(DetectionEvent {
                    phrase: p.phrase.clone(),
                    score,
                    start_frame: start,
                    end_frame: start + window.num_frames(),
                    threshold: self.cfg.threshold,
                });
            }
        }
        Ok(events)
    }
}

/// Runs the detector over a whole feature sequence. Shorter than one window
/// gives no events.
pub fn stream_detect(
    encoder: &ServingEncoder,
    profiles: &[EnrollmentProfile],
    features: &FeatureSequence,
    cfg: &DetectorConfig,
) -> Result<Vec<DetectionEvent>> {
    let mut det = StreamingDetector::new(encoder, profiles, *cfg)?.with_frame_hop_ms(features.frame_hop_ms());
    let mut events = Vec::new();
    for frame in features.frames() {
        events.extend(det.push_frame(frame)?);
    }
    Ok(events)
}

/// Extracts features from `clip` and runs `stream_detect`.
pub fn stream_detect_audio(
    encoder: &ServingEncoder,
    profiles: &[EnrollmentProfile],
    clip: &AudioClip,
    cfg: &DetectorConfig,
) -> Result<Vec<DetectionEvent>> {
    cfg.validate()?;
    let fx = FeatureExtractor::new(clip.sample_rate_hz(), DEFAULT_HOP_MS)?;
    let frame_len = (clip.sample_rate_hz() * FRAME_LENGTH_MS / 1000) as usize;
    if clip.samples().len() < frame_len {
        return Ok(Vec::new());
    }
    let feats = fx.extract(clip)?;
    stream_detect(encoder, profiles, &feats, cfg)
}

/// `start_frame,end_frame,phrase,score`.
pub fn events_csv(events: &[DetectionEvent]) -> String {
    let mut out = String::from("start_frame,end_frame,phrase,score\n");
    for e in events {
        writeln!(out, "{},{},{},{:.6}", e.start_frame, e.end_frame, e.phrase, e.score).unwrap();
    }
    out
}
