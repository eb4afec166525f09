//! Serving path: enrollment profiles, one-shot verification and
//! sliding-window detection over a frame stream.

mod detect;
mod profile;

pub use detect::{
    events_csv, stream_detect, stream_detect_audio, DetectionEvent, DetectorConfig, StreamingDetector,
    DEFAULT_HOP_FRAMES, DEFAULT_WINDOW_FRAMES,
};
pub use profile::{
    cosine_score, enroll, verify, EnrollmentProfile, ProfileIndex, ProfileStore, ServingEncoder, PROFILE_INDEX_FILE,
};
