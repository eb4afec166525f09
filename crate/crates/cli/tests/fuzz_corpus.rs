//! The checked-in fuzz seeds must stay valid inputs, apart from the ones named
//! as rejects.
use std::path::{Path, PathBuf};

use kws_cli::config::{Command, RunConfig};
use kws_core::checkpoint::{model_from_container, Container};
use kws_core::dataset::Manifest;
use kws_core::frontend::{decode_features, decode_wav};
use kws_core::quant::QuantizedModel;
use kws_core::runtime::{EnrollmentProfile, ProfileIndex};

fn seed(target: &str, name: &str) -> Vec<u8> {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "../../fuzz/corpus", target, name].iter().collect();
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn text(target: &str, name: &str) -> String {
    String::from_utf8(seed(target, name)).unwrap()
}

#[test]
fn seeds_decode() {
    assert_eq!(decode_wav(&seed("decode_wav", "seed_pcm16")).unwrap().sample_rate_hz(), 16000);
    assert!(decode_wav(&seed("decode_wav", "seed_reject_pcm8")).is_err());
    assert_eq!(decode_features(&seed("decode_features", "seed_utterance")).unwrap().num_frames(), 6);
    assert!(decode_features(&seed("decode_features", "seed_reject_truncated")).is_err());

    let m = Manifest::parse(&text("parse_manifest", "seed_manifest"), Path::new("."), "seed").unwrap();
    assert_eq!(m.entries.len(), 6);

    let c = Container::decode(&seed("decode_container", "seed_model")).unwrap();
    model_from_container(&c).unwrap();
    let c = Container::decode(&seed("decode_container", "seed_quantized")).unwrap();
    QuantizedModel::from_container(&c).unwrap();
    let c = Container::decode(&seed("decode_container", "seed_profile")).unwrap();
    EnrollmentProfile::from_container(&c).unwrap();

    RunConfig::build(Command::Train, Some((&text("parse_config", "seed_train"), "seed")), &[]).unwrap();
    RunConfig::build(Command::Detect, Some((&text("parse_config", "seed_detect"), "seed")), &[]).unwrap();

    assert_eq!(ProfileIndex::parse(&text("parse_profile_index", "seed_index"), "seed").unwrap().entries.len(), 2);
    assert!(ProfileIndex::parse(&text("parse_profile_index", "seed_reject_duplicate"), "seed").is_err());
}
