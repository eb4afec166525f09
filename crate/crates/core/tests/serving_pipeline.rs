//! Synthetic data through training, checkpointing, quantization and
//! streaming detection, using only the public API.
use kws_core::checkpoint::{load_model, save_model};
use kws_core::dataset::holdout_split;
use kws_core::encoder::{init_params, ArchConfig, LstmConfig};
use kws_core::evalkit::{evaluate, EvalOptions};
use kws_core::frontend::{synth_dataset, SynthSpec};
use kws_core::quant::{quantize_model, QuantizedModel};
use kws_core::runtime::{enroll, stream_detect, DetectorConfig, ProfileStore, ServingEncoder};
use kws_core::train::{train, TrainConfig};

#[test]
fn train_save_quantize_enroll_detect() {
    let spec = SynthSpec { num_phrases: 4, utterances_per_phrase: 24, ..SynthSpec::default() };
    let data = synth_dataset(&spec).unwrap().to_utterances();
    let (tr, ho) = holdout_split(&data, 0.5, 0).unwrap();
    let arch = ArchConfig::Lstm(LstmConfig { hidden_dim: 16, layers: 1, embedding_dim: 16, ..LstmConfig::default() });
    let mut model = init_params(&arch, 0).unwrap();
    let cfg = TrainConfig { steps: 40, phrases_per_batch: 4, eval_every: 20, ..TrainConfig::default() };
    let log = train(&mut model, &tr, Some(&ho), &cfg, &mut |_| {}).unwrap();
    assert_eq!(log.steps.len(), 40);
    assert_eq!(log.evals.iter().map(|e| e.step).collect::<Vec<_>>(), [20, 40]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.kwsm");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, model);

    let opts = EvalOptions::default();
    let float = evaluate(&loaded, &ho, &opts).unwrap();
    assert_eq!(float.aggregate.auc, log.final_auc().unwrap());
    let q = quantize_model(&loaded).unwrap();
    let qpath = dir.path().join("q.kwsm");
    q.save(&qpath).unwrap();
    assert_eq!(QuantizedModel::load(&qpath).unwrap(), q);
    let quant = evaluate(&q, &ho, &opts).unwrap();
    assert!((quant.aggregate.auc - float.aggregate.auc).abs() < 0.05);

    let enc = ServingEncoder::load(&qpath).unwrap();
    let mut store = ProfileStore::open(&dir.path().join("profiles")).unwrap();
    for p in &float.split.phrases {
        let feats: Vec<_> = p.enrollment.iter().map(|&i| &ho[i].features).collect();
        store.insert(&enroll(&enc, &feats, &p.phrase, 0).unwrap()).unwrap();
    }
    let profiles = ProfileStore::open(&dir.path().join("profiles")).unwrap().load_all().unwrap();
    assert_eq!(profiles.len(), 4);

    let clip = &ho[float.split.phrases[1].test[0]].features;
    let w = clip.num_frames();
    let cfg = DetectorConfig { threshold: 0.0, window_frames: w, hop_frames: 1, ..DetectorConfig::default() };
    let events = stream_detect(&enc, &profiles, clip, &cfg).unwrap();
    let best = events.iter().max_by(|a, b| a.score.total_cmp(&b.score)).unwrap();
    assert_eq!((best.start_frame, best.end_frame), (0, w));
}
