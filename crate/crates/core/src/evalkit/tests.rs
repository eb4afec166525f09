use super::*;
use crate::dataset::Utterance;
use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::frontend::{synth_dataset, FeatureSequence, SynthSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn set(pos: &[f64], neg: &[f64]) -> ScoreSet {
    ScoreSet::new("p", pos.to_vec(), neg.to_vec()).unwrap()
}

fn random_set(seed: u64, n: usize) -> ScoreSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = (0..n).map(|_| rng.gen_range(-0.2..1.0)).collect();
    let neg = (0..n).map(|_| rng.gen_range(-1.0..0.8)).collect();
    ScoreSet::new("p", pos, neg).unwrap()
}

/// Per-threshold counting plus separately written AUC/EER rules.
fn oracle(s: &ScoreSet) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let mut far = Vec::new();
    let mut frr = Vec::new();
    for k in 0..=100 {
        let t = k as f64 / 100.0;
        let mut fa = 0;
        for v in s.negatives() {
            if *v >= t {
                fa += 1;
            }
        }
        let mut fr = 0;
        for v in s.positives() {
            if *v < t {
                fr += 1;
            }
        }
        far.push(fa as f64 / s.negatives().len() as f64);
        frr.push(fr as f64 / s.positives().len() as f64);
    }
    // FAR is non-increasing in k, so walking k downwards visits FAR ascending
    // and, within equal FAR, FRR descending.
    let mut pts: Vec<(f64, f64)> = (0..=100).rev().map(|k| (far[k], frr[k])).collect();
    if pts[0].0 != 0.0 {
        pts.insert(0, (0.0, frr[100]));
    }
    if pts.last().unwrap().0 != 1.0 {
        pts.push((1.0, 0.0));
    }
    let mut area = 0.0;
    for i in 1..pts.len() {
        area += (pts[i].0 - pts[i - 1].0) * (pts[i - 1].1 + pts[i].1) / 2.0;
    }
    let mut e = None;
    for k in 0..=100 {
        let d = far[k] - frr[k];
        if d == 0.0 {
            e = Some(far[k]);
            break;
        }
        if k < 100 {
            let d2 = far[k + 1] - frr[k + 1];
            if d > 0.0 && d2 < 0.0 {
                let a = d / (d - d2);
                let x = far[k] + a * (far[k + 1] - far[k]);
                let y = frr[k] + a * (frr[k + 1] - frr[k]);
                e = Some((x + y) / 2.0);
                break;
            }
        }
    }
    let e = e.unwrap_or_else(|| {
        let k = (0..=100).min_by(|a, b| (far[*a] - frr[*a]).abs().total_cmp(&(far[*b] - frr[*b]).abs())).unwrap();
        (far[k] + frr[k]) / 2.0
    });
    (far, frr, area, e)
}

#[test]
fn far_frr_examples() {
    let s = set(&[0.9, 0.8], &[0.3, 0.1]);
    assert_eq!(far_frr(&s, 0.5), (0.0, 0.0));
    assert_eq!(far_frr(&s, 0.85), (0.0, 0.5));
    assert_eq!(far_frr(&s, 0.0), (1.0, 0.0));
}

#[test]
fn score_set_validation() {
    assert!(ScoreSet::new("p", vec![], vec![0.1]).is_err());
    assert!(ScoreSet::new("p", vec![0.1], vec![1.5]).is_err());
    assert_eq!(ScoreSet::new("p", vec![1.0 + 1e-12], vec![0.0]).unwrap().positives(), &[1.0]);
}

#[test]
fn score_phrase_examples() {
    let c = [1.0, 0.0];
    let same: &[f64] = &[2.0, 0.0];
    let orth: &[f64] = &[0.0, 3.0];
    let s = score_phrase("a", &c, &[("a", same), ("b", orth)]).unwrap();
    assert!((s.positives()[0] - 1.0).abs() < 1e-12);
    assert_eq!(s.negatives(), &[0.0]);
    assert!(matches!(score_phrase("a", &c, &[]), Err(Error::Domain { .. })));
}

#[test]
fn sweep_matches_counting_oracle() {
    for seed in 0..50 {
        let s = random_set(seed, 1 + seed as usize % 40);
        let d = det_curve(&s);
        let (far, frr, a, e) = oracle(&s);
        assert_eq!(d.far(), far.as_slice());
        assert_eq!(d.frr(), frr.as_slice());
        assert_eq!(auc(&d), a);
        assert_eq!(eer(&d), e);
        for k in 0..d.len() {
            assert_eq!((d.far()[k], d.frr()[k]), far_frr(&s, d.thresholds()[k]));
        }
    }
}

#[test]
fn calibration_anchors() {
    let perfect = set(&[0.9, 0.7, 0.65], &[0.1, 0.3, -0.5]);
    let d = det_curve(&perfect);
    assert_eq!(auc(&d), 0.0);
    assert_eq!(eer(&d), 0.0);
    assert_eq!(eer(&det_curve(&set(&[0.6], &[0.4]))), 0.0);
    assert!(d.far().iter().zip(d.frr()).any(|(a, r)| *a == 0.0 && *r == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let v: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let w: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let d = det_curve(&set(&v, &w));
    assert!((auc(&d) - 0.5).abs() <= 0.02, "{}", auc(&d));
    assert!((eer(&d) - 0.5).abs() <= 0.02, "{}", eer(&d));

    // identical multisets: FRR = 1 − FAR everywhere
    let d = det_curve(&set(&v, &v));
    for k in 0..d.len() {
        assert!((d.frr()[k] - (1.0 - d.far()[k])).abs() < 1e-12);
    }
}

#[test]
fn sweep_rejects_degenerate_input() {
    assert!(ThresholdSweep::new(vec![0.5], vec![0.0], vec![0.0]).is_err());
    assert!(ThresholdSweep::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]).is_err());
}

#[test]
fn histogram_bins_follow_thresholds() {
    for k in 0..100 {
        let s = threshold(k);
        let h = histogram(&set(&[s], &[s]));
        assert_eq!(h.positives.bins[k], 1.0, "bin {k}");
    }
    let h = histogram(&set(&[-0.3, 1.0, 0.999, 0.555], &[0.2]));
    assert_eq!(h.positives.underflow, 0.25);
    assert_eq!(h.positives.overflow, 0.25);
    assert_eq!(h.positives.bins[99], 0.25);
    assert!((h.positives.total() - 1.0).abs() < 1e-9);
    assert!((h.negatives.total() - 1.0).abs() < 1e-9);
}

#[test]
fn shift_invariance_on_shifted_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pick = |rng: &mut ChaCha8Rng| rng.gen_range(0..48) as f64 / 64.0;
    let pos: Vec<f64> = (0..30).map(|_| pick(&mut rng)).collect();
    let neg: Vec<f64> = (0..30).map(|_| pick(&mut rng)).collect();
    let c = 0.25;
    let grid: Vec<f64> = (0..=60).map(|k| k as f64 / 64.0).collect();
    let a = sweep_at(&set(&pos, &neg), &grid).unwrap();
    let shifted: Vec<f64> = grid.iter().map(|t| t + c).collect();
    let sp: Vec<f64> = pos.iter().map(|v| v + c).collect();
    let sn: Vec<f64> = neg.iter().map(|v| v + c).collect();
    let b = sweep_at(&set(&sp, &sn), &shifted).unwrap();
    assert_eq!(a.far(), b.far());
    assert_eq!(a.frr(), b.frr());
}

#[test]
fn exact_sweep_agrees_on_grid_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = |n: usize, lo: usize, hi: usize| -> Vec<f64> {
        (0..n).map(|_| threshold(rng.gen_range(lo..hi))).collect()
    };
    let s = set(&g(25, 30, 100), &g(25, 0, 70));
    let (grid, exact) = (det_curve(&s), exact_sweep(&s));
    assert!((auc(&grid) - auc(&exact)).abs() < 1e-12);
    assert!((eer(&grid) - eer(&exact)).abs() < 1e-12);
    assert_eq!(exact.far()[0], 1.0);
    assert_eq!(*exact.frr().last().unwrap(), 1.0);
}

fn metrics_with(auc: f64, s: &ScoreSet) -> PhraseMetrics {
    let mut m = phrase_metrics(s, false);
    m.auc = auc;
    m
}

#[test]
fn aggregate_examples() {
    let s = random_set(1, 20);
    let one = phrase_metrics(&s, false);
    let agg = aggregate(std::slice::from_ref(&one)).unwrap();
    assert_eq!((agg.auc, agg.eer), (one.auc, one.eer));
    assert_eq!(agg.det, one.det);

    let two = aggregate(&[metrics_with(0.2, &s), metrics_with(0.4, &s)]).unwrap();
    assert!((two.auc - 0.3).abs() < 1e-15);
    assert_eq!(two.det, one.det);

    let mut odd = one.clone();
    odd.det = exact_sweep(&s);
    assert!(matches!(aggregate(&[one, odd]), Err(Error::Usage { .. })));
    assert!(matches!(aggregate(&[]), Err(Error::Usage { .. })));
}

proptest! {
    #[test]
    fn sweeps_are_monotone(pos in prop::collection::vec(-1.0f64..=1.0, 1..50),
                           neg in prop::collection::vec(-1.0f64..=1.0, 1..50)) {
        let s = set(&pos, &neg);
        let d = det_curve(&s);
        prop_assert!(d.far().windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(d.frr().windows(2).all(|w| w[1] >= w[0]));
        let a = auc(&d);
        let e = eer(&d);
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&e));
        let h = histogram(&s);
        prop_assert!((h.positives.total() - 1.0).abs() < 1e-9);
    }
}

/// Frame average, enough to separate synthetic prototypes.
struct MeanFrames;

impl Embedder for MeanFrames {
    fn embed_batch(&self, feats: &[&FeatureSequence]) -> Result<Vec<Embedding>> {
        Ok(feats
            .iter()
            .map(|f| {
                let mut m = vec![0.0; f.dim()];
                for fr in f.frames() {
                    for (a, b) in m.iter_mut().zip(fr) {
                        *a += b / f.num_frames() as f64;
                    }
                }
                m
            })
            .collect())
    }
}

fn small_data() -> Vec<Utterance> {
    synth_dataset(&SynthSpec {
        num_phrases: 3,
        utterances_per_phrase: 14,
        ..SynthSpec::default()
    })
    .unwrap()
    .to_utterances()
}

#[test]
fn protocol_end_to_end() {
    let data = small_data();
    let opts = EvalOptions::default();
    let r = evaluate(&MeanFrames, &data, &opts).unwrap();
    assert_eq!(r.phrases.len(), 3);
    for s in &r.scores {
        assert_eq!(s.positives().len(), 4);
        assert_eq!(s.negatives().len(), 8);
    }
    assert_eq!(r, evaluate(&MeanFrames, &data, &opts).unwrap());

    let noisy = EvalOptions {
        noise: Some(NoiseConfig::default()),
        ..opts
    };
    let n = evaluate(&MeanFrames, &data, &noisy).unwrap();
    assert_eq!(n.split, r.split);
    assert_ne!(n.scores, r.scores);
    assert_eq!(n, evaluate(&MeanFrames, &data, &noisy).unwrap());

    let det = det_csv(&r.phrases, &r.aggregate);
    assert!(det.starts_with("phrase,threshold,far,frr\n"));
    assert_eq!(det.lines().count(), 1 + 4 * 101);
    let m = metrics_csv(&r.phrases, &r.aggregate);
    assert_eq!(m.lines().count(), 5);
    assert!(m.lines().last().unwrap().starts_with("aggregate,"));
    let hists: Vec<&Histogram> = r.phrases.iter().map(|p| &p.histogram).collect();
    assert_eq!(histogram_csv(&hists).lines().count(), 1 + 3 * 102);
    let svg = det_svg("DET", &[("aggregate", &r.aggregate.det)]);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(histogram_svg(hists[0]).contains("<rect"));
}
