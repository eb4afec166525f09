use crate::error::{Error, Result};
use crate::ndmath::cosine_matrix;
use crate::ndmath::{Tensor, COSINE_EPS};

pub const NUM_BINS: usize = 100;
pub const GRID_STEPS: usize = 100;

/// Cosine scores can overshoot ±1 by rounding; anything within this is clamped.
const SCORE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    phrase: String,
    positives: Vec<f64>,
    negatives: Vec<f64>,
}

fn clean_scores(v: Vec<f64>, which: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::domain("evalkit", format!("score set needs at least one {which} score")));
    }
    v.into_iter()
        .map(|s| {
            if s.is_finite() && s.abs() <= 1.0 + SCORE_SLACK {
                Ok(s.clamp(-1.0, 1.0))
            } else {
                Err(Error::domain("evalkit", format!("{which} score {s} outside [-1, 1]")))
            }
        })
        .collect()
}

impl ScoreSet {
    pub fn new(phrase: impl Into<String>, positives: Vec<f64>, negatives: Vec<f64>) -> Result<Self> {
        Ok(Self {
            phrase: phrase.into(),
            positives: clean_scores(positives, "positive")?,
            negatives: clean_scores(negatives, "negative")?,
        })
    }

    pub fn phrase(&self) -> &str {
        &self.phrase
    }

    pub fn positives(&self) -> &[f64] {
        &self.positives
    }

    pub fn negatives(&self) -> &[f64] {
        &self.negatives
    }
}

/// Scores a centroid against labelled test embeddings.
pub fn score_phrase(phrase: &str, centroid: &[f64], tests: &[(&str, &[f64])]) -> Result<ScoreSet> {
    if tests.is_empty() {
        return Err(Error::domain("evalkit", "empty test set"));
    }
    let d = centroid.len();
    let mut rows = Vec::with_capacity(tests.len() * d);
    for (_, e) in tests {
        if e.len() != d {
            return Err(Error::dim("evalkit", format!("test embedding of length {} vs centroid {d}", e.len())));
        }
        rows.extend_from_slice(e);
    }
    let c = Tensor::matrix(1, d, centroid.to_vec())?;
    let t = Tensor::matrix(tests.len(), d, rows)?;
    let s = cosine_matrix(&c, &t, COSINE_EPS)?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for ((label, _), v) in tests.iter().zip(s.data()) {
        if *label == phrase {
            pos.push(*v)
        } else {
            neg.push(*v)
        }
    }
    ScoreSet::new(phrase, pos, neg)
}

/// Bin of `s` on the 0.01 grid so that `k/100 ≤ s < (k+1)/100` holds exactly
/// for the f64 thresholds used by the sweep.
pub(crate) fn grid_bin(s: f64) -> Option<usize> {
    if !(0.0..1.0).contains(&s) {
        return None;
    }
    let mut k = ((s * NUM_BINS as f64).floor() as usize).min(NUM_BINS - 1);
    if threshold(k) > s {
        k -= 1;
    } else if k + 1 < NUM_BINS && threshold(k + 1) <= s {
        k += 1;
    }
    Some(k)
}

/// Probability mass over underflow (< 0), 100 bins on [0, 1), and overflow (= 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub underflow: f64,
    pub bins: Vec<f64>,
    pub overflow: f64,
}

impl Distribution {
    fn of(scores: &[f64]) -> Self {
        let mut d = Distribution {
            underflow: 0.0,
            bins: vec![0.0; NUM_BINS],
            overflow: 0.0,
        };
        let w = 1.0 / scores.len() as f64;
        for &s in scores {
            match grid_bin(s) {
                Some(k) => d.bins[k] += w,
                None if s < 0.0 => d.underflow += w,
                None => d.overflow += w,
            }
        }
        d
    }

    pub fn total(&self) -> f64 {
        self.underflow + self.overflow + self.bins.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub phrase: String,
    pub positives: Distribution,
    pub negatives: Distribution,
}

pub fn histogram(scores: &ScoreSet) -> Histogram {
    Histogram {
        phrase: scores.phrase.clone(),
        positives: Distribution::of(&scores.positives),
        negatives: Distribution::of(&scores.negatives),
    }
}

pub fn threshold(k: usize) -> f64 {
    k as f64 / GRID_STEPS as f64
}

/// The fixed grid 0, 0.01, …, 1.
pub fn grid_thresholds() -> Vec<f64> {
    (0..=GRID_STEPS).map(threshold).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    thresholds: Vec<f64>,
    far: Vec<f64>,
    frr: Vec<f64>,
}

impl ThresholdSweep {
    pub fn new(thresholds: Vec<f64>, far: Vec<f64>, frr: Vec<f64>) -> Result<Self> {
        if thresholds.len() < 2 || far.len() != thresholds.len() || frr.len() != thresholds.len() {
            return Err(Error::domain(
                "evalkit",
                "a sweep needs at least two thresholds with one FAR and FRR each",
            ));
        }
        if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("evalkit", "thresholds must be strictly increasing"));
        }
        let unit = |v: &f64| (0.0..=1.0).contains(v);
        if !far.iter().all(unit) || !frr.iter().all(unit) {
            return Err(Error::domain("evalkit", "FAR and FRR must lie in [0, 1]"));
        }
        if far.windows(2).any(|w| w[1] > w[0]) || frr.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("evalkit", "FAR must not increase and FRR must not decrease"));
        }
        Ok(Self { thresholds, far, frr })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn far(&self) -> &[f64] {
        &self.far
    }

    pub fn frr(&self) -> &[f64] {
        &self.frr
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

/// Accept iff score ≥ t.
pub fn far_frr(scores: &ScoreSet, t: f64) -> (f64, f64) {
    let fa = scores.negatives.iter().filter(|s| **s >= t).count();
    let fr = scores.positives.iter().filter(|s| **s < t).count();
    (
        fa as f64 / scores.negatives.len() as f64,
        fr as f64 / scores.positives.len() as f64,
    )
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn sweep_at(scores: &ScoreSet, thresholds: &[f64]) -> Result<ThresholdSweep> {
    let pos = sorted(&scores.positives);
    let neg = sorted(&scores.negatives);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut far = Vec::with_capacity(thresholds.len());
    let mut frr = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        far.push((neg.len() - neg.partition_point(|s| *s < t)) as f64 / nn);
        frr.push(pos.partition_point(|s| *s < t) as f64 / np);
    }
    ThresholdSweep::new(thresholds.to_vec(), far, frr)
}

/// FAR/FRR on the fixed 0.01 grid.
pub fn det_curve(scores: &ScoreSet) -> ThresholdSweep {
    sweep_at(scores, &grid_thresholds()).expect("grid sweep is always valid")
}

/// Every distinct score as a threshold, bracketed by one below all scores
/// and one above.
pub fn exact_sweep(scores: &ScoreSet) -> ThresholdSweep {
    let mut t = sorted(&[scores.positives.as_slice(), scores.negatives.as_slice()].concat());
    t.dedup();
    let lo = t[0].next_down();
    let hi = t[t.len() - 1].next_up();
    let mut all = Vec::with_capacity(t.len() + 2);
    all.push(lo);
    all.extend(t);
    all.push(hi);
    sweep_at(scores, &all).expect("exact sweep is always valid")
}

/// Area under FRR(FAR) by trapezoids; lower is better.
pub fn auc(sweep: &ThresholdSweep) -> f64 {
    let mut pts: Vec<(f64, f64)> = sweep.far.iter().copied().zip(sweep.frr.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    if pts[0].0 != 0.0 {
        pts.insert(0, (0.0, sweep.frr[sweep.len() - 1]));
    }
    if pts[pts.len() - 1].0 != 1.0 {
        pts.push((1.0, 0.0));
    }
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

/// FAR = FRR crossing, linearly interpolated between adjacent thresholds.
/// With no crossing on the sweep, the point closest to one is averaged.
pub fn eer(sweep: &ThresholdSweep) -> f64 {
    let d: Vec<f64> = sweep.far.iter().zip(&sweep.frr).map(|(a, r)| a - r).collect();
    for k in 0..d.len() {
        if d[k] == 0.0 {
            return sweep.far[k];
        }
        if k + 1 < d.len() && d[k] > 0.0 && d[k + 1] < 0.0 {
            let a = d[k] / (d[k] - d[k + 1]);
            let far = sweep.far[k] + a * (sweep.far[k + 1] - sweep.far[k]);
            let frr = sweep.frr[k] + a * (sweep.frr[k + 1] - sweep.frr[k]);
            return (far + frr) / 2.0;
        }
    }
    let k = (0..d.len()).min_by(|a, b| d[*a].abs().total_cmp(&d[*b].abs())).unwrap();
    (sweep.far[k] + sweep.frr[k]) / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseMetrics {
    pub phrase: String,
    pub auc: f64,
    pub eer: f64,
    /// Always on the fixed grid, for plotting and aggregation.
    pub det: ThresholdSweep,
    pub histogram: Histogram,
}

/// Per-phrase metrics. `exact` scores AUC/EER on every distinct score
/// instead of the 0.01 grid.
pub fn phrase_metrics(scores: &ScoreSet, exact: bool) -> PhraseMetrics {
    let det = det_curve(scores);
    let (a, e) = if exact {
        let s = exact_sweep(scores);
        (auc(&s), eer(&s))
    } else {
        (auc(&det), eer(&det))
    };
    PhraseMetrics {
        phrase: scores.phrase.clone(),
        auc: a,
        eer: e,
        det,
        histogram: histogram(scores),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub auc: f64,
    pub eer: f64,
    pub det: ThresholdSweep,
    pub num_phrases: usize,
}

pub fn aggregate(metrics: &[PhraseMetrics]) -> Result<AggregateMetrics> {
    let first = metrics
        .first()
        .ok_or_else(|| Error::usage("evalkit", "aggregate needs at least one phrase"))?;
    let n = metrics.len() as f64;
    let grid = first.det.thresholds();
    let mut far = vec![0.0; grid.len()];
    let mut frr = vec![0.0; grid.len()];
    for m in metrics {
        if m.det.thresholds() != grid {
            return Err(Error::usage("evalkit", format!("phrase '{}' uses a different threshold grid", m.phrase)));
        }
        for k in 0..grid.len() {
            far[k] += m.det.far[k];
            frr[k] += m.det.frr[k];
        }
    }
    // Means of monotone arrays stay monotone; clamp guards rounding above 1.
    let det = ThresholdSweep {
        thresholds: grid.to_vec(),
        far: far.iter().map(|v| (v / n).min(1.0)).collect(),
        frr: frr.iter().map(|v| (v / n).min(1.0)).collect(),
    };
    Ok(AggregateMetrics {
        auc: metrics.iter().map(|m| m.auc).sum::<f64>() / n,
        eer: metrics.iter().map(|m| m.eer).sum::<f64>() / n,
        det,
        num_phrases: metrics.len(),
    })
}
