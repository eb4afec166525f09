use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ge2e::BatchEmbeddings;
use crate::dataset::validate_batch_dims;
use crate::error::{Error, Result};
use crate::ndmath::{Graph, Var, COSINE_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletConfig {
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { margin: 0.5 }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::config("loss", "triplet margin must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Row indices (phrase-major, `phrase·Y + slot`) of one triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// One triplet per phrase: anchor and a distinct positive from the phrase,
/// negative from a uniformly chosen other phrase.
pub fn sample_triplets(x: usize, y: usize, seed: u64) -> Result<Vec<Triplet>> {
    if x < 2 {
        return Err(Error::domain("loss", "triplet loss requires ≥ 2 phrases per batch"));
    }
    validate_batch_dims(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..x)
        .map(|i| {
            let a = rng.gen_range(0..y);
            let mut p = rng.gen_range(0..y - 1);
            if p >= a {
                p += 1;
            }
            let mut k = rng.gen_range(0..x - 1);
            if k >= i {
                k += 1;
            }
            let n = rng.gen_range(0..y);
            Triplet {
                anchor: i * y + a,
                positive: i * y + p,
                negative: k * y + n,
            }
        })
        .collect())
}

/// Mean hinge `max(0, d(a,p) − d(a,n) + margin)` with `d = 1 − cos`, over
/// row-aligned anchor/positive/negative matrices.
pub fn triplet_graph(g: &mut Graph, anchors: Var, positives: Var, negatives: Var, margin: f64) -> Result<Var> {
    let (n, _) = g.value(anchors).dims2()?;
    if g.value(positives).dims2()?.0 != n || g.value(negatives).dims2()?.0 != n || n == 0 {
        return Err(Error::dim("loss", "triplet rows must align"));
    }
    let diag: Vec<usize> = (0..n).map(|i| i * n + i).collect();
    let cap = g.cosine_matrix(anchors, positives, COSINE_EPS)?;
    let can = g.cosine_matrix(anchors, negatives, COSINE_EPS)?;
    let cap = g.gather(cap, &diag)?;
    let can = g.gather(can, &diag)?;
    // d(a,p) − d(a,n) = cos(a,n) − cos(a,p)
    let gap = g.sub(can, cap)?;
    let gap = g.add_scalar(gap, margin)?;
    let hinge = g.relu(gap)?;
    g.mean(hinge)
}

pub fn triplet_loss(batch: &BatchEmbeddings, cfg: &TripletConfig, seed: u64) -> Result<f64> {
    cfg.validate()?;
    let triplets = sample_triplets(batch.num_phrases(), batch.utterances_per_phrase(), seed)?;
    let mut g = Graph::new();
    let emb = g.constant(batch.as_matrix())?;
    let a = g.gather_rows(emb, &triplets.iter().map(|t| t.anchor).collect::<Vec<_>>())?;
    let p = g.gather_rows(emb, &triplets.iter().map(|t| t.positive).collect::<Vec<_>>())?;
    let n = g.gather_rows(emb, &triplets.iter().map(|t| t.negative).collect::<Vec<_>>())?;
    let l = triplet_graph(&mut g, a, p, n, cfg.margin)?;
    Ok(g.value(l).data()[0])
}
