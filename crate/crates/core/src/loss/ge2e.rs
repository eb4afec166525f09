use crate::dataset::{validate_batch_dims, Batch};
use crate::error::{Error, Result};
use crate::ndmath::{Graph, Tensor, Var, COSINE_EPS};

/// X×Y grid of D-dim embeddings, phrase-major, same slot roles as [`Batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEmbeddings {
    x: usize,
    y: usize,
    d: usize,
    data: Vec<f64>,
}

impl BatchEmbeddings {
    pub fn new(x: usize, y: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        validate_batch_dims(x, y)?;
        if d == 0 || data.len() != x * y * d {
            return Err(Error::dim(
                "loss",
                format!("{} values for a {x}x{y}x{d} batch", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "BatchEmbeddings" });
        }
        Ok(Self { x, y, d, data })
    }

    pub fn num_phrases(&self) -> usize {
        self.x
    }

    pub fn utterances_per_phrase(&self) -> usize {
        self.y
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, phrase: usize, slot: usize) -> &[f64] {
        let off = (phrase * self.y + slot) * self.d;
        &self.data[off..off + self.d]
    }

    pub fn as_matrix(&self) -> Tensor {
        Tensor::matrix(self.x * self.y, self.d, self.data.clone()).expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ge2eOutput {
    /// `L(c_i)` for each phrase.
    pub per_phrase: Vec<f64>,
    /// Mean of `per_phrase`.
    pub loss: f64,
    /// X×D enrollment centroids.
    pub centroids: Tensor,
    /// X×(X·Y/2) cosine scores of every centroid against every test embedding;
    /// column `c` is the test embedding of phrase `c / (Y/2)`.
    pub scores: Tensor,
}

/// Graph handles produced by [`ge2e_graph`].
#[derive(Debug, Clone)]
pub struct Ge2eNodes {
    pub loss: Var,
    pub per_phrase: Vec<Var>,
    pub centroids: Var,
    pub scores: Var,
}

fn slot_rows(x: usize, y: usize, enrollment: bool) -> Vec<usize> {
    (0..x)
        .flat_map(|i| {
            (0..y)
                .filter(move |s| Batch::is_enrollment_slot(*s) == enrollment)
                .map(move |s| i * y + s)
        })
        .collect()
}

/// Centroids from the enrollment rows of an (X·Y)×D embedding node.
pub fn centroids_graph(g: &mut Graph, emb: Var, x: usize, y: usize) -> Result<Var> {
    validate_batch_dims(x, y)?;
    let half = y / 2;
    let enroll = g.gather_rows(emb, &slot_rows(x, y, true))?;
    let mut avg = vec![0.0; x * x * half];
    for i in 0..x {
        for k in 0..half {
            avg[i * x * half + i * half + k] = 1.0 / half as f64;
        }
    }
    let avg = g.constant(Tensor::matrix(x, x * half, avg)?)?;
    g.matmul(avg, enroll)
}

/// GE2E objective on an (X·Y)×D embedding node, phrase-major rows.
///
/// One cosine-matrix product scores every centroid against every test
/// embedding; each phrase's loss is `lse(negatives) − lse(positives)`.
pub fn ge2e_graph(g: &mut Graph, emb: Var, x: usize, y: usize) -> Result<Ge2eNodes> {
    if x < 2 {
        return Err(Error::domain("loss", "GE2E requires ≥ 2 phrases per batch"));
    }
    validate_batch_dims(x, y)?;
    let (rows, _) = g.value(emb).dims2()?;
    if rows != x * y {
        return Err(Error::dim("loss", format!("{rows} embedding rows for {x}x{y}")));
    }
    let half = y / 2;
    let centroids = centroids_graph(g, emb, x, y)?;
    let tests = g.gather_rows(emb, &slot_rows(x, y, false))?;
    let scores = g.cosine_matrix(centroids, tests, COSINE_EPS)?;
    let q = x * half;
    let mut per_phrase = Vec::with_capacity(x);
    for i in 0..x {
        let pos: Vec<usize> = (i * half..(i + 1) * half).map(|c| i * q + c).collect();
        let neg: Vec<usize> = (0..q).filter(|c| c / half != i).map(|c| i * q + c).collect();
        let pos = g.gather(scores, &pos)?;
        let neg = g.gather(scores, &neg)?;
        let lp = g.log_sum_exp(pos)?;
        let ln = g.log_sum_exp(neg)?;
        per_phrase.push(g.sub(ln, lp)?);
    }
    let mut total = per_phrase[0];
    for &l in &per_phrase[1..] {
        total = g.add(total, l)?;
    }
    let loss = g.scale(total, 1.0 / x as f64)?;
    Ok(Ge2eNodes {
        loss,
        per_phrase,
        centroids,
        scores,
    })
}

pub fn centroids(batch: &BatchEmbeddings) -> Result<Tensor> {
    let mut g = Graph::new();
    let emb = g.constant(batch.as_matrix())?;
    let c = centroids_graph(&mut g, emb, batch.x, batch.y)?;
    Ok(g.value(c).clone())
}

pub fn ge2e_loss(batch: &BatchEmbeddings) -> Result<Ge2eOutput> {
    let mut g = Graph::new();
    let emb = g.constant(batch.as_matrix())?;
    let nodes = ge2e_graph(&mut g, emb, batch.x, batch.y)?;
    Ok(Ge2eOutput {
        per_phrase: nodes.per_phrase.iter().map(|v| g.value(*v).data()[0]).collect(),
        loss: g.value(nodes.loss).data()[0],
        centroids: g.value(nodes.centroids).clone(),
        scores: g.value(nodes.scores).clone(),
    })
}

/// Per-phrase losses straight from an X×(X·Y/2) score matrix.
pub fn phrase_losses_from_scores(scores: &Tensor, y: usize) -> Result<Vec<f64>> {
    let (x, q) = scores.dims2()?;
    if y < 2 || y % 2 != 0 || q != x * (y / 2) || x < 2 {
        return Err(Error::dim("loss", format!("score matrix {x}x{q} for Y={y}")));
    }
    let half = y / 2;
    (0..x)
        .map(|i| {
            let row = scores.row(i);
            let pos: Vec<f64> = (0..q).filter(|c| c / half == i).map(|c| row[c]).collect();
            let neg: Vec<f64> = (0..q).filter(|c| c / half != i).map(|c| row[c]).collect();
            Ok(crate::ndmath::log_sum_exp(&neg)? - crate::ndmath::log_sum_exp(&pos)?)
        })
        .collect()
}
