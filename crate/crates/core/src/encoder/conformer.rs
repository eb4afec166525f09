//! Conformer-lite: macaron feed-forward halves around self-attention and a
//! depthwise convolution module, absolute sinusoidal positions, temporal
//! mean pooling.

use super::params::ConformerConfig;
use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::ndmath::{Graph, Tensor, Var};

const LN_EPS: f64 = 1e-5;

struct Cursor<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        let v = self.vars[self.pos];
        self.pos += 1;
        v
    }
}

pub(crate) fn sinusoidal_positions(frames: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; frames * dim];
    for t in 0..frames {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = t as f64 * rate;
            data[t * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(frames, dim, data).expect("consistent shape")
}

fn layer_norm(g: &mut Graph, x: Var, p: &mut Cursor) -> Result<Var> {
    let (gain, bias) = (p.next(), p.next());
    let n = g.layer_norm(x, LN_EPS)?;
    let n = g.mul_row(n, gain)?;
    g.add_row(n, bias)
}

fn linear(g: &mut Graph, x: Var, p: &mut Cursor) -> Result<Var> {
    let (w, b) = (p.next(), p.next());
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

fn feed_forward(g: &mut Graph, x: Var, p: &mut Cursor) -> Result<Var> {
    let n = layer_norm(g, x, p)?;
    let up = linear(g, n, p)?;
    let up = g.swish(up)?;
    linear(g, up, p)
}

fn self_attention(g: &mut Graph, x: Var, cfg: &ConformerConfig, p: &mut Cursor) -> Result<Var> {
    let n = layer_norm(g, x, p)?;
    let q = linear(g, n, p)?;
    let k = linear(g, n, p)?;
    let v = linear(g, n, p)?;
    let dh = cfg.model_dim / cfg.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let att = g.softmax_rows(scores)?;
        heads.push(g.matmul(att, vh)?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    linear(g, cat, p)
}

fn conv_module(g: &mut Graph, x: Var, cfg: &ConformerConfig, p: &mut Cursor) -> Result<Var> {
    let m = cfg.model_dim;
    let n = layer_norm(g, x, p)?;
    let pw = linear(g, n, p)?;
    let a = g.slice_cols(pw, 0, m)?;
    let gate = g.slice_cols(pw, m, 2 * m)?;
    let gate = g.sigmoid(gate)?;
    let glu = g.mul(a, gate)?;
    let (kernel, kb) = (p.next(), p.next());
    let dw = g.depthwise_conv(glu, kernel)?;
    let dw = g.add_row(dw, kb)?;
    let act = g.swish(dw)?;
    linear(g, act, p)
}

/// Pooled, projected embedding for one sequence, as a 1×D node.
fn forward_one(g: &mut Graph, cfg: &ConformerConfig, vars: &[Var], seq: &FeatureSequence) -> Result<Var> {
    let t = seq.num_frames();
    let x = g.constant(Tensor::matrix(t, seq.dim(), seq.data().to_vec())?)?;
    let mut p = Cursor { vars, pos: 0 };
    let mut h = linear(g, x, &mut p)?;
    if cfg.positional_encoding {
        let pe = g.constant(sinusoidal_positions(t, cfg.model_dim))?;
        h = g.add(h, pe)?;
    }
    for _ in 0..cfg.blocks {
        let f1 = feed_forward(g, h, &mut p)?;
        let f1 = g.scale(f1, 0.5)?;
        h = g.add(h, f1)?;
        let att = self_attention(g, h, cfg, &mut p)?;
        h = g.add(h, att)?;
        let conv = conv_module(g, h, cfg, &mut p)?;
        h = g.add(h, conv)?;
        let f2 = feed_forward(g, h, &mut p)?;
        let f2 = g.scale(f2, 0.5)?;
        h = g.add(h, f2)?;
        h = layer_norm(g, h, &mut p)?;
    }
    let pooled = g.mean_rows(h)?;
    linear(g, pooled, &mut p)
}

/// Returns B×D; sequences may differ in length.
pub(crate) fn forward_graph(
    g: &mut Graph,
    cfg: &ConformerConfig,
    vars: &[Var],
    batch: &[&FeatureSequence],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::usage("encoder", "empty batch"));
    }
    let mut rows = Vec::with_capacity(batch.len());
    for seq in batch {
        if seq.dim() != cfg.input_dim {
            return Err(Error::dim(
                "encoder",
                format!("features have dim {}, model expects {}", seq.dim(), cfg.input_dim),
            ));
        }
        rows.push(forward_one(g, cfg, vars, seq)?);
    }
    if rows.len() == 1 {
        Ok(rows[0])
    } else {
        g.concat_rows(&rows)
    }
}
