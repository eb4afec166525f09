//! Stacked LSTM. Gate columns are ordered input, forget, candidate, output.
//!
//! ```text
//! i = σ(x·W_ih[:, 0:H]   + h·W_hh[:, 0:H]   + b[0:H])
//! f = σ(x·W_ih[:, H:2H]  + h·W_hh[:, H:2H]  + b[H:2H])
//! g = tanh(x·W_ih[:, 2H:3H] + … )
//! o = σ(x·W_ih[:, 3H:4H] + … )
//! c' = f⊙c + i⊙g,  h' = o⊙tanh(c')
//! ```
//!
//! The embedding is the final top-layer hidden state projected to D.

use super::params::LstmConfig;
use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::ndmath::{sigmoid, Graph, Tensor, Var};

/// Whole-batch forward. All sequences must share one length. Returns B×D.
pub(crate) fn forward_graph(
    g: &mut Graph,
    cfg: &LstmConfig,
    vars: &[Var],
    batch: &[&FeatureSequence],
) -> Result<Var> {
    let b = batch.len();
    let t = check_batch(cfg, batch)?;
    let h = cfg.hidden_dim;

    // Time-major rows: row t·B + k is frame t of sequence k.
    let mut x = vec![0.0; t * b * cfg.input_dim];
    for (k, seq) in batch.iter().enumerate() {
        for step in 0..t {
            let dst = (step * b + k) * cfg.input_dim;
            x[dst..dst + cfg.input_dim].copy_from_slice(seq.frame(step));
        }
    }
    let mut input = g.constant(Tensor::matrix(t * b, cfg.input_dim, x)?)?;

    let mut last = None;
    for l in 0..cfg.layers {
        let (w_ih, w_hh, bias) = (vars[3 * l], vars[3 * l + 1], vars[3 * l + 2]);
        let proj = g.matmul(input, w_ih)?;
        let proj = g.add_row(proj, bias)?;
        let mut hs = Vec::with_capacity(t);
        let mut state: Option<(Var, Var)> = None;
        for step in 0..t {
            let mut pre = g.slice_rows(proj, step * b, (step + 1) * b)?;
            if let Some((hp, _)) = state {
                let rec = g.matmul(hp, w_hh)?;
                pre = g.add(pre, rec)?;
            }
            let i_gate = g.slice_cols(pre, 0, h)?;
            let i_gate = g.sigmoid(i_gate)?;
            let cand = g.slice_cols(pre, 2 * h, 3 * h)?;
            let cand = g.tanh(cand)?;
            let o_gate = g.slice_cols(pre, 3 * h, 4 * h)?;
            let o_gate = g.sigmoid(o_gate)?;
            let mut c = g.mul(i_gate, cand)?;
            if let Some((_, cp)) = state {
                let f_gate = g.slice_cols(pre, h, 2 * h)?;
                let f_gate = g.sigmoid(f_gate)?;
                let keep = g.mul(f_gate, cp)?;
                c = g.add(keep, c)?;
            }
            let tc = g.tanh(c)?;
            let hn = g.mul(o_gate, tc)?;
            state = Some((hn, c));
            hs.push(hn);
        }
        last = state.map(|s| s.0);
        if l + 1 < cfg.layers {
            input = g.concat_rows(&hs)?;
        }
    }
    let n = vars.len();
    let top = last.expect("at least one frame");
    let out = g.matmul(top, vars[n - 2])?;
    g.add_row(out, vars[n - 1])
}

fn check_batch(cfg: &LstmConfig, batch: &[&FeatureSequence]) -> Result<usize> {
    let first = batch
        .first()
        .ok_or_else(|| Error::usage("encoder", "empty batch"))?;
    if first.dim() != cfg.input_dim {
        return Err(Error::dim(
            "encoder",
            format!("features have dim {}, model expects {}", first.dim(), cfg.input_dim),
        ));
    }
    let t = first.num_frames();
    if batch.iter().any(|s| s.num_frames() != t) {
        return Err(Error::dim("encoder", "LSTM batch sequences must share one length"));
    }
    Ok(t)
}

/// Recurrent state for frame-by-frame inference.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub(crate) h: Vec<Vec<f64>>,
    pub(crate) c: Vec<Vec<f64>>,
    pub(crate) frames: usize,
}

impl LstmState {
    pub fn zeros(cfg: &LstmConfig) -> Self {
        Self {
            h: vec![vec![0.0; cfg.hidden_dim]; cfg.layers],
            c: vec![vec![0.0; cfg.hidden_dim]; cfg.layers],
            frames: 0,
        }
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().chain(self.c.iter_mut()).for_each(|v| v.fill(0.0));
        self.frames = 0;
    }

    pub fn frames_consumed(&self) -> usize {
        self.frames
    }
}

/// Plain-arithmetic single step, independent of the graph path.
pub(crate) fn step(cfg: &LstmConfig, params: &[Tensor], state: &mut LstmState, frame: &[f64]) {
    let h = cfg.hidden_dim;
    let mut input = frame.to_vec();
    let mut pre = vec![0.0; 4 * h];
    for l in 0..cfg.layers {
        let (w_ih, w_hh, b) = (&params[3 * l], &params[3 * l + 1], &params[3 * l + 2]);
        pre.fill(0.0);
        accumulate_vecmat(&input, w_ih.data(), 4 * h, &mut pre);
        pre.iter_mut().zip(b.data()).for_each(|(p, bb)| *p += bb);
        accumulate_vecmat(&state.h[l], w_hh.data(), 4 * h, &mut pre);
        for j in 0..h {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[h + j]);
            let gg = pre[2 * h + j].tanh();
            let o = sigmoid(pre[3 * h + j]);
            let c = f * state.c[l][j] + i * gg;
            state.c[l][j] = c;
            state.h[l][j] = o * c.tanh();
        }
        input.clone_from(&state.h[l]);
    }
    state.frames += 1;
}

/// Projects the top-layer hidden state to the embedding.
pub(crate) fn emit(cfg: &LstmConfig, params: &[Tensor], state: &LstmState) -> Vec<f64> {
    let n = params.len();
    let (w, b) = (&params[n - 2], &params[n - 1]);
    let mut out = b.data().to_vec();
    accumulate_vecmat(&state.h[cfg.layers - 1], w.data(), cfg.embedding_dim, &mut out);
    out
}

fn accumulate_vecmat(x: &[f64], w: &[f64], cols: usize, out: &mut [f64]) {
    for (xi, row) in x.iter().zip(w.chunks(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
}
