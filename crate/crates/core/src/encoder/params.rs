use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frontend::NUM_MEL_BINS;
use crate::ndmath::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub embedding_dim: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            input_dim: NUM_MEL_BINS,
            hidden_dim: 64,
            layers: 3,
            embedding_dim: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConformerConfig {
    pub input_dim: usize,
    pub blocks: usize,
    pub model_dim: usize,
    pub heads: usize,
    /// Depthwise kernel width, odd.
    pub kernel_width: usize,
    pub ffn_mult: usize,
    pub embedding_dim: usize,
    pub positional_encoding: bool,
}

impl Default for ConformerConfig {
    fn default() -> Self {
        Self {
            input_dim: NUM_MEL_BINS,
            blocks: 2,
            model_dim: 64,
            heads: 4,
            kernel_width: 7,
            ffn_mult: 2,
            embedding_dim: 64,
            positional_encoding: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchConfig {
    Lstm(LstmConfig),
    Conformer(ConformerConfig),
}

impl ArchConfig {
    pub fn embedding_dim(&self) -> usize {
        match self {
            ArchConfig::Lstm(c) => c.embedding_dim,
            ArchConfig::Conformer(c) => c.embedding_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ArchConfig::Lstm(c) => c.input_dim,
            ArchConfig::Conformer(c) => c.input_dim,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ArchConfig::Lstm(_) => "lstm",
            ArchConfig::Conformer(_) => "conformer",
        }
    }

    /// Integer dims stored in checkpoint headers.
    pub fn dims(&self) -> Vec<u32> {
        match *self {
            ArchConfig::Lstm(c) => [c.input_dim, c.hidden_dim, c.layers, c.embedding_dim]
                .map(|v| v as u32)
                .to_vec(),
            ArchConfig::Conformer(c) => [
                c.input_dim,
                c.blocks,
                c.model_dim,
                c.heads,
                c.kernel_width,
                c.ffn_mult,
                c.embedding_dim,
                c.positional_encoding as usize,
            ]
            .map(|v| v as u32)
            .to_vec(),
        }
    }

    pub fn from_tag(tag: &str, dims: &[u32]) -> Result<Self> {
        let d: Vec<usize> = dims.iter().map(|v| *v as usize).collect();
        let cfg = match (tag, d.as_slice()) {
            ("lstm", &[input_dim, hidden_dim, layers, embedding_dim]) => ArchConfig::Lstm(LstmConfig {
                input_dim,
                hidden_dim,
                layers,
                embedding_dim,
            }),
            (
                "conformer",
                &[input_dim, blocks, model_dim, heads, kernel_width, ffn_mult, embedding_dim, pe],
            ) if pe <= 1 => ArchConfig::Conformer(ConformerConfig {
                input_dim,
                blocks,
                model_dim,
                heads,
                kernel_width,
                ffn_mult,
                embedding_dim,
                positional_encoding: pe == 1,
            }),
            _ => {
                return Err(Error::config(
                    "encoder",
                    format!("unknown architecture '{tag}' with {} dims", dims.len()),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config("encoder", m));
        match *self {
            ArchConfig::Lstm(c) => {
                if c.input_dim == 0 || c.hidden_dim == 0 || c.layers == 0 || c.embedding_dim == 0 {
                    return bad(format!("LSTM dims must be positive: {c:?}"));
                }
                if c.hidden_dim > 4096 || c.layers > 16 || c.embedding_dim > 4096 || c.input_dim > 4096 {
                    return bad(format!("LSTM dims too large: {c:?}"));
                }
            }
            ArchConfig::Conformer(c) => {
                if [c.input_dim, c.blocks, c.model_dim, c.heads, c.ffn_mult, c.embedding_dim]
                    .contains(&0)
                {
                    return bad(format!("conformer dims must be positive: {c:?}"));
                }
                if c.model_dim % c.heads != 0 {
                    return bad(format!(
                        "model dim {} is not divisible by {} heads",
                        c.model_dim, c.heads
                    ));
                }
                if c.kernel_width % 2 == 0 {
                    return bad(format!("kernel width {} must be odd", c.kernel_width));
                }
                if c.model_dim > 4096 || c.blocks > 64 || c.kernel_width > 255 || c.ffn_mult > 16 {
                    return bad(format!("conformer dims too large: {c:?}"));
                }
            }
        }
        Ok(())
    }
}

/// How a parameter is initialised.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// Uniform in ±1/sqrt(fan_in).
    Uniform { fan_in: usize },
    Zeros,
    Ones,
    /// LSTM bias: zero except the forget-gate quarter, which is 1.
    ForgetBias { hidden: usize },
}

/// Parameter shapes in a fixed order for an architecture.
pub(crate) fn layout(arch: &ArchConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    match *arch {
        ArchConfig::Lstm(c) => {
            let h = c.hidden_dim;
            for l in 0..c.layers {
                let input = if l == 0 { c.input_dim } else { h };
                out.push((format!("lstm.l{l}.w_ih"), vec![input, 4 * h], Init::Uniform { fan_in: input }));
                out.push((format!("lstm.l{l}.w_hh"), vec![h, 4 * h], Init::Uniform { fan_in: h }));
                out.push((format!("lstm.l{l}.b"), vec![4 * h], Init::ForgetBias { hidden: h }));
            }
            out.push(("proj.w".into(), vec![h, c.embedding_dim], Init::Uniform { fan_in: h }));
            out.push(("proj.b".into(), vec![c.embedding_dim], Init::Zeros));
        }
        ArchConfig::Conformer(c) => {
            let m = c.model_dim;
            let f = m * c.ffn_mult;
            out.push(("conf.in.w".into(), vec![c.input_dim, m], Init::Uniform { fan_in: c.input_dim }));
            out.push(("conf.in.b".into(), vec![m], Init::Zeros));
            let ln = |out: &mut Vec<_>, p: &str| {
                out.push((format!("{p}.ln.g"), vec![m], Init::Ones));
                out.push((format!("{p}.ln.b"), vec![m], Init::Zeros));
            };
            let linear = |out: &mut Vec<_>, p: &str, i: usize, o: usize| {
                out.push((format!("{p}.w"), vec![i, o], Init::Uniform { fan_in: i }));
                out.push((format!("{p}.b"), vec![o], Init::Zeros));
            };
            let ffn = |out: &mut Vec<_>, p: &str| {
                ln(out, p);
                linear(out, &format!("{p}.up"), m, f);
                linear(out, &format!("{p}.down"), f, m);
            };
            // Same order the forward pass consumes them.
            for b in 0..c.blocks {
                ffn(&mut out, &format!("blk{b}.ff1"));
                let p = format!("blk{b}.mhsa");
                ln(&mut out, &p);
                for q in ["q", "k", "v", "o"] {
                    linear(&mut out, &format!("{p}.{q}"), m, m);
                }
                let p = format!("blk{b}.conv");
                ln(&mut out, &p);
                linear(&mut out, &format!("{p}.pw1"), m, 2 * m);
                out.push((format!("{p}.dw.k"), vec![c.kernel_width, m], Init::Uniform { fan_in: c.kernel_width }));
                out.push((format!("{p}.dw.b"), vec![m], Init::Zeros));
                linear(&mut out, &format!("{p}.pw2"), m, m);
                ffn(&mut out, &format!("blk{b}.ff2"));
                ln(&mut out, &format!("blk{b}.out"));
            }
            out.push(("proj.w".into(), vec![m, c.embedding_dim], Init::Uniform { fan_in: m }));
            out.push(("proj.b".into(), vec![c.embedding_dim], Init::Zeros));
        }
    }
    out
}

/// Named parameter tensors in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors) = entries.into_iter().unzip();
        Self { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Checks names and shapes against the architecture layout.
    pub(crate) fn check_layout(&self, arch: &ArchConfig) -> Result<()> {
        let want = layout(arch);
        if want.len() != self.len() {
            return Err(Error::integrity(
                "encoder",
                format!("expected {} parameter tensors, found {}", want.len(), self.len()),
            ));
        }
        for ((name, shape, _), (have_name, t)) in want.iter().zip(self.iter()) {
            if name != have_name {
                return Err(Error::integrity(
                    "encoder",
                    format!("expected parameter '{name}', found '{have_name}'"),
                ));
            }
            if t.shape() != shape.as_slice() {
                return Err(Error::integrity(
                    "encoder",
                    format!("parameter '{name}' has shape {:?}, expected {shape:?}", t.shape()),
                ));
            }
            if !t.is_finite() {
                return Err(Error::integrity("encoder", format!("parameter '{name}' is not finite")));
            }
        }
        Ok(())
    }
}

pub(crate) fn init_store(arch: &ArchConfig, seed: u64) -> Result<ParamStore> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = layout(arch)
        .into_iter()
        .map(|(name, shape, init)| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Uniform { fan_in } => {
                    let s = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-s..s)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::ForgetBias { hidden } => (0..n)
                    .map(|i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 })
                    .collect(),
            };
            Ok((name, Tensor::new(shape, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamStore::new(entries))
}
