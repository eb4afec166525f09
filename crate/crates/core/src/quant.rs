//! Symmetric per-tensor 8-bit weight quantization with float activations.

use std::path::Path;

use crate::checkpoint::{Blob, Container};
use crate::encoder::{ArchConfig, Embedding, Model, ParamStore};
use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::ndmath::Tensor;

pub const Q8_MAX: i8 = 127;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    values: Vec<i8>,
    scale: f64,
    shape: Vec<usize>,
}

impl QuantTensor {
    pub fn from_parts(values: Vec<i8>, scale: f64, shape: Vec<usize>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::domain("quant", format!("scale must be positive and finite, got {scale}")));
        }
        if values.iter().any(|v| *v < -Q8_MAX) {
            return Err(Error::domain("quant", "quantized value -128 is out of range"));
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::dim("quant", format!("{} values for shape {shape:?}", values.len())));
        }
        Ok(Self { values, scale, shape })
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
}

/// scale = max|t|/127 (1 for an all-zero tensor); values rounded half away
/// from zero and clamped to ±127.
pub fn quantize(t: &Tensor) -> Result<QuantTensor> {
    if !t.is_finite() {
        return Err(Error::domain("quant", "cannot quantize non-finite values"));
    }
    let m = t.max_abs();
    let scale = if m == 0.0 { 1.0 } else { m / Q8_MAX as f64 };
    let values = t
        .data()
        .iter()
        .map(|v| (v / scale).round().clamp(-(Q8_MAX as f64), Q8_MAX as f64) as i8)
        .collect();
    QuantTensor::from_parts(values, scale, t.shape().to_vec())
}

pub fn dequantize(q: &QuantTensor) -> Tensor {
    let data = q.values.iter().map(|v| q.scale * *v as f64).collect();
    Tensor::new(q.shape.clone(), data).expect("shape checked at construction")
}

/// Every parameter tensor of a model, quantized.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    arch: ArchConfig,
    names: Vec<String>,
    tensors: Vec<QuantTensor>,
}

pub fn quantize_model(model: &Model) -> Result<QuantizedModel> {
    let (names, tensors) = model
        .params()
        .iter()
        .map(|(n, t)| Ok((n.to_string(), quantize(t)?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(QuantizedModel {
        arch: *model.arch(),
        names,
        tensors,
    })
}

impl QuantizedModel {
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[QuantTensor] {
        &self.tensors
    }

    /// Float model holding the dequantized weights.
    pub fn dequantized(&self) -> Result<Model> {
        let entries = self.names.iter().cloned().zip(self.tensors.iter().map(dequantize)).collect();
        Model::from_params(self.arch, ParamStore::new(entries))
    }

    pub fn to_container(&self) -> Container {
        Container {
            arch_tag: self.arch.tag().to_string(),
            dims: self.arch.dims(),
            meta: vec![("kind".into(), "model-q8".into())],
            blobs: self
                .names
                .iter()
                .cloned()
                .zip(self.tensors.iter().cloned().map(Blob::Q8))
                .collect(),
        }
    }

    /// Every layout parameter must be present as a `q8` blob.
    pub fn from_container(c: &Container) -> Result<Self> {
        let arch = ArchConfig::from_tag(&c.arch_tag, &c.dims)?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, _) in crate::encoder::layout(&arch) {
            match c.blob(&name) {
                Some(Blob::Q8(q)) if q.shape() == shape.as_slice() => {
                    names.push(name);
                    tensors.push(q.clone());
                }
                Some(Blob::Q8(q)) => {
                    return Err(Error::integrity(
                        "quant",
                        format!("blob '{name}' has shape {:?}, expected {shape:?}", q.shape()),
                    ))
                }
                Some(Blob::F64(_)) => {
                    return Err(Error::integrity("quant", format!("blob '{name}' is not quantized")))
                }
                None => return Err(Error::integrity("quant", format!("missing quantized blob '{name}'"))),
            }
        }
        if c.blobs.len() != names.len() {
            return Err(Error::integrity("quant", "container holds unexpected blobs"));
        }
        Ok(Self { arch, names, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Same computation as the float forward, run on dequantized weights.
pub fn quantized_forward(q: &QuantizedModel, features: &FeatureSequence) -> Result<Embedding> {
    q.dequantized()?.forward(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::model_to_container;
    use crate::encoder::{init_params, LstmConfig};
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let q = quantize(&Tensor::vector(vec![1.0, -1.0])).unwrap();
        assert_eq!(q.values(), &[127, -127]);
        assert_eq!(q.scale(), 1.0 / 127.0);
        assert_eq!(dequantize(&q).data(), &[1.0, -1.0]);

        let z = quantize(&Tensor::zeros(&[3])).unwrap();
        assert_eq!((z.values(), z.scale()), (&[0i8, 0, 0][..], 1.0));
        assert_eq!(dequantize(&z), Tensor::zeros(&[3]));

        // 0.5·127 = 63.5 rounds away from zero
        let q = quantize(&Tensor::vector(vec![0.5, -1.0, 0.25])).unwrap();
        assert_eq!(q.values(), &[64, -127, 32]);
        let q = quantize(&Tensor::vector(vec![-0.5, 1.0])).unwrap();
        assert_eq!(q.values(), &[-64, 127]);

        assert!(matches!(quantize(&Tensor::vector(vec![1.0, f64::NAN])), Err(Error::Domain { .. })));
        assert!(QuantTensor::from_parts(vec![-128], 1.0, vec![1]).is_err());
        assert!(QuantTensor::from_parts(vec![1], 0.0, vec![1]).is_err());
    }

    proptest! {
        #[test]
        fn error_bound_and_idempotence(v in prop::collection::vec(-50.0f64..50.0, 1..64)) {
            let t = Tensor::vector(v);
            let q = quantize(&t).unwrap();
            let d = dequantize(&q);
            prop_assert!(d.max_abs_diff(&t) <= q.scale() / 2.0 + 1e-12);
            let again = quantize(&d).unwrap();
            prop_assert_eq!(again.values(), q.values());
        }
    }

    #[test]
    fn zero_model_and_round_trip() {
        let arch = ArchConfig::Lstm(LstmConfig { hidden_dim: 8, embedding_dim: 4, ..Default::default() });
        let zero = init_params(&arch, 0).unwrap().map_params(|_, t| Ok(Tensor::zeros(t.shape()))).unwrap();
        let f = FeatureSequence::new(vec![0.3; 5 * 40], 10).unwrap();
        let qz = quantize_model(&zero).unwrap();
        assert_eq!(quantized_forward(&qz, &f).unwrap(), zero.forward(&f).unwrap());

        let m = init_params(&arch, 1).unwrap();
        let q = quantize_model(&m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.kwsm");
        q.save(&p).unwrap();
        let back = QuantizedModel::load(&p).unwrap();
        assert_eq!(quantized_forward(&back, &f).unwrap(), quantized_forward(&q, &f).unwrap());

        let mut c = q.to_container();
        c.blobs.remove(2);
        assert!(matches!(QuantizedModel::from_container(&c), Err(Error::Integrity { .. })));
    }

    #[test]
    fn payload_shrinks_about_eightfold() {
        let m = init_params(&ArchConfig::Lstm(LstmConfig::default()), 0).unwrap();
        let float = model_to_container(&m).payload_bytes() as f64;
        let q8 = quantize_model(&m).unwrap().to_container().payload_bytes() as f64;
        let ratio = float / q8;
        assert!(ratio >= 7.0);
        assert!(((q8 / float) - 0.125).abs() / 0.125 < 0.05, "{ratio}");
    }
}
