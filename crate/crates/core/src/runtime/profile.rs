use std::path::{Path, PathBuf};

use crate::checkpoint::{model_checksum, Blob, Container};
use crate::encoder::{Embedding, Model};
use crate::error::{Error, Result};
use crate::evalkit::mean_embedding;
use crate::frontend::FeatureSequence;
use crate::ndmath::{cosine_matrix, Tensor, COSINE_EPS};
use crate::quant::QuantizedModel;

const PROFILE_TAG: &str = "profile";
const PROFILE_BLOB: &str = "profile";

/// A float model ready for serving, tagged with the checksum profiles are
/// bound to. Quantized models serve through their dequantized weights but
/// keep the checksum of the quantized container.
#[derive(Debug, Clone)]
pub struct ServingEncoder {
    model: Model,
    checksum: String,
}

impl ServingEncoder {
    pub fn from_model(model: &Model) -> Result<Self> {
        Ok(Self {
            model: model.clone(),
            checksum: model_checksum(model)?,
        })
    }

    pub fn from_quantized(q: &QuantizedModel) -> Result<Self> {
        Ok(Self {
            model: q.dequantized()?,
            checksum: q.to_container().checksum()?,
        })
    }

    /// Loads a float or quantized checkpoint, chosen by its `kind` metadata.
    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        match c.meta("kind") {
            Some("model-q8") => Self::from_quantized(&QuantizedModel::from_container(&c)?),
            _ => Self::from_model(&crate::checkpoint::model_from_container(&c)?),
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn embed(&self, features: &FeatureSequence) -> Result<Embedding> {
        self.model.forward(features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrollmentProfile {
    pub phrase: String,
    pub centroid: Embedding,
    pub num_enrolled: usize,
    pub model_checksum: String,
    pub seed: u64,
}

/// Embeds every utterance and averages them into the phrase centroid.
pub fn enroll(
    encoder: &ServingEncoder,
    utterances: &[&FeatureSequence],
    phrase: &str,
    seed: u64,
) -> Result<EnrollmentProfile> {
    if utterances.is_empty() {
        return Err(Error::usage("runtime", format!("no enrollment utterances for '{phrase}'")));
    }
    if phrase.is_empty() || phrase.contains(['\t', '\n', '\r', ',']) {
        return Err(Error::usage("runtime", "phrase label must be non-empty without tabs, commas or newlines"));
    }
    let embs = encoder.model.embed_many(utterances)?;
    let rows: Vec<&[f64]> = embs.iter().map(Vec::as_slice).collect();
    Ok(EnrollmentProfile {
        phrase: phrase.to_string(),
        centroid: mean_embedding(&rows)?,
        num_enrolled: utterances.len(),
        model_checksum: encoder.checksum.clone(),
        seed,
    })
}

/// Cosine similarity in the same form the evaluation protocol scores with.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("runtime", format!("embedding of length {} vs centroid {}", a.len(), b.len())));
    }
    let s = cosine_matrix(
        &Tensor::matrix(1, a.len(), a.to_vec())?,
        &Tensor::matrix(1, b.len(), b.to_vec())?,
        COSINE_EPS,
    )?;
    Ok(s.data()[0])
}

pub(crate) fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config("runtime", format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(())
}

/// Accepts iff cosine(embedding, centroid) ≥ threshold. The profile must
/// have been enrolled with the model identified by `model_checksum`.
pub fn verify(
    embedding: &[f64],
    profile: &EnrollmentProfile,
    threshold: f64,
    model_checksum: &str,
) -> Result<(bool, f64)> {
    check_threshold(threshold)?;
    if profile.model_checksum != model_checksum {
        return Err(Error::integrity(
            "runtime",
            format!(
                "profile '{}' was enrolled with model {} but the encoder is {}",
                profile.phrase, profile.model_checksum, model_checksum
            ),
        ));
    }
    let score = cosine_score(embedding, &profile.centroid)?;
    Ok((score >= threshold, score))
}

impl EnrollmentProfile {
    pub fn to_container(&self) -> Result<Container> {
        let d = self.centroid.len();
        let mut c = Container::new(PROFILE_TAG, vec![d as u32])
            .with_meta("kind", "profile")
            .with_meta("phrase", self.phrase.clone())
            .with_meta("enrolled", self.num_enrolled.to_string())
            .with_meta("model_checksum", self.model_checksum.clone())
            .with_meta("seed", self.seed.to_string());
        c.blobs
            .push((PROFILE_BLOB.to_string(), Blob::F64(Tensor::vector(self.centroid.clone()))));
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let bad = |detail: String| Error::integrity("runtime", detail);
        if c.arch_tag != PROFILE_TAG || c.meta("kind") != Some("profile") {
            return Err(bad(format!("container '{}' is not an enrollment profile", c.arch_tag)));
        }
        let field = |k: &str| c.meta(k).ok_or_else(|| bad(format!("profile is missing '{k}'")));
        let centroid = match c.blob(PROFILE_BLOB) {
            Some(Blob::F64(t)) if t.shape().len() == 1 && !t.data().is_empty() => t.data().to_vec(),
            _ => return Err(bad("profile blob must be a non-empty f64 vector".into())),
        };
        if c.blobs.len() != 1 || c.dims != [centroid.len() as u32] {
            return Err(bad("profile layout does not match its centroid".into()));
        }
        let num_enrolled: usize = field("enrolled")?
            .parse()
            .map_err(|_| bad("profile 'enrolled' is not an integer".into()))?;
        if num_enrolled == 0 {
            return Err(bad("profile has no enrolled utterances".into()));
        }
        Ok(Self {
            phrase: field("phrase")?.to_string(),
            centroid,
            num_enrolled,
            model_checksum: field("model_checksum")?.to_string(),
            seed: field("seed")?
                .parse()
                .map_err(|_| bad("profile 'seed' is not an integer".into()))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

pub const PROFILE_INDEX_FILE: &str = "profiles.idx";

/// `phrase<TAB>filename` lines; `#` comments and blank lines are skipped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileIndex {
    pub entries: Vec<(String, String)>,
}

impl ProfileIndex {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, detail: String| Error::Parse {
            module: "runtime",
            source_name: source_name.to_string(),
            line,
            detail,
        };
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let Some((phrase, file)) = line.split_once('\t') else {
                return Err(err(i + 1, "expected phrase<TAB>filename".into()));
            };
            let (phrase, file) = (phrase.trim(), file.trim());
            if phrase.is_empty() || file.is_empty() || file.contains('\t') {
                return Err(err(i + 1, "expected exactly two non-empty columns".into()));
            }
            if file.contains(['/', '\\']) || file == "." || file == ".." {
                return Err(err(i + 1, format!("profile file '{file}' must be a plain file name")));
            }
            if entries.iter().any(|(p, _)| p == phrase) {
                return Err(err(i + 1, format!("duplicate phrase '{phrase}'")));
            }
            entries.push((phrase.to_string(), file.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn format(&self) -> String {
        let mut out = String::from("# phrase\tfile\n");
        for (p, f) in &self.entries {
            out.push_str(&format!("{p}\t{f}\n"));
        }
        out
    }
}

/// A directory of profile files plus its index.
#[derive(Debug, Clone)]
pub struct ProfileStore {
    dir: PathBuf,
    index: ProfileIndex,
}

fn file_name_for(phrase: &str) -> String {
    let stem: String = phrase
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{stem}.kwsp")
}

impl ProfileStore {
    /// Opens `dir`, reading its index if there is one.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(PROFILE_INDEX_FILE);
        let index = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            ProfileIndex::parse(&text, &path.display().to_string())?
        } else {
            ProfileIndex::default()
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            index,
        })
    }

    pub fn index(&self) -> &ProfileIndex {
        &self.index
    }

    /// Writes the profile file and updates the index; an existing profile
    /// for the same phrase is replaced. Returns the profile file's path.
    pub fn insert(&mut self, profile: &EnrollmentProfile) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let file = match self.index.entries.iter().find(|(p, _)| *p == profile.phrase) {
            Some((_, f)) => f.clone(),
            None => {
                let mut name = file_name_for(&profile.phrase);
                let mut n = 1;
                while self.index.entries.iter().any(|(_, f)| *f == name) {
                    n += 1;
                    name = format!("{}-{n}.kwsp", file_name_for(&profile.phrase).trim_end_matches(".kwsp"));
                }
                self.index.entries.push((profile.phrase.clone(), name.clone()));
                name
            }
        };
        let path = self.dir.join(&file);
        profile.save(&path)?;
        let idx = self.dir.join(PROFILE_INDEX_FILE);
        std::fs::write(&idx, self.index.format()).map_err(|e| Error::io(&idx, e))?;
        Ok(path)
    }

    /// Every profile in index order.
    pub fn load_all(&self) -> Result<Vec<EnrollmentProfile>> {
        self.index
            .entries
            .iter()
            .map(|(phrase, file)| {
                let p = EnrollmentProfile::load(&self.dir.join(file))?;
                if p.phrase != *phrase {
                    return Err(Error::integrity(
                        "runtime",
                        format!("index lists '{phrase}' but {file} holds '{}'", p.phrase),
                    ));
                }
                Ok(p)
            })
            .collect()
    }
}
