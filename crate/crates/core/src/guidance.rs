//! Text embedding and the bottleneck similarity head.
//!
//! The head projects bottleneck features into the text space with a
//! bias-free 1×1×1 convolution, normalizes each voxel's vector and takes a
//! temperature-scaled cosine with the normalized text embedding:
//! `s = σ(⟨f̃, t̃⟩ / T)`. Since both vectors are unit length, every voxel of
//! `s` lies in `[σ(−1/T), σ(1/T)]`.

use std::fs;
use std::path::{Path, PathBuf};

use lesionseg_autodiff::{Real, Tape, Tensor, Var};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::params::{self, Bound, ParamStore};
use crate::rng;

pub const PROJ_WEIGHT: &str = "guidance/proj.weight";
const EMBEDDING_MAGIC: &str = "textemb v1";

#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingSource {
    Pseudo(u64),
    File(PathBuf),
}

/// Unit-length text embedding `t̃`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    pub vector: Vec<Real>,
    pub source: EmbeddingSource,
}

fn normalized(v: Vec<f64>) -> Result<Vec<Real>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Invalid("text embedding must be finite and nonzero".into()));
    }
    Ok(v.into_iter().map(|x| (x / norm) as Real).collect())
}

impl TextEmbedding {
    /// Standard-normal draw from a seeded stream, normalized.
    pub fn pseudo(seed: u64, dim: usize) -> Result<Self> {
        let mut rng = rng::stream(seed, rng::STREAM_EMBEDDING, 0);
        let v = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Self {
            vector: normalized(v)?,
            source: EmbeddingSource::Pseudo(seed),
        })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("").trim();
        let dim: usize = header
            .strip_prefix(EMBEDDING_MAGIC)
            .and_then(|rest| rest.trim().strip_prefix("d="))
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::format(path, "embedding header", format!("expected `{EMBEDDING_MAGIC} d=<int>`")))?;
        let values: Vec<f64> = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| Error::format(path, "embedding values", format!("bad real `{x}`"))))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::format(
                path,
                "embedding values",
                format!("header declares d={dim}, found {}", values.len()),
            ));
        }
        Ok(Self {
            vector: normalized(values).map_err(|e| Error::format(path, "embedding values", e.to_string()))?,
            source: EmbeddingSource::File(path.to_path_buf()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let values: Vec<String> = self.vector.iter().map(ToString::to_string).collect();
        format!("{EMBEDDING_MAGIC} d={}\n{}\n", self.vector.len(), values.join(" "))
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new([self.dim()], self.vector.clone()).expect("vector shape")
    }
}

pub fn init_params(store: &mut ParamStore, rng: &mut impl rand::Rng, channels: usize, text_dim: usize) {
    store.insert(PROJ_WEIGHT, params::conv_kernel(rng, text_dim, channels, 1));
}

/// `s = σ(⟨norm(W_f f), t̃⟩ / T)` per voxel; `f` is `[B, C, D, H, W]`, `s` is
/// `[B, 1, D, H, W]`.
pub fn similarity_head(
    tape: &mut Tape,
    bound: &Bound,
    f: Var,
    text: &TextEmbedding,
    temperature: Real,
) -> Result<Var> {
    let w = bound.get(PROJ_WEIGHT)?;
    let d = tape.shape(w)[0];
    if d != text.dim() {
        return Err(Error::Invalid(format!(
            "projection maps to {d} dimensions, text embedding has {}",
            text.dim()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::config("guidance.temperature must be > 0"));
    }
    let proj = tape.conv3d(f, w, [1; 3], [0; 3])?;
    let unit = tape.l2_normalize_channels(proj)?;
    let kernel = tape.constant(text.as_tensor().reshape([1, d, 1, 1, 1])?);
    let cos = tape.conv3d(unit, kernel, [1; 3], [0; 3])?;
    let logits = tape.scale(cos, 1.0 / temperature)?;
    Ok(tape.sigmoid(logits)?)
}

/// Trilinear upsampling of `s` to the segmentation grid.
pub fn upsample_heatmap(tape: &mut Tape, s: Var, target: [usize; 3]) -> Result<Var> {
    Ok(tape.resize_trilinear(s, target)?)
}
