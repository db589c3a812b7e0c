//! The full network: backbone, similarity head and optional refiner, with
//! the parameters and text embedding they share.

use lesionseg_autodiff::{sigmoid, Real, Tape, Tensor, Var};

use crate::backbone::Backbone;
use crate::config::RunConfig;
use crate::data::Volume;
use crate::error::{Error, Result};
use crate::guidance::{self, TextEmbedding};
use crate::params::{Bound, Checkpoint, ParamStore};
use crate::refiner::{self, RefineOutput};
use crate::rng;

/// Name under which the text embedding travels in a checkpoint.
pub const TEXT_TENSOR: &str = "text/embedding";

pub struct Model {
    pub config: RunConfig,
    pub backbone: Backbone,
    pub text: TextEmbedding,
    pub params: ParamStore,
}

/// Graph nodes of one forward pass.
pub struct Forward {
    /// Fused bottleneck features.
    pub bottleneck: Var,
    /// Similarity heatmap at bottleneck resolution.
    pub heatmap: Var,
    /// Top-level decoder features.
    pub features: Var,
    pub y_base: Var,
    pub refined: Option<RefineOutput>,
}

impl Forward {
    /// Blended logits when the refiner ran, base logits otherwise.
    pub fn logits(&self) -> Var {
        self.refined.as_ref().map_or(self.y_base, |r| r.y)
    }
}

/// Per-voxel outputs for one volume.
pub struct Prediction {
    pub probabilities: Vec<Real>,
    /// Heatmap upsampled to the volume grid.
    pub heatmap: Vec<Real>,
}

impl Model {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(config.model.clone())?;
        let text = match &config.guidance.embedding_file {
            Some(path) => TextEmbedding::load(path)?,
            None => TextEmbedding::pseudo(config.guidance.embedding_seed, config.model.text_dim)?,
        };
        if text.dim() != config.model.text_dim {
            return Err(Error::config(format!(
                "model.text_dim is {} but the embedding has {} entries",
                config.model.text_dim,
                text.dim()
            )));
        }
        let mut params = ParamStore::new();
        let mut rng = rng::stream(config.seed, rng::STREAM_INIT, 0);
        backbone.init_params(&mut params, &mut rng);
        let c = &config.model;
        guidance::init_params(&mut params, &mut rng, c.channels(c.levels - 1), c.text_dim);
        Ok(Self {
            config: config.clone(),
            backbone,
            text,
            params,
        })
    }

    pub fn refiner_attached(&self) -> bool {
        self.params.contains(refiner::GATE)
    }

    /// Instantiates the refiner with `γ = gate_init`.
    pub fn attach_refiner(&mut self) -> Result<()> {
        if self.refiner_attached() {
            return Ok(());
        }
        let mut rng = rng::stream(self.config.seed, rng::STREAM_REFINER, 0);
        refiner::init_params(
            &mut self.params,
            &mut rng,
            &self.config.refiner,
            self.config.model.channels(0),
            self.config.model.text_dim,
        )
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape, |_| true)
    }

    /// `inputs` holds one `[B, 1, D, H, W]` tensor per modality.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, inputs: &[Tensor]) -> Result<Forward> {
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let (skips, bottleneck) = self.backbone.encode(tape, bound, &vars)?;
        let heatmap = guidance::similarity_head(
            tape,
            bound,
            bottleneck,
            &self.text,
            self.config.guidance.temperature as Real,
        )?;
        let features = self.backbone.decode(tape, bound, &skips, bottleneck)?;
        let y_base = self.backbone.head(tape, bound, features)?;
        let refined = if self.refiner_attached() {
            Some(refiner::refine(
                tape,
                bound,
                &self.backbone,
                &self.config.refiner,
                features,
                y_base,
                &self.text,
            )?)
        } else {
            None
        };
        Ok(Forward {
            bottleneck,
            heatmap,
            features,
            y_base,
            refined,
        })
    }

    /// Probabilities and upsampled heatmap over a whole volume, tiled with
    /// patches of the model's input extents (the last tile on each axis is
    /// flush with the far edge).
    pub fn predict(&self, volume: &Volume) -> Result<Prediction> {
        let patch = self.config.model.input_extents;
        let ext = volume.extents;
        if volume.channels.len() != self.config.model.modalities {
            return Err(Error::Invalid(format!(
                "{}: {} channels, model expects {}",
                volume.case_id,
                volume.channels.len(),
                self.config.model.modalities
            )));
        }
        if (0..3).any(|a| ext[a] < patch[a]) {
            return Err(Error::Invalid(format!(
                "{}: volume {ext:?} is smaller than the model patch {patch:?}",
                volume.case_id
            )));
        }
        let starts: [Vec<usize>; 3] = std::array::from_fn(|a| {
            let mut s: Vec<usize> = (0..ext[a]).step_by(patch[a]).filter(|&o| o + patch[a] <= ext[a]).collect();
            if s.last().map_or(true, |&o| o + patch[a] < ext[a]) {
                s.push(ext[a] - patch[a]);
            }
            s
        });
        let n = volume.voxels();
        let mut probabilities = vec![0.0; n];
        let mut heatmap = vec![0.0; n];
        for &z0 in &starts[0] {
            for &y0 in &starts[1] {
                for &x0 in &starts[2] {
                    let origin = [z0, y0, x0];
                    let inputs = volume
                        .channels
                        .iter()
                        .map(|c| crop(&c.data, ext, origin, patch))
                        .collect::<Result<Vec<_>>>()?;
                    let mut tape = Tape::new();
                    let bound = self.params.bind(&mut tape, |_| false);
                    let fw = self.forward(&mut tape, &bound, &inputs)?;
                    let up = guidance::upsample_heatmap(&mut tape, fw.heatmap, patch)?;
                    paste(&mut probabilities, ext, origin, patch, tape.value(fw.logits()).data(), sigmoid);
                    paste(&mut heatmap, ext, origin, patch, tape.value(up).data(), |v| v);
                }
            }
        }
        Ok(Prediction {
            probabilities,
            heatmap,
        })
    }

    pub fn to_checkpoint(&self, state: String) -> Checkpoint {
        let mut tensors = self.params.clone();
        tensors.insert(TEXT_TENSOR, self.text.as_tensor());
        Checkpoint {
            config: self.config.clone(),
            state,
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Model::new_without_embedding(&ck.config)?;
        let mut params = ck.tensors.clone();
        let text = params.get(TEXT_TENSOR)?.clone();
        params = {
            let mut p = ParamStore::new();
            for (k, v) in params.iter().filter(|(k, _)| k.as_str() != TEXT_TENSOR) {
                p.insert(k.clone(), v.clone());
            }
            p
        };
        for name in model.params.names() {
            let expected = model.params.get(name)?.shape();
            let found = params.get(name)?.shape();
            if expected != found {
                return Err(Error::Invalid(format!(
                    "checkpoint parameter `{name}` has shape {found:?}, expected {expected:?}"
                )));
            }
        }
        model.text = TextEmbedding {
            vector: text.into_data(),
            source: guidance::EmbeddingSource::Pseudo(ck.config.guidance.embedding_seed),
        };
        model.params = params;
        Ok(model)
    }

    /// Like [`Model::new`] but with a placeholder embedding, for restoring
    /// checkpoints whose embedding file may no longer exist.
    fn new_without_embedding(config: &RunConfig) -> Result<Self> {
        let mut c = config.clone();
        c.guidance.embedding_file = None;
        let mut model = Model::new(&c)?;
        model.config = config.clone();
        Ok(model)
    }
}

fn crop(data: &[Real], ext: [usize; 3], origin: [usize; 3], size: [usize; 3]) -> Result<Tensor> {
    let mut out = Vec::with_capacity(size.iter().product());
    for z in 0..size[0] {
        for y in 0..size[1] {
            let start = ((origin[0] + z) * ext[1] + origin[1] + y) * ext[2] + origin[2];
            out.extend_from_slice(&data[start..start + size[2]]);
        }
    }
    Ok(Tensor::new(vec![1, 1, size[0], size[1], size[2]], out)?)
}

fn paste(dst: &mut [Real], ext: [usize; 3], origin: [usize; 3], size: [usize; 3], src: &[Real], f: impl Fn(Real) -> Real) {
    for z in 0..size[0] {
        for y in 0..size[1] {
            let d = ((origin[0] + z) * ext[1] + origin[1] + y) * ext[2] + origin[2];
            let s = (z * size[1] + y) * size[2];
            for x in 0..size[2] {
                dst[d + x] = f(src[s + x]);
            }
        }
    }
}

/// Crops a `[1, 1, ...]` patch of `data` (grid `ext`) at `origin`.
pub fn crop_patch(data: &[Real], ext: [usize; 3], origin: [usize; 3], size: [usize; 3]) -> Result<Tensor> {
    crop(data, ext, origin, size)
}
