//! Lesion-aware patch sampling.
//!
//! Each batch item picks a training case uniformly. With probability
//! `lesion_prob` the patch is centred on a uniformly chosen lesion voxel
//! (shifted to stay inside the volume); otherwise its origin is uniform.

use lesionseg_autodiff::{Real, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Case;
use crate::error::{Error, Result};
use crate::model::crop_patch;

/// One modality tensor `[B, 1, D, H, W]` per channel plus the matching mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Tensor>,
    pub mask: Tensor,
}

pub struct Sampler<'a> {
    cases: &'a [Case],
    foreground: Vec<Vec<usize>>,
    patch: [usize; 3],
    lesion_prob: f64,
    rng: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    pub fn new(cases: &'a [Case], patch: [usize; 3], lesion_prob: f64, rng: ChaCha8Rng) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::Invalid("no training cases".into()));
        }
        for c in cases {
            if (0..3).any(|a| c.volume.extents[a] < patch[a]) {
                return Err(Error::Invalid(format!(
                    "{}: extents {:?} smaller than patch {patch:?}",
                    c.volume.case_id, c.volume.extents
                )));
            }
        }
        let foreground = cases
            .iter()
            .map(|c| (0..c.mask.data.len()).filter(|&i| c.mask.data[i] == 1).collect())
            .collect();
        Ok(Self {
            cases,
            foreground,
            patch,
            lesion_prob,
            rng,
        })
    }

    fn origin(&mut self, case: usize) -> [usize; 3] {
        let ext = self.cases[case].volume.extents;
        let patch = self.patch;
        let fg = &self.foreground[case];
        if !fg.is_empty() && self.rng.random_bool(self.lesion_prob) {
            let v = fg[self.rng.random_range(0..fg.len())];
            let centre = [v / (ext[1] * ext[2]), (v / ext[2]) % ext[1], v % ext[2]];
            std::array::from_fn(|a| centre[a].saturating_sub(patch[a] / 2).min(ext[a] - patch[a]))
        } else {
            std::array::from_fn(|a| self.rng.random_range(0..=ext[a] - patch[a]))
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Result<Batch> {
        let modalities = self.cases[0].volume.channels.len();
        let mut inputs: Vec<Vec<Real>> = vec![Vec::new(); modalities];
        let mut mask = Vec::new();
        for _ in 0..size {
            let case = self.rng.random_range(0..self.cases.len());
            let origin = self.origin(case);
            let c = &self.cases[case];
            let ext = c.volume.extents;
            for (m, ch) in c.volume.channels.iter().enumerate() {
                inputs[m].extend(crop_patch(&ch.data, ext, origin, self.patch)?.into_data());
            }
            let mask_real: Vec<Real> = c.mask.data.iter().map(|&v| Real::from(v)).collect();
            mask.extend(crop_patch(&mask_real, ext, origin, self.patch)?.into_data());
        }
        let shape = vec![size, 1, self.patch[0], self.patch[1], self.patch[2]];
        Ok(Batch {
            inputs: inputs
                .into_iter()
                .map(|d| Tensor::new(shape.clone(), d))
                .collect::<std::result::Result<_, _>>()?,
            mask: Tensor::new(shape, mask)?,
        })
    }
}

/// The whole of each case as a batch of one (for evaluation).
pub fn full_case_batch(case: &Case) -> Result<Batch> {
    let [d, h, w] = case.volume.extents;
    let shape = vec![1, 1, d, h, w];
    Ok(Batch {
        inputs: case
            .volume
            .channels
            .iter()
            .map(|c| Tensor::new(shape.clone(), c.data.clone()))
            .collect::<std::result::Result<_, _>>()?,
        mask: Tensor::new(shape, case.mask.data.iter().map(|&v| Real::from(v)).collect())?,
    })
}
