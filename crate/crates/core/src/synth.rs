//! Synthetic joint-embedding tasks.
//!
//! Each class has a mean direction drawn uniformly on the unit sphere. Audio
//! rows are noisy copies of their class mean and each class gets one text
//! anchor, a noisier copy of the same mean. All randomness comes from a
//! ChaCha8 stream seeded with [`SynthSpec::seed`], so output is reproducible
//! bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{EmbeddingTable, RowMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub audio_noise: f64,
    pub anchor_noise: f64,
    pub seed: u64,
    /// Probability that a clip also receives a second, different class.
    pub multilabel_overlap: f64,
    /// Folds are assigned round-robin over clip index.
    pub folds: u32,
}

impl SynthSpec {
    /// 10 classes, dim 64, 100 clips per class, audio noise 0.3, anchor
    /// noise 0.6, seed 42, five folds.
    pub fn reference() -> Self {
        Self {
            n_classes: 10,
            dim: 64,
            per_class: 100,
            audio_noise: 0.3,
            anchor_noise: 0.6,
            seed: 42,
            multilabel_overlap: 0.0,
            folds: 5,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(format!("invalid synthetic spec: {msg}")));
        if self.n_classes == 0 {
            return bad("n_classes must be positive".into());
        }
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.per_class == 0 {
            return bad("per_class must be positive".into());
        }
        for (name, v) in [("audio_noise", self.audio_noise), ("anchor_noise", self.anchor_noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative real, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.multilabel_overlap) {
            return bad(format!(
                "multilabel_overlap must lie in [0, 1), got {}",
                self.multilabel_overlap
            ));
        }
        if self.multilabel_overlap > 0.0 && self.n_classes < 2 {
            return bad("multilabel_overlap needs at least two classes".into());
        }
        if self.folds == 0 {
            return bad("folds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub audio: EmbeddingTable,
    pub text: EmbeddingTable,
    /// True class means; ids are the class names.
    pub means: EmbeddingTable,
}

pub fn class_name(c: usize) -> String {
    format!("class_{c:02}")
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_f32(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn perturbed(rng: &mut ChaCha8Rng, mean: &[f64], sigma: f64) -> Vec<f64> {
    let g = gaussian(rng, mean.len());
    mean.iter().zip(g).map(|(m, g)| m + sigma * g).collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names: Vec<String> = (0..spec.n_classes).map(class_name).collect();

    let means: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| loop {
            let g = gaussian(&mut rng, spec.dim);
            let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                break g.into_iter().map(|x| x / n).collect();
            }
        })
        .collect();

    let mut text_rows = Vec::with_capacity(spec.n_classes * spec.dim);
    for mu in &means {
        text_rows.extend(unit_f32(&perturbed(&mut rng, mu, spec.anchor_noise)));
    }

    let n_audio = spec.n_classes * spec.per_class;
    let mut audio_rows = Vec::with_capacity(n_audio * spec.dim);
    let mut audio_meta = Vec::with_capacity(n_audio);
    for (c, mu) in means.iter().enumerate() {
        for j in 0..spec.per_class {
            let i = c * spec.per_class + j;
            let mut sample = perturbed(&mut rng, mu, spec.audio_noise);
            let mut labels = vec![names[c].clone()];
            if spec.multilabel_overlap > 0.0 && rng.random::<f64>() < spec.multilabel_overlap {
                let mut other = rng.random_range(0..spec.n_classes - 1);
                if other >= c {
                    other += 1;
                }
                let second = perturbed(&mut rng, &means[other], spec.audio_noise);
                for (s, t) in sample.iter_mut().zip(second) {
                    *s = 0.5 * (*s + t);
                }
                labels.push(names[other].clone());
            }
            audio_rows.extend(unit_f32(&sample));
            audio_meta.push(
                RowMeta::new(format!("clip_{i:05}"))
                    .with_labels(labels)
                    .with_fold((i as u64 % u64::from(spec.folds)) as u32),
            );
        }
    }

    let text_meta = names
        .iter()
        .map(|n| RowMeta::new(n.clone()).with_labels([n.clone()]))
        .collect();
    let mean_rows: Vec<f32> = means.iter().flat_map(|m| unit_f32(m)).collect();
    let mean_meta = names.iter().map(RowMeta::new).collect();

    Ok(SynthData {
        audio: EmbeddingTable::new(spec.dim, audio_rows, audio_meta)?,
        text: EmbeddingTable::new(spec.dim, text_rows, text_meta)?,
        means: EmbeddingTable::new(spec.dim, mean_rows, mean_meta)?,
    })
}
