use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::vocab::{NO_FINDING, NUM_CLASSES};
use super::LabeledSample;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Per-disease prevalence among abnormal images, in vocabulary order:
/// common findings (Infiltration, Effusion) high, Hernia rare.
pub const DEFAULT_DISEASE_PROFILE: [f64; 14] = [
    0.20, 0.12, 0.10, 0.08, 0.25, 0.08, 0.08, 0.05, 0.30, 0.12, 0.12, 0.08, 0.06, 0.10,
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Square image side in pixels.
    pub size: usize,
    /// Probability that a sample carries no disease.
    pub no_finding_prob: f64,
    /// Independent per-disease probability for abnormal samples.
    pub disease_prob: [f64; 14],
    /// Standard deviation of the additive background noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            no_finding_prob: 0.5,
            disease_prob: DEFAULT_DISEASE_PROFILE,
            noise: 0.05,
        }
    }
}

/// Centres `(y, x)` of the two discs marking `class`: one in the left half
/// and its mirror image, so horizontal flips keep labels valid. Classes sit
/// on a 7-row by 2-column lattice of the left half.
pub fn disc_centres(class: usize, size: usize) -> [(f64, f64); 2] {
    let s = size as f64;
    let y = (class / 2) as f64 * s / 7.0 + s / 14.0;
    let x = s * (0.1 + 0.22 * (class % 2) as f64);
    [(y, x), (y, s - 1.0 - x)]
}

pub fn disc_radius(size: usize) -> f64 {
    size as f64 * 0.045
}

fn draw_labels(cfg: &SynthConfig, r: &mut rng::Rng) -> Vec<f64> {
    let mut labels = vec![0.0; NUM_CLASSES];
    if r.random::<f64>() < cfg.no_finding_prob {
        labels[NO_FINDING] = 1.0;
        return labels;
    }
    for (l, p) in labels.iter_mut().zip(cfg.disease_prob) {
        if r.random::<f64>() < p {
            *l = 1.0;
        }
    }
    if labels.iter().all(|v| *v == 0.0) {
        labels[r.random_range(0..NO_FINDING)] = 1.0;
    }
    labels
}

fn render(cfg: &SynthConfig, labels: &[f64], r: &mut rng::Rng) -> Tensor {
    let n = cfg.size;
    let noise = Normal::new(0.0, cfg.noise).expect("noise is finite and non-negative");
    let base = 0.15 + 0.1 * r.random::<f64>();
    let mut plane: Vec<f64> = (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64, (i % n) as f64);
            // Soft vignette loosely resembling a chest silhouette.
            let dy = y / n as f64 - 0.5;
            let dx = x / n as f64 - 0.5;
            base + 0.1 * (1.0 - 2.0 * (dx * dx + dy * dy)) + noise.sample(r)
        })
        .collect();
    let radius = disc_radius(n);
    for class in (0..NO_FINDING).filter(|c| labels[*c] > 0.5) {
        let brightness = 0.5 + 0.3 * r.random::<f64>();
        for (cy, cx) in disc_centres(class, n) {
            for (i, v) in plane.iter_mut().enumerate() {
                let (y, x) = ((i / n) as f64, (i % n) as f64);
                if (y - cy).powi(2) + (x - cx).powi(2) <= radius * radius {
                    *v += brightness;
                }
            }
        }
    }
    for v in &mut plane {
        *v = v.clamp(0.0, 1.0);
    }
    let mut data = plane.clone();
    data.extend_from_slice(&plane);
    data.extend_from_slice(&plane);
    Tensor::new(vec![3, n, n], data).expect("plane replicated to 3 channels")
}

/// Deterministic planted-feature dataset with default settings.
pub fn synthesize_dataset(n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    synthesize_with(n, seed, &SynthConfig::default())
}

/// `n` grayscale images in which each disease label is marked by a pair of
/// bright discs at a class-specific location. Sample `i` depends only on
/// `(seed, i)`.
pub fn synthesize_with(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<LabeledSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic dataset needs at least one sample".into()));
    }
    if cfg.size < 16 {
        return Err(Error::InvalidArgument(format!("synthetic image size {} below 16", cfg.size)));
    }
    if !(0.0..=1.0).contains(&cfg.no_finding_prob) || cfg.disease_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument("synthetic label probabilities must lie in [0, 1]".into()));
    }
    if !cfg.noise.is_finite() || cfg.noise < 0.0 {
        return Err(Error::InvalidArgument(format!("noise level {} must be non-negative", cfg.noise)));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::indexed(seed, "synth", i as u64);
            let labels = draw_labels(cfg, &mut r);
            let pixels = render(cfg, &labels, &mut r);
            LabeledSample {
                image_id: format!("synth_{seed}_{i:06}.png"),
                pixels,
                labels,
            }
        })
        .collect())
}
