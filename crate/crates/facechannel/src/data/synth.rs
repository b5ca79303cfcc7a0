//! Deterministic synthetic expression-image generator.
//!
//! Each sample is a parametric face cartoon: an ellipse head, two eyes
//! whose openness is driven by e in [0,1], and a mouth arc whose curvature
//! is driven by c in [-1,1], plus seeded pixel noise. Labels are exact
//! functions of the generation parameters: arousal = 2e-1, valence = c;
//! categorical tasks bin (e,c) into an e_bins x c_bins grid.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{netpbm, Manifest, ManifestRecord, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthTask {
    /// K = e_bins * c_bins classes; class index = e_bin * c_bins + c_bin.
    Categorical { e_bins: usize, c_bins: usize },
    Dimensional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub task: SynthTask,
    pub image_size: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be >= 1".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config("image_size must be >= 8".into()));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(Error::Config("noise_level must be in [0,1)".into()));
        }
        if let SynthTask::Categorical { e_bins, c_bins } = self.task {
            if e_bins == 0 || c_bins == 0 {
                return Err(Error::Config("bin counts must be positive".into()));
            }
        }
        Ok(())
    }
}

// Face layout in normalized [0,1] coordinates.
const HEAD_CENTER: (f64, f64) = (0.5, 0.52);
const HEAD_RADII: (f64, f64) = (0.40, 0.46);
const EYE_Y: f64 = 0.38;
const EYE_X: (f64, f64) = (0.34, 0.66);
const EYE_RX: f64 = 0.095;
const MOUTH_Y: f64 = 0.72;
const MOUTH_HALF_WIDTH: f64 = 0.22;
const MOUTH_THICKNESS: f64 = 0.035;
const MOUTH_CURVE: f64 = 0.08;

/// Bounding box (y0, y1, x0, x1) in pixels of the mouth area.
pub fn mouth_region(size: usize) -> (usize, usize, usize, usize) {
    let s = size as f64;
    (
        (0.60 * s) as usize,
        (0.85 * s) as usize,
        (0.22 * s) as usize,
        (0.78 * s) as usize,
    )
}

/// Bounding box (y0, y1, x0, x1) in pixels of the eye area.
pub fn eye_region(size: usize) -> (usize, usize, usize, usize) {
    let s = size as f64;
    (
        (0.25 * s) as usize,
        (0.52 * s) as usize,
        (0.18 * s) as usize,
        (0.82 * s) as usize,
    )
}

/// Render one face with eye openness `e` in [0,1] and mouth curvature `c`
/// in [-1,1] as a [1,S,S] grayscale tensor in [0,1].
pub fn render_face(size: usize, e: f64, c: f64, noise: f64, rng: &mut SeededRng) -> Tensor<f32> {
    let s = size as f64;
    let mut img = vec![0.05f64; size * size];

    let in_ellipse = |x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64| {
        let dx = (x - cx) / rx;
        let dy = (y - cy) / ry;
        dx * dx + dy * dy <= 1.0
    };

    for py in 0..size {
        for px in 0..size {
            // Pixel center in normalized coordinates.
            let x = (px as f64 + 0.5) / s;
            let y = (py as f64 + 0.5) / s;
            let idx = py * size + px;

            if in_ellipse(x, y, HEAD_CENTER.0, HEAD_CENTER.1, HEAD_RADII.0, HEAD_RADII.1) {
                img[idx] = 0.75;
            } else {
                continue;
            }

            let eye_ry = 0.02 + 0.10 * e;
            if in_ellipse(x, y, EYE_X.0, EYE_Y, EYE_RX, eye_ry)
                || in_ellipse(x, y, EYE_X.1, EYE_Y, EYE_RX, eye_ry)
            {
                img[idx] = 0.15;
            }

            // Mouth arc: t spans [-1,1] across the mouth width; positive
            // curvature lowers the center and raises the corners (a smile
            // in image coordinates, where y grows downward).
            let t = (x - 0.5) / MOUTH_HALF_WIDTH;
            if t.abs() <= 1.0 {
                let arc_y = MOUTH_Y + c * MOUTH_CURVE * (0.5 - t * t);
                if (y - arc_y).abs() < MOUTH_THICKNESS {
                    img[idx] = 0.15;
                }
            }
        }
    }

    if noise > 0.0 {
        for v in &mut img {
            *v = (*v + noise * (rng.next_f64() * 2.0 - 1.0)).clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![1, size, size], img.into_iter().map(|v| v as f32).collect()).unwrap()
}

/// Draw (e, c) for sample `i`, stratified so the parameter space (and for
/// categorical tasks every class) is covered evenly.
fn sample_params(spec: &SynthSpec, i: usize, rng: &mut SeededRng) -> (f64, f64, Option<usize>) {
    match spec.task {
        SynthTask::Categorical { e_bins, c_bins } => {
            let k = e_bins * c_bins;
            let class = i % k;
            let (eb, cb) = (class / c_bins, class % c_bins);
            // Sample inside the bin, away from its edges.
            let e = (eb as f64 + 0.1 + 0.8 * rng.next_f64()) / e_bins as f64;
            let c01 = (cb as f64 + 0.1 + 0.8 * rng.next_f64()) / c_bins as f64;
            (e, 2.0 * c01 - 1.0, Some(class))
        }
        SynthTask::Dimensional => {
            // floor(sqrt(n)) so the g*g grid is fully covered by n samples.
            let g = ((spec.n_samples as f64).sqrt().floor() as usize).max(1);
            let (eb, cb) = (i % g, (i / g) % g);
            let e = (eb as f64 + rng.next_f64()) / g as f64;
            let c01 = (cb as f64 + rng.next_f64()) / g as f64;
            (e, 2.0 * c01 - 1.0, None)
        }
    }
}

/// Render `spec.n_samples` faces into `out_dir` as PGM files plus a
/// `manifest.csv` and `classes.txt`. Fully deterministic per seed: each
/// sample's randomness comes from its own sub-stream of `spec.seed`.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut records = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let mut rng = SeededRng::from_seed_stream(spec.seed, i as u64);
        let (e, c, class) = sample_params(spec, i, &mut rng);
        let img = render_face(spec.image_size, e, c, spec.noise_level, &mut rng);
        let fname = format!("img_{i:05}.pgm");
        netpbm::encode_image(&img, &out_dir.join(&fname))?;
        let target = match class {
            Some(k) => Target::Label(k),
            None => Target::Dimensional {
                arousal: 2.0 * e - 1.0,
                valence: c,
            },
        };
        records.push(ManifestRecord {
            path: fname.into(),
            target,
        });
    }
    let class_names = match spec.task {
        SynthTask::Categorical { e_bins, c_bins } => (0..e_bins)
            .flat_map(|eb| (0..c_bins).map(move |cb| format!("e{eb}c{cb}")))
            .collect(),
        SynthTask::Dimensional => Vec::new(),
    };
    let manifest = Manifest {
        records,
        class_names,
    };
    save_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    // Reload so record paths are resolved against the output directory.
    super::load_manifest(&out_dir.join("manifest.csv"))
}

use super::save_manifest;
