//! Dataset manifests, image preprocessing, batching, and the synthetic
//! face generator.
//!
//! Manifest CSV format (UTF-8, header required): `path,kind,values` with
//! kind in {label, dist, av}. `label` carries a single class integer,
//! `dist` K semicolon-separated reals summing to 1, `av` an
//! `arousal;valence` pair, both in [-1,1]. Class names live in a sidecar
//! `classes.txt` next to the manifest, one per line.

pub mod netpbm;
pub mod synth;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{elem, resize_bilinear, Element, Tensor};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Label(usize),
    Distribution(Vec<f64>),
    Dimensional { arousal: f64, valence: f64 },
}

#[derive(Debug, Clone)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub target: Target,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub class_names: Vec<String>,
}

fn parse_target(kind: &str, values: &str, row: usize) -> Result<Target> {
    let data_err = |msg: String| Error::Data(format!("row {row}: {msg}"));
    match kind {
        "label" => {
            let k = values
                .trim()
                .parse::<usize>()
                .map_err(|_| data_err(format!("bad label '{values}'")))?;
            Ok(Target::Label(k))
        }
        "dist" => {
            let probs = values
                .split(';')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| data_err(format!("bad distribution '{values}'")))?;
            if probs.len() < 2 {
                return Err(data_err("distribution needs >= 2 entries".into()));
            }
            if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(data_err("distribution entries must be in [0,1]".into()));
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(data_err(format!("distribution sums to {sum}, not 1")));
            }
            Ok(Target::Distribution(probs))
        }
        "av" => {
            let parts: Vec<&str> = values.split(';').collect();
            if parts.len() != 2 {
                return Err(data_err(format!("av needs 'arousal;valence', got '{values}'")));
            }
            let arousal = parts[0]
                .trim()
                .parse::<f64>()
                .map_err(|_| data_err("bad arousal".into()))?;
            let valence = parts[1]
                .trim()
                .parse::<f64>()
                .map_err(|_| data_err("bad valence".into()))?;
            for v in [arousal, valence] {
                if !(-1.0..=1.0).contains(&v) {
                    return Err(data_err(format!("value {v} outside [-1,1]")));
                }
            }
            Ok(Target::Dimensional { arousal, valence })
        }
        other => Err(data_err(format!("unknown kind '{other}'"))),
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    if !path.exists() {
        return Err(Error::Data(format!("manifest not found: {}", path.display())));
    }
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("manifest read: {e}")))?;
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let rownum = i + 2; // header is row 1
        let row = row.map_err(|e| Error::Data(format!("row {rownum}: {e}")))?;
        if row.len() != 3 {
            return Err(Error::Data(format!(
                "row {rownum}: expected 3 columns, got {}",
                row.len()
            )));
        }
        let target = parse_target(&row[1], &row[2], rownum)?;
        let raw = PathBuf::from(&row[0]);
        let img_path = if raw.is_absolute() { raw } else { dir.join(raw) };
        if !img_path.exists() {
            return Err(Error::Data(format!(
                "row {rownum}: image {} does not exist",
                img_path.display()
            )));
        }
        records.push(ManifestRecord {
            path: img_path,
            target,
        });
    }
    let class_names = match std::fs::read_to_string(dir.join("classes.txt")) {
        Ok(s) => s.lines().map(str::to_string).collect(),
        Err(_) => Vec::new(),
    };
    Ok(Manifest {
        records,
        class_names,
    })
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{e}")))?;
    writer
        .write_record(["path", "kind", "values"])
        .map_err(|e| Error::Data(format!("{e}")))?;
    for rec in &manifest.records {
        let (kind, values) = match &rec.target {
            Target::Label(k) => ("label", k.to_string()),
            Target::Distribution(p) => (
                "dist",
                p.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
            Target::Dimensional { arousal, valence } => ("av", format!("{arousal};{valence}")),
        };
        writer
            .write_record([rec.path.to_string_lossy().as_ref(), kind, &values])
            .map_err(|e| Error::Data(format!("{e}")))?;
    }
    writer.flush()?;
    if !manifest.class_names.is_empty() {
        let dir = path.parent().unwrap_or(Path::new("."));
        std::fs::write(dir.join("classes.txt"), manifest.class_names.join("\n") + "\n")?;
    }
    Ok(())
}

/// Resize to `size`x`size`, convert channels (gray -> replicated RGB, or
/// RGB -> luma), then map [0,1] pixel values to [-1,1].
pub fn preprocess<E: Element>(
    img: &Tensor<E>,
    target_channels: usize,
    size: usize,
) -> Result<Tensor<E>> {
    let resized = resize_bilinear(img, size, size)?;
    let c = resized.shape()[0];
    let converted = match (c, target_channels) {
        (a, b) if a == b => resized,
        (1, 3) => {
            let mut data = Vec::with_capacity(3 * size * size);
            for _ in 0..3 {
                data.extend_from_slice(resized.data());
            }
            Tensor::new(vec![3, size, size], data)?
        }
        (3, 1) => {
            let hw = size * size;
            let d = resized.data();
            let data = (0..hw)
                .map(|i| {
                    elem::<E>(0.299) * d[i]
                        + elem::<E>(0.587) * d[hw + i]
                        + elem::<E>(0.114) * d[2 * hw + i]
                })
                .collect();
            Tensor::new(vec![1, size, size], data)?
        }
        (a, b) => {
            return Err(Error::Shape(format!(
                "cannot convert {a} channels to {b}"
            )))
        }
    };
    Ok(converted.map(|v| elem::<E>(2.0) * v - E::one()))
}

#[derive(Debug, Clone)]
pub enum TargetData {
    Labels { labels: Vec<usize>, classes: usize },
    Distributions(Vec<Vec<f64>>),
    Dimensional(Vec<[f64; 2]>),
}

impl TargetData {
    pub fn len(&self) -> usize {
        match self {
            TargetData::Labels { labels, .. } => labels.len(),
            TargetData::Distributions(rows) => rows.len(),
            TargetData::Dimensional(rows) => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Output arity the model head must have for these targets.
    pub fn arity(&self) -> usize {
        match self {
            TargetData::Labels { classes, .. } => *classes,
            TargetData::Distributions(rows) => rows.first().map_or(0, Vec::len),
            TargetData::Dimensional(_) => 2,
        }
    }

    pub fn is_categorical(&self) -> bool {
        !matches!(self, TargetData::Dimensional(_))
    }
}

/// A fully decoded, preprocessed in-memory dataset.
#[derive(Debug, Clone)]
pub struct Dataset<E: Element> {
    pub images: Vec<Tensor<E>>,
    pub targets: TargetData,
    pub class_names: Vec<String>,
}

impl<E: Element> Dataset<E> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stack the selected images into an [N,C,H,W] batch.
    pub fn image_batch(&self, indices: &[usize]) -> Result<Tensor<E>> {
        if indices.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let shape = self.images[indices[0]].shape().to_vec();
        let mut data = Vec::with_capacity(indices.len() * self.images[indices[0]].len());
        for &i in indices {
            if self.images[i].shape() != shape.as_slice() {
                return Err(Error::Shape("inconsistent image shapes in batch".into()));
            }
            data.extend_from_slice(self.images[i].data());
        }
        let mut full = vec![indices.len()];
        full.extend_from_slice(&shape);
        Tensor::new(full, data)
    }

    /// Target rows for the selected indices: one-hot/distribution [N,K] or
    /// arousal-valence [N,2].
    pub fn target_batch(&self, indices: &[usize]) -> Result<Tensor<E>> {
        let n = indices.len();
        match &self.targets {
            TargetData::Labels { labels, classes } => {
                let mut t = Tensor::zeros(&[n, *classes])?;
                for (row, &i) in indices.iter().enumerate() {
                    if labels[i] >= *classes {
                        return Err(Error::Data(format!(
                            "label {} out of range for {} classes",
                            labels[i], classes
                        )));
                    }
                    t.data_mut()[row * classes + labels[i]] = E::one();
                }
                Ok(t)
            }
            TargetData::Distributions(rows) => {
                let k = rows[indices[0]].len();
                let mut t = Tensor::zeros(&[n, k])?;
                for (row, &i) in indices.iter().enumerate() {
                    for (j, &p) in rows[i].iter().enumerate() {
                        t.data_mut()[row * k + j] = elem(p);
                    }
                }
                Ok(t)
            }
            TargetData::Dimensional(rows) => {
                let mut t = Tensor::zeros(&[n, 2])?;
                for (row, &i) in indices.iter().enumerate() {
                    t.data_mut()[row * 2] = elem(rows[i][0]);
                    t.data_mut()[row * 2 + 1] = elem(rows[i][1]);
                }
                Ok(t)
            }
        }
    }
}

/// Decode and preprocess every manifest record into memory.
pub fn load_dataset<E: Element>(
    manifest: &Manifest,
    target_channels: usize,
    size: usize,
) -> Result<Dataset<E>> {
    let mut images = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let img = netpbm::decode_image::<E>(&rec.path)?;
        images.push(preprocess(&img, target_channels, size)?);
    }
    let targets = targets_from_records(&manifest.records)?;
    Ok(Dataset {
        images,
        targets,
        class_names: manifest.class_names.clone(),
    })
}

fn targets_from_records(records: &[ManifestRecord]) -> Result<TargetData> {
    if records.is_empty() {
        return Err(Error::Data("manifest has no records".into()));
    }
    match &records[0].target {
        Target::Label(_) => {
            let labels: Vec<usize> = records
                .iter()
                .map(|r| match &r.target {
                    Target::Label(k) => Ok(*k),
                    _ => Err(Error::Data("mixed target kinds in manifest".into())),
                })
                .collect::<Result<_>>()?;
            let classes = labels.iter().max().unwrap() + 1;
            Ok(TargetData::Labels { labels, classes })
        }
        Target::Distribution(first) => {
            let k = first.len();
            let rows: Vec<Vec<f64>> = records
                .iter()
                .map(|r| match &r.target {
                    Target::Distribution(p) if p.len() == k => Ok(p.clone()),
                    Target::Distribution(_) => {
                        Err(Error::Data("inconsistent distribution lengths".into()))
                    }
                    _ => Err(Error::Data("mixed target kinds in manifest".into())),
                })
                .collect::<Result<_>>()?;
            Ok(TargetData::Distributions(rows))
        }
        Target::Dimensional { .. } => {
            let rows: Vec<[f64; 2]> = records
                .iter()
                .map(|r| match &r.target {
                    Target::Dimensional { arousal, valence } => Ok([*arousal, *valence]),
                    _ => Err(Error::Data("mixed target kinds in manifest".into())),
                })
                .collect::<Result<_>>()?;
            Ok(TargetData::Dimensional(rows))
        }
    }
}

/// Deterministically shuffled index batches for one epoch. The last
/// partial batch is kept.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}
