use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Distance of each class center from the origin, in units of `spread`-free
/// feature space.
const CENTER_SCALE: f64 = 3.0;

/// Row-major labelled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if dim == 0 || n_classes == 0 {
            return Err(Error::ConfigInvalid("dataset needs dim ≥ 1 and n_classes ≥ 1".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                found: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::ConfigInvalid(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Splits off the first `round(fraction · len)` rows as the training set.
    pub fn split(&self, fraction: f64) -> (Dataset, Dataset) {
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let cut = cut.min(self.len());
        let head = Dataset {
            features: self.features[..cut * self.dim].to_vec(),
            dim: self.dim,
            labels: self.labels[..cut].to_vec(),
            n_classes: self.n_classes,
        };
        let tail = Dataset {
            features: self.features[cut * self.dim..].to_vec(),
            dim: self.dim,
            labels: self.labels[cut..].to_vec(),
            n_classes: self.n_classes,
        };
        (head, tail)
    }
}

/// Parameters of the synthetic Gaussian-blob dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsConfig {
    pub seed: u64,
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub spread: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_per_class: 512,
            n_classes: 3,
            dim: 16,
            spread: 1.0,
        }
    }
}

impl BlobsConfig {
    pub fn generate(&self) -> Result<Dataset> {
        gen_blobs(self.seed, self.n_per_class, self.n_classes, self.dim, self.spread)
    }
}

/// Gaussian clusters around class centers `±s·e_{k mod dim}`.
///
/// Rows are interleaved by class (row `i` has label `i mod n_classes`) so any
/// prefix split keeps the classes balanced.
pub fn gen_blobs(
    seed: u64,
    n_per_class: usize,
    n_classes: usize,
    dim: usize,
    spread: f64,
) -> Result<Dataset> {
    if n_per_class == 0 || n_classes == 0 || dim == 0 || !(spread > 0.0) {
        return Err(Error::ConfigInvalid(
            "blobs need positive counts and spread".into(),
        ));
    }
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|k| {
            let lap = k / dim;
            let sign = if lap % 2 == 0 { 1.0 } else { -1.0 };
            let mut c = vec![0.0; dim];
            c[k % dim] = sign * CENTER_SCALE * (1 + lap / 2) as f64;
            c
        })
        .collect();
    let mut rng = RngStream::new(seed, 0).rng();
    let mut features = Vec::with_capacity(n_per_class * n_classes * dim);
    let mut labels = Vec::with_capacity(n_per_class * n_classes);
    for _ in 0..n_per_class {
        for (k, center) in centers.iter().enumerate() {
            for c in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(c + spread * z);
            }
            labels.push(k);
        }
    }
    Dataset::new(features, dim, labels, n_classes)
}

/// Reads `f0,…,f{d-1},label` rows. Any malformed row aborts with its line
/// number.
pub fn load_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let dim = header.len().saturating_sub(1);
    let header_ok = dim > 0
        && header.get(dim) == Some("label")
        && (0..dim).all(|j| header.get(j) == Some(format!("f{j}").as_str()));
    if !header_ok {
        return Err(Error::MalformedCsv {
            path: path.to_owned(),
            line: 1,
            message: "header must be f0,...,f{d-1},label".into(),
        });
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::MalformedCsv {
                path: path.to_owned(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |message: String| Error::MalformedCsv {
            path: path.to_owned(),
            line,
            message,
        };
        for j in 0..dim {
            let field = record.get(j).unwrap_or("").trim();
            let v: f64 = field
                .parse()
                .map_err(|_| malformed(format!("column f{j}: cannot parse `{field}` as float")))?;
            if !v.is_finite() {
                return Err(malformed(format!("column f{j}: non-finite value")));
            }
            features.push(v);
        }
        let field = record.get(dim).unwrap_or("").trim();
        let label: usize = field
            .parse()
            .map_err(|_| malformed(format!("label: cannot parse `{field}` as integer")))?;
        labels.push(label);
    }
    let n_classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, dim, labels, n_classes)
}

pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..data.dim)
        .map(|j| format!("f{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.len() {
        let row: Vec<String> = data.input(i).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{},{}", row.join(","), data.label(i))?;
    }
    out.flush()?;
    Ok(())
}
