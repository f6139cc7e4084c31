//! Dataset loading, synthesis and client partitioning.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use crate::error::{Error, Result};
use crate::numerics::{sample_gaussian, RngStream};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Feature vectors with class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Format {
                field: "labels".into(),
                message: format!(
                    "feature count {} does not match label count {}",
                    features.len(),
                    labels.len()
                ),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Format {
                field: "labels".into(),
                message: format!("label {bad} out of range for {num_classes} classes"),
            });
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Dump as CSV with header `label,f0..f{d-1}`.
    pub fn dump_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        let dim = self.input_dim();
        write!(out, "label")?;
        for i in 0..dim {
            write!(out, ",f{i}")?;
        }
        writeln!(out)?;
        for (x, label) in self.features.iter().zip(&self.labels) {
            write!(out, "{label}")?;
            for v in x {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn read_u32(reader: &mut impl Read, field: &str) -> Result<u32> {
    reader.read_u32::<BigEndian>().map_err(|_| Error::Format {
        field: field.into(),
        message: "file truncated".into(),
    })
}

/// Parse a big-endian IDX image/label file pair. Pixels are scaled to [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut images = BufReader::new(File::open(images_path)?);
    let magic = read_u32(&mut images, "images magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            field: "images magic".into(),
            message: format!("expected 0x{IDX_IMAGES_MAGIC:08x}, got 0x{magic:08x}"),
        });
    }
    let count = read_u32(&mut images, "images count")? as usize;
    let rows = read_u32(&mut images, "images rows")? as usize;
    let cols = read_u32(&mut images, "images cols")? as usize;
    let dim = rows * cols;
    let mut pixels = vec![0u8; count * dim];
    images.read_exact(&mut pixels).map_err(|_| Error::Format {
        field: "images data".into(),
        message: format!("expected {} pixel bytes", count * dim),
    })?;
    let features: Vec<Vec<f64>> = pixels
        .chunks_exact(dim)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();

    let mut labels_file = BufReader::new(File::open(labels_path)?);
    let magic = read_u32(&mut labels_file, "labels magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            field: "labels magic".into(),
            message: format!("expected 0x{IDX_LABELS_MAGIC:08x}, got 0x{magic:08x}"),
        });
    }
    let label_count = read_u32(&mut labels_file, "labels count")? as usize;
    if label_count != count {
        return Err(Error::Format {
            field: "labels count".into(),
            message: format!("images have {count} items but labels have {label_count}"),
        });
    }
    let mut raw = vec![0u8; label_count];
    labels_file.read_exact(&mut raw).map_err(|_| Error::Format {
        field: "labels data".into(),
        message: format!("expected {label_count} label bytes"),
    })?;
    let labels: Vec<usize> = raw.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, labels, num_classes)
}

/// Class centers drawn so the expected pairwise center distance is
/// `separation`; train and test splits must sample from the same centers.
pub fn synth_centers(
    num_classes: usize,
    input_dim: usize,
    separation: f64,
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    if num_classes < 2 || input_dim == 0 {
        return Err(Error::Parameter(
            "synthetic data needs num_classes >= 2 and input_dim >= 1".into(),
        ));
    }
    if !separation.is_finite() || separation <= 0.0 {
        return Err(Error::Parameter(format!(
            "separation must be positive, got {separation}"
        )));
    }
    // E||c_i - c_j||^2 = 2 * dim * center_var = separation^2.
    let center_var = separation * separation / (2.0 * input_dim as f64);
    (0..num_classes)
        .map(|_| Ok(sample_gaussian(input_dim, 0.0, center_var, rng)?.into_vec()))
        .collect()
}

/// `n` points with unit within-class variance around the given centers,
/// labels assigned round-robin.
pub fn synth_from_centers(
    centers: &[Vec<f64>],
    n: usize,
    rng: &mut RngStream,
) -> Result<Dataset> {
    let num_classes = centers.len();
    let input_dim = centers.first().map_or(0, Vec::len);
    if num_classes < 2 || input_dim == 0 {
        return Err(Error::Parameter(
            "need at least two non-empty class centers".into(),
        ));
    }
    if n < num_classes {
        return Err(Error::Parameter(format!(
            "need at least one point per class: n = {n}, classes = {num_classes}"
        )));
    }
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        let noise = sample_gaussian(input_dim, 0.0, 1.0, rng)?;
        let point = centers[class]
            .iter()
            .zip(noise.as_slice())
            .map(|(c, e)| c + e)
            .collect();
        features.push(point);
        labels.push(class);
    }
    Dataset::new(features, labels, num_classes)
}

/// Gaussian class blobs: fresh centers plus one sampled split. Callers that
/// need matching train/test splits should use [`synth_centers`] once and
/// [`synth_from_centers`] per split instead.
pub fn synth_dataset(
    num_classes: usize,
    input_dim: usize,
    n: usize,
    separation: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    let centers = synth_centers(num_classes, input_dim, separation, rng)?;
    synth_from_centers(&centers, n, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionScheme {
    Iid,
    /// Sort by label, cut into `K * shards_per_client` contiguous shards, deal
    /// `shards_per_client` random shards to each client.
    NonIid,
}

impl std::fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionScheme::Iid => write!(f, "iid"),
            PartitionScheme::NonIid => write!(f, "non-iid"),
        }
    }
}

fn subset(ds: &Dataset, indices: &[usize]) -> Dataset {
    Dataset {
        features: indices.iter().map(|&i| ds.features[i].clone()).collect(),
        labels: indices.iter().map(|&i| ds.labels[i]).collect(),
        num_classes: ds.num_classes,
    }
}

/// Split `ds` into `k` client datasets.
pub fn partition(
    ds: &Dataset,
    k: usize,
    scheme: PartitionScheme,
    shards_per_client: usize,
    rng: &mut RngStream,
) -> Result<Vec<Dataset>> {
    if k == 0 || k > ds.len() {
        return Err(Error::Config(format!(
            "cannot split {} examples across {k} clients",
            ds.len()
        )));
    }
    match scheme {
        PartitionScheme::Iid => {
            let mut indices: Vec<usize> = (0..ds.len()).collect();
            rng.shuffle(&mut indices);
            let chunk = ds.len() / k;
            let mut out = Vec::with_capacity(k);
            for c in 0..k {
                let start = c * chunk;
                // Remainder goes to the last client.
                let end = if c + 1 == k { ds.len() } else { start + chunk };
                out.push(subset(ds, &indices[start..end]));
            }
            Ok(out)
        }
        PartitionScheme::NonIid => {
            if shards_per_client == 0 {
                return Err(Error::Config("shards_per_client must be positive".into()));
            }
            let mut indices: Vec<usize> = (0..ds.len()).collect();
            indices.sort_by_key(|&i| ds.labels[i]);
            let num_shards = k * shards_per_client;
            if num_shards > ds.len() {
                return Err(Error::Config(format!(
                    "{num_shards} shards requested but only {} examples",
                    ds.len()
                )));
            }
            let shard_size = ds.len() / num_shards;
            let mut shards: Vec<&[usize]> = Vec::with_capacity(num_shards);
            for s in 0..num_shards {
                let start = s * shard_size;
                let end = if s + 1 == num_shards {
                    ds.len()
                } else {
                    start + shard_size
                };
                shards.push(&indices[start..end]);
            }
            let mut order: Vec<usize> = (0..num_shards).collect();
            rng.shuffle(&mut order);
            let mut out = Vec::with_capacity(k);
            for c in 0..k {
                let mut idx: Vec<usize> = order[c * shards_per_client..(c + 1) * shards_per_client]
                    .iter()
                    .flat_map(|&s| shards[s].iter().copied())
                    .collect();
                idx.sort_unstable();
                out.push(subset(ds, &idx));
            }
            Ok(out)
        }
    }
}
