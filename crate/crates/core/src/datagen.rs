//! Datasets, the IDX archive reader and non-i.i.d. partitioning across
//! edge servers.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const FTDS_MAGIC: &[u8; 4] = b"FTDS";
const FTDS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: unexpected magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated file ({source})")]
    Truncated { path: String, source: io::Error },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Row-major feature matrix with one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(DataError::Invalid("input_dim and num_classes must be positive".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(DataError::Invalid(format!(
                "{} feature values for {} samples of dimension {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Invalid(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            input_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Writes the columnar `FTDS` format: header, one little-endian `f64`
    /// column per feature, then `u32` labels.
    pub fn write_ftds<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(FTDS_MAGIC)?;
        out.write_u32::<LittleEndian>(FTDS_VERSION)?;
        out.write_u64::<LittleEndian>(self.len() as u64)?;
        out.write_u64::<LittleEndian>(self.input_dim as u64)?;
        out.write_u64::<LittleEndian>(self.num_classes as u64)?;
        for j in 0..self.input_dim {
            for i in 0..self.len() {
                out.write_f64::<LittleEndian>(self.features[i * self.input_dim + j])?;
            }
        }
        for &l in &self.labels {
            out.write_u32::<LittleEndian>(l as u32)?;
        }
        Ok(())
    }

    pub fn read_ftds<R: Read>(mut input: R) -> Result<Self> {
        let trunc = |source| DataError::Truncated {
            path: "<ftds>".into(),
            source,
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(trunc)?;
        if &magic != FTDS_MAGIC {
            return Err(DataError::Invalid(format!("unexpected magic {magic:?}")));
        }
        let version = input.read_u32::<LittleEndian>().map_err(trunc)?;
        if version != FTDS_VERSION {
            return Err(DataError::Invalid(format!("unsupported FTDS version {version}")));
        }
        let n = input.read_u64::<LittleEndian>().map_err(trunc)? as usize;
        let dim = input.read_u64::<LittleEndian>().map_err(trunc)? as usize;
        let classes = input.read_u64::<LittleEndian>().map_err(trunc)? as usize;
        let mut features = vec![0.0; n * dim];
        for j in 0..dim {
            for i in 0..n {
                features[i * dim + j] = input.read_f64::<LittleEndian>().map_err(trunc)?;
            }
        }
        let labels = (0..n)
            .map(|_| input.read_u32::<LittleEndian>().map(|l| l as usize))
            .collect::<io::Result<Vec<_>>>()
            .map_err(trunc)?;
        Self::new(features, labels, dim, classes)
    }
}

/// Gaussian clusters, one per class, with centres on a sphere of radius
/// `margin` and unit noise. Features are min-max scaled into `[0, 1]`.
/// Samples are interleaved by class.
///
/// # Panics
///
/// If any count is zero.
pub fn synth_classification(
    num_classes: usize,
    input_dim: usize,
    per_class: usize,
    margin: f64,
    seed: u64,
) -> Dataset {
    assert!(
        num_classes > 0 && input_dim > 0 && per_class > 0,
        "synthetic dataset counts must be positive"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| margin * x / norm).collect()
        })
        .collect();

    let n = num_classes * per_class;
    let mut features = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..per_class {
        for (class, centre) in centres.iter().enumerate() {
            for &c in centre {
                let noise: f64 = rng.sample(StandardNormal);
                features.push(c + noise);
            }
            labels.push(class);
        }
    }

    for j in 0..input_dim {
        let column = (0..n).map(|i| features[i * input_dim + j]);
        let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        for i in 0..n {
            let v = &mut features[i * input_dim + j];
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }

    Dataset::new(features, labels, input_dim, num_classes)
        .expect("generated dataset is well formed")
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an IDX image archive into `(count, rows * cols, pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8], path: &str) -> Result<(usize, usize, Vec<f64>)> {
    let trunc = |source| DataError::Truncated {
        path: path.to_string(),
        source,
    };
    let mut cur = Cursor::new(bytes);
    let magic = cur.read_u32::<BigEndian>().map_err(trunc)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_string(),
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = cur.read_u32::<BigEndian>().map_err(trunc)? as usize;
    let rows = cur.read_u32::<BigEndian>().map_err(trunc)? as usize;
    let cols = cur.read_u32::<BigEndian>().map_err(trunc)? as usize;
    let dim = rows * cols;
    let mut pixels = vec![0u8; count * dim];
    cur.read_exact(&mut pixels).map_err(trunc)?;
    let features = pixels.into_iter().map(|p| p as f64 / 255.0).collect();
    Ok((count, dim, features))
}

pub fn parse_idx_labels(bytes: &[u8], path: &str) -> Result<Vec<usize>> {
    let trunc = |source| DataError::Truncated {
        path: path.to_string(),
        source,
    };
    let mut cur = Cursor::new(bytes);
    let magic = cur.read_u32::<BigEndian>().map_err(trunc)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_string(),
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let count = cur.read_u32::<BigEndian>().map_err(trunc)? as usize;
    let mut labels = vec![0u8; count];
    cur.read_exact(&mut labels).map_err(trunc)?;
    Ok(labels.into_iter().map(usize::from).collect())
}

/// Loads an image/label archive pair, optionally gzip-compressed. The class
/// count is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read_maybe_gz(images_path)?;
    let label_bytes = read_maybe_gz(labels_path)?;
    let (count, dim, features) =
        parse_idx_images(&image_bytes, &images_path.display().to_string())?;
    let labels = parse_idx_labels(&label_bytes, &labels_path.display().to_string())?;
    if labels.len() != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, labels, dim, classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub num_servers: usize,
    pub labels_per_server: usize,
    /// Labels held by slow servers appear on no other server.
    #[serde(default)]
    pub unique_on_slow: bool,
    #[serde(default)]
    pub slow_servers: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// Per-server sample indices plus the label set assigned to each server.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub indices: Vec<Vec<usize>>,
    pub labels: Vec<BTreeSet<usize>>,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        self.indices.iter().map(Vec::len).collect()
    }
}

/// Draws labels without replacement from a reshuffled pool, so the pool is
/// exhausted before any label repeats.
struct LabelPool<'a> {
    source: Vec<usize>,
    pending: Vec<usize>,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> LabelPool<'a> {
    fn new(source: Vec<usize>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            source,
            pending: Vec::new(),
            rng,
        }
    }

    /// `count` distinct labels; `count` must not exceed the pool size.
    fn draw(&mut self, count: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        while out.len() < count {
            if self.pending.is_empty() {
                self.pending = self.source.clone();
                self.pending.shuffle(self.rng);
                self.pending.reverse();
            }
            // Skip labels already held; they go back to the front of the next refill.
            let pos = self.pending.iter().rposition(|l| !out.contains(l));
            match pos {
                Some(p) => {
                    out.insert(self.pending.remove(p));
                }
                None => self.pending.clear(),
            }
        }
        out
    }
}

/// Assigns labels to servers and deals each label's samples round-robin among
/// the servers holding it.
pub fn partition(data: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    let k = spec.num_servers;
    let classes = data.num_classes();
    if k == 0 {
        return Err(DataError::InfeasiblePartition("no servers".into()));
    }
    if spec.labels_per_server == 0 || spec.labels_per_server > classes {
        return Err(DataError::InfeasiblePartition(format!(
            "labels_per_server = {} with {classes} classes",
            spec.labels_per_server
        )));
    }
    let mut slow: Vec<usize> = spec.slow_servers.clone();
    slow.sort_unstable();
    slow.dedup();
    if let Some(bad) = slow.iter().find(|&&s| s >= k) {
        return Err(DataError::InfeasiblePartition(format!(
            "slow server {bad} out of range for {k} servers"
        )));
    }
    let fast: Vec<usize> = (0..k).filter(|s| slow.binary_search(s).is_err()).collect();
    let lps = spec.labels_per_server;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = vec![BTreeSet::new(); k];

    if spec.unique_on_slow && !slow.is_empty() {
        let exclusive = slow.len() * lps;
        if exclusive + if fast.is_empty() { 0 } else { lps } > classes {
            return Err(DataError::InfeasiblePartition(format!(
                "{} slow servers x {lps} exclusive labels leave too few of {classes} classes",
                slow.len()
            )));
        }
        let mut order: Vec<usize> = (0..classes).collect();
        order.shuffle(&mut rng);
        for (i, &s) in slow.iter().enumerate() {
            labels[s] = order[i * lps..(i + 1) * lps].iter().copied().collect();
        }
        let mut pool = LabelPool::new(order[exclusive..].to_vec(), &mut rng);
        for &f in &fast {
            labels[f] = pool.draw(lps);
        }
    } else {
        let mut pool = LabelPool::new((0..classes).collect(), &mut rng);
        for &f in &fast {
            labels[f] = pool.draw(lps);
        }
        let covered: Vec<usize> = if fast.is_empty() {
            (0..classes).collect()
        } else {
            labels
                .iter()
                .flatten()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        if !slow.is_empty() && covered.len() < lps {
            return Err(DataError::InfeasiblePartition(format!(
                "fast servers cover {} labels, slow servers need {lps} shared labels",
                covered.len()
            )));
        }
        let mut pool = LabelPool::new(covered, &mut rng);
        for &s in &slow {
            labels[s] = pool.draw(lps);
        }
    }

    let mut indices = vec![Vec::new(); k];
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for i in 0..data.len() {
        by_label[data.label(i)].push(i);
    }
    for (label, mut samples) in by_label.into_iter().enumerate() {
        let holders: Vec<usize> = (0..k).filter(|&s| labels[s].contains(&label)).collect();
        if holders.is_empty() {
            continue;
        }
        samples.shuffle(&mut rng);
        for (j, i) in samples.into_iter().enumerate() {
            indices[holders[j % holders.len()]].push(i);
        }
    }
    for list in &mut indices {
        list.sort_unstable();
    }
    Ok(Partition { indices, labels })
}
