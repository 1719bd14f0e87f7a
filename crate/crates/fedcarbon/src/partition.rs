//! Dataset generation, loading, and non-iid partitioning across clients.
//!
//! The partitioner routes each sample of class `c` to a uniformly random
//! client of class-group `c` (clients are assigned to groups round-robin,
//! client `i` -> group `i mod L`) with probability `knob`, and to a
//! uniformly random client of the whole pool otherwise. `knob = 0` is fully
//! iid; `knob = 1` gives every client a single class.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// A labeled dataset held as a row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    feature_dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Build a dataset, checking the type invariants: row count equals label
    /// count, every label lies in `[0, num_classes)`, and every class
    /// appears at least once.
    pub fn new(
        features: Vec<f64>,
        feature_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::Integrity(format!(
                "feature matrix has {} values but {} samples x {} dims were expected",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        let mut seen = vec![false; num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::Integrity(format!(
                    "label {l} at sample {i} is outside [0, {num_classes})"
                )));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Integrity(format!(
                "class {missing} has no samples"
            )));
        }
        Ok(Self {
            features,
            feature_dim,
            labels,
            num_classes,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, sample: usize) -> usize {
        self.labels[sample]
    }

    pub fn features_of(&self, sample: usize) -> &[f64] {
        let start = sample * self.feature_dim;
        &self.features[start..start + self.feature_dim]
    }

    /// Split into disjoint train/test datasets by a seeded shuffle.
    /// `test_fraction` of the samples (rounded down, at least one sample per
    /// side) go to the test set. Both halves must still cover every class.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
            return Err(Error::Config(
                "test_fraction must lie in (0, 1)".into(),
            ));
        }
        let n = self.num_samples();
        let n_test = ((n as f64 * test_fraction) as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng_from_seed(seed);
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let gather = |idx: &[usize]| -> Result<Self> {
            let mut features = Vec::with_capacity(idx.len() * self.feature_dim);
            let mut labels = Vec::with_capacity(idx.len());
            for &s in idx {
                features.extend_from_slice(self.features_of(s));
                labels.push(self.label(s));
            }
            Self::new(features, self.feature_dim, labels, self.num_classes)
        };
        let test = gather(&order[..n_test]).map_err(|e| {
            Error::Partition(format!("test split does not cover every class: {e}"))
        })?;
        let train = gather(&order[n_test..]).map_err(|e| {
            Error::Partition(format!("train split does not cover every class: {e}"))
        })?;
        Ok((train, test))
    }
}

/// One client's view of the dataset: indices into the parent dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub sample_indices: Vec<usize>,
}

impl ClientShard {
    pub fn size(&self) -> usize {
        self.sample_indices.len()
    }
}

/// How to split a dataset across clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub num_clients: usize,
    /// 0 = fully iid, 1 = one class per client.
    pub knob: f64,
    pub seed: u64,
    /// Permit clients with no samples. Such clients have undefined utility
    /// and are excluded from selection, so the default forbids them.
    #[serde(default)]
    pub allow_empty_shards: bool,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("partition.num_clients must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.knob) {
            return Err(Error::Config(format!(
                "partition.knob must lie in [0, 1], got {}",
                self.knob
            )));
        }
        Ok(())
    }
}

/// Generate a balanced synthetic classification dataset: class `c` samples
/// are drawn from an isotropic unit Gaussian centered at a class mean that
/// is itself drawn from an isotropic Gaussian with standard deviation
/// `class_separation`. Labels are assigned round-robin, so class counts
/// differ by at most one.
pub fn generate_synthetic(
    num_samples: usize,
    num_classes: usize,
    feature_dim: usize,
    class_separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::Config("num_classes must be >= 2".into()));
    }
    if num_samples < num_classes {
        return Err(Error::Config(
            "num_samples must be >= num_classes so every class appears".into(),
        ));
    }
    if feature_dim == 0 {
        return Err(Error::Config("feature_dim must be >= 1".into()));
    }
    if class_separation <= 0.0 {
        return Err(Error::Config("class_separation must be > 0".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut gauss = move || -> f64 {
        // Box-Muller on two uniform draws; one value per call keeps the
        // stream layout simple to reproduce.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut means = vec![0.0; num_classes * feature_dim];
    for m in means.iter_mut() {
        *m = gauss() * class_separation;
    }
    let mut features = Vec::with_capacity(num_samples * feature_dim);
    let mut labels = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let class = i % num_classes;
        for d in 0..feature_dim {
            features.push(means[class * feature_dim + d] + gauss());
        }
        labels.push(class);
    }
    LabeledDataset::new(features, feature_dim, labels, num_classes)
}

/// What `load_csv_dataset` did to the raw labels.
#[derive(Debug, Clone, Serialize)]
pub struct LoadReport {
    pub num_samples: usize,
    pub num_classes: usize,
    /// Original label -> normalized 0-based label, present when the raw
    /// labels were not already 0-based contiguous integers.
    pub label_mapping: Option<BTreeMap<i64, usize>>,
}

/// Load a dataset from a CSV file with rows `f1,...,fd,label`.
///
/// Labels that are not 0-based contiguous are remapped (in ascending order
/// of the raw value) and the mapping is returned in the report.
pub fn load_csv_dataset(path: &Path, has_header: bool) -> Result<(LabeledDataset, LoadReport)> {
    let text = std::fs::read_to_string(path)?;
    parse_csv_dataset(&text, has_header)
}

fn parse_csv_dataset(text: &str, has_header: bool) -> Result<(LabeledDataset, LoadReport)> {
    let mut feature_dim = None;
    let mut rows: Vec<(Vec<f64>, i64)> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        if has_header && line_no == 1 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                message: "expected at least one feature and a label".into(),
            });
        }
        let dim = fields.len() - 1;
        match feature_dim {
            None => feature_dim = Some(dim),
            Some(d) if d != dim => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("row has {dim} features but earlier rows had {d}"),
                })
            }
            _ => {}
        }
        let mut feats = Vec::with_capacity(dim);
        for f in &fields[..dim] {
            feats.push(f.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("non-numeric feature value {:?}", f.trim()),
            })?);
        }
        let label = fields[dim].trim().parse::<i64>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-integer label {:?}", fields[dim].trim()),
        })?;
        rows.push((feats, label));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "dataset file contains no data rows".into(),
        });
    }
    let feature_dim = feature_dim.unwrap();

    let mut distinct: Vec<i64> = rows.iter().map(|(_, l)| *l).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let contiguous = distinct
        .iter()
        .enumerate()
        .all(|(i, &l)| l == i as i64);
    let mapping: BTreeMap<i64, usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, i))
        .collect();

    let num_classes = distinct.len();
    let mut features = Vec::with_capacity(rows.len() * feature_dim);
    let mut labels = Vec::with_capacity(rows.len());
    for (feats, raw) in &rows {
        features.extend_from_slice(feats);
        labels.push(mapping[raw]);
    }
    let report = LoadReport {
        num_samples: labels.len(),
        num_classes,
        label_mapping: if contiguous { None } else { Some(mapping) },
    };
    let dataset = LabeledDataset::new(features, feature_dim, labels, num_classes)?;
    Ok((dataset, report))
}

/// Split `dataset` across `spec.num_clients` clients.
///
/// Clients are assigned round-robin to class groups (client `i` -> group
/// `i mod L`). Each sample of class `c` goes to a uniformly random client
/// of group `c` with probability `knob`, otherwise to a uniformly random
/// client of the whole pool. When a class group is empty (fewer clients
/// than classes at knob < 1) the sample falls back to the whole pool.
pub fn partition_non_iid(
    dataset: &LabeledDataset,
    spec: &PartitionSpec,
) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    if dataset.num_samples() == 0 {
        return Err(Error::Partition("dataset is empty".into()));
    }
    let n = spec.num_clients;
    let classes = dataset.num_classes();
    if spec.knob >= 1.0 && n < classes {
        return Err(Error::Config(format!(
            "knob = 1 requires num_clients >= num_classes ({n} < {classes})"
        )));
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for client in 0..n {
        groups[client % classes].push(client);
    }
    let mut shards: Vec<ClientShard> = (0..n)
        .map(|client_id| ClientShard {
            client_id,
            sample_indices: Vec::new(),
        })
        .collect();
    let mut rng = rng_from_seed(spec.seed);
    for sample in 0..dataset.num_samples() {
        let group = &groups[dataset.label(sample)];
        let direct = !group.is_empty() && rng.gen_range(0.0..1.0) < spec.knob;
        let client = if direct {
            group[rng.gen_range(0..group.len())]
        } else {
            rng.gen_range(0..n)
        };
        shards[client].sample_indices.push(sample);
    }
    if !spec.allow_empty_shards {
        if let Some(empty) = shards.iter().find(|s| s.size() == 0) {
            return Err(Error::Partition(format!(
                "client {} received no samples; use more samples or fewer clients",
                empty.client_id
            )));
        }
    }
    Ok(shards)
}

/// Per-class sample counts of one shard. Counts sum to the shard size.
pub fn class_histogram(shard: &ClientShard, dataset: &LabeledDataset) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; dataset.num_classes()];
    for &idx in &shard.sample_indices {
        if idx >= dataset.num_samples() {
            return Err(Error::Integrity(format!(
                "shard {} references sample {idx} but the dataset has {}",
                shard.client_id,
                dataset.num_samples()
            )));
        }
        counts[dataset.label(idx)] += 1;
    }
    Ok(counts)
}

/// Audit report listing each client's class histogram.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    pub num_clients: usize,
    pub num_classes: usize,
    pub clients: Vec<PartitionReportEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionReportEntry {
    pub client_id: usize,
    pub size: usize,
    pub class_histogram: Vec<usize>,
}

pub fn partition_report(
    shards: &[ClientShard],
    dataset: &LabeledDataset,
) -> Result<PartitionReport> {
    let mut clients = Vec::with_capacity(shards.len());
    for shard in shards {
        clients.push(PartitionReportEntry {
            client_id: shard.client_id,
            size: shard.size(),
            class_histogram: class_histogram(shard, dataset)?,
        });
    }
    Ok(PartitionReport {
        num_clients: shards.len(),
        num_classes: dataset.num_classes(),
        clients,
    })
}

/// Render a dataset back to the CSV interchange format, mostly for fixtures
/// and round-trip tests.
pub fn to_csv(dataset: &LabeledDataset) -> String {
    let mut out = String::new();
    for i in 0..dataset.num_samples() {
        for v in dataset.features_of(i) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", dataset.label(i));
    }
    out
}
