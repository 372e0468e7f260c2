//! Dataset loading, class-based task splitting, synthetic task generation,
//! and deterministic batching.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seeds::{mix, tag};
use crate::tensor::Tensor;

/// Labeled sample set. Labels are task-local, in `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Tensor,
    labels: Vec<u32>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Vec<u32>, n_classes: usize) -> Result<Self> {
        if samples.n_rows() == 0 {
            return Err(Error::Data("dataset has no samples".into()));
        }
        if labels.len() != samples.n_rows() {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: samples.n_rows(),
                got: labels.len(),
            });
        }
        for &y in &labels {
            if y as usize >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: n_classes,
                });
            }
        }
        Ok(Self {
            samples,
            labels,
            n_classes,
        })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.samples.n_rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.row_width()
    }

    /// Gathers the given rows into a new dataset, optionally remapping labels.
    fn gather(&self, rows: &[usize], remap: Option<&dyn Fn(u32) -> u32>, n_classes: usize) -> Result<Dataset> {
        let w = self.samples.row_width();
        let mut data = Vec::with_capacity(rows.len() * w);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.samples.row(r));
            let y = self.labels[r];
            labels.push(remap.map_or(y, |f| f(y)));
        }
        Dataset::new(Tensor::new(vec![rows.len(), w], data)?, labels, n_classes)
    }
}

/// One task's train and evaluation splits.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Dataset,
    pub eval: Dataset,
}

impl TaskData {
    pub fn classes(&self) -> usize {
        self.train.n_classes()
    }
}

/// Ordered tasks, already permuted into presentation order.
/// `original_ids[t]` is the pre-permutation id of the task shown at
/// position `t`.
#[derive(Debug, Clone)]
pub struct TaskSequence {
    pub tasks: Vec<TaskData>,
    pub original_ids: Vec<usize>,
    pub seed: u64,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Re-permutes the tasks. Seed 0 keeps the current order.
    pub fn reordered(&self, order_seed: u64) -> TaskSequence {
        let perm = permutation(self.tasks.len(), order_seed);
        TaskSequence {
            tasks: perm.iter().map(|&t| self.tasks[t].clone()).collect(),
            original_ids: perm.iter().map(|&t| self.original_ids[t]).collect(),
            seed: order_seed,
        }
    }
}

fn permutation(n: usize, order_seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    if order_seed != 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(order_seed, &[tag::TASK_ORDER]));
        perm.shuffle(&mut rng);
    }
    perm
}

/// Splits a labeled dataset into class-disjoint tasks of `classes_per_task`
/// classes each, remapping labels to `[0, classes_per_task)` within a task.
///
/// When `eval` is provided it is split by the same classes; otherwise each
/// task's rows are split 80/20 into train/eval with a seeded shuffle.
/// `order_seed` 0 keeps the natural class order.
pub fn split_by_class(
    train: &Dataset,
    eval: Option<&Dataset>,
    classes_per_task: usize,
    order_seed: u64,
) -> Result<TaskSequence> {
    if classes_per_task == 0 || !train.n_classes().is_multiple_of(classes_per_task) {
        return Err(Error::Data(format!(
            "{} classes not divisible into tasks of {}",
            train.n_classes(),
            classes_per_task
        )));
    }
    if let Some(ev) = eval {
        if ev.n_classes() != train.n_classes() || ev.feature_dim() != train.feature_dim() {
            return Err(Error::Data("eval split does not match train split".into()));
        }
    }
    let n_tasks = train.n_classes() / classes_per_task;
    let perm = permutation(n_tasks, order_seed);

    let rows_of = |ds: &Dataset, lo: u32, hi: u32| -> Vec<usize> {
        (0..ds.n_samples())
            .filter(|&r| ds.labels()[r] >= lo && ds.labels()[r] < hi)
            .collect()
    };

    let mut tasks = Vec::with_capacity(n_tasks);
    for &orig in &perm {
        let lo = (orig * classes_per_task) as u32;
        let hi = lo + classes_per_task as u32;
        let remap = move |y: u32| y - lo;
        let train_rows = rows_of(train, lo, hi);
        if train_rows.is_empty() {
            return Err(Error::Data(format!("no training rows for classes {lo}..{hi}")));
        }
        let task = match eval {
            Some(ev) => {
                let eval_rows = rows_of(ev, lo, hi);
                if eval_rows.is_empty() {
                    return Err(Error::Data(format!("no eval rows for classes {lo}..{hi}")));
                }
                TaskData {
                    train: train.gather(&train_rows, Some(&remap), classes_per_task)?,
                    eval: ev.gather(&eval_rows, Some(&remap), classes_per_task)?,
                }
            }
            None => {
                let mut rows = train_rows;
                let mut rng = ChaCha8Rng::seed_from_u64(mix(
                    order_seed,
                    &[tag::EVAL_SPLIT, orig as u64],
                ));
                rows.shuffle(&mut rng);
                let n_train = ((rows.len() * 4) / 5).max(1).min(rows.len() - 1);
                TaskData {
                    train: train.gather(&rows[..n_train], Some(&remap), classes_per_task)?,
                    eval: train.gather(&rows[n_train..], Some(&remap), classes_per_task)?,
                }
            }
        };
        tasks.push(task);
    }
    Ok(TaskSequence {
        tasks,
        original_ids: perm,
        seed: order_seed,
    })
}

/// Generates tasks of Gaussian class blobs. Each class mean lies on a sphere
/// of radius `sep`; samples add unit isotropic noise. Per class, the first
/// 80% of generated samples form the train split and the rest the eval split.
pub fn gen_synthetic_tasks(
    n_tasks: usize,
    classes_per_task: usize,
    dim: usize,
    per_class: usize,
    sep: f32,
    seed: u64,
) -> Result<TaskSequence> {
    if n_tasks == 0 || classes_per_task < 2 {
        return Err(Error::Data("need at least one task of two classes".into()));
    }
    if dim == 0 {
        return Err(Error::Data("degenerate feature dimension".into()));
    }
    if per_class < 2 {
        return Err(Error::Data("need at least two samples per class".into()));
    }
    if !(sep.is_finite() && sep >= 0.0) {
        return Err(Error::Data("class separation must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train_per_class = ((per_class * 4) / 5).max(1).min(per_class - 1);
    let mut tasks = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        let mut train_data = Vec::new();
        let mut train_labels = Vec::new();
        let mut eval_data = Vec::new();
        let mut eval_labels = Vec::new();
        for c in 0..classes_per_task {
            let mut mean: Vec<f32> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = mean.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-6);
            for v in &mut mean {
                *v = *v / norm * sep;
            }
            for s in 0..per_class {
                let (data, labels) = if s < n_train_per_class {
                    (&mut train_data, &mut train_labels)
                } else {
                    (&mut eval_data, &mut eval_labels)
                };
                for &m in &mean {
                    let noise: f32 = rng.sample(StandardNormal);
                    data.push(m + noise);
                }
                labels.push(c as u32);
            }
        }
        let n_train = train_labels.len();
        let n_eval = eval_labels.len();
        tasks.push(TaskData {
            train: Dataset::new(
                Tensor::new(vec![n_train, dim], train_data)?,
                train_labels,
                classes_per_task,
            )?,
            eval: Dataset::new(
                Tensor::new(vec![n_eval, dim], eval_data)?,
                eval_labels,
                classes_per_task,
            )?,
        });
    }
    Ok(TaskSequence {
        tasks,
        original_ids: (0..n_tasks).collect(),
        seed,
    })
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let end = at + 4;
    if end > bytes.len() {
        return Err(Error::Data(format!("truncated {what}")));
    }
    Ok(u32::from_be_bytes([
        bytes[at],
        bytes[at + 1],
        bytes[at + 2],
        bytes[at + 3],
    ]))
}

/// Loads an IDX image/label file pair (big-endian headers, unsigned bytes),
/// scaling pixels to `[0, 1]`. Labels must fall inside `n_classes`.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    n_classes: usize,
) -> Result<Dataset> {
    let images = fs::read(images_path.as_ref())?;
    let labels = fs::read(labels_path.as_ref())?;

    if read_be_u32(&images, 0, "image header")? != IDX_IMAGES_MAGIC {
        return Err(Error::Data("bad image file magic".into()));
    }
    let n = read_be_u32(&images, 4, "image header")? as usize;
    let rows = read_be_u32(&images, 8, "image header")? as usize;
    let cols = read_be_u32(&images, 12, "image header")? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Data("empty image file".into()));
    }
    if images.len() != 16 + n * rows * cols {
        return Err(Error::Data("truncated image file".into()));
    }

    if read_be_u32(&labels, 0, "label header")? != IDX_LABELS_MAGIC {
        return Err(Error::Data("bad label file magic".into()));
    }
    let n_labels = read_be_u32(&labels, 4, "label header")? as usize;
    if labels.len() != 8 + n_labels {
        return Err(Error::Data("truncated label file".into()));
    }
    if n_labels != n {
        return Err(Error::Data(format!(
            "{n} images but {n_labels} labels"
        )));
    }

    let data: Vec<f32> = images[16..].iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<u32> = labels[8..].iter().map(|&b| b as u32).collect();
    Dataset::new(Tensor::new(vec![n, rows, cols], data)?, labels, n_classes)
}

/// Loads a CSV with a header row: float feature columns plus a mandatory
/// integer `label` column. The class count is inferred as max label + 1.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path.as_ref())
        .map_err(|e| Error::Data(format!("cannot read csv: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad csv header: {e}")))?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| Error::Data("csv is missing a 'label' column".into()))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("csv row {row}: {e}")))?;
        let mut feats = Vec::with_capacity(record.len().saturating_sub(1));
        for (col, field) in record.iter().enumerate() {
            if col == label_col {
                let y: u32 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("csv row {row}: bad label '{field}'")))?;
                labels.push(y);
            } else {
                let v: f32 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("csv row {row}: bad value '{field}'")))?;
                feats.push(v);
            }
        }
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(Error::Data(format!("csv row {row}: ragged width")));
            }
            _ => {}
        }
        data.extend(feats);
    }
    let width = width.ok_or_else(|| Error::Data("csv has no data rows".into()))?;
    if width == 0 {
        return Err(Error::Data("csv has no feature columns".into()));
    }
    let n = labels.len();
    let n_classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    Dataset::new(Tensor::new(vec![n, width], data)?, labels, n_classes)
}

/// A gathered mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<u32>,
}

/// Iterator over seeded-shuffled mini-batches. The union of the batches is
/// the dataset exactly once; the last batch may be partial.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    at: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.at >= self.order.len() {
            return None;
        }
        let end = (self.at + self.batch_size).min(self.order.len());
        let rows = &self.order[self.at..end];
        self.at = end;
        let w = self.dataset.feature_dim();
        let mut data = Vec::with_capacity(rows.len() * w);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.dataset.samples().row(r));
            labels.push(self.dataset.labels()[r]);
        }
        Some(Batch {
            x: Tensor::new(vec![rows.len(), w], data).expect("batch from valid dataset"),
            labels,
        })
    }
}

pub fn batch_iter(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.n_samples()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    order.shuffle(&mut rng);
    Ok(Batches {
        dataset,
        order,
        batch_size,
        at: 0,
    })
}
