use std::path::Path;

use rand::Rng;

use super::tasks::TaskSchedule;
use crate::encoding::{bin_events, load_mnist_split, poisson_encode, EventRecord, FrameImage, SpikeTensor};
use crate::error::{Error, Result};

/// How raw samples become spike tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// Poisson rate coding of `height x width` frames.
    Frames { height: usize, width: usize },
    /// Binned DVS events over a fixed window, two polarity planes.
    Events { height: u16, width: u16, duration_us: u64 },
}

impl InputKind {
    pub fn input_dim(&self) -> usize {
        match *self {
            InputKind::Frames { height, width } => height * width,
            InputKind::Events { height, width, .. } => 2 * usize::from(height) * usize::from(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleData {
    Frame(FrameImage),
    Events(Vec<EventRecord>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub data: SampleData,
    pub label: usize,
}

impl Sample {
    pub fn frame(image: FrameImage) -> Self {
        let label = image.label();
        Self { data: SampleData::Frame(image), label }
    }

    /// Encodes to a `(T, 1, input_dim)` tensor. Event binning ignores `rng`.
    pub fn encode<R: Rng + ?Sized>(&self, kind: InputKind, timesteps: usize, rng: &mut R) -> Result<SpikeTensor> {
        match (&self.data, kind) {
            (SampleData::Frame(img), InputKind::Frames { height, width }) => {
                if img.height() != height || img.width() != width {
                    return Err(Error::Shape(format!(
                        "{}x{} frame in a {height}x{width} dataset",
                        img.height(),
                        img.width()
                    )));
                }
                poisson_encode(img, timesteps, rng)
            }
            (SampleData::Events(ev), InputKind::Events { height, width, duration_us }) => {
                bin_events(ev, timesteps, height, width, duration_us)
            }
            _ => Err(Error::InvalidArgument("sample type does not match the dataset kind".into())),
        }
    }
}

/// Train and test pools with a shared encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: InputKind,
    pub num_classes: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    /// Loads `train-*` and `t10k-*` IDX files (optionally gzipped) from `dir`.
    pub fn load_mnist(dir: &Path) -> Result<Self> {
        let train = load_mnist_split(dir, "train", 10)?;
        let test = load_mnist_split(dir, "t10k", 10)?;
        let (height, width) = train
            .first()
            .map(|f| (f.height(), f.width()))
            .ok_or_else(|| Error::InvalidArgument("empty training split".into()))?;
        Ok(Self {
            kind: InputKind::Frames { height, width },
            num_classes: 10,
            train: train.into_iter().map(Sample::frame).collect(),
            test: test.into_iter().map(Sample::frame).collect(),
        })
    }

    /// Keeps the first `train` / `test` samples of each class, in file order.
    pub fn per_class_subset(&self, train: usize, test: usize) -> Result<Self> {
        let take = |pool: &[Sample], n: usize, name: &str| -> Result<Vec<Sample>> {
            let mut counts = vec![0usize; self.num_classes];
            let out: Vec<Sample> = pool
                .iter()
                .filter(|s| {
                    let keep = counts[s.label] < n;
                    counts[s.label] += usize::from(keep);
                    keep
                })
                .cloned()
                .collect();
            if let Some(c) = counts.iter().position(|&c| c < n) {
                return Err(Error::InvalidArgument(format!(
                    "{name} split has only {} samples of class {c}, {n} requested",
                    counts[c]
                )));
            }
            Ok(out)
        };
        Ok(Self {
            kind: self.kind,
            num_classes: self.num_classes,
            train: take(&self.train, train, "train")?,
            test: take(&self.test, test, "test")?,
        })
    }
}

/// Sample indices of one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSplit {
    pub classes: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions the dataset by task. Samples whose class belongs to no task are
/// dropped.
pub fn split_tasks(data: &Dataset, schedule: &TaskSchedule) -> Result<Vec<TaskSplit>> {
    if schedule.max_class() >= data.num_classes {
        return Err(Error::Schedule(format!(
            "class {} exceeds the dataset's {} classes",
            schedule.max_class(),
            data.num_classes
        )));
    }
    let mut splits: Vec<TaskSplit> = schedule
        .tasks()
        .iter()
        .map(|c| TaskSplit { classes: c.clone(), train: Vec::new(), test: Vec::new() })
        .collect();
    for (i, s) in data.train.iter().enumerate() {
        if let Some(t) = schedule.task_of(s.label) {
            splits[t].train.push(i);
        }
    }
    for (i, s) in data.test.iter().enumerate() {
        if let Some(t) = schedule.task_of(s.label) {
            splits[t].test.push(i);
        }
    }
    if let Some(t) = splits.iter().position(|s| s.train.is_empty() || s.test.is_empty()) {
        return Err(Error::Schedule(format!("task {t} has no train or test samples")));
    }
    Ok(splits)
}
