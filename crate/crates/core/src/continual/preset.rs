//! Named experiment scales.

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::tasks::TaskSchedule;
use super::trainer::RunConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 256 train / 128 test images per class, 3 epochs per task, buffer 500.
    MnistDesk,
    /// Every image on disk, 5 epochs per task, buffer 2000.
    MnistFull,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::MnistDesk => "mnist-desk",
            Preset::MnistFull => "mnist-full",
        }
    }

    /// Per-class (train, test) sample counts, `None` for everything.
    pub fn subset(self) -> Option<(usize, usize)> {
        match self {
            Preset::MnistDesk => Some((256, 128)),
            Preset::MnistFull => None,
        }
    }

    pub fn schedule(self) -> TaskSchedule {
        TaskSchedule::uniform(5, 2).expect("5x2 is valid")
    }

    pub fn apply(self, cfg: &mut RunConfig) {
        cfg.timesteps = 25;
        cfg.batch_size = 64;
        cfg.hidden = 128;
        match self {
            Preset::MnistDesk => {
                cfg.epochs_per_task = 3;
                cfg.buffer_capacity = 500;
            }
            Preset::MnistFull => {
                cfg.epochs_per_task = 5;
                cfg.buffer_capacity = 2000;
            }
        }
    }

    pub fn load(self, root: &std::path::Path) -> Result<Dataset> {
        let full = Dataset::load_mnist(root)?;
        match self.subset() {
            Some((train, test)) => full.per_class_subset(train, test),
            None => Ok(full),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist-desk" => Ok(Preset::MnistDesk),
            "mnist-full" => Ok(Preset::MnistFull),
            _ => Err(Error::InvalidArgument(format!("unknown preset `{s}`"))),
        }
    }
}
