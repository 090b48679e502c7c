//! Deterministic train / calibration / test / OOD splits.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use diflo::manifolds::{build_dataset, read_dataset_csv, sample_ood, write_dataset_csv, SplitLabel};
use diflo::{indexed_rng, Scalar, Stream, TaskDataset};
use ndarray::Array2;

use crate::config::ExperimentConfig;

pub const DATA_DIR: &str = "data";

/// Split identifiers; each owns an independent data stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train = 0,
    Cal = 1,
    Test = 2,
    Ood = 3,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Cal, Split::Test, Split::Ood];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.csv",
            Split::Cal => "cal.csv",
            Split::Test => "test.csv",
            Split::Ood => "ood.csv",
        }
    }

    fn label(self) -> SplitLabel {
        match self {
            Split::Train => SplitLabel::Id,
            Split::Cal => SplitLabel::Cal,
            Split::Test => SplitLabel::Test,
            Split::Ood => SplitLabel::Ood,
        }
    }

    /// Seed offset keeping the evaluation draws of different splits apart.
    pub fn eval_seed(self, seed: u64) -> u64 {
        seed.wrapping_add((self as u64 + 1) << 40)
    }
}

#[derive(Clone, Debug)]
pub struct Splits<T> {
    pub train: TaskDataset<T>,
    pub cal: TaskDataset<T>,
    pub test: TaskDataset<T>,
    pub ood: Array2<T>,
}

fn paired<T: Scalar>(cfg: &ExperimentConfig, split: Split, n: usize) -> Result<TaskDataset<T>> {
    if n == 0 {
        let task = cfg.task;
        return Ok(TaskDataset {
            task,
            conditions: Array2::zeros((0, task.cond_dim())),
            targets: Array2::zeros((0, task.target_dim())),
        });
    }
    let mut rng = indexed_rng(cfg.train.seed, Stream::Data, split as u64);
    Ok(build_dataset(cfg.task, &mut rng, n, &cfg.spiral)?)
}

pub fn ood_conditions<T: Scalar>(cfg: &ExperimentConfig) -> Result<Array2<T>> {
    if cfg.n_ood == 0 {
        return Ok(Array2::zeros((0, cfg.task.cond_dim())));
    }
    let mut rng = indexed_rng(cfg.train.seed, Stream::Data, Split::Ood as u64);
    Ok(sample_ood(&mut rng, cfg.n_ood, &cfg.spiral)?)
}

/// Evaluation splits only; the train split is left empty.
pub fn eval_splits<T: Scalar>(cfg: &ExperimentConfig) -> Result<Splits<T>> {
    Ok(Splits {
        train: paired(cfg, Split::Train, 0)?,
        cal: paired(cfg, Split::Cal, cfg.n_cal)?,
        test: paired(cfg, Split::Test, cfg.n_id_test)?,
        ood: ood_conditions(cfg)?,
    })
}

pub fn all_splits<T: Scalar>(cfg: &ExperimentConfig) -> Result<Splits<T>> {
    let mut s = eval_splits(cfg)?;
    s.train = paired(cfg, Split::Train, cfg.n_train)?;
    Ok(s)
}

/// Writes the four split files under `<out>/data` and returns their paths.
pub fn write_splits(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.out.join(DATA_DIR);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let s = all_splits::<f64>(cfg)?;
    let mut paths = Vec::new();
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        match split {
            Split::Train => write_dataset_csv(
                w,
                cfg.task,
                split.label(),
                s.train.conditions.view(),
                Some(s.train.targets.view()),
            )?,
            Split::Cal => write_dataset_csv(
                w,
                cfg.task,
                split.label(),
                s.cal.conditions.view(),
                Some(s.cal.targets.view()),
            )?,
            Split::Test => write_dataset_csv(
                w,
                cfg.task,
                split.label(),
                s.test.conditions.view(),
                Some(s.test.targets.view()),
            )?,
            Split::Ood => write_dataset_csv(w, cfg.task, split.label(), s.ood.view(), None)?,
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Reads the train split written by [`write_splits`].
pub fn read_train_split<T: Scalar>(out: &Path) -> Result<TaskDataset<T>> {
    let path = out.join(DATA_DIR).join(Split::Train.file_name());
    let f = File::open(&path).with_context(|| format!("opening {} (run gen-data first)", path.display()))?;
    let file = read_dataset_csv::<T, _>(BufReader::new(f))?;
    let targets = file
        .targets
        .with_context(|| format!("{} has no targets", path.display()))?;
    Ok(TaskDataset {
        task: file.task,
        conditions: file.conditions,
        targets,
    })
}
