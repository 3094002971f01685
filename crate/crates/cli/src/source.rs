//! Dataset selection from `--synthetic` / `--cifar`.

use std::fs;
use std::path::PathBuf;

use jnd_core::data::{generate_synthetic_split, load_cifar10_batch, Dataset, Split};
use jnd_core::{JndError, Result};

use crate::args::DataArgs;
use crate::output::sha256_hex;

pub const IMAGE_SIZE: [usize; 3] = [32, 32, 3];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synthetic { classes: usize, per_class: usize, seed: u64 },
    Cifar { dir: PathBuf },
}

/// Images of one split with stable identifiers.
#[derive(Clone, Debug)]
pub struct LoadedSplit {
    pub data: Dataset<f64>,
    pub ids: Vec<String>,
    /// Identifies the generator settings or the bytes read.
    pub dataset_id: String,
}

impl DataSource {
    pub fn from_args(args: &DataArgs, seed: u64) -> Result<Self> {
        match (&args.synthetic, &args.cifar) {
            (Some((classes, per_class)), None) => {
                let (classes, per_class) = (*classes, *per_class);
                if per_class == 0 {
                    return Err(JndError::Input("--synthetic: per-class count must be positive".into()));
                }
                Ok(DataSource::Synthetic { classes, per_class, seed: args.data_seed.unwrap_or(seed) })
            }
            (None, Some(dir)) => {
                if !dir.is_dir() {
                    return Err(JndError::Input(format!("--cifar: `{}` is not a directory", dir.display())));
                }
                Ok(DataSource::Cifar { dir: dir.clone() })
            }
            _ => Err(JndError::Input("exactly one of --synthetic or --cifar is required".into())),
        }
    }

    /// Loads `split`. `per_class` overrides the synthetic per-class count;
    /// `limit` caps the CIFAR-10 record count.
    pub fn load(&self, split: Split, per_class: Option<usize>, limit: usize) -> Result<LoadedSplit> {
        let tag = match split {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        };
        match self {
            DataSource::Synthetic { classes, per_class: default, seed } => {
                let n = per_class.unwrap_or(*default);
                let (data, _) = generate_synthetic_split(*classes, n, IMAGE_SIZE, *seed, split)
                    .map_err(|e| JndError::Input(format!("--synthetic: {e}")))?;
                let ids = (0..data.len()).map(|i| format!("{tag}-{i:05}")).collect();
                Ok(LoadedSplit { data, ids, dataset_id: format!("synthetic:{classes}x{n}:seed={seed}:{tag}") })
            }
            DataSource::Cifar { dir } => {
                let files: Vec<String> = match split {
                    Split::Train => (1..=4).map(|b| format!("data_batch_{b}.bin")).collect(),
                    Split::Validation => vec!["data_batch_5.bin".into()],
                    Split::Test => vec!["test_batch.bin".into()],
                };
                let mut data: Option<Dataset<f64>> = None;
                let mut digest = Vec::new();
                for name in files {
                    if data.as_ref().is_some_and(|d| d.len() >= limit) {
                        break;
                    }
                    let path = dir.join(&name);
                    let bytes = fs::read(&path)
                        .map_err(|e| JndError::Input(format!("--cifar: cannot read `{}`: {e}", path.display())))?;
                    digest.push(format!("{name}={}", &sha256_hex(&bytes)[..16]));
                    let batch = load_cifar10_batch(&path).map_err(|e| JndError::Input(format!("--cifar: {e}")))?;
                    data = Some(match data {
                        None => batch,
                        Some(d) => d.concat(batch)?,
                    });
                }
                let data = data.expect("at least one batch").take(limit);
                let ids = (0..data.len()).map(|i| format!("{tag}-{i:05}")).collect();
                let dataset_id = format!("cifar10:{tag}:{}:{}", data.len(), digest.join(","));
                Ok(LoadedSplit { data, ids, dataset_id })
            }
        }
    }
}
