//! Run configuration: a TOML file plus command-line overrides.
//!
//! Relative paths in the file are resolved against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use drbm::data::{
    load_20news, load_cached, load_csv_splits, load_mnist_files, load_usps, save_cached, NewsgroupsOptions, Splits,
    UspsOptions, MNIST_VALID_SIZE,
};
use drbm::eval::GridSpec;
use drbm::training::TrainConfig;
use drbm::{StateSet, UnitKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "mnist")]
    Mnist,
    #[serde(rename = "usps")]
    Usps,
    #[serde(rename = "20news")]
    Newsgroups,
    #[serde(rename = "csv")]
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DatasetKind,
    /// MNIST: directory with the four uncompressed IDX files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Training file (USPS, CSV) or training tree (20news).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// CSV only; the other datasets carve validation from training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    /// Keep only the first `train_limit` training examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    /// Path prefix of a binary cache; `<prefix>.{train,valid,test}.bin` are
    /// read if all exist and written otherwise. Not invalidated
    /// automatically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bins: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_hid: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_reductions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Hidden-unit type: bernoulli, bipolar, binomial or relu.
    #[arg(long)]
    pub variant: Option<String>,
    /// Largest state of a binomial unit.
    #[arg(long)]
    pub n_bins: Option<u32>,
    #[arg(long)]
    pub n_hid: Option<usize>,
    /// Initial learning rate.
    #[arg(long = "eta")]
    pub eta_init: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_reductions: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Keep only the first N training examples.
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        set(&mut self.model.variant, &o.variant);
        set(&mut self.model.n_bins, &o.n_bins);
        set(&mut self.model.n_hid, &o.n_hid);
        set(&mut self.train.eta_init, &o.eta_init);
        set(&mut self.train.batch_size, &o.batch_size);
        set(&mut self.train.max_epochs, &o.max_epochs);
        set(&mut self.train.patience, &o.patience);
        set(&mut self.train.max_reductions, &o.max_reductions);
        set(&mut self.train.seed, &o.seed);
        set(&mut self.train.init_scale, &o.init_scale);
        set(&mut self.data.train_limit, &o.train_limit);
        if let Some(dir) = &o.output_dir {
            // Flags are relative to the working directory, not the config.
            self.output_dir = Some(std::env::current_dir().map(|c| c.join(dir)).unwrap_or_else(|_| dir.clone()));
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(self.output_dir.as_deref().unwrap_or(Path::new("out")))
    }

    pub fn unit_kind(&self) -> Result<UnitKind, CliError> {
        let name = self.model.variant.as_deref().unwrap_or("bernoulli");
        UnitKind::from_name(name).ok_or_else(|| {
            CliError::config(format!("unknown variant {name:?}; expected bernoulli, bipolar, binomial or relu"))
        })
    }

    pub fn variant(&self) -> Result<StateSet, CliError> {
        let kind = self.unit_kind()?;
        match (kind, self.model.n_bins) {
            (UnitKind::Binomial, None) => Err(CliError::config("variant binomial requires n_bins")),
            (UnitKind::Binomial, Some(n)) => StateSet::new(kind, n).map_err(CliError::from_config),
            (_, Some(_)) => Err(CliError::config("n_bins only applies to binomial units")),
            (_, None) => StateSet::new(kind, 1).map_err(CliError::from_config),
        }
    }

    /// Training settings with `variant`, `n_hid` and `eta_init` given
    /// explicitly; everything else comes from the file, overrides or defaults.
    pub fn train_config_with(&self, variant: StateSet, n_hid: usize, eta_init: f64) -> Result<TrainConfig, CliError> {
        let mut c = TrainConfig::new(variant, n_hid, eta_init);
        let t = &self.train;
        if let Some(v) = t.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = t.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = t.patience {
            c.patience = v;
        }
        if let Some(v) = t.max_reductions {
            c.max_reductions = v;
        }
        if let Some(v) = t.seed {
            c.seed = v;
        }
        if let Some(v) = t.init_scale {
            c.init_scale = v;
        }
        c.validate().map_err(CliError::from_config)?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let n_hid = self.model.n_hid.ok_or_else(|| CliError::config("model.n_hid is required"))?;
        let eta = self.train.eta_init.ok_or_else(|| CliError::config("train.eta_init is required"))?;
        self.train_config_with(self.variant()?, n_hid, eta)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid.clone().unwrap_or_default()
    }

    fn required(&self, field: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
        field
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::config(format!("data.{name} is required for this dataset")))
    }

    /// Loads the configured splits, going through the cache if one is set.
    pub fn load_splits(&self) -> Result<Splits, CliError> {
        let d = &self.data;
        let cache_paths = d.cache.as_deref().map(|prefix| {
            let prefix = self.resolve(prefix);
            ["train", "valid", "test"].map(|s| {
                let mut name = prefix.file_name().unwrap_or_default().to_os_string();
                name.push(format!(".{s}.bin"));
                prefix.with_file_name(name)
            })
        });
        let mut splits = match &cache_paths {
            Some(paths) if paths.iter().all(|p| p.is_file()) => {
                let load = |p: &PathBuf| load_cached(p).map_err(CliError::from_data);
                Splits::new(load(&paths[0])?, load(&paths[1])?, load(&paths[2])?).map_err(CliError::from_data)?
            }
            _ => {
                let s = self.load_raw()?;
                if let Some(paths) = &cache_paths {
                    if let Some(parent) = paths[0].parent() {
                        fs::create_dir_all(parent).map_err(|e| CliError::data(format!("{}: {e}", parent.display())))?;
                    }
                    for (p, ds) in paths.iter().zip([&s.train, &s.valid, &s.test]) {
                        save_cached(p, ds).map_err(CliError::from_data)?;
                    }
                }
                s
            }
        };
        if let Some(n) = d.train_limit {
            if n == 0 {
                return Err(CliError::config("data.train_limit must be at least 1"));
            }
            splits.train = splits.train.head(n);
        }
        splits.check_train_coverage().map_err(CliError::from_data)?;
        Ok(splits)
    }

    fn load_raw(&self) -> Result<Splits, CliError> {
        let d = &self.data;
        let loaded = match d.kind {
            DatasetKind::Mnist => {
                let dir = self.required(&d.dir, "dir")?;
                load_mnist_files(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                    d.valid_size.unwrap_or(MNIST_VALID_SIZE),
                )
            }
            DatasetKind::Usps => {
                let defaults = UspsOptions::default();
                let opts = UspsOptions {
                    valid_size: d.valid_size.unwrap_or(defaults.valid_size),
                    shuffle_seed: d.shuffle_seed.unwrap_or(defaults.shuffle_seed),
                };
                load_usps(&self.required(&d.train, "train")?, &self.required(&d.test, "test")?, &opts)
            }
            DatasetKind::Newsgroups => {
                let defaults = NewsgroupsOptions::default();
                let opts = NewsgroupsOptions {
                    vocab_size: d.vocab_size.unwrap_or(defaults.vocab_size),
                    valid_size: d.valid_size.unwrap_or(defaults.valid_size),
                    shuffle_seed: d.shuffle_seed.unwrap_or(defaults.shuffle_seed),
                };
                load_20news(&self.required(&d.train, "train")?, &self.required(&d.test, "test")?, &opts)
                    .map(|(s, _)| s)
            }
            DatasetKind::Csv => load_csv_splits(
                &self.required(&d.train, "train")?,
                &self.required(&d.valid, "valid")?,
                &self.required(&d.test, "test")?,
                d.n_classes,
            ),
        };
        loaded.map_err(CliError::from_data)
    }
}
