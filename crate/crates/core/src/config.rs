//! Flat `section.key=value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys absent from the
//! file keep their defaults. Relative paths resolve against `paths.out_dir`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cascade::{CascadeConfig, DcConfig};
use crate::error::{Error, Result};
use crate::mri::SyntheticConfig;
use crate::senet::SeNetConfig;
use crate::training::{LossWeights, TrainConfig};

/// Output locations. Relative entries are joined onto `out_dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub out_dir: PathBuf,
    pub dataset: PathBuf,
    pub split: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
    pub images: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            dataset: PathBuf::from("dataset.ddmk"),
            split: PathBuf::from("split.tsv"),
            checkpoints: PathBuf::from("checkpoints"),
            reports: PathBuf::from("reports"),
            images: PathBuf::from("images"),
        }
    }
}

impl Paths {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.resolve(&self.dataset)
    }

    pub fn split_path(&self) -> PathBuf {
        self.resolve(&self.split)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.resolve(&self.checkpoints)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.resolve(&self.reports)
    }

    pub fn images_dir(&self) -> PathBuf {
        self.resolve(&self.images)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: SyntheticConfig,
    pub cascade: CascadeConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dataset = SyntheticConfig::default();
        let cascade = CascadeConfig::new(dataset.ncoil);
        let paths = Paths::default();
        let train = TrainConfig::new(cascade.n_iterations, paths.checkpoint_dir());
        Self {
            dataset,
            cascade,
            train,
            paths,
        }
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Parses the text form; every problem names its 1-based line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        let mut weights_image: Option<(usize, Vec<f64>)> = None;
        let mut weights_kspace: Option<(usize, Vec<f64>)> = None;
        let mut nets: [(usize, usize, usize); 2] = [
            (
                cfg.cascade.inet.base_width,
                cfg.cascade.inet.depth,
                cfg.cascade.inet.reduction_ratio,
            ),
            (
                cfg.cascade.knet.base_width,
                cfg.cascade.knet.depth,
                cfg.cascade.knet.reduction_ratio,
            ),
        ];

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Config { line, message };
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key=value`, got `{trimmed}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            let uint = || {
                value.parse::<usize>().map_err(|_| {
                    err(format!(
                        "`{key}` expects a non-negative integer, got `{value}`"
                    ))
                })
            };
            let u64v = || {
                value.parse::<u64>().map_err(|_| {
                    err(format!(
                        "`{key}` expects an unsigned 64-bit integer, got `{value}`"
                    ))
                })
            };
            let float = || {
                value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("`{key}` expects a finite number, got `{value}`")))
            };
            let boolean = || match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(err(format!("`{key}` expects true or false, got `{value}`"))),
            };
            let floats = || {
                value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| {
                        err(format!(
                            "`{key}` expects a comma-separated list of numbers, got `{value}`"
                        ))
                    })
            };
            let path = || {
                if value.is_empty() {
                    Err(err(format!("`{key}` must not be empty")))
                } else {
                    Ok(PathBuf::from(value))
                }
            };
            match key {
                "dataset.height" => cfg.dataset.height = uint()?,
                "dataset.width" => cfg.dataset.width = uint()?,
                "dataset.ncoil" => cfg.dataset.ncoil = uint()?,
                "dataset.slices" => cfg.dataset.slices = uint()?,
                "dataset.n_ellipses" => cfg.dataset.n_ellipses = uint()?,
                "dataset.noise_sigma" => cfg.dataset.noise_sigma = float()?,
                "dataset.seed" => cfg.dataset.seed = u64v()?,
                "mask.acceleration" => cfg.dataset.acceleration = float()?,
                "mask.center_fraction" => cfg.dataset.center_fraction = float()?,
                "inet.base_width" => nets[0].0 = uint()?,
                "inet.depth" => nets[0].1 = uint()?,
                "inet.reduction_ratio" => nets[0].2 = uint()?,
                "knet.base_width" => nets[1].0 = uint()?,
                "knet.depth" => nets[1].1 = uint()?,
                "knet.reduction_ratio" => nets[1].2 = uint()?,
                "cascade.n_iterations" => cfg.cascade.n_iterations = uint()?,
                "cascade.residual" => cfg.cascade.use_cross_iteration_residual = boolean()?,
                "cascade.dc_lambda" => cfg.cascade.dc = DcConfig { lambda: float()? },
                "train.epochs" => cfg.train.epochs = uint()?,
                "train.learning_rate" => cfg.train.learning_rate = float()?,
                "train.batch_size" => cfg.train.batch_size = uint()?,
                "train.seed" => cfg.train.seed = u64v()?,
                "train.loss_weights.image" => weights_image = Some((line, floats()?)),
                "train.loss_weights.kspace" => weights_kspace = Some((line, floats()?)),
                "paths.out_dir" => cfg.paths.out_dir = path()?,
                "paths.dataset" => cfg.paths.dataset = path()?,
                "paths.split" => cfg.paths.split = path()?,
                "paths.checkpoints" => cfg.paths.checkpoints = path()?,
                "paths.reports" => cfg.paths.reports = path()?,
                "paths.images" => cfg.paths.images = path()?,
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }

        let c = 2 * cfg.dataset.ncoil;
        let net = |(base_width, depth, reduction_ratio): (usize, usize, usize)| SeNetConfig {
            in_channels: c,
            out_channels: c,
            base_width,
            depth,
            reduction_ratio,
        };
        cfg.cascade.inet = net(nets[0]);
        cfg.cascade.knet = net(nets[1]);
        cfg.cascade.ncoil = cfg.dataset.ncoil;

        let n = cfg.cascade.n_iterations;
        let defaults = LossWeights::default_for(n);
        let check_len = |entry: &Option<(usize, Vec<f64>)>, name: &str| -> Result<()> {
            match entry {
                Some((line, w)) if w.len() != n => Err(Error::Config {
                    line: *line,
                    message: format!("`train.loss_weights.{name}` has {} entries but cascade.n_iterations is {n}", w.len()),
                }),
                _ => Ok(()),
            }
        };
        check_len(&weights_image, "image")?;
        check_len(&weights_kspace, "kspace")?;
        cfg.train.loss_weights = LossWeights {
            image: weights_image.map_or(defaults.image.clone(), |(_, w)| w),
            kspace: weights_kspace.map_or(defaults.kspace, |(_, w)| w),
        };
        cfg.sync_checkpoint_dir();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Replaces the output directory, re-resolving dependent paths.
    pub fn set_out_dir(&mut self, out_dir: impl Into<PathBuf>) {
        self.paths.out_dir = out_dir.into();
        self.sync_checkpoint_dir();
    }

    /// Seed override from the command line: dataset, split and training all
    /// follow it.
    pub fn set_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.train.seed = seed;
    }

    fn sync_checkpoint_dir(&mut self) {
        self.train.checkpoint_dir = self.paths.checkpoint_dir();
    }

    pub fn validate(&self) -> Result<()> {
        self.cascade.validate()?;
        self.train.validate(self.cascade.n_iterations)?;
        let geometry = 1usize
            << (self
                .cascade
                .inet
                .depth
                .max(self.cascade.knet.depth)
                .saturating_sub(1))
            .min(30);
        if self.dataset.height % geometry != 0 || self.dataset.width % geometry != 0 {
            return Err(Error::InvalidArgument(format!(
                "image size {}x{} must be divisible by {geometry} for the configured network depth",
                self.dataset.height, self.dataset.width
            )));
        }
        let resolved = [
            ("paths.dataset", self.paths.dataset_path()),
            ("paths.split", self.paths.split_path()),
            ("paths.checkpoints", self.paths.checkpoint_dir()),
            ("paths.reports", self.paths.reports_dir()),
            ("paths.images", self.paths.images_dir()),
        ];
        for (i, (a, pa)) in resolved.iter().enumerate() {
            if pa == &self.paths.out_dir {
                return Err(Error::InvalidArgument(format!(
                    "{a} resolves to the output directory itself"
                )));
            }
            for (b, pb) in &resolved[i + 1..] {
                if pa == pb {
                    return Err(Error::InvalidArgument(format!(
                        "{a} and {b} both resolve to {}",
                        pa.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Text form; [`ExperimentConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let d = &self.dataset;
        let c = &self.cascade;
        let t = &self.train;
        let p = &self.paths;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k}={v}").unwrap();
        kv("dataset.height", d.height.to_string());
        kv("dataset.width", d.width.to_string());
        kv("dataset.ncoil", d.ncoil.to_string());
        kv("dataset.slices", d.slices.to_string());
        kv("dataset.n_ellipses", d.n_ellipses.to_string());
        kv("dataset.noise_sigma", d.noise_sigma.to_string());
        kv("dataset.seed", d.seed.to_string());
        kv("mask.acceleration", d.acceleration.to_string());
        kv("mask.center_fraction", d.center_fraction.to_string());
        for (name, net) in [("inet", &c.inet), ("knet", &c.knet)] {
            kv(&format!("{name}.base_width"), net.base_width.to_string());
            kv(&format!("{name}.depth"), net.depth.to_string());
            kv(
                &format!("{name}.reduction_ratio"),
                net.reduction_ratio.to_string(),
            );
        }
        kv("cascade.n_iterations", c.n_iterations.to_string());
        kv(
            "cascade.residual",
            c.use_cross_iteration_residual.to_string(),
        );
        kv("cascade.dc_lambda", c.dc.lambda.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.seed", t.seed.to_string());
        kv(
            "train.loss_weights.image",
            join_floats(&t.loss_weights.image),
        );
        kv(
            "train.loss_weights.kspace",
            join_floats(&t.loss_weights.kspace),
        );
        kv("paths.out_dir", p.out_dir.display().to_string());
        kv("paths.dataset", p.dataset.display().to_string());
        kv("paths.split", p.split.display().to_string());
        kv("paths.checkpoints", p.checkpoints.display().to_string());
        kv("paths.reports", p.reports.display().to_string());
        kv("paths.images", p.images.display().to_string());
        out
    }
}
