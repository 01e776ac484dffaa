//! The four pipeline commands behind the `ddrecon` binary, driven by an
//! [`ExperimentConfig`].

use std::path::{Path, PathBuf};

use crate::cascade::DdCsenet;
use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluate::{evaluate as score, Evaluation};
use crate::io::write_file_atomic;
use crate::mri::{
    apply_mask, generate_dataset, read_dataset, read_split, rss_reconstruct, split_dataset,
    write_dataset, write_split, zero_fill_reconstruct, Dataset, DatasetSplit, DEFAULT_FRACTIONS,
};
use crate::pgm;
use crate::training::{checkpoint_path, EpochRecord, Trainer};

pub const IMAGE_REPORT: &str = "image_report.tsv";
pub const KSPACE_REPORT: &str = "kspace_report.tsv";
pub const CONFIG_COPY: &str = "config.txt";

/// Writes the dataset container, its split and a copy of the config.
pub fn simulate(config: &ExperimentConfig) -> Result<(Dataset, DatasetSplit)> {
    let dataset = generate_dataset(&config.dataset)?;
    let split = split_dataset(&dataset.ids(), DEFAULT_FRACTIONS, config.dataset.seed)?;
    write_dataset(&dataset, &config.paths.dataset_path())?;
    write_split(&split, &config.paths.split_path())?;
    write_file_atomic(
        &config.paths.out_dir.join(CONFIG_COPY),
        config.to_text().as_bytes(),
    )?;
    Ok((dataset, split))
}

pub fn load_data(config: &ExperimentConfig) -> Result<(Dataset, DatasetSplit)> {
    let path = config.paths.dataset_path();
    if !path.exists() {
        return Err(Error::io(
            &path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "dataset not found; run `ddrecon simulate` first",
            ),
        ));
    }
    Ok((
        read_dataset(&path)?,
        read_split(&config.paths.split_path())?,
    ))
}

/// Trains up to `config.train.epochs`, calling `on_epoch` after each one.
pub fn train(
    config: &ExperimentConfig,
    resume: bool,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Trainer> {
    let (dataset, split) = load_data(config)?;
    let mut trainer = if resume {
        let t = Trainer::resume(&dataset, &split, config.train.clone())?;
        if t.model().config() != &config.cascade {
            return Err(Error::InvalidArgument(
                "latest checkpoint was trained with a different cascade configuration".into(),
            ));
        }
        t
    } else {
        Trainer::new(
            &dataset,
            &split,
            config.cascade.clone(),
            config.train.clone(),
        )?
    };
    while trainer.epochs_done() < config.train.epochs {
        let record = trainer.run_epoch()?;
        on_epoch(&record);
    }
    Ok(trainer)
}

/// Loads `checkpoint`, or the best-validation checkpoint by default.
pub fn load_model(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
) -> Result<(DdCsenet, PathBuf)> {
    let path = checkpoint.map_or_else(
        || checkpoint_path(&config.train.checkpoint_dir, true),
        Path::to_path_buf,
    );
    Ok((DdCsenet::from_checkpoint(&Checkpoint::load(&path)?)?, path))
}

/// Errors naming both shapes when the model cannot run on a slice.
pub fn check_compatible(model: &DdCsenet, dataset: &Dataset, ids: &[String]) -> Result<()> {
    let cfg = model.config();
    let factor = 1usize << cfg.inet.depth.max(cfg.knet.depth).saturating_sub(1);
    for id in ids {
        let slice = dataset
            .find(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown slice `{id}`")))?;
        let shape = slice.volume.tensor().shape();
        if shape[1] != 2 * cfg.ncoil || shape[2] % factor != 0 || shape[3] % factor != 0 {
            return Err(Error::shape(
                "reconstruct",
                format!(
                    "checkpoint expects k-space [1, {}, H, W] with H and W divisible by {factor}, slice `{id}` is {shape:?}",
                    2 * cfg.ncoil
                ),
            ));
        }
    }
    Ok(())
}

/// Writes `<id>_recon.pgm`, `<id>_zerofill.pgm` and `<id>_truth.pgm` per
/// slice, all scaled by the ground-truth maximum. Returns the written paths.
pub fn reconstruct(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    slices: &[String],
) -> Result<Vec<PathBuf>> {
    let (dataset, split) = load_data(config)?;
    let (model, _) = load_model(config, checkpoint)?;
    let ids = if slices.is_empty() {
        split.test.as_slice()
    } else {
        slices
    };
    check_compatible(&model, &dataset, ids)?;
    let dir = config.paths.images_dir();
    let mut written = Vec::new();
    for id in ids {
        let slice = dataset.find(id).expect("checked above");
        let truth = rss_reconstruct(&slice.volume)?;
        let masked = apply_mask(&slice.volume, &slice.mask)?;
        let zero_fill = zero_fill_reconstruct(&masked)?;
        let out = model.forward(&masked, &slice.mask)?;
        let peak = truth.max();
        for (suffix, image) in [
            ("recon", &out.final_image),
            ("zerofill", &zero_fill),
            ("truth", &truth),
        ] {
            let path = dir.join(format!("{id}_{suffix}.pgm"));
            pgm::write_pgm(&path, image, peak)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Scores a split and writes both reports into the reports directory.
pub fn evaluate(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    split_name: &str,
) -> Result<Evaluation> {
    let (dataset, split) = load_data(config)?;
    let ids = split.get(split_name).ok_or_else(|| {
        Error::InvalidArgument(format!("unknown split `{split_name}` (train, val or test)"))
    })?;
    if ids.is_empty() {
        return Err(Error::EmptySplit(split_name.to_string()));
    }
    let (model, path) = load_model(config, checkpoint)?;
    check_compatible(&model, &dataset, ids)?;
    let eval = score(&model, &dataset, ids)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (image, kspace) = eval.to_tsv(&format!("checkpoint: {name}; split: {split_name}"));
    let dir = config.paths.reports_dir();
    write_file_atomic(&dir.join(IMAGE_REPORT), image.as_bytes())?;
    write_file_atomic(&dir.join(KSPACE_REPORT), kspace.as_bytes())?;
    Ok(eval)
}
