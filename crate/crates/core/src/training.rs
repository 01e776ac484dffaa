//! Per-iteration image + k-space loss, Adam training loop and
//! validation-driven checkpointing.
//!
//! A checkpoint directory holds `latest.ddrk`, `best.ddrk` and
//! `history.tsv`. The latest checkpoint also carries the optimizer moments
//! and loop state, so a resumed run continues exactly where it stopped.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::{Tape, Var};
use crate::cascade::{CascadeConfig, CascadeOutputs, CascadeVars, DdCsenet};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fourier::{ComplexImage, Domain};
use crate::io::write_file_atomic;
use crate::metrics::{format_significant, nmse};
use crate::mri::derive_seed;
use crate::mri::{rss_reconstruct, Dataset, DatasetSlice, DatasetSplit, KSpaceVolume};
use crate::optim::AdamState;
use crate::tensor::Tensor;

pub const LATEST_CHECKPOINT: &str = "latest.ddrk";
pub const BEST_CHECKPOINT: &str = "best.ddrk";
pub const HISTORY_FILE: &str = "history.tsv";

/// Loss convention written into report headers.
pub const LOSS_CONVENTION: &str =
    "l2 loss = mean squared error (squared L2 norm divided by element count)";

/// Per-iteration weights `lambda_I` and `lambda_K`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub image: Vec<f64>,
    pub kspace: Vec<f64>,
}

impl LossWeights {
    /// 0.25 for every iteration but the last, 1 for the last.
    pub fn default_for(n_iterations: usize) -> Self {
        let w: Vec<f64> = (0..n_iterations)
            .map(|m| if m + 1 == n_iterations { 1.0 } else { 0.25 })
            .collect();
        Self {
            image: w.clone(),
            kspace: w,
        }
    }

    pub fn validate(&self, n_iterations: usize) -> Result<()> {
        if self.image.len() != n_iterations || self.kspace.len() != n_iterations {
            return Err(Error::InvalidArgument(format!(
                "loss weights have {} image and {} k-space entries, the cascade has {n_iterations} iterations",
                self.image.len(),
                self.kspace.len()
            )));
        }
        let all = self.image.iter().chain(&self.kspace);
        if all.clone().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and >= 0".into(),
            ));
        }
        if !all.clone().any(|w| *w > 0.0) {
            return Err(Error::InvalidArgument(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    pub loss_weights: LossWeights,
}

impl TrainConfig {
    /// 50 epochs, learning rate 1e-4, batch 2.
    pub fn new(n_iterations: usize, checkpoint_dir: impl Into<PathBuf>) -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-4,
            batch_size: 2,
            seed: 42,
            checkpoint_dir: checkpoint_dir.into(),
            loss_weights: LossWeights::default_for(n_iterations),
        }
    }

    pub fn validate(&self, n_iterations: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        self.loss_weights.validate(n_iterations)
    }
}

/// Records the weighted loss of every iteration's image and k-space against
/// the fully sampled targets.
pub fn loss_on_tape(
    tape: &mut Tape,
    vars: &CascadeVars,
    i_full: Var,
    k_full: Var,
    weights: &LossWeights,
) -> Result<Var> {
    let n = vars.images.len();
    if vars.kspaces.len() != n {
        return Err(Error::InvalidArgument(
            "cascade vars hold unequal image/k-space counts".into(),
        ));
    }
    weights.validate(n)?;
    let mut total: Option<Var> = None;
    let mut push = |tape: &mut Tape, pred: Var, target: Var, w: f64| -> Result<()> {
        if w == 0.0 {
            return Ok(());
        }
        let l = tape.mse(pred, target)?;
        let l = tape.scale(l, w);
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
        Ok(())
    };
    for m in 0..n {
        push(tape, vars.images[m], i_full, weights.image[m])?;
        push(tape, vars.kspaces[m], k_full, weights.kspace[m])?;
    }
    Ok(total.expect("validated weights include a positive entry"))
}

/// Loss of already computed outputs.
pub fn compute_loss(
    outputs: &CascadeOutputs,
    i_full: &ComplexImage,
    k_full: &KSpaceVolume,
    weights: &LossWeights,
) -> Result<f64> {
    if i_full.domain() != Domain::Image {
        return Err(Error::InvalidArgument(
            "I_full must be an image-domain tensor".into(),
        ));
    }
    if outputs.images.len() != outputs.kspaces.len() {
        return Err(Error::InvalidArgument(
            "outputs hold unequal image/k-space counts".into(),
        ));
    }
    let mut tape = Tape::new();
    let vars = CascadeVars {
        images: outputs
            .images
            .iter()
            .map(|c| tape.constant(c.tensor().clone()))
            .collect(),
        kspaces: outputs
            .kspaces
            .iter()
            .map(|c| tape.constant(c.tensor().clone()))
            .collect(),
        inet_inputs: Vec::new(),
        knet_inputs: Vec::new(),
        knet_predictions: Vec::new(),
    };
    let i = tape.constant(i_full.tensor().clone());
    let k = tape.constant(k_full.tensor().clone());
    let loss = loss_on_tape(&mut tape, &vars, i, k, weights)?;
    Ok(tape.value(loss).item())
}

/// Masked input and fully sampled targets of one slice.
#[derive(Clone, Debug)]
struct Sample {
    slice_id: String,
    masked: KSpaceVolume,
    mask: Vec<bool>,
    k_full: Tensor,
    i_full: Tensor,
    rss: Tensor,
}

impl Sample {
    fn from_slice(slice: &DatasetSlice) -> Result<Self> {
        let masked = crate::mri::apply_mask(&slice.volume, &slice.mask)?;
        Ok(Self {
            slice_id: slice.volume.slice_id.clone(),
            masked,
            mask: slice.mask.lines.clone(),
            k_full: slice.volume.tensor().clone(),
            i_full: slice.volume.coil_images()?.into_tensor(),
            rss: rss_reconstruct(&slice.volume)?,
        })
    }
}

fn collect_samples(dataset: &Dataset, ids: &[String], split: &str) -> Result<Vec<Sample>> {
    if ids.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    ids.iter()
        .map(|id| {
            let slice = dataset.find(id).ok_or_else(|| {
                Error::InvalidArgument(format!("{split} split names unknown slice `{id}`"))
            })?;
            Sample::from_slice(slice)
        })
        .collect()
}

/// Loss and per-parameter gradients of one sample.
fn sample_gradients(
    model: &DdCsenet,
    sample: &Sample,
    weights: &LossWeights,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let ks = tape.constant(sample.masked.tensor().clone());
    let vars = model.forward_on_tape(&mut tape, &bound, ks, &sample.mask)?;
    let i_full = tape.constant(sample.i_full.clone());
    let k_full = tape.constant(sample.k_full.clone());
    let loss = loss_on_tape(&mut tape, &vars, i_full, k_full, weights)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let mut grads = tape.backward(loss)?;
    Ok((value, bound.gradients(&mut grads)))
}

/// One line of `history.tsv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nmse: f64,
}

pub fn format_history(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in history {
        writeln!(
            out,
            "{}\t{}\t{}",
            r.epoch,
            format_significant(r.train_loss, 9),
            format_significant(r.val_nmse, 9)
        )
        .unwrap();
    }
    out
}

/// Mean image NMSE (percent) of the model's RSS output against the ground
/// truth RSS over `dataset` slices named in `ids`.
pub fn validation_nmse(model: &DdCsenet, dataset: &Dataset, ids: &[String]) -> Result<f64> {
    let samples = collect_samples(dataset, ids, "val")?;
    mean_nmse(model, &samples)
}

fn mean_nmse(model: &DdCsenet, samples: &[Sample]) -> Result<f64> {
    let values = samples
        .par_iter()
        .map(|s| {
            let out = model.forward(
                &s.masked,
                &crate::mri::SamplingMask::from_lines(s.mask.clone()),
            )?;
            nmse(&out.final_image, &s.rss)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Training state between epochs.
#[derive(Debug)]
pub struct Trainer {
    model: DdCsenet,
    best: DdCsenet,
    adam: AdamState,
    config: TrainConfig,
    train: Vec<Sample>,
    val: Vec<Sample>,
    history: Vec<EpochRecord>,
    best_val: f64,
}

impl Trainer {
    /// Fresh model initialized from `train.seed`.
    pub fn new(
        dataset: &Dataset,
        split: &DatasetSplit,
        cascade: CascadeConfig,
        config: TrainConfig,
    ) -> Result<Self> {
        let model = DdCsenet::new(cascade, config.seed)?;
        Self::with_model(dataset, split, model, config)
    }

    /// Starts from an existing model with a fresh optimizer.
    pub fn with_model(
        dataset: &Dataset,
        split: &DatasetSplit,
        model: DdCsenet,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate(model.config().n_iterations)?;
        let train = collect_samples(dataset, &split.train, "train")?;
        let val = collect_samples(dataset, &split.val, "val")?;
        for s in train.iter().chain(&val) {
            if s.masked.ncoil() != model.config().ncoil {
                return Err(Error::shape(
                    "train",
                    format!(
                        "slice `{}` has shape {:?} but the model expects {} coils",
                        s.slice_id,
                        s.masked.tensor().shape(),
                        model.config().ncoil
                    ),
                ));
            }
        }
        let adam = AdamState::new(model.params(), config.learning_rate);
        Ok(Self {
            best: model.clone(),
            model,
            adam,
            config,
            train,
            val,
            history: Vec::new(),
            best_val: f64::INFINITY,
        })
    }

    /// Continues from `checkpoint_dir/latest.ddrk`.
    pub fn resume(dataset: &Dataset, split: &DatasetSplit, config: TrainConfig) -> Result<Self> {
        let dir = config.checkpoint_dir.clone();
        let latest = Checkpoint::load(&dir.join(LATEST_CHECKPOINT))?;
        let model = DdCsenet::from_checkpoint(&latest)?;
        let mut trainer = Self::with_model(dataset, split, model, config)?;
        trainer.restore_state(&latest)?;
        let best_path = dir.join(BEST_CHECKPOINT);
        if best_path.exists() {
            trainer.best = DdCsenet::from_checkpoint(&Checkpoint::load(&best_path)?)?;
        }
        Ok(trainer)
    }

    pub fn model(&self) -> &DdCsenet {
        &self.model
    }

    /// Parameters with the lowest validation NMSE seen so far.
    pub fn best_model(&self) -> &DdCsenet {
        &self.best
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One pass over the shuffled training slices, then validation and
    /// checkpointing.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.history.len() + 1;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            epoch as u64,
        )));

        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let model = &self.model;
            let weights = &self.config.loss_weights;
            let results = batch
                .par_iter()
                .map(|&i| sample_gradients(model, &self.train[i], weights))
                .collect::<Result<Vec<_>>>()?;
            let mut summed: Vec<Option<Vec<f64>>> = vec![None; self.model.params().len()];
            for (k, (loss, grads)) in results.into_iter().enumerate() {
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss {loss} at epoch {epoch}, batch {}, slice `{}`",
                        b + 1,
                        self.train[batch[k]].slice_id
                    )));
                }
                loss_sum += loss;
                for (acc, g) in summed.iter_mut().zip(grads) {
                    if let Some(g) = g {
                        match acc {
                            Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                            None => *acc = Some(g),
                        }
                    }
                }
            }
            let n = batch.len() as f64;
            for g in summed.iter_mut().flatten() {
                g.iter_mut().for_each(|x| *x /= n);
            }
            self.adam
                .update(self.model.params_mut(), &summed)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => {
                        Error::NonFinite(format!("epoch {epoch}, batch {}: {msg}", b + 1))
                    }
                    other => other,
                })?;
        }

        let val_nmse = mean_nmse(&self.model, &self.val)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / self.train.len() as f64,
            val_nmse,
        };
        self.history.push(record);
        if val_nmse < self.best_val {
            self.best_val = val_nmse;
            self.best = self.model.clone();
            self.best
                .to_checkpoint()
                .save(&self.config.checkpoint_dir.join(BEST_CHECKPOINT))?;
        }
        self.save_latest()?;
        write_file_atomic(
            &self.config.checkpoint_dir.join(HISTORY_FILE),
            format_history(&self.history).as_bytes(),
        )?;
        Ok(record)
    }

    /// Runs epochs until `config.epochs` have completed in total.
    pub fn run(&mut self) -> Result<&[EpochRecord]> {
        while self.history.len() < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(&self.history)
    }

    fn save_latest(&self) -> Result<()> {
        let mut ck = self.model.to_checkpoint();
        let names: Vec<String> = self
            .model
            .params()
            .iter()
            .map(|(n, _)| n.to_string())
            .collect();
        for (i, name) in names.iter().enumerate() {
            let shape = self
                .model
                .params()
                .get(self.model.params().find(name).unwrap())
                .shape()
                .to_vec();
            ck.push(
                format!("adam.m.{name}"),
                Tensor::new(shape.clone(), self.adam.m[i].clone())?,
            );
            ck.push(
                format!("adam.v.{name}"),
                Tensor::new(shape, self.adam.v[i].clone())?,
            );
        }
        ck.push(
            "train.state",
            Tensor::new(vec![2], vec![self.adam.step as f64, self.best_val])?,
        );
        let flat: Vec<f64> = self
            .history
            .iter()
            .flat_map(|r| [r.epoch as f64, r.train_loss, r.val_nmse])
            .collect();
        ck.push(
            "train.history",
            Tensor::new(vec![self.history.len(), 3], flat)?,
        );
        ck.save(&self.config.checkpoint_dir.join(LATEST_CHECKPOINT))
    }

    fn restore_state(&mut self, ck: &Checkpoint) -> Result<()> {
        let missing =
            |name: &str| Error::Corrupt(format!("checkpoint has no `{name}` entry; cannot resume"));
        let names: Vec<String> = self
            .model
            .params()
            .iter()
            .map(|(n, _)| n.to_string())
            .collect();
        for (i, name) in names.iter().enumerate() {
            let key_m = format!("adam.m.{name}");
            let key_v = format!("adam.v.{name}");
            let m = ck.get(&key_m).ok_or_else(|| missing(&key_m))?;
            let v = ck.get(&key_v).ok_or_else(|| missing(&key_v))?;
            if m.len() != self.adam.m[i].len() || v.len() != self.adam.v[i].len() {
                return Err(Error::Corrupt(format!(
                    "optimizer state for `{name}` has the wrong size"
                )));
            }
            self.adam.m[i] = m.data().to_vec();
            self.adam.v[i] = v.data().to_vec();
        }
        let state = ck
            .get("train.state")
            .ok_or_else(|| missing("train.state"))?;
        let history = ck
            .get("train.history")
            .ok_or_else(|| missing("train.history"))?;
        if state.len() != 2 || history.shape().len() != 2 || history.shape()[1] != 3 {
            return Err(Error::Corrupt("malformed training state".into()));
        }
        self.adam.step = state.data()[0] as u64;
        self.best_val = state.data()[1];
        self.history = history
            .data()
            .chunks(3)
            .map(|r| EpochRecord {
                epoch: r[0] as usize,
                train_loss: r[1],
                val_nmse: r[2],
            })
            .collect();
        Ok(())
    }
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train(
    dataset: &Dataset,
    split: &DatasetSplit,
    cascade: CascadeConfig,
    config: TrainConfig,
) -> Result<Trainer> {
    let mut trainer = Trainer::new(dataset, split, cascade, config)?;
    trainer.run()?;
    Ok(trainer)
}

/// Path helper used by callers that only know the directory.
pub fn checkpoint_path(dir: &Path, best: bool) -> PathBuf {
    dir.join(if best {
        BEST_CHECKPOINT
    } else {
        LATEST_CHECKPOINT
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::DcConfig;
    use crate::senet::SeNetConfig;

    #[test]
    fn default_weights() {
        assert_eq!(LossWeights::default_for(1).image, [1.0]);
        assert_eq!(LossWeights::default_for(2).kspace, [0.25, 1.0]);
        assert_eq!(LossWeights::default_for(3).image, [0.25, 0.25, 1.0]);
        assert!(LossWeights::default_for(2).validate(3).is_err());
        let zero = LossWeights {
            image: vec![0.0],
            kspace: vec![0.0],
        };
        assert!(zero.validate(1).is_err());
    }

    #[test]
    fn train_config_validation() {
        let ok = TrainConfig::new(2, "ck");
        assert!(ok.validate(2).is_ok());
        assert!(TrainConfig {
            epochs: 0,
            ..ok.clone()
        }
        .validate(2)
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..ok.clone()
        }
        .validate(2)
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..ok
        }
        .validate(2)
        .is_err());
    }

    fn image(values: impl Fn(usize) -> f64) -> ComplexImage {
        ComplexImage::new(Tensor::from_fn([1, 2, 4, 4], values), Domain::Image).unwrap()
    }

    fn kspace(values: impl Fn(usize) -> f64) -> ComplexImage {
        ComplexImage::new(Tensor::from_fn([1, 2, 4, 4], values), Domain::KSpace).unwrap()
    }

    #[test]
    fn loss_matches_direct_sum() {
        let k_full = KSpaceVolume::from_tensor(
            Tensor::from_fn([1, 2, 4, 4], |i| (i as f64 * 0.37).sin()),
            "s",
        )
        .unwrap();
        let i_full = k_full.coil_images().unwrap();
        let outputs = CascadeOutputs {
            images: vec![image(|i| (i as f64).cos()), image(|i| 0.1 * i as f64)],
            kspaces: vec![kspace(|i| (i % 3) as f64), kspace(|i| -(i as f64).sqrt())],
            final_image: Tensor::zeros([4, 4]),
        };
        let mse = |a: &Tensor, b: &Tensor| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / a.len() as f64
        };
        let w = LossWeights::default_for(2);
        let expected = 0.25 * mse(outputs.images[0].tensor(), i_full.tensor())
            + 0.25 * mse(outputs.kspaces[0].tensor(), k_full.tensor())
            + mse(outputs.images[1].tensor(), i_full.tensor())
            + mse(outputs.kspaces[1].tensor(), k_full.tensor());
        let got = compute_loss(&outputs, &i_full, &k_full, &w).unwrap();
        assert!((got - expected).abs() < 1e-12);

        let perfect = CascadeOutputs {
            images: vec![i_full.clone(), i_full.clone()],
            kspaces: vec![k_full.kspace().clone(), k_full.kspace().clone()],
            final_image: Tensor::zeros([4, 4]),
        };
        assert_eq!(compute_loss(&perfect, &i_full, &k_full, &w).unwrap(), 0.0);

        let single = CascadeOutputs {
            images: vec![outputs.images[0].clone()],
            kspaces: vec![outputs.kspaces[0].clone()],
            final_image: Tensor::zeros([4, 4]),
        };
        let image_only = LossWeights {
            image: vec![1.0],
            kspace: vec![0.0],
        };
        let got = compute_loss(&single, &i_full, &k_full, &image_only).unwrap();
        assert!((got - mse(outputs.images[0].tensor(), i_full.tensor())).abs() < 1e-15);
        assert!(compute_loss(&single, &i_full, &k_full, &w).is_err());
    }

    pub(crate) fn tiny_cascade(n: usize) -> CascadeConfig {
        let net = SeNetConfig {
            in_channels: 4,
            out_channels: 4,
            base_width: 4,
            depth: 2,
            reduction_ratio: 2,
        };
        CascadeConfig {
            n_iterations: n,
            use_cross_iteration_residual: true,
            inet: net.clone(),
            knet: net,
            dc: DcConfig::default(),
            ncoil: 2,
        }
    }

    #[test]
    fn empty_splits_are_rejected() {
        let cfg = crate::mri::SyntheticConfig {
            height: 32,
            width: 32,
            ncoil: 2,
            slices: 3,
            ..Default::default()
        };
        let ds = crate::mri::generate_dataset(&cfg).unwrap();
        let split = DatasetSplit {
            train: vec!["slice_0000".into()],
            val: vec![],
            test: vec![],
        };
        let dir = std::env::temp_dir();
        let err = Trainer::new(&ds, &split, tiny_cascade(1), TrainConfig::new(1, dir)).unwrap_err();
        assert!(matches!(err, Error::EmptySplit(ref s) if s == "val"));
    }
}
