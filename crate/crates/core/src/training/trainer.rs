//! The training loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainingConfig;
use super::dataset::{ingest_dataset, DatasetItem};
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::image::{round_up, ImagePlane, SegmentationMap};
use crate::losses::{
    adversarial_loss, discriminator_loss, feature_matching_loss, generator_loss, l1_loss, scalar,
    ssim_loss, vgg_perceptual_loss, GeneratorTerms, LossReport, LossWeights,
};
use crate::networks::{DsslicNetworks, FeatureExtractor, Variant, Vgg19};
use crate::weights::{write_atomic, WeightsFile};

pub const CHECKPOINT_KIND: &str = "dsslic-checkpoint";
pub const CHECKPOINT_VERSION: u8 = 1;
pub const LOSS_CSV_HEADER: &str = "epoch,step,l1,ssim,dis,vgg,adv_g,d_loss";

/// Learning rate for `epoch`: constant for the first `epochs_lr_fixed`
/// epochs, then linear decay reaching zero at `epochs_total`.
pub fn lr_schedule(epoch: usize, cfg: &TrainingConfig) -> Result<f64> {
    if epoch >= cfg.epochs_total {
        return Err(Error::Config(format!(
            "epoch {epoch} outside 0..{}",
            cfg.epochs_total
        )));
    }
    if epoch < cfg.epochs_lr_fixed {
        return Ok(cfg.learning_rate);
    }
    let span = (cfg.epochs_total - cfg.epochs_lr_fixed) as f64;
    Ok(cfg.learning_rate * (cfg.epochs_total - epoch) as f64 / span)
}

/// Whether the feature-matching and VGG terms are used in `epoch`.
pub fn perceptual_schedule(epoch: usize, cfg: &TrainingConfig) -> bool {
    epoch < cfg.epochs_total.saturating_sub(cfg.epochs_no_perceptual_tail)
}

/// Same as [`perceptual_schedule`], except that `synth` keeps the
/// perceptual terms for the whole run.
pub fn perceptual_enabled(epoch: usize, cfg: &TrainingConfig) -> bool {
    cfg.variant == Variant::Synth || perceptual_schedule(epoch, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub report: LossReport,
}

pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = format!("{LOSS_CSV_HEADER}\n");
    for r in history {
        let p = &r.report;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.epoch, r.step, p.l1, p.ssim, p.dis, p.vgg, p.adv_g, p.d_loss
        )
        .expect("write to string");
    }
    s
}

/// Parses a loss history written by [`loss_csv`].
pub fn parse_loss_csv(text: &str) -> Result<Vec<LossRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_CSV_HEADER) {
        return Err(Error::Config("loss history has an unexpected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Config(format!("malformed loss row {line:?}"));
            if f.len() != 8 {
                return Err(bad());
            }
            let n = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(LossRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                step: f[1].parse().map_err(|_| bad())?,
                report: LossReport::compose(n(2)?, n(3)?, n(4)?, n(5)?, n(6)?, n(7)?, true),
            })
        })
        .collect()
}

/// Networks, both optimizers and the perceptual feature extractor.
pub struct TrainState {
    pub networks: DsslicNetworks,
    pub variant: Variant,
    opt_g: Adam,
    opt_d: Adam,
    extractor: Option<Box<dyn FeatureExtractor>>,
    /// completed epochs
    pub epoch: usize,
    /// completed steps
    pub step: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let networks = DsslicNetworks::new(cfg.network_config(), cfg.seed)?;
        let mut state = Self::from_networks(networks, cfg.variant, cfg.beta1, cfg.beta2);
        if let Some(path) = &cfg.vgg_weights {
            state.extractor = Some(Box::new(Vgg19::load(path)?));
        }
        Ok(state)
    }

    pub fn from_networks(networks: DsslicNetworks, variant: Variant, beta1: f64, beta2: f64) -> Self {
        let opt_g = Adam::new(networks.generator_params(), beta1, beta2);
        let opt_d = Adam::new(networks.discriminator_params(), beta1, beta2);
        Self {
            networks,
            variant,
            opt_g,
            opt_d,
            extractor: None,
            epoch: 0,
            step: 0,
        }
    }

    pub fn with_extractor(mut self, extractor: Box<dyn FeatureExtractor>) -> Self {
        self.extractor = Some(extractor);
        self
    }

    pub fn checkpoint(&self) -> Result<WeightsFile> {
        let mut file = WeightsFile::new(CHECKPOINT_KIND);
        file.set_meta("checkpoint_version", &CHECKPOINT_VERSION)?;
        file.set_meta("network", self.networks.config())?;
        file.set_meta("variant", &self.variant)?;
        file.set_meta("epoch", &self.epoch)?;
        file.set_meta("step", &self.step)?;
        file.set_meta("adam_g_steps", &self.opt_g.steps())?;
        file.set_meta("adam_d_steps", &self.opt_d.steps())?;
        file.tensors = self.networks.store().export()?;
        file.tensors.extend(self.opt_g.export("adam_g")?);
        file.tensors.extend(self.opt_d.export("adam_d")?);
        Ok(file)
    }

    /// Restores a checkpoint into a state built from the same configuration.
    pub fn restore(&mut self, file: &WeightsFile) -> Result<()> {
        file.expect_kind(CHECKPOINT_KIND)?;
        let version: u8 = file.meta("checkpoint_version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let network: crate::networks::NetworkConfig = file.meta("network")?;
        if &network != self.networks.config() {
            return Err(Error::WeightsMismatch(format!(
                "checkpoint network {network:?} differs from configured {:?}",
                self.networks.config()
            )));
        }
        let variant: Variant = file.meta("variant")?;
        if variant != self.variant {
            return Err(Error::WeightsMismatch(format!(
                "checkpoint is for {variant}, configured {}",
                self.variant
            )));
        }
        let params: Vec<_> = file
            .tensors
            .iter()
            .filter(|t| !t.name.starts_with("adam_"))
            .cloned()
            .collect();
        self.networks.store().import(&params)?;
        self.opt_g.import("adam_g", file.meta("adam_g_steps")?, &file.tensors)?;
        self.opt_d.import("adam_d", file.meta("adam_d_steps")?, &file.tensors)?;
        self.epoch = file.meta("epoch")?;
        self.step = file.meta("step")?;
        Ok(())
    }
}

/// Padding granularity for training batches. Besides α and FineNet's 8,
/// every stride-2 discriminator layer must see an even size: candle's conv
/// backward has no output padding, so an odd input gets a gradient one
/// pixel short.
pub fn training_multiple(networks: &DsslicNetworks) -> usize {
    let disc = networks
        .discriminators
        .iter()
        .map(|d| d.scale() * d.spec().downsampling())
        .max()
        .unwrap_or(1);
    networks.config().alpha.max(8).max(disc)
}

fn stack_batch(
    state: &TrainState,
    batch: &[&DatasetItem],
) -> Result<(Tensor, Option<Tensor>)> {
    let first = batch.first().ok_or_else(|| Error::Dataset("empty batch".into()))?;
    let m = training_multiple(&state.networks);
    let dims = (first.image.height(), first.image.width());
    let (ph, pw) = (round_up(dims.0, m), round_up(dims.1, m));
    let mut planes: Vec<ImagePlane> = Vec::with_capacity(batch.len());
    let mut maps: Vec<SegmentationMap> = Vec::with_capacity(batch.len());
    for item in batch {
        if (item.image.height(), item.image.width()) != dims {
            return Err(Error::Dataset(format!(
                "{}: batch mixes {}×{} and {}×{} images",
                item.id,
                dims.0,
                dims.1,
                item.image.height(),
                item.image.width()
            )));
        }
        let p = item.image.pad_to_multiple(m);
        debug_assert_eq!((p.height(), p.width()), (ph, pw));
        planes.push(p);
        maps.push(item.segmentation.pad_to_multiple(m));
    }
    let x = state.networks.image_batch(&planes.iter().collect::<Vec<_>>())?;
    let s = state.networks.segmentation_input(&maps.iter().collect::<Vec<_>>())?;
    Ok((x, s))
}

fn non_finite(state: &TrainState, report: &LossReport) -> Error {
    Error::NonFiniteLoss {
        epoch: state.epoch,
        step: state.step,
        report: report.to_string(),
    }
}

/// One discriminator update followed by one generator update at learning
/// rate `lr`. Nothing is updated when a loss is non-finite.
pub fn train_step(
    state: &mut TrainState,
    batch: &[&DatasetItem],
    weights: &LossWeights,
    lr: f64,
) -> Result<LossReport> {
    weights.validate()?;
    let (x, s) = stack_batch(state, batch)?;
    let nets = &state.networks;
    let seg = s.as_ref();

    // discriminator: real x against detached x′, both conditioned on c′
    let rec = nets.generate(&x, seg, true)?;
    let c_up = rec.upsampled.detach();
    let fake = rec.coarse.detach();
    let mut real_scores = Vec::with_capacity(2);
    let mut fake_scores = Vec::with_capacity(2);
    for d in &nets.discriminators {
        real_scores.push(d.forward(seg, &c_up, &x)?.score);
        fake_scores.push(d.forward(seg, &c_up, &fake)?.score);
    }
    let d_loss = discriminator_loss(&real_scores, &fake_scores)?;
    let d_value = scalar(&d_loss)?;
    if !d_value.is_finite() {
        let r = LossReport::compose(f64::NAN, f64::NAN, 0.0, 0.0, f64::NAN, d_value, false);
        return Err(non_finite(state, &r));
    }
    let d_grads = d_loss.backward()?;
    state.opt_d.step(&d_grads, lr)?;

    // generator, against the updated discriminators
    let nets = &state.networks;
    let mut adv_scores = Vec::with_capacity(2);
    let mut real_feats = Vec::with_capacity(2);
    let mut fake_feats = Vec::with_capacity(2);
    for d in &nets.discriminators {
        let real = d.forward(seg, &c_up, &x)?;
        real_feats.push(real.features.iter().map(Tensor::detach).collect::<Vec<_>>());
        let out = d.forward(seg, &c_up, &rec.coarse)?;
        adv_scores.push(out.score);
        fake_feats.push(out.features);
    }
    let perceptual = weights.include_perceptual;
    let terms = GeneratorTerms {
        adversarial: adversarial_loss(&adv_scores)?,
        l1: l1_loss(&x, &rec.coarse, weights.lambda)?,
        ssim: ssim_loss(&x, &rec.coarse)?,
        dis: if perceptual {
            Some(feature_matching_loss(&real_feats, &fake_feats, weights.lambda)?)
        } else {
            None
        },
        vgg: match (&state.extractor, perceptual) {
            (Some(e), true) => Some(vgg_perceptual_loss(&x, &rec.coarse, e.as_ref(), weights.lambda)?),
            _ => None,
        },
    };
    let g_loss = generator_loss(&terms, weights)?;
    let opt = |t: &Option<Tensor>| t.as_ref().map(scalar).transpose().map(|v| v.unwrap_or(0.0));
    let report = LossReport::compose(
        scalar(&terms.l1)?,
        scalar(&terms.ssim)?,
        opt(&terms.dis)?,
        opt(&terms.vgg)?,
        scalar(&terms.adversarial)?,
        d_value,
        perceptual,
    );
    if !report.is_finite() || !scalar(&g_loss)?.is_finite() {
        return Err(non_finite(state, &report));
    }
    let g_grads = g_loss.backward()?;
    state.opt_g.step(&g_grads, lr)?;
    state.step += 1;
    Ok(report)
}

/// Generator output `x′` for one item, unclipped.
pub fn reconstruct(networks: &DsslicNetworks, item: &DatasetItem, use_finenet: bool) -> Result<Tensor> {
    let m = networks.config().alpha.max(8);
    let x = item.image.pad_to_multiple(m).to_tensor(DType::F32, networks.device())?;
    let s = networks.segmentation_input(&[&item.segmentation.pad_to_multiple(m)])?;
    Ok(networks.generate(&x, s.as_ref(), use_finenet)?.coarse)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPaths {
    pub checkpoints: PathBuf,
    pub loss_csv: PathBuf,
    pub weights: PathBuf,
}

impl TrainPaths {
    pub fn new(output_dir: &Path) -> Self {
        Self {
            checkpoints: output_dir.join("checkpoints"),
            loss_csv: output_dir.join("loss.csv"),
            weights: output_dir.join("weights.dssw"),
        }
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints.join(format!("epoch_{epoch:04}.dssw"))
    }
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<LossRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub paths: TrainPaths,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Ingests the configured dataset and runs [`train_on`].
pub fn train(cfg: &TrainingConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let ds = ingest_dataset(&cfg.dataset.root, cfg.dataset.resize, cfg.dataset.num_labels)?;
    log::info!(
        "{} training pairs ({} unpaired, {} filtered, {} mismatched)",
        ds.items.len(),
        ds.unpaired,
        ds.filtered,
        ds.mismatched
    );
    train_on(cfg, &ds.items, resume)
}

/// Runs the remaining schedule on `items`, writing a checkpoint and the loss
/// history after every epoch and the final weights at the end. With
/// `resume`, training continues from that checkpoint and the history rows
/// from later epochs are discarded.
pub fn train_on(cfg: &TrainingConfig, items: &[DatasetItem], resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Dataset("no training items".into()));
    }
    if let Some(bad) = items.iter().find(|i| i.segmentation.num_labels() != cfg.dataset.num_labels) {
        return Err(Error::Dataset(format!(
            "{} has {} labels, config says {}",
            bad.id,
            bad.segmentation.num_labels(),
            cfg.dataset.num_labels
        )));
    }
    let paths = TrainPaths::new(&cfg.output_dir);
    std::fs::create_dir_all(&paths.checkpoints).map_err(|e| Error::io(&paths.checkpoints, e))?;

    let mut state = TrainState::new(cfg)?;
    let mut history = Vec::new();
    if let Some(path) = resume {
        state.restore(&WeightsFile::load(path)?)?;
        if let Ok(text) = std::fs::read_to_string(&paths.loss_csv) {
            history = parse_loss_csv(&text)?;
            history.retain(|r| r.epoch < state.epoch);
        }
    }

    let steps_per_epoch = {
        let n = items.len().div_ceil(cfg.batch_size);
        cfg.max_steps_per_epoch.map_or(n, |m| n.min(m))
    };
    let mut checkpoints = Vec::new();
    for epoch in state.epoch..cfg.epochs_total {
        let lr = lr_schedule(epoch, cfg)?;
        let weights = LossWeights {
            lambda: cfg.lambda,
            include_perceptual: perceptual_enabled(epoch, cfg),
        };
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        for chunk in order.chunks(cfg.batch_size).take(steps_per_epoch) {
            let batch: Vec<&DatasetItem> = chunk.iter().map(|&i| &items[i]).collect();
            let report = train_step(&mut state, &batch, &weights, lr)?;
            log::debug!("epoch {epoch} step {}: {report}", state.step);
            history.push(LossRecord {
                epoch,
                step: state.step,
                report,
            });
        }
        state.epoch = epoch + 1;
        let ckpt = paths.checkpoint(epoch);
        state.checkpoint()?.save(&ckpt)?;
        write_atomic(&paths.loss_csv, loss_csv(&history).as_bytes())?;
        checkpoints.push(ckpt);
    }
    state.networks.save(&paths.weights, cfg.variant)?;
    Ok(TrainOutcome {
        state,
        history,
        checkpoints,
        paths,
    })
}
