//! Training regimes: source-only, mixed batches without adaptation, and the
//! alternating two-step adversarial update.
//!
//! One adversarial step first fits the domain classifier `D` on the current
//! representations (representation learner held fixed), then updates the
//! representation learner and segmenter on
//! `L_segm + lambda * L_conf` with `D` held fixed. Both steps see the same
//! batch.

use std::io::{Read, Write};

use rand::Rng as _;

use crate::adversarial::{confusion_loss, domain_loss, noisy, InstanceNoiseSchedule};
use crate::config::{Regime, TrainConfig};
use crate::datagen::SceneDataset;
use crate::error::{Error, Result};
use crate::grid::{Grid4, LabelMap};
use crate::metrics::{ConfusionMatrix, EvalReport};
use crate::model::{Architecture, SegmentationModel};
use crate::norm::{DomainTag, Mode, NormConfig};
use crate::param::sgd_momentum_step;
use crate::rng::{stream, Rng, STREAM_INIT, STREAM_NOISE, STREAM_SOURCE_BATCHES, STREAM_TARGET_BATCHES};
use crate::tape::Tape;

/// Labeled source images and, in mixed regimes, unlabeled target images.
/// There is no slot for target labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBatch {
    pub source_images: Grid4,
    pub source_labels: LabelMap,
    pub target_images: Option<Grid4>,
}

impl DomainBatch {
    pub fn new(source_images: Grid4, source_labels: LabelMap, target_images: Option<Grid4>) -> Result<Self> {
        let s = source_images.shape();
        if (s.n, s.h, s.w) != source_labels.dims() {
            return Err(Error::shape(format!(
                "source images {s} vs labels {:?}",
                source_labels.dims()
            )));
        }
        if let Some(t) = &target_images {
            let ts = t.shape();
            if (ts.h, ts.w, ts.c) != (s.h, s.w, s.c) {
                return Err(Error::shape(format!("source images {s} vs target images {ts}")));
            }
        }
        Ok(Self {
            source_images,
            source_labels,
            target_images,
        })
    }

    pub fn n_source(&self) -> usize {
        self.source_images.shape().n
    }

    pub fn n_target(&self) -> usize {
        self.target_images.as_ref().map_or(0, |t| t.shape().n)
    }

    /// Source samples first, then target samples.
    pub fn tags(&self) -> Vec<DomainTag> {
        let mut t = vec![DomainTag::Source; self.n_source()];
        t.resize(self.n_source() + self.n_target(), DomainTag::Target);
        t
    }

    /// Source images followed by target images.
    pub fn images(&self) -> Result<Grid4> {
        match &self.target_images {
            Some(t) => Grid4::concat_n(&[&self.source_images, t]),
            None => Ok(self.source_images.detached()),
        }
    }

    fn target(&self) -> Result<&Grid4> {
        self.target_images
            .as_ref()
            .ok_or_else(|| Error::invalid("adversarial step needs a target sub-batch"))
    }
}

/// Losses of one optimizer step. `l_dom` and `l_conf` are absent in regimes
/// without a domain classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l_segm: f64,
    pub l_dom: Option<f64>,
    pub l_conf: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub losses: StepLosses,
    pub lr: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

const LOG_HEADER: [&str; 7] = ["step", "epoch", "l_segm", "l_dom", "l_conf", "lr", "sigma"];

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut out: W, config_hash: &str) -> Result<()> {
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(LOG_HEADER)?;
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for r in &self.records {
                w.write_record([
                    r.step.to_string(),
                    r.epoch.to_string(),
                    r.losses.l_segm.to_string(),
                    opt(r.losses.l_dom),
                    opt(r.losses.l_conf),
                    r.lr.to_string(),
                    r.sigma.to_string(),
                ])?;
            }
            w.flush()?;
        }
        writeln!(out, "# config_hash={config_hash}")?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        if r.headers()?.iter().ne(LOG_HEADER) {
            return Err(Error::Format("train log header mismatch".into()));
        }
        let bad = |e: String| Error::Format(format!("train log: {e}"));
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        let mut records = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            records.push(StepRecord {
                step: rec[0].parse().map_err(|_| bad("step".into()))?,
                epoch: rec[1].parse().map_err(|_| bad("epoch".into()))?,
                losses: StepLosses {
                    l_segm: num(&rec[2])?,
                    l_dom: opt(&rec[3])?,
                    l_conf: opt(&rec[4])?,
                },
                lr: num(&rec[5])?,
                sigma: num(&rec[6])?,
            });
        }
        Ok(Self { records })
    }
}

/// Segmentation update of `θr` and `θs` on the batch; target images, when
/// present, pass through the normalization layers but carry no loss.
pub fn segmentation_step(
    model: &mut SegmentationModel,
    batch: &DomainBatch,
    lr: f64,
    momentum: f64,
) -> Result<StepLosses> {
    let mut tape = Tape::new();
    let repr = model.params.repr.bind(&mut tape, true);
    let seg = model.params.seg.bind(&mut tape, true);
    let x = tape.constant(batch.images()?);
    let z = model.represent(&mut tape, &repr, x, &batch.tags(), Mode::Train)?;
    let zs = tape.slice_n(z, 0, batch.n_source())?;
    let logits = model.segment(&mut tape, &seg, zs)?;
    let loss = tape.softmax_cross_entropy(logits, &batch.source_labels)?;
    tape.backward(loss)?;
    model.params.repr.absorb_grads(&tape, &repr)?;
    model.params.seg.absorb_grads(&tape, &seg)?;
    sgd_momentum_step(&mut model.params.repr, lr, momentum)?;
    sgd_momentum_step(&mut model.params.seg, lr, momentum)?;
    Ok(StepLosses {
        l_segm: tape.scalar(loss),
        l_dom: None,
        l_conf: None,
    })
}

/// Step 1: fit `θd` on `L_dom` with `θr` fixed. Batch statistics are used
/// but the running statistics are not advanced.
pub fn classifier_step(
    model: &mut SegmentationModel,
    batch: &DomainBatch,
    lr: f64,
    momentum: f64,
    noise: &InstanceNoiseSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    batch.target()?;
    let mut tape = Tape::new();
    let repr = model.params.repr.bind(&mut tape, false);
    let dcls = model.params.dcls.bind(&mut tape, true);
    let x = tape.constant(batch.images()?);
    let z = model.represent_batch_stats(&mut tape, &repr, x, &batch.tags())?;
    let z = tape.detach(z);
    let zs = tape.slice_n(z, 0, batch.n_source())?;
    let zt = tape.slice_n(z, batch.n_source(), batch.n_target())?;
    let loss = domain_loss(&mut tape, zs, zt, &model.classifier(), &dcls, noise, rng)?;
    tape.backward(loss)?;
    model.params.dcls.absorb_grads(&tape, &dcls)?;
    sgd_momentum_step(&mut model.params.dcls, lr, momentum)?;
    Ok(tape.scalar(loss))
}

/// Step 2: update `θr` and `θs` on `L_segm + lambda * L_conf` with `θd`
/// fixed. Returns `(L_segm, L_conf)`.
pub fn adaptation_step(
    model: &mut SegmentationModel,
    batch: &DomainBatch,
    lambda: f64,
    lr: f64,
    momentum: f64,
    noise: &InstanceNoiseSchedule,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    batch.target()?;
    let mut tape = Tape::new();
    let repr = model.params.repr.bind(&mut tape, true);
    let seg = model.params.seg.bind(&mut tape, true);
    let x = tape.constant(batch.images()?);
    let z = model.represent(&mut tape, &repr, x, &batch.tags(), Mode::Train)?;
    let zs = tape.slice_n(z, 0, batch.n_source())?;
    let zt = tape.slice_n(z, batch.n_source(), batch.n_target())?;
    let logits = model.segment(&mut tape, &seg, zs)?;
    let l_segm = tape.softmax_cross_entropy(logits, &batch.source_labels)?;
    let zt = noisy(&mut tape, zt, noise.sigma(), rng)?;
    let l_conf = confusion_loss(&mut tape, zt, &model.classifier(), &model.params.dcls)?;
    let total = tape.axpby(1.0, l_segm, lambda, l_conf)?;
    tape.backward(total)?;
    model.params.repr.absorb_grads(&tape, &repr)?;
    model.params.seg.absorb_grads(&tape, &seg)?;
    sgd_momentum_step(&mut model.params.repr, lr, momentum)?;
    sgd_momentum_step(&mut model.params.seg, lr, momentum)?;
    Ok((tape.scalar(l_segm), tape.scalar(l_conf)))
}

/// Step 1 then step 2 on the same batch.
pub fn uada_step(
    model: &mut SegmentationModel,
    batch: &DomainBatch,
    lambda: f64,
    lr: f64,
    momentum: f64,
    noise: &InstanceNoiseSchedule,
    rng: &mut Rng,
) -> Result<StepLosses> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda {lambda} must be >= 0")));
    }
    let l_dom = classifier_step(model, batch, lr, momentum, noise, rng)?;
    let (l_segm, l_conf) = adaptation_step(model, batch, lambda, lr, momentum, noise, rng)?;
    Ok(StepLosses {
        l_segm,
        l_dom: Some(l_dom),
        l_conf: Some(l_conf),
    })
}

/// Training data. Only target images are exposed, never target labels.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub source: &'a SceneDataset,
    pub target_images: &'a Grid4,
}

impl<'a> TrainData<'a> {
    pub fn new(source: &'a SceneDataset, target: &'a SceneDataset) -> Self {
        Self {
            source,
            target_images: &target.images,
        }
    }
}

/// `ceil(smallest / batch_per_domain)`.
pub fn steps_per_epoch(data: &TrainData<'_>, batch_per_domain: usize) -> usize {
    let smallest = data.source.len().min(data.target_images.shape().n);
    smallest.div_ceil(batch_per_domain)
}

/// Learning rate in `epoch`, halved once per configured boundary passed.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let halvings = config.lr_halving_epochs.iter().filter(|e| **e <= epoch).count();
    config.lr * 0.5f64.powi(halvings as i32)
}

fn draw(rng: &mut Rng, len: usize, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng.gen_range(0..len)).collect()
}

pub fn init_model(config: &TrainConfig, classes: usize) -> Result<SegmentationModel> {
    SegmentationModel::new(
        Architecture::desk(classes),
        NormConfig::new(config.norm_kind),
        &mut stream(config.seed, STREAM_INIT),
    )
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SegmentationModel,
    pub log: TrainLog,
}

/// Runs `config.epochs` epochs of the configured regime.
pub fn train(config: &TrainConfig, data: TrainData<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let (ns, nt) = (data.source.len(), data.target_images.shape().n);
    if ns == 0 || nt == 0 {
        return Err(Error::invalid("training datasets must be non-empty"));
    }
    let mut model = init_model(config, data.source.classes)?;
    let per_epoch = steps_per_epoch(&data, config.batch_per_domain);
    let horizon = (per_epoch * config.epochs) as u64;
    let mut noise = InstanceNoiseSchedule::new(config.noise_sigma0, horizon);
    let mut src_rng = stream(config.seed, STREAM_SOURCE_BATCHES);
    let mut tgt_rng = stream(config.seed, STREAM_TARGET_BATCHES);
    let mut noise_rng = stream(config.seed, STREAM_NOISE);
    let bpd = config.batch_per_domain;
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        for _ in 0..per_epoch {
            let (xs, ys) = data.source.gather(&draw(&mut src_rng, ns, bpd))?;
            let xt = if config.regime.is_mixed() {
                let idx = draw(&mut tgt_rng, nt, bpd);
                let parts: Vec<Grid4> = idx
                    .iter()
                    .map(|i| data.target_images.sample(*i))
                    .collect::<Result<_>>()?;
                Some(Grid4::concat_n(&parts.iter().collect::<Vec<_>>())?)
            } else {
                None
            };
            let batch = DomainBatch::new(xs, ys, xt)?;
            let sigma = noise.sigma();
            let losses = match config.regime {
                Regime::Uada => uada_step(&mut model, &batch, config.lambda, lr, config.momentum, &noise, &mut noise_rng)?,
                Regime::SourceOnly | Regime::MixedNoAdapt => {
                    segmentation_step(&mut model, &batch, lr, config.momentum)?
                }
            };
            if !losses.l_segm.is_finite() {
                return Err(Error::NonFinite(format!("segmentation loss at step {step}")));
            }
            log.records.push(StepRecord {
                step,
                epoch,
                losses,
                lr,
                sigma: if config.regime == Regime::Uada { sigma } else { 0.0 },
            });
            noise.advance();
            step += 1;
        }
    }
    Ok(TrainOutcome { model, log })
}

/// Evaluation-mode confusion counts of `model` on `dataset`, processed in
/// chunks of `chunk` images.
pub fn evaluate(model: &SegmentationModel, dataset: &SceneDataset, tag: DomainTag) -> Result<EvalReport> {
    const CHUNK: usize = 16;
    let mut cm = ConfusionMatrix::new(model.arch.classes);
    let n = dataset.len();
    let mut start = 0;
    while start < n {
        let len = CHUNK.min(n - start);
        let images = dataset.images.slice_n(start, len)?;
        let truth = dataset.labels.sample_range(start, len)?;
        cm.accumulate(&model.predict(&images, tag)?, &truth)?;
        start += len;
    }
    Ok(EvalReport::from_confusion(&cm))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub target_miou: f64,
}

/// One adversarial run per `lambda` with identical seeds; rows ascending
/// by `lambda` and evaluated on `target_val`.
pub fn sweep_lambda(
    base: &TrainConfig,
    lambdas: &[f64],
    data: TrainData<'_>,
    target_val: &SceneDataset,
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::invalid("lambda sweep needs at least one value"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::invalid(format!("lambda {l} must be >= 0")));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .into_iter()
        .map(|lambda| {
            let cfg = TrainConfig {
                lambda,
                regime: Regime::Uada,
                ..base.clone()
            };
            let out = train(&cfg, data)?;
            Ok(SweepRow {
                lambda,
                target_miou: evaluate(&out.model, target_val, DomainTag::Target)?.miou,
            })
        })
        .collect()
}
