use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics::si_sdr;
use crate::mixture::{DatasetParams, MixtureSample, TrainStream};
use crate::model::{Checkpoint, Separator};
use crate::nn::{adamw_amsgrad_step, clip_grad_l2, global_norm, AdamWConfig, Graph, OptimizerState, PlateauScheduler, Tensor};

/// Negative mean SI-SDR (dB) over sources and batch, heart paired with
/// output 0 and lung with output 1.
pub fn loss(est: &[[&[f64]; 2]], target: &[[&[f64]; 2]]) -> Result<f64> {
    if est.len() != target.len() || est.is_empty() {
        return Err(Error::invalid("estimate and target batches must match and be non-empty"));
    }
    let mut acc = 0.0;
    for (e, t) in est.iter().zip(target) {
        for s in 0..2 {
            acc += si_sdr(e[s], t[s])?;
        }
    }
    Ok(-acc / (2 * est.len()) as f64)
}

/// Where training batches come from.
#[derive(Debug, Clone)]
pub enum TrainData {
    /// Endless synthesis; each epoch draws `steps_per_epoch` new batches.
    Stream(DatasetParams),
    /// A fixed set visited once per epoch in a seeded order.
    Fixed(Vec<MixtureSample>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Per-epoch history plus every step's statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepStats>,
}

impl TrainLog {
    /// Epoch with the lowest validation loss (first on ties).
    pub fn best_epoch(&self) -> Option<usize> {
        self.epochs
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .map(|r| r.epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr,seconds\n");
        for r in &self.epochs {
            writeln!(s, "{},{},{},{},{:.3}", r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds).unwrap();
        }
        if let Some(b) = self.best_epoch() {
            writeln!(s, "# best_epoch={b}").unwrap();
        }
        s
    }
}

/// Mutable training state: model, optimizer, scheduler and history.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Separator<f32>,
    pub optimizer: OptimizerState<f32>,
    pub scheduler: PlateauScheduler,
    /// Next epoch to run.
    pub epoch: usize,
    pub log: TrainLog,
    best: Option<(f64, Separator<f32>)>,
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch of lowest validation loss.
    pub best: Separator<f32>,
    pub best_val_loss: f64,
    pub last: Separator<f32>,
    pub log: TrainLog,
}

impl Trainer {
    pub fn new(model: Separator<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamWConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamWConfig::default() };
        let optimizer = OptimizerState::new(model.params(), adam)?;
        let scheduler = PlateauScheduler::new(config.lr, config.scheduler_factor, config.scheduler_patience)?;
        Ok(Self { config, model, optimizer, scheduler, epoch: 0, log: TrainLog::default(), best: None })
    }

    /// One forward/backward pass over `batch`, clipping and an optimizer update.
    pub fn train_step(&mut self, batch: &[MixtureSample]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let step = self.optimizer.step as usize;
        let abort = |reason: String| Error::TrainingAborted { step, reason };
        let (mut grads, lv) = {
            let mut g = Graph::<f32>::new();
            let b = self.model.bind(&mut g);
            let mut losses = Vec::with_capacity(2 * batch.len());
            for x in batch {
                let outs = self
                    .model
                    .forward(&mut g, &b, &x.mixture.to_f32())
                    .map_err(|e| abort(e.to_string()))?;
                for (o, t) in outs.iter().zip([&x.target_heart, &x.target_lung]) {
                    losses.push(g.neg_si_sdr(*o, &t.to_f32()).map_err(|e| abort(e.to_string()))?);
                }
            }
            let total = g.mean(&losses)?;
            let lv = g.value(total).data()[0] as f64;
            if !lv.is_finite() {
                return Err(abort(format!("loss is {lv}")));
            }
            g.backward(total).map_err(|e| abort(e.to_string()))?;
            let grads: Vec<Tensor<f32>> = b
                .vars()
                .iter()
                .enumerate()
                .map(|(i, &v)| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(self.model.params().tensor(i).shape())))
                .collect();
            (grads, lv)
        };
        let grad_norm = clip_grad_l2(&mut grads, self.config.clip_norm).map_err(|e| abort(e.to_string()))?;
        let clipped_norm = global_norm(&grads);
        adamw_amsgrad_step(self.model.params_mut(), &grads, &mut self.optimizer).map_err(|e| abort(e.to_string()))?;
        let stats = StepStats { loss: lv, grad_norm, clipped_norm };
        self.log.steps.push(stats);
        Ok(stats)
    }

    /// Mean loss of the current model over `val`, in double precision.
    pub fn validation_loss(&self, val: &[MixtureSample]) -> Result<f64> {
        let model = self.model.cast::<f64>();
        let per: Vec<f64> = val
            .par_iter()
            .map(|x| {
                let [h, l] = model.separate(&x.mixture)?;
                loss(&[[h.samples(), l.samples()]], &[[x.target_heart.samples(), x.target_lung.samples()]])
            })
            .collect::<Result<_>>()?;
        Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
    }

    /// Visiting order of a fixed set during the current epoch.
    fn epoch_order(&self, data: &TrainData) -> Vec<usize> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        match data {
            TrainData::Stream(_) => Vec::new(),
            TrainData::Fixed(set) => {
                let mut order: Vec<usize> = (0..set.len()).collect();
                let seed = crate::mixture::mix64(self.config.seed, self.epoch as u64);
                order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                order
            }
        }
    }

    fn steps_in_epoch(&self, data: &TrainData) -> usize {
        match data {
            TrainData::Stream(_) => self.config.steps_per_epoch,
            TrainData::Fixed(set) => set.len().div_ceil(self.config.batch_size),
        }
    }

    fn batch(&self, data: &TrainData, order: &[usize], step: usize) -> Result<Vec<MixtureSample>> {
        let bs = self.config.batch_size;
        match data {
            TrainData::Stream(params) => {
                let stream = TrainStream::new(params.clone(), self.config.seed, self.config.sampling(self.epoch))?;
                let start = ((self.epoch * self.config.steps_per_epoch + step) * bs) as u64;
                (start..start + bs as u64).into_par_iter().map(|i| stream.sample(i)).collect()
            }
            TrainData::Fixed(set) => {
                let end = ((step + 1) * bs).min(order.len());
                Ok(order[step * bs..end].iter().map(|&i| set[i].clone()).collect())
            }
        }
    }

    /// Trains one epoch, validates, steps the scheduler and writes checkpoints.
    pub fn run_epoch(&mut self, data: &TrainData, val: &[MixtureSample]) -> Result<EpochRecord> {
        let t0 = Instant::now();
        let mut sum = 0.0;
        let mut n = 0usize;
        let order = self.epoch_order(data);
        for step in 0..self.steps_in_epoch(data) {
            let batch = self.batch(data, &order, step)?;
            sum += self.train_step(&batch)?.loss;
            n += 1;
        }
        let val_loss = self.validation_loss(val)?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingAborted { step: self.optimizer.step as usize, reason: "validation loss is not finite".into() });
        }
        let lr_used = self.optimizer.config.lr;
        let next_lr = self.scheduler.step(val_loss);
        self.optimizer.set_lr(next_lr);
        let rec = EpochRecord { epoch: self.epoch, train_loss: sum / n as f64, val_loss, lr: lr_used, seconds: t0.elapsed().as_secs_f64() };
        log::info!(
            "epoch {} train {:.3} val {:.3} lr {:.2e} ({:.1} s)",
            rec.epoch,
            rec.train_loss,
            rec.val_loss,
            rec.lr,
            rec.seconds
        );
        self.log.epochs.push(rec.clone());
        self.epoch += 1;
        if self.best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            self.best = Some((val_loss, self.model.clone()));
            if let Some(p) = self.config.checkpoint_prefix.clone() {
                let mut ck = self.model.to_checkpoint();
                ck.meta.push(("train.epoch".into(), rec.epoch.to_string()));
                ck.meta.push(("train.val_loss".into(), val_loss.to_string()));
                ck.save(suffixed(&p, "best"))?;
            }
        }
        if let Some(p) = self.config.checkpoint_prefix.clone() {
            self.to_checkpoint().save(suffixed(&p, "last"))?;
        }
        Ok(rec)
    }

    /// Runs the remaining epochs and returns the best and last models.
    pub fn run(mut self, data: &TrainData, val: &[MixtureSample]) -> Result<TrainOutcome> {
        if val.is_empty() {
            return Err(Error::invalid("validation set is empty"));
        }
        while self.epoch < self.config.epochs {
            self.run_epoch(data, val)?;
        }
        let (best_val_loss, best) = self.best.clone().expect("at least one epoch ran");
        Ok(TrainOutcome { best, best_val_loss, last: self.model, log: self.log })
    }

    /// Full resumable state: parameters, optimizer moments, scheduler and history.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        let names: Vec<String> = self.model.params().names().to_vec();
        for (kind, bufs) in [("m", &self.optimizer.m), ("v", &self.optimizer.v), ("vmax", &self.optimizer.v_max)] {
            for (n, t) in names.iter().zip(bufs) {
                ck.tensors.push((format!("optim.{kind}.{n}"), t.clone()));
            }
        }
        let s = &self.scheduler;
        let mut meta = vec![
            ("train.next_epoch".to_string(), self.epoch.to_string()),
            ("train.step".into(), self.optimizer.step.to_string()),
            ("train.lr".into(), self.optimizer.config.lr.to_string()),
            ("sched.lr".into(), s.current_lr.to_string()),
            ("sched.best".into(), s.best_metric.to_string()),
            ("sched.bad_epochs".into(), s.epochs_since_improvement.to_string()),
        ];
        if let Some((b, _)) = &self.best {
            meta.push(("train.best_val_loss".into(), b.to_string()));
        }
        let hist = self
            .log
            .epochs
            .iter()
            .map(|r| format!("{}:{}:{}:{}:{}", r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds))
            .collect::<Vec<_>>()
            .join(";");
        meta.push(("train.history".into(), hist));
        ck.meta.extend(meta);
        ck
    }

    /// Restores a state written by [`Trainer::to_checkpoint`]. The best model
    /// so far is not stored there; it restarts from the resumed parameters.
    pub fn resume(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let mut ck = ck.clone();
        let optim = ck.take_prefixed("optim.");
        let model = Separator::<f32>::from_checkpoint(&ck)?;
        let mut t = Trainer::new(model, config)?;
        let names: Vec<String> = t.model.params().names().to_vec();
        let find = |kind: &str, name: &str| {
            optim
                .iter()
                .find(|(n, _)| n.strip_prefix(kind).and_then(|r| r.strip_prefix('.')) == Some(name))
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks optimizer state {kind}.{name}")))
        };
        for (i, n) in names.iter().enumerate() {
            t.optimizer.m[i] = find("m", n)?;
            t.optimizer.v[i] = find("v", n)?;
            t.optimizer.v_max[i] = find("vmax", n)?;
        }
        let meta = |k: &str| ck.meta_value(k).ok_or_else(|| Error::Format(format!("checkpoint lacks {k}")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad {k}: {v:?}")))
        }
        t.epoch = num("train.next_epoch", meta("train.next_epoch")?)?;
        t.optimizer.step = num("train.step", meta("train.step")?)?;
        t.optimizer.set_lr(num("train.lr", meta("train.lr")?)?);
        t.scheduler.current_lr = num("sched.lr", meta("sched.lr")?)?;
        t.scheduler.best_metric = num("sched.best", meta("sched.best")?)?;
        t.scheduler.epochs_since_improvement = num("sched.bad_epochs", meta("sched.bad_epochs")?)?;
        let hist = meta("train.history")?;
        for rec in hist.split(';').filter(|s| !s.is_empty()) {
            let f: Vec<&str> = rec.split(':').collect();
            if f.len() != 5 {
                return Err(Error::Format(format!("bad history entry {rec:?}")));
            }
            t.log.epochs.push(EpochRecord {
                epoch: num("epoch", f[0])?,
                train_loss: num("train_loss", f[1])?,
                val_loss: num("val_loss", f[2])?,
                lr: num("lr", f[3])?,
                seconds: num("seconds", f[4])?,
            });
        }
        if let Some(b) = ck.meta_value("train.best_val_loss") {
            t.best = Some((num("train.best_val_loss", b)?, t.model.clone()));
        }
        Ok(t)
    }
}

/// `<prefix>.<suffix>`.
pub fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Renders the validation manifest of `params`.
pub fn validation_set(params: &DatasetParams) -> Result<Vec<MixtureSample>> {
    params.val_manifest()?.samples.par_iter().map(|d| d.render()).collect()
}

/// Trains `model` from scratch under `config`.
pub fn train(model: Separator<f32>, data: &TrainData, val: &[MixtureSample], config: TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(model, config)?.run(data, val)
}
