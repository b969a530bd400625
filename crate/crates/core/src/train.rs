//! The training loop.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{make_batches, BatchMode, Dataset};
use crate::error::{Error, Result};
use crate::eval::{embed_split, similarity_matrix, Recalls, SimMode};
use crate::model::{batch_loss, Model, ModelConfig};
use crate::objective::{adam_step, lr_at, OptState};
use crate::autograd::Tape;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Means over the epoch's batches.
    pub loss_final: f64,
    pub loss_global: f64,
    pub loss_total: f64,
    pub val_mr: Option<f64>,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_mr: f64,
    pub checkpoint: Option<PathBuf>,
}

impl TrainLog {
    pub fn header(cfg: &TrainConfig) -> String {
        format!(
            "# lr0={} B={} alpha={} lambda_g={:.1} d={} epochs={} seed={} config={}\n",
            cfg.lr0,
            cfg.batch_size,
            cfg.alpha,
            cfg.lambda_g,
            cfg.d,
            cfg.epochs,
            cfg.seed,
            cfg.config_hash()
        )
    }

    pub fn epoch_line(e: &EpochLog) -> String {
        let val = e.val_mr.map_or("-".to_string(), |m| format!("{m:.4}"));
        format!(
            "epoch {:>4}  lr {:.6e}  loss_final {:.6}  loss_global {:.6}  val_mr {}  secs {:.2}\n",
            e.epoch, e.lr, e.loss_final, e.loss_global, val, e.wall_secs
        )
    }

    pub fn to_text(&self, cfg: &TrainConfig) -> String {
        let mut s = Self::header(cfg);
        for e in &self.epochs {
            s.push_str(&Self::epoch_line(e));
        }
        s
    }
}

pub struct TrainOptions<'a> {
    pub train_split: &'a [usize],
    pub val_split: &'a [usize],
    /// Validate every this many epochs, and always after the last one.
    pub validate_every: usize,
    pub threads: usize,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochLog)>,
}

pub struct TrainOutcome {
    pub log: TrainLog,
    /// Parameters from the epoch with the best validation mR.
    pub best: Checkpoint,
    /// Parameters after the final epoch.
    pub last: Checkpoint,
}

/// mR of the final-mode similarity on `images`.
pub fn validation_mr(model: &Model, ds: &Dataset, images: &[usize], threads: usize) -> Result<f64> {
    let emb = embed_split(model.net(), ds, images, threads)?;
    let s = similarity_matrix(model.net(), &emb, SimMode::Final, threads)?;
    Ok(Recalls::of(&s).mr)
}

pub fn train(cfg: &TrainConfig, ds: &Dataset, mut opts: TrainOptions<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if opts.train_split.len() < cfg.batch_size {
        return Err(Error::Invalid(format!(
            "batch_size {} exceeds the {} training images",
            cfg.batch_size,
            opts.train_split.len()
        )));
    }
    let mc = ModelConfig::from_train(cfg, ds.msv.cols(), ds.roi.cols(), ds.table.dim());
    let mut model = Model::new(mc, cfg.seed)?;
    let mut opt = OptState::new(&model.params);
    let snapshot = |model: &Model, opt: &OptState, epoch: usize, best_mr: f64| Checkpoint {
        config: cfg.clone(),
        d_in: ds.msv.cols(),
        d_r: ds.roi.cols(),
        embed_dim: ds.table.dim(),
        epoch,
        best_mr,
        params: model.params.clone(),
        opt: opt.clone(),
    };

    let mut log = TrainLog { best_mr: f64::NEG_INFINITY, ..Default::default() };
    let mut best: Option<Checkpoint> = None;
    let every = opts.validate_every.max(1);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = lr_at(cfg, epoch);
        let batches = make_batches(opts.train_split, cfg.batch_size, cfg.seed, epoch, BatchMode::Train)?;
        let (mut lf, mut lg, mut lt) = (0.0, 0.0, 0.0);
        for (bi, images) in batches.iter().enumerate() {
            let batch = ds.batch(images, cfg.seed, epoch)?;
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, model.net(), &ds.table, &batch, cfg.alpha, cfg.lambda_g)?;
            let total = tape.value(loss.total).item();
            if !total.is_finite() {
                return Err(Error::Evaluation(format!(
                    "non-finite loss at epoch {epoch}, batch {bi} (images {:?})",
                    batch.image_ids
                )));
            }
            lf += tape.value(loss.final_loss).item();
            lg += tape.value(loss.global_loss).item();
            lt += total;
            let grads = tape.backward(loss.total)?.params(&tape);
            adam_step(&mut model.params, &grads, &mut opt, lr).map_err(|e| match e {
                Error::NonFiniteGradient(p) => Error::NonFiniteGradient(format!("{p} (epoch {epoch}, batch {bi})")),
                other => other,
            })?;
        }
        let n = batches.len() as f64;

        let val_mr = if (epoch + 1) % every == 0 || epoch + 1 == cfg.epochs {
            let mr = validation_mr(&model, ds, opts.val_split, opts.threads)?;
            if mr > log.best_mr {
                log.best_mr = mr;
                log.best_epoch = Some(epoch);
                best = Some(snapshot(&model, &opt, epoch + 1, mr));
            }
            Some(mr)
        } else {
            None
        };

        let entry = EpochLog {
            epoch,
            lr,
            loss_final: lf / n,
            loss_global: lg / n,
            loss_total: lt / n,
            val_mr,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&entry);
        }
        log.epochs.push(entry);
    }

    let last = snapshot(&model, &opt, cfg.epochs, log.best_mr);
    let best = best.expect("the last epoch always validates");
    Ok(TrainOutcome { log, best, last })
}
