use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::{Error, Result};
use crate::model::{backward, check_kb, forward, forward_tape, Checkpoint, ForwardConfig, Gradients, ModelParams};
use crate::numerics::ParamSet;
use crate::retrieval::KnowledgeBase;
use crate::scalar::Scalar;
use crate::training::adam::Adam;
use crate::training::config::TrainConfig;
use crate::training::loss::{sample_loss, LossBreakdown};

/// One metrics-log line. Held-out errors are in normalized space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub total: f64,
    pub pred: f64,
    pub dis: f64,
    pub val_mse: Option<f64>,
    pub val_mae: Option<f64>,
    /// Zero unless timing is enabled, so logs stay byte-reproducible.
    pub wall_ms: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Run per-sample work on the rayon pool. Adjoints are still reduced in
    /// sample order, so results do not depend on this flag.
    pub parallel: bool,
    pub timing: bool,
}

const TAG_BATCH: u64 = 1;
const TAG_DROPOUT: u64 = 2;

/// Independent stream per `(seed, step, sample, purpose)`, so a resumed run
/// draws exactly what a straight-through run would.
pub fn keyed_rng(seed: u64, step: u64, sample: u64, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, step, sample, tag].into_iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

pub struct Trainer<'a, S: Scalar> {
    cfg: TrainConfig,
    fcfg: ForwardConfig,
    train: &'a [Window<S>],
    exclude: Vec<Option<u64>>,
    kb: Option<&'a KnowledgeBase<S>>,
    val: &'a [Window<S>],
    params: ModelParams<S>,
    adam: Adam<S>,
    step: u64,
    log: Vec<MetricsRecord>,
    opts: TrainOptions,
}

impl<'a, S: Scalar> Trainer<'a, S> {
    /// Fresh model initialized from `cfg.seed`.
    pub fn new(
        cfg: &TrainConfig,
        train: &'a [Window<S>],
        kb: Option<&'a KnowledgeBase<S>>,
        val: &'a [Window<S>],
        opts: TrainOptions,
    ) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParams::init(cfg.dims(), cfg.dropout, cfg.seed)?;
        Self::with_state(cfg, params, None, 0, train, kb, val, opts)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(
        cfg: &TrainConfig,
        ckpt: &Checkpoint<S>,
        train: &'a [Window<S>],
        kb: Option<&'a KnowledgeBase<S>>,
        val: &'a [Window<S>],
        opts: TrainOptions,
    ) -> Result<Self> {
        cfg.validate()?;
        if ckpt.dims != cfg.dims() || ckpt.seed != cfg.seed {
            return Err(Error::Config(format!(
                "checkpoint (dims {:?}, seed {}) does not match config (dims {:?}, seed {})",
                ckpt.dims,
                ckpt.seed,
                cfg.dims(),
                cfg.seed
            )));
        }
        let params = ckpt.params()?;
        let mut adam = Adam::new(&params, cfg.lr);
        adam.t = ckpt.step;
        for (i, name) in (0..params.params().len()).map(|i| (i, params.param_name(i))) {
            for (prefix, slot) in [("adam.m.", &mut adam.m[i]), ("adam.v.", &mut adam.v[i])] {
                let t = ckpt
                    .tensor(&format!("{prefix}{name}"))
                    .ok_or_else(|| Error::Corrupt(format!("checkpoint lacks optimizer tensor {prefix}{name}")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::dim("optimizer state", slot.shape(), t.shape()));
                }
                *slot = t.clone();
            }
        }
        Self::with_state(cfg, params, Some(adam), ckpt.step, train, kb, val, opts)
    }

    #[allow(clippy::too_many_arguments)]
    fn with_state(
        cfg: &TrainConfig,
        params: ModelParams<S>,
        adam: Option<Adam<S>>,
        step: u64,
        train: &'a [Window<S>],
        kb: Option<&'a KnowledgeBase<S>>,
        val: &'a [Window<S>],
        opts: TrainOptions,
    ) -> Result<Self> {
        let fcfg = cfg.forward_config();
        let kb = if fcfg.ablation.uses_retrieval() {
            let kb = kb.ok_or_else(|| Error::Config(format!("ablation {} needs a knowledge base", fcfg.ablation)))?;
            check_kb(&params, kb)?;
            Some(kb)
        } else {
            None
        };
        for w in train.iter().chain(val) {
            if w.context_len() != cfg.context_len || w.horizon_len() != cfg.horizon_len {
                return Err(Error::dim(
                    "training window",
                    &[cfg.context_len, cfg.horizon_len],
                    &[w.context_len(), w.horizon_len()],
                ));
            }
        }
        if train.is_empty() && cfg.steps > step {
            return Err(Error::Domain("no training windows".into()));
        }
        let exclude = train
            .iter()
            .map(|w| kb.and_then(|kb| kb.id_for_source(&w.source_id)))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            fcfg,
            train,
            exclude,
            kb,
            val,
            adam: adam.unwrap_or_else(|| Adam::new(&params, cfg.lr)),
            params,
            step,
            log: Vec::new(),
            opts,
        })
    }

    pub fn params(&self) -> &ModelParams<S> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<S> {
        self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &[MetricsRecord] {
        &self.log
    }

    /// Model, frozen encoder, and optimizer moments at the current step.
    pub fn checkpoint(&self) -> Checkpoint<S> {
        let mut ck = Checkpoint::from_params(&self.params, self.step, self.cfg.seed);
        for (prefix, moments) in [("adam.m.", &self.adam.m), ("adam.v.", &self.adam.v)] {
            for (i, t) in moments.iter().enumerate() {
                ck.tensors.push((format!("{prefix}{}", self.params.param_name(i)), t.clone()));
            }
        }
        ck
    }

    /// One optimizer step on a freshly sampled mini-batch. On a non-finite
    /// loss or gradient the parameters are left untouched.
    pub fn train_step(&mut self) -> Result<LossBreakdown<S>> {
        let b = self.cfg.batch_size;
        let mut rng = keyed_rng(self.cfg.seed, self.step, 0, TAG_BATCH);
        let batch: Vec<usize> = (0..b).map(|_| rng.random_range(0..self.train.len())).collect();
        let rho = S::of(self.cfg.effective_rho());

        let per_sample = |(slot, &idx): (usize, &usize)| -> Result<(LossBreakdown<S>, Gradients<S>)> {
            let w = &self.train[idx];
            let mut drop_rng = keyed_rng(self.cfg.seed, self.step, slot as u64, TAG_DROPOUT);
            let (out, tape) = forward_tape(
                w.context.data(),
                self.kb,
                &self.params,
                &self.fcfg,
                self.exclude[idx],
                Some(&mut drop_rng),
            )?;
            let (lb, up) = sample_loss(&out.y_hat, w.horizon.data(), &out.z_inv, &out.z_dyn, rho, b);
            let mut g = Gradients::zeros_like(&self.params);
            backward(&self.params, &out, &tape, &up, &mut g);
            Ok((lb, g))
        };
        let results: Vec<Result<(LossBreakdown<S>, Gradients<S>)>> = if self.opts.parallel {
            batch.par_iter().enumerate().map(per_sample).collect()
        } else {
            batch.iter().enumerate().map(per_sample).collect()
        };

        let mut total = LossBreakdown::zero();
        let mut grads = Gradients::zeros_like(&self.params);
        for r in results {
            let (lb, g) = r?;
            total.add(&lb);
            grads.add_assign(&g);
        }
        if !total.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                loss: total.total.widen(),
            });
        }
        self.params.zero_grads();
        grads.accumulate_into(&mut self.params);
        if let Err(e) = self.adam.step(&mut self.params) {
            self.params.zero_grads();
            return Err(e);
        }
        self.step += 1;
        Ok(total)
    }

    /// Trains until `cfg.steps`, appending a metrics record every
    /// `eval_interval` steps and at the last step; `on_record` sees each one.
    pub fn run(&mut self, mut on_record: impl FnMut(&Self, &MetricsRecord) -> Result<()>) -> Result<()> {
        let started = Instant::now();
        while self.step < self.cfg.steps {
            let lb = self.train_step()?;
            if self.step % self.cfg.eval_interval == 0 || self.step == self.cfg.steps {
                let (val_mse, val_mae) = if self.val.is_empty() {
                    (None, None)
                } else {
                    let (m, a) = evaluate_normalized(&self.params, self.kb, self.val, &self.fcfg, self.opts.parallel)?;
                    (Some(m), Some(a))
                };
                let rec = MetricsRecord {
                    step: self.step,
                    total: lb.total.widen(),
                    pred: lb.pred.widen(),
                    dis: lb.dis.widen(),
                    val_mse,
                    val_mae,
                    wall_ms: if self.opts.timing { started.elapsed().as_millis() as u64 } else { 0 },
                };
                on_record(self, &rec)?;
                self.log.push(rec);
            }
        }
        Ok(())
    }
}

/// Mean squared and absolute error of inference forecasts in normalized
/// space, excluding each window's own knowledge-base entry.
pub fn evaluate_normalized<S: Scalar>(
    params: &ModelParams<S>,
    kb: Option<&KnowledgeBase<S>>,
    windows: &[Window<S>],
    fcfg: &ForwardConfig,
    parallel: bool,
) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Err(Error::Domain("no windows to evaluate".into()));
    }
    let one = |w: &Window<S>| -> Result<(f64, f64)> {
        let exclude = kb.and_then(|kb| kb.id_for_source(&w.source_id));
        let out = forward(w.context.data(), kb, params, fcfg, exclude)?;
        Ok(out.y_hat.iter().zip(w.horizon.data()).fold((0.0, 0.0), |(se, ae), (&p, &t)| {
            let e = (p - t).widen();
            (se + e * e, ae + e.abs())
        }))
    };
    let parts: Vec<Result<(f64, f64)>> = if parallel {
        windows.par_iter().map(one).collect()
    } else {
        windows.iter().map(one).collect()
    };
    let (mut se, mut ae) = (0.0, 0.0);
    for p in parts {
        let (s, a) = p?;
        se += s;
        ae += a;
    }
    let n = (windows.len() * windows[0].horizon_len()) as f64;
    Ok((se / n, ae / n))
}

/// Convenience wrapper: trains from scratch and returns the final model and
/// its metrics log.
pub fn train<S: Scalar>(
    cfg: &TrainConfig,
    train: &[Window<S>],
    kb: Option<&KnowledgeBase<S>>,
    val: &[Window<S>],
    opts: TrainOptions,
) -> Result<(ModelParams<S>, Vec<MetricsRecord>)> {
    let mut t = Trainer::new(cfg, train, kb, val, opts)?;
    t.run(|_, _| Ok(()))?;
    let log = t.log.clone();
    Ok((t.into_params(), log))
}

/// One JSON object per line.
pub fn metrics_jsonl(records: &[MetricsRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("plain struct serializes") + "\n")
        .collect()
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(metrics_jsonl(records).as_bytes()).map_err(|e| Error::io(path, e))
}
