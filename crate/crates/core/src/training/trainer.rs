use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::augment::{horizontal_flip, random_mask};
use super::losses::graph as loss;
use super::TrainConfig;
use crate::data::VideoChunk;
use crate::error::{Error, Result};
use crate::model::{Erea, ModelConfig};
use crate::numerics::rng::{stream, substream};
use crate::numerics::{AdamState, Graph, OneCycleSchedule, ParamStore, Rng, Tensor};

pub const LOG_HEADER: &str = "step,lr,loss_total,loss_reg_orig,loss_reg_flip,loss_ac";

/// Batch-averaged losses of one optimiser step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_reg_orig: f64,
    pub loss_reg_flip: f64,
    pub loss_ac: f64,
}

/// Adam driven by a one-cycle schedule over a fixed step budget.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub adam: AdamState,
    pub schedule: OneCycleSchedule,
    /// Steps taken so far.
    pub step: usize,
}

impl Optimizer {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        Optimizer {
            adam: AdamState::new(),
            schedule: OneCycleSchedule::new(max_lr, total_steps),
            step: 0,
        }
    }

    pub fn lr(&self) -> Result<f64> {
        self.schedule.lr(self.step)
    }
}

#[derive(Default)]
struct Sums {
    total: f64,
    reg_orig: f64,
    reg_flip: f64,
    ac: f64,
}

/// One optimiser step over `batch`.
///
/// Per chunk: one mask is drawn from `rng` and applied, the masked frames
/// are mirrored, and both versions run through `model` on a single graph so
/// they share every parameter leaf. The chunk's total loss, divided by the
/// batch size, is back-propagated into the store's gradient buffers; a
/// single Adam update follows the last chunk.
pub fn train_step(
    batch: &[&VideoChunk],
    model: &Erea,
    store: &mut ParamStore,
    opt: &mut Optimizer,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainStepRecord> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let lr = opt.lr()?;
    let step = opt.step;
    let inv_b = 1.0 / batch.len() as f64;
    let mut sums = Sums::default();
    store.zero_grads();
    let diverged = |s: &Sums| Error::Diverged {
        step,
        lr,
        reg_orig: s.reg_orig,
        reg_flip: s.reg_flip,
        ac: s.ac,
    };
    for chunk in batch {
        let masked = random_mask(&chunk.frames, cfg.mask_size, cfg.mask_fill, rng)?;
        let flipped = horizontal_flip(&masked)?;
        let mut g = Graph::new();
        let built = (|| {
            let orig = model.forward(&mut g, store, &masked)?;
            let flip = model.forward(&mut g, store, &flipped)?;
            let z = g.constant(Tensor::from_vec(chunk.ppg.clone()));
            let r1 = loss::regression(&mut g, orig.signal, z, cfg.alpha)?;
            let r2 = loss::regression(&mut g, flip.signal, z, cfg.alpha)?;
            let ac = loss::attention_consistency(&mut g, orig.maps, flip.maps)?;
            let tot = loss::total(&mut g, r1, r2, ac, cfg.beta)?;
            Ok::<_, Error>((r1, r2, ac, tot))
        })();
        let (r1, r2, ac, tot) = match built {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => {
                return Err(diverged(&Sums {
                    reg_orig: f64::NAN,
                    reg_flip: f64::NAN,
                    ac: f64::NAN,
                    ..sums
                }))
            }
            Err(e) => return Err(e),
        };
        let vals = [g.value(r1).item(), g.value(r2).item(), g.value(ac).item(), g.value(tot).item()];
        sums.reg_orig += inv_b * vals[0];
        sums.reg_flip += inv_b * vals[1];
        sums.ac += inv_b * vals[2];
        sums.total += inv_b * vals[3];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(diverged(&sums));
        }
        let scaled = g.scale(tot, inv_b)?;
        match g.backward(scaled) {
            Err(Error::NonFinite { .. }) => return Err(diverged(&sums)),
            r => r?,
        }
        g.accumulate_param_grads(store);
    }
    opt.adam.step_store(store, lr)?;
    opt.step += 1;
    Ok(TrainStepRecord {
        step,
        lr,
        loss_total: sums.total,
        loss_reg_orig: sums.reg_orig,
        loss_reg_flip: sums.reg_flip,
        loss_ac: sums.ac,
    })
}

pub struct TrainRun {
    pub model: Erea,
    pub store: ParamStore,
    pub log: Vec<TrainStepRecord>,
}

pub fn train(cfg: &TrainConfig, model_cfg: &ModelConfig, chunks: &[VideoChunk]) -> Result<TrainRun> {
    train_with(cfg, model_cfg, chunks, |_| {})
}

/// Trains a fresh model for `cfg.epochs` epochs, calling `observer` after
/// every step.
///
/// Random streams derived from `cfg.seed`: model initialisation, the
/// per-epoch shuffle of chunk order, and mask positions (drawn in batch
/// order). The schedule horizon is `epochs * ceil(n / batch_size)`.
pub fn train_with(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    chunks: &[VideoChunk],
    mut observer: impl FnMut(&TrainStepRecord),
) -> Result<TrainRun> {
    cfg.validate()?;
    if model_cfg.frames != cfg.chunk_len {
        return Err(Error::invalid(format!(
            "chunk_len {} does not match model frames {}",
            cfg.chunk_len, model_cfg.frames
        )));
    }
    if cfg.mask_size > model_cfg.height.min(model_cfg.width) {
        return Err(Error::invalid(format!(
            "mask size {} exceeds frame {}x{}",
            cfg.mask_size, model_cfg.height, model_cfg.width
        )));
    }
    if chunks.is_empty() && cfg.epochs > 0 {
        return Err(Error::InsufficientData("no training chunks".into()));
    }
    let mut store = ParamStore::new();
    let model = Erea::new(model_cfg.clone(), &mut store, &mut substream(cfg.seed, stream::MODEL_INIT))?;
    let total = cfg.epochs * cfg.batches_per_epoch(chunks.len());
    let mut opt = Optimizer::new(cfg.max_lr, total);
    let mut shuffle_rng = substream(cfg.seed, stream::TRAIN);
    let mut mask_rng = substream(cfg.seed, stream::AUGMENT);
    let mut log = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&VideoChunk> = idx.iter().map(|&i| &chunks[i]).collect();
            let rec = train_step(&batch, &model, &mut store, &mut opt, cfg, &mut mask_rng)?;
            observer(&rec);
            log.push(rec);
        }
    }
    Ok(TrainRun { model, store, log })
}

pub fn log_csv(records: &[TrainStepRecord]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step, r.lr, r.loss_total, r.loss_reg_orig, r.loss_reg_flip, r.loss_ac
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_clip_at, SynthConfig};
    use crate::numerics::rng::rng_from_seed;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            frames: 16,
            height: 8,
            width: 8,
            in_channels: 3,
            encoder_channels: vec![4, 4],
            feature_size: 4,
            gate_hidden: 0,
            input_norm: true,
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            chunk_len: 16,
            mask_size: 2,
            batch_size: 2,
            epochs: 2,
            max_lr: 3e-3,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn tiny_chunks(n: usize) -> Vec<VideoChunk> {
        let sc = SynthConfig {
            frames: 16,
            height: 8,
            width: 8,
            fs: 8.0,
            ..SynthConfig::default()
        };
        (0..n)
            .map(|i| synth_clip_at(&sc, 60.0 + 10.0 * i as f64, 16, &mut rng_from_seed(i as u64), "c").unwrap())
            .collect()
    }

    #[test]
    fn log_has_one_row_per_batch() {
        let chunks = tiny_chunks(5);
        let run = train(&tiny_cfg(), &tiny_model(), &chunks).unwrap();
        assert_eq!(run.log.len(), 2 * 3);
        let csv = log_csv(&run.log);
        assert_eq!(csv.lines().count(), 7);
        assert_eq!(csv.lines().next().unwrap(), LOG_HEADER);
        assert!(run.log.iter().all(|r| r.loss_ac >= 0.0 && r.loss_total.is_finite()));
    }

    #[test]
    fn zero_epochs_keeps_initialisation() {
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let run = train(&cfg, &tiny_model(), &tiny_chunks(3)).unwrap();
        let mut init = ParamStore::new();
        Erea::new(tiny_model(), &mut init, &mut substream(cfg.seed, stream::MODEL_INIT)).unwrap();
        assert!(run.log.is_empty());
        for (a, b) in run.store.iter().zip(init.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn equal_seeds_give_equal_records() {
        let chunks = tiny_chunks(4);
        let a = train(&tiny_cfg(), &tiny_model(), &chunks).unwrap();
        let b = train(&tiny_cfg(), &tiny_model(), &chunks).unwrap();
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn both_passes_share_one_parameter_set() {
        let chunks = tiny_chunks(1);
        let mut store = ParamStore::new();
        let model = Erea::new(tiny_model(), &mut store, &mut rng_from_seed(1)).unwrap();
        let mut g = Graph::new();
        let flipped = horizontal_flip(&chunks[0].frames).unwrap();
        model.forward(&mut g, &store, &chunks[0].frames).unwrap();
        model.forward(&mut g, &store, &flipped).unwrap();
        assert_eq!(g.param_leaf_count(), store.len());
    }

    #[test]
    fn overfits_small_set() {
        let sc = SynthConfig {
            frames: 32,
            height: 8,
            width: 8,
            ..SynthConfig::default()
        };
        let chunks: Vec<VideoChunk> = (0..4)
            .map(|i| synth_clip_at(&sc, 60.0 + 20.0 * i as f64, 32, &mut rng_from_seed(i as u64), "c").unwrap())
            .collect();
        let mc = ModelConfig {
            frames: 32,
            encoder_channels: vec![8, 8],
            ..tiny_model()
        };
        let cfg = TrainConfig {
            chunk_len: 32,
            batch_size: 4,
            epochs: 50,
            max_lr: 3e-2,
            ..tiny_cfg()
        };
        let run = train(&cfg, &mc, &chunks).unwrap();
        let first = run.log[0].loss_total;
        let last = run.log.last().unwrap().loss_total;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn non_finite_input_reports_divergence() {
        let mut chunks = tiny_chunks(1);
        chunks[0].ppg[3] = f64::NAN;
        let mut store = ParamStore::new();
        let model = Erea::new(tiny_model(), &mut store, &mut rng_from_seed(1)).unwrap();
        let mut opt = Optimizer::new(1e-3, 1);
        let err = train_step(&[&chunks[0]], &model, &mut store, &mut opt, &tiny_cfg(), &mut rng_from_seed(0)).unwrap_err();
        match err {
            Error::Diverged { step, .. } => assert_eq!(step, 0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let cfg = TrainConfig { chunk_len: 60, ..tiny_cfg() };
        assert!(train(&cfg, &tiny_model(), &tiny_chunks(1)).is_err());
    }
}
