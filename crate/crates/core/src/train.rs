//! Adam, the step learning-rate schedule and the training loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, collate, AugmentSpec, Sample};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossBreakdown};
use crate::network::Network;
use crate::nn::{Ctx, Mode};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Real, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over the trainable entries of a [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            ..Adam::default()
        }
    }

    /// One update. Parameters without a gradient and non-trainable entries
    /// are left alone.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: Real) -> Result<()> {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let w = params.tensor_mut(name)?;
            for (((w, m), v), &g) in w.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `lr(epoch) = base / divisor^floor((epoch - 1) / every)`, epochs from 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub base: Real,
    pub every: usize,
    pub divisor: Real,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 5e-5,
            every: 40,
            divisor: 10.0,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> Real {
        let k = (epoch.max(1) - 1) / self.every.max(1);
        self.base / self.divisor.powi(k as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
    pub augment: bool,
    pub augmentation: AugmentSpec,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch: 8,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
            augment: true,
            augmentation: AugmentSpec::default(),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config(format!(
                "batch {} is too small: train-mode normalization needs at least 2",
                self.batch
            )));
        }
        if self.epochs == 0 || !(self.schedule.base > 0.0) || self.schedule.every == 0 {
            return Err(Error::Config("epochs, lr and decay interval must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: Real,
    pub loss: LossBreakdown,
}

impl StepLog {
    pub const HEADER: &'static str = "step\tepoch\tlr\tbce1\tiou1\tbce2\tiou2\tbce3\tiou3\ttotal";

    /// Tab-separated, values in shortest round-trip form so logs compare bitwise.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\t{}\t{:e}", self.step, self.epoch, self.lr);
        for h in &self.loss.heads {
            let _ = write!(s, "\t{:e}\t{:e}", h.bce, h.iou);
        }
        let _ = write!(s, "\t{:e}", self.loss.total);
        s
    }
}

pub struct Trainer {
    pub net: Network,
    pub params: ParamStore,
    pub optimizer: Adam,
    pub config: TrainConfig,
    pub step: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(net: Network, params: ParamStore, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            optimizer: Adam::new(config.adam),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a),
            net,
            params,
            config,
            step: 0,
        })
    }

    /// Forward, backward and one optimizer update on a batch.
    pub fn train_step(&mut self, batch: &[&Sample], lr: Real) -> Result<LossBreakdown> {
        let (rgb, depth, gt) = collate(batch)?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, Mode::Train);
        let r = ctx.input(rgb, false);
        let d = ctx.input(depth, false);
        let out = self.net.forward(&mut ctx, r, d)?;
        let record = ctx.finish();
        let (loss, breakdown) = total_loss(&mut tape, &out.masks, &gt)?;
        let grads = tape.backward(loss)?;
        let pg = record.param_grads(&grads);
        self.optimizer.step(&mut self.params, &pg, lr)?;
        self.params.apply_batch_stats(&record.stats)?;
        self.step += 1;
        Ok(breakdown)
    }

    fn budget_left(&self) -> bool {
        self.config.max_steps.map_or(true, |m| self.step < m)
    }

    /// One pass over `data` in a seeded order. Trailing samples that would
    /// form a batch of one are dropped.
    pub fn run_epoch(&mut self, data: &[Sample], epoch: usize, log: &mut dyn FnMut(&StepLog)) -> Result<Real> {
        let lr = self.config.schedule.lr(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for chunk in order.chunks(self.config.batch) {
            if chunk.len() < 2 || !self.budget_left() {
                break;
            }
            let spec = self.config.augmentation;
            let owned: Vec<Sample> = if self.config.augment {
                chunk.iter().map(|&i| augment(&data[i], &spec, &mut self.rng)).collect()
            } else {
                chunk.iter().map(|&i| data[i].clone()).collect()
            };
            let refs: Vec<&Sample> = owned.iter().collect();
            let loss = self.train_step(&refs, lr)?;
            log(&StepLog {
                step: self.step,
                epoch,
                lr,
                loss,
            });
            sum += loss.total;
            n += 1;
        }
        Ok(if n == 0 { Real::NAN } else { sum / n as Real })
    }

    pub fn finished(&self) -> bool {
        !self.budget_left()
    }

    /// Mean eval-mode total loss over `data`.
    pub fn eval_loss(&self, data: &[Sample]) -> Result<Real> {
        if data.is_empty() {
            return Ok(Real::NAN);
        }
        let mut sum = 0.0;
        for chunk in data.chunks(self.config.batch) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let (rgb, depth, gt) = collate(&refs)?;
            let mut tape = Tape::new();
            let mut ctx = Ctx::frozen(&mut tape, &self.params, Mode::Eval);
            let r = ctx.input(rgb, false);
            let d = ctx.input(depth, false);
            let out = self.net.forward(&mut ctx, r, d)?;
            let (_, b) = total_loss(&mut tape, &out.masks, &gt)?;
            sum += b.total * chunk.len() as Real;
        }
        Ok(sum / data.len() as Real)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_samples;
    use crate::network::NetworkConfig;

    #[test]
    fn schedule_decays_tenfold_every_forty_epochs() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(1), 5e-5);
        assert_eq!(s.lr(40), 5e-5);
        assert_eq!(s.lr(41), 5e-6);
        assert_eq!(s.lr(81), 5e-7);
        assert_eq!(format!("{:e}", s.lr(41)), "5e-6");
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        let sh = crate::Shape::new(1, 1, 1, 3);
        p.insert("w", Tensor::zeros(sh), ParamKind::Trainable);
        p.insert("f", Tensor::zeros(sh), ParamKind::Frozen);
        let g = Tensor::from_vec(sh, vec![2.0, -0.5, 0.0]).unwrap();
        let grads = BTreeMap::from([("w".to_string(), g.clone()), ("f".to_string(), g)]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &grads, 0.1).unwrap();
        let w = p.tensor("w").unwrap().data();
        assert!((w[0] + 0.1).abs() < 1e-7 && (w[1] - 0.1).abs() < 1e-7 && w[2] == 0.0);
        assert!(p.tensor("f").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = ParamStore::new();
        let sh = crate::Shape::new(1, 1, 1, 2);
        p.insert("w", Tensor::from_vec(sh, vec![3.0, -2.0]).unwrap(), ParamKind::Trainable);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..2000 {
            let g = p.tensor("w").unwrap().map(|v| 2.0 * v);
            adam.step(&mut p, &BTreeMap::from([("w".to_string(), g)]), 0.01).unwrap();
        }
        assert!(p.tensor("w").unwrap().max_abs() < 1e-3);
    }

    #[test]
    fn batch_of_one_rejected() {
        let net = Network::new(NetworkConfig::desk(32, 4)).unwrap();
        let params = net.init_params(0);
        let cfg = TrainConfig {
            batch: 1,
            ..TrainConfig::default()
        };
        assert!(Trainer::new(net, params, cfg).is_err());
    }

    #[test]
    fn few_steps_reduce_loss_and_keep_bases() {
        let net = Network::new(NetworkConfig::desk(32, 4)).unwrap();
        let params = net.init_params(1);
        let bases: Vec<(String, Tensor)> = params
            .iter()
            .filter(|(n, _)| n.contains("sobel"))
            .map(|(n, p)| (n.to_string(), p.value.clone()))
            .collect();
        let data = synth_samples(2, 32, 3).unwrap();
        let refs: Vec<&Sample> = data.iter().collect();
        let mut t = Trainer::new(net, params, TrainConfig::default()).unwrap();
        let first = t.train_step(&refs, 1e-2).unwrap().total;
        let mut last = first;
        for _ in 0..15 {
            last = t.train_step(&refs, 1e-2).unwrap().total;
        }
        assert!(last < first, "{first} -> {last}");
        for (n, v) in bases {
            assert_eq!(t.params.tensor(&n).unwrap(), &v);
        }
    }
}
