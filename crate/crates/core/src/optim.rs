//! Adam, reduce-on-plateau learning-rate scheduling, early stopping and the
//! per-epoch training history shared by the trainable recommenders.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Grads, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// Adam with bias correction. Moments are kept for trainable tensors only,
/// so frozen tensors are never touched.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let alloc = |store: &ParamStore<T>| {
            store
                .iter()
                .map(|(_, t)| if t.trainable { vec![T::zero(); t.numel()] } else { Vec::new() })
                .collect::<Vec<_>>()
        };
        Adam {
            cfg,
            step: 0,
            m: alloc(store),
            v: alloc(store),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for id in store.trainable_ids() {
            let g = grads.get(id);
            if g.is_empty() {
                continue;
            }
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let w = &mut store.get_mut(id).data;
            for i in 0..w.len() {
                let gi = g[i].widen();
                let mi = beta1 * m[i].widen() + (1.0 - beta1) * gi;
                let vi = beta2 * v[i].widen() + (1.0 - beta2) * gi * gi;
                m[i] = T::narrow(mi);
                v[i] = T::narrow(vi);
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                w[i] = T::narrow(w[i].widen() - update);
            }
        }
    }
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// improvement of a maximized metric, never going below `min_lr`.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            min_lr,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's metric; returns the learning rate for the next epoch.
    pub fn observe(&mut self, metric: f64) -> f64 {
        if metric > self.best {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Signals a stop after `patience` consecutive epochs without improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    /// Returns `true` when `metric` is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric > self.best {
            self.best = metric;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (best validation metric), if monitored.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_metric,lr\n");
        for r in &self.epochs {
            let val = r.val_metric.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, val, r.lr));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first update is lr * sign(g).
        let mut s = ParamStore::<f64>::new();
        let w = s.add("w", &[2], vec![1.0, -1.0], true);
        let f = s.add("f", &[1], vec![3.0], false);
        let mut g = Grads::zeros(&s);
        g.get_mut(w).copy_from_slice(&[0.5, -2.0]);
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.step(&mut s, &g, 0.001);
        let d = s.data(w);
        assert!((d[0] - 0.999).abs() < 1e-9);
        assert!((d[1] + 0.999).abs() < 1e-9);
        assert_eq!(s.data(f), &[3.0]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = ParamStore::<f64>::new();
        let w = s.add("w", &[1], vec![5.0], true);
        let mut adam = Adam::new(&s, AdamConfig::default());
        let mut g = Grads::zeros(&s);
        for _ in 0..5000 {
            let x = s.data(w)[0];
            g.get_mut(w)[0] = 2.0 * (x - 2.0);
            adam.step(&mut s, &g, 0.01);
        }
        assert!((s.data(w)[0] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut p = PlateauScheduler::new(0.001, 0.5, 2, 1e-5);
        assert_eq!(p.observe(0.1), 0.001);
        assert_eq!(p.observe(0.1), 0.001);
        assert_eq!(p.observe(0.05), 0.001);
        assert_eq!(p.observe(0.1), 0.0005);
        assert_eq!(p.observe(0.2), 0.0005);
    }

    #[test]
    fn plateau_floor() {
        let mut p = PlateauScheduler::new(2e-5, 0.5, 0, 1e-5);
        p.observe(1.0);
        for _ in 0..5 {
            p.observe(0.0);
        }
        assert_eq!(p.lr(), 1e-5);
    }

    #[test]
    fn early_stopping_counts_bad_epochs() {
        let mut e = EarlyStopping::new(3);
        assert!(e.observe(0, 0.5));
        assert!(!e.observe(1, 0.5));
        assert!(!e.observe(2, 0.4));
        assert!(!e.should_stop());
        assert!(!e.observe(3, 0.1));
        assert!(e.should_stop());
        assert_eq!(e.best(), Some((0, 0.5)));
    }

    #[test]
    fn history_csv() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 0,
                train_loss: 1.5,
                val_metric: Some(0.25),
                lr: 0.001,
            }],
            ..Default::default()
        };
        assert_eq!(h.to_csv(), "epoch,train_loss,val_metric,lr\n0,1.5,0.25,0.001\n");
    }
}
