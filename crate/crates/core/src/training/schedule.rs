use serde::{Deserialize, Serialize};

/// Weights of the composite VO₂ loss, plus the inner dynamic-loss mix and
/// the HR moment weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_base: f64,
    pub w_dynamic: f64,
    pub w_aux: f64,
    pub alpha_dyn: f64,
    pub lambda_hr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        curriculum(0)
    }
}

/// Accuracy first, shape and moments phased in over the first 20 epochs.
pub fn curriculum(epoch: usize) -> LossWeights {
    let e = epoch as f64;
    let w_base = (1.0 - e / 20.0).max(0.3);
    LossWeights {
        w_base,
        w_dynamic: 1.0 - w_base,
        w_aux: (0.1 + 0.01 * e).min(0.3),
        alpha_dyn: 0.5,
        lambda_hr: 0.1,
    }
}

/// Global gradient-norm limit `1 + 4·e^(−epoch/10)`.
pub fn clip_value(epoch: usize) -> f64 {
    1.0 + 4.0 * (-(epoch as f64) / 10.0).exp()
}

/// Cosine annealing with warm restarts, stepped once per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineWarmRestarts {
    pub base_lr: f64,
    pub eta_min: f64,
    pub t0: usize,
    pub t_mult: usize,
    t_cur: usize,
    t_i: usize,
}

impl CosineWarmRestarts {
    pub fn new(base_lr: f64, t0: usize, t_mult: usize, eta_min: f64) -> Self {
        Self {
            base_lr,
            eta_min,
            t0,
            t_mult,
            t_cur: 0,
            t_i: t0,
        }
    }

    pub fn lr(&self) -> f64 {
        let phase = std::f64::consts::PI * self.t_cur as f64 / self.t_i as f64;
        self.eta_min + (self.base_lr - self.eta_min) * (1.0 + phase.cos()) / 2.0
    }

    pub fn step(&mut self) {
        self.t_cur += 1;
        if self.t_cur >= self.t_i {
            self.t_cur -= self.t_i;
            self.t_i *= self.t_mult;
        }
    }
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// a relative improvement of `threshold` (PyTorch `rel` mode defaults).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReduceOnPlateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub cooldown: usize,
    pub min_lr: f64,
    pub threshold: f64,
    best: f64,
    bad_epochs: usize,
    cooldown_left: usize,
}

impl ReduceOnPlateau {
    pub fn new(lr: f64, factor: f64, patience: usize, cooldown: usize, min_lr: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            cooldown,
            min_lr,
            threshold: 1e-4,
            best: f64::INFINITY,
            bad_epochs: 0,
            cooldown_left: 0,
        }
    }

    pub fn step(&mut self, metric: f64) {
        if metric < self.best * (1.0 - self.threshold) {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.bad_epochs = 0;
        }
        if self.bad_epochs > self.patience {
            self.lr = (self.lr * self.factor).max(self.min_lr);
            self.cooldown_left = self.cooldown;
            self.bad_epochs = 0;
        }
    }
}

/// Tracks the best epoch; equal scores keep the earlier epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    /// Returns true when `score` is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score < self.best || self.best_epoch.is_none() {
            self.best = score;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }
}
