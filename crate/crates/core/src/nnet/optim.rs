//! Optimizers and the plateau learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdNesterov,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::SgdNesterov => "sgd_nesterov",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd_nesterov" => Ok(OptimizerKind::SgdNesterov),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl OptimizerConfig {
    /// SGD with Nesterov momentum 0.9, lr 0.01, plateau factor 0.1.
    pub fn sgd_default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdNesterov,
            lr: 0.01,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau_patience: 3,
            plateau_factor: 0.1,
            epochs: 100,
            batch_size: 16,
        }
    }

    pub fn adam_default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau_patience: 5,
            plateau_factor: 0.1,
            epochs: 100,
            batch_size: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !(0.0 < self.plateau_factor && self.plateau_factor < 1.0) {
            return Err(Error::Config("plateau factor must be in (0, 1)".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

struct ParamState<S> {
    bufs: Vec<Vec<S>>,
    step: u64,
}

/// Parameter updater with per-parameter state addressed by name, so state
/// survives checkpoint round-trips.
pub struct Optimizer<S: Scalar> {
    cfg: OptimizerConfig,
    state: BTreeMap<String, ParamState<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(cfg: &OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            cfg: cfg.clone(),
            state: BTreeMap::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.cfg.kind
    }

    /// Apply one update to a parameter using its accumulated gradient.
    pub fn step_param(&mut self, name: &str, lr: f64, param: &mut Tensor<S>) {
        let n = param.numel();
        let grad: Vec<S> = match param.grad() {
            Some(g) => g.to_vec(),
            None => return,
        };
        let n_bufs = match self.cfg.kind {
            OptimizerKind::SgdNesterov => 1,
            OptimizerKind::Adam => 2,
        };
        let entry = self.state.entry(name.to_string()).or_insert_with(|| ParamState {
            bufs: vec![vec![S::ZERO; n]; n_bufs],
            step: 0,
        });
        entry.step += 1;
        let lr_s = S::from_f64(lr);
        match self.cfg.kind {
            OptimizerKind::SgdNesterov => {
                let mu = S::from_f64(self.cfg.momentum);
                let velocity = &mut entry.bufs[0];
                for i in 0..n {
                    let g = grad[i];
                    velocity[i] = mu * velocity[i] + g;
                    param.data_mut()[i] -= lr_s * (g + mu * velocity[i]);
                }
            }
            OptimizerKind::Adam => {
                let b1 = S::from_f64(self.cfg.beta1);
                let b2 = S::from_f64(self.cfg.beta2);
                let eps = S::from_f64(self.cfg.eps);
                let c1 = S::from_f64(1.0 - self.cfg.beta1.powi(entry.step as i32));
                let c2 = S::from_f64(1.0 - self.cfg.beta2.powi(entry.step as i32));
                let (m_buf, v_buf) = {
                    let (a, b) = entry.bufs.split_at_mut(1);
                    (&mut a[0], &mut b[0])
                };
                for i in 0..n {
                    let g = grad[i];
                    m_buf[i] = b1 * m_buf[i] + (S::ONE - b1) * g;
                    v_buf[i] = b2 * v_buf[i] + (S::ONE - b2) * g * g;
                    let m_hat = m_buf[i] / c1;
                    let v_hat = v_buf[i] / c2;
                    param.data_mut()[i] -= lr_s * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }

    /// Flatten state for checkpointing: one entry per buffer plus the step
    /// counter, all as f32 payloads.
    pub fn export_state(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = Vec::new();
        for (name, st) in &self.state {
            for (bi, buf) in st.bufs.iter().enumerate() {
                out.push((
                    format!("{name}#buf{bi}"),
                    vec![buf.len()],
                    buf.iter().map(|v| v.to_f64() as f32).collect(),
                ));
            }
            out.push((format!("{name}#step"), vec![1], vec![st.step as f32]));
        }
        out
    }

    pub fn import_state(&mut self, entries: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        self.state.clear();
        for (key, _shape, payload) in entries {
            let (name, field) = key.rsplit_once('#').ok_or_else(|| {
                Error::Integrity(format!("malformed optimizer state key `{key}`"))
            })?;
            let entry = self.state.entry(name.to_string()).or_insert_with(|| ParamState {
                bufs: Vec::new(),
                step: 0,
            });
            if field == "step" {
                entry.step = payload.first().copied().unwrap_or(0.0) as u64;
            } else if let Some(idx) = field.strip_prefix("buf") {
                let idx: usize = idx.parse().map_err(|_| {
                    Error::Integrity(format!("malformed optimizer buffer key `{key}`"))
                })?;
                if entry.bufs.len() <= idx {
                    entry.bufs.resize(idx + 1, Vec::new());
                }
                entry.bufs[idx] = payload.iter().map(|&v| S::from_f64(v as f64)).collect();
            } else {
                return Err(Error::Integrity(format!("unknown optimizer state field `{field}`")));
            }
        }
        Ok(())
    }
}

/// Learning rate after walking a training-loss history: reduce by
/// `plateau_factor` whenever no new minimum (beyond a 1e-4 tolerance)
/// appears for `plateau_patience` consecutive epochs. Floor 1e-6.
pub fn plateau_lr(history: &[f64], cfg: &OptimizerConfig) -> f64 {
    const TOL: f64 = 1e-4;
    const FLOOR: f64 = 1e-6;
    let mut lr = cfg.lr;
    if history.is_empty() {
        return lr;
    }
    let mut best = history[0];
    let mut stale = 0usize;
    for &loss in &history[1..] {
        if loss < best - TOL {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau_patience {
                lr = (lr * cfg.plateau_factor).max(FLOOR);
                stale = 0;
            }
        }
    }
    lr
}
