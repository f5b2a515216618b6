use serde::{Deserialize, Serialize};

use super::{Element, ParamStore, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for every parameter of one store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<E> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
}

impl<E: Element> AdamState<E> {
    pub fn new(params: &ParamStore<E>, config: AdamConfig) -> Self {
        let zeros = || params.ids().map(|id| Tensor::zeros(params.value(id).shape())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Clears the moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.data_mut().iter_mut().for_each(|x| *x = E::zero());
        }
    }

    /// One bias-corrected Adam update; consumes the accumulated gradients.
    pub fn step(&mut self, params: &mut ParamStore<E>, lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(TensorError::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some(id) = params.ids().find(|&id| params.grad(id).is_none()) {
            return Err(TensorError::Contract(format!("parameter `{}` has no gradient", params.name(id))));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (E::of(beta1), E::of(beta2));
        let (one_b1, one_b2) = (E::of(1.0 - beta1), E::of(1.0 - beta2));
        let step_size = E::of(lr / c1);
        let c2_sqrt = E::of(c2.sqrt());
        let eps = E::of(eps);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = params.take_grad(id).expect("checked above");
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let value = params.value_mut(id);
            for (((p, gi), mi), vi) in
                value.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = b1 * *mi + one_b1 * *gi;
                *vi = b2 * *vi + one_b2 * *gi * *gi;
                *p = *p - step_size * *mi / (vi.sqrt() / c2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrMode {
    /// One schedule over the global epoch count.
    Global,
    /// The schedule restarts at every experience boundary.
    PerExperience,
}

/// Per-epoch cosine annealing between `base_lr` and `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub t_max: usize,
    pub mode: LrMode,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base_lr: 5e-5, min_lr: 0.0, t_max: 200, mode: LrMode::Global }
    }
}

impl LrSchedule {
    /// Rate at schedule step `t`. Past `t_max` the cosine continues, so the
    /// rate climbs back to `base_lr` at `2 * t_max`.
    pub fn lr_at(&self, t: usize) -> f64 {
        let phase = std::f64::consts::PI * t as f64 / self.t_max.max(1) as f64;
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + phase.cos())
    }

    /// Rate for a zero-based global epoch that is `epoch_in_experience`
    /// epochs into the current experience.
    pub fn lr_for(&self, global_epoch: usize, epoch_in_experience: usize) -> f64 {
        match self.mode {
            LrMode::Global => self.lr_at(global_epoch),
            LrMode::PerExperience => self.lr_at(epoch_in_experience),
        }
    }
}
