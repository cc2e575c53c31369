use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KernelError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named trainable tensors with matching gradient slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers a parameter and returns its slot index.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize, KernelError> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(KernelError::DuplicateParam(name));
        }
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Param { name, value, grad });
        Ok(self.params.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.params[idx].value
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].value
    }

    pub fn grad(&self, idx: usize) -> &Tensor {
        &self.params[idx].grad
    }

    pub fn grad_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].grad
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set_value(&mut self, idx: usize, value: Tensor) -> Result<(), KernelError> {
        let p = &mut self.params[idx];
        if p.value.shape() != value.shape() {
            return Err(KernelError::Shape(format!(
                "parameter {}: expected {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    /// Adds `g` into the gradient slot.
    pub fn accumulate_grad(&mut self, idx: usize, g: &Tensor) -> Result<(), KernelError> {
        self.params[idx].grad.add_scaled(g, 1.0)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.is_finite() && p.grad.is_finite())
    }
}

/// Scaled uniform initialization: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
///
/// A `r × c` parameter uses fan-in `r` and fan-out `c`; vectors are stored as `r × 1`.
pub fn xavier_init(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut store.params {
        let (fan_in, fan_out) = p.value.shape();
        let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        for v in p.value.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
    }
    store.seed = seed;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient before the update.
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First-order optimizer with per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        match self.config.kind {
            OptimizerKind::Adam => self.adam_step(store),
            OptimizerKind::Sgd => self.sgd_step(store),
        }
    }

    fn sgd_step(&mut self, store: &mut ParamStore) {
        self.step_count += 1;
        let OptimizerConfig {
            lr, weight_decay, ..
        } = self.config;
        for p in &mut store.params {
            for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *w -= lr * (g + weight_decay * *w);
            }
        }
    }

    fn adam_step(&mut self, store: &mut ParamStore) {
        self.step_count += 1;
        let OptimizerConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in store
            .params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let w = p.value.data_mut();
            let g = p.grad.data();
            let m = m.data_mut();
            let v = v.data_mut();
            for i in 0..w.len() {
                let gi = g[i] + weight_decay * w[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Adam update applied to every parameter in `store`.
pub fn adam_step(store: &mut ParamStore, state: &mut Optimizer) {
    debug_assert_eq!(state.config.kind, OptimizerKind::Adam);
    state.adam_step(store);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0);
        s.add("w", Tensor::zeros(2, 2)).unwrap();
        assert!(matches!(
            s.add("w", Tensor::zeros(1, 1)),
            Err(KernelError::DuplicateParam(_))
        ));
    }

    #[test]
    fn xavier_respects_bounds_and_seed() {
        let mut a = ParamStore::new(0);
        a.add("w", Tensor::zeros(30, 10)).unwrap();
        a.add("v", Tensor::zeros(8, 1)).unwrap();
        let mut b = a.clone();
        xavier_init(&mut a, 11);
        xavier_init(&mut b, 11);
        assert_eq!(a, b);
        let bound = (6.0f64 / 40.0).sqrt();
        assert!(a.value(0).data().iter().all(|v| v.abs() <= bound));
        assert!(a.value(0).data().iter().any(|v| *v != 0.0));
        xavier_init(&mut b, 12);
        assert_ne!(a.value(0), b.value(0));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = ParamStore::new(0);
        s.add("x", Tensor::from_vec(1, 2, vec![3.0, -2.0]).unwrap())
            .unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.05), &s);
        for _ in 0..2000 {
            s.zero_grad();
            let g = s.value(0).map(|x| 2.0 * x);
            s.accumulate_grad(0, &g).unwrap();
            adam_step(&mut s, &mut opt);
        }
        assert!(s.value(0).data().iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut s = ParamStore::new(0);
        s.add("x", Tensor::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1), &s);
        s.accumulate_grad(0, &Tensor::filled(1, 1, 5.0)).unwrap();
        opt.step(&mut s);
        assert!((s.value(0).data()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_adam_parameters_unchanged() {
        let mut s = ParamStore::new(0);
        s.add("x", Tensor::from_vec(1, 1, vec![1.5]).unwrap()).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1), &s);
        opt.step(&mut s);
        assert_eq!(s.value(0).data()[0], 1.5);
    }

    #[test]
    fn sgd_step() {
        let mut s = ParamStore::new(0);
        s.add("x", Tensor::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        let mut cfg = OptimizerConfig::adam(0.1);
        cfg.kind = OptimizerKind::Sgd;
        let mut opt = Optimizer::new(cfg, &s);
        s.accumulate_grad(0, &Tensor::filled(1, 1, 2.0)).unwrap();
        opt.step(&mut s);
        assert!((s.value(0).data()[0] - 0.8).abs() < 1e-15);
    }
}
