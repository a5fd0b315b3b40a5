//! Gradient-descent optimizers over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
        }
    }
}

/// Adam with decoupled weight decay; plain SGD available for debugging.
pub struct Optimizer {
    cfg: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, store: &ParamStore) -> Self {
        let sizes: Vec<usize> = store.iter().map(|(_, p)| p.tensor.numel()).collect();
        Optimizer {
            cfg,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) {
        assert_eq!(grads.len(), store.len(), "gradient count mismatch");
        self.step += 1;
        let lr = self.cfg.learning_rate;
        let wd = self.cfg.weight_decay;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for i in 0..grads.len() {
                    let p = store.get_mut(crate::params::ParamId(i));
                    for (w, g) in p.tensor.data_mut().iter_mut().zip(&grads[i]) {
                        *w -= lr * (g + wd * *w);
                    }
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - BETA1.powi(self.step as i32);
                let bc2 = 1.0 - BETA2.powi(self.step as i32);
                for i in 0..grads.len() {
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    let p = store.get_mut(crate::params::ParamId(i));
                    let data = p.tensor.data_mut();
                    for j in 0..data.len() {
                        let g = grads[i][j];
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        data[j] -= lr * (mhat / (vhat.sqrt() + EPS) + wd * data[j]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::from_vec(vec![5.0]));
        let mut opt = Optimizer::new(
            OptimizerConfig {
                kind: OptimizerKind::Adam,
                learning_rate: 0.1,
                weight_decay: 0.0,
            },
            &store,
        );
        for _ in 0..200 {
            let x = store.get(crate::params::ParamId(0)).tensor.data()[0];
            opt.step(&mut store, &[vec![2.0 * x]]);
        }
        let x = store.get(crate::params::ParamId(0)).tensor.data()[0];
        assert!(x.abs() < 0.05, "x = {x}");
    }
}
