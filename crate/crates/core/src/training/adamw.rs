use std::collections::BTreeMap;

use super::{TrainError, TrainingConfig};
use crate::tensor_core::{Scalar, Tensor};

/// First/second moment estimates per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState<T> {
    pub moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        Self {
            moments: BTreeMap::new(),
            step: 0,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay:
/// `w ← w − lr·(m̂/(√v̂ + eps) + wd·w)`.
pub fn adamw_step<T: Scalar>(
    params: &mut BTreeMap<String, Tensor<T>>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimizerState<T>,
    cfg: &TrainingConfig,
) -> Result<(), TrainError> {
    for (name, w) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| TrainError::MissingGradient(name.clone()))?;
        if g.shape() != w.shape() {
            return Err(TrainError::ShapeMismatch(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let one = T::one();
    let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.learning_rate);
    let wd = T::lit(cfg.weight_decay);
    let eps = T::lit(cfg.eps);

    for (name, w) in params.iter_mut() {
        let g = &grads[name];
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (Tensor::zeros(w.shape().to_vec()), Tensor::zeros(w.shape().to_vec())));
        let ws = w.data_mut();
        let ms = m.data_mut();
        let vs = v.data_mut();
        for i in 0..ws.len() {
            let gi = g.data()[i];
            ms[i] = b1 * ms[i] + (one - b1) * gi;
            vs[i] = b2 * vs[i] + (one - b2) * gi * gi;
            let m_hat = ms[i] / bc1;
            let v_hat = vs[i] / bc2;
            ws[i] = ws[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * ws[i]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64, g: f64) -> (BTreeMap<String, Tensor<f64>>, BTreeMap<String, Tensor<f64>>) {
        (
            BTreeMap::from([("w".to_string(), Tensor::scalar(w))]),
            BTreeMap::from([("w".to_string(), Tensor::scalar(g))]),
        )
    }

    fn cfg(lr: f64, wd: f64) -> TrainingConfig {
        TrainingConfig {
            learning_rate: lr,
            weight_decay: wd,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn hand_computed_first_step() {
        let (mut p, g) = single(1.0, 0.1);
        let mut st = OptimizerState::new();
        adamw_step(&mut p, &g, &mut st, &cfg(0.1, 0.01)).unwrap();
        assert!((p["w"].item().unwrap() - 0.899).abs() < 1e-6);
        assert_eq!(st.step, 1);
        let (m, v) = &st.moments["w"];
        assert!((m.item().unwrap() / 0.1 - 0.1).abs() < 1e-12);
        assert!((v.item().unwrap() / (1.0 - 0.999) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let (mut p, g) = single(0.37, 0.0);
        adamw_step(&mut p, &g, &mut OptimizerState::new(), &cfg(0.1, 0.0)).unwrap();
        assert_eq!(p["w"].item(), Some(0.37));
    }

    #[test]
    fn zero_gradient_with_decay_shrinks() {
        let (mut p, g) = single(2.0, 0.0);
        adamw_step(&mut p, &g, &mut OptimizerState::new(), &cfg(0.1, 0.01)).unwrap();
        assert_eq!(p["w"].item(), Some(2.0 * (1.0 - 0.1 * 0.01)));
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (mut p, g) = single(-1.25, 3.0);
        let mut st = OptimizerState::new();
        for _ in 0..5 {
            adamw_step(&mut p, &g, &mut st, &cfg(0.0, 0.5)).unwrap();
        }
        assert_eq!(p["w"].item(), Some(-1.25));
    }

    #[test]
    fn shape_and_missing_gradient_errors() {
        let (mut p, _) = single(1.0, 0.0);
        let bad = BTreeMap::from([("w".to_string(), Tensor::<f64>::zeros(vec![2]))]);
        assert!(matches!(
            adamw_step(&mut p, &bad, &mut OptimizerState::new(), &cfg(0.1, 0.0)),
            Err(TrainError::ShapeMismatch(_))
        ));
        assert!(matches!(
            adamw_step(&mut p, &BTreeMap::new(), &mut OptimizerState::new(), &cfg(0.1, 0.0)),
            Err(TrainError::MissingGradient(_))
        ));
    }
}
