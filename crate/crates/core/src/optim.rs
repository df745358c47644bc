//! Adam and the learning-rate schedules.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moment buffers shaped like `sizes`.
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    pub fn for_params(params: &[&Vec<f64>]) -> Self {
        Self::new(&params.iter().map(|p| p.len()).collect::<Vec<_>>())
    }
}

/// One bias-corrected Adam update, in place. `names` labels the parameters
/// for error messages. Every gradient is checked before anything is
/// modified, so a failed step leaves parameters and state untouched.
pub fn adam_step(
    params: &mut [&mut Vec<f64>],
    grads: &[Vec<f64>],
    names: &[String],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::contract(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).map_or_else(|| format!("#{i}"), Clone::clone);
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::dim(format!("gradient for `{name}` has the wrong size")));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("`{name}` entry {j} is {}", g[j])));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for j in 0..g.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    /// `base · decay^epoch`.
    Exponential { base: f64, decay: f64 },
    /// `base`, divided by 2 from epoch 30, by 10 from 50, by 100 from 70.
    Staircase { base: f64 },
}

impl LrSchedule {
    pub fn rate(&self, epoch: i64) -> Result<f64> {
        match *self {
            LrSchedule::Exponential { base, decay } => lr_schedule(epoch, base, decay),
            LrSchedule::Staircase { base } => staircase_schedule(epoch, base),
        }
    }
}

/// `base_lr · decay^epoch`.
pub fn lr_schedule(epoch: i64, base_lr: f64, decay: f64) -> Result<f64> {
    if epoch < 0 {
        return Err(Error::contract(format!("negative epoch {epoch}")));
    }
    Ok(base_lr * decay.powi(epoch as i32))
}

/// Step decay: ×½ at epoch 30, a further ×⅕ at 50 and ×⅒ at 70.
pub fn staircase_schedule(epoch: i64, base_lr: f64) -> Result<f64> {
    if epoch < 0 {
        return Err(Error::contract(format!("negative epoch {epoch}")));
    }
    let mut lr = base_lr;
    if epoch >= 30 {
        lr /= 2.0;
    }
    if epoch >= 50 {
        lr /= 5.0;
    }
    if epoch >= 70 {
        lr /= 10.0;
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::uniform_vec;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn first_step_by_hand() {
        let mut theta = vec![1.0];
        let mut st = AdamState::new(&[1]);
        adam_step(&mut [&mut theta], &[vec![1.0]], &names(1), &mut st, 0.001).unwrap();
        assert!((theta[0] - (1.0 - 0.001 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op_at_first_step() {
        let mut theta = vec![0.7, -2.0];
        let mut st = AdamState::new(&[2]);
        adam_step(&mut [&mut theta], &[vec![0.0, 0.0]], &names(1), &mut st, 0.01).unwrap();
        assert_eq!(theta, vec![0.7, -2.0]);
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut theta = vec![1.0];
        let mut st = AdamState::new(&[1]);
        for _ in 0..200 {
            let g = vec![2.0 * theta[0]];
            adam_step(&mut [&mut theta], &[g], &names(1), &mut st, 0.05).unwrap();
        }
        assert!(theta[0].abs() < 0.05, "theta {}", theta[0]);
    }

    /// Scalar Adam written out directly from the update equations.
    fn scalar_oracle(theta0: f64, grad: impl Fn(f64) -> f64, lr: f64, steps: usize) -> f64 {
        let (mut th, mut m, mut v) = (theta0, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = grad(th);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            th -= lr * mh / (vh.sqrt() + 1e-8);
        }
        th
    }

    #[test]
    fn matches_scalar_oracle() {
        for seed in 0..20 {
            let c = uniform_vec(seed, 3, -2.0, 2.0);
            let grad = |x: f64| 2.0 * c[0].abs() * (x - c[1]) + c[2] * x.cos();
            let mut theta = vec![c[1] + 1.0];
            let mut st = AdamState::new(&[1]);
            for _ in 0..100 {
                let g = vec![grad(theta[0])];
                adam_step(&mut [&mut theta], &[g], &names(1), &mut st, 0.01).unwrap();
            }
            let expect = scalar_oracle(c[1] + 1.0, grad, 0.01, 100);
            assert!((theta[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_leaves_state() {
        let mut a = vec![1.0];
        let mut b = vec![2.0, 3.0];
        let mut st = AdamState::new(&[1, 2]);
        let before = st.clone();
        let err = adam_step(&mut [&mut a, &mut b], &[vec![0.5], vec![1.0, f64::NAN]], &["w".into(), "decoder.1.bias".into()], &mut st, 0.1)
            .unwrap_err();
        assert!(matches!(&err, Error::NonFiniteGradient(msg) if msg.contains("decoder.1.bias")));
        assert_eq!(st, before);
        assert_eq!((a, b), (vec![1.0], vec![2.0, 3.0]));
    }

    #[test]
    fn rejects_bad_learning_rate() {
        let mut a = vec![1.0];
        let mut st = AdamState::new(&[1]);
        assert!(adam_step(&mut [&mut a], &[vec![1.0]], &names(1), &mut st, 0.0).is_err());
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0, 0.001, 0.995).unwrap(), 0.001);
        assert!((lr_schedule(1, 0.001, 0.995).unwrap() - 0.000995).abs() < 1e-18);
        assert_eq!(lr_schedule(40, 0.001, 1.0).unwrap(), 0.001);
        assert!(matches!(lr_schedule(-1, 0.001, 0.995), Err(Error::Contract(_))));
        let s = LrSchedule::Staircase { base: 1.0 };
        let rates: Vec<f64> = [0, 29, 30, 49, 50, 70, 99].iter().map(|&e| s.rate(e).unwrap()).collect();
        assert_eq!(rates, vec![1.0, 1.0, 0.5, 0.5, 0.1, 0.01, 0.01]);
    }

    proptest! {
        #[test]
        fn update_is_independent_of_registration_order(
            g1 in prop::collection::vec(-5.0f64..5.0, 3),
            g2 in prop::collection::vec(-5.0f64..5.0, 2),
        ) {
            let (mut a, mut b) = (vec![0.1, 0.2, 0.3], vec![-1.0, 1.0]);
            let mut st = AdamState::new(&[3, 2]);
            adam_step(&mut [&mut a, &mut b], &[g1.clone(), g2.clone()], &names(2), &mut st, 0.01).unwrap();
            let (mut a2, mut b2) = (vec![0.1, 0.2, 0.3], vec![-1.0, 1.0]);
            let mut st2 = AdamState::new(&[2, 3]);
            adam_step(&mut [&mut b2, &mut a2], &[g2, g1], &names(2), &mut st2, 0.01).unwrap();
            prop_assert_eq!(a, a2);
            prop_assert_eq!(b, b2);
        }
    }
}
