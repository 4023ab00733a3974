use super::graph::ParamStore;
use super::tensor::{Real, Tensor};

/// Moment estimates for [`adam_step`], one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ParamStore<F>) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Weight decay is classical L2: `decay * theta`
/// is added to the gradient before the moment updates. Gradients are zeroed
/// afterwards.
pub fn adam_step<F: Real>(params: &mut ParamStore<F>, state: &mut AdamState<F>, lr: f64, weight_decay: f64) {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (F::lit(state.beta1), F::lit(state.beta2));
    let one = F::one();
    let corr1 = one - b1.powi(t);
    let corr2 = one - b2.powi(t);
    let (lr, wd, eps) = (F::lit(lr), F::lit(weight_decay), F::lit(state.eps));

    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let theta = p.value.data_mut();
        let grad = p.grad.data();
        for (((th, &g), mi), vi) in theta.iter_mut().zip(grad).zip(m.data_mut()).zip(v.data_mut()) {
            let g = g + wd * *th;
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            let m_hat = *mi / corr1;
            let v_hat = *vi / corr2;
            *th = *th - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.zero_grad();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64], grads: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(vec![values.len()], values.to_vec()));
        s.get_mut(id).grad = Tensor::new(vec![grads.len()], grads.to_vec());
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(&[1.0, -2.0], &[0.3, -7.0]);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 1e-3, 0.0);
        let w = s.iter().next().unwrap();
        // m_hat / sqrt(v_hat) = g / (|g| + eps) at t = 1
        assert!((w.value.data()[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w.value.data()[1] - (-2.0 + 1e-3)).abs() < 1e-9);
        assert!(w.grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut s = store(&[0.5, 1.5], &[0.0, 0.0]);
        let mut st = AdamState::new(&s);
        for _ in 0..5 {
            adam_step(&mut s, &mut st, 1e-2, 0.0);
        }
        assert_eq!(s.iter().next().unwrap().value.data(), &[0.5, 1.5]);
    }

    #[test]
    fn zero_lr_still_advances_step() {
        let mut s = store(&[0.5], &[3.0]);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 0.0, 1e-2);
        adam_step(&mut s, &mut st, 0.0, 1e-2);
        assert_eq!(s.iter().next().unwrap().value.data(), &[0.5]);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut s = store(&[2.0], &[0.0]);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 1e-2, 0.1);
        assert!(s.iter().next().unwrap().value.data()[0] < 2.0);
    }

    #[test]
    fn bit_reproducible() {
        let run = || {
            let mut s = store(&[0.1, 0.2, 0.3], &[0.0; 3]);
            let mut st = AdamState::new(&s);
            for k in 0..10 {
                let id = s.ids().next().unwrap();
                let g = [0.1 * k as f64, -0.3, 1.0 / (k + 1) as f64];
                s.get_mut(id).grad = Tensor::new(vec![3], g.to_vec());
                adam_step(&mut s, &mut st, 1e-3, 1e-5);
            }
            let bits: Vec<u64> = s.iter().next().unwrap().value.data().iter().map(|x| x.to_bits()).collect();
            bits
        };
        assert_eq!(run(), run());
    }
}
