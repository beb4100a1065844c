//! Adam optimizer with bias correction.

use super::layers::NetError;
use super::tensor::Tensor2;

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor2]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor2::zeros(p.rows, p.cols)).collect(),
            v: params.iter().map(|p| Tensor2::zeros(p.rows, p.cols)).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update over a flat parameter list.
pub fn adam_step(
    params: &mut [Tensor2],
    grads: &[Tensor2],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<(), NetError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NetError::Shape {
            expected: format!("{} tensors", state.m.len()),
            got: format!("{} params / {} grads", params.len(), grads.len()),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(NetError::Shape {
                expected: format!("{:?}", p.shape()),
                got: format!("{:?}", g.shape()),
            });
        }
    }
    let (b1, b2) = betas;
    state.t += 1;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for k in 0..p.data.len() {
            let gk = g.data[k];
            m.data[k] = b1 * m.data[k] + (1.0 - b1) * gk;
            v.data[k] = b2 * v.data[k] + (1.0 - b2) * gk * gk;
            let m_hat = m.data[k] / bc1;
            let v_hat = v.data[k] / bc2;
            p.data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BETAS: (f64, f64) = (0.9, 0.999);

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor2::from_vec(1, 3, vec![1.0, -2.0, 3.0])];
        let grads = vec![Tensor2::zeros(1, 3)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.1, BETAS, 1e-8).unwrap();
        assert_eq!(params[0].data, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut params = vec![Tensor2::from_vec(1, 2, vec![0.0, 0.0])];
        let grads = vec![Tensor2::from_vec(1, 2, vec![0.5, -2.0])];
        let mut state = AdamState::new(&params);
        let lr = 0.01;
        adam_step(&mut params, &grads, &mut state, lr, BETAS, 1e-8).unwrap();
        // bias-corrected m_hat = g, v_hat = g^2: update = lr * g / (|g| + eps)
        assert!((params[0].data[0] - (-lr)).abs() < 1e-6);
        assert!((params[0].data[1] - lr).abs() < 1e-6);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut params = vec![Tensor2::from_vec(2, 2, vec![0.3, -0.7, 0.2, 0.9])];
            let mut state = AdamState::new(&params);
            for i in 0..25 {
                let grads = vec![params[0].map(|v| v * 0.1 + i as f64 * 0.01)];
                adam_step(&mut params, &grads, &mut state, 0.05, BETAS, 1e-8).unwrap();
            }
            params[0].data.clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor2::zeros(1, 2)];
        let grads = vec![Tensor2::zeros(2, 1)];
        let mut state = AdamState::new(&params);
        assert!(adam_step(&mut params, &grads, &mut state, 0.1, BETAS, 1e-8).is_err());
    }
}
