//! Adam with bias correction over a flat list of parameter tensors.

use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment state, one pair per parameter, plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.rows, p.cols))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.rows, p.cols))
                .collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update. `params` and `grads` must line up with the state.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (idx, p) in params.iter_mut().enumerate() {
        let g = &grads[idx];
        assert_eq!(p.shape(), g.shape(), "param/grad shape mismatch at {idx}");
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m.data[i] / bc1;
            let vhat = v.data[i] / bc2;
            p.data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::from_vec(1, 3, vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let g = Tensor::zeros(1, 3);
        let mut state = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[g], &mut state, &AdamConfig::default());
        assert_eq!(p.data, before.data);
    }

    #[test]
    fn first_step_direction_is_signed_unit_times_lr() {
        // At t=1 with zero state: m̂ = g, v̂ = g², update = -lr·g/(|g|+ε)
        let mut p = Tensor::from_vec(1, 2, vec![0.0, 0.0]);
        let g = Tensor::from_vec(1, 2, vec![0.5, -2.0]);
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut state, &cfg);
        for (pv, gv) in p.data.iter().zip(&g.data) {
            let expected = -cfg.lr * gv / (gv.abs() + cfg.eps);
            assert!((pv - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        // minimize f(x) = sum((x - c)^2); optimum at c
        let c = [3.0, -1.5, 0.25];
        let mut x = Tensor::from_vec(1, 3, vec![0.0; 3]);
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[&x]);
        for _ in 0..2000 {
            let g = Tensor::from_vec(
                1,
                3,
                x.data
                    .iter()
                    .zip(&c)
                    .map(|(xv, cv)| 2.0 * (xv - cv))
                    .collect(),
            );
            adam_step(&mut [&mut x], &[g], &mut state, &cfg);
        }
        for (xv, cv) in x.data.iter().zip(&c) {
            assert!((xv - cv).abs() < 1e-6, "got {xv}, want {cv}");
        }
    }
}
