use crate::diffcore::Tensor3;
use crate::model::ModelState;

/// First-order adaptive-moment optimizer with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    m: Vec<Tensor3>,
    v: Vec<Tensor3>,
}

impl Adam {
    pub fn new(state: &ModelState, lr: f64) -> Self {
        let zeros: Vec<Tensor3> = state.params.iter().map(|(_, p)| Tensor3::zeros(p.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// Applies one update. `grads` follows the parameter order of `state`;
    /// `None` entries (frozen parameters) are left untouched.
    pub fn step(&mut self, state: &mut ModelState, grads: &[Option<Tensor3>]) {
        assert_eq!(grads.len(), state.params.len(), "one gradient slot per parameter");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let param = state.params[k].1.data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut state = ModelState::init(ModelConfig::new(2, 1), 0).unwrap();
        let before = state.clone();
        let mut adam = Adam::new(&state, 0.01);
        let mut grads: Vec<Option<Tensor3>> = state
            .params
            .iter()
            .map(|(_, p)| Some(Tensor3::from_fn(p.shape(), |t, i, j| if (t + i + j) % 2 == 0 { 3.0 } else { -0.5 })))
            .collect();
        grads[0] = None;
        adam.step(&mut state, &grads);
        assert_eq!(state.params[0], before.params[0]);
        for k in 1..state.params.len() {
            let g = grads[k].as_ref().unwrap();
            for i in 0..g.len() {
                let moved = state.params[k].1.data()[i] - before.params[k].1.data()[i];
                // Bias correction makes the first step lr·g/(|g| + eps).
                let want = -0.01 * g.data()[i].signum();
                assert!((moved - want).abs() < 1e-9, "{moved} vs {want}");
            }
        }
        assert_eq!(adam.steps_taken(), 1);
    }
}
