use super::param::ParamStore;

/// Adam without weight decay or scheduling.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// Applies one update from the gradients currently stored in `params`.
    pub fn step(&mut self, params: &mut ParamStore) {
        if self.m.len() != params.len() {
            self.m = params.entries().iter().map(|e| vec![0.0; e.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let entry = params.get_mut(id);
            if !entry.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in entry.value.data_mut().iter_mut().enumerate() {
                let g = entry.grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first step is lr * sign(g).
        let mut p = ParamStore::new();
        let id = p.add("w", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        p.accumulate_grad(id, &[0.5, -3.0]);
        let mut adam = Adam::new(0.1);
        adam.step(&mut p);
        let w = p.value(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn buffers_untouched() {
        let mut p = ParamStore::new();
        let id = p.add_buffer("running_mean", Tensor::full(&[3], 2.0));
        p.accumulate_grad(id, &[1.0, 1.0, 1.0]);
        Adam::new(0.1).step(&mut p);
        assert_eq!(p.value(id).data(), &[2.0, 2.0, 2.0]);
    }
}
