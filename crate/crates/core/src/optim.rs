//! Adam with bias correction and no weight decay.

use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes
            .into_iter()
            .map(|(r, c)| (Tensor::zeros(r, c), Tensor::zeros(r, c)))
            .unzip();
        Adam { lr, t: 0, m, v }
    }

    /// Updates `params[i]` wherever `trainable[i]` holds and a gradient
    /// exists; parameters without a gradient keep their moments untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>], trainable: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = grads[i].as_ref().filter(|_| trainable[i]) else {
                continue;
            };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::row_vector(vec![1.0, -1.0, 0.5]);
        let mut opt = Adam::new(0.01, [(1, 3)]);
        let g = Tensor::row_vector(vec![3.0, -0.2, 0.0]);
        opt.step(&mut [&mut p], &[Some(g)], &[true]);
        assert!((p.data()[0] - 0.99).abs() < 1e-9);
        assert!((p.data()[1] + 0.99).abs() < 1e-9);
        assert_eq!(p.data()[2], 0.5);
    }

    #[test]
    fn frozen_and_gradless_params_untouched() {
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::scalar(2.0);
        let mut opt = Adam::new(0.1, [(1, 1), (1, 1)]);
        opt.step(
            &mut [&mut a, &mut b],
            &[Some(Tensor::scalar(1.0)), None],
            &[false, true],
        );
        assert_eq!((a.item(), b.item()), (1.0, 2.0));
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Tensor::row_vector(vec![3.0, -2.0]);
        let mut opt = Adam::new(0.05, [(1, 2)]);
        for _ in 0..2000 {
            let g = p.scaled(2.0);
            opt.step(&mut [&mut p], &[Some(g)], &[true]);
        }
        assert!(p.data().iter().all(|v| v.abs() < 1e-2));
    }
}
