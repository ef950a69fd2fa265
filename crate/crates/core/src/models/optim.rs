use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::ParamSet;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) {
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.t));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        let one = T::one();
        for (((p, g), m), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Multiplies the learning rate by `factor` once validation loss has failed
/// to improve for `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Returns the (possibly reduced) learning rate.
    pub fn step(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut ps = ParamSet::<f64>::new();
        ps.push("x", Tensor::from_rows(&[vec![3.0, -2.0]]).unwrap());
        let mut opt = Adam::new(&ps, 0.1, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            let grad = ps.get(0).map(|x| 2.0 * x);
            opt.step(&mut ps, &[grad]);
        }
        assert!(ps.get(0).data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn first_adam_step_is_lr_sized() {
        let mut ps = ParamSet::<f64>::new();
        ps.push("x", Tensor::scalar(1.0));
        let mut opt = Adam::new(&ps, 0.01, 0.9, 0.999, 1e-8);
        opt.step(&mut ps, &[Tensor::scalar(123.0)]);
        assert!((ps.get(0).item() - 0.99).abs() < 1e-9);
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = Plateau::new(0.5, 2);
        let mut lr = 1.0;
        lr = s.step(1.0, lr);
        lr = s.step(1.0, lr);
        assert_eq!(lr, 1.0);
        lr = s.step(1.0, lr);
        assert_eq!(lr, 0.5);
        lr = s.step(0.5, lr);
        assert_eq!(lr, 0.5);
    }
}
