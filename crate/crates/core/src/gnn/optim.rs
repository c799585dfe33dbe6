use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Stochastic gradient descent with classical momentum:
/// `v ← momentum·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::LengthMismatch {
                what: "parameters vs gradients",
                left: params.len(),
                right: grads.len(),
            });
        }
        if let Some(i) = (0..params.len()).find(|&i| params[i].len() != grads[i].len()) {
            return Err(Error::Shape(format!(
                "gradient {i} has {} values for a parameter of {}",
                grads[i].len(),
                params[i].len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
        } else if self.velocity.len() != grads.len() || self.velocity.iter().zip(grads).any(|(v, g)| v.len() != g.len()) {
            return Err(Error::Shape("gradients do not match the optimizer state".into()));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                *vv = self.momentum * *vv + *gv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::matrix(1, 1, vec![v]).unwrap()]
    }

    #[test]
    fn plain_sgd() {
        let mut p = one(1.0);
        let mut opt = Sgd::new(0.005, 0.0);
        opt.step(&mut p, &[vec![2.0]]).unwrap();
        assert!((p[0].data()[0] - (1.0 - 0.01)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let mut p = one(1.0);
        let mut opt = Sgd::new(0.1, 0.5);
        opt.step(&mut p, &[vec![1.0]]).unwrap();
        let before = p[0].data()[0];
        opt.step(&mut p, &[vec![0.0]]).unwrap();
        assert_eq!(opt.velocity()[0][0], 0.5);
        assert!((p[0].data()[0] - (before - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn two_steps_unrolled() {
        let (lr, g) = (0.005, 3.0);
        let mut p = one(0.0);
        let mut opt = Sgd::new(lr, 0.1);
        opt.step(&mut p, &[vec![g]]).unwrap();
        opt.step(&mut p, &[vec![g]]).unwrap();
        assert!((p[0].data()[0] + lr * (g + (0.1 * g + g))).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descends() {
        // loss = (p − 3)², gradient 2(p − 3).
        let mut p = one(0.0);
        let mut opt = Sgd::new(0.1, 0.1);
        let loss = |x: f64| (x - 3.0) * (x - 3.0);
        let before = loss(p[0].data()[0]);
        let g = 2.0 * (p[0].data()[0] - 3.0);
        opt.step(&mut p, &[vec![g]]).unwrap();
        assert!(loss(p[0].data()[0]) < before);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = one(0.0);
        assert!(Sgd::new(0.1, 0.0).step(&mut p, &[vec![1.0, 2.0]]).is_err());
        assert!(Sgd::new(0.1, 0.0).step(&mut p, &[]).is_err());
    }
}
