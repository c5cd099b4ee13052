use crate::error::{check_len, Error, Result};

/// First-order update rule on a flat parameter vector.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()>;
}

/// RMSprop without momentum (decay 0.99, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct RmsProp {
    lr: f64,
    decay: f64,
    eps: f64,
    sq: Vec<f64>,
}

impl RmsProp {
    pub fn new(lr: f64, dim: usize) -> Self {
        Self {
            lr,
            decay: 0.99,
            eps: 1e-8,
            sq: vec![0.0; dim],
        }
    }
}

impl Optimizer for RmsProp {
    fn name(&self) -> &'static str {
        "rmsprop"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("gradient", params.len(), grads.len())?;
        check_len("optimizer state", self.sq.len(), grads.len())?;
        for ((p, g), s) in params.iter_mut().zip(grads).zip(self.sq.iter_mut()) {
            *s = self.decay * *s + (1.0 - self.decay) * g * g;
            *p -= self.lr * g / (s.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Adam with the usual defaults (0.9, 0.999, 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, dim: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("gradient", params.len(), grads.len())?;
        check_len("optimizer state", self.m.len(), grads.len())?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

pub const OPTIMIZERS: [&str; 2] = ["rmsprop", "adam"];

pub fn make_optimizer(name: &str, lr: f64, dim: usize) -> Result<Box<dyn Optimizer>> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    match name {
        "rmsprop" => Ok(Box::new(RmsProp::new(lr, dim))),
        "adam" => Ok(Box::new(Adam::new(lr, dim))),
        _ => Err(Error::UnknownStrategy {
            kind: "optimizer",
            name: name.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // f(x) = Σ (x_i − i)², minimized from zero.
    fn descend(name: &str) -> Vec<f64> {
        let mut opt = make_optimizer(name, 0.05, 3).unwrap();
        let mut x = vec![0.0; 3];
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 * (v - i as f64)).collect();
            opt.step(&mut x, &g).unwrap();
        }
        x
    }

    #[test]
    fn both_reach_a_quadratic_minimum() {
        for name in OPTIMIZERS {
            let x = descend(name);
            for (i, v) in x.iter().enumerate() {
                assert!((v - i as f64).abs() < 0.1, "{name}: {x:?}");
            }
        }
    }

    #[test]
    fn first_rmsprop_step_is_scaled_sign() {
        let mut opt = RmsProp::new(1e-3, 2);
        let mut x = vec![0.0, 0.0];
        opt.step(&mut x, &[4.0, -0.5]).unwrap();
        // g / sqrt(0.01 g²) = 10·sign(g)
        assert!((x[0] + 1e-2).abs() < 1e-8);
        assert!((x[1] - 1e-2).abs() < 1e-8);
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(
            make_optimizer("sgd", 1e-3, 1),
            Err(Error::UnknownStrategy { .. })
        ));
    }
}
