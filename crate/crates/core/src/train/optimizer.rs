use crate::bptt::Gradients;
use crate::masking::MaskSet;

/// Which parameters an optimizer may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    All,
    /// Only `U` and `y0`; `m0` and `M` stay bit-identical.
    OutputOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// `base * (1 - iteration / total)`, reaching zero at `total`.
    LinearDecay { total: usize },
}

/// Nesterov momentum in lookahead form:
///
/// ```text
/// v <- mu v - lr grad L(theta + mu v)
/// theta <- theta + v
/// ```
///
/// Callers evaluate the gradient at [`lookahead`](Self::lookahead) and pass
/// it to [`step`](Self::step).
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub velocity: MaskSet,
    pub iteration: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub schedule: LrSchedule,
    pub trainable: Trainable,
}

impl OptimizerState {
    pub fn new(masks: &MaskSet, base_lr: f64, momentum: f64, schedule: LrSchedule, trainable: Trainable) -> Self {
        OptimizerState {
            velocity: MaskSet::zeros(masks.n_mask(), masks.n_in(), masks.n_out()),
            iteration: 0,
            base_lr,
            momentum,
            schedule,
            trainable,
        }
    }

    /// Learning rate at an arbitrary iteration.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.base_lr,
            LrSchedule::LinearDecay { total } => {
                if iteration >= total {
                    0.0
                } else {
                    self.base_lr * (1.0 - iteration as f64 / total as f64)
                }
            }
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate_at(self.iteration)
    }

    /// Parameters at which the next gradient must be evaluated.
    pub fn lookahead(&self, masks: &MaskSet) -> MaskSet {
        let mut ahead = masks.clone();
        let mu = self.momentum;
        let v = &self.velocity;
        if self.trainable == Trainable::All {
            axpy(&mut ahead.m0, mu, &v.m0);
            axpy(&mut ahead.m, mu, &v.m);
        }
        axpy(&mut ahead.u, mu, &v.u);
        axpy(&mut ahead.y0, mu, &v.y0);
        ahead
    }

    /// Applies one update with `grads` taken at the lookahead point.
    pub fn step(&mut self, masks: &mut MaskSet, grads: &Gradients) {
        let lr = self.learning_rate();
        let mu = self.momentum;
        let update = |theta: &mut [f64], v: &mut [f64], g: &[f64]| {
            for ((t, v), g) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v - lr * g;
                *t += *v;
            }
        };
        if self.trainable == Trainable::All {
            update(&mut masks.m0, &mut self.velocity.m0, &grads.d_m0);
            update(&mut masks.m, &mut self.velocity.m, &grads.d_m);
        }
        update(&mut masks.u, &mut self.velocity.u, &grads.d_u);
        update(&mut masks.y0, &mut self.velocity.y0, &grads.d_y0);
        self.iteration += 1;
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> MaskSet {
        let mut m = MaskSet::zeros(1, 0, 0);
        m.m0[0] = v;
        m
    }

    fn grad(g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(&scalar(0.0));
        grads.d_m0[0] = g;
        grads
    }

    #[test]
    fn zero_momentum_is_gradient_descent() {
        let mut theta = scalar(2.0);
        let mut opt = OptimizerState::new(&theta, 0.1, 0.0, LrSchedule::Constant, Trainable::All);
        let ahead = opt.lookahead(&theta);
        assert_eq!(ahead, theta);
        opt.step(&mut theta, &grad(3.0));
        assert!((theta.m0[0] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn residual_velocity_decays_geometrically() {
        let mut theta = scalar(0.0);
        let mut opt = OptimizerState::new(&theta, 0.1, 0.9, LrSchedule::Constant, Trainable::All);
        opt.step(&mut theta, &grad(1.0));
        let mut v = opt.velocity.m0[0];
        for _ in 0..20 {
            opt.step(&mut theta, &grad(0.0));
            assert!((opt.velocity.m0[0] - 0.9 * v).abs() < 1e-15);
            v = opt.velocity.m0[0];
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = (x - 3)^2 / 2, minimum at 3.
        let mut theta = scalar(-5.0);
        let mut opt = OptimizerState::new(&theta, 0.05, 0.9, LrSchedule::Constant, Trainable::All);
        let mut iterations = 0;
        while (theta.m0[0] - 3.0).abs() >= 1e-8 {
            let ahead = opt.lookahead(&theta);
            opt.step(&mut theta, &grad(ahead.m0[0] - 3.0));
            iterations += 1;
            assert!(iterations <= 500, "no convergence after 500 iterations: {}", theta.m0[0]);
        }
    }

    #[test]
    fn linear_decay_reaches_zero() {
        let theta = scalar(0.0);
        let opt = OptimizerState::new(&theta, 0.01, 0.9, LrSchedule::LinearDecay { total: 1000 }, Trainable::All);
        assert_eq!(opt.learning_rate_at(0), 0.01);
        assert!((opt.learning_rate_at(500) - 0.005).abs() < 1e-18);
        assert_eq!(opt.learning_rate_at(1000), 0.0);
        assert!((0..1000).all(|i| opt.learning_rate_at(i) > 0.0));
    }

    #[test]
    fn output_only_freezes_inputs() {
        let mut masks = MaskSet::zeros(3, 2, 2);
        masks.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1);
        let before = masks.clone();
        let mut opt = OptimizerState::new(&masks, 0.5, 0.9, LrSchedule::Constant, Trainable::OutputOnly);
        let mut g = Gradients::zeros_like(&masks);
        g.d_m.iter_mut().for_each(|v| *v = 1.0);
        g.d_m0.iter_mut().for_each(|v| *v = 1.0);
        g.d_u.iter_mut().for_each(|v| *v = 1.0);
        for _ in 0..3 {
            opt.step(&mut masks, &g);
        }
        assert_eq!(masks.m, before.m);
        assert_eq!(masks.m0, before.m0);
        assert_ne!(masks.u, before.u);
    }
}
