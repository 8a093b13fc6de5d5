use super::{Tower, TowerGrads};

pub trait Optimizer {
    fn step(&mut self, tower: &mut Tower, grads: &TowerGrads);
}

#[derive(Clone, Copy, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, tower: &mut Tower, grads: &TowerGrads) {
        tower.apply_scaled(grads, self.lr);
    }
}

/// Adam with bias correction. Moment buffers are lazily shaped from the
/// first step so one instance serves exactly one tower.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Option<Vec<f64>>,
    v: Option<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: None, v: None }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, tower: &mut Tower, grads: &TowerGrads) {
        let g = grads.flatten();
        let n = g.len();
        let m = self.m.get_or_insert_with(|| vec![0.0; n]);
        let v = self.v.get_or_insert_with(|| vec![0.0; n]);
        assert_eq!(m.len(), n, "optimizer reused across towers of different shape");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        let mut step = vec![0.0; n];
        for i in 0..n {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mh = m[i] / b1t;
            let vh = v[i] / b2t;
            step[i] = mh / (vh.sqrt() + self.eps);
        }
        let delta = TowerGrads::from_flat(tower, &step).expect("shape checked above");
        tower.apply_scaled(&delta, self.lr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Input, Matrix};

    fn scalar_tower(w: f64) -> Tower {
        // single 1x1 linear layer: y = w * x
        let mut t = Tower::new(&[1, 1], 0).unwrap();
        t.layers[0].weights = Matrix::from_rows(vec![vec![w]]).unwrap();
        t
    }

    fn quadratic_grad(t: &Tower) -> TowerGrads {
        // L(w) = 0.5 * w^2, dL/dw = w
        let w = t.layers[0].weights.get(0, 0);
        TowerGrads::from_flat(t, &[w]).unwrap()
    }

    #[test]
    fn sgd_matches_hand_rolled_update() {
        let mut t = scalar_tower(2.0);
        let mut opt = Sgd { lr: 0.1 };
        let mut w = 2.0_f64;
        for _ in 0..5 {
            let g = quadratic_grad(&t);
            opt.step(&mut t, &g);
            w -= 0.1 * w;
            assert!((t.layers[0].weights.get(0, 0) - w).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_has_unit_direction() {
        // with bias correction, step 1 moves by lr * g/|g| elementwise (up to eps)
        let mut t = scalar_tower(3.0);
        let mut opt = Adam::new(0.01);
        let g = quadratic_grad(&t);
        opt.step(&mut t, &g);
        let w = t.layers[0].weights.get(0, 0);
        assert!((w - (3.0 - 0.01)).abs() < 1e-6, "{w}");
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut t = scalar_tower(1.0);
        let mut opt = Adam::new(0.05);
        for _ in 0..400 {
            let g = quadratic_grad(&t);
            opt.step(&mut t, &g);
        }
        assert!(t.layers[0].weights.get(0, 0).abs() < 1e-3);
    }

    #[test]
    fn adam_matches_reference_sequence() {
        // reference values computed by a separate scalar implementation of the
        // standard update (beta1 0.9, beta2 0.999, eps 1e-8, lr 0.1) on the
        // gradient sequence g = [1.0, -0.5, 0.25] from w0 = 0.
        let mut t = scalar_tower(0.0);
        let mut opt = Adam::new(0.1);
        let gs = [1.0, -0.5, 0.25];
        let mut m = 0.0_f64;
        let mut v = 0.0_f64;
        let mut w = 0.0_f64;
        for (i, &g) in gs.iter().enumerate() {
            let tg = TowerGrads::from_flat(&t, &[g]).unwrap();
            opt.step(&mut t, &tg);
            let tt = (i + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(tt));
            let vh = v / (1.0 - 0.999f64.powi(tt));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((t.layers[0].weights.get(0, 0) - w).abs() < 1e-12);
        }
        // forward still works after updates
        let (y, _) = t.forward(Input::Dense(&[2.0])).unwrap();
        assert!((y[0] - 2.0 * w).abs() < 1e-12);
    }
}
