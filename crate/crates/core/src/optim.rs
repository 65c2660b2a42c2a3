//! Adam optimiser state for dense parameter blocks.

use ndarray::{Array, Dimension, NdFloat, Zip};
use num_traits::FromPrimitive;

pub struct Adam<A, D: Dimension> {
    m: Array<A, D>,
    v: Array<A, D>,
}

impl<A: NdFloat + FromPrimitive, D: Dimension> Adam<A, D> {
    pub fn new(like: &Array<A, D>) -> Self {
        Self { m: Array::zeros(like.raw_dim()), v: Array::zeros(like.raw_dim()) }
    }

    /// One update of `p` against gradient `g`; `t` counts steps from 1.
    pub fn step(&mut self, p: &mut Array<A, D>, g: &Array<A, D>, lr: A, t: i32) {
        let b1 = A::from_f64(0.9).unwrap();
        let b2 = A::from_f64(0.999).unwrap();
        let eps = A::from_f64(1e-8).unwrap();
        let one = A::one();
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        Zip::from(p).and(&mut self.m).and(&mut self.v).and(g).for_each(|p, m, v, &g| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        });
    }
}

/// Adam for a single scalar parameter.
#[derive(Default)]
pub struct ScalarAdam {
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn step(&mut self, p: &mut f64, g: f64, lr: f64, t: i32) {
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let mh = self.m / (1.0 - 0.9f64.powi(t));
        let vh = self.v / (1.0 - 0.999f64.powi(t));
        *p -= lr * mh / (vh.sqrt() + 1e-8);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn minimises_a_quadratic() {
        let mut p = array![3.0f64, -2.0];
        let mut opt = Adam::new(&p);
        for t in 1..=2000 {
            let g = &p * 2.0;
            opt.step(&mut p, &g, 0.05, t);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2), "{p}");
        let mut s = 1.0;
        let mut so = ScalarAdam::default();
        for t in 1..=2000 {
            let g = 2.0 * s;
            so.step(&mut s, g, 0.05, t);
        }
        assert!(s.abs() < 1e-2);
    }
}
