//! Single LSTM cell with an optional grammar-vector input.
//!
//! Gate pre-activations are stacked as one 4H row block in the order
//! (input, forget, output, candidate):
//!   z = W x + U h_prev + V g + b
//!   i,f,o = logistic(z_i, z_f, z_o);  cand = tanh(z_c)
//!   c = f (*) c_prev + i (*) cand;    h = o (*) tanh(c)

use ndarray::{s, Array1, Array2};
use rand::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of one cell; `v` is present only for decoder cells that
/// receive the grammar vector.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub v: Option<Array2<f64>>,
    pub b: Array1<f64>,
}

pub type LstmGrads = Lstm;

impl Lstm {
    /// Glorot-uniform weights per matrix (fan-out = hidden, one gate
    /// block); zero biases except the forget gate's, set to 1 so state
    /// (and with it the encoder signal) survives early training.
    pub fn new(input: usize, hidden: usize, grammar: Option<usize>, rng: &mut impl Rng) -> Lstm {
        let mut init = |fan_in: usize| {
            let s = (6.0 / (fan_in + hidden) as f64).sqrt();
            Array2::from_shape_fn((4 * hidden, fan_in), |_| rng.gen_range(-s..s))
        };
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Lstm {
            w: init(input),
            u: init(hidden),
            v: grammar.map(&mut init),
            b,
        }
    }

    pub fn zeros_like(&self) -> Lstm {
        Lstm {
            w: Array2::zeros(self.w.raw_dim()),
            u: Array2::zeros(self.u.raw_dim()),
            v: self.v.as_ref().map(|v| Array2::zeros(v.raw_dim())),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }
}

/// Forward activations cached for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub i: Array1<f64>,
    pub f: Array1<f64>,
    pub o: Array1<f64>,
    pub cand: Array1<f64>,
    pub c: Array1<f64>,
    pub h: Array1<f64>,
}

impl Lstm {
    /// One forward step; `g` must be `Some` iff `self.v` is.
    pub fn step(
        &self,
        x: &Array1<f64>,
        h_prev: &Array1<f64>,
        c_prev: &Array1<f64>,
        g: Option<&Array1<f64>>,
    ) -> LstmState {
        let hidden = self.hidden();
        let mut z = self.w.dot(x) + self.u.dot(h_prev) + &self.b;
        if let Some(v) = &self.v {
            z += &v.dot(g.expect("grammar vector required by this cell"));
        }
        let i = z.slice(s![0..hidden]).mapv(sigmoid);
        let f = z.slice(s![hidden..2 * hidden]).mapv(sigmoid);
        let o = z.slice(s![2 * hidden..3 * hidden]).mapv(sigmoid);
        let cand = z.slice(s![3 * hidden..4 * hidden]).mapv(f64::tanh);
        let c = &f * c_prev + &i * &cand;
        let h = &o * &c.mapv(f64::tanh);
        LstmState { i, f, o, cand, c, h }
    }

    /// Backward step.  `dh`/`dc` are the gradients flowing into h_t and
    /// c_t; returns (dx, dh_prev, dc_prev) and accumulates parameter
    /// gradients into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn backstep(
        &self,
        x: &Array1<f64>,
        h_prev: &Array1<f64>,
        c_prev: &Array1<f64>,
        g: Option<&Array1<f64>>,
        state: &LstmState,
        dh: &Array1<f64>,
        dc_in: &Array1<f64>,
        grads: &mut LstmGrads,
    ) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        let hidden = self.hidden();
        let tc = state.c.mapv(f64::tanh);
        let d_o = dh * &tc;
        let dc = dc_in + &(dh * &state.o * tc.mapv(|t| 1.0 - t * t));
        let di = &dc * &state.cand;
        let dcand = &dc * &state.i;
        let df = &dc * c_prev;
        let dc_prev = &dc * &state.f;

        let mut dz = Array1::zeros(4 * hidden);
        dz.slice_mut(s![0..hidden])
            .assign(&(&di * &state.i * &state.i.mapv(|v| 1.0 - v)));
        dz.slice_mut(s![hidden..2 * hidden])
            .assign(&(&df * &state.f * &state.f.mapv(|v| 1.0 - v)));
        dz.slice_mut(s![2 * hidden..3 * hidden])
            .assign(&(&d_o * &state.o * &state.o.mapv(|v| 1.0 - v)));
        dz.slice_mut(s![3 * hidden..4 * hidden])
            .assign(&(&dcand * &state.cand.mapv(|v| 1.0 - v * v)));

        // outer products accumulate into the stacked parameter blocks
        let dz_col = dz.view().insert_axis(ndarray::Axis(1));
        grads.w += &dz_col.dot(&x.view().insert_axis(ndarray::Axis(0)));
        grads.u += &dz_col.dot(&h_prev.view().insert_axis(ndarray::Axis(0)));
        if let (Some(gv), Some(dv)) = (g, grads.v.as_mut()) {
            *dv += &dz_col.dot(&gv.view().insert_axis(ndarray::Axis(0)));
        }
        grads.b += &dz;

        let dx = self.w.t().dot(&dz);
        let dh_prev = self.u.t().dot(&dz);
        (dx, dh_prev, dc_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cell = Lstm::new(3, 4, Some(2), &mut rng);
        cell.w.fill(0.0);
        cell.u.fill(0.0);
        cell.v.as_mut().unwrap().fill(0.0);
        cell.b.fill(0.0);
        let s = cell.step(
            &Array1::from(vec![1.0, -2.0, 0.5]),
            &Array1::zeros(4),
            &Array1::zeros(4),
            Some(&Array1::from(vec![1.0, 0.0])),
        );
        assert!(s.h.iter().all(|&v| v == 0.0), "h = sigmoid(0)*tanh(0) = 0");
    }

    #[test]
    fn grammar_free_cell_matches_zeroed_grammar_input() {
        // a cell without V equals a cell with V fed the zero vector
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let with_v = Lstm::new(3, 4, Some(5), &mut rng);
        let without_v = Lstm {
            w: with_v.w.clone(),
            u: with_v.u.clone(),
            v: None,
            b: with_v.b.clone(),
        };
        let x = Array1::from(vec![0.3, -0.7, 0.1]);
        let h = Array1::from(vec![0.1, 0.2, -0.1, 0.05]);
        let c = Array1::from(vec![0.4, -0.3, 0.2, 0.0]);
        let a = with_v.step(&x, &h, &c, Some(&Array1::zeros(5)));
        let b = without_v.step(&x, &h, &c, None);
        assert_eq!(a.h, b.h);
        assert_eq!(a.c, b.c);
    }

    #[test]
    fn cell_gradients_match_finite_differences() {
        // scalar loss = sum(h) + sum(c); check dW, dU, dV, db
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = Lstm::new(3, 4, Some(2), &mut rng);
        let x = Array1::from(vec![0.3, -0.7, 0.1]);
        let h_prev = Array1::from(vec![0.1, 0.2, -0.1, 0.05]);
        let c_prev = Array1::from(vec![0.4, -0.3, 0.2, 0.0]);
        let g = Array1::from(vec![1.0, 0.0]);

        let loss = |cell: &Lstm| {
            let s = cell.step(&x, &h_prev, &c_prev, Some(&g));
            s.h.sum() + s.c.sum()
        };
        let state = cell.step(&x, &h_prev, &c_prev, Some(&g));
        let ones = Array1::ones(4);
        let mut grads = cell.zeros_like();
        cell.backstep(&x, &h_prev, &c_prev, Some(&g), &state, &ones, &ones, &mut grads);

        let eps = 1e-6;
        let mut probe = cell.clone();
        let mut max_rel: f64 = 0.0;
        let mut check = |analytic: f64, get: &mut dyn FnMut(&mut Lstm) -> &mut f64| {
            let mut eval = |delta: f64, probe: &mut Lstm| {
                *get(probe) += delta;
                let l = loss(probe);
                *get(probe) -= delta;
                l
            };
            let numeric = (eval(eps, &mut probe) - eval(-eps, &mut probe)) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        };
        for r in 0..16 {
            for cidx in 0..3 {
                let a = grads.w[[r, cidx]];
                check(a, &mut |p| &mut p.w[[r, cidx]]);
            }
            for cidx in 0..4 {
                let a = grads.u[[r, cidx]];
                check(a, &mut |p| &mut p.u[[r, cidx]]);
            }
            for cidx in 0..2 {
                let a = grads.v.as_ref().unwrap()[[r, cidx]];
                check(a, &mut |p| &mut p.v.as_mut().unwrap()[[r, cidx]]);
            }
            let a = grads.b[r];
            check(a, &mut |p| &mut p.b[r]);
        }
        assert!(max_rel < 1e-6, "max relative error {max_rel}");
    }
}
