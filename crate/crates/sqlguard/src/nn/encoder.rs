//! Two-layer bidirectional LSTM encoder.
//!
//! Layer 1 reads the feature sequence forwards and backwards; layer 2
//! reads the concatenated layer-1 hidden states, again in both
//! directions.  Only the final top-layer states feed the decoder bridge,
//! so the backward pass receives gradients for those two states alone.

use ndarray::{concatenate, Array1, Axis};
use rand::Rng;

use super::cell::{Lstm, LstmGrads, LstmState};

#[derive(Debug, Clone)]
pub struct Encoder {
    pub l1f: Lstm,
    pub l1b: Lstm,
    pub l2f: Lstm,
    pub l2b: Lstm,
}

#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub l1f: LstmGrads,
    pub l1b: LstmGrads,
    pub l2f: LstmGrads,
    pub l2b: LstmGrads,
}

/// Forward activations; `x2` is the (possibly dropout-scaled) layer-2
/// input per original position.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub h1f: Vec<LstmState>,
    pub h1b: Vec<LstmState>,
    pub x2: Vec<Array1<f64>>,
    pub h2f: Vec<LstmState>,
    pub h2b: Vec<LstmState>,
}

impl EncoderTrace {
    /// Final top-layer states: forward at the last position, backward at
    /// the first.
    pub fn final_states(&self) -> (&Array1<f64>, &Array1<f64>) {
        let t = self.h2f.len() - 1;
        (&self.h2f[t].h, &self.h2b[t].h)
    }
}

impl Encoder {
    pub fn new(features: usize, hidden: usize, rng: &mut impl Rng) -> Encoder {
        Encoder {
            l1f: Lstm::new(features, hidden, None, rng),
            l1b: Lstm::new(features, hidden, None, rng),
            l2f: Lstm::new(2 * hidden, hidden, None, rng),
            l2b: Lstm::new(2 * hidden, hidden, None, rng),
        }
    }

    pub fn zeros_like(&self) -> EncoderGrads {
        EncoderGrads {
            l1f: self.l1f.zeros_like(),
            l1b: self.l1b.zeros_like(),
            l2f: self.l2f.zeros_like(),
            l2b: self.l2b.zeros_like(),
        }
    }

    fn run_direction(cell: &Lstm, xs: &[&Array1<f64>], hidden: usize) -> Vec<LstmState> {
        let mut h = Array1::zeros(hidden);
        let mut c = Array1::zeros(hidden);
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let s = cell.step(x, &h, &c, None);
            h = s.h.clone();
            c = s.c.clone();
            out.push(s);
        }
        out
    }

    /// `drop2`, when given, multiplies the layer-2 input element-wise
    /// (inverted-dropout masks, one per position).
    pub fn forward(&self, xs: &[Array1<f64>], drop2: Option<&[Array1<f64>]>) -> EncoderTrace {
        let hidden = self.l1f.hidden();
        let fwd_refs: Vec<&Array1<f64>> = xs.iter().collect();
        let bwd_refs: Vec<&Array1<f64>> = xs.iter().rev().collect();
        let h1f = Self::run_direction(&self.l1f, &fwd_refs, hidden);
        let h1b_rev = Self::run_direction(&self.l1b, &bwd_refs, hidden);

        // layer-2 input at original position t: [h1f_t ; h1b_t]
        let mut x2: Vec<Array1<f64>> = (0..xs.len())
            .map(|t| {
                concatenate![
                    Axis(0),
                    h1f[t].h.view(),
                    h1b_rev[xs.len() - 1 - t].h.view()
                ]
            })
            .collect();
        if let Some(masks) = drop2 {
            for (x, m) in x2.iter_mut().zip(masks) {
                *x *= m;
            }
        }
        let x2f: Vec<&Array1<f64>> = x2.iter().collect();
        let x2b: Vec<&Array1<f64>> = x2.iter().rev().collect();
        let h2f = Self::run_direction(&self.l2f, &x2f, hidden);
        let h2b = Self::run_direction(&self.l2b, &x2b, hidden);

        EncoderTrace {
            h1f,
            h1b: h1b_rev,
            x2,
            h2f,
            h2b,
        }
    }

    fn backward_direction(
        cell: &Lstm,
        xs: &[&Array1<f64>],
        states: &[LstmState],
        dh_per_step: &mut [Array1<f64>],
        grads: &mut LstmGrads,
    ) -> Vec<Array1<f64>> {
        let hidden = cell.hidden();
        let zero = Array1::zeros(hidden);
        let mut dxs = vec![Array1::zeros(xs[0].len()); xs.len()];
        let mut dc = Array1::zeros(hidden);
        for t in (0..xs.len()).rev() {
            let (h_prev, c_prev) = if t == 0 {
                (&zero, &zero)
            } else {
                (&states[t - 1].h, &states[t - 1].c)
            };
            let (dx, dh_prev, dc_prev) = cell.backstep(
                xs[t],
                h_prev,
                c_prev,
                None,
                &states[t],
                &dh_per_step[t],
                &dc,
                grads,
            );
            dxs[t] = dx;
            if t > 0 {
                dh_per_step[t - 1] += &dh_prev;
            }
            dc = dc_prev;
        }
        dxs
    }

    /// Backpropagate from the two final top-layer hidden states.
    /// Returns per-position gradients of the layer-1 inputs.
    pub fn backward(
        &self,
        xs: &[Array1<f64>],
        trace: &EncoderTrace,
        dh2f_last: &Array1<f64>,
        dh2b_last: &Array1<f64>,
        drop2: Option<&[Array1<f64>]>,
        grads: &mut EncoderGrads,
    ) -> Vec<Array1<f64>> {
        let n = xs.len();
        let hidden = self.l1f.hidden();
        let x2f: Vec<&Array1<f64>> = trace.x2.iter().collect();
        let x2b: Vec<&Array1<f64>> = trace.x2.iter().rev().collect();

        let mut dh2f: Vec<Array1<f64>> = vec![Array1::zeros(hidden); n];
        dh2f[n - 1] = dh2f_last.clone();
        let dx2f = Self::backward_direction(&self.l2f, &x2f, &trace.h2f, &mut dh2f, &mut grads.l2f);
        let mut dh2b: Vec<Array1<f64>> = vec![Array1::zeros(hidden); n];
        dh2b[n - 1] = dh2b_last.clone();
        let dx2b = Self::backward_direction(&self.l2b, &x2b, &trace.h2b, &mut dh2b, &mut grads.l2b);

        // combine both directions' layer-2 input gradients at each
        // original position, undoing the dropout scaling
        let mut dx2: Vec<Array1<f64>> = (0..n)
            .map(|t| &dx2f[t] + &dx2b[n - 1 - t])
            .collect();
        if let Some(masks) = drop2 {
            for (d, m) in dx2.iter_mut().zip(masks) {
                *d *= m;
            }
        }

        let fwd_refs: Vec<&Array1<f64>> = xs.iter().collect();
        let bwd_refs: Vec<&Array1<f64>> = xs.iter().rev().collect();
        let mut dh1f: Vec<Array1<f64>> = (0..n)
            .map(|t| dx2[t].slice(ndarray::s![0..hidden]).to_owned())
            .collect();
        let mut dh1b: Vec<Array1<f64>> = (0..n)
            .map(|t| {
                dx2[n - 1 - t]
                    .slice(ndarray::s![hidden..2 * hidden])
                    .to_owned()
            })
            .collect();
        let dx1f =
            Self::backward_direction(&self.l1f, &fwd_refs, &trace.h1f, &mut dh1f, &mut grads.l1f);
        let dx1b =
            Self::backward_direction(&self.l1b, &bwd_refs, &trace.h1b, &mut dh1b, &mut grads.l1b);

        (0..n).map(|t| &dx1f[t] + &dx1b[n - 1 - t]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Array1<f64>> {
        (0..n)
            .map(|_| Array1::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn length_one_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::new(5, 4, &mut rng);
        let xs = random_inputs(&mut rng, 1, 5);
        let trace = enc.forward(&xs, None);
        let (hf, hb) = trace.final_states();
        assert_eq!(hf.len(), 4);
        assert_eq!(hb.len(), 4);
        // with one position, layer-2 input is [h1f_0 ; h1b_0]
        assert_eq!(trace.x2[0].len(), 8);
    }

    #[test]
    fn reversal_swaps_layer_one_directions_when_cells_are_shared() {
        // tie the layer-1 cells; reversing the input must swap the two
        // layer-1 direction traces exactly
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = Encoder::new(5, 4, &mut rng);
        enc.l1b = enc.l1f.clone();
        let xs = random_inputs(&mut rng, 6, 5);
        let rev: Vec<Array1<f64>> = xs.iter().rev().cloned().collect();
        let a = enc.forward(&xs, None);
        let b = enc.forward(&rev, None);
        for t in 0..xs.len() {
            assert_eq!(a.h1f[t].h, b.h1b[t].h);
            assert_eq!(a.h1b[t].h, b.h1f[t].h);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // loss = sum of the two bridge-facing states
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = Encoder::new(3, 3, &mut rng);
        let xs = random_inputs(&mut rng, 4, 3);
        let loss = |enc: &Encoder, xs: &[Array1<f64>]| {
            let t = enc.forward(xs, None);
            let (hf, hb) = t.final_states();
            hf.sum() + hb.sum()
        };
        let trace = enc.forward(&xs, None);
        let mut grads = enc.zeros_like();
        let ones = Array1::ones(3);
        let dxs = enc.backward(&xs, &trace, &ones, &ones, None, &mut grads);

        let eps = 1e-5;
        let mut max_rel: f64 = 0.0;
        // input gradients
        let mut xp = xs.clone();
        for t in 0..xs.len() {
            for d in 0..3 {
                xp[t][d] += eps;
                let up = loss(&enc, &xp);
                xp[t][d] -= 2.0 * eps;
                let dn = loss(&enc, &xp);
                xp[t][d] += eps;
                let numeric = (up - dn) / (2.0 * eps);
                let a = dxs[t][d];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
                max_rel = max_rel.max(rel);
            }
        }
        // a sample of parameter gradients from every cell
        let mut ep = enc.clone();
        let cells: [(&LstmGrads, fn(&mut Encoder) -> &mut Lstm); 4] = [
            (&grads.l1f, |e| &mut e.l1f),
            (&grads.l1b, |e| &mut e.l1b),
            (&grads.l2f, |e| &mut e.l2f),
            (&grads.l2b, |e| &mut e.l2b),
        ];
        for (g, pick) in cells {
            for r in 0..12 {
                let analytic = g.u[[r, 0]];
                pick(&mut ep).u[[r, 0]] += eps;
                let up = loss(&ep, &xs);
                pick(&mut ep).u[[r, 0]] -= 2.0 * eps;
                let dn = loss(&ep, &xs);
                pick(&mut ep).u[[r, 0]] += eps;
                let numeric = (up - dn) / (2.0 * eps);
                let rel =
                    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 1e-6, "max relative error {max_rel}");
    }
}
