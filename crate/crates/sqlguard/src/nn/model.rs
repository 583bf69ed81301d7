//! Encoder-decoder model: embeddings, bidirectional encoder, tanh
//! bridges, two grammar-conditioned decoder layers and a masked-softmax
//! output projection.
//!
//! The decoder's loss at each step is a softmax restricted to the tokens
//! admitted by the dependency masks; disallowed tokens receive zero
//! probability and zero gradient.

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::Rng;

use crate::tagger::{EncoderInput, SlotKind};
use crate::vocab::{NUM_STRING_SLOTS, NUM_VALUE_SLOTS};

use super::cell::{Lstm, LstmState};
use super::encoder::{Encoder, EncoderTrace};

/// Extra encoder feature bits: 4 label bits + slot one-hot.
pub const FEATURE_BITS: usize = 4 + NUM_VALUE_SLOTS + NUM_STRING_SLOTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input_vocab: usize,
    pub output_vocab: usize,
    /// Grammar-vector length (one bit per grammar expression).
    pub grammar: usize,
    pub embed_in: usize,
    pub embed_out: usize,
    pub hidden: usize,
}

impl ModelDims {
    pub fn feature_dim(&self) -> usize {
        self.embed_in + FEATURE_BITS
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub emb_in: Array2<f64>,
    pub emb_out: Array2<f64>,
    /// Learned embedding of the decoder start position.
    pub start: Array1<f64>,
    pub encoder: Encoder,
    pub dec1: Lstm,
    pub dec2: Lstm,
    /// Bridge projections, order: dec1 h0, dec1 c0, dec2 h0, dec2 c0.
    pub bridge_w: [Array2<f64>; 4],
    pub bridge_b: [Array1<f64>; 4],
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

fn lstm_arrays<'a>(l: &'a Lstm, out: &mut Vec<&'a [f64]>) {
    out.push(l.w.as_slice().unwrap());
    out.push(l.u.as_slice().unwrap());
    if let Some(v) = &l.v {
        out.push(v.as_slice().unwrap());
    }
    out.push(l.b.as_slice().unwrap());
}

fn lstm_arrays_mut<'a>(l: &'a mut Lstm, out: &mut Vec<&'a mut [f64]>) {
    out.push(l.w.as_slice_mut().unwrap());
    out.push(l.u.as_slice_mut().unwrap());
    if let Some(v) = &mut l.v {
        out.push(v.as_slice_mut().unwrap());
    }
    out.push(l.b.as_slice_mut().unwrap());
}

impl ModelParams {
    pub fn new(dims: &ModelDims, rng: &mut impl Rng) -> ModelParams {
        // Glorot-uniform projections; flat +-0.08 embeddings.  A
        // smaller init starves the encoder->bridge pathway, which the
        // decoder then learns to ignore entirely.
        fn glorot(r: usize, c: usize, rng: &mut impl Rng) -> Array2<f64> {
            let s = (6.0 / (r + c) as f64).sqrt();
            Array2::from_shape_fn((r, c), |_| rng.gen_range(-s..s))
        }
        fn emb(r: usize, c: usize, rng: &mut impl Rng) -> Array2<f64> {
            Array2::from_shape_fn((r, c), |_| rng.gen_range(-0.08..0.08))
        }
        let emb_in = emb(dims.input_vocab, dims.embed_in, rng);
        let emb_out = emb(dims.output_vocab, dims.embed_out, rng);
        let start = Array1::from_shape_fn(dims.embed_out, |_| rng.gen_range(-0.08..0.08));
        let encoder = Encoder::new(dims.feature_dim(), dims.hidden, rng);
        let dec1 = Lstm::new(dims.embed_out, dims.hidden, Some(dims.grammar), rng);
        let dec2 = Lstm::new(dims.hidden, dims.hidden, Some(dims.grammar), rng);
        let bridge_w = std::array::from_fn(|_| glorot(dims.hidden, 2 * dims.hidden, rng));
        let bridge_b = std::array::from_fn(|_| Array1::zeros(dims.hidden));
        let w_out = glorot(dims.output_vocab, dims.hidden, rng);
        let b_out = Array1::zeros(dims.output_vocab);
        ModelParams {
            emb_in,
            emb_out,
            start,
            encoder,
            dec1,
            dec2,
            bridge_w,
            bridge_b,
            w_out,
            b_out,
        }
    }

    pub fn zeros_like(&self) -> ModelParams {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        ModelParams {
            emb_in: z2(&self.emb_in),
            emb_out: z2(&self.emb_out),
            start: z1(&self.start),
            encoder: {
                let g = self.encoder.zeros_like();
                Encoder {
                    l1f: g.l1f,
                    l1b: g.l1b,
                    l2f: g.l2f,
                    l2b: g.l2b,
                }
            },
            dec1: self.dec1.zeros_like(),
            dec2: self.dec2.zeros_like(),
            bridge_w: std::array::from_fn(|k| z2(&self.bridge_w[k])),
            bridge_b: std::array::from_fn(|k| z1(&self.bridge_b[k])),
            w_out: z2(&self.w_out),
            b_out: z1(&self.b_out),
        }
    }

    /// All parameter arrays in the pinned serialization order.
    pub fn arrays(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        out.push(self.emb_in.as_slice().unwrap());
        out.push(self.emb_out.as_slice().unwrap());
        out.push(self.start.as_slice().unwrap());
        lstm_arrays(&self.encoder.l1f, &mut out);
        lstm_arrays(&self.encoder.l1b, &mut out);
        lstm_arrays(&self.encoder.l2f, &mut out);
        lstm_arrays(&self.encoder.l2b, &mut out);
        lstm_arrays(&self.dec1, &mut out);
        lstm_arrays(&self.dec2, &mut out);
        for k in 0..4 {
            out.push(self.bridge_w[k].as_slice().unwrap());
            out.push(self.bridge_b[k].as_slice().unwrap());
        }
        out.push(self.w_out.as_slice().unwrap());
        out.push(self.b_out.as_slice().unwrap());
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.push(self.emb_in.as_slice_mut().unwrap());
        out.push(self.emb_out.as_slice_mut().unwrap());
        out.push(self.start.as_slice_mut().unwrap());
        lstm_arrays_mut(&mut self.encoder.l1f, &mut out);
        lstm_arrays_mut(&mut self.encoder.l1b, &mut out);
        lstm_arrays_mut(&mut self.encoder.l2f, &mut out);
        lstm_arrays_mut(&mut self.encoder.l2b, &mut out);
        lstm_arrays_mut(&mut self.dec1, &mut out);
        lstm_arrays_mut(&mut self.dec2, &mut out);
        for (w, b) in self.bridge_w.iter_mut().zip(self.bridge_b.iter_mut()) {
            out.push(w.as_slice_mut().unwrap());
            out.push(b.as_slice_mut().unwrap());
        }
        out.push(self.w_out.as_slice_mut().unwrap());
        out.push(self.b_out.as_slice_mut().unwrap());
        out
    }

    pub fn num_params(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    /// self += scale * other, array by array.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.arrays_mut().into_iter().zip(other.arrays()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

/// One teacher-forced training sample: encoder features, gold output ids
/// and the per-step grammar vectors and vocabulary masks precomputed
/// from the gold prefix.
#[derive(Debug)]
pub struct TeacherForced<'a> {
    pub inputs: &'a [EncoderInput],
    pub targets: &'a [usize],
    pub gs: &'a [Array1<f64>],
    pub masks: &'a [Vec<bool>],
}

/// Incremental decoder state for greedy decoding.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub h1: Array1<f64>,
    pub c1: Array1<f64>,
    pub h2: Array1<f64>,
    pub c2: Array1<f64>,
}

struct DecStepCache {
    y: Array1<f64>,
    s1: LstmState,
    x2: Array1<f64>,
    s2: LstmState,
    hdrop: Array1<f64>,
    /// Masked softmax probabilities (zero on disallowed tokens).
    probs: Array1<f64>,
    drop_b: Option<Array1<f64>>,
    drop_c: Option<Array1<f64>>,
}

struct ForwardCache {
    xs: Vec<Array1<f64>>,
    drop2: Option<Vec<Array1<f64>>>,
    trace: EncoderTrace,
    bridge_in: Array1<f64>,
    bridge_out: [Array1<f64>; 4],
    steps: Vec<DecStepCache>,
}

#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    pub dims: ModelDims,
    pub params: ModelParams,
}

fn drop_mask(len: usize, p: f64, rng: &mut impl Rng) -> Array1<f64> {
    let keep = 1.0 - p;
    Array1::from_shape_fn(len, |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

impl Seq2SeqModel {
    pub fn new(dims: ModelDims, rng: &mut impl Rng) -> Seq2SeqModel {
        let params = ModelParams::new(&dims, rng);
        Seq2SeqModel { dims, params }
    }

    /// Encoder feature vector: input embedding, label bits, slot one-hot.
    pub fn feature_vec(&self, inp: &EncoderInput) -> Array1<f64> {
        let d = self.dims;
        let mut x = Array1::zeros(d.feature_dim());
        x.slice_mut(ndarray::s![0..d.embed_in])
            .assign(&self.params.emb_in.row(inp.vocab_id));
        for (k, &bit) in inp.label_bits.iter().enumerate() {
            x[d.embed_in + k] = bit as f64;
        }
        if let Some((kind, slot)) = inp.slot {
            let offset = match kind {
                SlotKind::Value => slot,
                SlotKind::Str => NUM_VALUE_SLOTS + slot,
            };
            x[d.embed_in + 4 + offset] = 1.0;
        }
        x
    }

    fn bridge(&self, hf: &Array1<f64>, hb: &Array1<f64>) -> (Array1<f64>, [Array1<f64>; 4]) {
        let s = concatenate![Axis(0), hf.view(), hb.view()];
        let out = std::array::from_fn(|k| {
            (self.params.bridge_w[k].dot(&s) + &self.params.bridge_b[k]).mapv(f64::tanh)
        });
        (s, out)
    }

    /// Run the encoder and bridge; the returned state seeds greedy
    /// decoding.
    pub fn encode_for_decode(&self, inputs: &[EncoderInput]) -> DecoderState {
        let xs: Vec<Array1<f64>> = inputs.iter().map(|i| self.feature_vec(i)).collect();
        let trace = self.params.encoder.forward(&xs, None);
        let (hf, hb) = trace.final_states();
        let (_, b) = self.bridge(hf, hb);
        let [h1, c1, h2, c2] = b;
        DecoderState { h1, c1, h2, c2 }
    }

    /// One greedy-decode step; `prev` is the previously emitted token
    /// (None at the first step).
    pub fn decode_step(
        &self,
        st: &DecoderState,
        prev: Option<usize>,
        g: &Array1<f64>,
    ) -> (Array1<f64>, DecoderState) {
        let y = match prev {
            None => self.params.start.clone(),
            Some(id) => self.params.emb_out.row(id).to_owned(),
        };
        let s1 = self.params.dec1.step(&y, &st.h1, &st.c1, Some(g));
        let s2 = self.params.dec2.step(&s1.h, &st.h2, &st.c2, Some(g));
        let logits = self.params.w_out.dot(&s2.h) + &self.params.b_out;
        (
            logits,
            DecoderState {
                h1: s1.h,
                c1: s1.c,
                h2: s2.h,
                c2: s2.c,
            },
        )
    }

    fn forward(&self, tf: &TeacherForced<'_>, dropout: f64, rng: &mut impl Rng) -> (f64, ForwardCache) {
        let d = self.dims;
        assert_eq!(tf.targets.len(), tf.gs.len());
        assert_eq!(tf.targets.len(), tf.masks.len());
        let xs: Vec<Array1<f64>> = tf.inputs.iter().map(|i| self.feature_vec(i)).collect();
        let drop2 = (dropout > 0.0).then(|| {
            (0..xs.len())
                .map(|_| drop_mask(2 * d.hidden, dropout, rng))
                .collect::<Vec<_>>()
        });
        let trace = self.params.encoder.forward(&xs, drop2.as_deref());
        let (hf, hb) = trace.final_states();
        let (bridge_in, bridge_out) = self.bridge(hf, hb);

        let mut h1 = bridge_out[0].clone();
        let mut c1 = bridge_out[1].clone();
        let mut h2 = bridge_out[2].clone();
        let mut c2 = bridge_out[3].clone();
        let mut steps = Vec::with_capacity(tf.targets.len());
        let mut loss = 0.0;
        for (t, &target) in tf.targets.iter().enumerate() {
            let y = if t == 0 {
                self.params.start.clone()
            } else {
                self.params.emb_out.row(tf.targets[t - 1]).to_owned()
            };
            let s1 = self.params.dec1.step(&y, &h1, &c1, Some(&tf.gs[t]));
            let drop_b = (dropout > 0.0).then(|| drop_mask(d.hidden, dropout, rng));
            let x2 = match &drop_b {
                Some(m) => &s1.h * m,
                None => s1.h.clone(),
            };
            let s2 = self.params.dec2.step(&x2, &h2, &c2, Some(&tf.gs[t]));
            let drop_c = (dropout > 0.0).then(|| drop_mask(d.hidden, dropout, rng));
            let hdrop = match &drop_c {
                Some(m) => &s2.h * m,
                None => s2.h.clone(),
            };
            let logits = self.params.w_out.dot(&hdrop) + &self.params.b_out;

            let mask = &tf.masks[t];
            assert!(mask[target], "gold token must be admitted by its mask");
            let mx = logits
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&l, _)| l)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut probs = Array1::zeros(d.output_vocab);
            let mut z = 0.0;
            for i in 0..d.output_vocab {
                if mask[i] {
                    let e = (logits[i] - mx).exp();
                    probs[i] = e;
                    z += e;
                }
            }
            probs /= z;
            loss -= probs[target].max(1e-300).ln();

            h1 = s1.h.clone();
            c1 = s1.c.clone();
            h2 = s2.h.clone();
            c2 = s2.c.clone();
            steps.push(DecStepCache {
                y,
                s1,
                x2,
                s2,
                hdrop,
                probs,
                drop_b,
                drop_c,
            });
        }
        (
            loss,
            ForwardCache {
                xs,
                drop2,
                trace,
                bridge_in,
                bridge_out,
                steps,
            },
        )
    }

    /// Teacher-forced total loss (sum of per-step negative log
    /// probabilities); no dropout.
    pub fn forward_loss(&self, tf: &TeacherForced<'_>) -> f64 {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        self.forward(tf, 0.0, &mut rng).0
    }

    /// Full forward and hand-derived backward pass for one sample.
    pub fn loss_and_grads(
        &self,
        tf: &TeacherForced<'_>,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> (f64, ModelParams) {
        let d = self.dims;
        let (loss, cache) = self.forward(tf, dropout, rng);
        let mut grads = self.params.zeros_like();

        let zero = Array1::zeros(d.hidden);
        let mut dh1_next = zero.clone();
        let mut dc1_next = zero.clone();
        let mut dh2_next = zero.clone();
        let mut dc2_next = zero.clone();
        for t in (0..tf.targets.len()).rev() {
            let step = &cache.steps[t];
            let mut dlogits = step.probs.clone();
            dlogits[tf.targets[t]] -= 1.0;

            let dl_col = dlogits.view().insert_axis(Axis(1));
            grads.w_out += &dl_col.dot(&step.hdrop.view().insert_axis(Axis(0)));
            grads.b_out += &dlogits;
            let dhdrop = self.params.w_out.t().dot(&dlogits);
            let mut dh2 = match &step.drop_c {
                Some(m) => &dhdrop * m,
                None => dhdrop,
            };
            dh2 += &dh2_next;

            let (h2_prev, c2_prev, h1_prev, c1_prev) = if t == 0 {
                (
                    &cache.bridge_out[2],
                    &cache.bridge_out[3],
                    &cache.bridge_out[0],
                    &cache.bridge_out[1],
                )
            } else {
                let p = &cache.steps[t - 1];
                (&p.s2.h, &p.s2.c, &p.s1.h, &p.s1.c)
            };
            let (dx2, dh2_prev, dc2_prev) = self.params.dec2.backstep(
                &step.x2,
                h2_prev,
                c2_prev,
                Some(&tf.gs[t]),
                &step.s2,
                &dh2,
                &dc2_next,
                &mut grads.dec2,
            );
            let mut dh1 = match &step.drop_b {
                Some(m) => &dx2 * m,
                None => dx2,
            };
            dh1 += &dh1_next;
            let (dy, dh1_prev, dc1_prev) = self.params.dec1.backstep(
                &step.y,
                h1_prev,
                c1_prev,
                Some(&tf.gs[t]),
                &step.s1,
                &dh1,
                &dc1_next,
                &mut grads.dec1,
            );
            if t == 0 {
                grads.start += &dy;
            } else {
                let mut row = grads.emb_out.row_mut(tf.targets[t - 1]);
                row += &dy;
            }
            dh1_next = dh1_prev;
            dc1_next = dc1_prev;
            dh2_next = dh2_prev;
            dc2_next = dc2_prev;
        }

        // bridge backward: gradients into dec1/dec2 initial states
        let d_outs = [&dh1_next, &dc1_next, &dh2_next, &dc2_next];
        let mut ds = Array1::zeros(2 * d.hidden);
        for k in 0..4 {
            let b = &cache.bridge_out[k];
            let dpre = d_outs[k] * &b.mapv(|v| 1.0 - v * v);
            let dpre_col = dpre.view().insert_axis(Axis(1));
            grads.bridge_w[k] += &dpre_col.dot(&cache.bridge_in.view().insert_axis(Axis(0)));
            grads.bridge_b[k] += &dpre;
            ds += &self.params.bridge_w[k].t().dot(&dpre);
        }
        let dh2f_last = ds.slice(ndarray::s![0..d.hidden]).to_owned();
        let dh2b_last = ds.slice(ndarray::s![d.hidden..2 * d.hidden]).to_owned();

        let mut enc_grads = self.params.encoder.zeros_like();
        let dxs = self.params.encoder.backward(
            &cache.xs,
            &cache.trace,
            &dh2f_last,
            &dh2b_last,
            cache.drop2.as_deref(),
            &mut enc_grads,
        );
        grads.encoder = Encoder {
            l1f: enc_grads.l1f,
            l1b: enc_grads.l1b,
            l2f: enc_grads.l2f,
            l2b: enc_grads.l2b,
        };
        for (inp, dx) in tf.inputs.iter().zip(&dxs) {
            let mut row = grads.emb_in.row_mut(inp.vocab_id);
            row += &dx.slice(ndarray::s![0..d.embed_in]);
        }

        (loss, grads)
    }
}
