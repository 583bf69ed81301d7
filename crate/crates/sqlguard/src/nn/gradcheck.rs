//! Finite-difference verification of the hand-derived gradients.
//!
//! Central differences with step 1e-5 against the analytic gradient of
//! the teacher-forced loss; the relative error uses
//! |a - n| / max(|a|, |n|, 1e-4).  The 1e-4 floor turns the check into
//! an absolute one for near-zero gradients, whose finite-difference
//! estimate is dominated by cancellation noise.

use super::model::{Seq2SeqModel, TeacherForced};

pub const STEP: f64 = 1e-5;

/// Maximum relative error over every `stride`-th parameter.  `corrupt`
/// is added to each analytic gradient before comparison; pass 0.0 for a
/// real check, a non-zero value as a negative control proving the test
/// can fail.
pub fn max_relative_error_with(
    model: &mut Seq2SeqModel,
    tf: &TeacherForced<'_>,
    stride: usize,
    corrupt: f64,
) -> f64 {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let (_, grads) = model.loss_and_grads(tf, 0.0, &mut rng);
    let analytic: Vec<Vec<f64>> = grads.arrays().iter().map(|s| s.to_vec()).collect();

    let mut max_rel: f64 = 0.0;
    let mut counter = 0usize;
    for (k, arr) in analytic.iter().enumerate() {
        for (j, &a) in arr.iter().enumerate() {
            if counter % stride.max(1) != 0 {
                counter += 1;
                continue;
            }
            counter += 1;
            model.params.arrays_mut()[k][j] += STEP;
            let up = model.forward_loss(tf);
            model.params.arrays_mut()[k][j] -= 2.0 * STEP;
            let down = model.forward_loss(tf);
            model.params.arrays_mut()[k][j] += STEP;
            let numeric = (up - down) / (2.0 * STEP);
            let a = a + corrupt;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

pub fn max_relative_error(
    model: &mut Seq2SeqModel,
    tf: &TeacherForced<'_>,
    stride: usize,
) -> f64 {
    max_relative_error_with(model, tf, stride, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::ModelDims;
    use crate::tagger::{EncoderInput, SlotKind};
    use ndarray::Array1;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            input_vocab: 15,
            output_vocab: 20,
            grammar: 4,
            embed_in: 5,
            embed_out: 5,
            hidden: 8,
        }
    }

    struct Fixture {
        inputs: Vec<EncoderInput>,
        targets: Vec<usize>,
        gs: Vec<Array1<f64>>,
        masks: Vec<Vec<bool>>,
    }

    impl Fixture {
        fn teacher_forced(&self) -> TeacherForced<'_> {
            TeacherForced {
                inputs: &self.inputs,
                targets: &self.targets,
                gs: &self.gs,
                masks: &self.masks,
            }
        }
    }

    fn fixture(d: &ModelDims, len: usize, rng: &mut ChaCha8Rng) -> Fixture {
        let inputs = (0..6)
            .map(|i| EncoderInput {
                vocab_id: rng.gen_range(0..d.input_vocab),
                label_bits: [(i % 2) as u8, 0, 0, 0],
                slot: (i == 5).then_some((SlotKind::Value, 0)),
            })
            .collect();
        let targets: Vec<usize> = (0..len).map(|_| rng.gen_range(0..d.output_vocab)).collect();
        let gs = (0..len)
            .map(|_| Array1::from_shape_fn(d.grammar, |_| f64::from(rng.gen_bool(0.5))))
            .collect();
        let masks = targets
            .iter()
            .map(|&t| {
                let mut m: Vec<bool> = (0..d.output_vocab).map(|_| rng.gen_bool(0.4)).collect();
                m[t] = true;
                m
            })
            .collect();
        Fixture {
            inputs,
            targets,
            gs,
            masks,
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let d = dims();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut model = Seq2SeqModel::new(d, &mut rng);
        let fx = fixture(&d, 7, &mut rng);
        let err = max_relative_error(&mut model, &fx.teacher_forced(), 7);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn corrupted_gradients_are_detected() {
        let d = dims();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut model = Seq2SeqModel::new(d, &mut rng);
        let fx = fixture(&d, 5, &mut rng);
        let err = max_relative_error_with(&mut model, &fx.teacher_forced(), 11, 0.05);
        assert!(err > 1e-2, "negative control must trip: {err}");
    }

    #[test]
    fn empty_target_sequence_has_zero_loss_and_error() {
        let d = dims();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut model = Seq2SeqModel::new(d, &mut rng);
        let mut fx = fixture(&d, 3, &mut rng);
        fx.targets.clear();
        fx.gs.clear();
        fx.masks.clear();
        assert_eq!(model.forward_loss(&fx.teacher_forced()), 0.0);
        let err = max_relative_error(&mut model, &fx.teacher_forced(), 29);
        assert!(err < 1e-6, "no loss, no gradient: {err}");
    }
}
