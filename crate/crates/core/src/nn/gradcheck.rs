use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::seq2seq::{Example, Gradients, Seq2Seq};
use super::{LossKind, NnError};
use crate::featurize::{FeatureSequence, FEATURE_DIM};

/// Gradient magnitudes below `REL_ERROR_FLOOR * max(1, |loss|)` are compared
/// absolutely rather than relatively. Central differences at eps=1e-5 carry
/// rounding noise of roughly `1e-10 * |loss|`, which would otherwise dominate
/// near-zero gradients.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Where the worst error occurred, e.g. `decoder.w_f[17]`.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    fn merge(self, other: Self) -> Self {
        let checked = self.checked + other.checked;
        let mut best = if other.max_rel_error > self.max_rel_error { other } else { self };
        best.checked = checked;
        best
    }

    fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
        }
    }
}

/// Sizes of a seeded random model and example for gradient checking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckCase {
    pub hidden: usize,
    pub text_steps: usize,
    /// Zero gives a model without a motion encoder.
    pub motion_steps: usize,
    pub decoder_steps: usize,
    pub seed: u64,
}

/// Network initialised as for training; text values drawn like embedding
/// rows (within 0.1), motion and target values within 1 like bone
/// directions.
pub fn random_case(case: &CheckCase) -> (Seq2Seq, Example) {
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let with_motion = case.motion_steps > 0;
    let model = Seq2Seq::init(FEATURE_DIM, case.hidden, with_motion, &mut rng);
    let mut seq = |n: usize, scale: f64| {
        let v = (0..n)
            .map(|_| (0..FEATURE_DIM).map(|_| rng.gen_range(-scale..scale)).collect())
            .collect();
        FeatureSequence::from_valid(v).expect("finite values")
    };
    let text = seq(case.text_steps, 0.1);
    let motion = with_motion.then(|| seq(case.motion_steps, 1.0));
    let target = seq(case.decoder_steps, 1.0);
    (model, Example { text, motion, target })
}

/// Central-difference check of `analytic` against `f` at `x`.
pub fn grad_check_fn<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], analytic: &[f64], eps: f64) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len());
    let mut report = GradCheckReport::empty();
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        probe[j] = x[j] + eps;
        let up = f(&probe);
        probe[j] = x[j] - eps;
        let down = f(&probe);
        probe[j] = x[j];
        let err = relative_error(analytic[j], (up - down) / (2.0 * eps), REL_ERROR_FLOOR);
        report = report.merge(GradCheckReport {
            max_rel_error: err,
            worst: format!("[{j}]"),
            checked: 1,
        });
    }
    report
}

/// Compares backpropagated gradients with central differences for every
/// model parameter and every valid text and motion input value.
pub fn grad_check(
    model: &Seq2Seq,
    ex: &Example,
    loss: LossKind,
    teacher_forcing: bool,
    eps: f64,
) -> Result<GradCheckReport, NnError> {
    let (value, grads) = model.loss_and_grad(ex, loss, teacher_forcing)?;
    compare(model, ex, loss, teacher_forcing, eps, &grads, value)
}

fn compare(
    model: &Seq2Seq,
    ex: &Example,
    loss: LossKind,
    teacher_forcing: bool,
    eps: f64,
    grads: &Gradients,
    value: f64,
) -> Result<GradCheckReport, NnError> {
    let floor = REL_ERROR_FLOOR * value.abs().max(1.0);
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.model.tensors().into_iter().map(|(_, _, d)| d.to_vec()).collect();
    let mut jobs = Vec::new();
    for (k, g) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            jobs.push((k, j));
        }
    }
    let params = jobs
        .par_iter()
        .map_init(
            || model.clone(),
            |m, &(k, j)| {
                let orig = m.tensors_mut()[k][j];
                m.tensors_mut()[k][j] = orig + eps;
                let up = m.loss(ex, loss, teacher_forcing);
                m.tensors_mut()[k][j] = orig - eps;
                let down = m.loss(ex, loss, teacher_forcing);
                m.tensors_mut()[k][j] = orig;
                let numeric = (up? - down?) / (2.0 * eps);
                Ok(GradCheckReport {
                    max_rel_error: relative_error(analytic[k][j], numeric, floor),
                    worst: format!("{}[{j}]", names[k]),
                    checked: 1,
                })
            },
        )
        .try_reduce(GradCheckReport::empty, |a, b| Ok(a.merge(b)))?;

    let probe = Probe {
        model,
        ex,
        loss,
        teacher_forcing,
        eps,
        floor,
    };
    let text = probe.inputs(&grads.text_inputs, "text", |e| &mut e.text)?;
    let mut report = params.merge(text);
    if ex.motion.is_some() {
        let motion = probe.inputs(&grads.motion_inputs, "motion", |e| e.motion.as_mut().expect("motion present"))?;
        report = report.merge(motion);
    }
    Ok(report)
}

struct Probe<'a> {
    model: &'a Seq2Seq,
    ex: &'a Example,
    loss: LossKind,
    teacher_forcing: bool,
    eps: f64,
    floor: f64,
}

impl Probe<'_> {
    fn inputs(
        &self,
        analytic: &[Vec<f64>],
        label: &str,
        select: impl Fn(&mut Example) -> &mut FeatureSequence,
    ) -> Result<GradCheckReport, NnError> {
        let mut report = GradCheckReport::empty();
        let mut probe = self.ex.clone();
        for (t, g) in analytic.iter().enumerate() {
            for j in 0..g.len() {
                let orig = select(&mut probe).vectors()[t][j];
                *value_mut(select(&mut probe), t, j) = orig + self.eps;
                let up = self.model.loss(&probe, self.loss, self.teacher_forcing)?;
                *value_mut(select(&mut probe), t, j) = orig - self.eps;
                let down = self.model.loss(&probe, self.loss, self.teacher_forcing)?;
                *value_mut(select(&mut probe), t, j) = orig;
                report = report.merge(GradCheckReport {
                    max_rel_error: relative_error(g[j], (up - down) / (2.0 * self.eps), self.floor),
                    worst: format!("{label}_input[{t}][{j}]"),
                    checked: 1,
                });
            }
        }
        Ok(report)
    }
}

fn value_mut(seq: &mut FeatureSequence, t: usize, j: usize) -> &mut f64 {
    &mut seq.vectors_mut()[t][j]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::FEATURE_DIM;
    use crate::nn::{LstmWeights, Projection};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> FeatureSequence {
        let v = (0..n)
            .map(|_| (0..FEATURE_DIM).map(|_| rng.gen_range(-scale..scale)).collect())
            .collect();
        FeatureSequence::from_valid(v).unwrap()
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-5), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-5) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9, 1e-5) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn exact_gradient_of_quadratic() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = [0.5, -1.5, 2.0];
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!(grad_check_fn(f, &x, &g, 1e-5).max_rel_error < 1e-8);
        let wrong = [1.0, -3.0, 4.5];
        let r = grad_check_fn(f, &x, &wrong, 1e-5);
        assert!(r.max_rel_error > 0.1);
        assert_eq!(r.worst, "[2]");
    }

    // Only the projection bias differs from zero, so the decoder emits
    // exactly `b` at every step. With dyadic values and a power-of-two
    // step every difference quotient is computed without rounding.
    #[test]
    fn projection_only_model_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut dyadic = || rng.gen_range(-256i32..=256) as f64 / 256.0;
        let mut proj = Projection::zeros(FEATURE_DIM, 4);
        for v in proj.b.iter_mut() {
            *v = dyadic();
        }
        let seq = |f: &mut dyn FnMut() -> f64| {
            FeatureSequence::from_valid((0..2).map(|_| (0..FEATURE_DIM).map(|_| f()).collect()).collect())
                .unwrap()
        };
        let ex = Example {
            text: seq(&mut dyadic),
            motion: None,
            target: seq(&mut dyadic),
        };
        let model = Seq2Seq::new(
            LstmWeights::zeros(FEATURE_DIM, 4),
            None,
            LstmWeights::zeros(FEATURE_DIM, 4),
            proj,
        )
        .unwrap();
        let r = grad_check(&model, &ex, LossKind::Squared, true, 1.0 / 1024.0).unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    fn small_example(rng: &mut ChaCha8Rng, motion: bool) -> Example {
        Example {
            text: random_seq(rng, 2, 0.1),
            motion: motion.then(|| random_seq(rng, 2, 0.5)),
            target: random_seq(rng, 2, 0.5),
        }
    }

    #[test]
    fn random_cases_pass_and_repeat() {
        for (motion_steps, seed) in [(0, 1), (2, 2)] {
            let case = CheckCase {
                hidden: 8,
                text_steps: 2,
                motion_steps,
                decoder_steps: 2,
                seed,
            };
            let (model, ex) = random_case(&case);
            assert_eq!(model.has_motion_encoder(), motion_steps > 0);
            assert_eq!(random_case(&case), (model.clone(), ex.clone()));
            let r = grad_check(&model, &ex, LossKind::Norm, true, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn hidden_eight_models_pass() {
        for (seed, motion, teacher) in [(1, false, true), (2, true, true), (3, true, false), (4, false, false)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = Seq2Seq::init(FEATURE_DIM, 8, motion, &mut rng);
            let ex = small_example(&mut rng, motion);
            for kind in [LossKind::Norm, LossKind::Squared] {
                let r = grad_check(&model, &ex, kind, teacher, 1e-5).unwrap();
                assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
            }
        }
    }

    // Full-scale inputs keep the cells away from their linear region, so the
    // O(eps^2) truncation term dominates rounding at the coarse step.
    #[test]
    fn smaller_epsilon_is_more_accurate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Seq2Seq::init(FEATURE_DIM, 4, false, &mut rng);
        let ex = Example {
            text: random_seq(&mut rng, 2, 1.0),
            motion: None,
            target: random_seq(&mut rng, 2, 1.0),
        };
        let coarse = grad_check(&model, &ex, LossKind::Squared, true, 1e-3).unwrap();
        let fine = grad_check(&model, &ex, LossKind::Squared, true, 1e-5).unwrap();
        assert!(fine.max_rel_error < coarse.max_rel_error, "{fine:?} vs {coarse:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Seq2Seq::init(FEATURE_DIM, 4, true, &mut rng);
        let ex = small_example(&mut rng, true);
        let (value, mut grads) = model.loss_and_grad(&ex, LossKind::Norm, true).unwrap();
        let clean = compare(&model, &ex, LossKind::Norm, true, 1e-5, &grads, value).unwrap();
        assert!(clean.max_rel_error < 1e-4, "{clean:?}");
        grads.model.decoder.w_mut(crate::nn::Gate::Output)[5] *= 1.01;
        let bad = compare(&model, &ex, LossKind::Norm, true, 1e-5, &grads, value).unwrap();
        assert!(bad.max_rel_error > 5e-3, "{bad:?}");
        assert_eq!(bad.worst, "decoder.w_o[5]");
    }
}
