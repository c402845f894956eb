use rand::Rng;

use super::lstm::{LstmState, LstmWeights, StepCache};
use super::{axpy, dot, sequence_loss, sequence_loss_grad, LossKind, NnError};
use crate::featurize::FeatureSequence;

/// Affine map from a decoder hidden state to an output feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    out_dim: usize,
    hidden_size: usize,
    /// Row-major `out_dim x hidden_size`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Projection {
    pub fn zeros(out_dim: usize, hidden_size: usize) -> Self {
        Self {
            out_dim,
            hidden_size,
            w: vec![0.0; out_dim * hidden_size],
            b: vec![0.0; out_dim],
        }
    }

    pub fn init<R: Rng>(out_dim: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(out_dim, hidden_size);
        let bound = 1.0 / (hidden_size as f64).sqrt();
        for v in p.w.iter_mut() {
            *v = rng.gen_range(-bound..=bound);
        }
        p
    }

    pub fn from_parts(out_dim: usize, hidden_size: usize, w: Vec<f64>, b: Vec<f64>) -> Result<Self, NnError> {
        if w.len() != out_dim * hidden_size || b.len() != out_dim {
            return Err(NnError::Shape(format!("projection expects {out_dim}x{hidden_size}")));
        }
        if w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("projection".into()));
        }
        Ok(Self {
            out_dim,
            hidden_size,
            w,
            b,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        let k = self.hidden_size;
        (0..self.out_dim)
            .map(|r| dot(&self.w[r * k..(r + 1) * k], h) + self.b[r])
            .collect()
    }

    /// Accumulates parameter gradients and returns `dL/dh`.
    fn backward(&self, h: &[f64], dy: &[f64], grads: &mut Projection) -> Vec<f64> {
        let k = self.hidden_size;
        let mut dh = vec![0.0; k];
        for (r, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grads.b[r] += d;
            axpy(&mut grads.w[r * k..(r + 1) * k], d, h);
            axpy(&mut dh, d, &self.w[r * k..(r + 1) * k]);
        }
        dh
    }
}

/// Runs the cell over the valid prefix of `seq` from a zero state.
pub fn encode(seq: &FeatureSequence, w: &LstmWeights) -> Result<LstmState, NnError> {
    let (state, _) = encode_steps(seq.valid(), w)?;
    Ok(state)
}

fn encode_steps(steps: &[Vec<f64>], w: &LstmWeights) -> Result<(LstmState, Vec<StepCache>), NnError> {
    let mut state = LstmState::zeros(w.hidden_size());
    let mut caches = Vec::with_capacity(steps.len());
    for x in steps {
        if x.len() != w.input_size() {
            return Err(NnError::Shape(format!(
                "encoder input width {} but weights expect {}",
                x.len(),
                w.input_size()
            )));
        }
        let cache = w.forward_step(x, &state);
        state = cache.state();
        caches.push(cache);
    }
    Ok((state, caches))
}

/// Free-running decoding: the first step sees a zero vector, later steps see
/// the previous prediction.
pub fn decode(
    initial: &LstmState,
    steps: usize,
    w: &LstmWeights,
    p: &Projection,
) -> Result<Vec<Vec<f64>>, NnError> {
    check_decoder(w, p)?;
    if initial.h.len() != w.hidden_size() || initial.c.len() != w.hidden_size() {
        return Err(NnError::Shape("initial state width".into()));
    }
    let (_, preds) = decode_steps(initial, steps, w, p, None);
    Ok(preds)
}

fn check_decoder(w: &LstmWeights, p: &Projection) -> Result<(), NnError> {
    if w.input_size() != p.out_dim() || w.hidden_size() != p.hidden_size() {
        return Err(NnError::Shape(format!(
            "decoder {}->{} does not match projection {}->{}",
            w.input_size(),
            w.hidden_size(),
            p.hidden_size(),
            p.out_dim()
        )));
    }
    Ok(())
}

/// With `teacher = Some(targets)`, step `t > 0` consumes `targets[t - 1]`.
fn decode_steps(
    initial: &LstmState,
    steps: usize,
    w: &LstmWeights,
    p: &Projection,
    teacher: Option<&[Vec<f64>]>,
) -> (Vec<StepCache>, Vec<Vec<f64>>) {
    let mut caches = Vec::with_capacity(steps);
    let mut preds: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let zero = vec![0.0; p.out_dim()];
    let mut state = initial.clone();
    for t in 0..steps {
        let x = match (t, teacher) {
            (0, _) => &zero,
            (_, Some(gt)) => &gt[t - 1],
            (_, None) => &preds[t - 1],
        };
        let cache = w.forward_step(x, &state);
        let y = p.apply(&cache.h);
        state = cache.state();
        caches.push(cache);
        preds.push(y);
    }
    (caches, preds)
}

/// Inputs and target of one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub text: FeatureSequence,
    /// Present only for the listening model.
    pub motion: Option<FeatureSequence>,
    pub target: FeatureSequence,
}

/// Everything recorded by [`Seq2Seq::forward`].
#[derive(Debug, Clone)]
pub struct Trace {
    text: Vec<StepCache>,
    motion: Vec<StepCache>,
    decoder: Vec<StepCache>,
    pub predictions: Vec<Vec<f64>>,
    teacher_forced: bool,
}

/// Parameter gradients plus gradients with respect to the encoder inputs.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub model: Seq2Seq,
    pub text_inputs: Vec<Vec<f64>>,
    pub motion_inputs: Vec<Vec<f64>>,
}

/// Text encoder, optional keypoints encoder, decoder and output projection.
/// With two encoders their final states are added element-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub text_encoder: LstmWeights,
    pub motion_encoder: Option<LstmWeights>,
    pub decoder: LstmWeights,
    pub projection: Projection,
}

impl Seq2Seq {
    pub fn new(
        text_encoder: LstmWeights,
        motion_encoder: Option<LstmWeights>,
        decoder: LstmWeights,
        projection: Projection,
    ) -> Result<Self, NnError> {
        let h = decoder.hidden_size();
        if text_encoder.hidden_size() != h
            || motion_encoder.as_ref().is_some_and(|m| m.hidden_size() != h)
        {
            return Err(NnError::Shape("encoder and decoder hidden sizes differ".into()));
        }
        check_decoder(&decoder, &projection)?;
        Ok(Self {
            text_encoder,
            motion_encoder,
            decoder,
            projection,
        })
    }

    pub fn init<R: Rng>(feature_dim: usize, hidden: usize, with_motion: bool, rng: &mut R) -> Self {
        let text_encoder = LstmWeights::init(feature_dim, hidden, rng);
        let motion_encoder = with_motion.then(|| LstmWeights::init(feature_dim, hidden, rng));
        let decoder = LstmWeights::init(feature_dim, hidden, rng);
        let projection = Projection::init(feature_dim, hidden, rng);
        Self {
            text_encoder,
            motion_encoder,
            decoder,
            projection,
        }
    }

    pub fn zeros(feature_dim: usize, hidden: usize, with_motion: bool) -> Self {
        Self {
            text_encoder: LstmWeights::zeros(feature_dim, hidden),
            motion_encoder: with_motion.then(|| LstmWeights::zeros(feature_dim, hidden)),
            decoder: LstmWeights::zeros(feature_dim, hidden),
            projection: Projection::zeros(feature_dim, hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            text_encoder: LstmWeights::zeros(self.text_encoder.input_size(), self.hidden_size()),
            motion_encoder: self
                .motion_encoder
                .as_ref()
                .map(|m| LstmWeights::zeros(m.input_size(), m.hidden_size())),
            decoder: LstmWeights::zeros(self.decoder.input_size(), self.hidden_size()),
            projection: Projection::zeros(self.projection.out_dim(), self.hidden_size()),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.decoder.hidden_size()
    }

    pub fn has_motion_encoder(&self) -> bool {
        self.motion_encoder.is_some()
    }

    fn check_motion(&self, motion: Option<&FeatureSequence>) -> Result<(), NnError> {
        match (self.motion_encoder.is_some(), motion.is_some()) {
            (true, false) => Err(NnError::Shape("model needs a motion input".into())),
            (false, true) => Err(NnError::Shape("model has no motion encoder".into())),
            _ => Ok(()),
        }
    }

    fn encode_all(
        &self,
        text: &FeatureSequence,
        motion: Option<&FeatureSequence>,
    ) -> Result<(LstmState, Vec<StepCache>, Vec<StepCache>), NnError> {
        self.check_motion(motion)?;
        let (text_state, text_caches) = encode_steps(text.valid(), &self.text_encoder)?;
        match (&self.motion_encoder, motion) {
            (Some(w), Some(m)) => {
                let (motion_state, motion_caches) = encode_steps(m.valid(), w)?;
                Ok((text_state.fused(&motion_state), text_caches, motion_caches))
            }
            _ => Ok((text_state, text_caches, Vec::new())),
        }
    }

    /// Decoder initial state: the text state, plus the motion state when present.
    pub fn encode_state(
        &self,
        text: &FeatureSequence,
        motion: Option<&FeatureSequence>,
    ) -> Result<LstmState, NnError> {
        Ok(self.encode_all(text, motion)?.0)
    }

    /// Free-running prediction of `steps` output vectors.
    pub fn predict(
        &self,
        text: &FeatureSequence,
        motion: Option<&FeatureSequence>,
        steps: usize,
    ) -> Result<Vec<Vec<f64>>, NnError> {
        let state = self.encode_state(text, motion)?;
        decode(&state, steps, &self.decoder, &self.projection)
    }

    /// Forward pass over the target's valid steps, recording a trace.
    pub fn forward(&self, ex: &Example, teacher_forcing: bool) -> Result<Trace, NnError> {
        let (state, text, motion) = self.encode_all(&ex.text, ex.motion.as_ref())?;
        let steps = ex.target.valid_len();
        let teacher = teacher_forcing.then(|| ex.target.valid());
        let (decoder, predictions) = decode_steps(&state, steps, &self.decoder, &self.projection, teacher);
        Ok(Trace {
            text,
            motion,
            decoder,
            predictions,
            teacher_forced: teacher_forcing,
        })
    }

    /// Reverse-mode pass given `dL/dprediction` for every decoded step.
    pub fn backward(&self, trace: &Trace, d_pred: &[Vec<f64>]) -> Gradients {
        let mut model = self.zeros_like();
        let (text_inputs, motion_inputs) = self.backward_into(trace, d_pred, &mut model);
        Gradients {
            model,
            text_inputs,
            motion_inputs,
        }
    }

    /// Like [`Seq2Seq::backward`] but adds the parameter gradients into
    /// `grads`, which must have this model's shapes. Returns the gradients
    /// with respect to the text and motion inputs.
    pub fn backward_into(
        &self,
        trace: &Trace,
        d_pred: &[Vec<f64>],
        grads: &mut Seq2Seq,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        assert_eq!(d_pred.len(), trace.decoder.len(), "one upstream gradient per decoded step");
        let h = self.hidden_size();
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dx_next: Option<Vec<f64>> = None;
        for t in (0..trace.decoder.len()).rev() {
            let cache = &trace.decoder[t];
            let mut dy = d_pred[t].clone();
            if let Some(dx) = dx_next.take() {
                axpy(&mut dy, 1.0, &dx);
            }
            let mut dh = self.projection.backward(&cache.h, &dy, &mut grads.projection);
            axpy(&mut dh, 1.0, &dh_next);
            let (dh_prev, dc_prev, dx) = self.decoder.backward_step(cache, &dh, &dc_next, &mut grads.decoder);
            dh_next = dh_prev;
            dc_next = dc_prev;
            // the input of step t is the prediction of step t-1 only when free running
            if !trace.teacher_forced && t > 0 {
                dx_next = Some(dx);
            }
        }

        let text_inputs = encoder_backward(&self.text_encoder, &trace.text, &dh_next, &dc_next, &mut grads.text_encoder);
        let motion_inputs = match (&self.motion_encoder, grads.motion_encoder.as_mut()) {
            (Some(w), Some(g)) => encoder_backward(w, &trace.motion, &dh_next, &dc_next, g),
            _ => Vec::new(),
        };
        (text_inputs, motion_inputs)
    }

    pub fn loss(&self, ex: &Example, kind: LossKind, teacher_forcing: bool) -> Result<f64, NnError> {
        let trace = self.forward(ex, teacher_forcing)?;
        let valid = ex.target.valid();
        sequence_loss(valid, &trace.predictions, &vec![true; valid.len()], kind)
    }

    pub fn loss_and_grad(
        &self,
        ex: &Example,
        kind: LossKind,
        teacher_forcing: bool,
    ) -> Result<(f64, Gradients), NnError> {
        let trace = self.forward(ex, teacher_forcing)?;
        let valid = ex.target.valid();
        let mask = vec![true; valid.len()];
        let loss = sequence_loss(valid, &trace.predictions, &mask, kind)?;
        let d_pred = sequence_loss_grad(valid, &trace.predictions, &mask, kind)?;
        Ok((loss, self.backward(&trace, &d_pred)))
    }

    /// Loss plus parameter gradients added into `grads`; returns the loss and
    /// the gradients with respect to the text inputs.
    pub fn loss_and_grad_into(
        &self,
        ex: &Example,
        kind: LossKind,
        teacher_forcing: bool,
        grads: &mut Seq2Seq,
    ) -> Result<(f64, Vec<Vec<f64>>), NnError> {
        let trace = self.forward(ex, teacher_forcing)?;
        let valid = ex.target.valid();
        let mask = vec![true; valid.len()];
        let loss = sequence_loss(valid, &trace.predictions, &mask, kind)?;
        let d_pred = sequence_loss_grad(valid, &trace.predictions, &mask, kind)?;
        Ok((loss, self.backward_into(&trace, &d_pred, grads).0))
    }

    /// Named tensors in a fixed order shared with [`Seq2Seq::tensors_mut`].
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn prefixed<'a>(prefix: &str, w: &'a LstmWeights) -> impl Iterator<Item = (String, Vec<usize>, &'a [f64])> + 'a {
            let prefix = prefix.to_string();
            w.tensors()
                .into_iter()
                .map(move |(name, shape, data)| (format!("{prefix}.{name}"), shape, data))
        }
        let mut out: Vec<_> = prefixed("text_encoder", &self.text_encoder).collect();
        if let Some(m) = &self.motion_encoder {
            out.extend(prefixed("motion_encoder", m));
        }
        out.extend(prefixed("decoder", &self.decoder));
        let p = &self.projection;
        out.push(("projection.w".into(), vec![p.out_dim, p.hidden_size], p.w.as_slice()));
        out.push(("projection.b".into(), vec![p.out_dim], p.b.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.text_encoder.tensors_mut();
        if let Some(m) = self.motion_encoder.as_mut() {
            out.extend(m.tensors_mut());
        }
        out.extend(self.decoder.tensors_mut());
        out.push(self.projection.w.as_mut_slice());
        out.push(self.projection.b.as_mut_slice());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Seq2Seq) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(dst, 1.0, src.2);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }
}

fn encoder_backward(
    w: &LstmWeights,
    caches: &[StepCache],
    dh_final: &[f64],
    dc_final: &[f64],
    grads: &mut LstmWeights,
) -> Vec<Vec<f64>> {
    let mut dh = dh_final.to_vec();
    let mut dc = dc_final.to_vec();
    let mut dxs = vec![Vec::new(); caches.len()];
    for t in (0..caches.len()).rev() {
        let (dh_prev, dc_prev, dx) = w.backward_step(&caches[t], &dh, &dc, grads);
        dh = dh_prev;
        dc = dc_prev;
        dxs[t] = dx;
    }
    dxs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{pad_or_truncate, FEATURE_DIM};
    use crate::nn::lstm_step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, n: usize) -> FeatureSequence {
        let v = (0..n)
            .map(|_| (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        FeatureSequence::from_valid(v).unwrap()
    }

    #[test]
    fn all_masked_sequence_encodes_to_zero() {
        let w = LstmWeights::init(FEATURE_DIM, 8, &mut ChaCha8Rng::seed_from_u64(0));
        let empty = pad_or_truncate(Vec::new(), 7).unwrap();
        assert_eq!(encode(&empty, &w).unwrap(), LstmState::zeros(8));
    }

    #[test]
    fn single_step_encode_matches_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = LstmWeights::init(FEATURE_DIM, 8, &mut rng);
        let seq = random_seq(&mut rng, 1);
        let direct = lstm_step(&seq.vectors()[0], &LstmState::zeros(8), &w).unwrap();
        assert_eq!(encode(&seq, &w).unwrap(), direct);
    }

    #[test]
    fn padding_does_not_change_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = LstmWeights::init(FEATURE_DIM, 8, &mut rng);
        for n in 0..=7 {
            let seq = random_seq(&mut rng, n);
            assert_eq!(encode(&seq, &w).unwrap(), encode(&seq.padded_to(7), &w).unwrap());
        }
    }

    #[test]
    fn zero_network_decodes_zeros() {
        let out = decode(
            &LstmState::zeros(4),
            5,
            &LstmWeights::zeros(FEATURE_DIM, 4),
            &Projection::zeros(FEATURE_DIM, 4),
        )
        .unwrap();
        assert_eq!(out, vec![vec![0.0; FEATURE_DIM]; 5]);
    }

    #[test]
    fn decode_matches_manual_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = LstmWeights::init(FEATURE_DIM, 6, &mut rng);
        let p = Projection::init(FEATURE_DIM, 6, &mut rng);
        let init = LstmState {
            h: (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            c: (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        };
        let got = decode(&init, 3, &w, &p).unwrap();

        let s1 = lstm_step(&vec![0.0; FEATURE_DIM], &init, &w).unwrap();
        let y1 = p.apply(&s1.h);
        assert_eq!(decode(&init, 1, &w, &p).unwrap(), vec![y1.clone()]);
        let s2 = lstm_step(&y1, &s1, &w).unwrap();
        let y2 = p.apply(&s2.h);
        let s3 = lstm_step(&y2, &s2, &w).unwrap();
        let y3 = p.apply(&s3.h);
        assert_eq!(got, vec![y1, y2, y3]);
    }

    #[test]
    fn missing_or_extra_motion_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let listening = Seq2Seq::init(FEATURE_DIM, 4, true, &mut rng);
        let speaking = Seq2Seq::init(FEATURE_DIM, 4, false, &mut rng);
        let text = random_seq(&mut rng, 2);
        assert!(listening.predict(&text, None, 2).is_err());
        assert!(speaking.predict(&text, Some(&text), 2).is_err());
        assert!(speaking.predict(&text, None, 2).is_ok());
    }

    #[test]
    fn zero_loss_has_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = Seq2Seq::init(FEATURE_DIM, 5, true, &mut rng);
        let text = random_seq(&mut rng, 2);
        let motion = random_seq(&mut rng, 3);
        let preds = model.predict(&text, Some(&motion), 2).unwrap();
        let ex = Example {
            text,
            motion: Some(motion),
            target: FeatureSequence::from_valid(preds).unwrap(),
        };
        let (loss, grads) = model.loss_and_grad(&ex, LossKind::Norm, false).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.model.tensors().iter().all(|(_, _, d)| d.iter().all(|&v| v == 0.0)));
        assert!(grads.text_inputs.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Seq2Seq::init(FEATURE_DIM, 5, false, &mut rng);
        let ex = Example {
            text: random_seq(&mut rng, 3),
            motion: None,
            target: random_seq(&mut rng, 3),
        };
        for teacher in [true, false] {
            let trace = model.forward(&ex, teacher).unwrap();
            let d: Vec<Vec<f64>> = trace
                .predictions
                .iter()
                .map(|p| p.iter().map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let d2: Vec<Vec<f64>> = d.iter().map(|v| v.iter().map(|x| 2.0 * x).collect()).collect();
            let g1 = model.backward(&trace, &d);
            let g2 = model.backward(&trace, &d2);
            for ((_, _, a), (_, _, b)) in g1.model.tensors().iter().zip(g2.model.tensors()) {
                for (x, y) in a.iter().zip(b) {
                    assert_eq!(2.0 * x, *y);
                }
            }
        }
    }
}
