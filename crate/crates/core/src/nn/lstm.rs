use rand::Rng;

use super::{axpy, dot, sigmoid, NnError};

/// Gate order used for every per-gate array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];

    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Output => "o",
            Gate::Candidate => "c",
        }
    }
}

/// Per-gate weights `W_g` (hidden x (hidden + input), acting on `[h_prev, x]`)
/// and biases `b_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    input_size: usize,
    hidden_size: usize,
    w: [Vec<f64>; 4],
    b: [Vec<f64>; 4],
}

impl LstmWeights {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let cols = input_size + hidden_size;
        Self {
            input_size,
            hidden_size,
            w: std::array::from_fn(|_| vec![0.0; hidden_size * cols]),
            b: std::array::from_fn(|_| vec![0.0; hidden_size]),
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases except
    /// the forget gate, which starts at 1.
    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut out = Self::zeros(input_size, hidden_size);
        let bound = 1.0 / ((input_size + hidden_size) as f64).sqrt();
        for w in out.w.iter_mut() {
            for v in w.iter_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        out.b[Gate::Forget as usize].fill(1.0);
        out
    }

    pub fn from_parts(
        input_size: usize,
        hidden_size: usize,
        w: [Vec<f64>; 4],
        b: [Vec<f64>; 4],
    ) -> Result<Self, NnError> {
        let cols = input_size + hidden_size;
        for g in 0..4 {
            if w[g].len() != hidden_size * cols || b[g].len() != hidden_size {
                return Err(NnError::Shape(format!(
                    "gate {} expects {}x{} weights and {} biases",
                    Gate::ALL[g].suffix(),
                    hidden_size,
                    cols,
                    hidden_size
                )));
            }
            if w[g].iter().chain(&b[g]).any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(format!("gate {}", Gate::ALL[g].suffix())));
            }
        }
        Ok(Self {
            input_size,
            hidden_size,
            w,
            b,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn cols(&self) -> usize {
        self.input_size + self.hidden_size
    }

    pub fn w(&self, g: Gate) -> &[f64] {
        &self.w[g as usize]
    }

    pub fn w_mut(&mut self, g: Gate) -> &mut [f64] {
        &mut self.w[g as usize]
    }

    pub fn b(&self, g: Gate) -> &[f64] {
        &self.b[g as usize]
    }

    pub fn b_mut(&mut self, g: Gate) -> &mut [f64] {
        &mut self.b[g as usize]
    }

    /// `(suffix, shape, data)` for every tensor, weights before biases.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(8);
        for g in Gate::ALL {
            out.push((format!("w_{}", g.suffix()), vec![self.hidden_size, self.cols()], self.w(g)));
        }
        for g in Gate::ALL {
            out.push((format!("b_{}", g.suffix()), vec![self.hidden_size], self.b(g)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let (w, b) = (&mut self.w, &mut self.b);
        w.iter_mut()
            .chain(b.iter_mut())
            .map(|v| v.as_mut_slice())
            .collect()
    }

    fn check_dims(&self, x: &[f64], prev: &LstmState) -> Result<(), NnError> {
        if x.len() != self.input_size {
            return Err(NnError::Shape(format!(
                "input has {} entries, expected {}",
                x.len(),
                self.input_size
            )));
        }
        if prev.h.len() != self.hidden_size || prev.c.len() != self.hidden_size {
            return Err(NnError::Shape(format!(
                "state has width {}/{}, expected {}",
                prev.h.len(),
                prev.c.len(),
                self.hidden_size
            )));
        }
        Ok(())
    }

    /// One cell update, recording everything the backward pass needs.
    pub(crate) fn forward_step(&self, x: &[f64], prev: &LstmState) -> StepCache {
        let h = self.hidden_size;
        let cols = self.cols();
        let mut z = Vec::with_capacity(cols);
        z.extend_from_slice(&prev.h);
        z.extend_from_slice(x);

        let pre = |g: Gate, r: usize| dot(&self.w(g)[r * cols..(r + 1) * cols], &z) + self.b(g)[r];
        let mut i = vec![0.0; h];
        let mut f = vec![0.0; h];
        let mut o = vec![0.0; h];
        let mut cand = vec![0.0; h];
        for r in 0..h {
            i[r] = sigmoid(pre(Gate::Input, r));
            f[r] = sigmoid(pre(Gate::Forget, r));
            o[r] = sigmoid(pre(Gate::Output, r));
            cand[r] = pre(Gate::Candidate, r).tanh();
        }
        let c: Vec<f64> = (0..h).map(|r| f[r] * prev.c[r] + i[r] * cand[r]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h_out: Vec<f64> = (0..h).map(|r| o[r] * tanh_c[r]).collect();
        StepCache {
            z,
            i,
            f,
            o,
            cand,
            c_prev: prev.c.clone(),
            c,
            tanh_c,
            h: h_out,
        }
    }

    /// Reverse of [`forward_step`]. Accumulates parameter gradients into
    /// `grads` and returns `(dh_prev, dc_prev, dx)`.
    pub(crate) fn backward_step(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut LstmWeights,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.hidden_size;
        let cols = self.cols();
        let mut da = [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]];
        let mut dc_prev = vec![0.0; h];
        for r in 0..h {
            let (i, f, o, g, t) = (cache.i[r], cache.f[r], cache.o[r], cache.cand[r], cache.tanh_c[r]);
            let d_o = dh[r] * t;
            let dct = dc[r] + dh[r] * o * (1.0 - t * t);
            da[Gate::Input as usize][r] = dct * g * i * (1.0 - i);
            da[Gate::Forget as usize][r] = dct * cache.c_prev[r] * f * (1.0 - f);
            da[Gate::Output as usize][r] = d_o * o * (1.0 - o);
            da[Gate::Candidate as usize][r] = dct * i * (1.0 - g * g);
            dc_prev[r] = dct * f;
        }
        let mut dz = vec![0.0; cols];
        for gate in Gate::ALL {
            let gi = gate as usize;
            let w = self.w(gate);
            let gw = &mut grads.w[gi];
            for r in 0..h {
                let a = da[gi][r];
                if a == 0.0 {
                    continue;
                }
                axpy(&mut gw[r * cols..(r + 1) * cols], a, &cache.z);
                axpy(&mut dz, a, &w[r * cols..(r + 1) * cols]);
            }
            for (gb, a) in grads.b[gi].iter_mut().zip(&da[gi]) {
                *gb += a;
            }
        }
        let dx = dz.split_off(h);
        (dz, dc_prev, dx)
    }

    pub fn add_assign(&mut self, other: &LstmWeights) {
        for g in 0..4 {
            axpy(&mut self.w[g], 1.0, &other.w[g]);
            axpy(&mut self.b[g], 1.0, &other.b[g]);
        }
    }
}

/// Hidden and cell vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        Self {
            h: vec![0.0; hidden_size],
            c: vec![0.0; hidden_size],
        }
    }

    /// Element-wise sum of both the hidden and the cell vectors.
    pub fn fused(&self, other: &LstmState) -> LstmState {
        LstmState {
            h: self.h.iter().zip(&other.h).map(|(a, b)| a + b).collect(),
            c: self.c.iter().zip(&other.c).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Intermediate values of one step.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub(crate) z: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub cand: Vec<f64>,
    pub(crate) c_prev: Vec<f64>,
    pub c: Vec<f64>,
    pub(crate) tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl StepCache {
    pub fn state(&self) -> LstmState {
        LstmState {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }
}

/// `i, f, o = sigmoid(W[h, x] + b)`, `c~ = tanh(W_c[h, x] + b_c)`,
/// `c = f*c_prev + i*c~`, `h = o*tanh(c)`.
pub fn lstm_step(x: &[f64], prev: &LstmState, w: &LstmWeights) -> Result<LstmState, NnError> {
    w.check_dims(x, prev)?;
    Ok(w.forward_step(x, prev).state())
}

/// Like [`lstm_step`] but also returns the gate activations.
pub fn lstm_step_traced(x: &[f64], prev: &LstmState, w: &LstmWeights) -> Result<StepCache, NnError> {
    w.check_dims(x, prev)?;
    Ok(w.forward_step(x, prev))
}
