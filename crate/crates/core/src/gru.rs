//! Gated recurrent unit with a softmax readout, categorical cross-entropy
//! and truncated backpropagation through time.
//!
//! The cell is evaluated as
//!
//! ```text
//! f  = σ(W_f h + U_f x + b_f)
//! r  = σ(W_r h + U_r x + b_r)
//! g  = tanh(W_g (r ⊙ h) + U_g x + b_g)
//! h' = f ⊙ h + (1 − f) ⊙ g
//! ŷ  = softmax(V h' + b)
//! ```
//!
//! so `f` weights the previous state, not the candidate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{matvec, matvec_t, outer_accumulate, sigmoid, softmax, Tensor};

/// Lower bound applied to readout probabilities so the log-loss stays finite.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub w_g: Tensor,
    pub w_f: Tensor,
    pub w_r: Tensor,
    pub u_g: Tensor,
    pub u_f: Tensor,
    pub u_r: Tensor,
    pub b_g: Tensor,
    pub b_f: Tensor,
    pub b_r: Tensor,
    pub v: Tensor,
    pub b: Tensor,
}

/// Accumulated `∂L/∂θ`, field for field.
pub type GruGradients = GruCellParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruDims {
    pub n_x: usize,
    pub n_h: usize,
    pub n_y: usize,
}

impl GruCellParams {
    pub fn zeros(dims: GruDims) -> Self {
        let GruDims { n_x, n_h, n_y } = dims;
        GruCellParams {
            w_g: Tensor::zeros(&[n_h, n_h]),
            w_f: Tensor::zeros(&[n_h, n_h]),
            w_r: Tensor::zeros(&[n_h, n_h]),
            u_g: Tensor::zeros(&[n_h, n_x]),
            u_f: Tensor::zeros(&[n_h, n_x]),
            u_r: Tensor::zeros(&[n_h, n_x]),
            b_g: Tensor::zeros(&[n_h]),
            b_f: Tensor::zeros(&[n_h]),
            b_r: Tensor::zeros(&[n_h]),
            v: Tensor::zeros(&[n_y, n_h]),
            b: Tensor::zeros(&[n_y]),
        }
    }

    /// Glorot-uniform matrices, zero biases except `b_f = 1`.
    pub fn init(dims: GruDims, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(dims);
        for m in [&mut p.w_g, &mut p.w_f, &mut p.w_r, &mut p.u_g, &mut p.u_f, &mut p.u_r, &mut p.v] {
            glorot_fill(m, rng);
        }
        p.b_f = Tensor::filled(&[dims.n_h], 1.0);
        p
    }

    pub fn dims(&self) -> GruDims {
        GruDims {
            n_x: self.u_g.shape().get(1).copied().unwrap_or(0),
            n_h: self.b_g.len(),
            n_y: self.b.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let GruDims { n_x, n_h, n_y } = self.dims();
        let expect: [(&str, &Tensor, Vec<usize>); 11] = [
            ("w_g", &self.w_g, vec![n_h, n_h]),
            ("w_f", &self.w_f, vec![n_h, n_h]),
            ("w_r", &self.w_r, vec![n_h, n_h]),
            ("u_g", &self.u_g, vec![n_h, n_x]),
            ("u_f", &self.u_f, vec![n_h, n_x]),
            ("u_r", &self.u_r, vec![n_h, n_x]),
            ("b_g", &self.b_g, vec![n_h]),
            ("b_f", &self.b_f, vec![n_h]),
            ("b_r", &self.b_r, vec![n_h]),
            ("v", &self.v, vec![n_y, n_h]),
            ("b", &self.b, vec![n_y]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return Err(Error::InvalidArgument(format!(
                    "gru {name}: shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::InvalidArgument(format!("gru {name}: non-finite entry")));
            }
        }
        Ok(())
    }

    pub const FIELD_NAMES: [&'static str; 11] =
        ["w_g", "w_f", "w_r", "u_g", "u_f", "u_r", "b_g", "b_f", "b_r", "v", "b"];

    pub fn fields(&self) -> [&Tensor; 11] {
        [
            &self.w_g, &self.w_f, &self.w_r, &self.u_g, &self.u_f, &self.u_r, &self.b_g, &self.b_f, &self.b_r,
            &self.v, &self.b,
        ]
    }

    pub fn fields_mut(&mut self) -> [&mut Tensor; 11] {
        [
            &mut self.w_g,
            &mut self.w_f,
            &mut self.w_r,
            &mut self.u_g,
            &mut self.u_f,
            &mut self.u_r,
            &mut self.b_g,
            &mut self.b_f,
            &mut self.b_r,
            &mut self.v,
            &mut self.b,
        ]
    }
}

pub(crate) fn glorot_fill(m: &mut Tensor, rng: &mut impl Rng) {
    let (fan_out, fan_in) = match *m.shape() {
        [o, i] => (o, i),
        _ => unreachable!("glorot_fill on a matrix"),
    };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in m.data_mut() {
        *v = rng.gen_range(-limit..=limit);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutput {
    pub h: Tensor,
    pub f: Tensor,
    pub r: Tensor,
    pub g: Tensor,
}

pub fn gru_cell_step(params: &GruCellParams, h_prev: &Tensor, x: &Tensor) -> Result<CellOutput> {
    let GruDims { n_x, n_h, .. } = params.dims();
    if h_prev.shape() != [n_h] {
        return Err(Error::shape("gru_cell_step h_prev", h_prev.shape(), &[n_h]));
    }
    if x.shape() != [n_x] {
        return Err(Error::shape("gru_cell_step x", x.shape(), &[n_x]));
    }
    let gate = |w: &Tensor, u: &Tensor, b: &Tensor, h: &Tensor| -> Result<Vec<f64>> {
        let wh = matvec(w, h)?;
        let ux = matvec(u, x)?;
        Ok((0..n_h).map(|i| wh.data()[i] + ux.data()[i] + b.data()[i]).collect())
    };
    let f: Vec<f64> = gate(&params.w_f, &params.u_f, &params.b_f, h_prev)?.into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(&params.w_r, &params.u_r, &params.b_r, h_prev)?.into_iter().map(sigmoid).collect();
    let rh = Tensor::vector(r.iter().zip(h_prev.data()).map(|(a, b)| a * b).collect());
    let g: Vec<f64> = gate(&params.w_g, &params.u_g, &params.b_g, &rh)?.into_iter().map(f64::tanh).collect();
    let h: Vec<f64> = (0..n_h).map(|i| f[i] * h_prev.data()[i] + (1.0 - f[i]) * g[i]).collect();
    Ok(CellOutput {
        h: Tensor::vector(h),
        f: Tensor::vector(f),
        r: Tensor::vector(r),
        g: Tensor::vector(g),
    })
}

/// `softmax(V h + b)` with entries floored at [`PROB_FLOOR`].
pub fn readout(params: &GruCellParams, h: &Tensor) -> Result<Tensor> {
    let logits = matvec(&params.v, h)?;
    let p = softmax(&logits.data().iter().zip(params.b.data()).map(|(a, b)| a + b).collect::<Vec<_>>());
    Ok(Tensor::vector(p.into_iter().map(|v| if v < PROB_FLOOR { PROB_FLOOR } else { v }).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub cell: CellOutput,
    pub y_hat: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruTrace {
    pub steps: Vec<GruStep>,
}

impl GruTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_hidden(&self) -> &Tensor {
        &self.steps.last().expect("trace has at least one step").cell.h
    }
}

/// Runs the cell over `xs`; the returned prediction is the readout of the
/// final state. The trace keeps every step's readout too.
pub fn gru_forward(params: &GruCellParams, h0: &Tensor, xs: &[Tensor]) -> Result<(GruTrace, Tensor)> {
    if xs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut h = h0.clone();
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let cell = gru_cell_step(params, &h, x)?;
        let y_hat = readout(params, &cell.h)?;
        let h_prev = std::mem::replace(&mut h, cell.h.clone());
        steps.push(GruStep {
            x: x.clone(),
            h_prev,
            cell,
            y_hat,
        });
    }
    let y = steps.last().map(|s| s.y_hat.clone()).expect("non-empty");
    Ok((GruTrace { steps }, y))
}

/// `−Σ y·log ŷ` for one prediction.
pub fn cross_entropy(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    if y_hat.shape() != y.shape() || y.rank() != 1 {
        return Err(Error::shape("cross_entropy", y_hat.shape(), y.shape()));
    }
    if let Some(p) = y_hat.data().iter().find(|&&p| !(p > 0.0 && p <= 1.0 + 1e-9)) {
        return Err(Error::InvalidArgument(format!("cross_entropy: probability {p} outside (0, 1]")));
    }
    let ones = y.data().iter().filter(|&&v| v == 1.0).count();
    let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != y.len() {
        return Err(Error::InvalidArgument("cross_entropy: target is not one-hot".into()));
    }
    let loss: f64 = y.data().iter().zip(y_hat.data()).filter(|(t, _)| **t != 0.0).map(|(t, p)| -t * p.ln()).sum();
    Ok(loss.max(0.0))
}

pub fn one_hot(class: usize, n: usize) -> Tensor {
    Tensor::from_fn(&[n], |i| if i == class { 1.0 } else { 0.0 })
}

/// Which readouts carry a loss term.
#[derive(Debug, Clone, Copy)]
pub enum Supervision<'a> {
    /// Only the final step, against one target.
    Final(&'a Tensor),
    /// Every step `t` against `targets[t]`, summed.
    EveryStep(&'a [Tensor]),
}

impl<'a> Supervision<'a> {
    fn terms(&self, len: usize) -> Result<Vec<(usize, &'a Tensor)>> {
        match *self {
            Supervision::Final(y) => Ok(vec![(len - 1, y)]),
            Supervision::EveryStep(ys) => {
                if ys.len() != len {
                    return Err(Error::InvalidArgument(format!(
                        "{} targets for a sequence of {len}",
                        ys.len()
                    )));
                }
                Ok(ys.iter().enumerate().collect())
            }
        }
    }
}

pub fn sequence_loss(trace: &GruTrace, supervision: Supervision<'_>) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::EmptySequence);
    }
    supervision
        .terms(trace.len())?
        .into_iter()
        .map(|(t, y)| cross_entropy(&trace.steps[t].y_hat, y))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruBackward {
    pub grads: GruGradients,
    /// `∂L/∂x_t` for every step.
    pub d_inputs: Vec<Tensor>,
    pub d_h0: Tensor,
}

/// Reverse-mode gradients of the supervised loss. With a truncation window
/// of `K` steps, the loss at step `t` only reaches back through steps
/// `t, t−1, …, t−K+1`; `None` unrolls fully.
pub fn gru_backward(
    params: &GruCellParams,
    trace: &GruTrace,
    supervision: Supervision<'_>,
    truncation: Option<usize>,
) -> Result<GruBackward> {
    if trace.is_empty() {
        return Err(Error::EmptySequence);
    }
    let dims = params.dims();
    let GruDims { n_x, n_h, n_y } = dims;
    for s in &trace.steps {
        if s.x.shape() != [n_x] || s.h_prev.shape() != [n_h] || s.y_hat.shape() != [n_y] {
            return Err(Error::InvalidArgument("trace does not match parameter shapes".into()));
        }
    }
    let window = truncation.unwrap_or(trace.len()).max(1);
    let mut grads = GruCellParams::zeros(dims);
    let mut d_inputs = vec![Tensor::zeros(&[n_x]); trace.len()];
    let mut d_h0 = Tensor::zeros(&[n_h]);

    for (t, y) in supervision.terms(trace.len())? {
        if y.shape() != [n_y] {
            return Err(Error::shape("gru_backward target", y.shape(), &[n_y]));
        }
        let step = &trace.steps[t];
        // softmax + cross-entropy fused
        let d_logits: Vec<f64> = step.y_hat.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        outer_accumulate(&mut grads.v, &d_logits, step.cell.h.data());
        for (g, d) in grads.b.data_mut().iter_mut().zip(&d_logits) {
            *g += d;
        }
        let mut dh = matvec_t(&params.v, &Tensor::vector(d_logits))?;
        let lowest = (t + 1).saturating_sub(window);
        for s in (lowest..=t).rev() {
            dh = cell_backward(params, &trace.steps[s], &dh, &mut grads, &mut d_inputs[s])?;
            if s == 0 {
                d_h0.add_assign(&dh)?;
            }
        }
    }
    Ok(GruBackward { grads, d_inputs, d_h0 })
}

/// Backpropagates `dh` through one cell; returns `∂L/∂h_prev`.
fn cell_backward(
    params: &GruCellParams,
    step: &GruStep,
    dh: &Tensor,
    grads: &mut GruGradients,
    d_x: &mut Tensor,
) -> Result<Tensor> {
    let n_h = dh.len();
    let (h_prev, f, r, g) = (step.h_prev.data(), step.cell.f.data(), step.cell.r.data(), step.cell.g.data());
    let dh = dh.data();

    let mut d_hprev: Vec<f64> = (0..n_h).map(|i| dh[i] * f[i]).collect();
    let da_f: Vec<f64> = (0..n_h).map(|i| dh[i] * (h_prev[i] - g[i]) * f[i] * (1.0 - f[i])).collect();
    let da_g: Vec<f64> = (0..n_h).map(|i| dh[i] * (1.0 - f[i]) * (1.0 - g[i] * g[i])).collect();
    let rh: Vec<f64> = (0..n_h).map(|i| r[i] * h_prev[i]).collect();

    let d_rh = matvec_t(&params.w_g, &Tensor::vector(da_g.clone()))?;
    let da_r: Vec<f64> = (0..n_h).map(|i| d_rh.data()[i] * h_prev[i] * r[i] * (1.0 - r[i])).collect();
    for i in 0..n_h {
        d_hprev[i] += d_rh.data()[i] * r[i];
    }

    outer_accumulate(&mut grads.w_g, &da_g, &rh);
    outer_accumulate(&mut grads.w_f, &da_f, h_prev);
    outer_accumulate(&mut grads.w_r, &da_r, h_prev);
    outer_accumulate(&mut grads.u_g, &da_g, step.x.data());
    outer_accumulate(&mut grads.u_f, &da_f, step.x.data());
    outer_accumulate(&mut grads.u_r, &da_r, step.x.data());
    for (acc, d) in [(&mut grads.b_g, &da_g), (&mut grads.b_f, &da_f), (&mut grads.b_r, &da_r)] {
        for (a, v) in acc.data_mut().iter_mut().zip(d) {
            *a += v;
        }
    }

    for (w, d) in [(&params.w_f, &da_f), (&params.w_r, &da_r)] {
        let back = matvec_t(w, &Tensor::vector(d.clone()))?;
        for (a, v) in d_hprev.iter_mut().zip(back.data()) {
            *a += v;
        }
    }
    for (u, d) in [(&params.u_g, &da_g), (&params.u_f, &da_f), (&params.u_r, &da_r)] {
        let back = matvec_t(u, &Tensor::vector(d.clone()))?;
        d_x.add_assign(&back)?;
    }
    Ok(Tensor::vector(d_hprev))
}

/// Per-parameter outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub cases: usize,
    /// `(field name, max relative error)` in [`GruCellParams::FIELD_NAMES`] order.
    pub max_rel_error: Vec<(&'static str, f64)>,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= self.threshold
    }
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_THRESHOLD: f64 = 1e-5;
/// Denominator floor for relative errors of near-zero gradients. Central
/// differences at step 1e-5 carry about 1e-10 of roundoff noise, so below
/// this magnitude the check is effectively absolute at 1e-9.
pub const GRADCHECK_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Compares [`gru_backward`] with central differences on `cases` random
/// cells (`n_h ≤ 8`, `T ≤ 5`) supervised at every step.
pub fn gradcheck(seed: u64, cases: usize) -> Result<GradcheckReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 11];
    for _ in 0..cases {
        let dims = GruDims {
            n_x: rng.gen_range(1..=6),
            n_h: rng.gen_range(1..=8),
            n_y: rng.gen_range(2..=5),
        };
        let t_len = rng.gen_range(1..=5);
        let mut params = GruCellParams::init(dims, &mut rng);
        for f in params.fields_mut() {
            for v in f.data_mut() {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
        let h0 = Tensor::from_fn(&[dims.n_h], |_| rng.gen_range(-0.5..0.5));
        let xs: Vec<Tensor> = (0..t_len)
            .map(|_| Tensor::from_fn(&[dims.n_x], |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let ys: Vec<Tensor> = (0..t_len).map(|_| one_hot(rng.gen_range(0..dims.n_y), dims.n_y)).collect();
        let sup = Supervision::EveryStep(&ys);
        let (trace, _) = gru_forward(&params, &h0, &xs)?;
        let analytic = gru_backward(&params, &trace, sup, None)?.grads;
        let loss_at = |p: &GruCellParams| -> Result<f64> {
            let (tr, _) = gru_forward(p, &h0, &xs)?;
            sequence_loss(&tr, sup)
        };
        for (field, slot) in worst.iter_mut().enumerate() {
            for i in 0..params.fields()[field].len() {
                let mut plus = params.clone();
                plus.fields_mut()[field].data_mut()[i] += GRADCHECK_STEP;
                let mut minus = params.clone();
                minus.fields_mut()[field].data_mut()[i] -= GRADCHECK_STEP;
                let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * GRADCHECK_STEP);
                let err = relative_error(analytic.fields()[field].data()[i], numeric);
                *slot = slot.max(err);
            }
        }
    }
    Ok(GradcheckReport {
        cases,
        max_rel_error: GruCellParams::FIELD_NAMES.iter().copied().zip(worst).collect(),
        threshold: GRADCHECK_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(n_x: usize, n_h: usize, n_y: usize) -> GruDims {
        GruDims { n_x, n_h, n_y }
    }

    #[test]
    fn zero_params_halve_the_state() {
        let p = GruCellParams::zeros(dims(2, 3, 5));
        let h = Tensor::vector(vec![0.4, -1.0, 2.0]);
        let out = gru_cell_step(&p, &h, &Tensor::vector(vec![3.0, -3.0])).unwrap();
        assert_eq!(out.f.data(), &[0.5; 3]);
        assert_eq!(out.r.data(), &[0.5; 3]);
        assert_eq!(out.g.data(), &[0.0; 3]);
        assert_eq!(out.h.data(), &[0.2, -0.5, 1.0]);
        let zero = gru_cell_step(&p, &Tensor::zeros(&[3]), &Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(zero.h.data(), &[0.0; 3]);
    }

    #[test]
    fn saturated_filter_carries_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = GruCellParams::init(dims(1, 1, 2), &mut rng);
        p.w_f = Tensor::zeros(&[1, 1]);
        p.u_f = Tensor::zeros(&[1, 1]);
        p.b_f = Tensor::vector(vec![20.0]);
        let h = Tensor::vector(vec![0.7]);
        let out = gru_cell_step(&p, &h, &Tensor::vector(vec![-0.9])).unwrap();
        assert!((out.h.data()[0] - 0.7).abs() < 1e-8);
    }

    #[test]
    fn update_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GruCellParams::init(dims(3, 4, 2), &mut rng);
        let h = Tensor::from_fn(&[4], |_| rng.gen_range(-1.0..1.0));
        let x = Tensor::from_fn(&[3], |_| rng.gen_range(-1.0..1.0));
        let o = gru_cell_step(&p, &h, &x).unwrap();
        for i in 0..4 {
            let (f, g) = (o.f.data()[i], o.g.data()[i]);
            assert_eq!(o.h.data()[i] - (f * h.data()[i] + (1.0 - f) * g), 0.0);
        }
    }

    #[test]
    fn shape_errors() {
        let p = GruCellParams::zeros(dims(2, 3, 2));
        assert!(gru_cell_step(&p, &Tensor::zeros(&[2]), &Tensor::zeros(&[2])).is_err());
        assert!(gru_cell_step(&p, &Tensor::zeros(&[3]), &Tensor::zeros(&[3])).is_err());
        assert!(matches!(gru_forward(&p, &Tensor::zeros(&[3]), &[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn zero_readout_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = GruCellParams::init(dims(2, 3, 5), &mut rng);
        p.v = Tensor::zeros(&[5, 3]);
        let xs = vec![Tensor::vector(vec![1.0, -2.0]); 3];
        let (_, y) = gru_forward(&p, &Tensor::zeros(&[3]), &xs).unwrap();
        for &v in y.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_forward_is_cell_plus_readout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GruCellParams::init(dims(2, 3, 4), &mut rng);
        let h0 = Tensor::vector(vec![0.1, 0.2, -0.3]);
        let x = Tensor::vector(vec![0.5, -0.5]);
        let (trace, y) = gru_forward(&p, &h0, std::slice::from_ref(&x)).unwrap();
        let cell = gru_cell_step(&p, &h0, &x).unwrap();
        assert_eq!(trace.final_hidden(), &cell.h);
        assert_eq!(y, readout(&p, &cell.h).unwrap());
    }

    #[test]
    fn cross_entropy_examples() {
        let y = one_hot(2, 5);
        let sure = Tensor::vector(vec![0.0, 0.0, 1.0, 0.0, 0.0].into_iter().map(|v: f64| v.max(PROB_FLOOR)).collect());
        assert!(cross_entropy(&sure, &y).unwrap().abs() < 1e-15);
        let uniform = Tensor::filled(&[5], 0.2);
        assert!((cross_entropy(&uniform, &y).unwrap() - 1.6094379124341003).abs() < 1e-12);
        let bad = Tensor::vector(vec![0.0, 0.5, 0.5, 0.0, 0.0]);
        assert!(cross_entropy(&bad, &y).is_err());
        assert!(cross_entropy(&uniform, &Tensor::filled(&[5], 0.2)).is_err());
    }

    #[test]
    fn perfect_readout_has_zero_output_gradient() {
        let mut p = GruCellParams::zeros(dims(1, 2, 3));
        // logit gap large enough that ŷ rounds to exactly one-hot
        p.b = Tensor::vector(vec![-800.0, 0.0, -800.0]);
        let xs = vec![Tensor::vector(vec![0.3]); 2];
        let (trace, y_hat) = gru_forward(&p, &Tensor::zeros(&[2]), &xs).unwrap();
        let target = one_hot(1, 3);
        let floored: Vec<f64> = target.data().iter().map(|v| v.max(PROB_FLOOR)).collect();
        assert_eq!(y_hat.data(), floored.as_slice());
        let back = gru_backward(&p, &trace, Supervision::Final(&target), None).unwrap();
        assert!(back.grads.v.data().iter().all(|v| v.abs() <= 1e-11));
        assert!(back.grads.b.data().iter().all(|v| v.abs() <= 1e-11));
    }

    #[test]
    fn window_of_full_length_equals_full_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GruCellParams::init(dims(2, 3, 3), &mut rng);
        let xs: Vec<Tensor> = (0..5).map(|_| Tensor::from_fn(&[2], |_| rng.gen_range(-1.0..1.0))).collect();
        let ys: Vec<Tensor> = (0..5).map(|t| one_hot(t % 3, 3)).collect();
        let (trace, _) = gru_forward(&p, &Tensor::zeros(&[3]), &xs).unwrap();
        let full = gru_backward(&p, &trace, Supervision::EveryStep(&ys), None).unwrap();
        let windowed = gru_backward(&p, &trace, Supervision::EveryStep(&ys), Some(5)).unwrap();
        assert_eq!(full, windowed);
        let short = gru_backward(&p, &trace, Supervision::EveryStep(&ys), Some(1)).unwrap();
        assert_ne!(full.grads.w_f, short.grads.w_f);
        // a one-step window never reaches h0 except from the first loss
        let first_only = gru_backward(&p, &trace, Supervision::Final(&ys[4]), Some(1)).unwrap();
        assert!(first_only.d_h0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradcheck_small_run_passes() {
        let report = gradcheck(11, 5).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
