//! Peephole LSTM cell with exact backpropagation through time, plus the
//! plain logistic recurrent step kept as a reference.
//!
//! One step, with `⊙` elementwise and diagonal peepholes:
//!
//! ```text
//! i_t = σ(W_xi x_t + W_hi h_{t-1} + w_ci ⊙ c_{t-1} + b_i)
//! f_t = σ(W_xf x_t + W_hf h_{t-1} + w_cf ⊙ c_{t-1} + b_f)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ tanh(W_xc x_t + W_hc h_{t-1} + b_c)
//! o_t = σ(W_xo x_t + W_ho h_{t-1} + w_co ⊙ c_t + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! The output gate looks at the *updated* cell `c_t`.

use rand::Rng;

use crate::error::{check_dim, invalid, Result};
use crate::numerics::rng::{randn_matrix, randn_vector};
use crate::numerics::{Matrix, Vector};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct CellParams<T> {
    pub w_xi: Matrix<T>,
    pub w_hi: Matrix<T>,
    pub w_xf: Matrix<T>,
    pub w_hf: Matrix<T>,
    pub w_xc: Matrix<T>,
    pub w_hc: Matrix<T>,
    pub w_xo: Matrix<T>,
    pub w_ho: Matrix<T>,
    pub w_ci: Vector<T>,
    pub w_cf: Vector<T>,
    pub w_co: Vector<T>,
    pub b_i: Vector<T>,
    pub b_f: Vector<T>,
    pub b_c: Vector<T>,
    pub b_o: Vector<T>,
}

/// Gradients share the parameter layout.
pub type CellGradients<T> = CellParams<T>;

impl<T: Scalar> CellParams<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let (d, n) = (input_dim, hidden_dim);
        CellParams {
            w_xi: Matrix::zeros(n, d),
            w_hi: Matrix::zeros(n, n),
            w_xf: Matrix::zeros(n, d),
            w_hf: Matrix::zeros(n, n),
            w_xc: Matrix::zeros(n, d),
            w_hc: Matrix::zeros(n, n),
            w_xo: Matrix::zeros(n, d),
            w_ho: Matrix::zeros(n, n),
            w_ci: Vector::zeros(n),
            w_cf: Vector::zeros(n),
            w_co: Vector::zeros(n),
            b_i: Vector::zeros(n),
            b_f: Vector::zeros(n),
            b_c: Vector::zeros(n),
            b_o: Vector::zeros(n),
        }
    }

    /// Normal(0, std²) weights and peepholes, zero biases except `b_f = forget_bias`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        input_dim: usize,
        hidden_dim: usize,
        std: f64,
        forget_bias: f64,
    ) -> Self {
        let (d, n) = (input_dim, hidden_dim);
        let mut p = Self::zeros(d, n);
        for (m, cols) in [
            (&mut p.w_xi, d),
            (&mut p.w_hi, n),
            (&mut p.w_xf, d),
            (&mut p.w_hf, n),
            (&mut p.w_xc, d),
            (&mut p.w_hc, n),
            (&mut p.w_xo, d),
            (&mut p.w_ho, n),
        ] {
            *m = randn_matrix(rng, n, cols, std);
        }
        for v in [&mut p.w_ci, &mut p.w_cf, &mut p.w_co] {
            *v = randn_vector(rng, n, std);
        }
        p.b_f = Vector::filled(n, T::lit(forget_bias));
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_xi.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_xi.rows()
    }

    /// Checks every shape against `(input_dim, hidden_dim)` and that all entries are finite.
    pub fn validate(&self) -> Result<()> {
        let (d, n) = (self.input_dim(), self.hidden_dim());
        for (name, m) in [
            ("w_xi", &self.w_xi),
            ("w_xf", &self.w_xf),
            ("w_xc", &self.w_xc),
            ("w_xo", &self.w_xo),
        ] {
            if m.shape() != (n, d) {
                return Err(invalid(format!("{name} is {:?}, expected ({n}, {d})", m.shape())));
            }
        }
        for (name, m) in [
            ("w_hi", &self.w_hi),
            ("w_hf", &self.w_hf),
            ("w_hc", &self.w_hc),
            ("w_ho", &self.w_ho),
        ] {
            if m.shape() != (n, n) {
                return Err(invalid(format!("{name} is {:?}, expected ({n}, {n})", m.shape())));
            }
        }
        for (name, v) in [
            ("w_ci", &self.w_ci),
            ("w_cf", &self.w_cf),
            ("w_co", &self.w_co),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_c", &self.b_c),
            ("b_o", &self.b_o),
        ] {
            check_dim(name, n, v.dim())?;
        }
        if !self.all_finite() {
            return Err(invalid("cell parameters contain non-finite values"));
        }
        Ok(())
    }
}

impl<T: Scalar> ParamSet<T> for CellParams<T> {
    fn tensors(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("w_xi", self.w_xi.as_slice()),
            ("w_hi", self.w_hi.as_slice()),
            ("w_xf", self.w_xf.as_slice()),
            ("w_hf", self.w_hf.as_slice()),
            ("w_xc", self.w_xc.as_slice()),
            ("w_hc", self.w_hc.as_slice()),
            ("w_xo", self.w_xo.as_slice()),
            ("w_ho", self.w_ho.as_slice()),
            ("w_ci", &self.w_ci),
            ("w_cf", &self.w_cf),
            ("w_co", &self.w_co),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_c", &self.b_c),
            ("b_o", &self.b_o),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.w_xi.as_mut_slice(),
            self.w_hi.as_mut_slice(),
            self.w_xf.as_mut_slice(),
            self.w_hf.as_mut_slice(),
            self.w_xc.as_mut_slice(),
            self.w_hc.as_mut_slice(),
            self.w_xo.as_mut_slice(),
            self.w_ho.as_mut_slice(),
            &mut self.w_ci,
            &mut self.w_cf,
            &mut self.w_co,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState<T> {
    pub h: Vector<T>,
    pub c: Vector<T>,
}

impl<T: Scalar> CellState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        CellState {
            h: Vector::zeros(hidden_dim),
            c: Vector::zeros(hidden_dim),
        }
    }
}

/// Everything one step computed, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T> {
    pub x: Vector<T>,
    pub i: Vector<T>,
    pub f: Vector<T>,
    /// Candidate `tanh(W_xc x + W_hc h + b_c)`.
    pub g: Vector<T>,
    pub o: Vector<T>,
    pub c: Vector<T>,
    pub tanh_c: Vector<T>,
    pub h: Vector<T>,
}

impl<T: Scalar> StepRecord<T> {
    pub fn state(&self) -> CellState<T> {
        CellState {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }
}

/// Advances the cell by one frame.
pub fn cell_step<T: Scalar>(
    p: &CellParams<T>,
    s: &CellState<T>,
    x: &[T],
) -> Result<(CellState<T>, StepRecord<T>)> {
    let n = p.hidden_dim();
    check_dim("cell input", p.input_dim(), x.len())?;
    check_dim("hidden state", n, s.h.dim())?;
    check_dim("memory cell", n, s.c.dim())?;
    let rec = step_unchecked(p, &s.h, &s.c, x);
    Ok((rec.state(), rec))
}

fn step_unchecked<T: Scalar>(p: &CellParams<T>, h: &[T], c_prev: &[T], x: &[T]) -> StepRecord<T> {
    let n = p.hidden_dim();
    let mut ai = p.b_i.to_vec();
    let mut af = p.b_f.to_vec();
    let mut ag = p.b_c.to_vec();
    let mut ao = p.b_o.to_vec();
    p.w_xi.matvec_acc(x, &mut ai);
    p.w_hi.matvec_acc(h, &mut ai);
    p.w_xf.matvec_acc(x, &mut af);
    p.w_hf.matvec_acc(h, &mut af);
    p.w_xc.matvec_acc(x, &mut ag);
    p.w_hc.matvec_acc(h, &mut ag);
    p.w_xo.matvec_acc(x, &mut ao);
    p.w_ho.matvec_acc(h, &mut ao);

    let mut i = vec![T::zero(); n];
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); n];
    let mut o = vec![T::zero(); n];
    let mut c = vec![T::zero(); n];
    let mut tanh_c = vec![T::zero(); n];
    let mut h_new = vec![T::zero(); n];
    for j in 0..n {
        i[j] = (ai[j] + p.w_ci[j] * c_prev[j]).sigmoid();
        f[j] = (af[j] + p.w_cf[j] * c_prev[j]).sigmoid();
        g[j] = ag[j].tanh();
        c[j] = f[j] * c_prev[j] + i[j] * g[j];
        o[j] = (ao[j] + p.w_co[j] * c[j]).sigmoid();
        tanh_c[j] = c[j].tanh();
        h_new[j] = o[j] * tanh_c[j];
    }
    StepRecord {
        x: x.to_vec().into(),
        i: i.into(),
        f: f.into(),
        g: g.into(),
        o: o.into(),
        c: c.into(),
        tanh_c: tanh_c.into(),
        h: h_new.into(),
    }
}

/// `σ(W_ih x + W_hh h + b_h)` with the logistic σ.
pub fn vanilla_rnn_step<T: Scalar>(
    w_ih: &Matrix<T>,
    w_hh: &Matrix<T>,
    b_h: &[T],
    h: &[T],
    x: &[T],
) -> Result<Vector<T>> {
    let n = b_h.len();
    check_dim("W_ih rows", n, w_ih.rows())?;
    check_dim("W_hh rows", n, w_hh.rows())?;
    check_dim("W_hh cols", n, w_hh.cols())?;
    check_dim("input", w_ih.cols(), x.len())?;
    check_dim("hidden state", n, h.len())?;
    let mut a = b_h.to_vec();
    w_ih.matvec_acc(x, &mut a);
    w_hh.matvec_acc(h, &mut a);
    Ok(a.into_iter().map(Scalar::sigmoid).collect())
}

/// Per-frame records of one unrolled sequence, starting from `h_0 = c_0 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTape<T> {
    pub steps: Vec<StepRecord<T>>,
}

impl<T: Scalar> ForwardTape<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn hidden(&self, t: usize) -> &[T] {
        &self.steps[t].h
    }
}

pub fn forward_sequence<T: Scalar, X: AsRef<[T]>>(p: &CellParams<T>, xs: &[X]) -> Result<ForwardTape<T>> {
    if xs.is_empty() {
        return Err(invalid("forward over an empty sequence"));
    }
    let mut state = CellState::zeros(p.hidden_dim());
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let (next, rec) = cell_step(p, &state, x.as_ref())?;
        state = next;
        steps.push(rec);
    }
    Ok(ForwardTape { steps })
}

/// Gradients of a summed per-frame loss with respect to the cell and its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Backward<T> {
    pub grads: CellGradients<T>,
    /// `∂L/∂x_t` for every frame, used to continue into the input projection.
    pub dx: Vec<Vector<T>>,
}

/// Backpropagation through time.
///
/// `dh[t]` is the loss gradient arriving at `h_t` from the output head. With
/// `truncation = Some(k)` the recurrent gradient is cut at every multiple of
/// `k` frames (block-truncated BPTT); `None` propagates through the whole
/// sequence.
pub fn backward_sequence<T: Scalar, D: AsRef<[T]>>(
    p: &CellParams<T>,
    tape: &ForwardTape<T>,
    dh: &[D],
    truncation: Option<usize>,
) -> Result<Backward<T>> {
    if dh.len() != tape.len() {
        return Err(invalid(format!(
            "upstream gradient has {} frames, tape has {}",
            dh.len(),
            tape.len()
        )));
    }
    if truncation == Some(0) {
        return Err(invalid("truncation length must be at least 1"));
    }
    let (d, n) = (p.input_dim(), p.hidden_dim());
    let mut g = CellParams::zeros(d, n);
    let mut dx = vec![Vector::zeros(d); tape.len()];
    let zeros = vec![T::zero(); n];
    let mut dh_next = vec![T::zero(); n];
    let mut dc_next = vec![T::zero(); n];

    let mut dai = vec![T::zero(); n];
    let mut daf = vec![T::zero(); n];
    let mut dag = vec![T::zero(); n];
    let mut dao = vec![T::zero(); n];

    for t in (0..tape.len()).rev() {
        let s = &tape.steps[t];
        let (h_prev, c_prev): (&[T], &[T]) = if t == 0 {
            (&zeros, &zeros)
        } else {
            (&tape.steps[t - 1].h, &tape.steps[t - 1].c)
        };
        let up = dh[t].as_ref();
        check_dim("upstream gradient", n, up.len())?;

        let one = T::one();
        let mut dc_prev = vec![T::zero(); n];
        for j in 0..n {
            let dhj = up[j] + dh_next[j];
            let (i, f, gg, o, tc) = (s.i[j], s.f[j], s.g[j], s.o[j], s.tanh_c[j]);
            dao[j] = dhj * tc * o * (one - o);
            let dc = dc_next[j] + dhj * o * (one - tc * tc) + dao[j] * p.w_co[j];
            daf[j] = dc * c_prev[j] * f * (one - f);
            dai[j] = dc * gg * i * (one - i);
            dag[j] = dc * i * (one - gg * gg);
            g.w_co[j] = g.w_co[j] + dao[j] * s.c[j];
            g.w_ci[j] = g.w_ci[j] + dai[j] * c_prev[j];
            g.w_cf[j] = g.w_cf[j] + daf[j] * c_prev[j];
            dc_prev[j] = dc * f + dai[j] * p.w_ci[j] + daf[j] * p.w_cf[j];
        }

        for (b, da) in [
            (&mut g.b_i, &dai),
            (&mut g.b_f, &daf),
            (&mut g.b_c, &dag),
            (&mut g.b_o, &dao),
        ] {
            for (bj, &v) in b.iter_mut().zip(da.iter()) {
                *bj = *bj + v;
            }
        }
        g.w_xi.add_outer(&dai, &s.x);
        g.w_xf.add_outer(&daf, &s.x);
        g.w_xc.add_outer(&dag, &s.x);
        g.w_xo.add_outer(&dao, &s.x);
        g.w_hi.add_outer(&dai, h_prev);
        g.w_hf.add_outer(&daf, h_prev);
        g.w_hc.add_outer(&dag, h_prev);
        g.w_ho.add_outer(&dao, h_prev);

        let dxt = &mut dx[t];
        p.w_xi.tr_matvec_acc(&dai, dxt);
        p.w_xf.tr_matvec_acc(&daf, dxt);
        p.w_xc.tr_matvec_acc(&dag, dxt);
        p.w_xo.tr_matvec_acc(&dao, dxt);

        let cut = matches!(truncation, Some(k) if t % k == 0);
        if cut {
            dh_next.fill(T::zero());
            dc_next.fill(T::zero());
        } else {
            dh_next.fill(T::zero());
            p.w_hi.tr_matvec_acc(&dai, &mut dh_next);
            p.w_hf.tr_matvec_acc(&daf, &mut dh_next);
            p.w_hc.tr_matvec_acc(&dag, &mut dh_next);
            p.w_ho.tr_matvec_acc(&dao, &mut dh_next);
            dc_next = dc_prev;
        }
    }
    Ok(Backward { grads: g, dx })
}
