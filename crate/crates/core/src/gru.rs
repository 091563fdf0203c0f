//! Gated recurrent unit: a single cell with exact forward and backward
//! passes, unidirectional unrolling with backpropagation through time, and
//! the bidirectional encoder whose output is the forward direction's last
//! state concatenated with the backward direction's state at position one.
//!
//! Cell equations, with `x` the input and `h` the previous state:
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h̃  = tanh(W_h x + r ⊙ (U_h h) + b_h)
//! h' = z ⊙ h + (1 − z) ⊙ h̃
//! ```
//!
//! The reset gate multiplies `U_h h`, not `h` before the product.

use crate::error::{Error, Result};
use crate::params::{mat_ref, prefixed, vec_ref, ParamSet, TensorRef};
use crate::tensor::{assert_finite, concat, sigmoid_scalar, Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vector,
    pub b_r: Vector,
    pub b_h: Vector,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_z: Matrix::zeros(hidden_dim, input_dim),
            w_r: Matrix::zeros(hidden_dim, input_dim),
            w_h: Matrix::zeros(hidden_dim, input_dim),
            u_z: Matrix::zeros(hidden_dim, hidden_dim),
            u_r: Matrix::zeros(hidden_dim, hidden_dim),
            u_h: Matrix::zeros(hidden_dim, hidden_dim),
            b_z: Vector::zeros(hidden_dim),
            b_r: Vector::zeros(hidden_dim),
            b_h: Vector::zeros(hidden_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows()
    }

    /// Checks that the nine tensors agree on `(input_dim, hidden_dim)`.
    pub fn validate(&self) -> Result<()> {
        let (h, d) = self.w_z.shape();
        let bad = |name: &str, got: String, want: String| Error::Shape {
            op: "GruParams",
            left: format!("{name} {got}"),
            right: want,
        };
        for (name, m) in [("w_r", &self.w_r), ("w_h", &self.w_h)] {
            if m.shape() != (h, d) {
                return Err(bad(name, format!("{:?}", m.shape()), format!("{:?}", (h, d))));
            }
        }
        for (name, m) in [("u_z", &self.u_z), ("u_r", &self.u_r), ("u_h", &self.u_h)] {
            if m.shape() != (h, h) {
                return Err(bad(name, format!("{:?}", m.shape()), format!("{:?}", (h, h))));
            }
        }
        for (name, b) in [("b_z", &self.b_z), ("b_r", &self.b_r), ("b_h", &self.b_h)] {
            if b.len() != h {
                return Err(bad(name, format!("[{}]", b.len()), format!("[{h}]")));
            }
        }
        Ok(())
    }
}

impl ParamSet for GruParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            mat_ref("", "w_z", &self.w_z),
            mat_ref("", "w_r", &self.w_r),
            mat_ref("", "w_h", &self.w_h),
            mat_ref("", "u_z", &self.u_z),
            mat_ref("", "u_r", &self.u_r),
            mat_ref("", "u_h", &self.u_h),
            vec_ref("", "b_z", &self.b_z),
            vec_ref("", "b_r", &self.b_r),
            vec_ref("", "b_h", &self.b_h),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_z.as_mut_slice(),
            self.w_r.as_mut_slice(),
            self.w_h.as_mut_slice(),
            self.u_z.as_mut_slice(),
            self.u_r.as_mut_slice(),
            self.u_h.as_mut_slice(),
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }
}

/// Everything one cell step computed, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellTrace {
    pub x: Vector,
    pub h_prev: Vector,
    pub z: Vector,
    pub r: Vector,
    pub h_tilde: Vector,
    pub h_new: Vector,
    /// `U_h · h_prev`, needed for the reset-gate gradient.
    pub u_h_prev: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruGrads {
    pub params: GruParams,
    pub d_x: Vector,
    pub d_h_prev: Vector,
}

pub fn gru_forward(p: &GruParams, x: &Vector, h_prev: &Vector) -> GruCellTrace {
    let h = p.hidden_dim();
    if x.len() != p.input_dim() || h_prev.len() != h {
        panic!(
            "gru_forward: cell {}->{} given input of length {} and state of length {}",
            p.input_dim(),
            h,
            x.len(),
            h_prev.len()
        );
    }
    let mut z = p.b_z.clone();
    p.w_z.matvec_acc(x, &mut z);
    p.u_z.matvec_acc(h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));

    let mut r = p.b_r.clone();
    p.w_r.matvec_acc(x, &mut r);
    p.u_r.matvec_acc(h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));

    let mut u_h_prev = Vector::zeros(h);
    p.u_h.matvec_acc(h_prev, &mut u_h_prev);
    let mut h_tilde = p.b_h.clone();
    p.w_h.matvec_acc(x, &mut h_tilde);
    for i in 0..h {
        h_tilde[i] = (h_tilde[i] + r[i] * u_h_prev[i]).tanh();
    }

    let h_new = Vector::from_vec(
        (0..h)
            .map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * h_tilde[i])
            .collect(),
    );
    assert_finite("gru_forward", &h_tilde);
    GruCellTrace {
        x: x.clone(),
        h_prev: h_prev.clone(),
        z,
        r,
        h_tilde,
        h_new,
        u_h_prev,
    }
}

/// Adds this step's parameter gradients into `acc` and returns
/// `(∂L/∂x, ∂L/∂h_prev)` for the upstream gradient `d_h_new`.
pub fn gru_backward_acc(
    p: &GruParams,
    trace: &GruCellTrace,
    d_h_new: &[f64],
    acc: &mut GruParams,
) -> (Vector, Vector) {
    let h = p.hidden_dim();
    if d_h_new.len() != h || trace.h_new.len() != h || trace.x.len() != p.input_dim() {
        panic!(
            "gru_backward: cell {}->{} given trace {}->{} and gradient of length {}",
            p.input_dim(),
            h,
            trace.x.len(),
            trace.h_new.len(),
            d_h_new.len()
        );
    }
    let GruCellTrace {
        x,
        h_prev,
        z,
        r,
        h_tilde,
        u_h_prev,
        ..
    } = trace;

    let mut d_h_prev = Vector::zeros(h);
    let mut d_z_pre = vec![0.0; h];
    let mut d_r_pre = vec![0.0; h];
    let mut d_h_pre = vec![0.0; h];
    let mut d_u_h = vec![0.0; h];
    for i in 0..h {
        let g = d_h_new[i];
        d_h_prev[i] = g * z[i];
        let d_z = g * (h_prev[i] - h_tilde[i]);
        let d_ht = g * (1.0 - z[i]);
        d_z_pre[i] = d_z * z[i] * (1.0 - z[i]);
        d_h_pre[i] = d_ht * (1.0 - h_tilde[i] * h_tilde[i]);
        let d_r = d_h_pre[i] * u_h_prev[i];
        d_r_pre[i] = d_r * r[i] * (1.0 - r[i]);
        d_u_h[i] = d_h_pre[i] * r[i];
    }

    acc.w_z.add_outer(&d_z_pre, x);
    acc.w_r.add_outer(&d_r_pre, x);
    acc.w_h.add_outer(&d_h_pre, x);
    acc.u_z.add_outer(&d_z_pre, h_prev);
    acc.u_r.add_outer(&d_r_pre, h_prev);
    acc.u_h.add_outer(&d_u_h, h_prev);
    for i in 0..h {
        acc.b_z[i] += d_z_pre[i];
        acc.b_r[i] += d_r_pre[i];
        acc.b_h[i] += d_h_pre[i];
    }

    let mut d_x = Vector::zeros(p.input_dim());
    p.w_z.matvec_t_acc(&d_z_pre, &mut d_x);
    p.w_r.matvec_t_acc(&d_r_pre, &mut d_x);
    p.w_h.matvec_t_acc(&d_h_pre, &mut d_x);
    p.u_z.matvec_t_acc(&d_z_pre, &mut d_h_prev);
    p.u_r.matvec_t_acc(&d_r_pre, &mut d_h_prev);
    p.u_h.matvec_t_acc(&d_u_h, &mut d_h_prev);
    assert_finite("gru_backward", &d_h_prev);
    (d_x, d_h_prev)
}

pub fn gru_backward(p: &GruParams, trace: &GruCellTrace, d_h_new: &Vector) -> GruGrads {
    let mut params = GruParams::zeros(p.input_dim(), p.hidden_dim());
    let (d_x, d_h_prev) = gru_backward_acc(p, trace, d_h_new, &mut params);
    GruGrads {
        params,
        d_x,
        d_h_prev,
    }
}

pub fn rnn_unroll(p: &GruParams, xs: &[Vector], h0: &Vector) -> Result<Vec<GruCellTrace>> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("rnn_unroll needs at least one input"));
    }
    let mut traces: Vec<GruCellTrace> = Vec::with_capacity(xs.len());
    for x in xs {
        let h_prev = traces.last().map_or(h0, |t| &t.h_new);
        let t = gru_forward(p, x, h_prev);
        traces.push(t);
    }
    Ok(traces)
}

/// Backpropagation through time for an unroll whose only external gradient
/// arrives at the final state. Returns `∂L/∂x_t` for every step, in input
/// order, and accumulates parameter gradients into `acc`.
pub fn rnn_backward(
    p: &GruParams,
    traces: &[GruCellTrace],
    d_last: &[f64],
    acc: &mut GruParams,
) -> Vec<Vector> {
    let mut d_h = d_last.to_vec();
    let mut d_xs = vec![Vector::default(); traces.len()];
    for (t, trace) in traces.iter().enumerate().rev() {
        let (d_x, d_h_prev) = gru_backward_acc(p, trace, &d_h, acc);
        d_xs[t] = d_x;
        d_h = d_h_prev.into_vec();
    }
    d_xs
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiRnnParams {
    pub fwd: GruParams,
    pub bwd: GruParams,
}

impl BiRnnParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            fwd: GruParams::zeros(input_dim, hidden_dim),
            bwd: GruParams::zeros(input_dim, hidden_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.fwd.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.fwd.validate()?;
        self.bwd.validate()?;
        if self.fwd.w_z.shape() != self.bwd.w_z.shape() {
            return Err(Error::Shape {
                op: "BiRnnParams",
                left: format!("forward {:?}", self.fwd.w_z.shape()),
                right: format!("backward {:?}", self.bwd.w_z.shape()),
            });
        }
        Ok(())
    }
}

impl ParamSet for BiRnnParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = prefixed("fwd", self.fwd.tensors());
        out.extend(prefixed("bwd", self.bwd.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.fwd.tensors_mut();
        out.extend(self.bwd.tensors_mut());
        out
    }
}

/// Forward traces in input order; backward traces in the order the backward
/// direction consumed them (last input first).
#[derive(Debug, Clone, PartialEq)]
pub struct BiRnnTrace {
    pub fwd: Vec<GruCellTrace>,
    pub bwd: Vec<GruCellTrace>,
}

pub fn birnn_forward(p: &BiRnnParams, xs: &[Vector]) -> Result<(Vector, BiRnnTrace)> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("birnn_encode needs at least one input"));
    }
    let h0 = Vector::zeros(p.hidden_dim());
    let fwd = rnn_unroll(&p.fwd, xs, &h0)?;
    let reversed: Vec<Vector> = xs.iter().rev().cloned().collect();
    let bwd = rnn_unroll(&p.bwd, &reversed, &h0)?;
    let out = concat(&fwd[fwd.len() - 1].h_new, &bwd[bwd.len() - 1].h_new);
    Ok((out, BiRnnTrace { fwd, bwd }))
}

pub fn birnn_encode(p: &BiRnnParams, xs: &[Vector]) -> Result<Vector> {
    birnn_forward(p, xs).map(|(out, _)| out)
}

/// Gradient of a bidirectional encoding. `d_out` has length `2·hidden`;
/// returns `∂L/∂x_t` in input order.
pub fn birnn_backward(
    p: &BiRnnParams,
    trace: &BiRnnTrace,
    d_out: &[f64],
    acc: &mut BiRnnParams,
) -> Vec<Vector> {
    let h = p.hidden_dim();
    assert_eq!(d_out.len(), 2 * h, "birnn_backward: gradient length");
    let mut d_xs = rnn_backward(&p.fwd, &trace.fwd, &d_out[..h], &mut acc.fwd);
    let d_rev = rnn_backward(&p.bwd, &trace.bwd, &d_out[h..], &mut acc.bwd);
    for (d, e) in d_xs.iter_mut().zip(d_rev.iter().rev()) {
        for (a, b) in d.iter_mut().zip(e.iter()) {
            *a += b;
        }
    }
    d_xs
}
