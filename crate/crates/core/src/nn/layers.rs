//! LSTM and dense layer parameters and the single-step LSTM cell.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{logistic, Scalar};
use crate::tensor::{gemv_acc, Tensor};

/// Gate blocks, in the row order used by the stacked weight matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];
}

/// One LSTM layer. The four gates are stacked row-wise in `w` (`4u × in`),
/// `u` (`4u × u`) and `b` (`4u`), ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams<T> {
    pub w: Tensor<T>,
    pub u: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> LstmLayerParams<T> {
    pub fn zeros(in_dim: usize, units: usize) -> Self {
        Self {
            w: Tensor::zeros(&[4 * units, in_dim]),
            u: Tensor::zeros(&[4 * units, units]),
            b: Tensor::zeros(&[4 * units]),
        }
    }

    /// Glorot-uniform weights per gate matrix, zero biases, forget bias 1.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, units: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(in_dim, units);
        let lim_w = (6.0 / (in_dim + units) as f64).sqrt();
        let lim_u = (6.0 / (units + units) as f64).sqrt();
        for v in p.w.as_mut_slice() {
            *v = T::of((2.0 * rng.random::<f64>() - 1.0) * lim_w);
        }
        for v in p.u.as_mut_slice() {
            *v = T::of((2.0 * rng.random::<f64>() - 1.0) * lim_u);
        }
        let f = Gate::Forget as usize;
        p.b.as_mut_slice()[f * units..(f + 1) * units].fill(T::one());
        p
    }

    pub fn units(&self) -> usize {
        self.u.shape()[1]
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn gate_w(&self, g: Gate) -> &[T] {
        let n = self.units() * self.in_dim();
        &self.w.as_slice()[g as usize * n..(g as usize + 1) * n]
    }

    pub fn gate_u(&self, g: Gate) -> &[T] {
        let n = self.units() * self.units();
        &self.u.as_slice()[g as usize * n..(g as usize + 1) * n]
    }

    pub fn gate_b(&self, g: Gate) -> &[T] {
        let n = self.units();
        &self.b.as_slice()[g as usize * n..(g as usize + 1) * n]
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len()
    }
}

/// `y = W·x + b`, identity activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: Tensor::zeros(&[out_dim, in_dim]),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(in_dim, out_dim);
        let lim = (6.0 / (in_dim + out_dim) as f64).sqrt();
        for v in p.w.as_mut_slice() {
            *v = T::of((2.0 * rng.random::<f64>() - 1.0) * lim);
        }
        p
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    #[inline]
    pub(crate) fn apply(&self, x: &[T], out: &mut [T]) {
        out.copy_from_slice(self.b.as_slice());
        gemv_acc(out, self.w.as_slice(), self.in_dim(), x);
    }
}

/// Cell step writing into caller buffers. `gates` receives the activated
/// i, f, g, o blocks.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn cell_step<T: Scalar>(
    p: &LstmLayerParams<T>,
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    gates: &mut [T],
    c: &mut [T],
    tanh_c: &mut [T],
    h: &mut [T],
) {
    let u = p.units();
    gates.copy_from_slice(p.b.as_slice());
    gemv_acc(gates, p.w.as_slice(), p.in_dim(), x);
    gemv_acc(gates, p.u.as_slice(), u, h_prev);
    let (ifo_i, rest) = gates.split_at_mut(u);
    let (ifo_f, rest) = rest.split_at_mut(u);
    let (cand, ifo_o) = rest.split_at_mut(u);
    for k in 0..u {
        let i = logistic(ifo_i[k]);
        let f = logistic(ifo_f[k]);
        let g = cand[k].tanh();
        let o = logistic(ifo_o[k]);
        ifo_i[k] = i;
        ifo_f[k] = f;
        cand[k] = g;
        ifo_o[k] = o;
        let ck = f * c_prev[k] + i * g;
        let tc = ck.tanh();
        c[k] = ck;
        tanh_c[k] = tc;
        h[k] = o * tc;
    }
}

/// Intermediates of one cell step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCache<T> {
    pub input_gate: Vec<T>,
    pub forget_gate: Vec<T>,
    pub candidate: Vec<T>,
    pub output_gate: Vec<T>,
    pub tanh_c: Vec<T>,
}

/// One LSTM time step: returns `(h_t, c_t, cache)`.
pub fn lstm_cell_forward<T: Scalar>(
    params: &LstmLayerParams<T>,
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
) -> Result<(Vec<T>, Vec<T>, CellCache<T>)> {
    let u = params.units();
    if x.len() != params.in_dim() {
        return Err(Error::dim("x_t", params.in_dim(), x.len()));
    }
    if h_prev.len() != u {
        return Err(Error::dim("h_prev", u, h_prev.len()));
    }
    if c_prev.len() != u {
        return Err(Error::dim("c_prev", u, c_prev.len()));
    }
    let mut gates = vec![T::zero(); 4 * u];
    let mut c = vec![T::zero(); u];
    let mut tc = vec![T::zero(); u];
    let mut h = vec![T::zero(); u];
    cell_step(
        params, x, h_prev, c_prev, &mut gates, &mut c, &mut tc, &mut h,
    );
    if !h.iter().chain(&c).all(|v| v.is_finite()) {
        return Err(Error::NonFiniteActivation {
            layer: "cell".into(),
            time: 0,
        });
    }
    let cache = CellCache {
        input_gate: gates[..u].to_vec(),
        forget_gate: gates[u..2 * u].to_vec(),
        candidate: gates[2 * u..3 * u].to_vec(),
        output_gate: gates[3 * u..].to_vec(),
        tanh_c: tc,
    };
    Ok((h, c, cache))
}
