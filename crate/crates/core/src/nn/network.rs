//! The stacked LSTM → dense regressor, its forward pass and truncated BPTT.

use rayon::prelude::*;

use crate::data::sequence_rng;
use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Scalar};
use crate::tensor::{gemv_t_acc, outer_acc, Tensor};

use super::layers::{cell_step, DenseParams, LstmLayerParams};

/// Layer names: `LSTM1..LSTMk` followed by `Dense`.
pub fn layer_names(lstm_layers: usize) -> Vec<String> {
    (1..=lstm_layers)
        .map(|i| format!("LSTM{i}"))
        .chain(std::iter::once("Dense".to_string()))
        .collect()
}

/// Number of trainable scalars for the given architecture.
pub fn param_count(in_dim: usize, sizes: &[usize], out_dim: usize) -> usize {
    let mut n = 0;
    let mut prev = in_dim;
    for &u in sizes {
        n += 4 * (u * prev + u * u + u);
        prev = u;
    }
    n + (prev + 1) * out_dim
}

/// Input features → LSTM stack → dense output.
#[derive(Debug, Clone)]
pub struct Network<T> {
    lstm: Vec<LstmLayerParams<T>>,
    dense: DenseParams<T>,
    generation: u64,
}

impl<T: Scalar> PartialEq for Network<T> {
    fn eq(&self, other: &Self) -> bool {
        self.lstm == other.lstm && self.dense == other.dense
    }
}

/// Which layers an optimizer may update, indexed like [`layer_names`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainMask {
    trainable: Vec<bool>,
}

impl TrainMask {
    pub fn all(layers: usize) -> Self {
        Self {
            trainable: vec![true; layers],
        }
    }

    pub fn from_flags(trainable: Vec<bool>) -> Self {
        Self { trainable }
    }

    pub fn is_trainable(&self, layer: usize) -> bool {
        self.trainable[layer]
    }

    pub fn flags(&self) -> &[bool] {
        &self.trainable
    }

    pub fn len(&self) -> usize {
        self.trainable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trainable.is_empty()
    }
}

/// Per-sequence recurrent state, `(h, c)` for each LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqState<T> {
    pub h: Vec<Vec<T>>,
    pub c: Vec<Vec<T>>,
}

/// Recurrent state for a whole batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchState<T> {
    pub seqs: Vec<SeqState<T>>,
}

#[derive(Debug, Clone)]
struct LayerTrace<T> {
    /// `(W+1) × u`, slot 0 holds the incoming state.
    h: Vec<T>,
    c: Vec<T>,
    /// `W × 4u` activated gates.
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

#[derive(Debug, Clone)]
struct SeqCache<T> {
    layers: Vec<LayerTrace<T>>,
    preds: Vec<T>,
}

/// Everything `backward` needs from a `forward` call.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    generation: u64,
    sizes: Vec<usize>,
    batch: usize,
    time: usize,
    features: Tensor<T>,
    seqs: Vec<SeqCache<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Recurrent state after the last time step, for carrying into the next
    /// window.
    pub fn final_state(&self) -> BatchState<T> {
        BatchState {
            seqs: self
                .seqs
                .iter()
                .map(|s| SeqState {
                    h: s.layers
                        .iter()
                        .map(|l| l.h[self.time * (l.h.len() / (self.time + 1))..].to_vec())
                        .collect(),
                    c: s.layers
                        .iter()
                        .map(|l| l.c[self.time * (l.c.len() / (self.time + 1))..].to_vec())
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Gradients, shaped exactly like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub lstm: Vec<LstmLayerParams<T>>,
    pub dense: DenseParams<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            lstm: net
                .lstm
                .iter()
                .map(|l| LstmLayerParams::zeros(l.in_dim(), l.units()))
                .collect(),
            dense: DenseParams::zeros(net.dense.in_dim(), net.dense.out_dim()),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::new();
        for l in &self.lstm {
            v.extend([&l.w, &l.u, &l.b]);
        }
        v.extend([&self.dense.w, &self.dense.b]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for l in &mut self.lstm {
            v.extend([&mut l.w, &mut l.u, &mut l.b]);
        }
        v.extend([&mut self.dense.w, &mut self.dense.b]);
        v
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn global_norm(&self) -> T {
        self.tensors().iter().map(|t| t.sum_sq()).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, k: T) {
        for t in self.tensors_mut() {
            t.scale(k);
        }
    }

    pub fn max_abs(&self) -> T {
        self.tensors()
            .iter()
            .fold(T::zero(), |m, t| m.max(t.max_abs()))
    }
}

/// Mean squared error over every position, with compensated summation.
pub fn mse<T: Scalar>(predictions: &Tensor<T>, labels: &Tensor<T>) -> Result<T> {
    if predictions.shape() != labels.shape() {
        return Err(Error::dim(
            "labels",
            format!("{:?}", predictions.shape()),
            format!("{:?}", labels.shape()),
        ));
    }
    if predictions.is_empty() {
        return Err(Error::Parameter("mse of empty tensors".into()));
    }
    let mut s = CompensatedSum::new();
    for (p, y) in predictions.as_slice().iter().zip(labels.as_slice()) {
        let d = *p - *y;
        s.add(d * d);
    }
    Ok(s.value() / T::of(predictions.len() as f64))
}

impl<T: Scalar> Network<T> {
    /// Glorot-uniform network; layer `k` draws from substream `k` of `seed`,
    /// so reinitializing one layer does not disturb the others.
    pub fn init(in_dim: usize, sizes: &[usize], out_dim: usize, seed: u64) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) || in_dim == 0 || out_dim == 0 {
            return Err(Error::Parameter(format!(
                "layer sizes must be non-empty and positive, got {sizes:?}"
            )));
        }
        let mut lstm = Vec::with_capacity(sizes.len());
        let mut prev = in_dim;
        for (k, &u) in sizes.iter().enumerate() {
            let mut rng = sequence_rng(seed, k as u64);
            lstm.push(LstmLayerParams::glorot(prev, u, &mut rng));
            prev = u;
        }
        let mut rng = sequence_rng(seed, sizes.len() as u64);
        let dense = DenseParams::glorot(prev, out_dim, &mut rng);
        Ok(Self {
            lstm,
            dense,
            generation: 0,
        })
    }

    pub fn zeros(in_dim: usize, sizes: &[usize], out_dim: usize) -> Result<Self> {
        let mut net = Self::init(in_dim, sizes, out_dim, 0)?;
        for t in net.tensors_mut() {
            t.fill(T::zero());
        }
        Ok(net)
    }

    pub fn from_layers(lstm: Vec<LstmLayerParams<T>>, dense: DenseParams<T>) -> Result<Self> {
        if lstm.is_empty() {
            return Err(Error::Parameter("need at least one LSTM layer".into()));
        }
        for k in 1..lstm.len() {
            if lstm[k].in_dim() != lstm[k - 1].units() {
                return Err(Error::dim(
                    "lstm input width",
                    lstm[k - 1].units(),
                    lstm[k].in_dim(),
                ));
            }
        }
        for l in &lstm {
            if l.u.shape() != [4 * l.units(), l.units()]
                || l.b.shape() != [4 * l.units()]
                || l.w.shape()[0] != 4 * l.units()
            {
                return Err(Error::dim(
                    "lstm params",
                    "stacked 4u rows",
                    format!("{:?}", l.w.shape()),
                ));
            }
        }
        if dense.in_dim() != lstm.last().unwrap().units() || dense.b.shape() != [dense.out_dim()] {
            return Err(Error::dim(
                "dense input width",
                lstm.last().unwrap().units(),
                dense.in_dim(),
            ));
        }
        Ok(Self {
            lstm,
            dense,
            generation: 0,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.lstm[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.dense.out_dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.lstm.iter().map(|l| l.units()).collect()
    }

    /// LSTM layers plus the dense layer.
    pub fn layer_count(&self) -> usize {
        self.lstm.len() + 1
    }

    pub fn layer_names(&self) -> Vec<String> {
        layer_names(self.lstm.len())
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        let names = self.layer_names();
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownLayer {
                name: name.to_string(),
                valid: names.join(", "),
            })
    }

    pub fn lstm(&self) -> &[LstmLayerParams<T>] {
        &self.lstm
    }

    pub fn dense(&self) -> &DenseParams<T> {
        &self.dense
    }

    pub fn param_count(&self) -> usize {
        self.lstm.iter().map(|l| l.param_count()).sum::<usize>() + self.dense.param_count()
    }

    /// Bumped on every mutable access; caches from older generations are
    /// rejected by [`Network::backward`].
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Parameter tensors in declaration order: per LSTM layer `w, u, b`,
    /// then dense `w, b`.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::new();
        for l in &self.lstm {
            v.extend([&l.w, &l.u, &l.b]);
        }
        v.extend([&self.dense.w, &self.dense.b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.generation += 1;
        let mut v = Vec::new();
        for l in &mut self.lstm {
            v.extend([&mut l.w, &mut l.u, &mut l.b]);
        }
        v.extend([&mut self.dense.w, &mut self.dense.b]);
        v
    }

    /// Layer index owning each tensor of [`Network::tensors`].
    pub fn tensor_layers(&self) -> Vec<usize> {
        let mut v = Vec::new();
        for k in 0..self.lstm.len() {
            v.extend([k, k, k]);
        }
        v.extend([self.lstm.len(); 2]);
        v
    }

    /// Replaces one layer's parameters with those of `other` (same
    /// architecture required).
    pub fn copy_layer_from(&mut self, other: &Network<T>, layer: usize) -> Result<()> {
        if self.sizes() != other.sizes()
            || self.in_dim() != other.in_dim()
            || self.out_dim() != other.out_dim()
        {
            return Err(Error::dim(
                "network",
                format!("{:?}", self.sizes()),
                format!("{:?}", other.sizes()),
            ));
        }
        self.generation += 1;
        if layer < self.lstm.len() {
            self.lstm[layer] = other.lstm[layer].clone();
        } else if layer == self.lstm.len() {
            self.dense = other.dense.clone();
        } else {
            return Err(Error::Parameter(format!(
                "layer index {layer} out of range"
            )));
        }
        Ok(())
    }

    pub fn zero_state(&self, batch: usize) -> BatchState<T> {
        BatchState {
            seqs: (0..batch)
                .map(|_| SeqState {
                    h: self
                        .lstm
                        .iter()
                        .map(|l| vec![T::zero(); l.units()])
                        .collect(),
                    c: self
                        .lstm
                        .iter()
                        .map(|l| vec![T::zero(); l.units()])
                        .collect(),
                })
                .collect(),
        }
    }

    fn check_features(&self, features: &Tensor<T>) -> Result<(usize, usize)> {
        let s = features.shape();
        if s.len() != 3 || s[2] != self.in_dim() || s[0] == 0 || s[1] == 0 {
            return Err(Error::dim(
                "features",
                format!("[batch, time, {}]", self.in_dim()),
                format!("{s:?}"),
            ));
        }
        Ok((s[0], s[1]))
    }

    fn check_state(&self, state: &BatchState<T>, batch: usize) -> Result<()> {
        if state.seqs.len() != batch {
            return Err(Error::dim("state batch", batch, state.seqs.len()));
        }
        for s in &state.seqs {
            if s.h.len() != self.lstm.len()
                || s.c.len() != self.lstm.len()
                || self
                    .lstm
                    .iter()
                    .zip(&s.h)
                    .zip(&s.c)
                    .any(|((l, h), c)| h.len() != l.units() || c.len() != l.units())
            {
                return Err(Error::dim(
                    "state",
                    format!("{:?} units", self.sizes()),
                    "mismatched state vectors",
                ));
            }
        }
        Ok(())
    }

    fn non_finite(&self, layer: usize, time: usize) -> Error {
        Error::NonFiniteActivation {
            layer: self.layer_names()[layer].clone(),
            time,
        }
    }

    fn forward_seq(&self, x: &[T], time: usize, init: Option<&SeqState<T>>) -> Result<SeqCache<T>> {
        let mut layers: Vec<LayerTrace<T>> = Vec::with_capacity(self.lstm.len());
        for (k, p) in self.lstm.iter().enumerate() {
            let u = p.units();
            let mut tr = LayerTrace {
                h: vec![T::zero(); (time + 1) * u],
                c: vec![T::zero(); (time + 1) * u],
                gates: vec![T::zero(); time * 4 * u],
                tanh_c: vec![T::zero(); time * u],
            };
            if let Some(s) = init {
                tr.h[..u].copy_from_slice(&s.h[k]);
                tr.c[..u].copy_from_slice(&s.c[k]);
            }
            let in_dim = p.in_dim();
            for t in 0..time {
                let xt = match layers.last() {
                    None => &x[t * in_dim..(t + 1) * in_dim],
                    Some(below) => &below.h[(t + 1) * in_dim..(t + 2) * in_dim],
                };
                let (h_prev, h_rest) = tr.h.split_at_mut((t + 1) * u);
                let (c_prev, c_rest) = tr.c.split_at_mut((t + 1) * u);
                let h_t = &mut h_rest[..u];
                let c_t = &mut c_rest[..u];
                cell_step(
                    p,
                    xt,
                    &h_prev[t * u..],
                    &c_prev[t * u..],
                    &mut tr.gates[t * 4 * u..(t + 1) * 4 * u],
                    c_t,
                    &mut tr.tanh_c[t * u..(t + 1) * u],
                    h_t,
                );
                if !h_t.iter().chain(c_t.iter()).all(|v| v.is_finite()) {
                    return Err(self.non_finite(k, t));
                }
            }
            layers.push(tr);
        }
        let top = layers.last().unwrap();
        let last_u = self.dense.in_dim();
        let out = self.dense.out_dim();
        let mut preds = vec![T::zero(); time * out];
        for t in 0..time {
            self.dense.apply(
                &top.h[(t + 1) * last_u..(t + 2) * last_u],
                &mut preds[t * out..(t + 1) * out],
            );
        }
        if let Some(t) = preds.iter().position(|v| !v.is_finite()) {
            return Err(self.non_finite(self.lstm.len(), t / out));
        }
        Ok(SeqCache { layers, preds })
    }

    /// Forward pass over `[batch, time, in_dim]` keeping every intermediate.
    /// States start at `init`, or zero.
    pub fn forward(
        &self,
        features: &Tensor<T>,
        init: Option<&BatchState<T>>,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let (batch, time) = self.check_features(features)?;
        if let Some(s) = init {
            self.check_state(s, batch)?;
        }
        let seqs: Vec<SeqCache<T>> = (0..batch)
            .into_par_iter()
            .map(|b| self.forward_seq(features.row(b), time, init.map(|s| &s.seqs[b])))
            .collect::<Result<_>>()?;
        let mut preds = Vec::with_capacity(batch * time * self.out_dim());
        for s in &seqs {
            preds.extend_from_slice(&s.preds);
        }
        let preds = Tensor::from_vec(&[batch, time, self.out_dim()], preds)?;
        Ok((
            preds,
            ForwardCache {
                generation: self.generation,
                sizes: self.sizes(),
                batch,
                time,
                features: features.clone(),
                seqs,
            },
        ))
    }

    fn predict_seq(
        &self,
        x: &[T],
        time: usize,
        init: Option<&SeqState<T>>,
    ) -> Result<(Vec<T>, SeqState<T>)> {
        let mut state = match init {
            Some(s) => s.clone(),
            None => SeqState {
                h: self
                    .lstm
                    .iter()
                    .map(|l| vec![T::zero(); l.units()])
                    .collect(),
                c: self
                    .lstm
                    .iter()
                    .map(|l| vec![T::zero(); l.units()])
                    .collect(),
            },
        };
        let widest = self.sizes().into_iter().max().unwrap();
        let mut gates = vec![T::zero(); 4 * widest];
        let mut tc = vec![T::zero(); widest];
        let mut h_new = vec![T::zero(); widest];
        let mut c_new = vec![T::zero(); widest];
        let out = self.dense.out_dim();
        let mut preds = vec![T::zero(); time * out];
        for t in 0..time {
            for (k, p) in self.lstm.iter().enumerate() {
                let u = p.units();
                let (below, rest) = state.h.split_at_mut(k);
                let xt = match below.last() {
                    None => &x[t * p.in_dim()..(t + 1) * p.in_dim()],
                    Some(h) => &h[..],
                };
                cell_step(
                    p,
                    xt,
                    &rest[0],
                    &state.c[k],
                    &mut gates[..4 * u],
                    &mut c_new[..u],
                    &mut tc[..u],
                    &mut h_new[..u],
                );
                if !h_new[..u].iter().chain(&c_new[..u]).all(|v| v.is_finite()) {
                    return Err(self.non_finite(k, t));
                }
                rest[0].copy_from_slice(&h_new[..u]);
                state.c[k].copy_from_slice(&c_new[..u]);
            }
            self.dense
                .apply(state.h.last().unwrap(), &mut preds[t * out..(t + 1) * out]);
            if preds[t * out..(t + 1) * out].iter().any(|v| !v.is_finite()) {
                return Err(self.non_finite(self.lstm.len(), t));
            }
        }
        Ok((preds, state))
    }

    /// Inference-only forward pass; bit-identical to [`Network::forward`]
    /// but without caches. Returns predictions and the final state.
    pub fn predict(
        &self,
        features: &Tensor<T>,
        init: Option<&BatchState<T>>,
    ) -> Result<(Tensor<T>, BatchState<T>)> {
        let (batch, time) = self.check_features(features)?;
        if let Some(s) = init {
            self.check_state(s, batch)?;
        }
        let results: Vec<(Vec<T>, SeqState<T>)> = (0..batch)
            .into_par_iter()
            .map(|b| self.predict_seq(features.row(b), time, init.map(|s| &s.seqs[b])))
            .collect::<Result<_>>()?;
        let mut preds = Vec::with_capacity(batch * time * self.out_dim());
        let mut seqs = Vec::with_capacity(batch);
        for (p, s) in results {
            preds.extend(p);
            seqs.push(s);
        }
        Ok((
            Tensor::from_vec(&[batch, time, self.out_dim()], preds)?,
            BatchState { seqs },
        ))
    }

    fn backward_seq(
        &self,
        x: &[T],
        cache: &SeqCache<T>,
        labels: &[T],
        scale: T,
        time: usize,
        mask: Option<&TrainMask>,
    ) -> Gradients<T> {
        let mut g = Gradients::zeros_like(self);
        let n_lstm = self.lstm.len();
        let trainable = |k: usize| mask.is_none_or(|m| m.is_trainable(k));
        let out = self.dense.out_dim();
        let top_u = self.dense.in_dim();
        let top = cache.layers.last().unwrap();

        let lowest = (0..n_lstm).find(|&k| trainable(k));
        let mut dh_above = vec![T::zero(); time * top_u];
        let mut dy = vec![T::zero(); out];
        for t in 0..time {
            for o in 0..out {
                dy[o] = scale * (cache.preds[t * out + o] - labels[t * out + o]);
            }
            let h_t = &top.h[(t + 1) * top_u..(t + 2) * top_u];
            if trainable(n_lstm) {
                outer_acc(g.dense.w.as_mut_slice(), &dy, h_t);
                for (gb, d) in g.dense.b.as_mut_slice().iter_mut().zip(&dy) {
                    *gb += *d;
                }
            }
            if lowest.is_some() {
                gemv_t_acc(
                    &mut dh_above[t * top_u..(t + 1) * top_u],
                    self.dense.w.as_slice(),
                    top_u,
                    &dy,
                );
            }
        }
        let Some(lowest) = lowest else {
            return g;
        };

        for k in (lowest..n_lstm).rev() {
            let p = &self.lstm[k];
            let tr = &cache.layers[k];
            let u = p.units();
            let in_dim = p.in_dim();
            let need_dx = k > lowest;
            let train_k = trainable(k);
            let mut dx = if need_dx {
                vec![T::zero(); time * in_dim]
            } else {
                Vec::new()
            };
            let mut dh_next = vec![T::zero(); u];
            let mut dc_next = vec![T::zero(); u];
            let mut dz = vec![T::zero(); 4 * u];
            for t in (0..time).rev() {
                let gates = &tr.gates[t * 4 * u..(t + 1) * 4 * u];
                let tc = &tr.tanh_c[t * u..(t + 1) * u];
                let c_prev = &tr.c[t * u..(t + 1) * u];
                for j in 0..u {
                    let (i, f, gg, o) =
                        (gates[j], gates[u + j], gates[2 * u + j], gates[3 * u + j]);
                    let dh = dh_above[t * u + j] + dh_next[j];
                    let d_o = dh * tc[j];
                    let dc = dc_next[j] + dh * o * (T::one() - tc[j] * tc[j]);
                    let di = dc * gg;
                    let dg = dc * i;
                    let df = dc * c_prev[j];
                    dc_next[j] = dc * f;
                    dz[j] = di * i * (T::one() - i);
                    dz[u + j] = df * f * (T::one() - f);
                    dz[2 * u + j] = dg * (T::one() - gg * gg);
                    dz[3 * u + j] = d_o * o * (T::one() - o);
                }
                let x_t = if k == 0 {
                    &x[t * in_dim..(t + 1) * in_dim]
                } else {
                    &cache.layers[k - 1].h[(t + 1) * in_dim..(t + 2) * in_dim]
                };
                let h_prev = &tr.h[t * u..(t + 1) * u];
                if train_k {
                    let gl = &mut g.lstm[k];
                    outer_acc(gl.w.as_mut_slice(), &dz, x_t);
                    outer_acc(gl.u.as_mut_slice(), &dz, h_prev);
                    for (gb, d) in gl.b.as_mut_slice().iter_mut().zip(&dz) {
                        *gb += *d;
                    }
                }
                dh_next.fill(T::zero());
                gemv_t_acc(&mut dh_next, p.u.as_slice(), u, &dz);
                if need_dx {
                    gemv_t_acc(
                        &mut dx[t * in_dim..(t + 1) * in_dim],
                        p.w.as_slice(),
                        in_dim,
                        &dz,
                    );
                }
            }
            dh_above = dx;
        }
        g
    }

    /// Exact gradient of `mse(predictions, labels)` over the window held in
    /// `cache`. State entering the window is treated as a constant.
    ///
    /// Layers masked out by `mask` get zero gradients, and propagation stops
    /// below the lowest trainable LSTM layer.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        labels: &Tensor<T>,
        mask: Option<&TrainMask>,
    ) -> Result<Gradients<T>> {
        if cache.generation != self.generation || cache.sizes != self.sizes() {
            return Err(Error::StaleCache(format!(
                "cache from generation {} with sizes {:?}, network at generation {} with sizes {:?}",
                cache.generation,
                cache.sizes,
                self.generation,
                self.sizes()
            )));
        }
        if labels.shape() != [cache.batch, cache.time, self.out_dim()] {
            return Err(Error::StaleCache(format!(
                "labels {:?} do not match cached window [{}, {}, {}]",
                labels.shape(),
                cache.batch,
                cache.time,
                self.out_dim()
            )));
        }
        if let Some(m) = mask {
            if m.len() != self.layer_count() {
                return Err(Error::dim("mask", self.layer_count(), m.len()));
            }
        }
        let n = (cache.batch * cache.time * self.out_dim()) as f64;
        let scale = T::of(2.0 / n);
        let parts: Vec<Gradients<T>> = (0..cache.batch)
            .into_par_iter()
            .map(|b| {
                self.backward_seq(
                    cache.features.row(b),
                    &cache.seqs[b],
                    labels.row(b),
                    scale,
                    cache.time,
                    mask,
                )
            })
            .collect();
        let mut it = parts.into_iter();
        let mut total = it.next().unwrap();
        for g in it {
            total.add_assign(&g)?;
        }
        Ok(total)
    }
}
