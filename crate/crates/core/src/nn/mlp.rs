//! Shared-trunk multi-head MLP with batched reverse-mode gradients.
//!
//! Trunk: `Linear -> ELU` per layer, with LayerNorm after the first layer.
//! Heads: `Linear -> ELU` hidden layers then a final `Linear` followed by the
//! output activation. A forward pass takes a batch of trunk inputs and a list
//! of [`HeadGroup`]s; each group runs one head over a row range of the trunk
//! output, and group outputs are stacked in order. Groups may overlap, which
//! lets several heads share one trunk evaluation.

use std::ops::Range;
use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::{ParamError, ParamLayout, ParamVector};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("head {head} out of range ({heads} heads)")]
    UnknownHead { head: usize, heads: usize },
    #[error("input has {got} columns, expected {expected}")]
    InputDimension { expected: usize, got: usize },
    #[error("rows {start}..{end} exceed batch of {rows}")]
    RowRange { start: usize, end: usize, rows: usize },
    #[error("upstream gradient has shape {got:?}, expected {expected:?}")]
    Upstream { expected: (usize, usize), got: (usize, usize) },
    #[error("backward called on a forward pass that was not recorded")]
    NoRecordedComputation,
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Params(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub trunk: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub output_dim: usize,
    pub heads: usize,
    pub output: OutputActivation,
    pub layer_norm: bool,
}

/// One head applied to a row range of the trunk output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadGroup {
    pub head: usize,
    pub rows: Range<usize>,
}

impl HeadGroup {
    pub fn new(head: usize, rows: Range<usize>) -> Self {
        Self { head, rows }
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Linear {
    fn weights<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.fan_out, self.fan_in), &p[self.w..self.w + self.fan_out * self.fan_in])
            .expect("layout matches layer shape")
    }

    fn apply(&self, p: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let bias = ArrayView1::from(&p[self.b..self.b + self.fan_out]);
        let mut z = Array2::zeros((x.nrows(), self.fan_out));
        z.rows_mut().into_iter().for_each(|mut r| r.assign(&bias));
        general_mat_mul(1.0, x, &self.weights(p).t(), 1.0, &mut z);
        z
    }

    /// Accumulates parameter gradients into `grad` and optionally returns dL/dx.
    fn backward(
        &self,
        p: &[f64],
        grad: Option<&mut [f64]>,
        x: &ArrayView2<f64>,
        dz: &ArrayView2<f64>,
        want_dx: bool,
    ) -> Option<Array2<f64>> {
        if let Some(g) = grad {
            {
                let n = self.fan_out * self.fan_in;
                let mut gw = ArrayViewMut2::from_shape((self.fan_out, self.fan_in), &mut g[self.w..self.w + n])
                    .expect("layout matches layer shape");
                general_mat_mul(1.0, &dz.t(), x, 1.0, &mut gw);
            }
            let gb = &mut g[self.b..self.b + self.fan_out];
            for (acc, v) in gb.iter_mut().zip(dz.sum_axis(Axis(0))) {
                *acc += v;
            }
        }
        want_dx.then(|| dz.dot(&self.weights(p)))
    }
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(h: &Array2<f64>, gain: &[f64], bias: &[f64]) -> (Array2<f64>, LnCache) {
    let n = h.ncols() as f64;
    let mut xhat = h.clone();
    let mut inv_std = Array1::zeros(h.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        *is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * *is);
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        for ((v, g), b) in row.iter_mut().zip(gain).zip(bias) {
            *v = *v * g + b;
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &[f64],
    grad: Option<(&mut [f64], usize, usize)>,
) -> Array2<f64> {
    if let Some((g, goff, boff)) = grad {
        for (row, xrow) in dy.rows().into_iter().zip(cache.xhat.rows()) {
            for k in 0..row.len() {
                g[goff + k] += row[k] * xrow[k];
                g[boff + k] += row[k];
            }
        }
    }
    let n = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for r in 0..dy.nrows() {
        let xh = cache.xhat.row(r);
        let dxhat: Vec<f64> = dy.row(r).iter().zip(gain).map(|(d, g)| d * g).collect();
        let sum: f64 = dxhat.iter().sum();
        let dot: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
        let is = cache.inv_std[r];
        for k in 0..dxhat.len() {
            dx[[r, k]] = is / n * (n * dxhat[k] - sum - xh[k] * dot);
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct LayerRecord {
    input: Array2<f64>,
    pre: Array2<f64>,
}

#[derive(Debug, Clone)]
struct Tape {
    rows: usize,
    trunk: Vec<LayerRecord>,
    ln: Option<LnCache>,
    groups: Vec<HeadGroup>,
    heads: Vec<Vec<LayerRecord>>,
}

/// Result of a forward pass; carries the tape when recorded.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Array2<f64>,
    tape: Option<Tape>,
}

impl Forward {
    pub fn is_recorded(&self) -> bool {
        self.tape.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Option<ParamVector>,
    pub input: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct MultiHeadMlp {
    spec: NetworkSpec,
    layout: Arc<ParamLayout>,
    trunk: Vec<Linear>,
    ln: Option<(usize, usize)>,
    heads: Vec<Vec<Linear>>,
}

impl MultiHeadMlp {
    pub fn new(spec: NetworkSpec) -> Result<Self, NetError> {
        if spec.input_dim == 0 || spec.output_dim == 0 || spec.heads == 0 {
            return Err(NetError::Spec("input, output and head counts must be positive".into()));
        }
        if spec.trunk.iter().chain(&spec.head_hidden).any(|w| *w == 0) {
            return Err(NetError::Spec("layer widths must be positive".into()));
        }
        if spec.layer_norm && spec.trunk.is_empty() {
            return Err(NetError::Spec("layer norm needs a trunk layer".into()));
        }
        let mut layout = ParamLayout::new();
        let linear = |layout: &mut ParamLayout, name: String, fan_in: usize, fan_out: usize| Linear {
            w: layout.push(format!("{name}.w"), &[fan_out, fan_in]),
            b: layout.push(format!("{name}.b"), &[fan_out]),
            fan_in,
            fan_out,
        };
        let mut trunk = Vec::new();
        let mut width = spec.input_dim;
        let mut ln = None;
        for (l, w) in spec.trunk.iter().enumerate() {
            trunk.push(linear(&mut layout, format!("trunk.{l}"), width, *w));
            width = *w;
            if l == 0 && spec.layer_norm {
                let g = layout.push("trunk.ln.gain", &[width]);
                let b = layout.push("trunk.ln.bias", &[width]);
                ln = Some((g, b));
            }
        }
        let trunk_width = width;
        let mut heads = Vec::new();
        for h in 0..spec.heads {
            let mut layers = Vec::new();
            let mut width = trunk_width;
            for (j, w) in spec.head_hidden.iter().chain(std::iter::once(&spec.output_dim)).enumerate() {
                layers.push(linear(&mut layout, format!("head.{h}.{j}"), width, *w));
                width = *w;
            }
            heads.push(layers);
        }
        Ok(Self { spec, layout: Arc::new(layout), trunk, ln, heads })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    /// Uniform fan-in initialization; final head layers are scaled down by 10
    /// so fresh networks start near zero output.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut p = ParamVector::zeros(self.layout.clone());
        let v = p.values_mut();
        let mut fill = |lin: &Linear, scale: f64| {
            let bound = scale / (lin.fan_in as f64).sqrt();
            for w in &mut v[lin.w..lin.w + lin.fan_in * lin.fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        };
        for lin in &self.trunk {
            fill(lin, 1.0);
        }
        for layers in &self.heads {
            for (j, lin) in layers.iter().enumerate() {
                fill(lin, if j + 1 == layers.len() { 0.1 } else { 1.0 });
            }
        }
        if let Some((g, _)) = self.ln {
            let width = self.spec.trunk[0];
            p.values_mut()[g..g + width].iter_mut().for_each(|x| *x = 1.0);
        }
        p
    }

    fn check_params(&self, params: &ParamVector) -> Result<(), NetError> {
        if Arc::ptr_eq(params.layout(), &self.layout) || **params.layout() == *self.layout {
            Ok(())
        } else {
            Err(ParamError::LayoutMismatch.into())
        }
    }

    pub fn forward(
        &self,
        params: &ParamVector,
        x: ArrayView2<f64>,
        groups: &[HeadGroup],
        record: bool,
    ) -> Result<Forward, NetError> {
        self.check_params(params)?;
        if x.ncols() != self.spec.input_dim {
            return Err(NetError::InputDimension { expected: self.spec.input_dim, got: x.ncols() });
        }
        for g in groups {
            if g.head >= self.heads.len() {
                return Err(NetError::UnknownHead { head: g.head, heads: self.heads.len() });
            }
            if g.rows.start > g.rows.end || g.rows.end > x.nrows() {
                return Err(NetError::RowRange { start: g.rows.start, end: g.rows.end, rows: x.nrows() });
            }
        }
        let p = params.values();
        let mut trunk_records = Vec::new();
        let mut ln_cache = None;
        let mut h = x.to_owned();
        for (l, lin) in self.trunk.iter().enumerate() {
            let z = lin.apply(p, &h.view());
            let mut a = z.mapv(elu);
            if l == 0 {
                if let Some((go, bo)) = self.ln {
                    let w = lin.fan_out;
                    let (y, cache) = layer_norm(&a, &p[go..go + w], &p[bo..bo + w]);
                    a = y;
                    ln_cache = Some(cache);
                }
            }
            if record {
                trunk_records.push(LayerRecord { input: h, pre: z });
            }
            h = a;
        }

        let total: usize = groups.iter().map(|g| g.rows.len()).sum();
        let mut out = Array2::zeros((total, self.spec.output_dim));
        let mut head_records = Vec::new();
        let mut row = 0;
        for g in groups {
            let n = g.rows.len();
            let mut a = h.slice(s![g.rows.clone(), ..]).to_owned();
            let layers = &self.heads[g.head];
            let mut records = Vec::new();
            for (j, lin) in layers.iter().enumerate() {
                let z = lin.apply(p, &a.view());
                let next = if j + 1 == layers.len() {
                    match self.spec.output {
                        OutputActivation::Tanh => z.mapv(f64::tanh),
                        OutputActivation::Linear => z.clone(),
                    }
                } else {
                    z.mapv(elu)
                };
                if record {
                    records.push(LayerRecord { input: a, pre: z });
                }
                a = next;
            }
            out.slice_mut(s![row..row + n, ..]).assign(&a);
            row += n;
            head_records.push(records);
        }
        let tape = record.then(|| Tape {
            rows: x.nrows(),
            trunk: trunk_records,
            ln: ln_cache,
            groups: groups.to_vec(),
            heads: head_records,
        });
        Ok(Forward { output: out, tape })
    }

    /// Reverse pass for a recorded forward. `upstream` is dL/d(output).
    pub fn backward(
        &self,
        params: &ParamVector,
        forward: &Forward,
        upstream: ArrayView2<f64>,
        want_params: bool,
        want_input: bool,
    ) -> Result<Gradients, NetError> {
        self.check_params(params)?;
        let tape = forward.tape.as_ref().ok_or(NetError::NoRecordedComputation)?;
        if upstream.dim() != forward.output.dim() {
            return Err(NetError::Upstream { expected: forward.output.dim(), got: upstream.dim() });
        }
        let p = params.values();
        let mut grad = want_params.then(|| vec![0.0; self.layout.len()]);
        let trunk_width = self.spec.trunk.last().copied().unwrap_or(self.spec.input_dim);
        let need_trunk_grad = want_input || (want_params && !self.trunk.is_empty());
        let mut dh = Array2::<f64>::zeros((tape.rows, trunk_width));

        let mut row = 0;
        for (g, records) in tape.groups.iter().zip(&tape.heads) {
            let n = g.rows.len();
            let layers = &self.heads[g.head];
            let mut d = upstream.slice(s![row..row + n, ..]).to_owned();
            row += n;
            for j in (0..layers.len()).rev() {
                let rec = &records[j];
                if j + 1 == layers.len() {
                    if self.spec.output == OutputActivation::Tanh {
                        d.zip_mut_with(&rec.pre, |dv, z| {
                            let t = z.tanh();
                            *dv *= 1.0 - t * t;
                        });
                    }
                } else {
                    d.zip_mut_with(&rec.pre, |dv, z| *dv *= elu_grad(*z));
                }
                let want_dx = j > 0 || need_trunk_grad;
                match layers[j].backward(p, grad.as_deref_mut(), &rec.input.view(), &d.view(), want_dx) {
                    Some(dx) => d = dx,
                    None => break,
                }
                if j == 0 {
                    let mut target = dh.slice_mut(s![g.rows.clone(), ..]);
                    target += &d;
                }
            }
        }

        let mut input_grad = None;
        if need_trunk_grad {
            let mut d = dh;
            for l in (0..self.trunk.len()).rev() {
                let rec = &tape.trunk[l];
                if l == 0 {
                    if let (Some((go, bo)), Some(cache)) = (self.ln, tape.ln.as_ref()) {
                        let w = self.trunk[0].fan_out;
                        let gain = &p[go..go + w];
                        d = layer_norm_backward(&d, cache, gain, grad.as_deref_mut().map(|g| (g, go, bo)));
                    }
                }
                d.zip_mut_with(&rec.pre, |dv, z| *dv *= elu_grad(*z));
                let want_dx = l > 0 || want_input;
                match self.trunk[l].backward(p, grad.as_deref_mut(), &rec.input.view(), &d.view(), want_dx) {
                    Some(dx) => d = dx,
                    None => break,
                }
            }
            if want_input {
                input_grad = Some(d);
            }
        }
        let params = match grad {
            Some(g) => Some(ParamVector::from_values(self.layout.clone(), g)?),
            None => None,
        };
        Ok(Gradients { params, input: input_grad })
    }

    /// Single-row convenience forward for one head.
    pub fn forward_one(&self, params: &ParamVector, x: &[f64], head: usize) -> Result<Vec<f64>, NetError> {
        let xv = ArrayView2::from_shape((1, x.len()), x).expect("one row");
        let f = self.forward(params, xv, &[HeadGroup::new(head, 0..1)], false)?;
        Ok(f.output.into_raw_vec_and_offset().0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 3,
            trunk: vec![5, 4],
            head_hidden: vec![3],
            output_dim: 2,
            heads: 2,
            output: OutputActivation::Tanh,
            layer_norm: true,
        }
    }

    #[test]
    fn unrecorded_forward_has_no_backward() {
        let net = MultiHeadMlp::new(spec()).unwrap();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let x = Array2::zeros((1, 3));
        let f = net.forward(&p, x.view(), &[HeadGroup::new(0, 0..1)], false).unwrap();
        let up = Array2::ones((1, 2));
        assert_eq!(net.backward(&p, &f, up.view(), true, false).unwrap_err(), NetError::NoRecordedComputation);
    }

    #[test]
    fn unknown_head_is_an_error() {
        let net = MultiHeadMlp::new(spec()).unwrap();
        let p = ParamVector::zeros(net.layout().clone());
        assert_eq!(net.forward_one(&p, &[0.0; 3], 2).unwrap_err(), NetError::UnknownHead { head: 2, heads: 2 });
    }

    #[test]
    fn overlapping_groups_share_the_trunk() {
        let net = MultiHeadMlp::new(spec()).unwrap();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let x = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 * 0.3 - 0.7);
        let f = net.forward(&p, x.view(), &[HeadGroup::new(0, 0..2), HeadGroup::new(1, 0..2)], false).unwrap();
        for r in 0..2 {
            let a = net.forward_one(&p, x.row(r).as_slice().unwrap(), 0).unwrap();
            let b = net.forward_one(&p, x.row(r).as_slice().unwrap(), 1).unwrap();
            assert_eq!(f.output.row(r).to_vec(), a);
            assert_eq!(f.output.row(r + 2).to_vec(), b);
        }
    }
}
