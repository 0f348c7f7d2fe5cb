//! Reverse-mode automatic differentiation over 2-D `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! `(rows, cols)` matrices, with time on rows and channels on columns for
//! sequence data. [`Graph::backward`] walks the tape in reverse and returns
//! gradients for every parameter that took part in the pass.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};

use super::params::{ParamId, Params};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

struct LstmCache {
    /// Activated gates `[i | f | g | o]` per time step, `(T, 4H)`.
    gates: Mat,
    cells: Mat,
    tanh_cells: Mat,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Tanh(Var),
    Im2Col {
        input: Var,
        kernel: usize,
    },
    InstanceNorm {
        input: Var,
        inv_std: Array1<f64>,
    },
    GatherRows {
        input: Var,
        index: Vec<usize>,
    },
    SliceRows {
        input: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    MaxPoolRows {
        input: Var,
        argmax: Vec<usize>,
    },
    MeanRows(Var),
    L2NormalizeRows {
        input: Var,
        norms: Vec<f64>,
    },
    Lstm {
        projected: Var,
        w_hh: Var,
        reverse: bool,
        cache: LstmCache,
    },
    Mse(Var, Var),
    L1(Var, Var),
    SoftCrossEntropy {
        logits: Var,
        target: Vec<f64>,
        probs: Vec<f64>,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Gradients of every parameter touched by a pass, indexed like the
/// [`Params`] store. Untouched parameters have `None`.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub grads: Vec<Option<Mat>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &Params) -> Self {
        Self {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads[id.index()].as_ref()
    }

    /// Adds `scale * other` into `self`.
    pub fn accumulate(&mut self, other: &ParamGrads, scale: f64) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(g) = theirs {
                match mine {
                    Some(m) => m.scaled_add(scale, g),
                    None => *mine = Some(g * scale),
                }
            }
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_row(t: usize, k: usize, half: usize, t_len: usize) -> usize {
    (t + k).saturating_sub(half).min(t_len - 1)
}

fn add_into(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    /// A constant: no gradient flows into it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf for a trainable parameter. Repeated calls with the same id
    /// return the same node so gradients from every use accumulate.
    pub fn param(&mut self, params: &Params, id: ParamId) -> Var {
        let i = id.index();
        if self.param_vars.len() <= i {
            self.param_vars.resize(i + 1, None);
        }
        if let Some(v) = self.param_vars[i] {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Param(id), true);
        self.param_vars[i] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "add shape mismatch"
        );
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "sub shape mismatch"
        );
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// `a + row` with `row` of shape `(1, cols)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a single row");
        let value = self.value(a) + &r.row(0);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).mapv(|x| scale * x + shift);
        let rg = self.rg(a);
        self.push(value, Op::Affine(a, scale), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    /// Edge-replicated "same" unfolding for an odd-width 1-D convolution over
    /// rows: output row `t` holds input rows `t - k/2 ..= t + k/2` side by
    /// side, with out-of-range rows clamped to the first/last row. Clamping
    /// (rather than zeros) keeps a constant input offset constant after the
    /// convolution.
    pub fn im2col(&mut self, input: Var, kernel: usize) -> Var {
        assert!(kernel % 2 == 1, "kernel width must be odd");
        let x = self.value(input);
        let (t_len, c) = x.dim();
        let half = kernel / 2;
        let mut out = Mat::zeros((t_len, kernel * c));
        for t in 0..t_len {
            for k in 0..kernel {
                let src = clamp_row(t, k, half, t_len);
                out.slice_mut(s![t, k * c..(k + 1) * c]).assign(&x.row(src));
            }
        }
        let rg = self.rg(input);
        self.push(out, Op::Im2Col { input, kernel }, rg)
    }

    /// Per-column standardization over rows (time), no affine.
    pub fn instance_norm(&mut self, input: Var, eps: f64) -> Var {
        let (out, inv_std) = instance_norm_forward(self.value(input), eps);
        let rg = self.rg(input);
        self.push(out, Op::InstanceNorm { input, inv_std }, rg)
    }

    pub fn gather_rows(&mut self, input: Var, index: Vec<usize>) -> Var {
        let x = self.value(input);
        let value = x.select(Axis(0), &index);
        let rg = self.rg(input);
        self.push(value, Op::GatherRows { input, index }, rg)
    }

    /// Rows `start..end` of `input`.
    pub fn slice_rows(&mut self, input: Var, start: usize, end: usize) -> Var {
        let value = self.value(input).slice(s![start..end, ..]).to_owned();
        let rg = self.rg(input);
        self.push(value, Op::SliceRows { input, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        let rg = parts.iter().any(|&v| self.rg(v));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Max over non-overlapping windows of `width` rows; a short final window is kept.
    pub fn max_pool_rows(&mut self, input: Var, width: usize) -> Var {
        let x = self.value(input);
        let (t_len, c) = x.dim();
        let out_len = t_len.div_ceil(width);
        let mut out = Mat::zeros((out_len, c));
        let mut argmax = vec![0usize; out_len * c];
        for o in 0..out_len {
            let lo = o * width;
            let hi = (lo + width).min(t_len);
            for ch in 0..c {
                let mut best = lo;
                for t in lo + 1..hi {
                    if x[[t, ch]] > x[[best, ch]] {
                        best = t;
                    }
                }
                out[[o, ch]] = x[[best, ch]];
                argmax[o * c + ch] = best;
            }
        }
        let rg = self.rg(input);
        self.push(out, Op::MaxPoolRows { input, argmax }, rg)
    }

    pub fn mean_rows(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let value = x
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        let rg = self.rg(input);
        self.push(value, Op::MeanRows(input), rg)
    }

    pub fn l2_normalize_rows(&mut self, input: Var) -> Var {
        let mut value = self.value(input).clone();
        let mut norms = Vec::with_capacity(value.nrows());
        for mut row in value.rows_mut() {
            let n = row.dot(&row).sqrt().max(1e-12);
            row /= n;
            norms.push(n);
        }
        let rg = self.rg(input);
        self.push(value, Op::L2NormalizeRows { input, norms }, rg)
    }

    /// Single-layer LSTM with gate order `[input, forget, cell, output]` and
    /// zero initial state. `reverse` runs from the last row to the first.
    pub fn lstm(&mut self, input: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Var {
        let xp = self.matmul(input, w_ih);
        let xp = self.add_row(xp, bias);
        self.lstm_projected(xp, w_hh, reverse)
    }

    /// The recurrent part of [`Graph::lstm`], for inputs already projected
    /// to the `(T, 4H)` gate pre-activations.
    pub fn lstm_projected(&mut self, projected: Var, w_hh: Var, reverse: bool) -> Var {
        let xp = self.value(projected);
        let whh = self.value(w_hh);
        let hidden = whh.nrows();
        assert_eq!(whh.ncols(), 4 * hidden, "w_hh must be (H, 4H)");
        assert_eq!(xp.ncols(), 4 * hidden, "projected input must be (T, 4H)");
        let t_len = xp.nrows();

        let mut gates = Mat::zeros((t_len, 4 * hidden));
        let mut cells = Mat::zeros((t_len, hidden));
        let mut tanh_cells = Mat::zeros((t_len, hidden));
        let mut out = Mat::zeros((t_len, hidden));
        let mut h = Array1::<f64>::zeros(hidden);
        let mut c = Array1::<f64>::zeros(hidden);
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let mut z = xp.row(t).to_owned();
            for (hk, w_row) in h.iter().zip(whh.rows()) {
                z.scaled_add(*hk, &w_row);
            }
            let mut g = gates.row_mut(t);
            for j in 0..hidden {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[hidden + j]);
                let c_g = z[2 * hidden + j].tanh();
                let o_g = sigmoid(z[3 * hidden + j]);
                g[j] = i_g;
                g[hidden + j] = f_g;
                g[2 * hidden + j] = c_g;
                g[3 * hidden + j] = o_g;
                c[j] = f_g * c[j] + i_g * c_g;
                let tc = c[j].tanh();
                tanh_cells[[t, j]] = tc;
                h[j] = o_g * tc;
            }
            cells.row_mut(t).assign(&c);
            out.row_mut(t).assign(&h);
        }
        let rg = self.rg(projected) || self.rg(w_hh);
        self.push(
            out,
            Op::Lstm {
                projected,
                w_hh,
                reverse,
                cache: LstmCache {
                    gates,
                    cells,
                    tanh_cells,
                },
            },
            rg,
        )
    }

    /// Mean squared error over all elements, `1x1`.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.dim(), y.dim(), "mse shape mismatch");
        let n = x.len() as f64;
        let v = Zip::from(x)
            .and(y)
            .fold(0.0, |acc, p, q| acc + (p - q) * (p - q))
            / n;
        let rg = self.rg(a) || self.rg(b);
        self.push(Mat::from_elem((1, 1), v), Op::Mse(a, b), rg)
    }

    /// Mean absolute error over all elements, `1x1`.
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.dim(), y.dim(), "l1 shape mismatch");
        let n = x.len() as f64;
        let v = Zip::from(x)
            .and(y)
            .fold(0.0, |acc, p, q| acc + (p - q).abs())
            / n;
        let rg = self.rg(a) || self.rg(b);
        self.push(Mat::from_elem((1, 1), v), Op::L1(a, b), rg)
    }

    /// Cross-entropy of a `(1, K)` logit row against a probability vector.
    pub fn soft_cross_entropy(&mut self, logits: Var, target: &[f64]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.dim(), (1, target.len()), "logits must be (1, K)");
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let probs: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
        let loss: f64 = z.iter().zip(target).map(|(v, t)| -t * (v - lse)).sum();
        let rg = self.rg(logits);
        self.push(
            Mat::from_elem((1, 1), loss),
            Op::SoftCrossEntropy {
                logits,
                target: target.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// `Σ w_i · s_i` over `1x1` nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v: f64 = terms.iter().map(|&(t, w)| w * self.scalar(t)).sum();
        let rg = terms.iter().any(|&(t, _)| self.rg(t));
        self.push(
            Mat::from_elem((1, 1), v),
            Op::WeightedSum(terms.to_vec()),
            rg,
        )
    }

    /// Backpropagates from a `1x1` node and collects parameter gradients.
    pub fn backward(&self, loss: Var, num_params: usize) -> ParamGrads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Mat::ones((1, 1)));
        let mut out = vec![None; num_params];

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out[id.index()] = Some(gy),
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        add_into(&mut grads[a.0], gy.dot(&self.value(*b).t()));
                    }
                    if self.rg(*b) {
                        add_into(&mut grads[b.0], self.value(*a).t().dot(&gy));
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        add_into(&mut grads[b.0], gy.clone());
                    }
                    if self.rg(*a) {
                        add_into(&mut grads[a.0], gy);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        add_into(&mut grads[b.0], -&gy);
                    }
                    if self.rg(*a) {
                        add_into(&mut grads[a.0], gy);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        add_into(&mut grads[row.0], gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.rg(*a) {
                        add_into(&mut grads[a.0], gy);
                    }
                }
                Op::Affine(a, scale) => add_into(&mut grads[a.0], gy * *scale),
                Op::Relu(a) => {
                    let mut g = gy;
                    Zip::from(&mut g).and(&node.value).for_each(|g, &y| {
                        if y <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    add_into(&mut grads[a.0], g);
                }
                Op::Tanh(a) => {
                    let mut g = gy;
                    Zip::from(&mut g)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= 1.0 - y * y);
                    add_into(&mut grads[a.0], g);
                }
                Op::Im2Col { input, kernel } => {
                    let (t_len, c) = self.value(*input).dim();
                    let half = kernel / 2;
                    let mut gx = Mat::zeros((t_len, c));
                    for t in 0..t_len {
                        for k in 0..*kernel {
                            let mut row = gx.row_mut(clamp_row(t, k, half, t_len));
                            row += &gy.slice(s![t, k * c..(k + 1) * c]);
                        }
                    }
                    add_into(&mut grads[input.0], gx);
                }
                Op::InstanceNorm { input, inv_std } => {
                    add_into(
                        &mut grads[input.0],
                        instance_norm_backward(&node.value, &gy, inv_std),
                    );
                }
                Op::GatherRows { input, index } => {
                    let mut gx = Mat::zeros(self.value(*input).dim());
                    for (r, &src) in index.iter().enumerate() {
                        let mut row = gx.row_mut(src);
                        row += &gy.row(r);
                    }
                    add_into(&mut grads[input.0], gx);
                }
                Op::SliceRows { input, start } => {
                    let mut gx = Mat::zeros(self.value(*input).dim());
                    gx.slice_mut(s![*start..*start + gy.nrows(), ..])
                        .assign(&gy);
                    add_into(&mut grads[input.0], gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.rg(*p) {
                            add_into(
                                &mut grads[p.0],
                                gy.slice(s![.., offset..offset + w]).to_owned(),
                            );
                        }
                        offset += w;
                    }
                }
                Op::MaxPoolRows { input, argmax } => {
                    let mut gx = Mat::zeros(self.value(*input).dim());
                    let c = gy.ncols();
                    for ((o, ch), g) in gy.indexed_iter() {
                        gx[[argmax[o * c + ch], ch]] += g;
                    }
                    add_into(&mut grads[input.0], gx);
                }
                Op::MeanRows(input) => {
                    let (t_len, c) = self.value(*input).dim();
                    let row = gy.row(0).mapv(|g| g / t_len as f64);
                    let gx = row.broadcast((t_len, c)).expect("broadcast").to_owned();
                    add_into(&mut grads[input.0], gx);
                }
                Op::L2NormalizeRows { input, norms } => {
                    let mut gx = gy;
                    for ((mut g, y), n) in
                        gx.rows_mut().into_iter().zip(node.value.rows()).zip(norms)
                    {
                        let proj = g.dot(&y);
                        Zip::from(&mut g)
                            .and(&y)
                            .for_each(|g, &y| *g = (*g - y * proj) / n);
                    }
                    add_into(&mut grads[input.0], gx);
                }
                Op::Lstm {
                    projected,
                    w_hh,
                    reverse,
                    cache,
                } => {
                    let (dz, dw_hh) =
                        lstm_backward(self.value(*w_hh), *reverse, cache, &node.value, &gy);
                    if self.rg(*w_hh) {
                        add_into(&mut grads[w_hh.0], dw_hh);
                    }
                    if self.rg(*projected) {
                        add_into(&mut grads[projected.0], dz);
                    }
                }
                Op::Mse(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let k = 2.0 * gy[[0, 0]] / x.len() as f64;
                    let d = (x - y) * k;
                    if self.rg(*b) {
                        add_into(&mut grads[b.0], -&d);
                    }
                    if self.rg(*a) {
                        add_into(&mut grads[a.0], d);
                    }
                }
                Op::L1(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let k = gy[[0, 0]] / x.len() as f64;
                    let mut d = x - y;
                    d.mapv_inplace(|v| {
                        if v > 0.0 {
                            k
                        } else if v < 0.0 {
                            -k
                        } else {
                            0.0
                        }
                    });
                    if self.rg(*b) {
                        add_into(&mut grads[b.0], -&d);
                    }
                    if self.rg(*a) {
                        add_into(&mut grads[a.0], d);
                    }
                }
                Op::SoftCrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let scale = gy[[0, 0]];
                    let total: f64 = target.iter().sum();
                    let row: Vec<f64> = probs
                        .iter()
                        .zip(target)
                        .map(|(p, t)| scale * (p * total - t))
                        .collect();
                    add_into(
                        &mut grads[logits.0],
                        Mat::from_shape_vec((1, row.len()), row).expect("shape"),
                    );
                }
                Op::WeightedSum(terms) => {
                    for &(t, w) in terms {
                        if self.rg(t) {
                            add_into(&mut grads[t.0], &gy * w);
                        }
                    }
                }
            }
        }
        ParamGrads { grads: out }
    }
}

/// Returns the normalized matrix and `1 / sqrt(var + eps)` per column.
pub fn instance_norm_forward(x: &Mat, eps: f64) -> (Mat, Array1<f64>) {
    let t_len = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / t_len;
    let centered = x - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / t_len;
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    (centered * &inv_std, inv_std)
}

fn instance_norm_backward(y: &Mat, gy: &Mat, inv_std: &Array1<f64>) -> Mat {
    let t_len = y.nrows() as f64;
    let mean_g = gy.sum_axis(Axis(0)) / t_len;
    let mean_gy = (gy * y).sum_axis(Axis(0)) / t_len;
    let mut gx = gy - &mean_g;
    gx -= &(y * &mean_gy);
    gx * inv_std
}

/// Returns gradients for the projected input and `w_hh`.
fn lstm_backward(w_hh: &Mat, reverse: bool, cache: &LstmCache, out: &Mat, gy: &Mat) -> (Mat, Mat) {
    let (t_len, hidden) = out.dim();
    let mut dz = Mat::zeros((t_len, 4 * hidden));
    let mut h_prev_all = Mat::zeros((t_len, hidden));
    let mut dh_next = Array1::<f64>::zeros(hidden);
    let mut dc_next = Array1::<f64>::zeros(hidden);
    let zeros = Array1::<f64>::zeros(hidden);

    // Walk processing order backwards.
    for step in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - step } else { step };
        let prev = if step == 0 {
            None
        } else if reverse {
            Some(t + 1)
        } else {
            Some(t - 1)
        };
        let c_prev: ArrayView1<f64> = prev.map_or(zeros.view(), |p| cache.cells.row(p));
        if let Some(p) = prev {
            h_prev_all.row_mut(t).assign(&out.row(p));
        }
        let g = cache.gates.row(t);
        let tc = cache.tanh_cells.row(t);
        let mut dzt = dz.row_mut(t);
        for j in 0..hidden {
            let (i_g, f_g, c_g, o_g) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
            let dh = gy[[t, j]] + dh_next[j];
            let d_o = dh * tc[j];
            let dc = dh * o_g * (1.0 - tc[j] * tc[j]) + dc_next[j];
            let d_i = dc * c_g;
            let d_cg = dc * i_g;
            let d_f = dc * c_prev[j];
            dc_next[j] = dc * f_g;
            dzt[j] = d_i * i_g * (1.0 - i_g);
            dzt[hidden + j] = d_f * f_g * (1.0 - f_g);
            dzt[2 * hidden + j] = d_cg * (1.0 - c_g * c_g);
            dzt[3 * hidden + j] = d_o * o_g * (1.0 - o_g);
        }
        let dzt = dz.row(t);
        for (d, w_row) in dh_next.iter_mut().zip(w_hh.rows()) {
            *d = w_row.dot(&dzt);
        }
    }

    let dw_hh = h_prev_all.t().dot(&dz);
    (dz, dw_hh)
}
