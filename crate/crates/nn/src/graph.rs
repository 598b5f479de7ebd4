//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass. Parameter
//! leaves are borrowed from a [`ParamStore`] rather than copied, so a graph lives
//! no longer than the store it reads from. Calling [`Graph::backward`] on a scalar
//! walks the tape in reverse and returns gradients for every parameter slot.

use crate::error::{NnError, Result};
use crate::kernels::{self, bilinear_taps, Conv2dGeom, ConvShape};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type Taps = Vec<(usize, usize, f64)>;

enum Op {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv2dGeom,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Resize {
        x: Var,
        ty: Taps,
        tx: Taps,
    },
    Concat(Vec<Var>),
    Add(Var, Var),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
}

struct Node {
    /// `None` for parameter leaves, whose values live in the store.
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Mean accumulated incrementally; exact for constant sequences.
fn running_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    for (i, v) in values.enumerate() {
        mean += (v - mean) / (i + 1) as f64;
    }
    mean
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), stable for large |x|
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients for every parameter slot touched by a backward pass.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.index()).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Multiplies every gradient by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Adds `weight · other` slot by slot; used to accumulate gradients over
    /// several chunks of one mini-batch.
    pub fn add_scaled(&mut self, other: &Grads, weight: f64) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize(other.slots.len(), None);
        }
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            let Some(theirs) = theirs else { continue };
            match mine {
                Some(m) => {
                    for (a, b) in m.data_mut().iter_mut().zip(theirs.data()) {
                        *a += weight * b;
                    }
                }
                None => {
                    let mut t = theirs.clone();
                    t.data_mut().iter_mut().for_each(|v| *v *= weight);
                    *mine = Some(t);
                }
            }
        }
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-parameter nodes own a value"),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: Conv2dGeom) -> Result<Var> {
        let (n, c_in, h, wd) = self.value(x).dims4()?;
        let (c_out, wc_in, kh, kw) = self.value(w).dims4()?;
        if wc_in != c_in {
            return Err(NnError::Shape(format!(
                "conv2d weight expects {wc_in} input channels, input has {c_in}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [c_out] {
                return Err(NnError::Shape(format!(
                    "conv2d bias shape {:?} does not match {c_out} output channels",
                    self.value(b).shape()
                )));
            }
        }
        let (Some(oh), Some(ow)) = (geom.out_len(h, kh), geom.out_len(wd, kw)) else {
            return Err(NnError::Shape(format!(
                "{kh}x{kw} kernel with {geom:?} does not fit a {h}x{wd} input"
            )));
        };
        let s = ConvShape {
            c_in,
            h,
            w: wd,
            c_out,
            kh,
            kw,
            oh,
            ow,
            geom,
        };
        let mut out = Tensor::zeros(&[n, c_out, oh, ow]);
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = b.map(|b| self.value(b).data());
            let in_per = c_in * h * wd;
            let out_per = c_out * oh * ow;
            for (i, o) in out.data_mut().chunks_mut(out_per).enumerate() {
                kernels::conv2d_forward(&xv[i * in_per..(i + 1) * in_per], wv, bv, &s, o);
            }
        }
        let rg = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::from_vec(self.value(x).shape(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::from_vec(self.value(x).shape(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(NnError::Shape(format!("cannot 2x2-pool a {h}x{w} map")));
        }
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0; n * c * oh * ow];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out.data_mut()[o] = xv[best];
                    argmax[o] = best;
                }
            }
        }
        let rg = self.needs(x);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Bilinear resampling (half-pixel centres, edge clamped) to `(out_h, out_w)`.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if out_h == 0 || out_w == 0 {
            return Err(NnError::Shape("resize target must be non-empty".into()));
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
        let xv = self.value(x).data();
        for (plane, o) in out.data_mut().chunks_mut(out_h * out_w).enumerate() {
            kernels::resize_plane(&xv[plane * h * w..(plane + 1) * h * w], w, &ty, &tx, o);
        }
        let rg = self.needs(x);
        Ok(self.push(out, Op::Resize { x, ty, tx }, rg))
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NnError::Shape("concat of zero tensors".into()))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(NnError::Shape(format!(
                    "concat mismatch: {:?} vs {:?}",
                    self.value(p).shape(),
                    self.value(first).shape()
                )));
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let mut out = Vec::with_capacity(n * total * h * w);
        for i in 0..n {
            for (&p, &c) in parts.iter().zip(&channels) {
                let per = c * h * w;
                out.extend_from_slice(&self.value(p).data()[i * per..(i + 1) * per]);
            }
        }
        let out = Tensor::from_vec(&[n, total, h, w], out)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::Shape(format!(
                "add mismatch: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `(N, C, H, W)` → `(N, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / (h * w) as f64)
            .collect();
        let out = Tensor::from_vec(&[n, c, 1, 1], data)?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    /// Dense layer over all non-batch axes: `(N, …)` → `(N, out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x).shape();
        let n = xs[0];
        let inner: usize = xs[1..].iter().product();
        let (out_f, in_f) = match self.value(w).shape() {
            &[o, i] => (o, i),
            s => return Err(NnError::Shape(format!("linear weight must be 2-d, got {s:?}"))),
        };
        if in_f != inner {
            return Err(NnError::Shape(format!(
                "linear expects {in_f} features, input has {inner}"
            )));
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; n * out_f];
        for i in 0..n {
            let row = &xv[i * in_f..(i + 1) * in_f];
            for o in 0..out_f {
                let dot: f64 = row.iter().zip(&wv[o * in_f..(o + 1) * in_f]).map(|(a, b)| a * b).sum();
                out[i * out_f + o] = dot + bv.map_or(0.0, |b| b[o]);
            }
        }
        let out = Tensor::from_vec(&[n, out_f], out)?;
        let rg = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// Mean binary cross-entropy evaluated on logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let lv = self.value(logits);
        if lv.numel() != targets.numel() {
            return Err(NnError::Shape(format!(
                "bce: {} logits vs {} targets",
                lv.numel(),
                targets.numel()
            )));
        }
        let loss = running_mean(
            lv.data()
                .iter()
                .zip(targets.data())
                .map(|(&x, &y)| softplus(x) - x * y),
        );
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.data().to_vec(),
            },
            rg,
        ))
    }

    /// Mean per-pixel softmax cross-entropy. `targets` holds one class index
    /// per `(n, y, x)` position in row-major order.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c, h, w) = self.value(logits).dims4()?;
        if targets.len() != n * h * w {
            return Err(NnError::Shape(format!(
                "cross-entropy: {} targets for {} positions",
                targets.len(),
                n * h * w
            )));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NnError::Shape(format!("target class {bad} out of range for {c} classes")));
        }
        let lv = self.value(logits).data();
        let hw = h * w;
        let per_pixel = targets.iter().enumerate().map(|(m, &t)| {
            let (i, p) = (m / hw, m % hw);
            let at = |k: usize| lv[(i * c + k) * hw + p];
            let max = (0..c).map(at).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..c).map(|k| (at(k) - max).exp()).sum::<f64>().ln();
            lse - at(t)
        });
        let loss = running_mean(per_pixel);
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(NnError::Shape(format!(
                "mse: prediction {:?} vs target {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        let loss = running_mean(pv.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)));
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).numel() != 1 {
            return Err(NnError::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut slots: Vec<Option<Tensor>> = (0..self.params.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(Var(i), &node.op, g, &mut grads, &mut slots);
        }
        Ok(Grads { slots })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(
        &self,
        out: Var,
        op: &Op,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        slots: &mut [Option<Tensor>],
    ) {
        match op {
            Op::Input => {}
            Op::Param(id) => match &mut slots[id.index()] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            },
            Op::Conv2d { x, w, b, geom } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, c_in, h, wd) = xv.dims4().expect("checked in forward");
                let (c_out, _, kh, kw) = wv.dims4().expect("checked in forward");
                let (_, _, oh, ow) = g.dims4().expect("conv output is 4-d");
                let s = ConvShape {
                    c_in,
                    h,
                    w: wd,
                    c_out,
                    kh,
                    kw,
                    oh,
                    ow,
                    geom: *geom,
                };
                let mut dx = self.needs(*x).then(|| Tensor::zeros(xv.shape()));
                let mut dw = self.needs(*w).then(|| Tensor::zeros(wv.shape()));
                let mut db = b.filter(|b| self.needs(*b)).map(|_| Tensor::zeros(&[c_out]));
                let in_per = c_in * h * wd;
                let out_per = c_out * oh * ow;
                for i in 0..n {
                    kernels::conv2d_backward(
                        &xv.data()[i * in_per..(i + 1) * in_per],
                        wv.data(),
                        &g.data()[i * out_per..(i + 1) * out_per],
                        &s,
                        dx.as_mut().map(|d| &mut d.data_mut()[i * in_per..(i + 1) * in_per]),
                        dw.as_mut().map(|d| d.data_mut()),
                        db.as_mut().map(|d| d.data_mut()),
                    );
                }
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Relu(x) => {
                let y = self.value(out).data();
                let d = g.data().iter().zip(y).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), d).expect("same shape"));
            }
            Op::Sigmoid(x) => {
                let y = self.value(out).data();
                let d = g.data().iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), d).expect("same shape"));
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (gv, &src) in g.data().iter().zip(argmax) {
                    dx.data_mut()[src] += gv;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Resize { x, ty, tx } => {
                let (_, _, h, w) = self.value(*x).dims4().expect("4-d");
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let (oh, ow) = (ty.len(), tx.len());
                for (plane, d) in dx.data_mut().chunks_mut(h * w).enumerate() {
                    kernels::resize_plane_backward(&g.data()[plane * oh * ow..(plane + 1) * oh * ow], w, ty, tx, d);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(parts) => {
                let (n, total, h, w) = g.dims4().expect("4-d");
                let mut offset = 0;
                for &p in parts {
                    let (_, c, _, _) = self.value(p).dims4().expect("4-d");
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(n * c * h * w);
                        for i in 0..n {
                            let start = (i * total + offset) * h * w;
                            d.extend_from_slice(&g.data()[start..start + c * h * w]);
                        }
                        self.accumulate(grads, p, Tensor::from_vec(&[n, c, h, w], d).expect("shape"));
                    }
                    offset += c;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g);
            }
            Op::GlobalAvgPool(x) => {
                let shape = self.value(*x).shape();
                let hw = shape[2] * shape[3];
                let d = g
                    .data()
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v / hw as f64, hw))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(shape, d).expect("shape"));
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (out_f, in_f) = (wv.shape()[0], wv.shape()[1]);
                let n = xv.shape()[0];
                let gd = g.data();
                if self.needs(*x) {
                    let mut dx = vec![0.0; n * in_f];
                    for i in 0..n {
                        for o in 0..out_f {
                            let go = gd[i * out_f + o];
                            for (d, wv) in dx[i * in_f..(i + 1) * in_f].iter_mut().zip(&wv.data()[o * in_f..(o + 1) * in_f]) {
                                *d += go * wv;
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx).expect("shape"));
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; out_f * in_f];
                    for i in 0..n {
                        for o in 0..out_f {
                            let go = gd[i * out_f + o];
                            for (d, xv) in dw[o * in_f..(o + 1) * in_f].iter_mut().zip(&xv.data()[i * in_f..(i + 1) * in_f]) {
                                *d += go * xv;
                            }
                        }
                    }
                    self.accumulate(grads, *w, Tensor::from_vec(wv.shape(), dw).expect("shape"));
                }
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    let mut db = vec![0.0; out_f];
                    for i in 0..n {
                        for (o, d) in db.iter_mut().enumerate() {
                            *d += gd[i * out_f + o];
                        }
                    }
                    self.accumulate(grads, b, Tensor::from_vec(&[out_f], db).expect("shape"));
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let lv = self.value(*logits);
                let scale = g.item() / targets.len() as f64;
                let d = lv.data().iter().zip(targets).map(|(&x, &y)| (sigmoid(x) - y) * scale).collect();
                self.accumulate(grads, *logits, Tensor::from_vec(lv.shape(), d).expect("shape"));
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let (_, c, h, w) = lv.dims4().expect("4-d");
                let hw = h * w;
                let scale = g.item() / targets.len() as f64;
                let mut d = vec![0.0; lv.numel()];
                let data = lv.data();
                for (m, &t) in targets.iter().enumerate() {
                    let (i, p) = (m / hw, m % hw);
                    let idx = |k: usize| (i * c + k) * hw + p;
                    let max = (0..c).map(|k| data[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = (0..c).map(|k| (data[idx(k)] - max).exp()).sum();
                    for k in 0..c {
                        let prob = (data[idx(k)] - max).exp() / denom;
                        let onehot = if k == t { 1.0 } else { 0.0 };
                        d[idx(k)] = (prob - onehot) * scale;
                    }
                }
                self.accumulate(grads, *logits, Tensor::from_vec(lv.shape(), d).expect("shape"));
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let scale = 2.0 * g.item() / target.len() as f64;
                let d = pv.data().iter().zip(target).map(|(p, t)| (p - t) * scale).collect();
                self.accumulate(grads, *pred, Tensor::from_vec(pv.shape(), d).expect("shape"));
            }
        }
    }
}
