//! Reverse-mode autodiff over a recorded op list (Wengert tape).
//!
//! A `Tape` owns every intermediate value of one forward pass. `backward`
//! walks the recorded ops once in reverse and accumulates exact gradients for
//! every node that was registered with `param`. Nodes registered with
//! `constant` never receive gradients. Build a fresh tape per training step.

// Kernel loops index several parallel buffers at once; iterator rewrites
// of the single-buffer cases would split the style mid-file.
#![allow(clippy::needless_range_loop)]

use super::kernels;
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{CospaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Relu,
    Tanh,
    Sigmoid,
}

enum Op<R> {
    Gemm { a: usize, b: usize, y: usize },
    AddBias { x: usize, b: usize, y: usize },
    Activation { x: usize, y: usize, kind: Act },
    LayerNorm { x: usize, gain: usize, bias: usize, y: usize, xhat: Tensor<R>, rstd: Vec<R> },
    Add { a: usize, b: usize, y: usize },
    Sub { a: usize, b: usize, y: usize },
    Mul { a: usize, b: usize, y: usize },
    Scale { x: usize, y: usize, c: R },
    AddScaled { a: usize, b: usize, y: usize, c: R },
    ConcatCols { parts: Vec<usize>, y: usize },
    MeanSegments { x: usize, y: usize, seg: usize },
    RepeatRows { x: usize, y: usize, times: usize },
    MeanAll { x: usize, y: usize },
    Reshape { x: usize, y: usize },
    Mse { pred: usize, target: usize, y: usize },
    CeLogits { logits: usize, y: usize, targets: Vec<usize>, softmax: Tensor<R> },
}

pub struct Tape<R: Real> {
    vals: Vec<Tensor<R>>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Tensor<R>>>,
    ops: Vec<Op<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { vals: Vec::new(), needs_grad: Vec::new(), grads: Vec::new(), ops: Vec::new() }
    }

    fn push(&mut self, t: Tensor<R>, needs: bool) -> Var {
        self.vals.push(t);
        self.needs_grad.push(needs);
        self.grads.push(None);
        Var(self.vals.len() - 1)
    }

    /// Leaf that never receives a gradient (inputs, targets, frozen nets).
    pub fn constant(&mut self, t: &Tensor<R>) -> Var {
        self.push(t.clone(), false)
    }

    pub fn constant_owned(&mut self, t: Tensor<R>) -> Var {
        self.push(t, false)
    }

    /// Leaf that accumulates a gradient in `backward`.
    pub fn param(&mut self, t: &Tensor<R>) -> Var {
        self.push(t.clone(), true)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.vals[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads[v.0].as_ref()
    }

    fn needs(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.vals[a.0].shape();
        let (kb, n) = self.vals[b.0].shape();
        if ka != kb {
            return Err(CospaError::Shape(format!("matmul {}x{} by {}x{}", m, ka, kb, n)));
        }
        let mut y = Tensor::zeros(m, n);
        kernels::gemm_acc(
            self.vals[a.0].as_slice(),
            self.vals[b.0].as_slice(),
            y.as_mut_slice(),
            m,
            ka,
            n,
        );
        let needs = self.needs(a) || self.needs(b);
        let yv = self.push(y, needs);
        self.ops.push(Op::Gemm { a: a.0, b: b.0, y: yv.0 });
        Ok(yv)
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.vals[x.0].shape();
        let (br, bc) = self.vals[b.0].shape();
        if br != 1 || bc != n {
            return Err(CospaError::Shape(format!("bias {}x{} against {}x{}", br, bc, m, n)));
        }
        let mut y = self.vals[x.0].clone();
        kernels::add_bias_rows(y.as_mut_slice(), self.vals[b.0].as_slice(), m, n);
        let needs = self.needs(x) || self.needs(b);
        let yv = self.push(y, needs);
        self.ops.push(Op::AddBias { x: x.0, b: b.0, y: yv.0 });
        Ok(yv)
    }

    pub fn activation(&mut self, x: Var, kind: Act) -> Var {
        let mut y = self.vals[x.0].clone();
        for v in y.as_mut_slice() {
            *v = match kind {
                Act::Relu => {
                    if *v > R::zero() {
                        *v
                    } else {
                        R::zero()
                    }
                }
                Act::Tanh => v.tanh(),
                Act::Sigmoid => R::one() / (R::one() + (-*v).exp()),
            };
        }
        let needs = self.needs(x);
        let yv = self.push(y, needs);
        self.ops.push(Op::Activation { x: x.0, y: yv.0, kind });
        yv
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: R) -> Result<Var> {
        let (m, d) = self.vals[x.0].shape();
        if self.vals[gain.0].shape() != (1, d) || self.vals[bias.0].shape() != (1, d) {
            return Err(CospaError::Shape("layer_norm gain/bias must be (1,d)".into()));
        }
        let mut xhat = Tensor::zeros(m, d);
        let mut rstd = vec![R::zero(); m];
        let dr = R::from_f64(d as f64);
        for i in 0..m {
            let row = self.vals[x.0].row(i);
            let mut mean = R::zero();
            for v in row {
                mean += *v;
            }
            mean = mean / dr;
            let mut var = R::zero();
            for v in row {
                let c = *v - mean;
                var += c * c;
            }
            var = var / dr;
            let rs = R::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..d {
                xhat.set(i, j, (row[j] - mean) * rs);
            }
        }
        let mut y = Tensor::zeros(m, d);
        {
            let g = self.vals[gain.0].row(0);
            let b = self.vals[bias.0].row(0);
            for i in 0..m {
                for j in 0..d {
                    y.set(i, j, xhat.get(i, j) * g[j] + b[j]);
                }
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        let yv = self.push(y, needs);
        self.ops.push(Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, y: yv.0, xhat, rstd });
        Ok(yv)
    }

    fn binary_shapes(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let sa = self.vals[a.0].shape();
        let sb = self.vals[b.0].shape();
        if sa != sb {
            return Err(CospaError::Shape(format!(
                "{} on {}x{} vs {}x{}",
                what, sa.0, sa.1, sb.0, sb.1
            )));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes(a, b, "add")?;
        let mut y = self.vals[a.0].clone();
        for (v, w) in y.as_mut_slice().iter_mut().zip(self.vals[b.0].as_slice()) {
            *v += *w;
        }
        let needs = self.needs(a) || self.needs(b);
        let yv = self.push(y, needs);
        self.ops.push(Op::Add { a: a.0, b: b.0, y: yv.0 });
        Ok(yv)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes(a, b, "sub")?;
        let mut y = self.vals[a.0].clone();
        for (v, w) in y.as_mut_slice().iter_mut().zip(self.vals[b.0].as_slice()) {
            *v -= *w;
        }
        let needs = self.needs(a) || self.needs(b);
        let yv = self.push(y, needs);
        self.ops.push(Op::Sub { a: a.0, b: b.0, y: yv.0 });
        Ok(yv)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes(a, b, "mul")?;
        let mut y = self.vals[a.0].clone();
        for (v, w) in y.as_mut_slice().iter_mut().zip(self.vals[b.0].as_slice()) {
            *v *= *w;
        }
        let needs = self.needs(a) || self.needs(b);
        let yv = self.push(y, needs);
        self.ops.push(Op::Mul { a: a.0, b: b.0, y: yv.0 });
        Ok(yv)
    }

    pub fn scale(&mut self, x: Var, c: R) -> Var {
        let mut y = self.vals[x.0].clone();
        for v in y.as_mut_slice() {
            *v *= c;
        }
        let needs = self.needs(x);
        let yv = self.push(y, needs);
        self.ops.push(Op::Scale { x: x.0, y: yv.0, c });
        yv
    }

    /// y = a + c*b.
    pub fn add_scaled(&mut self, a: Var, b: Var, c: R) -> Result<Var> {
        self.binary_shapes(a, b, "add_scaled")?;
        let mut y = self.vals[a.0].clone();
        for (v, w) in y.as_mut_slice().iter_mut().zip(self.vals[b.0].as_slice()) {
            *v = c.mul_add(*w, *v);
        }
        let needs = self.needs(a) || self.needs(b);
        let yv = self.push(y, needs);
        self.ops.push(Op::AddScaled { a: a.0, b: b.0, y: yv.0, c });
        Ok(yv)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CospaError::Shape("concat_cols of nothing".into()));
        }
        let m = self.vals[parts[0].0].rows();
        let mut total = 0;
        for p in parts {
            if self.vals[p.0].rows() != m {
                return Err(CospaError::Shape("concat_cols row mismatch".into()));
            }
            total += self.vals[p.0].cols();
        }
        let mut y = Tensor::zeros(m, total);
        for i in 0..m {
            let mut off = 0;
            for p in parts {
                let row = self.vals[p.0].row(i);
                let w = row.len();
                y.as_mut_slice()[i * total + off..i * total + off + w].copy_from_slice(row);
                off += w;
            }
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        let yv = self.push(y, needs);
        self.ops.push(Op::ConcatCols { parts: parts.iter().map(|p| p.0).collect(), y: yv.0 });
        Ok(yv)
    }

    /// (s*seg, d) -> (s, d): mean over each consecutive block of `seg` rows.
    pub fn mean_segments(&mut self, x: Var, seg: usize) -> Result<Var> {
        let (m, d) = self.vals[x.0].shape();
        if seg == 0 || m % seg != 0 {
            return Err(CospaError::Shape(format!("mean_segments seg {} over {} rows", seg, m)));
        }
        let s = m / seg;
        let mut y = Tensor::zeros(s, d);
        let inv = R::one() / R::from_f64(seg as f64);
        for i in 0..s {
            for r in 0..seg {
                let row = self.vals[x.0].row(i * seg + r);
                for j in 0..d {
                    let cur = y.get(i, j);
                    y.set(i, j, cur + row[j] * inv);
                }
            }
        }
        let needs = self.needs(x);
        let yv = self.push(y, needs);
        self.ops.push(Op::MeanSegments { x: x.0, y: yv.0, seg });
        Ok(yv)
    }

    /// (m, d) -> (m*times, d): each row repeated `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let (m, d) = self.vals[x.0].shape();
        let mut y = Tensor::zeros(m * times, d);
        for i in 0..m {
            let row = self.vals[x.0].row(i);
            for r in 0..times {
                let dst = (i * times + r) * d;
                y.as_mut_slice()[dst..dst + d].copy_from_slice(row);
            }
        }
        let needs = self.needs(x);
        let yv = self.push(y, needs);
        self.ops.push(Op::RepeatRows { x: x.0, y: yv.0, times });
        yv
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let mut acc = R::zero();
        for v in self.vals[x.0].as_slice() {
            acc += *v;
        }
        let y = Tensor::scalar(acc / R::from_f64(self.vals[x.0].numel() as f64));
        let needs = self.needs(x);
        let yv = self.push(y, needs);
        self.ops.push(Op::MeanAll { x: x.0, y: yv.0 });
        yv
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let y = self.vals[x.0].clone().reshaped(rows, cols)?;
        let needs = self.needs(x);
        let yv = self.push(y, needs);
        self.ops.push(Op::Reshape { x: x.0, y: yv.0 });
        Ok(yv)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.binary_shapes(pred, target, "mse")?;
        let mut acc = R::zero();
        for (p, t) in self.vals[pred.0].as_slice().iter().zip(self.vals[target.0].as_slice()) {
            let d = *p - *t;
            acc += d * d;
        }
        let y = Tensor::scalar(acc / R::from_f64(self.vals[pred.0].numel() as f64));
        let needs = self.needs(pred) || self.needs(target);
        let yv = self.push(y, needs);
        self.ops.push(Op::Mse { pred: pred.0, target: target.0, y: yv.0 });
        Ok(yv)
    }

    /// Mean over rows of -log softmax(logits)[target].
    pub fn cross_entropy_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, k) = self.vals[logits.0].shape();
        if targets.len() != m {
            return Err(CospaError::Shape(format!("{} targets for {} rows", targets.len(), m)));
        }
        if let Some(t) = targets.iter().find(|t| **t >= k) {
            return Err(CospaError::Shape(format!("target {} out of range for {} classes", t, k)));
        }
        let mut softmax = Tensor::zeros(m, k);
        let mut loss = R::zero();
        for i in 0..m {
            let row = self.vals[logits.0].row(i);
            let mut mx = row[0];
            for v in row {
                if *v > mx {
                    mx = *v;
                }
            }
            let mut denom = R::zero();
            for v in row {
                denom += (*v - mx).exp();
            }
            let log_denom = denom.ln();
            for j in 0..k {
                softmax.set(i, j, (row[j] - mx).exp() / denom);
            }
            loss += log_denom - (row[targets[i]] - mx);
        }
        let y = Tensor::scalar(loss / R::from_f64(m as f64));
        let needs = self.needs(logits);
        let yv = self.push(y, needs);
        self.ops.push(Op::CeLogits {
            logits: logits.0,
            y: yv.0,
            targets: targets.to_vec(),
            softmax,
        });
        Ok(yv)
    }

    fn acc_grad<'a>(
        grads: &'a mut [Option<Tensor<R>>],
        vals: &[Tensor<R>],
        id: usize,
    ) -> &'a mut Tensor<R> {
        let (r, c) = vals[id].shape();
        grads[id].get_or_insert_with(|| Tensor::zeros(r, c))
    }

    /// Reverse sweep from a scalar loss. Gradients of all `param` leaves that
    /// the loss does not reach stay `None` (read as zero).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.vals[loss.0].numel() != 1 {
            return Err(CospaError::Shape("backward requires a scalar loss".into()));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(R::one()));
        let vals = &self.vals;
        let needs = &self.needs_grad;
        let grads = &mut self.grads;
        for op in self.ops.iter().rev() {
            match op {
                Op::Gemm { a, b, y } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    let (m, k) = vals[*a].shape();
                    let n = vals[*b].cols();
                    if needs[*a] {
                        let bt = vals[*b].transposed();
                        let da = Self::acc_grad(grads, vals, *a);
                        kernels::gemm_acc(dy.as_slice(), bt.as_slice(), da.as_mut_slice(), m, n, k);
                    }
                    if needs[*b] {
                        let at = vals[*a].transposed();
                        let db = Self::acc_grad(grads, vals, *b);
                        kernels::gemm_acc(at.as_slice(), dy.as_slice(), db.as_mut_slice(), k, m, n);
                    }
                }
                Op::AddBias { x, b, y } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    let (m, n) = dy.shape();
                    if needs[*x] {
                        let dx = Self::acc_grad(grads, vals, *x);
                        for (v, w) in dx.as_mut_slice().iter_mut().zip(dy.as_slice()) {
                            *v += *w;
                        }
                    }
                    if needs[*b] {
                        let db = Self::acc_grad(grads, vals, *b);
                        for i in 0..m {
                            for j in 0..n {
                                let cur = db.get(0, j);
                                db.set(0, j, cur + dy.get(i, j));
                            }
                        }
                    }
                }
                Op::Activation { x, y, kind } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    if !needs[*x] {
                        continue;
                    }
                    let yval = vals[*y].clone();
                    let dx = Self::acc_grad(grads, vals, *x);
                    for ((v, w), o) in
                        dx.as_mut_slice().iter_mut().zip(dy.as_slice()).zip(yval.as_slice())
                    {
                        let d = match kind {
                            Act::Relu => {
                                if *o > R::zero() {
                                    R::one()
                                } else {
                                    R::zero()
                                }
                            }
                            Act::Tanh => R::one() - *o * *o,
                            Act::Sigmoid => *o * (R::one() - *o),
                        };
                        *v = d.mul_add(*w, *v);
                    }
                }
                Op::LayerNorm { x, gain, bias, y, xhat, rstd } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    let (m, d) = dy.shape();
                    let dr = R::from_f64(d as f64);
                    if needs[*gain] {
                        let dg = Self::acc_grad(grads, vals, *gain);
                        for i in 0..m {
                            for j in 0..d {
                                let cur = dg.get(0, j);
                                dg.set(0, j, cur + dy.get(i, j) * xhat.get(i, j));
                            }
                        }
                    }
                    if needs[*bias] {
                        let db = Self::acc_grad(grads, vals, *bias);
                        for i in 0..m {
                            for j in 0..d {
                                let cur = db.get(0, j);
                                db.set(0, j, cur + dy.get(i, j));
                            }
                        }
                    }
                    if needs[*x] {
                        let gainv = vals[*gain].clone();
                        let dx = Self::acc_grad(grads, vals, *x);
                        for i in 0..m {
                            let mut mean_g = R::zero();
                            let mut mean_gx = R::zero();
                            for j in 0..d {
                                let g = dy.get(i, j) * gainv.get(0, j);
                                mean_g += g;
                                mean_gx += g * xhat.get(i, j);
                            }
                            mean_g = mean_g / dr;
                            mean_gx = mean_gx / dr;
                            for j in 0..d {
                                let g = dy.get(i, j) * gainv.get(0, j);
                                let contrib = rstd[i] * (g - mean_g - xhat.get(i, j) * mean_gx);
                                let cur = dx.get(i, j);
                                dx.set(i, j, cur + contrib);
                            }
                        }
                    }
                }
                Op::Add { a, b, y } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    for (id, _) in [(a, 1), (b, 1)] {
                        if needs[*id] {
                            let d = Self::acc_grad(grads, vals, *id);
                            for (v, w) in d.as_mut_slice().iter_mut().zip(dy.as_slice()) {
                                *v += *w;
                            }
                        }
                    }
                }
                Op::Sub { a, b, y } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    if needs[*a] {
                        let d = Self::acc_grad(grads, vals, *a);
                        for (v, w) in d.as_mut_slice().iter_mut().zip(dy.as_slice()) {
                            *v += *w;
                        }
                    }
                    if needs[*b] {
                        let d = Self::acc_grad(grads, vals, *b);
                        for (v, w) in d.as_mut_slice().iter_mut().zip(dy.as_slice()) {
                            *v -= *w;
                        }
                    }
                }
                Op::Mul { a, b, y } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    if needs[*a] {
                        let bval = vals[*b].clone();
                        let d = Self::acc_grad(grads, vals, *a);
                        for ((v, w), o) in
                            d.as_mut_slice().iter_mut().zip(dy.as_slice()).zip(bval.as_slice())
                        {
                            *v = o.mul_add(*w, *v);
                        }
                    }
                    if needs[*b] {
                        let aval = vals[*a].clone();
                        let d = Self::acc_grad(grads, vals, *b);
                        for ((v, w), o) in
                            d.as_mut_slice().iter_mut().zip(dy.as_slice()).zip(aval.as_slice())
                        {
                            *v = o.mul_add(*w, *v);
                        }
                    }
                }
                Op::Scale { x, y, c } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    if needs[*x] {
                        let d = Self::acc_grad(grads, vals, *x);
                        for (v, w) in d.as_mut_slice().iter_mut().zip(dy.as_slice()) {
                            *v = c.mul_add(*w, *v);
                        }
                    }
                }
                Op::AddScaled { a, b, y, c } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    if needs[*a] {
                        let d = Self::acc_grad(grads, vals, *a);
                        for (v, w) in d.as_mut_slice().iter_mut().zip(dy.as_slice()) {
                            *v += *w;
                        }
                    }
                    if needs[*b] {
                        let d = Self::acc_grad(grads, vals, *b);
                        for (v, w) in d.as_mut_slice().iter_mut().zip(dy.as_slice()) {
                            *v = c.mul_add(*w, *v);
                        }
                    }
                }
                Op::ConcatCols { parts, y } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    let m = dy.rows();
                    let total = dy.cols();
                    let mut off = 0;
                    for p in parts {
                        let w = vals[*p].cols();
                        if needs[*p] {
                            let d = Self::acc_grad(grads, vals, *p);
                            for i in 0..m {
                                for j in 0..w {
                                    let cur = d.get(i, j);
                                    d.set(i, j, cur + dy.as_slice()[i * total + off + j]);
                                }
                            }
                        }
                        off += w;
                    }
                }
                Op::MeanSegments { x, y, seg } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    if !needs[*x] {
                        continue;
                    }
                    let (s, dcols) = dy.shape();
                    let inv = R::one() / R::from_f64(*seg as f64);
                    let dx = Self::acc_grad(grads, vals, *x);
                    for i in 0..s {
                        for r in 0..*seg {
                            for j in 0..dcols {
                                let cur = dx.get(i * seg + r, j);
                                dx.set(i * seg + r, j, cur + dy.get(i, j) * inv);
                            }
                        }
                    }
                }
                Op::RepeatRows { x, y, times } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    if !needs[*x] {
                        continue;
                    }
                    let (m, dcols) = vals[*x].shape();
                    let dx = Self::acc_grad(grads, vals, *x);
                    for i in 0..m {
                        for r in 0..*times {
                            for j in 0..dcols {
                                let cur = dx.get(i, j);
                                dx.set(i, j, cur + dy.get(i * times + r, j));
                            }
                        }
                    }
                }
                Op::MeanAll { x, y } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    if !needs[*x] {
                        continue;
                    }
                    let scale = dy.item() / R::from_f64(vals[*x].numel() as f64);
                    let dx = Self::acc_grad(grads, vals, *x);
                    for v in dx.as_mut_slice() {
                        *v += scale;
                    }
                }
                Op::Reshape { x, y } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    if !needs[*x] {
                        continue;
                    }
                    let dx = Self::acc_grad(grads, vals, *x);
                    for (v, w) in dx.as_mut_slice().iter_mut().zip(dy.as_slice()) {
                        *v += *w;
                    }
                }
                Op::Mse { pred, target, y } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    let scale =
                        dy.item() * R::from_f64(2.0 / vals[*pred].numel() as f64);
                    if needs[*pred] {
                        let tval = vals[*target].clone();
                        let pval = vals[*pred].clone();
                        let d = Self::acc_grad(grads, vals, *pred);
                        for ((v, p), t) in
                            d.as_mut_slice().iter_mut().zip(pval.as_slice()).zip(tval.as_slice())
                        {
                            *v = scale.mul_add(*p - *t, *v);
                        }
                    }
                    if needs[*target] {
                        let tval = vals[*target].clone();
                        let pval = vals[*pred].clone();
                        let d = Self::acc_grad(grads, vals, *target);
                        for ((v, p), t) in
                            d.as_mut_slice().iter_mut().zip(pval.as_slice()).zip(tval.as_slice())
                        {
                            *v = scale.mul_add(*t - *p, *v);
                        }
                    }
                }
                Op::CeLogits { logits, y, targets, softmax } => {
                    let Some(dy) = grads[*y].clone() else { continue };
                    if !needs[*logits] {
                        continue;
                    }
                    let (m, k) = softmax.shape();
                    let scale = dy.item() / R::from_f64(m as f64);
                    let dl = Self::acc_grad(grads, vals, *logits);
                    for i in 0..m {
                        for j in 0..k {
                            let onehot = if targets[i] == j { R::one() } else { R::zero() };
                            let cur = dl.get(i, j);
                            dl.set(i, j, cur + scale * (softmax.get(i, j) - onehot));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
