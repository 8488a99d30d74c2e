//! Named parameter collections and the two network shapes used everywhere:
//! plain MLPs (optionally with per-hidden-layer normalization and a bounded
//! tanh output) and a GRU cell.
//!
//! Every forward pass exists twice: a taped version for training and a
//! `_valued` version that runs straight on the kernels for target networks,
//! evaluation rollouts, and encoding, where gradients are never needed.

use std::collections::HashMap;

use rand::Rng;

use super::kernels;
use super::real::Real;
use super::tape::{Act, Tape, Var};
use super::tensor::Tensor;
use crate::error::{CospaError, Result};

/// Ordered, uniquely named parameter tensors. Iteration order is insertion
/// order, so identical construction yields identical layouts, checkpoints,
/// and optimizer behavior.
#[derive(Clone, Debug)]
pub struct ParamSet<R> {
    names: Vec<String>,
    tensors: Vec<Tensor<R>>,
    index: HashMap<String, usize>,
}

impl<R: Real> Default for ParamSet<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParamSet<R> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<R>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(CospaError::Shape(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> &Tensor<R> {
        &self.tensors[self.index[name]]
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<R>> {
        self.index.get(name).map(|i| &self.tensors[*i])
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<R> {
        let i = self.index[name];
        &mut self.tensors[i]
    }

    pub fn at(&self, i: usize) -> (&str, &Tensor<R>) {
        (&self.names[i], &self.tensors[i])
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Tensor<R> {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    /// Soft update toward `online`: self = tau*online + (1-tau)*self.
    pub fn blend_from(&mut self, online: &ParamSet<R>, tau: R) {
        debug_assert_eq!(self.len(), online.len());
        for (t, o) in self.tensors.iter_mut().zip(online.tensors.iter()) {
            for (v, w) in t.as_mut_slice().iter_mut().zip(o.as_slice()) {
                *v = *v + tau * (*w - *v);
            }
        }
    }
}

/// Tape handles for one ParamSet, aligned with its insertion order.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn bind<R: Real>(tape: &mut Tape<R>, set: &ParamSet<R>) -> Self {
        let vars = (0..set.len()).map(|i| tape.param(set.at(i).1)).collect();
        BoundParams { vars }
    }

    /// Bind as constants: the net participates in the graph but receives no
    /// gradient (frozen critic inside the actor update).
    pub fn bind_frozen<R: Real>(tape: &mut Tape<R>, set: &ParamSet<R>) -> Self {
        let vars = (0..set.len()).map(|i| tape.constant(set.at(i).1)).collect();
        BoundParams { vars }
    }

    pub fn var<R: Real>(&self, set: &ParamSet<R>, name: &str) -> Var {
        self.vars[set.index[name]]
    }

    /// Gradients in ParamSet order; None means the loss never reached it.
    pub fn grads<'t, R: Real>(&self, tape: &'t Tape<R>) -> Vec<Option<&'t Tensor<R>>> {
        self.vars.iter().map(|v| tape.grad(*v)).collect()
    }
}

fn init_linear<R: Real>(
    set: &mut ParamSet<R>,
    prefix: &str,
    idx: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    set.add(format!("{prefix}.w{idx}"), Tensor::uniform(fan_in, fan_out, -bound, bound, rng))?;
    set.add(format!("{prefix}.b{idx}"), Tensor::zeros(1, fan_out))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct MlpSpec {
    /// Layer sizes from input to output, e.g. [4, 128, 128, 2].
    pub sizes: Vec<usize>,
    pub hidden_act: Act,
    /// Normalize after each hidden linear layer, before the activation.
    pub layer_norm: bool,
    /// Bound the output to (-1, 1).
    pub tanh_out: bool,
}

impl MlpSpec {
    pub fn relu(sizes: Vec<usize>) -> Self {
        MlpSpec { sizes, hidden_act: Act::Relu, layer_norm: false, tanh_out: false }
    }
}

/// An MLP whose parameters live in a shared ParamSet under `prefix`.
#[derive(Clone, Debug)]
pub struct Mlp {
    prefix: String,
    spec: MlpSpec,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Mlp {
    pub fn init<R: Real>(
        prefix: impl Into<String>,
        spec: MlpSpec,
        set: &mut ParamSet<R>,
        rng: &mut impl Rng,
    ) -> Result<Mlp> {
        let prefix = prefix.into();
        assert!(spec.sizes.len() >= 2, "mlp needs at least input and output sizes");
        for l in 0..spec.sizes.len() - 1 {
            init_linear(set, &prefix, l, spec.sizes[l], spec.sizes[l + 1], rng)?;
            let is_hidden = l + 2 < spec.sizes.len();
            if is_hidden && spec.layer_norm {
                let d = spec.sizes[l + 1];
                let mut gain = Tensor::zeros(1, d);
                gain.as_mut_slice().fill(R::one());
                set.add(format!("{prefix}.ln{l}.g"), gain)?;
                set.add(format!("{prefix}.ln{l}.b"), Tensor::zeros(1, d))?;
            }
        }
        Ok(Mlp { prefix, spec })
    }

    pub fn in_dim(&self) -> usize {
        self.spec.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.spec.sizes.last().unwrap()
    }

    pub fn forward<R: Real>(
        &self,
        tape: &mut Tape<R>,
        bp: &BoundParams,
        set: &ParamSet<R>,
        x: Var,
    ) -> Result<Var> {
        let mut h = x;
        let last = self.spec.sizes.len() - 2;
        for l in 0..=last {
            let w = bp.var(set, &format!("{}.w{l}", self.prefix));
            let b = bp.var(set, &format!("{}.b{l}", self.prefix));
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            if l < last {
                if self.spec.layer_norm {
                    let g = bp.var(set, &format!("{}.ln{l}.g", self.prefix));
                    let lb = bp.var(set, &format!("{}.ln{l}.b", self.prefix));
                    h = tape.layer_norm(h, g, lb, R::from_f64(LAYER_NORM_EPS))?;
                }
                h = tape.activation(h, self.spec.hidden_act);
            } else if self.spec.tanh_out {
                h = tape.activation(h, Act::Tanh);
            }
        }
        Ok(h)
    }

    /// Rebuild an MLP and its parameters from checkpoint entries under
    /// `prefix`. Layer sizes and normalization are recovered from the entry
    /// shapes and names; activations are not serialized, so the caller
    /// supplies them.
    pub fn from_entries<R: Real>(
        prefix: &str,
        hidden_act: Act,
        tanh_out: bool,
        entries: &[(String, Tensor<R>)],
    ) -> Result<(Mlp, ParamSet<R>)> {
        let mut set = ParamSet::new();
        for (name, t) in entries {
            if name == prefix || name.starts_with(&format!("{prefix}.")) {
                set.add(name.clone(), t.clone())?;
            }
        }
        let mut sizes = Vec::new();
        let mut layer_norm = false;
        let mut l = 0;
        while let Some(w) = set.try_get(&format!("{prefix}.w{l}")) {
            if l == 0 {
                sizes.push(w.rows());
            } else if sizes[l] != w.rows() {
                return Err(CospaError::Format(format!(
                    "checkpoint layer {l} of {prefix} does not chain: {} vs {}",
                    sizes[l],
                    w.rows()
                )));
            }
            sizes.push(w.cols());
            if set.try_get(&format!("{prefix}.ln{l}.g")).is_some() {
                layer_norm = true;
            }
            l += 1;
        }
        if sizes.len() < 2 {
            return Err(CospaError::Format(format!("checkpoint holds no layers for {prefix}")));
        }
        let spec = MlpSpec { sizes, hidden_act, layer_norm, tanh_out };
        Ok((Mlp { prefix: prefix.to_string(), spec }, set))
    }

    /// No-grad forward straight on the kernels.
    pub fn forward_valued<R: Real>(&self, set: &ParamSet<R>, x: &Tensor<R>) -> Tensor<R> {
        let mut h = x.clone();
        let last = self.spec.sizes.len() - 2;
        for l in 0..=last {
            let w = set.get(&format!("{}.w{l}", self.prefix));
            let b = set.get(&format!("{}.b{l}", self.prefix));
            let (m, k) = h.shape();
            let n = w.cols();
            let mut y = Tensor::zeros(m, n);
            kernels::gemm_acc(h.as_slice(), w.as_slice(), y.as_mut_slice(), m, k, n);
            kernels::add_bias_rows(y.as_mut_slice(), b.as_slice(), m, n);
            if l < last {
                if self.spec.layer_norm {
                    let g = set.get(&format!("{}.ln{l}.g", self.prefix));
                    let lb = set.get(&format!("{}.ln{l}.b", self.prefix));
                    layer_norm_valued(&mut y, g, lb, R::from_f64(LAYER_NORM_EPS));
                }
                activation_valued(&mut y, self.spec.hidden_act);
            } else if self.spec.tanh_out {
                activation_valued(&mut y, Act::Tanh);
            }
            h = y;
        }
        h
    }
}

pub fn activation_valued<R: Real>(x: &mut Tensor<R>, kind: Act) {
    for v in x.as_mut_slice() {
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
}

pub fn layer_norm_valued<R: Real>(x: &mut Tensor<R>, gain: &Tensor<R>, bias: &Tensor<R>, eps: R) {
    let (m, d) = x.shape();
    let dr = R::from_f64(d as f64);
    for i in 0..m {
        let row = &mut x.as_mut_slice()[i * d..(i + 1) * d];
        let mut mean = R::zero();
        for v in row.iter() {
            mean += *v;
        }
        mean = mean / dr;
        let mut var = R::zero();
        for v in row.iter() {
            let c = *v - mean;
            var += c * c;
        }
        var = var / dr;
        let rstd = R::one() / (var + eps).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * rstd * gain.get(0, j) + bias.get(0, j);
        }
    }
}

/// GRU cell: u and r are sigmoid gates, the candidate n applies the reset
/// gate to the recurrent contribution, and h' = (1-u)*n + u*h.
#[derive(Clone, Debug)]
pub struct Gru {
    prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn init<R: Real>(
        prefix: impl Into<String>,
        in_dim: usize,
        hidden: usize,
        set: &mut ParamSet<R>,
        rng: &mut impl Rng,
    ) -> Result<Gru> {
        let prefix = prefix.into();
        let bi = 1.0 / (in_dim as f64).sqrt();
        let bh = 1.0 / (hidden as f64).sqrt();
        for gate in ["u", "r", "n"] {
            set.add(
                format!("{prefix}.w{gate}"),
                Tensor::uniform(in_dim, hidden, -bi, bi, rng),
            )?;
            set.add(
                format!("{prefix}.u{gate}"),
                Tensor::uniform(hidden, hidden, -bh, bh, rng),
            )?;
            set.add(format!("{prefix}.b{gate}"), Tensor::zeros(1, hidden))?;
        }
        Ok(Gru { prefix, in_dim, hidden })
    }

    pub fn step<R: Real>(
        &self,
        tape: &mut Tape<R>,
        bp: &BoundParams,
        set: &ParamSet<R>,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        let p = &self.prefix;
        let gate = |tape: &mut Tape<R>, name: &str, x: Var, h: Var| -> Result<Var> {
            let xs = tape.matmul(x, bp.var(set, &format!("{p}.w{name}")))?;
            let hs = tape.matmul(h, bp.var(set, &format!("{p}.u{name}")))?;
            let s = tape.add(xs, hs)?;
            tape.add_bias(s, bp.var(set, &format!("{p}.b{name}")))
        };
        let u = gate(tape, "u", x, h)?;
        let u = tape.activation(u, Act::Sigmoid);
        let r = gate(tape, "r", x, h)?;
        let r = tape.activation(r, Act::Sigmoid);

        let xn = tape.matmul(x, bp.var(set, &format!("{p}.wn")))?;
        let xn = tape.add_bias(xn, bp.var(set, &format!("{p}.bn")))?;
        let hn = tape.matmul(h, bp.var(set, &format!("{p}.un")))?;
        let rhn = tape.mul(r, hn)?;
        let n = tape.add(xn, rhn)?;
        let n = tape.activation(n, Act::Tanh);

        let un = tape.mul(u, n)?;
        let uh = tape.mul(u, h)?;
        let keep = tape.sub(n, un)?;
        tape.add(keep, uh)
    }

    pub fn step_valued<R: Real>(
        &self,
        set: &ParamSet<R>,
        x: &Tensor<R>,
        h: &Tensor<R>,
    ) -> Tensor<R> {
        let p = &self.prefix;
        let lin = |name: &str, x: &Tensor<R>, h: &Tensor<R>, bias: bool| -> Tensor<R> {
            let m = x.rows();
            let mut y = Tensor::zeros(m, self.hidden);
            let w = set.get(&format!("{p}.w{name}"));
            kernels::gemm_acc(x.as_slice(), w.as_slice(), y.as_mut_slice(), m, self.in_dim, self.hidden);
            let u = set.get(&format!("{p}.u{name}"));
            kernels::gemm_acc(h.as_slice(), u.as_slice(), y.as_mut_slice(), m, self.hidden, self.hidden);
            if bias {
                let b = set.get(&format!("{p}.b{name}"));
                kernels::add_bias_rows(y.as_mut_slice(), b.as_slice(), m, self.hidden);
            }
            y
        };
        let mut u = lin("u", x, h, true);
        activation_valued(&mut u, Act::Sigmoid);
        let mut r = lin("r", x, h, true);
        activation_valued(&mut r, Act::Sigmoid);

        let m = x.rows();
        let mut xn = Tensor::zeros(m, self.hidden);
        let w = set.get(&format!("{p}.wn"));
        kernels::gemm_acc(x.as_slice(), w.as_slice(), xn.as_mut_slice(), m, self.in_dim, self.hidden);
        let b = set.get(&format!("{p}.bn"));
        kernels::add_bias_rows(xn.as_mut_slice(), b.as_slice(), m, self.hidden);
        let mut hn = Tensor::zeros(m, self.hidden);
        let un = set.get(&format!("{p}.un"));
        kernels::gemm_acc(h.as_slice(), un.as_slice(), hn.as_mut_slice(), m, self.hidden, self.hidden);
        let mut n = xn;
        for ((nv, rv), hv) in n.as_mut_slice().iter_mut().zip(r.as_slice()).zip(hn.as_slice()) {
            *nv += *rv * *hv;
        }
        activation_valued(&mut n, Act::Tanh);

        let mut out = n;
        for ((ov, uv), hv) in out.as_mut_slice().iter_mut().zip(u.as_slice()).zip(h.as_slice()) {
            *ov = (R::one() - *uv) * *ov + *uv * *hv;
        }
        out
    }
}
