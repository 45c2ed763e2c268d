//! Execution contexts for the network graph.
//!
//! Model code is written once against [`Exec`]. [`Eager`] evaluates directly
//! on tensors and keeps nothing around, which is what tracking uses.
//! [`Tape`] records every op so [`Tape::backward`] can replay them in reverse;
//! one tape belongs to one training step on one thread.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

pub trait Exec {
    type Value: Clone;

    /// A named trainable parameter. Requesting the same name twice yields the
    /// same handle, so shared weights accumulate gradient from every use.
    fn param(&mut self, name: &str, t: &Tensor) -> Self::Value;
    fn input(&mut self, t: Tensor) -> Self::Value;
    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: Option<&Self::Value>,
        stride: usize,
        padding: usize,
    ) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn group_norm(
        &mut self,
        x: &Self::Value,
        groups: usize,
        gamma: &Self::Value,
        beta: &Self::Value,
    ) -> Result<Self::Value>;
    fn exp(&mut self, x: &Self::Value) -> Self::Value;
    fn xcorr(&mut self, search: &Self::Value, template: &Self::Value) -> Result<Self::Value>;
    fn concat(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;
}

/// Tape-free evaluation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Exec for Eager {
    type Value = Tensor;

    fn param(&mut self, _name: &str, t: &Tensor) -> Tensor {
        t.clone()
    }

    fn input(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn conv2d(
        &mut self,
        x: &Tensor,
        w: &Tensor,
        b: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        tensor::conv2d(x, w, b, stride, padding)
    }

    fn relu(&mut self, x: &Tensor) -> Tensor {
        tensor::relu(x)
    }

    fn group_norm(&mut self, x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
        tensor::group_norm(x, groups, gamma, beta)
    }

    fn exp(&mut self, x: &Tensor) -> Tensor {
        x.map(f64::exp)
    }

    fn xcorr(&mut self, search: &Tensor, template: &Tensor) -> Result<Tensor> {
        tensor::depthwise_xcorr(search, template)
    }

    fn concat(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        tensor::concat_channels(&refs)
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        padding: usize,
    },
    Relu(usize),
    GroupNorm {
        x: usize,
        groups: usize,
        gamma: usize,
        beta: usize,
    },
    Exp(usize),
    Xcorr {
        search: usize,
        template: usize,
    },
    Concat {
        parts: Vec<usize>,
        sizes: Vec<usize>,
    },
    /// Scalar output whose local gradients were computed alongside the value.
    Scalar {
        inputs: Vec<usize>,
        local: Vec<Tensor>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, usize>,
    frozen: Vec<String>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parameters whose name starts with `prefix` become constants on this tape.
    pub fn freeze_prefix(&mut self, prefix: impl Into<String>) {
        self.frozen.push(prefix.into());
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: &Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A trainable leaf that is not a named parameter (e.g. a probe input).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records a scalar computed outside the tape together with its gradient
    /// with respect to each input.
    pub fn scalar(&mut self, value: f64, inputs: &[Var], local: Vec<Tensor>) -> Result<Var> {
        if inputs.len() != local.len() {
            return Err(Error::shape("one local gradient per input required"));
        }
        for (v, g) in inputs.iter().zip(&local) {
            if self.nodes[v.0].value.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "local gradient shape {:?} for input of shape {:?}",
                    g.shape(),
                    self.nodes[v.0].value.shape()
                )));
            }
        }
        let needs = inputs.iter().any(|v| self.needs(v));
        Ok(self.push(
            Tensor::scalar(value),
            Op::Scalar {
                inputs: inputs.iter().map(|v| v.0).collect(),
                local,
            },
            needs,
        ))
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.nodes[out.0].value.len() != 1 {
            return Err(Error::shape("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::full(self.nodes[out.0].value.shape().to_vec(), 1.0));

        for id in (0..=out.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let mut contribs: Vec<(usize, Tensor)> = Vec::new();
            match &node.op {
                Op::Leaf => {}
                Op::Conv {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (dx, dw, db) = tensor::conv2d_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        &g,
                        *stride,
                        *padding,
                    )?;
                    contribs.push((*x, dx));
                    contribs.push((*w, dw));
                    if let Some(b) = b {
                        contribs.push((*b, db));
                    }
                }
                Op::Relu(x) => {
                    let mut dx = g.clone();
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    contribs.push((*x, dx));
                }
                Op::GroupNorm {
                    x,
                    groups,
                    gamma,
                    beta,
                } => {
                    let (dx, dg, db) = tensor::group_norm_backward(
                        &self.nodes[*x].value,
                        *groups,
                        &self.nodes[*gamma].value,
                        &g,
                    )?;
                    contribs.push((*x, dx));
                    contribs.push((*gamma, dg));
                    contribs.push((*beta, db));
                }
                Op::Exp(x) => {
                    let mut dx = g.clone();
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y;
                    }
                    contribs.push((*x, dx));
                }
                Op::Xcorr { search, template } => {
                    let (ds, dt) = tensor::depthwise_xcorr_backward(
                        &self.nodes[*search].value,
                        &self.nodes[*template].value,
                        &g,
                    )?;
                    contribs.push((*search, ds));
                    contribs.push((*template, dt));
                }
                Op::Concat { parts, sizes } => {
                    for (p, piece) in parts.iter().zip(tensor::split_channels(&g, sizes)?) {
                        contribs.push((*p, piece));
                    }
                }
                Op::Scalar { inputs, local } => {
                    let s = g.data()[0];
                    for (i, l) in inputs.iter().zip(local) {
                        contribs.push((*i, l.scale(s)));
                    }
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
            for (target, d) in contribs {
                if !self.nodes[target].needs_grad {
                    continue;
                }
                match &mut grads[target] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(d.data()) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(d),
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward output with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param_grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|&id| self.grad(Var(id)))
    }

    /// Copy of a leaf's value with its gradient buffer attached.
    pub fn with_grad(&self, v: Var) -> Tensor {
        let mut t = self.nodes[v.0].value.clone();
        let g = self
            .grad(v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; t.len()]);
        t.set_grad(g).expect("gradient shape matches value");
        t
    }
}

impl Exec for Tape {
    type Value = Var;

    fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&id) = self.params.get(name) {
            return Var(id);
        }
        let trainable = !self.frozen.iter().any(|p| name.starts_with(p.as_str()));
        let v = self.push(t.clone(), Op::Leaf, trainable);
        self.params.insert(name.to_string(), v.0);
        v
    }

    fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn conv2d(
        &mut self,
        x: &Var,
        w: &Var,
        b: Option<&Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let value = tensor::conv2d(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            b.map(|b| &self.nodes[b.0].value),
            stride,
            padding,
        )?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(
            value,
            Op::Conv {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                stride,
                padding,
            },
            needs,
        ))
    }

    fn relu(&mut self, x: &Var) -> Var {
        let value = tensor::relu(&self.nodes[x.0].value);
        let needs = self.needs(x);
        self.push(value, Op::Relu(x.0), needs)
    }

    fn group_norm(&mut self, x: &Var, groups: usize, gamma: &Var, beta: &Var) -> Result<Var> {
        let value = tensor::group_norm(
            &self.nodes[x.0].value,
            groups,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
        )?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            value,
            Op::GroupNorm {
                x: x.0,
                groups,
                gamma: gamma.0,
                beta: beta.0,
            },
            needs,
        ))
    }

    fn exp(&mut self, x: &Var) -> Var {
        let value = self.nodes[x.0].value.map(f64::exp);
        let needs = self.needs(x);
        self.push(value, Op::Exp(x.0), needs)
    }

    fn xcorr(&mut self, search: &Var, template: &Var) -> Result<Var> {
        let value =
            tensor::depthwise_xcorr(&self.nodes[search.0].value, &self.nodes[template.0].value)?;
        let needs = self.needs(search) || self.needs(template);
        Ok(self.push(
            value,
            Op::Xcorr {
                search: search.0,
                template: template.0,
            },
            needs,
        ))
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let value = tensor::concat_channels(&refs)?;
        let sizes = refs.iter().map(|t| t.shape()[0]).collect();
        let needs = parts.iter().any(|p| self.needs(p));
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                sizes,
            },
            needs,
        ))
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_grad;

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    // conv -> relu -> xcorr against a second branch -> exp -> concat, reduced
    // to a scalar by a fixed linear probe
    fn graph<E: Exec>(e: &mut E, w: &Tensor, x: &Tensor, z: &Tensor, probe: &Tensor) -> f64 {
        let wv = e.param("w", w);
        let xv = e.input(x.clone());
        let zv = e.input(z.clone());
        let fx = e.conv2d(&xv, &wv, None, 1, 1).unwrap();
        let fx = e.relu(&fx);
        let fz = e.conv2d(&zv, &wv, None, 1, 1).unwrap();
        let r = e.xcorr(&fx, &fz).unwrap();
        let ex = e.exp(&r);
        let cat = e.concat(&[r, ex]).unwrap();
        dot(e.value(&cat), probe)
    }

    #[test]
    fn shared_param_gradient_matches_finite_differences() {
        // irrational-looking values keep every ReLU input away from its kink
        let w = Tensor::from_fn([2, 1, 3, 3], |i| (i as f64 * 1.7 + 0.3).sin() * 0.2);
        let x = Tensor::from_fn([1, 6, 6], |i| (i as f64 * 0.9 + 0.1).cos());
        let z = Tensor::from_fn([1, 3, 3], |i| (i as f64 * 2.3).sin());
        let probe = Tensor::from_fn([4, 4, 4], |i| (i as f64 * 0.77).cos());

        let mut tape = Tape::new();
        let wv = tape.param("w", &w);
        let xv = tape.input(x.clone());
        let zv = tape.input(z.clone());
        let fx = tape.conv2d(&xv, &wv, None, 1, 1).unwrap();
        let fx = tape.relu(&fx);
        let fz = tape.conv2d(&zv, &wv, None, 1, 1).unwrap();
        let r = tape.xcorr(&fx, &fz).unwrap();
        let ex = tape.exp(&r);
        let cat = tape.concat(&[r, ex]).unwrap();
        let value = dot(tape.value(&cat), &probe);
        let out = tape
            .scalar(value, &[cat], vec![probe.clone()])
            .unwrap();
        tape.backward(out).unwrap();

        let fd = finite_diff_grad(|w| graph(&mut Eager, w, &x, &z, &probe), &w, 1e-6);
        let g = tape.param_grad("w").unwrap();
        assert!(g.rel_error(&fd).unwrap() < 1e-6, "{g:?} vs {fd:?}");
        assert_eq!(tape.with_grad(wv).grad().unwrap(), g.data());
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut tape = Tape::new();
        tape.freeze_prefix("backbone.");
        let w = tape.param("backbone.w", &Tensor::full([1, 1, 1, 1], 2.0));
        let v = tape.param("head.w", &Tensor::full([1, 1, 1, 1], 3.0));
        let x = tape.input(Tensor::full([1, 2, 2], 1.0));
        let y = tape.conv2d(&x, &w, None, 1, 0).unwrap();
        let y = tape.conv2d(&y, &v, None, 1, 0).unwrap();
        let out = tape.scalar(12.0 * 4.0, &[y], vec![Tensor::full([1, 2, 2], 1.0)]).unwrap();
        tape.backward(out).unwrap();
        assert!(tape.param_grad("backbone.w").is_none());
        assert_eq!(tape.param_grad("head.w").unwrap().data(), &[8.0]);
    }

    #[test]
    fn eager_matches_tape_forward() {
        let w = Tensor::from_fn([2, 1, 3, 3], |i| (i as f64).cos());
        let x = Tensor::from_fn([1, 6, 6], |i| (i as f64).sin());
        let z = Tensor::from_fn([1, 3, 3], |i| (i as f64 * 0.3).sin());
        let probe = Tensor::full([4, 4, 4], 1.0);
        let mut tape = Tape::new();
        assert_eq!(
            graph(&mut Eager, &w, &x, &z, &probe),
            graph(&mut tape, &w, &x, &z, &probe)
        );
    }
}
