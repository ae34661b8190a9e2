//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every op appends one node whose parents already live on the tape, so the
//! node order is a topological order and backward is a single reverse sweep.
//! [`Tape::backward`] can be called repeatedly from different roots of the
//! same tape, which is how per-task gradients are captured after one shared
//! forward pass.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvCfg, ConvGeom};
use crate::tensor::{Scalar, Tensor};

/// Clamp applied to per-pixel normal norms before normalization.
pub const NORMAL_EPS: f64 = 1e-8;

const BN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf { requires_grad: bool },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        cfg: ConvCfg,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Concat(Vec<Var>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
    },
    L1 {
        pred: Var,
        target: Tensor<T>,
    },
    CosineNormal {
        pred: Var,
        target: Tensor<T>,
    },
}

impl<T> Op<T> {
    #[cfg_attr(not(debug_assertions), allow(dead_code))]
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _) | Op::Sum(x) | Op::Relu(x) => vec![*x],
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::MaxPool { x, .. } | Op::Upsample { x, .. } => vec![*x],
            Op::Concat(parts) => parts.clone(),
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::L1 { pred, .. } | Op::CosineNormal { pred, .. } => vec![*pred],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one root with respect to every node on the tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of `shape` if the root does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A differentiable input (parameter or probe point).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf { requires_grad: true },
        });
        Var(self.nodes.len() - 1)
    }

    /// An input whose gradient is never needed (images, labels).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf { requires_grad: false },
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &str) -> Var {
        debug_assert!(op.parents().iter().all(|p| p.0 < self.nodes.len()), "{name}: parent recorded after child");
        #[cfg(debug_assertions)]
        if !value.is_finite() {
            let parents_finite = op.parents().iter().all(|p| self.value(*p).is_finite());
            assert!(!parents_finite, "{name}: non-finite output from finite inputs");
        }
        let _ = name;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, "operand shape", format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), "add"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), "mul"))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cs = T::from_f64(c);
        let out = self.value(x).map(|v| v * cs);
        self.push(out, Op::Scale(x, c), "scale")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &b| a + b);
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    /// Sum of several same-shaped nodes, left to right.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or(Error::Empty("add_all"))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), "relu")
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, cfg: ConvCfg) -> Result<Var> {
        let g = ConvGeom::check(self.value(x), self.value(w), self.value(b), cfg)?;
        let out = kernels::conv2d_forward(&g, self.value(x), self.value(w), self.value(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, cfg }, "conv2d"))
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = kernels::maxpool_forward(self.value(x), k, stride)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }, "maxpool2d"))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if self.value(x).shape().len() != 4 || factor == 0 {
            return Err(Error::invalid("upsample", "expects rank-4 input and factor >= 1"));
        }
        let out = kernels::upsample_nearest(self.value(x), factor);
        Ok(self.push(out, Op::Upsample { x, factor }, "upsample"))
    }

    /// Concatenates rank-4 nodes along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or(Error::Empty("concat"))?).shape().to_vec();
        let (n, h, w) = (first[0], first[2], first[3]);
        let mut channels = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                return Err(Error::shape("concat", "N/H/W", format!("{first:?}"), format!("{s:?}")));
            }
            channels += s[1];
        }
        let mut data = Vec::with_capacity(n * channels * h * w);
        for ni in 0..n {
            for &p in parts {
                let v = self.value(p);
                let sz = v.dim(1) * h * w;
                data.extend_from_slice(&v.data()[ni * sz..(ni + 1) * sz]);
            }
        }
        let out = Tensor::new(vec![n, channels, h, w], data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), "concat"))
    }

    /// Per-channel normalization with batch statistics and learned affine parameters.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 4 {
            return Err(Error::shape("batch_norm", "input rank", 4, xv.shape().len()));
        }
        let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.value(p).shape() != [c] {
                return Err(Error::shape("batch_norm", name, c, format!("{:?}", self.value(p).shape())));
            }
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut inv_std = vec![T::zero(); c];
        let mut out = vec![T::zero(); xv.numel()];
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        for ci in 0..c {
            let idx = |ni: usize| (ni * c + ci) * hw;
            let mut mean = 0.0;
            for ni in 0..n {
                mean += xv.data()[idx(ni)..idx(ni) + hw].iter().map(|v| v.to_f64v()).sum::<f64>();
            }
            mean /= m;
            let mut var = 0.0;
            for ni in 0..n {
                var += xv.data()[idx(ni)..idx(ni) + hw]
                    .iter()
                    .map(|v| (v.to_f64v() - mean).powi(2))
                    .sum::<f64>();
            }
            var /= m;
            let istd = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ci] = T::from_f64(istd);
            for ni in 0..n {
                for j in idx(ni)..idx(ni) + hw {
                    let xh = T::from_f64((xv.data()[j].to_f64v() - mean) * istd);
                    xhat[j] = xh;
                    out[j] = gd[ci] * xh + bd[ci];
                }
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "batch_norm",
        ))
    }

    /// Mean per-pixel cross-entropy of softmaxed logits `[N,C,H,W]` against class indices `[N*H*W]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape().len() != 4 {
            return Err(Error::shape("cross_entropy", "logits rank", 4, lv.shape().len()));
        }
        let (n, c, h, w) = (lv.dim(0), lv.dim(1), lv.dim(2), lv.dim(3));
        let hw = h * w;
        if targets.len() != n * hw {
            return Err(Error::shape("cross_entropy", "target pixels", n * hw, targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidLabel {
                index: bad,
                classes: c,
            });
        }
        let ld = lv.data();
        let mut probs = vec![T::zero(); ld.len()];
        let mut total = 0.0f64;
        for ni in 0..n {
            for p in 0..hw {
                let at = |ci: usize| (ni * c + ci) * hw + p;
                let mx = (0..c).map(|ci| ld[at(ci)].to_f64v()).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..c).map(|ci| (ld[at(ci)].to_f64v() - mx).exp()).sum();
                for ci in 0..c {
                    probs[at(ci)] = T::from_f64((ld[at(ci)].to_f64v() - mx).exp() / z);
                }
                let t = targets[ni * hw + p];
                total += z.ln() - (ld[at(t)].to_f64v() - mx);
            }
        }
        let loss = T::from_f64(total / (n * hw) as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            "cross_entropy",
        ))
    }

    /// Mean absolute error against a constant target of the same shape.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::shape("l1_loss", "target", format!("{:?}", pv.shape()), format!("{:?}", target.shape())));
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, g)| (p.to_f64v() - g.to_f64v()).abs())
            .sum();
        let loss = T::from_f64(total / pv.numel() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::L1 {
                pred,
                target: target.clone(),
            },
            "l1_loss",
        ))
    }

    /// Mean over pixels of `1 - n̂_pred · n_gt` for `[N,3,H,W]` normals, with the
    /// predicted norm clamped below by [`NORMAL_EPS`].
    pub fn cosine_normal_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::shape("cosine_loss", "target", format!("{:?}", pv.shape()), format!("{:?}", target.shape())));
        }
        if pv.shape().len() != 4 || pv.dim(1) != 3 {
            return Err(Error::shape("cosine_loss", "channels", 3, format!("{:?}", pv.shape())));
        }
        let (n, hw) = (pv.dim(0), pv.dim(2) * pv.dim(3));
        let (pd, gd) = (pv.data(), target.data());
        let mut total = 0.0;
        for ni in 0..n {
            for p in 0..hw {
                let at = |ci: usize| (ni * 3 + ci) * hw + p;
                let norm = (0..3).map(|ci| pd[at(ci)].to_f64v().powi(2)).sum::<f64>().sqrt();
                let dot: f64 = (0..3).map(|ci| pd[at(ci)].to_f64v() * gd[at(ci)].to_f64v()).sum();
                total += 1.0 - dot / norm.max(NORMAL_EPS);
            }
        }
        let loss = T::from_f64(total / (n * hw) as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CosineNormal {
                pred,
                target: target.clone(),
            },
            "cosine_loss",
        ))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NotScalar(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape(), T::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            for (parent, pg) in self.vjp(node, &g) {
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf { requires_grad: false })
    }

    fn vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        match &node.op {
            Op::Leaf { .. } => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = zip_map(g, vb, |g, y| g * y);
                let gb = zip_map(g, va, |g, x| g * x);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, c) => {
                let cs = T::from_f64(*c);
                vec![(*x, g.map(|v| v * cs))]
            }
            Op::Sum(x) => {
                let s = g.item();
                vec![(*x, Tensor::full(self.value(*x).shape(), s))]
            }
            Op::Relu(x) => {
                let gx = zip_map(g, self.value(*x), |g, x| if x > T::zero() { g } else { T::zero() });
                vec![(*x, gx)]
            }
            Op::Conv2d { x, w, b, cfg } => {
                let (xv, wv, bv) = (self.value(*x), self.value(*w), self.value(*b));
                let geom = ConvGeom::check(xv, wv, bv, *cfg).expect("validated in forward");
                let need_dx = self.needs_grad(*x);
                let cg = kernels::conv2d_backward(&geom, xv, wv, g, need_dx);
                let mut out = vec![(*w, cg.dw), (*b, cg.db)];
                if let Some(dx) = cg.dx {
                    out.push((*x, dx));
                }
                out
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let d = dx.data_mut();
                for (&idx, &gv) in argmax.iter().zip(g.data()) {
                    d[idx as usize] = d[idx as usize] + gv;
                }
                vec![(*x, dx)]
            }
            Op::Upsample { x, factor } => {
                let dx = kernels::upsample_nearest_backward(g, self.value(*x).shape(), *factor);
                vec![(*x, dx)]
            }
            Op::Concat(parts) => {
                let (n, h, w) = (g.dim(0), g.dim(2), g.dim(3));
                let total_c = g.dim(1);
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let c = self.value(p).dim(1);
                    let mut data = Vec::with_capacity(n * c * h * w);
                    for ni in 0..n {
                        let start = (ni * total_c + offset) * h * w;
                        data.extend_from_slice(&g.data()[start..start + c * h * w]);
                    }
                    out.push((p, Tensor::new(vec![n, c, h, w], data).expect("concat grad")));
                    offset += c;
                }
                out
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let xv = self.value(*x);
                let (n, c, hw) = (xv.dim(0), xv.dim(1), xv.dim(2) * xv.dim(3));
                let m = (n * hw) as f64;
                let gd = self.value(*gamma).data();
                let mut dx = vec![T::zero(); xv.numel()];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ci in 0..c {
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xhat = 0.0;
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for j in base..base + hw {
                            let dy = g.data()[j].to_f64v();
                            sum_dy += dy;
                            sum_dy_xhat += dy * xhat[j].to_f64v();
                        }
                    }
                    dgamma[ci] = T::from_f64(sum_dy_xhat);
                    dbeta[ci] = T::from_f64(sum_dy);
                    let gm = gd[ci].to_f64v();
                    let istd = inv_std[ci].to_f64v();
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for j in base..base + hw {
                            let dxh = g.data()[j].to_f64v() * gm;
                            let v = istd / m * (m * dxh - gm * sum_dy - xhat[j].to_f64v() * gm * sum_dy_xhat);
                            dx[j] = T::from_f64(v);
                        }
                    }
                }
                vec![
                    (*x, Tensor::new(xv.shape().to_vec(), dx).expect("bn dx")),
                    (*gamma, Tensor::new(vec![c], dgamma).expect("bn dgamma")),
                    (*beta, Tensor::new(vec![c], dbeta).expect("bn dbeta")),
                ]
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
            } => {
                let lv = self.value(*logits);
                let (c, hw) = (lv.dim(1), lv.dim(2) * lv.dim(3));
                let scale = g.item() / T::from_f64(targets.len() as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (pix, &t) in targets.iter().enumerate() {
                    let (ni, p) = (pix / hw, pix % hw);
                    let at = (ni * c + t) * hw + p;
                    d[at] = d[at] - scale;
                }
                vec![(*logits, Tensor::new(lv.shape().to_vec(), d).expect("ce grad"))]
            }
            Op::L1 { pred, target } => {
                let pv = self.value(*pred);
                let scale = g.item() / T::from_f64(pv.numel() as f64);
                let d = zip_map(pv, target, |p, t| {
                    if p > t {
                        scale
                    } else if p < t {
                        -scale
                    } else {
                        T::zero()
                    }
                });
                vec![(*pred, d)]
            }
            Op::CosineNormal { pred, target } => {
                let pv = self.value(*pred);
                let (n, hw) = (pv.dim(0), pv.dim(2) * pv.dim(3));
                let scale = g.item().to_f64v() / (n * hw) as f64;
                let (pd, gd) = (pv.data(), target.data());
                let mut d = vec![T::zero(); pv.numel()];
                for ni in 0..n {
                    for p in 0..hw {
                        let at = |ci: usize| (ni * 3 + ci) * hw + p;
                        let norm = (0..3).map(|ci| pd[at(ci)].to_f64v().powi(2)).sum::<f64>().sqrt();
                        let dot: f64 = (0..3).map(|ci| pd[at(ci)].to_f64v() * gd[at(ci)].to_f64v()).sum();
                        for ci in 0..3 {
                            let gi = gd[at(ci)].to_f64v();
                            // d/dp of -(p·n)/max(|p|, eps)
                            let deriv = if norm > NORMAL_EPS {
                                -(gi / norm - dot * pd[at(ci)].to_f64v() / norm.powi(3))
                            } else {
                                -gi / NORMAL_EPS
                            };
                            d[at(ci)] = T::from_f64(scale * deriv);
                        }
                    }
                }
                vec![(*pred, Tensor::new(pv.shape().to_vec(), d).expect("cos grad"))]
            }
        }
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1., 0., 2.]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0., 0., 2.]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[-1., 2.]));
        let y = tape.relu(x);
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0., 1.]);
    }

    #[test]
    fn relu_identity_on_positive() {
        let mut tape = Tape::new();
        let data = [0.5, 1.0, 3.0, 7.5];
        let x = tape.leaf(t(&[4], &data));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &data);
    }

    #[test]
    fn linear_loss_gradient_is_constant() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[2, 2], &[0.3, -1.0, 2.0, 0.1]));
        let c = tape.leaf(t(&[2, 2], &[1.0, 2.0, -3.0, 4.0]));
        let p = tape.mul(w, c).unwrap();
        let l = tape.sum(p);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0, -3.0, 4.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[3], &[1., 2., 3.]));
        let x = tape.leaf(t(&[3], &[4., 5., 6.]));
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.get_or_zeros(w, &[3]).data(), &[0., 0., 0.]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn maxpool_basic_and_ties() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 4, 4], 3.0));
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 3.0));
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        let gx = g.get(x).unwrap().data();
        // first element of each 2x2 window (row-major) receives the gradient
        let expected = [1., 0., 1., 0., 0., 0., 0., 0., 1., 0., 1., 0., 0., 0., 0., 0.];
        assert_eq!(gx, &expected);
    }

    #[test]
    fn maxpool_window_too_large() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros(&[1, 1, 2, 2]));
        assert!(tape.maxpool2d(x, 3, 1).is_err());
    }

    #[test]
    fn conv_scaling_and_zero_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = tape.leaf(t(&[1, 1, 1, 1], &[2.0]));
        let b = tape.leaf(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b, ConvCfg::default()).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 2.0));

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2, 3, 3], &(0..18).map(|i| i as f64 * 0.7 - 3.0).collect::<Vec<_>>()));
        let w = tape.leaf(Tensor::zeros(&[2, 2, 3, 3]));
        let b = tape.leaf(t(&[2], &[0.25, -1.5]));
        let y = tape.conv2d(x, w, b, ConvCfg::new(1, 1, 1)).unwrap();
        let v = tape.value(y);
        assert!(v.data()[..9].iter().all(|&z| z == 0.25));
        assert!(v.data()[9..].iter().all(|&z| z == -1.5));
    }

    #[test]
    fn conv_shape_errors_name_dimension() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros(&[1, 2, 4, 4]));
        let w = tape.leaf(Tensor::zeros(&[1, 3, 3, 3]));
        let b = tape.leaf(Tensor::zeros(&[1]));
        let err = tape.conv2d(x, w, b, ConvCfg::default()).unwrap_err();
        assert!(err.to_string().contains("Cin"), "{err}");

        let w = tape.leaf(Tensor::zeros(&[1, 2, 5, 5]));
        let err = tape.conv2d(x, w, b, ConvCfg::default()).unwrap_err();
        assert!(err.to_string().contains("H'"), "{err}");
    }

    #[test]
    fn concat_splits_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1, 1, 1, 2], &[1., 2.]));
        let b = tape.leaf(t(&[1, 2, 1, 2], &[3., 4., 5., 6.]));
        let c = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1., 2., 3., 4., 5., 6.]);
        let w = tape.leaf(t(&[1, 3, 1, 2], &[1., 2., 3., 4., 5., 6.]));
        let p = tape.mul(c, w).unwrap();
        let l = tape.sum(p);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1., 2.]);
        assert_eq!(g.get(b).unwrap().data(), &[3., 4., 5., 6.]);
    }
}
