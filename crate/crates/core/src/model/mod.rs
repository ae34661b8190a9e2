//! Hard-parameter-sharing multi-task model: a shared conv backbone feeding
//! one dilation-pyramid head per task.

mod accounting;
mod checkpoint;
mod spec;
mod surgery;

pub use accounting::{conv_flops, conv_params, params_for_counts, removed_params, FlopCounts, ParamCounts};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamInfo, FORMAT_VERSION, MANIFEST_FILE, PARAMS_FILE};
pub use spec::{BackboneSpec, HeadSpec, LayerSpec, ModelSpec, POOL};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::kernels::ConvCfg;
use crate::loss::loss_for_task;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// One prunable filter of the shared backbone, by current (post-surgery) index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FilterCoord {
    pub layer: usize,
    pub filter: usize,
}

impl FilterCoord {
    pub fn new(layer: usize, filter: usize) -> Self {
        FilterCoord { layer, filter }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneLayer<T> {
    pub spec: LayerSpec,
    pub conv: ConvParams<T>,
    /// Per-channel (gamma, beta) when normalization is enabled.
    pub norm: Option<(Tensor<T>, Tensor<T>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head<T> {
    pub spec: HeadSpec,
    pub branches: Vec<ConvParams<T>>,
    pub proj: ConvParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MtlModel<T> {
    spec: ModelSpec,
    layers: Vec<BackboneLayer<T>>,
    heads: Vec<Head<T>>,
    /// Original filter index of every alive filter, per layer.
    origin: Vec<Vec<usize>>,
    seed: u64,
}

/// Forward pass recorded on a tape, with all parameters registered as leaves
/// in canonical order.
pub struct Recorded<T> {
    pub tape: Tape<T>,
    pub params: Vec<Var>,
    pub features: Var,
    pub outputs: Vec<Var>,
}

/// Recorded forward pass plus per-task losses and their unweighted sum.
pub struct LossPass<T> {
    pub rec: Recorded<T>,
    pub losses: Vec<Var>,
    pub total: Var,
}

/// Per-task gradients of every parameter from one shared forward pass.
pub struct TaskGradients<T> {
    pub losses: Vec<f64>,
    /// `[task][param]` in canonical parameter order.
    pub per_task: Vec<Vec<Tensor<T>>>,
}

fn uniform_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

fn init_conv<T: Scalar>(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> ConvParams<T> {
    let fan_in = (cin * k * k) as f64;
    ConvParams {
        weight: uniform_tensor(rng, &[cout, cin, k, k], (6.0 / fan_in).sqrt()),
        bias: Tensor::zeros(&[cout]),
    }
}

impl<T: Scalar> MtlModel<T> {
    /// Deterministic fan-in-scaled uniform initialization from `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.backbone.layers.len());
        let mut cin = spec.backbone.input_channels;
        for l in &spec.backbone.layers {
            let conv = init_conv(&mut rng, l.filters, cin, l.kernel);
            let norm = spec
                .normalization
                .then(|| (Tensor::full(&[l.filters], T::one()), Tensor::zeros(&[l.filters])));
            layers.push(BackboneLayer {
                spec: l.clone(),
                conv,
                norm,
            });
            cin = l.filters;
        }
        let heads = spec
            .heads
            .iter()
            .map(|h| Head {
                spec: h.clone(),
                branches: h
                    .dilations
                    .iter()
                    .map(|_| init_conv(&mut rng, h.mid_channels, cin, 3))
                    .collect(),
                proj: init_conv(&mut rng, h.out_channels, h.mid_channels * h.dilations.len(), 1),
            })
            .collect();
        let origin = spec.backbone.layers.iter().map(|l| (0..l.filters).collect()).collect();
        Ok(MtlModel {
            spec: spec.clone(),
            layers,
            heads,
            origin,
            seed,
        })
    }

    /// The `ModelSpec` this model was built from (before any pruning).
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// A `ModelSpec` describing the current (possibly pruned) architecture.
    pub fn current_spec(&self) -> ModelSpec {
        let mut s = self.spec.clone();
        for (ls, l) in s.backbone.layers.iter_mut().zip(&self.layers) {
            ls.filters = l.conv.weight.dim(0);
        }
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[BackboneLayer<T>] {
        &self.layers
    }

    pub fn heads(&self) -> &[Head<T>] {
        &self.heads
    }

    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn origin(&self) -> &[Vec<usize>] {
        &self.origin
    }

    pub fn alive_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.conv.weight.dim(0)).collect()
    }

    pub fn alive_filters(&self) -> usize {
        self.alive_counts().iter().sum()
    }

    pub fn min_filters_per_layer(&self) -> usize {
        self.spec.min_filters_per_layer
    }

    /// Every alive backbone filter in (layer, filter) order.
    pub fn filters(&self) -> Vec<FilterCoord> {
        self.alive_counts()
            .iter()
            .enumerate()
            .flat_map(|(l, &n)| (0..n).map(move |f| FilterCoord::new(l, f)))
            .collect()
    }

    pub fn contains(&self, c: FilterCoord) -> bool {
        c.layer < self.layers.len() && c.filter < self.layers[c.layer].conv.weight.dim(0)
    }

    fn params_per_layer(&self) -> usize {
        if self.spec.normalization {
            4
        } else {
            2
        }
    }

    /// Canonical index of the weight tensor of backbone layer `layer`.
    pub fn weight_param_index(&self, layer: usize) -> usize {
        layer * self.params_per_layer()
    }

    /// Number of canonical parameter tensors belonging to the backbone.
    pub fn backbone_param_tensors(&self) -> usize {
        self.layers.len() * self.params_per_layer()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.conv.weight);
            out.push(&l.conv.bias);
            if let Some((g, b)) = &l.norm {
                out.push(g);
                out.push(b);
            }
        }
        for h in &self.heads {
            for b in &h.branches {
                out.push(&b.weight);
                out.push(&b.bias);
            }
            out.push(&h.proj.weight);
            out.push(&h.proj.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.conv.weight);
            out.push(&mut l.conv.bias);
            if let Some((g, b)) = &mut l.norm {
                out.push(g);
                out.push(b);
            }
        }
        for h in &mut self.heads {
            for b in &mut h.branches {
                out.push(&mut b.weight);
                out.push(&mut b.bias);
            }
            out.push(&mut h.proj.weight);
            out.push(&mut h.proj.bias);
        }
        out
    }

    pub fn param_infos(&self) -> Vec<ParamInfo> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            names.push(format!("backbone.{i}.weight"));
            names.push(format!("backbone.{i}.bias"));
            if l.norm.is_some() {
                names.push(format!("backbone.{i}.norm.gamma"));
                names.push(format!("backbone.{i}.norm.beta"));
            }
        }
        for (t, h) in self.heads.iter().enumerate() {
            let task = h.spec.task.name();
            for b in 0..h.branches.len() {
                names.push(format!("head.{t}.{task}.branch{b}.weight"));
                names.push(format!("head.{t}.{task}.branch{b}.bias"));
            }
            names.push(format!("head.{t}.{task}.proj.weight"));
            names.push(format!("head.{t}.{task}.proj.bias"));
        }
        names
            .into_iter()
            .zip(self.params())
            .map(|(name, p)| ParamInfo {
                name,
                shape: p.shape().to_vec(),
            })
            .collect()
    }

    /// Hex SHA-256 over all parameters as little-endian `f32`.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            for &v in p.data() {
                h.update((v.to_f64v() as f32).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_input(&self, images: &Tensor<T>) -> Result<()> {
        let s = images.shape();
        let want = [self.spec.backbone.input_channels, self.spec.input_height, self.spec.input_width];
        if s.len() != 4 || s[1..] != want {
            return Err(Error::shape(
                "forward",
                "images [N,C,H,W]",
                format!("[N, {}, {}, {}]", want[0], want[1], want[2]),
                format!("{s:?}"),
            ));
        }
        Ok(())
    }

    fn record_backbone(&self, tape: &mut Tape<T>, mut x: Var, params: &[Var]) -> Result<Var> {
        let per = self.params_per_layer();
        for (i, l) in self.layers.iter().enumerate() {
            let p = &params[i * per..(i + 1) * per];
            x = tape.conv2d(x, p[0], p[1], l.spec.conv_cfg())?;
            if l.norm.is_some() {
                x = tape.batch_norm(x, p[2], p[3])?;
            }
            x = tape.relu(x);
            if l.spec.pool_after {
                x = tape.maxpool2d(x, POOL, POOL)?;
            }
        }
        Ok(x)
    }

    fn record_head(&self, tape: &mut Tape<T>, task: usize, features: Var, params: &[Var]) -> Result<Var> {
        let head = &self.heads[task];
        // head parameter slice: branches (w, b)... then proj (w, b)
        let mut offset = self.backbone_param_tensors();
        for h in &self.heads[..task] {
            offset += 2 * h.branches.len() + 2;
        }
        let mut outs = Vec::with_capacity(head.branches.len());
        for (b, &d) in head.spec.dilations.iter().enumerate() {
            let (w, bias) = (params[offset + 2 * b], params[offset + 2 * b + 1]);
            let y = tape.conv2d(features, w, bias, ConvCfg::new(1, d, d))?;
            outs.push(tape.relu(y));
        }
        let cat = tape.concat_channels(&outs)?;
        let pw = offset + 2 * head.branches.len();
        let y = tape.conv2d(cat, params[pw], params[pw + 1], ConvCfg::default())?;
        tape.upsample_nearest(y, self.spec.upsample_factor()?)
    }

    /// Records backbone once and every head (in `head_order`) on a fresh tape.
    pub fn record_with_order(&self, images: &Tensor<T>, head_order: &[usize]) -> Result<Recorded<T>> {
        self.check_input(images)?;
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let params: Vec<Var> = self.params().into_iter().map(|p| tape.leaf(p.clone())).collect();
        let features = self.record_backbone(&mut tape, x, &params)?;
        let mut outputs = vec![None; self.heads.len()];
        for &t in head_order {
            outputs[t] = Some(self.record_head(&mut tape, t, features, &params)?);
        }
        let outputs = outputs
            .into_iter()
            .map(|o| o.ok_or_else(|| Error::invalid("forward", "head order must cover every task")))
            .collect::<Result<_>>()?;
        Ok(Recorded {
            tape,
            params,
            features,
            outputs,
        })
    }

    pub fn record(&self, images: &Tensor<T>) -> Result<Recorded<T>> {
        let order: Vec<usize> = (0..self.heads.len()).collect();
        self.record_with_order(images, &order)
    }

    /// One prediction per task at input resolution.
    pub fn forward_all(&self, images: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let rec = self.record(images)?;
        Ok(rec.outputs.iter().map(|&o| rec.tape.value(o).clone()).collect())
    }

    /// Shared backbone features for `images`.
    pub fn features(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let rec = self.record(images)?;
        Ok(rec.tape.value(rec.features).clone())
    }

    /// Records forward plus each task loss and the unweighted total.
    pub fn record_losses(&self, batch: &Batch<T>) -> Result<LossPass<T>> {
        self.record_scaled_losses(batch, None)
    }

    /// Like [`record_losses`](Self::record_losses) with each task loss multiplied
    /// by `scales[t]`. Training always uses unit scales.
    pub fn record_scaled_losses(&self, batch: &Batch<T>, scales: Option<&[f64]>) -> Result<LossPass<T>> {
        if scales.is_some_and(|s| s.len() != self.heads.len()) {
            return Err(Error::shape("record_losses", "task scales", self.heads.len(), scales.map_or(0, |s| s.len())));
        }
        let mut rec = self.record(&batch.images)?;
        let mut losses = Vec::with_capacity(self.heads.len());
        for (t, (head, &out)) in self.heads.iter().zip(&rec.outputs).enumerate() {
            let target = batch.target(head.spec.task);
            let mut l = loss_for_task(&mut rec.tape, out, &target, head.spec.task)?;
            if let Some(s) = scales {
                l = rec.tape.scale(l, s[t]);
            }
            losses.push(l);
        }
        let total = rec.tape.add_all(&losses)?;
        Ok(LossPass { rec, losses, total })
    }

    /// Gradient of the total loss for every parameter (canonical order) plus per-task loss values.
    pub fn total_gradients(&self, batch: &Batch<T>) -> Result<(Vec<f64>, Vec<Tensor<T>>)> {
        let pass = self.record_losses(batch)?;
        let losses = pass.losses.iter().map(|&l| pass.rec.tape.value(l).item().to_f64v()).collect();
        let mut g = pass.rec.tape.backward(pass.total)?;
        let grads = pass
            .rec
            .params
            .iter()
            .zip(self.params())
            .map(|(&v, p)| g.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((losses, grads))
    }

    /// One shared forward pass, then one backward pass per task loss.
    pub fn task_gradients(&self, batch: &Batch<T>) -> Result<TaskGradients<T>> {
        self.scaled_task_gradients(batch, None)
    }

    pub fn scaled_task_gradients(&self, batch: &Batch<T>, scales: Option<&[f64]>) -> Result<TaskGradients<T>> {
        let pass = self.record_scaled_losses(batch, scales)?;
        let tape = &pass.rec.tape;
        let losses = pass.losses.iter().map(|&l| tape.value(l).item().to_f64v()).collect();
        let shapes: Vec<Vec<usize>> = self.params().iter().map(|p| p.shape().to_vec()).collect();
        let mut per_task = Vec::with_capacity(pass.losses.len());
        for &l in &pass.losses {
            let mut g = tape.backward(l)?;
            per_task.push(
                pass.rec
                    .params
                    .iter()
                    .zip(&shapes)
                    .map(|(&v, s)| g.take(v).unwrap_or_else(|| Tensor::zeros(s)))
                    .collect(),
            );
        }
        Ok(TaskGradients { losses, per_task })
    }

    /// Flattened weight block (`k·k·c_in` values) of one alive filter.
    pub fn filter_weights(&self, c: FilterCoord) -> Result<&[T]> {
        if !self.contains(c) {
            return Err(Error::UnknownFilter {
                layer: c.layer,
                filter: c.filter,
            });
        }
        let w = &self.layers[c.layer].conv.weight;
        let len = w.numel() / w.dim(0);
        Ok(&w.data()[c.filter * len..(c.filter + 1) * len])
    }
}

impl<T: Scalar> TaskGradients<T> {
    pub fn num_tasks(&self) -> usize {
        self.per_task.len()
    }

    /// Elementwise sum over tasks, in task order.
    pub fn total(&self) -> Vec<Tensor<T>> {
        let mut acc = self.per_task[0].clone();
        for task in &self.per_task[1..] {
            for (a, g) in acc.iter_mut().zip(task) {
                a.add_assign(g);
            }
        }
        acc
    }

    /// Per-task gradient blocks of one filter's weights.
    pub fn filter_grads<'a>(&'a self, model: &MtlModel<T>, c: FilterCoord) -> Vec<&'a [T]> {
        let idx = model.weight_param_index(c.layer);
        self.per_task
            .iter()
            .map(|grads| {
                let w = &grads[idx];
                let len = w.numel() / w.dim(0);
                &w.data()[c.filter * len..(c.filter + 1) * len]
            })
            .collect()
    }
}

/// Per-task gradient of every alive backbone filter, each flattened to `k·k·c_in`.
pub fn per_task_filter_grads<T: Scalar>(
    model: &MtlModel<T>,
    batch: &Batch<T>,
) -> Result<BTreeMap<FilterCoord, Vec<Vec<T>>>> {
    let tg = model.task_gradients(batch)?;
    Ok(model
        .filters()
        .into_iter()
        .map(|c| (c, tg.filter_grads(model, c).into_iter().map(<[T]>::to_vec).collect()))
        .collect())
}

impl<T: Scalar> MtlModel<T> {
    pub(crate) fn parts_mut(&mut self) -> (&mut Vec<BackboneLayer<T>>, &mut Vec<Head<T>>, &mut Vec<Vec<usize>>) {
        (&mut self.layers, &mut self.heads, &mut self.origin)
    }
}
