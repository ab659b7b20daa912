use std::fmt;

use super::kernels::{grouped_matmul, grouped_matmul_backward, shuffle_target};
use super::FeatureTensor;
use crate::error::{Result, SpnError};
use crate::parallel;
use crate::pointcloud::EdgeFeatureVariant;

/// Variance epsilon used by every batch-norm op.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used for reporting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv1x1,
    GroupConv,
    Relu,
    BatchNorm,
    MaxPool,
    Concat,
    SliceChannels,
    ChannelShuffle,
    EdgeFeatures,
    WeightedGather,
    Reshape,
    Dropout,
    Mul,
    Sum,
    Scale,
    SoftmaxCrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 17] = [
        OpKind::Leaf,
        OpKind::Conv1x1,
        OpKind::GroupConv,
        OpKind::Relu,
        OpKind::BatchNorm,
        OpKind::MaxPool,
        OpKind::Concat,
        OpKind::SliceChannels,
        OpKind::ChannelShuffle,
        OpKind::EdgeFeatures,
        OpKind::WeightedGather,
        OpKind::Reshape,
        OpKind::Dropout,
        OpKind::Mul,
        OpKind::Sum,
        OpKind::Scale,
        OpKind::SoftmaxCrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv1x1 => "conv1x1",
            OpKind::GroupConv => "group_conv",
            OpKind::Relu => "relu",
            OpKind::BatchNorm => "batchnorm",
            OpKind::MaxPool => "maxpool_neighbors",
            OpKind::Concat => "concat_channels",
            OpKind::SliceChannels => "split_groups",
            OpKind::ChannelShuffle => "channel_shuffle",
            OpKind::EdgeFeatures => "edge_features",
            OpKind::WeightedGather => "interpolate_features",
            OpKind::Reshape => "reshape",
            OpKind::Dropout => "dropout",
            OpKind::Mul => "mul",
            OpKind::Sum => "sum",
            OpKind::Scale => "scale",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-channel statistics of a training-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    Matmul {
        x: Var,
        w: Var,
        b: Var,
        groups: usize,
        ci: usize,
        co: usize,
    },
    Relu {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        // Eval mode uses fixed statistics, so no batch coupling in backward.
        batch_coupled: bool,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        parts: Vec<(Var, usize)>,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    ChannelShuffle {
        x: Var,
        groups: usize,
    },
    EdgeFeatures {
        x: Var,
        centers: Vec<usize>,
        neighbors: Vec<usize>,
        variant: EdgeFeatureVariant,
    },
    WeightedGather {
        x: Var,
        idx: Vec<usize>,
        weights: Vec<f64>,
        width: usize,
    },
    Reshape {
        x: Var,
    },
    Mask {
        x: Var,
        mask: Vec<f64>,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    Scale {
        x: Var,
        s: f64,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Matmul { .. } => OpKind::GroupConv,
            Op::Relu { .. } => OpKind::Relu,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::MaxPool { .. } => OpKind::MaxPool,
            Op::Concat { .. } => OpKind::Concat,
            Op::SliceChannels { .. } => OpKind::SliceChannels,
            Op::ChannelShuffle { .. } => OpKind::ChannelShuffle,
            Op::EdgeFeatures { .. } => OpKind::EdgeFeatures,
            Op::WeightedGather { .. } => OpKind::WeightedGather,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Mask { .. } => OpKind::Dropout,
            Op::Mul { .. } => OpKind::Mul,
            Op::Sum { .. } => OpKind::Sum,
            Op::Scale { .. } => OpKind::Scale,
            Op::SoftmaxCe { .. } => OpKind::SoftmaxCrossEntropy,
        }
    }
}

struct Node {
    tensor: FeatureTensor,
    op: Op,
    kind: OpKind,
}

/// Define-by-run record of differentiable operations.
///
/// A fresh tape is built for every forward pass. Values are computed eagerly;
/// [`Tape::backward`] walks the recorded nodes in reverse order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
    visited: Vec<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: flips the sign of every input gradient produced by ops of
    /// `kind` during backward.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node indices visited by the last backward pass, in visit order.
    pub fn backward_order(&self) -> &[usize] {
        &self.visited
    }

    pub fn value(&self, v: Var) -> &FeatureTensor {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].kind
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad()
    }

    fn push(&mut self, tensor: FeatureTensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&i| self.requires(i));
        let kind = op.kind();
        self.push_kind(tensor.with_requires_grad(rg), op, kind)
    }

    fn push_kind(&mut self, tensor: FeatureTensor, op: Op, kind: OpKind) -> Var {
        self.nodes.push(Node { tensor, op, kind });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: FeatureTensor) -> Var {
        self.push_kind(t, Op::Leaf, OpKind::Leaf)
    }

    pub fn param(&mut self, t: FeatureTensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: FeatureTensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    /// Standard 1×1 convolution: `out[.., :] = x[.., :] · w + b`.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 {
            return Err(SpnError::Dimension(format!(
                "conv1x1 weight must be rank 2, got {ws:?}"
            )));
        }
        let v = self.matmul(x, w, b, 1, ws[0], ws[1])?;
        self.nodes[v.0].kind = OpKind::Conv1x1;
        Ok(v)
    }

    /// Grouped 1×1 convolution with block weights of shape `g × ci × co`.
    pub fn group_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 {
            return Err(SpnError::Dimension(format!(
                "group conv weight must be rank 3 (groups × c_in/g × c_out/g), got {ws:?}"
            )));
        }
        self.matmul(x, w, b, ws[0], ws[1], ws[2])
    }

    fn matmul(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        groups: usize,
        ci: usize,
        co: usize,
    ) -> Result<Var> {
        let xt = self.value(x);
        if xt.channels() != groups * ci {
            return Err(SpnError::Dimension(format!(
                "input shape {:?} does not match weight shape {:?}",
                xt.shape(),
                self.shape(w)
            )));
        }
        if self.value(b).len() != groups * co {
            return Err(SpnError::Dimension(format!(
                "bias shape {:?} does not match weight shape {:?}",
                self.shape(b),
                self.shape(w)
            )));
        }
        let rows = xt.rows();
        let out = grouped_matmul(
            xt.values(),
            rows,
            groups,
            ci,
            co,
            self.value(w).values(),
            self.value(b).values(),
        );
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = groups * co;
        let t = FeatureTensor::new(&shape, out)?;
        Ok(self.push(
            t,
            Op::Matmul {
                x,
                w,
                b,
                groups,
                ci,
                co,
            },
            &[x, w, b],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let vals = xt.values().iter().map(|&v| v.max(0.0)).collect();
        let t = FeatureTensor::new(xt.shape(), vals).unwrap();
        self.push(t, Op::Relu { x }, &[x])
    }

    fn check_bn_params(&self, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let c = self.value(x).channels();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(SpnError::Dimension(format!(
                "batch-norm parameters {:?}/{:?} do not match input shape {:?}",
                self.shape(gamma),
                self.shape(beta),
                self.shape(x)
            )));
        }
        Ok(c)
    }

    /// Batch norm with statistics over every non-channel axis of `x`.
    /// Returns the normalized output and the batch statistics (biased
    /// variance) used to update running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let c = self.check_bn_params(x, gamma, beta)?;
        let xt = self.value(x);
        let rows = xt.rows();
        if rows == 0 {
            return Err(SpnError::Dimension("batch norm over an empty batch".into()));
        }
        let xs = xt.values();
        let m = rows as f64;
        let mut mean = vec![0.0; c];
        for row in xs.chunks(c) {
            for (a, &v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m);
        let mut var = vec![0.0; c];
        for row in xs.chunks(c) {
            for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - mu;
                *a += d * d;
            }
        }
        var.iter_mut().for_each(|a| *a /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let v = self.bn_apply(x, gamma, beta, &mean, inv_std, true);
        Ok((v, BatchStats { mean, var }))
    }

    /// Batch norm with fixed running statistics (a deterministic affine map).
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
    ) -> Result<Var> {
        let c = self.check_bn_params(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(SpnError::Dimension(format!(
                "running statistics of length {}/{} for {c} channels",
                mean.len(),
                var.len()
            )));
        }
        let inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        Ok(self.bn_apply(x, gamma, beta, mean, inv_std, false))
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_coupled: bool,
    ) -> Var {
        let xt = self.value(x);
        let c = xt.channels();
        let g = self.value(gamma).values();
        let bt = self.value(beta).values();
        let mut xhat = vec![0.0; xt.len()];
        let mut out = vec![0.0; xt.len()];
        for ((xr, hr), or) in xt
            .values()
            .chunks(c)
            .zip(xhat.chunks_mut(c))
            .zip(out.chunks_mut(c))
        {
            for ch in 0..c {
                let h = (xr[ch] - mean[ch]) * inv_std[ch];
                hr[ch] = h;
                or[ch] = g[ch] * h + bt[ch];
            }
        }
        let t = FeatureTensor::new(xt.shape(), out).unwrap();
        self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_coupled,
            },
            &[x, gamma, beta],
        )
    }

    /// Max over axis 1 of an `N × K × C` tensor. Returns the pooled `N × C`
    /// tensor; ties resolve to the lowest neighbor slot.
    pub fn maxpool_neighbors(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        if s.len() != 3 || s[1] == 0 {
            return Err(SpnError::Dimension(format!(
                "maxpool_neighbors needs N × K × C with K ≥ 1, got {s:?}"
            )));
        }
        let (n, k, c) = (s[0], s[1], s[2]);
        let xs = xt.values();
        let mut out = vec![0.0; n * c];
        let mut argmax = vec![0usize; n * c];
        for i in 0..n {
            let base = i * k * c;
            let orow = &mut out[i * c..(i + 1) * c];
            let arow = &mut argmax[i * c..(i + 1) * c];
            orow.copy_from_slice(&xs[base..base + c]);
            for kk in 1..k {
                let slice = &xs[base + kk * c..base + (kk + 1) * c];
                for ch in 0..c {
                    if slice[ch] > orow[ch] {
                        orow[ch] = slice[ch];
                        arow[ch] = kk;
                    }
                }
            }
        }
        let t = FeatureTensor::new(&[n, c], out)?;
        Ok(self.push(t, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Argmax table of a node produced by [`Tape::maxpool_neighbors`].
    pub fn argmax(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxPool { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// Channel-axis concatenation in argument order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| SpnError::Dimension("concat of zero tensors".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(SpnError::Dimension(format!(
                    "concat leading dims differ: {:?} vs {:?}",
                    self.shape(first),
                    s
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).values()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = FeatureTensor::new(&shape, out)?;
        let op = Op::Concat {
            parts: parts.iter().copied().zip(widths).collect(),
        };
        Ok(self.push(t, op, parts))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.concat(&[a, b])
    }

    /// Channels `start..start + len` of `x`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        let c = xt.channels();
        if start + len > c {
            return Err(SpnError::Dimension(format!(
                "channel slice {start}..{} out of range for shape {:?}",
                start + len,
                xt.shape()
            )));
        }
        let out: Vec<f64> = xt
            .values()
            .chunks(c)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let t = FeatureTensor::new(&shape, out)?;
        Ok(self.push(t, Op::SliceChannels { x, start }, &[x]))
    }

    /// Channel shuffle: channel `c` moves to `(c mod n)·g + c div n` where
    /// `n = C / g`.
    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let xt = self.value(x);
        let c = xt.channels();
        if groups == 0 || !c.is_multiple_of(groups) {
            return Err(SpnError::Config(format!(
                "channel shuffle: {c} channels not divisible into {groups} groups"
            )));
        }
        let mut out = vec![0.0; xt.len()];
        for (src, dst) in xt.values().chunks(c).zip(out.chunks_mut(c)) {
            for (ch, &v) in src.iter().enumerate() {
                dst[shuffle_target(ch, c, groups)] = v;
            }
        }
        let t = FeatureTensor::new(xt.shape(), out)?;
        Ok(self.push(t, Op::ChannelShuffle { x, groups }, &[x]))
    }

    /// Edge features for `centers.len()` rows of `k` neighbors over a point
    /// feature table `x` of shape `P × F`.
    pub fn edge_features(
        &mut self,
        x: Var,
        centers: &[usize],
        neighbors: &[usize],
        variant: EdgeFeatureVariant,
    ) -> Result<Var> {
        let xt = self.value(x);
        if xt.shape().len() != 2 {
            return Err(SpnError::Dimension(format!(
                "edge features need a P × F table, got {:?}",
                xt.shape()
            )));
        }
        let (p, f) = (xt.shape()[0], xt.shape()[1]);
        let m = centers.len();
        if m == 0 || !neighbors.len().is_multiple_of(m) {
            return Err(SpnError::Dimension(format!(
                "{} neighbor entries for {m} centers",
                neighbors.len()
            )));
        }
        let k = neighbors.len() / m;
        if let Some(&bad) = centers.iter().chain(neighbors).find(|&&i| i >= p) {
            return Err(SpnError::Input(format!(
                "neighbor index {bad} out of range for {p} points"
            )));
        }
        let c = variant.channels(f);
        let xs = xt.values();
        let mut out = vec![0.0; m * k * c];
        parallel::for_each_row_mut(&mut out, k * c, |mi, block| {
            let xc = &xs[centers[mi] * f..(centers[mi] + 1) * f];
            for (kk, row) in block.chunks_mut(c).enumerate() {
                let nb = neighbors[mi * k + kk];
                let xn = &xs[nb * f..(nb + 1) * f];
                row[..f].copy_from_slice(xc);
                match variant {
                    EdgeFeatureVariant::CenterRelative => {
                        for j in 0..f {
                            row[f + j] = xc[j] - xn[j];
                        }
                    }
                    EdgeFeatureVariant::CenterNeighbor => row[f..].copy_from_slice(xn),
                    EdgeFeatureVariant::CenterNeighborRelative => {
                        row[f..2 * f].copy_from_slice(xn);
                        for j in 0..f {
                            row[2 * f + j] = xc[j] - xn[j];
                        }
                    }
                }
            }
        });
        let t = FeatureTensor::new(&[m, k, c], out)?;
        let op = Op::EdgeFeatures {
            x,
            centers: centers.to_vec(),
            neighbors: neighbors.to_vec(),
            variant,
        };
        Ok(self.push(t, op, &[x]))
    }

    /// `out[n] = Σ_j weights[n, j] · x[idx[n, j]]` with `width` terms per row.
    pub fn weighted_gather(
        &mut self,
        x: Var,
        idx: &[usize],
        weights: &[f64],
        width: usize,
    ) -> Result<Var> {
        let xt = self.value(x);
        if xt.shape().len() != 2 || width == 0 || idx.len() != weights.len() {
            return Err(SpnError::Dimension(format!(
                "weighted gather over {:?} with width {width}",
                xt.shape()
            )));
        }
        let (m, c) = (xt.shape()[0], xt.shape()[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(SpnError::Input(format!(
                "gather index {bad} out of range for {m} rows"
            )));
        }
        let n = idx.len() / width;
        let xs = xt.values();
        let mut out = vec![0.0; n * c];
        parallel::for_each_row_mut(&mut out, c, |r, orow| {
            for j in 0..width {
                let src = idx[r * width + j];
                let w = weights[r * width + j];
                for (o, &v) in orow.iter_mut().zip(&xs[src * c..(src + 1) * c]) {
                    *o += w * v;
                }
            }
        });
        let t = FeatureTensor::new(&[n, c], out)?;
        let op = Op::WeightedGather {
            x,
            idx: idx.to_vec(),
            weights: weights.to_vec(),
            width,
        };
        Ok(self.push(t, op, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape { x }, &[x]))
    }

    /// Multiplies by a fixed mask (already scaled by `1 / (1 − p)`).
    pub fn dropout_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xt = self.value(x);
        if mask.len() != xt.len() {
            return Err(SpnError::Dimension(format!(
                "dropout mask of {} entries for shape {:?}",
                mask.len(),
                xt.shape()
            )));
        }
        let vals = xt.values().iter().zip(&mask).map(|(a, b)| a * b).collect();
        let t = FeatureTensor::new(xt.shape(), vals)?;
        Ok(self.push(t, Op::Mask { x, mask }, &[x]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(SpnError::Dimension(format!(
                "mul of {:?} and {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let vals = at
            .values()
            .iter()
            .zip(bt.values())
            .map(|(x, y)| x * y)
            .collect();
        let t = FeatureTensor::new(at.shape(), vals)?;
        Ok(self.push(t, Op::Mul { a, b }, &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        self.push(FeatureTensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xt = self.value(x);
        let vals = xt.values().iter().map(|v| v * s).collect();
        let t = FeatureTensor::new(xt.shape(), vals).unwrap();
        self.push(t, Op::Scale { x, s }, &[x])
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lt = self.value(logits);
        let s = lt.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(SpnError::Dimension(format!(
                "logits {s:?} for {} labels",
                labels.len()
            )));
        }
        let (b, l) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= l) {
            return Err(SpnError::Input(format!(
                "label {bad} out of range for {l} classes"
            )));
        }
        let mut probs = vec![0.0; b * l];
        let mut loss = 0.0;
        for ((row, prow), &y) in lt.values().chunks(l).zip(probs.chunks_mut(l)).zip(labels) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &v) in prow.iter_mut().zip(row) {
                *p = (v - mx).exp();
                z += *p;
            }
            prow.iter_mut().for_each(|p| *p /= z);
            loss += z.ln() - (row[y] - mx);
        }
        let t = FeatureTensor::scalar(loss / b as f64);
        let op = Op::SoftmaxCe {
            logits,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.push(t, op, &[logits]))
    }

    /// Reverse pass from a scalar `loss`. Every tensor on the tape that
    /// requires a gradient ends up with one (zeros if unreachable).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(SpnError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.visited.clear();
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].tensor.requires_grad() {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.visited.push(id);
            let mut contribs = self.node_backward(id, &g);
            if self.fault == Some(self.nodes[id].kind) {
                for (_, c) in contribs.iter_mut() {
                    c.iter_mut().for_each(|v| *v = -*v);
                }
            }
            for (v, c) in contribs {
                if !self.requires(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(c).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(c),
                }
            }
            self.nodes[id].tensor.set_grad(g);
        }
        for node in &mut self.nodes {
            if node.tensor.requires_grad() && node.tensor.grad().is_none() {
                let n = node.tensor.len();
                node.tensor.set_grad(vec![0.0; n]);
            }
        }
        Ok(())
    }

    fn node_backward(&self, id: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => vec![],
            &Op::Matmul {
                x,
                w,
                b,
                groups,
                ci,
                co,
            } => {
                let xt = self.value(x);
                let (dx, dw, db) = grouped_matmul_backward(
                    xt.values(),
                    xt.rows(),
                    groups,
                    ci,
                    co,
                    self.value(w).values(),
                    g,
                    self.requires(x),
                );
                let mut out = vec![(w, dw), (b, db)];
                if let Some(dx) = dx {
                    out.push((x, dx));
                }
                out
            }
            &Op::Relu { x } => {
                let d = self
                    .value(x)
                    .values()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![(x, d)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_coupled,
            } => {
                let c = inv_std.len();
                let m = (xhat.len() / c) as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (hr, gr) in xhat.chunks(c).zip(g.chunks(c)) {
                    for ch in 0..c {
                        dgamma[ch] += gr[ch] * hr[ch];
                        dbeta[ch] += gr[ch];
                    }
                }
                let gam = self.value(*gamma).values();
                let mut dx = vec![0.0; xhat.len()];
                for ((dr, hr), gr) in dx.chunks_mut(c).zip(xhat.chunks(c)).zip(g.chunks(c)) {
                    for ch in 0..c {
                        let s = gam[ch] * inv_std[ch];
                        dr[ch] = if *batch_coupled {
                            s * (gr[ch] - dbeta[ch] / m - hr[ch] * dgamma[ch] / m)
                        } else {
                            s * gr[ch]
                        };
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::MaxPool { x, argmax } => {
                let s = self.shape(*x);
                let (k, c) = (s[1], s[2]);
                let mut dx = vec![0.0; self.value(*x).len()];
                for (i, (gr, ar)) in g.chunks(c).zip(argmax.chunks(c)).enumerate() {
                    for ch in 0..c {
                        dx[(i * k + ar[ch]) * c + ch] += gr[ch];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total.max(1);
                let mut out: Vec<(Var, Vec<f64>)> = parts
                    .iter()
                    .map(|&(v, w)| (v, Vec::with_capacity(rows * w)))
                    .collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for ((_, d), &(_, w)) in out.iter_mut().zip(parts) {
                        d.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                out
            }
            &Op::SliceChannels { x, start } => {
                let c = self.value(x).channels();
                let len = node.tensor.channels();
                let mut dx = vec![0.0; self.value(x).len()];
                for (dr, gr) in dx.chunks_mut(c).zip(g.chunks(len.max(1))) {
                    dr[start..start + len].copy_from_slice(gr);
                }
                vec![(x, dx)]
            }
            &Op::ChannelShuffle { x, groups } => {
                let c = node.tensor.channels();
                let mut dx = vec![0.0; g.len()];
                for (dr, gr) in dx.chunks_mut(c).zip(g.chunks(c)) {
                    for (ch, d) in dr.iter_mut().enumerate() {
                        *d = gr[shuffle_target(ch, c, groups)];
                    }
                }
                vec![(x, dx)]
            }
            Op::EdgeFeatures {
                x,
                centers,
                neighbors,
                variant,
            } => {
                let f = self.value(*x).channels();
                let c = variant.channels(f);
                let k = neighbors.len() / centers.len();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (row_id, gr) in g.chunks(c).enumerate() {
                    let ctr = centers[row_id / k];
                    let nb = neighbors[row_id];
                    for j in 0..f {
                        let (dc, dn) = match variant {
                            EdgeFeatureVariant::CenterRelative => (gr[j] + gr[f + j], -gr[f + j]),
                            EdgeFeatureVariant::CenterNeighbor => (gr[j], gr[f + j]),
                            EdgeFeatureVariant::CenterNeighborRelative => {
                                (gr[j] + gr[2 * f + j], gr[f + j] - gr[2 * f + j])
                            }
                        };
                        dx[ctr * f + j] += dc;
                        dx[nb * f + j] += dn;
                    }
                }
                vec![(*x, dx)]
            }
            Op::WeightedGather {
                x,
                idx,
                weights,
                width,
            } => {
                let c = self.value(*x).channels();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (r, gr) in g.chunks(c).enumerate() {
                    for j in 0..*width {
                        let src = idx[r * width + j];
                        let w = weights[r * width + j];
                        for (d, &gv) in dx[src * c..(src + 1) * c].iter_mut().zip(gr) {
                            *d += w * gv;
                        }
                    }
                }
                vec![(*x, dx)]
            }
            &Op::Reshape { x } => vec![(x, g.to_vec())],
            Op::Mask { x, mask } => vec![(*x, g.iter().zip(mask).map(|(a, b)| a * b).collect())],
            &Op::Mul { a, b } => {
                let av = self.value(a).values();
                let bv = self.value(b).values();
                vec![
                    (a, g.iter().zip(bv).map(|(x, y)| x * y).collect()),
                    (b, g.iter().zip(av).map(|(x, y)| x * y).collect()),
                ]
            }
            &Op::Sum { x } => vec![(x, vec![g[0]; self.value(x).len()])],
            &Op::Scale { x, s } => vec![(x, g.iter().map(|v| v * s).collect())],
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
            } => {
                let l = self.value(*logits).channels();
                let scale = g[0] / labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * l + y] -= scale;
                }
                vec![(*logits, d)]
            }
        }
    }
}
