//! Grouped 1×1 convolution, channel shuffle, and the shuffled group
//! convolution (SGC) unit built from them.
//!
//! An SGC unit takes `M × K × C0` edge features, runs a stack of grouped 1×1
//! convolutions with a channel shuffle between consecutive layers, and
//! max-pools over the neighbor axis:
//!
//! ```text
//! edges ─► gconv₁ ─► shuffle ─► gconv₂ ─► shuffle ─► … ─► gconvₙ ─► max_K
//! ```
//!
//! Group `j` of a layer only sees contiguous input channels
//! `[j·C/g, (j+1)·C/g)`; the shuffle between layers transposes the
//! `g × C/g` channel grid so every group of the next layer sees a slice of
//! every group of the previous one.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complexity::layer_params;
use crate::error::{Result, SpnError};
use crate::nn::{BatchNorm, Ctx, Module, ParamKind};
use crate::pointcloud::EdgeFeatureVariant;
use crate::tensor::{FeatureTensor, Tape, Var};

/// How the first layer of a unit consumes the edge features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputGrouping {
    /// Group `j` gets the `j`-th contiguous channel slice; needs `g | C0`.
    #[default]
    Split,
    /// Every group sees all edge channels, which makes the first layer an
    /// ungrouped convolution. Needed when `C0` is not divisible by `g`.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgcUnitConfig {
    pub groups: usize,
    pub mlp_widths: Vec<usize>,
    pub edge_variant: EdgeFeatureVariant,
    pub k: usize,
    #[serde(default)]
    pub input_grouping: InputGrouping,
}

impl SgcUnitConfig {
    pub fn validate(&self, in_channels: usize, where_: &str) -> Result<()> {
        if self.groups == 0 {
            return Err(SpnError::Config(format!(
                "{where_}: group count must be ≥ 1"
            )));
        }
        if self.mlp_widths.is_empty() {
            return Err(SpnError::Config(format!("{where_}: mlp_widths is empty")));
        }
        if self.k == 0 {
            return Err(SpnError::Config(format!("{where_}: k must be ≥ 1")));
        }
        let mut cin = in_channels;
        for (l, &w) in self.mlp_widths.iter().enumerate() {
            let g = self.layer_groups(l);
            if w == 0 || w % self.groups != 0 {
                return Err(SpnError::Config(format!(
                    "{where_} layer {}: width {w} not divisible by g={}",
                    l + 1,
                    self.groups
                )));
            }
            if !cin.is_multiple_of(g) {
                return Err(SpnError::Config(format!(
                    "{where_} layer {}: {cin} input channels not divisible by g={g}",
                    l + 1
                )));
            }
            cin = w;
        }
        Ok(())
    }

    /// Group count actually used by layer `l`.
    pub fn layer_groups(&self, l: usize) -> usize {
        if l == 0 && self.input_grouping == InputGrouping::Shared {
            1
        } else {
            self.groups
        }
    }

    pub fn out_channels(&self) -> usize {
        *self.mlp_widths.last().expect("validated non-empty")
    }
}

/// Grouped 1×1 convolution: `g` weight blocks of `(c_in/g) × (c_out/g)`,
/// optional batch norm and ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupConvLayer {
    pub name: String,
    pub groups: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub weight: FeatureTensor,
    pub bias: FeatureTensor,
    pub bn: Option<BatchNorm>,
    pub with_activation: bool,
}

impl GroupConvLayer {
    /// Weights uniform in `±sqrt(6 / (c_in + c_out))`, zero bias.
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        groups: usize,
        with_bn: bool,
        with_activation: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let name = name.into();
        if groups == 0 || !c_in.is_multiple_of(groups) || !c_out.is_multiple_of(groups) {
            return Err(SpnError::Config(format!(
                "{name}: g={groups} must divide c_in={c_in} and c_out={c_out}"
            )));
        }
        let (ci, co) = (c_in / groups, c_out / groups);
        let bound = (6.0 / (c_in + c_out) as f64).sqrt();
        let weight = FeatureTensor::from_fn(&[groups, ci, co], |_| rng.random_range(-bound..bound));
        debug_assert_eq!(
            weight.len(),
            layer_params(c_in, c_out, groups).unwrap() as usize
        );
        Ok(Self {
            bn: with_bn.then(|| BatchNorm::new(format!("{name}.bn"), c_out)),
            name,
            groups,
            c_in,
            c_out,
            weight,
            bias: FeatureTensor::zeros(&[c_out]),
            with_activation,
        })
    }

    /// Weight count, `c_in · c_out / g`.
    pub fn weight_count(&self) -> usize {
        self.weight.len()
    }

    /// The equivalent full `c_in × c_out` weight matrix (block diagonal).
    pub fn block_diagonal(&self) -> FeatureTensor {
        let (ci, co) = (self.c_in / self.groups, self.c_out / self.groups);
        let w = self.weight.values();
        let mut full = vec![0.0; self.c_in * self.c_out];
        for j in 0..self.groups {
            for i in 0..ci {
                for o in 0..co {
                    full[(j * ci + i) * self.c_out + j * co + o] = w[(j * ci + i) * co + o];
                }
            }
        }
        FeatureTensor::new(&[self.c_in, self.c_out], full).unwrap()
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let cin = ctx.tape.value(x).channels();
        if cin != self.c_in {
            return Err(SpnError::Dimension(format!(
                "{}: input shape {:?} has {cin} channels, layer expects {}",
                self.name,
                ctx.tape.shape(x),
                self.c_in
            )));
        }
        let w = ctx.param(&format!("{}.weight", self.name), &self.weight);
        let b = ctx.param(&format!("{}.bias", self.name), &self.bias);
        let mut y = ctx.tape.group_conv(x, w, b)?;
        if let Some(bn) = &self.bn {
            y = bn.forward(ctx, y)?;
        }
        if self.with_activation {
            y = ctx.tape.relu(y);
        }
        Ok(y)
    }
}

impl Module for GroupConvLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &FeatureTensor, ParamKind)) {
        f(
            &format!("{}.weight", self.name),
            &self.weight,
            ParamKind::Weight,
        );
        f(&format!("{}.bias", self.name), &self.bias, ParamKind::Bias);
        if let Some(bn) = &self.bn {
            bn.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut FeatureTensor, ParamKind)) {
        f(
            &format!("{}.weight", self.name),
            &mut self.weight,
            ParamKind::Weight,
        );
        f(
            &format!("{}.bias", self.name),
            &mut self.bias,
            ParamKind::Bias,
        );
        if let Some(bn) = &mut self.bn {
            bn.visit_mut(f);
        }
    }
}

/// Splits the channel axis into `g` contiguous equal slices.
pub fn split_groups(tape: &mut Tape, x: Var, g: usize) -> Result<Vec<Var>> {
    let c = tape.value(x).channels();
    if g == 0 || !c.is_multiple_of(g) {
        return Err(SpnError::Config(format!(
            "cannot split {c} channels into {g} groups"
        )));
    }
    let n = c / g;
    (0..g).map(|j| tape.slice_channels(x, j * n, n)).collect()
}

pub fn channel_shuffle(tape: &mut Tape, x: Var, g: usize) -> Result<Var> {
    tape.channel_shuffle(x, g)
}

/// Input channel feeding each output channel after a `g`-way shuffle.
pub fn shuffle_order(channels: usize, g: usize) -> Result<Vec<usize>> {
    if g == 0 || !channels.is_multiple_of(g) {
        return Err(SpnError::Config(format!(
            "channel shuffle: {channels} channels not divisible into {g} groups"
        )));
    }
    let n = channels / g;
    Ok((0..channels).map(|o| (o % g) * n + o / g).collect())
}

pub fn group_conv_forward(ctx: &mut Ctx, x: Var, layer: &GroupConvLayer) -> Result<Var> {
    layer.forward(ctx, x)
}

/// A stack of grouped layers with shuffles between them, then neighbor
/// max-pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct SgcUnit {
    pub config: SgcUnitConfig,
    pub layers: Vec<GroupConvLayer>,
}

impl SgcUnit {
    pub fn new(
        name: &str,
        in_channels: usize,
        config: &SgcUnitConfig,
        with_bn: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate(in_channels, name)?;
        let mut layers = Vec::with_capacity(config.mlp_widths.len());
        let mut cin = in_channels;
        for (l, &w) in config.mlp_widths.iter().enumerate() {
            layers.push(GroupConvLayer::new(
                format!("{name}.layer{}", l + 1),
                cin,
                w,
                config.layer_groups(l),
                with_bn,
                true,
                rng,
            )?);
            cin = w;
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].c_in
    }

    /// `M × K × C0` edge features → `M × C_last`.
    pub fn forward(&self, ctx: &mut Ctx, edges: Var) -> Result<Var> {
        let mut x = edges;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            x = layer.forward(ctx, x)?;
            if l < last && self.config.groups > 1 {
                x = ctx.tape.channel_shuffle(x, self.config.groups)?;
            }
        }
        ctx.tape.maxpool_neighbors(x)
    }
}

impl Module for SgcUnit {
    fn visit(&self, f: &mut dyn FnMut(&str, &FeatureTensor, ParamKind)) {
        self.layers.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut FeatureTensor, ParamKind)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::rng::{substream, Stream};

    fn rng() -> ChaCha8Rng {
        substream(1, Stream::Init, 0)
    }

    fn cfg(groups: usize, widths: &[usize]) -> SgcUnitConfig {
        SgcUnitConfig {
            groups,
            mlp_widths: widths.to_vec(),
            edge_variant: EdgeFeatureVariant::CenterRelative,
            k: 4,
            input_grouping: InputGrouping::Split,
        }
    }

    #[test]
    fn split_groups_contiguous() {
        let mut tape = Tape::new();
        let x = tape.constant(FeatureTensor::from_fn(&[1, 1, 6], |i| i as f64));
        let parts = split_groups(&mut tape, x, 2).unwrap();
        assert_eq!(tape.value(parts[0]).values(), &[0.0, 1.0, 2.0]);
        assert_eq!(tape.value(parts[1]).values(), &[3.0, 4.0, 5.0]);
        let one = split_groups(&mut tape, x, 1).unwrap();
        assert_eq!(tape.value(one[0]), tape.value(x));
        assert!(matches!(
            split_groups(&mut tape, x, 4),
            Err(SpnError::Config(_))
        ));
    }

    #[test]
    fn shuffle_order_examples() {
        assert_eq!(shuffle_order(6, 2).unwrap(), vec![0, 3, 1, 4, 2, 5]);
        assert_eq!(shuffle_order(5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(shuffle_order(5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn layer_divisibility_and_census() {
        assert!(GroupConvLayer::new("l", 6, 8, 4, false, false, &mut rng()).is_err());
        let l = GroupConvLayer::new("l", 64, 128, 2, true, true, &mut rng()).unwrap();
        assert_eq!(l.weight_count(), 4096);
        assert_eq!(l.param_count(), 4096 + 128 + 2 * 128);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut l = GroupConvLayer::new("l", 4, 4, 2, false, false, &mut rng()).unwrap();
        l.weight.values_mut().fill(0.0);
        l.bias = FeatureTensor::new(&[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let mut ctx = Ctx::new(Mode::Eval, 0);
        let x = ctx
            .tape
            .constant(FeatureTensor::from_fn(&[2, 3, 4], |i| i as f64));
        let y = l.forward(&mut ctx, x).unwrap();
        for row in ctx.tape.value(y).values().chunks(4) {
            assert_eq!(row, &[1.0, -2.0, 3.0, 0.5]);
        }
    }

    #[test]
    fn unit_validation_names_layer() {
        let err = SgcUnit::new("stage1", 6, &cfg(4, &[8, 8]), false, &mut rng()).unwrap_err();
        assert!(err.to_string().contains("stage1 layer 1"), "{err}");
        let err = SgcUnit::new("stage1", 6, &cfg(2, &[8, 5]), false, &mut rng()).unwrap_err();
        assert!(err.to_string().contains("layer 2"), "{err}");
        let shared = SgcUnitConfig {
            input_grouping: InputGrouping::Shared,
            ..cfg(4, &[8, 8])
        };
        let unit = SgcUnit::new("stage1", 6, &shared, false, &mut rng()).unwrap();
        assert_eq!(unit.layers[0].groups, 1);
        assert_eq!(unit.layers[1].groups, 4);
    }
}
