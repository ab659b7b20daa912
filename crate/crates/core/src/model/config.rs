use serde::{Deserialize, Serialize};

use crate::error::{Result, SpnError};
use crate::pointcloud::{EdgeFeatureVariant, NeighborMethod};
use crate::sgc::{InputGrouping, SgcUnitConfig};

/// One encoder stage: farthest point sampling down to `n_out` centers, a
/// neighbor search, edge features and an SGC unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub n_out: usize,
    pub sgc: SgcUnitConfig,
}

impl StageConfig {
    pub fn k(&self) -> usize {
        self.sgc.k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Segment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels per input point (≥ 3, XYZ first).
    pub in_channels: usize,
    /// Nominal points per input cloud.
    pub n_points: usize,
    pub stages: Vec<StageConfig>,
    /// Hidden fully-connected widths of the classification head.
    pub head_widths: Vec<usize>,
    /// Per decoder step (coarsest first) MLP widths of the segmenter.
    pub seg_up_widths: Vec<Vec<usize>>,
    pub n_classes: usize,
    pub dropout_rate: f64,
    pub neighbor: NeighborMethod,
    /// Search radius of the first stage under [`NeighborMethod::Radius`];
    /// doubled at every later stage.
    pub radius: f64,
    pub batch_norm: bool,
}

impl Default for ModelConfig {
    /// Two-stage desk-scale classifier for 256-point clouds.
    fn default() -> Self {
        let sgc = |widths: &[usize], k| SgcUnitConfig {
            groups: 2,
            mlp_widths: widths.to_vec(),
            edge_variant: EdgeFeatureVariant::CenterRelative,
            k,
            input_grouping: InputGrouping::Split,
        };
        Self {
            in_channels: 3,
            n_points: 256,
            stages: vec![
                StageConfig {
                    n_out: 64,
                    sgc: sgc(&[32, 32, 64], 16),
                },
                StageConfig {
                    n_out: 16,
                    sgc: sgc(&[64, 128], 8),
                },
            ],
            head_widths: vec![128, 64],
            seg_up_widths: vec![vec![128], vec![64, 64]],
            n_classes: 4,
            dropout_rate: 0.5,
            neighbor: NeighborMethod::Knn,
            radius: 0.25,
            batch_norm: true,
        }
    }
}

impl ModelConfig {
    /// Sets every stage's group count.
    pub fn with_groups(mut self, g: usize) -> Self {
        self.stages.iter_mut().for_each(|s| s.sgc.groups = g);
        self
    }

    pub fn with_edge_variant(mut self, v: EdgeFeatureVariant) -> Self {
        self.stages.iter_mut().for_each(|s| s.sgc.edge_variant = v);
        self
    }

    pub fn with_input_grouping(mut self, ig: InputGrouping) -> Self {
        self.stages
            .iter_mut()
            .for_each(|s| s.sgc.input_grouping = ig);
        self
    }

    /// Radius used by stage `s` (0-based).
    pub fn stage_radius(&self, s: usize) -> f64 {
        self.radius * f64::powi(2.0, s as i32)
    }

    /// Feature channels entering stage `s`, and the edge channels it builds.
    pub fn stage_channels(&self, s: usize) -> (usize, usize) {
        let f = if s == 0 {
            self.in_channels
        } else {
            self.stages[s - 1].sgc.out_channels()
        };
        (f, self.stages[s].sgc.edge_variant.channels(f))
    }

    /// Channels after the encoder (input channels when there are no stages).
    pub fn encoder_out_channels(&self) -> usize {
        self.stages
            .last()
            .map(|s| s.sgc.out_channels())
            .unwrap_or(self.in_channels)
    }

    /// Structural checks that do not need a minimum stage count.
    pub fn validate_layers(&self) -> Result<()> {
        if self.in_channels < 3 {
            return Err(SpnError::Config(format!(
                "in_channels must be ≥ 3, got {}",
                self.in_channels
            )));
        }
        if self.n_classes < 2 {
            return Err(SpnError::Config(format!(
                "n_classes must be ≥ 2, got {}",
                self.n_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(SpnError::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.neighbor == NeighborMethod::Radius && !(self.radius > 0.0) {
            return Err(SpnError::Config(format!(
                "radius must be > 0, got {}",
                self.radius
            )));
        }
        if self.head_widths.contains(&0) || self.seg_up_widths.iter().flatten().any(|&w| w == 0) {
            return Err(SpnError::Config("layer widths must be positive".into()));
        }
        let mut incoming = self.n_points;
        for (s, st) in self.stages.iter().enumerate() {
            let name = format!("stage{}", s + 1);
            if st.n_out == 0 || st.n_out > incoming {
                return Err(SpnError::Config(format!(
                    "{name}: n_out={} must lie in 1..={incoming}",
                    st.n_out
                )));
            }
            if st.k() >= incoming {
                return Err(SpnError::Config(format!(
                    "{name}: k={} must be below the incoming point count {incoming}",
                    st.k()
                )));
            }
            st.sgc.validate(self.stage_channels(s).1, &name)?;
            incoming = st.n_out;
        }
        Ok(())
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        if self.stages.is_empty() {
            return Err(SpnError::Config("a model needs at least one stage".into()));
        }
        self.validate_layers()?;
        if task == Task::Segment && self.seg_up_widths.len() != self.stages.len() {
            return Err(SpnError::Config(format!(
                "segmenter needs one decoder width list per stage: {} stages, {} lists",
                self.stages.len(),
                self.seg_up_widths.len()
            )));
        }
        Ok(())
    }
}
