//! Hierarchical classification and segmentation networks.
//!
//! Encoder stage: farthest point sampling → neighbor search → edge features
//! → SGC unit. The classifier max-pools the last stage over points and
//! applies a fully-connected head; the segmenter walks back up through
//! interpolation, skip concatenation and per-point MLPs.

mod checkpoint;
mod config;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use config::{ModelConfig, StageConfig, Task};

use std::collections::BTreeMap;

use crate::error::{Result, SpnError};
use crate::nn::{Ctx, Mode, Module, ParamKind};
use crate::parallel;
use crate::pointcloud::{
    farthest_point_sample, interpolation_weights, knn_query, radius_query, KnnBackend,
    NeighborMethod, Point3, PointCloud,
};
use crate::rng::{substream, Stream};
use crate::sgc::{GroupConvLayer, SgcUnit};
use crate::tensor::{BatchStats, FeatureTensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub task: Task,
    pub stages: Vec<SgcUnit>,
    /// Classifier hidden layers (empty for the segmenter).
    pub head: Vec<GroupConvLayer>,
    /// Segmenter decoder steps, coarsest first (empty for the classifier).
    pub decoder: Vec<Vec<GroupConvLayer>>,
    /// Final logits layer.
    pub out: GroupConvLayer,
}

/// Per-cloud geometry of one encoder stage.
struct StageGeometry {
    selected: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Model {
    pub fn classifier(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, Task::Classify, seed)
    }

    pub fn segmenter(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, Task::Segment, seed)
    }

    /// Builds a model with parameters drawn from the `init` sub-stream of
    /// `seed`.
    pub fn build(config: &ModelConfig, task: Task, seed: u64) -> Result<Self> {
        config.validate(task)?;
        let mut rng = substream(seed, Stream::Init, 0);
        let bn = config.batch_norm;
        let mut stages = Vec::with_capacity(config.stages.len());
        for (s, st) in config.stages.iter().enumerate() {
            let (_, edge_c) = config.stage_channels(s);
            stages.push(SgcUnit::new(
                &format!("stage{}", s + 1),
                edge_c,
                &st.sgc,
                bn,
                &mut rng,
            )?);
        }
        let mut head = Vec::new();
        let mut decoder = Vec::new();
        let out = match task {
            Task::Classify => {
                let mut cin = config.encoder_out_channels();
                for (i, &w) in config.head_widths.iter().enumerate() {
                    head.push(GroupConvLayer::new(
                        format!("head.fc{}", i + 1),
                        cin,
                        w,
                        1,
                        bn,
                        true,
                        &mut rng,
                    )?);
                    cin = w;
                }
                GroupConvLayer::new("head.out", cin, config.n_classes, 1, false, false, &mut rng)?
            }
            Task::Segment => {
                let n = config.stages.len();
                let mut cur = config.encoder_out_channels();
                for (step, widths) in config.seg_up_widths.iter().enumerate() {
                    // Step `step` lands on level n - 1 - step.
                    let level = n - 1 - step;
                    let skip = if level == 0 {
                        config.in_channels
                    } else {
                        config.stages[level - 1].sgc.out_channels()
                    };
                    let mut cin = cur + skip;
                    let mut layers = Vec::with_capacity(widths.len());
                    for (l, &w) in widths.iter().enumerate() {
                        layers.push(GroupConvLayer::new(
                            format!("decoder{}.layer{}", step + 1, l + 1),
                            cin,
                            w,
                            1,
                            bn,
                            true,
                            &mut rng,
                        )?);
                        cin = w;
                    }
                    decoder.push(layers);
                    cur = cin;
                }
                GroupConvLayer::new("seg.out", cur, config.n_classes, 1, false, false, &mut rng)?
            }
        };
        Ok(Self {
            config: config.clone(),
            task,
            stages,
            head,
            decoder,
            out,
        })
    }

    fn check_inputs(&self, clouds: &[&PointCloud]) -> Result<usize> {
        let first = clouds
            .first()
            .ok_or_else(|| SpnError::Input("forward on an empty batch".into()))?;
        let n = first.len();
        for c in clouds {
            if c.channels() != self.config.in_channels {
                return Err(SpnError::Dimension(format!(
                    "cloud has {} channels, model expects {}",
                    c.channels(),
                    self.config.in_channels
                )));
            }
            if c.len() != n {
                return Err(SpnError::Dimension(format!(
                    "clouds in a batch must share a point count: {} vs {n}",
                    c.len()
                )));
            }
        }
        let mut incoming = n;
        for (s, st) in self.config.stages.iter().enumerate() {
            if st.n_out > incoming || st.k() >= incoming {
                return Err(SpnError::Input(format!(
                    "stage{} needs n_out ≤ {incoming} and k < {incoming} (n_out={}, k={})",
                    s + 1,
                    st.n_out,
                    st.k()
                )));
            }
            incoming = st.n_out;
        }
        Ok(n)
    }

    fn stage_geometry(&self, s: usize, pts: &[Point3]) -> Result<StageGeometry> {
        let st = &self.config.stages[s];
        let selected = farthest_point_sample(pts, st.n_out)?;
        let nb = match self.config.neighbor {
            NeighborMethod::Knn => knn_query(pts, &selected, st.k(), KnnBackend::Auto)?,
            NeighborMethod::Radius => {
                radius_query(pts, &selected, self.config.stage_radius(s), st.k())?
            }
        };
        Ok(StageGeometry {
            selected,
            neighbors: nb.indices,
        })
    }

    /// Records the forward pass for a batch of clouds sharing a point count.
    ///
    /// Returns `B × n_classes` logits for the classifier and
    /// `(B·N) × n_classes` per-point logits for the segmenter (cloud-major).
    pub fn forward(&self, ctx: &mut Ctx, clouds: &[&PointCloud]) -> Result<Var> {
        let n = self.check_inputs(clouds)?;
        let b = clouds.len();
        let f = self.config.in_channels;
        let mut input = Vec::with_capacity(b * n * f);
        clouds
            .iter()
            .for_each(|c| input.extend_from_slice(c.data()));
        let x0 = ctx.tape.constant(FeatureTensor::new(&[b * n, f], input)?);

        let mut positions: Vec<Vec<Point3>> = clouds.iter().map(|c| c.positions()).collect();
        let mut levels = vec![(x0, positions.clone())];
        let mut x = x0;
        let mut incoming = n;
        for (s, unit) in self.stages.iter().enumerate() {
            let geo = parallel::map_indices(b, |i| self.stage_geometry(s, &positions[i]))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let n_out = self.config.stages[s].n_out;
            let mut centers = Vec::with_capacity(b * n_out);
            let mut neighbors = Vec::with_capacity(b * n_out * unit.config.k);
            for (i, g) in geo.iter().enumerate() {
                let off = i * incoming;
                centers.extend(g.selected.iter().map(|&c| c + off));
                neighbors.extend(g.neighbors.iter().map(|&j| j + off));
            }
            let edges =
                ctx.tape
                    .edge_features(x, &centers, &neighbors, unit.config.edge_variant)?;
            x = unit.forward(ctx, edges)?;
            positions = positions
                .iter()
                .zip(&geo)
                .map(|(p, g)| g.selected.iter().map(|&i| p[i]).collect())
                .collect();
            levels.push((x, positions.clone()));
            incoming = n_out;
        }

        match self.task {
            Task::Classify => {
                let c = ctx.tape.value(x).channels();
                let grouped = ctx.tape.reshape(x, &[b, incoming, c])?;
                let mut h = ctx.tape.maxpool_neighbors(grouped)?;
                for layer in &self.head {
                    h = layer.forward(ctx, h)?;
                    h = ctx.dropout(h, self.config.dropout_rate)?;
                }
                self.out.forward(ctx, h)
            }
            Task::Segment => {
                let mut cur = x;
                for (step, layers) in self.decoder.iter().enumerate() {
                    let coarse = &levels[levels.len() - 1 - step].1;
                    let (skip, fine) = &levels[levels.len() - 2 - step];
                    let (n_c, n_f) = (coarse[0].len(), fine[0].len());
                    let per_cloud =
                        parallel::map_indices(b, |i| interpolation_weights(&coarse[i], &fine[i]))
                            .into_iter()
                            .collect::<Result<Vec<_>>>()?;
                    let width = per_cloud[0].width;
                    let mut idx = Vec::with_capacity(b * n_f * width);
                    let mut weights = Vec::with_capacity(b * n_f * width);
                    for (i, w) in per_cloud.into_iter().enumerate() {
                        idx.extend(w.idx.into_iter().map(|j| j + i * n_c));
                        weights.extend(w.weights);
                    }
                    let up = ctx.tape.weighted_gather(cur, &idx, &weights, width)?;
                    cur = ctx.tape.concat(&[up, *skip])?;
                    for layer in layers {
                        cur = layer.forward(ctx, cur)?;
                    }
                }
                self.out.forward(ctx, cur)
            }
        }
    }

    /// Eval-mode logits for one cloud.
    pub fn predict(&self, cloud: &PointCloud) -> Result<FeatureTensor> {
        self.predict_batch(&[cloud])
    }

    pub fn predict_batch(&self, clouds: &[&PointCloud]) -> Result<FeatureTensor> {
        let mut ctx = Ctx::new(Mode::Eval, 0);
        let v = self.forward(&mut ctx, clouds)?;
        Ok(ctx.tape.value(v).clone())
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_bn_stats(&mut self, stats: &[(String, BatchStats)], momentum: f64) -> Result<()> {
        let lookup: BTreeMap<&str, &BatchStats> =
            stats.iter().map(|(n, s)| (n.as_str(), s)).collect();
        let mut result = Ok(());
        self.for_each_layer_mut(&mut |layer| {
            if let Some(bn) = &mut layer.bn {
                if let Some(s) = lookup.get(bn.name.as_str()) {
                    if let Err(e) = bn.update_running(s, momentum) {
                        result = Err(e);
                    }
                }
            }
        });
        result
    }

    fn for_each_layer_mut(&mut self, f: &mut dyn FnMut(&mut GroupConvLayer)) {
        for unit in &mut self.stages {
            unit.layers.iter_mut().for_each(&mut *f);
        }
        self.head.iter_mut().for_each(&mut *f);
        for step in &mut self.decoder {
            step.iter_mut().for_each(&mut *f);
        }
        f(&mut self.out);
    }

    /// Every learnable array with its scalar count, in storage order.
    pub fn census(&self) -> Vec<(String, usize)> {
        let mut rows = Vec::new();
        self.visit(&mut |name, t, kind| {
            if kind.learnable() {
                rows.push((name.to_string(), t.len()));
            }
        });
        rows
    }

    /// Copy of a stored tensor by name.
    pub fn tensor(&self, name: &str) -> Option<FeatureTensor> {
        let mut found = None;
        self.visit(&mut |n, t, _| {
            if n == name {
                found = Some(t.clone());
            }
        });
        found
    }

    /// Applies `f` to the stored tensor called `name`.
    pub fn update_tensor(&mut self, name: &str, f: impl FnOnce(&mut FeatureTensor)) -> Result<()> {
        let mut f = Some(f);
        self.visit_mut(&mut |n, t, _| {
            if n == name {
                if let Some(f) = f.take() {
                    f(t);
                }
            }
        });
        match f {
            None => Ok(()),
            Some(_) => Err(SpnError::Usage(format!("no tensor named {name}"))),
        }
    }
}

impl Module for Model {
    fn visit(&self, f: &mut dyn FnMut(&str, &FeatureTensor, ParamKind)) {
        self.stages.iter().for_each(|u| u.visit(f));
        self.head.iter().for_each(|l| l.visit(f));
        self.decoder.iter().flatten().for_each(|l| l.visit(f));
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut FeatureTensor, ParamKind)) {
        self.stages.iter_mut().for_each(|u| u.visit_mut(f));
        self.head.iter_mut().for_each(|l| l.visit_mut(f));
        self.decoder
            .iter_mut()
            .flatten()
            .for_each(|l| l.visit_mut(f));
        self.out.visit_mut(f);
    }
}
