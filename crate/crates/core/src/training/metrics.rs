use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Result, SpnError};
use crate::model::{Model, Task};
use crate::parallel;
use crate::tensor::FeatureTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: usize,
    /// Clouds (classification) or points (segmentation).
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Mean shape IoU over the category's shapes (segmentation only).
    pub miou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub overall_accuracy: f64,
    pub mean_class_accuracy: f64,
    pub miou: Option<f64>,
    pub per_class: Vec<ClassRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeIou {
    pub category: usize,
    /// IoU per part of the category, in part-set order.
    pub part_ious: Vec<f64>,
    /// Mean of `part_ious`.
    pub iou: f64,
}

/// IoU of one shape over its category's parts. A part missing from both
/// prediction and truth scores 1.
pub fn compute_miou(
    pred: &[usize],
    truth: &[usize],
    category: usize,
    part_sets: &[Vec<usize>],
) -> Result<ShapeIou> {
    if pred.len() != truth.len() {
        return Err(SpnError::Dimension(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let parts = part_sets
        .get(category)
        .ok_or_else(|| SpnError::Input(format!("unknown category {category}")))?;
    if let Some(bad) = pred.iter().chain(truth).find(|l| !parts.contains(l)) {
        return Err(SpnError::Input(format!(
            "label {bad} is not a part of category {category} {parts:?}"
        )));
    }
    let part_ious: Vec<f64> = parts
        .iter()
        .map(|&p| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&a, &b) in pred.iter().zip(truth) {
                let (ia, ib) = (a == p, b == p);
                inter += usize::from(ia && ib);
                union += usize::from(ia || ib);
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect();
    let iou = part_ious.iter().sum::<f64>() / part_ious.len() as f64;
    Ok(ShapeIou {
        category,
        part_ious,
        iou,
    })
}

/// Dataset mIoU: mean over shapes.
pub fn mean_iou(shapes: &[ShapeIou]) -> f64 {
    if shapes.is_empty() {
        return 0.0;
    }
    shapes.iter().map(|s| s.iou).sum::<f64>() / shapes.len() as f64
}

/// Per-row argmax over the given columns only; ties go to the earlier
/// column in `allowed`.
pub fn restricted_argmax(row: &[f64], allowed: &[usize]) -> usize {
    let mut best = allowed[0];
    for &c in &allowed[1..] {
        if row[c] > row[best] {
            best = c;
        }
    }
    best
}

fn argmax(row: &[f64]) -> usize {
    let all: Vec<usize> = (0..row.len()).collect();
    restricted_argmax(row, &all)
}

/// Eval-mode metrics of `model` on `ds`, in batches of `batch` clouds.
pub fn evaluate(model: &Model, ds: &Dataset, batch: usize) -> Result<MetricSet> {
    if ds.is_empty() {
        return Err(SpnError::Input(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let batch = batch.max(1);
    let starts: Vec<usize> = (0..ds.len()).step_by(batch).collect();
    let logits = parallel::map_indices(starts.len(), |b| {
        let end = (starts[b] + batch).min(ds.len());
        let clouds: Vec<_> = ds.samples[starts[b]..end]
            .iter()
            .map(|s| &s.cloud)
            .collect();
        model.predict_batch(&clouds)
    })
    .into_iter()
    .collect::<Result<Vec<FeatureTensor>>>()?;
    let n_classes = ds.n_classes;
    let mut count = vec![0usize; n_classes];
    let mut correct = vec![0usize; n_classes];
    let mut shapes = Vec::new();
    let mut sample = 0;
    for t in &logits {
        let l = t.channels();
        let rows: Vec<&[f64]> = t.values().chunks(l).collect();
        match model.task {
            Task::Classify => {
                for r in rows {
                    let s = &ds.samples[sample];
                    if s.class >= n_classes {
                        return Err(SpnError::Input(format!("class {} out of range", s.class)));
                    }
                    count[s.class] += 1;
                    correct[s.class] += usize::from(argmax(r) == s.class);
                    sample += 1;
                }
            }
            Task::Segment => {
                let n = ds.samples[sample].cloud.len();
                for per_cloud in rows.chunks(n) {
                    let s = &ds.samples[sample];
                    let truth = s.parts.as_ref().ok_or_else(|| {
                        SpnError::Input("segmentation sample without part labels".into())
                    })?;
                    let allowed = ds.part_sets.get(s.class).ok_or_else(|| {
                        SpnError::Input(format!("sample category {} has no part set", s.class))
                    })?;
                    let pred: Vec<usize> = per_cloud
                        .iter()
                        .map(|r| restricted_argmax(r, allowed))
                        .collect();
                    count[s.class] += truth.len();
                    correct[s.class] += pred.iter().zip(truth).filter(|(a, b)| a == b).count();
                    shapes.push(compute_miou(&pred, truth, s.class, &ds.part_sets)?);
                    sample += 1;
                }
            }
        }
    }
    let per_class: Vec<ClassRow> = (0..n_classes)
        .filter(|&c| count[c] > 0)
        .map(|c| {
            let cat: Vec<ShapeIou> = shapes.iter().filter(|s| s.category == c).cloned().collect();
            ClassRow {
                class: c,
                count: count[c],
                correct: correct[c],
                accuracy: correct[c] as f64 / count[c] as f64,
                miou: (model.task == Task::Segment).then(|| mean_iou(&cat)),
            }
        })
        .collect();
    let total: usize = count.iter().sum();
    Ok(MetricSet {
        overall_accuracy: correct.iter().sum::<usize>() as f64 / total as f64,
        mean_class_accuracy: per_class.iter().map(|r| r.accuracy).sum::<f64>()
            / per_class.len() as f64,
        miou: (model.task == Task::Segment).then(|| mean_iou(&shapes)),
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let sets = vec![vec![0, 1]];
        let r = compute_miou(&[0, 0, 0, 0], &[0, 0, 1, 1], 0, &sets).unwrap();
        assert_eq!(r.part_ious, vec![0.5, 0.0]);
        assert_eq!(r.iou, 0.25);
        let perfect = compute_miou(&[0, 0], &[0, 0], 0, &sets).unwrap();
        assert_eq!(perfect.iou, 1.0);
        assert!(compute_miou(&[2], &[0], 0, &sets).is_err());
    }
}
