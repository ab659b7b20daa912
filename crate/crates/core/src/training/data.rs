use rand::seq::SliceRandom;

use crate::error::{Result, SpnError};
use crate::model::Task;
use crate::pointcloud::{Labels, PointCloud};
use crate::rng::{substream, Stream};

/// One labeled cloud. `class` is the object class (for segmentation, the
/// shape category); `parts` holds per-point part labels when known.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub class: usize,
    pub parts: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
    /// Category → part labels. Part labels index the segmenter's outputs.
    pub part_sets: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_parts(&self) -> usize {
        self.part_sets.iter().flatten().max().map_or(0, |&m| m + 1)
    }

    /// Builds a dataset from labeled clouds.
    ///
    /// Classification labels come from a per-cloud label, a constant
    /// per-point column, or (with `part_sets`) the category owning the
    /// per-point part labels. Segmentation needs per-point labels; without
    /// `part_sets` every cloud is put in a single category holding all
    /// labels seen.
    pub fn from_clouds(
        clouds: Vec<(String, PointCloud)>,
        task: Task,
        part_sets: Option<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        let to_usize = |origin: &str, v: i64| {
            usize::try_from(v).map_err(|_| SpnError::Input(format!("{origin}: negative label {v}")))
        };
        let category_of = |origin: &str, parts: &[usize], sets: &[Vec<usize>]| {
            sets.iter()
                .position(|s| parts.iter().all(|p| s.contains(p)))
                .ok_or_else(|| {
                    SpnError::Input(format!("{origin}: part labels fit no single category"))
                })
        };
        let mut samples = Vec::with_capacity(clouds.len());
        for (origin, cloud) in &clouds {
            let per_point = match cloud.labels() {
                Labels::PerPoint(ls) => Some(
                    ls.iter()
                        .map(|&v| to_usize(origin, v))
                        .collect::<Result<Vec<_>>>()?,
                ),
                _ => None,
            };
            let class = match (cloud.labels(), &per_point, &part_sets) {
                (Labels::PerCloud(c), _, _) => Some(to_usize(origin, *c)?),
                (_, Some(pp), Some(sets)) => Some(category_of(origin, pp, sets)?),
                (_, Some(pp), None) if pp.iter().all(|&v| v == pp[0]) => Some(pp[0]),
                _ => None,
            };
            let sample = match task {
                Task::Classify => Sample {
                    cloud: cloud.clone(),
                    class: class.ok_or_else(|| {
                        SpnError::Input(format!(
                            "{origin}: classification needs a per-cloud label or a constant label column"
                        ))
                    })?,
                    parts: per_point,
                },
                Task::Segment => Sample {
                    cloud: cloud.clone(),
                    class: if part_sets.is_some() { class.unwrap_or(0) } else { 0 },
                    parts: Some(per_point.ok_or_else(|| {
                        SpnError::Input(format!("{origin}: segmentation needs per-point labels"))
                    })?),
                },
            };
            samples.push(sample);
        }
        let part_sets = match part_sets {
            Some(s) => s,
            None if task == Task::Segment => {
                let max = samples
                    .iter()
                    .flat_map(|s| s.parts.iter().flatten())
                    .max()
                    .copied()
                    .unwrap_or(0);
                vec![(0..=max).collect()]
            }
            None => Vec::new(),
        };
        let n_classes = match task {
            Task::Segment => part_sets.len(),
            Task::Classify => samples.iter().map(|s| s.class + 1).max().unwrap_or(0),
        };
        Ok(Self {
            samples,
            n_classes,
            part_sets,
        })
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            n_classes: self.n_classes,
            part_sets: self.part_sets.clone(),
        }
    }
}

/// Stratified split: `round(frac · count)` samples of each class go to the
/// held-out set, chosen by a seeded shuffle. Order within each side follows
/// the original order.
pub fn split_holdout(ds: &Dataset, frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&frac) {
        return Err(SpnError::Config(format!(
            "held-out fraction must lie in [0, 1), got {frac}"
        )));
    }
    let mut held = vec![false; ds.len()];
    for class in 0..ds.n_classes.max(1) {
        let mut members: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.samples[i].class == class)
            .collect();
        members.shuffle(&mut substream(seed, Stream::Split, class as u64));
        let take = (frac * members.len() as f64).round() as usize;
        members[..take].iter().for_each(|&i| held[i] = true);
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| held[i]);
    Ok((ds.subset(&train), ds.subset(&test)))
}
