use serde::{Deserialize, Serialize};

use super::NeighborIndex;
use crate::error::{Result, SpnError};
use crate::tensor::{Tape, Var};

/// Per-edge feature layout for center `x_i` and neighbor `x_j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeFeatureVariant {
    /// `(x_i, x_i − x_j)`
    #[serde(rename = "a")]
    CenterRelative,
    /// `(x_i, x_j)`
    #[serde(rename = "b")]
    CenterNeighbor,
    /// `(x_i, x_j, x_i − x_j)`
    #[serde(rename = "c")]
    CenterNeighborRelative,
}

impl EdgeFeatureVariant {
    pub fn channels(self, f: usize) -> usize {
        match self {
            EdgeFeatureVariant::CenterRelative | EdgeFeatureVariant::CenterNeighbor => 2 * f,
            EdgeFeatureVariant::CenterNeighborRelative => 3 * f,
        }
    }

    pub fn letter(self) -> char {
        match self {
            EdgeFeatureVariant::CenterRelative => 'a',
            EdgeFeatureVariant::CenterNeighbor => 'b',
            EdgeFeatureVariant::CenterNeighborRelative => 'c',
        }
    }

    pub fn from_letter(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(EdgeFeatureVariant::CenterRelative),
            "b" => Ok(EdgeFeatureVariant::CenterNeighbor),
            "c" => Ok(EdgeFeatureVariant::CenterNeighborRelative),
            other => Err(SpnError::Config(format!(
                "unknown edge variant {other:?}, expected a, b or c"
            ))),
        }
    }
}

/// `N × F` features and a neighbor table → `rows × K × C` edge features.
/// Gradients flow to both center and neighbor rows of `features`.
pub fn build_edge_features(
    tape: &mut Tape,
    features: Var,
    neighbors: &NeighborIndex,
    variant: EdgeFeatureVariant,
) -> Result<Var> {
    tape.edge_features(features, &neighbors.centers, &neighbors.indices, variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::NeighborMethod;
    use crate::tensor::FeatureTensor;

    fn index(centers: Vec<usize>, indices: Vec<usize>) -> NeighborIndex {
        let k = indices.len() / centers.len();
        NeighborIndex {
            indices,
            centers,
            k,
            method: NeighborMethod::Knn,
        }
    }

    #[test]
    fn center_relative_definition() {
        let mut tape = Tape::new();
        let x =
            tape.constant(FeatureTensor::new(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
        let e = build_edge_features(
            &mut tape,
            x,
            &index(vec![0], vec![1]),
            EdgeFeatureVariant::CenterRelative,
        )
        .unwrap();
        assert_eq!(tape.value(e).values(), &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0]);
        assert_eq!(tape.shape(e), &[1, 1, 6]);
    }

    #[test]
    fn coincident_neighbor_zero_relative_half() {
        let mut tape = Tape::new();
        let x =
            tape.constant(FeatureTensor::new(&[2, 3], vec![0.3, 0.2, 0.1, 0.3, 0.2, 0.1]).unwrap());
        let e = build_edge_features(
            &mut tape,
            x,
            &index(vec![0], vec![1]),
            EdgeFeatureVariant::CenterRelative,
        )
        .unwrap();
        assert!(tape.value(e).values()[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn variant_layouts() {
        let mut tape = Tape::new();
        let x = tape
            .constant(FeatureTensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 5.0, 7.0, 11.0]).unwrap());
        let nb = index(vec![0], vec![1]);
        let b = build_edge_features(&mut tape, x, &nb, EdgeFeatureVariant::CenterNeighbor).unwrap();
        assert_eq!(tape.value(b).values(), &[1.0, 2.0, 3.0, 5.0, 7.0, 11.0]);
        let c = build_edge_features(
            &mut tape,
            x,
            &nb,
            EdgeFeatureVariant::CenterNeighborRelative,
        )
        .unwrap();
        assert_eq!(
            tape.value(c).values(),
            &[1.0, 2.0, 3.0, 5.0, 7.0, 11.0, -4.0, -5.0, -8.0]
        );
    }

    #[test]
    fn letters_round_trip() {
        for v in [
            EdgeFeatureVariant::CenterRelative,
            EdgeFeatureVariant::CenterNeighbor,
            EdgeFeatureVariant::CenterNeighborRelative,
        ] {
            assert_eq!(
                EdgeFeatureVariant::from_letter(&v.letter().to_string()).unwrap(),
                v
            );
        }
        assert!(EdgeFeatureVariant::from_letter("d").is_err());
    }
}
