use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::EncodingResult;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// One or two distinct, ascending 1-based layer indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SelectionRepr", into = "Vec<usize>")]
pub struct LayerSelection(Vec<usize>);

/// Accepts `[2, 4]` as well as `"2+4"` in configuration files.
#[derive(Deserialize)]
#[serde(untagged)]
enum SelectionRepr {
    List(Vec<usize>),
    Text(String),
}

impl LayerSelection {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() || indices.len() > 2 {
            return Err(Error::Config(format!("layer selection needs 1 or 2 indices, got {}", indices.len())));
        }
        if indices.contains(&0) {
            return Err(Error::Config("layer indices are 1-based".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("layer indices {indices:?} must be distinct and ascending")));
        }
        Ok(Self(indices))
    }

    /// Middle and last layer: `(⌈N/2⌉, N)`, or just `(1,)` for a one-layer encoder.
    pub fn middle_and_last(num_layers: usize) -> Self {
        let mid = num_layers.div_ceil(2);
        if mid == num_layers {
            Self(vec![num_layers])
        } else {
            Self(vec![mid, num_layers])
        }
    }

    pub fn last(num_layers: usize) -> Self {
        Self(vec![num_layers])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_against(&self, num_layers: usize) -> Result<()> {
        match self.0.iter().find(|&&i| i > num_layers) {
            Some(i) => Err(Error::Config(format!("layer {i} exceeds encoder depth {num_layers}"))),
            None => Ok(()),
        }
    }
}

impl TryFrom<SelectionRepr> for LayerSelection {
    type Error = Error;

    fn try_from(v: SelectionRepr) -> Result<Self> {
        match v {
            SelectionRepr::List(v) => Self::new(v),
            SelectionRepr::Text(s) => s.parse(),
        }
    }
}

impl From<LayerSelection> for Vec<usize> {
    fn from(s: LayerSelection) -> Self {
        s.0
    }
}

impl fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for LayerSelection {
    type Err = Error;

    /// Parses `"4"`, `"2+4"` or `"2,4"`.
    fn from_str(s: &str) -> Result<Self> {
        let idx = s
            .split(['+', ','])
            .map(|p| p.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad layer index {p:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(idx)
    }
}

/// The selected layers' `L × d` outputs, in selection order.
pub fn stack_layer_outputs(result: &EncodingResult, selection: &LayerSelection) -> Result<Vec<Tensor>> {
    selection
        .indices()
        .iter()
        .map(|&i| {
            result
                .layer(i)
                .cloned()
                .ok_or_else(|| Error::Access(format!("layer {i} is not available in this encoding")))
        })
        .collect()
}

/// Channel concatenation of a stack: `k` slices of `L × d` become `L × k·d`.
pub fn flatten_stack(stack: &[Tensor]) -> Tensor {
    let refs: Vec<&Tensor> = stack.iter().collect();
    Tensor::concat_cols(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(layers: usize, l: usize, d: usize) -> EncodingResult {
        let layer_outputs = (0..layers)
            .map(|k| Tensor::from_vec(l, d, (0..l * d).map(|i| (k * 10_000 + i) as f32).collect()))
            .collect();
        EncodingResult { layer_outputs, token_ids: vec![0; l] }
    }

    #[test]
    fn two_layer_stack_shapes() {
        let r = result(4, 7, 64);
        let sel = LayerSelection::new(vec![2, 4]).unwrap();
        let stack = stack_layer_outputs(&r, &sel).unwrap();
        assert_eq!(stack.len(), 2);
        assert!(stack.iter().all(|t| t.shape() == (7, 64)));
        assert_eq!(flatten_stack(&stack).shape(), (7, 128));
    }

    #[test]
    fn single_selection_is_verbatim() {
        let r = result(4, 3, 8);
        let stack = stack_layer_outputs(&r, &LayerSelection::new(vec![4]).unwrap()).unwrap();
        assert_eq!(&stack[0], r.layer(4).unwrap());
        assert_eq!(flatten_stack(&stack), *r.layer(4).unwrap());
    }

    #[test]
    fn order_and_bounds_are_validated() {
        assert!(LayerSelection::new(vec![2, 1]).is_err());
        assert!(LayerSelection::new(vec![2, 2]).is_err());
        assert!(LayerSelection::new(vec![1, 2, 3]).is_err());
        assert!(LayerSelection::new(vec![0]).is_err());
        let r = result(2, 3, 4);
        let sel = LayerSelection::new(vec![3]).unwrap();
        assert!(matches!(stack_layer_outputs(&r, &sel), Err(Error::Access(_))));
    }

    #[test]
    fn defaults_and_parsing() {
        assert_eq!(LayerSelection::middle_and_last(4).indices(), &[2, 4]);
        assert_eq!(LayerSelection::middle_and_last(3).indices(), &[2, 3]);
        assert_eq!(LayerSelection::middle_and_last(12).indices(), &[6, 12]);
        assert_eq!(LayerSelection::middle_and_last(1).indices(), &[1]);
        assert_eq!("2+4".parse::<LayerSelection>().unwrap().indices(), &[2, 4]);
        assert_eq!("3".parse::<LayerSelection>().unwrap().to_string(), "3");
    }

    #[test]
    fn flatten_is_a_lossless_rearrangement() {
        let r = result(4, 5, 6);
        let sel = LayerSelection::new(vec![1, 3]).unwrap();
        let flat = flatten_stack(&stack_layer_outputs(&r, &sel).unwrap());
        let mut seen: Vec<f32> = flat.data.clone();
        let mut expected: Vec<f32> =
            r.layer(1).unwrap().data.iter().chain(&r.layer(3).unwrap().data).copied().collect();
        seen.sort_by(f32::total_cmp);
        expected.sort_by(f32::total_cmp);
        assert_eq!(seen, expected);
        for t in 0..5 {
            assert_eq!(&flat.row(t)[..6], r.layer(1).unwrap().row(t));
            assert_eq!(&flat.row(t)[6..], r.layer(3).unwrap().row(t));
        }
    }
}
