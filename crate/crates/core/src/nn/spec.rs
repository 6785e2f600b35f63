use serde::{Deserialize, Serialize};

use super::NnError;

/// One stage of a feed-forward network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// Affine map `x ↦ W x + b` with `W` stored as `output × input`.
    Dense {
        input: usize,
        output: usize,
        bias: bool,
    },
    Relu,
    /// Elementwise logistic function.
    Sigmoid,
    /// Marks the output as class logits scored by softmax cross-entropy.
    /// Must be the last layer; it does not transform its input.
    SoftmaxXentHead,
}

/// Ordered layer list describing a dense network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    /// Checks dimension compatibility and returns the validated spec.
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        let spec = Self { layers };
        spec.validate()?;
        Ok(spec)
    }

    /// A ReLU MLP `dims[0] → dims[1] → … → dims[last]`, with biases and a
    /// softmax cross-entropy head when `classifier` is set.
    pub fn mlp(dims: &[usize], classifier: bool) -> Result<Self, NnError> {
        if dims.len() < 2 {
            return Err(NnError::InvalidSpec(
                "an MLP needs at least input and output sizes".into(),
            ));
        }
        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            layers.push(Layer::Dense {
                input: w[0],
                output: w[1],
                bias: true,
            });
            if i + 2 < dims.len() {
                layers.push(Layer::Relu);
            }
        }
        if classifier {
            layers.push(Layer::SoftmaxXentHead);
        }
        Self::new(layers)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let mut current: Option<usize> = None;
        let mut dense = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Dense { input, output, .. } => {
                    if input == 0 || output == 0 {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {i}: dense dimensions must be positive"
                        )));
                    }
                    if let Some(c) = current {
                        if c != input {
                            return Err(NnError::ShapeMismatch {
                                layer: i,
                                expected: c,
                                found: input,
                            });
                        }
                    }
                    current = Some(output);
                    dense += 1;
                }
                Layer::Relu | Layer::Sigmoid => {
                    if current.is_none() {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {i}: activation before any dense layer"
                        )));
                    }
                }
                Layer::SoftmaxXentHead => {
                    if i + 1 != self.layers.len() {
                        return Err(NnError::InvalidSpec(format!("layer {i}: softmax head must be last")));
                    }
                }
            }
        }
        if dense == 0 {
            return Err(NnError::InvalidSpec("no dense layer".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.dense_layers().next().map(|(_, i, _, _)| i).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.dense_layers().last().map(|(_, _, o, _)| o).unwrap_or(0)
    }

    /// `(layer index, input, output, has_bias)` for every dense layer.
    pub fn dense_layers(&self) -> impl Iterator<Item = (usize, usize, usize, bool)> + '_ {
        self.layers.iter().enumerate().filter_map(|(i, l)| match *l {
            Layer::Dense { input, output, bias } => Some((i, input, output, bias)),
            _ => None,
        })
    }

    /// Index of the first dense layer.
    pub fn first_dense(&self) -> usize {
        self.dense_layers().next().map(|(i, ..)| i).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_builder_interleaves_relu() {
        let s = NetworkSpec::mlp(&[4, 8, 3], true).unwrap();
        assert_eq!(s.layers.len(), 4);
        assert_eq!(s.layers[1], Layer::Relu);
        assert_eq!(s.input_dim(), 4);
        assert_eq!(s.output_dim(), 3);
    }

    #[test]
    fn rejects_incompatible_dims() {
        let err = NetworkSpec::new(vec![
            Layer::Dense {
                input: 2,
                output: 3,
                bias: true,
            },
            Layer::Dense {
                input: 4,
                output: 1,
                bias: true,
            },
        ])
        .unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { layer: 1, .. }));
        assert!(NetworkSpec::new(vec![Layer::Relu]).is_err());
        assert!(NetworkSpec::new(vec![]).is_err());
    }
}
