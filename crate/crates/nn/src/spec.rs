//! Architecture descriptions: layer kinds, shape inference and a line-based
//! text form that is embedded in weight files and manifests.

use std::fmt;
use std::str::FromStr;

use crate::error::{NnError, Result};

/// Per-sample tensor shape: `[features]` or `[channels, height, width]`.
pub type Shape = Vec<usize>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Softmax,
}

impl Activation {
    /// The slope used by the CsiNet lineage.
    pub const LEAKY_SLOPE: f64 = 0.3;

    pub fn leaky() -> Self {
        Activation::LeakyRelu(Self::LEAKY_SLOPE)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu(s) => write!(f, "leaky_relu:{s}"),
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Softmax => write!(f, "softmax"),
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            "leaky_relu" => Ok(Activation::leaky()),
            other => match other.strip_prefix("leaky_relu:") {
                Some(slope) => slope
                    .parse()
                    .map(Activation::LeakyRelu)
                    .map_err(|e| format!("bad leaky slope `{slope}`: {e}")),
                None => Err(format!("unknown activation `{other}`")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Dense { inputs: usize, outputs: usize },
    /// 3x3 kernel, stride 1, zero padding 1.
    Conv3x3 { in_channels: usize, out_channels: usize },
    /// Normalizes over the batch (and spatial positions for image tensors).
    BatchNorm { features: usize },
    Activation(Activation),
    Reshape { shape: Shape },
    /// `y = x + inner(x)`.
    Residual(Vec<LayerSpec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn dense(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        Self::new(name, LayerKind::Dense { inputs, outputs })
    }

    pub fn conv3x3(name: impl Into<String>, in_channels: usize, out_channels: usize) -> Self {
        Self::new(
            name,
            LayerKind::Conv3x3 {
                in_channels,
                out_channels,
            },
        )
    }

    pub fn batch_norm(name: impl Into<String>, features: usize) -> Self {
        Self::new(name, LayerKind::BatchNorm { features })
    }

    pub fn activation(name: impl Into<String>, act: Activation) -> Self {
        Self::new(name, LayerKind::Activation(act))
    }

    pub fn reshape(name: impl Into<String>, shape: Shape) -> Self {
        Self::new(name, LayerKind::Reshape { shape })
    }

    pub fn residual(name: impl Into<String>, inner: Vec<LayerSpec>) -> Self {
        Self::new(name, LayerKind::Residual(inner))
    }

    fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
        }
    }

    /// Trainable parameter count of this layer (including nested layers).
    pub fn param_count(&self) -> usize {
        match &self.kind {
            LayerKind::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerKind::Conv3x3 {
                in_channels,
                out_channels,
            } => 9 * in_channels * out_channels + out_channels,
            LayerKind::BatchNorm { features } => 2 * features,
            LayerKind::Activation(_) | LayerKind::Reshape { .. } => 0,
            LayerKind::Residual(inner) => inner.iter().map(LayerSpec::param_count).sum(),
        }
    }

    /// Non-trainable running statistics (BatchNorm mean and variance).
    pub fn running_count(&self) -> usize {
        match &self.kind {
            LayerKind::BatchNorm { features } => 2 * features,
            LayerKind::Residual(inner) => inner.iter().map(LayerSpec::running_count).sum(),
            _ => 0,
        }
    }

    /// Output shape for a given input shape, or a configuration error naming the layer.
    pub fn output_shape(&self, input: &[usize]) -> Result<Shape> {
        let err = |message: String| NnError::Shape {
            layer: self.name.clone(),
            message,
        };
        match &self.kind {
            LayerKind::Dense { inputs, outputs } => {
                if input.len() != 1 || input[0] != *inputs {
                    return Err(err(format!("dense expects [{inputs}], got {input:?}")));
                }
                Ok(vec![*outputs])
            }
            LayerKind::Conv3x3 {
                in_channels,
                out_channels,
            } => {
                if input.len() != 3 || input[0] != *in_channels {
                    return Err(err(format!(
                        "conv3x3 expects [{in_channels}, h, w], got {input:?}"
                    )));
                }
                Ok(vec![*out_channels, input[1], input[2]])
            }
            LayerKind::BatchNorm { features } => {
                if input.is_empty() || input[0] != *features {
                    return Err(err(format!(
                        "batch norm over {features} features, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerKind::Activation(_) => Ok(input.to_vec()),
            LayerKind::Reshape { shape } => {
                let from: usize = input.iter().product();
                let to: usize = shape.iter().product();
                if from != to {
                    return Err(err(format!("cannot reshape {input:?} into {shape:?}")));
                }
                Ok(shape.clone())
            }
            LayerKind::Residual(inner) => {
                let mut shape = input.to_vec();
                for layer in inner {
                    shape = layer.output_shape(&shape)?;
                }
                if shape != input {
                    return Err(err(format!(
                        "residual branch maps {input:?} to {shape:?}"
                    )));
                }
                Ok(shape)
            }
        }
    }
}

/// A layer sequence together with the per-sample input shape it accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = ModelSpec {
            input_shape,
            layers,
        };
        spec.output_shape()?;
        Ok(spec)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn running_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::running_count).sum()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape()
            .map(|s| s.iter().product())
            .unwrap_or(0)
    }

    /// Stable 64-bit fingerprint of the text form (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

fn join(dims: &[usize]) -> String {
    dims.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn write_layers(f: &mut fmt::Formatter<'_>, layers: &[LayerSpec], depth: usize) -> fmt::Result {
    let pad = "  ".repeat(depth);
    for layer in layers {
        let name = &layer.name;
        match &layer.kind {
            LayerKind::Dense { inputs, outputs } => {
                writeln!(f, "{pad}dense {name} {inputs} {outputs}")?
            }
            LayerKind::Conv3x3 {
                in_channels,
                out_channels,
            } => writeln!(f, "{pad}conv3x3 {name} {in_channels} {out_channels}")?,
            LayerKind::BatchNorm { features } => writeln!(f, "{pad}batchnorm {name} {features}")?,
            LayerKind::Activation(a) => writeln!(f, "{pad}activation {name} {a}")?,
            LayerKind::Reshape { shape } => writeln!(f, "{pad}reshape {name} {}", join(shape))?,
            LayerKind::Residual(inner) => {
                writeln!(f, "{pad}residual {name} begin")?;
                write_layers(f, inner, depth + 1)?;
                writeln!(f, "{pad}end")?;
            }
        }
    }
    Ok(())
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input {}", join(&self.input_shape))?;
        write_layers(f, &self.layers, 0)
    }
}

impl FromStr for ModelSpec {
    type Err = NnError;

    fn from_str(text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| NnError::SpecParse { line, message };
        let parse_dims = |line: usize, s: &str| -> Result<Shape> {
            s.split(',')
                .map(|d| {
                    d.trim()
                        .parse::<usize>()
                        .map_err(|e| perr(line, format!("bad dimension `{d}`: {e}")))
                })
                .collect()
        };
        let parse_usize = |line: usize, s: Option<&str>| -> Result<usize> {
            let s = s.ok_or_else(|| perr(line, "missing field".into()))?;
            s.parse()
                .map_err(|e| perr(line, format!("bad integer `{s}`: {e}")))
        };

        let mut input_shape = None;
        // Stack of (residual name, layers collected so far).
        let mut stack: Vec<(String, Vec<LayerSpec>)> = vec![(String::new(), Vec::new())];

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let keyword = parts.next().unwrap_or_default();
            if keyword == "input" {
                let dims = parts
                    .next()
                    .ok_or_else(|| perr(line_no, "missing input shape".into()))?;
                input_shape = Some(parse_dims(line_no, dims)?);
                continue;
            }
            if keyword == "end" {
                if stack.len() < 2 {
                    return Err(perr(line_no, "`end` without `residual`".into()));
                }
                let (name, inner) = stack.pop().expect("checked depth");
                stack
                    .last_mut()
                    .expect("root frame")
                    .1
                    .push(LayerSpec::residual(name, inner));
                continue;
            }
            let name = parts
                .next()
                .ok_or_else(|| perr(line_no, "missing layer name".into()))?
                .to_string();
            let layer = match keyword {
                "dense" => {
                    let i = parse_usize(line_no, parts.next())?;
                    let o = parse_usize(line_no, parts.next())?;
                    LayerSpec::dense(name, i, o)
                }
                "conv3x3" => {
                    let i = parse_usize(line_no, parts.next())?;
                    let o = parse_usize(line_no, parts.next())?;
                    LayerSpec::conv3x3(name, i, o)
                }
                "batchnorm" => LayerSpec::batch_norm(name, parse_usize(line_no, parts.next())?),
                "activation" => {
                    let a = parts
                        .next()
                        .ok_or_else(|| perr(line_no, "missing activation".into()))?;
                    LayerSpec::activation(name, a.parse().map_err(|m| perr(line_no, m))?)
                }
                "reshape" => {
                    let dims = parts
                        .next()
                        .ok_or_else(|| perr(line_no, "missing shape".into()))?;
                    LayerSpec::reshape(name, parse_dims(line_no, dims)?)
                }
                "residual" => {
                    stack.push((name, Vec::new()));
                    continue;
                }
                other => return Err(perr(line_no, format!("unknown layer kind `{other}`"))),
            };
            stack.last_mut().expect("root frame").1.push(layer);
        }
        if stack.len() != 1 {
            return Err(perr(0, "unterminated residual block".into()));
        }
        let input_shape = input_shape.ok_or_else(|| perr(0, "missing `input` line".into()))?;
        let layers = stack.pop().expect("root frame").1;
        ModelSpec::new(input_shape, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refine_like() -> ModelSpec {
        ModelSpec::new(
            vec![2, 4, 4],
            vec![
                LayerSpec::residual(
                    "block",
                    vec![
                        LayerSpec::conv3x3("c1", 2, 3),
                        LayerSpec::batch_norm("bn1", 3),
                        LayerSpec::activation("a1", Activation::leaky()),
                        LayerSpec::conv3x3("c2", 3, 2),
                    ],
                ),
                LayerSpec::activation("out", Activation::Relu),
                LayerSpec::reshape("flat", vec![32]),
                LayerSpec::dense("fc", 32, 5),
                LayerSpec::activation("sm", Activation::Softmax),
            ],
        )
        .unwrap()
    }

    #[test]
    fn text_form_round_trips() {
        let spec = refine_like();
        let text = spec.to_string();
        let back: ModelSpec = text.parse().unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.fingerprint(), back.fingerprint());
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let err = ModelSpec::new(
            vec![8],
            vec![
                LayerSpec::dense("first", 8, 4),
                LayerSpec::dense("second", 5, 2),
            ],
        )
        .unwrap_err();
        match err {
            NnError::Shape { layer, .. } => assert_eq!(layer, "second"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn residual_must_preserve_shape() {
        let err = ModelSpec::new(
            vec![2, 4, 4],
            vec![LayerSpec::residual(
                "r",
                vec![LayerSpec::conv3x3("c", 2, 3)],
            )],
        )
        .unwrap_err();
        assert!(matches!(err, NnError::Shape { ref layer, .. } if layer == "r"));
    }

    #[test]
    fn counts() {
        let spec = refine_like();
        // c1: 9*2*3+3, bn1: 6, c2: 9*3*2+2, fc: 32*5+5
        assert_eq!(spec.param_count(), 57 + 6 + 56 + 165);
        assert_eq!(spec.running_count(), 6);
    }
}
