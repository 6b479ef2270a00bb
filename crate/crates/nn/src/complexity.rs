//! Parameter and FLOP accounting.
//!
//! One multiply-accumulate counts as one FLOP. Batch norm, activations and
//! residual additions cost one FLOP per element they touch.

use crate::error::Result;
use crate::spec::{LayerKind, LayerSpec, ModelSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

pub fn count_params(spec: &ModelSpec) -> u64 {
    spec.param_count() as u64
}

/// FLOPs for one sample.
pub fn count_flops(spec: &ModelSpec) -> Result<u64> {
    Ok(layer_costs(spec)?.iter().map(|c| c.flops).sum())
}

/// Per-layer costs, depth first; a residual block is reported as its inner
/// layers followed by a `NAME/add` row for the skip addition.
pub fn layer_costs(spec: &ModelSpec) -> Result<Vec<LayerCost>> {
    let mut out = Vec::new();
    costs(&spec.layers, &spec.input_shape, "", &mut out)?;
    Ok(out)
}

fn costs(layers: &[LayerSpec], input: &[usize], prefix: &str, out: &mut Vec<LayerCost>) -> Result<()> {
    let mut shape = input.to_vec();
    for layer in layers {
        let next = layer.output_shape(&shape)?;
        let name = format!("{prefix}{}", layer.name);
        let elements: usize = shape.iter().product();
        let flops = match &layer.kind {
            LayerKind::Dense { inputs, outputs } => inputs * outputs,
            LayerKind::Conv3x3 {
                in_channels,
                out_channels,
            } => 9 * in_channels * out_channels * shape[1] * shape[2],
            LayerKind::BatchNorm { .. } | LayerKind::Activation(_) => elements,
            LayerKind::Reshape { .. } => 0,
            LayerKind::Residual(inner) => {
                costs(inner, &shape, &format!("{name}/"), out)?;
                out.push(LayerCost {
                    name: format!("{name}/add"),
                    params: 0,
                    flops: elements as u64,
                });
                shape = next;
                continue;
            }
        };
        out.push(LayerCost {
            name,
            params: layer.param_count() as u64,
            flops: flops as u64,
        });
        shape = next;
    }
    Ok(())
}
