//! Flat parameter storage with named views.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::spec::{LayerKind, LayerSpec, ModelSpec};

/// A named window `[offset, offset + len)` into the flat parameter array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamView {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamView {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Views for every trainable tensor, in depth-first layer order.
///
/// Dense: `weight [out, in]`, `bias [out]`; Conv3x3: `weight [out, in, 3, 3]`,
/// `bias [out]`; BatchNorm: `gamma [f]`, `beta [f]`. Nested layers are named
/// `outer/inner`.
pub fn param_layout(spec: &ModelSpec) -> Vec<ParamView> {
    let mut views = Vec::new();
    let mut offset = 0;
    layout_layers(&spec.layers, "", &mut offset, &mut views);
    views
}

fn push_view(out: &mut Vec<ParamView>, name: String, shape: Vec<usize>, offset: &mut usize) {
    let len: usize = shape.iter().product();
    out.push(ParamView {
        name,
        offset: *offset,
        shape,
    });
    *offset += len;
}

fn layout_layers(layers: &[LayerSpec], prefix: &str, offset: &mut usize, out: &mut Vec<ParamView>) {
    for layer in layers {
        let name = format!("{prefix}{}", layer.name);
        match &layer.kind {
            LayerKind::Dense { inputs, outputs } => {
                push_view(out, format!("{name}.weight"), vec![*outputs, *inputs], offset);
                push_view(out, format!("{name}.bias"), vec![*outputs], offset);
            }
            LayerKind::Conv3x3 {
                in_channels,
                out_channels,
            } => {
                push_view(
                    out,
                    format!("{name}.weight"),
                    vec![*out_channels, *in_channels, 3, 3],
                    offset,
                );
                push_view(out, format!("{name}.bias"), vec![*out_channels], offset);
            }
            LayerKind::BatchNorm { features } => {
                push_view(out, format!("{name}.gamma"), vec![*features], offset);
                push_view(out, format!("{name}.beta"), vec![*features], offset);
            }
            LayerKind::Residual(inner) => layout_layers(inner, &format!("{name}/"), offset, out),
            LayerKind::Activation(_) | LayerKind::Reshape { .. } => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    values: Vec<T>,
    views: Vec<ParamView>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn zeros(spec: &ModelSpec) -> Self {
        ParamStore {
            values: vec![T::zero(); spec.param_count()],
            views: param_layout(spec),
        }
    }

    pub fn from_values(spec: &ModelSpec, values: Vec<T>) -> Result<Self> {
        let expected = spec.param_count();
        if values.len() != expected {
            return Err(NnError::ParamLength {
                expected,
                got: values.len(),
            });
        }
        Ok(ParamStore {
            values,
            views: param_layout(spec),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn views(&self) -> &[ParamView] {
        &self.views
    }

    pub fn view(&self, name: &str) -> Option<&[T]> {
        self.views
            .iter()
            .find(|v| v.name == name)
            .map(|v| &self.values[v.range()])
    }

    pub fn view_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.views.iter().find(|v| v.name == name)?.range();
        Some(&mut self.values[range])
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            values: self
                .values
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
            views: self.views.clone(),
        }
    }
}
