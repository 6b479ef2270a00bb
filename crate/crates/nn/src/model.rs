//! A model is a validated [`ModelSpec`] plus its parameters and batch-norm
//! running statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::layers::{self, BnCache, ConvDims, BN_MOMENTUM};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::spec::{Activation, LayerKind, LayerSpec, ModelSpec, Shape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; records what backward needs.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Debug, Clone)]
enum Op {
    Dense { inputs: usize, outputs: usize },
    Conv(ConvDims),
    BatchNorm { features: usize, spatial: usize },
    Act { act: Activation, sample_len: usize },
    Reshape,
    Residual(Vec<Node>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    out_shape: Shape,
    param_offset: usize,
    running_offset: usize,
}

fn plan_layers(
    layers: &[LayerSpec],
    input: &[usize],
    param_offset: &mut usize,
    running_offset: &mut usize,
) -> Result<Vec<Node>> {
    let mut shape = input.to_vec();
    let mut nodes = Vec::with_capacity(layers.len());
    for layer in layers {
        let out_shape = layer.output_shape(&shape)?;
        let (p0, r0) = (*param_offset, *running_offset);
        let op = match &layer.kind {
            LayerKind::Dense { inputs, outputs } => Op::Dense {
                inputs: *inputs,
                outputs: *outputs,
            },
            LayerKind::Conv3x3 {
                in_channels,
                out_channels,
            } => Op::Conv(ConvDims {
                in_channels: *in_channels,
                out_channels: *out_channels,
                h: shape[1],
                w: shape[2],
            }),
            LayerKind::BatchNorm { features } => Op::BatchNorm {
                features: *features,
                spatial: shape[1..].iter().product(),
            },
            LayerKind::Activation(act) => Op::Act {
                act: *act,
                sample_len: shape.iter().product(),
            },
            LayerKind::Reshape { .. } => Op::Reshape,
            LayerKind::Residual(inner) => Op::Residual(plan_layers(
                inner,
                &shape,
                param_offset,
                running_offset,
            )?),
        };
        if !matches!(op, Op::Residual(_)) {
            *param_offset += layer.param_count();
            *running_offset += layer.running_count();
        }
        nodes.push(Node {
            op,
            out_shape: out_shape.clone(),
            param_offset: p0,
            running_offset: r0,
        });
        shape = out_shape;
    }
    Ok(nodes)
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Input(Vec<T>),
    Bn(BnCache<T>),
    Output(Vec<T>),
    Empty,
    Residual(Vec<LayerCache<T>>),
}

/// Activations recorded by a forward pass; consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Cache<T> {
    mode: Mode,
    fingerprint: u64,
    batch: usize,
    layers: Vec<LayerCache<T>>,
}

impl<T> Cache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    nodes: Vec<Node>,
    params: ParamStore<T>,
    running: Vec<T>,
    fingerprint: u64,
}

impl<T: Scalar> Model<T> {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale, zero offset.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views = model.params.views().to_vec();
        let values = model.params.values_mut();
        for view in &views {
            let slice = &mut values[view.range()];
            if view.name.ends_with(".weight") {
                let (fan_in, fan_out) = match view.shape.as_slice() {
                    [o, i] => (*i, *o),
                    [o, i, kh, kw] => (i * kh * kw, o * kh * kw),
                    _ => unreachable!("weights are 2-D or 4-D"),
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in slice.iter_mut() {
                    *v = T::from_f64_lossy(rng.gen_range(-limit..limit));
                }
            } else if view.name.ends_with(".gamma") {
                slice.fill(T::one());
            }
        }
        Ok(model)
    }

    /// All parameters zero, running statistics at their initial values.
    pub fn zeroed(spec: ModelSpec) -> Result<Self> {
        let params = ParamStore::zeros(&spec);
        Self::from_parts(spec, params, None)
    }

    pub fn from_parts(
        spec: ModelSpec,
        params: ParamStore<T>,
        running: Option<Vec<T>>,
    ) -> Result<Self> {
        let (mut p, mut r) = (0, 0);
        let nodes = plan_layers(&spec.layers, &spec.input_shape, &mut p, &mut r)?;
        if params.len() != p {
            return Err(NnError::ParamLength {
                expected: p,
                got: params.len(),
            });
        }
        let running = match running {
            Some(values) if values.len() != r => {
                return Err(NnError::ParamLength {
                    expected: r,
                    got: values.len(),
                })
            }
            Some(values) => values,
            None => initial_running(&nodes, r),
        };
        let fingerprint = spec.fingerprint();
        Ok(Model {
            spec,
            nodes,
            params,
            running,
            fingerprint,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Batch-norm running statistics, `[mean, var]` per layer in layer order.
    pub fn running_stats(&self) -> &[T] {
        &self.running
    }

    pub fn set_running_stats(&mut self, values: Vec<T>) -> Result<()> {
        if values.len() != self.running.len() {
            return Err(NnError::ParamLength {
                expected: self.running.len(),
                got: values.len(),
            });
        }
        self.running = values;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            nodes: self.nodes.clone(),
            params: self.params.cast(),
            running: self
                .running
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
            fingerprint: self.fingerprint,
        }
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Cache<T>)> {
        if input.shape != self.spec.input_shape {
            return Err(NnError::InputShape {
                expected: self.spec.input_shape.clone(),
                got: input.shape.clone(),
            });
        }
        let batch = input.batch;
        let (out, layers) = forward_nodes(
            &self.nodes,
            self.params.values(),
            &self.running,
            input.data.clone(),
            batch,
            mode,
        );
        let shape = self.nodes.last().map_or_else(
            || self.spec.input_shape.clone(),
            |n| n.out_shape.clone(),
        );
        Ok((
            Tensor::new(out, batch, shape),
            Cache {
                mode,
                fingerprint: self.fingerprint,
                batch,
                layers,
            },
        ))
    }

    /// Eval-mode forward pass without retaining activations.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(input, Mode::Eval).map(|(out, _)| out)
    }

    /// Folds the batch statistics of a train-mode cache into the running averages.
    pub fn commit_batch_stats(&mut self, cache: &Cache<T>) -> Result<()> {
        if cache.fingerprint != self.fingerprint {
            return Err(NnError::ForeignCache);
        }
        if cache.mode != Mode::Train {
            return Ok(());
        }
        let count = cache.batch;
        commit_nodes(&self.nodes, &cache.layers, &mut self.running, count);
        Ok(())
    }

    /// Reverse-mode gradients of `sum(grad_output * output)`.
    ///
    /// Returns the parameter gradients and the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: Cache<T>,
        grad_output: &Tensor<T>,
    ) -> Result<(ParamStore<T>, Tensor<T>)> {
        let mut grads = ParamStore::zeros(&self.spec);
        let dx = self.backward_partial(cache, self.nodes.len(), grad_output, grads.values_mut(), true)?;
        Ok((grads, dx.expect("input gradient requested")))
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward_into(
        &self,
        cache: Cache<T>,
        grad_output: &Tensor<T>,
        grads: &mut [T],
    ) -> Result<Tensor<T>> {
        self.backward_partial(cache, self.nodes.len(), grad_output, grads, true)
            .map(|dx| dx.expect("input gradient requested"))
    }

    /// Backpropagates from the output of layer `upto - 1` down to the input.
    ///
    /// `grad` is the gradient with respect to that intermediate output; layers at
    /// index `upto` and above are skipped. Used for fused softmax/cross-entropy.
    pub fn backward_partial(
        &self,
        cache: Cache<T>,
        upto: usize,
        grad: &Tensor<T>,
        grads: &mut [T],
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        if cache.fingerprint != self.fingerprint {
            return Err(NnError::ForeignCache);
        }
        if cache.mode != Mode::Train {
            return Err(NnError::EvalCache);
        }
        if grads.len() != self.params.len() {
            return Err(NnError::ParamLength {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let upto = upto.min(self.nodes.len());
        let expected_shape = if upto == 0 {
            self.spec.input_shape.clone()
        } else {
            self.nodes[upto - 1].out_shape.clone()
        };
        if grad.shape != expected_shape || grad.batch != cache.batch {
            return Err(NnError::InputShape {
                expected: expected_shape,
                got: grad.shape.clone(),
            });
        }
        let dx = backward_nodes(
            &self.nodes[..upto],
            &cache.layers[..upto],
            self.params.values(),
            grads,
            grad.data.clone(),
            cache.batch,
            need_input_grad,
        );
        Ok(dx.map(|d| Tensor::new(d, cache.batch, self.spec.input_shape.clone())))
    }
}

fn initial_running<T: Scalar>(nodes: &[Node], len: usize) -> Vec<T> {
    let mut running = vec![T::zero(); len];
    fn fill<T: Scalar>(nodes: &[Node], running: &mut [T]) {
        for node in nodes {
            match &node.op {
                Op::BatchNorm { features, .. } => {
                    let var = node.running_offset + features;
                    running[var..var + features].fill(T::one());
                }
                Op::Residual(inner) => fill(inner, running),
                _ => {}
            }
        }
    }
    fill(nodes, &mut running);
    running
}

fn forward_nodes<T: Scalar>(
    nodes: &[Node],
    params: &[T],
    running: &[T],
    mut x: Vec<T>,
    batch: usize,
    mode: Mode,
) -> (Vec<T>, Vec<LayerCache<T>>) {
    let mut caches = Vec::with_capacity(nodes.len());
    let train = mode == Mode::Train;
    for node in nodes {
        let p = node.param_offset;
        let (y, cache) = match &node.op {
            Op::Dense { inputs, outputs } => {
                let w = &params[p..p + inputs * outputs];
                let b = &params[p + inputs * outputs..p + inputs * outputs + outputs];
                let y = layers::dense_forward(&x, batch, *inputs, *outputs, w, b);
                (y, if train { LayerCache::Input(x) } else { LayerCache::Empty })
            }
            Op::Conv(d) => {
                let wl = 9 * d.in_channels * d.out_channels;
                let y = layers::conv_forward(
                    &x,
                    batch,
                    *d,
                    &params[p..p + wl],
                    &params[p + wl..p + wl + d.out_channels],
                );
                (y, if train { LayerCache::Input(x) } else { LayerCache::Empty })
            }
            Op::BatchNorm { features, spatial } => {
                let f = *features;
                let gamma = &params[p..p + f];
                let beta = &params[p + f..p + 2 * f];
                if train {
                    let (y, c) = layers::bn_forward_train(&x, batch, f, *spatial, gamma, beta);
                    (y, LayerCache::Bn(c))
                } else {
                    let r = node.running_offset;
                    let y = layers::bn_forward_eval(
                        &x,
                        batch,
                        f,
                        *spatial,
                        gamma,
                        beta,
                        &running[r..r + f],
                        &running[r + f..r + 2 * f],
                    );
                    (y, LayerCache::Empty)
                }
            }
            Op::Act { act, sample_len } => {
                let y = layers::activation_forward(*act, &x, *sample_len);
                let cache = if train {
                    LayerCache::Output(y.clone())
                } else {
                    LayerCache::Empty
                };
                (y, cache)
            }
            Op::Reshape => (x, LayerCache::Empty),
            Op::Residual(inner) => {
                let (mut y, inner_caches) =
                    forward_nodes(inner, params, running, x.clone(), batch, mode);
                for (o, &i) in y.iter_mut().zip(&x) {
                    *o += i;
                }
                (y, LayerCache::Residual(inner_caches))
            }
        };
        caches.push(cache);
        x = y;
    }
    (x, caches)
}

fn commit_nodes<T: Scalar>(nodes: &[Node], caches: &[LayerCache<T>], running: &mut [T], batch: usize) {
    let momentum = T::from_f64_lossy(BN_MOMENTUM);
    for (node, cache) in nodes.iter().zip(caches) {
        match (&node.op, cache) {
            (Op::BatchNorm { features, spatial }, LayerCache::Bn(c)) => {
                let count = batch * spatial;
                // Unbiased variance for the running estimate.
                let correction = if count > 1 {
                    T::from_f64_lossy(count as f64 / (count - 1) as f64)
                } else {
                    T::one()
                };
                let r = node.running_offset;
                for f in 0..*features {
                    let m = &mut running[r + f];
                    *m = momentum * *m + (T::one() - momentum) * c.mean[f];
                    let v = &mut running[r + features + f];
                    *v = momentum * *v + (T::one() - momentum) * c.var[f] * correction;
                }
            }
            (Op::Residual(inner), LayerCache::Residual(inner_caches)) => {
                commit_nodes(inner, inner_caches, running, batch)
            }
            _ => {}
        }
    }
}

fn backward_nodes<T: Scalar>(
    nodes: &[Node],
    caches: &[LayerCache<T>],
    params: &[T],
    grads: &mut [T],
    mut dy: Vec<T>,
    batch: usize,
    need_input_grad: bool,
) -> Option<Vec<T>> {
    for (idx, (node, cache)) in nodes.iter().zip(caches).enumerate().rev() {
        let need_dx = need_input_grad || idx > 0;
        let p = node.param_offset;
        let dx = match (&node.op, cache) {
            (Op::Dense { inputs, outputs }, LayerCache::Input(x)) => {
                let (i, o) = (*inputs, *outputs);
                let (gw, gb) = grads[p..p + i * o + o].split_at_mut(i * o);
                layers::dense_backward(x, &dy, batch, i, o, &params[p..p + i * o], gw, gb, need_dx)
            }
            (Op::Conv(d), LayerCache::Input(x)) => {
                let wl = 9 * d.in_channels * d.out_channels;
                let (gw, gb) = grads[p..p + wl + d.out_channels].split_at_mut(wl);
                layers::conv_backward(x, &dy, batch, *d, &params[p..p + wl], gw, gb, need_dx)
            }
            (Op::BatchNorm { features, spatial }, LayerCache::Bn(c)) => {
                let f = *features;
                let (gg, gb) = grads[p..p + 2 * f].split_at_mut(f);
                layers::bn_backward(&dy, c, batch, f, *spatial, &params[p..p + f], gg, gb, need_dx)
            }
            (Op::Act { act, sample_len }, LayerCache::Output(y)) => {
                need_dx.then(|| layers::activation_backward(*act, y, &dy, *sample_len))
            }
            (Op::Reshape, _) => Some(dy),
            (Op::Residual(inner), LayerCache::Residual(inner_caches)) => {
                let branch = backward_nodes(inner, inner_caches, params, grads, dy.clone(), batch, true)
                    .expect("branch input gradient");
                for (d, b) in dy.iter_mut().zip(branch) {
                    *d += b;
                }
                Some(dy)
            }
            _ => unreachable!("train-mode cache matches the plan"),
        };
        match dx {
            Some(d) => dy = d,
            None => return None,
        }
    }
    Some(dy)
}
