use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, pooled};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Conv3d,
    Relu,
    MaxPoolDropout,
    Flatten,
    Dense,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Conv3d => "conv3d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPoolDropout => "maxpool2x2_dropout",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "conv2d" => LayerKind::Conv2d,
            "conv3d" => LayerKind::Conv3d,
            "relu" => LayerKind::Relu,
            "maxpool2x2_dropout" => LayerKind::MaxPoolDropout,
            "flatten" => LayerKind::Flatten,
            "dense" => LayerKind::Dense,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// conv2d `[3, 3]`, conv3d `[t, 1, 1]`, empty otherwise.
    pub kernel: Vec<usize>,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub dropout_rate: f64,
}

impl LayerSpec {
    fn plain(kind: LayerKind) -> Self {
        Self {
            kind,
            kernel: Vec::new(),
            stride: 1,
            in_channels: 0,
            out_channels: 0,
            dropout_rate: 0.0,
        }
    }

    pub fn conv2d(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel: vec![3, 3],
            in_channels,
            out_channels,
            ..Self::plain(LayerKind::Conv2d)
        }
    }

    pub fn conv3d(time: usize, out_channels: usize) -> Self {
        Self {
            kernel: vec![time, 1, 1],
            in_channels: 1,
            out_channels,
            ..Self::plain(LayerKind::Conv3d)
        }
    }

    pub fn relu() -> Self {
        Self::plain(LayerKind::Relu)
    }

    pub fn pool(dropout_rate: f64) -> Self {
        Self {
            kernel: vec![2, 2],
            stride: 2,
            dropout_rate,
            ..Self::plain(LayerKind::MaxPoolDropout)
        }
    }

    pub fn flatten() -> Self {
        Self::plain(LayerKind::Flatten)
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Self {
            in_channels: inputs,
            out_channels: outputs,
            ..Self::plain(LayerKind::Dense)
        }
    }

    /// Shapes of this layer's parameters: kernel then bias.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self.kind {
            LayerKind::Conv2d => vec![
                vec![3, 3, self.in_channels, self.out_channels],
                vec![self.out_channels],
            ],
            LayerKind::Conv3d => vec![
                vec![self.kernel[0], 1, 1, 1, self.out_channels],
                vec![self.out_channels],
            ],
            LayerKind::Dense => vec![vec![self.in_channels, self.out_channels], vec![self.out_channels]],
            _ => Vec::new(),
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d => 9 * self.in_channels,
            LayerKind::Conv3d => self.kernel[0],
            LayerKind::Dense => self.in_channels,
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self.kind {
            LayerKind::Conv2d => match input {
                [h, w, c] if *c == self.in_channels && self.kernel == [3, 3] && self.stride == 1 => {
                    Ok(vec![*h, *w, self.out_channels])
                }
                _ => Err(format!("conv2d({} -> {}) cannot take {input:?}", self.in_channels, self.out_channels)),
            },
            LayerKind::Conv3d => match input {
                [t, h, w, 1] if self.kernel.first() == Some(t) && self.in_channels == 1 => {
                    Ok(vec![*h, *w, self.out_channels])
                }
                _ => Err(format!("conv3d over {:?} cannot take {input:?}", self.kernel)),
            },
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::MaxPoolDropout => match input {
                [h, w, c] => Ok(vec![pooled(*h), pooled(*w), *c]),
                _ => Err(format!("pool cannot take {input:?}")),
            },
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Dense => match input {
                [d] if *d == self.in_channels => Ok(vec![self.out_channels]),
                _ => Err(format!("dense({} -> {}) cannot take {input:?}", self.in_channels, self.out_channels)),
            },
        }
    }
}

/// Input shape (per sample, after reshaping the flat payload) plus layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Per-sample shape after every layer; errors name the first bad layer.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (layer, spec) in self.layers.iter().enumerate() {
            shape = spec
                .output_shape(&shape)
                .map_err(|message| Error::Shape { layer, message })?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn n_classes(&self) -> Result<usize> {
        match self.output_shapes()?.last() {
            Some(s) if s.len() == 1 => Ok(s[0]),
            other => Err(Error::Shape {
                layer: self.layers.len().saturating_sub(1),
                message: format!("network must end in a flat class vector, ends in {other:?}"),
            }),
        }
    }
}

/// A network's parameters: per layer, kernel then bias (empty when the
/// layer has none).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub spec: NetworkSpec,
    pub params: Vec<Vec<Tensor>>,
}

pub(crate) enum Cache {
    Conv2d(Tensor),
    Conv3d(Tensor),
    Relu(Tensor),
    Pool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
        mask: Option<Vec<f64>>,
    },
    Flatten(Vec<usize>),
    Dense(Tensor),
}

impl NetworkWeights {
    /// Uniform fan-in initialisation, `±sqrt(6 / fan_in)`, zero biases.
    /// Values are `f32`-representable.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.n_classes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .layers
            .iter()
            .map(|l| {
                let shapes = l.param_shapes();
                if shapes.is_empty() {
                    return Vec::new();
                }
                let limit = (6.0 / l.fan_in() as f64).sqrt();
                let n: usize = shapes[0].iter().product();
                let kernel = (0..n)
                    .map(|_| rng.gen_range(-limit..limit) as f32 as f64)
                    .collect();
                vec![
                    Tensor::from_vec(&shapes[0], kernel).expect("sized from shape"),
                    Tensor::zeros(&shapes[1]),
                ]
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            params,
        })
    }

    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.n_classes()?;
        let params = spec
            .layers
            .iter()
            .map(|l| l.param_shapes().iter().map(|s| Tensor::zeros(s)).collect())
            .collect();
        Ok(Self {
            spec: spec.clone(),
            params,
        })
    }

    /// Round every parameter to the nearest `f32`, the stored precision.
    pub fn quantize(&mut self) {
        for t in self.params.iter_mut().flatten() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes().expect("validated at construction")
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_len()
    }

    /// Batch tensor `[n, input_shape…]` from flat payloads.
    pub fn batch<'a>(&self, payloads: impl IntoIterator<Item = &'a [f32]>) -> Result<Tensor> {
        let len = self.input_len();
        let mut data = Vec::new();
        let mut n = 0;
        for p in payloads {
            if p.len() != len {
                return Err(Error::dims(
                    format!("input payload of {len} values"),
                    p.len(),
                ));
            }
            data.extend(p.iter().map(|&v| v as f64));
            n += 1;
        }
        let mut shape = vec![n];
        shape.extend(&self.spec.input_shape);
        Tensor::from_vec(&shape, data)
    }

    pub(crate) fn forward_cached(
        &self,
        x: Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
        keep_cache: bool,
    ) -> Result<(Tensor, Vec<Cache>)> {
        let n = x.shape()[0];
        let mut caches = Vec::new();
        let mut h = x;
        for (layer, (spec, p)) in self.spec.layers.iter().zip(&self.params).enumerate() {
            let tag = |e: Error| match e {
                Error::Shape { message, .. } => Error::Shape { layer, message },
                other => other,
            };
            let (next, cache) = match spec.kind {
                LayerKind::Conv2d => {
                    let y = layers::conv2d_forward(&h, &p[0], &p[1]).map_err(tag)?;
                    (y, Cache::Conv2d(h))
                }
                LayerKind::Conv3d => {
                    let y = layers::conv3d_early_fusion(&h, &p[0], &p[1]).map_err(tag)?;
                    (y, Cache::Conv3d(h))
                }
                LayerKind::Relu => {
                    let y = layers::relu_forward(&h);
                    (y, Cache::Relu(h))
                }
                LayerKind::MaxPoolDropout => {
                    let input_shape = h.shape().to_vec();
                    let (y, argmax) = layers::maxpool2x2_forward(&h).map_err(tag)?;
                    let (y, mask) = layers::dropout_forward(y, spec.dropout_rate, rng.as_deref_mut());
                    (
                        y,
                        Cache::Pool {
                            input_shape,
                            argmax,
                            mask,
                        },
                    )
                }
                LayerKind::Flatten => {
                    let shape = h.shape().to_vec();
                    let flat: usize = shape[1..].iter().product();
                    (h.reshape(&[n, flat]).map_err(tag)?, Cache::Flatten(shape))
                }
                LayerKind::Dense => {
                    let y = layers::dense_forward(&h, &p[0], &p[1]).map_err(tag)?;
                    (y, Cache::Dense(h))
                }
            };
            if keep_cache {
                caches.push(cache);
            }
            h = next;
        }
        Ok((h, caches))
    }

    /// Gradients of every parameter given the upstream gradient on the logits.
    pub(crate) fn backward(&self, caches: Vec<Cache>, dlogits: Tensor) -> Result<Vec<Vec<Tensor>>> {
        let mut grads: Vec<Vec<Tensor>> = vec![Vec::new(); self.params.len()];
        let mut g = dlogits;
        for (layer, cache) in caches.into_iter().enumerate().rev() {
            let p = &self.params[layer];
            let need_dx = layer > 0;
            let tag = |e: Error| match e {
                Error::Shape { message, .. } => Error::Shape { layer, message },
                other => other,
            };
            g = match cache {
                Cache::Conv2d(x) => {
                    let (dx, dk, db) = layers::conv2d_backward(&x, &p[0], &g, need_dx).map_err(tag)?;
                    grads[layer] = vec![dk, db];
                    dx.unwrap_or(x)
                }
                Cache::Conv3d(x) => {
                    let (dx, dk, db) = layers::conv3d_backward(&x, &p[0], &g, need_dx).map_err(tag)?;
                    grads[layer] = vec![dk, db];
                    dx.unwrap_or(x)
                }
                Cache::Relu(x) => layers::relu_backward(&x, &g),
                Cache::Pool {
                    input_shape,
                    argmax,
                    mask,
                } => {
                    let g = layers::dropout_backward(g, mask.as_deref());
                    layers::maxpool2x2_backward(&input_shape, &argmax, &g)
                }
                Cache::Flatten(shape) => g.reshape(&shape).map_err(tag)?,
                Cache::Dense(x) => {
                    let (dx, dw, db) = layers::dense_backward(&x, &p[0], &g, need_dx).map_err(tag)?;
                    grads[layer] = vec![dw, db];
                    dx.unwrap_or(x)
                }
            };
        }
        Ok(grads)
    }

    /// Inference logits for a batch.
    pub fn logits(&self, x: Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x, None, false)?.0)
    }

    /// Class probabilities for one flat payload; dropout is inactive.
    pub fn predict(&self, payload: &[f32]) -> Result<Vec<f64>> {
        let x = self.batch([payload])?;
        Ok(layers::softmax(&self.logits(x)?).into_data())
    }

    /// Probabilities for many payloads, evaluated in chunks.
    pub fn predict_many(&self, payloads: &[&[f32]]) -> Result<Vec<Vec<f64>>> {
        let k = self.n_classes();
        let mut out = Vec::with_capacity(payloads.len());
        for chunk in payloads.chunks(64) {
            let x = self.batch(chunk.iter().copied())?;
            let p = layers::softmax(&self.logits(x)?);
            out.extend(p.data().chunks(k).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    /// Per-sample shapes actually produced by pushing `x` through the layers.
    pub fn trace_shapes(&self, x: Tensor) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::new();
        let mut probe = self.clone();
        let layers = std::mem::take(&mut probe.spec.layers);
        let params = std::mem::take(&mut probe.params);
        let mut h = x;
        for (spec, p) in layers.into_iter().zip(params) {
            let one = NetworkWeights {
                spec: NetworkSpec {
                    input_shape: h.shape()[1..].to_vec(),
                    layers: vec![spec],
                },
                params: vec![p],
            };
            h = one.forward_cached(h, None, false)?.0;
            shapes.push(h.shape()[1..].to_vec());
        }
        Ok(shapes)
    }
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkSpec {
        NetworkSpec {
            input_shape: vec![4, 6, 1],
            layers: vec![
                LayerSpec::conv2d(1, 2),
                LayerSpec::relu(),
                LayerSpec::pool(0.0),
                LayerSpec::flatten(),
                LayerSpec::dense(12, 3),
            ],
        }
    }

    #[test]
    fn shapes_propagate() {
        let shapes = tiny().output_shapes().unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![3]);
        assert_eq!(shapes[2], vec![2, 3, 2]);
    }

    #[test]
    fn mismatched_dense_names_layer() {
        let mut spec = tiny();
        spec.layers[4] = LayerSpec::dense(10, 3);
        assert!(matches!(spec.output_shapes(), Err(Error::Shape { layer: 4, .. })));
    }

    #[test]
    fn predict_sums_to_one() {
        let w = NetworkWeights::init(&tiny(), 3).unwrap();
        let payload: Vec<f32> = (0..24).map(|i| i as f32 / 24.0).collect();
        let p = w.predict(&payload).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!(w.predict(&payload[..20]).is_err());
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let w = NetworkWeights::zeros(&tiny()).unwrap();
        let p = w.predict(&[0.5; 24]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn init_is_seeded() {
        let a = NetworkWeights::init(&tiny(), 5).unwrap();
        let b = NetworkWeights::init(&tiny(), 5).unwrap();
        let c = NetworkWeights::init(&tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
