//! Layer kinds, shape inference, and per-layer forward/backward rules.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gsmax::{self, GroupSpec, GsmaxParams, MaxoutIndices};
use crate::nn::conv::{self, Padding};
use crate::rng::Prng;
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { units: usize },
    Conv2d { filters: usize, kernel: usize, stride: usize, padding: Padding },
    MaxPool2d { kernel: usize, stride: usize },
    Relu,
    /// Inverted dropout; `keep` is the keep probability.
    Dropout { keep: f64 },
    Gsmax { groups: GroupSpec, params: GsmaxParams },
    GroupMaxout { groups: GroupSpec },
    /// Marks the logits consumed by softmax cross-entropy. Identity in the
    /// forward pass; must be the last layer.
    SoftmaxXentHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Dense,
    Conv2d,
    MaxPool2d,
    Relu,
    Dropout,
    Gsmax,
    GroupMaxout,
    SoftmaxXentHead,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Dense,
        LayerKind::Conv2d,
        LayerKind::MaxPool2d,
        LayerKind::Relu,
        LayerKind::Dropout,
        LayerKind::Gsmax,
        LayerKind::GroupMaxout,
        LayerKind::SoftmaxXentHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::Relu => "relu",
            LayerKind::Dropout => "dropout",
            LayerKind::Gsmax => "gsmax",
            LayerKind::GroupMaxout => "group_maxout",
            LayerKind::SoftmaxXentHead => "softmax_xent_head",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::Conv2d { .. } => LayerKind::Conv2d,
            LayerSpec::MaxPool2d { .. } => LayerKind::MaxPool2d,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::Dropout { .. } => LayerKind::Dropout,
            LayerSpec::Gsmax { .. } => LayerKind::Gsmax,
            LayerSpec::GroupMaxout { .. } => LayerKind::GroupMaxout,
            LayerSpec::SoftmaxXentHead => LayerKind::SoftmaxXentHead,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let need_chw = |what: &str| -> Result<[usize; 3]> {
            match *input {
                [c, h, w] => Ok([c, h, w]),
                _ => Err(Error::shape(format!("{what} needs [channels, height, width] input, got {input:?}"))),
            }
        };
        let need_channels = |groups: &GroupSpec| -> Result<()> {
            match input.first() {
                Some(&c) if c == groups.channels() => Ok(()),
                _ => Err(Error::shape(format!(
                    "group spec over {} channels cannot take input {input:?}",
                    groups.channels()
                ))),
            }
        };
        match self {
            LayerSpec::Dense { units } => {
                if *units == 0 {
                    return Err(Error::shape("dense layer needs at least one unit"));
                }
                Ok(vec![*units])
            }
            LayerSpec::Conv2d { filters, kernel, stride, padding } => {
                let [_, h, w] = need_chw("conv2d")?;
                if *filters == 0 {
                    return Err(Error::shape("conv2d needs at least one filter"));
                }
                let (oh, _) = conv::conv_extent(h, *kernel, *stride, *padding)?;
                let (ow, _) = conv::conv_extent(w, *kernel, *stride, *padding)?;
                Ok(vec![*filters, oh, ow])
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                let [c, h, w] = need_chw("maxpool2d")?;
                let (oh, _) = conv::conv_extent(h, *kernel, *stride, Padding::Valid)?;
                let (ow, _) = conv::conv_extent(w, *kernel, *stride, Padding::Valid)?;
                Ok(vec![c, oh, ow])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Dropout { keep } => {
                if !(*keep > 0.0 && *keep <= 1.0) {
                    return Err(Error::config(format!("dropout keep probability {keep} outside (0, 1]")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Gsmax { groups, .. } => {
                need_channels(groups)?;
                Ok(input.to_vec())
            }
            LayerSpec::GroupMaxout { groups } => {
                need_channels(groups)?;
                let mut out = input.to_vec();
                out[0] = groups.group_count();
                Ok(out)
            }
            LayerSpec::SoftmaxXentHead => {
                if input.len() != 1 {
                    return Err(Error::shape(format!("softmax head needs flat logits, got {input:?}")));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Parameter shapes (weight first, then bias) for a per-sample input.
    pub fn param_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Dense { units } => vec![vec![input.iter().product(), *units], vec![*units]],
            LayerSpec::Conv2d { filters, kernel, .. } => {
                vec![vec![*filters, input[0], *kernel, *kernel], vec![*filters]]
            }
            _ => Vec::new(),
        }
    }
}

/// Per-layer state saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    None,
    PoolArgmax(Vec<usize>),
    /// Already scaled by `1/keep`.
    DropoutMask(Vec<f64>),
    Maxout(MaxoutIndices),
}

#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    params: Vec<Tensor>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

fn batched(batch: usize, per_sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(per_sample.len() + 1);
    s.push(batch);
    s.extend_from_slice(per_sample);
    s
}

impl Layer {
    /// Builds a layer with freshly initialized parameters: weights uniform in
    /// `±1/sqrt(fan_in)`, biases zero.
    pub fn new(spec: LayerSpec, input_shape: &[usize], rng: &mut Prng) -> Result<Self> {
        let output_shape = spec.output_shape(input_shape)?;
        let params = spec
            .param_shapes(input_shape)
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                if i == 0 {
                    let fan_in = shape[1..].iter().product::<usize>();
                    let fan_in = if matches!(spec, LayerSpec::Dense { .. }) { shape[0] } else { fan_in };
                    Tensor::scaled_uniform(&shape, fan_in, rng)
                } else {
                    Tensor::zeros(&shape)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Layer {
            spec,
            params,
            input_shape: input_shape.to_vec(),
            output_shape,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn kind(&self) -> LayerKind {
        self.spec.kind()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape(format!("parameter shapes do not match {} layer", self.kind())));
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() == 0 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(format!(
                "{} layer expects [batch, {:?}], got {:?}",
                self.kind(),
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass. `rng` is only consumed by dropout in training mode.
    pub fn forward(&self, x: &Tensor, training: bool, rng: &mut Prng) -> Result<(Tensor, Cache)> {
        self.check_input(x)?;
        let batch = x.rows();
        match &self.spec {
            LayerSpec::Dense { .. } => {
                let flat = x.clone().reshape(vec![batch, x.row_len()])?;
                let mut y = tensor::matmul(&flat, &self.params[0])?;
                let bias = self.params[1].data();
                let units = bias.len();
                for (i, v) in y.data_mut().iter_mut().enumerate() {
                    *v += bias[i % units];
                }
                Ok((y, Cache::None))
            }
            LayerSpec::Conv2d { stride, padding, .. } => {
                let mut y = conv::conv2d_forward(x, &self.params[0], *stride, *padding)?;
                let plane: usize = y.shape()[2..].iter().product();
                let bias = self.params[1].data();
                for (i, v) in y.data_mut().iter_mut().enumerate() {
                    *v += bias[(i / plane) % bias.len()];
                }
                Ok((y, Cache::None))
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                let (y, arg) = conv::maxpool2d_forward(x, *kernel, *stride)?;
                Ok((y, Cache::PoolArgmax(arg)))
            }
            LayerSpec::Relu => Ok((x.map(|v| v.max(0.0)), Cache::None)),
            LayerSpec::Dropout { keep } => {
                if !training || *keep == 1.0 {
                    return Ok((x.clone(), Cache::None));
                }
                let scale = 1.0 / keep;
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.bernoulli(*keep) { scale } else { 0.0 })
                    .collect();
                let data = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
                Ok((Tensor::new(x.shape().to_vec(), data)?, Cache::DropoutMask(mask)))
            }
            LayerSpec::Gsmax { groups, params } => Ok((gsmax::gsmax_forward(x, groups, params)?, Cache::None)),
            LayerSpec::GroupMaxout { groups } => {
                let (y, idx) = gsmax::group_maxout_forward(x, groups)?;
                Ok((y, Cache::Maxout(idx)))
            }
            LayerSpec::SoftmaxXentHead => Ok((x.clone(), Cache::None)),
        }
    }

    /// Returns the gradient with respect to the layer input and to each
    /// parameter, given the saved input `x`, output `y`, and forward cache.
    pub fn backward(&self, x: &Tensor, y: &Tensor, cache: &Cache, upstream: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.check_input(x)?;
        if upstream.shape() != y.shape() || y.shape()[1..] != self.output_shape[..] {
            return Err(Error::State(format!(
                "{} layer: upstream {:?} does not match recorded output {:?}",
                self.kind(),
                upstream.shape(),
                y.shape()
            )));
        }
        let batch = x.rows();
        let mismatch = || Error::State(format!("{} layer: forward cache does not match", self.kind()));
        match &self.spec {
            LayerSpec::Dense { .. } => {
                let flat = x.clone().reshape(vec![batch, x.row_len()])?;
                let gw = tensor::matmul(&tensor::transpose(&flat)?, upstream)?;
                let units = upstream.shape()[1];
                let mut gb = vec![0.0; units];
                for i in 0..batch {
                    for (b, u) in gb.iter_mut().zip(upstream.row(i)) {
                        *b += u;
                    }
                }
                let gx = tensor::matmul(upstream, &tensor::transpose(&self.params[0])?)?;
                Ok((gx.reshape(x.shape().to_vec())?, vec![gw, Tensor::new(vec![units], gb)?]))
            }
            LayerSpec::Conv2d { stride, padding, .. } => {
                let (gx, gw) = conv::conv2d_backward(x, &self.params[0], upstream, *stride, *padding)?;
                let o = upstream.shape()[1];
                let plane: usize = upstream.shape()[2..].iter().product();
                let mut gb = vec![0.0; o];
                for (i, u) in upstream.data().iter().enumerate() {
                    gb[(i / plane) % o] += u;
                }
                Ok((gx, vec![gw, Tensor::new(vec![o], gb)?]))
            }
            LayerSpec::MaxPool2d { .. } => {
                let Cache::PoolArgmax(arg) = cache else { return Err(mismatch()) };
                Ok((conv::maxpool2d_backward(upstream, arg, x.shape())?, Vec::new()))
            }
            LayerSpec::Relu => {
                let data = x.data().iter().zip(upstream.data()).map(|(&a, &u)| if a > 0.0 { u } else { 0.0 }).collect();
                Ok((Tensor::new(x.shape().to_vec(), data)?, Vec::new()))
            }
            LayerSpec::Dropout { .. } => match cache {
                Cache::None => Ok((upstream.clone(), Vec::new())),
                Cache::DropoutMask(mask) if mask.len() == upstream.len() => {
                    let data = upstream.data().iter().zip(mask).map(|(u, m)| u * m).collect();
                    Ok((Tensor::new(x.shape().to_vec(), data)?, Vec::new()))
                }
                _ => Err(mismatch()),
            },
            LayerSpec::Gsmax { groups, params } => Ok((gsmax::gsmax_backward(y, upstream, groups, params)?, Vec::new())),
            LayerSpec::GroupMaxout { groups } => {
                let Cache::Maxout(idx) = cache else { return Err(mismatch()) };
                Ok((gsmax::group_maxout_backward(upstream, idx, groups)?, Vec::new()))
            }
            LayerSpec::SoftmaxXentHead => Ok((upstream.clone(), Vec::new())),
        }
    }

    /// Batched input shape for `batch` samples.
    pub fn batched_input_shape(&self, batch: usize) -> Vec<usize> {
        batched(batch, &self.input_shape)
    }
}
