//! Sequential network with a recorded forward trace and reverse-mode
//! backward pass.

use crate::error::{Error, Result};
use crate::nn::conv::Padding;
use crate::nn::layer::{Cache, Layer, LayerKind, LayerSpec};
use crate::nn::loss::softmax_xent_loss;
use crate::rng::Prng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    training: bool,
}

/// Everything the backward pass needs from one forward call.
/// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    activations: Vec<Tensor>,
    caches: Vec<Cache>,
}

impl Trace {
    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }

    pub fn output(&self) -> Option<&Tensor> {
        self.activations.last()
    }

    pub fn into_activations(self) -> Vec<Tensor> {
        self.activations
    }
}

/// Parameter gradients, one list per layer in network order.
pub type Gradients = Vec<Vec<Tensor>>;

/// Per-sample shapes after each layer, without allocating parameters.
pub fn infer_shapes(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input_shape.to_vec()];
    for (i, spec) in specs.iter().enumerate() {
        if spec.kind() == LayerKind::SoftmaxXentHead && i + 1 != specs.len() {
            return Err(Error::config(format!("softmax head at position {i} must be the last layer")));
        }
        let out = spec
            .output_shape(shapes.last().unwrap())
            .map_err(|e| Error::config(format!("layer {i} ({}): {e}", spec.kind())))?;
        shapes.push(out);
    }
    Ok(shapes)
}

/// Parses the compact architecture notation `8C192-4MP2-F2500-F10`:
/// `kCn` is a same-padded stride-1 convolution with kernel `k` and `n`
/// filters, `kMPs` is max pooling with kernel `k` and stride `s`, and `Fn`
/// is a dense layer with `n` units.
pub fn parse_arch_string(arch: &str) -> Result<Vec<LayerSpec>> {
    let bad = |tok: &str| Error::config(format!("bad architecture token {tok:?}"));
    let num = |s: &str, tok: &str| s.parse::<usize>().map_err(|_| bad(tok));
    arch.split('-')
        .map(|tok| {
            let tok = tok.trim();
            if let Some(n) = tok.strip_prefix('F') {
                Ok(LayerSpec::Dense { units: num(n, tok)? })
            } else if let Some((k, s)) = tok.split_once("MP") {
                Ok(LayerSpec::MaxPool2d { kernel: num(k, tok)?, stride: num(s, tok)? })
            } else if let Some((k, n)) = tok.split_once('C') {
                Ok(LayerSpec::Conv2d { filters: num(n, tok)?, kernel: num(k, tok)?, stride: 1, padding: Padding::Same })
            } else {
                Err(bad(tok))
            }
        })
        .collect()
}

impl Network {
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, rng: &mut Prng) -> Result<Self> {
        let shapes = infer_shapes(input_shape, &specs)?;
        let layers = specs
            .into_iter()
            .zip(&shapes)
            .map(|(spec, shape)| Layer::new(spec, shape, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers,
            training: true,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&self.input_shape, |l| l.output_shape())
    }

    /// Named parameters, `layer{i}.weight` / `layer{i}.bias`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (j, p) in layer.params().iter().enumerate() {
                out.push((param_name(i, j), p));
            }
        }
        out
    }

    /// Replaces parameters by name; every parameter must be supplied.
    pub fn load_named_params(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let count = layer.params().len();
            if count == 0 {
                continue;
            }
            let params = (0..count)
                .map(|j| {
                    let name = param_name(i, j);
                    named
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, t)| t.clone())
                        .ok_or_else(|| Error::config(format!("checkpoint lacks parameter {name}")))
                })
                .collect::<Result<Vec<_>>>()?;
            layer
                .set_params(params)
                .map_err(|e| Error::config(format!("layer {i}: {e}")))?;
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.rank() == 0 || batch.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(format!(
                "network expects [batch, {:?}], got {:?}",
                self.input_shape,
                batch.shape()
            )));
        }
        Ok(())
    }

    /// Runs every layer, recording activations and caches.
    pub fn forward(&self, batch: &Tensor, rng: &mut Prng) -> Result<Trace> {
        self.check_batch(batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        activations.push(batch.clone());
        for layer in &self.layers {
            let (y, cache) = layer.forward(activations.last().unwrap(), self.training, rng)?;
            activations.push(y);
            caches.push(cache);
        }
        Ok(Trace { activations, caches })
    }

    /// Eval-mode forward split across `workers` threads by contiguous row
    /// ranges. Results are concatenated in input order and are bit-identical
    /// to a single-threaded pass.
    pub fn forward_eval(&self, batch: &Tensor, workers: usize) -> Result<Vec<Tensor>> {
        self.check_batch(batch)?;
        let mut net = self.clone();
        net.training = false;
        let rows = batch.rows();
        let workers = workers.clamp(1, rows);
        if workers == 1 {
            return Ok(net.forward(batch, &mut Prng::new(0))?.into_activations());
        }
        let chunk = rows.div_ceil(workers);
        let ranges: Vec<Vec<usize>> = (0..rows)
            .step_by(chunk)
            .map(|start| (start..(start + chunk).min(rows)).collect())
            .collect();
        let net = &net;
        let results: Vec<Result<Vec<Tensor>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .iter()
                .map(|idx| {
                    scope.spawn(move || {
                        let part = batch.select_rows(idx)?;
                        Ok(net.forward(&part, &mut Prng::new(0))?.into_activations())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("forward worker panicked")).collect()
        });
        let shards = results.into_iter().collect::<Result<Vec<_>>>()?;
        (0..shards[0].len())
            .map(|layer| {
                let parts: Vec<Tensor> = shards.iter().map(|s| s[layer].clone()).collect();
                Tensor::concat_rows(&parts)
            })
            .collect()
    }

    /// Reverse-mode pass. Returns parameter gradients and the gradient with
    /// respect to the network input.
    pub fn backward_with_input(&self, trace: &Trace, output_grad: &Tensor) -> Result<(Gradients, Tensor)> {
        if trace.activations.len() != self.layers.len() + 1 || trace.caches.len() != self.layers.len() {
            return Err(Error::State("backward needs the trace of a forward pass through this network".into()));
        }
        let mut grads: Gradients = vec![Vec::new(); self.layers.len()];
        let mut upstream = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (gx, gp) = layer.backward(&trace.activations[i], &trace.activations[i + 1], &trace.caches[i], &upstream)?;
            grads[i] = gp;
            upstream = gx;
        }
        Ok((grads, upstream))
    }

    pub fn backward(&self, trace: &Trace, output_grad: &Tensor) -> Result<Gradients> {
        Ok(self.backward_with_input(trace, output_grad)?.0)
    }

    /// Softmax cross-entropy on the final activation.
    pub fn loss(&self, trace: &Trace, labels: &[usize]) -> Result<(f64, Tensor)> {
        let out = trace.output().ok_or_else(|| Error::State("empty trace".into()))?;
        softmax_xent_loss(out, labels)
    }

    /// Index of the layer whose output feeds the first group maxout, i.e. the
    /// penultimate representation used for concept discovery.
    pub fn penultimate_index(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.kind() == LayerKind::GroupMaxout)
            .and_then(|i| i.checked_sub(1))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(Tensor::len).sum()
    }
}

fn param_name(layer: usize, index: usize) -> String {
    match index {
        0 => format!("layer{layer}.weight"),
        1 => format!("layer{layer}.bias"),
        k => format!("layer{layer}.param{k}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsmax::{GroupSpec, GsmaxParams};

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn identity_dense() {
        let mut net = Network::new(&[3], vec![LayerSpec::Dense { units: 3 }], &mut Prng::new(0)).unwrap();
        net.layers_mut()[0]
            .set_params(vec![Tensor::identity(3).unwrap(), Tensor::zeros(&[3]).unwrap()])
            .unwrap();
        let x = row(&[1.0, -2.0, 3.5]);
        let t = net.forward(&x, &mut Prng::new(0)).unwrap();
        assert_eq!(t.output().unwrap(), &x);
    }

    #[test]
    fn relu_and_eval_dropout() {
        let mut net = Network::new(&[3], vec![LayerSpec::Relu, LayerSpec::Dropout { keep: 0.5 }], &mut Prng::new(0)).unwrap();
        net.set_training(false);
        let t = net.forward(&row(&[-1.0, 0.0, 2.0]), &mut Prng::new(0)).unwrap();
        assert_eq!(t.activations()[1].data(), &[0.0, 0.0, 2.0]);
        assert_eq!(t.output().unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn training_dropout_scales_kept_units() {
        let net = Network::new(&[1000], vec![LayerSpec::Dropout { keep: 0.8 }], &mut Prng::new(0)).unwrap();
        let x = Tensor::filled(&[1, 1000], 1.0).unwrap();
        let y = net.forward(&x, &mut Prng::new(3)).unwrap().output().unwrap().clone();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 1.25));
        assert!(Network::new(&[2], vec![LayerSpec::Dropout { keep: 0.0 }], &mut Prng::new(0)).is_err());
        assert!(Network::new(&[2], vec![LayerSpec::Dropout { keep: 1.5 }], &mut Prng::new(0)).is_err());
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let specs = vec![LayerSpec::Dense { units: 4 }, LayerSpec::Relu, LayerSpec::Dense { units: 2 }];
        let net = Network::new(&[3], specs, &mut Prng::new(1)).unwrap();
        let x = Tensor::uniform(&[5, 3], -1.0, 1.0, &mut Prng::new(2)).unwrap();
        let t = net.forward(&x, &mut Prng::new(0)).unwrap();
        let g = net.backward(&t, &Tensor::zeros(&[5, 2]).unwrap()).unwrap();
        assert!(g.iter().flatten().all(|p| p.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn squared_loss_at_optimum_has_zero_gradient() {
        let net = Network::new(&[2], vec![LayerSpec::Dense { units: 2 }], &mut Prng::new(5)).unwrap();
        let x = Tensor::uniform(&[4, 2], -1.0, 1.0, &mut Prng::new(6)).unwrap();
        let t = net.forward(&x, &mut Prng::new(0)).unwrap();
        // targets equal to the current predictions: d/dy 0.5||y - target||^2 = 0
        let target = t.output().unwrap().clone();
        let residual = Tensor::new(
            target.shape().to_vec(),
            t.output().unwrap().data().iter().zip(target.data()).map(|(a, b)| a - b).collect(),
        )
        .unwrap();
        let g = net.backward(&t, &residual).unwrap();
        assert!(g.iter().flatten().all(|p| p.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let net = Network::new(&[2], vec![LayerSpec::Dense { units: 2 }], &mut Prng::new(5)).unwrap();
        let err = net.backward(&Trace::default(), &Tensor::zeros(&[1, 2]).unwrap());
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn shape_mismatches_rejected() {
        let groups = GroupSpec::uniform(2, 3).unwrap();
        let bad = vec![
            LayerSpec::Dense { units: 5 },
            LayerSpec::Gsmax { groups, params: GsmaxParams::default() },
        ];
        assert!(Network::new(&[4], bad, &mut Prng::new(0)).is_err());
        let head_not_last = vec![LayerSpec::SoftmaxXentHead, LayerSpec::Relu];
        assert!(Network::new(&[4], head_not_last, &mut Prng::new(0)).is_err());
        let net = Network::new(&[4], vec![LayerSpec::Relu], &mut Prng::new(0)).unwrap();
        assert!(matches!(net.forward(&Tensor::zeros(&[2, 5]).unwrap(), &mut Prng::new(0)), Err(Error::Shape(_))));
    }

    #[test]
    fn maxout_arch_string_is_representable() {
        let specs = parse_arch_string("8C192-4MP2-8C384-4MP2-8C384-2MP2-F2500-F10").unwrap();
        assert_eq!(specs.len(), 8);
        let shapes = infer_shapes(&[3, 32, 32], &specs).unwrap();
        assert_eq!(shapes[1], vec![192, 32, 32]);
        assert_eq!(shapes[2], vec![192, 15, 15]);
        assert_eq!(shapes[6], vec![384, 3, 3]);
        assert_eq!(shapes.last().unwrap(), &vec![10]);
        assert!(parse_arch_string("8X3").is_err());
    }

    #[test]
    fn parallel_eval_is_bit_identical() {
        let groups = GroupSpec::uniform(2, 3).unwrap();
        let specs = vec![
            LayerSpec::Conv2d { filters: 2, kernel: 3, stride: 1, padding: Padding::Same },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 6 },
            LayerSpec::Gsmax { groups: groups.clone(), params: GsmaxParams::new(0.5).unwrap() },
            LayerSpec::GroupMaxout { groups },
            LayerSpec::SoftmaxXentHead,
        ];
        let net = Network::new(&[1, 5, 5], specs, &mut Prng::new(9)).unwrap();
        let x = Tensor::uniform(&[13, 1, 5, 5], -1.0, 1.0, &mut Prng::new(10)).unwrap();
        let one = net.forward_eval(&x, 1).unwrap();
        for workers in [2, 4, 13, 40] {
            assert_eq!(net.forward_eval(&x, workers).unwrap(), one);
        }
        assert_eq!(net.penultimate_index(), Some(3));
    }
}
