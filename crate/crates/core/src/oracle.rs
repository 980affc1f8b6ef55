//! Randomized certification suites: GSMax against exact enumeration of the
//! competitive Boltzmann machine, and analytic layer gradients against
//! central finite differences.

use std::fmt;

use serde::Serialize;

use crate::boltzmann::{enumerate_posterior, BoltzmannMachine, Penalty};
use crate::error::{Error, Result};
use crate::gsmax::{self, GroupSpec, GsmaxParams};
use crate::nn::conv::Padding;
use crate::nn::layer::{Cache, Layer, LayerKind, LayerSpec};
use crate::nn::loss::softmax_xent_loss;
use crate::nn::network::Network;
use crate::rng::Prng;
use crate::tensor::Tensor;

pub const ENUMERATION_TOLERANCE: f64 = 1e-12;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;
/// Instances whose inputs sit this close to a ReLU/max kink are redrawn.
pub const KINK_MARGIN: f64 = 1e-4;

/// Signature of a GSMax implementation under test.
pub type GsmaxFn = fn(&Tensor, &GroupSpec, &GsmaxParams) -> Result<Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnumerationStats {
    pub trials: usize,
    pub max_abs_dev: f64,
    pub max_ground_dev: f64,
}

impl EnumerationStats {
    pub fn passed(&self) -> bool {
        self.max_abs_dev < ENUMERATION_TOLERANCE && self.max_ground_dev < ENUMERATION_TOLERANCE
    }
}

/// Random machine with at most `max_hidden` hidden units in groups of size
/// 1..=4, 1..=8 visible units, and parameters uniform in `[-2, 2)`.
pub fn random_machine(max_hidden: usize, rng: &mut Prng) -> Result<(BoltzmannMachine, Vec<u8>)> {
    let target = 1 + rng.below(max_hidden as u64) as usize;
    let mut sizes = Vec::new();
    let mut total = 0;
    while total < target {
        let s = (1 + rng.below(4) as usize).min(target - total);
        sizes.push(s);
        total += s;
    }
    let visible = 1 + rng.below(8) as usize;
    let m = BoltzmannMachine::random(visible, &sizes, Penalty::NegInfinity, -2.0, 2.0, rng)?;
    let v = (0..visible).map(|_| u8::from(rng.bernoulli(0.5))).collect();
    Ok((m, v))
}

/// Compares `gsmax(z = b + vᵀW_v, T = 1)` with enumerated marginals and
/// ground-state probabilities on `trials` random machines.
pub fn gsmax_vs_enumeration(trials: usize, seed: u64, gsmax_fn: GsmaxFn) -> Result<EnumerationStats> {
    let mut rng = Prng::new(seed);
    let mut stats = EnumerationStats { trials, max_abs_dev: 0.0, max_ground_dev: 0.0 };
    for _ in 0..trials {
        let (m, v) = random_machine(12, &mut rng)?;
        let exact = enumerate_posterior(&m, &v)?;
        let z = Tensor::new(vec![1, m.hidden()], m.hidden_field(&v)?)?;
        let p = gsmax_fn(&z, m.spec(), &GsmaxParams::default())?;
        for (a, b) in p.data().iter().zip(&exact.marginals) {
            stats.max_abs_dev = stats.max_abs_dev.max((a - b).abs());
        }
        for (g, members) in m.spec().groups().iter().enumerate() {
            let ground = 1.0 - members.iter().map(|&c| p.data()[c]).sum::<f64>();
            stats.max_ground_dev = stats.max_ground_dev.max((ground - exact.groups[g].probs[0]).abs());
        }
    }
    Ok(stats)
}

/// One gradient-check configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradCase {
    Layer { kind: LayerKind, temperature: Option<f64> },
    /// dense -> relu -> dense -> gsmax -> group maxout -> softmax head.
    Network,
}

impl fmt::Display for GradCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradCase::Layer { kind, temperature: Some(t) } => write!(f, "{kind} (T={t})"),
            GradCase::Layer { kind, temperature: None } => write!(f, "{kind}"),
            GradCase::Network => f.write_str("network"),
        }
    }
}

/// Gradient cases for a layer kind. Every kind must produce at least one.
pub fn cases_for(kind: LayerKind) -> Vec<GradCase> {
    let layer = |temperature| GradCase::Layer { kind, temperature };
    match kind {
        LayerKind::Gsmax => [0.5, 1.0, 2.0].into_iter().map(|t| layer(Some(t))).collect(),
        LayerKind::Dense
        | LayerKind::Conv2d
        | LayerKind::MaxPool2d
        | LayerKind::Relu
        | LayerKind::Dropout
        | LayerKind::GroupMaxout
        | LayerKind::SoftmaxXentHead => vec![layer(None)],
    }
}

pub fn all_grad_cases() -> Vec<GradCase> {
    LayerKind::ALL
        .iter()
        .flat_map(|&k| cases_for(k))
        .chain(std::iter::once(GradCase::Network))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradStats {
    pub case: String,
    pub instances: usize,
    pub rejected: usize,
    pub checked_entries: usize,
    pub max_rel_err: f64,
}

impl GradStats {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADIENT_TOLERANCE
    }
}

/// `||a - n|| / max(||a||, ||n||)` over one gradient tensor (Euclidean
/// norms), zero when both vanish. Entry-wise ratios are dominated by
/// round-off on near-zero components, so each tensor is compared as a whole.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn central_difference(x: &mut [f64], i: usize, f: &mut dyn FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let plus = f(x)?;
    x[i] = orig - FD_STEP;
    let minus = f(x)?;
    x[i] = orig;
    Ok((plus - minus) / (2.0 * FD_STEP))
}

/// Smallest gap between the largest and second-largest value over the
/// given index sets.
fn min_top_two_gap<'a>(values: &[f64], sets: impl Iterator<Item = Vec<usize>> + 'a) -> f64 {
    sets.filter(|s| s.len() > 1)
        .map(|s| {
            let mut v: Vec<f64> = s.iter().map(|&i| values[i]).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v[0] - v[1]
        })
        .fold(f64::INFINITY, f64::min)
}

fn pool_windows(shape: &[usize], kernel: usize, stride: usize) -> Vec<Vec<usize>> {
    let [n, c, h, w] = shape[..] else { return Vec::new() };
    let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
    let mut out = Vec::new();
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                out.push(
                    (0..kernel * kernel)
                        .map(|k| plane * h * w + (oy * stride + k / kernel) * w + ox * stride + k % kernel)
                        .collect(),
                );
            }
        }
    }
    out
}

fn maxout_sets(shape: &[usize], spec: &GroupSpec) -> Vec<Vec<usize>> {
    let c = spec.channels();
    let spatial: usize = shape[2..].iter().product();
    let mut out = Vec::new();
    for n in 0..shape[0] {
        for s in 0..spatial {
            for g in spec.groups() {
                out.push(g.iter().map(|&ch| (n * c + ch) * spatial + s).collect());
            }
        }
    }
    out
}

/// True when the layer input is too close to a non-differentiable point.
fn near_kink(spec: &LayerSpec, x: &Tensor) -> bool {
    match spec {
        LayerSpec::Relu => x.data().iter().any(|v| v.abs() < KINK_MARGIN),
        LayerSpec::MaxPool2d { kernel, stride } => {
            min_top_two_gap(x.data(), pool_windows(x.shape(), *kernel, *stride).into_iter()) < KINK_MARGIN
        }
        LayerSpec::GroupMaxout { groups } => {
            min_top_two_gap(x.data(), maxout_sets(x.shape(), groups).into_iter()) < KINK_MARGIN
        }
        _ => false,
    }
}

struct LayerInstance {
    layer: Layer,
    input: Tensor,
    upstream: Tensor,
    labels: Vec<usize>,
    rng_state: Prng,
}

fn layer_instance(kind: LayerKind, temperature: Option<f64>, rng: &mut Prng) -> Result<LayerInstance> {
    let batch = 2;
    let (spec, in_shape, lo, hi): (LayerSpec, Vec<usize>, f64, f64) = match kind {
        LayerKind::Dense => (LayerSpec::Dense { units: 4 }, vec![5], -1.0, 1.0),
        LayerKind::Conv2d => (
            LayerSpec::Conv2d { filters: 2, kernel: 3, stride: 1 + rng.below(2) as usize, padding: Padding::Same },
            vec![2, 5, 5],
            -1.0,
            1.0,
        ),
        LayerKind::MaxPool2d => (LayerSpec::MaxPool2d { kernel: 3, stride: 2 }, vec![2, 5, 5], -1.0, 1.0),
        LayerKind::Relu => (LayerSpec::Relu, vec![3, 2, 2], -1.0, 1.0),
        LayerKind::Dropout => (LayerSpec::Dropout { keep: 0.5 }, vec![8], -1.0, 1.0),
        LayerKind::Gsmax => (
            LayerSpec::Gsmax {
                groups: GroupSpec::from_sizes(&[1, 2, 3, 4])?,
                params: GsmaxParams::new(temperature.unwrap_or(1.0))?,
            },
            vec![10],
            -2.0,
            2.0,
        ),
        LayerKind::GroupMaxout => (
            LayerSpec::GroupMaxout { groups: GroupSpec::from_indices(vec![vec![0, 3], vec![1, 2, 5], vec![4]])? },
            vec![6, 2],
            -1.0,
            1.0,
        ),
        LayerKind::SoftmaxXentHead => (LayerSpec::SoftmaxXentHead, vec![5], -2.0, 2.0),
    };
    let mut layer = Layer::new(spec, &in_shape, rng)?;
    // biases start at zero; randomize so their gradients are exercised
    let params: Vec<Tensor> = layer
        .params()
        .iter()
        .map(|p| Tensor::uniform(p.shape(), -1.0, 1.0, rng))
        .collect::<Result<_>>()?;
    layer.set_params(params)?;
    let mut batched = vec![batch];
    batched.extend(&in_shape);
    let input = Tensor::uniform(&batched, lo, hi, rng)?;
    let mut out_shape = vec![batch];
    out_shape.extend(layer.output_shape());
    let upstream = Tensor::uniform(&out_shape, -1.0, 1.0, rng)?;
    let classes = layer.output_shape()[0];
    let labels = (0..batch).map(|_| rng.below(classes as u64) as usize).collect();
    Ok(LayerInstance { layer, input, upstream, labels, rng_state: rng.fork(99) })
}

/// Scalar objective for one layer: `sum(upstream * output)`, or the
/// cross-entropy for the softmax head. Dropout replays the same mask by
/// restarting from a saved PRNG state.
fn layer_objective(inst: &LayerInstance, layer: &Layer, x: &Tensor) -> Result<(f64, Tensor, Cache, Tensor)> {
    let (y, cache) = layer.forward(x, true, &mut inst.rng_state.clone())?;
    if layer.kind() == LayerKind::SoftmaxXentHead {
        let (loss, grad) = softmax_xent_loss(&y, &inst.labels)?;
        return Ok((loss, y, cache, grad));
    }
    let loss = y.data().iter().zip(inst.upstream.data()).map(|(a, b)| a * b).sum();
    Ok((loss, y, cache, inst.upstream.clone()))
}

fn check_layer_instance(inst: &LayerInstance) -> Result<(usize, f64)> {
    let (_, y, cache, up) = layer_objective(inst, &inst.layer, &inst.input)?;
    let (gx, gparams) = inst.layer.backward(&inst.input, &y, &cache, &up)?;
    let mut worst: f64 = 0.0;
    let mut entries = 0;

    let mut x = inst.input.data().to_vec();
    let numeric = (0..x.len())
        .map(|i| {
            central_difference(&mut x, i, &mut |xs| {
                let t = Tensor::new(inst.input.shape().to_vec(), xs.to_vec())?;
                Ok(layer_objective(inst, &inst.layer, &t)?.0)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    worst = worst.max(relative_error(gx.data(), &numeric));
    entries += numeric.len();

    for (p, gp) in gparams.iter().enumerate() {
        let mut values = inst.layer.params()[p].data().to_vec();
        let numeric = (0..values.len())
            .map(|i| {
                central_difference(&mut values, i, &mut |vs| {
                    let mut layer = inst.layer.clone();
                    let mut params = layer.params().to_vec();
                    params[p] = Tensor::new(params[p].shape().to_vec(), vs.to_vec())?;
                    layer.set_params(params)?;
                    Ok(layer_objective(inst, &layer, &inst.input)?.0)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        worst = worst.max(relative_error(gp.data(), &numeric));
        entries += numeric.len();
    }
    Ok((entries, worst))
}

fn network_instance(rng: &mut Prng) -> Result<(Network, Tensor, Vec<usize>)> {
    let groups = GroupSpec::uniform(3, 2)?;
    let specs = vec![
        LayerSpec::Dense { units: 5 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: 6 },
        LayerSpec::Gsmax { groups: groups.clone(), params: GsmaxParams::new(0.5)? },
        LayerSpec::GroupMaxout { groups },
        LayerSpec::SoftmaxXentHead,
    ];
    let mut net = Network::new(&[4], specs, rng)?;
    for layer in net.layers_mut() {
        let params: Vec<Tensor> = layer
            .params()
            .iter()
            .map(|p| Tensor::uniform(p.shape(), -1.0, 1.0, rng))
            .collect::<Result<_>>()?;
        layer.set_params(params)?;
    }
    let x = Tensor::uniform(&[3, 4], -1.0, 1.0, rng)?;
    let labels = (0..3).map(|_| rng.below(3) as usize).collect();
    Ok((net, x, labels))
}

fn network_near_kink(net: &Network, x: &Tensor) -> Result<bool> {
    let trace = net.forward(x, &mut Prng::new(0))?;
    Ok(net
        .layers()
        .iter()
        .zip(trace.activations())
        .any(|(layer, input)| near_kink(layer.spec(), input)))
}

fn check_network_instance(net: &Network, x: &Tensor, labels: &[usize]) -> Result<(usize, f64)> {
    let loss_of = |n: &Network, input: &Tensor| -> Result<f64> {
        let t = n.forward(input, &mut Prng::new(0))?;
        Ok(n.loss(&t, labels)?.0)
    };
    let trace = net.forward(x, &mut Prng::new(0))?;
    let (_, grad) = net.loss(&trace, labels)?;
    let (grads, gx) = net.backward_with_input(&trace, &grad)?;
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut xs = x.data().to_vec();
    let numeric = (0..xs.len())
        .map(|i| central_difference(&mut xs, i, &mut |v| loss_of(net, &Tensor::new(x.shape().to_vec(), v.to_vec())?)))
        .collect::<Result<Vec<_>>>()?;
    worst = worst.max(relative_error(gx.data(), &numeric));
    entries += numeric.len();
    for (l, layer_grads) in grads.iter().enumerate() {
        for (p, gp) in layer_grads.iter().enumerate() {
            let mut values = net.layers()[l].params()[p].data().to_vec();
            let numeric = (0..values.len())
                .map(|i| {
                    central_difference(&mut values, i, &mut |vs| {
                        let mut n = net.clone();
                        let mut params = n.layers()[l].params().to_vec();
                        params[p] = Tensor::new(params[p].shape().to_vec(), vs.to_vec())?;
                        n.layers_mut()[l].set_params(params)?;
                        loss_of(&n, x)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            worst = worst.max(relative_error(gp.data(), &numeric));
            entries += numeric.len();
        }
    }
    Ok((entries, worst))
}

/// Runs `instances` accepted random instances of one case; kink-adjacent
/// draws are rejected and redrawn.
pub fn gradient_check(case: GradCase, instances: usize, seed: u64) -> Result<GradStats> {
    let mut rng = Prng::new(seed);
    let mut stats = GradStats { case: case.to_string(), instances: 0, rejected: 0, checked_entries: 0, max_rel_err: 0.0 };
    let max_attempts = instances * 50 + 50;
    while stats.instances < instances {
        if stats.instances + stats.rejected >= max_attempts {
            return Err(Error::Numeric(format!("{case}: too many kink-adjacent draws")));
        }
        let (entries, err) = match case {
            GradCase::Layer { kind, temperature } => {
                let inst = layer_instance(kind, temperature, &mut rng)?;
                if near_kink(inst.layer.spec(), &inst.input) {
                    stats.rejected += 1;
                    continue;
                }
                check_layer_instance(&inst)?
            }
            GradCase::Network => {
                let (net, x, labels) = network_instance(&mut rng)?;
                if network_near_kink(&net, &x)? {
                    stats.rejected += 1;
                    continue;
                }
                check_network_instance(&net, &x, &labels)?
            }
        };
        stats.instances += 1;
        stats.checked_entries += entries;
        stats.max_rel_err = stats.max_rel_err.max(err);
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub enumeration: EnumerationStats,
    pub gradients: Vec<GradStats>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.enumeration.passed() && self.gradients.iter().all(GradStats::passed)
    }

    pub fn render(&self) -> String {
        let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let mut s = format!(
            "[{}] gsmax vs enumeration: {} trials, max |dp| = {:.3e}, max |d ground| = {:.3e} (tol {:.0e})\n",
            mark(self.enumeration.passed()),
            self.enumeration.trials,
            self.enumeration.max_abs_dev,
            self.enumeration.max_ground_dev,
            ENUMERATION_TOLERANCE
        );
        for g in &self.gradients {
            s.push_str(&format!(
                "[{}] gradient {}: {} instances ({} rejected), {} entries, max rel err = {:.3e} (tol {:.0e})\n",
                mark(g.passed()),
                g.case,
                g.instances,
                g.rejected,
                g.checked_entries,
                g.max_rel_err,
                GRADIENT_TOLERANCE
            ));
        }
        s
    }
}

/// Full suite: enumeration on `trials` machines and every gradient case on
/// `grad_instances` instances.
pub fn run_oracle_check(trials: usize, grad_instances: usize, seed: u64, gsmax_fn: GsmaxFn) -> Result<OracleReport> {
    if trials == 0 {
        return Err(Error::config("oracle check needs at least one trial"));
    }
    let enumeration = gsmax_vs_enumeration(trials, seed, gsmax_fn)?;
    let gradients = all_grad_cases()
        .into_iter()
        .enumerate()
        .map(|(i, case)| gradient_check(case, grad_instances, seed.wrapping_add(1 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleReport { enumeration, gradients })
}

/// The production GSMax, as a [`GsmaxFn`].
pub fn reference_gsmax(z: &Tensor, spec: &GroupSpec, params: &GsmaxParams) -> Result<Tensor> {
    gsmax::gsmax_forward(z, spec, params)
}
