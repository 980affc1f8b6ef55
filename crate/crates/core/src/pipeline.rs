//! End-to-end runs: training, activation dumps, discovery reports, filter
//! grids, and dataset dumps. Every run is a pure function of its config and
//! input files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{CifarSpec, DatasetConfig, RunConfig, Target};
use crate::data::{
    augment_with, gcn, gen_hierarchical_gaussians, gen_rotated_edges, read_cifar_binary, HierarchicalDataset, Split,
};
use crate::discovery::{
    associate_neurons, association_csv, chance_level, group_similarity_report, subclass_accuracy, AssociationTable,
    DiscoverySummary, Hierarchy, SimilarityReport,
};
use crate::error::{Error, Result};
use crate::gsmax::GroupSpec;
use crate::nn::checkpoint::{labels_to_tensor, tensor_to_labels, Checkpoint};
use crate::nn::layer::{Layer, LayerSpec};
use crate::nn::loss::argmax_rows;
use crate::nn::network::Network;
use crate::nn::optim::sgd_momentum_step;
use crate::ppm::{filter_grid, Image, TileShape};
use crate::rng::Prng;
use crate::tensor::Tensor;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DUMP_FILE: &str = "activations.bin";
pub const ASSOCIATION_FILE: &str = "association.csv";
pub const SUMMARY_FILE: &str = "discovery.json";
pub const CONTROL_DIR: &str = "control";

const GCN_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: HierarchicalDataset,
    pub test: HierarchicalDataset,
}

fn normalize_all(d: &HierarchicalDataset) -> Result<HierarchicalDataset> {
    let shape = d.sample_shape().to_vec();
    let rows = (0..d.len())
        .map(|i| {
            let img = Tensor::new(shape.clone(), d.samples().row(i).to_vec())?;
            Ok(gcn(&img, GCN_EPSILON)?.into_data())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut full = vec![d.len()];
    full.extend(&shape);
    let samples = Tensor::new(full, rows.concat())?;
    HierarchicalDataset::new(samples, d.super_labels().to_vec(), d.sub_labels().to_vec(), d.hierarchy().clone(), d.split())
}

fn load_cifar(c: &CifarSpec) -> Result<Datasets> {
    let mut train = read_cifar_binary(&c.train_path, c.variant, Split::Train)?;
    let mut test = read_cifar_binary(&c.test_path, c.variant, Split::Test)?;
    if c.gcn {
        train = normalize_all(&train)?;
        test = normalize_all(&test)?;
    }
    Ok(Datasets { train, test })
}

pub fn load_datasets(cfg: &DatasetConfig) -> Result<Datasets> {
    match cfg {
        DatasetConfig::Synthetic(s) => {
            let d = gen_hierarchical_gaussians(s)?;
            Ok(Datasets { train: d.train, test: d.test })
        }
        DatasetConfig::RotatedEdges(e) => {
            let train = gen_rotated_edges(e.n_per_orbit, e.patch_size, e.noise_sigma, e.seed)?;
            let test = gen_rotated_edges(e.n_test_per_orbit, e.patch_size, e.noise_sigma, e.seed.wrapping_add(1))?;
            Ok(Datasets { train: train.to_hierarchical(Split::Train)?, test: test.to_hierarchical(Split::Test)? })
        }
        DatasetConfig::Cifar(c) => load_cifar(c),
    }
}

fn targets(d: &HierarchicalDataset, target: Target) -> &[usize] {
    match target {
        Target::Super => d.super_labels(),
        Target::Sub => d.sub_labels(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_super_acc: f64,
    pub test_super_acc: f64,
    pub lr: f64,
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,train_super_acc,test_super_acc,lr\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.train_loss, r.train_super_acc, r.test_super_acc, r.lr));
    }
    s
}

fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

fn eval_accuracy(net: &Network, samples: &Tensor, labels: &[usize], workers: usize) -> Result<f64> {
    let acts = net.forward_eval(samples, workers)?;
    Ok(accuracy(&argmax_rows(acts.last().expect("input activation")), labels))
}

/// Random shift (and optional flip) per sample.
fn augment_batch(batch: &Tensor, c: &CifarSpec, rng: &mut Prng) -> Result<Tensor> {
    if c.augment_shift == 0 && !c.augment_flip {
        return Ok(batch.clone());
    }
    let shape = batch.shape()[1..].to_vec();
    let span = 2 * c.augment_shift as u64 + 1;
    let rows = (0..batch.rows())
        .map(|i| {
            let img = Tensor::new(shape.clone(), batch.row(i).to_vec())?;
            let flip = c.augment_flip && rng.bernoulli(0.5);
            let dy = rng.below(span) as i64 - c.augment_shift as i64;
            let dx = rng.below(span) as i64 - c.augment_shift as i64;
            Ok(augment_with(&img, flip, dy, dx)?.into_data())
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(batch.shape().to_vec(), rows.concat())
}

/// A freshly initialized network for `cfg`; `control` drops the GSMax layers.
pub fn build_network(cfg: &RunConfig, control: bool) -> Result<Network> {
    let mut rng = Prng::new(cfg.train.seed).fork(1);
    Network::new(&cfg.dataset.input_shape(), cfg.network_specs(control), &mut rng)
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub network: Network,
    pub metrics: Vec<EpochMetrics>,
}

/// Minibatch momentum SGD on the configured target labels, reshuffled each
/// epoch. Accuracies are measured by eval-mode passes after each epoch.
pub fn train(cfg: &RunConfig, data: &Datasets, control: bool, workers: usize) -> Result<TrainResult> {
    let tc = &cfg.train;
    tc.validate()?;
    let mut net = build_network(cfg, control)?;
    let root = Prng::new(tc.seed);
    let mut order_rng = root.fork(2);
    let mut dropout_rng = root.fork(3);
    let mut augment_rng = root.fork(4);
    let train_labels = targets(&data.train, cfg.target);
    let test_labels = targets(&data.test, cfg.target);
    let classes = net.output_shape()[0];
    if let Some(bad) = train_labels.iter().chain(test_labels).find(|&&l| l >= classes) {
        return Err(Error::config(format!("label {bad} does not fit a {classes}-way output layer")));
    }
    let mut velocity: Vec<Vec<Tensor>> = net
        .layers()
        .iter()
        .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
        .collect::<Result<_>>()?;
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        order_rng.shuffle(&mut order);
        net.set_training(true);
        let mut loss_sum = 0.0;
        for idx in order.chunks(tc.batch_size) {
            let mut batch = data.train.samples().select_rows(idx)?;
            if let DatasetConfig::Cifar(c) = &cfg.dataset {
                batch = augment_batch(&batch, c, &mut augment_rng)?;
            }
            let labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
            let trace = net.forward(&batch, &mut dropout_rng)?;
            let (loss, grad) = net.loss(&trace, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss in epoch {epoch}")));
            }
            let grads = net.backward(&trace, &grad)?;
            for ((layer, g), v) in net.layers_mut().iter_mut().zip(&grads).zip(&mut velocity) {
                sgd_momentum_step(layer.params_mut(), g, v, tc, epoch)?;
            }
            loss_sum += loss * idx.len() as f64;
        }
        net.set_training(false);
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / n as f64,
            train_super_acc: eval_accuracy(&net, data.train.samples(), train_labels, workers)?,
            test_super_acc: eval_accuracy(&net, data.test.samples(), test_labels, workers)?,
            lr: tc.lr(epoch),
        });
    }
    net.set_training(false);
    Ok(TrainResult { network: net, metrics })
}

pub fn network_checkpoint(net: &Network) -> Checkpoint {
    let mut c = Checkpoint::new();
    for (name, t) in net.named_params() {
        c.push(name, t.clone());
    }
    c
}

/// Rebuilds the configured network and loads checkpointed parameters.
pub fn load_network(cfg: &RunConfig, control: bool, path: &Path) -> Result<Network> {
    let mut net = build_network(cfg, control)?;
    let c = Checkpoint::load(path)?;
    net.load_named_params(c.tensors())?;
    net.set_training(false);
    Ok(net)
}

/// Penultimate activations with their labels, hierarchy, and neuron groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub activations: Tensor,
    pub super_labels: Vec<usize>,
    pub sub_labels: Vec<usize>,
    pub hierarchy: Hierarchy,
    pub neurons: GroupSpec,
}

impl ActivationDump {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        c.push("activations", self.activations.clone());
        c.push("super_labels", labels_to_tensor(&self.super_labels)?);
        c.push("sub_labels", labels_to_tensor(&self.sub_labels)?);
        c.push("sub_to_super", labels_to_tensor(self.hierarchy.sub_to_super())?);
        c.push("super_count", labels_to_tensor(&[self.hierarchy.super_count()])?);
        let group_of: Vec<usize> = (0..self.neurons.channels()).map(|n| self.neurons.group_of(n)).collect();
        c.push("neuron_group", labels_to_tensor(&group_of)?);
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let supers = tensor_to_labels(c.require("super_count")?)?;
        let &[super_count] = supers.as_slice() else {
            return Err(Error::format("super_count must hold one value"));
        };
        let hierarchy = Hierarchy::new(super_count, tensor_to_labels(c.require("sub_to_super")?)?)?;
        let group_of = tensor_to_labels(c.require("neuron_group")?)?;
        let groups = group_of.iter().max().map_or(0, |g| g + 1);
        let mut members = vec![Vec::new(); groups];
        for (n, &g) in group_of.iter().enumerate() {
            members[g].push(n);
        }
        let dump = ActivationDump {
            activations: c.require("activations")?.clone(),
            super_labels: tensor_to_labels(c.require("super_labels")?)?,
            sub_labels: tensor_to_labels(c.require("sub_labels")?)?,
            hierarchy,
            neurons: GroupSpec::from_indices(members)?,
        };
        if dump.activations.rank() != 2 {
            return Err(Error::format(format!("activation dump must be 2-D, got {:?}", dump.activations.shape())));
        }
        Ok(dump)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Eval-mode activations of the layer feeding the first group maxout,
/// flattened per sample, plus that maxout's neuron groups.
pub fn penultimate_dump(net: &Network, data: &HierarchicalDataset, workers: usize) -> Result<ActivationDump> {
    let idx = net
        .penultimate_index()
        .ok_or_else(|| Error::config("network has no group maxout, so no penultimate layer to analyse"))?;
    let neurons = match net.layers()[idx + 1].spec() {
        LayerSpec::GroupMaxout { groups } => groups.clone(),
        _ => unreachable!("penultimate_index points before a group maxout"),
    };
    let acts = net.forward_eval(data.samples(), workers)?.swap_remove(idx + 1);
    let rows = acts.rows();
    let per = acts.len() / rows;
    if per != neurons.channels() {
        return Err(Error::config(format!(
            "penultimate layer has {per} values per sample; discovery needs flat activations over {} neurons",
            neurons.channels()
        )));
    }
    Ok(ActivationDump {
        activations: acts.reshape(vec![rows, per])?,
        super_labels: data.super_labels().to_vec(),
        sub_labels: data.sub_labels().to_vec(),
        hierarchy: data.hierarchy().clone(),
        neurons,
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Output directory of a run; control runs live in a subdirectory.
pub fn run_dir(out: &Path, control: bool) -> PathBuf {
    if control {
        out.join(CONTROL_DIR)
    } else {
        out.to_path_buf()
    }
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub result: TrainResult,
    pub dump: Option<ActivationDump>,
}

/// Trains and writes `checkpoint.bin`, `metrics.csv`, and (when the network
/// has a group maxout) the test-set `activations.bin` into
/// [`run_dir`]`(out, control)`.
pub fn cmd_train(cfg: &RunConfig, out: &Path, control: bool, workers: usize) -> Result<TrainArtifacts> {
    let data = load_datasets(&cfg.dataset)?;
    let result = train(cfg, &data, control, workers)?;
    let dir = run_dir(out, control);
    ensure_dir(&dir)?;
    network_checkpoint(&result.network).save(&dir.join(CHECKPOINT_FILE))?;
    write_file(&dir.join(METRICS_FILE), metrics_csv(&result.metrics))?;
    let dump = match result.network.penultimate_index() {
        Some(_) => {
            let d = penultimate_dump(&result.network, &data.test, workers)?;
            d.save(&dir.join(DUMP_FILE))?;
            Some(d)
        }
        None => None,
    };
    Ok(TrainArtifacts { dir, result, dump })
}

/// Association and evaluation sample indices. Without holdout both are the
/// whole set; with holdout a seeded shuffle gives the first `fraction` to
/// association and the rest to evaluation.
pub fn split_indices(n: usize, holdout: Option<(f64, u64)>) -> Result<(Vec<usize>, Vec<usize>)> {
    let all: Vec<usize> = (0..n).collect();
    let Some((fraction, seed)) = holdout else {
        return Ok((all.clone(), all));
    };
    let mut perm = all;
    Prng::new(seed).fork(5).shuffle(&mut perm);
    let cut = ((n as f64) * fraction).round() as usize;
    if cut == 0 || cut == n {
        return Err(Error::config(format!("holdout split of {n} samples leaves an empty side")));
    }
    let (a, b) = perm.split_at(cut);
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

#[derive(Debug, Clone)]
pub struct DiscoveryRun {
    pub table: AssociationTable,
    pub accuracy: f64,
    pub chance: f64,
    pub samples: usize,
}

pub fn discover(dump: &ActivationDump, holdout: Option<(f64, u64)>) -> Result<DiscoveryRun> {
    let n = dump.activations.rows();
    let (assoc, eval) = split_indices(n, holdout)?;
    let pick = |idx: &[usize]| -> Result<(Tensor, Vec<usize>, Vec<usize>)> {
        Ok((
            dump.activations.select_rows(idx)?,
            idx.iter().map(|&i| dump.super_labels[i]).collect(),
            idx.iter().map(|&i| dump.sub_labels[i]).collect(),
        ))
    };
    let (a_acts, a_sup, a_sub) = pick(&assoc)?;
    let table = associate_neurons(&a_acts, &a_sup, &a_sub, &dump.hierarchy, &dump.neurons)?;
    let (e_acts, e_sup, e_sub) = pick(&eval)?;
    let accuracy = subclass_accuracy(&e_acts, &e_sup, &e_sub, &table, &dump.hierarchy, &dump.neurons)?;
    Ok(DiscoveryRun { table, accuracy, chance: chance_level(&dump.hierarchy), samples: eval.len() })
}

#[derive(Debug, Clone)]
pub struct DiscoveryReport {
    pub summary: DiscoverySummary,
    pub csv: String,
    pub control: Option<DiscoveryRun>,
}

/// Runs discovery on a dump and, optionally, a control dump; writes
/// `association.csv` and `discovery.json` into `out`.
pub fn cmd_discover_dumps(
    dump: &ActivationDump,
    control: Option<&ActivationDump>,
    holdout: Option<(f64, u64)>,
    out: &Path,
) -> Result<DiscoveryReport> {
    let run = discover(dump, holdout)?;
    let control_run = control.map(|c| discover(c, holdout)).transpose()?;
    let summary = DiscoverySummary {
        accuracy: run.accuracy,
        chance: run.chance,
        control_delta: control_run.as_ref().map(|c| run.accuracy - c.accuracy),
        samples: run.samples,
        unassigned_neurons: run.table.assigned().iter().filter(|a| a.is_none()).count(),
    };
    let csv = association_csv(&run.table, &dump.neurons);
    ensure_dir(out)?;
    write_file(&out.join(ASSOCIATION_FILE), &csv)?;
    if let (Some(c), Some(cd)) = (&control_run, control) {
        let cdir = out.join(CONTROL_DIR);
        ensure_dir(&cdir)?;
        write_file(&cdir.join(ASSOCIATION_FILE), association_csv(&c.table, &cd.neurons))?;
    }
    let json = serde_json::to_string(&summary).map_err(|e| Error::format(e.to_string()))?;
    write_file(&out.join(SUMMARY_FILE), format!("{json}\n"))?;
    Ok(DiscoveryReport { summary, csv, control: control_run })
}

/// Eval-mode forward of the checkpointed network(s) over the test split,
/// then discovery. With `control`, the control checkpoint in
/// `out/control` is evaluated too and the summary carries the delta.
pub fn cmd_discover(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>, holdout: bool, control: bool, workers: usize) -> Result<DiscoveryReport> {
    let data = load_datasets(&cfg.dataset)?;
    let main_ckpt = checkpoint.map_or_else(|| out.join(CHECKPOINT_FILE), Path::to_path_buf);
    let net = load_network(cfg, false, &main_ckpt)?;
    let dump = penultimate_dump(&net, &data.test, workers)?;
    check_dump_alignment(&dump)?;
    let control_dump = if control {
        let cnet = load_network(cfg, true, &run_dir(out, true).join(CHECKPOINT_FILE))?;
        Some(penultimate_dump(&cnet, &data.test, workers)?)
    } else {
        None
    };
    let holdout = holdout.then_some((cfg.holdout_fraction, cfg.train.seed));
    cmd_discover_dumps(&dump, control_dump.as_ref(), holdout, out)
}

fn check_dump_alignment(d: &ActivationDump) -> Result<()> {
    if d.neurons.group_count() != d.hierarchy.super_count() {
        return Err(Error::config(format!(
            "{} neuron groups for {} super-classes",
            d.neurons.group_count(),
            d.hierarchy.super_count()
        )));
    }
    Ok(())
}

/// Filters of a dense or conv layer as channel-major vectors with their
/// tile shape.
pub fn layer_filters(layer: &Layer) -> Result<(Vec<Vec<f64>>, TileShape)> {
    let w = layer
        .params()
        .first()
        .ok_or_else(|| Error::config(format!("{} layer has no filters to visualize", layer.kind())))?;
    match layer.spec() {
        LayerSpec::Conv2d { .. } => {
            let s = w.shape();
            let tile = TileShape::new(s[1], s[2], s[3])?;
            Ok(((0..s[0]).map(|f| w.row(f).to_vec()).collect(), tile))
        }
        LayerSpec::Dense { units } => {
            let tile = match *layer.input_shape() {
                [c, h, wd] => TileShape::new(c, h, wd)?,
                ref other => {
                    return Err(Error::config(format!("dense layer fan-in {other:?} is not image-shaped")));
                }
            };
            let fan_in = w.rows();
            Ok(((0..*units).map(|u| (0..fan_in).map(|i| w.get2(i, u)).collect()).collect(), tile))
        }
        _ => Err(Error::config(format!("{} layer is not visualizable", layer.kind()))),
    }
}

/// Group structure over the outputs of layer `index`: the groups of the
/// next GSMax or group-maxout layer, if channel-compatible; singletons
/// otherwise.
pub fn filter_groups(net: &Network, index: usize, filters: usize) -> Result<GroupSpec> {
    for layer in &net.layers()[index + 1..] {
        match layer.spec() {
            LayerSpec::Gsmax { groups, .. } | LayerSpec::GroupMaxout { groups } if groups.channels() == filters => {
                return Ok(groups.clone());
            }
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::SoftmaxXentHead => break,
            _ => {}
        }
    }
    GroupSpec::singletons(filters)
}

#[derive(Debug, Clone)]
pub struct FilterReport {
    pub image: Image,
    pub groups: GroupSpec,
    pub similarity: Option<SimilarityReport>,
}

/// Writes the filter grid of layer `index` to `out_path` as PPM. The
/// similarity report is included when there are at least two groups.
pub fn cmd_visualize_filters(net: &Network, index: usize, out_path: &Path) -> Result<FilterReport> {
    let layer = net
        .layers()
        .get(index)
        .ok_or_else(|| Error::config(format!("layer index {index} out of range ({} layers)", net.layers().len())))?;
    let (filters, tile) = layer_filters(layer)?;
    let groups = filter_groups(net, index, filters.len())?;
    let image = filter_grid(&filters, tile, &groups)?;
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_file(out_path, image.to_ppm())?;
    let similarity = if groups.group_count() >= 2 {
        let rows: Vec<Vec<f64>> = filters;
        Some(group_similarity_report(&Tensor::from_rows(&rows)?, &groups)?)
    } else {
        None
    };
    Ok(FilterReport { image, groups, similarity })
}

/// Writes `train.bin`/`test.bin` and their hierarchy sidecars.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<Datasets> {
    let data = load_datasets(&cfg.dataset)?;
    ensure_dir(out)?;
    data.train.save(out, "train")?;
    data.test.save(out, "test")?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(epochs: usize) -> RunConfig {
        format!(
            "[dataset]\nkind = synthetic\nsubs_per_super = 2,2\ndim = 4\nn_per_sub = 10\nn_test_per_sub = 5\n\
             [groups]\nsizes = 2,2\n[network]\nlayers = dense 8; relu; dense 4; gsmax; group_maxout; softmax_xent_head\n\
             [train]\nepochs = {epochs}\nbatch_size = 8\n"
        )
        .parse()
        .unwrap()
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let cfg = tiny_config(0);
        let dir = tempfile::tempdir().unwrap();
        let a = cmd_train(&cfg, dir.path(), false, 1).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap(), "epoch,train_loss,train_super_acc,test_super_acc,lr\n");
        let init = build_network(&cfg, false).unwrap();
        assert_eq!(Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap(), network_checkpoint(&init));
        assert!(a.dump.is_some());
    }

    #[test]
    fn dump_round_trip_and_discovery() {
        let cfg = tiny_config(2);
        let dir = tempfile::tempdir().unwrap();
        let a = cmd_train(&cfg, dir.path(), false, 1).unwrap();
        let back = ActivationDump::load(&dir.path().join(DUMP_FILE)).unwrap();
        assert_eq!(Some(&back), a.dump.as_ref());
        let r = cmd_discover(&cfg, dir.path(), None, false, false, 2).unwrap();
        let direct = discover(&back, None).unwrap();
        assert_eq!(r.summary.accuracy, direct.accuracy);
        assert_eq!(r.summary.chance, 0.5);
        assert!(dir.path().join(SUMMARY_FILE).exists());
    }

    #[test]
    fn holdout_split_is_a_partition() {
        let (a, b) = split_indices(10, Some((0.3, 7))).unwrap();
        assert_eq!(a.len(), 3);
        let mut all = [a, b].concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split_indices(1, Some((0.5, 0))).is_err());
    }

    #[test]
    fn visualizing_relu_is_a_config_error() {
        let cfg = tiny_config(0);
        let net = build_network(&cfg, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(cmd_visualize_filters(&net, 1, &dir.path().join("f.ppm")), Err(Error::Config(_))));
        // flat fan-in is not image-shaped either
        assert!(matches!(cmd_visualize_filters(&net, 0, &dir.path().join("f.ppm")), Err(Error::Config(_))));
    }
}
