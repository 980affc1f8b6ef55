//! Run configuration: a sectioned `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! name = demo
//!
//! [dataset]
//! kind = synthetic            # synthetic | rotated_edges | cifar10 | cifar100
//! subs_per_super = 3,3,3,3
//!
//! [network]
//! preset = synthetic-default  # or: layers = dense 64; relu; dense 12; gsmax; ...
//!
//! [groups]
//! sizes = 3,3,3,3             # or: indices = 0 1 2 | 3 4 5
//!
//! [gsmax]
//! temperature = 0.5
//!
//! [train]
//! epochs = 50
//!
//! [output]
//! dir = runs/demo
//!
//! [mode]
//! control = false
//! holdout = false
//! workers = 1
//! ```
//!
//! Unknown sections or keys, duplicates, and invalid values are rejected
//! with the offending line number. Preset values are overridden by explicit
//! keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{CifarVariant, SyntheticSpec};
use crate::error::{Error, Result};
use crate::gsmax::{GroupSpec, GsmaxParams};
use crate::nn::conv::Padding;
use crate::nn::layer::LayerSpec;
use crate::nn::network::{infer_shapes, parse_arch_string};
use crate::nn::optim::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct EdgesSpec {
    pub n_per_orbit: usize,
    pub n_test_per_orbit: usize,
    pub patch_size: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for EdgesSpec {
    fn default() -> Self {
        EdgesSpec { n_per_orbit: 100, n_test_per_orbit: 25, patch_size: 7, noise_sigma: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CifarSpec {
    pub variant: CifarVariant,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub gcn: bool,
    /// Random translation range for training augmentation; 0 disables it.
    pub augment_shift: usize,
    pub augment_flip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    RotatedEdges(EdgesSpec),
    Cifar(CifarSpec),
}

impl DatasetConfig {
    /// Per-sample input shape.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            DatasetConfig::Synthetic(s) => vec![s.dim],
            DatasetConfig::RotatedEdges(e) => vec![1, e.patch_size, e.patch_size],
            DatasetConfig::Cifar(_) => vec![3, 32, 32],
        }
    }
}

/// Which label set drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Super,
    Sub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModeFlags {
    pub control: bool,
    pub holdout: bool,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    /// Layer stack with the GSMax layers present; see [`RunConfig::network_specs`].
    pub layers: Vec<LayerSpec>,
    pub groups: GroupSpec,
    pub gsmax: GsmaxParams,
    pub train: TrainConfig,
    pub target: Target,
    /// Fraction of the test set used for association in holdout mode.
    pub holdout_fraction: f64,
    pub output_dir: PathBuf,
    pub mode: ModeFlags,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    /// The layer stack to build. The control run drops every GSMax layer,
    /// i.e. replaces it with the identity.
    pub fn network_specs(&self, control: bool) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .filter(|l| !(control && matches!(l, LayerSpec::Gsmax { .. })))
            .cloned()
            .collect()
    }
}

/// A named bundle of defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    SyntheticDefault,
    EdgesDefault,
    MaxoutCifar10,
    WrnCifar100Head,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::SyntheticDefault, Preset::EdgesDefault, Preset::MaxoutCifar10, Preset::WrnCifar100Head];

    pub fn name(self) -> &'static str {
        match self {
            Preset::SyntheticDefault => "synthetic-default",
            Preset::EdgesDefault => "edges-default",
            Preset::MaxoutCifar10 => "maxout-cifar10",
            Preset::WrnCifar100Head => "wrn-cifar100-head",
        }
    }

    fn layers(self) -> &'static str {
        match self {
            Preset::SyntheticDefault => "dense 64; relu; dense 12; gsmax; group_maxout; softmax_xent_head",
            Preset::EdgesDefault => "conv2d 8 7 1 valid; gsmax; group_maxout; dense 2; softmax_xent_head",
            Preset::MaxoutCifar10 => concat!(
                "dropout 0.8; ",
                "conv2d 192 8 1 same; maxpool2d 4 2; gsmax size=2; dropout 0.5; ",
                "conv2d 385 8 1 same; maxpool2d 4 2; gsmax size=11; dropout 0.5; ",
                "conv2d 384 8 1 same; maxpool2d 2 2; gsmax size=8; dropout 0.5; ",
                "dense 2500; gsmax size=50; dropout 0.5; ",
                "dense 10; softmax_xent_head"
            ),
            Preset::WrnCifar100Head => concat!(
                "conv2d 16 3 1 same; relu; maxpool2d 2 2; conv2d 32 3 1 same; relu; maxpool2d 2 2; ",
                "dense 100; gsmax; group_maxout; softmax_xent_head"
            ),
        }
    }

    fn groups(self) -> GroupSpec {
        match self {
            Preset::SyntheticDefault => GroupSpec::uniform(4, 3),
            Preset::EdgesDefault => GroupSpec::uniform(4, 2),
            // per-layer sizes are given inline
            Preset::MaxoutCifar10 => GroupSpec::uniform(1, 2),
            Preset::WrnCifar100Head => GroupSpec::uniform(20, 5),
        }
        .expect("static group spec")
    }

    fn train(self) -> (TrainConfig, Target) {
        let base = TrainConfig::default();
        match self {
            Preset::SyntheticDefault => (
                TrainConfig { base_lr: 0.1, lr_decay_factor: 0.1, lr_decay_every_epochs: 25, momentum: 0.5, epochs: 50, batch_size: 32, ..base },
                Target::Super,
            ),
            Preset::EdgesDefault => (TrainConfig { base_lr: 0.5, epochs: 20, batch_size: 16, ..base }, Target::Super),
            Preset::MaxoutCifar10 => (
                TrainConfig { base_lr: 1.0, lr_decay_factor: 0.1, lr_decay_every_epochs: 25, momentum: 0.5, weight_decay: 5e-4, ..base },
                Target::Sub,
            ),
            Preset::WrnCifar100Head => (TrainConfig { base_lr: 0.1, momentum: 0.5, ..base }, Target::Super),
        }
    }

    fn dataset(self) -> &'static str {
        match self {
            Preset::SyntheticDefault => "synthetic",
            Preset::EdgesDefault => "rotated_edges",
            Preset::MaxoutCifar10 => "cifar10",
            Preset::WrnCifar100Head => "cifar100",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Keys of one section, consumed as they are read so leftovers can be
/// reported.
#[derive(Debug, Default)]
struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

fn at(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::config(format!("line {line}: {msg}"))
}

impl Section {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)
            .map(|e| e.value.parse::<T>().map_err(|err| at(e.line, format!("{key}: {err}"))))
            .transpose()
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.parse(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list(&mut self, key: &str) -> Result<Option<(Vec<usize>, usize)>> {
        self.take(key)
            .map(|e| {
                e.value
                    .split(',')
                    .map(|t| t.trim().parse::<usize>().map_err(|err| at(e.line, format!("{key}: {err}"))))
                    .collect::<Result<Vec<_>>>()
                    .map(|v| (v, e.line))
            })
            .transpose()
    }

    fn finish(self, name: &str) -> Result<()> {
        match self.entries.into_iter().next() {
            Some((key, e)) => Err(at(e.line, format!("unknown key {key:?} in [{name}]"))),
            None => Ok(()),
        }
    }
}

const SECTIONS: [&str; 8] = ["", "dataset", "network", "groups", "gsmax", "train", "output", "mode"];

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    sections.insert(String::new(), Section::default());
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| at(line, format!("malformed section header {content:?}")))?
                .trim();
            if !SECTIONS.contains(&name) || name.is_empty() {
                return Err(at(line, format!("unknown section [{name}]")));
            }
            if sections.contains_key(name) {
                return Err(at(line, format!("duplicate section [{name}]")));
            }
            sections.insert(name.to_string(), Section { line, entries: BTreeMap::new() });
            current = name.to_string();
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| at(line, format!("expected 'key = value', got {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(at(line, "empty key"));
        }
        let section = sections.get_mut(&current).expect("current section exists");
        if let Some(prev) = section.entries.get(key) {
            return Err(at(line, format!("duplicate key {key:?} (first set on line {})", prev.line)));
        }
        section.entries.insert(key.to_string(), Entry { value: value.to_string(), line });
    }
    Ok(sections)
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true/false, got {s:?}")),
    }
}

/// Wrapper so booleans accept yes/no/1/0 as well.
struct Flag(bool);

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_bool(s).map(Flag)
    }
}

fn parse_dataset(kind: &str, line: usize, sec: &mut Section) -> Result<DatasetConfig> {
    match kind {
        "synthetic" => {
            let mut s = SyntheticSpec::default();
            if let Some((subs, _)) = sec.list("subs_per_super")? {
                s.subs_per_super = subs;
            }
            sec.set("dim", &mut s.dim)?;
            sec.set("super_separation", &mut s.super_separation)?;
            sec.set("sub_separation", &mut s.sub_separation)?;
            sec.set("noise_sigma", &mut s.noise_sigma)?;
            sec.set("n_per_sub", &mut s.n_per_sub)?;
            sec.set("n_test_per_sub", &mut s.n_test_per_sub)?;
            sec.set("seed", &mut s.seed)?;
            s.validate().map_err(|e| at(line, e))?;
            Ok(DatasetConfig::Synthetic(s))
        }
        "rotated_edges" => {
            let mut e = EdgesSpec::default();
            sec.set("n_per_orbit", &mut e.n_per_orbit)?;
            sec.set("n_test_per_orbit", &mut e.n_test_per_orbit)?;
            sec.set("patch_size", &mut e.patch_size)?;
            sec.set("noise_sigma", &mut e.noise_sigma)?;
            sec.set("seed", &mut e.seed)?;
            if e.patch_size < 3 || e.n_per_orbit == 0 || e.n_test_per_orbit == 0 {
                return Err(at(line, "rotated_edges needs patch_size >= 3 and non-empty splits"));
            }
            if !(e.noise_sigma >= 0.0 && e.noise_sigma.is_finite()) {
                return Err(at(line, "noise_sigma must be finite and >= 0"));
            }
            Ok(DatasetConfig::RotatedEdges(e))
        }
        "cifar10" | "cifar100" => {
            let variant = if kind == "cifar10" { CifarVariant::Cifar10 } else { CifarVariant::Cifar100 };
            let path = |sec: &mut Section, key: &str| -> Result<PathBuf> {
                sec.take(key)
                    .map(|e| PathBuf::from(e.value))
                    .ok_or_else(|| at(line, format!("{kind} dataset needs {key}")))
            };
            let train_path = path(sec, "train_path")?;
            let test_path = path(sec, "test_path")?;
            let gcn = sec.parse::<Flag>("gcn")?.is_none_or(|f| f.0);
            let augment_flip = sec.parse::<Flag>("augment_flip")?.is_some_and(|f| f.0);
            let augment_shift = sec.parse("augment_shift")?.unwrap_or(0);
            Ok(DatasetConfig::Cifar(CifarSpec { variant, train_path, test_path, gcn, augment_shift, augment_flip }))
        }
        other => Err(at(line, format!("unknown dataset kind {other:?}"))),
    }
}

fn parse_padding(tok: &str) -> std::result::Result<Padding, String> {
    match tok {
        "same" => Ok(Padding::Same),
        "valid" => Ok(Padding::Valid),
        _ => Err(format!("padding must be same or valid, got {tok:?}")),
    }
}

/// Parses one `;`-separated layer token. `gsmax` and `group_maxout` use the
/// `[groups]` spec unless given `size=K`, which splits the layer's input
/// channels into uniform groups of `K`.
fn parse_layer(tok: &str, input: &[usize], groups: &GroupSpec, params: &GsmaxParams) -> std::result::Result<LayerSpec, String> {
    let words: Vec<&str> = tok.split_whitespace().collect();
    let num = |i: usize| -> std::result::Result<usize, String> {
        words
            .get(i)
            .ok_or_else(|| format!("{tok:?}: missing argument {i}"))?
            .parse::<usize>()
            .map_err(|e| format!("{tok:?}: {e}"))
    };
    let arity = |n: usize| -> std::result::Result<(), String> {
        if words.len() == n {
            Ok(())
        } else {
            Err(format!("{tok:?}: expected {} argument(s)", n - 1))
        }
    };
    let group_arg = || -> std::result::Result<GroupSpec, String> {
        match words.get(1) {
            None => Ok(groups.clone()),
            Some(w) => {
                let k: usize = w
                    .strip_prefix("size=")
                    .ok_or_else(|| format!("{tok:?}: expected size=K"))?
                    .parse()
                    .map_err(|e| format!("{tok:?}: {e}"))?;
                let c = input.first().copied().unwrap_or(0);
                if k == 0 || c % k != 0 {
                    return Err(format!("{tok:?}: group size {k} does not divide {c} channels"));
                }
                GroupSpec::uniform(c / k, k).map_err(|e| e.to_string())
            }
        }
    };
    let spec = match words.first().copied() {
        Some("dense") => {
            arity(2)?;
            LayerSpec::Dense { units: num(1)? }
        }
        Some("conv2d") => {
            if !(4..=5).contains(&words.len()) {
                return Err(format!("{tok:?}: expected conv2d FILTERS KERNEL STRIDE [same|valid]"));
            }
            let padding = words.get(4).map_or(Ok(Padding::Same), |w| parse_padding(w))?;
            LayerSpec::Conv2d { filters: num(1)?, kernel: num(2)?, stride: num(3)?, padding }
        }
        Some("maxpool2d") => {
            arity(3)?;
            LayerSpec::MaxPool2d { kernel: num(1)?, stride: num(2)? }
        }
        Some("relu") => {
            arity(1)?;
            LayerSpec::Relu
        }
        Some("dropout") => {
            arity(2)?;
            let keep: f64 = words[1].parse().map_err(|e| format!("{tok:?}: {e}"))?;
            LayerSpec::Dropout { keep }
        }
        Some("gsmax") if words.len() <= 2 => LayerSpec::Gsmax { groups: group_arg()?, params: *params },
        Some("group_maxout") if words.len() <= 2 => LayerSpec::GroupMaxout { groups: group_arg()? },
        Some("softmax_xent_head") => {
            arity(1)?;
            LayerSpec::SoftmaxXentHead
        }
        _ => return Err(format!("unknown layer {tok:?}")),
    };
    spec.output_shape(input).map_err(|e| e.to_string())?;
    Ok(spec)
}

fn parse_layers(text: &str, input: &[usize], groups: &GroupSpec, params: &GsmaxParams) -> std::result::Result<Vec<LayerSpec>, String> {
    let mut shape = input.to_vec();
    let mut out = Vec::new();
    for tok in text.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let spec = parse_layer(tok, &shape, groups, params)?;
        shape = spec.output_shape(&shape).map_err(|e| e.to_string())?;
        out.push(spec);
    }
    infer_shapes(input, &out).map_err(|e| e.to_string())?;
    Ok(out)
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut sections = split_sections(text)?;
        let mut section = |name: &str| sections.remove(name).unwrap_or_default();
        let mut top = section("");
        let mut dataset_sec = section("dataset");
        let mut network = section("network");
        let mut groups_sec = section("groups");
        let mut gsmax_sec = section("gsmax");
        let mut train_sec = section("train");
        let mut output = section("output");
        let mut mode_sec = section("mode");

        let name = top.take("name").map_or_else(|| "run".to_string(), |e| e.value);
        top.finish("top level")?;

        let preset = network
            .take("preset")
            .map(|e| e.value.parse::<Preset>().map_err(|err| at(e.line, err)))
            .transpose()?;

        let (kind, kind_line) = match dataset_sec.take("kind") {
            Some(e) => (e.value, e.line),
            None => match preset {
                Some(p) => (p.dataset().to_string(), dataset_sec.line),
                None => return Err(at(dataset_sec.line, "[dataset] needs kind (or a [network] preset)")),
            },
        };
        let dataset = parse_dataset(&kind, kind_line, &mut dataset_sec)?;
        dataset_sec.finish("dataset")?;

        let mut groups = preset.map_or_else(|| GroupSpec::uniform(1, 1).expect("trivial spec"), Preset::groups);
        let sizes = groups_sec.take("sizes");
        let indices = groups_sec.take("indices");
        match (sizes, indices) {
            (Some(a), Some(b)) => return Err(at(a.line.max(b.line), "[groups] takes sizes or indices, not both")),
            (Some(e), None) => groups = format!("sizes {}", e.value).parse().map_err(|err| at(e.line, err))?,
            (None, Some(e)) => groups = format!("indices {}", e.value).parse().map_err(|err| at(e.line, err))?,
            (None, None) => {}
        }
        groups_sec.finish("groups")?;

        let mut temperature = if preset.is_some() { 0.5 } else { 1.0 };
        let t_line = gsmax_sec.entries.get("temperature").map_or(gsmax_sec.line, |e| e.line);
        gsmax_sec.set("temperature", &mut temperature)?;
        let gsmax = GsmaxParams::new(temperature).map_err(|e| at(t_line, e))?;
        gsmax_sec.finish("gsmax")?;

        let input_shape = dataset.input_shape();
        let layers = match (network.take("layers"), network.take("arch")) {
            (Some(a), Some(b)) => return Err(at(a.line.max(b.line), "[network] takes layers or arch, not both")),
            (Some(e), None) => parse_layers(&e.value, &input_shape, &groups, &gsmax).map_err(|err| at(e.line, err))?,
            (None, Some(e)) => {
                let specs = parse_arch_string(&e.value).map_err(|err| at(e.line, err))?;
                infer_shapes(&input_shape, &specs).map_err(|err| at(e.line, err))?;
                specs
            }
            (None, None) => match preset {
                Some(p) => parse_layers(p.layers(), &input_shape, &groups, &gsmax).map_err(|err| at(network.line, err))?,
                None => return Err(at(network.line, "[network] needs preset, layers, or arch")),
            },
        };
        network.finish("network")?;

        let (mut train, mut target) = preset.map_or_else(|| (TrainConfig::default(), Target::Super), Preset::train);
        train_sec.set("base_lr", &mut train.base_lr)?;
        train_sec.set("lr_decay_factor", &mut train.lr_decay_factor)?;
        train_sec.set("lr_decay_every_epochs", &mut train.lr_decay_every_epochs)?;
        train_sec.set("momentum", &mut train.momentum)?;
        train_sec.set("weight_decay", &mut train.weight_decay)?;
        train_sec.set("epochs", &mut train.epochs)?;
        train_sec.set("batch_size", &mut train.batch_size)?;
        train_sec.set("seed", &mut train.seed)?;
        if let Some(e) = train_sec.take("target") {
            target = match e.value.as_str() {
                "super" => Target::Super,
                "sub" => Target::Sub,
                other => return Err(at(e.line, format!("target must be super or sub, got {other:?}"))),
            };
        }
        train.validate().map_err(|e| at(train_sec.line, e))?;
        train_sec.finish("train")?;

        let output_dir = output.take("dir").map_or_else(|| PathBuf::from("runs").join(&name), |e| PathBuf::from(e.value));
        output.finish("output")?;

        let mut mode = ModeFlags { workers: 1, ..ModeFlags::default() };
        if let Some(f) = mode_sec.parse::<Flag>("control")? {
            mode.control = f.0;
        }
        if let Some(f) = mode_sec.parse::<Flag>("holdout")? {
            mode.holdout = f.0;
        }
        let w_line = mode_sec.entries.get("workers").map_or(mode_sec.line, |e| e.line);
        mode_sec.set("workers", &mut mode.workers)?;
        if mode.workers == 0 {
            return Err(at(w_line, "workers must be at least 1"));
        }
        let mut holdout_fraction = 0.5;
        let h_line = mode_sec.entries.get("holdout_fraction").map_or(mode_sec.line, |e| e.line);
        mode_sec.set("holdout_fraction", &mut holdout_fraction)?;
        if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
            return Err(at(h_line, "holdout_fraction must be in (0, 1)"));
        }
        mode_sec.finish("mode")?;

        Ok(RunConfig { name, dataset, layers, groups, gsmax, train, target, holdout_fraction, output_dir, mode })
    }
}
