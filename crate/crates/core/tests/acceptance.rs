//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so every line is shown.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use gsmax_core::boltzmann::{enumerate_posterior, gibbs_sample, tv_distance, BoltzmannMachine, Penalty};
use gsmax_core::config::RunConfig;
use gsmax_core::data::{read_cifar_binary, CifarVariant, Split};
use gsmax_core::discovery::{associate_neurons, chance_level, subclass_accuracy, Hierarchy};
use gsmax_core::gsmax::{gsmax_forward, gsmax_forward_with_ground};
use gsmax_core::oracle::{all_grad_cases, gradient_check, gsmax_vs_enumeration, reference_gsmax, GRADIENT_TOLERANCE};
use gsmax_core::pipeline::{self, ActivationDump, CHECKPOINT_FILE, DUMP_FILE, METRICS_FILE};
use gsmax_core::ppm::Image;
use gsmax_core::{Error, GroupSpec, GsmaxParams, Prng, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

#[derive(Default)]
struct Shared {
    /// Test-set dumps of the discovery runs, GSMax and control.
    discovery_dumps: Vec<(u64, ActivationDump, ActivationDump)>,
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn c01(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let s = gsmax_vs_enumeration(100, 2024, reference_gsmax).unwrap();
    let el = t.elapsed();
    let pass = s.max_abs_dev < 1e-12 && el < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "100 machines (H<=12, groups<=4): max |dp| = {:.3e}, max |d ground| = {:.3e}, {}",
            s.max_abs_dev,
            s.max_ground_dev,
            secs(el)
        ),
    )
}

fn c02(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mut rng = Prng::new(7);
    let m = BoltzmannMachine::random(4, &[2, 3], Penalty::Finite(-30.0), -1.0, 1.0, &mut rng).unwrap();
    let v = [1u8, 0, 1, 1];
    let finite = enumerate_posterior(&m, &v).unwrap();
    let symbolic = enumerate_posterior(&m.with_penalty(Penalty::NegInfinity).unwrap(), &v).unwrap();
    let limit_tv = finite.max_group_tv(&symbolic).unwrap();
    let burn_in = 1_000;
    let gibbs = gibbs_sample(&m, &v, 100_000 + burn_in, burn_in, &mut rng.fork(1)).unwrap();
    let gibbs_tv = gibbs
        .groups
        .iter()
        .zip(&finite.groups)
        .map(|(g, e)| tv_distance(&g.probs, &e.probs).unwrap())
        .fold(0.0_f64, f64::max);
    let forbidden = gibbs.max_forbidden_mass();
    let el = t.elapsed();
    let pass = limit_tv < 1e-4 && gibbs_tv < 0.01 && forbidden < 1e-4 && el < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "penalty -30: TV(finite, symbolic) = {limit_tv:.3e}; 1e5 Gibbs sweeps: TV = {gibbs_tv:.4}, forbidden freq = {forbidden:.1e}, {}",
            secs(el)
        ),
    )
}

fn c03(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    let mut all_ok = true;
    for (i, case) in all_grad_cases().into_iter().enumerate() {
        let s = gradient_check(case, 20, 900 + i as u64).unwrap();
        all_ok &= s.passed() && s.instances == 20;
        worst = worst.max(s.max_rel_err);
        lines.push(format!("{}={:.1e}", s.case, s.max_rel_err));
    }
    let el = t.elapsed();
    let pass = all_ok && worst < GRADIENT_TOLERANCE && el < Duration::from_secs(60);
    outcome(pass, format!("20 instances per case, worst rel err {worst:.2e} [{}], {}", lines.join(", "), secs(el)))
}

fn random_spec_and_logits() -> impl Strategy<Value = (Vec<usize>, u64, f64)> {
    (prop::collection::vec(1usize..6, 1..6), any::<u64>(), 0.1f64..5.0)
}

fn c04(_: &mut Shared) -> Outcome {
    let cases = 1_000;
    let cfg = || PropConfig { cases, failure_persistence: None, ..PropConfig::default() };
    let mut results = Vec::new();

    // normalization, including feature maps
    let r = TestRunner::new(cfg()).run(&(random_spec_and_logits(), 1usize..4), |((sizes, seed, t), spatial)| {
        let spec = GroupSpec::from_sizes(&sizes).unwrap();
        let mut rng = Prng::new(seed);
        let z = Tensor::uniform(&[3, spec.channels(), spatial, 2], -30.0, 30.0, &mut rng).unwrap();
        let (p, g) = gsmax_forward_with_ground(&z, &spec, &GsmaxParams::new(t).unwrap()).unwrap();
        for n in 0..3 {
            for s in 0..spatial * 2 {
                for (gi, members) in spec.groups().iter().enumerate() {
                    let sum: f64 = members.iter().map(|&c| p.data()[(n * spec.channels() + c) * spatial * 2 + s]).sum();
                    let ground = g.data()[(n * spec.group_count() + gi) * spatial * 2 + s];
                    prop_assert!((sum + ground - 1.0).abs() <= 1e-12);
                }
            }
        }
        Ok(())
    });
    results.push(("normalization", r.map_err(|e| e.to_string())));

    // cross-group independence
    let r = TestRunner::new(cfg()).run(&(random_spec_and_logits(), any::<u64>()), |((mut sizes, seed, t), pick)| {
        sizes.push(2);
        let spec = GroupSpec::from_sizes(&sizes).unwrap();
        let params = GsmaxParams::new(t).unwrap();
        let mut rng = Prng::new(seed);
        let z = Tensor::uniform(&[2, spec.channels()], -10.0, 10.0, &mut rng).unwrap();
        let g = (pick % spec.group_count() as u64) as usize;
        let mut z2 = z.clone();
        for n in 0..2 {
            for &c in spec.group(g) {
                z2.data_mut()[n * spec.channels() + c] += rng.uniform(-5.0, 5.0).unwrap();
            }
        }
        let (a, b) = (gsmax_forward(&z, &spec, &params).unwrap(), gsmax_forward(&z2, &spec, &params).unwrap());
        for n in 0..2 {
            for c in (0..spec.channels()).filter(|&c| spec.group_of(c) != g) {
                prop_assert_eq!(a.get2(n, c).to_bits(), b.get2(n, c).to_bits());
            }
        }
        Ok(())
    });
    results.push(("independence", r.map_err(|e| e.to_string())));

    // argmax preservation
    let r = TestRunner::new(cfg()).run(&random_spec_and_logits(), |(sizes, seed, t)| {
        let spec = GroupSpec::from_sizes(&sizes).unwrap();
        let mut rng = Prng::new(seed);
        let z = Tensor::uniform(&[4, spec.channels()], -10.0, 10.0, &mut rng).unwrap();
        let p = gsmax_forward(&z, &spec, &GsmaxParams::new(t).unwrap()).unwrap();
        for n in 0..4 {
            for members in spec.groups() {
                let arg = |v: &dyn Fn(usize) -> f64| {
                    members.iter().copied().max_by(|&a, &b| v(a).total_cmp(&v(b)).then(b.cmp(&a))).unwrap()
                };
                prop_assert_eq!(arg(&|c| z.get2(n, c)), arg(&|c| p.get2(n, c)));
            }
        }
        Ok(())
    });
    results.push(("argmax", r.map_err(|e| e.to_string())));

    // temperature monotonicity: a winner that also beats the ground state
    // (logit 0) gains probability as T decreases
    let r = TestRunner::new(cfg()).run(
        &(prop::collection::vec(-5.0f64..5.0, 1..6), 0.05f64..3.0, 0.05f64..3.0, 0.1f64..5.0),
        |(mut z, t1, t2, lead)| {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assume!(hi - lo > 1e-3);
            let top = z.iter().copied().fold(0.0_f64, f64::max);
            z[0] = top + lead;
            let spec = GroupSpec::uniform(1, z.len()).unwrap();
            let zt = Tensor::new(vec![1, z.len()], z).unwrap();
            let sharp = gsmax_forward(&zt, &spec, &GsmaxParams::new(lo).unwrap()).unwrap().data()[0];
            let soft = gsmax_forward(&zt, &spec, &GsmaxParams::new(hi).unwrap()).unwrap().data()[0];
            prop_assert!(sharp > soft || (sharp == 1.0 && soft == 1.0), "T {lo}: {sharp}, T {hi}: {soft}");
            Ok(())
        },
    );
    results.push(("temperature", r.map_err(|e| e.to_string())));

    let pass = results.iter().all(|(_, r)| r.is_ok());
    let detail = results
        .iter()
        .map(|(name, r)| match r {
            Ok(()) => format!("{name} ok"),
            Err(e) => format!("{name} FAILED: {e}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, format!("{cases} cases each: {detail}"))
}

fn synthetic_config() -> RunConfig {
    "name = acceptance\n[network]\npreset = synthetic-default\n".parse().unwrap()
}

fn c05(shared: &mut Shared) -> Outcome {
    let t = Instant::now();
    let chance = 1.0 / 3.0;
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in [0u64, 1, 2] {
        let mut cfg = synthetic_config();
        cfg.train.seed = seed;
        let dir = tempfile::tempdir().unwrap();
        let g = pipeline::cmd_train(&cfg, dir.path(), false, 1).unwrap();
        let c = pipeline::cmd_train(&cfg, dir.path(), true, 1).unwrap();
        let (gd, cd) = (g.dump.unwrap(), c.dump.unwrap());
        let ga = pipeline::discover(&gd, None).unwrap();
        let ca = pipeline::discover(&cd, None).unwrap();
        let super_acc = g.result.metrics.last().map_or(f64::NAN, |m| m.test_super_acc);
        let ok = ga.accuracy >= chance + 0.20 && ga.accuracy > ca.accuracy;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: gsmax {:.4} vs control {:.4} (super acc {super_acc:.3})",
            ga.accuracy, ca.accuracy
        ));
        shared.discovery_dumps.push((seed, gd, cd));
    }
    outcome(pass, format!("need >= {:.4} and > control; {}; {}", chance + 0.20, parts.join("; "), secs(t.elapsed())))
}

fn c06(_: &mut Shared) -> Outcome {
    let canonical = chance_level(&CifarVariant::Cifar100.hierarchy());
    let uniform = chance_level(&Hierarchy::uniform(20, 5).unwrap());
    outcome(canonical == 0.2 && uniform == 0.2, format!("CIFAR-100 20x5 chance = {canonical:.4} (exact: {})", canonical == 0.2))
}

fn self_consistent(acts: &Tensor, sups: &[usize], subs: &[usize], h: &Hierarchy, neurons: &GroupSpec) -> (bool, f64) {
    let table = associate_neurons(acts, sups, subs, h, neurons).unwrap();
    let acc = subclass_accuracy(acts, sups, subs, &table, h, neurons).unwrap();
    let bound = table.modal_vote_total() as f64 / acts.rows() as f64;
    (acc == bound, acc)
}

fn c07(shared: &mut Shared) -> Outcome {
    let mut checked = 0;
    let mut ok = true;
    // one-hot fixture and random fixtures
    let h = Hierarchy::uniform(2, 2).unwrap();
    let neurons = GroupSpec::uniform(2, 2).unwrap();
    let subs = vec![0, 1, 2, 3, 0, 3, 1, 2];
    let sups: Vec<usize> = subs.iter().map(|&s| h.super_of(s)).collect();
    let rows: Vec<Vec<f64>> = subs.iter().map(|&s| (0..4).map(|c| f64::from(c == s)).collect()).collect();
    let (same, acc) = self_consistent(&Tensor::from_rows(&rows).unwrap(), &sups, &subs, &h, &neurons);
    ok &= same && acc == 1.0;
    checked += 1;
    let mut rng = Prng::new(77);
    for _ in 0..50 {
        let h = Hierarchy::from_counts(&[2, 3, 4]).unwrap();
        let neurons = GroupSpec::from_sizes(&[3, 2, 4]).unwrap();
        let n = 40;
        let subs: Vec<usize> = (0..n).map(|_| rng.below(h.sub_count() as u64) as usize).collect();
        let sups: Vec<usize> = subs.iter().map(|&s| h.super_of(s)).collect();
        let acts = Tensor::uniform(&[n, neurons.channels()], -1.0, 1.0, &mut rng).unwrap();
        ok &= self_consistent(&acts, &sups, &subs, &h, &neurons).0;
        checked += 1;
    }
    // synthetic training runs
    for (_, g, c) in &shared.discovery_dumps {
        for d in [g, c] {
            ok &= self_consistent(&d.activations, &d.super_labels, &d.sub_labels, &d.hierarchy, &d.neurons).0;
            checked += 1;
        }
    }
    let runs = shared.discovery_dumps.len() * 2;
    outcome(ok && runs == 6, format!("accuracy == sum(modal votes)/N exactly on {checked} tables ({runs} from synthetic runs)"))
}

fn run_files(dir: &Path) -> Vec<Vec<u8>> {
    [METRICS_FILE, CHECKPOINT_FILE, DUMP_FILE].iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
}

fn c08(_: &mut Shared) -> Outcome {
    let mut cfg = synthetic_config();
    cfg.train.seed = 11;
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    pipeline::cmd_train(&cfg, dirs[0].path(), false, 1).unwrap();
    pipeline::cmd_train(&cfg, dirs[1].path(), false, 1).unwrap();
    pipeline::cmd_train(&cfg, dirs[2].path(), false, 4).unwrap();
    let runs: Vec<_> = dirs.iter().map(|d| run_files(d.path())).collect();
    let rerun = runs[0] == runs[1];
    let workers = runs[0] == runs[2];
    outcome(
        rerun && workers,
        format!(
            "metrics/checkpoint/dump byte-identical: rerun {rerun}, --workers 4 {workers} ({} checkpoint bytes)",
            runs[0][1].len()
        ),
    )
}

fn c09(_: &mut Shared) -> Outcome {
    let cfg: RunConfig = "[network]\npreset = edges-default\n".parse().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = pipeline::cmd_train(&cfg, dir.path(), false, 1).unwrap();
    let path = dir.path().join("filters.ppm");
    let r = pipeline::cmd_visualize_filters(&a.result.network, 0, &path).unwrap();
    let img = Image::from_ppm(&std::fs::read(&path).unwrap()).unwrap();
    let groups_of_two = r.groups.groups().iter().all(|g| g.len() == 2);
    let sim = r.similarity.expect("four groups give a report");
    let finite = sim.within.is_some_and(f64::is_finite) && sim.across.is_finite();
    let final_acc = a.result.metrics.last().map_or(f64::NAN, |m| m.train_super_acc);
    outcome(
        groups_of_two && finite && img == r.image,
        format!(
            "edge orbits trained (train super acc {final_acc:.3}); within |cos| {:.4}, across |cos| {:.4}; PPM {}x{}",
            sim.within.unwrap_or(f64::NAN),
            sim.across,
            img.width(),
            img.height()
        ),
    )
}

fn cifar_fixture(variant: CifarVariant) -> (Vec<u8>, Vec<(usize, usize)>) {
    let labels = match variant {
        CifarVariant::Cifar10 => vec![(0, 3), (0, 9)],
        CifarVariant::Cifar100 => {
            let h = variant.hierarchy();
            vec![(h.super_of(0), 0), (h.super_of(99), 99)]
        }
    };
    let mut bytes = Vec::new();
    for (r, &(sup, sub)) in labels.iter().enumerate() {
        if variant == CifarVariant::Cifar100 {
            bytes.push(sup as u8);
        }
        bytes.push(sub as u8);
        bytes.extend((0..3072).map(|i| ((i * 7 + r * 13) % 256) as u8));
    }
    (bytes, labels)
}

fn c10(_: &mut Shared) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for variant in [CifarVariant::Cifar10, CifarVariant::Cifar100] {
        let (bytes, labels) = cifar_fixture(variant);
        let path = dir.path().join(format!("{variant:?}.bin"));
        std::fs::write(&path, &bytes).unwrap();
        let d = read_cifar_binary(&path, variant, Split::Train).unwrap();
        let header = variant.record_size() - 3072;
        let pixels_exact = (0..2).all(|r| {
            let rec = &bytes[r * variant.record_size() + header..(r + 1) * variant.record_size()];
            d.samples().row(r).iter().zip(rec).all(|(&x, &b)| x == f64::from(b) / 255.0 && (x * 255.0).round() as u8 == b)
        });
        let labels_exact = labels.iter().enumerate().all(|(r, &(sup, sub))| d.super_labels()[r] == sup && d.sub_labels()[r] == sub);
        ok &= pixels_exact && labels_exact && d.len() == 2;

        let mut malformed = vec![bytes[..bytes.len() - 1].to_vec()];
        let mut bad_label = bytes.clone();
        bad_label[header - 1] = if variant == CifarVariant::Cifar10 { 10 } else { 100 };
        malformed.push(bad_label);
        if variant == CifarVariant::Cifar100 {
            let mut mismatch = bytes.clone();
            mismatch[0] = (labels[0].0 as u8 + 1) % 20;
            malformed.push(mismatch);
        }
        let rejected = malformed.iter().enumerate().all(|(i, m)| {
            let p = dir.path().join(format!("{variant:?}-bad{i}.bin"));
            std::fs::write(&p, m).unwrap();
            matches!(read_cifar_binary(&p, variant, Split::Test), Err(Error::Format(_)))
        });
        ok &= rejected;
        notes.push(format!("{variant:?}: round trip {}, {} malformed rejected {}", pixels_exact && labels_exact, malformed.len(), rejected));
    }
    outcome(ok, notes.join("; "))
}

type Criterion = fn(&mut Shared) -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("C1 oracle equivalence", c01),
        ("C2 -inf limit and Gibbs", c02),
        ("C3 gradient certification", c03),
        ("C4 GSMax invariants", c04),
        ("C5 sub-class discovery", c05),
        ("C6 chance level", c06),
        ("C7 association self-consistency", c07),
        ("C8 determinism", c08),
        ("C9 grouped-filter analysis", c09),
        ("C10 CIFAR readers", c10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared::default();
    let mut failed = Vec::new();
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(|| f(&mut shared)));
        let o = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}
