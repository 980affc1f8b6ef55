//! Gaussian clusters with a two-level hierarchy: super-class centers on a
//! sphere, sub-class centers on smaller spheres around them.

use serde::{Deserialize, Serialize};

use super::{HierarchicalDataset, Split};
use crate::discovery::Hierarchy;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub subs_per_super: Vec<usize>,
    pub dim: usize,
    pub super_separation: f64,
    pub sub_separation: f64,
    pub noise_sigma: f64,
    pub n_per_sub: usize,
    pub n_test_per_sub: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            subs_per_super: vec![3; 4],
            dim: 32,
            super_separation: 10.0,
            sub_separation: 4.0,
            noise_sigma: 1.0,
            n_per_sub: 300,
            n_test_per_sub: 150,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn supers(&self) -> usize {
        self.subs_per_super.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.subs_per_super.is_empty() || self.subs_per_super.contains(&0) {
            return Err(Error::config("every super-class needs at least one sub-class"));
        }
        if self.dim == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        if !(self.super_separation > self.sub_separation && self.sub_separation > 0.0) {
            return Err(Error::config(format!(
                "need super_separation > sub_separation > 0, got {} and {}",
                self.super_separation, self.sub_separation
            )));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma must be positive"));
        }
        if self.n_per_sub == 0 || self.n_test_per_sub == 0 {
            return Err(Error::config("need at least one train and one test sample per sub-class"));
        }
        Ok(())
    }

    pub fn hierarchy(&self) -> Result<Hierarchy> {
        Hierarchy::from_counts(&self.subs_per_super)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: HierarchicalDataset,
    pub test: HierarchicalDataset,
    /// True sub-class centers, `[sub_count, dim]`.
    pub sub_centers: Tensor,
}

fn on_sphere(dim: usize, radius: f64, rng: &mut Prng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x * radius / norm).collect();
        }
    }
}

fn draw_split(
    spec: &SyntheticSpec,
    h: &Hierarchy,
    centers: &Tensor,
    per_sub: usize,
    split: Split,
    rng: &mut Prng,
) -> Result<HierarchicalDataset> {
    let mut data = Vec::with_capacity(h.sub_count() * per_sub * spec.dim);
    let (mut sups, mut subs) = (Vec::new(), Vec::new());
    for sub in 0..h.sub_count() {
        for _ in 0..per_sub {
            data.extend(centers.row(sub).iter().map(|c| c + spec.noise_sigma * rng.normal()));
            sups.push(h.super_of(sub));
            subs.push(sub);
        }
    }
    let samples = Tensor::new(vec![subs.len(), spec.dim], data)?;
    HierarchicalDataset::new(samples, sups, subs, h.clone(), split)
}

/// Train and test splits drawn i.i.d. from the same mixture; samples are
/// ordered by sub-class. A pure function of `spec`.
pub fn gen_hierarchical_gaussians(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let h = spec.hierarchy()?;
    let mut rng = Prng::new(spec.seed);
    let mut centers = Vec::with_capacity(h.sub_count() * spec.dim);
    for &count in &spec.subs_per_super {
        let sup = on_sphere(spec.dim, spec.super_separation, &mut rng);
        for _ in 0..count {
            let off = on_sphere(spec.dim, spec.sub_separation, &mut rng);
            centers.extend(sup.iter().zip(&off).map(|(a, b)| a + b));
        }
    }
    let sub_centers = Tensor::new(vec![h.sub_count(), spec.dim], centers)?;
    let train = draw_split(spec, &h, &sub_centers, spec.n_per_sub, Split::Train, &mut rng.fork(1))?;
    let test = draw_split(spec, &h, &sub_centers, spec.n_test_per_sub, Split::Test, &mut rng.fork(2))?;
    Ok(SyntheticData { train, test, sub_centers })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fraction of samples whose nearest true sub-class center is their own.
    fn nearest_center_accuracy(d: &HierarchicalDataset, centers: &Tensor) -> f64 {
        let mut correct = 0;
        for i in 0..d.len() {
            let x = d.samples().row(i);
            let best = (0..centers.rows())
                .map(|k| (k, centers.row(k).iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum::<f64>()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            correct += usize::from(best == d.sub_labels()[i]);
        }
        correct as f64 / d.len() as f64
    }

    #[test]
    fn default_spec_is_separable_by_true_centers() {
        let data = gen_hierarchical_gaussians(&SyntheticSpec::default()).unwrap();
        assert_eq!(data.train.len(), 3600);
        assert_eq!(data.test.len(), 1800);
        let acc = nearest_center_accuracy(&data.test, &data.sub_centers);
        assert!(acc >= 0.95, "nearest-center accuracy {acc}");
    }

    #[test]
    fn vanishing_noise_is_perfectly_separable() {
        let spec = SyntheticSpec { noise_sigma: 1e-6, n_per_sub: 20, n_test_per_sub: 20, ..Default::default() };
        let data = gen_hierarchical_gaussians(&spec).unwrap();
        assert_eq!(nearest_center_accuracy(&data.train, &data.sub_centers), 1.0);
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = SyntheticSpec { n_per_sub: 10, n_test_per_sub: 5, seed: 3, ..Default::default() };
        let a = gen_hierarchical_gaussians(&spec).unwrap();
        let b = gen_hierarchical_gaussians(&spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = gen_hierarchical_gaussians(&SyntheticSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a.train.samples(), c.train.samples());
    }

    #[test]
    fn degenerate_specs_rejected() {
        let bad = [
            SyntheticSpec { sub_separation: 10.0, ..Default::default() },
            SyntheticSpec { sub_separation: 0.0, ..Default::default() },
            SyntheticSpec { noise_sigma: 0.0, ..Default::default() },
            SyntheticSpec { subs_per_super: vec![3, 0], ..Default::default() },
        ];
        for spec in bad {
            assert!(matches!(gen_hierarchical_gaussians(&spec), Err(Error::Config(_))));
        }
    }
}
