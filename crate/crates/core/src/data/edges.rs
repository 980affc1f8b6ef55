//! Step-edge prototypes and their orbits under 90° rotations.

use super::{HierarchicalDataset, Split};
use crate::discovery::Hierarchy;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Rotates a square patch counterclockwise by `r * 90°` (r taken mod 4) by
/// permuting indices: one step maps `out[i][j] = in[j][n-1-i]`.
pub fn rotate_patch90(patch: &Tensor, r: i64) -> Result<Tensor> {
    let n = match *patch.shape() {
        [a, b] if a == b => a,
        _ => return Err(Error::shape(format!("rotation needs a square patch, got {:?}", patch.shape()))),
    };
    let mut cur = patch.data().to_vec();
    for _ in 0..r.rem_euclid(4) {
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                next[i * n + j] = cur[j * n + (n - 1 - i)];
            }
        }
        cur = next;
    }
    Tensor::new(vec![n, n], cur)
}

/// Vertical and diagonal step edges (values -1, 0 on the boundary, +1).
pub fn edge_prototypes(size: usize) -> Result<Vec<Tensor>> {
    let c = (size as f64 - 1.0) / 2.0;
    let sign = |x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
    let vertical = (0..size * size).map(|k| sign((k % size) as f64 - c)).collect();
    let diagonal = (0..size * size).map(|k| sign((k % size) as f64 - (k / size) as f64)).collect();
    Ok(vec![Tensor::new(vec![size, size], vertical)?, Tensor::new(vec![size, size], diagonal)?])
}

#[derive(Debug, Clone)]
pub struct EdgeDataset {
    /// `[N, 1, size, size]`.
    pub patches: Tensor,
    pub prototype: Vec<usize>,
    pub rotation: Vec<usize>,
    pub prototypes: Vec<Tensor>,
}

impl EdgeDataset {
    pub fn len(&self) -> usize {
        self.prototype.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototype.is_empty()
    }

    /// Orbit (prototype) as super-class, `(prototype, rotation)` as
    /// sub-class `4 * prototype + rotation`.
    pub fn to_hierarchical(&self, split: Split) -> Result<HierarchicalDataset> {
        let h = Hierarchy::uniform(self.prototypes.len(), 4)?;
        let subs = self.prototype.iter().zip(&self.rotation).map(|(p, r)| 4 * p + r).collect();
        HierarchicalDataset::new(self.patches.clone(), self.prototype.clone(), subs, h, split)
    }
}

/// All four rotations of each prototype, `n_per_orbit` noisy copies each,
/// ordered by prototype, then rotation, then copy.
pub fn gen_rotated_edges(n_per_orbit: usize, patch_size: usize, noise_sigma: f64, seed: u64) -> Result<EdgeDataset> {
    if patch_size < 3 {
        return Err(Error::config(format!("patch size {patch_size} below 3")));
    }
    if n_per_orbit == 0 {
        return Err(Error::config("n_per_orbit must be positive"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::config("noise_sigma must be non-negative"));
    }
    let prototypes = edge_prototypes(patch_size)?;
    let mut rng = Prng::new(seed);
    let mut data = Vec::new();
    let (mut proto_ids, mut rots) = (Vec::new(), Vec::new());
    for (p, proto) in prototypes.iter().enumerate() {
        for r in 0..4 {
            let rotated = rotate_patch90(proto, r as i64)?;
            for _ in 0..n_per_orbit {
                data.extend(rotated.data().iter().map(|&x| {
                    if noise_sigma > 0.0 {
                        x + noise_sigma * rng.normal()
                    } else {
                        x
                    }
                }));
                proto_ids.push(p);
                rots.push(r);
            }
        }
    }
    let patches = Tensor::new(vec![proto_ids.len(), 1, patch_size, patch_size], data)?;
    Ok(EdgeDataset { patches, prototype: proto_ids, rotation: rots, prototypes })
}
