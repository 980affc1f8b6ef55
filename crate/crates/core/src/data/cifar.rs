//! CIFAR-10 / CIFAR-100 binary readers.
//!
//! CIFAR-10 records are 3073 bytes: label, then 3072 pixel bytes.
//! CIFAR-100 records are 3074 bytes: coarse label, fine label, pixels.
//! Pixels are channel-major (R, G, B planes of 32x32, row-major).

use std::path::Path;

use super::{HierarchicalDataset, Split};
use crate::discovery::Hierarchy;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_BYTES: usize = 3 * 32 * 32;

/// Coarse label of each CIFAR-100 fine label, in fine-label order.
pub const CIFAR100_FINE_TO_COARSE: [usize; 100] = [
    4, 1, 14, 8, 0, 6, 7, 7, 18, 3, 3, 14, 9, 18, 7, 11, 3, 9, 7, 11, 6, 11, 5, 10, 7, 6, 13, 15, 3, 15, 0, 11, 1, 10,
    12, 14, 16, 9, 11, 5, 5, 19, 8, 8, 15, 13, 14, 17, 18, 10, 16, 4, 17, 4, 2, 0, 17, 4, 18, 17, 10, 3, 2, 12, 12, 16,
    12, 1, 9, 19, 2, 10, 0, 1, 16, 12, 9, 13, 15, 13, 16, 19, 2, 4, 6, 19, 5, 5, 8, 19, 18, 1, 2, 15, 6, 0, 17, 8, 14,
    13,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn record_size(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1 + IMAGE_BYTES,
            CifarVariant::Cifar100 => 2 + IMAGE_BYTES,
        }
    }

    /// CIFAR-10 is a flat hierarchy (one super-class); CIFAR-100 uses its
    /// published 20 x 5 coarse/fine structure.
    pub fn hierarchy(self) -> Hierarchy {
        match self {
            CifarVariant::Cifar10 => Hierarchy::uniform(1, 10),
            CifarVariant::Cifar100 => Hierarchy::new(20, CIFAR100_FINE_TO_COARSE.to_vec()),
        }
        .expect("static hierarchy")
    }
}

pub fn read_cifar_bytes(bytes: &[u8], variant: CifarVariant, split: Split) -> Result<HierarchicalDataset> {
    let rec = variant.record_size();
    if bytes.is_empty() || !bytes.len().is_multiple_of(rec) {
        return Err(Error::format(format!("{} bytes is not a whole number of {rec}-byte records", bytes.len())));
    }
    let n = bytes.len() / rec;
    let h = variant.hierarchy();
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    let (mut sups, mut subs) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let (sup, sub, img) = match variant {
            CifarVariant::Cifar10 => (0, r[0] as usize, &r[1..]),
            CifarVariant::Cifar100 => (r[0] as usize, r[1] as usize, &r[2..]),
        };
        if sub >= h.sub_count() || sup >= h.super_count() {
            return Err(Error::format(format!("record {i}: label byte out of range ({sup}, {sub})")));
        }
        if h.super_of(sub) != sup {
            return Err(Error::format(format!("record {i}: fine label {sub} is not in coarse label {sup}")));
        }
        sups.push(sup);
        subs.push(sub);
        pixels.extend(img.iter().map(|&b| f64::from(b) / 255.0));
    }
    let samples = Tensor::new(vec![n, 3, 32, 32], pixels)?;
    HierarchicalDataset::new(samples, sups, subs, h, split)
}

pub fn read_cifar_binary(path: &Path, variant: CifarVariant, split: Split) -> Result<HierarchicalDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_cifar_bytes(&bytes, variant, split).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
