//! Datasets with paired super/sub-class labels, generators and readers.

pub mod cifar;
pub mod edges;
pub mod preprocess;
pub mod synthetic;

use std::fs;
use std::path::Path;

use crate::discovery::Hierarchy;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{labels_to_tensor, tensor_to_labels, Checkpoint};
use crate::tensor::Tensor;

pub use cifar::{read_cifar_binary, read_cifar_bytes, CifarVariant};
pub use edges::{gen_rotated_edges, rotate_patch90, EdgeDataset};
pub use preprocess::{augment, augment_with, gcn};
pub use synthetic::{gen_hierarchical_gaussians, SyntheticData, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalDataset {
    samples: Tensor,
    super_labels: Vec<usize>,
    sub_labels: Vec<usize>,
    hierarchy: Hierarchy,
    split: Split,
}

impl HierarchicalDataset {
    pub fn new(
        samples: Tensor,
        super_labels: Vec<usize>,
        sub_labels: Vec<usize>,
        hierarchy: Hierarchy,
        split: Split,
    ) -> Result<Self> {
        let n = samples.rows();
        if super_labels.len() != n || sub_labels.len() != n {
            return Err(Error::shape(format!(
                "{n} samples but {} super and {} sub labels",
                super_labels.len(),
                sub_labels.len()
            )));
        }
        for (&sup, &sub) in super_labels.iter().zip(&sub_labels) {
            hierarchy.check_labels(sup, sub)?;
        }
        Ok(HierarchicalDataset { samples, super_labels, sub_labels, hierarchy, split })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn super_labels(&self) -> &[usize] {
        &self.super_labels
    }

    pub fn sub_labels(&self) -> &[usize] {
        &self.sub_labels
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample shape (everything after the batch axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(HierarchicalDataset {
            samples: self.samples.select_rows(indices)?,
            super_labels: indices.iter().map(|&i| self.super_labels[i]).collect(),
            sub_labels: indices.iter().map(|&i| self.sub_labels[i]).collect(),
            hierarchy: self.hierarchy.clone(),
            split: self.split,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        c.push("samples", self.samples.clone());
        c.push("super_labels", labels_to_tensor(&self.super_labels)?);
        c.push("sub_labels", labels_to_tensor(&self.sub_labels)?);
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint, hierarchy: Hierarchy, split: Split) -> Result<Self> {
        Self::new(
            c.require("samples")?.clone(),
            tensor_to_labels(c.require("super_labels")?)?,
            tensor_to_labels(c.require("sub_labels")?)?,
            hierarchy,
            split,
        )
    }

    /// Writes `<stem>.bin` (chunk format) and `<stem>.hierarchy.txt`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        self.to_checkpoint()?.save(&dir.join(format!("{stem}.bin")))?;
        let side = dir.join(format!("{stem}.hierarchy.txt"));
        fs::write(&side, self.hierarchy.to_text()).map_err(|e| Error::io(&side, e))
    }

    pub fn load(dir: &Path, stem: &str, split: Split) -> Result<Self> {
        let side = dir.join(format!("{stem}.hierarchy.txt"));
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let c = Checkpoint::load(&dir.join(format!("{stem}.bin")))?;
        Self::from_checkpoint(&c, Hierarchy::from_text(&text)?, split)
    }
}
