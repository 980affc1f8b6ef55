//! Association of penultimate neurons with sub-class labels under
//! super-class-only supervision, and the metrics built on it.
//!
//! Each sample votes, with its sub-class label, for the most active neuron
//! inside its super-class's group. A neuron's label is the mode of its votes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gsmax::GroupSpec;
use crate::tensor::Tensor;

/// Two-level label structure: every sub-class belongs to exactly one
/// super-class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    super_count: usize,
    sub_to_super: Vec<usize>,
    subs: Vec<Vec<usize>>,
}

impl Hierarchy {
    pub fn new(super_count: usize, sub_to_super: Vec<usize>) -> Result<Self> {
        if super_count == 0 {
            return Err(Error::config("hierarchy needs at least one super-class"));
        }
        let mut subs = vec![Vec::new(); super_count];
        for (sub, &sup) in sub_to_super.iter().enumerate() {
            if sup >= super_count {
                return Err(Error::config(format!("sub-class {sub} maps to super-class {sup} of {super_count}")));
            }
            subs[sup].push(sub);
        }
        if let Some(empty) = subs.iter().position(Vec::is_empty) {
            return Err(Error::config(format!("super-class {empty} has no sub-classes")));
        }
        Ok(Hierarchy { super_count, sub_to_super, subs })
    }

    /// `supers` super-classes with `per_super` consecutive sub-classes each.
    pub fn uniform(supers: usize, per_super: usize) -> Result<Self> {
        Self::new(supers, (0..supers * per_super).map(|s| s / per_super.max(1)).collect())
    }

    /// Consecutive sub-class ids, `counts[s]` of them for super-class `s`.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let map = counts.iter().enumerate().flat_map(|(s, &n)| std::iter::repeat_n(s, n)).collect();
        Self::new(counts.len(), map)
    }

    pub fn super_count(&self) -> usize {
        self.super_count
    }

    pub fn sub_count(&self) -> usize {
        self.sub_to_super.len()
    }

    pub fn sub_to_super(&self) -> &[usize] {
        &self.sub_to_super
    }

    pub fn super_of(&self, sub: usize) -> usize {
        self.sub_to_super[sub]
    }

    pub fn subs_of(&self, sup: usize) -> &[usize] {
        &self.subs[sup]
    }

    pub fn sub_counts(&self) -> Vec<usize> {
        self.subs.iter().map(Vec::len).collect()
    }

    pub fn check_labels(&self, sup: usize, sub: usize) -> Result<()> {
        match self.sub_to_super.get(sub) {
            Some(&s) if s == sup => Ok(()),
            Some(&s) => Err(Error::Label(format!("sub-class {sub} belongs to super-class {s}, not {sup}"))),
            None => Err(Error::Label(format!("sub-class {sub} outside {} sub-classes", self.sub_count()))),
        }
    }

    /// Sidecar text: super count, then per-super sub counts, then the
    /// sub-to-super list.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        format!("{}\n{}\n{}\n", self.super_count, join(&self.sub_counts()), join(&self.sub_to_super))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let [s, counts, map] = lines[..] else {
            return Err(Error::format("hierarchy file needs exactly three lines"));
        };
        let parse = |l: &str| -> Result<Vec<usize>> {
            l.split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::format(format!("bad hierarchy entry {t:?}"))))
                .collect()
        };
        let super_count: usize = s.parse().map_err(|_| Error::format("bad super-class count"))?;
        let h = Hierarchy::new(super_count, parse(map)?).map_err(|e| Error::format(e.to_string()))?;
        if h.sub_counts() != parse(counts)? {
            return Err(Error::format("hierarchy sub counts disagree with the sub-to-super list"));
        }
        Ok(h)
    }
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Accuracy of guessing uniformly among the sub-classes of the known
/// super-class: `(1/S) * sum_s 1/|subs(s)|`. Summed as an exact fraction and
/// rounded once.
pub fn chance_level(h: &Hierarchy) -> f64 {
    let (mut num, mut den) = (0u128, 1u128);
    for k in h.sub_counts() {
        let k = k as u128;
        num = num * k + den;
        den *= k;
        let g = gcd(num, den);
        num /= g;
        den /= g;
    }
    num as f64 / (den * h.super_count as u128) as f64
}

fn check_alignment(h: &Hierarchy, neurons: &GroupSpec) -> Result<()> {
    if neurons.group_count() != h.super_count() {
        return Err(Error::config(format!(
            "{} neuron groups for {} super-classes",
            neurons.group_count(),
            h.super_count()
        )));
    }
    Ok(())
}

/// Most active neuron of a group (lowest index on ties).
fn group_argmax(row: &[f64], members: &[usize]) -> usize {
    let mut best = members[0];
    for &c in &members[1..] {
        if row[c] > row[best] || (row[c] == row[best] && c < best) {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationTable {
    /// `votes[neuron][sub]` vote counts.
    votes: Vec<Vec<usize>>,
    assigned: Vec<Option<usize>>,
    finalized: bool,
}

impl AssociationTable {
    pub fn new(neurons: usize, sub_count: usize) -> Self {
        AssociationTable {
            votes: vec![vec![0; sub_count]; neurons],
            assigned: vec![None; neurons],
            finalized: false,
        }
    }

    /// Adds one sample's vote. Samples may arrive in any order.
    pub fn vote(&mut self, row: &[f64], sup: usize, sub: usize, h: &Hierarchy, neurons: &GroupSpec) -> Result<()> {
        h.check_labels(sup, sub)?;
        if row.len() != neurons.channels() || row.len() != self.votes.len() {
            return Err(Error::shape(format!("activation row of {} for {} neurons", row.len(), self.votes.len())));
        }
        let winner = group_argmax(row, neurons.group(sup));
        self.votes[winner][sub] += 1;
        self.finalized = false;
        Ok(())
    }

    /// Adds votes accumulated elsewhere (e.g. on another thread).
    pub fn merge(&mut self, other: &AssociationTable) -> Result<()> {
        if other.votes.len() != self.votes.len() || other.votes.first().map(Vec::len) != self.votes.first().map(Vec::len) {
            return Err(Error::shape("association tables differ in size"));
        }
        for (a, b) in self.votes.iter_mut().zip(&other.votes) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.finalized = false;
        Ok(())
    }

    /// Assigns each neuron the modal vote (lowest sub-class id on ties);
    /// neurons without votes stay unassigned.
    pub fn finalize(&mut self) {
        for (n, counts) in self.votes.iter().enumerate() {
            let mut best: Option<usize> = None;
            for (sub, &c) in counts.iter().enumerate() {
                if c > 0 && best.is_none_or(|b| c > counts[b]) {
                    best = Some(sub);
                }
            }
            self.assigned[n] = best;
        }
        self.finalized = true;
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn assigned(&self) -> &[Option<usize>] {
        &self.assigned
    }

    pub fn votes(&self, neuron: usize) -> &[usize] {
        &self.votes[neuron]
    }

    pub fn neuron_count(&self) -> usize {
        self.votes.len()
    }

    pub fn total_votes(&self) -> usize {
        self.votes.iter().flatten().sum()
    }

    /// Sum over neurons of the modal vote count.
    pub fn modal_vote_total(&self) -> usize {
        self.votes.iter().map(|v| v.iter().copied().max().unwrap_or(0)).sum()
    }

    /// Reorders neurons: new neuron `i` is old neuron `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> AssociationTable {
        AssociationTable {
            votes: perm.iter().map(|&p| self.votes[p].clone()).collect(),
            assigned: perm.iter().map(|&p| self.assigned[p]).collect(),
            finalized: self.finalized,
        }
    }
}

fn check_batch(activations: &Tensor, super_labels: &[usize], sub_labels: &[usize], neurons: &GroupSpec) -> Result<()> {
    if activations.rank() != 2 || activations.shape()[1] != neurons.channels() {
        return Err(Error::shape(format!(
            "activations {:?} do not match {} neurons",
            activations.shape(),
            neurons.channels()
        )));
    }
    if super_labels.len() != activations.rows() || sub_labels.len() != activations.rows() {
        return Err(Error::shape("label vectors and activations differ in length"));
    }
    Ok(())
}

/// Builds and finalizes the association table from penultimate activations.
pub fn associate_neurons(
    activations: &Tensor,
    super_labels: &[usize],
    sub_labels: &[usize],
    h: &Hierarchy,
    neurons: &GroupSpec,
) -> Result<AssociationTable> {
    check_alignment(h, neurons)?;
    check_batch(activations, super_labels, sub_labels, neurons)?;
    let mut table = AssociationTable::new(neurons.channels(), h.sub_count());
    for i in 0..activations.rows() {
        table.vote(activations.row(i), super_labels[i], sub_labels[i], h, neurons)?;
    }
    table.finalize();
    Ok(table)
}

/// Predicted sub-class for one sample, or `None` when the winning neuron is
/// unassigned (always counted as wrong).
pub fn classify_subclass(
    row: &[f64],
    sup: usize,
    table: &AssociationTable,
    h: &Hierarchy,
    neurons: &GroupSpec,
) -> Result<Option<usize>> {
    if !table.finalized {
        return Err(Error::State("association table is not finalized".into()));
    }
    check_alignment(h, neurons)?;
    if sup >= h.super_count() {
        return Err(Error::Label(format!("super-class {sup} outside hierarchy")));
    }
    if row.len() != neurons.channels() {
        return Err(Error::shape("activation row does not match neuron count"));
    }
    Ok(table.assigned[group_argmax(row, neurons.group(sup))])
}

pub fn subclass_accuracy(
    activations: &Tensor,
    super_labels: &[usize],
    sub_labels: &[usize],
    table: &AssociationTable,
    h: &Hierarchy,
    neurons: &GroupSpec,
) -> Result<f64> {
    check_batch(activations, super_labels, sub_labels, neurons)?;
    let mut correct = 0usize;
    for i in 0..activations.rows() {
        h.check_labels(super_labels[i], sub_labels[i])?;
        if classify_subclass(activations.row(i), super_labels[i], table, h, neurons)? == Some(sub_labels[i]) {
            correct += 1;
        }
    }
    Ok(correct as f64 / activations.rows() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    /// Mean |cosine| over same-group filter pairs; `None` if every group is a
    /// singleton.
    pub within: Option<f64>,
    pub across: f64,
    pub per_group: Vec<Option<f64>>,
}

/// Cosine statistics of flattened filters (one per row) within and across
/// groups.
pub fn group_similarity_report(filters: &Tensor, spec: &GroupSpec) -> Result<SimilarityReport> {
    if filters.rank() < 2 || filters.rows() != spec.channels() {
        return Err(Error::shape(format!(
            "{:?} filters for a {}-channel group spec",
            filters.shape(),
            spec.channels()
        )));
    }
    if spec.group_count() < 2 {
        return Err(Error::config("similarity report needs at least two groups"));
    }
    let n = filters.rows();
    let norms: Vec<f64> = (0..n).map(|i| filters.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if let Some(z) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::Numeric(format!("filter {z} has zero norm")));
    }
    let cos = |i: usize, j: usize| -> f64 {
        let dot: f64 = filters.row(i).iter().zip(filters.row(j)).map(|(a, b)| a * b).sum();
        (dot / (norms[i] * norms[j])).abs()
    };
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut within = Vec::new();
    let mut across = Vec::new();
    let mut per_group = vec![Vec::new(); spec.group_count()];
    for i in 0..n {
        for j in i + 1..n {
            let c = cos(i, j);
            if spec.group_of(i) == spec.group_of(j) {
                within.push(c);
                per_group[spec.group_of(i)].push(c);
            } else {
                across.push(c);
            }
        }
    }
    Ok(SimilarityReport {
        within: mean(&within),
        across: mean(&across).expect("two groups give at least one cross pair"),
        per_group: per_group.iter().map(|g| mean(g)).collect(),
    })
}

/// One-line JSON summary of a discovery run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscoverySummary {
    pub accuracy: f64,
    pub chance: f64,
    /// GSMax accuracy minus control accuracy, when a control run exists.
    pub control_delta: Option<f64>,
    pub samples: usize,
    pub unassigned_neurons: usize,
}

/// CSV with one row per neuron: id, group, assigned sub-class (or
/// `UNASSIGNED`), and the vote histogram as `sub:count` pairs joined by `;`.
pub fn association_csv(table: &AssociationTable, neurons: &GroupSpec) -> String {
    let mut s = String::from("neuron,group,assigned,votes\n");
    for n in 0..table.neuron_count() {
        let assigned = table.assigned[n].map_or_else(|| "UNASSIGNED".to_string(), |a| a.to_string());
        let hist: Vec<String> = table.votes[n]
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(sub, c)| format!("{sub}:{c}"))
            .collect();
        let _ = writeln!(s, "{n},{},{assigned},{}", neurons.group_of(n), hist.join(";"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_fixture() -> (Tensor, Vec<usize>, Vec<usize>, Hierarchy, GroupSpec) {
        // 2 supers x 2 subs, neuron index == sub id
        let h = Hierarchy::uniform(2, 2).unwrap();
        let neurons = GroupSpec::uniform(2, 2).unwrap();
        let subs = vec![0, 1, 2, 3, 0, 3, 1, 2];
        let sups: Vec<usize> = subs.iter().map(|&s| h.super_of(s)).collect();
        let rows: Vec<Vec<f64>> = subs.iter().map(|&s| (0..4).map(|c| f64::from(c == s)).collect()).collect();
        (Tensor::from_rows(&rows).unwrap(), sups, subs, h, neurons)
    }

    #[test]
    fn one_hot_is_perfect() {
        let (a, sups, subs, h, n) = one_hot_fixture();
        let t = associate_neurons(&a, &sups, &subs, &h, &n).unwrap();
        assert_eq!(t.assigned(), &[Some(0), Some(1), Some(2), Some(3)]);
        for k in 0..4 {
            assert_eq!(t.votes(k).iter().filter(|&&c| c > 0).count(), 1);
        }
        assert_eq!(subclass_accuracy(&a, &sups, &subs, &t, &h, &n).unwrap(), 1.0);
        assert_eq!(t.modal_vote_total(), 8);
    }

    #[test]
    fn equal_activations_vote_for_first_neuron() {
        let (a, sups, subs, h, n) = one_hot_fixture();
        let flat = Tensor::filled(a.shape(), 0.3).unwrap();
        let t = associate_neurons(&flat, &sups, &subs, &h, &n).unwrap();
        assert_eq!(t.assigned()[1], None);
        assert_eq!(t.assigned()[3], None);
        assert_eq!(t.assigned()[0], Some(0)); // tie between subs 0 and 1 -> lowest
        assert_eq!(t.assigned()[2], Some(2));
        // one label per group on balanced subs -> chance level
        let acc = subclass_accuracy(&flat, &sups, &subs, &t, &h, &n).unwrap();
        assert_eq!(acc, chance_level(&h));
    }

    #[test]
    fn unassigned_counts_wrong_and_unfinalized_is_error() {
        let h = Hierarchy::uniform(1, 2).unwrap();
        let n = GroupSpec::uniform(1, 2).unwrap();
        let mut t = AssociationTable::new(2, 2);
        t.vote(&[1.0, 0.0], 0, 0, &h, &n).unwrap();
        assert!(matches!(classify_subclass(&[0.0, 1.0], 0, &t, &h, &n), Err(Error::State(_))));
        t.finalize();
        assert_eq!(classify_subclass(&[0.0, 1.0], 0, &t, &h, &n).unwrap(), None);
        let a = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(subclass_accuracy(&a, &[0], &[1], &t, &h, &n).unwrap(), 0.0);
    }

    #[test]
    fn label_errors() {
        let (a, mut sups, subs, h, n) = one_hot_fixture();
        sups[0] = 1;
        assert!(matches!(associate_neurons(&a, &sups, &subs, &h, &n), Err(Error::Label(_))));
        let mut bad_sub = subs.clone();
        bad_sub[0] = 9;
        sups[0] = 0;
        assert!(matches!(associate_neurons(&a, &sups, &bad_sub, &h, &n), Err(Error::Label(_))));
        let wrong_groups = GroupSpec::uniform(4, 1).unwrap();
        assert!(associate_neurons(&a, &sups, &subs, &h, &wrong_groups).is_err());
    }

    #[test]
    fn permutation_within_group_is_equivariant() {
        let (a, sups, subs, h, n) = one_hot_fixture();
        let noisy = a.map(|x| x + 0.1);
        let t = associate_neurons(&noisy, &sups, &subs, &h, &n).unwrap();
        let perm = [1, 0, 3, 2];
        let mut permuted = noisy.clone();
        for i in 0..noisy.rows() {
            for (new, &old) in perm.iter().enumerate() {
                permuted.data_mut()[i * 4 + new] = noisy.get2(i, old);
            }
        }
        let tp = t.permuted(&perm);
        for i in 0..noisy.rows() {
            assert_eq!(
                classify_subclass(noisy.row(i), sups[i], &t, &h, &n).unwrap(),
                classify_subclass(permuted.row(i), sups[i], &tp, &h, &n).unwrap()
            );
        }
    }

    #[test]
    fn chance_levels() {
        assert_eq!(chance_level(&Hierarchy::uniform(20, 5).unwrap()), 0.2);
        assert_eq!(chance_level(&Hierarchy::uniform(1, 1).unwrap()), 1.0);
        assert_eq!(chance_level(&Hierarchy::from_counts(&[2, 4]).unwrap()), 0.375);
        assert_eq!(chance_level(&Hierarchy::uniform(4, 3).unwrap()), 1.0 / 3.0);
    }

    #[test]
    fn hierarchy_text_round_trip_and_validation() {
        let h = Hierarchy::from_counts(&[2, 1, 3]).unwrap();
        assert_eq!(Hierarchy::from_text(&h.to_text()).unwrap(), h);
        assert!(Hierarchy::new(2, vec![0, 0]).is_err());
        assert!(Hierarchy::from_text("2\n2 1\n0 1 1\n").is_err());
    }

    #[test]
    fn similarity_examples() {
        let spec = GroupSpec::uniform(2, 2).unwrap();
        let orth = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = group_similarity_report(&orth, &spec).unwrap();
        assert_eq!(r.within, Some(0.0));
        let dup = Tensor::filled(&[4, 3], 0.7).unwrap();
        let r = group_similarity_report(&dup, &spec).unwrap();
        assert!((r.within.unwrap() - 1.0).abs() < 1e-15 && (r.across - 1.0).abs() < 1e-15);
        let mut zero = dup.clone();
        zero.data_mut()[..3].fill(0.0);
        assert!(matches!(group_similarity_report(&zero, &spec), Err(Error::Numeric(_))));
        assert!(group_similarity_report(&dup, &GroupSpec::uniform(1, 4).unwrap()).is_err());
    }

    #[test]
    fn csv_layout() {
        let (a, sups, subs, h, n) = one_hot_fixture();
        let t = associate_neurons(&a, &sups, &subs, &h, &n).unwrap();
        let csv = association_csv(&t, &n);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "neuron,group,assigned,votes");
        assert_eq!(lines[1], "0,0,0,0:2");
        assert_eq!(lines[4], "3,1,3,3:2");
    }
}
