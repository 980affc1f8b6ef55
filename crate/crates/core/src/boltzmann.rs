//! Competitive group-restricted Boltzmann machine: exact posterior by
//! enumeration and a single-site Gibbs sampler.
//!
//! The joint is `p(h, v) ∝ exp(bᵀh + cᵀv + vᵀW_v h + hᵀW_h h)` with the full
//! symmetric `W_h`, so a co-active pair `(i, j)` contributes `2 * W_h[i][j]`.
//! `W_h[i][j]` is the penalty when `i != j` share a group and 0 otherwise.
//! With [`Penalty::NegInfinity`] states with two active units in one group
//! are excluded structurally rather than through a floating `-inf`.
//!
//! Everything here is conditioned on `v`, so the `cᵀv` term cancels.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::gsmax::GroupSpec;
use crate::rng::Prng;
use crate::tensor::Tensor;

pub const MAX_ENUMERATED_HIDDEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Finite(f64),
    NegInfinity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoltzmannMachine {
    b: Vec<f64>,
    c: Vec<f64>,
    w_v: Tensor,
    spec: GroupSpec,
    penalty: Penalty,
}

impl BoltzmannMachine {
    pub fn new(b: Vec<f64>, c: Vec<f64>, w_v: Tensor, spec: GroupSpec, penalty: Penalty) -> Result<Self> {
        let (v, h) = (c.len(), b.len());
        if h != spec.channels() {
            return Err(Error::shape(format!("{h} hidden biases for a {}-unit group spec", spec.channels())));
        }
        if w_v.shape() != [v, h] {
            return Err(Error::shape(format!("W_v is {:?}, expected [{v}, {h}]", w_v.shape())));
        }
        if let Penalty::Finite(p) = penalty {
            if !(p <= 0.0 && p.is_finite()) {
                return Err(Error::config(format!("penalty must be finite and <= 0, got {p}")));
            }
        }
        if b.iter().chain(&c).chain(w_v.data()).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("machine parameters must be finite".into()));
        }
        Ok(BoltzmannMachine { b, c, w_v, spec, penalty })
    }

    /// Biases and visible weights i.i.d. uniform in `[lo, hi)`.
    pub fn random(visible: usize, group_sizes: &[usize], penalty: Penalty, lo: f64, hi: f64, rng: &mut Prng) -> Result<Self> {
        let spec = GroupSpec::from_sizes(group_sizes)?;
        let h = spec.channels();
        let b = (0..h).map(|_| rng.uniform(lo, hi)).collect::<Result<Vec<_>>>()?;
        let c = (0..visible).map(|_| rng.uniform(lo, hi)).collect::<Result<Vec<_>>>()?;
        let w_v = Tensor::uniform(&[visible, h], lo, hi, rng)?;
        Self::new(b, c, w_v, spec, penalty)
    }

    pub fn hidden(&self) -> usize {
        self.b.len()
    }

    pub fn visible(&self) -> usize {
        self.c.len()
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn with_penalty(&self, penalty: Penalty) -> Result<Self> {
        Self::new(self.b.clone(), self.c.clone(), self.w_v.clone(), self.spec.clone(), penalty)
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.b
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.c
    }

    pub fn visible_weights(&self) -> &Tensor {
        &self.w_v
    }

    /// Hidden-hidden matrix for a finite penalty; `None` for the symbolic case.
    pub fn hidden_weights(&self) -> Option<Tensor> {
        let Penalty::Finite(p) = self.penalty else { return None };
        let h = self.hidden();
        let mut w = vec![0.0; h * h];
        for i in 0..h {
            for j in 0..h {
                if i != j && self.spec.group_of(i) == self.spec.group_of(j) {
                    w[i * h + j] = p;
                }
            }
        }
        Some(Tensor::new(vec![h, h], w).expect("square"))
    }

    /// Input field on each hidden unit, `b + vᵀW_v`.
    pub fn hidden_field(&self, v: &[u8]) -> Result<Vec<f64>> {
        if v.len() != self.visible() {
            return Err(Error::shape(format!("visible vector has {} entries, machine has {}", v.len(), self.visible())));
        }
        if v.iter().any(|&x| x > 1) {
            return Err(Error::shape("visible vector must be binary"));
        }
        let h = self.hidden();
        let mut z = self.b.clone();
        for (k, &vk) in v.iter().enumerate() {
            if vk == 1 {
                for (i, zi) in z.iter_mut().enumerate() {
                    *zi += self.w_v.data()[k * h + i];
                }
            }
        }
        Ok(z)
    }
}

/// Distribution over one group's configurations. `probs[mask]` is the
/// probability that exactly the members whose bits are set in `mask` are
/// active (bit `k` is the `k`-th listed member).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTable {
    pub members: Vec<usize>,
    pub probs: Vec<f64>,
}

impl GroupTable {
    fn empty(members: &[usize]) -> Self {
        GroupTable {
            members: members.to_vec(),
            probs: vec![0.0; 1 << members.len()],
        }
    }

    /// `[p(e_0), p(e_1), ..., p(e_|g|)]`, with `e_0` the ground state.
    pub fn valid_states(&self) -> Vec<f64> {
        std::iter::once(self.probs[0])
            .chain((0..self.members.len()).map(|k| self.probs[1 << k]))
            .collect()
    }

    /// Mass on configurations with two or more active members.
    pub fn forbidden_mass(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(mask, _)| mask.count_ones() >= 2)
            .map(|(_, p)| p)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDistribution {
    pub groups: Vec<GroupTable>,
    pub marginals: Vec<f64>,
}

impl PosteriorDistribution {
    /// Largest per-group total-variation distance to `other`.
    pub fn max_group_tv(&self, other: &PosteriorDistribution) -> Result<f64> {
        if self.groups.len() != other.groups.len() {
            return Err(Error::shape("posteriors have different group counts"));
        }
        self.groups
            .iter()
            .zip(&other.groups)
            .map(|(a, b)| tv_distance(&a.probs, &b.probs))
            .try_fold(0.0_f64, |acc, d| d.map(|d| acc.max(d)))
    }

    pub fn max_forbidden_mass(&self) -> f64 {
        self.groups.iter().map(GroupTable::forbidden_mass).fold(0.0, f64::max)
    }
}

fn group_mask(state: u64, members: &[usize]) -> usize {
    members
        .iter()
        .enumerate()
        .filter(|(_, &c)| state >> c & 1 == 1)
        .fold(0, |m, (k, _)| m | 1 << k)
}

fn check_size(m: &BoltzmannMachine) -> Result<()> {
    if m.hidden() > MAX_ENUMERATED_HIDDEN {
        return Err(Error::Size(format!(
            "{} hidden units exceed the enumeration limit of {MAX_ENUMERATED_HIDDEN}",
            m.hidden()
        )));
    }
    Ok(())
}

/// Full joint posterior `p(h | v)` over all `2^H` hidden states, indexed by
/// the bit pattern of `h`. Forbidden states get exactly 0 under the symbolic
/// penalty.
pub fn enumerate_joint(m: &BoltzmannMachine, v: &[u8]) -> Result<Vec<f64>> {
    check_size(m)?;
    let z = m.hidden_field(v)?;
    let h = m.hidden();
    let group_of: Vec<usize> = (0..h).map(|i| m.spec.group_of(i)).collect();
    let mut log_w = vec![f64::NEG_INFINITY; 1 << h];
    for (state, lw) in log_w.iter_mut().enumerate() {
        let active: Vec<usize> = (0..h).filter(|&i| state >> i & 1 == 1).collect();
        let mut same_group_pairs = 0usize;
        for (a, &i) in active.iter().enumerate() {
            for &j in &active[a + 1..] {
                if group_of[i] == group_of[j] {
                    same_group_pairs += 1;
                }
            }
        }
        let quad = match m.penalty {
            Penalty::NegInfinity if same_group_pairs > 0 => continue,
            Penalty::NegInfinity => 0.0,
            // each unordered pair appears twice in hᵀW_h h
            Penalty::Finite(p) => 2.0 * p * same_group_pairs as f64,
        };
        *lw = active.iter().map(|&i| z[i]).sum::<f64>() + quad;
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Exact posterior. Finite penalties enumerate all `2^H` joint states;
/// the symbolic penalty enumerates each group's `|g| + 1` valid states.
pub fn enumerate_posterior(m: &BoltzmannMachine, v: &[u8]) -> Result<PosteriorDistribution> {
    check_size(m)?;
    match m.penalty {
        Penalty::Finite(_) => {
            let joint = enumerate_joint(m, v)?;
            Ok(posterior_from_joint(m, &joint))
        }
        Penalty::NegInfinity => {
            let z = m.hidden_field(v)?;
            let mut marginals = vec![0.0; m.hidden()];
            let groups = m
                .spec
                .groups()
                .iter()
                .map(|members| {
                    // weights of e_0 (ground state, energy 0) and each e_k
                    let weights: Vec<f64> = std::iter::once(1.0).chain(members.iter().map(|&c| z[c].exp())).collect();
                    if weights.iter().any(|w| !w.is_finite()) {
                        return Err(Error::Numeric("hidden field too large to enumerate".into()));
                    }
                    let total: f64 = weights.iter().sum();
                    let mut table = GroupTable::empty(members);
                    table.probs[0] = weights[0] / total;
                    for (k, &c) in members.iter().enumerate() {
                        let p = weights[k + 1] / total;
                        table.probs[1 << k] = p;
                        marginals[c] = p;
                    }
                    Ok(table)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PosteriorDistribution { groups, marginals })
        }
    }
}

/// Marginalizes a joint table into per-group tables and unit marginals.
pub fn posterior_from_joint(m: &BoltzmannMachine, joint: &[f64]) -> PosteriorDistribution {
    let mut groups: Vec<GroupTable> = m.spec.groups().iter().map(|g| GroupTable::empty(g)).collect();
    let mut marginals = vec![0.0; m.hidden()];
    for (state, &p) in joint.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for t in groups.iter_mut() {
            t.probs[group_mask(state as u64, &t.members)] += p;
        }
        for (i, mi) in marginals.iter_mut().enumerate() {
            if state >> i & 1 == 1 {
                *mi += p;
            }
        }
    }
    PosteriorDistribution { groups, marginals }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Single-site Gibbs sampling with `v` clamped, starting from `h = 0` and
/// updating units in index order each sweep. Statistics are collected over
/// sweeps `burn_in..sweeps`.
pub fn gibbs_sample(
    m: &BoltzmannMachine,
    v: &[u8],
    sweeps: usize,
    burn_in: usize,
    rng: &mut Prng,
) -> Result<PosteriorDistribution> {
    let Penalty::Finite(_) = m.penalty else {
        return Err(Error::Unsupported(
            "Gibbs sampling needs a finite penalty; use enumerate_posterior for the symbolic limit".into(),
        ));
    };
    if sweeps <= burn_in {
        return Err(Error::config(format!("sweeps ({sweeps}) must exceed burn_in ({burn_in})")));
    }
    let z = m.hidden_field(v)?;
    let w_h = m.hidden_weights().expect("finite penalty");
    let h = m.hidden();
    let mut state = vec![0u8; h];
    let mut counts: Vec<Vec<u64>> = m.spec.groups().iter().map(|g| vec![0; 1 << g.len()]).collect();
    let mut on = vec![0u64; h];
    for sweep in 0..sweeps {
        for i in 0..h {
            let coupling: f64 = (0..h).filter(|&j| state[j] == 1).map(|j| w_h.data()[i * h + j]).sum();
            state[i] = u8::from(rng.bernoulli(sigmoid(z[i] + 2.0 * coupling)));
        }
        if sweep >= burn_in {
            for (g, members) in m.spec.groups().iter().enumerate() {
                let mask = members
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| state[c] == 1)
                    .fold(0, |acc, (k, _)| acc | 1 << k);
                counts[g][mask] += 1;
            }
            for (o, &s) in on.iter_mut().zip(&state) {
                *o += u64::from(s);
            }
        }
    }
    let n = (sweeps - burn_in) as f64;
    let groups = m
        .spec
        .groups()
        .iter()
        .zip(counts)
        .map(|(members, c)| GroupTable {
            members: members.clone(),
            probs: c.into_iter().map(|k| k as f64 / n).collect(),
        })
        .collect();
    Ok(PosteriorDistribution {
        groups,
        marginals: on.into_iter().map(|k| k as f64 / n).collect(),
    })
}

/// `0.5 * sum |p_i - q_i|` over a shared support.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("supports differ: {} vs {}", p.len(), q.len())));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-9 || d.iter().any(|&x| x < 0.0) {
            return Err(Error::Numeric(format!("{name} is not a distribution (sums to {s})")));
        }
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Text form:
///
/// ```text
/// # comments and blank lines are ignored
/// V H
/// group sizes...
/// penalty            (a decimal <= 0, or -inf)
/// b_0 ... b_{H-1}
/// c_0 ... c_{V-1}
/// V lines of H values: rows of W_v
/// ```
pub fn parse_machine(text: &str) -> Result<BoltzmannMachine> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::format(format!("machine file ends before {what}")));
    fn nums<T: std::str::FromStr>((line, s): (usize, &str), what: &str) -> Result<Vec<T>> {
        s.split_whitespace()
            .map(|t| t.parse::<T>().map_err(|_| Error::format(format!("line {line}: bad {what} value {t:?}"))))
            .collect()
    }
    let dims = next("dimensions")?;
    let vh: Vec<usize> = nums(dims, "dimension")?;
    let [v, h] = vh[..] else {
        return Err(Error::format(format!("line {}: expected `V H`", dims.0)));
    };
    let sizes: Vec<usize> = nums(next("group sizes")?, "group size")?;
    let (pline, ptext) = next("penalty")?;
    let penalty = match ptext {
        "-inf" | "-infinity" | "NEG_INFINITY" => Penalty::NegInfinity,
        t => Penalty::Finite(t.parse().map_err(|_| Error::format(format!("line {pline}: bad penalty {t:?}")))?),
    };
    let mut row = |what: &str, len: usize| -> Result<Vec<f64>> {
        let l = next(what)?;
        let vals: Vec<f64> = nums(l, what)?;
        if vals.len() != len {
            return Err(Error::format(format!("line {}: {what} needs {len} values, got {}", l.0, vals.len())));
        }
        Ok(vals)
    };
    let b = row("b", h)?;
    let c = row("c", v)?;
    let mut w = Vec::with_capacity(v * h);
    for _ in 0..v {
        w.extend(row("W_v row", h)?);
    }
    if let Some((line, _)) = lines.next() {
        return Err(Error::format(format!("line {line}: unexpected trailing content")));
    }
    let spec = GroupSpec::from_sizes(&sizes).map_err(|e| Error::format(e.to_string()))?;
    let w_v = Tensor::new(vec![v, h], w).map_err(|e| Error::format(e.to_string()))?;
    BoltzmannMachine::new(b, c, w_v, spec, penalty).map_err(|e| Error::format(e.to_string()))
}

/// Inverse of [`parse_machine`]; values use shortest round-trip formatting.
pub fn write_machine(m: &BoltzmannMachine) -> Result<String> {
    let sizes = m
        .spec
        .contiguous_sizes()
        .ok_or_else(|| Error::format("machine files only describe contiguous groups"))?;
    let join = |xs: &[f64]| xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    let mut s = String::new();
    let _ = writeln!(s, "{} {}", m.visible(), m.hidden());
    let _ = writeln!(s, "{}", sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(" "));
    match m.penalty {
        Penalty::NegInfinity => s.push_str("-inf\n"),
        Penalty::Finite(p) => {
            let _ = writeln!(s, "{p:?}");
        }
    }
    let _ = writeln!(s, "{}", join(&m.b));
    let _ = writeln!(s, "{}", join(&m.c));
    for k in 0..m.visible() {
        let _ = writeln!(s, "{}", join(&m.w_v.data()[k * m.hidden()..(k + 1) * m.hidden()]));
    }
    Ok(s)
}
