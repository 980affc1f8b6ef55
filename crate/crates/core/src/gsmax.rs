//! Channel groups, the group softmax with a ground state (GSMax), and group
//! maxout.
//!
//! Within a group `g` of channels, GSMax maps logits `z` to
//!
//! ```text
//! p_i = exp(z_i / T) / (1 + sum_{k in g} exp(z_k / T))
//! ```
//!
//! which is the exact posterior `p(h_i = 1 | v)` of a Boltzmann machine whose
//! hidden units may not co-activate inside a group. The `1` is the ground
//! state (no unit active), whose logit is fixed at zero and is *not* scaled
//! by the temperature `T`.
//!
//! Activations are laid out `[batch, channels, spatial...]`; groups partition
//! the channel axis and every spatial position is treated independently.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Partition of `0..channels` into disjoint, non-empty competition groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
}

impl GroupSpec {
    /// Explicit index-list form.
    pub fn from_indices(groups: Vec<Vec<usize>>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::config("group spec needs at least one group"));
        }
        let channels: usize = groups.iter().map(Vec::len).sum();
        let mut group_of = vec![usize::MAX; channels];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::config(format!("group {g} is empty")));
            }
            for &c in members {
                if c >= channels {
                    return Err(Error::config(format!(
                        "channel {c} in group {g} outside 0..{channels}"
                    )));
                }
                if group_of[c] != usize::MAX {
                    return Err(Error::config(format!(
                        "channel {c} appears in groups {} and {g}",
                        group_of[c]
                    )));
                }
                group_of[c] = g;
            }
        }
        Ok(GroupSpec { groups, group_of })
    }

    /// Contiguous partition: sizes `[2, 3]` gives groups `{0,1}`, `{2,3,4}`.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut next = 0;
        let groups = sizes
            .iter()
            .map(|&s| {
                let g: Vec<usize> = (next..next + s).collect();
                next += s;
                g
            })
            .collect();
        Self::from_indices(groups)
    }

    /// `count` contiguous groups of `size` channels each.
    pub fn uniform(count: usize, size: usize) -> Result<Self> {
        Self::from_sizes(&vec![size; count])
    }

    /// Every channel in its own group.
    pub fn singletons(channels: usize) -> Result<Self> {
        Self::uniform(channels, 1)
    }

    pub fn channels(&self) -> usize {
        self.group_of.len()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn group_of(&self, channel: usize) -> usize {
        self.group_of[channel]
    }

    /// Sizes when the partition is contiguous and ordered, else `None`.
    pub fn contiguous_sizes(&self) -> Option<Vec<usize>> {
        let mut next = 0;
        for g in &self.groups {
            if g.iter().enumerate().any(|(k, &c)| c != next + k) {
                return None;
            }
            next += g.len();
        }
        Some(self.groups.iter().map(Vec::len).collect())
    }
}

/// Text form used in config files: `sizes 2,11,8,50` or
/// `indices 0 2 | 1 3`.
impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.contiguous_sizes() {
            Some(sizes) => {
                let s: Vec<String> = sizes.iter().map(usize::to_string).collect();
                write!(f, "sizes {}", s.join(","))
            }
            None => {
                let s: Vec<String> = self
                    .groups
                    .iter()
                    .map(|g| g.iter().map(usize::to_string).collect::<Vec<_>>().join(" "))
                    .collect();
                write!(f, "indices {}", s.join(" | "))
            }
        }
    }
}

impl FromStr for GroupSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse_usize = |tok: &str| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad group entry {tok:?}")))
        };
        if let Some(rest) = s.strip_prefix("sizes") {
            let sizes = rest
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(parse_usize)
                .collect::<Result<Vec<_>>>()?;
            GroupSpec::from_sizes(&sizes)
        } else if let Some(rest) = s.strip_prefix("indices") {
            let groups = rest
                .split('|')
                .map(|g| g.split_whitespace().map(parse_usize).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            GroupSpec::from_indices(groups)
        } else {
            Err(Error::config(format!(
                "group spec {s:?} must start with `sizes` or `indices`"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsmaxParams {
    temperature: f64,
}

impl GsmaxParams {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::config(format!(
                "temperature must be positive and finite, got {temperature}"
            )));
        }
        Ok(GsmaxParams { temperature })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl Default for GsmaxParams {
    fn default() -> Self {
        GsmaxParams { temperature: 1.0 }
    }
}

/// Splits a `[batch, channels, spatial...]` shape into
/// `(batch, spatial_size)` after checking the channel count.
fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!(
            "expected [batch, channels, ...], got {shape:?}"
        )));
    }
    if shape[1] != channels {
        return Err(Error::shape(format!(
            "group spec covers {channels} channels, input has {}",
            shape[1]
        )));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

fn check_finite(z: &Tensor) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite GSMax input".into()))
    }
}

/// Visits each (sample, spatial position, group) with a closure receiving
/// flat indices of the group's members.
fn for_each_group(
    shape: &[usize],
    spec: &GroupSpec,
    mut f: impl FnMut(usize, usize, usize, &mut dyn Iterator<Item = usize>),
) -> Result<()> {
    let channels = spec.channels();
    let (batch, spatial) = layout(shape, channels)?;
    for n in 0..batch {
        for s in 0..spatial {
            let base = n * channels * spatial + s;
            for (g, members) in spec.groups.iter().enumerate() {
                let mut it = members.iter().map(|&c| base + c * spatial);
                f(n, s, g, &mut it);
            }
        }
    }
    Ok(())
}

/// Stabilized per-group computation. Returns member probabilities written
/// into `out` and the ground-state probability.
fn group_posterior(z: &[f64], idx: &[usize], inv_t: f64, out: &mut [f64]) -> f64 {
    let m = idx.iter().map(|&i| z[i] * inv_t).fold(0.0_f64, f64::max);
    let ground = (-m).exp();
    let mut denom = ground;
    for &i in idx {
        let e = (z[i] * inv_t - m).exp();
        out[i] = e;
        denom += e;
    }
    for &i in idx {
        out[i] /= denom;
    }
    ground / denom
}

pub fn gsmax_forward(z: &Tensor, spec: &GroupSpec, params: &GsmaxParams) -> Result<Tensor> {
    Ok(gsmax_forward_with_ground(z, spec, params)?.0)
}

/// Forward pass that also returns the ground-state probabilities laid out
/// `[batch, groups, spatial...]`.
pub fn gsmax_forward_with_ground(
    z: &Tensor,
    spec: &GroupSpec,
    params: &GsmaxParams,
) -> Result<(Tensor, Tensor)> {
    check_finite(z)?;
    let inv_t = 1.0 / params.temperature;
    let mut out = vec![0.0; z.len()];
    let mut ground_shape = z.shape().to_vec();
    if ground_shape.len() >= 2 {
        ground_shape[1] = spec.group_count();
    }
    let spatial: usize = z.shape().get(2..).map_or(1, |s| s.iter().product());
    let groups = spec.group_count();
    let mut ground = vec![0.0; z.shape()[0] * groups * spatial];
    let mut idx = Vec::new();
    let zd = z.data();
    for_each_group(z.shape(), spec, |n, s, g, members| {
        idx.clear();
        idx.extend(members);
        ground[(n * groups + g) * spatial + s] = group_posterior(zd, &idx, inv_t, &mut out);
    })?;
    Ok((
        Tensor::new(z.shape().to_vec(), out)?,
        Tensor::new(ground_shape, ground)?,
    ))
}

/// Probability that no unit in each group is active, `[batch, groups, ...]`.
pub fn ground_state_prob(z: &Tensor, spec: &GroupSpec, params: &GsmaxParams) -> Result<Tensor> {
    Ok(gsmax_forward_with_ground(z, spec, params)?.1)
}

/// Vector-Jacobian product of GSMax given its outputs `p`.
///
/// Within a group `dp_i/dz_j = p_i (delta_ij - p_j) / T`; across groups the
/// Jacobian is zero.
pub fn gsmax_backward(
    p: &Tensor,
    upstream: &Tensor,
    spec: &GroupSpec,
    params: &GsmaxParams,
) -> Result<Tensor> {
    if p.shape() != upstream.shape() {
        return Err(Error::shape(format!(
            "GSMax outputs {:?} vs upstream {:?}",
            p.shape(),
            upstream.shape()
        )));
    }
    let inv_t = 1.0 / params.temperature;
    let (pd, ud) = (p.data(), upstream.data());
    let mut grad = vec![0.0; p.len()];
    let mut idx = Vec::new();
    for_each_group(p.shape(), spec, |_, _, _, members| {
        idx.clear();
        idx.extend(members);
        let dot: f64 = idx.iter().map(|&i| ud[i] * pd[i]).sum();
        for &j in &idx {
            grad[j] = inv_t * pd[j] * (ud[j] - dot);
        }
    })?;
    Tensor::new(p.shape().to_vec(), grad)
}

/// Winning channel for every output of [`group_maxout_forward`], kept for
/// the backward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxoutIndices {
    input_shape: Vec<usize>,
    channels: Vec<usize>,
}

impl MaxoutIndices {
    /// Winning channel per output entry, in output order.
    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

/// Per-group maximum over member channels. Ties go to the lowest channel
/// index.
pub fn group_maxout_forward(x: &Tensor, spec: &GroupSpec) -> Result<(Tensor, MaxoutIndices)> {
    let (batch, spatial) = layout(x.shape(), spec.channels())?;
    let groups = spec.group_count();
    let mut out = vec![0.0; batch * groups * spatial];
    let mut arg = vec![0usize; out.len()];
    let xd = x.data();
    for n in 0..batch {
        for s in 0..spatial {
            let base = n * spec.channels() * spatial + s;
            for (g, members) in spec.groups.iter().enumerate() {
                let mut best_c = members[0];
                let mut best = xd[base + best_c * spatial];
                for &c in &members[1..] {
                    let v = xd[base + c * spatial];
                    if v > best || (v == best && c < best_c) {
                        best = v;
                        best_c = c;
                    }
                }
                let o = (n * groups + g) * spatial + s;
                out[o] = best;
                arg[o] = best_c;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[1] = groups;
    Ok((
        Tensor::new(shape, out)?,
        MaxoutIndices {
            input_shape: x.shape().to_vec(),
            channels: arg,
        },
    ))
}

/// Routes each upstream value to the channel that won its group.
pub fn group_maxout_backward(
    upstream: &Tensor,
    indices: &MaxoutIndices,
    spec: &GroupSpec,
) -> Result<Tensor> {
    let in_shape = &indices.input_shape;
    let (batch, spatial) = layout(in_shape, spec.channels())?;
    let mut expected = in_shape.clone();
    expected[1] = spec.group_count();
    if upstream.shape() != expected.as_slice() || indices.channels.len() != upstream.len() {
        return Err(Error::State(format!(
            "maxout indices recorded for {:?} do not match upstream {:?}",
            in_shape,
            upstream.shape()
        )));
    }
    let groups = spec.group_count();
    let mut grad = vec![0.0; in_shape.iter().product()];
    let ud = upstream.data();
    for n in 0..batch {
        for g in 0..groups {
            for s in 0..spatial {
                let o = (n * groups + g) * spatial + s;
                let c = indices.channels[o];
                if spec.group_of(c) != g {
                    return Err(Error::State(format!(
                        "stale maxout index: channel {c} is not in group {g}"
                    )));
                }
                grad[(n * spec.channels() + c) * spatial + s] += ud[o];
            }
        }
    }
    Tensor::new(in_shape.clone(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-15
    }

    #[test]
    fn single_unit_at_zero_is_half() {
        let spec = GroupSpec::from_sizes(&[1]).unwrap();
        let (p, g) = gsmax_forward_with_ground(&row(&[0.0]), &spec, &GsmaxParams::default()).unwrap();
        assert!(close(p.data()[0], 0.5));
        assert!(close(g.data()[0], 0.5));
    }

    #[test]
    fn symmetric_pair_is_one_third() {
        let spec = GroupSpec::from_sizes(&[2]).unwrap();
        let (p, g) = gsmax_forward_with_ground(&row(&[0.0, 0.0]), &spec, &GsmaxParams::default()).unwrap();
        assert!(close(p.data()[0], 1.0 / 3.0) && close(p.data()[1], 1.0 / 3.0));
        assert!(close(g.data()[0], 1.0 / 3.0));
    }

    #[test]
    fn analytic_pair() {
        // 1 + 2 + 6 = 9
        let spec = GroupSpec::from_sizes(&[2]).unwrap();
        let z = row(&[2f64.ln(), 6f64.ln()]);
        let p = gsmax_forward(&z, &spec, &GsmaxParams::default()).unwrap();
        assert!(close(p.data()[0], 2.0 / 9.0));
        assert!(close(p.data()[1], 2.0 / 3.0));
    }

    #[test]
    fn very_negative_logits_leave_ground_state() {
        let spec = GroupSpec::from_sizes(&[3]).unwrap();
        let g = ground_state_prob(&row(&[-1e6, -1e6, -1e6]), &spec, &GsmaxParams::default()).unwrap();
        assert_eq!(g.data()[0], 1.0);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let spec = GroupSpec::from_sizes(&[2, 1]).unwrap();
        let params = GsmaxParams::new(0.5).unwrap();
        let p = gsmax_forward(&row(&[350.0, 349.0, -350.0]), &spec, &params).unwrap();
        assert!(p.is_finite());
        assert!(p.data()[0] > p.data()[1]);
    }

    #[test]
    fn errors() {
        let spec = GroupSpec::from_sizes(&[2]).unwrap();
        let params = GsmaxParams::default();
        assert!(matches!(gsmax_forward(&row(&[0.0, f64::NAN]), &spec, &params), Err(Error::Numeric(_))));
        assert!(matches!(gsmax_forward(&row(&[0.0, 1.0, 2.0]), &spec, &params), Err(Error::Shape(_))));
        assert!(GsmaxParams::new(0.0).is_err());
        assert!(GsmaxParams::new(-1.0).is_err());
    }

    #[test]
    fn backward_single_unit() {
        let spec = GroupSpec::from_sizes(&[1]).unwrap();
        let params = GsmaxParams::default();
        let p = gsmax_forward(&row(&[0.0]), &spec, &params).unwrap();
        let g = gsmax_backward(&p, &row(&[1.0]), &spec, &params).unwrap();
        assert!(close(g.data()[0], 0.25));
        let zero = gsmax_backward(&p, &row(&[0.0]), &spec, &params).unwrap();
        assert_eq!(zero.data(), &[0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Prng::new(21);
        let spec = GroupSpec::from_sizes(&[2, 3, 1]).unwrap();
        for &t in &[0.5, 1.0, 2.0] {
            let params = GsmaxParams::new(t).unwrap();
            let z = Tensor::uniform(&[3, 6], -2.0, 2.0, &mut rng).unwrap();
            let u = Tensor::uniform(&[3, 6], -1.0, 1.0, &mut rng).unwrap();
            let p = gsmax_forward(&z, &spec, &params).unwrap();
            let g = gsmax_backward(&p, &u, &spec, &params).unwrap();
            let loss = |z: &Tensor| -> f64 {
                let p = gsmax_forward(z, &spec, &params).unwrap();
                p.data().iter().zip(u.data()).map(|(a, b)| a * b).sum()
            };
            let h = 1e-5;
            for i in 0..z.len() {
                let mut zp = z.clone();
                zp.data_mut()[i] += h;
                let mut zm = z.clone();
                zm.data_mut()[i] -= h;
                let fd = (loss(&zp) - loss(&zm)) / (2.0 * h);
                let a = g.data()[i];
                assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-4), "T={t} i={i}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn spatial_positions_are_independent() {
        let spec = GroupSpec::from_sizes(&[2]).unwrap();
        let z = Tensor::new(vec![1, 2, 2], vec![0.0, 2f64.ln(), 0.0, 6f64.ln()]).unwrap();
        let p = gsmax_forward(&z, &spec, &GsmaxParams::default()).unwrap();
        // position 0: logits (0, 0); position 1: logits (ln 2, ln 6)
        assert!(close(p.data()[0], 1.0 / 3.0) && close(p.data()[2], 1.0 / 3.0));
        assert!(close(p.data()[1], 2.0 / 9.0) && close(p.data()[3], 2.0 / 3.0));
    }

    #[test]
    fn maxout_definition_and_tie_rule() {
        let spec = GroupSpec::from_sizes(&[2, 2]).unwrap();
        let (y, idx) = group_maxout_forward(&row(&[1.0, 5.0, 2.0, 2.0]), &spec).unwrap();
        assert_eq!(y.data(), &[5.0, 2.0]);
        assert_eq!(idx.channels(), &[1, 2]);
        let g = group_maxout_backward(&row(&[1.0, 1.0]), &idx, &spec).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 1.0, 0.0]);
        let z = group_maxout_backward(&row(&[0.0, 0.0]), &idx, &spec).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maxout_singletons_are_identity() {
        let spec = GroupSpec::singletons(4).unwrap();
        let x = row(&[3.0, -1.0, 0.5, 2.0]);
        assert_eq!(group_maxout_forward(&x, &spec).unwrap().0, x);
    }

    #[test]
    fn maxout_matches_scan_oracle() {
        let mut rng = Prng::new(8);
        let spec = GroupSpec::from_indices(vec![vec![3, 0], vec![1, 4, 2]]).unwrap();
        let x = Tensor::uniform(&[10, 5], -1.0, 1.0, &mut rng).unwrap();
        let (y, _) = group_maxout_forward(&x, &spec).unwrap();
        for n in 0..10 {
            for (g, members) in spec.groups().iter().enumerate() {
                let oracle = members.iter().map(|&c| x.get2(n, c)).fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(y.get2(n, g), oracle);
            }
        }
    }

    #[test]
    fn maxout_stale_indices_rejected() {
        let spec = GroupSpec::from_sizes(&[2, 2]).unwrap();
        let (_, idx) = group_maxout_forward(&row(&[1.0, 5.0, 2.0, 2.0]), &spec).unwrap();
        let wrong_batch = Tensor::zeros(&[2, 2]).unwrap();
        assert!(matches!(group_maxout_backward(&wrong_batch, &idx, &spec), Err(Error::State(_))));
        let other = GroupSpec::from_indices(vec![vec![2, 3], vec![0, 1]]).unwrap();
        assert!(matches!(group_maxout_backward(&row(&[1.0, 1.0]), &idx, &other), Err(Error::State(_))));
    }

    #[test]
    fn group_spec_validation_and_text_form() {
        assert!(GroupSpec::from_indices(vec![vec![0, 1], vec![1]]).is_err());
        assert!(GroupSpec::from_indices(vec![vec![0], vec![]]).is_err());
        assert!(GroupSpec::from_indices(vec![vec![0, 5]]).is_err());
        let s: GroupSpec = "sizes 2,11,8,50".parse().unwrap();
        assert_eq!(s.channels(), 71);
        assert_eq!(s.group_of(2), 1);
        assert_eq!(s.to_string(), "sizes 2,11,8,50");
        let t: GroupSpec = "indices 0 2 | 1 3".parse().unwrap();
        assert_eq!(t.to_string(), "indices 0 2 | 1 3");
        assert_eq!(t.to_string().parse::<GroupSpec>().unwrap(), t);
        assert!("groups 1 2".parse::<GroupSpec>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sizes() -> impl Strategy<Value = Vec<usize>> {
            prop::collection::vec(1usize..5, 1..5)
        }

        proptest! {
            #[test]
            fn outputs_in_unit_interval(sizes in sizes(), seed in any::<u64>(), t in 0.1f64..4.0) {
                let spec = GroupSpec::from_sizes(&sizes).unwrap();
                let mut rng = Prng::new(seed);
                let z = Tensor::uniform(&[2, spec.channels()], -20.0, 20.0, &mut rng).unwrap();
                let (p, g) = gsmax_forward_with_ground(&z, &spec, &GsmaxParams::new(t).unwrap()).unwrap();
                // |z/T| reaches 200 here, so saturation to exactly 0 or 1 is legitimate
                prop_assert!(p.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
                for n in 0..2 {
                    for (gi, members) in spec.groups().iter().enumerate() {
                        let s: f64 = members.iter().map(|&c| p.get2(n, c)).sum();
                        prop_assert!(s <= 1.0 + 1e-15);
                        prop_assert!((s + g.get2(n, gi) - 1.0).abs() < 1e-12);
                    }
                }
            }

            #[test]
            fn group_spec_text_round_trip(sizes in sizes()) {
                let spec = GroupSpec::from_sizes(&sizes).unwrap();
                prop_assert_eq!(spec.to_string().parse::<GroupSpec>().unwrap(), spec);
            }
        }
    }
}
