//! Flat parameter vectors and the operations that treat a network as one
//! long vector: target tracking, weight perturbation, cross-worker averaging.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Weight,
    Bias,
    NormGain,
    NormBias,
}

/// Index ranges of one dense layer inside the flat vector.
///
/// Weights are row-major with shape `(fan_out, fan_in)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlots {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    pub norm: Option<(Range<usize>, Range<usize>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub layer: usize,
    pub role: TensorRole,
    pub range: Range<usize>,
    pub shape: (usize, usize),
}

/// Ordered mapping from (layer, tensor role) to index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    layers: Vec<LayerSlots>,
    len: usize,
}

impl ParamLayout {
    /// Builds a layout from `(fan_in, fan_out, layer_norm)` triples.
    pub(crate) fn from_layers(shapes: &[(usize, usize, bool)]) -> Self {
        let mut offset = 0;
        let mut take = |n: usize| {
            let r = offset..offset + n;
            offset += n;
            r
        };
        let layers = shapes
            .iter()
            .map(|&(fan_in, fan_out, norm)| {
                let weight = take(fan_in * fan_out);
                let bias = take(fan_out);
                let norm = norm.then(|| (take(fan_out), take(fan_out)));
                LayerSlots {
                    fan_in,
                    fan_out,
                    weight,
                    bias,
                    norm,
                }
            })
            .collect();
        Self { layers, len: offset }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn layers(&self) -> &[LayerSlots] {
        &self.layers
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        for (layer, s) in self.layers.iter().enumerate() {
            out.push(Segment {
                layer,
                role: TensorRole::Weight,
                range: s.weight.clone(),
                shape: (s.fan_out, s.fan_in),
            });
            out.push(Segment {
                layer,
                role: TensorRole::Bias,
                range: s.bias.clone(),
                shape: (1, s.fan_out),
            });
            if let Some((g, b)) = &s.norm {
                out.push(Segment {
                    layer,
                    role: TensorRole::NormGain,
                    range: g.clone(),
                    shape: (1, s.fan_out),
                });
                out.push(Segment {
                    layer,
                    role: TensorRole::NormBias,
                    range: b.clone(),
                    shape: (1, s.fan_out),
                });
            }
        }
        out
    }

    /// `true` at every coordinate with the given roles.
    pub fn mask(&self, roles: &[TensorRole]) -> Vec<bool> {
        let mut mask = vec![false; self.len];
        for seg in self.segments() {
            if roles.contains(&seg.role) {
                mask[seg.range].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }
}

/// One named tensor of an unflattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub layer: usize,
    pub role: TensorRole,
    pub shape: (usize, usize),
    pub values: Vec<f64>,
}

/// Flat view of all parameters of one network.
///
/// Every mutable borrow of the values assigns a fresh stamp, so activation
/// caches can detect that they were computed with different parameters.
#[derive(Debug, Clone)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
    stamp: u64,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && self.layout == other.layout
    }
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
            stamp: fresh_stamp(),
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        crate::error::check_dim("parameter vector", layout.len(), values.len())?;
        Ok(Self {
            values,
            layout,
            stamp: fresh_stamp(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.stamp = fresh_stamp();
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::Contract("parameter layouts differ".into()))
        }
    }

    /// A vector with this layout and the given values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(self.layout.clone(), values)
    }

    pub fn unflatten(&self) -> Vec<Tensor> {
        self.layout
            .segments()
            .into_iter()
            .map(|s| Tensor {
                layer: s.layer,
                role: s.role,
                shape: s.shape,
                values: self.values[s.range].to_vec(),
            })
            .collect()
    }

    pub fn flatten(layout: Arc<ParamLayout>, tensors: &[Tensor]) -> Result<Self> {
        let segments = layout.segments();
        if segments.len() != tensors.len() {
            return Err(Error::Contract(format!(
                "expected {} tensors, got {}",
                segments.len(),
                tensors.len()
            )));
        }
        let mut values = Vec::with_capacity(layout.len());
        for (seg, t) in segments.iter().zip(tensors) {
            if seg.layer != t.layer || seg.role != t.role || seg.range.len() != t.values.len() {
                return Err(Error::Contract(format!(
                    "tensor ({}, {:?}) does not match layout",
                    t.layer, t.role
                )));
            }
            values.extend_from_slice(&t.values);
        }
        Self::from_values(layout, values)
    }

    pub fn scale(&mut self, k: f64) {
        self.values_mut().iter_mut().for_each(|v| *v *= k);
    }

    /// `self += k · other`
    pub fn add_scaled(&mut self, other: &ParamVector, k: f64) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values_mut().iter_mut().zip(&other.values) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `(1 − tau)·target + tau·online`, elementwise.
pub fn polyak_track(target: &ParamVector, online: &ParamVector, tau: f64) -> Result<ParamVector> {
    let mut out = target.clone();
    polyak_track_in_place(&mut out, online, tau)?;
    Ok(out)
}

pub fn polyak_track_in_place(target: &mut ParamVector, online: &ParamVector, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("polyak rate {tau} outside [0, 1]")));
    }
    target.check_layout(online)?;
    for (t, o) in target.values_mut().iter_mut().zip(&online.values) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

/// Adds i.i.d. `N(0, stddev²)` noise to every weight and bias; layer-norm
/// gains and biases are left untouched.
pub fn perturb<R: Rng + ?Sized>(params: &ParamVector, stddev: f64, rng: &mut R) -> ParamVector {
    let mut out = params.clone();
    if stddev == 0.0 {
        return out;
    }
    let frozen = params.layout.mask(&[TensorRole::NormGain, TensorRole::NormBias]);
    for (v, skip) in out.values_mut().iter_mut().zip(frozen) {
        let z: f64 = rng.sample(StandardNormal);
        if !skip {
            *v += stddev * z;
        }
    }
    out
}

/// Elementwise mean of equally-shaped rows with a fixed pairwise reduction
/// order. Identical rows average back to themselves exactly when the row
/// count is a power of two.
pub(crate) fn pairwise_mean(rows: &[&[f64]]) -> Vec<f64> {
    fn sum(rows: &[&[f64]]) -> Vec<f64> {
        match rows.len() {
            1 => rows[0].to_vec(),
            n => {
                let (l, r) = rows.split_at(n / 2);
                let mut a = sum(l);
                for (x, y) in a.iter_mut().zip(sum(r)) {
                    *x += y;
                }
                a
            }
        }
    }
    let k = rows.len() as f64;
    let mut s = sum(rows);
    s.iter_mut().for_each(|v| *v /= k);
    s
}

/// Elementwise arithmetic mean of parameter or gradient vectors.
pub fn average(inputs: &[ParamVector]) -> Result<ParamVector> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Contract("cannot average an empty list".into()))?;
    for p in &inputs[1..] {
        first.check_layout(p)?;
    }
    let rows: Vec<&[f64]> = inputs.iter().map(|p| p.values()).collect();
    first.with_values(pairwise_mean(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout() -> Arc<ParamLayout> {
        Arc::new(ParamLayout::from_layers(&[(2, 3, true), (3, 1, false)]))
    }

    fn vector(values: Vec<f64>) -> ParamVector {
        ParamVector::from_values(layout(), values).unwrap()
    }

    #[test]
    fn layout_counts_norm_parameters() {
        // (2+1)*3 + 2*3 + (3+1)*1
        assert_eq!(layout().len(), 9 + 6 + 4);
        let norm = layout().mask(&[TensorRole::NormGain, TensorRole::NormBias]);
        assert_eq!(norm.iter().filter(|m| **m).count(), 6);
    }

    #[test]
    fn polyak_endpoints() {
        let t = vector(vec![0.5; 19]);
        let o = vector((0..19).map(|i| i as f64).collect());
        assert_eq!(polyak_track(&t, &o, 1.0).unwrap(), o);
        assert_eq!(polyak_track(&t, &o, 0.0).unwrap(), t);
        let small = polyak_track(&vector(vec![0.0; 19]), &vector(vec![1.0; 19]), 0.005).unwrap();
        assert!(small.values().iter().all(|v| *v == 0.005));
        assert!(matches!(polyak_track(&t, &o, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn perturb_leaves_norm_coordinates_alone() {
        let p = vector(vec![0.3; 19]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(perturb(&p, 0.0, &mut rng), p);
        let q = perturb(&p, 5.0, &mut rng);
        let norm = p.layout().mask(&[TensorRole::NormGain, TensorRole::NormBias]);
        for ((a, b), frozen) in p.values().iter().zip(q.values()).zip(norm) {
            assert_eq!(frozen, a == b);
        }
    }

    #[test]
    fn perturb_stddev_is_calibrated() {
        let p = vector(vec![0.0; 19]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut sq = [0.0; 19];
        for _ in 0..draws {
            let q = perturb(&p, 0.2, &mut rng);
            for (s, v) in sq.iter_mut().zip(q.values()) {
                *s += v * v;
            }
        }
        let norm = p.layout().mask(&[TensorRole::NormGain, TensorRole::NormBias]);
        for (s, frozen) in sq.iter().zip(norm) {
            if !frozen {
                let sd = (s / draws as f64).sqrt();
                assert!((sd / 0.2 - 1.0).abs() < 0.02, "sd {sd}");
            }
        }
    }

    #[test]
    fn average_edge_cases() {
        let g = vector((0..19).map(|i| i as f64 * 0.37 - 1.1).collect());
        let mut neg = g.clone();
        neg.scale(-1.0);
        assert_eq!(average(std::slice::from_ref(&g)).unwrap(), g);
        assert!(average(&[g.clone(), neg]).unwrap().values().iter().all(|v| *v == 0.0));
        assert_eq!(average(&vec![g.clone(); 4]).unwrap(), g);
        assert!(average(&[]).is_err());
        let other = ParamVector::zeros(Arc::new(ParamLayout::from_layers(&[(19, 1, false)])));
        assert!(average(&[g, other]).is_err());
    }

    #[test]
    fn mutation_restamps() {
        let mut p = vector(vec![0.0; 19]);
        let before = p.stamp();
        let clone = p.clone();
        assert_eq!(clone.stamp(), before);
        p.values_mut()[0] = 1.0;
        assert_ne!(p.stamp(), before);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_roundtrip(values in prop::collection::vec(-1e6f64..1e6, 19)) {
            let p = vector(values);
            let back = ParamVector::flatten(p.layout().clone(), &p.unflatten()).unwrap();
            prop_assert_eq!(back.values(), p.values());
        }

        #[test]
        fn polyak_contracts_toward_online(
            t in prop::collection::vec(-10f64..10.0, 19),
            o in prop::collection::vec(-10f64..10.0, 19),
            tau in 0f64..=1.0,
        ) {
            let (t, o) = (vector(t), vector(o));
            let tracked = polyak_track(&t, &o, tau).unwrap();
            for ((x, a), b) in tracked.values().iter().zip(o.values()).zip(t.values()) {
                let lhs = (x - a).abs();
                let rhs = (1.0 - tau) * (b - a).abs();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
            }
        }

        #[test]
        fn average_is_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-5f64..5.0, 19), 1..6),
            rot in 0usize..6,
        ) {
            let vs: Vec<_> = rows.into_iter().map(vector).collect();
            let mut shuffled = vs.clone();
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
            let a = average(&vs).unwrap();
            let b = average(&shuffled).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
