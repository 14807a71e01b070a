//! Attention modules that can occupy a backbone insertion slot.
//!
//! Every module gates its input with sigmoid outputs, so no module ever
//! amplifies the magnitude of an activation.

pub mod cbam;
pub mod gsop;
pub mod se;

use rand::Rng;

pub use cbam::{CbamCache, CbamParams};
pub use gsop::{GsopCache, GsopParams};
pub use se::{SeCache, SeParams};

use crate::error::{Error, Result};
use crate::space::{AttentionKind, SlotGene, SpaceParams};
use crate::tensor::{FeatureMap, Real, Tensor};

/// Initial bias of every gate pre-activation. Gates start mostly open
/// (sigmoid(3) ≈ 0.95), so a stack of modules does not shrink the signal of
/// an unnormalized backbone at initialization.
pub const GATE_BIAS_INIT: f64 = 3.0;

/// `out = W·x + b` for a row-major `W` of shape `[out.len(), x.len()]`.
pub(crate) fn dense<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>();
    }
}

/// `out += Wᵀ·v` for a row-major `W` of shape `[v.len(), out.len()]`.
pub(crate) fn dense_t<T: Real>(w: &[T], v: &[T], out: &mut [T]) {
    let cols = out.len();
    for (r, &d) in v.iter().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a * d;
        }
    }
}

/// `m += a ⊗ b` for a row-major `m` of shape `[a.len(), b.len()]`.
pub(crate) fn add_outer<T: Real>(m: &mut [T], a: &[T], b: &[T]) {
    let cols = b.len();
    for (r, &x) in a.iter().enumerate() {
        for (o, &y) in m[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *o += x * y;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttentionParams<T> {
    Identity,
    Se(SeParams<T>),
    Cbam(CbamParams<T>),
    Gsop(GsopParams<T>),
}

#[derive(Debug, Clone)]
pub enum SlotCache<T> {
    Identity,
    Se(SeCache<T>),
    Cbam(CbamCache<T>),
    Gsop(GsopCache<T>),
}

impl<T: Real> AttentionParams<T> {
    /// Fresh parameters for `gene` at a slot with `channels × positions`.
    pub fn init<R: Rng + ?Sized>(
        gene: &SlotGene,
        space: &SpaceParams,
        channels: usize,
        positions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let Some((kind, width, groups)) = space.resolve(gene) else {
            return Ok(AttentionParams::Identity);
        };
        if channels % groups != 0 {
            return Err(Error::Shape(format!(
                "group {groups} does not divide {channels}"
            )));
        }
        Ok(match kind {
            AttentionKind::Se => AttentionParams::Se(SeParams::init(channels, width, groups, rng)),
            AttentionKind::Cbam => {
                AttentionParams::Cbam(CbamParams::init(channels, width, groups, rng))
            }
            AttentionKind::Gsop => AttentionParams::Gsop(GsopParams::init(
                channels, width, groups, positions, rng,
            )),
        })
    }

    pub fn kind(&self) -> Option<AttentionKind> {
        match self {
            AttentionParams::Identity => None,
            AttentionParams::Se(_) => Some(AttentionKind::Se),
            AttentionParams::Cbam(_) => Some(AttentionKind::Cbam),
            AttentionParams::Gsop(_) => Some(AttentionKind::Gsop),
        }
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, SlotCache<T>)> {
        Ok(match self {
            AttentionParams::Identity => (x.clone(), SlotCache::Identity),
            AttentionParams::Se(p) => {
                let (y, c) = p.forward(x)?;
                (y, SlotCache::Se(c))
            }
            AttentionParams::Cbam(p) => {
                let (y, c) = p.forward(x)?;
                (y, SlotCache::Cbam(c))
            }
            AttentionParams::Gsop(p) => {
                let (y, c) = p.forward(x)?;
                (y, SlotCache::Gsop(c))
            }
        })
    }

    /// Returns the input gradient and accumulates parameter gradients.
    pub fn backward(
        &self,
        cache: &SlotCache<T>,
        dy: &FeatureMap<T>,
        grads: &mut Self,
    ) -> FeatureMap<T> {
        match (self, cache, grads) {
            (AttentionParams::Identity, SlotCache::Identity, _) => dy.clone(),
            (AttentionParams::Se(p), SlotCache::Se(c), AttentionParams::Se(g)) => {
                p.backward(c, dy, g)
            }
            (AttentionParams::Cbam(p), SlotCache::Cbam(c), AttentionParams::Cbam(g)) => {
                p.backward(c, dy, g)
            }
            (AttentionParams::Gsop(p), SlotCache::Gsop(c), AttentionParams::Gsop(g)) => {
                p.backward(c, dy, g)
            }
            _ => panic!("attention backward: params, cache and grads disagree on kind"),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            AttentionParams::Identity => Vec::new(),
            AttentionParams::Se(p) => p.tensors(),
            AttentionParams::Cbam(p) => p.tensors(),
            AttentionParams::Gsop(p) => p.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            AttentionParams::Identity => Vec::new(),
            AttentionParams::Se(p) => p.tensors_mut(),
            AttentionParams::Cbam(p) => p.tensors_mut(),
            AttentionParams::Gsop(p) => p.tensors_mut(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            AttentionParams::Identity => AttentionParams::Identity,
            AttentionParams::Se(p) => AttentionParams::Se(p.zeros_like()),
            AttentionParams::Cbam(p) => AttentionParams::Cbam(p.zeros_like()),
            AttentionParams::Gsop(p) => AttentionParams::Gsop(p.zeros_like()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> AttentionParams<U> {
        fn c<T: Real, U: Real>(t: &Tensor<T>) -> Tensor<U> {
            t.cast()
        }
        match self {
            AttentionParams::Identity => AttentionParams::Identity,
            AttentionParams::Se(p) => AttentionParams::Se(SeParams {
                channels: p.channels,
                width: p.width,
                groups: p.groups,
                w1: c(&p.w1),
                b1: c(&p.b1),
                w2: c(&p.w2),
                b2: c(&p.b2),
            }),
            AttentionParams::Cbam(p) => AttentionParams::Cbam(CbamParams {
                channels: p.channels,
                width: p.width,
                groups: p.groups,
                w1: c(&p.w1),
                b1: c(&p.b1),
                w2: c(&p.w2),
                b2: c(&p.b2),
                spatial: c(&p.spatial),
                spatial_bias: c(&p.spatial_bias),
            }),
            AttentionParams::Gsop(p) => AttentionParams::Gsop(GsopParams {
                channels: p.channels,
                width: p.width,
                groups: p.groups,
                positions: p.positions,
                reduce: c(&p.reduce),
                expand: c(&p.expand),
                expand_bias: c(&p.expand_bias),
                pos_expand: c(&p.pos_expand),
                pos_bias: c(&p.pos_bias),
            }),
        }
    }

    fn matches_gene(&self, gene: &SlotGene, space: &SpaceParams) -> bool {
        match (space.resolve(gene), self) {
            (None, AttentionParams::Identity) => true,
            (Some((AttentionKind::Se, w, g)), AttentionParams::Se(p)) => {
                p.width == w && p.groups == g
            }
            (Some((AttentionKind::Cbam, w, g)), AttentionParams::Cbam(p)) => {
                p.width == w && p.groups == g
            }
            (Some((AttentionKind::Gsop, w, g)), AttentionParams::Gsop(p)) => {
                p.width == w && p.groups == g
            }
            _ => false,
        }
    }
}

/// Applies the module described by `gene`; `params` must have been built
/// for that gene at this slot.
pub fn slot_apply<T: Real>(
    x: &FeatureMap<T>,
    gene: &SlotGene,
    space: &SpaceParams,
    params: &AttentionParams<T>,
) -> Result<(FeatureMap<T>, SlotCache<T>)> {
    if !params.matches_gene(gene, space) {
        return Err(Error::InvalidInput(
            "slot parameters were not built for this gene".into(),
        ));
    }
    if let Some((_, _, groups)) = space.resolve(gene) {
        if x.channels % groups != 0 {
            return Err(Error::Shape(format!(
                "group {groups} does not divide {}",
                x.channels
            )));
        }
    }
    params.forward(x)
}

/// Per-sample multiply-accumulate count of one attention module: dense
/// maps, reductions, covariances, the spatial convolution and the
/// element-wise gate products. Pooling sums and nonlinearities are not
/// counted.
pub fn attention_macs(
    kind: AttentionKind,
    channels: usize,
    width: usize,
    positions: usize,
) -> u64 {
    let (c, w, hw) = (channels as u64, width as u64, positions as u64);
    let k2 = (cbam::SPATIAL_KERNEL * cbam::SPATIAL_KERNEL) as u64;
    match kind {
        // two dense maps + channel gating
        AttentionKind::Se => 2 * c * w + c * hw,
        // shared map applied to avg and max + channel gating
        // + 2→1 spatial conv + spatial gating
        AttentionKind::Cbam => 4 * c * w + c * hw + 2 * k2 * hw + c * hw,
        // reduce + covariance + expand + channel gating
        // + position pooling + covariance + expand + spatial gating
        AttentionKind::Gsop => {
            w * c * hw + w * w * hw + c * w * w + c * hw + c * hw * w + c * w * w + hw * w * w + c * hw
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_check_module, random_map};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn se_gene(width_idx: usize, group_idx: usize) -> SlotGene {
        SlotGene::Attention {
            kind: AttentionKind::Se,
            width_idx,
            group_idx,
        }
    }

    #[test]
    fn se_zero_excitation_halves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = SeParams::<f64>::init(16, 8, 2, &mut rng);
        p.w2.fill_zero();
        p.b2.fill_zero();
        let x = random_map(16, 3, 4, 4, &mut rng);
        let (y, _) = p.forward(&x).unwrap();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn se_symmetric_input_gives_equal_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = SeParams::<f64>::init(8, 4, 1, &mut rng);
        p.w1.data.iter_mut().for_each(|v| *v = 0.3);
        p.b1.data.iter_mut().for_each(|v| *v = 0.1);
        p.w2.data.iter_mut().for_each(|v| *v = -0.2);
        p.b2.data.iter_mut().for_each(|v| *v = 0.05);
        let mut x = FeatureMap::<f64>::zeros(8, 1, 3, 3);
        x.data.iter_mut().for_each(|v| *v = 1.7);
        let (_, cache) = p.forward(&x).unwrap();
        assert!(cache.gates.iter().all(|&g| g == cache.gates[0]));
    }

    #[test]
    fn fresh_gates_start_open() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_map(8, 2, 3, 3, &mut rng);
        let mut se = SeParams::<f64>::init(8, 4, 2, &mut rng);
        se.w2.fill_zero();
        let (_, cache) = se.forward(&x).unwrap();
        assert!(cache.gates.iter().all(|&g| (g - GATE_BIAS_INIT.sigmoid()).abs() < 1e-15 && g > 0.95));
    }

    #[test]
    fn cbam_zero_spatial_kernel_gives_half_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = CbamParams::<f64>::init(8, 4, 2, &mut rng);
        p.spatial.fill_zero();
        p.spatial_bias.fill_zero();
        let x = random_map(8, 2, 5, 5, &mut rng);
        let (_, cache) = p.forward(&x).unwrap();
        assert!(cache.gate_s.iter().all(|&g| g == 0.5));
    }

    #[test]
    fn cbam_spatially_constant_input_gives_constant_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = CbamParams::<f64>::init(4, 8, 1, &mut rng);
        let mut x = FeatureMap::<f64>::zeros(4, 1, 4, 4);
        for ch in 0..4 {
            let v = 0.3 * ch as f64 - 0.4;
            x.plane_mut(ch, 0).iter_mut().for_each(|e| *e = v);
        }
        let (_, cache) = p.forward(&x).unwrap();
        let hw = 16;
        let mean = &cache.maps[..hw];
        let max = &cache.maps[hw..2 * hw];
        assert!(mean.iter().all(|&v| v == mean[0]));
        assert!(max.iter().all(|&v| v == max[0]));

        // a centre-only kernel never touches the padding
        let k = cbam::SPATIAL_KERNEL;
        p.spatial.fill_zero();
        p.spatial.data[k * k / 2] = 0.7;
        p.spatial.data[k * k + k * k / 2] = -0.4;
        let (_, cache) = p.forward(&x).unwrap();
        let want = (0.7 * cache.maps[0] - 0.4 * cache.maps[hw] + GATE_BIAS_INIT).sigmoid();
        for &g in &cache.gate_s {
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gsop_identical_positions_give_bias_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = GsopParams::<f64>::init(8, 4, 2, 9, &mut rng);
        p.expand_bias
            .data
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 0.1 * i as f64 - 0.3);
        let mut x = FeatureMap::<f64>::zeros(8, 2, 3, 3);
        for ch in 0..8 {
            for n in 0..2 {
                let v = (ch * 3 + n) as f64 * 0.17 - 0.5;
                x.plane_mut(ch, n).iter_mut().for_each(|e| *e = v);
            }
        }
        let (_, cache) = p.forward(&x).unwrap();
        assert!(cache.svecs.iter().all(|&v| v.abs() < 1e-15));
        for n in 0..2 {
            for ch in 0..8 {
                let want = 1.0 / (1.0 + (-p.expand_bias.data[ch]).exp());
                assert!((cache.gate_c[n * 8 + ch] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gsop_covariances_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = GsopParams::<f64>::init(8, 5, 2, 16, &mut rng);
        let x = random_map(8, 3, 4, 4, &mut rng);
        let (_, cache) = p.forward(&x).unwrap();
        let w = 5;
        for s in cache.svecs.chunks(w * w).chain(cache.sp.chunks(w * w)) {
            for i in 0..w {
                for j in 0..w {
                    assert!((s[i * w + j] - s[j * w + i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gsop_rejects_single_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = GsopParams::<f64>::init(4, 4, 1, 1, &mut rng);
        let x = random_map(4, 1, 1, 1, &mut rng);
        assert!(p.forward(&x).is_err());
    }

    #[test]
    fn adaptive_pool_rows_partition_or_cover() {
        for (hw, w) in [(16, 8), (4, 8), (9, 4), (4, 64)] {
            let a = gsop::adaptive_pool_matrix::<f64>(hw, w);
            for j in 0..w {
                let col: f64 = (0..hw).map(|p| a[p * w + j]).sum();
                assert!((col - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gates_never_amplify() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let space = SpaceParams::desk(1);
        for code in 1..space.choices_per_slot() {
            let gene = space.gene_from_code(code).unwrap();
            let p = AttentionParams::<f64>::init(&gene, &space, 16, 9, &mut rng).unwrap();
            let x = random_map(16, 2, 3, 3, &mut rng);
            let (y, _) = slot_apply(&x, &gene, &space, &p).unwrap();
            for (a, b) in y.data.iter().zip(&x.data) {
                assert!(a.abs() <= b.abs());
            }
        }
    }

    #[test]
    fn group_of_one_matches_ungrouped_reference() {
        // SE with g = 1 against a direct ungrouped evaluation
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = SeParams::<f64>::init(6, 4, 1, &mut rng);
        let x = random_map(6, 1, 2, 2, &mut rng);
        let (y, _) = p.forward(&x).unwrap();
        let pooled: Vec<f64> = (0..6).map(|c| x.plane(c, 0).iter().sum::<f64>() / 4.0).collect();
        let h: Vec<f64> = (0..4)
            .map(|r| {
                let s: f64 = (0..6).map(|c| p.w1.data[r * 6 + c] * pooled[c]).sum();
                (s + p.b1.data[r]).max(0.0)
            })
            .collect();
        for c in 0..6 {
            let a: f64 = (0..4).map(|r| p.w2.data[c * 4 + r] * h[r]).sum::<f64>() + p.b2.data[c];
            let gate = 1.0 / (1.0 + (-a).exp());
            for (yv, xv) in y.plane(c, 0).iter().zip(x.plane(c, 0)) {
                assert!((yv - gate * xv).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identity_slot_is_bit_identical_and_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let space = SpaceParams::desk(1);
        let p = AttentionParams::<f32>::init(&SlotGene::Identity, &space, 16, 4, &mut rng).unwrap();
        assert_eq!(p.param_count(), 0);
        let x = random_map::<f32>(16, 2, 2, 2, &mut rng);
        let (y, _) = slot_apply(&x, &SlotGene::Identity, &space, &p).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn se_dispatch_and_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let space = SpaceParams::desk(1);
        let gene = se_gene(0, 0); // width 8, group 1
        let p = AttentionParams::<f64>::init(&gene, &space, 16, 4, &mut rng).unwrap();
        assert_eq!(p.param_count(), 16 * 8 + 8 + 8 * 16 + 16);
        assert_eq!(p.param_count(), 280);
        let x = random_map(16, 2, 2, 2, &mut rng);
        let (y, _) = slot_apply(&x, &gene, &space, &p).unwrap();
        let AttentionParams::Se(se) = &p else { unreachable!() };
        assert_eq!(y, se.forward(&x).unwrap().0);
    }

    #[test]
    fn slot_apply_rejects_mismatched_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let space = SpaceParams::desk(1);
        let p = AttentionParams::<f64>::init(&se_gene(0, 0), &space, 16, 4, &mut rng).unwrap();
        let x = random_map(16, 1, 2, 2, &mut rng);
        assert!(slot_apply(&x, &se_gene(1, 0), &space, &p).is_err());
        assert!(slot_apply(&x, &SlotGene::Identity, &space, &p).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = GsopParams::<f32>::init(8, 8, 2, 4, &mut rng);
        let x = random_map(8, 4, 2, 2, &mut rng);
        assert_eq!(p.forward(&x).unwrap().0, p.forward(&x).unwrap().0);
    }

    #[test]
    fn gradient_checks_all_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let space = SpaceParams::desk(1);
        for kind in [AttentionKind::Se, AttentionKind::Cbam, AttentionKind::Gsop] {
            for trial in 0..5 {
                let gene = SlotGene::Attention {
                    kind,
                    width_idx: trial % 2,
                    group_idx: trial % 3,
                };
                if let Some(err) = fd_check_module(&gene, &space, 8, 2, 3, 3, &mut rng) {
                    assert!(err < 1e-4, "{kind} trial {trial}: rel err {err}");
                }
            }
        }
    }
}
