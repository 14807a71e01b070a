//! Small convolutional backbone with attention slots on its deeper half.
//!
//! Block `i` is `conv3×3 → ReLU → slot` (slot only on the deeper half).
//! Blocks with an even 1-based index use stride 2 as long as the incoming
//! extent is at least 4, so the deepest maps never collapse below 2×2.
//! The head is global average pooling (the feature vector) followed by a
//! linear classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_macs, AttentionParams, SlotCache};
use crate::blob::{self, NamedArray};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::space::{AttentionGenome, SpaceParams};
use crate::tensor::{col2im3, gemm, im2col3, FeatureMap, Real, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSpec {
    pub channels: Vec<usize>,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub num_classes: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            channels: vec![8, 8, 16, 16, 32, 32, 64, 64],
            input_channels: 1,
            input_height: 16,
            input_width: 16,
            num_classes: 4,
        }
    }
}

impl BackboneSpec {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels.len() < 2 || self.channels.len() % 2 != 0 {
            return bad(format!(
                "backbone needs an even number (≥ 2) of blocks, got {}",
                self.channels.len()
            ));
        }
        if self.channels.contains(&0) || self.input_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.input_height == 0 || self.input_width == 0 {
            return bad("input extent must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.channels.len()
    }

    /// Number of attention slots (the deeper half of the blocks).
    pub fn num_slots(&self) -> usize {
        self.num_blocks() / 2
    }

    /// Block index of the first slot.
    pub fn first_slot_block(&self) -> usize {
        self.num_blocks() - self.num_slots()
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().expect("non-empty")
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut h = self.input_height.min(self.input_width);
        (0..self.num_blocks())
            .map(|i| {
                let s = if (i + 1) % 2 == 0 && h >= 4 { 2 } else { 1 };
                h = (h - 1) / s + 1;
                s
            })
            .collect()
    }

    /// Output `(height, width)` of every block.
    pub fn extents(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (self.input_height, self.input_width);
        self.strides()
            .into_iter()
            .map(|s| {
                h = (h - 1) / s + 1;
                w = (w - 1) / s + 1;
                (h, w)
            })
            .collect()
    }

    pub fn slot_channels(&self) -> Vec<usize> {
        self.channels[self.first_slot_block()..].to_vec()
    }

    pub fn slot_positions(&self) -> Vec<usize> {
        self.extents()[self.first_slot_block()..]
            .iter()
            .map(|(h, w)| h * w)
            .collect()
    }

    pub fn validate_genome(
        &self,
        genome: &AttentionGenome,
        space: &SpaceParams,
    ) -> std::result::Result<(), Vec<crate::space::GenomeViolation>> {
        space.validate(genome, &self.slot_channels())
    }

    /// Forward multiply-accumulates per sample for convs and classifier.
    pub fn backbone_macs(&self) -> u64 {
        let mut cin = self.input_channels;
        let mut total = 0u64;
        for (&cout, (h, w)) in self.channels.iter().zip(self.extents()) {
            total += (cout * cin * 9 * h * w) as u64;
            cin = cout;
        }
        total + (self.feature_dim() * self.num_classes) as u64
    }

    /// Forward multiply-accumulates per sample including attention.
    pub fn macs(&self, genome: &AttentionGenome, space: &SpaceParams) -> u64 {
        self.backbone_macs() + self.attention_macs(genome, space)
    }

    pub fn attention_macs(&self, genome: &AttentionGenome, space: &SpaceParams) -> u64 {
        genome
            .slots
            .iter()
            .zip(self.slot_channels().into_iter().zip(self.slot_positions()))
            .filter_map(|(g, (c, hw))| space.resolve(g).map(|(k, w, _)| attention_macs(k, c, w, hw)))
            .sum()
    }

    pub fn backbone_param_count(&self) -> usize {
        let mut cin = self.input_channels;
        let mut total = 0;
        for &cout in &self.channels {
            total += cout * cin * 9 + cout;
            cin = cout;
        }
        total + self.feature_dim() * self.num_classes + self.num_classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// `[out, in, 3, 3]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<T> {
    pub convs: Vec<ConvParams<T>>,
    pub slots: Vec<AttentionParams<T>>,
    /// `[classes, features]`
    pub fc_weight: Tensor<T>,
    /// `[classes]`
    pub fc_bias: Tensor<T>,
}

/// Stream tags for per-part initialization seeds.
const TAG_CONV: u64 = 0x636f_6e76;
const TAG_FC: u64 = 0x6663;
const TAG_SLOT: u64 = 0x736c_6f74;

/// Mean number of kernel taps that land inside a `h×w` input for a 3×3,
/// pad-1 convolution with the given stride.
pub fn mean_taps(h: usize, w: usize, stride: usize) -> f64 {
    let axis = |extent: usize| -> Vec<usize> {
        (0..(extent - 1) / stride + 1)
            .map(|o| {
                (0..3)
                    .filter(|&k| {
                        let i = (o * stride + k) as isize - 1;
                        i >= 0 && i < extent as isize
                    })
                    .count()
            })
            .collect()
    };
    let (ry, rx) = (axis(h), axis(w));
    let total: usize = ry.iter().map(|a| rx.iter().map(|b| a * b).sum::<usize>()).sum();
    total as f64 / (ry.len() * rx.len()) as f64
}

/// He-uniform initialization with the fan-in counted over in-bounds taps, so
/// layers on tiny maps do not shrink the signal.
pub(crate) fn init_conv<T: Real>(cin: usize, cout: usize, taps: f64, seed: u64) -> ConvParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = (6.0 / (cin as f64 * taps)).sqrt();
    ConvParams {
        weight: Tensor::uniform(&[cout, cin, 3, 3], bound, &mut rng),
        bias: Tensor::zeros(&[cout]),
    }
}

/// Seed used to initialize the attention parameters of `slot`.
pub fn slot_seed(individual_seed: u64, slot: usize) -> u64 {
    derive_seed(derive_seed(individual_seed, TAG_SLOT), slot as u64)
}

impl<T: Real> NetworkWeights<T> {
    /// Initializes a network for `genome`. The shallow half of the convs is
    /// drawn from `stem_seed` (shared across a run); deep convs, attention
    /// parameters and the classifier come from `seed`.
    pub fn build(
        spec: &BackboneSpec,
        space: &SpaceParams,
        genome: &AttentionGenome,
        stem_seed: u64,
        seed: u64,
    ) -> Result<Self> {
        spec.check()?;
        spec.validate_genome(genome, space)
            .map_err(Error::InvalidGenome)?;
        let first = spec.first_slot_block();
        let mut cin = spec.input_channels;
        let mut convs = Vec::with_capacity(spec.num_blocks());
        let (mut h, mut w) = (spec.input_height, spec.input_width);
        for ((i, &cout), (stride, (ho, wo))) in spec
            .channels
            .iter()
            .enumerate()
            .zip(spec.strides().into_iter().zip(spec.extents()))
        {
            let base = if i < first { stem_seed } else { seed };
            let taps = mean_taps(h, w, stride);
            convs.push(init_conv(cin, cout, taps, derive_seed(derive_seed(base, TAG_CONV), i as u64)));
            cin = cout;
            (h, w) = (ho, wo);
        }
        let slots = genome
            .slots
            .iter()
            .enumerate()
            .map(|(j, gene)| {
                let mut rng = ChaCha8Rng::seed_from_u64(slot_seed(seed, j));
                AttentionParams::init(
                    gene,
                    space,
                    spec.slot_channels()[j],
                    spec.slot_positions()[j],
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let feat = spec.feature_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_FC));
        Ok(NetworkWeights {
            convs,
            slots,
            fc_weight: Tensor::uniform(&[spec.num_classes, feat], (1.0 / feat as f64).sqrt(), &mut rng),
            fc_bias: Tensor::zeros(&[spec.num_classes]),
        })
    }

    /// Re-initializes the parameters of one slot for a new gene.
    pub fn reinit_slot(
        &mut self,
        spec: &BackboneSpec,
        space: &SpaceParams,
        genome: &AttentionGenome,
        slot: usize,
        seed: u64,
    ) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(slot_seed(seed, slot));
        self.slots[slot] = AttentionParams::init(
            &genome.slots[slot],
            space,
            spec.slot_channels()[slot],
            spec.slot_positions()[slot],
            &mut rng,
        )?;
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        NetworkWeights {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    weight: c.weight.zeros_like(),
                    bias: c.bias.zeros_like(),
                })
                .collect(),
            slots: self.slots.iter().map(|s| s.zeros_like()).collect(),
            fc_weight: self.fc_weight.zeros_like(),
            fc_bias: self.fc_bias.zeros_like(),
        }
    }

    /// All arrays with stable names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &c.weight));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        for (j, s) in self.slots.iter().enumerate() {
            let kind = s.kind().map(|k| k.to_string()).unwrap_or_default();
            for (name, t) in s.tensors() {
                out.push((format!("slot{j}.{kind}.{name}"), t));
            }
        }
        out.push(("fc.weight".into(), &self.fc_weight));
        out.push(("fc.bias".into(), &self.fc_bias));
        out
    }

    /// Mutable arrays in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for s in &mut self.slots {
            out.extend(s.tensors_mut());
        }
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn attention_param_count(&self) -> usize {
        self.slots.iter().map(|s| s.param_count()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.all_finite())
    }

    pub fn cast<U: Real>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                })
                .collect(),
            slots: self.slots.iter().map(|s| s.cast()).collect(),
            fc_weight: self.fc_weight.cast(),
            fc_bias: self.fc_bias.cast(),
        }
    }

    /// Runs the network on a batch of single-plane images.
    pub fn forward(&self, spec: &BackboneSpec, input: FeatureMap<T>) -> Result<ForwardPass<T>> {
        if input.channels != spec.input_channels
            || input.height != spec.input_height
            || input.width != spec.input_width
        {
            return Err(Error::Shape(format!(
                "expected input {}×{}×{}, got {}×{}×{}",
                spec.input_channels,
                spec.input_height,
                spec.input_width,
                input.channels,
                input.height,
                input.width
            )));
        }
        let first = spec.first_slot_block();
        let strides = spec.strides();
        let nb = input.batch;
        let mut blocks = Vec::with_capacity(self.convs.len());
        let mut x = input;
        for (i, conv) in self.convs.iter().enumerate() {
            let stride = strides[i];
            let cout = conv.bias.len();
            let (cols, ho, wo) = im2col3(&x, stride);
            let mut out = FeatureMap::zeros(cout, nb, ho, wo);
            let np = nb * ho * wo;
            gemm(
                false,
                false,
                cout,
                np,
                x.channels * 9,
                T::one(),
                &conv.weight.data,
                &cols,
                T::zero(),
                &mut out.data,
            );
            for (co, &b) in conv.bias.data.iter().enumerate() {
                for v in &mut out.data[co * np..(co + 1) * np] {
                    *v = (*v + b).max(T::zero());
                }
            }
            let input_shape = (x.channels, x.height, x.width);
            let (y, slot) = if i >= first {
                let (y, c) = self.slots[i - first].forward(&out)?;
                (y, Some(c))
            } else {
                (out.clone(), None)
            };
            blocks.push(BlockCache {
                cols,
                relu_out: out,
                slot,
                input_shape,
                stride,
            });
            x = y;
        }
        let hw = x.hw();
        let feat_dim = x.channels;
        let inv = T::one() / T::lit(hw as f64);
        let mut features = vec![T::zero(); nb * feat_dim];
        for c in 0..feat_dim {
            for n in 0..nb {
                features[n * feat_dim + c] = x.plane(c, n).iter().copied().sum::<T>() * inv;
            }
        }
        let k = spec.num_classes;
        let mut logits = vec![T::zero(); nb * k];
        gemm(
            false,
            true,
            nb,
            k,
            feat_dim,
            T::one(),
            &features,
            &self.fc_weight.data,
            T::zero(),
            &mut logits,
        );
        for row in logits.chunks_mut(k) {
            for (v, &b) in row.iter_mut().zip(&self.fc_bias.data) {
                *v += b;
            }
        }
        Ok(ForwardPass {
            batch: nb,
            feature_dim: feat_dim,
            num_classes: k,
            features,
            logits,
            last_extent: (x.height, x.width),
            blocks,
        })
    }

    /// Backpropagates `dlogits` (`[N×K]`) plus an optional direct feature
    /// gradient (`[N×F]`), accumulating into `grads`.
    pub fn backward(
        &self,
        pass: &ForwardPass<T>,
        dlogits: &[T],
        dfeatures: Option<&[T]>,
        grads: &mut NetworkWeights<T>,
    ) {
        let (nb, f, k) = (pass.batch, pass.feature_dim, pass.num_classes);
        assert_eq!(dlogits.len(), nb * k);
        gemm(
            true,
            false,
            k,
            f,
            nb,
            T::one(),
            dlogits,
            &pass.features,
            T::one(),
            &mut grads.fc_weight.data,
        );
        for row in dlogits.chunks(k) {
            for (g, &d) in grads.fc_bias.data.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dfeat = match dfeatures {
            Some(d) => {
                assert_eq!(d.len(), nb * f);
                d.to_vec()
            }
            None => vec![T::zero(); nb * f],
        };
        gemm(
            false,
            false,
            nb,
            f,
            k,
            T::one(),
            dlogits,
            &self.fc_weight.data,
            T::one(),
            &mut dfeat,
        );
        let (h, w) = pass.last_extent;
        let inv = T::one() / T::lit((h * w) as f64);
        let mut dy = FeatureMap::zeros(f, nb, h, w);
        for c in 0..f {
            for n in 0..nb {
                let d = dfeat[n * f + c] * inv;
                dy.plane_mut(c, n).iter_mut().for_each(|v| *v = d);
            }
        }
        let first = pass.blocks.len() - self.slots.len();
        for (i, block) in pass.blocks.iter().enumerate().rev() {
            let mut dout = match &block.slot {
                Some(cache) => {
                    let j = i - first;
                    self.slots[j].backward(cache, &dy, &mut grads.slots[j])
                }
                None => dy,
            };
            for (d, &o) in dout.data.iter_mut().zip(&block.relu_out.data) {
                if o <= T::zero() {
                    *d = T::zero();
                }
            }
            let cout = dout.channels;
            let np = dout.batch * dout.hw();
            let (cin, hin, win) = block.input_shape;
            let g = &mut grads.convs[i];
            for (co, b) in g.bias.data.iter_mut().enumerate() {
                *b += dout.data[co * np..(co + 1) * np].iter().copied().sum::<T>();
            }
            gemm(
                false,
                true,
                cout,
                cin * 9,
                np,
                T::one(),
                &dout.data,
                &block.cols,
                T::one(),
                &mut g.weight.data,
            );
            if i == 0 {
                break;
            }
            let mut dcols = vec![T::zero(); cin * 9 * np];
            gemm(
                true,
                false,
                cin * 9,
                np,
                cout,
                T::one(),
                &self.convs[i].weight.data,
                &dout.data,
                T::zero(),
                &mut dcols,
            );
            let mut dx = FeatureMap::zeros(cin, nb, hin, win);
            col2im3(&dcols, &mut dx, block.stride);
            dy = dx;
        }
    }
}

impl NetworkWeights<f32> {
    pub fn to_blob(&self) -> Vec<u8> {
        let arrays: Vec<NamedArray> = self
            .named_tensors()
            .into_iter()
            .map(|(name, t)| NamedArray {
                name,
                dims: t.shape.clone(),
                data: t.data.clone(),
            })
            .collect();
        blob::encode(blob::WEIGHTS_MAGIC, &arrays)
    }

    /// Restores weights into the layout implied by `spec` and `genome`.
    pub fn from_blob(
        bytes: &[u8],
        spec: &BackboneSpec,
        space: &SpaceParams,
        genome: &AttentionGenome,
    ) -> Result<Self> {
        let arrays = blob::decode(blob::WEIGHTS_MAGIC, bytes)?;
        let mut w = NetworkWeights::<f32>::build(spec, space, genome, 0, 0)?;
        let names: Vec<String> = w.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != arrays.len() {
            return Err(Error::Format(format!(
                "weight blob has {} arrays, expected {}",
                arrays.len(),
                names.len()
            )));
        }
        for ((name, t), a) in names.iter().zip(w.tensors_mut()).zip(arrays) {
            if *name != a.name || t.shape != a.dims {
                return Err(Error::Format(format!(
                    "weight blob array {} {:?} does not match expected {} {:?}",
                    a.name, a.dims, name, t.shape
                )));
            }
            t.data = a.data;
        }
        Ok(w)
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    cols: Vec<T>,
    relu_out: FeatureMap<T>,
    slot: Option<SlotCache<T>>,
    input_shape: (usize, usize, usize),
    stride: usize,
}

/// Outputs and the tape needed for [`NetworkWeights::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub batch: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// `[N × F]`, sample-major.
    pub features: Vec<T>,
    /// `[N × K]`, sample-major.
    pub logits: Vec<T>,
    last_extent: (usize, usize),
    blocks: Vec<BlockCache<T>>,
}

/// One SGD update on flat slices. Weight decay is folded into the gradient
/// before the momentum buffer.
pub fn sgd_update<T: Real>(
    weights: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: T,
    momentum: T,
    weight_decay: T,
) {
    for ((w, &g), v) in weights.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let d = g + weight_decay * *w;
        *v = momentum * *v + d;
        *w -= lr * *v;
    }
}

/// SGD with momentum and weight decay over a whole network.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    pub weight_decay: T,
    velocity: Option<NetworkWeights<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr: T::lit(lr),
            momentum: T::lit(momentum),
            weight_decay: T::lit(weight_decay),
            velocity: None,
        }
    }

    /// Applies one step. With `freeze_classifier` the linear head is left
    /// untouched. Non-finite gradients or results yield `Error::Diverged`.
    pub fn step(
        &mut self,
        weights: &mut NetworkWeights<T>,
        grads: &NetworkWeights<T>,
        freeze_classifier: bool,
    ) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Diverged);
        }
        let velocity = self.velocity.get_or_insert_with(|| weights.zeros_like());
        let n = weights.tensors_mut().len();
        let grad_list: Vec<&Tensor<T>> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
        for (idx, ((w, v), g)) in weights
            .tensors_mut()
            .into_iter()
            .zip(velocity.tensors_mut())
            .zip(grad_list)
            .enumerate()
        {
            if freeze_classifier && idx >= n - 2 {
                continue;
            }
            sgd_update(&mut w.data, &g.data, &mut v.data, self.lr, self.momentum, self.weight_decay);
        }
        if !weights.all_finite() {
            return Err(Error::Diverged);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{AttentionKind, SlotGene};
    use crate::gradcheck::random_map;

    fn spec() -> BackboneSpec {
        BackboneSpec::default()
    }

    #[test]
    fn mean_taps_counts_in_bounds_kernel_entries() {
        assert_eq!(mean_taps(1, 1, 1), 1.0);
        assert_eq!(mean_taps(2, 2, 1), 4.0);
        assert_eq!(mean_taps(4, 4, 1), 6.25);
        // stride 2 on 4×4: outputs at 0 and 2 per axis see 2 and 3 rows
        assert_eq!(mean_taps(4, 4, 2), 6.25);
        assert!((mean_taps(64, 64, 1) - 9.0).abs() < 0.3);
    }

    #[test]
    fn default_layout() {
        let s = spec();
        assert_eq!(s.num_slots(), 4);
        assert_eq!(s.strides(), vec![1, 2, 1, 2, 1, 2, 1, 1]);
        assert_eq!(s.slot_channels(), vec![32, 32, 64, 64]);
        assert_eq!(s.slot_positions(), vec![16, 4, 4, 4]);
    }

    #[test]
    fn shared_stem_and_private_deep_half() {
        let s = spec();
        let space = SpaceParams::desk(4);
        let g = AttentionGenome::identity(4);
        let a = NetworkWeights::<f32>::build(&s, &space, &g, 7, 100).unwrap();
        let b = NetworkWeights::<f32>::build(&s, &space, &g, 7, 200).unwrap();
        for i in 0..4 {
            assert_eq!(a.convs[i], b.convs[i]);
        }
        for i in 4..8 {
            assert_ne!(a.convs[i].weight, b.convs[i].weight);
        }
        let a2 = NetworkWeights::<f32>::build(&s, &space, &g, 7, 100).unwrap();
        assert_eq!(a, a2);
    }

    #[test]
    fn identity_genome_param_count_is_backbone_only() {
        let s = spec();
        let space = SpaceParams::desk(4);
        let w = NetworkWeights::<f32>::build(&s, &space, &AttentionGenome::identity(4), 0, 1).unwrap();
        // hand count: Σ (cout·cin·9 + cout) + 64·4 + 4
        let hand = (8 * 9 + 8)
            + (8 * 8 * 9 + 8)
            + (16 * 8 * 9 + 16)
            + (16 * 16 * 9 + 16)
            + (32 * 16 * 9 + 32)
            + (32 * 32 * 9 + 32)
            + (64 * 32 * 9 + 64)
            + (64 * 64 * 9 + 64)
            + 64 * 4
            + 4;
        assert_eq!(w.param_count(), hand);
        assert_eq!(s.backbone_param_count(), hand);
    }

    #[test]
    fn single_se_counts() {
        let s = spec();
        let space = SpaceParams::desk(4);
        let mut g = AttentionGenome::identity(4);
        g.slots[0] = SlotGene::Attention {
            kind: AttentionKind::Se,
            width_idx: 0,
            group_idx: 0,
        };
        let w = NetworkWeights::<f32>::build(&s, &space, &g, 0, 1).unwrap();
        // SE(w=8, g=1) at C=32: 32·8 + 8 + 8·32 + 32
        assert_eq!(w.param_count() - s.backbone_param_count(), 552);
        // MACs: dense maps 2·32·8 + gating 32·16
        assert_eq!(s.macs(&g, &space) - s.backbone_macs(), 512 + 512);
    }

    #[test]
    fn zero_input_zero_bias_gives_classifier_bias() {
        let s = spec();
        let space = SpaceParams::desk(4);
        let mut w = NetworkWeights::<f64>::build(&s, &space, &space.decode(&[3, 20, 40, 7]).unwrap(), 0, 1)
            .unwrap();
        w.fc_bias.data = vec![0.1, -0.2, 0.3, 0.4];
        let x = FeatureMap::<f64>::zeros(1, 2, 16, 16);
        let pass = w.forward(&s, x).unwrap();
        for row in pass.logits.chunks(4) {
            assert_eq!(row, &w.fc_bias.data[..]);
        }
    }

    #[test]
    fn output_shapes() {
        let s = spec();
        let space = SpaceParams::desk(4);
        let w = NetworkWeights::<f32>::build(&s, &space, &space.decode(&[1, 14, 27, 48]).unwrap(), 0, 1)
            .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = random_map::<f32>(1, 5, 16, 16, &mut rng);
        let pass = w.forward(&s, x.clone()).unwrap();
        assert_eq!(pass.logits.len(), 5 * 4);
        assert_eq!(pass.features.len(), 5 * 64);
        let again = w.forward(&s, x).unwrap();
        assert_eq!(pass.logits, again.logits);
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let s = spec();
        let space = SpaceParams::desk(4);
        let w = NetworkWeights::<f32>::build(&s, &space, &AttentionGenome::identity(4), 0, 1).unwrap();
        assert!(w.forward(&s, FeatureMap::zeros(1, 1, 8, 8)).is_err());
    }

    #[test]
    fn build_rejects_invalid_genome() {
        let s = BackboneSpec {
            channels: vec![4, 4, 12, 12],
            ..BackboneSpec::default()
        };
        let space = SpaceParams::desk(2);
        let g = space.decode(&[4, 0]).unwrap(); // SE, width 8, group 8
        assert!(matches!(
            NetworkWeights::<f32>::build(&s, &space, &g, 0, 1),
            Err(Error::InvalidGenome(_))
        ));
    }

    #[test]
    fn blob_round_trip() {
        let s = spec();
        let space = SpaceParams::desk(4);
        let g = space.decode(&[5, 0, 30, 45]).unwrap();
        let w = NetworkWeights::<f32>::build(&s, &space, &g, 3, 4).unwrap();
        let bytes = w.to_blob();
        assert_eq!(&bytes[..4], b"EVOW");
        let back = NetworkWeights::from_blob(&bytes, &s, &space, &g).unwrap();
        assert_eq!(w, back);
        let other = space.decode(&[0, 0, 30, 45]).unwrap();
        assert!(NetworkWeights::from_blob(&bytes, &s, &space, &other).is_err());
    }

    #[test]
    fn sgd_scalar_cases() {
        let mut w = [1.0f64];
        let mut v = [0.0];
        sgd_update(&mut w, &[2.0 * 1.0], &mut v, 0.1, 0.0, 0.0);
        assert!((w[0] - 0.8).abs() < 1e-15);

        let mut w = [0.37f64, -2.0];
        let orig = w;
        let mut v = [0.0; 2];
        sgd_update(&mut w, &[5.0, -1.0], &mut v, 0.0, 0.9, 0.0);
        assert_eq!(w, orig);
    }

    #[test]
    fn sgd_decreases_convex_quadratic_monotonically() {
        // f(w) = ½ Σ a_i w_i², oracle is the scalar recursion itself
        let a = [1.0f64, 4.0, 0.25];
        let mut w = [1.0f64, -1.0, 2.0];
        let mut v = [0.0; 3];
        let f = |w: &[f64; 3]| 0.5 * a.iter().zip(w).map(|(a, w)| a * w * w).sum::<f64>();
        let mut last = f(&w);
        for _ in 0..1000 {
            let g: Vec<f64> = a.iter().zip(&w).map(|(a, w)| a * w).collect();
            sgd_update(&mut w, &g, &mut v, 0.1, 0.0, 0.0);
            let now = f(&w);
            assert!(now <= last);
            last = now;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn sgd_flags_divergence() {
        let s = spec();
        let space = SpaceParams::desk(4);
        let mut w = NetworkWeights::<f32>::build(&s, &space, &AttentionGenome::identity(4), 0, 1).unwrap();
        let mut g = w.zeros_like();
        g.fc_bias.data[0] = f32::NAN;
        let mut opt = Sgd::new(0.1, 0.9, 5e-4);
        assert!(matches!(opt.step(&mut w, &g, false), Err(Error::Diverged)));
    }

    use rand::SeedableRng;
}
