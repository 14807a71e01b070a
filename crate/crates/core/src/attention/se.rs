//! Squeeze-and-excitation channel gating with the group strategy: channels
//! are split into `g` groups and every group owns an independent
//! `C/g → w → C/g` excitation map.

use rand::Rng;

use super::{GATE_BIAS_INIT, add_outer, dense, dense_t};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SeParams<T> {
    pub channels: usize,
    pub width: usize,
    pub groups: usize,
    /// `[g, w, C/g]`
    pub w1: Tensor<T>,
    /// `[g, w]`
    pub b1: Tensor<T>,
    /// `[g, C/g, w]`
    pub w2: Tensor<T>,
    /// `[g, C/g]`
    pub b2: Tensor<T>,
}

impl<T: Real> SeParams<T> {
    pub fn init<R: Rng + ?Sized>(channels: usize, width: usize, groups: usize, rng: &mut R) -> Self {
        let cg = channels / groups;
        let a1 = (1.0 / cg as f64).sqrt();
        let a2 = (1.0 / width as f64).sqrt();
        SeParams {
            channels,
            width,
            groups,
            w1: Tensor::uniform(&[groups, width, cg], a1, rng),
            b1: Tensor::uniform(&[groups, width], a1, rng),
            w2: Tensor::uniform(&[groups, cg, width], a2, rng),
            b2: Tensor::full(&[groups, cg], GATE_BIAS_INIT),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn zeros_like(&self) -> Self {
        SeParams {
            w1: self.w1.zeros_like(),
            b1: self.b1.zeros_like(),
            w2: self.w2.zeros_like(),
            b2: self.b2.zeros_like(),
            ..*self
        }
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, SeCache<T>)> {
        if x.channels != self.channels {
            return Err(Error::Shape(format!(
                "SE built for {} channels, got {}",
                self.channels, x.channels
            )));
        }
        let (c, n_batch, hw) = (x.channels, x.batch, x.hw());
        let (g, w) = (self.groups, self.width);
        let cg = c / g;
        let inv_hw = T::one() / T::lit(hw as f64);
        let mut pooled = vec![T::zero(); n_batch * c];
        let mut hidden = vec![T::zero(); n_batch * g * w];
        let mut gates = vec![T::zero(); n_batch * c];
        let mut y = x.clone();
        for n in 0..n_batch {
            for ch in 0..c {
                pooled[n * c + ch] = x.plane(ch, n).iter().copied().sum::<T>() * inv_hw;
            }
            for gi in 0..g {
                let p = &pooled[n * c + gi * cg..n * c + (gi + 1) * cg];
                let h = &mut hidden[(n * g + gi) * w..(n * g + gi + 1) * w];
                dense(
                    &self.w1.data[gi * w * cg..(gi + 1) * w * cg],
                    &self.b1.data[gi * w..(gi + 1) * w],
                    p,
                    h,
                );
                let hr: Vec<T> = h.iter().map(|&v| v.max(T::zero())).collect();
                let out = &mut gates[n * c + gi * cg..n * c + (gi + 1) * cg];
                dense(
                    &self.w2.data[gi * cg * w..(gi + 1) * cg * w],
                    &self.b2.data[gi * cg..(gi + 1) * cg],
                    &hr,
                    out,
                );
                out.iter_mut().for_each(|v| *v = v.sigmoid());
            }
            for ch in 0..c {
                let s = gates[n * c + ch];
                y.plane_mut(ch, n).iter_mut().for_each(|v| *v *= s);
            }
        }
        Ok((
            y,
            SeCache {
                x: x.clone(),
                pooled,
                hidden,
                gates,
            },
        ))
    }

    pub fn backward(&self, cache: &SeCache<T>, dy: &FeatureMap<T>, grads: &mut Self) -> FeatureMap<T> {
        let x = &cache.x;
        let (c, n_batch, hw) = (x.channels, x.batch, x.hw());
        let (g, w) = (self.groups, self.width);
        let cg = c / g;
        let inv_hw = T::one() / T::lit(hw as f64);
        let mut dx = dy.clone();
        for n in 0..n_batch {
            let mut dpre = vec![T::zero(); c];
            for ch in 0..c {
                let s = cache.gates[n * c + ch];
                let dgate: T = x
                    .plane(ch, n)
                    .iter()
                    .zip(dy.plane(ch, n))
                    .map(|(&a, &b)| a * b)
                    .sum();
                dpre[ch] = dgate * s * (T::one() - s);
                dx.plane_mut(ch, n).iter_mut().for_each(|v| *v *= s);
            }
            let mut dpooled = vec![T::zero(); c];
            for gi in 0..g {
                let h = &cache.hidden[(n * g + gi) * w..(n * g + gi + 1) * w];
                let hr: Vec<T> = h.iter().map(|&v| v.max(T::zero())).collect();
                let da = &dpre[gi * cg..(gi + 1) * cg];
                add_outer(&mut grads.w2.data[gi * cg * w..(gi + 1) * cg * w], da, &hr);
                for (b, &d) in grads.b2.data[gi * cg..(gi + 1) * cg].iter_mut().zip(da) {
                    *b += d;
                }
                let mut dh = vec![T::zero(); w];
                dense_t(&self.w2.data[gi * cg * w..(gi + 1) * cg * w], da, &mut dh);
                for (d, &pre) in dh.iter_mut().zip(h) {
                    if pre <= T::zero() {
                        *d = T::zero();
                    }
                }
                let p = &cache.pooled[n * c + gi * cg..n * c + (gi + 1) * cg];
                add_outer(&mut grads.w1.data[gi * w * cg..(gi + 1) * w * cg], &dh, p);
                for (b, &d) in grads.b1.data[gi * w..(gi + 1) * w].iter_mut().zip(&dh) {
                    *b += d;
                }
                dense_t(
                    &self.w1.data[gi * w * cg..(gi + 1) * w * cg],
                    &dh,
                    &mut dpooled[gi * cg..(gi + 1) * cg],
                );
            }
            for ch in 0..c {
                let d = dpooled[ch] * inv_hw;
                dx.plane_mut(ch, n).iter_mut().for_each(|v| *v += d);
            }
        }
        dx
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SeCache<T> {
    x: FeatureMap<T>,
    pooled: Vec<T>,
    hidden: Vec<T>,
    pub gates: Vec<T>,
}
