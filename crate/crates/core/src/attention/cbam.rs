//! CBAM: grouped channel gate from average- and max-pooled descriptors
//! through a shared two-layer map, followed by a spatial gate from a 7×7
//! convolution over the channel-wise mean and max maps.

use rand::Rng;

use super::{GATE_BIAS_INIT, add_outer, dense, dense_t};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Real, Tensor};

pub const SPATIAL_KERNEL: usize = 7;
const PAD: isize = (SPATIAL_KERNEL / 2) as isize;

#[derive(Debug, Clone, PartialEq)]
pub struct CbamParams<T> {
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
    /// `[2, k, k]` over (mean, max) maps.
    pub spatial: Tensor<T>,
    /// `[1]`
    pub spatial_bias: Tensor<T>,
}

impl<T: Real> CbamParams<T> {
    pub fn init<R: Rng + ?Sized>(channels: usize, width: usize, groups: usize, rng: &mut R) -> Self {
        let cg = channels / groups;
        let k = SPATIAL_KERNEL;
        let a1 = (1.0 / cg as f64).sqrt();
        let a2 = (1.0 / width as f64).sqrt();
        let a3 = (1.0 / (2 * k * k) as f64).sqrt();
        CbamParams {
            channels,
            width,
            groups,
            w1: Tensor::uniform(&[groups, width, cg], a1, rng),
            b1: Tensor::uniform(&[groups, width], a1, rng),
            w2: Tensor::uniform(&[groups, cg, width], a2, rng),
            b2: Tensor::full(&[groups, cg], GATE_BIAS_INIT),
            spatial: Tensor::uniform(&[2, k, k], a3, rng),
            spatial_bias: Tensor::full(&[1], GATE_BIAS_INIT),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("spatial", &self.spatial),
            ("spatial_bias", &self.spatial_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.spatial,
            &mut self.spatial_bias,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        CbamParams {
            w1: self.w1.zeros_like(),
            b1: self.b1.zeros_like(),
            w2: self.w2.zeros_like(),
            b2: self.b2.zeros_like(),
            spatial: self.spatial.zeros_like(),
            spatial_bias: self.spatial_bias.zeros_like(),
            ..*self
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, CbamCache<T>)> {
        if x.channels != self.channels {
            return Err(Error::Shape(format!(
                "CBAM built for {} channels, got {}",
                self.channels, x.channels
            )));
        }
        let (c, nb, hw) = (x.channels, x.batch, x.hw());
        let (g, w) = (self.groups, self.width);
        let cg = c / g;
        let inv_hw = T::one() / T::lit(hw as f64);
        let inv_c = T::one() / T::lit(c as f64);

        let mut avg = vec![T::zero(); nb * c];
        let mut mx = vec![T::zero(); nb * c];
        let mut mx_at = vec![0usize; nb * c];
        let mut h_avg = vec![T::zero(); nb * g * w];
        let mut h_max = vec![T::zero(); nb * g * w];
        let mut gate_c = vec![T::zero(); nb * c];
        let mut x1 = x.clone();
        let mut maps = vec![T::zero(); nb * 2 * hw];
        let mut max_ch = vec![0usize; nb * hw];
        let mut gate_s = vec![T::zero(); nb * hw];

        for n in 0..nb {
            for ch in 0..c {
                let plane = x.plane(ch, n);
                avg[n * c + ch] = plane.iter().copied().sum::<T>() * inv_hw;
                let (mut best, mut at) = (plane[0], 0);
                for (p, &v) in plane.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        at = p;
                    }
                }
                mx[n * c + ch] = best;
                mx_at[n * c + ch] = at;
            }
            for gi in 0..g {
                let r = n * c + gi * cg..n * c + (gi + 1) * cg;
                let hr_ = (n * g + gi) * w..(n * g + gi + 1) * w;
                let w1 = &self.w1.data[gi * w * cg..(gi + 1) * w * cg];
                let b1 = &self.b1.data[gi * w..(gi + 1) * w];
                let w2 = &self.w2.data[gi * cg * w..(gi + 1) * cg * w];
                let b2 = &self.b2.data[gi * cg..(gi + 1) * cg];
                dense(w1, b1, &avg[r.clone()], &mut h_avg[hr_.clone()]);
                dense(w1, b1, &mx[r.clone()], &mut h_max[hr_.clone()]);
                let ra: Vec<T> = h_avg[hr_.clone()].iter().map(|&v| v.max(T::zero())).collect();
                let rm: Vec<T> = h_max[hr_].iter().map(|&v| v.max(T::zero())).collect();
                let mut oa = vec![T::zero(); cg];
                let mut om = vec![T::zero(); cg];
                dense(w2, b2, &ra, &mut oa);
                dense(w2, b2, &rm, &mut om);
                for (j, gc) in gate_c[r].iter_mut().enumerate() {
                    *gc = (oa[j] + om[j]).sigmoid();
                }
            }
            for ch in 0..c {
                let s = gate_c[n * c + ch];
                x1.plane_mut(ch, n).iter_mut().for_each(|v| *v *= s);
            }
            // channel-wise mean and max maps
            let (mean_map, rest) = maps[n * 2 * hw..(n + 1) * 2 * hw].split_at_mut(hw);
            let max_map = rest;
            for p in 0..hw {
                let (mut best, mut at) = (x1.plane(0, n)[p], 0);
                let mut sum = T::zero();
                for ch in 0..c {
                    let v = x1.plane(ch, n)[p];
                    sum += v;
                    if ch > 0 && v > best {
                        best = v;
                        at = ch;
                    }
                }
                mean_map[p] = sum * inv_c;
                max_map[p] = best;
                max_ch[n * hw + p] = at;
            }
            let pre = self.spatial_conv(&maps[n * 2 * hw..(n + 1) * 2 * hw], x.height, x.width);
            for (gs, v) in gate_s[n * hw..(n + 1) * hw].iter_mut().zip(pre) {
                *gs = v.sigmoid();
            }
        }
        let mut y = x1.clone();
        for ch in 0..c {
            for n in 0..nb {
                let gs = &gate_s[n * hw..(n + 1) * hw];
                for (v, &s) in y.plane_mut(ch, n).iter_mut().zip(gs) {
                    *v *= s;
                }
            }
        }
        Ok((
            y,
            CbamCache {
                x: x.clone(),
                x1,
                avg,
                mx,
                mx_at,
                h_avg,
                h_max,
                gate_c,
                maps,
                max_ch,
                gate_s,
            },
        ))
    }

    /// Zero-padded 2→1 correlation with the spatial kernel, plus bias.
    fn spatial_conv(&self, maps: &[T], height: usize, width: usize) -> Vec<T> {
        let k = SPATIAL_KERNEL;
        let hw = height * width;
        let mut out = vec![self.spatial_bias.data[0]; hw];
        for m in 0..2 {
            let src = &maps[m * hw..(m + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = self.spatial.data[(m * k + ky) * k + kx];
                    for oy in 0..height {
                        let iy = oy as isize + ky as isize - PAD;
                        if iy < 0 || iy >= height as isize {
                            continue;
                        }
                        for ox in 0..width {
                            let ix = ox as isize + kx as isize - PAD;
                            if ix < 0 || ix >= width as isize {
                                continue;
                            }
                            out[oy * width + ox] += wv * src[iy as usize * width + ix as usize];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(
        &self,
        cache: &CbamCache<T>,
        dy: &FeatureMap<T>,
        grads: &mut Self,
    ) -> FeatureMap<T> {
        let x = &cache.x;
        let x1 = &cache.x1;
        let (c, nb, hw) = (x.channels, x.batch, x.hw());
        let (height, width) = (x.height, x.width);
        let (g, w) = (self.groups, self.width);
        let cg = c / g;
        let k = SPATIAL_KERNEL;
        let inv_hw = T::one() / T::lit(hw as f64);
        let inv_c = T::one() / T::lit(c as f64);

        let mut dx1 = dy.clone();
        let mut dx = x.zeros_like();
        for n in 0..nb {
            let gs = &cache.gate_s[n * hw..(n + 1) * hw];
            // spatial gate
            let mut ds = vec![T::zero(); hw];
            for ch in 0..c {
                let dyp = dy.plane(ch, n);
                let xp = x1.plane(ch, n);
                for p in 0..hw {
                    ds[p] += dyp[p] * xp[p];
                }
            }
            for p in 0..hw {
                ds[p] *= gs[p] * (T::one() - gs[p]);
            }
            for ch in 0..c {
                for (v, &s) in dx1.plane_mut(ch, n).iter_mut().zip(gs) {
                    *v *= s;
                }
            }
            grads.spatial_bias.data[0] += ds.iter().copied().sum::<T>();
            let maps = &cache.maps[n * 2 * hw..(n + 1) * 2 * hw];
            let mut dmaps = vec![T::zero(); 2 * hw];
            for m in 0..2 {
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = (m * k + ky) * k + kx;
                        let wv = self.spatial.data[widx];
                        let mut acc = T::zero();
                        for oy in 0..height {
                            let iy = oy as isize + ky as isize - PAD;
                            if iy < 0 || iy >= height as isize {
                                continue;
                            }
                            for ox in 0..width {
                                let ix = ox as isize + kx as isize - PAD;
                                if ix < 0 || ix >= width as isize {
                                    continue;
                                }
                                let src = m * hw + iy as usize * width + ix as usize;
                                let d = ds[oy * width + ox];
                                acc += d * maps[src];
                                dmaps[src] += d * wv;
                            }
                        }
                        grads.spatial.data[widx] += acc;
                    }
                }
            }
            for p in 0..hw {
                let dm = dmaps[p] * inv_c;
                for ch in 0..c {
                    dx1.plane_mut(ch, n)[p] += dm;
                }
                let at = cache.max_ch[n * hw + p];
                dx1.plane_mut(at, n)[p] += dmaps[hw + p];
            }

            // channel gate
            let mut dpre = vec![T::zero(); c];
            for ch in 0..c {
                let s = cache.gate_c[n * c + ch];
                let dgate: T = x
                    .plane(ch, n)
                    .iter()
                    .zip(dx1.plane(ch, n))
                    .map(|(&a, &b)| a * b)
                    .sum();
                dpre[ch] = dgate * s * (T::one() - s);
                let src = dx1.plane(ch, n).to_vec();
                for (d, v) in dx.plane_mut(ch, n).iter_mut().zip(src) {
                    *d += v * s;
                }
            }
            let mut davg = vec![T::zero(); c];
            let mut dmx = vec![T::zero(); c];
            for gi in 0..g {
                let r = n * c + gi * cg..n * c + (gi + 1) * cg;
                let hr_ = (n * g + gi) * w..(n * g + gi + 1) * w;
                let w1 = &self.w1.data[gi * w * cg..(gi + 1) * w * cg];
                let w2 = &self.w2.data[gi * cg * w..(gi + 1) * cg * w];
                let da = &dpre[gi * cg..(gi + 1) * cg];
                for (h_pre, pooled, dpooled) in [
                    (&cache.h_avg[hr_.clone()], &cache.avg[r.clone()], &mut davg),
                    (&cache.h_max[hr_.clone()], &cache.mx[r.clone()], &mut dmx),
                ] {
                    let hr: Vec<T> = h_pre.iter().map(|&v| v.max(T::zero())).collect();
                    add_outer(&mut grads.w2.data[gi * cg * w..(gi + 1) * cg * w], da, &hr);
                    for (b, &d) in grads.b2.data[gi * cg..(gi + 1) * cg].iter_mut().zip(da) {
                        *b += d;
                    }
                    let mut dh = vec![T::zero(); w];
                    dense_t(w2, da, &mut dh);
                    for (d, &pre) in dh.iter_mut().zip(h_pre) {
                        if pre <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    add_outer(&mut grads.w1.data[gi * w * cg..(gi + 1) * w * cg], &dh, pooled);
                    for (b, &d) in grads.b1.data[gi * w..(gi + 1) * w].iter_mut().zip(&dh) {
                        *b += d;
                    }
                    dense_t(w1, &dh, &mut dpooled[gi * cg..(gi + 1) * cg]);
                }
            }
            for ch in 0..c {
                let d = davg[ch] * inv_hw;
                let at = cache.mx_at[n * c + ch];
                let plane = dx.plane_mut(ch, n);
                plane.iter_mut().for_each(|v| *v += d);
                plane[at] += dmx[ch];
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct CbamCache<T> {
    x: FeatureMap<T>,
    x1: FeatureMap<T>,
    avg: Vec<T>,
    mx: Vec<T>,
    mx_at: Vec<usize>,
    h_avg: Vec<T>,
    h_max: Vec<T>,
    pub gate_c: Vec<T>,
    /// Per sample: `[mean map | max map]`.
    pub maps: Vec<T>,
    max_ch: Vec<usize>,
    pub gate_s: Vec<T>,
}
