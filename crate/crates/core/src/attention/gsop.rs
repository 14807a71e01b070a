//! Simplified global second-order pooling attention.
//!
//! Channel path (grouped): a 1×1 reduction `C/g → w`, the `w×w` covariance
//! of the reduced features across positions, flattened and densely mapped
//! back to `C/g` channel gates. Spatial path: positions are average-pooled
//! onto a fixed `w`-bin grid, the `w×w` covariance of those bins is taken
//! across channels and densely mapped to one gate per position. The channel
//! path is applied first.

use rand::Rng;

use super::GATE_BIAS_INIT;

use crate::error::{Error, Result};
use crate::tensor::{gemm, FeatureMap, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GsopParams<T> {
    pub channels: usize,
    pub width: usize,
    pub groups: usize,
    pub positions: usize,
    /// `[g, w, C/g]`
    pub reduce: Tensor<T>,
    /// `[g, C/g, w·w]`
    pub expand: Tensor<T>,
    /// `[g, C/g]`
    pub expand_bias: Tensor<T>,
    /// `[H·W, w·w]`
    pub pos_expand: Tensor<T>,
    /// `[H·W]`
    pub pos_bias: Tensor<T>,
}

/// Adaptive average pooling of `positions` onto `bins` as a dense
/// `[positions × bins]` matrix.
pub fn adaptive_pool_matrix<T: Real>(positions: usize, bins: usize) -> Vec<T> {
    let mut a = vec![T::zero(); positions * bins];
    for j in 0..bins {
        let start = j * positions / bins;
        let end = ((j + 1) * positions).div_ceil(bins);
        let v = T::one() / T::lit((end - start) as f64);
        for p in start..end {
            a[p * bins + j] = v;
        }
    }
    a
}

impl<T: Real> GsopParams<T> {
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        width: usize,
        groups: usize,
        positions: usize,
        rng: &mut R,
    ) -> Self {
        let cg = channels / groups;
        let ww = width * width;
        let a1 = (1.0 / cg as f64).sqrt();
        let a2 = (1.0 / ww as f64).sqrt();
        GsopParams {
            channels,
            width,
            groups,
            positions,
            reduce: Tensor::uniform(&[groups, width, cg], a1, rng),
            expand: Tensor::uniform(&[groups, cg, ww], a2, rng),
            expand_bias: Tensor::full(&[groups, cg], GATE_BIAS_INIT),
            pos_expand: Tensor::uniform(&[positions, ww], a2, rng),
            pos_bias: Tensor::full(&[positions], GATE_BIAS_INIT),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("reduce", &self.reduce),
            ("expand", &self.expand),
            ("expand_bias", &self.expand_bias),
            ("pos_expand", &self.pos_expand),
            ("pos_bias", &self.pos_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.reduce,
            &mut self.expand,
            &mut self.expand_bias,
            &mut self.pos_expand,
            &mut self.pos_bias,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        GsopParams {
            reduce: self.reduce.zeros_like(),
            expand: self.expand.zeros_like(),
            expand_bias: self.expand_bias.zeros_like(),
            pos_expand: self.pos_expand.zeros_like(),
            pos_bias: self.pos_bias.zeros_like(),
            ..*self
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, GsopCache<T>)> {
        if x.channels != self.channels || x.hw() != self.positions {
            return Err(Error::Shape(format!(
                "GSoP built for {}×{} positions, got {}×{}",
                self.channels,
                self.positions,
                x.channels,
                x.hw()
            )));
        }
        if x.hw() < 2 {
            return Err(Error::Shape(
                "GSoP needs at least 2 spatial positions for a covariance".into(),
            ));
        }
        let (c, nb, hw) = (x.channels, x.batch, x.hw());
        let (g, w) = (self.groups, self.width);
        let cg = c / g;
        let ww = w * w;
        let inv_hw = T::one() / T::lit(hw as f64);
        let inv_c = T::one() / T::lit(c as f64);

        // channel path
        let mut zc = vec![T::zero(); nb * g * w * hw];
        let mut svecs = vec![T::zero(); g * nb * ww];
        let mut xg = vec![T::zero(); cg * hw];
        for n in 0..nb {
            for gi in 0..g {
                for j in 0..cg {
                    xg[j * hw..(j + 1) * hw].copy_from_slice(x.plane(gi * cg + j, n));
                }
                let z = &mut zc[(n * g + gi) * w * hw..(n * g + gi + 1) * w * hw];
                gemm(
                    false,
                    false,
                    w,
                    hw,
                    cg,
                    T::one(),
                    &self.reduce.data[gi * w * cg..(gi + 1) * w * cg],
                    &xg,
                    T::zero(),
                    z,
                );
                center_rows(z, w, hw);
                let s = &mut svecs[(gi * nb + n) * ww..(gi * nb + n + 1) * ww];
                gemm(false, true, w, w, hw, inv_hw, z, z, T::zero(), s);
            }
        }
        let mut gate_c = vec![T::zero(); nb * c];
        let mut pre = vec![T::zero(); cg * nb];
        for gi in 0..g {
            gemm(
                false,
                true,
                cg,
                nb,
                ww,
                T::one(),
                &self.expand.data[gi * cg * ww..(gi + 1) * cg * ww],
                &svecs[gi * nb * ww..(gi + 1) * nb * ww],
                T::zero(),
                &mut pre,
            );
            for j in 0..cg {
                let b = self.expand_bias.data[gi * cg + j];
                for n in 0..nb {
                    gate_c[n * c + gi * cg + j] = (pre[j * nb + n] + b).sigmoid();
                }
            }
        }
        let mut x1 = x.clone();
        for ch in 0..c {
            for n in 0..nb {
                let s = gate_c[n * c + ch];
                x1.plane_mut(ch, n).iter_mut().for_each(|v| *v *= s);
            }
        }

        // spatial path
        let pool = adaptive_pool_matrix::<T>(hw, w);
        let mut pc = vec![T::zero(); nb * c * w];
        let mut sp = vec![T::zero(); nb * ww];
        let mut xs = vec![T::zero(); c * hw];
        for n in 0..nb {
            for ch in 0..c {
                xs[ch * hw..(ch + 1) * hw].copy_from_slice(x1.plane(ch, n));
            }
            let p = &mut pc[n * c * w..(n + 1) * c * w];
            gemm(false, false, c, w, hw, T::one(), &xs, &pool, T::zero(), p);
            center_cols(p, c, w);
            gemm(
                true,
                false,
                w,
                w,
                c,
                inv_c,
                p,
                p,
                T::zero(),
                &mut sp[n * ww..(n + 1) * ww],
            );
        }
        let mut pre_s = vec![T::zero(); hw * nb];
        gemm(
            false,
            true,
            hw,
            nb,
            ww,
            T::one(),
            &self.pos_expand.data,
            &sp,
            T::zero(),
            &mut pre_s,
        );
        let mut gate_s = vec![T::zero(); nb * hw];
        for p in 0..hw {
            for n in 0..nb {
                gate_s[n * hw + p] = (pre_s[p * nb + n] + self.pos_bias.data[p]).sigmoid();
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
            GsopCache {
                x: x.clone(),
                x1,
                zc,
                svecs,
                gate_c,
                pc,
                sp,
                gate_s,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &GsopCache<T>,
        dy: &FeatureMap<T>,
        grads: &mut Self,
    ) -> FeatureMap<T> {
        let (x, x1) = (&cache.x, &cache.x1);
        let (c, nb, hw) = (x.channels, x.batch, x.hw());
        let (g, w) = (self.groups, self.width);
        let cg = c / g;
        let ww = w * w;
        let inv_hw = T::one() / T::lit(hw as f64);
        let inv_c = T::one() / T::lit(c as f64);

        // spatial gate
        let mut dpre_s = vec![T::zero(); hw * nb];
        let mut dx1 = dy.clone();
        for n in 0..nb {
            let gs = &cache.gate_s[n * hw..(n + 1) * hw];
            let mut dg = vec![T::zero(); hw];
            for ch in 0..c {
                for ((d, &a), &b) in dg.iter_mut().zip(dy.plane(ch, n)).zip(x1.plane(ch, n)) {
                    *d += a * b;
                }
                for (v, &s) in dx1.plane_mut(ch, n).iter_mut().zip(gs) {
                    *v *= s;
                }
            }
            for p in 0..hw {
                dpre_s[p * nb + n] = dg[p] * gs[p] * (T::one() - gs[p]);
            }
        }
        gemm(
            false,
            false,
            hw,
            ww,
            nb,
            T::one(),
            &dpre_s,
            &cache.sp,
            T::one(),
            &mut grads.pos_expand.data,
        );
        for p in 0..hw {
            grads.pos_bias.data[p] += dpre_s[p * nb..(p + 1) * nb].iter().copied().sum::<T>();
        }
        let mut dsp = vec![T::zero(); nb * ww];
        gemm(
            true,
            false,
            nb,
            ww,
            hw,
            T::one(),
            &dpre_s,
            &self.pos_expand.data,
            T::zero(),
            &mut dsp,
        );
        let pool = adaptive_pool_matrix::<T>(hw, w);
        let mut dp = vec![T::zero(); c * w];
        let mut dxs = vec![T::zero(); c * hw];
        for n in 0..nb {
            let dsym = symmetrize(&dsp[n * ww..(n + 1) * ww], w);
            let p = &cache.pc[n * c * w..(n + 1) * c * w];
            gemm(false, false, c, w, w, inv_c, p, &dsym, T::zero(), &mut dp);
            center_cols(&mut dp, c, w);
            gemm(false, true, c, hw, w, T::one(), &dp, &pool, T::zero(), &mut dxs);
            for ch in 0..c {
                for (v, &d) in dx1.plane_mut(ch, n).iter_mut().zip(&dxs[ch * hw..(ch + 1) * hw]) {
                    *v += d;
                }
            }
        }

        // channel gate
        let mut dx = x.zeros_like();
        let mut dpre_c = vec![T::zero(); nb * c];
        for n in 0..nb {
            for ch in 0..c {
                let s = cache.gate_c[n * c + ch];
                let dgate: T = x
                    .plane(ch, n)
                    .iter()
                    .zip(dx1.plane(ch, n))
                    .map(|(&a, &b)| a * b)
                    .sum();
                dpre_c[n * c + ch] = dgate * s * (T::one() - s);
                let src = dx1.plane(ch, n);
                for (d, &v) in dx.plane_mut(ch, n).iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        let mut da = vec![T::zero(); cg * nb];
        let mut dsv = vec![T::zero(); nb * ww];
        let mut xg = vec![T::zero(); cg * hw];
        let mut dz = vec![T::zero(); w * hw];
        let mut dxg = vec![T::zero(); cg * hw];
        for gi in 0..g {
            for j in 0..cg {
                for n in 0..nb {
                    da[j * nb + n] = dpre_c[n * c + gi * cg + j];
                }
                grads.expand_bias.data[gi * cg + j] +=
                    da[j * nb..(j + 1) * nb].iter().copied().sum::<T>();
            }
            let sv = &cache.svecs[gi * nb * ww..(gi + 1) * nb * ww];
            gemm(
                false,
                false,
                cg,
                ww,
                nb,
                T::one(),
                &da,
                sv,
                T::one(),
                &mut grads.expand.data[gi * cg * ww..(gi + 1) * cg * ww],
            );
            gemm(
                true,
                false,
                nb,
                ww,
                cg,
                T::one(),
                &da,
                &self.expand.data[gi * cg * ww..(gi + 1) * cg * ww],
                T::zero(),
                &mut dsv,
            );
            let red = &self.reduce.data[gi * w * cg..(gi + 1) * w * cg];
            for n in 0..nb {
                let dsym = symmetrize(&dsv[n * ww..(n + 1) * ww], w);
                let z = &cache.zc[(n * g + gi) * w * hw..(n * g + gi + 1) * w * hw];
                gemm(false, false, w, hw, w, inv_hw, &dsym, z, T::zero(), &mut dz);
                center_rows(&mut dz, w, hw);
                for j in 0..cg {
                    xg[j * hw..(j + 1) * hw].copy_from_slice(x.plane(gi * cg + j, n));
                }
                gemm(
                    false,
                    true,
                    w,
                    cg,
                    hw,
                    T::one(),
                    &dz,
                    &xg,
                    T::one(),
                    &mut grads.reduce.data[gi * w * cg..(gi + 1) * w * cg],
                );
                gemm(true, false, cg, hw, w, T::one(), red, &dz, T::zero(), &mut dxg);
                for j in 0..cg {
                    let off = dx.plane_offset(gi * cg + j, n);
                    for (d, &v) in dx.data[off..off + hw].iter_mut().zip(&dxg[j * hw..(j + 1) * hw]) {
                        *d += v;
                    }
                }
            }
        }
        dx
    }
}

fn center_rows<T: Real>(m: &mut [T], rows: usize, cols: usize) {
    let inv = T::one() / T::lit(cols as f64);
    for r in 0..rows {
        let row = &mut m[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<T>() * inv;
        row.iter_mut().for_each(|v| *v -= mean);
    }
}

fn center_cols<T: Real>(m: &mut [T], rows: usize, cols: usize) {
    let inv = T::one() / T::lit(rows as f64);
    for col in 0..cols {
        let mean = (0..rows).map(|r| m[r * cols + col]).sum::<T>() * inv;
        for r in 0..rows {
            m[r * cols + col] -= mean;
        }
    }
}

fn symmetrize<T: Real>(d: &[T], w: usize) -> Vec<T> {
    let mut s = vec![T::zero(); w * w];
    for i in 0..w {
        for j in 0..w {
            s[i * w + j] = d[i * w + j] + d[j * w + i];
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct GsopCache<T> {
    x: FeatureMap<T>,
    x1: FeatureMap<T>,
    zc: Vec<T>,
    /// Flattened channel covariances, `[g][N][w·w]`.
    pub svecs: Vec<T>,
    pub gate_c: Vec<T>,
    pc: Vec<T>,
    /// Flattened spatial covariances, `[N][w·w]`.
    pub sp: Vec<T>,
    pub gate_s: Vec<T>,
}
