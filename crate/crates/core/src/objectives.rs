//! Domain-adaptation losses and the two training modes.
//!
//! Loss values and gradients are computed in `f64` on logits and features
//! copied out of the network; the network itself trains in `f32`.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneSpec, NetworkWeights, Sgd};
use crate::data::DatasetPair;
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Row-wise softmax of an `[N×K]` matrix.
pub fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Shannon entropy (nats) of one distribution, `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Backpropagates `dL/dp` through a row-wise softmax.
fn softmax_backward(probs: &[f64], dprobs: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for ((o, p), g) in out.chunks_mut(k).zip(probs.chunks(k)).zip(dprobs.chunks(k)) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for j in 0..k {
            o[j] = p[j] * (g[j] - dot);
        }
    }
    out
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    match labels.iter().enumerate().find(|(_, &l)| l >= k) {
        Some((index, &label)) => Err(Error::LabelOutOfRange {
            index,
            label,
            classes: k,
        }),
        None => Ok(()),
    }
}

/// Mean softmax cross-entropy.
pub fn source_ce(logits: &[f64], labels: &[usize], k: usize) -> Result<f64> {
    Ok(source_ce_grad(logits, labels, k)?.0)
}

pub fn source_ce_grad(logits: &[f64], labels: &[usize], k: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() * k || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} logits for {} labels × {k} classes",
            logits.len(),
            labels.len()
        )));
    }
    check_labels(labels, k)?;
    let n = labels.len() as f64;
    let mut grad = softmax_rows(logits, k);
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.chunks(k).zip(labels).enumerate() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad[i * k + y] -= 1.0;
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Mean prediction entropy over a batch of logits.
pub fn target_entropy(logits: &[f64], k: usize) -> f64 {
    target_entropy_grad(logits, k).0
}

pub fn target_entropy_grad(logits: &[f64], k: usize) -> (f64, Vec<f64>) {
    let probs = softmax_rows(logits, k);
    let n = (logits.len() / k) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (g, p) in grad.chunks_mut(k).zip(probs.chunks(k)) {
        let h = entropy(p);
        value += h;
        for j in 0..k {
            let lp = if p[j] > 0.0 { p[j].ln() } else { 0.0 };
            g[j] = -p[j] * (lp + h) / n;
        }
    }
    (value / n, grad)
}

/// `−H(mean softmax)`; minimizing it spreads predictions over classes.
pub fn diversity_grad(logits: &[f64], k: usize) -> (f64, Vec<f64>) {
    let probs = softmax_rows(logits, k);
    let n = logits.len() / k;
    let mut mean = vec![0.0; k];
    for p in probs.chunks(k) {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v / n as f64;
        }
    }
    let value = -entropy(&mean);
    let per_class: Vec<f64> = mean
        .iter()
        .map(|&m| (m.max(f64::MIN_POSITIVE).ln() + 1.0) / n as f64)
        .collect();
    let dprobs: Vec<f64> = (0..n).flat_map(|_| per_class.iter().copied()).collect();
    (value, softmax_backward(&probs, &dprobs, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance of the joint batch.
    Median,
    Fixed(f64),
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of the pairwise distances of the joint batch; 1 when all points
/// coincide.
pub fn median_bandwidth(fs: &[f64], ft: &[f64], dim: usize) -> f64 {
    let pts: Vec<&[f64]> = fs.chunks(dim).chain(ft.chunks(dim)).collect();
    let mut d = Vec::with_capacity(pts.len() * pts.len() / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push(sq_dist(pts[i], pts[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    let med = if d.len() % 2 == 1 { d[m] } else { 0.5 * (d[m - 1] + d[m]) };
    if med > 1e-12 {
        med
    } else {
        1.0
    }
}

/// Squared MMD with a Gaussian kernel between two feature batches, as the
/// V-statistic (all pairs, diagonal included), which is never negative.
pub fn align_mmd(fs: &[f64], ft: &[f64], dim: usize, bw: Bandwidth) -> f64 {
    align_mmd_grad(fs, ft, dim, bw).0
}

/// Value plus gradients for both batches; the bandwidth is held constant.
pub fn align_mmd_grad(fs: &[f64], ft: &[f64], dim: usize, bw: Bandwidth) -> (f64, Vec<f64>, Vec<f64>) {
    let sigma = match bw {
        Bandwidth::Median => median_bandwidth(fs, ft, dim),
        Bandwidth::Fixed(s) => s,
    };
    let inv2 = 1.0 / (2.0 * sigma * sigma);
    let (n, m) = (fs.len() / dim, ft.len() / dim);
    let mut gs = vec![0.0; fs.len()];
    let mut gt = vec![0.0; ft.len()];
    let mut value = 0.0;
    let mut within = |x: &[f64], g: &mut [f64], cnt: usize| {
        if cnt == 0 {
            return;
        }
        let w = 1.0 / (cnt * cnt) as f64;
        value += cnt as f64 * w;
        for i in 0..cnt {
            for j in i + 1..cnt {
                let (a, b) = (&x[i * dim..(i + 1) * dim], &x[j * dim..(j + 1) * dim]);
                let kv = (-sq_dist(a, b) * inv2).exp();
                value += 2.0 * w * kv;
                let c = -2.0 * w * kv * 2.0 * inv2;
                for d in 0..dim {
                    let diff = a[d] - b[d];
                    g[i * dim + d] += c * diff;
                    g[j * dim + d] -= c * diff;
                }
            }
        }
    };
    within(fs, &mut gs, n);
    within(ft, &mut gt, m);
    let w = -2.0 / (n * m) as f64;
    for i in 0..n {
        let a = &fs[i * dim..(i + 1) * dim];
        for j in 0..m {
            let b = &ft[j * dim..(j + 1) * dim];
            let kv = (-sq_dist(a, b) * inv2).exp();
            value += w * kv;
            let c = -w * kv * 2.0 * inv2;
            for d in 0..dim {
                let diff = a[d] - b[d];
                gs[i * dim + d] += c * diff;
                gt[j * dim + d] -= c * diff;
            }
        }
    }
    (value, gs, gt)
}

/// Unit-length rows plus the original norms (rows of norm 0 stay 0).
pub fn l2_normalize_rows(x: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut out = x.to_vec();
    let mut norms = Vec::with_capacity(x.len() / dim);
    for row in out.chunks_mut(dim) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
        norms.push(n);
    }
    (out, norms)
}

/// Gradient through [`l2_normalize_rows`] given the normalized rows.
pub fn l2_normalize_backward(unit: &[f64], norms: &[f64], grad: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    for (((o, u), g), &n) in out.chunks_mut(dim).zip(unit.chunks(dim)).zip(grad.chunks(dim)).zip(norms) {
        if n == 0.0 {
            continue;
        }
        let dot: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
        for j in 0..dim {
            o[j] = (g[j] - u[j] * dot) / n;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    SingleStage,
    TwoStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaLossConfig {
    pub mode: TrainMode,
    pub lambda_ent: f64,
    pub lambda_align: f64,
    /// Weight of the diversity term in the second stage of `two_stage`.
    pub lambda_div: f64,
    pub epochs_per_generation: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Largest global L2 norm of a step's gradient; larger gradients are
    /// rescaled to it. 0 turns clipping off.
    pub grad_clip: f64,
}

impl Default for DaLossConfig {
    fn default() -> Self {
        DaLossConfig {
            mode: TrainMode::SingleStage,
            lambda_ent: 0.1,
            lambda_align: 1.0,
            lambda_div: 1.0,
            epochs_per_generation: 2,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            grad_clip: 0.0,
        }
    }
}

impl DaLossConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("lambda_ent", self.lambda_ent),
            ("lambda_align", self.lambda_align),
            ("lambda_div", self.lambda_div),
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and ≥ 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.epochs_per_generation == 0 || self.batch_size == 0 {
            return bad("epochs_per_generation and batch_size must be ≥ 1".into());
        }
        Ok(())
    }

    /// Name of the adaptation method, recorded in reports.
    pub fn method_name(&self) -> &'static str {
        match self.mode {
            TrainMode::SingleStage => "ce+mmd+entropy (single-stage)",
            TrainMode::TwoStage => "source-ce then information-maximization (two-stage)",
        }
    }

    fn reads_target(&self) -> bool {
        match self.mode {
            TrainMode::SingleStage => self.lambda_ent > 0.0 || self.lambda_align > 0.0,
            TrainMode::TwoStage => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1 for joint or source training, 2 for the target-only stage.
    pub stage: u8,
    /// Accuracy on the source batches seen this epoch (stage 1 only).
    pub source_acc: Option<f64>,
    pub ce: f64,
    pub entropy: f64,
    pub align: f64,
    pub diversity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

fn gather(images: &[f32], idx: &[usize], len: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(idx.len() * len);
    for &i in idx {
        out.extend_from_slice(&images[i * len..(i + 1) * len]);
    }
    out
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Cycles through a domain in shuffled order, reshuffling each pass.
struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

impl Cursor {
    fn new(n: usize) -> Self {
        Cursor {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn take(&mut self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let end = (self.pos + count - out.len()).min(self.order.len());
            out.extend_from_slice(&self.order[self.pos..end]);
            self.pos = end;
        }
        out
    }
}

/// Rescales `grads` so that their global L2 norm is at most `max_norm`
/// (no-op for `max_norm == 0`). Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut NetworkWeights<f32>, max_norm: f64) -> f64 {
    let norm = grads
        .named_tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        for t in grads.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Trains `weights` for `epochs` epochs. An epoch is one pass over the
/// source (or, in the target-only stage, over the target); the other domain
/// cycles alongside.
pub fn train(
    weights: &mut NetworkWeights<f32>,
    spec: &BackboneSpec,
    data: &DatasetPair,
    cfg: &DaLossConfig,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainTrace> {
    cfg.check()?;
    let len = spec.input_height * spec.input_width;
    if data.spec.image_len() != len || spec.num_classes != data.num_classes() || spec.input_channels != 1 {
        return Err(Error::Shape("dataset does not match backbone input or class count".into()));
    }
    let target: &[f32] = if cfg.reads_target() { data.target_images() } else { &[] };
    let mut sgd = Sgd::<f32>::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut trace = TrainTrace::default();
    let (stage1, stage2) = match cfg.mode {
        TrainMode::SingleStage => (epochs, 0),
        TrainMode::TwoStage => (epochs.div_ceil(2), epochs / 2),
    };
    let joint = cfg.mode == TrainMode::SingleStage && cfg.reads_target();
    let mut src_cursor = Cursor::new(data.source_len());
    let mut tgt_cursor = Cursor::new(data.target_len());
    let k = spec.num_classes;
    let f = spec.feature_dim();
    for _ in 0..stage1 {
        let steps = data.source_len().div_ceil(cfg.batch_size);
        let mut sums = [0.0f64; 3];
        let (mut hits, mut seen) = (0usize, 0usize);
        for _ in 0..steps {
            let si = src_cursor.take(cfg.batch_size.min(data.source_len()), rng);
            let labels: Vec<usize> = si.iter().map(|&i| data.source_labels()[i]).collect();
            let mut images = gather(data.source_images(), &si, len);
            let ns = si.len();
            if joint {
                let ti = tgt_cursor.take(cfg.batch_size.min(data.target_len()), rng);
                images.extend(gather(target, &ti, len));
            }
            let nb = images.len() / len;
            let pass = weights.forward(spec, FeatureMap::from_images(&images, nb, spec.input_height, spec.input_width))?;
            let logits = to_f64(&pass.logits);
            let (ce, dce) = source_ce_grad(&logits[..ns * k], &labels, k)?;
            for (row, &y) in logits[..ns * k].chunks(k).zip(&labels) {
                hits += (argmax(row) == y) as usize;
            }
            seen += ns;
            let mut dlogits = dce;
            let mut dfeat = None;
            sums[0] += ce;
            if joint {
                let (ent, dent) = target_entropy_grad(&logits[ns * k..], k);
                dlogits.extend(dent.iter().map(|g| cfg.lambda_ent * g));
                sums[1] += ent;
                if cfg.lambda_align > 0.0 {
                    let (feats, norms) = l2_normalize_rows(&to_f64(&pass.features), f);
                    let (mmd, gs, gt) = align_mmd_grad(&feats[..ns * f], &feats[ns * f..], f, Bandwidth::Median);
                    sums[2] += mmd;
                    let gu: Vec<f64> = gs.into_iter().chain(gt).collect();
                    let g: Vec<f64> = l2_normalize_backward(&feats, &norms, &gu, f)
                        .into_iter()
                        .map(|g| cfg.lambda_align * g)
                        .collect();
                    dfeat = Some(to_f32(&g));
                }
            }
            let mut grads = weights.zeros_like();
            weights.backward(&pass, &to_f32(&dlogits), dfeat.as_deref(), &mut grads);
            clip_grad_norm(&mut grads, cfg.grad_clip);
            sgd.step(weights, &grads, false)?;
        }
        let s = steps as f64;
        trace.epochs.push(EpochRecord {
            stage: 1,
            source_acc: Some(hits as f64 / seen as f64),
            ce: sums[0] / s,
            entropy: sums[1] / s,
            align: sums[2] / s,
            diversity: 0.0,
        });
    }
    for _ in 0..stage2 {
        let steps = data.target_len().div_ceil(cfg.batch_size);
        let mut sums = [0.0f64; 2];
        for _ in 0..steps {
            let ti = tgt_cursor.take(cfg.batch_size.min(data.target_len()), rng);
            let images = gather(target, &ti, len);
            let pass = weights.forward(spec, FeatureMap::from_images(&images, ti.len(), spec.input_height, spec.input_width))?;
            let logits = to_f64(&pass.logits);
            let (ent, dent) = target_entropy_grad(&logits, k);
            let (div, ddiv) = diversity_grad(&logits, k);
            sums[0] += ent;
            sums[1] += div;
            let dlogits: Vec<f64> = dent
                .iter()
                .zip(&ddiv)
                .map(|(a, b)| cfg.lambda_ent * a + cfg.lambda_div * b)
                .collect();
            let mut grads = weights.zeros_like();
            weights.backward(&pass, &to_f32(&dlogits), None, &mut grads);
            clip_grad_norm(&mut grads, cfg.grad_clip);
            sgd.step(weights, &grads, true)?;
        }
        let s = steps as f64;
        trace.epochs.push(EpochRecord {
            stage: 2,
            source_acc: None,
            ce: 0.0,
            entropy: sums[0] / s,
            align: 0.0,
            diversity: sums[1] / s,
        });
    }
    Ok(trace)
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
