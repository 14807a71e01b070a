//! Procedural two-domain image tasks with controllable shift.
//!
//! Images are single-plane `H×W` arrays stored sample-major. The target
//! labels live behind [`HiddenLabels`], which counts every read so that the
//! search can prove it never looked at them.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::blob::{self, NamedArray};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TexturedGrid,
    Blobs2dAsImage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    Closed,
    /// Target keeps only these source classes.
    Partial { kept: Vec<usize> },
    /// Target adds `extra` classes never seen in the source.
    Open { extra: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShift {
    pub rotation_deg: f64,
    pub brightness: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub task: Task,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub source: DomainShift,
    pub target: DomainShift,
    pub variant: Variant,
    /// Probability that a source label is replaced by a different class.
    #[serde(default)]
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            task: Task::TexturedGrid,
            num_classes: 4,
            samples_per_class: 200,
            height: 16,
            width: 16,
            source: DomainShift {
                rotation_deg: 0.0,
                brightness: 0.0,
                noise: 0.1,
            },
            target: DomainShift {
                rotation_deg: 30.0,
                brightness: 0.3,
                noise: 0.1,
            },
            variant: Variant::Closed,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes == 0 || self.samples_per_class == 0 {
            return bad("num_classes and samples_per_class must be positive".into());
        }
        if self.height < 2 || self.width < 2 {
            return bad(format!("image {}×{} is too small", self.height, self.width));
        }
        for d in [&self.source, &self.target] {
            if !(d.noise >= 0.0 && d.noise.is_finite()) {
                return bad(format!("noise must be finite and ≥ 0, got {}", d.noise));
            }
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad(format!("label_noise must lie in [0, 1), got {}", self.label_noise));
        }
        if self.label_noise > 0.0 && self.num_classes < 2 {
            return bad("label noise needs at least two classes".into());
        }
        match &self.variant {
            Variant::Closed => {}
            Variant::Partial { kept } => {
                let mut k = kept.clone();
                k.sort_unstable();
                k.dedup();
                if k.len() != kept.len() || k.is_empty() || k.len() >= self.num_classes {
                    return bad(format!(
                        "partial variant needs a non-empty strict subset of distinct classes, got {kept:?}"
                    ));
                }
                if let Some(&c) = k.iter().find(|&&c| c >= self.num_classes) {
                    return bad(format!("partial variant keeps class {c}, only {} exist", self.num_classes));
                }
            }
            Variant::Open { extra } => {
                if *extra == 0 {
                    return bad("open variant needs at least one extra class".into());
                }
            }
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width
    }

    /// Class ids drawn in the target domain. Ids ≥ `num_classes` are unknown.
    pub fn target_classes(&self) -> Vec<usize> {
        match &self.variant {
            Variant::Closed => (0..self.num_classes).collect(),
            Variant::Partial { kept } => kept.clone(),
            Variant::Open { extra } => (0..self.num_classes + extra).collect(),
        }
    }

    /// Label recorded in the oracle for a generated class id.
    fn oracle_label(&self, class: usize) -> usize {
        class.min(self.num_classes)
    }

    fn pattern_classes(&self) -> usize {
        match &self.variant {
            Variant::Open { extra } => self.num_classes + extra,
            _ => self.num_classes,
        }
    }
}

/// Target labels behind a read counter.
#[derive(Debug)]
pub struct HiddenLabels {
    labels: Vec<usize>,
    reads: AtomicU64,
}

impl HiddenLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        HiddenLabels {
            labels,
            reads: AtomicU64::new(0),
        }
    }

    /// Returns the labels and records the access.
    pub fn read(&self) -> &[usize] {
        self.reads.fetch_add(1, Ordering::SeqCst);
        &self.labels
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug)]
pub struct DatasetPair {
    pub spec: DatasetSpec,
    source_images: Vec<f32>,
    source_labels: Vec<usize>,
    target_images: Vec<f32>,
    target_reads: AtomicU64,
    pub hidden: HiddenLabels,
}

impl DatasetPair {
    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn source_len(&self) -> usize {
        self.source_labels.len()
    }

    pub fn target_len(&self) -> usize {
        self.hidden.len()
    }

    pub fn source_images(&self) -> &[f32] {
        &self.source_images
    }

    pub fn source_labels(&self) -> &[usize] {
        &self.source_labels
    }

    /// Target images; every call is counted.
    pub fn target_images(&self) -> &[f32] {
        self.target_reads.fetch_add(1, Ordering::SeqCst);
        &self.target_images
    }

    pub fn target_reads(&self) -> u64 {
        self.target_reads.load(Ordering::SeqCst)
    }

    /// Flat export in the named-array container. Hidden labels are only
    /// included (and counted as read) when asked for.
    pub fn to_blob(&self, include_hidden: bool) -> Vec<u8> {
        let (h, w) = (self.spec.height, self.spec.width);
        let as_f32 = |v: &[usize]| v.iter().map(|&l| l as f32).collect::<Vec<_>>();
        let mut arrays = vec![
            NamedArray {
                name: "source.images".into(),
                dims: vec![self.source_len(), 1, h, w],
                data: self.source_images.clone(),
            },
            NamedArray {
                name: "source.labels".into(),
                dims: vec![self.source_len()],
                data: as_f32(&self.source_labels),
            },
            NamedArray {
                name: "target.images".into(),
                dims: vec![self.target_len(), 1, h, w],
                data: self.target_images().to_vec(),
            },
        ];
        if include_hidden {
            arrays.push(NamedArray {
                name: "target.labels".into(),
                dims: vec![self.target_len()],
                data: as_f32(self.hidden.read()),
            });
        }
        blob::encode(blob::DATASET_MAGIC, &arrays)
    }
}

const TAG_SOURCE: u64 = 1;
const TAG_TARGET: u64 = 2;
const TAG_LABEL_NOISE: u64 = 3;

pub fn generate(spec: &DatasetSpec) -> Result<DatasetPair> {
    spec.check()?;
    let source_classes: Vec<usize> = (0..spec.num_classes).collect();
    let (source_images, mut source_labels) = render_domain(
        spec,
        &source_classes,
        &spec.source,
        &mut rng_from(spec.seed, TAG_SOURCE),
    )?;
    if spec.label_noise > 0.0 {
        let mut rng = rng_from(spec.seed, TAG_LABEL_NOISE);
        for l in &mut source_labels {
            if rng.random_bool(spec.label_noise) {
                let other = rng.random_range(0..spec.num_classes - 1);
                *l = if other >= *l { other + 1 } else { other };
            }
        }
    }
    let (target_images, target_classes) = render_domain(
        spec,
        &spec.target_classes(),
        &spec.target,
        &mut rng_from(spec.seed, TAG_TARGET),
    )?;
    let hidden = target_classes.iter().map(|&c| spec.oracle_label(c)).collect();
    Ok(DatasetPair {
        spec: spec.clone(),
        source_images,
        source_labels,
        target_images,
        target_reads: AtomicU64::new(0),
        hidden: HiddenLabels::new(hidden),
    })
}

fn render_domain(
    spec: &DatasetSpec,
    classes: &[usize],
    shift: &DomainShift,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f32>, Vec<usize>)> {
    let noise = Normal::new(0.0, shift.noise.max(0.0))
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
    let n = classes.len() * spec.samples_per_class;
    let mut images = Vec::with_capacity(n * spec.image_len());
    let mut labels = Vec::with_capacity(n);
    for &c in classes {
        for _ in 0..spec.samples_per_class {
            match spec.task {
                Task::TexturedGrid => render_texture(spec, c, shift, &noise, rng, &mut images),
                Task::Blobs2dAsImage => render_blob(spec, c, shift, &noise, rng, &mut images),
            }
            labels.push(c);
        }
    }
    Ok((images, labels))
}

const JITTER_RAD: f64 = 20.0 * PI / 180.0;

/// Class `c` is an oriented grating (even `c`) or checkerboard (odd `c`)
/// with its own orientation and frequency; samples jitter phase and contrast.
fn render_texture(
    spec: &DatasetSpec,
    c: usize,
    shift: &DomainShift,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<f32>,
) {
    let total = spec.pattern_classes() as f64;
    let theta = PI * c as f64 / total + rng.random_range(-JITTER_RAD..JITTER_RAD);
    let freq = 2.0 + c as f64 * 3.0 / total;
    let checker = c % 2 == 1;
    let phase_u = rng.random_range(-0.5..0.5);
    let phase_v = rng.random_range(-0.5..0.5);
    let contrast = rng.random_range(0.8..1.2);
    let rot = shift.rotation_deg.to_radians();
    let (cx, cy) = ((spec.width - 1) as f64 / 2.0, (spec.height - 1) as f64 / 2.0);
    let scale = 2.0 * PI * freq / spec.width as f64;
    for row in 0..spec.height {
        for col in 0..spec.width {
            let (x, y) = (col as f64 - cx, row as f64 - cy);
            // sample the pattern at the inverse-rotated location
            let (xr, yr) = (x * rot.cos() + y * rot.sin(), -x * rot.sin() + y * rot.cos());
            let u = xr * theta.cos() + yr * theta.sin();
            let v = -xr * theta.sin() + yr * theta.cos();
            let mut p = (scale * u + phase_u).sin();
            if checker {
                p *= (scale * v + phase_v).sin().signum();
            }
            let value = 0.5 + 0.4 * contrast * p + shift.brightness + noise.sample(rng);
            out.push(value as f32);
        }
    }
}

/// Class `c` is an isotropic Gaussian in 2-D; the point is written into two
/// fixed pixels of an otherwise noisy image. The shift rotates the geometry
/// about the origin and translates it by `brightness` along both axes.
fn render_blob(
    spec: &DatasetSpec,
    c: usize,
    shift: &DomainShift,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<f32>,
) {
    let total = spec.pattern_classes() as f64;
    let angle = 2.0 * PI * c as f64 / total;
    let spread = Normal::new(0.0, 0.35).expect("valid");
    let (px, py) = (angle.cos() + spread.sample(rng), angle.sin() + spread.sample(rng));
    let rot = shift.rotation_deg.to_radians();
    let qx = px * rot.cos() - py * rot.sin() + shift.brightness;
    let qy = px * rot.sin() + py * rot.cos() + shift.brightness;
    let start = out.len();
    out.extend((0..spec.image_len()).map(|_| noise.sample(rng) as f32));
    let at = |r: usize, c: usize| start + r * spec.width + c;
    out[at(spec.height / 4, spec.width / 4)] += qx as f32;
    out[at(3 * spec.height / 4, 3 * spec.width / 4)] += qy as f32;
}

/// Accuracy of `predictions` against the hidden target labels. The open
/// variant reports OS: the mean per-class accuracy over every class present
/// in the target, the unknown class included. Counts as a label read.
pub fn oracle_accuracy(predictions: &[usize], pair: &DatasetPair) -> Result<f64> {
    if predictions.len() != pair.target_len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} target samples",
            predictions.len(),
            pair.target_len()
        )));
    }
    let labels = pair.hidden.read();
    Ok(match pair.spec.variant {
        Variant::Open { .. } => per_class_mean_accuracy(predictions, labels, pair.num_classes() + 1),
        _ => plain_accuracy(predictions, labels),
    })
}

pub fn plain_accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Mean over classes that occur in `labels` of the per-class hit rate.
pub fn per_class_mean_accuracy(predictions: &[usize], labels: &[usize], classes: usize) -> f64 {
    let mut hit = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        seen[l] += 1;
        if p == l {
            hit[l] += 1;
        }
    }
    let present: Vec<f64> = (0..classes)
        .filter(|&c| seen[c] > 0)
        .map(|c| hit[c] as f64 / seen[c] as f64)
        .collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(spc: usize) -> DatasetSpec {
        DatasetSpec {
            samples_per_class: spc,
            ..DatasetSpec::default()
        }
    }

    fn class_means(images: &[f32], labels: &[usize], classes: usize, len: usize) -> Vec<Vec<f64>> {
        let mut sums = vec![vec![0.0; len]; classes];
        let mut counts = vec![0usize; classes];
        for (img, &l) in images.chunks(len).zip(labels) {
            counts[l] += 1;
            for (s, &v) in sums[l].iter_mut().zip(img) {
                *s += v as f64;
            }
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
        sums
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small(10)).unwrap();
        let b = generate(&small(10)).unwrap();
        assert_eq!(a.to_blob(true), b.to_blob(true));
        let c = generate(&DatasetSpec { seed: 1, ..small(10) }).unwrap();
        assert_ne!(a.source_images(), c.source_images());
    }

    #[test]
    fn zero_shift_gives_matching_class_means() {
        let mut spec = small(300);
        spec.target = spec.source;
        let pair = generate(&spec).unwrap();
        let len = spec.image_len();
        let src = class_means(pair.source_images(), pair.source_labels(), 4, len);
        let tgt = class_means(pair.target_images(), pair.hidden.read(), 4, len);
        // σ here is the per-pixel sample spread (noise plus phase and
        // contrast jitter), estimated from the source images
        let n = spec.samples_per_class as f64;
        for (c, (s, t)) in src.iter().zip(&tgt).enumerate() {
            let mut var = vec![0.0; len];
            for (img, _) in pair.source_images().chunks(len).zip(pair.source_labels()).filter(|(_, &l)| l == c) {
                for ((v, &x), m) in var.iter_mut().zip(img).zip(s) {
                    *v += (x as f64 - m).powi(2) / n;
                }
            }
            let sigma = var.iter().map(|v| v.sqrt()).sum::<f64>() / len as f64;
            let mad = s.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / len as f64;
            assert!(mad < 3.0 * sigma / n.sqrt(), "class {c}: mad {mad}, σ {sigma}");
        }
    }

    #[test]
    fn nearest_mean_separates_source_classes() {
        let spec = small(200);
        let pair = generate(&spec).unwrap();
        let len = spec.image_len();
        let means = class_means(pair.source_images(), pair.source_labels(), 4, len);
        let mut hits = 0;
        for (img, &l) in pair.source_images().chunks(len).zip(pair.source_labels()) {
            let best = (0..4)
                .min_by(|&a, &b| {
                    let d = |m: &Vec<f64>| {
                        m.iter().zip(img).map(|(x, &y)| (x - y as f64).powi(2)).sum::<f64>()
                    };
                    d(&means[a]).total_cmp(&d(&means[b]))
                })
                .unwrap();
            hits += (best == l) as usize;
        }
        assert!(hits as f64 / pair.source_len() as f64 >= 0.99, "{hits}");
    }

    #[test]
    fn label_noise_flips_to_other_classes() {
        let clean = generate(&small(250)).unwrap();
        let noisy = generate(&DatasetSpec { label_noise: 0.2, ..small(250) }).unwrap();
        assert_eq!(clean.source_images(), noisy.source_images());
        let flipped = clean
            .source_labels()
            .iter()
            .zip(noisy.source_labels())
            .filter(|(a, b)| a != b)
            .count() as f64;
        let n = clean.source_len() as f64;
        assert!((flipped / n - 0.2).abs() < 3.0 * (0.2 * 0.8 / n).sqrt());
        assert_eq!(clean.hidden.read(), noisy.hidden.read());
    }

    #[test]
    fn partial_keeps_requested_classes() {
        let spec = DatasetSpec {
            variant: Variant::Partial { kept: vec![1, 3] },
            ..small(5)
        };
        let pair = generate(&spec).unwrap();
        let mut l = pair.hidden.read().to_vec();
        l.sort_unstable();
        l.dedup();
        assert_eq!(l, vec![1, 3]);
    }

    #[test]
    fn open_marks_extra_classes_unknown() {
        let spec = DatasetSpec {
            variant: Variant::Open { extra: 2 },
            ..small(5)
        };
        let pair = generate(&spec).unwrap();
        assert_eq!(pair.target_len(), 30);
        assert_eq!(pair.hidden.read().iter().filter(|&&l| l == 4).count(), 10);
    }

    #[test]
    fn invalid_variants_are_rejected() {
        for v in [
            Variant::Partial { kept: vec![] },
            Variant::Partial { kept: vec![0, 1, 2, 3] },
            Variant::Partial { kept: vec![0, 0] },
            Variant::Partial { kept: vec![7] },
            Variant::Open { extra: 0 },
        ] {
            let spec = DatasetSpec { variant: v, ..small(2) };
            assert!(matches!(generate(&spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn oracle_accuracy_counts_reads() {
        let pair = generate(&small(3)).unwrap();
        assert_eq!(pair.hidden.reads(), 0);
        let truth = pair.hidden.read().to_vec();
        assert_eq!(oracle_accuracy(&truth, &pair).unwrap(), 1.0);
        assert_eq!(pair.hidden.reads(), 2);
        assert!(oracle_accuracy(&truth[1..], &pair).is_err());
    }

    #[test]
    fn open_set_score_averages_unknown_class() {
        let spec = DatasetSpec {
            variant: Variant::Open { extra: 1 },
            ..small(4)
        };
        let pair = generate(&spec).unwrap();
        let preds: Vec<usize> = pair.hidden.read().iter().map(|&l| if l == 4 { 0 } else { l }).collect();
        assert!((oracle_accuracy(&preds, &pair).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn random_predictions_score_near_chance() {
        let pair = generate(&small(500)).unwrap();
        let mut rng = rng_from(9, 9);
        let preds: Vec<usize> = (0..pair.target_len()).map(|_| rng.random_range(0..4)).collect();
        let acc = oracle_accuracy(&preds, &pair).unwrap();
        let n = pair.target_len() as f64;
        let sd = (0.25 * 0.75 / n).sqrt();
        assert!((acc - 0.25).abs() < 3.0 * sd, "{acc}");
    }

    #[test]
    fn blobs_render_point_into_two_pixels() {
        let spec = DatasetSpec {
            task: Task::Blobs2dAsImage,
            source: DomainShift {
                rotation_deg: 0.0,
                brightness: 0.0,
                noise: 0.0,
            },
            ..small(50)
        };
        let pair = generate(&spec).unwrap();
        let len = spec.image_len();
        for img in pair.source_images().chunks(len) {
            let nonzero = img.iter().filter(|&&v| v != 0.0).count();
            assert!(nonzero <= 2);
        }
        let means = class_means(pair.source_images(), pair.source_labels(), 4, len);
        // class 0 sits at angle 0: x ≈ 1, y ≈ 0
        assert!((means[0][4 * 16 + 4] - 1.0).abs() < 0.2);
        assert!(means[0][12 * 16 + 12].abs() < 0.2);
    }

    #[test]
    fn export_round_trips_through_container() {
        let pair = generate(&small(2)).unwrap();
        let arrays = blob::decode(blob::DATASET_MAGIC, &pair.to_blob(false)).unwrap();
        assert_eq!(arrays.len(), 3);
        assert_eq!(arrays[0].dims, vec![8, 1, 16, 16]);
        assert_eq!(pair.hidden.reads(), 0);
        assert!(pair.target_reads() > 0);
    }
}
