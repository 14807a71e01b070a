//! Label-free architecture score on the target domain: prediction entropy,
//! negative entropy of the mean prediction, and cross-entropy against
//! centroid pseudo-labels.

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneSpec, NetworkWeights};
use crate::data::{oracle_accuracy, DatasetPair};
use crate::error::{Error, Result};
use crate::objectives::{argmax, entropy, softmax_rows};
use crate::tensor::FeatureMap;

/// Inference batch size; outputs do not depend on it.
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeWeights {
    pub ent: f64,
    pub div: f64,
    pub pse: f64,
}

impl Default for PeWeights {
    fn default() -> Self {
        PeWeights {
            ent: 1.0,
            div: 1.0,
            pse: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeReport {
    pub l_ent: f64,
    pub l_div: f64,
    pub l_pse: f64,
    pub total: f64,
    pub source_acc: f64,
    pub pseudo_quality: f64,
    /// Filled only by reporting code; the search never sets it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_target_acc: Option<f64>,
}

/// Network outputs over a set of images, sample-major.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub n: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub features: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Outputs {
    pub fn predictions(&self) -> Vec<usize> {
        self.probs.chunks(self.num_classes).map(argmax).collect()
    }
}

pub fn predict(weights: &NetworkWeights<f32>, spec: &BackboneSpec, images: &[f32]) -> Result<Outputs> {
    let len = spec.input_channels * spec.input_height * spec.input_width;
    let n = images.len() / len;
    let (f, k) = (spec.feature_dim(), spec.num_classes);
    let mut features = Vec::with_capacity(n * f);
    let mut logits = Vec::with_capacity(n * k);
    for chunk in images.chunks(EVAL_BATCH * len) {
        let nb = chunk.len() / len;
        let pass = weights.forward(spec, FeatureMap::from_images(chunk, nb, spec.input_height, spec.input_width))?;
        features.extend(pass.features.iter().map(|&v| v as f64));
        logits.extend(pass.logits.iter().map(|&v| v as f64));
    }
    Ok(Outputs {
        n,
        feature_dim: f,
        num_classes: k,
        features,
        probs: softmax_rows(&logits, k),
    })
}

fn check_probs(probs: &[f64], k: usize) -> Result<()> {
    if k == 0 || probs.is_empty() || probs.len() % k != 0 {
        return Err(Error::Shape(format!("{} probabilities for {k} classes", probs.len())));
    }
    for (row, p) in probs.chunks(k).enumerate() {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || p.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::NotNormalized { row, sum });
        }
    }
    Ok(())
}

/// Mean per-sample prediction entropy.
pub fn entropy_term(probs: &[f64], k: usize) -> Result<f64> {
    check_probs(probs, k)?;
    let n = probs.len() / k;
    Ok(probs.chunks(k).map(entropy).sum::<f64>() / n as f64)
}

/// `−H(mean prediction)`.
pub fn diversity_term(probs: &[f64], k: usize) -> Result<f64> {
    check_probs(probs, k)?;
    let n = probs.len() / k;
    let mut mean = vec![0.0; k];
    for p in probs.chunks(k) {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    Ok(-entropy(&mean))
}

/// Mean `−ln p[ŷ]`.
pub fn pseudo_ce_term(probs: &[f64], pseudo: &[usize], k: usize) -> Result<f64> {
    check_probs(probs, k)?;
    if pseudo.len() * k != probs.len() {
        return Err(Error::Shape(format!(
            "{} pseudo-labels for {} rows",
            pseudo.len(),
            probs.len() / k
        )));
    }
    let mut sum = 0.0;
    for (index, (p, &y)) in probs.chunks(k).zip(pseudo).enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange {
                index,
                label: y,
                classes: k,
            });
        }
        sum -= p[y].max(f64::MIN_POSITIVE).ln();
    }
    Ok(sum / pseudo.len() as f64)
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

fn nearest(f: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, mu) in centroids.iter().enumerate() {
        let d = cosine_distance(f, mu);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Centroid pseudo-labels: soft-weighted class centroids, nearest by cosine
/// distance, then one round of hard-label centroids and reassignment. A
/// class that receives no samples keeps its soft centroid.
pub fn pseudo_labels(features: &[f64], probs: &[f64], dim: usize, k: usize) -> Result<Vec<usize>> {
    check_probs(probs, k)?;
    let n = probs.len() / k;
    if features.len() != n * dim {
        return Err(Error::Shape(format!(
            "{} feature values for {n} rows of width {dim}",
            features.len()
        )));
    }
    let mut soft = vec![vec![0.0; dim]; k];
    let mut mass = vec![0.0; k];
    for (f, p) in features.chunks(dim).zip(probs.chunks(k)) {
        for c in 0..k {
            mass[c] += p[c];
            for (m, &v) in soft[c].iter_mut().zip(f) {
                *m += p[c] * v;
            }
        }
    }
    for (mu, &m) in soft.iter_mut().zip(&mass) {
        if m > 0.0 {
            mu.iter_mut().for_each(|v| *v /= m);
        }
    }
    let first: Vec<usize> = features.chunks(dim).map(|f| nearest(f, &soft)).collect();
    let mut hard = vec![vec![0.0; dim]; k];
    let mut count = vec![0usize; k];
    for (f, &c) in features.chunks(dim).zip(&first) {
        count[c] += 1;
        for (m, &v) in hard[c].iter_mut().zip(f) {
            *m += v;
        }
    }
    for c in 0..k {
        if count[c] == 0 {
            hard[c] = soft[c].clone();
        } else {
            hard[c].iter_mut().for_each(|v| *v /= count[c] as f64);
        }
    }
    Ok(features.chunks(dim).map(|f| nearest(f, &hard)).collect())
}

/// Score for already computed target outputs.
pub fn score_outputs(out: &Outputs, source_acc: f64, w: &PeWeights) -> Result<PeReport> {
    let k = out.num_classes;
    let l_ent = entropy_term(&out.probs, k)?;
    let l_div = diversity_term(&out.probs, k)?;
    let pseudo = pseudo_labels(&out.features, &out.probs, out.feature_dim, k)?;
    let l_pse = pseudo_ce_term(&out.probs, &pseudo, k)?;
    let agree = out
        .predictions()
        .iter()
        .zip(&pseudo)
        .filter(|(a, b)| a == b)
        .count();
    Ok(PeReport {
        l_ent,
        l_div,
        l_pse,
        total: w.ent * l_ent + w.div * l_div + w.pse * l_pse,
        source_acc,
        pseudo_quality: agree as f64 / out.n as f64,
        oracle_target_acc: None,
    })
}

/// Full-pass source accuracy and target score. Never touches hidden labels.
pub fn estimate(
    weights: &NetworkWeights<f32>,
    spec: &BackboneSpec,
    data: &DatasetPair,
    w: &PeWeights,
) -> Result<PeReport> {
    if data.target_len() == 0 {
        return Err(Error::InvalidInput("empty target set".into()));
    }
    let src = predict(weights, spec, data.source_images())?;
    let hits = src
        .predictions()
        .iter()
        .zip(data.source_labels())
        .filter(|(a, b)| a == b)
        .count();
    let source_acc = hits as f64 / data.source_len().max(1) as f64;
    let tgt = predict(weights, spec, data.target_images())?;
    score_outputs(&tgt, source_acc, w)
}

/// Oracle accuracy on the target domain; reads the hidden labels.
pub fn oracle_target_accuracy(
    weights: &NetworkWeights<f32>,
    spec: &BackboneSpec,
    data: &DatasetPair,
) -> Result<f64> {
    let out = predict(weights, spec, data.target_images())?;
    oracle_accuracy(&out.predictions(), data)
}
