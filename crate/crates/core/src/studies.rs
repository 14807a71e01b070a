//! Post-hoc studies over sampled genomes: how well the label-free score and
//! source accuracy rank architectures by true target accuracy, and how
//! target accuracy spreads across random architectures.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneSpec;
use crate::data::DatasetPair;
use crate::error::{Error, Result};
use crate::estimator::{estimate, oracle_target_accuracy, PeWeights};
use crate::evo::{baseline::train_from_scratch, build_pool, sample_valid_genome};
use crate::objectives::DaLossConfig;
use crate::rng::rng_from;
use crate::space::{AttentionGenome, SpaceParams};
use crate::stats::spearman;

const TAG_STUDY: u64 = 0x7374_7564;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub genome: Vec<u32>,
    pub source_acc: f64,
    pub l_ent: f64,
    pub l_div: f64,
    pub l_pse: f64,
    pub total: f64,
    pub target_acc: f64,
    pub diverged: bool,
}

/// Shared training setup of a study.
#[derive(Clone, Copy)]
pub struct StudySetup<'a> {
    pub spec: &'a BackboneSpec,
    pub space: &'a SpaceParams,
    pub da: &'a DaLossConfig,
    pub data: &'a DatasetPair,
    pub pe_weights: &'a PeWeights,
    pub epochs: usize,
    /// Initialization and training seed, the same for every genome so that
    /// only the architecture varies.
    pub seed: u64,
    pub workers: usize,
}

pub fn sample_genomes(space: &SpaceParams, spec: &BackboneSpec, n: usize, seed: u64) -> Result<Vec<AttentionGenome>> {
    let mut rng = rng_from(seed, TAG_STUDY);
    (0..n).map(|_| sample_valid_genome(space, spec, &mut rng)).collect()
}

/// Trains every genome from scratch and records score, source accuracy and
/// oracle target accuracy. Reads hidden labels.
pub fn evaluate_genomes(genomes: &[AttentionGenome], s: &StudySetup) -> Result<Vec<StudyRow>> {
    let pool = build_pool(s.workers)?;
    pool.install(|| {
        genomes
            .par_iter()
            .map(|g| {
                let codes = s.space.encode(g);
                match train_from_scratch(g, s.spec, s.space, s.da, s.data, s.epochs, s.seed)? {
                    None => Ok(StudyRow {
                        genome: codes,
                        source_acc: f64::NAN,
                        l_ent: f64::NAN,
                        l_div: f64::NAN,
                        l_pse: f64::NAN,
                        total: f64::NAN,
                        target_acc: f64::NAN,
                        diverged: true,
                    }),
                    Some(w) => {
                        let r = estimate(&w, s.spec, s.data, s.pe_weights)?;
                        Ok(StudyRow {
                            genome: codes,
                            source_acc: r.source_acc,
                            l_ent: r.l_ent,
                            l_div: r.l_div,
                            l_pse: r.l_pse,
                            total: r.total,
                            target_acc: oracle_target_accuracy(&w, s.spec, s.data)?,
                            diverged: false,
                        })
                    }
                }
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    /// Spearman ρ between −score and target accuracy.
    pub rho_estimator: Option<f64>,
    /// Spearman ρ between source accuracy and target accuracy.
    pub rho_source: Option<f64>,
    pub summary: String,
}

/// Both rank correlations over the rows that did not diverge.
pub fn correlate(rows: Vec<StudyRow>) -> Result<StudyReport> {
    let ok: Vec<&StudyRow> = rows.iter().filter(|r| !r.diverged).collect();
    let acc: Vec<f64> = ok.iter().map(|r| r.target_acc).collect();
    let neg_pe: Vec<f64> = ok.iter().map(|r| -r.total).collect();
    let src: Vec<f64> = ok.iter().map(|r| r.source_acc).collect();
    let excluded = rows.len() - ok.len();
    let rho = |x: &[f64]| match spearman(x, &acc) {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) | Err(Error::InvalidInput(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let (pe, so) = (rho(&neg_pe)?, rho(&src)?);
    let summary = match (pe, so) {
        (Some(a), Some(b)) => format!(
            "rho(-L_PE, target_acc) = {a:.4}; rho(source_acc, target_acc) = {b:.4}; n = {}; diverged excluded = {excluded}",
            ok.len()
        ),
        _ => format!(
            "degenerate: zero rank variance (n = {}, diverged excluded = {excluded})",
            ok.len()
        ),
    };
    Ok(StudyReport {
        rows,
        rho_estimator: pe,
        rho_source: so,
        summary,
    })
}

pub fn rank_correlation_study(genomes: &[AttentionGenome], s: &StudySetup) -> Result<StudyReport> {
    if genomes.len() < 10 {
        return Err(Error::Config(format!(
            "rank correlation needs at least 10 genomes, got {}",
            genomes.len()
        )));
    }
    correlate(evaluate_genomes(genomes, s)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub rows: Vec<StudyRow>,
    /// Target accuracy of the all-Identity backbone under the same protocol.
    pub baseline: f64,
    pub min: f64,
    pub max: f64,
}

pub fn histogram(genomes: &[AttentionGenome], s: &StudySetup) -> Result<HistogramReport> {
    let rows = evaluate_genomes(genomes, s)?;
    let identity = AttentionGenome::identity(s.space.num_slots);
    let base = evaluate_genomes(std::slice::from_ref(&identity), s)?;
    let accs: Vec<f64> = rows.iter().filter(|r| !r.diverged).map(|r| r.target_acc).collect();
    Ok(HistogramReport {
        baseline: base[0].target_acc,
        min: accs.iter().copied().fold(f64::INFINITY, f64::min),
        max: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec};

    fn row(total: f64, src: f64, acc: f64) -> StudyRow {
        StudyRow {
            genome: vec![0; 4],
            source_acc: src,
            l_ent: 0.0,
            l_div: 0.0,
            l_pse: total,
            total,
            target_acc: acc,
            diverged: false,
        }
    }

    #[test]
    fn correlations_use_negated_score() {
        let rows: Vec<StudyRow> = (0..10).map(|i| row(-(i as f64), 1.0 - i as f64 * 0.01, i as f64)).collect();
        let r = correlate(rows).unwrap();
        assert_eq!(r.rho_estimator, Some(1.0));
        assert_eq!(r.rho_source, Some(-1.0));
    }

    #[test]
    fn diverged_rows_are_excluded_from_both() {
        let mut rows: Vec<StudyRow> = (0..10).map(|i| row(-(i as f64), i as f64, i as f64)).collect();
        rows[3].diverged = true;
        rows[3].total = f64::NAN;
        let r = correlate(rows).unwrap();
        assert_eq!(r.rho_estimator, Some(1.0));
        assert!(r.summary.contains("n = 9"));
    }

    #[test]
    fn identical_genomes_are_degenerate() {
        let data = generate(&DatasetSpec {
            samples_per_class: 4,
            ..DatasetSpec::default()
        })
        .unwrap();
        let (spec, space) = (BackboneSpec::default(), SpaceParams::default());
        let da = DaLossConfig {
            batch_size: 8,
            ..DaLossConfig::default()
        };
        let s = StudySetup {
            spec: &spec,
            space: &space,
            da: &da,
            data: &data,
            pe_weights: &PeWeights::default(),
            epochs: 1,
            seed: 3,
            workers: 1,
        };
        let g = sample_genomes(&space, &spec, 1, 5).unwrap().remove(0);
        let r = rank_correlation_study(&vec![g.clone(); 10], &s).unwrap();
        assert!(r.summary.starts_with("degenerate"), "{}", r.summary);
        assert!(r.rho_estimator.is_none() && r.rho_source.is_none());
        assert!(rank_correlation_study(&vec![g; 9], &s).is_err());
    }
}
