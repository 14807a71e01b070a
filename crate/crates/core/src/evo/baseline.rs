//! Random-search baseline under a shared epoch budget, and from-scratch
//! retraining of a chosen genome.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_pool, individual_seed, rank_cmp, sample_valid_genome, train_and_score, CurvePoint, Event, Provenance,
    RunLog, SearchContext, Snapshot, Status,
};
use crate::backbone::{BackboneSpec, NetworkWeights};
use crate::data::DatasetPair;
use crate::error::{Error, Result};
use crate::estimator::oracle_target_accuracy;
use crate::objectives::{train, DaLossConfig};
use crate::rng::{derive_seed, rng_from};
use crate::space::{AttentionGenome, SpaceParams};
use crate::stats::{mean, sample_sd};

const TAG_RANDOM: u64 = 0x7261_6e64;
const TAG_RETRAIN: u64 = 0x7274_726e;

#[derive(Debug, Clone)]
pub struct RandomSearchOutcome {
    pub candidates: usize,
    pub epochs_used: u64,
    pub snapshots: Vec<Snapshot>,
    pub curve: Vec<CurvePoint>,
}

impl RandomSearchOutcome {
    pub fn best(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }
}

/// Samples, trains and scores random genomes until `budget_epochs` training
/// epochs are spent. The last candidate gets whatever budget remains, so the
/// total matches the budget exactly.
pub fn random_search(
    ctx: &SearchContext,
    budget_epochs: u64,
    epochs_per_candidate: usize,
    workers: usize,
    log: &mut RunLog,
) -> Result<RandomSearchOutcome> {
    ctx.evo.check()?;
    ctx.da.check()?;
    if epochs_per_candidate == 0 {
        return Err(Error::Config("epochs_per_candidate must be ≥ 1".into()));
    }
    log.push(&Event::header(ctx, "random"))?;
    let base = derive_seed(ctx.evo.master_seed, TAG_RANDOM);
    let mut rng = rng_from(base, 0);
    let mut plan = Vec::new();
    let mut left = budget_epochs;
    while left > 0 {
        let e = left.min(epochs_per_candidate as u64);
        left -= e;
        plan.push((sample_valid_genome(ctx.space, ctx.spec, &mut rng)?, e as usize));
    }
    let pool = build_pool(workers)?;
    let mut out = RandomSearchOutcome {
        candidates: plan.len(),
        epochs_used: 0,
        snapshots: Vec::new(),
        curve: Vec::new(),
    };
    let chunk = pool.current_num_threads().max(1) * 4;
    for (c, part) in plan.chunks(chunk).enumerate() {
        let trained: Vec<Result<(NetworkWeights<f32>, Option<_>)>> = pool.install(|| {
            part.par_iter()
                .enumerate()
                .map(|(j, (genome, e))| {
                    let id = (c * chunk + j) as u64;
                    let seed = individual_seed(base, id);
                    let mut w = NetworkWeights::build(ctx.spec, ctx.space, genome, ctx.evo.stem_seed, seed)?;
                    let r = train_and_score(&mut w, ctx, seed, 0, *e)?;
                    Ok((w, r))
                })
                .collect()
        });
        for (j, res) in trained.into_iter().enumerate() {
            let (weights, report) = res?;
            let idx = c * chunk + j;
            let (genome, e) = &part[j];
            out.epochs_used += *e as u64;
            let attention_params = weights.attention_param_count();
            log.push(&Event::Eval {
                gen: idx,
                id: idx as u64,
                provenance: Provenance::Random,
                genome: ctx.space.encode(genome),
                l_ent: report.as_ref().map(|r| r.l_ent),
                l_div: report.as_ref().map(|r| r.l_div),
                l_pse: report.as_ref().map(|r| r.l_pse),
                total: report.as_ref().map(|r| r.total),
                source_acc: report.as_ref().map(|r| r.source_acc),
                pseudo_quality: report.as_ref().map(|r| r.pseudo_quality),
                status: if report.is_some() {
                    Status::Active
                } else {
                    Status::Dropped(super::DropCause::Diverged)
                },
                attention_params,
                epochs_used: Some(out.epochs_used),
            })?;
            if let Some(r) = report {
                let better = out.snapshots.last().is_none_or(|s| {
                    rank_cmp((&r, attention_params, idx as u64), (&s.report, s.attention_params, s.id)).is_lt()
                });
                if better {
                    out.snapshots.push(Snapshot {
                        gen: idx,
                        id: idx as u64,
                        genome: genome.clone(),
                        report: r,
                        attention_params,
                        weights,
                    });
                }
            }
            out.curve.push(CurvePoint {
                gen: idx,
                epochs_used: out.epochs_used,
                best_total: out.snapshots.last().map(|s| s.report.total),
                snapshot: out.snapshots.len().checked_sub(1),
            });
        }
        log.flush()?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// `None` when training diverged.
    pub target_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub genome: Vec<u32>,
    pub epochs: usize,
    pub per_seed: Vec<SeedResult>,
    /// Mean and sample SD over the seeds that did not diverge.
    pub mean: f64,
    pub sd: f64,
    pub diverged: usize,
}

/// Weights for `genome` trained from scratch with `seed` for `epochs` epochs.
pub fn train_from_scratch(
    genome: &AttentionGenome,
    spec: &BackboneSpec,
    space: &SpaceParams,
    da: &DaLossConfig,
    data: &DatasetPair,
    epochs: usize,
    seed: u64,
) -> Result<Option<NetworkWeights<f32>>> {
    let mut w = NetworkWeights::build(spec, space, genome, seed, seed)?;
    let mut rng = rng_from(seed, TAG_RETRAIN);
    match train(&mut w, spec, data, da, epochs, &mut rng) {
        Ok(_) => Ok(Some(w)),
        Err(Error::Diverged) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Retrains from scratch once per seed and reports oracle target accuracy.
/// Reads hidden labels: reporting use only.
#[allow(clippy::too_many_arguments)]
pub fn retrain(
    genome: &AttentionGenome,
    spec: &BackboneSpec,
    space: &SpaceParams,
    da: &DaLossConfig,
    data: &DatasetPair,
    epochs: usize,
    seeds: &[u64],
    workers: usize,
) -> Result<RetrainReport> {
    da.check()?;
    if seeds.is_empty() {
        return Err(Error::Config("retrain needs at least one seed".into()));
    }
    let pool = build_pool(workers)?;
    let per_seed = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let acc = match train_from_scratch(genome, spec, space, da, data, epochs, seed)? {
                    Some(w) => Some(oracle_target_accuracy(&w, spec, data)?),
                    None => None,
                };
                Ok(SeedResult { seed, target_acc: acc })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let ok: Vec<f64> = per_seed.iter().filter_map(|s| s.target_acc).collect();
    Ok(RetrainReport {
        genome: space.encode(genome),
        epochs,
        mean: if ok.is_empty() { f64::NAN } else { mean(&ok) },
        sd: sample_sd(&ok),
        diverged: per_seed.len() - ok.len(),
        per_seed,
    })
}
