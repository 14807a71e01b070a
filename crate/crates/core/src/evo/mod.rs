//! Population-based search over attention genomes: selection, crossover,
//! mutation, early stopping, an archive of mature individuals and refill.

pub mod baseline;
pub mod checkpoint;
pub mod runlog;

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::backbone::{BackboneSpec, NetworkWeights};
use crate::data::DatasetPair;
use crate::error::{Error, Result};
use crate::estimator::{estimate, PeReport, PeWeights};
use crate::objectives::{train, DaLossConfig};
use crate::rng::{derive_seed, rng_from};
use crate::space::{AttentionGenome, SpaceParams};

pub use baseline::{random_search, retrain, RandomSearchOutcome, RetrainReport, SeedResult};
pub use runlog::{Event, RunLog, RUNLOG_SCHEMA, RUNLOG_VERSION};

const TAG_INDIVIDUAL: u64 = 0x696e_6476;
const TAG_COORDINATOR: u64 = 0x636f_6f72;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    /// Population size K.
    pub population: usize,
    /// Generations T; also the per-individual age budget.
    pub generations: usize,
    /// Source-accuracy ceiling; above it an individual counts as negative transfer.
    pub tr_acc: f64,
    /// Consecutive below-median pseudo-quality generations before dropping.
    pub patience: usize,
    pub top_frac: f64,
    pub stem_seed: u64,
    pub master_seed: u64,
    pub pe_weights: PeWeights,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population: 20,
            generations: 30,
            tr_acc: 0.95,
            patience: 5,
            top_frac: 0.5,
            stem_seed: 7,
            master_seed: 1,
            pe_weights: PeWeights::default(),
        }
    }
}

impl EvoConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.population == 0 {
            return bad("population must be ≥ 1".into());
        }
        if !(self.top_frac > 0.0 && self.top_frac < 1.0) {
            return bad(format!("top_frac must lie in (0, 1), got {}", self.top_frac));
        }
        if self.patience == 0 {
            return bad("patience must be ≥ 1".into());
        }
        if !(self.tr_acc > 0.0 && self.tr_acc <= 1.0) {
            return bad(format!("tr_acc must lie in (0, 1], got {}", self.tr_acc));
        }
        let w = &self.pe_weights;
        if [w.ent, w.div, w.pse].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("pe_weights must be finite and ≥ 0".into());
        }
        Ok(())
    }

    pub fn top_count(&self) -> usize {
        ((self.top_frac * self.population as f64).ceil() as usize).clamp(1, self.population)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropCause {
    NegativeTransfer,
    PoorPseudo,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatureCause {
    /// Survived the full age budget.
    Budget,
    /// No improvement of the score for twice the patience.
    Converged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Active,
    Mature(MatureCause),
    Dropped(DropCause),
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Active => "active",
            Status::Mature(MatureCause::Budget) => "mature(budget)",
            Status::Mature(MatureCause::Converged) => "mature(converged)",
            Status::Dropped(DropCause::NegativeTransfer) => "dropped(negative_transfer)",
            Status::Dropped(DropCause::PoorPseudo) => "dropped(poor_pseudo)",
            Status::Dropped(DropCause::Diverged) => "dropped(diverged)",
        })
    }
}

impl FromStr for Status {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "active" => Status::Active,
            "mature(budget)" => Status::Mature(MatureCause::Budget),
            "mature(converged)" => Status::Mature(MatureCause::Converged),
            "dropped(negative_transfer)" => Status::Dropped(DropCause::NegativeTransfer),
            "dropped(poor_pseudo)" => Status::Dropped(DropCause::PoorPseudo),
            "dropped(diverged)" => Status::Dropped(DropCause::Diverged),
            _ => return Err(Error::Format(format!("unknown status {s:?}"))),
        })
    }
}

/// How an individual came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Init,
    /// Parents in rank order: the first one supplied the backbone.
    Crossover(u64, u64),
    Mutate(u64),
    Refill,
    /// Candidate of the random-search baseline.
    Random,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Init => f.write_str("init"),
            Provenance::Crossover(a, b) => write!(f, "crossover({a},{b})"),
            Provenance::Mutate(p) => write!(f, "mutate({p})"),
            Provenance::Refill => f.write_str("refill"),
            Provenance::Random => f.write_str("random"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("unknown provenance {s:?}"));
        let args = |prefix: &str| -> Option<Vec<u64>> {
            let inner = s.strip_prefix(prefix)?.strip_suffix(')')?;
            inner.split(',').map(|p| p.trim().parse().ok()).collect()
        };
        Ok(match s {
            "init" => Provenance::Init,
            "refill" => Provenance::Refill,
            "random" => Provenance::Random,
            _ => {
                if let Some(v) = args("crossover(") {
                    match v[..] {
                        [a, b] => Provenance::Crossover(a, b),
                        _ => return Err(bad()),
                    }
                } else if let Some(v) = args("mutate(") {
                    match v[..] {
                        [p] => Provenance::Mutate(p),
                        _ => return Err(bad()),
                    }
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }
        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(Status);
string_serde!(Provenance);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub gen: usize,
    pub report: PeReport,
    /// Population median pseudo-quality of that generation.
    pub median_pq: f64,
}

#[derive(Debug, Clone)]
pub struct Individual {
    pub id: u64,
    pub genome: AttentionGenome,
    pub seed: u64,
    pub weights: NetworkWeights<f32>,
    pub history: Vec<HistoryEntry>,
    pub status: Status,
    /// Generations this individual has been trained and scored.
    pub age: usize,
    pub provenance: Provenance,
}

impl Individual {
    pub fn latest(&self) -> Option<&PeReport> {
        self.history.last().map(|h| &h.report)
    }

    pub fn attention_params(&self) -> usize {
        self.weights.attention_param_count()
    }
}

/// Everything a search needs besides its own state.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub spec: &'a BackboneSpec,
    pub space: &'a SpaceParams,
    pub da: &'a DaLossConfig,
    pub evo: &'a EvoConfig,
    pub data: &'a DatasetPair,
    /// Digest of the full run configuration, embedded in logs and checkpoints.
    pub digest: &'a str,
}

pub fn individual_seed(master_seed: u64, id: u64) -> u64 {
    derive_seed(derive_seed(master_seed, TAG_INDIVIDUAL), id)
}

/// Draws genomes until one fits the backbone's slot channel counts.
pub fn sample_valid_genome<R: Rng + ?Sized>(
    space: &SpaceParams,
    spec: &BackboneSpec,
    rng: &mut R,
) -> Result<AttentionGenome> {
    for _ in 0..10_000 {
        let g = space.sample_genome(rng);
        if spec.validate_genome(&g, space).is_ok() {
            return Ok(g);
        }
    }
    Err(Error::InvalidSpace(
        "no valid genome found; group counts do not divide the slot channels".into(),
    ))
}

fn fresh_individual(
    ctx: &SearchContext,
    id: u64,
    genome: AttentionGenome,
    provenance: Provenance,
) -> Result<Individual> {
    let seed = individual_seed(ctx.evo.master_seed, id);
    let weights = NetworkWeights::build(ctx.spec, ctx.space, &genome, ctx.evo.stem_seed, seed)?;
    Ok(Individual {
        id,
        genome,
        seed,
        weights,
        history: Vec::new(),
        status: Status::Active,
        age: 0,
        provenance,
    })
}

/// K random individuals with ids `0..K`.
pub fn init_population(ctx: &SearchContext, rng: &mut ChaCha8Rng) -> Result<Vec<Individual>> {
    (0..ctx.evo.population as u64)
        .map(|id| {
            let g = sample_valid_genome(ctx.space, ctx.spec, rng)?;
            fresh_individual(ctx, id, g, Provenance::Init)
        })
        .collect()
}

fn crossover_mask(a: &AttentionGenome, b: &AttentionGenome, rng: &mut impl Rng) -> Result<Vec<bool>> {
    if a.len() != b.len() {
        return Err(Error::GenomeLength {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok((0..a.len()).map(|_| rng.random_bool(0.5)).collect())
}

fn apply_mask(a: &AttentionGenome, b: &AttentionGenome, from_b: &[bool]) -> AttentionGenome {
    AttentionGenome {
        slots: a
            .slots
            .iter()
            .zip(&b.slots)
            .zip(from_b)
            .map(|((x, y), &m)| if m { *y } else { *x })
            .collect(),
    }
}

/// Uniform crossover: each slot comes from `a` or `b` with probability 1/2.
pub fn crossover(a: &AttentionGenome, b: &AttentionGenome, rng: &mut impl Rng) -> Result<AttentionGenome> {
    let mask = crossover_mask(a, b, rng)?;
    Ok(apply_mask(a, b, &mask))
}

/// Replaces one slot with a fresh draw, or (half the time, when there are at
/// least two slots) swaps two distinct slots.
pub fn mutate(g: &AttentionGenome, space: &SpaceParams, rng: &mut impl Rng) -> AttentionGenome {
    let mut out = g.clone();
    let p = g.len();
    if p == 0 {
        return out;
    }
    if p < 2 || rng.random_bool(0.5) {
        let j = rng.random_range(0..p);
        out.slots[j] = space.sample_gene(rng);
    } else {
        let pair = sample(rng, p, 2);
        out.slots.swap(pair.index(0), pair.index(1));
    }
    out
}

/// Status after the latest evaluation: negative transfer, then poor pseudo
/// quality, then the age budget, then convergence.
pub fn early_stop_check(ind: &Individual, cfg: &EvoConfig) -> Status {
    let Some(last) = ind.history.last() else {
        return ind.status;
    };
    if last.report.source_acc > cfg.tr_acc {
        return Status::Dropped(DropCause::NegativeTransfer);
    }
    let poor = ind
        .history
        .iter()
        .rev()
        .take_while(|h| h.report.pseudo_quality < h.median_pq)
        .count();
    if poor >= cfg.patience {
        return Status::Dropped(DropCause::PoorPseudo);
    }
    if ind.age >= cfg.generations {
        return Status::Mature(MatureCause::Budget);
    }
    let best = ind
        .history
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.report.total.total_cmp(&b.1.report.total))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if ind.history.len() - 1 - best >= 2 * cfg.patience {
        return Status::Mature(MatureCause::Converged);
    }
    Status::Active
}

/// Ascending score, then fewer attention parameters, then lower id.
pub fn rank_cmp(a: (&PeReport, usize, u64), b: (&PeReport, usize, u64)) -> Ordering {
    a.0.total
        .total_cmp(&b.0.total)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

fn ind_cmp(a: &Individual, b: &Individual) -> Ordering {
    match (a.latest(), b.latest()) {
        (Some(x), Some(y)) => rank_cmp(
            (x, a.attention_params(), a.id),
            (y, b.attention_params(), b.id),
        ),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.id.cmp(&b.id),
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Best-so-far individual, frozen at the moment it was scored.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub gen: usize,
    pub id: u64,
    pub genome: AttentionGenome,
    pub report: PeReport,
    pub attention_params: usize,
    pub weights: NetworkWeights<f32>,
}

/// One point of a best-so-far trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub gen: usize,
    pub epochs_used: u64,
    pub best_total: Option<f64>,
    /// Index into the snapshot list.
    pub snapshot: Option<usize>,
}

/// Trains `epochs` epochs and scores. `None` means the run diverged.
pub(crate) fn train_and_score(
    weights: &mut NetworkWeights<f32>,
    ctx: &SearchContext,
    seed: u64,
    step: u64,
    epochs: usize,
) -> Result<Option<PeReport>> {
    let mut rng = rng_from(seed, step);
    match train(weights, ctx.spec, ctx.data, ctx.da, epochs, &mut rng) {
        Ok(_) => {}
        Err(Error::Diverged) => return Ok(None),
        Err(e) => return Err(e),
    }
    let r = estimate(weights, ctx.spec, ctx.data, &ctx.evo.pe_weights)?;
    let finite = [r.l_ent, r.l_div, r.l_pse, r.total, r.source_acc, r.pseudo_quality]
        .iter()
        .all(|v| v.is_finite());
    Ok(finite.then_some(r))
}

/// Mutable state of an evolutionary run, everything a checkpoint holds.
#[derive(Debug, Clone)]
pub struct EvoState {
    /// Index of the next generation to run.
    pub generation: usize,
    pub population: Vec<Individual>,
    pub archive: Vec<Individual>,
    pub rng: ChaCha8Rng,
    pub next_id: u64,
    pub epochs_used: u64,
    pub snapshots: Vec<Snapshot>,
    pub curve: Vec<CurvePoint>,
}

impl EvoState {
    pub fn new(ctx: &SearchContext) -> Result<Self> {
        ctx.evo.check()?;
        ctx.da.check()?;
        let mut rng = rng_from(ctx.evo.master_seed, TAG_COORDINATOR);
        let population = init_population(ctx, &mut rng)?;
        Ok(EvoState {
            generation: 0,
            next_id: population.len() as u64,
            population,
            archive: Vec::new(),
            rng,
            epochs_used: 0,
            snapshots: Vec::new(),
            curve: Vec::new(),
        })
    }

    pub fn best_snapshot(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    pub fn archive_best_total(&self) -> Option<f64> {
        self.archive.first().and_then(|i| i.latest()).map(|r| r.total)
    }

    fn new_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }
}

/// Runs one generation and appends its events to `log`.
pub fn generation_step(
    state: &mut EvoState,
    ctx: &SearchContext,
    pool: &rayon::ThreadPool,
    log: &mut RunLog,
) -> Result<()> {
    let gen = state.generation;
    let epochs = ctx.da.epochs_per_generation;

    // (1)-(2): independent per-individual work, merged in population order.
    let results: Vec<Result<Option<PeReport>>> = pool.install(|| {
        state
            .population
            .par_iter_mut()
            .map(|ind| train_and_score(&mut ind.weights, ctx, ind.seed, ind.age as u64, epochs))
            .collect()
    });
    state.epochs_used += (epochs * state.population.len()) as u64;
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let pqs: Vec<f64> = results.iter().flatten().map(|r| r.pseudo_quality).collect();
    let median_pq = median(&pqs);
    for (ind, r) in state.population.iter_mut().zip(results) {
        match r {
            None => ind.status = Status::Dropped(DropCause::Diverged),
            Some(report) => {
                ind.history.push(HistoryEntry {
                    gen,
                    report,
                    median_pq,
                });
                ind.age += 1;
                ind.status = early_stop_check(ind, ctx.evo);
            }
        }
    }

    // best-so-far over everything scored
    let mut scored: Vec<&Individual> = state.population.iter().filter(|i| i.latest().is_some() && i.history.last().unwrap().gen == gen).collect();
    scored.sort_by(|a, b| ind_cmp(a, b));
    if let Some(top) = scored.first() {
        let r = top.latest().unwrap();
        let better = match state.snapshots.last() {
            None => true,
            Some(s) => {
                rank_cmp((r, top.attention_params(), top.id), (&s.report, s.attention_params, s.id))
                    == Ordering::Less
            }
        };
        if better {
            state.snapshots.push(Snapshot {
                gen,
                id: top.id,
                genome: top.genome.clone(),
                report: r.clone(),
                attention_params: top.attention_params(),
                weights: top.weights.clone(),
            });
        }
    }

    for ind in &state.population {
        log.push(&Event::eval(gen, ind, ctx.space))?;
    }

    // (6) early stop before breeding: mature to the archive, dropped out.
    let population = std::mem::take(&mut state.population);
    let (mut archived, mut dropped) = (0usize, 0usize);
    let mut survivors = Vec::with_capacity(population.len());
    for ind in population {
        match ind.status {
            Status::Active => survivors.push(ind),
            Status::Mature(_) => {
                archived += 1;
                state.archive.push(ind);
            }
            Status::Dropped(_) => dropped += 1,
        }
    }
    state.archive.sort_by(ind_cmp);

    // (3)-(5) rank, crossover among the top, mutate the better half of the rest.
    survivors.sort_by(ind_cmp);
    let k = ctx.evo.population;
    let top_n = ctx.evo.top_count().min(survivors.len());
    let bottom: Vec<Individual> = survivors.split_off(top_n);
    let parents = survivors;
    let keep_mut = bottom.len().div_ceil(2);
    let mut next: Vec<Individual> = Vec::with_capacity(k);
    let mut children = Vec::new();
    if parents.len() >= 2 {
        let want = ((ctx.evo.top_frac * parents.len() as f64).ceil() as usize)
            .min(k.saturating_sub(parents.len() + keep_mut));
        for _ in 0..want {
            let pair = sample(&mut state.rng, parents.len(), 2);
            let (i, j) = (pair.index(0).min(pair.index(1)), pair.index(0).max(pair.index(1)));
            let (a, b) = (&parents[i], &parents[j]);
            let mask = crossover_mask(&a.genome, &b.genome, &mut state.rng)?;
            let genome = apply_mask(&a.genome, &b.genome, &mask);
            let id = state.new_id();
            let seed = individual_seed(ctx.evo.master_seed, id);
            let mut weights = a.weights.clone();
            for (slot, &from_b) in mask.iter().enumerate() {
                if from_b && a.genome.slots[slot] != b.genome.slots[slot] {
                    weights.slots[slot] = b.weights.slots[slot].clone();
                }
            }
            children.push(Individual {
                id,
                genome,
                seed,
                weights,
                history: Vec::new(),
                status: Status::Active,
                age: 0,
                provenance: Provenance::Crossover(a.id, b.id),
            });
        }
    }
    let mut mutants = Vec::new();
    for parent in bottom.into_iter().take(keep_mut) {
        let mut genome = mutate(&parent.genome, ctx.space, &mut state.rng);
        let mut tries = 0;
        while ctx.spec.validate_genome(&genome, ctx.space).is_err() {
            tries += 1;
            if tries > 1000 {
                genome = parent.genome.clone();
                break;
            }
            genome = mutate(&parent.genome, ctx.space, &mut state.rng);
        }
        let id = state.new_id();
        let seed = individual_seed(ctx.evo.master_seed, id);
        let mut weights = parent.weights;
        for slot in 0..genome.len() {
            if genome.slots[slot] != parent.genome.slots[slot] {
                weights.reinit_slot(ctx.spec, ctx.space, &genome, slot, seed)?;
            }
        }
        mutants.push(Individual {
            id,
            genome,
            seed,
            weights,
            history: Vec::new(),
            status: Status::Active,
            age: 0,
            provenance: Provenance::Mutate(parent.id),
        });
    }
    next.extend(parents);
    next.extend(children);
    next.extend(mutants);

    // (7) refill
    let all_gone = next.is_empty();
    let refilled = k - next.len();
    while next.len() < k {
        let g = sample_valid_genome(ctx.space, ctx.spec, &mut state.rng)?;
        let id = state.new_id();
        next.push(fresh_individual(ctx, id, g, Provenance::Refill)?);
    }
    state.population = next;
    state.generation += 1;

    let best = state.best_snapshot().map(|s| s.report.total);
    state.curve.push(CurvePoint {
        gen,
        epochs_used: state.epochs_used,
        best_total: best,
        snapshot: state.snapshots.len().checked_sub(1),
    });
    log.push(&Event::Generation {
        gen,
        population: k,
        archived,
        dropped,
        refilled,
        archive_size: state.archive.len(),
        epochs_used: state.epochs_used,
        best_total: best,
        archive_best_total: state.archive_best_total(),
        note: all_gone.then(|| "population empty after early stop; refilled at random".to_string()),
    })?;
    Ok(())
}

/// How far a call to [`run`] should go and where it persists state.
#[derive(Debug, Clone, Default)]
pub struct RunControl<'a> {
    pub checkpoint: Option<&'a Path>,
    /// Stop after this many generations in total (simulated interruption).
    pub stop_after: Option<usize>,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: EvoState,
    /// False when the run stopped early because of `stop_after`.
    pub finished: bool,
}

impl RunOutcome {
    /// Best archived genome, or the best individual ever scored when the
    /// archive is empty.
    pub fn best(&self) -> Option<(AttentionGenome, PeReport, bool)> {
        if let Some(ind) = self.state.archive.first() {
            return Some((ind.genome.clone(), ind.latest()?.clone(), true));
        }
        self.state
            .best_snapshot()
            .map(|s| (s.genome.clone(), s.report.clone(), false))
    }
}

pub fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))
}

/// Runs (or continues) the search until `T` generations are done.
pub fn run(ctx: &SearchContext, state: Option<EvoState>, log: &mut RunLog, control: &RunControl) -> Result<RunOutcome> {
    let mut state = match state {
        Some(s) => s,
        None => {
            let s = EvoState::new(ctx)?;
            log.push(&Event::header(ctx, "evolution"))?;
            s
        }
    };
    let pool = build_pool(control.workers)?;
    let total = ctx.evo.generations;
    let stop = control.stop_after.unwrap_or(total).min(total);
    while state.generation < stop {
        generation_step(&mut state, ctx, &pool, log)?;
        log.flush()?;
        if let Some(path) = control.checkpoint {
            checkpoint::save(path, &state, ctx, log)?;
        }
    }
    Ok(RunOutcome {
        finished: state.generation >= total,
        state,
    })
}

/// Continues an interrupted run from its checkpoint and log file.
pub fn resume(ctx: &SearchContext, checkpoint_path: &Path, log_path: &Path, control: &RunControl) -> Result<(RunOutcome, RunLog)> {
    let (state, log_len) = checkpoint::load(checkpoint_path, ctx)?;
    let mut log = RunLog::reopen(log_path, log_len)?;
    let out = run(ctx, Some(state), &mut log, control)?;
    Ok((out, log))
}
