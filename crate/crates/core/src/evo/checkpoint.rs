//! Resumable snapshot of an evolutionary run.
//!
//! Layout: magic `EVOC`, version `u16`, then length-prefixed (`u32`) sections:
//! JSON metadata, coordinator RNG state, and one weight blob per population
//! member, archive member and best-so-far snapshot, in that order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CurvePoint, EvoState, HistoryEntry, Individual, Provenance, SearchContext, Snapshot, Status};
use crate::backbone::NetworkWeights;
use crate::error::{Error, Result};
use crate::estimator::PeReport;
use crate::rng::{load_state, save_state};

pub const MAGIC: [u8; 4] = *b"EVOC";
pub const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct IndMeta {
    id: u64,
    genome: Vec<u32>,
    seed: u64,
    history: Vec<HistoryEntry>,
    status: Status,
    age: usize,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct SnapMeta {
    gen: usize,
    id: u64,
    genome: Vec<u32>,
    report: PeReport,
    attention_params: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config_digest: String,
    generation: usize,
    next_id: u64,
    epochs_used: u64,
    log_bytes: u64,
    population: Vec<IndMeta>,
    archive: Vec<IndMeta>,
    snapshots: Vec<SnapMeta>,
    curve: Vec<CurvePoint>,
}

fn ind_meta(ind: &Individual, ctx: &SearchContext) -> IndMeta {
    IndMeta {
        id: ind.id,
        genome: ctx.space.encode(&ind.genome),
        seed: ind.seed,
        history: ind.history.clone(),
        status: ind.status,
        age: ind.age,
        provenance: ind.provenance,
    }
}

fn push_section(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

pub fn encode(state: &EvoState, ctx: &SearchContext, log_bytes: u64) -> Result<Vec<u8>> {
    let meta = Meta {
        config_digest: ctx.digest.to_string(),
        generation: state.generation,
        next_id: state.next_id,
        epochs_used: state.epochs_used,
        log_bytes,
        population: state.population.iter().map(|i| ind_meta(i, ctx)).collect(),
        archive: state.archive.iter().map(|i| ind_meta(i, ctx)).collect(),
        snapshots: state
            .snapshots
            .iter()
            .map(|s| SnapMeta {
                gen: s.gen,
                id: s.id,
                genome: ctx.space.encode(&s.genome),
                report: s.report.clone(),
                attention_params: s.attention_params,
            })
            .collect(),
        curve: state.curve.clone(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_section(&mut out, &serde_json::to_vec(&meta).map_err(|e| Error::Format(e.to_string()))?);
    push_section(&mut out, &save_state(&state.rng));
    let weights = state
        .population
        .iter()
        .chain(&state.archive)
        .map(|i| &i.weights)
        .chain(state.snapshots.iter().map(|s| &s.weights));
    for w in weights {
        push_section(&mut out, &w.to_blob());
    }
    Ok(out)
}

struct Sections<'a> {
    rest: &'a [u8],
}

impl<'a> Sections<'a> {
    fn next(&mut self) -> Result<&'a [u8]> {
        let short = || Error::Format("checkpoint truncated".into());
        let len_bytes = self.rest.get(..4).ok_or_else(short)?;
        let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let body = self.rest.get(4..4 + len).ok_or_else(short)?;
        self.rest = &self.rest[4 + len..];
        Ok(body)
    }
}

/// Decodes a checkpoint written for the same configuration. Returns the
/// state and the run-log length at the time it was written.
pub fn decode(bytes: &[u8], ctx: &SearchContext) -> Result<(EvoState, u64)> {
    if bytes.len() < 6 || bytes[..4] != MAGIC {
        return Err(Error::Format("not an EVOC checkpoint".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut sec = Sections { rest: &bytes[6..] };
    let meta: Meta = serde_json::from_slice(sec.next()?).map_err(|e| Error::Format(e.to_string()))?;
    if meta.config_digest != ctx.digest {
        return Err(Error::Config(format!(
            "checkpoint was written for config {}, current config is {}",
            meta.config_digest, ctx.digest
        )));
    }
    let rng = load_state(sec.next()?)?;
    let mut restore = |m: IndMeta| -> Result<Individual> {
        let genome = ctx.space.decode(&m.genome)?;
        let weights = NetworkWeights::from_blob(sec.next()?, ctx.spec, ctx.space, &genome)?;
        Ok(Individual {
            id: m.id,
            genome,
            seed: m.seed,
            weights,
            history: m.history,
            status: m.status,
            age: m.age,
            provenance: m.provenance,
        })
    };
    let population = meta.population.into_iter().map(&mut restore).collect::<Result<Vec<_>>>()?;
    let archive = meta.archive.into_iter().map(&mut restore).collect::<Result<Vec<_>>>()?;
    let snapshots = meta
        .snapshots
        .into_iter()
        .map(|m| {
            let genome = ctx.space.decode(&m.genome)?;
            let weights = NetworkWeights::from_blob(sec.next()?, ctx.spec, ctx.space, &genome)?;
            Ok(Snapshot {
                gen: m.gen,
                id: m.id,
                genome,
                report: m.report,
                attention_params: m.attention_params,
                weights,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if !sec.rest.is_empty() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok((
        EvoState {
            generation: meta.generation,
            population,
            archive,
            rng,
            next_id: meta.next_id,
            epochs_used: meta.epochs_used,
            snapshots,
            curve: meta.curve,
        },
        meta.log_bytes,
    ))
}

/// Writes atomically: temp file in the same directory, then rename.
pub fn save(path: &Path, state: &EvoState, ctx: &SearchContext, log: &super::RunLog) -> Result<()> {
    let bytes = encode(state, ctx, log.byte_len())?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path, ctx: &SearchContext) -> Result<(EvoState, u64)> {
    decode(&fs::read(path)?, ctx)
}
