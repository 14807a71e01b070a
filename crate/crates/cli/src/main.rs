use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use evoada::config::RunConfig;
use evoada::data::{generate, DatasetPair};
use evoada::estimator::{oracle_target_accuracy, PeWeights};
use evoada::evo::{self, random_search, runlog, CurvePoint, RunControl, RunLog, SearchContext, Snapshot};
use evoada::report::{self, CurveRow};
use evoada::space::{format_codes, parse_codes, AttentionGenome};
use evoada::studies::{self, StudySetup};
use evoada::Error;

const CHECKPOINT: &str = "checkpoint.evoc";
const RUNLOG: &str = "runlog.jsonl";
const CONFIG: &str = "config.toml";

#[derive(Parser)]
#[command(name = "evoada", version, about = "Evolutionary search over per-layer attention for domain adaptation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    config: PathBuf,
    /// Output directory; defaults to `output.dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Config override, `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evolutionary search.
    Search {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Random search under the same training-epoch budget.
    RandomSearch {
        #[command(flatten)]
        common: Common,
    },
    /// Target accuracy of random genomes against the all-Identity backbone.
    Histogram {
        #[command(flatten)]
        common: Common,
        /// Number of genomes; defaults to `study.histogram_genomes`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Rank correlation of the score and of source accuracy with target accuracy.
    RankCorrelation {
        #[command(flatten)]
        common: Common,
        /// Number of genomes; defaults to `study.rank_genomes`.
        #[arg(long)]
        n: Option<usize>,
        /// Evaluate N copies of this genome instead of sampling.
        #[arg(long)]
        genome: Option<String>,
    },
    /// Retrain one genome from scratch over the configured seeds.
    Retrain {
        #[command(flatten)]
        common: Common,
        /// Comma-separated slot codes.
        #[arg(long)]
        genome: String,
        /// Seeds; defaults to `retrain.seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Summarize a finished run directory.
    Report {
        run_dir: PathBuf,
    },
}

/// An error with its exit code: 1 for configuration and input files, 2 for
/// failures while running.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidGenome(_) | Error::GeneOutOfRange { .. } | Error::GenomeLength { .. } => 1,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

fn runtime_err(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Cmd) -> Res<()> {
    match cmd {
        Cmd::Search { common, resume } => cmd_search(&common, resume),
        Cmd::RandomSearch { common } => cmd_random_search(&common),
        Cmd::Histogram { common, n } => cmd_histogram(&common, n),
        Cmd::RankCorrelation { common, n, genome } => cmd_rank_correlation(&common, n, genome.as_deref()),
        Cmd::Retrain { common, genome, seeds } => cmd_retrain(&common, &genome, seeds),
        Cmd::Report { run_dir } => cmd_report(&run_dir),
    }
}

struct Setup {
    cfg: RunConfig,
    digest: String,
    data: DatasetPair,
    out: PathBuf,
    workers: usize,
}

fn load(c: &Common) -> Res<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    cfg.apply_overrides(&c.overrides)?;
    if c.workers == 0 {
        return Err(config_err("--workers must be ≥ 1"));
    }
    Ok(cfg)
}

fn setup(c: &Common) -> Res<Setup> {
    prepare(c, load(c)?)
}

/// Creates the output directory and records the resolved config there.
fn prepare(c: &Common, cfg: RunConfig) -> Res<Setup> {
    let out = c.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&out).map_err(|e| runtime_err(format!("{}: {e}", out.display())))?;
    let data = generate(&cfg.dataset)?;
    let digest = cfg.digest();
    write(&out.join(CONFIG), &format!("# config_digest = \"{digest}\"\n{}", cfg.to_toml()))?;
    Ok(Setup {
        cfg,
        digest,
        data,
        out,
        workers: c.workers,
    })
}

fn write(path: &Path, text: &str) -> Res<()> {
    fs::write(path, text).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

fn ctx(s: &Setup) -> SearchContext<'_> {
    SearchContext {
        spec: &s.cfg.backbone,
        space: &s.cfg.space,
        da: &s.cfg.training,
        evo: &s.cfg.search,
        data: &s.data,
        digest: &s.digest,
    }
}

/// Hidden target labels must not have been touched before anything is reported.
fn audit(data: &DatasetPair) -> Res<()> {
    match data.hidden.reads() {
        0 => Ok(()),
        n => Err(runtime_err(format!("hidden target labels were read {n} times during search"))),
    }
}

/// Curve rows with the oracle accuracy of each best-so-far snapshot.
fn curve_rows(s: &Setup, curve: &[CurvePoint], snaps: &[Snapshot]) -> Res<Vec<CurveRow>> {
    let mut acc = Vec::with_capacity(snaps.len());
    for snap in snaps {
        acc.push(oracle_target_accuracy(&snap.weights, &s.cfg.backbone, &s.data)?);
    }
    Ok(curve
        .iter()
        .map(|p| CurveRow {
            step: p.gen,
            epochs_used: p.epochs_used,
            best_total: p.best_total,
            best_target_acc: p.snapshot.map(|i| acc[i]),
        })
        .collect())
}

fn write_curve(s: &Setup, kind: &str, rows: &[CurveRow], xlabel: &str) -> Res<()> {
    write(&s.out.join(format!("{kind}.csv")), &report::curve_csv(kind, rows, &s.digest))?;
    let pe: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.epochs_used as f64, r.best_total?))).collect();
    let acc: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.epochs_used as f64, r.best_target_acc?)))
        .collect();
    write(
        &s.out.join(format!("{kind}_score.svg")),
        &report::line_chart_svg("best L_PE so far", xlabel, "L_PE", &[("best L_PE", pe)], &s.digest),
    )?;
    write(
        &s.out.join(format!("{kind}_accuracy.svg")),
        &report::line_chart_svg(
            "oracle target accuracy of the best-so-far genome",
            xlabel,
            "target accuracy",
            &[("target accuracy", acc)],
            &s.digest,
        ),
    )
}

fn best_json(s: &Setup, genome: &AttentionGenome, report: &evoada::estimator::PeReport, archived: bool, target_acc: f64) -> String {
    let codes = s.cfg.space.encode(genome);
    let v = json!({
        "config_digest": s.digest,
        "genome": codes,
        "genome_text": format_codes(&codes),
        "archived": archived,
        "report": report,
        "attention_params": evoada::backbone::NetworkWeights::<f32>::build(&s.cfg.backbone, &s.cfg.space, genome, 0, 0)
            .map(|w| w.attention_param_count())
            .unwrap_or(0),
        "attention_macs": s.cfg.backbone.attention_macs(genome, &s.cfg.space),
        "oracle_target_acc": target_acc,
    });
    serde_json::to_string_pretty(&v).expect("json") + "\n"
}

fn cmd_search(c: &Common, resume: bool) -> Res<()> {
    let s = setup(c)?;
    let ctx = ctx(&s);
    let ckpt = s.out.join(CHECKPOINT);
    let log_path = s.out.join(RUNLOG);
    let control = RunControl {
        checkpoint: Some(&ckpt),
        stop_after: None,
        workers: s.workers,
    };
    let (outcome, mut log) = if resume {
        if !ckpt.exists() {
            return Err(config_err(format!("{}: no checkpoint to resume from", ckpt.display())));
        }
        evo::resume(&ctx, &ckpt, &log_path, &control)?
    } else {
        let mut log = RunLog::create(&log_path)?;
        let out = evo::run(&ctx, None, &mut log, &control)?;
        (out, log)
    };
    log.flush()?;
    audit(&s.data)?;
    let (genome, pe, archived) = outcome
        .best()
        .ok_or_else(|| runtime_err("no individual produced a finite score"))?;
    let snaps = &outcome.state.snapshots;
    let rows = curve_rows(&s, &outcome.state.curve, snaps)?;
    let best_acc = match outcome.state.archive.first() {
        Some(ind) if archived => oracle_target_accuracy(&ind.weights, &s.cfg.backbone, &s.data)?,
        _ => rows.last().and_then(|r| r.best_target_acc).unwrap_or(f64::NAN),
    };
    write(&s.out.join("best_genome.json"), &best_json(&s, &genome, &pe, archived, best_acc))?;
    write_curve(&s, "search_curve", &rows, "training epochs")?;
    println!(
        "best genome {} (L_PE {:.6}, oracle target acc {:.4}); outputs in {}",
        format_codes(&s.cfg.space.encode(&genome)),
        pe.total,
        best_acc,
        s.out.display()
    );
    Ok(())
}

fn cmd_random_search(c: &Common) -> Res<()> {
    let s = setup(c)?;
    let ctx = ctx(&s);
    let mut log = RunLog::create(&s.out.join("random_runlog.jsonl"))?;
    let out = random_search(
        &ctx,
        s.cfg.search_budget(),
        s.cfg.random_search.epochs_per_candidate,
        s.workers,
        &mut log,
    )?;
    log.flush()?;
    audit(&s.data)?;
    let rows = curve_rows(&s, &out.curve, &out.snapshots)?;
    let best = out.best().ok_or_else(|| runtime_err("no candidate produced a finite score"))?;
    let acc = rows.last().and_then(|r| r.best_target_acc).unwrap_or(f64::NAN);
    write(&s.out.join("random_best_genome.json"), &best_json(&s, &best.genome, &best.report, false, acc))?;
    write_curve(&s, "random_curve", &rows, "training epochs")?;
    println!(
        "{} candidates, {} epochs; best genome {} (L_PE {:.6}, oracle target acc {acc:.4})",
        out.candidates,
        out.epochs_used,
        format_codes(&s.cfg.space.encode(&best.genome)),
        best.report.total
    );
    Ok(())
}

fn study_setup<'a>(s: &'a Setup, pe: &'a PeWeights) -> StudySetup<'a> {
    StudySetup {
        spec: &s.cfg.backbone,
        space: &s.cfg.space,
        da: &s.cfg.training,
        data: &s.data,
        pe_weights: pe,
        epochs: s.cfg.study.epochs,
        seed: s.cfg.study.seed,
        workers: s.workers,
    }
}

fn cmd_histogram(c: &Common, n: Option<usize>) -> Res<()> {
    let s = setup(c)?;
    let n = n.unwrap_or(s.cfg.study.histogram_genomes);
    let genomes = studies::sample_genomes(&s.cfg.space, &s.cfg.backbone, n, s.cfg.study.seed)?;
    let r = studies::histogram(&genomes, &study_setup(&s, &s.cfg.search.pe_weights))?;
    write(&s.out.join("histogram.csv"), &report::histogram_csv(&r, &s.digest))?;
    let accs: Vec<f64> = r.rows.iter().filter(|r| !r.diverged).map(|r| r.target_acc).collect();
    write(
        &s.out.join("histogram.svg"),
        &report::histogram_svg(
            "target accuracy of random attention configurations",
            "target accuracy",
            &accs,
            r.baseline,
            12,
            &s.digest,
        ),
    )?;
    println!(
        "{} genomes: target accuracy {:.4}..{:.4}, all-Identity {:.4}",
        r.rows.len(),
        r.min,
        r.max,
        r.baseline
    );
    Ok(())
}

/// Decodes and validates `--genome` before anything is written.
fn genome_arg(cfg: &RunConfig, text: &str) -> Res<AttentionGenome> {
    let codes = parse_codes(text).map_err(|e| config_err(format!("--genome: {e}")))?;
    let g = cfg.space.decode(&codes)?;
    cfg.backbone.validate_genome(&g, &cfg.space).map_err(Error::InvalidGenome)?;
    Ok(g)
}

fn cmd_rank_correlation(c: &Common, n: Option<usize>, genome: Option<&str>) -> Res<()> {
    let cfg = load(c)?;
    let fixed = genome.map(|text| genome_arg(&cfg, text)).transpose()?;
    let s = prepare(c, cfg)?;
    let n = n.unwrap_or(s.cfg.study.rank_genomes);
    let genomes = match fixed {
        Some(g) => vec![g; n],
        None => studies::sample_genomes(&s.cfg.space, &s.cfg.backbone, n, s.cfg.study.seed)?,
    };
    let r = studies::rank_correlation_study(&genomes, &study_setup(&s, &s.cfg.search.pe_weights))?;
    write(&s.out.join("rank_correlation.csv"), &report::study_csv(&r, &s.digest))?;
    write(
        &s.out.join("rank_correlation.txt"),
        &format!("config_digest: {}\n{}\n", s.digest, r.summary),
    )?;
    println!("{}", r.summary);
    Ok(())
}

fn cmd_retrain(c: &Common, genome: &str, seeds: Vec<u64>) -> Res<()> {
    let cfg = load(c)?;
    let g = genome_arg(&cfg, genome)?;
    let s = prepare(c, cfg)?;
    let seeds = if seeds.is_empty() { s.cfg.retrain.seeds.clone() } else { seeds };
    let r = evo::retrain(
        &g,
        &s.cfg.backbone,
        &s.cfg.space,
        &s.cfg.training,
        &s.data,
        s.cfg.retrain.epochs,
        &seeds,
        s.workers,
    )?;
    let text = report::retrain_text(&r, &s.digest);
    write(&s.out.join("retrain.txt"), &text)?;
    let v = json!({ "config_digest": s.digest, "retrain": r });
    write(&s.out.join("retrain.json"), &(serde_json::to_string_pretty(&v).expect("json") + "\n"))?;
    print!("{text}");
    Ok(())
}

fn read_file(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn cmd_report(dir: &Path) -> Res<()> {
    let cfg_path = dir.join(CONFIG);
    let cfg = RunConfig::parse(&read_file(&cfg_path)?).map_err(|e| config_err(format!("{}: {e}", cfg_path.display())))?;
    let mut logs = Vec::new();
    for name in [RUNLOG, "random_runlog.jsonl"] {
        let p = dir.join(name);
        if p.exists() {
            let events = runlog::parse(&read_file(&p)?).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            logs.push((name, events));
        }
    }
    if logs.is_empty() {
        return Err(config_err(format!("{}: missing run log", dir.join(RUNLOG).display())));
    }
    let digest = cfg.digest();
    let mut text = String::new();
    let mut series = Vec::new();
    for (name, events) in &logs {
        let sum = report::summarize(events);
        text.push_str(&format!("== {name}\n"));
        text.push_str(&report::render_summary(&sum, &cfg.backbone, &cfg.space, 5)?);
        text.push('\n');
        let label = sum.search.clone().unwrap_or_else(|| name.to_string());
        series.push((label, sum.curve.iter().map(|&(g, t)| (g as f64, t)).collect::<Vec<_>>()));
    }
    let refs: Vec<(&str, Vec<(f64, f64)>)> = series.iter().map(|(l, p)| (l.as_str(), p.clone())).collect();
    write(&dir.join("summary.txt"), &text)?;
    write(
        &dir.join("summary_curve.svg"),
        &report::line_chart_svg("best L_PE so far", "generation or candidate", "L_PE", &refs, &digest),
    )?;
    print!("{text}");
    Ok(())
}
