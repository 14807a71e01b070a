//! Report emission: versioned CSV tables, SVG charts and the text summary
//! of a run log.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::backbone::{BackboneSpec, NetworkWeights};
use crate::error::{Error, Result};
use crate::evo::{Event, RetrainReport};
use crate::space::{format_codes, SpaceParams};
use crate::studies::{HistogramReport, StudyReport, StudyRow};

pub const CSV_VERSION: u32 = 1;

/// First line of every CSV file: `# schema=evoada.<kind> version=1 config_digest=<hex>`.
pub fn csv_preamble(kind: &str, digest: &str) -> String {
    format!("# schema=evoada.{kind} version={CSV_VERSION} config_digest={digest}\n")
}

/// Checks the preamble of a CSV written by this crate and returns the rows
/// after the column header.
pub fn read_csv<'a>(text: &'a str, kind: &str) -> Result<(Vec<&'a str>, Vec<Vec<&'a str>>)> {
    let mut lines = text.lines();
    let pre = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?;
    let mut fields = BTreeMap::new();
    for part in pre.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = part.split_once('=') {
            fields.insert(k, v);
        }
    }
    let schema = format!("evoada.{kind}");
    if fields.get("schema") != Some(&schema.as_str()) {
        return Err(Error::Format(format!("expected schema {schema}, got {pre:?}")));
    }
    if fields.get("version") != Some(&CSV_VERSION.to_string().as_str()) {
        return Err(Error::Format(format!("unsupported CSV version in {pre:?}")));
    }
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("CSV has no header".into()))?
        .split(',')
        .collect();
    let rows = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').collect()).collect();
    Ok((header, rows))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn genome_cell(codes: &[u32]) -> String {
    format_codes(codes).replace(',', " ")
}

fn study_rows(out: &mut String, rows: &[StudyRow]) {
    out.push_str("genome,source_acc,l_ent,l_div,l_pse,total,target_acc,diverged\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            genome_cell(&r.genome),
            r.source_acc,
            r.l_ent,
            r.l_div,
            r.l_pse,
            r.total,
            r.target_acc,
            r.diverged
        );
    }
}

pub fn study_csv(report: &StudyReport, digest: &str) -> String {
    let mut out = csv_preamble("rank_correlation", digest);
    study_rows(&mut out, &report.rows);
    out
}

pub fn histogram_csv(report: &HistogramReport, digest: &str) -> String {
    let mut out = csv_preamble("histogram", digest);
    out.push_str("genome,target_acc\n");
    for r in &report.rows {
        let _ = writeln!(out, "{},{}", genome_cell(&r.genome), r.target_acc);
    }
    out
}

/// One row of a best-so-far curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    pub epochs_used: u64,
    pub best_total: Option<f64>,
    pub best_target_acc: Option<f64>,
}

pub fn curve_csv(kind: &str, rows: &[CurveRow], digest: &str) -> String {
    let mut out = csv_preamble(kind, digest);
    out.push_str("step,epochs_used,best_total,best_target_acc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.step,
            r.epochs_used,
            fmt_opt(r.best_total),
            fmt_opt(r.best_target_acc)
        );
    }
    out
}

pub fn retrain_text(r: &RetrainReport, digest: &str) -> String {
    let mut out = format!("config_digest: {digest}\ngenome: {}\nepochs: {}\n", format_codes(&r.genome), r.epochs);
    for s in &r.per_seed {
        match s.target_acc {
            Some(a) => {
                let _ = writeln!(out, "seed {}: target_acc {a:.4}", s.seed);
            }
            None => {
                let _ = writeln!(out, "seed {}: diverged (excluded)", s.seed);
            }
        }
    }
    let _ = writeln!(out, "target_acc mean ± sd: {:.4} ± {:.4}", r.mean, r.sd);
    if r.diverged > 0 {
        let _ = writeln!(out, "warning: {} seed(s) diverged", r.diverged);
    }
    out
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn svg_open(title: &str, digest: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <!-- config_digest={digest} -->\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let m = 0.05 * (hi - lo);
    (lo - m, hi + m)
}

fn axes(out: &mut String, x: (f64, f64), y: (f64, f64), xlabel: &str, ylabel: &str) {
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD);
    let _ = writeln!(
        out,
        "<path d=\"M{x0} {y1} L{x0} {y0} L{x1} {y0}\" stroke=\"black\" fill=\"none\"/>"
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x.0 + f * (x.1 - x.0), y.0 + f * (y.1 - y.0));
        let px = x0 + f * (x1 - x0);
        let py = y0 - f * (y0 - y1);
        let _ = writeln!(
            out,
            "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            y0 + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            x0 - 6.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        "<text transform=\"translate(14 {:.1}) rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn project(v: f64, r: (f64, f64), p0: f64, p1: f64) -> f64 {
    p0 + (v - r.0) / (r.1 - r.0) * (p1 - p0)
}

/// Step-free polyline chart, one polyline per named series.
pub fn line_chart_svg(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, Vec<(f64, f64)>)], digest: &str) -> String {
    let mut out = svg_open(title, digest);
    let xr = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let yr = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    axes(&mut out, xr, yr, xlabel, ylabel);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    project(x, xr, PAD, W - PAD / 2.0),
                    project(y, yr, H - PAD, PAD)
                )
            })
            .collect();
        let _ = writeln!(
            out,
            "<polyline class=\"series\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            path.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            W - PAD * 3.0,
            PAD + 16.0 * i as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram of `values` with a dashed vertical line at `baseline`.
pub fn histogram_svg(title: &str, xlabel: &str, values: &[f64], baseline: f64, bins: usize, digest: &str) -> String {
    let mut out = svg_open(title, digest);
    let bins = bins.max(1);
    let xr = bounds(values.iter().copied().chain(std::iter::once(baseline)));
    let width = (xr.1 - xr.0) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - xr.0) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    axes(&mut out, xr, (0.0, top), xlabel, "count");
    for (i, &c) in counts.iter().enumerate() {
        let x0 = project(xr.0 + i as f64 * width, xr, PAD, W - PAD / 2.0);
        let x1 = project(xr.0 + (i + 1) as f64 * width, xr, PAD, W - PAD / 2.0);
        let y = project(c as f64, (0.0, top), H - PAD, PAD);
        let _ = writeln!(
            out,
            "<rect class=\"bar\" x=\"{x0:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#9ecae1\" stroke=\"#3182bd\"/>",
            (x1 - x0).max(0.0),
            (H - PAD - y).max(0.0)
        );
    }
    let bx = project(baseline, xr, PAD, W - PAD / 2.0);
    let _ = writeln!(
        out,
        "<line class=\"baseline\" x1=\"{bx:.2}\" y1=\"{}\" x2=\"{bx:.2}\" y2=\"{}\" stroke=\"black\" stroke-dasharray=\"6 4\" stroke-width=\"1.5\"/>",
        H - PAD,
        PAD
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">all-Identity {baseline:.3}</text>",
        bx + 4.0,
        PAD + 12.0
    );
    out.push_str("</svg>\n");
    out
}

/// Counts and extremes recomputed from a run log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSummary {
    pub search: Option<String>,
    pub config_digest: Option<String>,
    pub method: Option<String>,
    pub generations: usize,
    pub evaluations: usize,
    /// `(total, id, genome)` sorted ascending, distinct ids.
    pub best: Vec<(f64, u64, Vec<u32>)>,
    pub status_counts: BTreeMap<String, usize>,
    pub epochs_used: u64,
    /// Best total per generation (evolution) or per candidate (random).
    pub curve: Vec<(usize, f64)>,
}

pub fn summarize(events: &[Event]) -> LogSummary {
    let mut s = LogSummary {
        search: None,
        config_digest: None,
        method: None,
        generations: 0,
        evaluations: 0,
        best: Vec::new(),
        status_counts: BTreeMap::new(),
        epochs_used: 0,
        curve: Vec::new(),
    };
    let mut best_by_id: BTreeMap<u64, (f64, Vec<u32>)> = BTreeMap::new();
    let mut running = f64::INFINITY;
    for ev in events {
        match ev {
            Event::Header {
                search,
                config_digest,
                method,
                ..
            } => {
                s.search = Some(search.clone());
                s.config_digest = Some(config_digest.clone());
                s.method = Some(method.clone());
            }
            Event::Eval {
                gen,
                id,
                genome,
                total,
                status,
                epochs_used,
                ..
            } => {
                s.evaluations += 1;
                *s.status_counts.entry(status.to_string()).or_default() += 1;
                if let Some(t) = total {
                    let e = best_by_id.entry(*id).or_insert((*t, genome.clone()));
                    if *t < e.0 {
                        *e = (*t, genome.clone());
                    }
                    running = running.min(*t);
                }
                if let Some(e) = epochs_used {
                    s.epochs_used = *e;
                    if running.is_finite() {
                        s.curve.push((*gen, running));
                    }
                }
            }
            Event::Generation {
                gen,
                epochs_used,
                best_total,
                ..
            } => {
                s.generations += 1;
                s.epochs_used = *epochs_used;
                if let Some(b) = best_total {
                    s.curve.push((*gen, *b));
                }
            }
        }
    }
    let mut best: Vec<(f64, u64, Vec<u32>)> = best_by_id.into_iter().map(|(id, (t, g))| (t, id, g)).collect();
    best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    s.best = best;
    s
}

/// Human-readable summary with cost deltas against the all-Identity backbone.
pub fn render_summary(s: &LogSummary, spec: &BackboneSpec, space: &SpaceParams, top: usize) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "search: {}", s.search.as_deref().unwrap_or("unknown"));
    let _ = writeln!(out, "config_digest: {}", s.config_digest.as_deref().unwrap_or("unknown"));
    let _ = writeln!(out, "method: {}", s.method.as_deref().unwrap_or("unknown"));
    let _ = writeln!(out, "{} generations", s.generations);
    let _ = writeln!(out, "{} evaluations, {} training epochs", s.evaluations, s.epochs_used);
    match s.best.first() {
        Some((t, id, _)) => {
            let _ = writeln!(out, "best L_PE: {t} (id {id})");
        }
        None => {
            let _ = writeln!(out, "best L_PE: none");
        }
    }
    if !s.best.is_empty() {
        let base_params = spec.backbone_param_count();
        let _ = writeln!(out, "\nbest genomes (params and MACs relative to the all-Identity backbone):");
        let _ = writeln!(out, "  {:>12} {:>6} {:>16} {:>10} {:>12}", "L_PE", "id", "genome", "Δparams", "ΔMACs");
        for (t, id, codes) in s.best.iter().take(top) {
            let g = space.decode(codes)?;
            let w = NetworkWeights::<f32>::build(spec, space, &g, 0, 0)?;
            let _ = writeln!(
                out,
                "  {:>12.6} {:>6} {:>16} {:>+10} {:>+12}",
                t,
                id,
                format_codes(codes),
                w.param_count() as i64 - base_params as i64,
                spec.attention_macs(&g, space)
            );
        }
    }
    let _ = writeln!(out, "\nfinal status counts:");
    if s.status_counts.is_empty() {
        let _ = writeln!(out, "  none");
    }
    for (k, v) in &s.status_counts {
        let _ = writeln!(out, "  {k}: {v}");
    }
    Ok(out)
}
