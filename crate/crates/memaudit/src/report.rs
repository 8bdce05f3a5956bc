//! Report tables, bin analyses, cross-run scatters and static SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use memaudit_core::attacks::AttackId;
use memaudit_core::memorization::{bin_consistency, scatter_memorization, BinReport};
use memaudit_core::metrics::{pearson_r, spearman_rho};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::manifest::Outputs;
use crate::pipeline::{
    read_json, scores_file, write_json, FleetSummary, MeanStd, MetricsFile, Run, MEM_CSV, MEM_SUMMARY,
    METRICS_FILE,
};

/// Per-bin TPR averaged over targets; bins empty for every target stay `None`.
pub fn mean_bin_tpr(reports: &[BinReport]) -> Vec<Option<f64>> {
    let n_bins = reports.first().map_or(0, |r| r.tpr.len());
    (0..n_bins)
        .map(|b| {
            let vals: Vec<f64> = reports.iter().filter_map(|r| r.tpr[b]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Spearman correlation between bin index and TPR over non-empty bins.
pub fn bin_trend(tpr: &[Option<f64>]) -> Option<f64> {
    let (idx, vals): (Vec<f64>, Vec<f64>) = tpr
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|t| (i as f64, t)))
        .unzip();
    spearman_rho(&idx, &vals).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetBins {
    pub target: usize,
    pub threshold: f64,
    pub tpr: Vec<Option<f64>>,
    pub feature_mean: Vec<Option<f64>>,
    pub feature_std: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinsFile {
    pub attack: String,
    pub threshold_rule: String,
    pub edges: Vec<f64>,
    pub count: Vec<usize>,
    /// Means over targets.
    pub tpr: Vec<Option<f64>>,
    pub feature_mean: Vec<Option<f64>>,
    pub feature_std: Vec<Option<f64>>,
    pub trend_spearman: Option<f64>,
    pub per_target: Vec<TargetBins>,
}

fn mean_opt(cols: &[&Vec<Option<f64>>], b: usize) -> Option<f64> {
    let vals: Vec<f64> = cols.iter().filter_map(|c| c[b]).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub run: String,
    pub enhancement: String,
    pub epsilon: Option<f64>,
    pub attack: String,
    pub n_targets: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub gap: f64,
    pub mean_memorization: f64,
    #[serde(rename = "tpr_at_1e-2")]
    pub tpr_at_1e_2: MeanStd,
    #[serde(rename = "tpr_at_1e-3")]
    pub tpr_at_1e_3: MeanStd,
    #[serde(rename = "tpr_at_1e-5")]
    pub tpr_at_1e_5: MeanStd,
    pub log_auc: MeanStd,
    pub balanced_acc: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub run: String,
    pub gap: f64,
    #[serde(rename = "tpr_at_1e-3")]
    pub tpr_at_1e_3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScatter {
    pub attack: String,
    pub points: Vec<GapPoint>,
    pub pearson_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub enhancement: String,
    pub attack: String,
    pub epsilon: Vec<f64>,
    #[serde(rename = "tpr_at_1e-2")]
    pub tpr_at_1e_2: Vec<f64>,
    #[serde(rename = "tpr_at_1e-3")]
    pub tpr_at_1e_3: Vec<f64>,
    pub mean_memorization: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemPair {
    pub sample_id: usize,
    pub this: f64,
    pub other: f64,
}

struct RunData {
    label: String,
    fleet: FleetSummary,
    metrics: MetricsFile,
    mem: Vec<f64>,
}

fn label_of(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn load_run(dir: &Path) -> Result<RunData> {
    let mem_path = dir.join(MEM_CSV);
    if !mem_path.exists() {
        return Err(Error::MissingArtifact { path: mem_path, stage: "mem" });
    }
    let text = std::fs::read_to_string(&mem_path).map_err(|e| Error::io(&mem_path, e))?;
    Ok(RunData {
        label: label_of(dir),
        fleet: read_json(&dir.join(MEM_SUMMARY), "mem")?,
        metrics: read_json(&dir.join(METRICS_FILE), "attack")?,
        mem: parse_mem_csv(&mem_path, &text)?,
    })
}

pub fn parse_mem_csv(path: &Path, text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    if lines.next() != Some("sample_id,mem_score") {
        return Err(Error::format(path, "missing memorization CSV header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (id, v) = line
                .split_once(',')
                .ok_or_else(|| Error::format(path, format!("malformed row {}", i + 2)))?;
            match (id.parse::<usize>(), v.parse::<f64>()) {
                (Ok(id), Ok(v)) if id == i => Ok(v),
                _ => Err(Error::format(path, format!("malformed row {}", i + 2))),
            }
        })
        .collect()
}

fn table_rows(run: &RunData) -> Vec<TableRow> {
    run.metrics
        .summary
        .iter()
        .map(|s| TableRow {
            run: run.label.clone(),
            enhancement: run.fleet.enhancement.clone(),
            epsilon: run.fleet.epsilon,
            attack: s.attack.clone(),
            n_targets: s.n_targets,
            train_acc: run.fleet.train_acc,
            test_acc: run.fleet.test_acc,
            gap: run.fleet.gap,
            mean_memorization: run.fleet.mean_memorization,
            tpr_at_1e_2: s.tpr_at_1e_2,
            tpr_at_1e_3: s.tpr_at_1e_3,
            tpr_at_1e_5: s.tpr_at_1e_5,
            log_auc: s.log_auc,
            balanced_acc: s.balanced_acc,
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from(
        "run,enhancement,epsilon,attack,n_targets,train_acc,test_acc,gap,mean_memorization,\
         tpr_at_1e-2_mean,tpr_at_1e-2_std,tpr_at_1e-3_mean,tpr_at_1e-3_std,tpr_at_1e-5_mean,tpr_at_1e-5_std,\
         log_auc_mean,log_auc_std,balanced_acc_mean,balanced_acc_std\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.run,
            r.enhancement,
            opt(r.epsilon),
            r.attack,
            r.n_targets,
            r.train_acc,
            r.test_acc,
            r.gap,
            r.mean_memorization,
            r.tpr_at_1e_2.mean,
            r.tpr_at_1e_2.std,
            r.tpr_at_1e_3.mean,
            r.tpr_at_1e_3.std,
            r.tpr_at_1e_5.mean,
            r.tpr_at_1e_5.std,
            r.log_auc.mean,
            r.log_auc.std,
            r.balanced_acc.mean,
            r.balanced_acc.std,
        );
    }
    out
}

fn bins_for(run: &Run, attack: AttackId, mem: &[f64], targets: &[usize]) -> Result<BinsFile> {
    let mask = run.load_mask()?;
    let rule = run.cfg.threshold_rule()?;
    let mut reports = Vec::with_capacity(targets.len());
    for &t in targets {
        let path = run.dir.join(scores_file(attack, t));
        let scores = format::read_scores(&path)?;
        if scores.scores.len() != mem.len() {
            return Err(Error::format(path, "score count differs from memorization scores"));
        }
        reports.push(bin_consistency(&scores.scores, mem, mask.row(t), run.cfg.report.bins, rule)?);
    }
    let first = &reports[0];
    let tpr = mean_bin_tpr(&reports);
    let means: Vec<&Vec<Option<f64>>> = reports.iter().map(|r| &r.feature_mean).collect();
    let stds: Vec<&Vec<Option<f64>>> = reports.iter().map(|r| &r.feature_std).collect();
    let n_bins = first.count.len();
    Ok(BinsFile {
        attack: attack.name().to_string(),
        threshold_rule: run.cfg.report.threshold.clone(),
        edges: first.edges.clone(),
        count: first.count.clone(),
        trend_spearman: bin_trend(&tpr),
        tpr,
        feature_mean: (0..n_bins).map(|b| mean_opt(&means, b)).collect(),
        feature_std: (0..n_bins).map(|b| mean_opt(&stds, b)).collect(),
        per_target: targets
            .iter()
            .zip(&reports)
            .map(|(&target, r)| TargetBins {
                target,
                threshold: r.threshold,
                tpr: r.tpr.clone(),
                feature_mean: r.feature_mean.clone(),
                feature_std: r.feature_std.clone(),
            })
            .collect(),
    })
}

fn gap_scatters(runs: &[RunData]) -> Vec<GapScatter> {
    let mut attacks: Vec<&str> = Vec::new();
    for s in runs.iter().flat_map(|r| &r.metrics.summary) {
        if !attacks.contains(&s.attack.as_str()) {
            attacks.push(&s.attack);
        }
    }
    attacks
        .into_iter()
        .map(|a| {
            let points: Vec<GapPoint> = runs
                .iter()
                .filter_map(|r| {
                    let s = r.metrics.summary.iter().find(|s| s.attack == a)?;
                    Some(GapPoint {
                        run: r.label.clone(),
                        gap: r.fleet.gap,
                        tpr_at_1e_3: s.tpr_at_1e_3.mean,
                    })
                })
                .collect();
            let xs: Vec<f64> = points.iter().map(|p| p.gap).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.tpr_at_1e_3).collect();
            GapScatter {
                attack: a.to_string(),
                pearson_r: pearson_r(&xs, &ys).ok(),
                points,
            }
        })
        .collect()
}

fn eps_sweeps(runs: &[RunData]) -> Vec<SweepSeries> {
    let mut groups: BTreeMap<(String, String), Vec<(f64, f64, f64, f64)>> = BTreeMap::new();
    for r in runs {
        let Some(eps) = r.fleet.epsilon else { continue };
        for s in &r.metrics.summary {
            groups
                .entry((r.fleet.enhancement.clone(), s.attack.clone()))
                .or_default()
                .push((eps, s.tpr_at_1e_2.mean, s.tpr_at_1e_3.mean, r.fleet.mean_memorization));
        }
    }
    groups
        .into_iter()
        .map(|((enhancement, attack), mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            SweepSeries {
                enhancement,
                attack,
                epsilon: pts.iter().map(|p| p.0).collect(),
                tpr_at_1e_2: pts.iter().map(|p| p.1).collect(),
                tpr_at_1e_3: pts.iter().map(|p| p.2).collect(),
                mean_memorization: pts.iter().map(|p| p.3).collect(),
            }
        })
        .collect()
}

pub(crate) fn write_report(run: &Run, others: &[PathBuf], out: &mut Outputs) -> Result<()> {
    let this = load_run(&run.dir)?;
    let mut runs = vec![this];
    for dir in others {
        runs.push(load_run(dir)?);
    }

    let rows: Vec<TableRow> = runs.iter().flat_map(table_rows).collect();
    write_json(&out.path("report/table.json"), &rows)?;
    out.add("report/table.json")?;
    format::write_text(&out.path("report/table.csv"), &table_csv(&rows))?;
    out.add("report/table.csv")?;

    let targets: Vec<usize> = {
        let mut t: Vec<usize> = runs[0].metrics.rows.iter().map(|r| r.target).collect();
        t.sort_unstable();
        t.dedup();
        t
    };
    for attack in run.cfg.attack_ids()? {
        let bins = bins_for(run, attack, &runs[0].mem, &targets)?;
        let rel = format!("report/bins_{}.json", attack.name());
        write_json(&out.path(&rel), &bins)?;
        out.add(&rel)?;
        if run.cfg.report.plots {
            let rel = format!("report/bins_{}.svg", attack.name());
            format::write_text(&out.path(&rel), &svg_bins(&bins))?;
            out.add(&rel)?;
        }
    }

    if runs.len() > 1 {
        let scatters = gap_scatters(&runs);
        write_json(&out.path("report/gap_scatter.json"), &scatters)?;
        out.add("report/gap_scatter.json")?;
        let sweeps = eps_sweeps(&runs);
        write_json(&out.path("report/eps_sweep.json"), &sweeps)?;
        out.add("report/eps_sweep.json")?;
        if run.cfg.report.plots {
            format::write_text(&out.path("report/gap_scatter.svg"), &svg_gap(&scatters))?;
            out.add("report/gap_scatter.svg")?;
            format::write_text(&out.path("report/eps_sweep.svg"), &svg_sweep(&sweeps))?;
            out.add("report/eps_sweep.svg")?;
        }
        let subsample = run.cfg.report.scatter_subsample;
        for other in &runs[1..] {
            if other.mem.len() != runs[0].mem.len() {
                continue;
            }
            let n = other.mem.len();
            let pick = (subsample > 0 && subsample < n).then_some((subsample, run.cfg.fleet.seed));
            let pairs: Vec<MemPair> = scatter_memorization(&runs[0].mem, &other.mem, pick)?
                .into_iter()
                .map(|p| MemPair {
                    sample_id: p.sample_id,
                    this: p.a,
                    other: p.b,
                })
                .collect();
            let rel = format!("report/mem_scatter_{}.json", other.label);
            write_json(&out.path(&rel), &pairs)?;
            out.add(&rel)?;
        }
    }
    Ok(())
}

// ---- SVG ----

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Frame { x0, x1, y0, y1 }
    }

    fn x(&self, v: f64) -> f64 {
        PAD + (v - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn y(&self, v: f64) -> f64 {
        H - PAD - (v - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn svg_open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="16" text-anchor="middle">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 8.0);
    let _ = writeln!(s, r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{ylabel}</text>"#, H / 2.0, H / 2.0);
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" text-anchor="middle">{:.3}</text>"#, H - PAD + 14.0, f.x0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{:.3}</text>"#, W - PAD, H - PAD + 14.0, f.x1);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, PAD - 3.0, H - PAD, f.y0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, PAD - 3.0, PAD + 4.0, f.y1);
    s
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn svg_bins(b: &BinsFile) -> String {
    let n = b.tpr.len();
    let f = Frame {
        x0: 0.0,
        x1: n as f64,
        y0: 0.0,
        y1: 1.0,
    };
    let mut s = svg_open(&format!("{}: TPR per memorization bin", b.attack), "bin", "TPR", &f);
    for (i, t) in b.tpr.iter().enumerate() {
        if let Some(t) = t {
            let x = f.x(i as f64 + 0.1);
            let w = f.x(i as f64 + 0.9) - x;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="{}"/>"#,
                f.y(*t),
                f.y(0.0) - f.y(*t),
                COLORS[0]
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn svg_gap(scatters: &[GapScatter]) -> String {
    let pts = scatters.iter().flat_map(|g| &g.points);
    let f = Frame::new(pts.clone().map(|p| p.gap), pts.map(|p| p.tpr_at_1e_3));
    let mut s = svg_open("attack success vs generalization gap", "train-test gap", "TPR@0.1%FPR", &f);
    for (k, g) in scatters.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        for p in &g.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, f.x(p.gap), f.y(p.tpr_at_1e_3));
        }
        let r = g.pearson_r.map_or("n/a".to_string(), |r| format!("{r:.2}"));
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{c}">{} r={r}</text>"#, W - PAD - 120.0, PAD + 12.0 * k as f64, g.attack);
    }
    s.push_str("</svg>\n");
    s
}

fn svg_sweep(series: &[SweepSeries]) -> String {
    let xs = series.iter().flat_map(|s| s.epsilon.iter().copied());
    let ys = series.iter().flat_map(|s| s.tpr_at_1e_2.iter().copied());
    let f = Frame::new(xs, ys);
    let mut s = svg_open("TPR@1%FPR vs epsilon", "epsilon", "TPR@1%FPR", &f);
    for (k, ser) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        let pts: Vec<String> = ser
            .epsilon
            .iter()
            .zip(&ser.tpr_at_1e_2)
            .map(|(&x, &y)| format!("{:.2},{:.2}", f.x(x), f.y(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{c}">{} {}</text>"#,
            W - PAD - 160.0,
            PAD + 12.0 * k as f64,
            ser.enhancement,
            ser.attack
        );
    }
    s.push_str("</svg>\n");
    s
}
