//! The batch stages. Each stage reads its inputs from the run directory,
//! checks them against the manifest, writes its outputs and records them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use memaudit_core::advtrain::robust_accuracy;
use memaudit_core::attacks::{run_attack, AttackId, AttackScores};
use memaudit_core::memorization::estimate_memorization;
use memaudit_core::metrics::{summarize, MetricSummary};
use memaudit_core::nn::{Dataset, MlpModel};
use memaudit_core::rng::{mix_seed, rng_from_seed};
use memaudit_core::shadow::{
    generalization_gap, make_membership_matrix, model_seed, select_targets, train_shadow_model,
    ConfidenceStore, MembershipMatrix, QueryPlan, QuerySpec,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::format;
use crate::manifest::{Manifest, Outputs};
use crate::synth::gen_synthetic;

pub const DATASET_FILE: &str = "dataset.bin";
pub const MASK_FILE: &str = "membership.msk";
pub const METRICS_FILE: &str = "metrics.json";
pub const MEM_CSV: &str = "mem/memorization.csv";
pub const MEM_SUMMARY: &str = "mem/summary.json";
pub const ROBUSTNESS_FILE: &str = "robustness.json";

pub fn model_file(m: usize) -> String {
    format!("models/model_{m:04}.mlp")
}

pub fn logits_file(m: usize) -> String {
    format!("store/model_{m:04}.lgt")
}

pub fn phi_file(m: usize) -> String {
    format!("store/model_{m:04}.phi.lgt")
}

pub fn scores_file(attack: AttackId, target: usize) -> String {
    format!("scores/{}_t{target:04}.scr", attack.name())
}

pub fn scores_csv_file(attack: AttackId, target: usize) -> String {
    format!("scores/{}_t{target:04}.csv", attack.name())
}

/// A configured run directory.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    pub jobs: usize,
}

fn downstream(stage: &str) -> &'static [&'static str] {
    match stage {
        "gen-data" => &["train-shadows", "query", "attack", "mem", "report", "robustness"],
        "train-shadows" => &["query", "attack", "mem", "report", "robustness"],
        "query" => &["attack", "mem", "report"],
        "attack" | "mem" => &["report"],
        _ => &[],
    }
}

impl Run {
    pub fn new(cfg: ExperimentConfig, dir: impl Into<PathBuf>, jobs: usize) -> Self {
        Run {
            cfg,
            dir: dir.into(),
            jobs: jobs.max(1),
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::Other(format!("thread pool: {e}")))
    }

    fn manifest(&self) -> Result<Manifest> {
        Manifest::load(&self.dir)
    }

    fn require(&self, manifest: &Manifest, stage: &'static str) -> Result<()> {
        manifest
            .require(&self.dir, stage, &self.cfg.stage_hash(stage))
            .map(|_| ())
    }

    fn commit(&self, stage: &str, out: Outputs, info: BTreeMap<String, serde_json::Value>) -> Result<()> {
        let mut manifest = self.manifest()?;
        let rec = out.finish(self.cfg.stage_hash(stage), info);
        manifest.record(stage, downstream(stage), rec);
        manifest.save(&self.dir)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    // ---- loaders shared by stages ----

    pub fn load_dataset(&self) -> Result<Dataset> {
        format::read_dataset(&self.path(DATASET_FILE))
    }

    pub fn load_mask(&self) -> Result<MembershipMatrix> {
        format::read_mask(&self.path(MASK_FILE))
    }

    pub fn load_models(&self, n_models: usize) -> Result<Vec<MlpModel>> {
        (0..n_models)
            .map(|m| format::read_model(&self.path(&model_file(m))))
            .collect()
    }

    pub fn load_store(&self, mask: &MembershipMatrix, n_classes: usize) -> Result<ConfidenceStore> {
        let spec = self.cfg.query_spec()?;
        let multi = matches!(spec, QuerySpec::Multi { .. });
        let (m, n) = (mask.n_models(), mask.n_samples());
        let mut logits = Vec::with_capacity(m * n * n_classes);
        let mut phi = multi.then(|| Vec::with_capacity(m * n * n_classes));
        let read = |rel: &str, dst: &mut Vec<f32>| -> Result<()> {
            let path = self.path(rel);
            let (rn, rc, values) = format::read_logits(&path)?;
            if rn != n || rc != n_classes {
                return Err(Error::format(
                    path,
                    format!("shape {rn}x{rc} does not match {n}x{n_classes}"),
                ));
            }
            dst.extend_from_slice(&values);
            Ok(())
        };
        for model in 0..m {
            read(&logits_file(model), &mut logits)?;
            if let Some(p) = phi.as_mut() {
                read(&phi_file(model), p)?;
            }
        }
        Ok(ConfidenceStore::new(m, n, n_classes, logits, phi, spec)?)
    }

    pub fn targets(&self) -> Result<Vec<usize>> {
        let m = self.cfg.fleet.models;
        if self.cfg.fleet.n_targets == 0 {
            return Ok((0..m).collect());
        }
        let mut t = select_targets(m, self.cfg.fleet.n_targets, self.cfg.fleet.target_seed)?;
        t.sort_unstable();
        Ok(t)
    }

    // ---- stages ----

    pub fn gen_data(&self) -> Result<()> {
        let ds = match &self.cfg.dataset.path {
            Some(p) => format::read_dataset(p)?,
            None => gen_synthetic(&self.cfg.dataset.synth())?.dataset,
        };
        let mut out = Outputs::new(&self.dir);
        format::write_dataset(&out.path(DATASET_FILE), &ds)?;
        out.add(DATASET_FILE)?;
        let info = BTreeMap::from([
            ("n_samples".into(), json!(ds.n_samples())),
            ("n_features".into(), json!(ds.n_features())),
            ("n_classes".into(), json!(ds.n_classes())),
        ]);
        self.commit("gen-data", out, info)
    }

    pub fn train_shadows(&self) -> Result<()> {
        let manifest = self.manifest()?;
        self.require(&manifest, "gen-data")?;
        let ds = self.load_dataset()?;
        let cfg = self.cfg.train_config()?;
        let m = self.cfg.fleet.models;
        let mask = make_membership_matrix(m, ds.n_samples(), mix_seed(self.cfg.fleet.seed, 0x4D41534B))?;
        let models: Vec<MlpModel> = self.pool()?.install(|| {
            (0..m)
                .into_par_iter()
                .map(|i| train_shadow_model(&ds, &mask, i, &cfg).map_err(Error::from))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut out = Outputs::new(&self.dir);
        format::write_mask(&out.path(MASK_FILE), &mask)?;
        out.add(MASK_FILE)?;
        for (i, model) in models.iter().enumerate() {
            let rel = model_file(i);
            format::write_model(&out.path(&rel), model)?;
            out.add(&rel)?;
        }
        let seeds: Vec<String> = (0..m).map(|i| format!("{:#018x}", model_seed(cfg.seed, i))).collect();
        let info = BTreeMap::from([
            ("n_models".into(), json!(m)),
            ("enhancement".into(), json!(cfg.enhancement.kind_name())),
            ("layer_sizes".into(), json!(models[0].layer_sizes())),
            ("model_seeds".into(), json!(seeds)),
            ("config".into(), serde_json::to_value(&self.cfg).expect("config serializes")),
        ]);
        self.commit("train-shadows", out, info)
    }

    pub fn query(&self) -> Result<()> {
        let manifest = self.manifest()?;
        self.require(&manifest, "gen-data")?;
        self.require(&manifest, "train-shadows")?;
        let ds = self.load_dataset()?;
        let models = self.load_models(self.cfg.fleet.models)?;
        let spec = self.cfg.query_spec()?;
        let plan = QueryPlan::new(&ds, &spec)?;
        let answers = self.pool()?.install(|| {
            models
                .par_iter()
                .map(|model| plan.run(model).map_err(Error::from))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut out = Outputs::new(&self.dir);
        let (n, c) = (ds.n_samples(), ds.n_classes());
        for (i, a) in answers.iter().enumerate() {
            let rel = logits_file(i);
            format::write_logits(&out.path(&rel), n, c, &a.logits)?;
            out.add(&rel)?;
            if let Some(phi) = &a.phi {
                let rel = phi_file(i);
                format::write_logits(&out.path(&rel), n, c, phi)?;
                out.add(&rel)?;
            }
        }
        let info = BTreeMap::from([("mode".into(), json!(self.cfg.query.mode))]);
        self.commit("query", out, info)
    }

    fn load_for_attack(&self) -> Result<(Dataset, MembershipMatrix, ConfidenceStore)> {
        let manifest = self.manifest()?;
        for stage in ["gen-data", "train-shadows", "query"] {
            self.require(&manifest, stage)?;
        }
        let ds = self.load_dataset()?;
        let mask = self.load_mask()?;
        if mask.n_samples() != ds.n_samples() || mask.n_models() != self.cfg.fleet.models {
            return Err(Error::format(self.path(MASK_FILE), "mask does not match dataset and fleet"));
        }
        let store = self.load_store(&mask, ds.n_classes())?;
        Ok((ds, mask, store))
    }

    pub fn attack(&self) -> Result<()> {
        let (ds, mask, store) = self.load_for_attack()?;
        let attacks = self.cfg.attack_ids()?;
        let opts = self.cfg.attack_options()?;
        let targets = self.targets()?;
        let jobs: Vec<(usize, AttackId)> = targets
            .iter()
            .flat_map(|&t| attacks.iter().map(move |&a| (t, a)))
            .collect();
        let results: Vec<(AttackScores, MetricSummary)> = self.pool()?.install(|| {
            jobs.par_iter()
                .map(|&(t, a)| {
                    let s = run_attack(a, &store, &mask, t, ds.labels(), &opts)?;
                    let member: Vec<bool> = mask.row(t).to_vec();
                    let summary = summarize(&s.scores, &member)?;
                    Ok((s, summary))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut out = Outputs::new(&self.dir);
        let mut rows = Vec::with_capacity(results.len());
        for (s, summary) in &results {
            let rel = scores_file(s.attack, s.target);
            format::write_scores(&out.path(&rel), s)?;
            out.add(&rel)?;
            let rel = scores_csv_file(s.attack, s.target);
            format::write_text(&out.path(&rel), &format::scores_csv(&s.scores, mask.row(s.target)))?;
            out.add(&rel)?;
            rows.push(MetricRow::new(s.attack, s.target, summary));
        }
        let metrics = MetricsFile::from_rows(rows);
        write_json(&out.path(METRICS_FILE), &metrics)?;
        out.add(METRICS_FILE)?;
        let info = BTreeMap::from([("targets".into(), json!(targets))]);
        self.commit("attack", out, info)
    }

    pub fn mem(&self) -> Result<()> {
        let (ds, mask, store) = self.load_for_attack()?;
        let mem = estimate_memorization(&store, &mask, ds.labels())?;
        let gap = generalization_gap(&store, &mask, ds.labels())?;
        let mut out = Outputs::new(&self.dir);
        format::write_text(&out.path(MEM_CSV), &format::memorization_csv(mem.as_slice()))?;
        out.add(MEM_CSV)?;
        let summary = FleetSummary {
            enhancement: self.cfg.enhancement.kind.clone(),
            epsilon: self.cfg.train_config()?.enhancement.adv().map(|a| a.epsilon),
            n_models: mask.n_models(),
            n_samples: mask.n_samples(),
            train_acc: gap.train_acc,
            test_acc: gap.test_acc,
            gap: gap.gap,
            mean_memorization: mem.mean(),
        };
        write_json(&out.path(MEM_SUMMARY), &summary)?;
        out.add(MEM_SUMMARY)?;
        self.commit("mem", out, BTreeMap::new())
    }

    pub fn robustness(&self) -> Result<()> {
        let manifest = self.manifest()?;
        self.require(&manifest, "gen-data")?;
        self.require(&manifest, "train-shadows")?;
        let ds = self.load_dataset()?;
        let mask = self.load_mask()?;
        let models = self.load_models(self.cfg.fleet.models)?;
        let eval = self.cfg.adv.evaluation();
        let targets = self.targets()?;
        let reports = self.pool()?.install(|| {
            targets
                .par_iter()
                .map(|&t| {
                    let out_rows: Vec<usize> = (0..ds.n_samples()).filter(|&j| !mask.is_member(t, j)).collect();
                    let test = subset(&ds, &out_rows)?;
                    let mut rng = rng_from_seed(mix_seed(self.cfg.fleet.seed, t as u64));
                    let r = robust_accuracy(&models[t], &test, &eval, &mut rng)?;
                    Ok(RobustnessRow {
                        target: t,
                        clean_accuracy: r.clean_accuracy,
                        adversarial_accuracy: r.adversarial_accuracy,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let (clean, adv): (Vec<f64>, Vec<f64>) = reports
            .iter()
            .map(|r| (r.clean_accuracy, r.adversarial_accuracy))
            .unzip();
        let file = RobustnessFile {
            epsilon: eval.epsilon,
            iters: eval.iters,
            rows: reports,
            clean_accuracy: MeanStd::of(&clean),
            adversarial_accuracy: MeanStd::of(&adv),
        };
        let mut out = Outputs::new(&self.dir);
        write_json(&out.path(ROBUSTNESS_FILE), &file)?;
        out.add(ROBUSTNESS_FILE)?;
        self.commit("robustness", out, BTreeMap::new())
    }

    pub fn report(&self, others: &[PathBuf]) -> Result<()> {
        let manifest = self.manifest()?;
        for stage in ["gen-data", "train-shadows", "query", "attack", "mem"] {
            self.require(&manifest, stage)?;
        }
        let mut out = Outputs::new(&self.dir);
        crate::report::write_report(self, others, &mut out)?;
        self.commit("report", out, BTreeMap::new())
    }

    /// Runs every stage whose recorded inputs are out of date.
    pub fn run_all(&self, others: &[PathBuf]) -> Result<()> {
        type Stage = fn(&Run) -> Result<()>;
        let stages: [(&'static str, Stage); 5] = [
            ("gen-data", Run::gen_data),
            ("train-shadows", Run::train_shadows),
            ("query", Run::query),
            ("attack", Run::attack),
            ("mem", Run::mem),
        ];
        for (name, f) in stages {
            let manifest = self.manifest()?;
            if !manifest.is_current(&self.dir, name, &self.cfg.stage_hash(name)) {
                f(self)?;
            }
        }
        self.report(others)
    }
}

fn subset(ds: &Dataset, rows: &[usize]) -> Result<Dataset> {
    let b = ds.batch(rows);
    Ok(Dataset::new(b.features, b.labels, ds.n_classes())?)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report data serializes");
    text.push('\n');
    format::write_text(path, &text)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &'static str) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            stage,
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// One attack against one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub attack: String,
    pub target: usize,
    #[serde(rename = "tpr_at_1e-2")]
    pub tpr_at_1e_2: f64,
    #[serde(rename = "tpr_at_1e-3")]
    pub tpr_at_1e_3: f64,
    #[serde(rename = "tpr_at_1e-5")]
    pub tpr_at_1e_5: f64,
    pub log_auc: f64,
    pub auc: f64,
    pub balanced_acc: f64,
    /// `None` when the optimum rejects every sample.
    pub threshold: Option<f64>,
}

impl MetricRow {
    pub fn new(attack: AttackId, target: usize, s: &MetricSummary) -> Self {
        MetricRow {
            attack: attack.name().to_string(),
            target,
            tpr_at_1e_2: s.tpr_at_1e_2,
            tpr_at_1e_3: s.tpr_at_1e_3,
            tpr_at_1e_5: s.tpr_at_1e_5,
            log_auc: s.log_auc,
            auc: s.auc,
            balanced_acc: s.balanced_acc,
            threshold: s.threshold.is_finite().then_some(s.threshold),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std }
    }
}

/// Mean and deviation over targets for one attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummaryRow {
    pub attack: String,
    pub n_targets: usize,
    #[serde(rename = "tpr_at_1e-2")]
    pub tpr_at_1e_2: MeanStd,
    #[serde(rename = "tpr_at_1e-3")]
    pub tpr_at_1e_3: MeanStd,
    #[serde(rename = "tpr_at_1e-5")]
    pub tpr_at_1e_5: MeanStd,
    pub log_auc: MeanStd,
    pub auc: MeanStd,
    pub balanced_acc: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<MetricSummaryRow>,
}

impl MetricsFile {
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let mut names: Vec<&str> = Vec::new();
        for r in &rows {
            if !names.contains(&r.attack.as_str()) {
                names.push(&r.attack);
            }
        }
        let summary = names
            .iter()
            .map(|&name| {
                let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.attack == name).collect();
                let col = |f: fn(&MetricRow) -> f64| MeanStd::of(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
                MetricSummaryRow {
                    attack: name.to_string(),
                    n_targets: sel.len(),
                    tpr_at_1e_2: col(|r| r.tpr_at_1e_2),
                    tpr_at_1e_3: col(|r| r.tpr_at_1e_3),
                    tpr_at_1e_5: col(|r| r.tpr_at_1e_5),
                    log_auc: col(|r| r.log_auc),
                    auc: col(|r| r.auc),
                    balanced_acc: col(|r| r.balanced_acc),
                }
            })
            .collect();
        MetricsFile { rows, summary }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSummary {
    pub enhancement: String,
    pub epsilon: Option<f64>,
    pub n_models: usize,
    pub n_samples: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub gap: f64,
    pub mean_memorization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub target: usize,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessFile {
    pub epsilon: f64,
    pub iters: usize,
    pub rows: Vec<RobustnessRow>,
    pub clean_accuracy: MeanStd,
    pub adversarial_accuracy: MeanStd,
}
