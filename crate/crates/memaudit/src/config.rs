//! Experiment configuration: a sectioned `key = value` text file.
//!
//! ```text
//! # comment
//! [train]
//! hidden = 128, 64
//! epochs = 30
//! ```
//!
//! Every key has a default. Unknown sections or keys, duplicates and
//! malformed values are rejected before any work starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use memaudit_core::advtrain::AdvConfig;
use memaudit_core::attacks::{AttackId, AttackOptions, BinaryClassifierConfig, CalibrationScale};
use memaudit_core::augment::EnhancementSpec;
use memaudit_core::memorization::ThresholdRule;
use memaudit_core::nn::TrainConfig;
use memaudit_core::shadow::QuerySpec;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::synth::SynthConfig;

const SECTIONS: [&str; 8] = [
    "dataset",
    "train",
    "enhancement",
    "adv",
    "fleet",
    "query",
    "attack",
    "report",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSection {
    /// Existing dataset file; when set the generator keys are ignored.
    pub path: Option<PathBuf>,
    pub n_per_class: usize,
    pub n_classes: usize,
    pub n_features: usize,
    pub tail_fraction: f64,
    pub center_scale: f64,
    pub spread: f64,
    pub tail_spread: f64,
    pub subcluster_size: usize,
    pub uniform_noise: bool,
    pub code_agreement: Option<f64>,
    pub code_noise: f64,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        DatasetSection {
            path: None,
            n_per_class: s.n_per_class,
            n_classes: s.n_classes,
            n_features: s.n_features,
            tail_fraction: s.tail_fraction,
            center_scale: s.center_scale,
            spread: s.spread,
            tail_spread: s.tail_spread,
            subcluster_size: s.subcluster_size,
            uniform_noise: s.uniform_noise,
            code_agreement: s.code_agreement,
            code_noise: s.code_noise,
            seed: s.seed,
        }
    }
}

impl DatasetSection {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_per_class: self.n_per_class,
            n_classes: self.n_classes,
            n_features: self.n_features,
            tail_fraction: self.tail_fraction,
            center_scale: self.center_scale,
            spread: self.spread,
            tail_spread: self.tail_spread,
            subcluster_size: self.subcluster_size,
            uniform_noise: self.uniform_noise,
            code_agreement: self.code_agreement,
            code_noise: self.code_noise,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSection {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub decay_milestones: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            hidden: vec![128],
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 60,
            batch_size: 64,
            decay_milestones: vec![45],
            decay_factor: 0.1,
            seed: 0,
        }
    }
}

/// `enhancement.kind` plus the parameter keys every kind draws from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnhancementSection {
    pub kind: String,
    pub epsilon: f64,
    pub rate: f64,
    pub sigma: f64,
    pub size: usize,
    pub alpha: f64,
    pub ratio: f64,
    pub temperature: f64,
}

impl Default for EnhancementSection {
    fn default() -> Self {
        EnhancementSection {
            kind: "none".into(),
            epsilon: 0.2,
            rate: 0.05,
            sigma: 0.01,
            size: 4,
            alpha: 0.5,
            ratio: 0.01,
            temperature: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvSection {
    pub epsilon: f64,
    /// `None` means `epsilon / 8`.
    pub step_size: Option<f64>,
    pub iters: usize,
    pub random_start: bool,
    pub lambda: f64,
    /// `None` means 0.01 for `awp` and 0.005 for `trades_awp`.
    pub gamma: Option<f64>,
    pub clamp: Option<(f64, f64)>,
    /// PGD steps used by the `robustness` command.
    pub eval_iters: usize,
}

impl Default for AdvSection {
    fn default() -> Self {
        AdvSection {
            epsilon: 0.1,
            step_size: None,
            iters: 10,
            random_start: true,
            lambda: 6.0,
            gamma: None,
            clamp: Some((0.0, 1.0)),
            eval_iters: 20,
        }
    }
}

impl AdvSection {
    pub fn training(&self) -> AdvConfig {
        AdvConfig {
            epsilon: self.epsilon,
            step_size: self.step_size.unwrap_or(self.epsilon / 8.0),
            iters: self.iters,
            random_start: self.random_start,
            clamp: self.clamp,
        }
    }

    pub fn evaluation(&self) -> AdvConfig {
        AdvConfig {
            epsilon: self.epsilon,
            step_size: self.step_size.unwrap_or(self.epsilon / 8.0),
            iters: self.eval_iters,
            random_start: false,
            clamp: self.clamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FleetSection {
    pub models: usize,
    pub seed: u64,
    /// Target models attacked; `0` attacks every model.
    pub n_targets: usize,
    pub target_seed: u64,
}

impl Default for FleetSection {
    fn default() -> Self {
        FleetSection {
            models: 16,
            seed: 0,
            n_targets: 10,
            target_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuerySection {
    pub mode: String,
    pub k: usize,
    /// `training` reuses the training enhancement; otherwise a kind name.
    pub augmentation: String,
    pub seed: u64,
}

impl Default for QuerySection {
    fn default() -> Self {
        QuerySection {
            mode: "single".into(),
            k: 10,
            augmentation: "training".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackSection {
    pub attacks: Vec<String>,
    pub calibration_scale: String,
    pub k_shadows: usize,
    pub classifier_hidden: Vec<usize>,
    pub classifier_epochs: usize,
    pub classifier_learning_rate: f64,
    pub classifier_batch_size: usize,
    pub seed: u64,
}

impl Default for AttackSection {
    fn default() -> Self {
        let b = BinaryClassifierConfig::default();
        AttackSection {
            attacks: AttackId::ALL.iter().map(|a| a.name().to_string()).collect(),
            calibration_scale: "phi".into(),
            k_shadows: b.k_shadows,
            classifier_hidden: b.hidden_sizes,
            classifier_epochs: b.epochs,
            classifier_learning_rate: b.learning_rate,
            classifier_batch_size: b.batch_size,
            seed: b.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSection {
    pub bins: usize,
    /// `balanced`, `fpr:<rate>` or `value:<score>`.
    pub threshold: String,
    pub plots: bool,
    /// Points kept in the memorization scatter; `0` keeps all.
    pub scatter_subsample: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            bins: 20,
            threshold: "balanced".into(),
            plots: true,
            scatter_subsample: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub enhancement: EnhancementSection,
    pub adv: AdvSection,
    pub fleet: FleetSection,
    pub query: QuerySection,
    pub attack: AttackSection,
    pub report: ReportSection,
}

struct Entry {
    value: String,
    line: usize,
}

/// Raw entries of one file, consumed section by section.
struct Raw {
    entries: BTreeMap<(String, String), Entry>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = strip_comment(raw_line).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| line_err(line_no, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(line_err(line_no, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| line_err(line_no, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(line_err(line_no, "empty key"));
            }
            let sec = section
                .clone()
                .ok_or_else(|| line_err(line_no, format!("key `{key}` appears before any section")))?;
            let slot = (sec, key.to_string());
            if let Some(prev) = entries.get(&slot) {
                let prev: &Entry = prev;
                return Err(line_err(
                    line_no,
                    format!("duplicate key `{}.{}` (first set on line {})", slot.0, slot.1, prev.line),
                ));
            }
            entries.insert(
                slot,
                Entry {
                    value: value.to_string(),
                    line: line_no,
                },
            );
        }
        Ok(Raw { entries })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<Entry> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    fn set<T>(&mut self, section: &str, key: &str, slot: &mut T, parse: impl Fn(&str) -> Option<T>) -> Result<()> {
        if let Some(e) = self.take(section, key) {
            *slot = parse(&e.value).ok_or_else(|| {
                line_err(e.line, format!("invalid value `{}` for {section}.{key}", e.value))
            })?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            Some(((s, k), e)) => Err(line_err(e.line, format!("unknown key `{s}.{k}`"))),
            None => Ok(()),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn line_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(s: &str) -> Option<T> {
    s.parse().ok()
}

fn real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn boolean(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    if s.is_empty() || s == "none" {
        return Some(Vec::new());
    }
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

fn word(s: &str) -> Option<String> {
    (!s.is_empty() && !s.contains(char::is_whitespace)).then(|| s.to_string())
}

fn optional_real(s: &str) -> Option<Option<f64>> {
    if s == "none" {
        Some(None)
    } else {
        real(s).map(Some)
    }
}

fn range(s: &str) -> Option<Option<(f64, f64)>> {
    if s == "none" {
        return Some(None);
    }
    let (a, b) = s.split_once(',')?;
    Some(Some((real(a.trim())?, real(b.trim())?)))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Raw::parse(text)?;
        let mut c = ExperimentConfig::default();

        let d = &mut c.dataset;
        raw.set("dataset", "path", &mut d.path, |s| Some(Some(PathBuf::from(s))))?;
        raw.set("dataset", "n_per_class", &mut d.n_per_class, num)?;
        raw.set("dataset", "n_classes", &mut d.n_classes, num)?;
        raw.set("dataset", "n_features", &mut d.n_features, num)?;
        raw.set("dataset", "tail_fraction", &mut d.tail_fraction, real)?;
        raw.set("dataset", "center_scale", &mut d.center_scale, real)?;
        raw.set("dataset", "spread", &mut d.spread, real)?;
        raw.set("dataset", "tail_spread", &mut d.tail_spread, real)?;
        raw.set("dataset", "subcluster_size", &mut d.subcluster_size, num)?;
        raw.set("dataset", "uniform_noise", &mut d.uniform_noise, boolean)?;
        raw.set("dataset", "code_agreement", &mut d.code_agreement, optional_real)?;
        raw.set("dataset", "code_noise", &mut d.code_noise, real)?;
        raw.set("dataset", "seed", &mut d.seed, num)?;

        let t = &mut c.train;
        raw.set("train", "hidden", &mut t.hidden, list)?;
        raw.set("train", "learning_rate", &mut t.learning_rate, real)?;
        raw.set("train", "momentum", &mut t.momentum, real)?;
        raw.set("train", "epochs", &mut t.epochs, num)?;
        raw.set("train", "batch_size", &mut t.batch_size, num)?;
        raw.set("train", "decay_milestones", &mut t.decay_milestones, list)?;
        raw.set("train", "decay_factor", &mut t.decay_factor, real)?;
        raw.set("train", "seed", &mut t.seed, num)?;

        let e = &mut c.enhancement;
        raw.set("enhancement", "kind", &mut e.kind, word)?;
        raw.set("enhancement", "epsilon", &mut e.epsilon, real)?;
        raw.set("enhancement", "rate", &mut e.rate, real)?;
        raw.set("enhancement", "sigma", &mut e.sigma, real)?;
        raw.set("enhancement", "size", &mut e.size, num)?;
        raw.set("enhancement", "alpha", &mut e.alpha, real)?;
        raw.set("enhancement", "ratio", &mut e.ratio, real)?;
        raw.set("enhancement", "temperature", &mut e.temperature, real)?;

        let a = &mut c.adv;
        raw.set("adv", "epsilon", &mut a.epsilon, real)?;
        raw.set("adv", "step_size", &mut a.step_size, optional_real)?;
        raw.set("adv", "iters", &mut a.iters, num)?;
        raw.set("adv", "random_start", &mut a.random_start, boolean)?;
        raw.set("adv", "lambda", &mut a.lambda, real)?;
        raw.set("adv", "gamma", &mut a.gamma, optional_real)?;
        raw.set("adv", "clamp", &mut a.clamp, range)?;
        raw.set("adv", "eval_iters", &mut a.eval_iters, num)?;

        let f = &mut c.fleet;
        raw.set("fleet", "models", &mut f.models, num)?;
        raw.set("fleet", "seed", &mut f.seed, num)?;
        raw.set("fleet", "n_targets", &mut f.n_targets, num)?;
        raw.set("fleet", "target_seed", &mut f.target_seed, num)?;

        let q = &mut c.query;
        raw.set("query", "mode", &mut q.mode, word)?;
        raw.set("query", "k", &mut q.k, num)?;
        raw.set("query", "augmentation", &mut q.augmentation, word)?;
        raw.set("query", "seed", &mut q.seed, num)?;

        let k = &mut c.attack;
        raw.set("attack", "attacks", &mut k.attacks, |s| {
            if s == "all" {
                Some(AttackId::ALL.iter().map(|a| a.name().to_string()).collect())
            } else {
                list(s)
            }
        })?;
        raw.set("attack", "calibration.scale", &mut k.calibration_scale, word)?;
        raw.set("attack", "k_shadows", &mut k.k_shadows, num)?;
        raw.set("attack", "classifier_hidden", &mut k.classifier_hidden, list)?;
        raw.set("attack", "classifier_epochs", &mut k.classifier_epochs, num)?;
        raw.set("attack", "classifier_learning_rate", &mut k.classifier_learning_rate, real)?;
        raw.set("attack", "classifier_batch_size", &mut k.classifier_batch_size, num)?;
        raw.set("attack", "seed", &mut k.seed, num)?;

        let r = &mut c.report;
        raw.set("report", "bins", &mut r.bins, num)?;
        raw.set("report", "threshold", &mut r.threshold, word)?;
        raw.set("report", "plots", &mut r.plots, boolean)?;
        raw.set("report", "scatter_subsample", &mut r.scatter_subsample, num)?;

        raw.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Replaces every section seed with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self.fleet.seed = seed;
        self.fleet.target_seed = seed;
        self.query.seed = seed;
        self.attack.seed = seed;
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.path.is_none() {
            self.dataset.synth().validate()?;
        }
        let train = self.train_config()?;
        train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        if self.fleet.models < 2 || self.fleet.models % 2 != 0 {
            return Err(Error::Config(format!(
                "fleet.models must be even and at least 2, got {}",
                self.fleet.models
            )));
        }
        if self.fleet.n_targets > self.fleet.models {
            return Err(Error::Config("fleet.n_targets exceeds fleet.models".into()));
        }
        self.query_spec()?;
        let attacks = self.attack_ids()?;
        if self.fleet.models < 6 {
            if let Some(a) = attacks.iter().find(|a| a.uses_shadows()) {
                return Err(Error::Config(format!(
                    "attack `{}` needs at least 2 IN and 2 OUT shadows per sample, so fleet.models >= 6",
                    a.name()
                )));
            }
        }
        let opts = self.attack_options()?;
        if attacks.contains(&AttackId::BinaryClassifier) && opts.binary.k_shadows >= self.fleet.models {
            return Err(Error::Config("attack.k_shadows must be below fleet.models".into()));
        }
        if self.report.bins == 0 {
            return Err(Error::Config("report.bins must be positive".into()));
        }
        self.threshold_rule()?;
        Ok(())
    }

    fn enhancement_of(&self, kind: &str) -> Result<EnhancementSpec> {
        let e = &self.enhancement;
        let a = &self.adv;
        let spec = match kind {
            "none" => EnhancementSpec::None,
            "label_smooth" => EnhancementSpec::LabelSmooth { epsilon: e.epsilon },
            "disturb_label" => EnhancementSpec::DisturbLabel { rate: e.rate },
            "gaussian_noise" => EnhancementSpec::GaussianNoise { sigma: e.sigma },
            "feature_cutout" => EnhancementSpec::FeatureCutout { size: e.size },
            "mixup" => EnhancementSpec::Mixup { alpha: e.alpha },
            "zero_one_flip" => EnhancementSpec::ZeroOneFlip { ratio: e.ratio },
            "distillation" => EnhancementSpec::Distillation {
                temperature: e.temperature,
            },
            "pgd_at" => EnhancementSpec::PgdAt { adv: a.training() },
            "trades" => EnhancementSpec::Trades {
                adv: a.training(),
                lambda: a.lambda,
            },
            "awp" => EnhancementSpec::Awp {
                adv: a.training(),
                gamma: a.gamma.unwrap_or(0.01),
            },
            "trades_awp" => EnhancementSpec::TradesAwp {
                adv: a.training(),
                lambda: a.lambda,
                gamma: a.gamma.unwrap_or(0.005),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown enhancement kind `{other}` (expected one of {})",
                    EnhancementSpec::KIND_NAMES.join(", ")
                )))
            }
        };
        spec.validate()
            .map_err(|err| Error::Config(format!("enhancement {kind}: {err}")))?;
        Ok(spec)
    }

    pub fn enhancement(&self) -> Result<EnhancementSpec> {
        self.enhancement_of(&self.enhancement.kind)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            hidden_sizes: t.hidden.clone(),
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            epochs: t.epochs,
            batch_size: t.batch_size,
            decay_milestones: t.decay_milestones.clone(),
            decay_factor: t.decay_factor,
            seed: t.seed,
            enhancement: self.enhancement()?,
        })
    }

    pub fn query_spec(&self) -> Result<QuerySpec> {
        let q = &self.query;
        match q.mode.as_str() {
            "single" => Ok(QuerySpec::Single),
            "multi" => {
                if q.k == 0 {
                    return Err(Error::Config("query.k must be positive".into()));
                }
                let augmentation = if q.augmentation == "training" {
                    self.enhancement()?
                } else {
                    self.enhancement_of(&q.augmentation)?
                };
                if augmentation.is_adversarial() {
                    return Err(Error::Config(
                        "query.augmentation cannot be an adversarial kind".into(),
                    ));
                }
                Ok(QuerySpec::Multi {
                    k: q.k,
                    augmentation,
                    seed: q.seed,
                })
            }
            other => Err(Error::Config(format!(
                "query.mode must be `single` or `multi`, got `{other}`"
            ))),
        }
    }

    pub fn attack_ids(&self) -> Result<Vec<AttackId>> {
        if self.attack.attacks.is_empty() {
            return Err(Error::Config("attack.attacks is empty".into()));
        }
        self.attack
            .attacks
            .iter()
            .map(|name| {
                AttackId::from_name(name)
                    .ok_or_else(|| Error::Config(format!("unknown attack `{name}`")))
            })
            .collect()
    }

    pub fn attack_options(&self) -> Result<AttackOptions> {
        let k = &self.attack;
        let calibration_scale = match k.calibration_scale.as_str() {
            "phi" => CalibrationScale::Phi,
            "confidence" => CalibrationScale::Confidence,
            other => {
                return Err(Error::Config(format!(
                    "attack.calibration.scale must be `phi` or `confidence`, got `{other}`"
                )))
            }
        };
        Ok(AttackOptions {
            calibration_scale,
            binary: BinaryClassifierConfig {
                k_shadows: k.k_shadows,
                hidden_sizes: k.classifier_hidden.clone(),
                epochs: k.classifier_epochs,
                learning_rate: k.classifier_learning_rate,
                batch_size: k.classifier_batch_size,
                seed: k.seed,
            },
        })
    }

    pub fn threshold_rule(&self) -> Result<ThresholdRule> {
        let t = self.report.threshold.as_str();
        let bad = || Error::Config(format!("report.threshold `{t}` is not `balanced`, `fpr:<rate>` or `value:<score>`"));
        if t == "balanced" {
            Ok(ThresholdRule::BalancedAccuracyOptimal)
        } else if let Some(v) = t.strip_prefix("fpr:") {
            real(v)
                .filter(|f| (0.0..=1.0).contains(f))
                .map(ThresholdRule::FixedFpr)
                .ok_or_else(bad)
        } else if let Some(v) = t.strip_prefix("value:") {
            real(v).map(ThresholdRule::Fixed).ok_or_else(bad)
        } else {
            Err(bad())
        }
    }

    /// Targets attacked: `n_targets == 0` means all models.
    pub fn n_targets(&self) -> usize {
        if self.fleet.n_targets == 0 {
            self.fleet.models
        } else {
            self.fleet.n_targets
        }
    }
}

/// Hex SHA-256 of the JSON encoding of `parts`.
pub fn hash_json<T: Serialize>(parts: &T) -> String {
    let bytes = serde_json::to_vec(parts).expect("config sections serialize");
    hex(&Sha256::digest(&bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stage names in pipeline order.
pub const STAGES: [&str; 6] = ["gen-data", "train-shadows", "query", "attack", "mem", "report"];

impl ExperimentConfig {
    /// Hash of the settings a stage depends on, chained through its
    /// upstream stages so any upstream change invalidates it.
    pub fn stage_hash(&self, stage: &str) -> String {
        match stage {
            "gen-data" => hash_json(&("gen-data", &self.dataset)),
            "train-shadows" => hash_json(&(
                "train-shadows",
                self.stage_hash("gen-data"),
                &self.train,
                &self.enhancement,
                &self.adv,
                self.fleet.models,
                self.fleet.seed,
            )),
            "query" => hash_json(&("query", self.stage_hash("train-shadows"), &self.query)),
            "attack" => hash_json(&(
                "attack",
                self.stage_hash("query"),
                &self.attack,
                self.fleet.n_targets,
                self.fleet.target_seed,
            )),
            "mem" => hash_json(&("mem", self.stage_hash("query"))),
            "report" => hash_json(&(
                "report",
                self.stage_hash("attack"),
                self.stage_hash("mem"),
                &self.report,
            )),
            "robustness" => hash_json(&(
                "robustness",
                self.stage_hash("train-shadows"),
                &self.adv,
                self.fleet.n_targets,
                self.fleet.target_seed,
            )),
            other => panic!("unknown stage {other}"),
        }
    }
}
