use memaudit::{Error, ExperimentConfig};
use memaudit_core::attacks::AttackId;
use memaudit_core::augment::EnhancementSpec;
use memaudit_core::memorization::ThresholdRule;
use memaudit_core::shadow::QuerySpec;

fn config_err(text: &str) -> String {
    match ExperimentConfig::parse(text).and_then(|c| c.validate().map(|_| c)) {
        Err(e @ Error::Config(_)) => {
            assert_eq!(e.exit_code(), 2);
            e.to_string()
        }
        other => panic!("expected a config error for {text:?}, got {other:?}"),
    }
}

#[test]
fn empty_file_gives_defaults() {
    let cfg = ExperimentConfig::parse("# nothing\n\n").unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    cfg.validate().unwrap();
    assert_eq!(cfg.attack_ids().unwrap().len(), 7);
}

#[test]
fn full_file_parses() {
    let text = "
[dataset]
n_per_class = 50   # per class
n_classes = 4
uniform_noise = true
code_agreement = 0.8

[train]
hidden = 32, 16
epochs = 5
decay_milestones = none

[enhancement]
kind = pgd_at

[adv]
epsilon = 0.05
clamp = none

[fleet]
models = 8
n_targets = 2

[query]
mode = multi
k = 4
augmentation = gaussian_noise

[attack]
attacks = lira, loss
calibration.scale = confidence

[report]
threshold = fpr:0.01
";
    let cfg = ExperimentConfig::parse(text).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.dataset.n_per_class, 50);
    assert_eq!(cfg.dataset.code_agreement, Some(0.8));
    assert_eq!(cfg.train.hidden, vec![32, 16]);
    assert!(cfg.train.decay_milestones.is_empty());
    assert_eq!(cfg.adv.clamp, None);
    assert_eq!(cfg.attack_ids().unwrap(), vec![AttackId::Lira, AttackId::Loss]);
    assert_eq!(cfg.threshold_rule().unwrap(), ThresholdRule::FixedFpr(0.01));
    assert!(matches!(cfg.enhancement().unwrap(), EnhancementSpec::PgdAt { .. }));
    match cfg.query_spec().unwrap() {
        QuerySpec::Multi { k, augmentation, .. } => {
            assert_eq!(k, 4);
            assert!(matches!(augmentation, EnhancementSpec::GaussianNoise { .. }));
        }
        other => panic!("unexpected query spec {other:?}"),
    }
    assert_eq!(cfg.n_targets(), 2);
}

#[test]
fn unknown_keys_and_sections_name_the_line() {
    assert!(config_err("[train]\nlr = 0.1\n").contains("line 2"));
    assert!(config_err("[training]\n").contains("unknown section"));
    assert!(config_err("epochs = 3\n").contains("line 1"));
}

#[test]
fn duplicate_and_malformed_values_are_rejected() {
    config_err("[train]\nepochs = 3\nepochs = 4\n");
    config_err("[train]\nepochs = three\n");
    config_err("[train]\nepochs\n");
    config_err("[adv]\nclamp = 0.5\n");
    config_err("[dataset]\nuniform_noise = maybe\n");
}

#[test]
fn semantic_checks() {
    config_err("[fleet]\nmodels = 7\n");
    config_err("[fleet]\nmodels = 8\nn_targets = 9\n");
    config_err("[fleet]\nmodels = 4\n");
    config_err("[enhancement]\nkind = sharpening\n");
    config_err("[attack]\nattacks = lira, nonsense\n");
    config_err("[report]\nthreshold = best\n");
    config_err("[query]\nmode = multi\naugmentation = pgd_at\n");
    config_err("[dataset]\ntail_fraction = 0.9\n");
    config_err("[dataset]\ncode_agreement = 1.5\n");
}

#[test]
fn small_fleets_may_run_shadow_free_attacks() {
    let cfg = ExperimentConfig::parse("[fleet]\nmodels = 4\nn_targets = 2\n[attack]\nattacks = loss, maxpreca\n").unwrap();
    cfg.validate().unwrap();
}

#[test]
fn seed_override_reaches_every_section() {
    let mut cfg = ExperimentConfig::default();
    cfg.override_seed(99);
    assert_eq!(cfg.dataset.seed, 99);
    assert_eq!(cfg.train.seed, 99);
    assert_eq!(cfg.fleet.seed, 99);
    assert_eq!(cfg.query.seed, 99);
    assert_eq!(cfg.attack.seed, 99);
}

#[test]
fn stage_hashes_follow_dependencies() {
    let base = ExperimentConfig::default();
    let mut changed = base.clone();
    changed.report.bins = 10;
    for stage in ["gen-data", "train-shadows", "query", "attack", "mem"] {
        assert_eq!(base.stage_hash(stage), changed.stage_hash(stage), "{stage}");
    }
    assert_ne!(base.stage_hash("report"), changed.stage_hash("report"));

    let mut changed = base.clone();
    changed.dataset.seed = 1;
    for stage in ["gen-data", "train-shadows", "query", "attack", "mem", "report", "robustness"] {
        assert_ne!(base.stage_hash(stage), changed.stage_hash(stage), "{stage}");
    }

    let mut changed = base.clone();
    changed.attack.k_shadows = 4;
    assert_eq!(base.stage_hash("mem"), changed.stage_hash("mem"));
    assert_ne!(base.stage_hash("attack"), changed.stage_hash("attack"));
}

#[test]
fn load_prefixes_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.conf");
    std::fs::write(&path, "[fleet]\nmodels = x\n").unwrap();
    let err = ExperimentConfig::load(&path).unwrap_err();
    assert!(err.to_string().contains("exp.conf"));
    assert_eq!(err.exit_code(), 2);
}
