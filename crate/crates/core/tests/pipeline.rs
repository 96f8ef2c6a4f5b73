use std::path::Path;

use termforge_core::pipeline::*;
use termforge_core::synthgen::SynthConfig;

fn tiny(out: &Path, system: System) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed: 3,
        system,
        synth: SynthConfig {
            vocabulary_size: 6,
            occurrences_per_word: 12,
            symbol_substitution_rate: 0.05,
            feature_noise_sigma: 0.2,
            ..SynthConfig::default()
        },
        ..PipelineConfig::default()
    };
    cfg.mining.n_siamese = 100;
    cfg.mining.n_triplet = 100;
    cfg.train.l_max = 24;
    cfg.train.max_epochs = 2;
    cfg.train.batch_size = 16;
    cfg.paths.out = out.to_path_buf();
    cfg
}

#[test]
fn stages_are_cached_by_content() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), System::Baseline);
    run_all(&cfg, false).unwrap();
    for stage in stages_for(System::Baseline) {
        assert_eq!(run_stage(stage, &cfg, false).unwrap(), StageStatus::UpToDate, "{stage}");
    }
    assert_eq!(run_stage(Stage::Baseline, &cfg, true).unwrap(), StageStatus::Ran);

    let mut changed = cfg.clone();
    changed.leader.radius = 0.3;
    assert_eq!(run_stage(Stage::Discover, &changed, false).unwrap(), StageStatus::UpToDate);
    assert_eq!(run_stage(Stage::Baseline, &changed, false).unwrap(), StageStatus::Ran);
}

#[test]
fn recluster_before_embed_names_the_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), System::Triplet);
    for stage in [Stage::Synth, Stage::Discover, Stage::Baseline, Stage::Mine, Stage::Train] {
        run_stage(stage, &cfg, false).unwrap();
    }
    let err = run_stage(Stage::Recluster, &cfg, false).unwrap_err().to_string();
    assert!(err.contains("missing embeddings"), "{err}");
    let err = run_stage(Stage::Evaluate, &tiny(&dir.path().join("fresh"), System::Baseline), false)
        .unwrap_err()
        .to_string();
    assert!(err.contains("missing"), "{err}");
}

#[test]
fn every_system_variant_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), System::Baseline);
    let mut names = Vec::new();
    for (system, extraction) in [
        (System::Baseline, Extraction::Hybrid),
        (System::Siamese, Extraction::Eom),
        (System::Siamese, Extraction::Hybrid),
        (System::Triplet, Extraction::Eom),
        (System::Triplet, Extraction::Hybrid),
    ] {
        cfg.system = system;
        cfg.extraction = extraction;
        let report = run_all(&cfg, false).unwrap();
        assert_eq!(report.system, cfg.variant());
        assert_eq!(read_report(&cfg).unwrap(), report);
        names.push(report.system);
    }
    assert_eq!(names, ["baseline", "siamese-eom", "siamese-hybrid", "triplet-eom", "triplet-hybrid"]);
}

#[test]
fn stage_names_round_trip() {
    for s in Stage::ALL {
        assert_eq!(s.to_string().parse::<Stage>().unwrap(), s);
    }
    assert!("nope".parse::<Stage>().is_err());
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), System::Baseline);
    cfg.mining.thresholds.thres_mu_s = -1.0;
    assert!(cfg.validate().is_err());
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"seed": 1, "bogus": 2}"#).unwrap();
    assert!(PipelineConfig::load(&path).is_err());
}
