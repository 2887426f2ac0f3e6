//! Cross-module pipeline tests: generation fidelity feeding the divergence
//! estimator, faithful-vs-degraded TSTR evaluation, and group breakdowns.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabsynth_core::fidelity::{self, KlSettings};
use tabsynth_core::generate::{self, GenerationRequest, GenerationStrategy, ReferenceBackend};
use tabsynth_core::schema::{DataTable, TableBuilder};
use tabsynth_core::sim::{simulate, SimSpec};
use tabsynth_core::utility::{self, GbmConfig};

fn bootstrap_resample(table: &DataTable, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = (0..table.n_rows()).map(|_| rng.random_range(0..table.n_rows())).collect();
    table.take_rows(&rows)
}

#[test]
fn bootstrap_resample_has_low_kl_and_degrade_multiplies_it() {
    // 10-covariate fixture
    let spec = SimSpec {
        n_features: 10,
        ..SimSpec::default()
    };
    let real = simulate(&spec, 4000, 31);
    let settings = KlSettings::default();

    let resampled = bootstrap_resample(&real, 7);
    let base = fidelity::kl_table(&real, &resampled, None, settings).unwrap();
    assert!(base.average < 0.05, "resampling noise average {}", base.average);

    let severities: BTreeMap<String, f64> = real
        .schema()
        .features()
        .iter()
        .map(|f| (f.name.clone(), 2.0))
        .collect();
    let degraded = generate::degrade(&real, &severities, 9).unwrap();
    let worse = fidelity::kl_table(&real, &degraded, None, settings).unwrap();
    assert!(
        worse.average >= 5.0 * base.average,
        "degraded {} vs resample {}",
        worse.average,
        base.average
    );
}

#[test]
fn faithful_reference_synthetic_matches_real_trained_across_auroc() {
    // group-free ground truth; label signal flows through the covariates
    let spec = SimSpec {
        n_features: 10,
        weight_scale: 0.5,
        weight_decay: 1.0,
        ..SimSpec::default()
    };
    let real_train = simulate(&spec, 6000, 51);
    let real_test = simulate(&spec, 6000, 52);

    let strategy = GenerationStrategy::conditional();
    let request = GenerationRequest::new(
        real_train.schema_arc(),
        6000,
        strategy,
        real_train.clone(),
        99,
    )
    .unwrap();
    let synthetic = generate::generate(&request, &ReferenceBackend).unwrap().table;

    let config = GbmConfig {
        n_trees: 80,
        max_depth: 3,
        subsample: 1.0,
        ..GbmConfig::default()
    };
    let on_real = utility::eval_across(&real_train, &real_test, &config, 100).unwrap();
    let on_synthetic = utility::eval_across(&synthetic, &real_test, &config, 100).unwrap();
    assert!(
        (on_real.auroc - on_synthetic.auroc).abs() < 0.05,
        "real-trained {} vs synthetic-trained {}",
        on_real.auroc,
        on_synthetic.auroc
    );

    // heavy drift on every covariate must cost at least 0.05 AUROC
    let severities: BTreeMap<String, f64> = synthetic
        .schema()
        .features()
        .iter()
        .filter(|f| f.kind == tabsynth_core::schema::FeatureKind::Continuous)
        .map(|f| (f.name.clone(), 2.0))
        .collect();
    let degraded = generate::degrade(&synthetic, &severities, 3).unwrap();
    let on_degraded = utility::eval_across(&degraded, &real_test, &config, 100).unwrap();
    assert!(
        on_degraded.auroc <= on_synthetic.auroc - 0.05,
        "degraded {} vs faithful {}",
        on_degraded.auroc,
        on_synthetic.auroc
    );
}

#[test]
fn group_based_beats_naive_per_group_kl_on_mixture() {
    let spec = SimSpec {
        n_features: 4,
        group_shift: 1.5,
        ..SimSpec::default()
    };
    let real = simulate(&spec, 4000, 61);
    let settings = KlSettings::default();

    let mut per_strategy: BTreeMap<&str, BTreeMap<String, f64>> = BTreeMap::new();
    for (name, strategy) in [
        ("naive", GenerationStrategy::naive()),
        ("group", GenerationStrategy::group_based("gender")),
    ] {
        let request =
            GenerationRequest::new(real.schema_arc(), 4000, strategy, real.clone(), 17).unwrap();
        let synthetic = generate::generate(&request, &ReferenceBackend).unwrap().table;
        let report = fidelity::kl_by_group(&real, &synthetic, "gender", settings).unwrap();
        per_strategy.insert(
            name,
            report
                .per_group
                .iter()
                .map(|(g, kl)| (g.clone(), kl.average))
                .collect(),
        );
    }
    for (group, naive_kl) in &per_strategy["naive"] {
        let group_kl = per_strategy["group"][group];
        assert!(
            group_kl <= *naive_kl,
            "group {group}: group-based {group_kl} vs naive {naive_kl}"
        );
    }
}

#[test]
fn kl_by_group_flags_groups_missing_from_synthetic() {
    let spec = SimSpec {
        n_features: 3,
        group_shift: 1.0,
        ..SimSpec::default()
    };
    let real = simulate(&spec, 2000, 71);
    // synthetic with only the F group present
    let f_rows = real.rows_with_category(0, 0);
    let only_f = real.take_rows(&f_rows);
    let report = fidelity::kl_by_group(&real, &only_f, "gender", KlSettings::default()).unwrap();
    let m_report = &report.per_group["M"];
    assert!(m_report.evaluated_features.is_empty());
    assert!(m_report
        .skipped_features
        .iter()
        .all(|s| s.reason == "no synthetic rows"));
    assert!(!report.per_group["F"].evaluated_features.is_empty());
}

#[test]
fn single_group_table_degenerates_to_plain_kl() {
    let spec = SimSpec {
        n_features: 3,
        ..SimSpec::default()
    };
    let real = simulate(&spec, 1500, 81);
    let f_rows = real.rows_with_category(0, 0);
    let real_f = real.take_rows(&f_rows);
    let synthetic_f = bootstrap_resample(&real_f, 5);

    let by_group = fidelity::kl_by_group(&real_f, &synthetic_f, "gender", KlSettings::default()).unwrap();
    assert_eq!(by_group.per_group.len(), 1);
    let names: Vec<&str> = real_f
        .schema()
        .features()
        .iter()
        .map(|f| f.name.as_str())
        .filter(|&n| n != "gender")
        .collect();
    let plain = fidelity::kl_table(&real_f, &synthetic_f, Some(&names), KlSettings::default()).unwrap();
    let group_report = by_group.per_group.values().next().unwrap();
    assert!((group_report.average - plain.average).abs() < 1e-12);
}

#[test]
fn generation_log_serializes_next_to_output() {
    // GenerationLog is the structured JSON artifact persisted beside each
    // synthetic CSV; make sure the full round trip works
    let spec = SimSpec {
        n_features: 3,
        ..SimSpec::default()
    };
    let real = simulate(&spec, 500, 91);
    let request = GenerationRequest::new(
        real.schema_arc(),
        200,
        GenerationStrategy::naive(),
        real.clone(),
        1,
    )
    .unwrap();
    let out = generate::generate(&request, &ReferenceBackend).unwrap();
    let json = serde_json::to_string_pretty(&out.log).unwrap();
    assert!(json.contains("\"accepted\": 200"));
    assert!(json.contains("\"rejected\": 0"));

    let dir = tempfile::tempdir().unwrap();
    out.table.write_csv_path(dir.path().join("synthetic.csv")).unwrap();
    std::fs::write(dir.path().join("generation_log.json"), json).unwrap();
    let reloaded =
        DataTable::from_csv_path(dir.path().join("synthetic.csv"), real.schema_arc()).unwrap();
    assert_eq!(reloaded.n_rows(), 200);
}

#[test]
fn small_noisy_fixture_has_wider_ci_than_large_one() {
    let spec = SimSpec {
        n_features: 4,
        weight_scale: 0.25,
        weight_decay: 1.0,
        ..SimSpec::default()
    };
    let config = GbmConfig {
        n_trees: 40,
        subsample: 1.0,
        ..GbmConfig::default()
    };
    let small = utility::eval_within(&simulate(&spec, 1000, 111), &config, 300).unwrap();
    let large = utility::eval_within(&simulate(&spec, 10_000, 112), &config, 300).unwrap();
    let width = |ci: (f64, f64)| ci.1 - ci.0;
    assert!(
        width(small.auroc_ci) > width(large.auroc_ci),
        "small-fixture CI width {} should exceed large-fixture width {}",
        width(small.auroc_ci),
        width(large.auroc_ci)
    );
}

#[test]
fn label_shuffled_within_eval_is_chance_level() {
    let spec = SimSpec {
        n_features: 5,
        weight_scale: 0.8,
        weight_decay: 1.0,
        ..SimSpec::default()
    };
    let real = simulate(&spec, 2000, 101);
    // shuffle labels to destroy the signal
    let labels = real.labels01();
    let mut shuffled: Vec<Option<u8>> = labels.clone();
    use rand::seq::SliceRandom;
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let mut b = TableBuilder::new(real.schema_arc());
    for (row, &label) in shuffled.iter().enumerate() {
        let mut cells = Vec::new();
        for f in 0..real.schema().n_features() {
            if f == real.schema().label_index() {
                cells.push(label.map(|y| tabsynth_core::schema::Value::Categorical(y as u32)));
            } else {
                cells.push(match real.cell(f, row) {
                    tabsynth_core::schema::CellRef::Missing => None,
                    tabsynth_core::schema::CellRef::Continuous(v) => {
                        Some(tabsynth_core::schema::Value::Continuous(v))
                    }
                    tabsynth_core::schema::CellRef::Categorical(s) => {
                        let spec = real.schema().feature(f);
                        let idx = spec.allowed_values.iter().position(|a| a == s).unwrap();
                        Some(tabsynth_core::schema::Value::Categorical(idx as u32))
                    }
                });
            }
        }
        b.push_values(&cells).unwrap();
    }
    let shuffled_table = b.finish();
    let config = GbmConfig {
        n_trees: 50,
        subsample: 1.0,
        ..GbmConfig::default()
    };
    let report = utility::eval_within(&shuffled_table, &config, 100).unwrap();
    assert!(
        (0.4..=0.6).contains(&report.auroc),
        "shuffled-label within auroc {}",
        report.auroc
    );
}
