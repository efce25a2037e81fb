use rlt_core::advval::{self, AdvConfig, AdvError, Verdict};
use rlt_core::synth::{self, SynthSpec};
use rlt_core::table::{self, SplitPlan, Table};

fn spec() -> SynthSpec {
    SynthSpec {
        n_rows_per_day: 1500,
        first_day: 50,
        last_day: 60,
        ..SynthSpec::default()
    }
}

fn train_and_test(spec: &SynthSpec) -> (Table, Table) {
    let (data, _) = synth::generate(spec).unwrap();
    let plan = SplitPlan::new(spec.first_day..spec.last_day, spec.last_day, None).unwrap();
    let parts = table::split(&data, &plan).unwrap();
    (parts.train, parts.valid)
}

#[test]
fn planted_shift_is_the_only_drop() {
    let spec = spec();
    let (train, test) = train_and_test(&spec);
    let report = advval::audit(&train, &test, &AdvConfig::default()).unwrap();
    let shifted = spec.continuous_name(spec.shifted_features[0].column);
    assert_eq!(report.dropped(), vec![shifted.as_str()]);
    assert_eq!(report.features.len(), train.feature_names().len());
    for f in &report.features {
        let auc = f.auc.unwrap();
        assert_eq!(f.verdict == Verdict::Drop, auc >= 0.75, "{}", f.name);
    }
}

#[test]
fn same_distribution_halves_score_near_chance() {
    // One day split into disjoint halves: identical distributions.
    let spec = SynthSpec {
        shifted_features: vec![],
        ..spec()
    };
    let (data, _) = synth::generate(&spec).unwrap();
    let n = data.n_rows();
    let a = data.take_rows(&(0..n).step_by(2).collect::<Vec<_>>());
    let b = data.take_rows(&(1..n).step_by(2).collect::<Vec<_>>());
    let report = advval::audit(&a, &b, &AdvConfig::default()).unwrap();
    assert!(report.dropped().is_empty());
    for f in &report.features {
        let auc = f.auc.unwrap();
        assert!((0.44..=0.56).contains(&auc), "{} auc {auc}", f.name);
    }
}

#[test]
fn empty_test_fails_before_feature_work() {
    let (train, test) = train_and_test(&spec());
    let empty = test.take_rows(&[]);
    assert!(matches!(
        advval::audit(&train, &empty, &AdvConfig::default()),
        Err(AdvError::EmptySide(_))
    ));
}

#[test]
fn filtering_removes_exactly_the_dropped_features() {
    let (train, test) = train_and_test(&spec());
    let mut report = advval::audit(&train, &test, &AdvConfig::default()).unwrap();
    let same = advval::filter_features(
        &advval::AdvReport {
            features: report
                .features
                .iter()
                .cloned()
                .map(|mut f| {
                    f.verdict = Verdict::Keep;
                    f
                })
                .collect(),
            ..report.clone()
        },
        &train,
    );
    assert_eq!(same.schema(), train.schema());

    for name in ["f_2", "f_9"] {
        report.features.iter_mut().find(|f| f.name == name).unwrap().verdict = Verdict::Drop;
    }
    let dropped: Vec<String> = report.dropped().into_iter().map(String::from).collect();
    let filtered = advval::filter_features(&report, &train);
    let expected: Vec<String> = train
        .schema()
        .names()
        .filter(|n| !dropped.iter().any(|d| d == n))
        .map(String::from)
        .collect();
    assert_eq!(filtered.schema().names().collect::<Vec<_>>(), expected);
    assert_eq!(dropped.len(), 3);
}

#[test]
fn reports_are_deterministic() {
    let (train, test) = train_and_test(&spec());
    let cfg = AdvConfig {
        seed: 9,
        ..AdvConfig::default()
    };
    let a = advval::audit(&train, &test, &cfg).unwrap();
    let b = advval::audit(&train, &test, &cfg).unwrap();
    assert_eq!(a, b);
}
