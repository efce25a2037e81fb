//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the libtest
//! harness so the lines are never captured; exits nonzero if any criterion fails.
//!
//! Derived values are checked against oracles written here, never against
//! the library's own intermediate results.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rlt_core::advval::{self, AdvConfig, Verdict};
use rlt_core::denoise::{self, Origin};
use rlt_core::encoders::{self, EncoderKind, EncoderSpec, FreqWindow, Target};
use rlt_core::gbdt::{self, loss_grad_hess, score_loss, GbdtParams};
use rlt_core::metrics::{self, EvalBatch};
use rlt_core::pipeline::{self, AblationStep, PipelineConfig};
use rlt_core::synth::{self, FeatureRef, LabelModel, LabelTerm, SynthSpec};
use rlt_core::table::{self, Column, ColumnRole, ColumnSpec, Schema, SplitPlan, Table};

type Outcome = Result<String, String>;

/// The last field is the time budget in seconds.
type Criterion = (u32, &'static str, fn() -> Outcome, u64);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1
fn nce_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..2000);
        let rate = rng.random_range(0.01..0.99);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(rate) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let p = labels.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
        let batch = EvalBatch::new(&labels, &vec![p; n]).map_err(err)?;
        let nce = metrics::nce(&batch).map_err(err)?.nce;
        worst = worst.max((nce - 1.0).abs());
    }
    ensure(worst <= 1e-12, || format!("max |nce - 1| = {worst:e}"))?;
    Ok(format!("max |nce - 1| = {worst:.1e} over 200 batches"))
}

// 2
fn auc_matches_pair_counting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for b in 0..1000 {
        let n = rng.random_range(2..=500);
        // Few distinct levels force heavy ties.
        let levels = rng.random_range(1..=20);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let preds: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let (mut twice_wins, mut pos, mut neg) = (0u64, 0u64, 0u64);
        for i in 0..n {
            if labels[i] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    twice_wins += match preds[i].partial_cmp(&preds[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        let brute = (twice_wins as f64 * 0.5) / (pos as f64 * neg as f64);
        let fast = metrics::auc(&EvalBatch::new(&labels, &preds).map_err(err)?).map_err(err)?;
        ensure(fast == brute, || format!("batch {b}: fast {fast} != brute {brute}"))?;
    }
    Ok("1000 tied batches, exact equality".into())
}

// 3
fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let s: f64 = rng.random_range(-12.0..12.0);
        let y = rng.random_bool(0.5) as u8;
        let (g, hess) = loss_grad_hess(s, y);
        let fd_g = (score_loss(s + h, y) - score_loss(s - h, y)) / (2.0 * h);
        let fd_h = (loss_grad_hess(s + h, y).0 - loss_grad_hess(s - h, y).0) / (2.0 * h);
        worst_g = worst_g.max((g - fd_g).abs());
        worst_h = worst_h.max((hess - fd_h).abs());
    }
    ensure(worst_g <= 1e-6 && worst_h <= 1e-4, || {
        format!("grad err {worst_g:e}, hess err {worst_h:e}")
    })?;
    Ok(format!("grad err {worst_g:.1e}, hess err {worst_h:.1e}"))
}

fn separable_spec() -> SynthSpec {
    SynthSpec {
        n_rows_per_day: 2000,
        first_day: 1,
        last_day: 11,
        shifted_features: vec![],
        arithmetic_features: vec![],
        missing_rate: 0.0,
        label_model: LabelModel {
            intercept: 0.0,
            click_intercept: 0.0,
            terms: vec![
                LabelTerm {
                    feature: FeatureRef::Continuous(5),
                    weight: 400.0,
                },
                LabelTerm {
                    feature: FeatureRef::Continuous(8),
                    weight: -300.0,
                },
            ],
        },
        seed: 4,
        ..SynthSpec::default()
    }
}

// 4
fn gbdt_learnability() -> Outcome {
    let (data, _) = synth::generate(&separable_spec()).map_err(err)?;
    let parts = table::split(&data, &SplitPlan::new(1..=10, 11, None).map_err(err)?).map_err(err)?;
    let (train, valid) = (parts.train, parts.valid);
    ensure(train.n_rows() == 20_000 && valid.n_rows() == 2_000, || {
        "unexpected split sizes".into()
    })?;
    let params = GbdtParams {
        num_iterations: 200,
        ..GbdtParams::default()
    };
    let model = gbdt::fit(&params, &train, &valid, &train.feature_names()).map_err(err)?;
    let p = model.predict(&valid).map_err(err)?;
    let labels = valid.install_labels().unwrap();
    let summary = metrics::summarize(labels, &p).map_err(err)?;
    let curve = &model.history.train_logloss;
    let worst_rise = curve.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    ensure(summary.auc >= 0.99, || format!("valid auc {}", summary.auc))?;
    ensure(summary.logloss <= 0.1, || format!("valid logloss {}", summary.logloss))?;
    ensure(worst_rise <= 1e-9, || format!("train logloss rose by {worst_rise:e}"))?;
    Ok(format!(
        "auc {:.4}, logloss {:.4}, {} trees",
        summary.auc,
        summary.logloss,
        model.trees.len()
    ))
}

fn noisy_small_data(seed: u64) -> Result<(Table, Table), String> {
    let spec = SynthSpec {
        n_rows_per_day: 1500,
        first_day: 1,
        last_day: 8,
        cat_cardinalities: vec![50, 8],
        n_cont: 6,
        shifted_features: vec![],
        arithmetic_features: vec![],
        latent_groups: vec![],
        label_model: LabelModel {
            intercept: -1.0,
            click_intercept: 0.0,
            terms: vec![
                LabelTerm {
                    feature: FeatureRef::Categorical(0),
                    weight: 0.5,
                },
                LabelTerm {
                    feature: FeatureRef::Continuous(0),
                    weight: 0.7,
                },
            ],
        },
        seed,
        ..SynthSpec::default()
    };
    let (data, _) = synth::generate(&spec).map_err(err)?;
    let parts = table::split(&data, &SplitPlan::new(1..=6, 7, None).map_err(err)?).map_err(err)?;
    Ok((parts.train, parts.valid))
}

// 5
fn early_stopping_contract() -> Outcome {
    let (train, valid) = noisy_small_data(5)?;
    let features = train.feature_names();
    let params = GbdtParams {
        num_leaves: 63,
        learning_rate: 0.2,
        early_stopping_rounds: 100,
        ..GbdtParams::default()
    };
    let model = gbdt::fit(&params, &train, &valid, &features).map_err(err)?;
    let curve = &model.history.valid_logloss;
    // First index of the minimum; index 0 is the bare base score.
    let argmin = curve
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
        )
        .0;
    ensure(model.best_iteration == argmin && model.trees.len() == argmin, || {
        format!(
            "best {} trees {} argmin {argmin}",
            model.best_iteration,
            model.trees.len()
        )
    })?;
    ensure(curve.len() == argmin + 101, || {
        format!("curve has {} points, expected {}", curve.len(), argmin + 101)
    })?;
    // A run capped exactly 100 iterations past the optimum keeps the same trees.
    let capped = GbdtParams {
        num_iterations: argmin + 100,
        ..params.clone()
    };
    let again = gbdt::fit(&capped, &train, &valid, &features).map_err(err)?;
    let (a, b) = (model.predict(&valid).map_err(err)?, again.predict(&valid).map_err(err)?);
    ensure(a == b, || "predictions changed with post-optimum iterations".into())?;
    Ok(format!("argmin {argmin}, {} iterations evaluated", curve.len() - 1))
}

// 6
fn adversarial_detection() -> Outcome {
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let spec = SynthSpec {
            seed,
            ..SynthSpec::default()
        };
        let (data, truth) = synth::generate(&spec).map_err(err)?;
        let last = spec.last_day;
        let parts =
            table::split(&data, &SplitPlan::new(spec.first_day..last, last, None).map_err(err)?).map_err(err)?;
        let cfg = AdvConfig {
            seed,
            ..AdvConfig::default()
        };
        let report = advval::audit(&parts.train, &parts.valid, &cfg).map_err(err)?;
        ensure(report.features.len() >= 10, || "fewer than 10 audited features".into())?;
        let shifted = &truth.shifted[0].0;
        let mut max_other = 0.0f64;
        for f in &report.features {
            let auc = f.auc.ok_or_else(|| format!("seed {seed}: {} skipped", f.name))?;
            if &f.name == shifted {
                ensure(auc >= 0.75 && f.verdict == Verdict::Drop, || {
                    format!("seed {seed}: shifted {} auc {auc:.4}", f.name)
                })?;
            } else {
                max_other = max_other.max(auc);
                ensure(auc < 0.65, || format!("seed {seed}: {} auc {auc:.4}", f.name))?;
            }
        }
        lines.push(format!(
            "seed {seed}: shifted {:.3}, others max {max_other:.3}",
            report.get(shifted).and_then(|f| f.auc).unwrap()
        ));
    }
    Ok(lines.join("; "))
}

// 7
fn denoiser_recovery() -> Outcome {
    let spec = SynthSpec::default();
    let (data, truth) = synth::generate(&spec).map_err(err)?;
    let mut out = Vec::new();
    for planted in &truth.deltas {
        let values = data.require(&planted.name).map_err(err)?.as_continuous().unwrap();
        let est = denoise::detect_delta(&planted.name, values, 1e-3, Origin::Zero, 16);
        let rel = (est.delta - planted.delta).abs() / planted.delta;
        ensure(est.detected && rel <= 1e-4, || {
            format!("{}: estimated {} for {}", planted.name, est.delta, planted.delta)
        })?;
        let q = denoise::quantize(values, &est).map_err(err)?;
        let mut finite = 0usize;
        for (row, (v, k)) in values.iter().zip(&q).enumerate() {
            if v.is_finite() {
                finite += 1;
                ensure(*k == Some(planted.multipliers[row] as i64), || {
                    format!("{} row {row}: {k:?} vs {}", planted.name, planted.multipliers[row])
                })?;
            }
        }
        out.push(format!("{} rel err {rel:.1e} on {finite} cells", planted.name));
    }
    let found: Vec<f64> = truth.deltas.iter().map(|d| d.delta).collect();
    ensure(found == vec![0.0385, 0.5711], || format!("planted deltas {found:?}"))?;
    Ok(out.join("; "))
}

fn leakage_table(days: &[u16], tokens: &[String], clicks: &[u8], installs: &[u8]) -> Table {
    let schema = Schema::new(vec![
        ColumnSpec::new("day", ColumnRole::Day),
        ColumnSpec::new("c", ColumnRole::Categorical),
        ColumnSpec::new("click", ColumnRole::LabelClick),
        ColumnSpec::new("install", ColumnRole::LabelInstall),
    ])
    .unwrap();
    Table::new(
        schema,
        vec![
            Column::Day(days.to_vec()),
            encoders::categorical_from_tokens(tokens),
            Column::Label(clicks.to_vec()),
            Column::Label(installs.to_vec()),
        ],
    )
    .unwrap()
}

fn all_encoder_specs() -> Vec<EncoderSpec> {
    let mut kinds: Vec<EncoderKind> = [FreqWindow::PrevDay, FreqWindow::PrevWeek, FreqWindow::AllHistory]
        .into_iter()
        .map(|window| EncoderKind::Frequency { window })
        .collect();
    for target in [Target::Click, Target::Install] {
        kinds.push(EncoderKind::Target { target, smoothing: 1.5 });
    }
    kinds
        .into_iter()
        .map(|kind| EncoderSpec {
            feature: "c".into(),
            kind,
        })
        .collect()
}

fn encode(table: &Table, spec: &EncoderSpec) -> Result<Vec<f64>, String> {
    encoders::fit(table, spec).and_then(|s| s.transform(table)).map_err(err)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

// 8
fn encoder_leakage() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let specs = all_encoder_specs();
    let mut cells = 0usize;
    for t in 0..50 {
        let n = rng.random_range(20..200);
        let n_days = rng.random_range(2..15u16);
        let vocab = rng.random_range(1..8);
        let mut days: Vec<u16> = (0..n).map(|_| rng.random_range(0..n_days)).collect();
        days.sort_unstable();
        let tokens: Vec<String> = (0..n).map(|_| format!("t{}", rng.random_range(0..vocab))).collect();
        let clicks: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        let installs: Vec<u8> = (0..n).map(|_| rng.random_bool(0.2) as u8).collect();
        let base = leakage_table(&days, &tokens, &clicks, &installs);

        // Permute labels inside one day.
        let d = days[rng.random_range(0..n)];
        let rows: Vec<usize> = (0..n).filter(|&i| days[i] == d).collect();
        let mut perm = rows.clone();
        perm.shuffle(&mut rng);
        let (mut pc, mut pi) = (clicks.clone(), installs.clone());
        for (&to, &from) in rows.iter().zip(&perm) {
            pc[to] = clicks[from];
            pi[to] = installs[from];
        }
        let permuted = leakage_table(&days, &tokens, &pc, &pi);

        // Append rows from later days, including unseen tokens.
        let extra = rng.random_range(1..40);
        let mut fdays = days.clone();
        let mut ftokens = tokens.clone();
        let (mut fc, mut fi) = (clicks.clone(), installs.clone());
        for _ in 0..extra {
            fdays.push(n_days + rng.random_range(0..5));
            ftokens.push(format!("t{}", rng.random_range(0..vocab + 3)));
            fc.push(rng.random_bool(0.5) as u8);
            fi.push(rng.random_bool(0.5) as u8);
        }
        let future = leakage_table(&fdays, &ftokens, &fc, &fi);

        for spec in &specs {
            let e_base = encode(&base, spec)?;
            let e_perm = encode(&permuted, spec)?;
            let e_future = encode(&future, spec)?;
            ensure(
                bits(&rows.iter().map(|&i| e_base[i]).collect::<Vec<_>>())
                    == bits(&rows.iter().map(|&i| e_perm[i]).collect::<Vec<_>>()),
                || format!("table {t}: {} leaks day {d} labels", spec.output_name()),
            )?;
            ensure(bits(&e_base) == bits(&e_future[..n]), || {
                format!("table {t}: {} leaks future rows", spec.output_name())
            })?;
            cells += n;
        }
        let freq: Vec<Vec<f64>> = specs[..3].iter().map(|s| encode(&base, s)).collect::<Result<_, _>>()?;
        for (i, ((day, week), all)) in freq[0].iter().zip(&freq[1]).zip(&freq[2]).enumerate() {
            ensure(day <= week && week <= all, || {
                format!("table {t} row {i}: windows not nested")
            })?;
        }
    }
    Ok(format!("50 tables, {cells} encoded cells, 5 encoder kinds"))
}

fn default_dataset(dir: &Path, seed: u64) -> Result<PipelineConfig, String> {
    let spec = SynthSpec {
        seed,
        ..SynthSpec::default()
    };
    let (data, truth) = synth::generate(&spec).map_err(err)?;
    let files = synth::write_dataset(&data, &truth, &dir.join("data")).map_err(err)?;
    let mut config = PipelineConfig::default();
    config.paths.train = files.train;
    config.paths.test = Some(files.test);
    config.paths.output_dir = dir.join("out");
    config.schema = Some(files.schema);
    config.seed = seed;
    Ok(config)
}

// 9
fn ablation_direction() -> Outcome {
    let steps = [
        AblationStep::Vanilla,
        AblationStep::Frequency,
        AblationStep::Denoise,
        AblationStep::TargetEncoding,
    ];
    let mut lines = Vec::new();
    for seed in 1..=3u64 {
        let dir = tempfile::tempdir().map_err(err)?;
        let config = default_dataset(dir.path(), seed)?;
        let rows = pipeline::ablate(&config, &steps).map_err(err)?;
        let losses: Vec<f64> = rows.iter().map(|r| r.valid_logloss).collect();
        for (i, w) in losses.windows(2).enumerate() {
            ensure(w[1] <= w[0] + 0.002, || {
                format!(
                    "seed {seed}: {} regressed {:.6} -> {:.6}",
                    rows[i + 1].variant,
                    w[0],
                    w[1]
                )
            })?;
        }
        lines.push(format!(
            "seed {seed}: {}",
            losses.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>().join(" > ")
        ));
    }
    Ok(lines.join("; "))
}

fn read_artifacts(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(err)? {
        let path = entry.map_err(err)?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if path.is_file() && name != "timings.json" {
            files.push((name, std::fs::read(&path).map_err(err)?));
        }
    }
    files.sort();
    Ok(files)
}

// 10
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let config = default_dataset(dir.path(), 7)?;
    let mut snapshots = Vec::new();
    for threads in [1, 4] {
        pipeline::with_threads(Some(threads), || pipeline::run(&config))
            .map_err(err)?
            .map_err(err)?;
        snapshots.push(read_artifacts(&config.paths.output_dir)?);
    }
    let names: Vec<&str> = snapshots[0].iter().map(|(n, _)| n.as_str()).collect();
    for required in ["predictions_valid.csv", "predictions_test.csv", "report.json"] {
        ensure(names.contains(&required), || format!("{required} missing"))?;
    }
    ensure(snapshots[0] == snapshots[1], || {
        let differing: Vec<&str> = snapshots[0]
            .iter()
            .zip(&snapshots[1])
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.0.as_str())
            .collect();
        format!("artifacts differ between 1 and 4 threads: {differing:?}")
    })?;
    Ok(format!("{} artifacts identical at 1 and 4 threads", names.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "NCE identity", nce_identity, 1),
        (2, "AUC oracle equivalence", auc_matches_pair_counting, 30),
        (3, "gradient checks", gradient_checks, 5),
        (4, "GBDT learnability", gbdt_learnability, 60),
        (5, "early stopping contract", early_stopping_contract, 60),
        (6, "adversarial detection", adversarial_detection, 120),
        (7, "denoiser recovery", denoiser_recovery, 10),
        (8, "encoder leakage suite", encoder_leakage, 30),
        (9, "ablation direction", ablation_direction, 600),
        (10, "determinism", determinism, 600),
    ];
    let mut failed = Vec::new();
    for (id, name, check, budget) in criteria {
        let start = Instant::now();
        let mut outcome = check();
        let elapsed = start.elapsed();
        if outcome.is_ok() && elapsed > Duration::from_secs(budget) {
            outcome = Err(format!("took {elapsed:.1?}, budget {budget}s"));
        }
        match &outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} ({elapsed:.1?}): {detail}"),
            Err(detail) => {
                println!("criterion {id:>2} FAIL  {name} ({elapsed:.1?}): {detail}");
                failed.push(id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
