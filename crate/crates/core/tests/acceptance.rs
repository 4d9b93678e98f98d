//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use loadlens::eval::{mae, mape, peak_mape, rmse};
use loadlens::explain::{shapley_exact, shapley_tree, Attribution, ValueFunction};
use loadlens::features::{build_matrix, calendar, BuildOptions, FeatureKind, HolidayCalendar};
use loadlens::fixture::{generate, write_fixture, FixtureOptions};
use loadlens::ingest::{align, parse_load_reader, regularize, HourlySeries, SeriesSchema};
use loadlens::models::lstm::loss_and_gradient;
use loadlens::models::{
    fit_gbdt, fit_ols, Direction, GbdtParams, Growth, LstmWeights, ModelArtifact, ModelPayload, TrainingMeta,
};
use loadlens::pipeline::{Overrides, Pipeline, PipelineConfig};
use loadlens::time::{HourlyAxis, TimeRange, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAP_TOL: f64 = 1e-9;
const OLS_TOL: f64 = 1e-8;
const RMSE_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const METRIC_TOL: f64 = 1e-12;
const PEAK_RATIO: f64 = 2.0;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn meta() -> TrainingMeta {
    TrainingMeta {
        hyperparameters: serde_json::Value::Null,
        train_start: Timestamp::from_unix(0),
        train_end: Timestamp::from_unix(0),
        train_rows: 0,
        seed: 0,
    }
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("x{j}")).collect()
}

fn random_columns(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|j| {
            (0..n)
                .map(|_| {
                    // Every third feature is discrete so that ties and shared
                    // thresholds occur.
                    if j % 3 == 2 {
                        rng.gen_range(0..4) as f64
                    } else {
                        rng.gen_range(-2.0..2.0)
                    }
                })
                .collect()
        })
        .collect()
}

fn random_ensemble(rng: &mut ChaCha8Rng, d: usize) -> (ModelArtifact, Vec<Vec<f64>>) {
    let n = 120;
    let cols = random_columns(rng, d, n);
    let target: Vec<f64> = (0..n)
        .map(|i| {
            let x = |j: usize| cols[j % d][i];
            (x(0) > 0.3) as i32 as f64 * 3.0 + x(1) * x(2 % d) + (x(d - 1) * 2.0).sin() + rng.gen_range(-0.1..0.1)
        })
        .collect();
    let m = common::matrix(cols, target);
    let params = GbdtParams {
        rounds: rng.gen_range(1..=10),
        max_depth: rng.gen_range(1..=3),
        learning_rate: 0.3,
        bins: rng.gen_range(4..=32),
        growth: if rng.gen_bool(0.5) { Growth::LevelWise } else { Growth::LeafWise },
        max_leaves: rng.gen_range(2..=8),
        ..GbdtParams::default()
    };
    let e = fit_gbdt(&m, &params).expect("fit");
    let rows = m.rows();
    (ModelArtifact::new(ModelPayload::Gbdt(e), m.names.clone(), meta()), rows)
}

fn max_phi_diff(a: &Attribution, b: &Attribution) -> f64 {
    a.phi.iter().zip(&b.phi).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.gen_range(2..=8);
        let (artifact, rows) = random_ensemble(&mut rng, d);
        let bg_size = rng.gen_range(1..=16);
        let background: Vec<Vec<f64>> = (0..bg_size).map(|_| rows[rng.gen_range(0..rows.len())].clone()).collect();
        let vf = ValueFunction::from_artifact(&artifact, background.clone()).map_err(|e| e.to_string())?;
        for _ in 0..4 {
            let x = rows[rng.gen_range(0..rows.len())].clone();
            let ts = Timestamp::from_unix(0);
            let tree = shapley_tree(&artifact, &x, &background, ts).map_err(|e| e.to_string())?;
            let exact = shapley_exact(&vf, &x, ts, &names(d)).map_err(|e| e.to_string())?;
            worst = worst.max(max_phi_diff(&tree, &exact));
            worst = worst.max((tree.base_value - exact.base_value).abs());
        }
    }
    let elapsed = started.elapsed();
    ensure(worst < SHAP_TOL, || format!("max |phi_tree - phi_exact| = {worst:.3e}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("50 ensembles, max diff {worst:.2e} < {SHAP_TOL:e}, {:.2}s < 60s", elapsed.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    // 100 rows on linear models, 100 on tree ensembles.
    for k in 0..20 {
        let d = rng.gen_range(2..=8);
        let (artifact, rows) = if k % 2 == 0 {
            let cols = random_columns(&mut rng, d, 80);
            let target: Vec<f64> = (0..80).map(|i| cols.iter().map(|c| c[i]).sum::<f64>() + rng.gen_range(-1.0..1.0)).collect();
            let m = common::matrix(cols, target);
            let lm = fit_ols(&m).map_err(|e| e.to_string())?;
            (ModelArtifact::new(ModelPayload::Linear(lm), m.names.clone(), meta()), m.rows())
        } else {
            random_ensemble(&mut rng, d)
        };
        let background: Vec<Vec<f64>> = (0..12).map(|_| rows[rng.gen_range(0..rows.len())].clone()).collect();
        let vf = ValueFunction::from_artifact(&artifact, background.clone()).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let x = rows[rng.gen_range(0..rows.len())].clone();
            let ts = Timestamp::from_unix(0);
            let a = match artifact.payload {
                ModelPayload::Gbdt(_) => shapley_tree(&artifact, &x, &background, ts),
                _ => shapley_exact(&vf, &x, ts, &names(d)),
            }
            .map_err(|e| e.to_string())?;
            let f = artifact.predict_row(&x).map_err(|e| e.to_string())?;
            worst = worst.max((a.base_value + a.phi.iter().sum::<f64>() - f).abs());
            checked += 1;
        }
    }
    ensure(worst < SHAP_TOL, || format!("max |base + sum(phi) - f(x)| = {worst:.3e}"))?;
    Ok(format!("{checked} rows, max gap {worst:.2e} < {SHAP_TOL:e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let d = rng.gen_range(1..=10);
        let cols = random_columns(&mut rng, d, 60);
        let target: Vec<f64> = (0..60).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let m = common::matrix(cols, target);
        let lm = fit_ols(&m).map_err(|e| e.to_string())?;
        let beta = lm.coefficients.clone();
        let artifact = ModelArtifact::new(ModelPayload::Linear(lm), m.names.clone(), meta());
        let rows = m.rows();
        let background: Vec<Vec<f64>> = rows[..rng.gen_range(1..=30)].to_vec();
        let means: Vec<f64> =
            (0..d).map(|j| background.iter().map(|r| r[j]).sum::<f64>() / background.len() as f64).collect();
        let vf = ValueFunction::from_artifact(&artifact, background).map_err(|e| e.to_string())?;
        for x in rows.iter().skip(30).take(5) {
            let a = shapley_exact(&vf, x, Timestamp::from_unix(0), &names(d)).map_err(|e| e.to_string())?;
            for j in 0..d {
                worst = worst.max((a.phi[j] - beta[j] * (x[j] - means[j])).abs());
            }
        }
    }
    ensure(worst < SHAP_TOL, || format!("max |phi - beta (x - mean)| = {worst:.3e}"))?;
    Ok(format!("30 models, max diff {worst:.2e} < {SHAP_TOL:e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (d, n) = (10, 500);
    let cols: Vec<Vec<f64>> = (0..d).map(|_| (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let beta: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let beta0 = 4.25;
    let y: Vec<f64> = (0..n).map(|i| beta0 + (0..d).map(|j| beta[j] * cols[j][i]).sum::<f64>()).collect();
    let lm = fit_ols(&common::matrix(cols.clone(), y.clone())).map_err(|e| e.to_string())?;
    let coef_err = lm
        .coefficients
        .iter()
        .zip(&beta)
        .map(|(a, b)| (a - b).abs())
        .fold((lm.intercept - beta0).abs(), f64::max);

    // Orthogonality is checked on a noisy target, where the residual is not
    // trivially zero.
    let noisy: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-5.0..5.0)).collect();
    let fit = fit_ols(&common::matrix(cols.clone(), noisy.clone())).map_err(|e| e.to_string())?;
    let resid: Vec<f64> = (0..n)
        .map(|i| noisy[i] - fit.predict_row(&cols.iter().map(|c| c[i]).collect::<Vec<_>>()))
        .collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ones = vec![1.0; n];
    let mut ortho: f64 = 0.0;
    for c in std::iter::once(&ones).chain(&cols) {
        let dot: f64 = c.iter().zip(&resid).map(|(a, b)| a * b).sum();
        ortho = ortho.max(dot.abs() / (norm(c) * norm(&resid)));
    }
    ensure(coef_err < OLS_TOL, || format!("coefficient error {coef_err:.3e}"))?;
    ensure(ortho < OLS_TOL, || format!("relative |X'r| = {ortho:.3e}"))?;
    Ok(format!("coef err {coef_err:.2e}, relative |X'r| {ortho:.2e}, both < {OLS_TOL:e}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 600;
    let x: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut with_nan = x.clone();
    for i in (0..n).step_by(7) {
        with_nan[1][i] = f64::NAN;
    }
    let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.2..0.2)).collect();
    let tasks: Vec<(&str, Vec<Vec<f64>>, Vec<f64>)> = vec![
        ("linear", x.clone(), (0..n).map(|i| 3.0 * x[0][i] - 2.0 * x[1][i] + noise[i]).collect()),
        ("interaction", x.clone(), (0..n).map(|i| (x[0][i] > 0.0) as i32 as f64 * x[2][i] * 5.0 + noise[i]).collect()),
        ("sine-with-missing", with_nan, (0..n).map(|i| (4.0 * x[1][i]).sin() + x[3][i].powi(2) + noise[i]).collect()),
    ];
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_recompute: f64 = 0.0;
    for (name, cols, target) in &tasks {
        let m = common::matrix(cols.clone(), target.clone());
        for growth in [Growth::LevelWise, Growth::LeafWise] {
            let params = GbdtParams { rounds: 100, growth, max_depth: 4, ..GbdtParams::default() };
            let e = fit_gbdt(&m, &params).map_err(|e| e.to_string())?;
            // Entry 0 is the base score alone.
            ensure(e.train_rmse.len() == 101, || format!("{name} {growth:?}: {} entries", e.train_rmse.len()))?;
            for w in e.train_rmse.windows(2) {
                worst_rise = worst_rise.max(w[1] - w[0]);
            }
            let rows = m.rows();
            for r in [0usize, 1, 10, 50, 100] {
                let sse: f64 = rows
                    .iter()
                    .zip(target)
                    .map(|(row, y)| (e.predict_row_truncated(row, r) - y).powi(2))
                    .sum();
                worst_recompute = worst_recompute.max(((sse / n as f64).sqrt() - e.train_rmse[r]).abs());
            }
        }
    }
    ensure(worst_rise <= RMSE_TOL, || format!("training RMSE rose by {worst_rise:.3e}"))?;
    ensure(worst_recompute < 1e-9, || format!("recorded RMSE off by {worst_recompute:.3e}"))?;
    Ok(format!("3 tasks x 2 growth modes x 100 rounds, max rise {worst_rise:.2e} <= {RMSE_TOL:e}"))
}

fn criterion_6() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for (k, dir) in [Direction::Forward, Direction::Bidirectional].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(60 + k as u64);
        let mut w = LstmWeights::zeros(3, 4, dir);
        let flat: Vec<f64> = (0..w.n_params()).map(|_| rng.gen_range(-0.6..0.6)).collect();
        w.unflatten(&flat);
        let seqs: Vec<Vec<Vec<f64>>> =
            (0..2).map(|_| (0..5).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()).collect();
        let batch: Vec<(Vec<&[f64]>, f64)> =
            seqs.iter().map(|s| (s.iter().map(Vec::as_slice).collect(), rng.gen_range(-1.0..1.0))).collect();
        let (_, analytic) = loss_and_gradient(&w, &batch);
        for p in 0..flat.len() {
            let mut probe = w.clone();
            let mut v = flat.clone();
            v[p] += GRAD_STEP;
            probe.unflatten(&v);
            let plus = loss_and_gradient(&probe, &batch).0;
            v[p] -= 2.0 * GRAD_STEP;
            probe.unflatten(&v);
            let minus = loss_and_gradient(&probe, &batch).0;
            let numeric = (plus - minus) / (2.0 * GRAD_STEP);
            let rel = (numeric - analytic[p]).abs() / numeric.abs().max(analytic[p].abs()).max(1e-6);
            worst = worst.max(rel);
            params += 1;
        }
    }
    ensure(worst < GRAD_TOL, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("D=3 H=4 L=5, {params} parameters over both directions, max rel err {worst:.2e} < {GRAD_TOL:e}"))
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let floor = 1.0;
    let mut worst: f64 = 0.0;
    for v in 0..1000 {
        let n = rng.gen_range(1..=300);
        let y: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.05) { rng.gen_range(-0.5..0.5) } else { rng.gen_range(100.0..5000.0) })
            .collect();
        let yhat: Vec<f64> = y.iter().map(|a| a + rng.gen_range(-200.0..200.0)).collect();
        let abs: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| (a - b).abs()).collect();
        let o_mae = abs.iter().sum::<f64>() / n as f64;
        let o_rmse = (abs.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
        let pct = |i: usize| abs[i] / if y[i].abs() < floor { floor } else { y[i].abs() };
        let o_mape = 100.0 * (0..n).map(pct).sum::<f64>() / n as f64;
        // Top ⌈n/20⌉ by brute-force rank: an index's rank is the number of
        // indices that beat it.
        let k = (n + 19) / 20;
        let peaks: Vec<usize> = (0..n)
            .filter(|&i| (0..n).filter(|&j| y[j] > y[i] || (y[j] == y[i] && j < i)).count() < k)
            .collect();
        let o_peak = 100.0 * peaks.iter().map(|&i| pct(i)).sum::<f64>() / k as f64;

        let got_mae = mae(&y, &yhat).unwrap();
        let got_rmse = rmse(&y, &yhat).unwrap();
        let got_mape = mape(&y, &yhat, floor).unwrap().percent;
        let got_peak = peak_mape(&y, &yhat, 0.05, floor).unwrap().percent;
        for (got, want) in [(got_mae, o_mae), (got_rmse, o_rmse), (got_mape, o_mape), (got_peak, o_peak)] {
            worst = worst.max(rel_diff(got, want));
        }
        ensure(got_rmse >= got_mae, || format!("vector {v}: rmse {got_rmse} < mae {got_mae}"))?;
    }
    ensure(worst < METRIC_TOL, || format!("max relative difference {worst:.3e}"))?;
    Ok(format!("1000 vectors, max rel diff {worst:.2e} < {METRIC_TOL:e}, rmse >= mae on all"))
}

fn leakage_dataset(hours: usize, bump: Option<(usize, f64)>) -> loadlens::ingest::AlignedDataset {
    let start = Timestamp::from_central(2023, 4, 1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tavg: Vec<f64> = (0..hours).map(|h| 70.0 + 15.0 * (h as f64 / 24.0 * std::f64::consts::TAU).sin() + rng.gen_range(-3.0..3.0)).collect();
    let mut load: Vec<f64> = tavg.iter().map(|t| 1000.0 + 20.0 * (t - 60.0).abs() + rng.gen_range(-10.0..10.0)).collect();
    if let Some((i, delta)) = bump {
        load[i] += delta;
    }
    let series = |name: &str, v: Vec<f64>| HourlySeries::new(name, start, v);
    let weather = BTreeMap::from([
        ("tavg".to_string(), series("tavg", tavg.clone())),
        ("tmin".to_string(), series("tmin", tavg.iter().map(|t| t - 9.0).collect())),
        ("tmax".to_string(), series("tmax", tavg.iter().map(|t| t + 9.0).collect())),
        ("prcp".to_string(), series("prcp", (0..hours).map(|h| ((h % 97) == 0) as i32 as f64).collect())),
        ("snow".to_string(), series("snow", vec![0.0; hours])),
    ]);
    align(&series("load", load), &weather).unwrap()
}

fn criterion_8() -> Outcome {
    let hours = 2000;
    let train_hours = 1400;
    let config = PipelineConfig::parse(loadlens::fixture::FIXTURE_CONFIG).map_err(|e| e.to_string())?;
    let specs = config.refined_specs();
    let base = leakage_dataset(hours, None);
    let train = TimeRange::new(base.axis.at(0), base.axis.at(train_hours - 1));
    let reference = build_matrix(&base, &specs, &train, BuildOptions::default()).map_err(|e| e.to_string())?;
    let mut sensitive = 0;
    for t in train_hours..hours {
        let bumped = leakage_dataset(hours, Some((t, 750.0)));
        let m = build_matrix(&bumped, &specs, &train, BuildOptions::default()).map_err(|e| e.to_string())?;
        let cut = base.axis.at(t);
        for r in 0..m.n_rows() {
            let changed = (0..m.n_features()).find(|&j| m.columns[j][r].to_bits() != reference.columns[j][r].to_bits());
            if m.timestamp(r) <= cut {
                if let Some(j) = changed {
                    return Err(format!("perturbing hour {t} changed `{}` at row {r}", m.names[j]));
                }
            } else if changed.is_some() {
                sensitive += 1;
            }
        }
    }
    // Lags and rolling windows must still move after the perturbed hour.
    ensure(sensitive > 0, || "no feature reacted to any perturbation".into())?;
    Ok(format!(
        "{} perturbed test hours x {} features: no change at or before the hour",
        hours - train_hours,
        reference.n_features()
    ))
}

fn engineered(config: &PipelineConfig, name: &str) -> bool {
    config.refined_specs().iter().any(|s| {
        s.name == name && matches!(s.kind, FeatureKind::Spike { .. } | FeatureKind::TempSpike { .. } | FeatureKind::Interaction { .. })
    })
}

fn criteria_9_and_10() -> (Outcome, Outcome) {
    let dir = tempfile::TempDir::new().unwrap();
    let started = Instant::now();
    let fixture = generate(&FixtureOptions::default());
    let config_path = write_fixture(&fixture, dir.path()).unwrap();
    // The loop proper; per-feature ablation is covered by the pipeline tests.
    let text = std::fs::read_to_string(&config_path).unwrap().replace("[refine]", "[refine]\nablation = []");
    std::fs::write(&config_path, text).unwrap();

    let run = |out: &str| -> Result<(loadlens::pipeline::RefineReport, Vec<Vec<u8>>), String> {
        let p = Pipeline::open(&config_path, Overrides { out: Some(dir.path().join(out)), ..Default::default() })
            .map_err(|e| e.to_string())?;
        let report = p.refine().map_err(|e| e.to_string())?;
        let files = [&report.before.run_id, &report.after.run_id]
            .iter()
            .map(|id| std::fs::read(p.run_dir(id).join("metrics.json")).unwrap())
            .collect();
        Ok((report, files))
    };
    let first = run("first");
    let elapsed = started.elapsed();

    let c9 = first.as_ref().map_err(|e| e.clone()).and_then(|(report, _)| {
        let config = PipelineConfig::parse_unchecked(&std::fs::read_to_string(&config_path).unwrap()).unwrap();
        let before = report.before.metrics.test.peak_mape;
        let after = report.after.metrics.test.peak_mape;
        let ratio = before / after;
        let top5: Vec<&String> = report.after.global_ranking.iter().take(5).collect();
        let hit = top5.iter().find(|n| engineered(&config, n));
        ensure(ratio >= PEAK_RATIO, || format!("peak MAPE {before:.3}% -> {after:.3}% is only {ratio:.2}x"))?;
        ensure(hit.is_some(), || format!("no spike or interaction feature in top 5 {top5:?}"))?;
        ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
        Ok(format!(
            "peak MAPE {before:.2}% -> {after:.2}% ({ratio:.2}x >= {PEAK_RATIO}x); `{}` ranks #{} globally; {:.1}s < 300s",
            hit.unwrap(),
            top5.iter().position(|n| n == hit.unwrap()).unwrap() + 1,
            elapsed.as_secs_f64()
        ))
    });

    let c10 = first.map_err(|e| e.clone()).and_then(|(r1, f1)| {
        let (r2, f2) = run("second")?;
        ensure(f1 == f2, || "metrics.json differs between runs".into())?;
        ensure(r1 == r2, || "refinement reports differ between runs".into())?;
        Ok(format!("2 end-to-end runs: byte-identical metrics.json for {} and {}", r1.before.run_id, r1.after.run_id))
    });
    (c9, c10)
}

fn criterion_11() -> Outcome {
    let cal = HolidayCalendar::us_federal();
    let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).unwrap();
    let expected = [
        (2023, vec![d(2023, 1, 2), d(2023, 1, 16), d(2023, 2, 20), d(2023, 5, 29), d(2023, 6, 19), d(2023, 7, 4), d(2023, 9, 4), d(2023, 10, 9), d(2023, 11, 10), d(2023, 11, 23), d(2023, 12, 25)]),
        (2024, vec![d(2024, 1, 1), d(2024, 1, 15), d(2024, 2, 19), d(2024, 5, 27), d(2024, 6, 19), d(2024, 7, 4), d(2024, 9, 2), d(2024, 10, 14), d(2024, 11, 11), d(2024, 11, 28), d(2024, 12, 25)]),
    ];
    for (year, dates) in &expected {
        let start = Timestamp::from_central(*year, 1, 1, 0).unwrap();
        let end = Timestamp::from_central(*year, 12, 31, 23).unwrap();
        let axis = HourlyAxis::spanning(start, end).unwrap();
        let flags = calendar::holiday_column(&axis, &cal);
        let mut flagged: Vec<NaiveDate> = axis.iter().zip(&flags).filter(|(_, f)| **f == 1.0).map(|(t, _)| t.local().date()).collect();
        flagged.dedup();
        ensure(&flagged == dates, || format!("{year}: flagged {flagged:?}"))?;
        let mut observed: Vec<NaiveDate> = cal.observed(*year).into_iter().map(|(_, d)| d).collect();
        observed.sort();
        ensure(&observed == dates, || format!("{year}: observed list {observed:?}"))?;
        for date in dates {
            let hours = axis.iter().zip(&flags).filter(|(t, f)| t.local().date() == *date && **f == 1.0).count();
            ensure(hours == 24, || format!("{date}: {hours} flagged hours"))?;
        }
    }

    ensure(Timestamp::from_central(2024, 3, 10, 2).is_err(), || "02:00 on 2024-03-10 accepted".into())?;
    ensure(Timestamp::parse("2024-03-10T02:00:00").is_err(), || "naive 02:00 on 2024-03-10 parsed".into())?;
    ensure(Timestamp::parse("2024-11-03T01:00:00").is_err(), || "ambiguous naive 01:00 parsed".into())?;

    let csv = "timestamp,load\n\
        2024-11-03T00:00:00-05:00,10\n\
        2024-11-03T01:00:00-05:00,11\n\
        2024-11-03T01:00:00-06:00,12\n\
        2024-11-03T02:00:00-06:00,13\n";
    let schema = SeriesSchema { timestamp_column: "timestamp".into(), value_column: "load".into() };
    let raw = parse_load_reader(csv.as_bytes(), std::path::Path::new("fall-back.csv"), &schema).map_err(|e| e.to_string())?;
    let hourly = regularize(&raw, 3).map_err(|e| e.to_string())?;
    ensure(hourly.values() == [10.0, 11.0, 12.0, 13.0], || format!("fall-back series {:?}", hourly.values()))?;
    ensure(raw.duplicates_collapsed == 0, || "fall-back hours were merged".into())?;
    Ok("22 observed holidays on their dates; 2024-03-10 02:00 rejected; fall-back 01:00 CDT/CST kept distinct".into())
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let guard = |f: &dyn Fn() -> Outcome| -> Outcome {
        catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        })
    };
    results.push((1, "tree attributions equal exact enumeration", guard(&criterion_1)));
    results.push((2, "local accuracy", guard(&criterion_2)));
    results.push((3, "linear closed form", guard(&criterion_3)));
    results.push((4, "least-squares recovery", guard(&criterion_4)));
    results.push((5, "boosting RMSE monotone", guard(&criterion_5)));
    results.push((6, "recurrent gradient check", guard(&criterion_6)));
    results.push((7, "metric oracles", guard(&criterion_7)));
    results.push((8, "no-leakage audit", guard(&criterion_8)));
    let (c9, c10) = catch_unwind(criteria_9_and_10).unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into())));
    results.push((9, "fixture peak-MAPE reduction", c9));
    results.push((10, "end-to-end determinism", c10));
    results.push((11, "holidays and DST", guard(&criterion_11)));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n:>2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n:>2} {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
