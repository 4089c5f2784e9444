//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use hsicd_core::change::{select_feature_maps, AdReduction, DifferenceOperator, Selection};
use hsicd_core::ffcae::{extract_dfm, train, FfcaeConfig, FfcaeModel};
use hsicd_core::io::{synthesize_pair, SceneSpec};
use hsicd_core::metrics::{compute_metrics, ConfusionMatrix};
use hsicd_core::nn::{mse_loss, Tensor};
use hsicd_core::pipeline::{self, detect_with_model, evaluate_maps, prepare_pair, RunConfig};
use hsicd_core::stats::{mse_from_ranks, tukey_hsd, RankTable, DEFAULT_Q_CRITICAL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const METHODS: [&str; 8] = ["A", "B", "C", "D", "E", "F", "G", "H"];
const RANK_METRICS: [&str; 5] = ["Accuracy", "Kappa", "f-score", "PWC", "DR"];
const AVERAGE_RANKS: [[f64; 8]; 5] = [
    [7.50, 7.50, 5.25, 4.25, 4.50, 4.00, 1.75, 1.25],
    [7.75, 6.75, 5.50, 4.50, 4.75, 3.75, 1.50, 1.50],
    [7.50, 7.25, 5.50, 4.50, 4.50, 3.75, 1.50, 1.50],
    [7.50, 7.50, 5.25, 4.25, 4.50, 4.00, 1.75, 1.25],
    [6.50, 5.75, 5.50, 5.50, 5.75, 3.75, 1.50, 1.75],
];
/// Upper triangle, row-major: (A,B), (A,C), ..., (G,H).
const PUBLISHED_Q: [f64; 28] = [
    2.11, 10.26, 14.47, 13.42, 18.43, 30.27, 31.06, //
    8.16, 12.37, 11.32, 16.32, 28.16, 28.95, //
    4.21, 3.16, 8.16, 20.00, 20.79, //
    1.05, 3.95, 15.79, 16.58, //
    5.00, 16.84, 17.63, //
    11.84, 12.63, //
    0.79,
];
/// Pairs reported as not significant.
const INSIGNIFICANT: [(usize, usize); 6] = [(0, 1), (2, 3), (2, 4), (3, 4), (3, 5), (6, 7)];

fn reference_ranks() -> RankTable {
    RankTable::from_averages(
        METHODS.iter().map(|s| s.to_string()).collect(),
        RANK_METRICS.iter().map(|s| s.to_string()).collect(),
        &AVERAGE_RANKS.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
    )
    .unwrap()
}

fn tukey_reproduction() -> Outcome {
    let start = Instant::now();
    let result = tukey_hsd(&reference_ranks(), 5, 0.1805, DEFAULT_Q_CRITICAL).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let mut worst = 0.0f64;
    let mut idx = 0;
    let mut partition_ok = true;
    for i in 0..8 {
        for j in i + 1..8 {
            let err = (result.q[i][j] - PUBLISHED_Q[idx]).abs();
            worst = worst.max(err);
            if err > 0.02 {
                return Err(format!(
                    "Q[{}][{}] = {:.4}, expected {:.2}",
                    METHODS[i], METHODS[j], result.q[i][j], PUBLISHED_Q[idx]
                ));
            }
            let expect_sig = !INSIGNIFICANT.contains(&(i, j));
            partition_ok &= result.significant[i][j] == expect_sig;
            idx += 1;
        }
    }
    if !partition_ok {
        return Err("significance partition differs".into());
    }
    if elapsed >= Duration::from_secs(1) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("28 Q values within {worst:.4}, partition exact, {elapsed:?}"))
}

fn mse_recovery() -> Outcome {
    let term = mse_from_ranks(&reference_ranks(), 32.0).map_err(|e| e.to_string())?;
    // Oracle: squared deviations of each method's five metric ranks from
    // that method's mean, summed by hand.
    let mut oracle = 0.0;
    for m in 0..8 {
        let mean = (0..5).map(|k| AVERAGE_RANKS[k][m]).sum::<f64>() / 5.0;
        for row in &AVERAGE_RANKS {
            oracle += (row[m] - mean) * (row[m] - mean);
        }
    }
    if (term.sse - oracle).abs() > 1e-12 {
        return Err(format!("SSE {} disagrees with oracle {}", term.sse, oracle));
    }
    if (term.sse - 5.775).abs() > 0.01 || (term.mse - 0.1805).abs() > 0.001 {
        return Err(format!("SSE {:.4}, MSE {:.5}", term.sse, term.mse));
    }
    Ok(format!("SSE {:.4}, MSE {:.5}", term.sse, term.mse))
}

fn metric_suite() -> Outcome {
    let r = compute_metrics(&ConfusionMatrix::new(50, 10, 30, 10)).map_err(|e| e.to_string())?;
    let expected = [
        ("OA", r.oa, 0.8000),
        ("kappa", r.kappa, 0.5833),
        ("f-score", r.f_score, 0.8333),
        ("PWC", r.pwc, 20.0),
        ("FNR", r.fnr, 0.25),
        ("TNR", r.tnr, 0.75),
        ("DR", r.dr, 0.5625),
    ];
    for (name, got, want) in expected {
        if format!("{got:.4}") != format!("{want:.4}") {
            return Err(format!("{name} = {got:.4}, expected {want:.4}"));
        }
    }
    let p = compute_metrics(&ConfusionMatrix::new(40, 0, 60, 0)).map_err(|e| e.to_string())?;
    if (p.oa, p.kappa, p.f_score, p.pwc, p.fnr, p.tnr, p.dr) != (1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0) {
        return Err(format!("perfect prediction gave {p:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let cm = ConfusionMatrix::new(
            rng.random_range(0..10_000),
            rng.random_range(0..10_000),
            rng.random_range(0..10_000),
            rng.random_range(1..10_000),
        );
        let r = compute_metrics(&cm).map_err(|e| e.to_string())?;
        if (r.pwc - 100.0 * (1.0 - r.oa)).abs() > 1e-9 {
            return Err(format!("PWC identity broken for {cm:?}"));
        }
    }
    Ok("reference matrix, perfect case, 1000 random matrices".into())
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let bands = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = FfcaeModel::new(
        FfcaeConfig {
            seed: 3,
            ..FfcaeConfig::default()
        },
        bands,
    )
    .map_err(|e| e.to_string())?;
    let input = Tensor::from_fn(8, 8, bands, |_, _, _| rng.random_range(0.0..1.0));
    let target = Tensor::from_fn(8, 8, bands, |_, _, _| rng.random_range(0.0..1.0));

    let loss = |model: &FfcaeModel, x: &Tensor| -> f64 {
        let pass = model.forward(x).unwrap();
        mse_loss(&pass.reconstruction, &target).unwrap().0
    };
    let pass = model.forward(&input).map_err(|e| e.to_string())?;
    let (_, grad_out) = mse_loss(&pass.reconstruction, &target).map_err(|e| e.to_string())?;
    let grads = model.backward(&pass, &grad_out).map_err(|e| e.to_string())?;

    let h = 1e-6;
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for layer in 0..6 {
        let n_weights = model.layers()[layer].weights().len();
        let mut picks: Vec<usize> = (0..16).map(|_| rng.random_range(0..n_weights)).collect();
        picks.sort_unstable();
        picks.dedup();
        for i in picks {
            let orig = model.layers()[layer].weights()[i];
            model.layers_mut()[layer].weights_mut()[i] = orig + h;
            let up = loss(&model, &input);
            model.layers_mut()[layer].weights_mut()[i] = orig - h;
            let down = loss(&model, &input);
            model.layers_mut()[layer].weights_mut()[i] = orig;
            let e = rel(grads.layers[layer].weights[i], (up - down) / (2.0 * h));
            worst = worst.max(e);
            checked += 1;
            if e >= 1e-4 {
                return Err(format!("layer {layer} weight {i}: relative error {e:.2e}"));
            }
        }
        for i in 0..model.layers()[layer].biases().len() {
            let orig = model.layers()[layer].biases()[i];
            model.layers_mut()[layer].biases_mut()[i] = orig + h;
            let up = loss(&model, &input);
            model.layers_mut()[layer].biases_mut()[i] = orig - h;
            let down = loss(&model, &input);
            model.layers_mut()[layer].biases_mut()[i] = orig;
            let e = rel(grads.layers[layer].biases[i], (up - down) / (2.0 * h));
            worst = worst.max(e);
            checked += 1;
            if e >= 1e-4 {
                return Err(format!("layer {layer} bias {i}: relative error {e:.2e}"));
            }
        }
    }
    for _ in 0..24 {
        let i = rng.random_range(0..input.len());
        let mut x = input.clone();
        x.values_mut()[i] += h;
        let up = loss(&model, &x);
        x.values_mut()[i] -= 2.0 * h;
        let down = loss(&model, &x);
        let e = rel(grads.input.values()[i], (up - down) / (2.0 * h));
        worst = worst.max(e);
        checked += 1;
        if e >= 1e-4 {
            return Err(format!("input {i}: relative error {e:.2e}"));
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(30) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("{checked} partials, worst relative error {worst:.2e}, {elapsed:?}"))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let pair = synthesize_pair(&SceneSpec {
        height: 64,
        width: 64,
        bands: 32,
        change_fraction: 0.15,
        noise_sigma: 0.02,
        seed: 7,
    })
    .map_err(|e| e.to_string())?;
    let (a, b, _) = prepare_pair(&pair.image1, &pair.image2).map_err(|e| e.to_string())?;
    let (model, _) = train(&a, &b, &FfcaeConfig::default()).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    let mut failed = false;
    for op in [DifferenceOperator::Ad, DifferenceOperator::Sam] {
        let out = detect_with_model(&model, &a, &b, op, AdReduction::Vector, 0).map_err(|e| e.to_string())?;
        let r = evaluate_maps(&out.map, &pair.ground_truth).map_err(|e| e.to_string())?.metrics;
        failed |= r.kappa < 0.8 || r.oa < 0.95;
        summary.push(format!("{op}: kappa {:.4} OA {:.4}", r.kappa, r.oa));
    }
    let elapsed = start.elapsed();
    failed |= elapsed >= Duration::from_secs(300);
    let line = format!("{}, {elapsed:.1?}", summary.join("; "));
    if failed {
        Err(line)
    } else {
        Ok(line)
    }
}

fn identity_pair() -> Outcome {
    let pair = synthesize_pair(&SceneSpec {
        height: 24,
        width: 24,
        bands: 8,
        seed: 3,
        ..SceneSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let trained = train(
        &pair.image1,
        &pair.image2,
        &FfcaeConfig {
            epochs: 5,
            ..FfcaeConfig::default()
        },
    )
    .map_err(|e| e.to_string())?
    .0;
    let fresh = FfcaeModel::new(
        FfcaeConfig {
            seed: 99,
            ..FfcaeConfig::default()
        },
        8,
    )
    .map_err(|e| e.to_string())?;
    for (name, model) in [("trained", &trained), ("untrained", &fresh)] {
        for image in [&pair.image1, &pair.image2] {
            let (d1, d2) = extract_dfm(model, image, image).map_err(|e| e.to_string())?;
            let sel = select_feature_maps(&d1, &d2).map_err(|e| e.to_string())?;
            if !matches!(sel.outcome, Selection::NoDiscriminativeFeatures { .. }) {
                return Err(format!("{name} model kept {} channels", sel.kept().len()));
            }
            for op in [DifferenceOperator::Ad, DifferenceOperator::Sam] {
                let out =
                    detect_with_model(model, image, image, op, AdReduction::Vector, 0).map_err(|e| e.to_string())?;
                if out.map.changed_count() != 0 {
                    return Err(format!("{name} model marked {} pixels", out.map.changed_count()));
                }
            }
        }
    }
    Ok("zero kept channels and an all-unchanged map for trained and untrained models".into())
}

fn full_run(root: &std::path::Path) -> Result<[Vec<u8>; 3], String> {
    let spec = SceneSpec {
        height: 32,
        width: 32,
        bands: 8,
        seed: 21,
        ..SceneSpec::default()
    };
    let data = root.join("data");
    pipeline::run_synth(&spec, &data).map_err(|e| e.to_string())?;
    let mut config = RunConfig::new(
        data.join(pipeline::IMAGE1_FILE),
        data.join(pipeline::IMAGE2_FILE),
        root.join("out"),
    );
    config.seed = 5;
    config.ffcae.seed = 5;
    let trained = pipeline::run_train(&config).map_err(|e| e.to_string())?;
    pipeline::run_detect(&config, &trained.checkpoint).map_err(|e| e.to_string())?;
    pipeline::run_evaluate(
        &config.output_dir.join(pipeline::CHANGE_MAP_FILE),
        &data.join(pipeline::GROUND_TRUTH_FILE),
        &config.output_dir,
    )
    .map_err(|e| e.to_string())?;
    let read = |name: &str| std::fs::read(config.output_dir.join(name)).map_err(|e| e.to_string());
    Ok([
        read(pipeline::CHECKPOINT_FILE)?,
        read(pipeline::CHANGE_MAP_FILE)?,
        read(pipeline::METRICS_CSV_FILE)?,
    ])
}

fn determinism() -> Outcome {
    let first = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = full_run(first.path())?;
    let b = full_run(second.path())?;
    for (name, (x, y)) in ["checkpoint", "change map", "metrics CSV"].iter().zip(a.iter().zip(&b)) {
        if x != y {
            return Err(format!("{name} bytes differ"));
        }
    }
    Ok(format!(
        "checkpoint ({} B), change map ({} B), metrics CSV identical",
        a[0].len(),
        a[1].len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("tukey reproduction", tukey_reproduction),
        ("mse recovery", mse_recovery),
        ("metric formula suite", metric_suite),
        ("gradient correctness", gradient_check),
        ("end-to-end synthetic detection", end_to_end),
        ("identity-pair invariant", identity_pair),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
