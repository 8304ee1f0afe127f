//! One line per acceptance criterion; exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use moe_xray::baselines::loadbalance_sample;
use moe_xray::classifier::{cross_validate, gradient, objective, stratified_kfold, HyperParams};
use moe_xray::pipeline::{
    analyze, class_labels, compute_signatures, run_pipeline, AnalysisConfig, TraceSource,
};
use moe_xray::projection::pca_fit;
use moe_xray::signatures::{feature_matrix, flatten};
use moe_xray::stats::{cohens_d_from_summary, rank_correlation, PairLayerCosines, Summary};
use moe_xray::synthgen::{self, generate_corpus, make_generator_spec, DepthShape, GeneratorSpec};
use moe_xray::{ModelConfig, TokenFilter, TraceSet};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn default_corpus() -> TraceSet {
    generate_corpus(&GeneratorSpec::default_shape(synthgen::DEFAULT_SEED), 20).unwrap()
}

fn classes() -> Vec<String> {
    synthgen::DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

fn signature_normalization() -> Check {
    let trace = default_corpus();
    let (_, sigs) = compute_signatures(&trace, TokenFilter::All);
    let mut worst = 0.0f64;
    for sig in &sigs {
        for row in sig.rows.rows() {
            let s = row.sum();
            if s != 0.0 {
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    let len = flatten(&sigs[0]).len();
    ensure(
        worst <= 1e-9 && len == 1024 && sigs.iter().all(|s| flatten(s).len() == 1024),
        format!("max |row sum - 1| = {worst:.2e}, flattened length {len}"),
    )
}

fn load_balance_frequency() -> Check {
    let m = loadbalance_sample(&ModelConfig::olmoe(), &[10_000; 16], 0).unwrap();
    let mut worst = 0.0f64;
    for expert in m.counts.columns() {
        let freq = expert.iter().map(|&c| c as f64).sum::<f64>() / (16.0 * 10_000.0);
        worst = worst.max((freq - 0.125).abs());
    }
    ensure(worst <= 0.01, format!("max |frequency - 0.125| over 64 experts = {worst:.4}"))
}

fn cohens_d_reference() -> Check {
    let d = cohens_d_from_summary(
        Summary { mean: 0.8435, std: 0.0879, n: 760 },
        Summary { mean: 0.6225, std: 0.1687, n: 2400 },
    )
    .map_err(|e| e.to_string())?;
    ensure((d - 1.44).abs() <= 0.01, format!("d = {d:.4}"))
}

fn baseline_ordering() -> Check {
    let analysis = analyze(&default_corpus(), &AnalysisConfig::default()).map_err(|e| e.to_string())?;
    let within = analysis.effect_sizes.within_mean;
    let across = analysis.effect_sizes.across_mean;
    let lb = analysis.load_balance.mean;
    ensure(
        within - lb > 0.03 && lb - across > 0.03,
        format!("within {within:.4} > load balance {lb:.4} > across {across:.4}"),
    )
}

fn classification() -> Check {
    let trace = default_corpus();
    let (_, sigs) = compute_signatures(&trace, TokenFilter::All);
    let x = feature_matrix(&sigs).unwrap();
    let mut y = class_labels(&trace, &sigs).unwrap();
    let hp = HyperParams::default();
    let real = cross_validate(&x, &y, &classes(), 5, hp, 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut shuffled = 0.0;
    for trial in 0..20 {
        y.shuffle(&mut rng);
        shuffled += cross_validate(&x, &y, &classes(), 5, hp, trial).unwrap().mean_accuracy / 20.0;
    }
    ensure(
        real.mean_accuracy >= 0.9 && real.macro_f1 >= 0.9 && (0.10..=0.45).contains(&shuffled),
        format!(
            "accuracy {:.3}, macro F1 {:.3}, shuffled-label accuracy {shuffled:.3} (mean of 20)",
            real.mean_accuracy, real.macro_f1
        ),
    )
}

fn layer_signal() -> Check {
    let spec = make_generator_spec(
        &ModelConfig::olmoe(),
        &classes(),
        synthgen::DEFAULT_CONCENTRATION,
        DepthShape::LinearIncreasing,
        synthgen::DEFAULT_SEED,
    )
    .unwrap();
    let trace = generate_corpus(&spec, 20).unwrap();
    let (_, sigs) = compute_signatures(&trace, TokenFilter::All);
    let labels: Vec<&str> = sigs.iter().map(|s| s.category.as_str()).collect();
    let d: Vec<f64> = PairLayerCosines::compute(&sigs)
        .unwrap()
        .effect_sizes(&labels)
        .unwrap()
        .into_iter()
        .map(|d| d.unwrap_or(f64::NAN))
        .collect();
    let layers: Vec<f64> = (0..d.len()).map(|l| l as f64).collect();
    let rho = rank_correlation(&layers, &d).unwrap_or(f64::NAN);
    ensure(rho > 0.8, format!("rank correlation of per-layer d with depth = {rho:.3}"))
}

fn logreg_gradient_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, d, c) = (30, 5, 4);
    let x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<usize> = (0..n).map(|i| i % c).collect();
    let w = Array2::from_shape_fn((c, d), |_| rng.sample::<f64, _>(StandardNormal));
    let b = Array1::from_shape_fn(c, |_| rng.sample::<f64, _>(StandardNormal));
    let l2 = 0.1;
    let (gw, gb) = gradient(&w, &b, x.view(), &y, l2);
    let h = 1e-5;
    let rel = |a: f64, fd: f64| (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
    let mut worst = 0.0f64;
    for i in 0..c {
        for j in 0..d {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[[i, j]] += h;
            wm[[i, j]] -= h;
            let fd = (objective(&wp, &b, x.view(), &y, l2) - objective(&wm, &b, x.view(), &y, l2)) / (2.0 * h);
            worst = worst.max(rel(gw[[i, j]], fd));
        }
        let (mut bp, mut bm) = (b.clone(), b.clone());
        bp[i] += h;
        bm[i] -= h;
        let fd = (objective(&w, &bp, x.view(), &y, l2) - objective(&w, &bm, x.view(), &y, l2)) / (2.0 * h);
        worst = worst.max(rel(gb[i], fd));
    }
    worst
}

fn pca_eigen_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for d in [2usize, 4, 8, 12, 16, 20] {
        let mut x = Array2::from_shape_fn((120, d), |_| rng.sample::<f64, _>(StandardNormal));
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            col *= 4.0 / (1.0 + j as f64);
        }
        let p = pca_fit(&x, 2).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        let cx = &x - &mean;
        let cov = cx.t().dot(&cx) / 119.0;
        let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (k, &idx) in order.iter().take(2).enumerate() {
            let col = eig.eigenvectors.column(idx);
            let dot: f64 = p.components[k].iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            worst = worst
                .max((p.explained_variance[k] - eig.eigenvalues[idx]).abs())
                .max((dot.abs() - 1.0).abs());
        }
    }
    worst
}

fn stratification_exact() -> bool {
    let labels: Vec<usize> = (0..80).map(|i| i / 20).collect();
    let folds = stratified_kfold(&labels, 5, 0).unwrap();
    folds.len() == 5
        && folds.iter().all(|f| {
            f.test.len() == 16
                && (0..4).all(|c| f.test.iter().filter(|&&i| labels[i] == c).count() == 4)
        })
}

fn numerical_oracles() -> Check {
    let grad = logreg_gradient_error();
    let pca = pca_eigen_error();
    let strat = stratification_exact();
    ensure(
        grad <= 1e-5 && pca <= 1e-6 && strat,
        format!(
            "gradient rel err {grad:.2e}, PCA vs dense eigen err {pca:.2e}, stratified 4/class/fold: {strat}"
        ),
    )
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let source = TraceSource::Simulate {
        spec: GeneratorSpec::default_shape(synthgen::DEFAULT_SEED),
        prompts_per_category: 20,
    };
    let config = AnalysisConfig { seed: 42, ..AnalysisConfig::default() };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_pipeline(&source, &config, &a).map_err(|e| e.to_string())?;
    run_pipeline(&source, &config, &b).map_err(|e| e.to_string())?;
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    let differing: Vec<&str> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let data_files = ta.iter().filter(|(n, _)| n.ends_with(".csv") || n.ends_with(".json")).count();
    ensure(
        ta.len() == tb.len() && differing.is_empty() && data_files > 0,
        format!("{} files ({data_files} CSV/JSON) compared, {} differ", ta.len(), differing.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("signature normalization", signature_normalization),
        ("load-balance frequency at 10,000 tokens", load_balance_frequency),
        ("cohen's d reference value", cohens_d_reference),
        ("within > load balance > across", baseline_ordering),
        ("cross-validated classification", classification),
        ("per-layer signal tracks depth", layer_signal),
        ("numerical oracles", numerical_oracles),
        ("deterministic outputs", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
