//! End-to-end analysis: ingest, signatures, similarity, baselines, effect
//! sizes, classification and projection, written out as a report directory.
//!
//! Canonical outputs are CSV and JSON. A run with the same inputs and
//! configuration reproduces every file byte for byte; `run_metadata.json`
//! records the seed, configuration and input hashes needed to do so.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    baseline_similarity_stats, empirical_tokens_per_layer, BaselineReport, BaselineSource,
};
use crate::classifier::{cross_validate, CvReport, HyperParams};
use crate::error::{Error, Result};
use crate::projection::{coords_csv, pca_fit, pca_transform, Projection};
use crate::signatures::{
    all_activation_counts, feature_matrix, signature_from_counts, signatures_csv, CountMatrix,
    RoutingSignature,
};
use crate::similarity::{category_block_means, pairwise_matrix, CategoryMatrix, SimilarityMatrix};
use crate::stats::{effect_size_report, EffectSizeReport};
use crate::svg;
use crate::synthgen::{generate_corpus, GeneratorSpec};
use crate::trace::{
    load_trace, validate_trace, write_trace, TokenFilter, TraceSet, ValidationReport, EVENTS_FILE,
    MANIFEST_FILE,
};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_BASELINE_PAIRS: usize = 1000;
pub const DEFAULT_SEED: u64 = 0;
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
pub const GENERATOR_SPEC_FILE: &str = "generator_spec.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub seed: u64,
    pub token_filter: TokenFilter,
    pub folds: usize,
    pub baseline_pairs: usize,
    pub hyperparams: HyperParams,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            seed: DEFAULT_SEED,
            token_filter: TokenFilter::All,
            folds: DEFAULT_FOLDS,
            baseline_pairs: DEFAULT_BASELINE_PAIRS,
            hyperparams: HyperParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum TraceSource {
    Files { events: PathBuf, manifest: PathBuf },
    Simulate {
        spec: GeneratorSpec,
        prompts_per_category: usize,
    },
}

/// Events and manifest paths for `--traces` (a directory or an events file)
/// and an optional `--manifest` override.
pub fn resolve_trace_paths(traces: &Path, manifest: Option<&Path>) -> Result<(PathBuf, PathBuf)> {
    if traces.is_dir() {
        let events = traces.join(EVENTS_FILE);
        let manifest = manifest
            .map(Path::to_path_buf)
            .unwrap_or_else(|| traces.join(MANIFEST_FILE));
        if !events.exists() && !manifest.exists() {
            return Err(Error::NoPrompts(traces.to_path_buf()));
        }
        return Ok((events, manifest));
    }
    if !traces.exists() {
        return Err(Error::io(
            traces,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    let manifest = match manifest {
        Some(m) => m.to_path_buf(),
        None => traces
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(MANIFEST_FILE),
    };
    Ok((traces.to_path_buf(), manifest))
}

pub fn load_source(source: &TraceSource) -> Result<TraceSet> {
    let trace = match source {
        TraceSource::Files { events, manifest } => {
            let trace = load_trace(events, manifest)?;
            if trace.prompts.is_empty() {
                return Err(Error::NoPrompts(manifest.clone()));
            }
            trace
        }
        TraceSource::Simulate {
            spec,
            prompts_per_category,
        } => generate_corpus(spec, *prompts_per_category)?,
    };
    Ok(trace)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceFingerprint {
    Files {
        events_sha256: String,
        manifest_sha256: String,
    },
    Simulate {
        generator_spec_sha256: String,
        prompts_per_category: usize,
        seed: u64,
    },
}

pub fn fingerprint(source: &TraceSource) -> Result<SourceFingerprint> {
    Ok(match source {
        TraceSource::Files { events, manifest } => SourceFingerprint::Files {
            events_sha256: sha256_hex(&fs::read(events).map_err(|e| Error::io(events, e))?),
            manifest_sha256: sha256_hex(&fs::read(manifest).map_err(|e| Error::io(manifest, e))?),
        },
        TraceSource::Simulate {
            spec,
            prompts_per_category,
        } => SourceFingerprint::Simulate {
            generator_spec_sha256: sha256_hex(to_json(spec).as_bytes()),
            prompts_per_category: *prompts_per_category,
            seed: spec.seed,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub config: AnalysisConfig,
    pub source: SourceFingerprint,
    pub model: crate::trace::ModelConfig,
    pub num_prompts: usize,
    pub num_events: usize,
    pub config_hash: String,
}

impl RunMetadata {
    pub fn new(config: &AnalysisConfig, source: SourceFingerprint, trace: &TraceSet) -> Self {
        let config_hash = sha256_hex((to_json(config) + &to_json(&source)).as_bytes());
        RunMetadata {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            source,
            model: trace.config.clone(),
            num_prompts: trace.prompts.len(),
            num_events: trace.events.len(),
            config_hash,
        }
    }
}

/// Validation that refuses to go further on fatal violations.
pub fn checked_validation(trace: &TraceSet) -> Result<ValidationReport> {
    let report = validate_trace(trace);
    if report.has_fatal() {
        return Err(Error::ValidationFatal(report.fatal.len()));
    }
    Ok(report)
}

pub fn compute_signatures(
    trace: &TraceSet,
    token_filter: TokenFilter,
) -> (Vec<CountMatrix>, Vec<RoutingSignature>) {
    let counts = all_activation_counts(trace, token_filter);
    let signatures = counts.iter().map(signature_from_counts).collect();
    (counts, signatures)
}

pub fn run_baselines(
    trace: &TraceSet,
    counts: &[CountMatrix],
    config: &AnalysisConfig,
) -> Result<(BaselineReport, BaselineReport)> {
    let tokens = empirical_tokens_per_layer(&trace.config, counts);
    let load_balance = baseline_similarity_stats(
        &BaselineSource::LoadBalance {
            tokens_per_layer: &tokens,
        },
        &trace.config,
        config.baseline_pairs,
        config.seed,
    )?;
    let permutation = baseline_similarity_stats(
        &BaselineSource::Permutation { counts },
        &trace.config,
        config.baseline_pairs,
        config.seed,
    )?;
    Ok((load_balance, permutation))
}

/// Class indices follow the manifest's category order.
pub fn class_labels(trace: &TraceSet, signatures: &[RoutingSignature]) -> Result<Vec<usize>> {
    signatures
        .iter()
        .map(|s| {
            trace
                .categories
                .iter()
                .position(|c| *c == s.category)
                .ok_or_else(|| Error::UnknownCategory(s.category.clone()))
        })
        .collect()
}

pub fn run_classification(
    trace: &TraceSet,
    signatures: &[RoutingSignature],
    config: &AnalysisConfig,
) -> Result<CvReport> {
    let features = feature_matrix(signatures)?;
    let labels = class_labels(trace, signatures)?;
    cross_validate(
        &features,
        &labels,
        &trace.categories,
        config.folds,
        config.hyperparams,
        config.seed,
    )
}

pub fn run_projection(signatures: &[RoutingSignature]) -> Result<(Projection, Array2<f64>)> {
    let features = feature_matrix(signatures)?;
    let projection = pca_fit(&features, 2)?;
    let coords = pca_transform(&projection, &features)?;
    Ok((projection, coords))
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub validation: ValidationReport,
    pub signatures: Vec<RoutingSignature>,
    pub similarity: SimilarityMatrix,
    pub category_matrix: CategoryMatrix,
    pub effect_sizes: EffectSizeReport,
    pub load_balance: BaselineReport,
    pub permutation: BaselineReport,
    pub cv: CvReport,
    pub projection: Projection,
    pub coords: Array2<f64>,
}

impl Analysis {
    /// Within > load balance > across.
    pub fn ordering_holds(&self) -> bool {
        self.effect_sizes.within_mean > self.load_balance.mean
            && self.load_balance.mean > self.effect_sizes.across_mean
    }
}

pub fn analyze(trace: &TraceSet, config: &AnalysisConfig) -> Result<Analysis> {
    if trace.prompts.is_empty() {
        return Err(Error::InsufficientData("no prompts found".into()));
    }
    let validation = checked_validation(trace)?;
    let (counts, signatures) = compute_signatures(trace, config.token_filter);
    let similarity = pairwise_matrix(&signatures)?;
    let category_matrix = category_block_means(&similarity);
    let effect_sizes = effect_size_report(&similarity, &signatures)?;
    let (load_balance, permutation) = run_baselines(trace, &counts, config)?;
    let cv = run_classification(trace, &signatures, config)?;
    let (projection, coords) = run_projection(&signatures)?;
    Ok(Analysis {
        validation,
        signatures,
        similarity,
        category_matrix,
        effect_sizes,
        load_balance,
        permutation,
        cv,
        projection,
        coords,
    })
}

/// Paths of everything a report run wrote.
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub files: Vec<PathBuf>,
}

impl ReportBundle {
    fn write(&mut self, dir: &Path, name: &str, contents: &str) -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }
}

pub fn baseline_comparison_csv(effect: &EffectSizeReport, lb: &BaselineReport, perm: &BaselineReport) -> String {
    format!(
        "condition,mean,std,n\nacross,{},{},{}\nload_balance,{},{},{}\nwithin,{},{},{}\npermutation,{},{},{}\n",
        effect.across_mean,
        effect.across_std,
        effect.across_n,
        lb.mean,
        lb.std,
        lb.n_pairs,
        effect.within_mean,
        effect.within_std,
        effect.within_n,
        perm.mean,
        perm.std,
        perm.n_pairs
    )
}

pub fn write_signature_files(
    bundle: &mut ReportBundle,
    dir: &Path,
    signatures: &[RoutingSignature],
) -> Result<()> {
    bundle.write(dir, "signatures.csv", &signatures_csv(signatures))
}

pub fn write_baseline_files(
    bundle: &mut ReportBundle,
    dir: &Path,
    lb: &BaselineReport,
    perm: &BaselineReport,
) -> Result<()> {
    bundle.write(dir, "baseline_load_balance.json", &to_json(lb))?;
    bundle.write(dir, "baseline_permutation.json", &to_json(perm))
}

pub fn write_cv_files(bundle: &mut ReportBundle, dir: &Path, cv: &CvReport) -> Result<()> {
    bundle.write(dir, "cv_report.json", &to_json(cv))?;
    bundle.write(dir, "confusion.csv", &cv.confusion_csv())
}

pub fn write_projection_files(
    bundle: &mut ReportBundle,
    dir: &Path,
    signatures: &[RoutingSignature],
    projection: &Projection,
    coords: &Array2<f64>,
) -> Result<()> {
    let ids: Vec<String> = signatures.iter().map(|s| s.prompt_id.clone()).collect();
    let cats: Vec<String> = signatures.iter().map(|s| s.category.clone()).collect();
    bundle.write(dir, "pca_coords.csv", &coords_csv(&ids, &cats, coords))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        explained_variance: &'a [f64],
        explained_variance_ratio: &'a [f64],
    }
    bundle.write(
        dir,
        "pca.json",
        &to_json(&Summary {
            explained_variance: &projection.explained_variance,
            explained_variance_ratio: &projection.explained_variance_ratio,
        }),
    )?;
    bundle.write(
        dir,
        "pca.svg",
        &svg::scatter_svg(&cats, coords, &projection.explained_variance_ratio),
    )
}

pub fn create_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the full report. An `INCOMPLETE` marker exists in `dir` until every
/// file has been written.
pub fn write_report(analysis: &Analysis, metadata: &RunMetadata, dir: &Path) -> Result<ReportBundle> {
    create_output_dir(dir)?;
    let marker = dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, "report generation did not finish\n").map_err(|e| Error::io(&marker, e))?;

    let mut bundle = ReportBundle::default();
    let a = analysis;
    bundle.write(dir, "validation.json", &to_json(&a.validation))?;
    write_signature_files(&mut bundle, dir, &a.signatures)?;
    bundle.write(dir, "similarity_matrix.csv", &a.similarity.to_csv())?;
    bundle.write(dir, "category_matrix.csv", &a.category_matrix.to_csv())?;
    bundle.write(dir, "heatmap.svg", &svg::heatmap_svg(&a.category_matrix))?;
    bundle.write(dir, "effect_sizes.json", &to_json(&a.effect_sizes))?;
    bundle.write(dir, "layer_effect_sizes.csv", &a.effect_sizes.layer_csv())?;
    bundle.write(dir, "layer_signal.svg", &svg::layer_signal_svg(&a.effect_sizes.per_layer_d))?;
    write_baseline_files(&mut bundle, dir, &a.load_balance, &a.permutation)?;
    bundle.write(
        dir,
        "baseline_comparison.csv",
        &baseline_comparison_csv(&a.effect_sizes, &a.load_balance, &a.permutation),
    )?;
    let e = &a.effect_sizes;
    bundle.write(
        dir,
        "baselines.svg",
        &svg::bars_svg(&[
            ("across".into(), e.across_mean, e.across_std),
            ("load balance".into(), a.load_balance.mean, a.load_balance.std),
            ("within".into(), e.within_mean, e.within_std),
        ]),
    )?;
    write_cv_files(&mut bundle, dir, &a.cv)?;
    write_projection_files(&mut bundle, dir, &a.signatures, &a.projection, &a.coords)?;
    bundle.write(dir, "run_metadata.json", &to_json(metadata))?;

    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    Ok(bundle)
}

/// Load, analyze and write. On failure the output directory keeps its
/// `INCOMPLETE` marker.
pub fn run_pipeline(source: &TraceSource, config: &AnalysisConfig, out: &Path) -> Result<(Analysis, ReportBundle)> {
    create_output_dir(out)?;
    let marker = out.join(INCOMPLETE_MARKER);
    fs::write(&marker, "report generation did not finish\n").map_err(|e| Error::io(&marker, e))?;
    let trace = load_source(source)?;
    let metadata = RunMetadata::new(config, fingerprint(source)?, &trace);
    let analysis = analyze(&trace, config)?;
    let bundle = write_report(&analysis, &metadata, out)?;
    Ok((analysis, bundle))
}

/// Writes `events.jsonl`, `manifest.json` and `generator_spec.json`.
pub fn write_simulation(spec: &GeneratorSpec, prompts_per_category: usize, dir: &Path) -> Result<TraceSet> {
    let trace = generate_corpus(spec, prompts_per_category)?;
    create_output_dir(dir)?;
    write_trace(&trace, &dir.join(EVENTS_FILE), &dir.join(MANIFEST_FILE))?;
    let path = dir.join(GENERATOR_SPEC_FILE);
    fs::write(&path, to_json(spec)).map_err(|e| Error::io(&path, e))?;
    Ok(trace)
}
