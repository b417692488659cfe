//! Batch scoring and cross-dataset orchestration.
//!
//! Samples are processed in parallel (rayon) but emitted strictly in
//! manifest order, so output bytes do not depend on the worker count.
//! Per-sample problems (unreadable image, degenerate region) become `NA`
//! score rows and a warning; the run only fails hard when a failure budget
//! is set and exceeded.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::analysis::{
    intra_subject_variability, Metric, ScoreRecord, ScoreTable, VariabilityEntry,
    VariabilityReport,
};
use crate::colorspace::srgb_to_linear_rgb;
use crate::error::{Error, Result};
use crate::ingestion::{
    extract_patch, load_image, DatasetManifest, PixelPatch, SampleRecord,
    MIN_PATCH_PIXELS_DEFAULT,
};
use crate::ita;
use crate::rsr::{self, RsrModel};
use crate::sreds::{self, NnmfOptions, SredsModel, SredsOptions};

/// Patch extraction settings shared by every command.
#[derive(Debug, Clone, Copy)]
pub struct PatchOptions {
    pub min_patch_pixels: usize,
}

impl Default for PatchOptions {
    fn default() -> Self {
        PatchOptions {
            min_patch_pixels: MIN_PATCH_PIXELS_DEFAULT,
        }
    }
}

/// What to score a manifest with.
pub enum MetricJob<'a> {
    Ita { kernel: usize },
    Rsr { model: &'a RsrModel },
    Sreds { model: &'a SredsModel, nnmf: NnmfOptions },
}

impl MetricJob<'_> {
    fn metric(&self) -> Metric {
        match self {
            MetricJob::Ita { .. } => Metric::Ita,
            MetricJob::Rsr { .. } => Metric::Rsr,
            MetricJob::Sreds { .. } => Metric::Sreds,
        }
    }
}

/// Extract every region patch of one sample. Failed regions are logged and
/// dropped; an unreadable image fails the whole sample.
fn sample_patches(
    manifest: &DatasetManifest,
    record: &SampleRecord,
    patch_opts: &PatchOptions,
) -> Result<(image::RgbImage, Vec<PixelPatch>)> {
    let img = load_image(manifest.image_path(record))?;
    let mut patches = Vec::with_capacity(record.regions.len());
    for poly in &record.regions {
        match extract_patch(&img, poly, patch_opts.min_patch_pixels) {
            Ok(p) => patches.push(p),
            Err(e) => log::warn!(
                "sample ({}, {}): {e}",
                record.subject_id,
                record.sample_id
            ),
        }
    }
    if patches.is_empty() {
        return Err(Error::NoRegions);
    }
    Ok((img, patches))
}

/// Per-image gray-world channel gains in linear RGB: each channel is scaled
/// so its image-wide mean matches the cross-channel mean.
fn gray_world_gains(img: &image::RgbImage) -> [f64; 3] {
    let mut sums = [0.0f64; 3];
    for px in img.pixels() {
        let lin = srgb_to_linear_rgb(crate::colorspace::RgbPixel::new(px[0], px[1], px[2]));
        for c in 0..3 {
            sums[c] += lin[c];
        }
    }
    let n = (img.width() * img.height()) as f64;
    let means = [sums[0] / n, sums[1] / n, sums[2] / n];
    let grand = (means[0] + means[1] + means[2]) / 3.0;
    let mut gains = [1.0f64; 3];
    for c in 0..3 {
        if means[c] > 1e-12 {
            gains[c] = grand / means[c];
        } else {
            log::warn!("gray-world skipped for channel {c}: image mean is zero");
        }
    }
    gains
}

/// Pixel-weighted linear-RGB face mean, optionally gray-world normalized.
fn face_mean(
    img: &image::RgbImage,
    patches: &[PixelPatch],
    gray_world: bool,
) -> Result<[f64; 3]> {
    if !gray_world {
        return rsr::face_mean_rgb(patches);
    }
    let gains = gray_world_gains(img);
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for patch in patches {
        for &px in &patch.pixels {
            let lin = srgb_to_linear_rgb(px);
            for c in 0..3 {
                sum[c] += lin[c] * gains[c];
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoRegions);
    }
    Ok([
        sum[0] / count as f64,
        sum[1] / count as f64,
        sum[2] / count as f64,
    ])
}

fn score_sample(
    manifest: &DatasetManifest,
    record: &SampleRecord,
    job: &MetricJob<'_>,
    patch_opts: &PatchOptions,
) -> Result<f64> {
    let (img, patches) = sample_patches(manifest, record, patch_opts)?;
    match job {
        MetricJob::Ita { kernel } => ita::face_ita_from_patches(&patches, *kernel),
        MetricJob::Rsr { model } => {
            let mean = face_mean(&img, &patches, model.normalization_applied)?;
            Ok(rsr::score_rsr(model, mean))
        }
        MetricJob::Sreds { model, nnmf } => sreds::face_sreds(model, &patches, nnmf),
    }
}

/// Score a whole manifest. Rows come back in manifest order; per-sample
/// failures yield `NA` rows. With `max_failures = Some(n)`, more than `n`
/// failed samples abort the run.
pub fn score_manifest(
    manifest: &DatasetManifest,
    job: &MetricJob<'_>,
    patch_opts: &PatchOptions,
    max_failures: Option<usize>,
) -> Result<ScoreTable> {
    if let MetricJob::Ita { kernel } = job {
        if kernel.is_multiple_of(2) {
            return Err(Error::EvenKernel { kernel: *kernel });
        }
    }
    let metric = job.metric();
    let scores: Vec<Option<f64>> = manifest
        .samples
        .par_iter()
        .map(|record| match score_sample(manifest, record, job, patch_opts) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!(
                    "sample ({}, {}) failed, emitting NA: {e}",
                    record.subject_id,
                    record.sample_id
                );
                None
            }
        })
        .collect();

    let failed = scores.iter().filter(|s| s.is_none()).count();
    if let Some(limit) = max_failures {
        if failed > limit {
            return Err(Error::TooManyFailures {
                failed,
                total: scores.len(),
                limit,
            });
        }
    }

    let mut table = ScoreTable {
        rows: Vec::with_capacity(scores.len()),
        trained_on: match job {
            MetricJob::Ita { .. } => None,
            MetricJob::Rsr { model } => Some(model.trained_on.clone()),
            MetricJob::Sreds { model, .. } => Some(model.trained_on.clone()),
        },
        seed: match job {
            MetricJob::Sreds { nnmf, .. } => Some(nnmf.seed),
            _ => None,
        },
    };
    // manifest validation already guarantees (subject, sample) uniqueness
    for (record, score) in manifest.samples.iter().zip(scores) {
        table.rows.push(ScoreRecord {
            dataset: manifest.dataset_name.clone(),
            subject_id: record.subject_id.clone(),
            sample_id: record.sample_id.clone(),
            metric,
            score,
        });
    }
    Ok(table)
}

/// Fit an RSR model on a manifest: one mean-color point per usable sample.
pub fn fit_rsr_on_manifest(
    manifest: &DatasetManifest,
    gray_world: bool,
    patch_opts: &PatchOptions,
) -> Result<RsrModel> {
    let faces: Vec<[f64; 3]> = manifest
        .samples
        .par_iter()
        .filter_map(|record| {
            sample_patches(manifest, record, patch_opts)
                .and_then(|(img, patches)| face_mean(&img, &patches, gray_world))
                .map_err(|e| {
                    log::warn!(
                        "sample ({}, {}) skipped in fit: {e}",
                        record.subject_id,
                        record.sample_id
                    );
                    e
                })
                .ok()
        })
        .collect();
    rsr::fit_rsr(&faces, &manifest.dataset_name, gray_world)
}

/// Fit a SREDS model on a manifest: one diffuse feature per usable region.
pub fn fit_sreds_on_manifest(
    manifest: &DatasetManifest,
    nnmf: &NnmfOptions,
    sreds_opts: &SredsOptions,
    patch_opts: &PatchOptions,
) -> Result<SredsModel> {
    let features: Vec<sreds::DiffuseFeature> = manifest
        .samples
        .par_iter()
        .flat_map_iter(|record| {
            let patches = match sample_patches(manifest, record, patch_opts) {
                Ok((_, p)) => p,
                Err(e) => {
                    log::warn!(
                        "sample ({}, {}) skipped in fit: {e}",
                        record.subject_id,
                        record.sample_id
                    );
                    Vec::new()
                }
            };
            let nnmf = *nnmf;
            patches
                .into_iter()
                .filter_map(move |patch| match sreds::extract_diffuse(&patch, &nnmf) {
                    Ok(f) => Some(f),
                    Err(e) => {
                        log::warn!("region {} skipped in fit: {e}", patch.region_kind);
                        None
                    }
                })
                .collect::<Vec<_>>()
                .into_iter()
        })
        .collect();
    sreds::fit_sreds(&features, sreds_opts, &manifest.dataset_name)
}

/// Everything a cross-dataset variability run needs.
pub struct CrossConfig {
    pub metrics: Vec<Metric>,
    pub sreds_models: BTreeMap<String, SredsModel>,
    pub rsr_models: BTreeMap<String, RsrModel>,
    pub normalize: bool,
    pub ita_kernel: usize,
    pub nnmf: NnmfOptions,
    pub patch: PatchOptions,
    pub max_failures: Option<usize>,
}

/// Build the train × test × metric variability matrix.
///
/// Trainable metrics are scored on every test manifest with every training
/// dataset's model. ITA has no training component: its cells exist only on
/// the train == test diagonal and are `NA` elsewhere.
pub fn cross_dataset_matrix(
    config: &CrossConfig,
    tests: &[&DatasetManifest],
) -> Result<VariabilityReport> {
    let mut trains: Vec<String> = Vec::new();
    if config.metrics.contains(&Metric::Sreds) {
        trains.extend(config.sreds_models.keys().cloned());
    }
    if config.metrics.contains(&Metric::Rsr) {
        trains.extend(config.rsr_models.keys().cloned());
    }
    if config.metrics.contains(&Metric::Ita) {
        trains.extend(tests.iter().map(|t| t.dataset_name.clone()));
    }
    trains.sort();
    trains.dedup();

    // resolvability check before any scoring work
    for metric in &config.metrics {
        let empty = match metric {
            Metric::Sreds => config.sreds_models.is_empty(),
            Metric::Rsr => config.rsr_models.is_empty(),
            Metric::Ita => false,
        };
        if empty {
            return Err(Error::MissingCell {
                train: "*".to_string(),
                test: "*".to_string(),
                metric: metric.name().to_string(),
            });
        }
    }
    for train in &trains {
        for metric in &config.metrics {
            let missing = match metric {
                Metric::Sreds => !config.sreds_models.contains_key(train),
                Metric::Rsr => !config.rsr_models.contains_key(train),
                Metric::Ita => false,
            };
            if missing {
                return Err(Error::MissingCell {
                    train: train.clone(),
                    test: "*".to_string(),
                    metric: metric.name().to_string(),
                });
            }
        }
    }

    let mut ita_cache: HashMap<String, ScoreTable> = HashMap::new();
    let mut report = VariabilityReport::default();
    for train in &trains {
        for test in tests {
            for metric in crate::analysis::METRIC_TABLE_ORDER
                .iter()
                .filter(|m| config.metrics.contains(m))
            {
                let entry = match metric {
                    Metric::Ita => {
                        if *train == test.dataset_name {
                            let table = match ita_cache.entry(test.dataset_name.clone()) {
                                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                                std::collections::hash_map::Entry::Vacant(slot) => {
                                    let job = MetricJob::Ita { kernel: config.ita_kernel };
                                    slot.insert(score_manifest(
                                        test,
                                        &job,
                                        &config.patch,
                                        config.max_failures,
                                    )?)
                                }
                            };
                            let pairs = table.subject_scores(&test.dataset_name, Metric::Ita);
                            let v = intra_subject_variability(&pairs, config.normalize)?;
                            VariabilityEntry {
                                train: train.clone(),
                                test: test.dataset_name.clone(),
                                metric: *metric,
                                value: Some(v.mean_sd),
                                subjects: v.subjects,
                                excluded_singletons: v.excluded_singletons,
                                normalized: config.normalize,
                            }
                        } else {
                            VariabilityEntry {
                                train: train.clone(),
                                test: test.dataset_name.clone(),
                                metric: *metric,
                                value: None,
                                subjects: 0,
                                excluded_singletons: 0,
                                normalized: config.normalize,
                            }
                        }
                    }
                    Metric::Rsr | Metric::Sreds => {
                        let job = match metric {
                            Metric::Rsr => MetricJob::Rsr {
                                model: &config.rsr_models[train],
                            },
                            _ => MetricJob::Sreds {
                                model: &config.sreds_models[train],
                                nnmf: config.nnmf,
                            },
                        };
                        let table =
                            score_manifest(test, &job, &config.patch, config.max_failures)?;
                        let pairs = table.subject_scores(&test.dataset_name, *metric);
                        let v = intra_subject_variability(&pairs, config.normalize)?;
                        VariabilityEntry {
                            train: train.clone(),
                            test: test.dataset_name.clone(),
                            metric: *metric,
                            value: Some(v.mean_sd),
                            subjects: v.subjects,
                            excluded_singletons: v.excluded_singletons,
                            normalized: config.normalize,
                        }
                    }
                };
                report.entries.push(entry);
            }
        }
    }
    Ok(report)
}
