//! Synthetic skin-patch generator following the dichromatic forward model.
//!
//! Each pixel is `clamp01(g·(albedo ∘ illuminant) + s·illuminant + ε)`:
//! a shading-scaled body term plus an illuminant-colored interface term
//! plus sensor noise. A per-subject melanin scalar scales the base albedo,
//! giving an unambiguous ground-truth tone axis. Patches are written as
//! lossless PNGs with full-rectangle region polygons, so the generated tree
//! is a drop-in dataset for the rest of the toolkit.
//!
//! All randomness is split from one root seed by ChaCha stream counters:
//! subject melanins on one stream, each (subject, sample) pair on its own
//! stream. Generation order and worker count cannot change the output.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::colorspace::{linear_to_srgb_channel, RgbPixel};
use crate::error::{Error, Result};
use crate::ingestion::{
    load_manifest, DatasetManifest, PixelPatch, RegionKind, MIN_PATCH_PIXELS_DEFAULT,
};

/// Declarative description of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub samples_per_subject: usize,
    /// Per-subject albedo scale range; drawn once per subject.
    pub melanin_range: [f64; 2],
    /// Light-skin reference albedo the melanin scalar multiplies.
    pub base_albedo: [f64; 3],
    /// Candidate illuminants; one is drawn per sample.
    pub illuminants: Vec<[f64; 3]>,
    /// Per-sample specular strength range.
    pub specular_range: [f64; 2],
    /// Log-normal sigma of the per-pixel shading factor.
    pub shading_variation: f64,
    /// Per-channel Gaussian sensor noise sigma.
    pub noise_sigma: f64,
    /// Pixels per patch; rounded up to the next perfect square on disk.
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_subjects: 10,
            samples_per_subject: 5,
            melanin_range: [0.2, 1.0],
            base_albedo: [0.75, 0.55, 0.45],
            illuminants: vec![[1.0, 1.0, 1.0]],
            specular_range: [0.0, 0.3],
            shading_variation: 0.15,
            noise_sigma: 0.005,
            patch_size: 256,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidSpec {
                field: field.to_string(),
                reason,
            })
        };
        if self.n_subjects == 0 {
            return bad("n_subjects", "must be at least 1".into());
        }
        if self.samples_per_subject == 0 {
            return bad("samples_per_subject", "must be at least 1".into());
        }
        let [m_lo, m_hi] = self.melanin_range;
        let melanin_ok = m_lo > 0.0 && m_hi >= m_lo && m_hi.is_finite();
        if !melanin_ok {
            return bad(
                "melanin_range",
                format!("must satisfy 0 < lo <= hi, got [{m_lo}, {m_hi}]"),
            );
        }
        for (i, &a) in self.base_albedo.iter().enumerate() {
            let in_unit = a > 0.0 && a <= 1.0;
            if !in_unit {
                return bad("base_albedo", format!("channel {i} value {a} outside (0, 1]"));
            }
        }
        let max_albedo = self.base_albedo.iter().cloned().fold(0.0f64, f64::max);
        if m_hi * max_albedo > 1.0 + 1e-12 {
            return bad(
                "melanin_range",
                format!(
                    "melanin {m_hi} would scale albedo to {:.3} > 1; rendering would clip \
                     and break the tone axis",
                    m_hi * max_albedo
                ),
            );
        }
        if self.illuminants.is_empty() {
            return bad("illuminants", "need at least one illuminant".into());
        }
        for (i, ill) in self.illuminants.iter().enumerate() {
            for &c in ill {
                let in_unit = c > 0.0 && c <= 1.0;
                if !in_unit {
                    return bad(
                        "illuminants",
                        format!("illuminant {i} channel value {c} outside (0, 1]"),
                    );
                }
            }
        }
        let [s_lo, s_hi] = self.specular_range;
        let specular_ok = s_lo >= 0.0 && s_hi >= s_lo && s_hi.is_finite();
        if !specular_ok {
            return bad(
                "specular_range",
                format!("must satisfy 0 <= lo <= hi, got [{s_lo}, {s_hi}]"),
            );
        }
        let shading_ok = self.shading_variation >= 0.0 && self.shading_variation.is_finite();
        if !shading_ok {
            return bad(
                "shading_variation",
                format!("must be >= 0, got {}", self.shading_variation),
            );
        }
        let noise_ok = self.noise_sigma >= 0.0 && self.noise_sigma.is_finite();
        if !noise_ok {
            return bad("noise_sigma", format!("must be >= 0, got {}", self.noise_sigma));
        }
        if self.patch_size < MIN_PATCH_PIXELS_DEFAULT {
            return bad(
                "patch_size",
                format!(
                    "must be at least {MIN_PATCH_PIXELS_DEFAULT}, got {}",
                    self.patch_size
                ),
            );
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(text).map_err(|e| Error::InvalidSpec {
            field: "<spec>".into(),
            reason: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Render one patch with an explicit RNG (used by the generator to keep
/// per-sample streams independent).
pub fn render_patch_with_rng(
    albedo: [f64; 3],
    illuminant: [f64; 3],
    specular_strength: f64,
    sigma_shade: f64,
    sigma_noise: f64,
    n_pixels: usize,
    rng: &mut ChaCha8Rng,
) -> PixelPatch {
    let side = (n_pixels as f64).sqrt().ceil() as u32;
    let mut pixels = Vec::with_capacity(n_pixels);
    let mut coords = Vec::with_capacity(n_pixels);
    for i in 0..n_pixels {
        let z_shade: f64 = rng.sample(StandardNormal);
        let shading = (sigma_shade * z_shade).exp();
        let z_spec: f64 = rng.sample(StandardNormal);
        let spec = specular_strength * z_spec.abs();
        let mut channels = [0u8; 3];
        for c in 0..3 {
            let noise: f64 = sigma_noise * rng.sample::<f64, _>(StandardNormal);
            let linear = (shading * albedo[c] * illuminant[c] + spec * illuminant[c] + noise)
                .clamp(0.0, 1.0);
            channels[c] = (linear_to_srgb_channel(linear) * 255.0).round() as u8;
        }
        pixels.push(RgbPixel::new(channels[0], channels[1], channels[2]));
        coords.push((i as u32 % side, i as u32 / side));
    }
    PixelPatch {
        pixels,
        coords,
        region_kind: RegionKind::Forehead,
    }
}

/// Render one patch from a plain seed.
#[allow(clippy::too_many_arguments)]
pub fn render_patch(
    albedo: [f64; 3],
    illuminant: [f64; 3],
    specular_strength: f64,
    sigma_shade: f64,
    sigma_noise: f64,
    n_pixels: usize,
    seed: u64,
) -> PixelPatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    render_patch_with_rng(
        albedo,
        illuminant,
        specular_strength,
        sigma_shade,
        sigma_noise,
        n_pixels,
        &mut rng,
    )
}

/// Melanin value embedded in a generated subject id (`s0007_m0.532100`).
pub fn subject_melanin(subject_id: &str) -> Option<f64> {
    subject_id.rsplit_once("_m")?.1.parse().ok()
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    image_path: String,
    subject_id: &'a str,
    sample_id: &'a str,
    group_label: Option<&'a str>,
    regions: serde_json::Value,
}

const MELANIN_STREAM: u64 = 0;
const SAMPLE_STREAM_BASE: u64 = 1;

/// Generate the dataset tree: `out_dir/images/*.png` plus
/// `out_dir/manifest.jsonl`. Byte-identical for identical spec + seed.
pub fn generate_dataset(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let side = (spec.patch_size as f64).sqrt().ceil() as u32;
    let rendered_pixels = (side * side) as usize;
    let (w, h) = (side + 2, side + 2);

    let mut melanin_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    melanin_rng.set_stream(MELANIN_STREAM);
    let melanins: Vec<f64> = (0..spec.n_subjects)
        .map(|_| uniform_in(&mut melanin_rng, spec.melanin_range[0], spec.melanin_range[1]))
        .collect();
    let melanin_mid = (spec.melanin_range[0] + spec.melanin_range[1]) / 2.0;

    let mut manifest_text = String::new();
    for (subject_idx, &melanin) in melanins.iter().enumerate() {
        let subject_id = format!("s{subject_idx:04}_m{melanin:.6}");
        let group = if melanin < melanin_mid { "low" } else { "high" };
        let albedo = [
            spec.base_albedo[0] * melanin,
            spec.base_albedo[1] * melanin,
            spec.base_albedo[2] * melanin,
        ];
        for sample_idx in 0..spec.samples_per_subject {
            let sample_id = format!("p{sample_idx:02}");
            let stream =
                SAMPLE_STREAM_BASE + (subject_idx * spec.samples_per_subject + sample_idx) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(stream);

            let ill_idx = rng.gen_range(0..spec.illuminants.len());
            let illuminant = spec.illuminants[ill_idx];
            let strength = uniform_in(&mut rng, spec.specular_range[0], spec.specular_range[1]);
            let patch = render_patch_with_rng(
                albedo,
                illuminant,
                strength,
                spec.shading_variation,
                spec.noise_sigma,
                rendered_pixels,
                &mut rng,
            );

            let mut img = image::RgbImage::new(w, h);
            for (px, &(x, y)) in patch.pixels.iter().zip(patch.coords.iter()) {
                img.put_pixel(x + 1, y + 1, image::Rgb([px.r, px.g, px.b]));
            }
            let file_name = format!("{subject_id}_{sample_id}.png");
            let image_path = images_dir.join(&file_name);
            img.save(&image_path)
                .map_err(|e| Error::ImageDecode {
                    path: image_path.clone(),
                    source: e,
                })?;

            let rect = serde_json::json!({
                "forehead": [[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]]
            });
            let line = ManifestLine {
                image_path: format!("images/{file_name}"),
                subject_id: &subject_id,
                sample_id: &sample_id,
                group_label: Some(group),
                regions: rect,
            };
            manifest_text.push_str(&serde_json::to_string(&line).map_err(|e| {
                Error::ManifestParse {
                    line: 0,
                    message: e.to_string(),
                }
            })?);
            manifest_text.push('\n');
        }
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest_text).map_err(|e| Error::io(&manifest_path, e))?;
    load_manifest(&manifest_path)
}
