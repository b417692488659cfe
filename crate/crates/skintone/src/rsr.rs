//! Relative skin reflectance: a PCA line through a dataset's per-face mean
//! skin colors in linear RGB. A face's score is its signed projection along
//! that line, so the metric is inherently dataset-relative.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::colorspace::srgb_to_linear_rgb;
use crate::error::{Error, Result};
use crate::ingestion::PixelPatch;
use crate::json17;

pub const RSR_MODEL_VERSION: u32 = 1;

/// Fitted PCA line in linear RGB space.
///
/// `direction` is unit length; `sign` orients scores so that higher score
/// tracks a higher luminance proxy (r+g+b) on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsrModel {
    pub version: u32,
    pub trained_on: String,
    pub mean_rgb: [f64; 3],
    pub direction: [f64; 3],
    pub sign: i8,
    pub normalization_applied: bool,
}

/// Pixel-weighted mean of all patch pixels, gamma-expanded to linear RGB.
pub fn face_mean_rgb(patches: &[PixelPatch]) -> Result<[f64; 3]> {
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for patch in patches {
        for &px in &patch.pixels {
            let lin = srgb_to_linear_rgb(px);
            sum[0] += lin[0];
            sum[1] += lin[1];
            sum[2] += lin[2];
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

/// Fit the PCA line: sample mean plus the leading eigenvector of the
/// face-vector covariance.
pub fn fit_rsr(
    faces: &[[f64; 3]],
    dataset_name: &str,
    normalization_applied: bool,
) -> Result<RsrModel> {
    if faces.len() < 2 {
        return Err(Error::TooFewFaces {
            found: faces.len(),
            required: 2,
        });
    }
    let n = faces.len() as f64;
    let mut mean = [0.0f64; 3];
    for f in faces {
        for k in 0..3 {
            mean[k] += f[k];
        }
    }
    for m in &mut mean {
        *m /= n;
    }

    let mut cov = [[0.0f64; 3]; 3];
    for f in faces {
        let d = [f[0] - mean[0], f[1] - mean[1], f[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n - 1.0;
        }
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen3(cov);
    let lead = (0..3)
        .max_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]))
        .unwrap();
    if eigenvalues[lead].is_nan() || eigenvalues[lead] <= 1e-24 {
        return Err(Error::ZeroVariance);
    }
    let mut direction = [
        eigenvectors[0][lead],
        eigenvectors[1][lead],
        eigenvectors[2][lead],
    ];
    let norm = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
    for d in &mut direction {
        *d /= norm;
    }

    // orient so projection correlates positively with r+g+b
    let mut corr = 0.0;
    for f in faces {
        let s = (f[0] - mean[0]) * direction[0]
            + (f[1] - mean[1]) * direction[1]
            + (f[2] - mean[2]) * direction[2];
        corr += s * (f[0] + f[1] + f[2]);
    }
    let sign = if corr < 0.0 { -1 } else { 1 };

    Ok(RsrModel {
        version: RSR_MODEL_VERSION,
        trained_on: dataset_name.to_string(),
        mean_rgb: mean,
        direction,
        sign,
        normalization_applied,
    })
}

/// Signed projection of a face vector along the fitted line.
pub fn score_rsr(model: &RsrModel, face: [f64; 3]) -> f64 {
    let p = (face[0] - model.mean_rgb[0]) * model.direction[0]
        + (face[1] - model.mean_rgb[1]) * model.direction[1]
        + (face[2] - model.mean_rgb[2]) * model.direction[2];
    model.sign as f64 * p
}

impl RsrModel {
    pub fn to_json_string(&self) -> Result<String> {
        json17::to_json_string(self)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let model: RsrModel = serde_json::from_str(text).map_err(|e| Error::ModelFormat {
            message: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.version != RSR_MODEL_VERSION {
            return Err(Error::VersionMismatch {
                expected: RSR_MODEL_VERSION,
                found: self.version,
            });
        }
        let norm2: f64 = self.direction.iter().map(|d| d * d).sum();
        if !norm2.is_finite() || (norm2.sqrt() - 1.0).abs() > 1e-9 {
            return Err(Error::ModelFormat {
                message: "direction is not unit length".into(),
            });
        }
        if self.sign != 1 && self.sign != -1 {
            return Err(Error::ModelFormat {
                message: format!("sign must be +1 or -1, got {}", self.sign),
            });
        }
        if self.mean_rgb.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelFormat {
                message: "non-finite mean".into(),
            });
        }
        Ok(())
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric 3×3 matrix.
/// Returns (eigenvalues, eigenvectors-as-columns). Deterministic.
#[allow(clippy::needless_range_loop)]
fn jacobi_eigen3(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut v = [[0.0f64; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-300 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in &mut v {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::RgbPixel;
    use crate::ingestion::{PixelPatch, RegionKind};

    fn patch(pixels: Vec<RgbPixel>) -> PixelPatch {
        let coords = (0..pixels.len()).map(|i| (i as u32, 0)).collect();
        PixelPatch {
            pixels,
            coords,
            region_kind: RegionKind::Forehead,
        }
    }

    #[test]
    fn face_mean_is_pixel_weighted() {
        let a = patch(vec![RgbPixel::new(100, 100, 100); 4]);
        let b = patch(vec![RgbPixel::new(200, 200, 200); 12]);
        let mean = face_mean_rgb(&[a.clone(), b.clone()]).unwrap();
        // oracle: flat concatenation
        let mut all = a.pixels.clone();
        all.extend_from_slice(&b.pixels);
        let flat = face_mean_rgb(&[patch(all)]).unwrap();
        for k in 0..3 {
            assert!((mean[k] - flat[k]).abs() < 1e-15);
        }

        let lin100 = crate::colorspace::srgb_channel_to_linear(100);
        let c = face_mean_rgb(&[patch(vec![RgbPixel::new(100, 100, 100); 7])]).unwrap();
        assert!((c[0] - lin100).abs() < 1e-15);

        assert!(face_mean_rgb(&[]).is_err());
    }

    #[test]
    fn equal_size_patches_average() {
        let a = patch(vec![RgbPixel::new(50, 50, 50); 8]);
        let b = patch(vec![RgbPixel::new(150, 150, 150); 8]);
        let mean = face_mean_rgb(&[a, b]).unwrap();
        let want = (crate::colorspace::srgb_channel_to_linear(50)
            + crate::colorspace::srgb_channel_to_linear(150))
            / 2.0;
        assert!((mean[0] - want).abs() < 1e-15);
    }

    #[test]
    fn collinear_points_recover_direction() {
        let u = {
            let raw: [f64; 3] = [1.0, 2.0, 3.0];
            let n = (14.0f64).sqrt();
            [raw[0] / n, raw[1] / n, raw[2] / n]
        };
        let c = [0.4, 0.4, 0.4];
        let faces: Vec<[f64; 3]> = [-1.0, 0.0, 1.0]
            .iter()
            .map(|t| [c[0] + t * u[0], c[1] + t * u[1], c[2] + t * u[2]])
            .collect();
        let model = fit_rsr(&faces, "toy", false).unwrap();
        let cos: f64 = model
            .direction
            .iter()
            .zip(u.iter())
            .map(|(a, b)| a * b)
            .sum();
        assert!(cos.abs() > 1.0 - 1e-9, "cos = {cos}");
    }

    #[test]
    fn two_faces_direction_along_difference() {
        let faces = [[0.2, 0.3, 0.1], [0.5, 0.1, 0.4]];
        let model = fit_rsr(&faces, "toy", false).unwrap();
        let diff = [0.3, -0.2, 0.3];
        let n: f64 = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        let cos: f64 = model
            .direction
            .iter()
            .zip(diff.iter())
            .map(|(a, b)| a * b / n)
            .sum();
        assert!(cos.abs() > 1.0 - 1e-9);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(matches!(
            fit_rsr(&[[0.1, 0.2, 0.3]], "toy", false),
            Err(Error::TooFewFaces { found: 1, .. })
        ));
        let same = [[0.3, 0.3, 0.3]; 5];
        assert!(matches!(
            fit_rsr(&same, "toy", false),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn scoring_identities() {
        let faces = [[0.1, 0.1, 0.1], [0.2, 0.25, 0.22], [0.5, 0.45, 0.5], [0.7, 0.72, 0.69]];
        let model = fit_rsr(&faces, "toy", false).unwrap();

        assert_eq!(score_rsr(&model, model.mean_rgb), 0.0);

        let step = [
            model.mean_rgb[0] + model.direction[0],
            model.mean_rgb[1] + model.direction[1],
            model.mean_rgb[2] + model.direction[2],
        ];
        assert!((score_rsr(&model, step) - model.sign as f64).abs() < 1e-12);
        assert_eq!(model.sign, 1, "brighter-is-higher orientation");

        let mean_score: f64 =
            faces.iter().map(|&f| score_rsr(&model, f)).sum::<f64>() / faces.len() as f64;
        assert!(mean_score.abs() < 1e-9);
    }

    #[test]
    fn fit_is_deterministic() {
        let faces = [[0.1, 0.1, 0.1], [0.2, 0.25, 0.22], [0.5, 0.45, 0.5]];
        let a = fit_rsr(&faces, "d", false).unwrap();
        let b = fit_rsr(&faces, "d", false).unwrap();
        assert_eq!(a, b);
        for k in 0..3 {
            assert_eq!(a.direction[k].to_bits(), b.direction[k].to_bits());
        }
    }

    #[test]
    fn shift_leaves_scores_unchanged_after_refit() {
        let faces: Vec<[f64; 3]> = (0..20)
            .map(|i| {
                let t = i as f64 / 19.0;
                [0.2 + 0.5 * t, 0.15 + 0.4 * t * t, 0.1 + 0.3 * t]
            })
            .collect();
        let m1 = fit_rsr(&faces, "a", false).unwrap();
        let shift = [0.05, -0.02, 0.11];
        let shifted: Vec<[f64; 3]> = faces
            .iter()
            .map(|f| [f[0] + shift[0], f[1] + shift[1], f[2] + shift[2]])
            .collect();
        let m2 = fit_rsr(&shifted, "a", false).unwrap();
        for (f, g) in faces.iter().zip(shifted.iter()) {
            let s1 = score_rsr(&m1, *f);
            let s2 = score_rsr(&m2, *g);
            assert!((s1 - s2).abs() < 1e-9, "{s1} vs {s2}");
        }
    }

    /// Independent oracle: straight power iteration on the covariance,
    /// no Jacobi anywhere.
    fn oracle_leading_eigenvector(faces: &[[f64; 3]]) -> [f64; 3] {
        let n = faces.len() as f64;
        let mut mean = [0.0f64; 3];
        for f in faces {
            for k in 0..3 {
                mean[k] += f[k] / n;
            }
        }
        let mut cov = [[0.0f64; 3]; 3];
        for f in faces {
            let d = [f[0] - mean[0], f[1] - mean[1], f[2] - mean[2]];
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += d[i] * d[j] / (n - 1.0);
                }
            }
        }
        let mut v = [1.0f64, 0.7, 0.4];
        for _ in 0..20_000 {
            let w = [
                cov[0][0] * v[0] + cov[0][1] * v[1] + cov[0][2] * v[2],
                cov[1][0] * v[0] + cov[1][1] * v[1] + cov[1][2] * v[2],
                cov[2][0] * v[0] + cov[2][1] * v[1] + cov[2][2] * v[2],
            ];
            let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            v = [w[0] / norm, w[1] / norm, w[2] / norm];
        }
        v
    }

    #[test]
    fn direction_matches_power_iteration_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let n = rng.gen_range(3..100);
            let faces: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    let base: f64 = rng.gen_range(0.05..0.9);
                    [
                        (base + rng.gen_range(-0.05..0.05f64)).clamp(0.0, 1.0),
                        (base * 0.8 + rng.gen_range(-0.05..0.05f64)).clamp(0.0, 1.0),
                        (base * 0.6 + rng.gen_range(-0.05..0.05f64)).clamp(0.0, 1.0),
                    ]
                })
                .collect();
            let model = match fit_rsr(&faces, "t", false) {
                Ok(m) => m,
                Err(Error::ZeroVariance) => continue,
                Err(e) => panic!("{e}"),
            };
            let oracle = oracle_leading_eigenvector(&faces);
            let cos: f64 = model
                .direction
                .iter()
                .zip(oracle.iter())
                .map(|(a, b)| a * b)
                .sum();
            assert!(cos.abs() > 1.0 - 1e-8, "trial {trial}: cos={cos}");
        }
    }

    #[test]
    fn model_file_round_trip() {
        let faces = [[0.1, 0.2, 0.3], [0.4, 0.3, 0.2], [0.25, 0.25, 0.25]];
        let model = fit_rsr(&faces, "round-trip", true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rsr.json");
        model.save(&path).unwrap();
        let loaded = RsrModel::load(&path).unwrap();
        assert_eq!(model, loaded);
        for k in 0..3 {
            assert_eq!(model.direction[k].to_bits(), loaded.direction[k].to_bits());
            assert_eq!(model.mean_rgb[k].to_bits(), loaded.mean_rgb[k].to_bits());
        }
    }

    #[test]
    fn model_file_errors() {
        let faces = [[0.1, 0.2, 0.3], [0.4, 0.3, 0.2]];
        let model = fit_rsr(&faces, "v", false).unwrap();
        let json = model.to_json_string().unwrap();

        let bumped = json.replace("\"version\":1", "\"version\":99");
        assert!(matches!(
            RsrModel::from_json_str(&bumped),
            Err(Error::VersionMismatch { found: 99, .. })
        ));

        let truncated = &json[..json.len() / 2];
        assert!(matches!(
            RsrModel::from_json_str(truncated),
            Err(Error::ModelFormat { .. })
        ));
    }
}
