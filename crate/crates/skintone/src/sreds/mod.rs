//! The SREDS metric: dichromatic separation of skin patches via rank-2
//! NNMF, then a kernel-PCA tone gradient over the diffuse components.
//!
//! Per patch: factor the linear-RGB pixels into two nonnegative color
//! bases, call the one nearer the illuminant direction specular and the
//! other diffuse, and summarize the patch as diffuse color × mean diffuse
//! activation. A face's SREDS score is the mean of its regions' projections
//! onto the fitted gradient.

mod kpca;
mod nnmf;

pub use kpca::{fit_sreds, project_sreds, SredsModel, SredsOptions, SREDS_MODEL_VERSION};
pub use nnmf::{nnmf, Nnmf, NnmfOptions};

use crate::colorspace::srgb_to_linear_rgb;
use crate::error::{Error, Result};
use crate::ingestion::PixelPatch;

/// Reference illuminant direction used to identify the specular basis.
/// Near-white studio light is assumed.
const ILLUMINANT_DIR: [f64; 3] = [
    0.577_350_269_189_625_8,
    0.577_350_269_189_625_8,
    0.577_350_269_189_625_8,
];

/// A patch factored into its two dichromatic components.
#[derive(Debug, Clone)]
pub struct DichromaticDecomposition {
    /// `basis[k]` is one L1-normalized color column of W.
    pub basis: [[f64; 3]; 2],
    /// `activations[j][k]` is the strength of basis `k` at pixel `j`.
    pub activations: Vec<[f64; 2]>,
    pub diffuse_index: usize,
    pub specular_index: usize,
    /// ‖V − WH‖_F / ‖V‖_F.
    pub recon_rel_error: f64,
}

/// Mean diffuse radiance of a patch: diffuse basis color scaled by the mean
/// diffuse activation, in linear RGB. Keeps lightness, unlike the
/// scale-free basis column alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffuseFeature {
    pub vector: [f64; 3],
}

/// Decide which basis column is specular: the one at the smaller angle to
/// the illuminant direction. Angles within 1e-6 rad tie to index 0.
pub fn classify_bases(basis: &[[f64; 3]; 2]) -> Result<(usize, usize)> {
    let mut angles = [0.0f64; 2];
    for (k, col) in basis.iter().enumerate() {
        let norm = (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]).sqrt();
        if norm <= 1e-12 {
            return Err(Error::ZeroBasisColumn { index: k });
        }
        let cos = (col[0] * ILLUMINANT_DIR[0]
            + col[1] * ILLUMINANT_DIR[1]
            + col[2] * ILLUMINANT_DIR[2])
            / norm;
        angles[k] = cos.clamp(-1.0, 1.0).acos();
    }
    // ties (within 1e-6 rad) resolve to index 0 as specular
    let specular = if (angles[0] - angles[1]).abs() <= 1e-6 || angles[0] < angles[1] {
        0
    } else {
        1
    };
    Ok((1 - specular, specular))
}

/// Factor an already-linear pixel matrix and classify the components.
pub fn decompose_matrix(v: &[[f64; 3]], opts: &NnmfOptions) -> Result<DichromaticDecomposition> {
    let fact = nnmf(v, opts)?;
    let (diffuse_index, specular_index) = classify_bases(&fact.basis)?;
    let recon_rel_error = fact.relative_error(v);
    Ok(DichromaticDecomposition {
        basis: fact.basis,
        activations: fact.activations,
        diffuse_index,
        specular_index,
        recon_rel_error,
    })
}

/// Gamma-expand a patch into the factorization's pixel matrix, in a
/// canonical row-major coordinate order so the result cannot depend on how
/// the caller happened to order the pixels.
fn linear_matrix(patch: &PixelPatch) -> Vec<[f64; 3]> {
    let mut order: Vec<usize> = (0..patch.len()).collect();
    order.sort_by_key(|&i| {
        let (x, y) = patch.coords[i];
        let p = patch.pixels[i];
        (y, x, p.r, p.g, p.b)
    });
    order
        .into_iter()
        .map(|i| srgb_to_linear_rgb(patch.pixels[i]))
        .collect()
}

/// Decompose a pixel patch.
pub fn decompose_patch(patch: &PixelPatch, opts: &NnmfOptions) -> Result<DichromaticDecomposition> {
    decompose_matrix(&linear_matrix(patch), opts)
}

/// Diffuse feature straight from a linear pixel matrix.
pub fn diffuse_from_matrix(v: &[[f64; 3]], opts: &NnmfOptions) -> Result<DiffuseFeature> {
    let d = decompose_matrix(v, opts)?;
    Ok(feature_of(&d))
}

/// Diffuse feature of a patch. Deterministic given the seed in `opts`.
pub fn extract_diffuse(patch: &PixelPatch, opts: &NnmfOptions) -> Result<DiffuseFeature> {
    diffuse_from_matrix(&linear_matrix(patch), opts)
}

fn feature_of(d: &DichromaticDecomposition) -> DiffuseFeature {
    let k = d.diffuse_index;
    let mean_activation =
        d.activations.iter().map(|h| h[k]).sum::<f64>() / d.activations.len() as f64;
    let col = d.basis[k];
    DiffuseFeature {
        vector: [
            col[0] * mean_activation,
            col[1] * mean_activation,
            col[2] * mean_activation,
        ],
    }
}

/// Face score: mean projection of the per-region diffuse features. Regions
/// whose extraction fails are logged and skipped; the call errors only when
/// no region survives.
pub fn face_sreds(
    model: &SredsModel,
    patches: &[PixelPatch],
    opts: &NnmfOptions,
) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::NoRegions);
    }
    let mut scores = Vec::with_capacity(patches.len());
    for patch in patches {
        match extract_diffuse(patch, opts) {
            Ok(f) => scores.push(project_sreds(model, &f)),
            Err(e) => log::warn!("{} region skipped: {e}", patch.region_kind),
        }
    }
    if scores.is_empty() {
        return Err(Error::NoRegions);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
