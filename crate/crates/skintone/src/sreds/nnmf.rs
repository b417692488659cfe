//! Rank-2 nonnegative matrix factorization of a patch's linear-RGB pixels.
//!
//! The dichromatic reflection model posits exactly two color bases per
//! surface: body (diffuse) and interface (specular) reflection. Each patch
//! is factored as V ≈ WH with W the 3×2 basis and H the 2×N activations,
//! using Lee–Seung multiplicative Frobenius updates.
//!
//! Initialization is data driven: the two basis columns start at the
//! extreme chromaticities of the pixel cloud (the extreme rays of its
//! planar cone) and the activations at a nonnegativity-clipped least-squares
//! fit. Plain random starts stall far above the reconstruction accuracy the
//! rest of the pipeline needs; this start typically lands within rounding
//! error of an exact factorization when one exists, and the multiplicative
//! updates then only improve it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MU_EPS: f64 = 1e-12;

/// Iteration controls for the factorization. `tol` is the relative
/// per-iteration objective decrease below which iteration stops; zero
/// disables early stopping. All randomness comes from `seed`.
#[derive(Debug, Clone, Copy)]
pub struct NnmfOptions {
    pub iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub min_pixels: usize,
}

impl Default for NnmfOptions {
    fn default() -> Self {
        NnmfOptions {
            iters: 500,
            tol: 1e-6,
            seed: 0,
            min_pixels: crate::ingestion::MIN_PATCH_PIXELS_DEFAULT,
        }
    }
}

/// Factorization output. `basis[k]` is the k-th column of W (a color),
/// L1-normalized when its sum is nonzero; `activations[j][k]` is H[k, j].
/// `objective` holds the squared Frobenius error at init and after every
/// accepted iteration.
#[derive(Debug, Clone)]
pub struct Nnmf {
    pub basis: [[f64; 3]; 2],
    pub activations: Vec<[f64; 2]>,
    pub objective: Vec<f64>,
}

impl Nnmf {
    /// ‖V − WH‖_F / ‖V‖_F for the matrix this factorization was fitted to.
    pub fn relative_error(&self, v: &[[f64; 3]]) -> f64 {
        let norm2: f64 = v.iter().flatten().map(|x| x * x).sum();
        if norm2 <= 0.0 {
            return 0.0;
        }
        (self.objective.last().unwrap() / norm2).sqrt()
    }
}

fn objective(v: &[[f64; 3]], w: &[[f64; 3]; 2], h: &[[f64; 2]]) -> f64 {
    let mut sum = 0.0;
    for (vj, hj) in v.iter().zip(h.iter()) {
        for c in 0..3 {
            let r = vj[c] - (w[0][c] * hj[0] + w[1][c] * hj[1]);
            sum += r * r;
        }
    }
    sum
}

fn validate(v: &[[f64; 3]], min_pixels: usize) -> Result<()> {
    if v.len() < min_pixels {
        return Err(Error::PatchTooSmall {
            found: v.len(),
            required: min_pixels,
        });
    }
    let mut any_positive = false;
    for (j, vj) in v.iter().enumerate() {
        for &x in vj {
            if !x.is_finite() || !(0.0..=1.0 + 1e-9).contains(&x) {
                return Err(Error::InvalidMatrix {
                    reason: format!("entry {x} at pixel {j} outside [0, 1]"),
                });
            }
            if x > 0.0 {
                any_positive = true;
            }
        }
    }
    if !any_positive {
        return Err(Error::AllZeroMatrix);
    }
    Ok(())
}

fn init(v: &[[f64; 3]], seed: u64) -> ([[f64; 3]; 2], Vec<[f64; 2]>) {
    let n = v.len();
    let col_sums: Vec<f64> = v.iter().map(|vj| vj[0] + vj[1] + vj[2]).collect();
    let chroma: Vec<[f64; 3]> = v
        .iter()
        .zip(col_sums.iter())
        .map(|(vj, &s)| {
            if s > MU_EPS {
                [vj[0] / s, vj[1] / s, vj[2] / s]
            } else {
                [1.0 / 3.0; 3]
            }
        })
        .collect();

    let mut mean_c = [0.0f64; 3];
    for c in &chroma {
        for k in 0..3 {
            mean_c[k] += c[k];
        }
    }
    for m in &mut mean_c {
        *m /= n as f64;
    }

    let dist2 = |a: &[f64; 3], b: &[f64; 3]| {
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    };
    let argmax = |f: &dyn Fn(usize) -> f64| {
        let mut best = 0usize;
        let mut best_v = f(0);
        for j in 1..n {
            let fv = f(j);
            if fv > best_v {
                best = j;
                best_v = fv;
            }
        }
        best
    };
    let a = argmax(&|j| dist2(&chroma[j], &mean_c));
    let b = argmax(&|j| dist2(&chroma[j], &chroma[a]));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = [chroma[a], chroma[b]];
    for col in &mut w {
        for x in col.iter_mut() {
            *x += rng.gen_range(0.0..1e-6);
        }
    }

    // clipped least-squares start for H against the fixed W
    let dot3 = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let g00 = dot3(&w[0], &w[0]);
    let g01 = dot3(&w[0], &w[1]);
    let g11 = dot3(&w[1], &w[1]);
    let det = g00 * g11 - g01 * g01;
    let mean_sum = col_sums.iter().sum::<f64>() / n as f64;
    let floor = 1e-6 * mean_sum.max(MU_EPS);
    let h: Vec<[f64; 2]> = if det <= 1e-12 * g00 * g11 {
        col_sums
            .iter()
            .map(|&s| [(s / 2.0).max(floor); 2])
            .collect()
    } else {
        v.iter()
            .map(|vj| {
                let b0 = dot3(&w[0], vj);
                let b1 = dot3(&w[1], vj);
                [
                    ((g11 * b0 - g01 * b1) / det).max(floor),
                    ((g00 * b1 - g01 * b0) / det).max(floor),
                ]
            })
            .collect()
    };
    (w, h)
}

/// Factor `v` (one linear-RGB triple per pixel, entries in [0, 1]) into a
/// rank-2 nonnegative basis and activations. Deterministic given `seed`.
pub fn nnmf(v: &[[f64; 3]], opts: &NnmfOptions) -> Result<Nnmf> {
    validate(v, opts.min_pixels)?;
    // measurement floor of the objective itself: evaluating ||V - WH||^2
    // carries rounding on the order of eps * ||V||^2
    let norm2_v: f64 = v.iter().flatten().map(|x| x * x).sum();
    let obj_floor = 1e-13 * norm2_v.max(f64::MIN_POSITIVE);
    let (mut w, mut h) = init(v, opts.seed);
    let mut trace = Vec::with_capacity(opts.iters + 1);
    trace.push(objective(v, &w, &h));

    for _ in 0..opts.iters {
        // H <- H ∘ (WᵀV) ⊘ (WᵀW H)
        let g = [
            [
                w[0][0] * w[0][0] + w[0][1] * w[0][1] + w[0][2] * w[0][2],
                w[0][0] * w[1][0] + w[0][1] * w[1][1] + w[0][2] * w[1][2],
            ],
            [0.0, w[1][0] * w[1][0] + w[1][1] * w[1][1] + w[1][2] * w[1][2]],
        ];
        let g01 = g[0][1];
        for (vj, hj) in v.iter().zip(h.iter_mut()) {
            let num0 = w[0][0] * vj[0] + w[0][1] * vj[1] + w[0][2] * vj[2];
            let num1 = w[1][0] * vj[0] + w[1][1] * vj[1] + w[1][2] * vj[2];
            let den0 = g[0][0] * hj[0] + g01 * hj[1];
            let den1 = g01 * hj[0] + g[1][1] * hj[1];
            hj[0] *= num0 / (den0 + MU_EPS);
            hj[1] *= num1 / (den1 + MU_EPS);
        }

        // W <- W ∘ (VHᵀ) ⊘ (W H Hᵀ)
        let mut vht = [[0.0f64; 3]; 2];
        let mut hht = [[0.0f64; 2]; 2];
        for (vj, hj) in v.iter().zip(h.iter()) {
            for k in 0..2 {
                for c in 0..3 {
                    vht[k][c] += vj[c] * hj[k];
                }
            }
            hht[0][0] += hj[0] * hj[0];
            hht[0][1] += hj[0] * hj[1];
            hht[1][1] += hj[1] * hj[1];
        }
        hht[1][0] = hht[0][1];
        #[allow(clippy::needless_range_loop)]
        for c in 0..3 {
            let whht0 = w[0][c] * hht[0][0] + w[1][c] * hht[1][0];
            let whht1 = w[0][c] * hht[0][1] + w[1][c] * hht[1][1];
            w[0][c] *= vht[0][c] / (whht0 + MU_EPS);
            w[1][c] *= vht[1][c] / (whht1 + MU_EPS);
        }

        let obj = objective(v, &w, &h);
        let prev = *trace.last().unwrap();
        debug_assert!(
            obj <= prev + obj_floor,
            "objective increased: {prev} -> {obj}"
        );
        trace.push(obj);
        if opts.tol > 0.0 && prev > 0.0 && (prev - obj) / prev < opts.tol {
            break;
        }
    }

    // L1-normalize basis columns, compensating in the activations
    for k in 0..2 {
        let s = w[k][0] + w[k][1] + w[k][2];
        if s > MU_EPS {
            for x in &mut w[k] {
                *x /= s;
            }
            for hj in h.iter_mut() {
                hj[k] *= s;
            }
        }
    }
    Ok(Nnmf {
        basis: w,
        activations: h,
        objective: trace,
    })
}
