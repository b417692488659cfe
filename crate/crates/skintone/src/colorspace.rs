//! Deterministic sRGB → CIE-Lab conversion and the pixel-wise ITA angle.
//!
//! Fixed-parameter transforms only: sRGB gamma, D65 illuminant, CIE 1931 2°
//! standard observer. All math is f64 so results are identical across
//! platforms and thread counts.

use serde::{Deserialize, Serialize};

/// 8-bit sRGB pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgbPixel {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl RgbPixel {
    pub fn new(r: u8, g: u8, b: u8) -> Self {
        RgbPixel { r, g, b }
    }
}

/// CIE-Lab coordinates. `l` is in [0, 100] for any valid sRGB input;
/// `a` (green–red) and `b` (blue–yellow) are finite opponent axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabPixel {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

// sRGB linear → XYZ, D65 white, 2° observer.
const XYZ_FROM_RGB: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

/// sRGB gamma expansion of one channel scaled to [0, 1].
pub fn srgb_channel_to_linear(channel: u8) -> f64 {
    let c = channel as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse gamma: linear [0, 1] back to the sRGB-encoded value in [0, 1].
pub fn linear_to_srgb_channel(linear: f64) -> f64 {
    if linear <= 0.0031308 {
        12.92 * linear
    } else {
        1.055 * linear.powf(1.0 / 2.4) - 0.055
    }
}

/// Gamma-expand a pixel to linear RGB in [0, 1].
pub fn srgb_to_linear_rgb(p: RgbPixel) -> [f64; 3] {
    [
        srgb_channel_to_linear(p.r),
        srgb_channel_to_linear(p.g),
        srgb_channel_to_linear(p.b),
    ]
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

/// Full sRGB → CIE-Lab conversion (D65, 2° observer). Total and pure.
pub fn srgb_to_lab(p: RgbPixel) -> LabPixel {
    let rgb = srgb_to_linear_rgb(p);
    let mut xyz = [0.0f64; 3];
    for (row, out) in XYZ_FROM_RGB.iter().zip(xyz.iter_mut()) {
        *out = row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
    }
    let fx = lab_f(xyz[0] / D65_WHITE[0]);
    let fy = lab_f(xyz[1] / D65_WHITE[1]);
    let fz = lab_f(xyz[2] / D65_WHITE[2]);
    LabPixel {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Individual typology angle of a Lab pixel, in degrees.
///
/// Computes `arctan((L - 50) / b) * 180 / pi`. For `b == 0` the limit
/// convention applies: +90° when L > 50, −90° when L < 50, 0° when L = 50.
pub fn lab_ita(p: LabPixel) -> f64 {
    if p.b == 0.0 {
        if p.l > 50.0 {
            90.0
        } else if p.l < 50.0 {
            -90.0
        } else {
            0.0
        }
    } else {
        ((p.l - 50.0) / p.b).atan() * (180.0 / std::f64::consts::PI)
    }
}
