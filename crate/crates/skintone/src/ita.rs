//! Region- and face-level individual typology angle estimation.
//!
//! Per pixel: sRGB → Lab → ITA. The per-pixel map is smoothed with a box
//! filter over the patch support, each region is summarized by the mode of
//! a 1° histogram, and the face value is the mean of its region modes.

use crate::colorspace::{lab_ita, srgb_to_lab};
use crate::error::{Error, Result};
use crate::ingestion::PixelPatch;

/// Default averaging-filter size (window side length, must be odd).
pub const DEFAULT_SMOOTHING_KERNEL: usize = 5;

/// Per-pixel ITA values, aligned index-for-index with a patch's `coords`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItaMap {
    pub values: Vec<f64>,
}

/// Pixel-wise ITA over a patch.
pub fn ita_map(patch: &PixelPatch) -> ItaMap {
    ItaMap {
        values: patch
            .pixels
            .iter()
            .map(|&p| lab_ita(srgb_to_lab(p)))
            .collect(),
    }
}

/// Box-filter the map over the `kernel`×`kernel` neighborhood intersected
/// with the patch support. Windows at the patch edge average whatever
/// members exist, so out-of-region pixels never contaminate the result.
/// `kernel == 1` is the identity.
pub fn smooth_ita(map: &ItaMap, coords: &[(u32, u32)], kernel: usize) -> Result<ItaMap> {
    if kernel.is_multiple_of(2) {
        return Err(Error::EvenKernel { kernel });
    }
    assert_eq!(map.values.len(), coords.len(), "map/coords misaligned");
    if kernel == 1 || coords.is_empty() {
        return Ok(map.clone());
    }
    let radius = (kernel / 2) as i64;
    let min_x = coords.iter().map(|c| c.0).min().unwrap() as i64;
    let min_y = coords.iter().map(|c| c.1).min().unwrap() as i64;
    let max_x = coords.iter().map(|c| c.0).max().unwrap() as i64;
    let max_y = coords.iter().map(|c| c.1).max().unwrap() as i64;
    let width = (max_x - min_x + 1) as usize;
    let height = (max_y - min_y + 1) as usize;

    // dense index grid over the bounding box
    let mut grid: Vec<Option<u32>> = vec![None; width * height];
    for (i, &(x, y)) in coords.iter().enumerate() {
        let gx = (x as i64 - min_x) as usize;
        let gy = (y as i64 - min_y) as usize;
        grid[gy * width + gx] = Some(i as u32);
    }

    let mut smoothed = Vec::with_capacity(coords.len());
    for &(x, y) in coords {
        let cx = x as i64 - min_x;
        let cy = y as i64 - min_y;
        let mut sum = 0.0;
        let mut count = 0usize;
        for gy in (cy - radius).max(0)..=(cy + radius).min(height as i64 - 1) {
            for gx in (cx - radius).max(0)..=(cx + radius).min(width as i64 - 1) {
                if let Some(idx) = grid[gy as usize * width + gx as usize] {
                    sum += map.values[idx as usize];
                    count += 1;
                }
            }
        }
        smoothed.push(sum / count as f64);
    }
    Ok(ItaMap { values: smoothed })
}

/// Region summary: mode of a 1°-bin histogram over [−90°, 90°]. The mode is
/// the center of the most populated bin; ties go to the lower bin.
pub fn region_ita(map: &ItaMap) -> Result<f64> {
    if map.values.is_empty() {
        return Err(Error::EmptyItaMap);
    }
    let mut counts = [0u32; 180];
    for &v in &map.values {
        let bin = ((v + 90.0).floor() as i64).clamp(0, 179) as usize;
        counts[bin] += 1;
    }
    let mut best = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    Ok(best as f64 - 89.5)
}

/// Face value: arithmetic mean of the available region modes.
pub fn face_ita(region_values: &[f64]) -> Result<f64> {
    if region_values.is_empty() {
        return Err(Error::NoRegions);
    }
    Ok(region_values.iter().sum::<f64>() / region_values.len() as f64)
}

/// Full per-face ITA: map, smooth, mode per region, mean across regions.
pub fn face_ita_from_patches(patches: &[PixelPatch], kernel: usize) -> Result<f64> {
    let mut modes = Vec::with_capacity(patches.len());
    for patch in patches {
        let map = ita_map(patch);
        let smoothed = smooth_ita(&map, &patch.coords, kernel)?;
        modes.push(region_ita(&smoothed)?);
    }
    face_ita(&modes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::RgbPixel;
    use crate::ingestion::RegionKind;

    fn patch_of(pixels: Vec<RgbPixel>, coords: Vec<(u32, u32)>) -> PixelPatch {
        PixelPatch {
            pixels,
            coords,
            region_kind: RegionKind::Forehead,
        }
    }

    /// sRGB byte color whose Lab (L-50)/b is 1, found by scanning; the
    /// exact angle does not matter as long as it is constant.
    fn constant_patch(n: usize, p: RgbPixel) -> PixelPatch {
        let coords = (0..n).map(|i| (i as u32 % 16, i as u32 / 16)).collect();
        patch_of(vec![p; n], coords)
    }

    #[test]
    fn map_is_elementwise_and_gray_hits_limit() {
        // real grays land at |b| ~ 5e-6, so the map sits at arctan's limit
        // rather than on the literal b == 0 branch
        let gray = constant_patch(9, RgbPixel::new(180, 180, 180));
        let map = ita_map(&gray);
        assert!(
            map.values.iter().all(|&v| (v - 90.0).abs() < 1e-3),
            "{:?}",
            map.values
        );

        let dark_gray = constant_patch(4, RgbPixel::new(40, 40, 40));
        assert!(ita_map(&dark_gray)
            .values
            .iter()
            .all(|&v| (v + 90.0).abs() < 1e-3));
    }

    #[test]
    fn map_constancy() {
        let p = constant_patch(25, RgbPixel::new(190, 140, 110));
        let map = ita_map(&p);
        let first = map.values[0];
        assert!(map.values.iter().all(|&v| v == first));
    }

    #[test]
    fn smooth_identity_and_fixed_point() {
        let coords: Vec<(u32, u32)> = (0..3)
            .flat_map(|y| (0..3).map(move |x| (x, y)))
            .collect();
        let map = ItaMap {
            values: vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0],
        };
        let id = smooth_ita(&map, &coords, 1).unwrap();
        assert_eq!(id, map);

        let flat = ItaMap {
            values: vec![7.5; 9],
        };
        for kernel in [3, 5, 9] {
            let s = smooth_ita(&flat, &coords, kernel).unwrap();
            assert!(s.values.iter().all(|&v| (v - 7.5).abs() < 1e-12));
        }
    }

    #[test]
    fn smooth_box_filter_hand_values() {
        // 3x3 patch, center 9 elsewhere 0, kernel 3:
        // corners see 4 members (one of them the 9), edges 6, center all 9.
        let coords: Vec<(u32, u32)> = (0..3)
            .flat_map(|y| (0..3).map(move |x| (x, y)))
            .collect();
        let mut values = vec![0.0; 9];
        values[4] = 9.0;
        let s = smooth_ita(&ItaMap { values }, &coords, 3).unwrap();
        let expect = [2.25, 1.5, 2.25, 1.5, 1.0, 1.5, 2.25, 1.5, 2.25];
        for (got, want) in s.values.iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12, "{:?}", s.values);
        }
    }

    #[test]
    fn smooth_rejects_even_kernel() {
        let map = ItaMap { values: vec![0.0] };
        assert!(matches!(
            smooth_ita(&map, &[(0, 0)], 4),
            Err(Error::EvenKernel { kernel: 4 })
        ));
    }

    #[test]
    fn smooth_stays_within_input_range() {
        let coords: Vec<(u32, u32)> = (0..7)
            .flat_map(|y| (0..5).map(move |x| (x, y)))
            .collect();
        let values: Vec<f64> = (0..35).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for kernel in [3, 5, 7] {
            let s = smooth_ita(&ItaMap { values: values.clone() }, &coords, kernel).unwrap();
            for &v in &s.values {
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn region_mode_rules() {
        let single = ItaMap {
            values: vec![45.0; 12],
        };
        let m = region_ita(&single).unwrap();
        assert!((m - 45.0).abs() <= 0.5);

        let majority = ItaMap {
            values: [vec![10.2; 5], vec![20.2; 3]].concat(),
        };
        let m = region_ita(&majority).unwrap();
        assert!((m - 10.2).abs() <= 0.5, "mode bin should contain 10.2, got {m}");

        let tie = ItaMap {
            values: [vec![10.2; 4], vec![20.2; 4]].concat(),
        };
        let m = region_ita(&tie).unwrap();
        assert!((m - 10.2).abs() <= 0.5, "tie should go low, got {m}");

        assert!(matches!(
            region_ita(&ItaMap { values: vec![] }),
            Err(Error::EmptyItaMap)
        ));
    }

    #[test]
    fn region_mode_tracks_constant_patch_pixel_value() {
        let p = constant_patch(100, RgbPixel::new(200, 160, 130));
        let pixel_ita = ita_map(&p).values[0];
        let smoothed = smooth_ita(&ita_map(&p), &p.coords, 5).unwrap();
        let mode = region_ita(&smoothed).unwrap();
        assert!((mode - pixel_ita).abs() <= 0.5);
    }

    #[test]
    fn face_mean_rules() {
        assert_eq!(face_ita(&[30.0, 40.0, 50.0]).unwrap(), 40.0);
        assert_eq!(face_ita(&[45.0]).unwrap(), 45.0);
        assert_eq!(face_ita(&[0.0, 90.0]).unwrap(), 45.0);
        assert!(matches!(face_ita(&[]), Err(Error::NoRegions)));
        // permutation invariance
        let a = face_ita(&[12.5, -3.0, 61.0]).unwrap();
        let b = face_ita(&[61.0, 12.5, -3.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_tone_patch_maps_to_symmetric_angles() {
        // Two pixels whose Lab L sit symmetrically around 50 with equal b:
        // use raw LabPixel values through lab_ita instead of real colors.
        use crate::colorspace::{lab_ita, LabPixel};
        let hi = lab_ita(LabPixel { l: 60.0, a: 0.0, b: 10.0 });
        let lo = lab_ita(LabPixel { l: 40.0, a: 0.0, b: 10.0 });
        assert_eq!(hi, 45.0);
        assert_eq!(lo, -45.0);
    }
}
