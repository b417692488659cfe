//! Dataset manifests, image decoding, and skin-patch extraction.
//!
//! Manifests are JSON Lines: one sample record per line carrying the image
//! path, subject/sample ids, an optional group label, and one to three
//! region polygons (forehead, left cheek, right cheek). Landmarking happens
//! upstream; this module only consumes its output.

use std::collections::HashSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::Deserialize;

use crate::colorspace::RgbPixel;
use crate::error::{Error, Result};

/// Default minimum number of interior pixels a usable patch must have.
/// Rank-2 factorization on fewer pixels is unstable.
pub const MIN_PATCH_PIXELS_DEFAULT: usize = 64;

/// Coordinates above this bound would risk overflow in the exact
/// rasterization arithmetic; no real face raster comes close.
pub const MAX_COORD: i64 = 1 << 24;

/// The three skin regions a sample may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionKind {
    Forehead,
    LeftCheek,
    RightCheek,
}

impl RegionKind {
    pub const ALL: [RegionKind; 3] = [
        RegionKind::Forehead,
        RegionKind::LeftCheek,
        RegionKind::RightCheek,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegionKind::Forehead => "forehead",
            RegionKind::LeftCheek => "left_cheek",
            RegionKind::RightCheek => "right_cheek",
        }
    }
}

impl std::fmt::Display for RegionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Validated region polygon: ≥3 vertices, nonnegative integer coordinates,
/// no properly crossing edges. Collinear (zero-area) rings are allowed here
/// and fail later at extraction with a too-few-pixels error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPolygon {
    kind: RegionKind,
    vertices: Vec<(u32, u32)>,
}

impl RegionPolygon {
    pub fn new(kind: RegionKind, vertices: Vec<(i64, i64)>) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidPolygon {
            region: kind.name().to_string(),
            reason,
        };
        if vertices.len() < 3 {
            return Err(invalid(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        for &(x, y) in &vertices {
            if x < 0 || y < 0 {
                return Err(invalid(format!("negative coordinate ({x}, {y})")));
            }
            if x > MAX_COORD || y > MAX_COORD {
                return Err(invalid(format!("coordinate ({x}, {y}) out of range")));
            }
        }
        if let Some((i, j)) = find_proper_crossing(&vertices) {
            return Err(invalid(format!("edges {i} and {j} cross")));
        }
        Ok(RegionPolygon {
            kind,
            vertices: vertices
                .into_iter()
                .map(|(x, y)| (x as u32, y as u32))
                .collect(),
        })
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    pub fn vertices(&self) -> &[(u32, u32)] {
        &self.vertices
    }
}

fn orient(a: (i64, i64), b: (i64, i64), c: (i64, i64)) -> i64 {
    let v = (b.0 - a.0) as i128 * (c.1 - a.1) as i128 - (b.1 - a.1) as i128 * (c.0 - a.0) as i128;
    v.signum() as i64
}

/// Find a pair of edges that cross at interior points of both (a "proper"
/// crossing). Shared endpoints and collinear overlaps do not count, so
/// degenerate spikes remain constructible.
fn find_proper_crossing(vertices: &[(i64, i64)]) -> Option<(usize, usize)> {
    let n = vertices.len();
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
        for j in (i + 1)..n {
            let (c, d) = (vertices[j], vertices[(j + 1) % n]);
            let o1 = orient(a, b, c);
            let o2 = orient(a, b, d);
            let o3 = orient(c, d, a);
            let o4 = orient(c, d, b);
            if o1 * o2 < 0 && o3 * o4 < 0 {
                return Some((i, j));
            }
        }
    }
    None
}

/// One manifest line: an image plus its subject/sample identity and regions.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub subject_id: String,
    pub sample_id: String,
    pub group_label: Option<String>,
    pub regions: Vec<RegionPolygon>,
}

/// An ordered dataset: sample order in the file is the canonical output
/// order everywhere downstream.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub samples: Vec<SampleRecord>,
    /// Directory image paths are resolved against (the manifest's parent).
    pub base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    /// Absolute or base-relative path for a sample's image.
    pub fn image_path(&self, record: &SampleRecord) -> PathBuf {
        match (&self.base_dir, record.image_path.is_absolute()) {
            (Some(base), false) => base.join(&record.image_path),
            _ => record.image_path.clone(),
        }
    }
}

#[derive(Deserialize)]
struct RawRegions {
    #[serde(default)]
    forehead: Option<Vec<[i64; 2]>>,
    #[serde(default)]
    left_cheek: Option<Vec<[i64; 2]>>,
    #[serde(default)]
    right_cheek: Option<Vec<[i64; 2]>>,
}

#[derive(Deserialize)]
struct RawRecord {
    image_path: String,
    subject_id: String,
    sample_id: String,
    #[serde(default)]
    group_label: Option<String>,
    regions: RawRegions,
}

/// Load and validate a JSON Lines manifest from disk. The dataset name
/// defaults to the file stem.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let mut manifest = parse_manifest_str(&name, &text)?;
    manifest.base_dir = path.parent().map(Path::to_path_buf);
    Ok(manifest)
}

/// Parse manifest text. Blank lines are skipped; any other malformed line
/// fails with its 1-based line number.
pub fn parse_manifest_str(dataset_name: &str, text: &str) -> Result<DatasetManifest> {
    let mut samples = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::ManifestParse {
            line: line_no,
            message: e.to_string(),
        })?;
        let key = (raw.subject_id.clone(), raw.sample_id.clone());
        if !seen.insert(key) {
            return Err(Error::DuplicateSample {
                subject_id: raw.subject_id,
                sample_id: raw.sample_id,
                line: line_no,
            });
        }
        let mut regions = Vec::new();
        let raw_regions = [
            (RegionKind::Forehead, raw.regions.forehead),
            (RegionKind::LeftCheek, raw.regions.left_cheek),
            (RegionKind::RightCheek, raw.regions.right_cheek),
        ];
        for (kind, verts) in raw_regions {
            if let Some(verts) = verts {
                let poly =
                    RegionPolygon::new(kind, verts.iter().map(|v| (v[0], v[1])).collect())
                        .map_err(|e| Error::ManifestParse {
                            line: line_no,
                            message: e.to_string(),
                        })?;
                regions.push(poly);
            }
        }
        if regions.is_empty() {
            return Err(Error::ManifestParse {
                line: line_no,
                message: "sample has no regions".to_string(),
            });
        }
        samples.push(SampleRecord {
            image_path: PathBuf::from(raw.image_path),
            subject_id: raw.subject_id,
            sample_id: raw.sample_id,
            group_label: raw.group_label,
            regions,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(DatasetManifest {
        dataset_name: dataset_name.to_string(),
        samples,
        base_dir: None,
    })
}

/// Decode an 8-bit RGB image from disk (PNG or JPEG; alpha is dropped).
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(img.to_rgb8())
}

/// Decode an image from an in-memory byte buffer.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::ImageDecode {
        path: PathBuf::from("<memory>"),
        source: e,
    })?;
    Ok(img.to_rgb8())
}

/// The skin pixels of one region: colors plus their source coordinates, in
/// row-major scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelPatch {
    pub pixels: Vec<RgbPixel>,
    pub coords: Vec<(u32, u32)>,
    pub region_kind: RegionKind,
}

impl PixelPatch {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Exact rational scanline crossing, `num / den` with `den > 0`.
#[derive(Clone, Copy)]
struct Crossing {
    num: i64,
    den: i64,
}

impl Crossing {
    fn cmp_exact(&self, other: &Crossing) -> std::cmp::Ordering {
        (self.num as i128 * other.den as i128).cmp(&(other.num as i128 * self.den as i128))
    }

    /// Smallest integer strictly greater than `num / den`.
    fn next_int_above(&self) -> i64 {
        self.num.div_euclid(self.den) + 1
    }

    /// Largest integer strictly less than `num / den`.
    fn last_int_below(&self) -> i64 {
        if self.num.rem_euclid(self.den) == 0 {
            self.num / self.den - 1
        } else {
            self.num.div_euclid(self.den)
        }
    }
}

/// Collect the lattice points strictly inside `vertices` under the even-odd
/// rule, row-major. Exact integer/rational arithmetic throughout; boundary
/// points (edges, vertices, horizontal runs) are never emitted.
fn interior_points(vertices: &[(u32, u32)]) -> Vec<(u32, u32)> {
    let verts: Vec<(i64, i64)> = vertices.iter().map(|&(x, y)| (x as i64, y as i64)).collect();
    let n = verts.len();
    let y_min = verts.iter().map(|v| v.1).min().unwrap();
    let y_max = verts.iter().map(|v| v.1).max().unwrap();
    let mut out = Vec::new();
    let mut crossings: Vec<Crossing> = Vec::new();
    let mut horizontal: Vec<(i64, i64)> = Vec::new();
    let mut row_vertices: Vec<i64> = Vec::new();

    for py in (y_min + 1)..y_max {
        crossings.clear();
        horizontal.clear();
        row_vertices.clear();
        for i in 0..n {
            let p = verts[i];
            let q = verts[(i + 1) % n];
            if p.1 == py {
                row_vertices.push(p.0);
            }
            if p.1 == q.1 {
                if p.1 == py {
                    horizontal.push((p.0.min(q.0), p.0.max(q.0)));
                }
                continue;
            }
            if (p.1 > py) != (q.1 > py) {
                let mut num = p.0 * (q.1 - p.1) + (py - p.1) * (q.0 - p.0);
                let mut den = q.1 - p.1;
                if den < 0 {
                    num = -num;
                    den = -den;
                }
                crossings.push(Crossing { num, den });
            }
        }
        crossings.sort_by(Crossing::cmp_exact);
        debug_assert!(crossings.len().is_multiple_of(2));
        for pair in crossings.chunks_exact(2) {
            let lo = pair[0].next_int_above();
            let hi = pair[1].last_int_below();
            for px in lo..=hi {
                let on_horizontal = horizontal.iter().any(|&(a, b)| a <= px && px <= b);
                if on_horizontal || row_vertices.contains(&px) {
                    continue;
                }
                out.push((px as u32, py as u32));
            }
        }
    }
    out
}

/// Extract the pixels strictly inside `poly` from a decoded image.
///
/// Fails if any vertex falls outside the raster or the interior holds fewer
/// than `min_patch_pixels` points.
pub fn extract_patch(
    image: &RgbImage,
    poly: &RegionPolygon,
    min_patch_pixels: usize,
) -> Result<PixelPatch> {
    let (w, h) = image.dimensions();
    if poly
        .vertices
        .iter()
        .any(|&(x, y)| x >= w || y >= h)
    {
        return Err(Error::PolygonOutOfBounds {
            region: poly.kind.name().to_string(),
            width: w,
            height: h,
        });
    }
    let coords = interior_points(&poly.vertices);
    if coords.len() < min_patch_pixels.max(1) {
        return Err(Error::TooFewPixels {
            region: poly.kind.name().to_string(),
            found: coords.len(),
            required: min_patch_pixels.max(1),
        });
    }
    let pixels = coords
        .iter()
        .map(|&(x, y)| {
            let p = image.get_pixel(x, y);
            RgbPixel::new(p[0], p[1], p[2])
        })
        .collect();
    Ok(PixelPatch {
        pixels,
        coords,
        region_kind: poly.kind,
    })
}
