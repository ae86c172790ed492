use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::SceneConfig;

/// A head point. Pixel `(row i, col j)` covers `[j, j+1) × [i, i+1)`, so
/// valid coordinates lie in `[0, W) × [0, H)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadAnnotation {
    pub frame: usize,
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

impl HeadAnnotation {
    pub fn point(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Index of the pixel containing a continuous coordinate, clamped to the
/// grid.
#[inline]
pub fn pixel_of(v: f64, extent: usize) -> usize {
    (v.floor().max(0.0) as usize).min(extent.saturating_sub(1))
}

pub(crate) fn check_extents(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "map extents must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

pub(crate) fn check_points(points: &[(f64, f64)], width: usize, height: usize) -> Result<()> {
    for (i, &(x, y)) in points.iter().enumerate() {
        if !(x >= 0.0 && x < width as f64 && y >= 0.0 && y < height as f64) {
            return Err(Error::OutOfBounds {
                what: "head",
                index: i,
                detail: format!("({x}, {y}) outside {width}x{height}"),
            });
        }
    }
    Ok(())
}

pub(crate) fn check_points_in(heads: &[HeadAnnotation], width: usize, height: usize) -> Result<()> {
    let points: Vec<(f64, f64)> = heads.iter().map(HeadAnnotation::point).collect();
    check_points(&points, width, height)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Illumination {
    Cloudy,
    Sunny,
    Night,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Altitude {
    High,
    Low,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityLevel {
    Crowded,
    Sparse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attributes {
    pub illumination: Illumination,
    pub altitude: Altitude,
    pub density: DensityLevel,
}

impl fmt::Display for Attributes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}/{:?}/{:?}",
            self.illumination, self.altitude, self.density
        )
    }
}

/// Sidecar describing one annotated sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub attributes: Attributes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneConfig>,
}

impl SequenceMeta {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct AnnotationRow {
    frame: usize,
    id: u64,
    x: f64,
    y: f64,
}

/// Write annotations as CSV with header `frame,id,x,y`.
pub fn write_annotations(path: &Path, heads: &[HeadAnnotation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for h in heads {
        w.serialize(AnnotationRow {
            frame: h.frame,
            id: h.id,
            x: h.x,
            y: h.y,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a `frame,id,x,y` CSV, rejecting duplicate `(frame, id)` pairs and
/// non-finite coordinates.
pub fn read_annotations(path: &Path) -> Result<Vec<HeadAnnotation>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: AnnotationRow = row?;
        if !(row.x.is_finite() && row.y.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{}: frame {} id {}",
                path.display(),
                row.frame,
                row.id
            )));
        }
        if !seen.insert((row.frame, row.id)) {
            return Err(Error::format(
                "annotations",
                format!(
                    "{}: duplicate (frame {}, id {})",
                    path.display(),
                    row.frame,
                    row.id
                ),
            ));
        }
        out.push(HeadAnnotation {
            frame: row.frame,
            id: row.id,
            x: row.x,
            y: row.y,
        });
    }
    Ok(out)
}

/// Group annotations by frame index, `frame_count` buckets.
pub fn heads_by_frame(heads: &[HeadAnnotation], frame_count: usize) -> Vec<Vec<HeadAnnotation>> {
    let mut out = vec![Vec::new(); frame_count];
    for h in heads {
        if h.frame < frame_count {
            out[h.frame].push(*h);
        }
    }
    out
}

/// Group annotations by identity into frame-ordered trajectories.
pub fn trajectories(heads: &[HeadAnnotation]) -> BTreeMap<u64, Vec<HeadAnnotation>> {
    let mut out: BTreeMap<u64, Vec<HeadAnnotation>> = BTreeMap::new();
    for h in heads {
        out.entry(h.id).or_default().push(*h);
    }
    for t in out.values_mut() {
        t.sort_by_key(|h| h.frame);
    }
    out
}
