use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detect::Detection;
use super::flow::Tracklet;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct DetectionRow {
    frame: usize,
    x: f64,
    y: f64,
    conf: f64,
}

#[derive(Serialize, Deserialize)]
struct TrackletRow {
    track_id: u64,
    frame: usize,
    x: f64,
    y: f64,
    conf: f64,
}

fn check_finite(path: &Path, row: usize, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{} row {}",
            path.display(),
            row + 1
        )))
    }
}

/// CSV with header `frame,x,y,conf`.
pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for d in detections {
        w.serialize(DetectionRow {
            frame: d.frame,
            x: d.x,
            y: d.y,
            conf: d.confidence,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        let row: DetectionRow = row?;
        check_finite(path, i, &[row.x, row.y, row.conf])?;
        out.push(Detection {
            frame: row.frame,
            x: row.x,
            y: row.y,
            confidence: row.conf,
        });
    }
    Ok(out)
}

/// CSV with header `track_id,frame,x,y,conf`, one row per member detection.
pub fn write_tracklets(path: &Path, tracklets: &[Tracklet]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for t in tracklets {
        for d in &t.detections {
            w.serialize(TrackletRow {
                track_id: t.id,
                frame: d.frame,
                x: d.x,
                y: d.y,
                conf: d.confidence,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read tracklets, checking that each covers consecutive frames.
pub fn read_tracklets(path: &Path) -> Result<Vec<Tracklet>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut groups: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for (i, row) in r.deserialize().enumerate() {
        let row: TrackletRow = row?;
        check_finite(path, i, &[row.x, row.y, row.conf])?;
        groups.entry(row.track_id).or_default().push(Detection {
            frame: row.frame,
            x: row.x,
            y: row.y,
            confidence: row.conf,
        });
    }
    let mut out = Vec::with_capacity(groups.len());
    for (id, mut dets) in groups {
        dets.sort_by_key(|d| d.frame);
        if dets.windows(2).any(|w| w[1].frame != w[0].frame + 1) {
            return Err(Error::format(
                "tracklets",
                format!(
                    "{}: track {id} does not cover consecutive frames",
                    path.display()
                ),
            ));
        }
        out.push(Tracklet::new(id, dets));
    }
    Ok(out)
}
