use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ap::PrCurve;
use super::counting::{mae_mse, CountRecord};
use super::localization::{l_map, localization_pr};
use super::tracking::{t_map, tracking_pr, T_MAP_THRESHOLDS};
use crate::error::{Error, Result};
use crate::groundtruth::{
    trajectories, Altitude, Attributes, DensityLevel, HeadAnnotation, Illumination,
};
use crate::postprocess::{Detection, Tracklet};

/// Everything needed to score one sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SequenceEvaluation {
    pub name: String,
    pub attributes: Option<Attributes>,
    pub frame_count: usize,
    /// Estimated count per frame.
    pub estimated_counts: Vec<f64>,
    pub detections: Vec<Detection>,
    pub tracklets: Vec<Tracklet>,
    pub ground_truth: Vec<HeadAnnotation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mae: f64,
    pub mse: f64,
    pub l_map: f64,
    pub l_ap10: f64,
    pub l_ap15: f64,
    pub l_ap20: f64,
    pub t_map: f64,
    pub t_ap10: f64,
    pub t_ap15: f64,
    pub t_ap20: f64,
}

/// Overall metrics plus the same set per attribute value; values with no
/// sequence are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResults {
    #[serde(flatten)]
    pub overall: MetricSet,
    pub illumination: BTreeMap<String, Option<MetricSet>>,
    pub altitude: BTreeMap<String, Option<MetricSet>>,
    pub density: BTreeMap<String, Option<MetricSet>>,
}

impl EvaluationResults {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Pool sequences into one frame index space so matching never crosses
/// sequences.
struct Pooled {
    records: Vec<CountRecord>,
    detections: Vec<Detection>,
    ground_truth: Vec<HeadAnnotation>,
    tracklets: Vec<Tracklet>,
    trajectories: Vec<Vec<HeadAnnotation>>,
}

fn pool(seqs: &[&SequenceEvaluation]) -> Result<Pooled> {
    let mut p = Pooled {
        records: Vec::new(),
        detections: Vec::new(),
        ground_truth: Vec::new(),
        tracklets: Vec::new(),
        trajectories: Vec::new(),
    };
    let mut offset = 0;
    for (v, s) in seqs.iter().enumerate() {
        if s.estimated_counts.len() != s.frame_count {
            return Err(Error::invalid(format!(
                "{}: {} count estimates for {} frames",
                s.name,
                s.estimated_counts.len(),
                s.frame_count
            )));
        }
        let mut truth = vec![0usize; s.frame_count];
        for h in &s.ground_truth {
            if h.frame >= s.frame_count {
                return Err(Error::OutOfBounds {
                    what: "frame",
                    index: h.frame,
                    detail: format!("{}: annotation beyond {} frames", s.name, s.frame_count),
                });
            }
            truth[h.frame] += 1;
        }
        for (f, (&z, &est)) in truth.iter().zip(&s.estimated_counts).enumerate() {
            p.records.push(CountRecord {
                video: v,
                frame: f,
                truth: z as f64,
                estimate: est,
            });
        }
        let shift = |f: usize| f + offset;
        p.detections.extend(s.detections.iter().map(|d| Detection {
            frame: shift(d.frame),
            ..*d
        }));
        p.ground_truth
            .extend(s.ground_truth.iter().map(|h| HeadAnnotation {
                frame: shift(h.frame),
                ..*h
            }));
        p.tracklets.extend(s.tracklets.iter().map(|t| {
            let dets = t
                .detections
                .iter()
                .map(|d| Detection {
                    frame: shift(d.frame),
                    ..*d
                })
                .collect();
            Tracklet {
                detections: dets,
                ..t.clone()
            }
        }));
        p.trajectories
            .extend(trajectories(&s.ground_truth).into_values().map(|t| {
                t.into_iter()
                    .map(|h| HeadAnnotation {
                        frame: shift(h.frame),
                        ..h
                    })
                    .collect()
            }));
        offset += s.frame_count;
    }
    Ok(p)
}

fn metric_set(seqs: &[&SequenceEvaluation]) -> Result<MetricSet> {
    let p = pool(seqs)?;
    let (mae, mse) = mae_mse(&p.records)?;
    let l = l_map(&p.detections, &p.ground_truth)?;
    let t = t_map(&p.tracklets, &p.trajectories)?;
    Ok(MetricSet {
        mae,
        mse,
        l_map: l.l_map,
        l_ap10: l.l_ap10,
        l_ap15: l.l_ap15,
        l_ap20: l.l_ap20,
        t_map: t.t_map,
        t_ap10: t.t_ap10,
        t_ap15: t.t_ap15,
        t_ap20: t.t_ap20,
    })
}

fn label<T: Serialize>(v: T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn breakdown<T: Copy + PartialEq + Serialize>(
    seqs: &[SequenceEvaluation],
    values: &[T],
    key: impl Fn(&Attributes) -> T,
) -> Result<BTreeMap<String, Option<MetricSet>>> {
    values
        .iter()
        .map(|&v| {
            let subset: Vec<&SequenceEvaluation> = seqs
                .iter()
                .filter(|s| s.attributes.as_ref().is_some_and(|a| key(a) == v))
                .collect();
            let m = if subset.is_empty() {
                None
            } else {
                Some(metric_set(&subset)?)
            };
            Ok((label(v), m))
        })
        .collect()
}

/// Score a set of sequences overall and per attribute value.
pub fn evaluate(seqs: &[SequenceEvaluation]) -> Result<EvaluationResults> {
    let all: Vec<&SequenceEvaluation> = seqs.iter().collect();
    Ok(EvaluationResults {
        overall: metric_set(&all)?,
        illumination: breakdown(
            seqs,
            &[
                Illumination::Cloudy,
                Illumination::Sunny,
                Illumination::Night,
            ],
            |a| a.illumination,
        )?,
        altitude: breakdown(seqs, &[Altitude::High, Altitude::Low], |a| a.altitude)?,
        density: breakdown(seqs, &[DensityLevel::Crowded, DensityLevel::Sparse], |a| {
            a.density
        })?,
    })
}

/// PR curves at the named localization distances and tracking ratios.
pub fn pr_curves(seqs: &[SequenceEvaluation]) -> Result<Vec<(String, PrCurve)>> {
    let all: Vec<&SequenceEvaluation> = seqs.iter().collect();
    let p = pool(&all)?;
    let mut out = Vec::new();
    for d in [10.0, 15.0, 20.0] {
        out.push((
            format!("l_ap{d}"),
            localization_pr(&p.detections, &p.ground_truth, d)?,
        ));
    }
    for rho in T_MAP_THRESHOLDS {
        out.push((
            format!("t_ap{:02}", (rho * 100.0).round() as u32),
            tracking_pr(&p.tracklets, &p.trajectories, rho)?,
        ));
    }
    Ok(out)
}

/// CSV `curve,rank,recall,precision`.
pub fn write_pr_curves(path: &Path, curves: &[(String, PrCurve)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["curve", "rank", "recall", "precision"])?;
    for (name, c) in curves {
        for (rank, (r, p)) in c.points.iter().enumerate() {
            w.write_record([
                name.clone(),
                (rank + 1).to_string(),
                r.to_string(),
                p.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
