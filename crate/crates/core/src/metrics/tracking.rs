use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ap::{average_precision, rank_by_confidence, PrCurve};
use crate::error::{Error, Result};
use crate::groundtruth::HeadAnnotation;
use crate::postprocess::Tracklet;

/// Point matching radius between a tracklet and a trajectory, in pixels.
pub const TRACK_MATCH_RADIUS: f64 = 25.0;

/// Matched-ratio thresholds averaged by T-mAP.
pub const T_MAP_THRESHOLDS: [f64; 3] = [0.10, 0.15, 0.20];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingScores {
    pub t_map: f64,
    pub t_ap10: f64,
    pub t_ap15: f64,
    pub t_ap20: f64,
}

/// Frames on which the tracklet lies within the matching radius of the
/// trajectory, over the longer of the two lengths.
fn matched_ratio(track: &Tracklet, trajectory: &HashMap<usize, (f64, f64)>) -> f64 {
    let matched = track
        .detections
        .iter()
        .filter(|d| {
            trajectory
                .get(&d.frame)
                .is_some_and(|&(x, y)| (d.x - x).hypot(d.y - y) <= TRACK_MATCH_RADIUS)
        })
        .count();
    let denom = track.len().max(trajectory.len());
    if denom == 0 {
        0.0
    } else {
        matched as f64 / denom as f64
    }
}

/// Ratio table `[tracklet][trajectory]`.
fn ratios(tracklets: &[Tracklet], trajectories: &[Vec<HeadAnnotation>]) -> Vec<Vec<f64>> {
    let lookup: Vec<HashMap<usize, (f64, f64)>> = trajectories
        .iter()
        .map(|t| t.iter().map(|h| (h.frame, (h.x, h.y))).collect())
        .collect();
    tracklets
        .iter()
        .map(|tr| lookup.iter().map(|gt| matched_ratio(tr, gt)).collect())
        .collect()
}

/// Hit flags in average-confidence order: each tracklet claims the unmatched
/// trajectory with the highest ratio, if that ratio exceeds `rho`.
fn hits(order: &[usize], table: &[Vec<f64>], n_gt: usize, rho: f64) -> Vec<bool> {
    let mut taken = vec![false; n_gt];
    order
        .iter()
        .map(|&t| {
            let mut best: Option<(f64, usize)> = None;
            for (g, &r) in table[t].iter().enumerate() {
                if !taken[g] && r > rho && best.is_none_or(|(br, _)| r > br) {
                    best = Some((r, g));
                }
            }
            if let Some((_, g)) = best {
                taken[g] = true;
            }
            best.is_some()
        })
        .collect()
}

fn check(tracklets: &[Tracklet], rho: f64) -> Result<Vec<usize>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!(
            "matched-ratio threshold must lie in (0, 1), got {rho}"
        )));
    }
    let conf: Vec<f64> = tracklets.iter().map(|t| t.average_confidence).collect();
    if conf.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("tracklet confidence".into()));
    }
    Ok(rank_by_confidence(&conf))
}

pub fn tracking_ap(
    tracklets: &[Tracklet],
    trajectories: &[Vec<HeadAnnotation>],
    rho: f64,
) -> Result<f64> {
    let order = check(tracklets, rho)?;
    let table = ratios(tracklets, trajectories);
    Ok(average_precision(
        &hits(&order, &table, trajectories.len(), rho),
        trajectories.len(),
    ))
}

pub fn tracking_pr(
    tracklets: &[Tracklet],
    trajectories: &[Vec<HeadAnnotation>],
    rho: f64,
) -> Result<PrCurve> {
    let order = check(tracklets, rho)?;
    let table = ratios(tracklets, trajectories);
    Ok(PrCurve::from_hits(
        &hits(&order, &table, trajectories.len(), rho),
        trajectories.len(),
    ))
}

/// Mean tracklet AP over the three matched-ratio thresholds.
pub fn t_map(
    tracklets: &[Tracklet],
    trajectories: &[Vec<HeadAnnotation>],
) -> Result<TrackingScores> {
    let order = check(tracklets, T_MAP_THRESHOLDS[0])?;
    let table = ratios(tracklets, trajectories);
    let aps: Vec<f64> = T_MAP_THRESHOLDS
        .iter()
        .map(|&rho| {
            average_precision(
                &hits(&order, &table, trajectories.len(), rho),
                trajectories.len(),
            )
        })
        .collect();
    Ok(TrackingScores {
        t_map: aps.iter().sum::<f64>() / aps.len() as f64,
        t_ap10: aps[0],
        t_ap15: aps[1],
        t_ap20: aps[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::Detection;

    fn trajectory(id: u64, frames: std::ops::Range<usize>, x: f64) -> Vec<HeadAnnotation> {
        frames
            .map(|f| HeadAnnotation {
                frame: f,
                id,
                x,
                y: 10.0,
            })
            .collect()
    }

    fn as_tracklet(id: u64, t: &[HeadAnnotation], confidence: f64) -> Tracklet {
        Tracklet::new(
            id,
            t.iter()
                .map(|h| Detection {
                    frame: h.frame,
                    x: h.x,
                    y: h.y,
                    confidence,
                })
                .collect(),
        )
    }

    #[test]
    fn identical_tracks_score_one() {
        let gts = vec![trajectory(1, 0..20, 10.0), trajectory(2, 5..9, 100.0)];
        let preds: Vec<Tracklet> = gts
            .iter()
            .enumerate()
            .map(|(i, t)| as_tracklet(i as u64, t, 1.0))
            .collect();
        assert_eq!(t_map(&preds, &gts).unwrap().t_map, 1.0);
        assert_eq!(t_map(&[], &[]).unwrap().t_map, 1.0);
        assert_eq!(t_map(&[], &gts).unwrap().t_map, 0.0);
    }

    #[test]
    fn three_of_twenty_frames() {
        let gt = trajectory(1, 0..20, 10.0);
        // 20-frame tracklet agreeing with the trajectory on 3 frames
        let mut t = gt.clone();
        for h in t.iter_mut().skip(3) {
            h.x += 40.0;
        }
        let tr = as_tracklet(1, &t, 0.7);
        let s = t_map(&[tr], &[gt]).unwrap();
        assert_eq!((s.t_ap10, s.t_ap15, s.t_ap20), (1.0, 0.0, 0.0));
    }

    #[test]
    fn best_ratio_is_claimed_once() {
        let gts = vec![trajectory(1, 0..10, 10.0), trajectory(2, 0..10, 60.0)];
        let a = as_tracklet(1, &gts[0], 0.9);
        let dup = as_tracklet(2, &gts[0], 0.8);
        let order = vec![0, 1];
        let table = ratios(&[a.clone(), dup.clone()], &gts);
        assert_eq!(hits(&order, &table, 2, 0.1), vec![true, false]);
        assert!((tracking_ap(&[a, dup], &gts, 0.1).unwrap() - 0.5).abs() < 1e-15);
        assert!(tracking_ap(&[], &gts, 1.0).is_err());
    }
}
