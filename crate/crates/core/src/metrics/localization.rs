use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ap::{average_precision, rank_by_confidence, PrCurve};
use crate::error::{Error, Result};
use crate::groundtruth::HeadAnnotation;
use crate::postprocess::Detection;

/// Distance thresholds, in pixels, averaged by L-mAP.
pub const L_MAP_THRESHOLDS: [f64; 25] = {
    let mut t = [0.0; 25];
    let mut i = 0;
    while i < 25 {
        t[i] = (i + 1) as f64;
        i += 1;
    }
    t
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationScores {
    pub l_map: f64,
    pub l_ap10: f64,
    pub l_ap15: f64,
    pub l_ap20: f64,
}

/// Hit flag per prediction, in confidence order. Each prediction takes the
/// nearest unmatched ground truth of its frame within `d` (lowest index on
/// equal distance).
fn greedy_hits(
    order: &[usize],
    preds: &[Detection],
    by_frame: &HashMap<usize, Vec<usize>>,
    gts: &[HeadAnnotation],
    d: f64,
) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    order
        .iter()
        .map(|&p| {
            let pred = &preds[p];
            let mut best: Option<(f64, usize)> = None;
            for &g in by_frame.get(&pred.frame).map(Vec::as_slice).unwrap_or(&[]) {
                if taken[g] {
                    continue;
                }
                let dist = (pred.x - gts[g].x).hypot(pred.y - gts[g].y);
                if dist <= d && best.is_none_or(|(bd, _)| dist < bd) {
                    best = Some((dist, g));
                }
            }
            match best {
                Some((_, g)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

struct Prepared {
    order: Vec<usize>,
    by_frame: HashMap<usize, Vec<usize>>,
}

fn prepare(preds: &[Detection], gts: &[HeadAnnotation]) -> Result<Prepared> {
    if let Some(p) = preds
        .iter()
        .find(|p| !(p.x.is_finite() && p.y.is_finite() && p.confidence.is_finite()))
    {
        return Err(Error::NonFinite(format!("prediction in frame {}", p.frame)));
    }
    let mut by_frame: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_frame.entry(g.frame).or_default().push(i);
    }
    let conf: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
    Ok(Prepared {
        order: rank_by_confidence(&conf),
        by_frame,
    })
}

fn check_threshold(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "distance threshold must be positive, got {d}"
        )))
    }
}

/// Average precision of greedy confidence-ordered matching at distance `d`.
/// Predictions only match ground truth of the same frame.
pub fn localization_ap(preds: &[Detection], gts: &[HeadAnnotation], d: f64) -> Result<f64> {
    check_threshold(d)?;
    let p = prepare(preds, gts)?;
    Ok(average_precision(
        &greedy_hits(&p.order, preds, &p.by_frame, gts, d),
        gts.len(),
    ))
}

pub fn localization_pr(preds: &[Detection], gts: &[HeadAnnotation], d: f64) -> Result<PrCurve> {
    check_threshold(d)?;
    let p = prepare(preds, gts)?;
    Ok(PrCurve::from_hits(
        &greedy_hits(&p.order, preds, &p.by_frame, gts, d),
        gts.len(),
    ))
}

/// Mean AP over thresholds 1..=25 px, plus the 10, 15 and 20 px values.
pub fn l_map(preds: &[Detection], gts: &[HeadAnnotation]) -> Result<LocalizationScores> {
    let p = prepare(preds, gts)?;
    let aps: Vec<f64> = L_MAP_THRESHOLDS
        .iter()
        .map(|&d| {
            average_precision(
                &greedy_hits(&p.order, preds, &p.by_frame, gts, d),
                gts.len(),
            )
        })
        .collect();
    Ok(LocalizationScores {
        l_map: aps.iter().sum::<f64>() / aps.len() as f64,
        l_ap10: aps[9],
        l_ap15: aps[14],
        l_ap20: aps[19],
    })
}
