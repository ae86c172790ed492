use serde::Serialize;

/// Precision/recall after each ranked prediction.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PrCurve {
    pub points: Vec<(f64, f64)>,
}

impl PrCurve {
    /// Build from per-rank hit flags against `positives` ground truths.
    pub(crate) fn from_hits(hits: &[bool], positives: usize) -> Self {
        let mut tp = 0usize;
        let points = hits
            .iter()
            .enumerate()
            .map(|(rank, &hit)| {
                tp += hit as usize;
                let recall = if positives == 0 {
                    0.0
                } else {
                    tp as f64 / positives as f64
                };
                (recall, tp as f64 / (rank + 1) as f64)
            })
            .collect();
        PrCurve { points }
    }
}

/// Step-integrated area: precision at each true positive's rank times the
/// recall it adds. With nothing to find and nothing predicted the score is 1.
pub(crate) fn average_precision(hits: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return if hits.is_empty() { 1.0 } else { 0.0 };
    }
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
            ap += tp as f64 / (rank + 1) as f64;
        }
    }
    ap / positives as f64
}

/// Prediction order: confidence descending, ties by input position.
pub(crate) fn rank_by_confidence(confidences: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    order
}
