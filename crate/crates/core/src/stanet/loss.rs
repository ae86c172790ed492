use super::config::LossWeights;
use crate::error::{Error, Result};
use crate::groundtruth::HeadAnnotation;
use crate::tensorcore::{Graph, Tensor, Var};

/// `Σ_s ω_s · Σ (pred_s − target_s)²` over aligned pyramids. `omega` may be
/// longer than the pyramid, in which case its trailing (finest) entries are
/// used.
pub fn map_loss(
    graph: &mut Graph,
    preds: &[Var],
    targets: &[Tensor],
    omega: &[f64],
) -> Result<Var> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::invalid(format!(
            "map_loss: {} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if omega.len() < preds.len() {
        return Err(Error::invalid("map_loss: fewer scale weights than scales"));
    }
    let omega = &omega[omega.len() - preds.len()..];
    let mut total: Option<Var> = None;
    for ((&p, t), &w) in preds.iter().zip(targets).zip(omega) {
        let term = graph.weighted_squared_error(p, t, w)?;
        total = Some(match total {
            Some(acc) => graph.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}

/// Association term of one sample and how many anchors it had; zero
/// anchors (fewer than two identities, or none shared by both frames)
/// gives a constant zero.
#[derive(Clone, Copy, Debug)]
pub struct AssociationLoss {
    pub value: Var,
    pub anchors: usize,
}

fn points(heads: &[HeadAnnotation]) -> (Vec<(f64, f64)>, Vec<u64>) {
    heads.iter().map(|h| ((h.x, h.y), h.id)).unzip()
}

/// Batch-hard triplet loss on L2-normalized embeddings sampled at the heads
/// of batch item `batch` in both frames.
pub fn association_loss(
    graph: &mut Graph,
    current: Var,
    previous: Var,
    batch: usize,
    current_heads: &[HeadAnnotation],
    previous_heads: &[HeadAnnotation],
    margin: f64,
) -> Result<AssociationLoss> {
    let (cp, cid) = points(current_heads);
    let (pp, pid) = points(previous_heads);
    let ce = graph.sample_points(current, batch, &cp)?;
    let pe = graph.sample_points(previous, batch, &pp)?;
    let ce = graph.l2_normalize(ce);
    let pe = graph.l2_normalize(pe);
    let (value, anchors) = graph.batch_hard_triplet(ce, &cid, pe, &pid, margin)?;
    Ok(AssociationLoss { value, anchors })
}

/// The three loss terms, each already summed over the batch.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub density: Var,
    pub localization: Option<Var>,
    pub association: Option<Var>,
}

/// `(1 / 2N) · (λ_den·L_den + λ_loc·L_loc + λ_ass·L_ass)`.
pub fn total_loss(
    graph: &mut Graph,
    terms: &LossTerms,
    weights: &LossWeights,
    batch: usize,
) -> Result<Var> {
    if batch == 0 {
        return Err(Error::invalid("total_loss: empty batch"));
    }
    let mut acc = graph.scale(terms.density, weights.lambda_den);
    for (term, lambda) in [
        (terms.localization, weights.lambda_loc),
        (terms.association, weights.lambda_ass),
    ] {
        if let Some(t) = term {
            let s = graph.scale(t, lambda);
            acc = graph.add(acc, s)?;
        }
    }
    Ok(graph.scale(acc, 1.0 / (2.0 * batch as f64)))
}

/// Plain-number form of the total, for logs.
pub fn combine_terms(den: f64, loc: f64, ass: f64, weights: &LossWeights, batch: usize) -> f64 {
    (weights.lambda_den * den + weights.lambda_loc * loc + weights.lambda_ass * ass)
        / (2.0 * batch as f64)
}

/// An L2-normalized embedding; `degenerate` marks a zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub degenerate: bool,
}

/// Bilinearly sample an `[N, E, H, W]` embedding map of item `batch` at
/// pixel-centre coordinates and normalize each vector.
pub fn extract_embeddings(
    map: &Tensor,
    batch: usize,
    points: &[(f64, f64)],
) -> Result<Vec<Embedding>> {
    let mut g = Graph::inference();
    let x = g.constant(map.clone());
    let s = g.sample_points(x, batch, points)?;
    let n = g.l2_normalize(s);
    let v = g.value(n);
    let (e, m) = (v.c(), v.w());
    Ok((0..m)
        .map(|j| {
            let vector: Vec<f64> = (0..e).map(|c| v.data()[c * m + j]).collect();
            let degenerate = vector.iter().all(|&x| x == 0.0);
            Embedding { vector, degenerate }
        })
        .collect())
}
