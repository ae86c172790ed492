use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig, SCALES};
use super::loss::{association_loss, combine_terms, map_loss, total_loss, LossTerms};
use super::model::{forward, init_params};
use crate::error::{Error, Result};
use crate::groundtruth::{augment, multiscale_targets, FramePair, Image, KernelConfig, ScalarMap};
use crate::simulator::SyntheticSequence;
use crate::tensorcore::{
    adam_step, AdamConfig, AdamState, Binder, Checkpoint, Graph, ParamStore, Tensor,
};

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_den: f64,
    pub loss_loc: f64,
    pub loss_ass: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// The frame pair ending at frame `t`; frames before `tau` pair with frame 0.
pub fn temporal_pair(seq: &SyntheticSequence, t: usize, tau: usize) -> FramePair {
    let p = t.saturating_sub(tau);
    FramePair {
        current: seq.frames[t].clone(),
        previous: seq.frames[p].clone(),
        current_heads: seq.heads_in_frame(t),
        previous_heads: seq.heads_in_frame(p),
    }
}

/// Network inputs and supervision for a batch of equally sized pairs.
pub struct Batch {
    pub current: Tensor,
    pub previous: Tensor,
    /// Per scale, coarsest first: `[N, 1, h_s, w_s]`.
    pub density: Vec<Tensor>,
    pub localization: Vec<Tensor>,
    pub pairs: Vec<FramePair>,
}

fn stack_maps(maps: &[&ScalarMap]) -> Result<Tensor> {
    Tensor::stack(&maps.iter().map(|m| m.to_tensor()).collect::<Vec<_>>())
}

pub fn make_batch(
    pairs: Vec<FramePair>,
    model: &ModelConfig,
    kernel: &KernelConfig,
) -> Result<Batch> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (w, h) = (pairs[0].width(), pairs[0].height());
    if pairs.iter().any(|p| (p.width(), p.height()) != (w, h)) {
        return Err(Error::invalid("batch items must share extents"));
    }
    model.check_input(w, h)?;
    let targets = pairs
        .iter()
        .map(|p| {
            let pts: Vec<(f64, f64)> = p.current_heads.iter().map(|h| h.point()).collect();
            multiscale_targets(&pts, w, h, SCALES, kernel, model.sigma_loc)
        })
        .collect::<Result<Vec<_>>>()?;
    let keep = SCALES - model.output_scales();
    let mut density = Vec::new();
    let mut localization = Vec::new();
    for s in keep..SCALES {
        density.push(stack_maps(
            &targets.iter().map(|t| &t[s].density).collect::<Vec<_>>(),
        )?);
        localization.push(stack_maps(
            &targets
                .iter()
                .map(|t| &t[s].localization)
                .collect::<Vec<_>>(),
        )?);
    }
    let current = Tensor::stack(
        &pairs
            .iter()
            .map(|p| p.current.to_tensor())
            .collect::<Vec<_>>(),
    )?;
    let previous = Tensor::stack(
        &pairs
            .iter()
            .map(|p| p.previous.to_tensor())
            .collect::<Vec<_>>(),
    )?;
    Ok(Batch {
        current,
        previous,
        density,
        localization,
        pairs,
    })
}

/// Unweighted batch sums of the three terms and the gradients of the total.
pub struct StepResult {
    pub total: f64,
    pub density: f64,
    pub localization: f64,
    pub association: f64,
    pub gradients: std::collections::BTreeMap<String, Tensor>,
}

/// Forward and backward pass for one batch.
pub fn compute_step(
    params: &ParamStore,
    config: &TrainConfig,
    batch: &Batch,
) -> Result<StepResult> {
    let model = &config.model;
    let weights = &config.loss;
    let n = batch.pairs.len();
    let mut g = Graph::new();
    let mut binder = Binder::new(params);
    let cur = g.constant(batch.current.clone());
    let prev = g.constant(batch.previous.clone());
    let out = forward(&mut g, &mut binder, cur, prev, model)?;
    let den = map_loss(&mut g, &out.density, &batch.density, &weights.omega)?;
    let loc = if model.use_localization_head {
        Some(map_loss(
            &mut g,
            &out.localization,
            &batch.localization,
            &weights.omega,
        )?)
    } else {
        None
    };
    let ass = match out.embedding {
        Some((ec, ep)) if weights.lambda_ass > 0.0 => {
            let mut acc: Option<crate::tensorcore::Var> = None;
            for (i, p) in batch.pairs.iter().enumerate() {
                let a = association_loss(
                    &mut g,
                    ec,
                    ep,
                    i,
                    &p.current_heads,
                    &p.previous_heads,
                    weights.margin,
                )?;
                acc = Some(match acc {
                    Some(v) => g.add(v, a.value)?,
                    None => a.value,
                });
            }
            acc
        }
        _ => None,
    };
    let terms = LossTerms {
        density: den,
        localization: loc,
        association: ass,
    };
    let total = total_loss(&mut g, &terms, weights, n)?;
    let scalar =
        |g: &Graph, v: Option<crate::tensorcore::Var>| v.map_or(0.0, |v| g.value(v).data()[0]);
    let result_total = scalar(&g, Some(total));
    if !result_total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    g.backward(total)?;
    Ok(StepResult {
        total: result_total,
        density: scalar(&g, Some(den)),
        localization: scalar(&g, loc),
        association: scalar(&g, ass),
        gradients: binder.gradients(&g),
    })
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Train from a seeded initialization. With `out`, writes `train_log.csv`
/// and `checkpoint.cfck` after every epoch; a non-finite loss aborts the run
/// and leaves the last good checkpoint in place.
pub fn train(
    dataset: &[SyntheticSequence],
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() || dataset.iter().any(|s| s.frames.is_empty()) {
        return Err(Error::invalid(
            "training needs at least one non-empty sequence",
        ));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model {
        config: config.model.clone(),
        params: init_params(&config.model, &mut rng)?,
    };
    let mut adam = AdamState::new(AdamConfig::default());
    let mut log = Vec::new();
    for epoch in 1..=config.schedule.total_epochs() {
        let lr = config.schedule.lr_at(epoch);
        let mut sums = [0.0f64; 4];
        let mut remaining = config.samples_per_epoch;
        while remaining > 0 {
            let n = remaining.min(config.batch_size);
            remaining -= n;
            let pairs = (0..n)
                .map(|_| {
                    let s = rng.random_range(0..dataset.len());
                    let t = rng.random_range(0..dataset[s].frames.len());
                    augment(
                        &temporal_pair(&dataset[s], t, config.model.tau),
                        &config.augment,
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = make_batch(pairs, &config.model, &config.kernel)?;
            let step = compute_step(&model.params, config, &batch)?;
            adam_step(&mut model.params, &step.gradients, &mut adam, lr)?;
            sums[0] += step.total * n as f64;
            sums[1] += step.density;
            sums[2] += step.localization;
            sums[3] += step.association;
        }
        let per = config.samples_per_epoch as f64;
        log.push(EpochLog {
            epoch,
            loss_total: sums[0] / per,
            loss_den: sums[1] / per,
            loss_loc: sums[2] / per,
            loss_ass: sums[3] / per,
            lr,
        });
        if let Some(dir) = out {
            model.to_checkpoint()?.save(&dir.join("checkpoint.cfck"))?;
            write_log(&dir.join("train_log.csv"), &log)?;
        }
    }
    Ok(TrainOutcome { model, log })
}

/// Per-sample weighted loss value, for checks outside the training loop.
pub fn sample_loss(params: &ParamStore, config: &TrainConfig, batch: &Batch) -> Result<f64> {
    let s = compute_step(params, config, batch)?;
    Ok(combine_terms(
        s.density,
        s.localization,
        s.association,
        &config.loss,
        batch.pairs.len(),
    ))
}

/// Maps predicted for one frame pair, coarsest scale first.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub density: Vec<ScalarMap>,
    pub localization: Vec<ScalarMap>,
    pub embedding: Option<Tensor>,
}

impl Prediction {
    pub fn final_density(&self) -> &ScalarMap {
        self.density.last().expect("at least one scale")
    }

    pub fn final_localization(&self) -> Option<&ScalarMap> {
        self.localization.last()
    }
}

/// Trained parameters with the architecture they belong to.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            metadata: serde_json::to_string(&self.config)?,
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&ck.metadata)?;
        config.validate()?;
        Ok(Model {
            config,
            params: ck.params,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    pub fn predict(&self, current: &Image, previous: &Image) -> Result<Prediction> {
        let mut g = Graph::inference();
        let mut binder = Binder::new(&self.params);
        let c = g.constant(current.to_tensor());
        let p = g.constant(previous.to_tensor());
        let out = forward(&mut g, &mut binder, c, p, &self.config)?;
        let to_map = |v| {
            let mut m = ScalarMap::from_tensor(g.value(v), 0, 0);
            if !m.values.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("predicted map".into()));
            }
            m.scale = 0;
            Ok(m)
        };
        Ok(Prediction {
            density: out
                .density
                .iter()
                .map(|&v| to_map(v))
                .collect::<Result<_>>()?,
            localization: out
                .localization
                .iter()
                .map(|&v| to_map(v))
                .collect::<Result<_>>()?,
            embedding: out.embedding.map(|(e, _)| g.value(e).clone()),
        })
    }

    /// Predictions for every frame, each paired with the frame `tau` earlier
    /// (frame 0 at the start).
    pub fn predict_sequence(&self, frames: &[Image]) -> Result<Vec<Prediction>> {
        (0..frames.len())
            .into_par_iter()
            .map(|t| self.predict(&frames[t], &frames[t.saturating_sub(self.config.tau)]))
            .collect()
    }
}
