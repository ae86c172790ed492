use std::path::{Path, PathBuf};

use super::layout::{
    dataset_sequences, level_kind, load_dataset, read_maps, write_map, DENSITY, DETECTIONS,
    LOCALIZATION, TRACKLETS,
};
use super::manifest::RunManifest;
use super::{
    Cli, Command, EvaluateArgs, GenerateArgs, GtmapsArgs, InferArgs, TrackArgs, TrainArgs,
};
use crate::error::{Error, Result};
use crate::groundtruth::{
    density_map, localization_map, multiscale_targets, read_annotations, KernelConfig, SequenceMeta,
};
use crate::metrics::{evaluate, pr_curves, write_pr_curves, EvaluationResults, SequenceEvaluation};
use crate::postprocess::{
    localize, read_detections, read_tracklets, track, write_detections, write_tracklets, Detection,
    FlowParams, NmsConfig,
};
use crate::simulator::{attribute_suite, generate, SceneConfig};
use crate::stanet::{train, Model, TrainConfig, SCALES};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Gtmaps(a) => cmd_gtmaps(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Track(a) => cmd_track(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut base: SceneConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = a.seed {
        base.seed = seed;
    }
    create_dir(&a.out)?;
    if a.suite {
        for (i, seq) in attribute_suite(base.seed)?.iter().enumerate() {
            seq.save(&a.out.join(format!("seq_{i:02}")))?;
        }
    } else if a.count == 1 {
        generate(&base)?.save(&a.out)?;
    } else {
        for i in 0..a.count {
            let cfg = SceneConfig {
                seed: base.seed.wrapping_add(i as u64),
                ..base.clone()
            };
            generate(&cfg)?.save(&a.out.join(format!("seq_{i:03}")))?;
        }
    }
    let mut m = RunManifest::new("generate", &a.out);
    m.config = a.config.as_ref().map(|p| p.display().to_string());
    m.seed = Some(base.seed);
    m.parameters = serde_json::json!({ "suite": a.suite, "count": a.count });
    m.finish(&a.out)
}

fn cmd_gtmaps(a: &GtmapsArgs) -> Result<()> {
    let kernel = match a.fixed_sigma {
        Some(s) => KernelConfig::fixed(s),
        None => KernelConfig::default(),
    };
    for (name, dir) in dataset_sequences(&a.data)? {
        let meta = SequenceMeta::load(&dir.join("meta.json"))?;
        let heads = read_annotations(&dir.join("annotations.csv"))?;
        let out = a.out.join(&name);
        for f in 0..meta.frame_count {
            let pts: Vec<(f64, f64)> = heads
                .iter()
                .filter(|h| h.frame == f)
                .map(|h| h.point())
                .collect();
            match multiscale_targets(&pts, meta.width, meta.height, SCALES, &kernel, a.sigma_loc) {
                Ok(levels) => {
                    for (i, level) in levels.iter().enumerate() {
                        let (dk, lk) = if i + 1 == SCALES {
                            (DENSITY.to_string(), LOCALIZATION.to_string())
                        } else {
                            (level_kind(DENSITY, i + 1), level_kind(LOCALIZATION, i + 1))
                        };
                        write_map(&out, &dk, f, &level.density)?;
                        write_map(&out, &lk, f, &level.localization)?;
                    }
                }
                // extents that do not divide into a pyramid get the finest maps only
                Err(Error::InvalidArgument(_)) => {
                    write_map(
                        &out,
                        DENSITY,
                        f,
                        &density_map(&pts, meta.width, meta.height, &kernel)?,
                    )?;
                    let loc = localization_map(&pts, meta.width, meta.height, a.sigma_loc)?;
                    write_map(&out, LOCALIZATION, f, &loc)?;
                }
                Err(e) => return Err(e),
            }
        }
    }
    let mut m = RunManifest::new("gtmaps", &a.out).input(&a.data);
    m.parameters = serde_json::json!({ "sigma_loc": a.sigma_loc, "fixed_sigma": a.fixed_sigma });
    m.finish(&a.out)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(tau) = a.tau {
        cfg.model.tau = tau;
    }
    cfg.model.use_multiscale &= !a.ablation.no_ms;
    cfg.model.use_localization_head &= !a.ablation.no_loc;
    cfg.model.use_association_head &= !a.ablation.no_ass;
    cfg.validate()?;
    let data: Vec<_> = load_dataset(&a.data)?.into_iter().map(|(_, s)| s).collect();
    create_dir(&a.out)?;
    write_json(&a.out.join("train_config.json"), &cfg)?;
    train(&data, &cfg, Some(&a.out))?;
    let mut m = RunManifest::new("train", &a.out).input(&a.data);
    m.config = a.config.as_ref().map(|p| p.display().to_string());
    m.seed = Some(cfg.seed);
    m.parameters = serde_json::to_value(&cfg)?;
    m.finish(&a.out)
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let mut model = Model::load(&a.checkpoint)?;
    if let Some(tau) = a.tau {
        model.config.tau = tau;
        model.config.validate()?;
    }
    for (name, seq) in load_dataset(&a.data)? {
        let out = a.out.join(&name);
        let preds = model.predict_sequence(&seq.frames)?;
        for (f, p) in preds.iter().enumerate() {
            let n = p.density.len();
            for (i, d) in p.density.iter().enumerate() {
                let kind = if i + 1 == n {
                    DENSITY.to_string()
                } else {
                    level_kind(DENSITY, i + 1)
                };
                write_map(&out, &kind, f, d)?;
            }
            for (i, l) in p.localization.iter().enumerate() {
                let kind = if i + 1 == n {
                    LOCALIZATION.to_string()
                } else {
                    level_kind(LOCALIZATION, i + 1)
                };
                write_map(&out, &kind, f, l)?;
            }
        }
    }
    let mut m = RunManifest::new("infer", &a.out)
        .input(&a.checkpoint)
        .input(&a.data);
    m.parameters = serde_json::json!({ "tau": model.config.tau });
    m.finish(&a.out)
}

fn frame_count(dir: &Path, kind: &str) -> Result<usize> {
    let d = dir.join(kind);
    let entries = std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
    Ok(entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "cfmp"))
        .count())
}

/// Per-sequence prediction folders under `root` (or `root` itself).
fn prediction_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if root.join(LOCALIZATION).is_dir() || root.join(DENSITY).is_dir() {
        let name = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok(vec![(name, root.to_path_buf())]);
    }
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut out: Vec<(String, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join(LOCALIZATION).is_dir())
        .map(|p| {
            (
                p.file_name()
                    .expect("dir entry")
                    .to_string_lossy()
                    .into_owned(),
                p,
            )
        })
        .collect();
    if out.is_empty() {
        return Err(Error::format(
            "predictions",
            format!("{}: no localization maps found", root.display()),
        ));
    }
    out.sort();
    Ok(out)
}

fn detect_all(dir: &Path, nms: NmsConfig) -> Result<Vec<Detection>> {
    let frames = frame_count(dir, LOCALIZATION)?;
    let maps = read_maps(dir, LOCALIZATION, frames)?.unwrap_or_default();
    let mut out = Vec::new();
    for (f, m) in maps.iter().enumerate() {
        out.extend(localize(m, f, nms)?);
    }
    Ok(out)
}

fn cmd_track(a: &TrackArgs) -> Result<()> {
    let nms = NmsConfig {
        theta: a.theta,
        radius: a.radius,
    };
    let flow = FlowParams {
        gate: a.gate,
        entry_cost: a.entry_cost,
        exit_cost: a.exit_cost,
        ..FlowParams::default()
    };
    if a.input.is_file() {
        let dets = read_detections(&a.input)?;
        create_dir(&a.out)?;
        write_tracklets(&a.out.join(TRACKLETS), &track(&dets, &flow)?)?;
    } else {
        for (name, dir) in prediction_dirs(&a.input)? {
            let out = if dir == a.input {
                a.out.clone()
            } else {
                a.out.join(&name)
            };
            let dets = detect_all(&dir, nms)?;
            create_dir(&out)?;
            write_detections(&out.join(DETECTIONS), &dets)?;
            write_tracklets(&out.join(TRACKLETS), &track(&dets, &flow)?)?;
        }
    }
    let mut m = RunManifest::new("track", &a.out).input(&a.input);
    m.parameters = serde_json::json!({
        "theta": a.theta, "radius": a.radius, "gate": a.gate,
        "entry_cost": a.entry_cost, "exit_cost": a.exit_cost,
    });
    m.finish(&a.out)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let nms = NmsConfig {
        theta: a.theta,
        ..NmsConfig::default()
    };
    let sequences = dataset_sequences(&a.data)?;
    let single = sequences.len() == 1 && a.pred.join(DENSITY).is_dir();
    let mut evals = Vec::new();
    for (name, dir) in &sequences {
        let meta = SequenceMeta::load(&dir.join("meta.json"))?;
        let ground_truth = read_annotations(&dir.join("annotations.csv"))?;
        let pdir = if single {
            a.pred.clone()
        } else {
            a.pred.join(name)
        };
        let density = read_maps(&pdir, DENSITY, meta.frame_count)?.ok_or_else(|| {
            Error::format(
                "predictions",
                format!("{}: missing density maps", pdir.display()),
            )
        })?;
        let estimated_counts = density.iter().map(|m| m.sum()).collect();
        let detections = if pdir.join(DETECTIONS).is_file() {
            read_detections(&pdir.join(DETECTIONS))?
        } else if pdir.join(LOCALIZATION).is_dir() {
            detect_all(&pdir, nms)?
        } else {
            Vec::new()
        };
        let tracklets = if pdir.join(TRACKLETS).is_file() {
            read_tracklets(&pdir.join(TRACKLETS))?
        } else {
            Vec::new()
        };
        evals.push(SequenceEvaluation {
            name: name.clone(),
            attributes: Some(meta.attributes),
            frame_count: meta.frame_count,
            estimated_counts,
            detections,
            tracklets,
            ground_truth,
        });
    }
    let results = evaluate(&evals)?;
    create_dir(&a.out)?;
    results.save(&a.out.join("results.json"))?;
    write_pr_curves(&a.out.join("pr_curves.csv"), &pr_curves(&evals)?)?;
    write_attribute_table(&a.out.join("attributes.csv"), &results)?;
    let mut m = RunManifest::new("evaluate", &a.out)
        .input(&a.pred)
        .input(&a.data);
    m.parameters = serde_json::json!({ "theta": a.theta });
    m.finish(&a.out)
}

/// CSV `group,value,mae,mse,l_map,t_map`, one row per attribute value.
fn write_attribute_table(path: &Path, r: &EvaluationResults) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "value", "mae", "mse", "l_map", "t_map"])?;
    for (group, table) in [
        ("illumination", &r.illumination),
        ("altitude", &r.altitude),
        ("density", &r.density),
    ] {
        for (value, m) in table {
            let cells = match m {
                Some(m) => [m.mae, m.mse, m.l_map, m.t_map].map(|v| v.to_string()),
                None => std::array::from_fn(|_| String::new()),
            };
            let mut row = vec![group.to_string(), value.clone()];
            row.extend(cells);
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
