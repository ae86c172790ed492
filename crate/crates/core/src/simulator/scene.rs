use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::SyntheticSequence;
use super::render::Renderer;
use crate::error::{Error, Result};
use crate::groundtruth::{Altitude, Attributes, DensityLevel, HeadAnnotation, Illumination};

/// Mean per-frame count at or above which a scene is labelled crowded.
pub const CROWDED_THRESHOLD: usize = 20;

/// Minimum distance kept between any two heads.
const MIN_SEPARATION: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub head_radius: f64,
    pub altitude: Altitude,
    pub illumination: Illumination,
    /// Upper bound on per-frame displacement, in pixels.
    pub max_speed: f64,
    /// Heading persistence in `[0, 1]`; 1 walks straight.
    pub persistence: f64,
    /// Let heads leave through the frame border (replacements get new ids).
    pub exits: bool,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 128,
            height: 96,
            frames: 40,
            n_min: 10,
            n_max: 18,
            head_radius: 1.5,
            altitude: Altitude::High,
            illumination: Illumination::Sunny,
            max_speed: 2.0,
            persistence: 0.8,
            exits: true,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn with_altitude(mut self, altitude: Altitude) -> Self {
        self.altitude = altitude;
        self.head_radius = match altitude {
            Altitude::High => 1.5,
            Altitude::Low => 3.0,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!(
                "zero-area frame {}x{}",
                self.width, self.height
            )));
        }
        if self.frames < 2 {
            return Err(Error::invalid("a sequence needs at least 2 frames"));
        }
        if self.n_min > self.n_max {
            return Err(Error::invalid(format!(
                "n_min {} > n_max {}",
                self.n_min, self.n_max
            )));
        }
        if !(self.max_speed >= 0.0 && self.max_speed.is_finite()) {
            return Err(Error::invalid("max_speed must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.persistence) {
            return Err(Error::invalid("persistence must lie in [0, 1]"));
        }
        if !(self.head_radius > 0.0 && self.head_radius.is_finite()) {
            return Err(Error::invalid("head_radius must be positive"));
        }
        // packing bound for the separation constraint, with slack
        let capacity = (self.width * self.height) as f64 / (MIN_SEPARATION * MIN_SEPARATION * 2.0);
        if self.n_max as f64 > capacity {
            return Err(Error::invalid(format!(
                "n_max {} too large for a {}x{} frame",
                self.n_max, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn density(&self) -> DensityLevel {
        if (self.n_min + self.n_max) as f64 / 2.0 >= CROWDED_THRESHOLD as f64 {
            DensityLevel::Crowded
        } else {
            DensityLevel::Sparse
        }
    }

    pub fn attributes(&self) -> Attributes {
        Attributes {
            illumination: self.illumination,
            altitude: self.altitude,
            density: self.density(),
        }
    }
}

/// Brightness and noise of an illumination condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IlluminationProfile {
    pub background: f32,
    pub texture: f32,
    pub noise: f32,
    pub head: f32,
}

impl IlluminationProfile {
    pub fn of(illumination: Illumination) -> Self {
        match illumination {
            Illumination::Sunny => IlluminationProfile {
                background: 0.72,
                texture: 0.08,
                noise: 0.02,
                head: 0.12,
            },
            Illumination::Cloudy => IlluminationProfile {
                background: 0.52,
                texture: 0.06,
                noise: 0.03,
                head: 0.1,
            },
            Illumination::Night => IlluminationProfile {
                background: 0.16,
                texture: 0.04,
                noise: 0.04,
                head: 0.5,
            },
        }
    }
}

struct Walker {
    id: u64,
    x: f64,
    y: f64,
    heading: f64,
}

fn separated(x: f64, y: f64, others: &[Walker], skip: Option<usize>) -> bool {
    others
        .iter()
        .enumerate()
        .all(|(i, o)| Some(i) == skip || (o.x - x).hypot(o.y - y) >= MIN_SEPARATION)
}

fn spawn(cfg: &SceneConfig, walkers: &[Walker], id: u64, rng: &mut ChaCha8Rng) -> Option<Walker> {
    let margin = cfg
        .head_radius
        .min(cfg.width as f64 / 4.0)
        .min(cfg.height as f64 / 4.0);
    for _ in 0..1000 {
        let x = rng.random_range(margin..cfg.width as f64 - margin);
        let y = rng.random_range(margin..cfg.height as f64 - margin);
        if separated(x, y, walkers, None) {
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            return Some(Walker { id, x, y, heading });
        }
    }
    None
}

/// Head trajectories for every frame, sequential in frame order.
fn simulate(cfg: &SceneConfig) -> Result<Vec<HeadAnnotation>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let turn = Normal::new(
        0.0,
        (1.0 - cfg.persistence) * std::f64::consts::FRAC_PI_2 + 1e-9,
    )
    .map_err(|e| Error::invalid(e.to_string()))?;
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut next_id = 1u64;
    let mut walkers: Vec<Walker> = Vec::new();
    let initial = rng.random_range(cfg.n_min..=cfg.n_max);
    while walkers.len() < initial {
        let wk = spawn(cfg, &walkers, next_id, &mut rng)
            .ok_or_else(|| Error::invalid("could not place heads with the required separation"))?;
        next_id += 1;
        walkers.push(wk);
    }

    let mut out = Vec::new();
    for frame in 0..cfg.frames {
        if frame > 0 {
            let mut i = 0;
            while i < walkers.len() {
                let heading = walkers[i].heading + turn.sample(&mut rng);
                let speed = rng.random_range(0.5..=1.0) * cfg.max_speed;
                let (mut nx, mut ny) = (
                    walkers[i].x + speed * heading.cos(),
                    walkers[i].y + speed * heading.sin(),
                );
                walkers[i].heading = heading;
                let inside = nx >= 0.0 && ny >= 0.0 && nx < w && ny < h;
                if !inside && cfg.exits && walkers.len() > cfg.n_min {
                    walkers.remove(i);
                    continue;
                }
                if !inside {
                    // reflect off the border
                    if nx < 0.0 || nx >= w {
                        walkers[i].heading = std::f64::consts::PI - heading;
                        nx = walkers[i].x;
                    }
                    if ny < 0.0 || ny >= h {
                        walkers[i].heading = -walkers[i].heading;
                        ny = walkers[i].y;
                    }
                }
                if separated(nx, ny, &walkers, Some(i)) {
                    walkers[i].x = nx;
                    walkers[i].y = ny;
                } else {
                    walkers[i].heading += std::f64::consts::PI * rng.random_range(0.5..1.5);
                }
                i += 1;
            }
            if cfg.exits && walkers.len() < cfg.n_max && rng.random::<f64>() < 0.1 {
                if let Some(wk) = spawn(cfg, &walkers, next_id, &mut rng) {
                    next_id += 1;
                    walkers.push(wk);
                }
            }
        }
        for wk in &walkers {
            out.push(HeadAnnotation {
                frame,
                id: wk.id,
                x: wk.x,
                y: wk.y,
            });
        }
    }
    Ok(out)
}

/// Generate one sequence; fully determined by the config (including seed).
pub fn generate(config: &SceneConfig) -> Result<SyntheticSequence> {
    config.validate()?;
    let heads = simulate(config)?;
    let renderer = Renderer::new(config);
    let mut by_frame = vec![Vec::new(); config.frames];
    for h in &heads {
        by_frame[h.frame].push(*h);
    }
    let frames = by_frame
        .par_iter()
        .enumerate()
        .map(|(f, hs)| renderer.frame(f, hs))
        .collect();
    Ok(SyntheticSequence {
        config: config.clone(),
        frames,
        heads,
    })
}

/// One sequence per attribute value: three illuminations, two altitudes and
/// two density levels over six sequences.
pub fn attribute_suite(base_seed: u64) -> Result<Vec<SyntheticSequence>> {
    let sparse = SceneConfig::default();
    let crowded = SceneConfig {
        n_min: 26,
        n_max: 36,
        ..SceneConfig::default()
    };
    let variants = [
        (Illumination::Cloudy, Altitude::High, &sparse),
        (Illumination::Sunny, Altitude::High, &sparse),
        (Illumination::Night, Altitude::High, &sparse),
        (Illumination::Sunny, Altitude::Low, &sparse),
        (Illumination::Sunny, Altitude::High, &crowded),
        (Illumination::Cloudy, Altitude::Low, &crowded),
    ];
    variants
        .iter()
        .enumerate()
        .map(|(i, (ill, alt, base))| {
            let cfg = SceneConfig {
                illumination: *ill,
                seed: base_seed.wrapping_mul(1000).wrapping_add(i as u64),
                ..(*base).clone()
            }
            .with_altitude(*alt);
            generate(&cfg)
        })
        .collect()
}
