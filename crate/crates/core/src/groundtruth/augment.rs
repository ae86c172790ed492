use rand::Rng;

use super::annotation::HeadAnnotation;
use super::image::Image;
use crate::error::{Error, Result};

/// A frame pair with the heads annotated in each frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub current: Image,
    pub previous: Image,
    pub current_heads: Vec<HeadAnnotation>,
    pub previous_heads: Vec<HeadAnnotation>,
}

impl FramePair {
    pub fn width(&self) -> usize {
        self.current.width
    }

    pub fn height(&self) -> usize {
        self.current.height
    }

    fn check(&self) -> Result<()> {
        let (a, b) = (&self.current, &self.previous);
        if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
            return Err(Error::invalid("frames of a pair must share extents"));
        }
        Ok(())
    }

    /// Mirror both frames and all heads about the vertical centre line.
    pub fn flip_horizontal(&self) -> FramePair {
        let w = self.width() as f64;
        let flip = |hs: &[HeadAnnotation]| {
            hs.iter()
                .map(|h| HeadAnnotation { x: w - h.x, ..*h })
                .collect()
        };
        FramePair {
            current: self.current.flip_horizontal(),
            previous: self.previous.flip_horizontal(),
            current_heads: flip(&self.current_heads),
            previous_heads: flip(&self.previous_heads),
        }
    }

    /// Crop both frames to the same window; heads outside it are dropped and
    /// the rest shifted into window coordinates.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<FramePair> {
        self.check()?;
        let keep = |hs: &[HeadAnnotation]| {
            hs.iter()
                .filter_map(|h| {
                    let (x, y) = (h.x - x0 as f64, h.y - y0 as f64);
                    (x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64)
                        .then_some(HeadAnnotation { x, y, ..*h })
                })
                .collect()
        };
        Ok(FramePair {
            current: self.current.crop(x0, y0, width, height)?,
            previous: self.previous.crop(x0, y0, width, height)?,
            current_heads: keep(&self.current_heads),
            previous_heads: keep(&self.previous_heads),
        })
    }

    /// Four equal quadrants, row-major (top-left first).
    pub fn split_2x2(&self) -> Result<[FramePair; 4]> {
        let (w, h) = (self.width() / 2, self.height() / 2);
        Ok([
            self.crop(0, 0, w, h)?,
            self.crop(w, 0, w, h)?,
            self.crop(0, h, w, h)?,
            self.crop(w, h, w, h)?,
        ])
    }
}

/// Random crop/flip settings.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Crop extents; `None` keeps the full frame.
    pub crop: Option<(usize, usize)>,
    /// Crop origins are multiples of this (keeps pyramid alignment).
    pub crop_align: usize,
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop: None,
            crop_align: 8,
            flip_probability: 0.5,
        }
    }
}

/// Apply one random crop and flip, identically to both frames.
pub fn augment<R: Rng + ?Sized>(
    pair: &FramePair,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<FramePair> {
    pair.check()?;
    let mut out = match config.crop {
        Some((cw, ch)) => {
            if cw > pair.width() || ch > pair.height() {
                return Err(Error::invalid(format!(
                    "crop {cw}x{ch} larger than frame {}x{}",
                    pair.width(),
                    pair.height()
                )));
            }
            let align = config.crop_align.max(1);
            let x0 = rng.random_range(0..=(pair.width() - cw) / align) * align;
            let y0 = rng.random_range(0..=(pair.height() - ch) / align) * align;
            pair.crop(x0, y0, cw, ch)?
        }
        None => pair.clone(),
    };
    if rng.random::<f64>() < config.flip_probability {
        out = out.flip_horizontal();
    }
    Ok(out)
}
