use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groundtruth::{DensityMap, LocalizationMap};

/// A detected head with its confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn distance(&self, other: &Detection) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub theta: f64,
    pub radius: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            theta: 0.25,
            radius: 3,
        }
    }
}

/// Peaks of a localization map. A pixel is kept when its value exceeds
/// `theta` and beats every other pixel of its `(2r+1)²` window; equal values
/// are won by the lower `(y, x)`. Detections sit at pixel centres.
pub fn localize(map: &LocalizationMap, frame: usize, nms: NmsConfig) -> Result<Vec<Detection>> {
    if !(nms.theta > 0.0 && nms.theta < 1.0) {
        return Err(Error::invalid(format!(
            "theta must lie in (0, 1), got {}",
            nms.theta
        )));
    }
    if nms.radius == 0 {
        return Err(Error::invalid("nms radius must be >= 1"));
    }
    if let Some(i) = map.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("localization map pixel {i}")));
    }
    let (w, h, r) = (map.width, map.height, nms.radius);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = map.at(x, y);
            if v <= nms.theta {
                continue;
            }
            let mut peak = true;
            'window: for ny in y.saturating_sub(r)..(y + r + 1).min(h) {
                for nx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    let u = map.at(nx, ny);
                    if u > v || (u == v && (ny, nx) < (y, x)) {
                        peak = false;
                        break 'window;
                    }
                }
            }
            if peak {
                out.push(Detection {
                    frame,
                    x: x as f64 + 0.5,
                    y: y as f64 + 0.5,
                    confidence: v,
                });
            }
        }
    }
    Ok(out)
}

/// Estimated count: the integral of the density map.
pub fn count_from_density(map: &DensityMap) -> f64 {
    map.sum()
}
