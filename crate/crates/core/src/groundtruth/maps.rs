use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::annotation::{check_extents, check_points, pixel_of};
use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

/// A single-channel `H×W` field, row-major. `scale` is the pyramid level it
/// belongs to (1 = coarsest); 0 when not part of a pyramid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub scale: usize,
    pub values: Vec<f64>,
}

/// Per-pixel density; integrates to the head count.
pub type DensityMap = ScalarMap;

/// Per-pixel head likelihood in `[0, 1]` with a peak of 1 at every head.
pub type LocalizationMap = ScalarMap;

const MAP_MAGIC: &[u8; 4] = b"CFMP";
const MAP_VERSION: u32 = 1;

impl ScalarMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        ScalarMap {
            width,
            height,
            scale: 0,
            values: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Position of the largest value; ties go to the last pixel in row-major
    /// order, matching `floor` for a head on a pixel corner.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<usize> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|b| v >= self.values[b]) {
                best = Some(i);
            }
        }
        best.map(|i| (i % self.width, i / self.width))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 1, self.height, self.width], self.values.clone()).expect("map extents")
    }

    /// Channel `c` of batch item `n` as a map.
    pub fn from_tensor(t: &Tensor, n: usize, c: usize) -> Self {
        ScalarMap {
            width: t.w(),
            height: t.h(),
            scale: 0,
            values: t.plane(n, c).to_vec(),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.values.chunks(self.width) {
            values.extend(row.iter().rev());
        }
        ScalarMap {
            values,
            ..self.clone()
        }
    }

    pub fn pointwise_max(&self, other: &ScalarMap) -> Self {
        assert_eq!((self.width, self.height), (other.width, other.height));
        ScalarMap {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.max(*b))
                .collect(),
            ..self.clone()
        }
    }

    /// Binary map file: `b"CFMP"`, version u32, width u32, height u32, then
    /// `f64` values row-major, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.values.len());
        out.extend_from_slice(MAP_MAGIC);
        out.extend_from_slice(&MAP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAP_MAGIC {
            return Err(Error::format("map", "bad header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if word(4) != MAP_VERSION {
            return Err(Error::format(
                "map",
                format!("unsupported version {}", word(4)),
            ));
        }
        let (width, height) = (word(8) as usize, word(12) as usize);
        if bytes.len() != 16 + 8 * width * height {
            return Err(Error::format("map", "size does not match extents"));
        }
        let values: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("map values".into()));
        }
        Ok(ScalarMap {
            width,
            height,
            scale: 0,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { what, detail } => Error::Format {
                what,
                detail: format!("{}: {detail}", path.display()),
            },
            other => other,
        })
    }
}

/// Gaussian kernel settings for density targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    /// Geometry-adaptive σ from nearest-neighbour spacing; otherwise
    /// `sigma_fixed` everywhere.
    pub adaptive: bool,
    pub beta: f64,
    pub k_nearest: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_fixed: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            adaptive: true,
            beta: 0.3,
            k_nearest: 3,
            sigma_min: 1.0,
            sigma_max: 16.0,
            sigma_fixed: 4.0,
        }
    }
}

impl KernelConfig {
    pub fn fixed(sigma: f64) -> Self {
        KernelConfig {
            adaptive: false,
            sigma_fixed: sigma,
            ..Self::default()
        }
    }

    /// Kernel width for every head.
    pub fn sigmas(&self, heads: &[(f64, f64)]) -> Vec<f64> {
        if !self.adaptive {
            return vec![self.sigma_fixed; heads.len()];
        }
        heads
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let mut d: Vec<f64> = heads
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &(u, v))| ((x - u).powi(2) + (y - v).powi(2)).sqrt())
                    .collect();
                if d.is_empty() {
                    return self.sigma_fixed;
                }
                d.sort_by(f64::total_cmp);
                let k = self.k_nearest.min(d.len()).max(1);
                let mean = d[..k].iter().sum::<f64>() / k as f64;
                (self.beta * mean).clamp(self.sigma_min, self.sigma_max)
            })
            .collect()
    }
}

/// Ground-truth density map: one Gaussian per head, renormalized over the
/// pixels it covers so each head contributes exactly unit mass.
pub fn density_map(
    heads: &[(f64, f64)],
    width: usize,
    height: usize,
    kernel: &KernelConfig,
) -> Result<DensityMap> {
    check_extents(width, height)?;
    check_points(heads, width, height)?;
    let mut map = ScalarMap::zeros(width, height);
    let sigmas = kernel.sigmas(heads);
    let mut patch = Vec::new();
    for (&(x, y), &sigma) in heads.iter().zip(&sigmas) {
        // pixel centres within `r` of the head on each axis; symmetric about
        // the head so mirrored inputs give mirrored windows
        let r = (3.0 * sigma).ceil().max(1.0);
        let span = |c: f64, extent: usize| {
            let lo = (c - 0.5 - r).ceil().max(0.0) as usize;
            let hi = ((c - 0.5 + r).floor() as isize).min(extent as isize - 1) as usize;
            (lo.min(pixel_of(c, extent)), hi.max(pixel_of(c, extent)))
        };
        let (x0, x1) = span(x, width);
        let (y0, y1) = span(y, height);
        let inv = 1.0 / (2.0 * sigma * sigma);
        patch.clear();
        let mut total = 0.0;
        for i in y0..=y1 {
            let dy = i as f64 + 0.5 - y;
            for j in x0..=x1 {
                let dx = j as f64 + 0.5 - x;
                let v = (-(dx * dx + dy * dy) * inv).exp();
                total += v;
                patch.push(v);
            }
        }
        let mut k = 0;
        for i in y0..=y1 {
            for j in x0..=x1 {
                map.values[i * width + j] += patch[k] / total;
                k += 1;
            }
        }
    }
    Ok(map)
}

/// Ground-truth localization map: a unit-peak Gaussian centred on each
/// head's pixel, overlapping heads combined by pointwise maximum.
pub fn localization_map(
    heads: &[(f64, f64)],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<LocalizationMap> {
    check_extents(width, height)?;
    check_points(heads, width, height)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "localization sigma must be positive, got {sigma}"
        )));
    }
    let mut map = ScalarMap::zeros(width, height);
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for &(x, y) in heads {
        let (cx, cy) = (pixel_of(x, width) as isize, pixel_of(y, height) as isize);
        for i in (cy - r).max(0)..=(cy + r).min(height as isize - 1) {
            for j in (cx - r).max(0)..=(cx + r).min(width as isize - 1) {
                let d2 = ((i - cy).pow(2) + (j - cx).pow(2)) as f64;
                let v = (-d2 * inv).exp();
                let cell = &mut map.values[i as usize * width + j as usize];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
    Ok(map)
}

/// Supervision for one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleTargets {
    pub density: DensityMap,
    pub localization: LocalizationMap,
}

/// Density and localization targets for `scales` pyramid levels. Level `s`
/// (1-based, 1 = coarsest) has extents `base / 2^(scales − s)`; every map is
/// rebuilt from rescaled coordinates rather than downsampled, so each
/// density level integrates to the head count. The localization σ shrinks
/// with the level.
pub fn multiscale_targets(
    heads: &[(f64, f64)],
    width: usize,
    height: usize,
    scales: usize,
    kernel: &KernelConfig,
    sigma_loc: f64,
) -> Result<Vec<ScaleTargets>> {
    if scales == 0 {
        return Err(Error::invalid("need at least one scale"));
    }
    let factor = 1usize << (scales - 1);
    if !width.is_multiple_of(factor) || !height.is_multiple_of(factor) {
        return Err(Error::invalid(format!(
            "extents {width}x{height} not divisible by {factor} for {scales} scales"
        )));
    }
    check_extents(width, height)?;
    check_points(heads, width, height)?;
    (1..=scales)
        .map(|s| {
            let down = (1usize << (scales - s)) as f64;
            let (w, h) = (width / (1 << (scales - s)), height / (1 << (scales - s)));
            let pts: Vec<(f64, f64)> = heads.iter().map(|&(x, y)| (x / down, y / down)).collect();
            let mut density = density_map(&pts, w, h, kernel)?;
            let mut localization = localization_map(&pts, w, h, sigma_loc / down)?;
            density.scale = s;
            localization.scale = s;
            Ok(ScaleTargets {
                density,
                localization,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_heads_give_zero_maps() {
        let d = density_map(&[], 16, 8, &KernelConfig::default()).unwrap();
        assert_eq!(d.sum(), 0.0);
        let l = localization_map(&[], 16, 8, 3.0).unwrap();
        assert!(l.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_centered_head_has_unit_mass() {
        let d = density_map(&[(32.0, 32.0)], 64, 64, &KernelConfig::fixed(4.0)).unwrap();
        assert!((d.sum() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn rejects_bad_extents_and_points() {
        assert!(density_map(&[], 0, 4, &KernelConfig::default()).is_err());
        let err =
            density_map(&[(1.0, 1.0), (5.0, 1.0)], 4, 4, &KernelConfig::default()).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { index: 1, .. }));
        assert!(localization_map(&[(1.0, -0.1)], 4, 4, 3.0).is_err());
    }

    #[test]
    fn ten_heads_sum_to_ten() {
        let heads: Vec<(f64, f64)> = (0..10)
            .map(|i| (0.3 + i as f64 * 6.1, 63.9 - i as f64 * 2.7))
            .collect();
        for kernel in [KernelConfig::default(), KernelConfig::fixed(4.0)] {
            let d = density_map(&heads, 64, 64, &kernel).unwrap();
            assert!((d.sum() - 10.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn adaptive_sigma_rules() {
        let k = KernelConfig::default();
        assert_eq!(k.sigmas(&[(5.0, 5.0)]), vec![k.sigma_fixed]);
        // three neighbours at distance 10: 0.3 · 10 = 3
        let s = k.sigmas(&[
            (50.0, 50.0),
            (60.0, 50.0),
            (40.0, 50.0),
            (50.0, 60.0),
            (90.0, 90.0),
        ]);
        assert!((s[0] - 3.0).abs() < 1e-12);
        // two heads one pixel apart clamp to the floor
        assert_eq!(k.sigmas(&[(1.0, 1.0), (2.0, 1.0)]), vec![1.0, 1.0]);
    }

    #[test]
    fn localization_single_peak() {
        let l = localization_map(&[(10.5, 7.2)], 20, 16, 3.0).unwrap();
        assert_eq!(l.argmax(), Some((10, 7)));
        assert_eq!(l.at(10, 7), 1.0);
        assert_eq!(l.values.iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn localization_two_heads_midpoint() {
        let sigma = 3.0;
        let l = localization_map(&[(20.5, 10.5), (26.5, 10.5)], 40, 20, sigma).unwrap();
        let expected = (-(sigma * sigma) / (2.0 * sigma * sigma)).exp();
        assert!((l.at(23, 10) - expected).abs() < 1e-15);
        assert!((expected - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn pyramid_shapes_and_mass() {
        let heads = [(32.0, 32.0), (5.5, 60.1), (63.0, 0.2)];
        let t = multiscale_targets(&heads, 64, 64, 4, &KernelConfig::default(), 3.0).unwrap();
        let extents: Vec<usize> = t.iter().map(|s| s.density.width).collect();
        assert_eq!(extents, vec![8, 16, 32, 64]);
        for s in &t {
            assert!((s.density.sum() - 3.0).abs() <= 1e-6);
        }
        let one =
            multiscale_targets(&[(32.0, 32.0)], 64, 64, 4, &KernelConfig::default(), 3.0).unwrap();
        assert_eq!(one[2].density.argmax(), Some((16, 16)));
        assert_eq!(one[2].localization.argmax(), Some((16, 16)));
        assert!(multiscale_targets(&heads, 60, 64, 4, &KernelConfig::default(), 3.0).is_err());
        let empty = multiscale_targets(&[], 64, 64, 4, &KernelConfig::default(), 3.0).unwrap();
        assert!(empty.iter().all(|s| s.density.sum() == 0.0));
    }

    #[test]
    fn map_file_round_trip() {
        let l = localization_map(&[(3.5, 2.5)], 7, 5, 1.5).unwrap();
        let back = ScalarMap::from_bytes(&l.to_bytes()).unwrap();
        assert_eq!(back.values, l.values);
        assert!(ScalarMap::from_bytes(&l.to_bytes()[..20]).is_err());
    }

    fn heads_strategy(w: f64, h: f64) -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.0..w, 0.0..h), 0..25)
    }

    proptest! {
        #[test]
        fn density_conserves_count(heads in heads_strategy(48.0, 32.0), adaptive in any::<bool>()) {
            let kernel = KernelConfig { adaptive, ..KernelConfig::default() };
            let d = density_map(&heads, 48, 32, &kernel).unwrap();
            let n = heads.len() as f64;
            prop_assert!((d.sum() - n).abs() <= 1e-6 * n.max(1.0));
            prop_assert!(d.values.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn density_flip_equivariant(heads in heads_strategy(40.0, 24.0)) {
            let w = 40;
            let flipped: Vec<(f64, f64)> = heads.iter()
                .map(|&(x, y)| (w as f64 - x, y))
                .filter(|&(x, _)| x < w as f64)
                .collect();
            prop_assume!(flipped.len() == heads.len());
            let a = density_map(&flipped, w, 24, &KernelConfig::default()).unwrap();
            let b = density_map(&heads, w, 24, &KernelConfig::default()).unwrap().flip_horizontal();
            let diff = a.values.iter().zip(&b.values).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(diff <= 1e-12, "diff {}", diff);
        }

        #[test]
        fn localization_union_is_max(a in heads_strategy(32.0, 32.0), b in heads_strategy(32.0, 32.0)) {
            let both: Vec<(f64, f64)> = a.iter().chain(&b).copied().collect();
            let u = localization_map(&both, 32, 32, 3.0).unwrap();
            let m = localization_map(&a, 32, 32, 3.0).unwrap()
                .pointwise_max(&localization_map(&b, 32, 32, 3.0).unwrap());
            let diff = u.values.iter().zip(&m.values).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(diff <= 1e-12);
            prop_assert!(u.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn separated_heads_are_all_peaks(cells in proptest::collection::btree_set((0usize..3, 0usize..3), 0..9)) {
            // grid spacing 20 > 6σ for σ = 3
            let heads: Vec<(f64, f64)> = cells.iter().map(|&(i, j)| (5.5 + 20.0 * i as f64, 5.5 + 20.0 * j as f64)).collect();
            let l = localization_map(&heads, 64, 64, 3.0).unwrap();
            for &(x, y) in &heads {
                prop_assert_eq!(l.at(x as usize, y as usize), 1.0);
            }
        }
    }
}
