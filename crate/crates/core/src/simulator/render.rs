use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::{IlluminationProfile, SceneConfig};
use crate::groundtruth::{HeadAnnotation, Image};

/// Blobs are drawn only within this many radii of their centre.
pub(crate) const SUPPORT_RADII: f64 = 4.0;

const TEXTURE_STREAM: u64 = 1 << 40;

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

pub(crate) struct Renderer {
    width: usize,
    height: usize,
    seed: u64,
    radius: f64,
    profile: IlluminationProfile,
    /// Static background, 3 planes.
    texture: Vec<f32>,
}

impl Renderer {
    pub fn new(cfg: &SceneConfig) -> Self {
        let profile = IlluminationProfile::of(cfg.illumination);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(TEXTURE_STREAM);
        let (w, h) = (cfg.width, cfg.height);
        let mut texture = vec![0f32; 3 * w * h];
        let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.04..0.04));
        let waves: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let freq = rng.random_range(0.02..0.12);
                (
                    freq * angle.cos(),
                    freq * angle.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let wave: f64 = waves
                    .iter()
                    .map(|&(fx, fy, ph)| (fx * x as f64 + fy * y as f64 + ph).sin())
                    .sum::<f64>()
                    / waves.len() as f64;
                let grain: f32 = rng.random_range(-1.0..1.0);
                for (c, t) in tint.iter().enumerate() {
                    texture[(c * h + y) * w + x] =
                        profile.background + t + profile.texture * (wave as f32 + 0.3 * grain);
                }
            }
        }
        Renderer {
            width: w,
            height: h,
            seed: cfg.seed,
            radius: cfg.head_radius,
            profile,
            texture,
        }
    }

    /// Texture plus the frame's own noise, before quantization.
    fn background_raw(&self, frame: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame as u64 + 1);
        let noise = Normal::new(0.0f32, self.profile.noise).expect("finite noise");
        let mut img = Image::new(self.width, self.height, 3);
        for (v, t) in img.data.iter_mut().zip(&self.texture) {
            *v = t + noise.sample(&mut rng);
        }
        img
    }

    #[cfg(test)]
    pub fn background(&self, frame: usize) -> Image {
        let mut img = self.background_raw(frame);
        img.data.iter_mut().for_each(|v| *v = quantize(*v));
        img
    }

    fn head_colour(&self, id: u64) -> [f32; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        std::array::from_fn(|_| self.profile.head + rng.random_range(-0.06..0.06))
    }

    /// Blob opacity per pixel and the identity that owns it (largest opacity).
    pub fn alpha(&self, heads: &[HeadAnnotation]) -> (Vec<f64>, Vec<Option<usize>>) {
        let (w, h) = (self.width, self.height);
        let mut alpha = vec![0.0; w * h];
        let mut owner = vec![None; w * h];
        let support = SUPPORT_RADII * self.radius;
        let two_var = 2.0 * self.radius * self.radius;
        for (k, head) in heads.iter().enumerate() {
            let lo = |c: f64| (c - support - 0.5).ceil().max(0.0) as usize;
            let hi = |c: f64, extent: usize| {
                ((c + support - 0.5).floor().max(-1.0) as isize + 1).min(extent as isize) as usize
            };
            for y in lo(head.y)..hi(head.y, h) {
                for x in lo(head.x)..hi(head.x, w) {
                    let d2 = (x as f64 + 0.5 - head.x).powi(2) + (y as f64 + 0.5 - head.y).powi(2);
                    if d2 > support * support {
                        continue;
                    }
                    let a = (-d2 / two_var).exp();
                    let i = y * w + x;
                    if a > alpha[i] {
                        alpha[i] = a;
                        owner[i] = Some(k);
                    }
                }
            }
        }
        (alpha, owner)
    }

    pub fn frame(&self, frame: usize, heads: &[HeadAnnotation]) -> Image {
        let mut img = self.background_raw(frame);
        let (alpha, owner) = self.alpha(heads);
        let colours: Vec<[f32; 3]> = heads.iter().map(|h| self.head_colour(h.id)).collect();
        let hw = self.width * self.height;
        for i in 0..hw {
            if let Some(k) = owner[i] {
                let a = alpha[i] as f32;
                for c in 0..3 {
                    let v = &mut img.data[c * hw + i];
                    *v = *v * (1.0 - a) + colours[k][c] * a;
                }
            }
        }
        img.data.iter_mut().for_each(|v| *v = quantize(*v));
        img
    }
}
