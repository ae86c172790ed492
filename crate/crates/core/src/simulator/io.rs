use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::scene::SceneConfig;
use crate::error::{Error, Result};
use crate::groundtruth::{
    check_points_in, read_annotations, write_annotations, Attributes, HeadAnnotation, Image,
    SequenceMeta,
};

/// Frames plus identity-labelled head annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub config: SceneConfig,
    pub frames: Vec<Image>,
    pub heads: Vec<HeadAnnotation>,
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let colour = match image.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => {
            return Err(Error::invalid(format!(
                "cannot encode {c}-channel image as png"
            )))
        }
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(
        BufWriter::new(file),
        image.width as u32,
        image.height as u32,
    );
    enc.set_color(colour);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(&image.to_u8_interleaved())
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))?;
    writer
        .finish()
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))
}

pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::format(
                "png",
                format!("{}: unsupported colour type {other:?}", path.display()),
            ))
        }
    };
    Image::from_u8_interleaved(
        info.width as usize,
        info.height as usize,
        channels,
        &buf[..info.buffer_size()],
    )
}

impl SyntheticSequence {
    pub fn heads_in_frame(&self, frame: usize) -> Vec<HeadAnnotation> {
        self.heads
            .iter()
            .filter(|h| h.frame == frame)
            .copied()
            .collect()
    }

    pub fn attributes(&self) -> Attributes {
        self.config.attributes()
    }

    pub fn meta(&self) -> SequenceMeta {
        SequenceMeta {
            width: self.config.width,
            height: self.config.height,
            frame_count: self.frames.len(),
            attributes: self.attributes(),
            scene: Some(self.config.clone()),
        }
    }

    /// Write `frames/%06d.png`, `annotations.csv` and `meta.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let frames_dir = dir.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        for (i, frame) in self.frames.iter().enumerate() {
            write_png(&frames_dir.join(format!("{i:06}.png")), frame)?;
        }
        write_annotations(&dir.join("annotations.csv"), &self.heads)?;
        self.meta().save(&dir.join("meta.json"))
    }

    /// Read a sequence directory. Sequences without a scene echo get a
    /// default scene sized from the metadata.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta = SequenceMeta::load(&dir.join("meta.json"))?;
        let heads = read_annotations(&dir.join("annotations.csv"))?;
        let frames = (0..meta.frame_count)
            .map(|i| read_png(&dir.join("frames").join(format!("{i:06}.png"))))
            .collect::<Result<Vec<_>>>()?;
        for (i, f) in frames.iter().enumerate() {
            if (f.width, f.height) != (meta.width, meta.height) {
                return Err(Error::format(
                    "sequence",
                    format!(
                        "frame {i} is {}x{}, expected {}x{}",
                        f.width, f.height, meta.width, meta.height
                    ),
                ));
            }
        }
        check_points_in(&heads, meta.width, meta.height)?;
        if let Some(h) = heads.iter().find(|h| h.frame >= meta.frame_count) {
            return Err(Error::OutOfBounds {
                what: "frame",
                index: h.frame,
                detail: format!(
                    "annotation for frame {} beyond {} frames",
                    h.frame, meta.frame_count
                ),
            });
        }
        let config = meta.scene.clone().unwrap_or_else(|| SceneConfig {
            width: meta.width,
            height: meta.height,
            frames: meta.frame_count,
            illumination: meta.attributes.illumination,
            altitude: meta.attributes.altitude,
            ..SceneConfig::default()
        });
        Ok(SyntheticSequence {
            config,
            frames,
            heads,
        })
    }
}
