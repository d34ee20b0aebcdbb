//! 8-bit PNG frames and frame directories.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};
use vsrkit_core::synth::quantize;
use vsrkit_core::{Shape, Tensor};

use crate::error::{Error, Result};

/// Loads a grayscale or colour image as a `(1, c, h, w)` tensor in `[0, 1]`.
/// Alpha is dropped; other colour types are converted to 8-bit RGB.
pub fn load_frame(path: &Path) -> Result<Tensor> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image { path: path.to_path_buf(), source: e })?;
    Ok(match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            Tensor::from_fn(Shape::new(1, 1, h as usize, w as usize), |_, _, y, x| g.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0)
        }
        _ => {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            Tensor::from_fn(Shape::new(1, 3, h as usize, w as usize), |_, c, y, x| rgb.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0)
        }
    })
}

fn to_u8(v: f32) -> u8 {
    (quantize(v) * 255.0).round() as u8
}

/// Writes image `0` of a 1- or 3-channel tensor as an 8-bit PNG, clamping to `[0, 1]`.
pub fn save_frame(path: &Path, frame: &Tensor) -> Result<()> {
    let s = frame.shape();
    let (w, h) = (s.w as u32, s.h as u32);
    let img = match s.c {
        1 => DynamicImage::ImageLuma8(GrayImage::from_fn(w, h, |x, y| image::Luma([to_u8(frame.at(0, 0, y as usize, x as usize))]))),
        3 => DynamicImage::ImageRgb8(RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([0, 1, 2].map(|c| to_u8(frame.at(0, c, y as usize, x as usize))))
        })),
        c => return Err(Error::format(path, format!("cannot write a {c}-channel image"))),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        crate::error::create_dir(dir)?;
    }
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

/// A directory of same-sized frames, ordered by file name.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub dir: PathBuf,
    pub names: Vec<String>,
    pub width: usize,
    pub height: usize,
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

impl FrameSequence {
    /// Lists the PNG frames of `dir` and checks that they share one size.
    pub fn open(dir: &Path) -> Result<Self> {
        let names = png_names(dir)?;
        let first = names.first().ok_or_else(|| Error::format(dir, "no PNG frames"))?;
        let size = |name: &str| {
            let p = dir.join(name);
            image::image_dimensions(&p).map_err(|e| Error::Image { path: p, source: e })
        };
        let (w, h) = size(first)?;
        for n in &names[1..] {
            let (wn, hn) = size(n)?;
            if (wn, hn) != (w, h) {
                return Err(Error::format(&dir.join(n), format!("frame is {wn}x{hn}, expected {w}x{h} like {first}")));
            }
        }
        Ok(FrameSequence { dir: dir.to_path_buf(), names, width: w as usize, height: h as usize })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self) -> String {
        self.dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    }

    pub fn load(&self) -> Result<Vec<Tensor>> {
        let frames: Vec<Tensor> = self.names.iter().map(|n| load_frame(&self.dir.join(n))).collect::<Result<_>>()?;
        if let Some(first) = frames.first() {
            for (f, n) in frames.iter().zip(&self.names) {
                if f.shape().c != first.shape().c {
                    return Err(Error::format(&self.dir.join(n), "frames mix grayscale and colour"));
                }
            }
        }
        Ok(frames)
    }
}

/// Every subdirectory of `root` holding PNG frames, in name order.
pub fn find_sequences(root: &Path) -> Result<Vec<FrameSequence>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        if !png_names(&d)?.is_empty() {
            out.push(FrameSequence::open(&d)?);
        }
    }
    if out.is_empty() {
        return Err(Error::format(root, "no frame sequences found"));
    }
    Ok(out)
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:04}.png")
}

pub fn write_sequence(dir: &Path, frames: &[Tensor]) -> Result<()> {
    frames.iter().enumerate().try_for_each(|(t, f)| save_frame(&dir.join(frame_name(t)), f))
}
