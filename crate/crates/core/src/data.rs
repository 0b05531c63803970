//! Frame ingestion, the synthetic test clip, and the task splits and masks.

use std::path::{Path, PathBuf};

use fanerv_autograd::Tensor;
use image::imageops::FilterType;
use image::{ImageBuffer, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::Frame;

/// A sequence of equally sized RGB frames in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Frame>,
    pub height: usize,
    pub width: usize,
    pub source: String,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>, source: impl Into<String>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::shape("a clip needs at least one frame"))?;
        let shape = first.shape().to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::shape(format!("frames must be [3, h, w], got {shape:?}")));
        }
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != shape) {
            return Err(Error::shape(format!(
                "frame {i} has shape {:?}, expected {shape:?}",
                f.shape()
            )));
        }
        Ok(Self {
            height: shape[1],
            width: shape[2],
            frames,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn check_stride(&self, stride: usize) -> Result<()> {
        if self.height % stride != 0 || self.width % stride != 0 {
            return Err(Error::shape(format!(
                "clip {}x{} is not divisible by the total stride {stride}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 over the dimensions and the 8-bit quantized pixels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for d in [self.len(), self.height, self.width] {
            h.update((d as u64).to_le_bytes());
        }
        for f in &self.frames {
            h.update(to_rgb8(f).as_raw());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb8(frame: &Frame) -> RgbImage {
    let (_, h, w) = frame.chw();
    let d = frame.data();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([quantize8(d[i]), quantize8(d[h * w + i]), quantize8(d[2 * h * w + i])])
    })
}

pub fn from_rgb8(img: &RgbImage) -> Frame {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

pub fn write_png(path: &Path, frame: &Frame) -> Result<()> {
    to_rgb8(frame)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn read_image(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok(from_rgb8(&img.to_rgb8()))
}

/// Writes `frame_00000.png`, `frame_00001.png`, ... into `dir`.
pub fn save_clip(dir: &Path, clip: &VideoClip) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    clip.frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = dir.join(format!("frame_{i:05}.png"));
            write_png(&p, f)?;
            Ok(p)
        })
        .collect()
}

/// Sidecar descriptor of a raw planar RGB file, stored as `<file>.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDescriptor {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub bit_depth: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Center crop `(height, width)`, applied before resizing.
    pub crop: Option<(usize, usize)>,
    /// Resize to `(height, width)`.
    pub resize: Option<(usize, usize)>,
    /// Required divisor of the final height and width.
    pub stride: Option<usize>,
    /// Keep at most this many frames.
    pub max_frames: Option<usize>,
}

fn frame_index(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .take_while(char::is_ascii_digit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

fn load_directory(dir: &Path, max: Option<usize>) -> Result<Vec<RgbImage>> {
    let mut files: Vec<(u64, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        })
        .filter_map(|p| frame_index(&p).map(|i| (i, p)))
        .collect();
    files.sort();
    if let Some(m) = max {
        files.truncate(m);
    }
    if files.is_empty() {
        return Err(Error::Format(format!("{}: no numbered PNG or PPM frames", dir.display())));
    }
    files
        .iter()
        .map(|(_, p)| {
            image::open(p)
                .map(|i| i.to_rgb8())
                .map_err(|e| Error::Image(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn load_raw(path: &Path, max: Option<usize>) -> Result<Vec<RgbImage>> {
    let side = path.with_extension(format!(
        "{}.json",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let desc: RawDescriptor = serde_json::from_slice(&std::fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
    if desc.bit_depth != 8 {
        return Err(Error::Format(format!("{}: only 8-bit raw video is supported", side.display())));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let plane = desc.width * desc.height;
    let frame_bytes = 3 * plane;
    if bytes.len() != frame_bytes * desc.frames {
        return Err(Error::Format(format!(
            "{}: {} bytes, descriptor implies {}",
            path.display(),
            bytes.len(),
            frame_bytes * desc.frames
        )));
    }
    let n = max.map_or(desc.frames, |m| m.min(desc.frames));
    Ok(bytes
        .chunks(frame_bytes)
        .take(n)
        .map(|f| {
            ImageBuffer::from_fn(desc.width as u32, desc.height as u32, |x, y| {
                let i = y as usize * desc.width + x as usize;
                Rgb([f[i], f[plane + i], f[2 * plane + i]])
            })
        })
        .collect())
}

/// Loads a directory of numbered PNG/PPM frames, or a raw planar RGB file
/// described by a `<file>.json` sidecar.
pub fn load_clip(path: &Path, opts: &LoadOptions) -> Result<VideoClip> {
    let images = if path.is_dir() {
        load_directory(path, opts.max_frames)?
    } else {
        load_raw(path, opts.max_frames)?
    };
    let frames = images
        .into_iter()
        .map(|mut img| {
            if let Some((ch, cw)) = opts.crop {
                let (w, h) = img.dimensions();
                if ch as u32 > h || cw as u32 > w {
                    return Err(Error::shape(format!("crop {ch}x{cw} exceeds frame {h}x{w}")));
                }
                img = image::imageops::crop_imm(&img, (w - cw as u32) / 2, (h - ch as u32) / 2, cw as u32, ch as u32)
                    .to_image();
            }
            if let Some((rh, rw)) = opts.resize {
                img = image::imageops::resize(&img, rw as u32, rh as u32, FilterType::Triangle);
            }
            Ok(from_rgb8(&img))
        })
        .collect::<Result<Vec<_>>>()?;
    let clip = VideoClip::new(frames, path.display().to_string())?;
    if let Some(s) = opts.stride {
        clip.check_stride(s)?;
    }
    Ok(clip)
}

/// Deterministic smooth test clip: two drifting sinusoidal gradients and a
/// moving soft blob, quantized to 8 bits. Bit-identical on every platform.
pub fn synthetic_clip(frames: usize, height: usize, width: usize, seed: u64) -> Result<VideoClip> {
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::shape("synthetic clip needs positive T, H and W"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let mut wave = || {
        (
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.0..tau),
            rng.gen_range(0.2..0.6),
        )
    };
    let waves: Vec<[(f64, f64, f64, f64); 2]> = (0..3).map(|_| [wave(), wave()]).collect();
    let blob_color: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.2..0.2)).collect();
    let (h, w) = (height as f64, width as f64);
    let frames = (0..frames)
        .map(|t| {
            let phase = tau * t as f64 / frames.max(2) as f64;
            let bx = 0.5 + 0.3 * libm::cos(phase);
            let by = 0.5 + 0.3 * libm::sin(phase);
            Tensor::from_fn(&[3, height, width], |i| {
                let (c, y, x) = (i / (height * width), (i / width) % height, i % width);
                let (u, v) = (x as f64 / w, y as f64 / h);
                let mut val = 0.5;
                for &(fx, fy, ph, speed) in &waves[c] {
                    val += 0.15 * libm::sin(tau * (fx * u + fy * v) + ph + speed * phase);
                }
                let d2 = (u - bx) * (u - bx) + (v - by) * (v - by);
                val += blob_color[c] * libm::exp(-d2 / 0.02);
                quantize8(val as f32) as f32 / 255.0
            })
        })
        .collect();
    VideoClip::new(frames, format!("synthetic:{seed}"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl TaskSplit {
    pub fn all(frames: usize) -> Self {
        Self {
            train: (0..frames).collect(),
            test: Vec::new(),
        }
    }
}

/// Even frames for training, odd frames for testing.
pub fn split_even_odd(frames: usize) -> Result<TaskSplit> {
    if frames < 2 {
        return Err(Error::Domain(format!("even/odd split needs at least 2 frames, got {frames}")));
    }
    Ok(TaskSplit {
        train: (0..frames).step_by(2).collect(),
        test: (1..frames).step_by(2).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MaskSpec {
    /// One centered box of a quarter of the width and height.
    Center,
    /// `count` square boxes of side `box_size` at full 1080p scale, placed
    /// independently per frame.
    Scatter { count: usize, box_size: usize, seed: u64 },
}

impl MaskSpec {
    pub fn scatter(seed: u64) -> Self {
        MaskSpec::Scatter {
            count: 5,
            box_size: 50,
            seed,
        }
    }
}

/// Box side scaled from 1080p to `h x w`, at least 8 pixels.
pub fn scaled_box_side(box_size: usize, height: usize, width: usize) -> usize {
    let f = (height as f64 / 1080.0).min(width as f64 / 1920.0).min(1.0);
    ((box_size as f64 * f).round() as usize).max(8)
}

/// Binary visibility map: `true` visible, `false` masked.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub visible: Vec<bool>,
}

impl Mask {
    pub fn masked_count(&self) -> usize {
        self.visible.iter().filter(|v| !**v).count()
    }

    fn hide(&mut self, top: usize, left: usize, h: usize, w: usize) {
        for y in top..top + h {
            self.visible[y * self.width + left..y * self.width + left + w].fill(false);
        }
    }

    /// `[channels, h, w]` tensor of ones (visible) and zeros (masked).
    pub fn to_tensor(&self, channels: usize) -> Frame {
        let plane = self.height * self.width;
        Tensor::from_fn(&[channels, self.height, self.width], |i| {
            if self.visible[i % plane] {
                1.0
            } else {
                0.0
            }
        })
    }
}

pub fn make_mask(spec: &MaskSpec, height: usize, width: usize, t: usize) -> Result<Mask> {
    let mut m = Mask {
        height,
        width,
        visible: vec![true; height * width],
    };
    match *spec {
        MaskSpec::Center => {
            let (mh, mw) = (height / 4, width / 4);
            m.hide((height - mh) / 2, (width - mw) / 2, mh, mw);
        }
        MaskSpec::Scatter { count, box_size, seed } => {
            let side = scaled_box_side(box_size, height, width);
            if side > height || side > width {
                return Err(Error::shape(format!("mask box {side} exceeds frame {height}x{width}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            for _ in 0..count {
                let top = rng.gen_range(0..=height - side);
                let left = rng.gen_range(0..=width - side);
                m.hide(top, left, side, side);
            }
        }
    }
    Ok(m)
}

/// Masked pixels are set to zero in every channel; nothing else is read
/// from them, so non-finite values there do not propagate.
pub fn apply_mask(frame: &Frame, mask: &Mask) -> Result<Frame> {
    let (c, h, w) = frame.chw();
    if (h, w) != (mask.height, mask.width) {
        return Err(Error::shape(format!(
            "mask {}x{} vs frame {h}x{w}",
            mask.height, mask.width
        )));
    }
    let plane = h * w;
    let mut out = frame.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if !mask.visible[i % plane] {
            *v = 0.0;
        }
    }
    debug_assert_eq!(out.numel(), c * plane);
    Ok(out)
}
