//! Grayscale rasters and the pixel primitives shared by every stage.
//!
//! Intensities are `f64` in `[0, 1]`; 8-bit sources are divided by 255 on
//! load and rounded back on save, so PGM files survive a read/write cycle
//! byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::dims(width * height, data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a frame from arbitrary values, clamping each into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_clamped(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value.clamp(0.0, 1.0);
    }

    pub fn bounds(&self) -> Rect {
        Rect {
            x0: 0,
            y0: 0,
            x1: self.width,
            y1: self.height,
        }
    }

    pub fn same_dims(&self, other: &GrayFrame) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Copies out the pixels inside `rect`.
    pub fn crop(&self, rect: Rect) -> Result<GrayFrame> {
        rect.check_within(self.width, self.height)?;
        let mut data = Vec::with_capacity(rect.area());
        for y in rect.y0..rect.y1 {
            data.extend_from_slice(&self.data[y * self.width + rect.x0..y * self.width + rect.x1]);
        }
        Ok(GrayFrame {
            width: rect.width(),
            height: rect.height(),
            data,
        })
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean_in(&self, rect: Rect) -> f64 {
        let mut sum = 0.0;
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                sum += self.get(x, y);
            }
        }
        sum / rect.area() as f64
    }
}

/// Axis-aligned pixel rectangle, inclusive-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidArgument(format!(
                "degenerate rect ({x0},{y0})-({x1},{y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 || self.x1 > width || self.y1 > height {
            return Err(Error::InvalidArgument(format!(
                "rect ({},{})-({},{}) outside {width}x{height}",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        Ok(())
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        (x0 < x1 && y0 < y1).then_some(Rect { x0, y0, x1, y1 })
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection(other).map_or(0, |r| r.area());
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }
}

/// Per-pixel absolute difference.
pub fn difference(a: &GrayFrame, b: &GrayFrame) -> Result<GrayFrame> {
    a.same_dims(b)?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (p - q).abs())
        .collect();
    Ok(GrayFrame {
        width: a.width,
        height: a.height,
        data,
    })
}

/// Summed-area table with one row/column of zero padding.
pub(crate) struct Integral {
    width: usize,
    sums: Vec<f64>,
}

impl Integral {
    pub(crate) fn new(width: usize, height: usize, values: impl Fn(usize, usize) -> f64) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += values(x, y);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { width, sums }
    }

    /// Sum over `[x0, x1) × [y0, y1)`.
    pub(crate) fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.width + 1;
        self.sums[y1 * s + x1] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0]
            + self.sums[y0 * s + x0]
    }
}

/// Local-mean adaptive threshold: a pixel is 1 when it exceeds the mean of
/// its `window × window` neighbourhood minus `offset`. Windows are clipped at
/// the frame border and averaged over the pixels they still cover.
pub fn adaptive_threshold(f: &GrayFrame, window: usize, offset: f64) -> Result<GrayFrame> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "threshold window must be odd and >= 3, got {window}"
        )));
    }
    let (w, h) = (f.width, f.height);
    let integral = Integral::new(w, h, |x, y| f.get(x, y));
    let r = window / 2;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let mean = integral.sum(x0, y0, x1, y1) / n;
            data.push(if f.get(x, y) > mean - offset { 1.0 } else { 0.0 });
        }
    }
    Ok(GrayFrame {
        width: w,
        height: h,
        data,
    })
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(f: &GrayFrame, out_w: usize, out_h: usize) -> Result<GrayFrame> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    if out_w == f.width && out_h == f.height {
        return Ok(f.clone());
    }
    let sx = f.width as f64 / out_w as f64;
    let sy = f.height as f64 / out_h as f64;
    let sample_axis = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| sample_axis(x, sx, f.width)).collect();
    let mut data = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, ty) = sample_axis(y, sy, f.height);
        for &(x0, x1, tx) in &cols {
            let top = f.get(x0, y0) * (1.0 - tx) + f.get(x1, y0) * tx;
            let bottom = f.get(x0, y1) * (1.0 - tx) + f.get(x1, y1) * tx;
            data.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
        }
    }
    Ok(GrayFrame {
        width: out_w,
        height: out_h,
        data,
    })
}

/// Standard luma weights applied when a colour (P6) frame is ingested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LumaWeights {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Default for LumaWeights {
    fn default() -> Self {
        Self {
            r: 0.299,
            g: 0.587,
            b: 0.114,
        }
    }
}

fn pnm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse {
            offset: start,
            message: "unexpected end of header".into(),
        });
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn pnm_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let at = *pos;
    let tok = pnm_token(bytes, pos)?;
    tok.parse().map_err(|_| Error::Parse {
        offset: at,
        message: format!("expected a number, found {tok:?}"),
    })
}

/// Decodes binary PGM (P5) or PPM (P6, converted with `luma`), 8-bit only.
pub fn decode_pnm(bytes: &[u8], luma: LumaWeights) -> Result<GrayFrame> {
    let mut pos = 0;
    let magic = pnm_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("unsupported magic {other:?}"),
            })
        }
    };
    let width = pnm_number(bytes, &mut pos)?;
    let height = pnm_number(bytes, &mut pos)?;
    let maxval_at = pos;
    let maxval = pnm_number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse {
            offset: maxval_at,
            message: format!("only 8-bit samples are supported, maxval {maxval}"),
        });
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("raster truncated: need {need} bytes"),
        });
    }
    let raster = &bytes[pos..pos + need];
    let scale = maxval as f64;
    let data = if channels == 1 {
        raster.iter().map(|&b| b as f64 / scale).collect()
    } else {
        raster
            .chunks_exact(3)
            .map(|p| {
                (luma.r * p[0] as f64 + luma.g * p[1] as f64 + luma.b * p[2] as f64) / scale
            })
            .collect()
    };
    GrayFrame::from_clamped(width, height, data)
}

pub fn encode_pgm(f: &GrayFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", f.width, f.height).into_bytes();
    out.extend(f.data.iter().map(|v| (v * 255.0).round() as u8));
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayFrame> {
    read_pnm(path, LumaWeights::default())
}

pub fn read_pnm(path: impl AsRef<Path>, luma: LumaWeights) -> Result<GrayFrame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, luma)
}

pub fn write_pgm(f: &GrayFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_pgm(f))
        .map_err(|e| Error::io(path, e))
}

/// Name of the file holding 0-based frame `index` inside a frame directory.
/// Files are numbered from 1: frame 0 lives in `frame_000001.pgm`.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{:06}.pgm", index + 1)
}

/// A sequence of frames plus the hands-free reference frame.
pub trait FrameSource {
    fn frame_count(&self) -> usize;
    fn frame(&self, index: usize) -> Result<GrayFrame>;
    fn background_frame(&self) -> Result<GrayFrame>;
}

impl FrameSource for FrameDir {
    fn frame_count(&self) -> usize {
        self.len()
    }

    fn frame(&self, index: usize) -> Result<GrayFrame> {
        self.read(index)
    }

    fn background_frame(&self) -> Result<GrayFrame> {
        self.background()
    }
}

/// A directory of zero-padded, numbered PGM frames.
#[derive(Debug, Clone)]
pub struct FrameDir {
    root: PathBuf,
    count: usize,
    luma: LumaWeights,
}

impl FrameDir {
    /// Opens `root` and counts the contiguous run of frames starting at 0.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(Error::io(
                &root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "not a frame directory"),
            ));
        }
        let mut count = 0;
        while root.join(frame_file_name(count)).is_file() {
            count += 1;
        }
        Ok(Self {
            root,
            count,
            luma: LumaWeights::default(),
        })
    }

    pub fn with_luma(mut self, luma: LumaWeights) -> Self {
        self.luma = luma;
        self
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn frame_path(&self, index: usize) -> PathBuf {
        self.root.join(frame_file_name(index))
    }

    pub fn read(&self, index: usize) -> Result<GrayFrame> {
        read_pnm(self.frame_path(index), self.luma)
    }

    /// The hands-free reference frame: `background.pgm` when present,
    /// otherwise the first numbered frame.
    pub fn background(&self) -> Result<GrayFrame> {
        let bg = self.root.join("background.pgm");
        if bg.is_file() {
            read_pnm(bg, self.luma)
        } else {
            self.read(0)
        }
    }

    /// Writes `frames` as a fresh numbered sequence, plus the optional background.
    pub fn write(
        root: impl AsRef<Path>,
        frames: &[GrayFrame],
        background: Option<&GrayFrame>,
    ) -> Result<Self> {
        let root = root.as_ref();
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        for (i, f) in frames.iter().enumerate() {
            write_pgm(f, root.join(frame_file_name(i)))?;
        }
        if let Some(bg) = background {
            write_pgm(bg, root.join("background.pgm"))?;
        }
        Self::open(root)
    }
}
