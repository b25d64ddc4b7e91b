//! Keyboard localisation and key segmentation on a hands-free frame.
//!
//! The keyboard rectangle is found from Hough lines: every pair of
//! near-horizontal and near-vertical lines spans a candidate, and the
//! candidate whose upper half is mostly dark (black keys) and lower half
//! mostly bright (white keys) wins. Keys are then cut out of that rectangle:
//! black keys directly from an adaptive threshold, white keys from the gaps
//! between black keys and a uniform split of the lower band.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{adaptive_threshold, GrayFrame, Integral, Rect};

const BLACK_PITCH_CLASSES: [u8; 5] = [1, 3, 6, 8, 10];

pub fn is_black_note(midi: u8) -> bool {
    BLACK_PITCH_CLASSES.contains(&(midi % 12))
}

/// Which keys a keyboard carries: `n_keys` consecutive semitones from `first_key`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutSpec {
    pub first_key: u8,
    pub n_keys: usize,
}

impl LayoutSpec {
    pub fn new(first_key: u8, n_keys: usize) -> Result<Self> {
        if n_keys == 0 || first_key as usize + n_keys > 128 {
            return Err(Error::InvalidArgument(format!(
                "layout of {n_keys} keys from note {first_key} leaves the MIDI range"
            )));
        }
        let spec = Self { first_key, n_keys };
        if spec.n_black() == 0 {
            return Err(Error::InvalidArgument(
                "layout must contain at least one black key".into(),
            ));
        }
        Ok(spec)
    }

    /// `n_octaves` full octaves starting at `first_key`.
    pub fn octaves(first_key: u8, n_octaves: usize) -> Result<Self> {
        Self::new(first_key, 12 * n_octaves)
    }

    /// The standard 88-key piano, A0 to C8.
    pub fn standard_88() -> Self {
        Self {
            first_key: 21,
            n_keys: 88,
        }
    }

    pub fn notes(&self) -> impl Iterator<Item = u8> {
        let first = self.first_key;
        (0..self.n_keys).map(move |i| first + i as u8)
    }

    pub fn n_black(&self) -> usize {
        self.notes().filter(|&n| is_black_note(n)).count()
    }

    pub fn n_white(&self) -> usize {
        self.n_keys - self.n_black()
    }

    pub fn contains(&self, midi: u8) -> bool {
        midi >= self.first_key && ((midi - self.first_key) as usize) < self.n_keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyColor {
    White,
    Black,
}

impl KeyColor {
    pub fn as_str(&self) -> &'static str {
        match self {
            KeyColor::White => "white",
            KeyColor::Black => "black",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "white" => Some(KeyColor::White),
            "black" => Some(KeyColor::Black),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyShape {
    White { upper: Rect, lower: Rect },
    Black { bbox: Rect },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyRegion {
    pub key_id: usize,
    pub midi_note: u8,
    pub shape: KeyShape,
}

impl KeyRegion {
    pub fn color(&self) -> KeyColor {
        match self.shape {
            KeyShape::White { .. } => KeyColor::White,
            KeyShape::Black { .. } => KeyColor::Black,
        }
    }

    /// Horizontal pixel extent `[x0, x1)` covered by any part of the key.
    pub fn x_extent(&self) -> (usize, usize) {
        match self.shape {
            KeyShape::White { upper, lower } => (upper.x0.min(lower.x0), upper.x1.max(lower.x1)),
            KeyShape::Black { bbox } => (bbox.x0, bbox.x1),
        }
    }

    fn center_x(&self) -> f64 {
        let (a, b) = self.x_extent();
        (a + b) as f64 / 2.0
    }

    fn rects(&self) -> Vec<Rect> {
        match self.shape {
            KeyShape::White { upper, lower } => vec![upper, lower],
            KeyShape::Black { bbox } => vec![bbox],
        }
    }
}

/// A located keyboard: its rectangle in the frame and every key region.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyboardLayout {
    pub frame_width: usize,
    pub frame_height: usize,
    pub bounds: Rect,
    /// Sorted by x, which is also ascending pitch.
    pub keys: Vec<KeyRegion>,
    /// First row of the lower (white-only) band.
    pub black_row_split: usize,
}

impl KeyboardLayout {
    pub fn new(
        frame_width: usize,
        frame_height: usize,
        bounds: Rect,
        mut keys: Vec<KeyRegion>,
    ) -> Result<Self> {
        bounds.check_within(frame_width, frame_height)?;
        keys.sort_by(|a, b| {
            a.center_x()
                .partial_cmp(&b.center_x())
                .unwrap_or(Ordering::Equal)
        });
        for (i, k) in keys.iter_mut().enumerate() {
            k.key_id = i;
        }
        let n_black = keys
            .iter()
            .filter(|k| k.color() == KeyColor::Black)
            .count();
        if n_black == 0 {
            return Err(Error::Format("layout without black keys".into()));
        }
        for k in &keys {
            if k.rects().iter().any(|r| !bounds.contains_rect(r)) {
                return Err(Error::Format(format!(
                    "key {} lies outside the keyboard bounds",
                    k.key_id
                )));
            }
        }
        let black_row_split = keys
            .iter()
            .find_map(|k| match k.shape {
                KeyShape::White { lower, .. } => Some(lower.y0),
                KeyShape::Black { .. } => None,
            })
            .unwrap_or(bounds.y1);
        Ok(Self {
            frame_width,
            frame_height,
            bounds,
            keys,
            black_row_split,
        })
    }

    pub fn n_white(&self) -> usize {
        self.keys.len() - self.n_black()
    }

    pub fn n_black(&self) -> usize {
        self.keys
            .iter()
            .filter(|k| k.color() == KeyColor::Black)
            .count()
    }

    pub fn key_for_note(&self, midi: u8) -> Option<&KeyRegion> {
        self.keys.iter().find(|k| k.midi_note == midi)
    }

    pub fn to_text(&self) -> String {
        let b = self.bounds;
        let mut out = format!(
            "KEYBOARD {} {} {} {} {} {}\n",
            self.frame_width, self.frame_height, b.x0, b.y0, b.x1, b.y1
        );
        for k in &self.keys {
            let _ = write!(out, "KEY {} {} {}", k.key_id, k.color().as_str(), k.midi_note);
            for r in k.rects() {
                let _ = write!(out, " {} {} {} {}", r.x0, r.y0, r.x1, r.y1);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, msg: &str| Error::Format(format!("layout line {}: {msg}", line + 1));
        let nums = |line: usize, fields: &[&str]| -> Result<Vec<usize>> {
            fields
                .iter()
                .map(|f| f.parse::<usize>().map_err(|_| bad(line, "expected an integer")))
                .collect()
        };
        let rect = |line: usize, v: &[usize]| -> Result<Rect> {
            Rect::new(v[0], v[1], v[2], v[3]).map_err(|_| bad(line, "degenerate rect"))
        };

        let (ln, header) = lines.next().ok_or_else(|| bad(0, "empty layout"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 || fields[0] != "KEYBOARD" {
            return Err(bad(ln, "expected KEYBOARD w h x0 y0 x1 y1"));
        }
        let v = nums(ln, &fields[1..])?;
        let bounds = rect(ln, &v[2..6])?;

        let mut keys = Vec::new();
        for (ln, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 8 || fields[0] != "KEY" {
                return Err(bad(ln, "expected KEY id COLOR midi x0 y0 x1 y1 [...]"));
            }
            let key_id = nums(ln, &fields[1..2])?[0];
            let color = KeyColor::parse(fields[2]).ok_or_else(|| bad(ln, "unknown key color"))?;
            let midi_note = fields[3]
                .parse::<u8>()
                .ok()
                .filter(|n| *n < 128)
                .ok_or_else(|| bad(ln, "bad midi note"))?;
            let coords = nums(ln, &fields[4..])?;
            let shape = match (color, coords.len()) {
                (KeyColor::White, 8) => KeyShape::White {
                    upper: rect(ln, &coords[..4])?,
                    lower: rect(ln, &coords[4..])?,
                },
                (KeyColor::Black, 4) => KeyShape::Black {
                    bbox: rect(ln, &coords)?,
                },
                _ => return Err(bad(ln, "wrong number of coordinates for key color")),
            };
            keys.push(KeyRegion {
                key_id,
                midi_note,
                shape,
            });
        }
        let ids: Vec<usize> = keys.iter().map(|k| k.key_id).collect();
        let layout = Self::new(v[0], v[1], bounds, keys)?;
        if layout.keys.iter().map(|k| k.key_id).ne(ids) {
            return Err(Error::Format("key ids must be listed in x order from 0".into()));
        }
        Ok(layout)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// A line in normal form `x·cos θ + y·sin θ = ρ`, pixel centres at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoughLine {
    pub rho: f64,
    pub theta: f64,
    pub votes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoughConfig {
    pub rho_step: f64,
    pub theta_step: f64,
    pub threshold: u32,
    /// Gradient magnitudes above this quantile of the frame become edges.
    pub edge_percentile: f64,
    /// Edges must also exceed this fraction of the strongest gradient.
    pub edge_floor: f64,
    /// Suppression half-width in accumulator cells.
    pub nms_radius: usize,
}

impl Default for HoughConfig {
    fn default() -> Self {
        Self {
            rho_step: 1.0,
            theta_step: PI / 180.0,
            threshold: 20,
            edge_percentile: 0.7,
            edge_floor: 0.25,
            nms_radius: 3,
        }
    }
}

/// Central-difference gradient magnitude binarised at a quantile, and at
/// `floor` times the largest magnitude.
pub fn edge_map(f: &GrayFrame, percentile: f64, floor: f64) -> Vec<bool> {
    let (w, h) = (f.width(), f.height());
    let mut mag = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = (f.get(x + 1, y) - f.get(x - 1, y)) / 2.0;
            let gy = (f.get(x, y + 1) - f.get(x, y - 1)) / 2.0;
            mag[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    let mut sorted = mag.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let q = percentile.clamp(0.0, 1.0);
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    let strongest = sorted.last().copied().unwrap_or(0.0);
    let cut = sorted[idx].max(floor.clamp(0.0, 1.0) * strongest).max(1e-6);
    mag.iter().map(|&m| m > cut).collect()
}

pub fn hough_lines(f: &GrayFrame, rho_step: f64, theta_step: f64, threshold: u32) -> Vec<HoughLine> {
    hough_lines_with(
        f,
        &HoughConfig {
            rho_step,
            theta_step,
            threshold,
            ..HoughConfig::default()
        },
    )
}

/// Line detection: edge extraction, (ρ, θ) voting, greedy non-maximum
/// suppression. Lines come back sorted by votes, strongest first.
pub fn hough_lines_with(f: &GrayFrame, cfg: &HoughConfig) -> Vec<HoughLine> {
    if !(cfg.rho_step > 0.0 && cfg.theta_step > 0.0) || cfg.threshold == 0 {
        return Vec::new();
    }
    let (w, h) = (f.width(), f.height());
    let edges = edge_map(f, cfg.edge_percentile, cfg.edge_floor);
    let n_theta = ((PI / cfg.theta_step).round() as usize).max(1);
    let max_rho = ((w * w + h * h) as f64).sqrt().ceil();
    let n_rho = (2.0 * max_rho / cfg.rho_step).ceil() as usize + 1;
    let trig: Vec<(f64, f64)> = (0..n_theta)
        .map(|t| {
            let th = t as f64 * PI / n_theta as f64;
            (th.cos(), th.sin())
        })
        .collect();
    let mut acc = vec![0u32; n_theta * n_rho];
    for y in 0..h {
        for x in 0..w {
            if !edges[y * w + x] {
                continue;
            }
            for (t, &(c, s)) in trig.iter().enumerate() {
                let rho = x as f64 * c + y as f64 * s;
                let bin = ((rho + max_rho) / cfg.rho_step).round() as usize;
                acc[t * n_rho + bin] += 1;
            }
        }
    }

    let mut cells: Vec<(usize, usize, u32)> = acc
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= cfg.threshold)
        .map(|(i, &v)| (i / n_rho, i % n_rho, v))
        .collect();
    cells.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let r = cfg.nms_radius as i64;
    let rho_of = |bin: usize| bin as f64 * cfg.rho_step - max_rho;
    // θ wraps at π with ρ mirrored, so compare in a doubled, signed space
    let near = |a: (usize, usize), b: (usize, usize)| -> bool {
        let dt = a.0 as i64 - b.0 as i64;
        if dt.abs() <= r && (a.1 as i64 - b.1 as i64).abs() <= r {
            return true;
        }
        let wrapped = n_theta as i64 - dt.abs();
        if wrapped <= r {
            let mirrored = -rho_of(b.1);
            return ((rho_of(a.1) - mirrored) / cfg.rho_step).abs() <= r as f64;
        }
        false
    };
    let mut kept: Vec<(usize, usize, u32)> = Vec::new();
    for cell in cells {
        if kept.iter().all(|k| !near((k.0, k.1), (cell.0, cell.1))) {
            kept.push(cell);
        }
    }
    kept.into_iter()
        .map(|(t, b, v)| HoughLine {
            rho: rho_of(b),
            theta: t as f64 * PI / n_theta as f64,
            votes: v,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectSearchConfig {
    /// Lines within this angle of an axis count as horizontal/vertical.
    pub axis_tolerance: f64,
    pub dark_cutoff: f64,
    pub bright_cutoff: f64,
    pub min_area_frac: f64,
    /// Candidates scoring within this margin of the best are treated as
    /// ties and resolved toward the larger area.
    pub tie_tolerance: f64,
    /// Number of coarse-ranked candidates rescored exactly.
    pub rescore: usize,
    /// Strongest near-horizontal lines considered.
    pub max_horizontal: usize,
    /// Strongest near-vertical lines considered; a full keyboard has over a hundred.
    pub max_vertical: usize,
    /// Growth ignores lines closer than this to the current edge.
    pub min_step: usize,
}

impl Default for RectSearchConfig {
    fn default() -> Self {
        Self {
            axis_tolerance: 10f64.to_radians(),
            dark_cutoff: 0.3,
            bright_cutoff: 0.6,
            min_area_frac: 0.05,
            tie_tolerance: 0.02,
            rescore: 96,
            max_horizontal: 24,
            max_vertical: 192,
            min_step: 3,
        }
    }
}

fn line_x_at(l: &HoughLine, y: f64) -> f64 {
    (l.rho - y * l.theta.sin()) / l.theta.cos()
}

fn line_y_at(l: &HoughLine, x: f64) -> f64 {
    (l.rho - x * l.theta.cos()) / l.theta.sin()
}

fn dedup_positions(mut v: Vec<(f64, HoughLine)>) -> Vec<(f64, HoughLine)> {
    v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let mut out: Vec<(f64, HoughLine)> = Vec::new();
    for item in v {
        match out.last() {
            Some(last) if (item.0 - last.0).abs() < 0.5 => {}
            _ => out.push(item),
        }
    }
    out
}

/// Fraction of dark pixels in the upper half plus fraction of bright pixels
/// in the lower half, after min-max normalisation inside `rect`.
pub fn keyboard_score(f: &GrayFrame, rect: Rect, dark_cutoff: f64, bright_cutoff: f64) -> f64 {
    let (lo, hi) = {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                let v = f.get(x, y);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    };
    score_with_range(f, rect, lo, hi, dark_cutoff, bright_cutoff)
}

fn score_with_range(
    f: &GrayFrame,
    rect: Rect,
    lo: f64,
    hi: f64,
    dark_cutoff: f64,
    bright_cutoff: f64,
) -> f64 {
    let span = (hi - lo).max(1e-9);
    let mid = rect.y0 + rect.height() / 2;
    let (mut dark, mut bright) = (0usize, 0usize);
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let v = (f.get(x, y) - lo) / span;
            if y < mid {
                dark += (v < dark_cutoff) as usize;
            } else {
                bright += (v > bright_cutoff) as usize;
            }
        }
    }
    let upper = (rect.width() * (mid - rect.y0)).max(1);
    let lower = (rect.width() * (rect.y1 - mid)).max(1);
    dark as f64 / upper as f64 + bright as f64 / lower as f64
}

/// Picks the line-bounded rectangle that looks most like a keyboard.
pub fn find_keyboard_rect(f: &GrayFrame, lines: &[HoughLine]) -> Result<Rect> {
    find_keyboard_rect_with(f, lines, &RectSearchConfig::default())
}

pub fn find_keyboard_rect_with(
    f: &GrayFrame,
    lines: &[HoughLine],
    cfg: &RectSearchConfig,
) -> Result<Rect> {
    let (w, h) = (f.width(), f.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut strongest = lines.to_vec();
    strongest.sort_by(|a, b| b.votes.cmp(&a.votes));
    let horizontal = dedup_positions(
        strongest
            .iter()
            .filter(|l| (l.theta - PI / 2.0).abs() <= cfg.axis_tolerance)
            .take(cfg.max_horizontal)
            .map(|l| (line_y_at(l, cx), *l))
            .collect(),
    );
    let vertical = dedup_positions(
        strongest
            .iter()
            .filter(|l| l.theta <= cfg.axis_tolerance || l.theta >= PI - cfg.axis_tolerance)
            .take(cfg.max_vertical)
            .map(|l| (line_x_at(l, cy), *l))
            .collect(),
    );
    if horizontal.len() < 2 || vertical.len() < 2 {
        return Err(Error::KeyboardNotFound);
    }

    let clamp_coord = |v: f64, len: usize| -> usize { v.round().clamp(0.0, len as f64) as usize };
    let span_rect = |top: &HoughLine, bottom: &HoughLine, left: &HoughLine, right: &HoughLine| {
        // corners from line intersections, averaged per side
        let y_top = line_y_at(top, (line_x_at(left, cy) + line_x_at(right, cy)) / 2.0);
        let y_bot = line_y_at(bottom, (line_x_at(left, cy) + line_x_at(right, cy)) / 2.0);
        let x_left = line_x_at(left, (y_top + y_bot) / 2.0);
        let x_right = line_x_at(right, (y_top + y_bot) / 2.0);
        let (x0, x1) = (clamp_coord(x_left, w), clamp_coord(x_right, w));
        let (y0, y1) = (clamp_coord(y_top, h), clamp_coord(y_bot, h));
        Rect::new(x0, y0, x1, y1).ok()
    };

    let min_area = (cfg.min_area_frac * (w * h) as f64).max(16.0);
    let mut candidates: Vec<Rect> = Vec::new();
    for (i, (_, top)) in horizontal.iter().enumerate() {
        for (_, bottom) in &horizontal[i + 1..] {
            for (j, (_, left)) in vertical.iter().enumerate() {
                for (_, right) in &vertical[j + 1..] {
                    if let Some(r) = span_rect(top, bottom, left, right) {
                        if r.area() as f64 >= min_area && r.height() >= 4 && r.width() >= 4 {
                            candidates.push(r);
                        }
                    }
                }
            }
        }
    }
    candidates.sort_by_key(|r| (r.y0, r.y1, r.x0, r.x1));
    candidates.dedup();
    if candidates.is_empty() {
        return Err(Error::KeyboardNotFound);
    }

    // Coarse ranking with frame-wide normalisation and summed-area tables,
    // then exact in-candidate scoring for the front runners.
    let (lo, hi) = f.min_max();
    let span = (hi - lo).max(1e-9);
    let dark = Integral::new(w, h, |x, y| {
        ((f.get(x, y) - lo) / span < cfg.dark_cutoff) as u8 as f64
    });
    let bright = Integral::new(w, h, |x, y| {
        ((f.get(x, y) - lo) / span > cfg.bright_cutoff) as u8 as f64
    });
    let coarse = |r: &Rect| -> f64 {
        let mid = r.y0 + r.height() / 2;
        let up = dark.sum(r.x0, r.y0, r.x1, mid) / (r.width() * (mid - r.y0)).max(1) as f64;
        let down = bright.sum(r.x0, mid, r.x1, r.y1) / (r.width() * (r.y1 - mid)).max(1) as f64;
        up + down
    };
    let mut ranked: Vec<(f64, Rect)> = candidates.iter().map(|r| (coarse(r), *r)).collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    ranked.truncate(cfg.rescore.max(1));
    let mut exact: Vec<(f64, Rect)> = ranked
        .into_iter()
        .map(|(_, r)| (keyboard_score(f, r, cfg.dark_cutoff, cfg.bright_cutoff), r))
        .collect();
    let best = exact
        .iter()
        .map(|c| c.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if best <= 0.0 {
        return Err(Error::KeyboardNotFound);
    }
    exact.retain(|c| c.0 >= best - cfg.tie_tolerance);
    exact.sort_by(|a, b| {
        b.1.area()
            .cmp(&a.1.area())
            .then(b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal))
    });
    let chosen = exact[0].1;

    let xs: Vec<usize> = vertical
        .iter()
        .map(|(x, _)| clamp_coord(*x, w))
        .collect();
    let ys: Vec<usize> = horizontal
        .iter()
        .map(|(y, _)| clamp_coord(*y, h))
        .collect();
    Ok(grow_to_keyboard_edges(f, chosen, &xs, &ys, cfg))
}

/// Sub-rectangles bounded by inner key edges score as well as the whole
/// keyboard, so the winner is pushed outward line by line while the strip
/// it would absorb still looks like keys: white key bottoms on the sides,
/// black-key tops above, white key bottoms below.
fn grow_to_keyboard_edges(
    f: &GrayFrame,
    mut rect: Rect,
    xs: &[usize],
    ys: &[usize],
    cfg: &RectSearchConfig,
) -> Rect {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            lo = lo.min(f.get(x, y));
            hi = hi.max(f.get(x, y));
        }
    }
    let span = (hi - lo).max(1e-9);
    let frac = |r: Rect, bright: bool| -> f64 {
        let mut n = 0usize;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let v = (f.get(x, y) - lo) / span;
                n += if bright { v > cfg.bright_cutoff } else { v < cfg.dark_cutoff } as usize;
            }
        }
        n as f64 / r.area().max(1) as f64
    };
    let lower_half = |r: Rect| -> Rect {
        Rect {
            y0: r.y0 + r.height() / 2,
            ..r
        }
    };
    const KEYLIKE: f64 = 0.5;
    let step = cfg.min_step.max(1);

    loop {
        let mut grew = false;
        if let Some(&x) = xs.iter().filter(|&&x| x + step <= rect.x0).max() {
            let strip = Rect { x0: x, x1: rect.x0, ..rect };
            if frac(lower_half(strip), true) >= KEYLIKE {
                rect.x0 = x;
                grew = true;
            }
        }
        if let Some(&x) = xs.iter().filter(|&&x| x >= rect.x1 + step).min() {
            let strip = Rect { x0: rect.x1, x1: x, ..rect };
            if frac(lower_half(strip), true) >= KEYLIKE {
                rect.x1 = x;
                grew = true;
            }
        }
        if let Some(&y) = ys.iter().filter(|&&y| y + step <= rect.y0).max() {
            let strip = Rect { y0: y, y1: rect.y0, ..rect };
            if frac(strip, false) >= KEYLIKE * 0.6 {
                rect.y0 = y;
                grew = true;
            }
        }
        if let Some(&y) = ys.iter().filter(|&&y| y >= rect.y1 + step).min() {
            let strip = Rect { y0: rect.y1, y1: y, ..rect };
            if frac(strip, true) >= KEYLIKE {
                rect.y1 = y;
                grew = true;
            }
        }
        if !grew {
            return rect;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentConfig {
    /// Adaptive-threshold window; `None` derives it from the white-key pitch.
    pub window: Option<usize>,
    pub offset: f64,
    /// Pixels trimmed from the sides and top of the bounds before thresholding.
    pub inset: usize,
    /// Fraction of the keyboard height searched for black keys.
    pub upper_band: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            window: None,
            offset: 0.05,
            inset: 2,
            upper_band: 0.75,
        }
    }
}

struct Component {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    area: usize,
}

/// 4-connected components of `mask` (`w × h`), bounding boxes half-open.
fn components(mask: &[bool], w: usize, h: usize) -> Vec<Component> {
    let mut label = vec![usize::MAX; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut c = Component {
            x0: usize::MAX,
            x1: 0,
            y0: usize::MAX,
            y1: 0,
            area: 0,
        };
        label[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            c.x0 = c.x0.min(x);
            c.x1 = c.x1.max(x + 1);
            c.y0 = c.y0.min(y);
            c.y1 = c.y1.max(y + 1);
            c.area += 1;
            let mut visit = |q: usize| {
                if mask[q] && label[q] == usize::MAX {
                    label[q] = id;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        out.push(c);
    }
    out
}

/// Horizontal opening with a 3-wide segment: strips 1–2 px vertical lines.
fn open_horizontal(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut eroded = vec![false; w * h];
    for y in 0..h {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            eroded[i] = mask[i - 1] && mask[i] && mask[i + 1];
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out[i] = eroded[i] || (x > 0 && eroded[i - 1]) || (x + 1 < w && eroded[i + 1]);
        }
    }
    out
}

pub fn segment_keys(f: &GrayFrame, bounds: Rect, spec: &LayoutSpec) -> Result<KeyboardLayout> {
    segment_keys_with(f, bounds, spec, &SegmentConfig::default())
}

pub fn segment_keys_with(
    f: &GrayFrame,
    bounds: Rect,
    spec: &LayoutSpec,
    cfg: &SegmentConfig,
) -> Result<KeyboardLayout> {
    bounds.check_within(f.width(), f.height())?;
    let n_white = spec.n_white();
    let expected_black = spec.n_black();
    let white_pitch = bounds.width() as f64 / n_white as f64;

    let band_bottom = bounds.y0 + ((bounds.height() as f64 * cfg.upper_band).round() as usize);
    let inset = cfg.inset.min(bounds.width() / 4).min(bounds.height() / 4);
    let search = Rect::new(
        bounds.x0 + inset,
        bounds.y0 + inset,
        bounds.x1 - inset,
        band_bottom.max(bounds.y0 + inset + 1).min(bounds.y1),
    )?;
    let window = cfg.window.unwrap_or_else(|| {
        let w = (2.0 * white_pitch).round() as usize + 1;
        (w | 1).max(3)
    });
    let crop = f.crop(search)?;
    let binary = adaptive_threshold(&crop, window, cfg.offset)?;
    let (sw, sh) = (crop.width(), crop.height());
    let dark: Vec<bool> = binary.data().iter().map(|&v| v == 0.0).collect();
    let dark = open_horizontal(&dark, sw, sh);

    let mut blacks: Vec<Component> = components(&dark, sw, sh)
        .into_iter()
        .filter(|c| {
            c.y0 <= 2 && (c.y1 - c.y0) as f64 >= 0.4 * sh as f64 && c.x1 - c.x0 >= 2
        })
        .collect();
    if !blacks.is_empty() {
        let mut areas: Vec<usize> = blacks.iter().map(|c| c.area).collect();
        areas.sort_unstable();
        let median = areas[areas.len() / 2];
        blacks.retain(|c| c.area * 4 >= median);
    }
    if blacks.len() != expected_black {
        return Err(Error::SegmentationMismatch {
            found: blacks.len(),
            expected: expected_black,
        });
    }
    blacks.sort_by_key(|c| c.x0);

    let black_row_split = blacks
        .iter()
        .map(|c| search.y0 + c.y1)
        .max()
        .unwrap_or(bounds.y1 - 1)
        .min(bounds.y1 - 1);
    let black_boxes: Vec<Rect> = blacks
        .iter()
        .map(|c| Rect {
            x0: search.x0 + c.x0,
            x1: search.x0 + c.x1,
            y0: bounds.y0,
            y1: (search.y0 + c.y1).min(black_row_split),
        })
        .collect();

    let lower_edges: Vec<usize> = (0..=n_white)
        .map(|i| bounds.x0 + (i as f64 * white_pitch).round() as usize)
        .collect();

    let notes: Vec<u8> = spec.notes().collect();
    let mut keys = Vec::with_capacity(notes.len());
    let (mut wi, mut bi) = (0usize, 0usize);
    for (i, &note) in notes.iter().enumerate() {
        if is_black_note(note) {
            keys.push(KeyRegion {
                key_id: 0,
                midi_note: note,
                shape: KeyShape::Black {
                    bbox: black_boxes[bi],
                },
            });
            bi += 1;
            continue;
        }
        let lower = Rect {
            x0: lower_edges[wi],
            x1: lower_edges[wi + 1],
            y0: black_row_split,
            y1: bounds.y1,
        };
        let prev_black = i > 0 && is_black_note(notes[i - 1]);
        let next_black = i + 1 < notes.len() && is_black_note(notes[i + 1]);
        let mut ux0 = if prev_black { black_boxes[bi - 1].x1 } else { lower.x0 };
        let mut ux1 = if next_black { black_boxes[bi].x0 } else { lower.x1 };
        if ux0 >= ux1 {
            ux0 = lower.x0;
            ux1 = lower.x1;
        }
        let upper = Rect {
            x0: ux0,
            x1: ux1,
            y0: bounds.y0,
            y1: black_row_split,
        };
        keys.push(KeyRegion {
            key_id: 0,
            midi_note: note,
            shape: KeyShape::White { upper, lower },
        });
        wi += 1;
    }
    KeyboardLayout::new(f.width(), f.height(), bounds, keys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_spec_counts() {
        let two = LayoutSpec::octaves(48, 2).unwrap();
        assert_eq!((two.n_white(), two.n_black()), (14, 10));
        let full = LayoutSpec::standard_88();
        assert_eq!((full.n_white(), full.n_black()), (52, 36));
        assert!(LayoutSpec::new(60, 1).is_err());
        assert!(LayoutSpec::new(120, 12).is_err());
    }

    #[test]
    fn horizontal_row_detected() {
        let f = GrayFrame::from_fn(40, 32, |_, y| if y == 10 { 1.0 } else { 0.0 }).unwrap();
        let lines = hough_lines(&f, 1.0, PI / 180.0, 10);
        let top = lines[0];
        assert!((top.theta - PI / 2.0).abs() <= PI / 180.0 + 1e-9);
        assert!((top.rho - 10.0).abs() <= 1.0 + 1e-9, "rho {}", top.rho);
    }

    #[test]
    fn vertical_column_detected() {
        let f = GrayFrame::from_fn(32, 40, |x, _| if x == 5 { 1.0 } else { 0.0 }).unwrap();
        let lines = hough_lines(&f, 1.0, PI / 180.0, 10);
        let top = lines[0];
        assert!(top.theta <= PI / 180.0 + 1e-9 || top.theta >= PI - PI / 180.0 - 1e-9);
        assert!((top.rho.abs() - 5.0).abs() <= 1.0 + 1e-9, "rho {}", top.rho);
    }

    #[test]
    fn flat_frame_has_no_lines() {
        let f = GrayFrame::filled(20, 20, 0.4).unwrap();
        assert!(hough_lines(&f, 1.0, PI / 180.0, 1).is_empty());
        let f = GrayFrame::filled(1, 1, 0.4).unwrap();
        assert!(hough_lines(&f, 1.0, PI / 180.0, 1).is_empty());
    }

    #[test]
    fn rotated_line_shifts_theta_by_quarter_turn() {
        let n = 48usize;
        // a line through the centre tilted ~20 degrees off horizontal
        let slope = 20f64.to_radians().tan();
        let f = GrayFrame::from_fn(n, n, |x, y| {
            let yl = 24.0 + slope * (x as f64 - 24.0);
            if (y as f64 - yl).abs() < 0.5 {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        // rotate the raster by 90 degrees: (x, y) -> (n-1-y, x)
        let rot = GrayFrame::from_fn(n, n, |x, y| f.get(y, n - 1 - x)).unwrap();
        let step = PI / 180.0;
        let a = hough_lines(&f, 1.0, step, 10)[0];
        let b = hough_lines(&rot, 1.0, step, 10)[0];
        let mut d = (b.theta - a.theta).rem_euclid(PI);
        if d > PI / 2.0 {
            d = PI - d;
        }
        assert!((d - PI / 2.0).abs() <= step + 1e-9, "{} vs {}", a.theta, b.theta);
    }

    fn axis_line(horizontal: bool, pos: f64) -> HoughLine {
        HoughLine {
            rho: pos,
            theta: if horizontal { PI / 2.0 } else { 0.0 },
            votes: 100,
        }
    }

    #[test]
    fn split_frame_selects_full_rect() {
        let f = GrayFrame::from_fn(40, 20, |_, y| if y < 10 { 0.0 } else { 1.0 }).unwrap();
        let lines = [
            axis_line(true, 0.0),
            axis_line(true, 20.0),
            axis_line(false, 0.0),
            axis_line(false, 40.0),
        ];
        let r = find_keyboard_rect(&f, &lines).unwrap();
        assert_eq!(r, f.bounds());
    }

    #[test]
    fn too_few_lines_is_not_found() {
        let f = GrayFrame::filled(40, 20, 0.5).unwrap();
        let lines = [axis_line(true, 0.0), axis_line(false, 0.0), axis_line(false, 30.0)];
        assert!(matches!(
            find_keyboard_rect(&f, &lines),
            Err(Error::KeyboardNotFound)
        ));
    }

    #[test]
    fn layout_text_rejects_garbage() {
        assert!(KeyboardLayout::from_text("").is_err());
        assert!(KeyboardLayout::from_text("KEYBOARD 10 10 0 0 5").is_err());
        let bad_color = "KEYBOARD 20 20 0 0 20 20\nKEY 0 green 60 0 0 5 5\n";
        assert!(KeyboardLayout::from_text(bad_color).is_err());
        let outside = "KEYBOARD 20 20 0 0 10 10\nKEY 0 black 61 0 0 15 5\n";
        assert!(KeyboardLayout::from_text(outside).is_err());
    }

    #[test]
    fn layout_text_round_trip() {
        let text = "KEYBOARD 30 20 0 0 30 20\n\
                    KEY 0 white 60 0 0 4 12 0 12 10 20\n\
                    KEY 1 black 61 4 0 8 12\n\
                    KEY 2 white 62 8 0 14 12 10 12 20 20\n";
        let layout = KeyboardLayout::from_text(text).unwrap();
        assert_eq!(layout.to_text(), text);
        assert_eq!((layout.n_white(), layout.n_black()), (2, 1));
        assert_eq!(layout.black_row_split, 12);
    }
}
