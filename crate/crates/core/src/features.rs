//! Per-key feature vectors cut from difference images, and their temporal
//! and optical-flow stacks.
//!
//! A single feature is the key crop resized to 10 px across the key and
//! 60 px (white: 40 upper + 20 lower) or 40 px (black) along it. Payloads
//! are stored across-major: entry `x * length + y`, so the network sees a
//! `10 × length` image whose second axis runs along the key.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::flow::{dense_flow, FlowConfig};
use crate::geometry::{KeyColor, KeyRegion, KeyShape};
use crate::hand::HandColumnMask;
use crate::imaging::{resize_bilinear, GrayFrame, Rect};

pub const FEATURE_ACROSS: usize = 10;
pub const WHITE_UPPER_LEN: usize = 40;
pub const WHITE_LOWER_LEN: usize = 20;
pub const WHITE_LEN: usize = WHITE_UPPER_LEN + WHITE_LOWER_LEN;
pub const BLACK_LEN: usize = 40;
pub const STACK_DEPTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Single,
    Stack5,
    FlowStack5,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::Single => "single",
            FeatureKind::Stack5 => "stack5",
            FeatureKind::FlowStack5 => "flowstack5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" => Some(FeatureKind::Single),
            "stack5" => Some(FeatureKind::Stack5),
            "flowstack5" => Some(FeatureKind::FlowStack5),
            _ => None,
        }
    }
}

/// Length of a single feature image along the key.
pub fn key_length(color: KeyColor) -> usize {
    match color {
        KeyColor::White => WHITE_LEN,
        KeyColor::Black => BLACK_LEN,
    }
}

/// Payload length for each (color, kind): 600/400, 3000/2000, 6000/4000.
pub fn payload_len(color: KeyColor, kind: FeatureKind) -> usize {
    let single = FEATURE_ACROSS * key_length(color);
    match kind {
        FeatureKind::Single => single,
        FeatureKind::Stack5 => STACK_DEPTH * single,
        FeatureKind::FlowStack5 => STACK_DEPTH * 2 * single,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub key_id: usize,
    pub color: KeyColor,
    pub kind: FeatureKind,
    pub frame_index: usize,
    payload: Vec<f32>,
}

impl FeatureVector {
    pub fn new(
        key_id: usize,
        color: KeyColor,
        kind: FeatureKind,
        frame_index: usize,
        payload: Vec<f32>,
    ) -> Result<Self> {
        let expected = payload_len(color, kind);
        if payload.len() != expected {
            return Err(Error::dims(
                format!("{} {} payload of {expected}", color.as_str(), kind.as_str()),
                payload.len(),
            ));
        }
        Ok(Self {
            key_id,
            color,
            kind,
            frame_index,
            payload,
        })
    }

    pub fn payload(&self) -> &[f32] {
        &self.payload
    }

    pub fn into_payload(self) -> Vec<f32> {
        self.payload
    }

    /// The single feature as a key-oriented image: 10 wide, 60 or 40 tall.
    pub fn to_image(&self) -> Result<GrayFrame> {
        if self.kind != FeatureKind::Single {
            return Err(Error::InvalidArgument(
                "only single features have an image form".into(),
            ));
        }
        let len = key_length(self.color);
        GrayFrame::from_fn(FEATURE_ACROSS, len, |x, y| self.payload[x * len + y] as f64)
    }
}

fn push_across_major(img: &GrayFrame, dst: &mut [f32], len: usize, y_offset: usize) {
    for x in 0..img.width() {
        for y in 0..img.height() {
            dst[x * len + y_offset + y] = img.get(x, y) as f32;
        }
    }
}

/// Key crop resized to feature size, regardless of hand coverage.
pub fn key_crop_feature(diff: &GrayFrame, key: &KeyRegion, frame_index: usize) -> Result<FeatureVector> {
    let color = key.color();
    let len = key_length(color);
    let mut payload = vec![0.0f32; FEATURE_ACROSS * len];
    let crop = |r: Rect, tall: usize| -> Result<GrayFrame> {
        resize_bilinear(&diff.crop(r)?, FEATURE_ACROSS, tall)
    };
    match key.shape {
        KeyShape::White { upper, lower } => {
            push_across_major(&crop(upper, WHITE_UPPER_LEN)?, &mut payload, len, 0);
            push_across_major(&crop(lower, WHITE_LOWER_LEN)?, &mut payload, len, WHITE_UPPER_LEN);
        }
        KeyShape::Black { bbox } => {
            push_across_major(&crop(bbox, BLACK_LEN)?, &mut payload, len, 0);
        }
    }
    FeatureVector::new(key.key_id, color, FeatureKind::Single, frame_index, payload)
}

/// The key's feature when a hand overlaps its columns, `None` otherwise.
pub fn extract_key_feature(
    diff: &GrayFrame,
    key: &KeyRegion,
    mask: &HandColumnMask,
) -> Result<Option<FeatureVector>> {
    let (x0, x1) = key.x_extent();
    if !mask.any_in(x0, x1) {
        return Ok(None);
    }
    key_crop_feature(diff, key, mask.frame_index()).map(Some)
}

/// Frame offsets before the current frame, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackSchedule {
    offsets_frames: Vec<usize>,
}

impl StackSchedule {
    /// Frames per 2/15 s step at `fps`, rounded, at least 1.
    pub fn step_frames(fps: f64) -> usize {
        ((2.0 / 15.0) * fps).round().max(1.0) as usize
    }

    /// Five frames: the current one and four steps back.
    pub fn stack5(fps: f64) -> Self {
        Self::with_frames(Self::step_frames(fps), STACK_DEPTH)
    }

    /// Six frames feeding five flow maps.
    pub fn flow6(fps: f64) -> Self {
        Self::with_frames(Self::step_frames(fps), STACK_DEPTH + 1)
    }

    pub fn for_kind(kind: FeatureKind, fps: f64) -> Self {
        match kind {
            FeatureKind::Single => Self::with_frames(1, 1),
            FeatureKind::Stack5 => Self::stack5(fps),
            FeatureKind::FlowStack5 => Self::flow6(fps),
        }
    }

    fn with_frames(step: usize, count: usize) -> Self {
        Self {
            offsets_frames: (0..count).rev().map(|i| i * step).collect(),
        }
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets_frames
    }

    /// How far back the oldest frame lies.
    pub fn span(&self) -> usize {
        self.offsets_frames.first().copied().unwrap_or(0)
    }

    /// Absolute frame indices ending at `current`, oldest first.
    pub fn frames_for(&self, current: usize) -> Option<Vec<usize>> {
        self.offsets_frames
            .iter()
            .map(|&o| current.checked_sub(o))
            .collect()
    }
}

/// Single features per key, indexed by frame, for assembling stacks.
#[derive(Debug, Default, Clone)]
pub struct KeyHistory {
    entries: HashMap<(usize, usize), FeatureVector>,
}

impl KeyHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, feature: FeatureVector) {
        self.entries
            .insert((feature.key_id, feature.frame_index), feature);
    }

    pub fn get(&self, key_id: usize, frame: usize) -> Option<&FeatureVector> {
        self.entries.get(&(key_id, frame))
    }

    /// Drops everything older than `frame`.
    pub fn forget_before(&mut self, frame: usize) {
        self.entries.retain(|&(_, f), _| f >= frame);
    }

    /// The scheduled singles for `key_id` ending at `current`, oldest first.
    pub fn gather(
        &self,
        key_id: usize,
        current: usize,
        schedule: &StackSchedule,
    ) -> Result<Vec<&FeatureVector>> {
        let frames = schedule.frames_for(current).ok_or_else(|| {
            Error::IncompleteHistory(format!(
                "frame {current} is earlier than the {}-frame stack window",
                schedule.span()
            ))
        })?;
        frames
            .into_iter()
            .map(|f| {
                self.get(key_id, f).ok_or_else(|| {
                    Error::IncompleteHistory(format!("key {key_id} has no feature at frame {f}"))
                })
            })
            .collect()
    }
}

fn check_history(frames: &[&FeatureVector], count: usize) -> Result<(usize, KeyColor)> {
    if frames.len() != count {
        return Err(Error::IncompleteHistory(format!(
            "expected {count} scheduled frames, got {}",
            frames.len()
        )));
    }
    let first = frames[0];
    for f in frames {
        if f.kind != FeatureKind::Single {
            return Err(Error::InvalidArgument("stacks are built from single features".into()));
        }
        if f.key_id != first.key_id || f.color != first.color {
            return Err(Error::InvalidArgument(
                "stack frames must all belong to the same key".into(),
            ));
        }
    }
    Ok((first.key_id, first.color))
}

/// Concatenates five single features, oldest to newest.
pub fn build_stack5(frames: &[&FeatureVector]) -> Result<FeatureVector> {
    let (key_id, color) = check_history(frames, STACK_DEPTH)?;
    let payload = frames.iter().flat_map(|f| f.payload().iter().copied()).collect();
    let newest = frames[STACK_DEPTH - 1].frame_index;
    FeatureVector::new(key_id, color, FeatureKind::Stack5, newest, payload)
}

/// Five flow maps between six consecutive scheduled singles. Each map holds,
/// per across-key row, the x-flow along the key followed by the y-flow;
/// values are clamped to `±clamp` pixels and divided by `clamp`.
pub fn build_flowstack5(
    frames: &[&FeatureVector],
    flow: &FlowConfig,
    clamp: f64,
) -> Result<FeatureVector> {
    let (key_id, color) = check_history(frames, STACK_DEPTH + 1)?;
    if !(clamp > 0.0) {
        return Err(Error::InvalidArgument("flow clamp must be positive".into()));
    }
    let len = key_length(color);
    let images: Vec<GrayFrame> = frames.iter().map(|f| f.to_image()).collect::<Result<_>>()?;
    let per_step = FEATURE_ACROSS * 2 * len;
    let mut payload = vec![0.0f32; STACK_DEPTH * per_step];
    let scale = |v: f64| (v.clamp(-clamp, clamp) / clamp) as f32;
    for (step, pair) in images.windows(2).enumerate() {
        let field = dense_flow(&pair[0], &pair[1], flow)?;
        let base = step * per_step;
        for x in 0..FEATURE_ACROSS {
            for y in 0..len {
                let (u, v) = field.at(x, y);
                payload[base + x * 2 * len + y] = scale(u);
                payload[base + x * 2 * len + len + y] = scale(v);
            }
        }
    }
    let newest = frames[STACK_DEPTH].frame_index;
    FeatureVector::new(key_id, color, FeatureKind::FlowStack5, newest, payload)
}
