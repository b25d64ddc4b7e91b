//! Ground truth and labelled samples: note events, velocity binning,
//! video/event alignment, synthetic performances, MIDI and dataset files.

pub mod container;
pub mod midi;
pub mod synth;

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::features::{
    build_flowstack5, build_stack5, key_crop_feature, FeatureKind, FeatureVector, StackSchedule,
};
use crate::flow::FlowConfig;
use crate::geometry::{KeyColor, KeyboardLayout};
use crate::hand::{detect_hand_columns, HandConfig};
use crate::imaging::{difference, FrameSource, GrayFrame};
use crate::models::Task;

pub use container::{Dataset, DatasetStats};

/// One played note; `off_frame` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NoteEvent {
    pub midi_note: u8,
    pub on_frame: usize,
    pub off_frame: usize,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn new(midi_note: u8, on_frame: usize, off_frame: usize, velocity: u8) -> Result<Self> {
        if midi_note > 127 {
            return Err(Error::InvalidArgument(format!("note {midi_note} is not a MIDI note")));
        }
        if on_frame >= off_frame {
            return Err(Error::InvalidArgument(format!(
                "note {midi_note}: on frame {on_frame} is not before off frame {off_frame}"
            )));
        }
        if !(1..=127).contains(&velocity) {
            return Err(Error::InvalidArgument(format!("velocity {velocity} outside 1..=127")));
        }
        Ok(Self {
            midi_note,
            on_frame,
            off_frame,
            velocity,
        })
    }

    pub fn sounds_at(&self, frame: usize) -> bool {
        self.on_frame <= frame && frame < self.off_frame
    }

    pub fn duration(&self) -> usize {
        self.off_frame - self.on_frame
    }
}

/// Errors on two events of one note that share a frame.
pub fn check_no_overlap(events: &[NoteEvent]) -> Result<()> {
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|e| (e.midi_note, e.on_frame));
    for w in sorted.windows(2) {
        if w[0].midi_note == w[1].midi_note && w[1].on_frame < w[0].off_frame {
            return Err(Error::OverlappingEvents {
                note: w[1].midi_note,
                frame: w[1].on_frame,
            });
        }
    }
    Ok(())
}

/// Lower edges of intensity levels 1..=4; level 0 starts at velocity 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VelocityBins {
    pub edges: [u8; 4],
}

impl Default for VelocityBins {
    fn default() -> Self {
        Self::equal_width()
    }
}

impl VelocityBins {
    pub fn equal_width() -> Self {
        Self {
            edges: [26, 51, 76, 102],
        }
    }

    /// Edges at the 20/40/60/80 % quantiles of `velocities`, kept strictly
    /// increasing.
    pub fn quantile(velocities: &[u8]) -> Result<Self> {
        if velocities.is_empty() {
            return Err(Error::InvalidArgument("no velocities to bin".into()));
        }
        let mut v = velocities.to_vec();
        v.sort_unstable();
        let mut edges = [0u8; 4];
        let mut prev = 1u8;
        for (i, e) in edges.iter_mut().enumerate() {
            let q = v[((i + 1) * v.len() / 5).min(v.len() - 1)];
            *e = q.max(prev + 1).min(124 + i as u8);
            prev = *e;
        }
        Self::new(edges)
    }

    pub fn new(edges: [u8; 4]) -> Result<Self> {
        if edges[0] < 2 || edges[3] > 127 || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "velocity edges {edges:?} must increase strictly within 2..=127"
            )));
        }
        Ok(Self { edges })
    }

    pub fn level(&self, velocity: u8) -> Result<usize> {
        if !(1..=127).contains(&velocity) {
            return Err(Error::InvalidArgument(format!("velocity {velocity} outside 1..=127")));
        }
        Ok(self.edges.iter().filter(|&&e| velocity >= e).count())
    }

    /// Inclusive velocity range of `level`.
    pub fn range(&self, level: usize) -> (u8, u8) {
        let lo = if level == 0 { 1 } else { self.edges[level - 1] };
        let hi = if level >= 4 { 127 } else { self.edges[level] - 1 };
        (lo, hi)
    }

    /// Midpoint of the level's velocity range.
    pub fn representative(&self, level: usize) -> u8 {
        let (lo, hi) = self.range(level.min(4));
        ((lo as u16 + hi as u16 + 1) / 2) as u8
    }
}

pub fn velocity_to_intensity(velocity: u8) -> Result<usize> {
    VelocityBins::equal_width().level(velocity)
}

/// A labelled feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub feature: FeatureVector,
    pub label: usize,
    pub task: Task,
}

impl SampleRecord {
    pub fn key_id(&self) -> usize {
        self.feature.key_id
    }

    pub fn frame_index(&self) -> usize {
        self.feature.frame_index
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub task: Task,
    pub fps: f64,
    pub hand: HandConfig,
    pub flow: FlowConfig,
    /// Flow magnitude, in pixels, mapped to ±1.
    pub flow_clamp: f64,
    pub bins: VelocityBins,
    /// Restrict output to one key color.
    pub color: Option<KeyColor>,
}

impl AlignConfig {
    pub fn new(task: Task, fps: f64) -> Self {
        Self {
            task,
            fps,
            hand: HandConfig::default(),
            flow: FlowConfig::default(),
            flow_clamp: 2.0,
            bins: VelocityBins::default(),
            color: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlignSummary {
    pub frames: usize,
    pub emitted: usize,
    /// Intensity candidates dropped because their stack reached before frame 0.
    pub skipped_incomplete: usize,
}

fn events_by_note(events: &[NoteEvent], layout: &KeyboardLayout) -> Result<HashMap<usize, Vec<NoteEvent>>> {
    let mut by_key: HashMap<usize, Vec<NoteEvent>> = HashMap::new();
    for e in events {
        let key = layout
            .key_for_note(e.midi_note)
            .ok_or(Error::UnknownNote(e.midi_note))?;
        by_key.entry(key.key_id).or_default().push(*e);
    }
    Ok(by_key)
}

fn active(by_key: &HashMap<usize, Vec<NoteEvent>>, key_id: usize, frame: usize) -> Option<&NoteEvent> {
    by_key.get(&key_id)?.iter().find(|e| e.sounds_at(frame))
}

/// Walks the video once, labelling every hand-overlapped key per frame.
/// On/off samples get 1 iff an event of that key sounds at the frame;
/// intensity samples are cut only while an event sounds and carry its
/// binned velocity. Samples are passed to `sink` in frame order.
pub fn align_with(
    source: &dyn FrameSource,
    events: &[NoteEvent],
    layout: &KeyboardLayout,
    cfg: &AlignConfig,
    mut sink: impl FnMut(SampleRecord) -> Result<()>,
) -> Result<AlignSummary> {
    if !(cfg.fps > 0.0) {
        return Err(Error::InvalidArgument("fps must be positive".into()));
    }
    let n = source.frame_count();
    if let Some(e) = events.iter().find(|e| e.on_frame >= n) {
        return Err(Error::InvalidArgument(format!(
            "event on note {} starts at frame {} of a {n}-frame video",
            e.midi_note, e.on_frame
        )));
    }
    let by_key = events_by_note(events, layout)?;
    let background = source.background_frame()?;
    let kind = cfg.task.feature_kind();
    let schedule = StackSchedule::for_kind(kind, cfg.fps);
    let mut diffs: VecDeque<GrayFrame> = VecDeque::with_capacity(schedule.span() + 1);
    let mut summary = AlignSummary::default();

    for f in 0..n {
        let frame = source.frame(f)?;
        let mask = detect_hand_columns(&frame, &background, layout.bounds, &cfg.hand, f)?;
        if diffs.len() == schedule.span() + 1 {
            diffs.pop_front();
        }
        diffs.push_back(difference(&frame, &background)?);
        summary.frames += 1;
        let diff_at = |frame_index: usize| &diffs[diffs.len() - 1 - (f - frame_index)];

        for key in &layout.keys {
            if cfg.color.is_some_and(|c| c != key.color()) {
                continue;
            }
            let (x0, x1) = key.x_extent();
            if !mask.any_in(x0, x1) {
                continue;
            }
            let sounding = active(&by_key, key.key_id, f);
            let record = match kind {
                FeatureKind::Single => SampleRecord {
                    feature: key_crop_feature(diff_at(f), key, f)?,
                    label: usize::from(sounding.is_some()),
                    task: cfg.task,
                },
                _ => {
                    let Some(event) = sounding else { continue };
                    let Some(frames) = schedule.frames_for(f) else {
                        summary.skipped_incomplete += 1;
                        continue;
                    };
                    let singles = frames
                        .iter()
                        .map(|&i| key_crop_feature(diff_at(i), key, i))
                        .collect::<Result<Vec<_>>>()?;
                    let refs: Vec<&FeatureVector> = singles.iter().collect();
                    let feature = match kind {
                        FeatureKind::Stack5 => build_stack5(&refs)?,
                        _ => build_flowstack5(&refs, &cfg.flow, cfg.flow_clamp)?,
                    };
                    SampleRecord {
                        feature,
                        label: cfg.bins.level(event.velocity)?,
                        task: cfg.task,
                    }
                }
            };
            sink(record)?;
            summary.emitted += 1;
        }
    }
    Ok(summary)
}

pub fn align(
    source: &dyn FrameSource,
    events: &[NoteEvent],
    layout: &KeyboardLayout,
    cfg: &AlignConfig,
) -> Result<(Vec<SampleRecord>, AlignSummary)> {
    let mut out = Vec::new();
    let summary = align_with(source, events, layout, cfg, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok((out, summary))
}
