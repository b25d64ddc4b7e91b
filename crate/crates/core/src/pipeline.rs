//! End-to-end passes: keyboard detection on the background frame, and
//! transcription of a whole video into note events.

use std::collections::VecDeque;

use crate::dataset::{NoteEvent, VelocityBins};
use crate::error::{Error, Result};
use crate::features::{
    build_flowstack5, build_stack5, key_crop_feature, FeatureKind, FeatureVector, StackSchedule,
};
use crate::flow::FlowConfig;
use crate::geometry::{
    find_keyboard_rect_with, hough_lines_with, segment_keys_with, HoughConfig, KeyColor,
    KeyboardLayout, LayoutSpec, RectSearchConfig, SegmentConfig,
};
use crate::hand::{detect_hand_columns, HandConfig};
use crate::imaging::{difference, FrameSource, GrayFrame};
use crate::models::{ModelKind, Task};
use crate::nn::{argmax, NetworkWeights};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectConfig {
    pub hough: HoughConfig,
    pub rect: RectSearchConfig,
    pub segment: SegmentConfig,
}

/// Hough lines, best keyboard-like rectangle, then key segmentation.
pub fn detect_keyboard(background: &GrayFrame, spec: &LayoutSpec, cfg: &DetectConfig) -> Result<KeyboardLayout> {
    let lines = hough_lines_with(background, &cfg.hough);
    let bounds = find_keyboard_rect_with(background, &lines, &cfg.rect)?;
    segment_keys_with(background, bounds, spec, &cfg.segment)
}

/// The four networks a transcription needs. Intensity networks may be
/// either the stacked or the flow variant; the kind is read off the input
/// length.
#[derive(Debug, Clone)]
pub struct TranscribeModels {
    onoff: [NetworkWeights; 2],
    intensity: [NetworkWeights; 2],
    intensity_kind: [FeatureKind; 2],
}

fn slot(color: KeyColor) -> usize {
    match color {
        KeyColor::White => 0,
        KeyColor::Black => 1,
    }
}

fn check_model(w: &NetworkWeights, color: KeyColor, tasks: &[Task], role: &str) -> Result<ModelKind> {
    let kind = ModelKind::from_input_len(w.input_len())
        .filter(|k| k.color == color && tasks.contains(&k.task))
        .ok_or_else(|| {
            let expected: Vec<String> = tasks
                .iter()
                .map(|&t| ModelKind::new(t, color).input_len().to_string())
                .collect();
            Error::InvalidArgument(format!(
                "{role} {} model takes {} inputs, expected {}",
                color.as_str(),
                w.input_len(),
                expected.join(" or ")
            ))
        })?;
    if w.n_classes() != kind.task.n_classes() {
        return Err(Error::InvalidArgument(format!(
            "{role} {} model has {} classes, expected {}",
            color.as_str(),
            w.n_classes(),
            kind.task.n_classes()
        )));
    }
    Ok(kind)
}

impl TranscribeModels {
    pub fn new(
        onoff_white: NetworkWeights,
        onoff_black: NetworkWeights,
        intensity_white: NetworkWeights,
        intensity_black: NetworkWeights,
    ) -> Result<Self> {
        check_model(&onoff_white, KeyColor::White, &[Task::OnOff], "on/off")?;
        check_model(&onoff_black, KeyColor::Black, &[Task::OnOff], "on/off")?;
        let intensity_tasks = [Task::Intensity, Task::IntensityFlow];
        let iw = check_model(&intensity_white, KeyColor::White, &intensity_tasks, "intensity")?;
        let ib = check_model(&intensity_black, KeyColor::Black, &intensity_tasks, "intensity")?;
        Ok(Self {
            onoff: [onoff_white, onoff_black],
            intensity: [intensity_white, intensity_black],
            intensity_kind: [iw.task.feature_kind(), ib.task.feature_kind()],
        })
    }

    pub fn onoff(&self, color: KeyColor) -> &NetworkWeights {
        &self.onoff[slot(color)]
    }

    pub fn intensity(&self, color: KeyColor) -> (&NetworkWeights, FeatureKind) {
        (&self.intensity[slot(color)], self.intensity_kind[slot(color)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscribeConfig {
    pub fps: f64,
    pub hand: HandConfig,
    /// Consecutive agreeing frames needed to flip a key; 1 disables smoothing.
    pub debounce: usize,
    pub bins: VelocityBins,
    pub flow: FlowConfig,
    pub flow_clamp: f64,
}

impl TranscribeConfig {
    pub fn new(fps: f64) -> Self {
        Self {
            fps,
            hand: HandConfig::default(),
            debounce: 2,
            bins: VelocityBins::default(),
            flow: FlowConfig::default(),
            flow_clamp: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::InvalidArgument("fps must be positive".into()));
        }
        if self.debounce == 0 {
            return Err(Error::InvalidArgument("debounce must be at least 1".into()));
        }
        if !(self.flow_clamp > 0.0) {
            return Err(Error::InvalidArgument("flow clamp must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub events: Vec<NoteEvent>,
    /// Undebounced on/off decision per frame, indexed by key id. Keys
    /// outside the hand columns are off.
    pub raw: Vec<Vec<bool>>,
    /// Notes whose stack window never filled; they get the middle level.
    pub velocity_defaulted: usize,
}

#[derive(Debug, Clone, Copy)]
struct Open {
    on_frame: usize,
    level: Option<usize>,
}

/// Per-key on/off state that flips after `need` consecutive disagreeing
/// frames and reports the first of them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Debouncer {
    on: bool,
    run: usize,
    run_start: usize,
}

impl Debouncer {
    pub fn is_on(&self) -> bool {
        self.on
    }

    /// Feeds the decision for `frame`; on a flip returns the new state and
    /// the frame it took effect.
    pub fn step(&mut self, frame: usize, raw: bool, need: usize) -> Option<(bool, usize)> {
        if raw == self.on {
            self.run = 0;
            return None;
        }
        if self.run == 0 {
            self.run_start = frame;
        }
        self.run += 1;
        if self.run < need.max(1) {
            return None;
        }
        self.on = raw;
        self.run = 0;
        Some((raw, self.run_start))
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct KeyState {
    gate: Debouncer,
    open: Option<Open>,
}

/// A note waiting for its intensity probe frame.
struct Probe {
    key: usize,
    frame: usize,
    /// Index into `closed` once the note has ended, else it is still open.
    closed_at: Option<usize>,
}

fn stack_feature(
    diffs: &VecDeque<GrayFrame>,
    current: usize,
    key: &crate::geometry::KeyRegion,
    frame: usize,
    kind: FeatureKind,
    schedule: &StackSchedule,
    cfg: &TranscribeConfig,
) -> Result<FeatureVector> {
    let frames = schedule
        .frames_for(frame)
        .ok_or_else(|| Error::IncompleteHistory(format!("frame {frame} precedes its stack window")))?;
    let singles = frames
        .iter()
        .map(|&i| {
            let back = current - i;
            let diff = diffs
                .get(diffs.len().wrapping_sub(1 + back))
                .ok_or_else(|| Error::IncompleteHistory(format!("frame {i} already dropped")))?;
            key_crop_feature(diff, key, i)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FeatureVector> = singles.iter().collect();
    match kind {
        FeatureKind::Stack5 => build_stack5(&refs),
        _ => build_flowstack5(&refs, &cfg.flow, cfg.flow_clamp),
    }
}

/// Streams the video once. Each frame, hand-covered keys are classified
/// on/off in one batch per color; a key flips after `debounce` agreeing
/// frames, with the note starting or ending at the first of them. Velocity
/// is predicted once per note, at the first frame from its onset on whose
/// stack window lies inside the video.
pub fn transcribe(
    source: &dyn FrameSource,
    layout: &KeyboardLayout,
    models: &TranscribeModels,
    cfg: &TranscribeConfig,
) -> Result<Transcription> {
    cfg.validate()?;
    let n = source.frame_count();
    let background = source.background_frame()?;
    let schedules: [StackSchedule; 2] = [
        StackSchedule::for_kind(models.intensity_kind[0], cfg.fps),
        StackSchedule::for_kind(models.intensity_kind[1], cfg.fps),
    ];
    let keep = schedules.iter().map(|s| s.span()).max().unwrap_or(0) + cfg.debounce + 1;
    let mut diffs: VecDeque<GrayFrame> = VecDeque::with_capacity(keep);
    let mut states = vec![KeyState::default(); layout.keys.len()];
    let mut closed: Vec<(usize, usize, usize, Option<usize>)> = Vec::new();
    let mut probes: Vec<Probe> = Vec::new();
    let mut raw_all = Vec::with_capacity(n);

    for f in 0..n {
        let frame = source.frame(f)?;
        let mask = detect_hand_columns(&frame, &background, layout.bounds, &cfg.hand, f)?;
        if diffs.len() == keep {
            diffs.pop_front();
        }
        diffs.push_back(difference(&frame, &background)?);
        let diff = diffs.back().expect("just pushed");

        let mut raw = vec![false; layout.keys.len()];
        for color in [KeyColor::White, KeyColor::Black] {
            let mut ids = Vec::new();
            let mut feats = Vec::new();
            for (i, key) in layout.keys.iter().enumerate() {
                let (x0, x1) = key.x_extent();
                if key.color() == color && mask.any_in(x0, x1) {
                    ids.push(i);
                    feats.push(key_crop_feature(diff, key, f)?);
                }
            }
            if feats.is_empty() {
                continue;
            }
            let payloads: Vec<&[f32]> = feats.iter().map(|x| x.payload()).collect();
            let probs = models.onoff(color).predict_many(&payloads)?;
            for (&i, p) in ids.iter().zip(&probs) {
                raw[i] = argmax(p) == 1;
            }
        }

        for (i, st) in states.iter_mut().enumerate() {
            let Some((on, at)) = st.gate.step(f, raw[i], cfg.debounce) else {
                continue;
            };
            if on {
                let span = schedules[slot(layout.keys[i].color())].span();
                st.open = Some(Open {
                    on_frame: at,
                    level: None,
                });
                probes.push(Probe {
                    key: i,
                    frame: at.max(span),
                    closed_at: None,
                });
            } else if let Some(open) = st.open.take() {
                let idx = closed.len();
                closed.push((i, open.on_frame, at, open.level));
                if let Some(p) = probes.iter_mut().find(|p| p.key == i && p.closed_at.is_none()) {
                    p.closed_at = Some(idx);
                }
            }
        }

        let mut still = Vec::with_capacity(probes.len());
        for p in probes.drain(..) {
            if p.frame > f {
                still.push(p);
                continue;
            }
            let key = &layout.keys[p.key];
            let (net, kind) = models.intensity(key.color());
            let feature = stack_feature(&diffs, f, key, p.frame, kind, &schedules[slot(key.color())], cfg)?;
            let level = argmax(&net.predict(feature.payload())?);
            match p.closed_at {
                Some(idx) => closed[idx].3 = Some(level),
                None => {
                    if let Some(open) = states[p.key].open.as_mut() {
                        open.level = Some(level);
                    }
                }
            }
        }
        probes = still;
        raw_all.push(raw);
    }

    for (i, st) in states.iter_mut().enumerate() {
        if let Some(open) = st.open.take() {
            closed.push((i, open.on_frame, n, open.level));
        }
    }
    let mut velocity_defaulted = 0;
    let mut events = closed
        .into_iter()
        .map(|(i, on, off, level)| {
            let level = level.unwrap_or_else(|| {
                velocity_defaulted += 1;
                2
            });
            NoteEvent::new(layout.keys[i].midi_note, on, off, cfg.bins.representative(level))
        })
        .collect::<Result<Vec<_>>>()?;
    events.sort_by_key(|e| (e.on_frame, e.midi_note));
    Ok(Transcription {
        events,
        raw: raw_all,
        velocity_defaulted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{random_score, RenderConfig, ScoreConfig, SynthVideo};
    use crate::dataset::{align, AlignConfig};
    use crate::models::build;

    fn models(seed: u64, intensity: Task) -> TranscribeModels {
        let net = |task, color| NetworkWeights::init(&build(ModelKind::new(task, color)), seed).unwrap();
        TranscribeModels::new(
            net(Task::OnOff, KeyColor::White),
            net(Task::OnOff, KeyColor::Black),
            net(intensity, KeyColor::White),
            net(intensity, KeyColor::Black),
        )
        .unwrap()
    }

    fn small_video(n_notes: usize, seed: u64) -> SynthVideo {
        let spec = LayoutSpec::octaves(60, 1).unwrap();
        let render = RenderConfig::for_layout(spec, 12, 48);
        let score = random_score(
            &render,
            &ScoreConfig {
                n_notes,
                ..ScoreConfig::default()
            },
            seed,
        )
        .unwrap();
        SynthVideo::new(render, &score, None, seed).unwrap()
    }

    #[test]
    fn mismatched_models_rejected() {
        let w = |task, color| NetworkWeights::init(&build(ModelKind::new(task, color)), 0).unwrap();
        let r = TranscribeModels::new(
            w(Task::OnOff, KeyColor::Black),
            w(Task::OnOff, KeyColor::Black),
            w(Task::Intensity, KeyColor::White),
            w(Task::Intensity, KeyColor::Black),
        );
        assert!(matches!(r, Err(Error::InvalidArgument(m)) if m.contains("600")));
        let r = TranscribeModels::new(
            w(Task::OnOff, KeyColor::White),
            w(Task::OnOff, KeyColor::Black),
            w(Task::OnOff, KeyColor::White),
            w(Task::Intensity, KeyColor::Black),
        );
        assert!(r.is_err());
        let ok = TranscribeModels::new(
            w(Task::OnOff, KeyColor::White),
            w(Task::OnOff, KeyColor::Black),
            w(Task::IntensityFlow, KeyColor::White),
            w(Task::Intensity, KeyColor::Black),
        )
        .unwrap();
        assert_eq!(ok.intensity(KeyColor::White).1, FeatureKind::FlowStack5);
        assert_eq!(ok.intensity(KeyColor::Black).1, FeatureKind::Stack5);
    }

    #[test]
    fn raw_decisions_equal_batch_predictions() {
        let video = small_video(4, 3);
        let layout = video.truth_layout().clone();
        let m = models(5, Task::Intensity);
        let out = transcribe(&video, &layout, &m, &TranscribeConfig::new(30.0)).unwrap();
        let (records, _) = align(&video, video.events(), &layout, &AlignConfig::new(Task::OnOff, 30.0)).unwrap();
        assert!(!records.is_empty());
        let mut covered = 0;
        for r in &records {
            let key = r.feature.key_id;
            let net = m.onoff(r.feature.color);
            let want = argmax(&net.predict_many(&[r.feature.payload()]).unwrap()[0]) == 1;
            assert_eq!(out.raw[r.feature.frame_index][key], want);
            covered += 1;
        }
        let on_total: usize = out.raw.iter().flatten().filter(|&&b| b).count();
        let on_covered = records
            .iter()
            .filter(|r| out.raw[r.feature.frame_index][r.feature.key_id])
            .count();
        assert_eq!(on_total, on_covered);
        assert_eq!(covered, records.len());
    }

    #[test]
    fn empty_performance_gives_no_notes() {
        let spec = LayoutSpec::octaves(60, 1).unwrap();
        let video = SynthVideo::new(RenderConfig::for_layout(spec, 12, 48), &[], Some(25), 1).unwrap();
        let m = models(2, Task::Intensity);
        let out = transcribe(&video, video.truth_layout(), &m, &TranscribeConfig::new(30.0)).unwrap();
        assert!(out.raw.iter().flatten().all(|&b| !b));
        assert!(out.events.is_empty());
    }

    #[test]
    fn flow_intensity_models_run() {
        let video = small_video(2, 8);
        let m = models(4, Task::IntensityFlow);
        let out = transcribe(&video, video.truth_layout(), &m, &TranscribeConfig::new(30.0)).unwrap();
        assert_eq!(out.raw.len(), video.len());
    }

    fn runs(raw: &str, need: usize) -> Vec<(bool, usize)> {
        let mut d = Debouncer::default();
        raw.chars()
            .enumerate()
            .filter_map(|(f, c)| d.step(f, c == '1', need))
            .collect()
    }

    #[test]
    fn debouncer_ignores_single_frame_flicker() {
        assert_eq!(runs("0010011110100", 2), vec![(true, 5), (false, 11)]);
        assert_eq!(runs("0010011110100", 1), vec![
            (true, 2), (false, 3), (true, 5), (false, 9), (true, 10), (false, 11)
        ]);
        assert_eq!(runs("0111", 3), vec![(true, 1)]);
        assert!(runs("0110110", 3).is_empty());
    }

    #[test]
    fn debounce_must_be_positive() {
        let mut cfg = TranscribeConfig::new(30.0);
        cfg.debounce = 0;
        assert!(cfg.validate().is_err());
    }
}
