//! Synthetic overhead performances with exact ground truth.
//!
//! A flat keyboard sits on a mid-grey desk. For every note a hand (an
//! elliptical palm with one finger) slides in from above the keyboard,
//! reaching the key after a number of frames that shrinks with velocity,
//! rests on it while the key is held (the key darkens) and lifts off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_no_overlap, NoteEvent, VelocityBins};
use crate::error::{Error, Result};
use crate::geometry::{is_black_note, KeyColor, KeyRegion, KeyShape, KeyboardLayout, LayoutSpec};
use crate::imaging::{FrameDir, FrameSource, GrayFrame, Rect};

pub const DESK: f64 = 0.5;
pub const WHITE_KEY: f64 = 0.88;
pub const BLACK_KEY: f64 = 0.2;
pub const KEY_GAP: f64 = 0.55;
pub const DISTRACTOR: f64 = 0.97;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub layout: LayoutSpec,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Top-left corner of the keyboard.
    pub keyboard_x: usize,
    pub keyboard_y: usize,
    pub white_key_width: usize,
    pub key_height: usize,
    pub black_width_ratio: f64,
    pub black_height_ratio: f64,
    /// Multiplies every rendered value before noise.
    pub brightness: f64,
    pub noise_sigma: f64,
    pub fps: f64,
    pub press_darkening: f64,
    pub hand_value: f64,
    /// Frames from a hand's appearance to key contact, per intensity level.
    pub approach_frames: [usize; 5],
    /// Distance the hand descends during the approach, in key heights.
    pub approach_travel: f64,
    pub release_frames: usize,
    pub bins: VelocityBins,
    /// Adds a bright rectangle on the desk above the keyboard.
    pub distractor: bool,
}

impl RenderConfig {
    /// Frame sized around the keyboard with room above it for hands.
    pub fn for_layout(layout: LayoutSpec, white_key_width: usize, key_height: usize) -> Self {
        let kb_w = layout.n_white() * white_key_width;
        let margin = 16;
        Self {
            layout,
            frame_width: kb_w + 2 * margin,
            frame_height: key_height + key_height * 3 / 4 + margin,
            keyboard_x: margin,
            keyboard_y: key_height * 3 / 4,
            white_key_width,
            key_height,
            black_width_ratio: 0.6,
            black_height_ratio: 0.62,
            brightness: 1.0,
            noise_sigma: 0.02,
            fps: 30.0,
            press_darkening: 0.15,
            hand_value: 0.6,
            approach_frames: [20, 14, 9, 5, 2],
            approach_travel: 0.3,
            release_frames: 3,
            bins: VelocityBins::default(),
            distractor: false,
        }
    }

    pub fn keyboard_rect(&self) -> Rect {
        Rect {
            x0: self.keyboard_x,
            y0: self.keyboard_y,
            x1: self.keyboard_x + self.layout.n_white() * self.white_key_width,
            y1: self.keyboard_y + self.key_height,
        }
    }

    fn black_width(&self) -> usize {
        ((self.white_key_width as f64 * self.black_width_ratio).round() as usize).max(2)
    }

    fn black_height(&self) -> usize {
        ((self.key_height as f64 * self.black_height_ratio).round() as usize).clamp(2, self.key_height - 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.white_key_width < 4 || self.key_height < 8 {
            return bad("keys must be at least 4 px wide and 8 px tall".into());
        }
        let r = self.keyboard_rect();
        if r.x1 > self.frame_width || r.y1 > self.frame_height {
            return bad(format!(
                "keyboard {r:?} does not fit a {}x{} frame",
                self.frame_width, self.frame_height
            ));
        }
        if !(self.fps > 0.0) || !(self.noise_sigma >= 0.0) || !(self.brightness > 0.0) {
            return bad("fps and brightness must be positive, noise non-negative".into());
        }
        if self.approach_frames.iter().any(|&a| a == 0) {
            return bad("approach frames must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.approach_travel) {
            return bad(format!("approach travel {} outside [0, 2]", self.approach_travel));
        }
        Ok(())
    }

    /// The key layout the renderer draws, in the same form segmentation
    /// reports: black boxes from the keyboard top to the black-key bottom,
    /// white keys split there into an upper part between the black keys and
    /// a full-pitch lower part.
    pub fn truth_layout(&self) -> Result<KeyboardLayout> {
        self.validate()?;
        let b = self.keyboard_rect();
        let ww = self.white_key_width;
        let (bw, bh) = (self.black_width(), self.black_height());
        let split = b.y0 + bh;
        let notes: Vec<u8> = self.layout.notes().collect();
        let mut blacks = Vec::new();
        let mut wi = 0;
        for &n in &notes {
            if is_black_note(n) {
                let centre = b.x0 + wi * ww;
                let x0 = centre.saturating_sub(bw / 2).max(b.x0);
                blacks.push(Rect {
                    x0,
                    y0: b.y0,
                    x1: (x0 + bw).min(b.x1),
                    y1: split,
                });
            } else {
                wi += 1;
            }
        }
        let (mut wi, mut bi) = (0, 0);
        let mut keys = Vec::new();
        for (i, &n) in notes.iter().enumerate() {
            if is_black_note(n) {
                keys.push(KeyRegion {
                    key_id: 0,
                    midi_note: n,
                    shape: KeyShape::Black { bbox: blacks[bi] },
                });
                bi += 1;
                continue;
            }
            let lower = Rect {
                x0: b.x0 + wi * ww,
                x1: b.x0 + (wi + 1) * ww,
                y0: split,
                y1: b.y1,
            };
            let ux0 = if i > 0 && is_black_note(notes[i - 1]) { blacks[bi - 1].x1 } else { lower.x0 };
            let ux1 = if i + 1 < notes.len() && is_black_note(notes[i + 1]) { blacks[bi].x0 } else { lower.x1 };
            keys.push(KeyRegion {
                key_id: 0,
                midi_note: n,
                shape: KeyShape::White {
                    upper: Rect {
                        x0: ux0,
                        x1: ux1,
                        y0: b.y0,
                        y1: split,
                    },
                    lower,
                },
            });
            wi += 1;
        }
        KeyboardLayout::new(self.frame_width, self.frame_height, b, keys)
    }
}

/// A rendered performance; frames are produced on demand.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    cfg: RenderConfig,
    events: Vec<NoteEvent>,
    n_frames: usize,
    seed: u64,
    layout: KeyboardLayout,
    base: Vec<f64>,
    /// Index into `layout.keys` of the key owning each pixel.
    owner: Vec<Option<usize>>,
}

impl SynthVideo {
    /// Frames run until every hand has left plus a short tail, unless
    /// `n_frames` is given.
    pub fn new(cfg: RenderConfig, score: &[NoteEvent], n_frames: Option<usize>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        check_no_overlap(score)?;
        let layout = cfg.truth_layout()?;
        if let Some(e) = score.iter().find(|e| !cfg.layout.contains(e.midi_note)) {
            return Err(Error::UnknownNote(e.midi_note));
        }
        let n_frames = n_frames.unwrap_or_else(|| {
            score
                .iter()
                .map(|e| e.off_frame + cfg.release_frames)
                .max()
                .unwrap_or(0)
                + 10
        });
        let (w, h) = (cfg.frame_width, cfg.frame_height);
        let mut base = vec![DESK; w * h];
        let mut owner = vec![None; w * h];
        if cfg.distractor {
            let kb = cfg.keyboard_rect();
            let (x1, y1) = (4 + (kb.width() / 3).max(8), kb.y0.saturating_sub(6).max(6));
            for y in 2..y1.min(h) {
                for x in 4..x1.min(w) {
                    base[y * w + x] = DISTRACTOR;
                }
            }
        }
        for (i, k) in layout.keys.iter().enumerate() {
            if let KeyShape::White { upper, lower } = k.shape {
                for r in [upper, lower] {
                    for y in r.y0..r.y1 {
                        for x in r.x0..r.x1 {
                            // one-pixel seam at the left edge of every key but the first
                            let seam = x == lower.x0 && x != layout.bounds.x0;
                            base[y * w + x] = if seam { KEY_GAP } else { WHITE_KEY };
                            owner[y * w + x] = Some(i);
                        }
                    }
                }
            }
        }
        for (i, k) in layout.keys.iter().enumerate() {
            if let KeyShape::Black { bbox } = k.shape {
                for y in bbox.y0..bbox.y1 {
                    for x in bbox.x0..bbox.x1 {
                        base[y * w + x] = BLACK_KEY;
                        owner[y * w + x] = Some(i);
                    }
                }
            }
        }
        for v in base.iter_mut() {
            *v *= cfg.brightness;
        }
        let mut events = score.to_vec();
        events.sort_by_key(|e| (e.on_frame, e.midi_note));
        Ok(Self {
            cfg,
            events,
            n_frames,
            seed,
            layout,
            base,
            owner,
        })
    }

    pub fn config(&self) -> &RenderConfig {
        &self.cfg
    }

    pub fn events(&self) -> &[NoteEvent] {
        &self.events
    }

    pub fn truth_layout(&self) -> &KeyboardLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0
    }

    fn approach(&self, e: &NoteEvent) -> usize {
        let level = self.cfg.bins.level(e.velocity).unwrap_or(0);
        self.cfg.approach_frames[level]
    }

    /// How far the hand has come down, 0 (just appeared) to 1 (on the key),
    /// or `None` when it is not in view.
    fn hand_progress(&self, e: &NoteEvent, frame: usize) -> Option<f64> {
        let a = self.approach(e);
        let r = self.cfg.release_frames;
        let f = frame as i64;
        let on = e.on_frame as i64;
        let off = e.off_frame as i64;
        if f < on - a as i64 || f >= off + r as i64 {
            None
        } else if f < on {
            Some((f - (on - a as i64)) as f64 / a as f64)
        } else if f < off {
            Some(1.0)
        } else {
            Some(1.0 - (f - off + 1) as f64 / (r + 1) as f64)
        }
    }

    fn draw_hand(&self, img: &mut [f64], key: &KeyRegion, progress: f64) {
        let c = &self.cfg;
        let (w, h) = (c.frame_width as i64, c.frame_height as i64);
        let (ww, kh) = (c.white_key_width as f64, c.key_height as f64);
        let (x0, x1) = key.x_extent();
        let cx = (x0 + x1) as f64 / 2.0;
        let travel = c.approach_travel * kh;
        let dy = -(1.0 - progress) * travel;
        let top = c.keyboard_y as f64;
        let palm_cy = top - 0.2 * kh + dy;
        let (rx, ry) = (1.5 * ww, 0.3 * kh);
        let reach = if key.color() == KeyColor::Black { 0.3 } else { 0.4 };
        let tip = top + reach * kh + dy;
        let half_finger = 0.3 * ww;
        let value = c.hand_value * c.brightness;

        let ylo = (palm_cy - ry).floor().max(0.0) as i64;
        let yhi = (tip.max(palm_cy + ry).ceil() as i64).min(h);
        let xlo = ((cx - rx).floor() as i64).max(0);
        let xhi = ((cx + rx).ceil() as i64).min(w);
        for y in ylo..yhi {
            for x in xlo..xhi {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let ex = (px - cx) / rx;
                let ey = (py - palm_cy) / ry;
                let in_palm = ex * ex + ey * ey <= 1.0;
                let in_finger = (px - cx).abs() <= half_finger && py >= palm_cy && py < tip;
                if in_palm || in_finger {
                    img[(y * w + x) as usize] = value;
                }
            }
        }
    }

    /// The frame without noise.
    pub fn clean_frame(&self, index: usize) -> GrayFrame {
        let mut img = self.base.clone();
        let live: Vec<(&NoteEvent, f64)> = self
            .events
            .iter()
            .filter_map(|e| self.hand_progress(e, index).map(|p| (e, p)))
            .collect();
        for (e, _) in live.iter().filter(|(e, _)| e.sounds_at(index)) {
            let key_index = self
                .layout
                .keys
                .iter()
                .position(|k| k.midi_note == e.midi_note)
                .expect("notes checked at construction");
            let dark = self.cfg.press_darkening * self.cfg.brightness;
            for (v, o) in img.iter_mut().zip(&self.owner) {
                if *o == Some(key_index) {
                    *v -= dark;
                }
            }
        }
        for (e, p) in &live {
            let key = self.layout.key_for_note(e.midi_note).expect("checked");
            self.draw_hand(&mut img, key, *p);
        }
        GrayFrame::from_clamped(self.cfg.frame_width, self.cfg.frame_height, img)
            .expect("sized from config")
    }

    fn noisy(&self, clean: GrayFrame, stream: u64) -> GrayFrame {
        if self.cfg.noise_sigma == 0.0 {
            return clean;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let normal = Normal::new(0.0, self.cfg.noise_sigma).expect("sigma validated");
        let data = clean.data().iter().map(|v| v + normal.sample(&mut rng)).collect();
        GrayFrame::from_clamped(clean.width(), clean.height(), data).expect("same size")
    }

    /// Hands-free keyboard with its own noise draw.
    pub fn background_clean(&self) -> GrayFrame {
        GrayFrame::new(self.cfg.frame_width, self.cfg.frame_height, self.base.iter().map(|v| v.clamp(0.0, 1.0)).collect())
            .expect("sized from config")
    }

    /// Writes every frame and `background.pgm`.
    pub fn write(&self, dir: impl AsRef<std::path::Path>) -> Result<FrameDir> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for i in 0..self.n_frames {
            crate::imaging::write_pgm(&self.frame(i)?, dir.join(crate::imaging::frame_file_name(i)))?;
        }
        crate::imaging::write_pgm(&self.background_frame()?, dir.join("background.pgm"))?;
        FrameDir::open(dir)
    }
}

impl FrameSource for SynthVideo {
    fn frame_count(&self) -> usize {
        self.n_frames
    }

    fn frame(&self, index: usize) -> Result<GrayFrame> {
        if index >= self.n_frames {
            return Err(Error::InvalidArgument(format!(
                "frame {index} of a {}-frame video",
                self.n_frames
            )));
        }
        Ok(self.noisy(self.clean_frame(index), index as u64 + 1))
    }

    fn background_frame(&self) -> Result<GrayFrame> {
        Ok(self.noisy(self.background_clean(), 0))
    }
}

pub fn synth_generate(score: &[NoteEvent], cfg: &RenderConfig, seed: u64) -> Result<SynthVideo> {
    SynthVideo::new(cfg.clone(), score, None, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConfig {
    pub n_notes: usize,
    pub first_onset: usize,
    /// Inclusive range of frames between consecutive onsets.
    pub onset_gap: (usize, usize),
    /// Inclusive range of note lengths in frames.
    pub duration: (usize, usize),
    pub velocity: (u8, u8),
    /// Only draw notes of this color.
    pub color: Option<KeyColor>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            n_notes: 50,
            first_onset: 30,
            onset_gap: (4, 12),
            duration: (6, 20),
            velocity: (1, 127),
            color: None,
        }
    }
}

/// Random notes, one onset after another. A note is only reused once the
/// previous hand on it has fully left before the next one appears.
pub fn random_score(render: &RenderConfig, cfg: &ScoreConfig, seed: u64) -> Result<Vec<NoteEvent>> {
    let notes: Vec<u8> = render
        .layout
        .notes()
        .filter(|&n| match cfg.color {
            Some(KeyColor::Black) => is_black_note(n),
            Some(KeyColor::White) => !is_black_note(n),
            None => true,
        })
        .collect();
    if notes.is_empty() {
        return Err(Error::InvalidArgument("no notes of the requested color".into()));
    }
    let (g0, g1) = cfg.onset_gap;
    let (d0, d1) = cfg.duration;
    let (v0, v1) = cfg.velocity;
    if g0 > g1 || d0 == 0 || d0 > d1 || v0 == 0 || v0 > v1 || v1 > 127 {
        return Err(Error::InvalidArgument(format!("bad score ranges {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut busy_until = vec![0usize; 128];
    let mut events = Vec::with_capacity(cfg.n_notes);
    let mut onset = cfg.first_onset;
    while events.len() < cfg.n_notes {
        let velocity = rng.gen_range(v0..=v1);
        let level = render.bins.level(velocity)?;
        let appear = onset.saturating_sub(render.approach_frames[level]);
        let free: Vec<u8> = notes.iter().copied().filter(|&n| busy_until[n as usize] < appear).collect();
        if let Some(&note) = free.get(rng.gen_range(0..free.len().max(1))) {
            let off = onset + rng.gen_range(d0..=d1);
            busy_until[note as usize] = off + render.release_frames;
            events.push(NoteEvent::new(note, onset, off, velocity)?);
        }
        onset += rng.gen_range(g0..=g1);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RenderConfig {
        RenderConfig::for_layout(LayoutSpec::octaves(48, 1).unwrap(), 12, 40)
    }

    #[test]
    fn empty_score_matches_background_within_noise() {
        let cfg = small();
        let v = synth_generate(&[], &cfg, 3).unwrap();
        let clean = v.background_clean();
        for i in [0, v.len() - 1] {
            let f = v.frame(i).unwrap();
            let worst = f
                .data()
                .iter()
                .zip(clean.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 6.0 * cfg.noise_sigma, "frame {i}: {worst}");
        }
    }

    #[test]
    fn pressed_key_darkens_by_configured_amount() {
        let mut cfg = small();
        cfg.noise_sigma = 0.0;
        let e = NoteEvent::new(50, 30, 40, 64).unwrap();
        let v = synth_generate(&[e], &cfg, 1).unwrap();
        let key = *v.truth_layout().key_for_note(50).unwrap();
        let KeyShape::White { lower, .. } = key.shape else { panic!() };
        let bg = v.background_clean().mean_in(lower);
        let pressed = v.frame(35).unwrap().mean_in(lower);
        assert!((bg - pressed - cfg.press_darkening).abs() < 1e-9, "{bg} -> {pressed}");
        let after = v.frame(45).unwrap().mean_in(lower);
        assert!((after - bg).abs() < 1e-9);
    }

    #[test]
    fn seeds_change_noise_not_truth() {
        let cfg = small();
        let score = random_score(&cfg, &ScoreConfig { n_notes: 5, ..Default::default() }, 7).unwrap();
        let a = synth_generate(&score, &cfg, 1).unwrap();
        let b = synth_generate(&score, &cfg, 2).unwrap();
        assert_eq!(a.events(), b.events());
        assert_ne!(a.frame(3).unwrap(), b.frame(3).unwrap());
        assert_eq!(a.frame(3).unwrap(), synth_generate(&score, &cfg, 1).unwrap().frame(3).unwrap());
    }

    #[test]
    fn faster_velocity_arrives_later() {
        let mut cfg = small();
        cfg.noise_sigma = 0.0;
        let soft = NoteEvent::new(50, 30, 40, 10).unwrap();
        let loud = NoteEvent::new(50, 30, 40, 120).unwrap();
        let bg = small().truth_layout().unwrap();
        let bounds = bg.bounds;
        let touched = |e: NoteEvent| {
            let v = synth_generate(&[e], &cfg, 0).unwrap();
            let b = v.background_clean();
            (0..30)
                .find(|&f| {
                    let fr = v.frame(f).unwrap();
                    (bounds.x0..bounds.x1).any(|x| (fr.get(x, bounds.y0) - b.get(x, bounds.y0)).abs() > 0.05)
                })
                .unwrap_or(30)
        };
        assert!(touched(soft) < touched(loud));
    }

    #[test]
    fn overlapping_score_refused() {
        let a = NoteEvent::new(50, 30, 40, 64).unwrap();
        let b = NoteEvent::new(50, 35, 45, 64).unwrap();
        assert!(matches!(
            synth_generate(&[a, b], &small(), 0),
            Err(Error::OverlappingEvents { .. })
        ));
        let outside = NoteEvent::new(90, 30, 40, 64).unwrap();
        assert!(matches!(synth_generate(&[outside], &small(), 0), Err(Error::UnknownNote(90))));
    }

    #[test]
    fn random_score_keeps_hands_apart() {
        let cfg = small();
        let score = random_score(&cfg, &ScoreConfig { n_notes: 80, ..Default::default() }, 5).unwrap();
        assert_eq!(score.len(), 80);
        check_no_overlap(&score).unwrap();
        let black = random_score(
            &cfg,
            &ScoreConfig {
                n_notes: 10,
                color: Some(KeyColor::Black),
                ..Default::default()
            },
            5,
        )
        .unwrap();
        assert!(black.iter().all(|e| is_black_note(e.midi_note)));
    }

    #[test]
    fn truth_layout_counts() {
        let l = RenderConfig::for_layout(LayoutSpec::standard_88(), 8, 40).truth_layout().unwrap();
        assert_eq!((l.n_white(), l.n_black()), (52, 36));
    }
}
