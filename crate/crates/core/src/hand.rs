//! Hand-column detection: which x columns of the keyboard the hands cover.

use crate::error::Result;
use crate::imaging::{GrayFrame, Rect};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandConfig {
    pub diff_threshold: f64,
    pub open_radius: usize,
    pub min_column_mass: usize,
}

impl Default for HandConfig {
    fn default() -> Self {
        Self {
            diff_threshold: 0.08,
            open_radius: 2,
            min_column_mass: 3,
        }
    }
}

/// Per-column hand presence over the keyboard, indexed from `bounds.x0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandColumnMask {
    x0: usize,
    columns: Vec<bool>,
    frame_index: usize,
}

impl HandColumnMask {
    pub fn new(x0: usize, columns: Vec<bool>, frame_index: usize) -> Self {
        Self {
            x0,
            columns,
            frame_index,
        }
    }

    /// Mask with every column set, for callers that skip hand gating.
    pub fn all(bounds: Rect, frame_index: usize) -> Self {
        Self::new(bounds.x0, vec![true; bounds.width()], frame_index)
    }

    pub fn none(bounds: Rect, frame_index: usize) -> Self {
        Self::new(bounds.x0, vec![false; bounds.width()], frame_index)
    }

    pub fn columns(&self) -> &[bool] {
        &self.columns
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Whether absolute frame column `x` is covered.
    pub fn covers(&self, x: usize) -> bool {
        x >= self.x0 && self.columns.get(x - self.x0).copied().unwrap_or(false)
    }

    /// Whether any column in `[x0, x1)` is covered.
    pub fn any_in(&self, x0: usize, x1: usize) -> bool {
        (x0..x1).any(|x| self.covers(x))
    }

    /// Covered absolute columns as inclusive runs.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &c) in self.columns.iter().enumerate() {
            match (c, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push((self.x0 + s, self.x0 + i - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((self.x0 + s, self.x0 + self.columns.len() - 1));
        }
        out
    }
}

fn erode(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    morph(mask, w, h, r, true)
}

fn dilate(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    morph(mask, w, h, r, false)
}

/// Separable square-element erosion/dilation. Out-of-frame pixels count as
/// background, so erosion eats into regions touching the border.
fn morph(mask: &[bool], w: usize, h: usize, r: usize, erode: bool) -> Vec<bool> {
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let (pos, len) = if horizontal { (x, w) } else { (y, h) };
                let lo = pos as i64 - r as i64;
                let hi = pos as i64 + r as i64;
                let mut all = true;
                let mut any = false;
                for p in lo..=hi {
                    let v = if p < 0 || p >= len as i64 {
                        false
                    } else if horizontal {
                        src[y * w + p as usize]
                    } else {
                        src[p as usize * w + x]
                    };
                    all &= v;
                    any |= v;
                }
                out[y * w + x] = if erode { all } else { any };
            }
        }
        out
    };
    let first = pass(mask, true);
    pass(&first, false)
}

/// Binarises `|frame − background|` inside `bounds`, opens it to drop speckle,
/// keeps columns with enough surviving pixels and widens them by the
/// opening radius.
pub fn detect_hand_columns(
    frame: &GrayFrame,
    background: &GrayFrame,
    bounds: Rect,
    cfg: &HandConfig,
    frame_index: usize,
) -> Result<HandColumnMask> {
    frame.same_dims(background)?;
    bounds.check_within(frame.width(), frame.height())?;
    let (w, h) = (bounds.width(), bounds.height());
    let mut on = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (bounds.x0 + x, bounds.y0 + y);
            on[y * w + x] = (frame.get(fx, fy) - background.get(fx, fy)).abs() > cfg.diff_threshold;
        }
    }
    let r = cfg.open_radius;
    let opened = if r == 0 {
        on
    } else {
        dilate(&erode(&on, w, h, r), w, h, r)
    };
    let hit: Vec<bool> = (0..w)
        .map(|x| (0..h).filter(|&y| opened[y * w + x]).count() >= cfg.min_column_mass.max(1))
        .collect();
    let columns = (0..w)
        .map(|x| {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            hit[lo..=hi].iter().any(|&c| c)
        })
        .collect();
    Ok(HandColumnMask::new(bounds.x0, columns, frame_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob_frame(bg: &GrayFrame, x0: usize, x1: usize, y0: usize, y1: usize) -> GrayFrame {
        GrayFrame::from_fn(bg.width(), bg.height(), |x, y| {
            if (x0..=x1).contains(&x) && (y0..=y1).contains(&y) {
                bg.get(x, y) - 0.5
            } else {
                bg.get(x, y)
            }
        })
        .unwrap()
    }

    #[test]
    fn identical_frame_gives_empty_mask() {
        let bg = GrayFrame::filled(200, 40, 0.9).unwrap();
        let m = detect_hand_columns(&bg, &bg, bg.bounds(), &HandConfig::default(), 0).unwrap();
        assert_eq!(m.len(), 200);
        assert!(m.columns().iter().all(|c| !c));
    }

    #[test]
    fn blob_columns_widened_by_radius() {
        let bg = GrayFrame::filled(220, 40, 0.9).unwrap();
        let frame = blob_frame(&bg, 100, 150, 5, 30);
        let cfg = HandConfig::default();
        let m = detect_hand_columns(&frame, &bg, bg.bounds(), &cfg, 7).unwrap();
        let r = cfg.open_radius;
        assert_eq!(m.runs(), vec![(100 - r, 150 + r)]);
        assert_eq!(m.frame_index(), 7);
    }

    #[test]
    fn mask_is_relative_to_bounds() {
        let bg = GrayFrame::filled(220, 40, 0.9).unwrap();
        let frame = blob_frame(&bg, 100, 150, 5, 30);
        let bounds = Rect::new(50, 0, 200, 40).unwrap();
        let m = detect_hand_columns(&frame, &bg, bounds, &HandConfig::default(), 0).unwrap();
        assert_eq!(m.len(), 150);
        assert!(m.covers(120) && !m.covers(60) && !m.covers(10));
    }

    #[test]
    fn sub_threshold_noise_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bg = GrayFrame::filled(120, 30, 0.5).unwrap();
        let cfg = HandConfig::default();
        let noisy = GrayFrame::from_fn(120, 30, |x, y| {
            bg.get(x, y) + rng.gen_range(-1.0..1.0) * cfg.diff_threshold * 0.95
        })
        .unwrap();
        let m = detect_hand_columns(&noisy, &bg, bg.bounds(), &cfg, 0).unwrap();
        assert!(m.columns().iter().all(|c| !c));
    }

    #[test]
    fn isolated_speckle_is_opened_away() {
        let bg = GrayFrame::filled(60, 30, 0.9).unwrap();
        let frame = blob_frame(&bg, 20, 21, 10, 11);
        let m = detect_hand_columns(&frame, &bg, bg.bounds(), &HandConfig::default(), 0).unwrap();
        assert!(m.runs().is_empty());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = GrayFrame::filled(10, 10, 0.9).unwrap();
        let b = GrayFrame::filled(10, 11, 0.9).unwrap();
        assert!(detect_hand_columns(&a, &b, a.bounds(), &HandConfig::default(), 0).is_err());
    }

    proptest! {
        #[test]
        fn larger_blob_never_shrinks_mask(
            x0 in 10usize..80, w in 6usize..40, grow_l in 0usize..10, grow_r in 0usize..10,
            y0 in 2usize..10, hgt in 6usize..20,
        ) {
            let bg = GrayFrame::filled(160, 40, 0.9).unwrap();
            let cfg = HandConfig::default();
            let small = blob_frame(&bg, x0, x0 + w, y0, y0 + hgt);
            let big = blob_frame(&bg, x0 - grow_l.min(x0), x0 + w + grow_r, y0 - 1, y0 + hgt + 3);
            let ms = detect_hand_columns(&small, &bg, bg.bounds(), &cfg, 0).unwrap();
            let mb = detect_hand_columns(&big, &bg, bg.bounds(), &cfg, 0).unwrap();
            for x in 0..160 {
                prop_assert!(!ms.covers(x) || mb.covers(x), "column {}", x);
            }
        }
    }
}
