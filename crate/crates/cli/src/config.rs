//! Tunables for every stage, read from a `key = value` file.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! out-of-range values are rejected with the offending line number.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use pianovis::dataset::VelocityBins;
use pianovis::flow::FlowConfig;
use pianovis::geometry::LayoutSpec;
use pianovis::hand::HandConfig;
use pianovis::pipeline::{DetectConfig, TranscribeConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub fps: f64,
    pub layout: LayoutSpec,
    pub detect: DetectConfig,
    pub hand: HandConfig,
    pub flow: FlowConfig,
    pub flow_clamp: f64,
    pub bins: VelocityBins,
    pub debounce: usize,
    /// 0 keeps the model recipe's epoch count.
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            layout: LayoutSpec::standard_88(),
            detect: DetectConfig::default(),
            hand: HandConfig::default(),
            flow: FlowConfig::default(),
            flow_clamp: 2.0,
            bins: VelocityBins::default(),
            debounce: 2,
            epochs: 0,
            batch_size: 32,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Every key the file format accepts.
#[cfg(test)]
const KEYS: &[&str] = &[
    "fps",
    "seed",
    "layout.first_key",
    "layout.keys",
    "hough.rho_step",
    "hough.theta_step_deg",
    "hough.threshold",
    "hough.edge_percentile",
    "hough.edge_floor",
    "hough.nms_radius",
    "rect.axis_tolerance_deg",
    "rect.dark_cutoff",
    "rect.bright_cutoff",
    "rect.min_area_frac",
    "rect.tie_tolerance",
    "rect.rescore",
    "rect.max_horizontal",
    "rect.max_vertical",
    "rect.min_step",
    "segment.threshold_window",
    "segment.offset",
    "segment.inset",
    "segment.upper_band",
    "hand.diff_threshold",
    "hand.open_radius",
    "hand.min_column_mass",
    "flow.window",
    "flow.iterations",
    "flow.regularization",
    "flow.clamp",
    "velocity.edges",
    "transcribe.debounce",
    "train.epochs",
    "train.batch_size",
    "train.validation_fraction",
];

fn parse<T: FromStr>(value: &str) -> Result<T> {
    value.parse().map_err(|_| anyhow!("cannot parse {value:?}"))
}

fn within<T: FromStr + PartialOrd + std::fmt::Display + Copy>(value: &str, lo: T, hi: T) -> Result<T> {
    let v: T = parse(value)?;
    if !(v >= lo && v <= hi) {
        bail!("{v} outside [{lo}, {hi}]");
    }
    Ok(v)
}

fn positive(value: &str) -> Result<f64> {
    let v: f64 = parse(value)?;
    if !(v > 0.0 && v.is_finite()) {
        bail!("{v} must be positive");
    }
    Ok(v)
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let (mut first_key, mut n_keys) = (cfg.layout.first_key, cfg.layout.n_keys);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            match key {
                "layout.first_key" => first_key = within(value, 0u8, 127).map_err(|e| at(i, key, e))?,
                "layout.keys" => n_keys = within(value, 1usize, 128).map_err(|e| at(i, key, e))?,
                _ => cfg.set(key, value).map_err(|e| at(i, key, e))?,
            }
        }
        cfg.layout = LayoutSpec::new(first_key, n_keys).map_err(|e| anyhow!("layout: {e}"))?;
        Ok(cfg)
    }

    /// Applies one setting. Layout keys go through `parse` so the pair is
    /// checked together.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let h = &mut self.detect.hough;
        let r = &mut self.detect.rect;
        let s = &mut self.detect.segment;
        match key {
            "fps" => self.fps = within(value, 1.0, 1000.0)?,
            "seed" => self.seed = parse(value)?,
            "hough.rho_step" => h.rho_step = within(value, 0.1, 10.0)?,
            "hough.theta_step_deg" => h.theta_step = within(value, 0.05, 10.0f64)?.to_radians(),
            "hough.threshold" => h.threshold = within(value, 1, u32::MAX)?,
            "hough.edge_percentile" => h.edge_percentile = within(value, 0.0, 1.0)?,
            "hough.edge_floor" => h.edge_floor = within(value, 0.0, 1.0)?,
            "hough.nms_radius" => h.nms_radius = within(value, 0, 50)?,
            "rect.axis_tolerance_deg" => r.axis_tolerance = within(value, 0.0, 45.0f64)?.to_radians(),
            "rect.dark_cutoff" => r.dark_cutoff = within(value, 0.0, 1.0)?,
            "rect.bright_cutoff" => r.bright_cutoff = within(value, 0.0, 1.0)?,
            "rect.min_area_frac" => r.min_area_frac = within(value, 0.0, 1.0)?,
            "rect.tie_tolerance" => r.tie_tolerance = within(value, 0.0, 2.0)?,
            "rect.rescore" => r.rescore = within(value, 1, 100_000)?,
            "rect.max_horizontal" => r.max_horizontal = within(value, 2, 10_000)?,
            "rect.max_vertical" => r.max_vertical = within(value, 2, 10_000)?,
            "rect.min_step" => r.min_step = within(value, 1, 1000)?,
            "segment.threshold_window" => {
                let w: usize = within(value, 0, 10_001)?;
                if w != 0 && w % 2 == 0 {
                    bail!("window {w} must be odd, or 0 for automatic");
                }
                s.window = (w != 0).then_some(w);
            }
            "segment.offset" => s.offset = within(value, -1.0, 1.0)?,
            "segment.inset" => s.inset = within(value, 0, 1000)?,
            "segment.upper_band" => s.upper_band = within(value, 0.05, 1.0)?,
            "hand.diff_threshold" => self.hand.diff_threshold = within(value, 0.0, 1.0)?,
            "hand.open_radius" => self.hand.open_radius = within(value, 0, 100)?,
            "hand.min_column_mass" => self.hand.min_column_mass = within(value, 0, 100_000)?,
            "flow.window" => {
                let w: usize = within(value, 3, 99)?;
                if w % 2 == 0 {
                    bail!("window {w} must be odd");
                }
                self.flow.window = w;
            }
            "flow.iterations" => self.flow.iterations = within(value, 1, 1000)?,
            "flow.regularization" => self.flow.regularization = positive(value)?,
            "flow.clamp" => self.flow_clamp = positive(value)?,
            "velocity.edges" => {
                let parts: Vec<u8> = value
                    .split(',')
                    .map(|p| parse(p.trim()))
                    .collect::<Result<_>>()?;
                let edges: [u8; 4] = parts
                    .try_into()
                    .map_err(|_| anyhow!("expected four comma-separated edges"))?;
                self.bins = VelocityBins::new(edges).map_err(|e| anyhow!("{e}"))?;
            }
            "transcribe.debounce" => self.debounce = within(value, 1, 1000)?,
            "train.epochs" => self.epochs = within(value, 0, 100_000)?,
            "train.batch_size" => self.batch_size = within(value, 1, 1_000_000)?,
            "train.validation_fraction" => self.validation_fraction = within(value, 0.0, 0.99)?,
            "layout.first_key" | "layout.keys" => bail!("layout keys are only accepted in a file"),
            _ => bail!("unknown key"),
        }
        Ok(())
    }

    pub fn transcribe(&self) -> TranscribeConfig {
        TranscribeConfig {
            fps: self.fps,
            hand: self.hand,
            debounce: self.debounce,
            bins: self.bins,
            flow: self.flow,
            flow_clamp: self.flow_clamp,
        }
    }
}

fn at(line: usize, key: &str, e: anyhow::Error) -> anyhow::Error {
    anyhow!("line {}: {key}: {e}", line + 1)
}
