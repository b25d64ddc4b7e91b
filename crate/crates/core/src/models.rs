//! The six key classifiers: pressed/released, intensity from a 5-frame
//! stack, and intensity from a 5-step flow stack, each for white and black
//! keys.

use crate::features::{key_length, payload_len, FeatureKind, FEATURE_ACROSS, STACK_DEPTH};
use crate::geometry::KeyColor;
use crate::nn::{LayerSpec, LossKind, LrSchedule, NetworkSpec, TrainConfig};

pub const DROPOUT_RATE: f64 = 0.25;
pub const HIDDEN_UNITS: usize = 256;
pub const INTENSITY_LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    OnOff,
    Intensity,
    IntensityFlow,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::OnOff, Task::Intensity, Task::IntensityFlow];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::OnOff => "onoff",
            Task::Intensity => "intensity",
            Task::IntensityFlow => "intensity_flow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Task::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn feature_kind(&self) -> FeatureKind {
        match self {
            Task::OnOff => FeatureKind::Single,
            Task::Intensity => FeatureKind::Stack5,
            Task::IntensityFlow => FeatureKind::FlowStack5,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Task::OnOff => 2,
            _ => INTENSITY_LEVELS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelKind {
    pub task: Task,
    pub color: KeyColor,
}

impl ModelKind {
    pub fn new(task: Task, color: KeyColor) -> Self {
        Self { task, color }
    }

    pub fn all() -> impl Iterator<Item = ModelKind> {
        Task::ALL.into_iter().flat_map(|task| {
            [KeyColor::White, KeyColor::Black]
                .into_iter()
                .map(move |color| ModelKind { task, color })
        })
    }

    pub fn input_len(&self) -> usize {
        payload_len(self.color, self.task.feature_kind())
    }

    /// The kind whose input length is `len`; the six lengths are distinct.
    pub fn from_input_len(len: usize) -> Option<Self> {
        Self::all().find(|k| k.input_len() == len)
    }

    pub fn name(&self) -> String {
        format!("{}_{}", self.task.as_str(), self.color.as_str())
    }
}

/// Reshaped input, `[10, along, 1]` or `[5, 10, along, 1]`; flow steps are
/// twice as long since u and v sit side by side.
fn input_shape(kind: ModelKind) -> Vec<usize> {
    let len = key_length(kind.color);
    match kind.task {
        Task::OnOff => vec![FEATURE_ACROSS, len, 1],
        Task::Intensity => vec![STACK_DEPTH, FEATURE_ACROSS, len, 1],
        Task::IntensityFlow => vec![STACK_DEPTH, FEATURE_ACROSS, 2 * len, 1],
    }
}

pub fn build(kind: ModelKind) -> NetworkSpec {
    let shape = input_shape(kind);
    let mut layers = Vec::new();
    let first_in = if kind.task == Task::OnOff {
        1
    } else {
        layers.push(LayerSpec::conv3d(STACK_DEPTH, 16));
        16
    };
    let (h, w) = {
        let s = &shape[shape.len() - 3..];
        (s[0], s[1])
    };
    let pooled_twice = |n: usize| n.div_ceil(2).div_ceil(2);
    layers.extend([
        LayerSpec::conv2d(first_in, 16),
        LayerSpec::relu(),
        LayerSpec::pool(DROPOUT_RATE),
        LayerSpec::conv2d(16, 32),
        LayerSpec::relu(),
        LayerSpec::pool(DROPOUT_RATE),
        LayerSpec::flatten(),
        LayerSpec::dense(pooled_twice(h) * pooled_twice(w) * 32, HIDDEN_UNITS),
        LayerSpec::relu(),
        LayerSpec::dense(HIDDEN_UNITS, kind.task.n_classes()),
    ]);
    NetworkSpec {
        input_shape: shape,
        layers,
    }
}

pub fn recipe(kind: ModelKind) -> TrainConfig {
    match kind.task {
        Task::OnOff => TrainConfig {
            loss: LossKind::Focal,
            epochs: 30,
            lr_schedule: LrSchedule::linear(1e-3, 1e-4, 30),
            ..TrainConfig::default()
        },
        Task::Intensity | Task::IntensityFlow => TrainConfig {
            loss: LossKind::LabelDistribution,
            epochs: 15,
            lr_schedule: LrSchedule::constant(1e-3),
            ..TrainConfig::default()
        },
    }
}
