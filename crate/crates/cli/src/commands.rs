use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pianovis::dataset::container::Dataset;
use pianovis::dataset::midi::{read_midi, write_midi};
use pianovis::dataset::synth::{random_score, RenderConfig, ScoreConfig, SynthVideo};
use pianovis::dataset::{align_with, AlignConfig};
use pianovis::geometry::{KeyColor, KeyboardLayout, LayoutSpec};
use pianovis::imaging::{read_pnm, FrameDir, FrameSource, LumaWeights};
use pianovis::models::{build, recipe, ModelKind, Task};
use pianovis::nn::{evaluate as evaluate_net, load_weights, save_weights, train as train_net};
use pianovis::pipeline::{detect_keyboard, transcribe as run_transcribe, TranscribeModels};

use crate::config::PipelineConfig;
use crate::{ColorArg, DetectArgs, EvaluateArgs, ExtractArgs, SynthArgs, TaskArg, TrainArgs, TranscribeArgs};

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Onoff => Task::OnOff,
            TaskArg::Intensity => Task::Intensity,
            TaskArg::IntensityFlow => Task::IntensityFlow,
        }
    }
}

impl From<ColorArg> for KeyColor {
    fn from(c: ColorArg) -> Self {
        match c {
            ColorArg::White => KeyColor::White,
            ColorArg::Black => KeyColor::Black,
        }
    }
}

fn open_frames(dir: &Path) -> Result<FrameDir> {
    let frames = FrameDir::open(dir)?;
    if frames.is_empty() {
        bail!("{} holds no numbered frames", dir.display());
    }
    Ok(frames)
}

pub fn detect(a: &DetectArgs, cfg: &PipelineConfig) -> Result<()> {
    let background = if a.background.is_dir() {
        FrameDir::open(&a.background)?.background()?
    } else {
        read_pnm(&a.background, LumaWeights::default())?
    };
    let spec = LayoutSpec::new(
        a.first_key.unwrap_or(cfg.layout.first_key),
        a.keys.unwrap_or(cfg.layout.n_keys),
    )?;
    let layout = detect_keyboard(&background, &spec, &cfg.detect)?;
    layout.save(&a.out)?;
    let b = layout.bounds;
    println!(
        "keyboard at x {}..{} y {}..{}: {} white, {} black keys",
        b.x0,
        b.x1,
        b.y0,
        b.y1,
        layout.n_white(),
        layout.n_black()
    );
    Ok(())
}

/// `out` with `_white` or `_black` inserted before the extension.
fn color_path(out: &Path, color: KeyColor) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_{}.{}", color.as_str(), ext.to_string_lossy()),
        None => format!("{stem}_{}", color.as_str()),
    };
    out.with_file_name(name)
}

pub fn extract(a: &ExtractArgs, cfg: &PipelineConfig) -> Result<()> {
    let frames = open_frames(&a.frames)?;
    let layout = KeyboardLayout::load(&a.layout)?;
    let events = read_midi(&a.midi, cfg.fps)?;
    let task = Task::from(a.task);
    let mut align = AlignConfig::new(task, cfg.fps);
    align.hand = cfg.hand;
    align.flow = cfg.flow;
    align.flow_clamp = cfg.flow_clamp;
    align.bins = cfg.bins;
    align.color = a.color.map(KeyColor::from);

    let mut white = Dataset::new(task, KeyColor::White);
    let mut black = Dataset::new(task, KeyColor::Black);
    let summary = align_with(&frames, &events, &layout, &align, |r| match r.feature.color {
        KeyColor::White => white.push(r),
        KeyColor::Black => black.push(r),
    })?;

    let outputs: Vec<(&Dataset, PathBuf)> = match align.color {
        Some(KeyColor::White) => vec![(&white, a.out.clone())],
        Some(KeyColor::Black) => vec![(&black, a.out.clone())],
        None => vec![
            (&white, color_path(&a.out, KeyColor::White)),
            (&black, color_path(&a.out, KeyColor::Black)),
        ],
    };
    for (ds, path) in &outputs {
        ds.save(path)?;
        println!("wrote {} {} samples to {}", ds.len(), ds.color.as_str(), path.display());
    }
    let mut stats = white.stats();
    stats.black = black.stats().black;
    print!("{stats}");
    println!(
        "{} frames, {} samples, {} stacks skipped for incomplete history",
        summary.frames, summary.emitted, summary.skipped_incomplete
    );
    Ok(())
}

pub fn train(a: &TrainArgs, cfg: &PipelineConfig) -> Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let kind = ModelKind::new(a.model.into(), a.color.into());
    if ds.model_kind() != kind {
        bail!(
            "dataset {} holds {} {} samples with payload length {}; model {} expects payload length {}",
            a.dataset.display(),
            ds.task.as_str(),
            ds.color.as_str(),
            ds.payload_len(),
            kind.name(),
            kind.input_len()
        );
    }
    if ds.is_empty() {
        bail!("dataset {} is empty", a.dataset.display());
    }
    let mut tc = recipe(kind);
    if let Some(e) = a.epochs.filter(|&e| e > 0).or((cfg.epochs > 0).then_some(cfg.epochs)) {
        tc.epochs = e;
    }
    tc.batch_size = cfg.batch_size;
    tc.validation_fraction = cfg.validation_fraction;
    tc.seed = a.seed.unwrap_or(cfg.seed);

    let outcome = train_net(&build(kind), &ds.labeled(), &tc)?;
    save_weights(&a.out, &outcome.weights)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    for m in &outcome.history {
        let line = format!(
            "epoch {} lr {:.6} loss {:.6} accuracy {:.6} val_loss {} val_accuracy {}",
            m.epoch,
            m.lr,
            m.train_loss,
            m.train_accuracy,
            fmt(m.val_loss),
            fmt(m.val_accuracy)
        );
        writeln!(log, "{line}")?;
        println!("{line}");
    }
    log.flush()?;
    println!(
        "trained {} on {} samples ({} held out); weights in {}, log in {}",
        kind.name(),
        outcome.train_indices.len(),
        outcome.val_indices.len(),
        a.out.display(),
        log_path.display()
    );
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let weights = load_weights(&a.weights)?;
    if weights.input_len() != ds.payload_len() {
        let model = ModelKind::from_input_len(weights.input_len()).map_or("unknown".into(), |k| k.name());
        bail!(
            "weights ({model}) take payload length {}, dataset holds {} {} samples of length {}",
            weights.input_len(),
            ds.task.as_str(),
            ds.color.as_str(),
            ds.payload_len()
        );
    }
    let c = evaluate_net(&weights, &ds.labeled())?;
    println!("samples {}", c.total());
    println!("accuracy {:.6}", c.accuracy());
    println!("confusion (rows true, columns predicted)");
    let k = c.counts.len();
    print!("{:>8}", "");
    for j in 0..k {
        print!("{:>8}", format!("p{j}"));
    }
    println!("{:>10}", "recall");
    for (i, row) in c.counts.iter().enumerate() {
        print!("{:>8}", format!("t{i}"));
        for v in row {
            print!("{v:>8}");
        }
        println!("{:>10.4}", c.recall(i));
    }
    Ok(())
}

pub fn transcribe(a: &TranscribeArgs, cfg: &PipelineConfig) -> Result<()> {
    let frames = open_frames(&a.frames)?;
    let layout = KeyboardLayout::load(&a.layout)?;
    let load = |p: &PathBuf| load_weights(p).with_context(|| format!("loading {}", p.display()));
    let models = TranscribeModels::new(
        load(&a.weights_onoff[0])?,
        load(&a.weights_onoff[1])?,
        load(&a.weights_intensity[0])?,
        load(&a.weights_intensity[1])?,
    )?;
    let mut tc = cfg.transcribe();
    if a.no_debounce {
        tc.debounce = 1;
    }
    let out = run_transcribe(&frames, &layout, &models, &tc)?;
    write_midi(&a.out, &out.events, cfg.fps)?;
    println!(
        "{} frames, {} notes written to {}",
        frames.frame_count(),
        out.events.len(),
        a.out.display()
    );
    if out.velocity_defaulted > 0 {
        println!("{} notes ended before a full stack window; given the middle intensity", out.velocity_defaulted);
    }
    Ok(())
}

pub fn synth(a: &SynthArgs, cfg: &PipelineConfig) -> Result<()> {
    let spec = LayoutSpec::new(a.first_key, a.keys)?;
    let mut render = RenderConfig::for_layout(spec, a.white_width, a.key_height);
    render.noise_sigma = a.noise;
    render.fps = cfg.fps;
    render.bins = cfg.bins;
    let score = random_score(
        &render,
        &ScoreConfig {
            n_notes: a.notes,
            color: a.color.map(KeyColor::from),
            ..ScoreConfig::default()
        },
        a.seed,
    )?;
    let video = SynthVideo::new(render, &score, None, a.seed)?;
    video.write(&a.frames)?;
    write_midi(&a.midi, video.events(), cfg.fps)?;
    if let Some(path) = &a.layout {
        video.truth_layout().save(path)?;
    }
    println!(
        "{} frames, {} notes, {} keys from note {}",
        video.len(),
        video.events().len(),
        spec.n_keys,
        spec.first_key
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pianovis::features::payload_len;

    #[test]
    fn color_paths() {
        assert_eq!(color_path(Path::new("a/b.ds"), KeyColor::White), PathBuf::from("a/b_white.ds"));
        assert_eq!(color_path(Path::new("out"), KeyColor::Black), PathBuf::from("out_black"));
    }

    #[test]
    fn payload_lengths_are_distinct() {
        let mut lens: Vec<usize> = ModelKind::all().map(|k| payload_len(k.color, k.task.feature_kind())).collect();
        lens.sort_unstable();
        lens.dedup();
        assert_eq!(lens.len(), 6);
    }
}
