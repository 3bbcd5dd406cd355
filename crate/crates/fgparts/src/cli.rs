//! The `synth` / `train` / `parts` / `eval` commands behind the binary.
//!
//! Long-running options live in a plain-text key=value config file;
//! command-line `--set key=value` overrides win over file entries. Every
//! command writes its fully resolved configuration next to its outputs, so
//! re-running with that file reproduces them bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{load_image, resize_bilinear, write_image, Image};
use crate::pipeline::{
    estimate_parts_detailed, evaluate, load_pipeline, save_pipeline, train_pipeline_logged,
    EvalOptions, PipelineConfig, SaliencyChannels,
};
use crate::sparse_linear::sparsity_report;
use crate::synthgen::{generate, load_dataset, write_dataset, SynthConfig};

/// Keys owned by the dataset generator.
const SYNTH_KEYS: [&str; 6] = [
    "num_classes",
    "train_per_class",
    "test_per_class",
    "image_size",
    "glyph_size",
    "clutter_density",
];

/// Keys owned by the pipeline config (see `PipelineConfig::apply_key`).
const PIPELINE_KEYS: [&str; 16] = [
    "batch_size",
    "box_quantile",
    "epochs",
    "feature_weights",
    "feature_dim",
    "input_channels",
    "input_h",
    "input_w",
    "k",
    "lambda_l1",
    "lambda_l2",
    "learning_rate",
    "nms_radius",
    "seed",
    "threshold",
    "train_ablation",
];

const IO_KEYS: [&str; 2] = ["out_dir", "dataset_dir"];

/// A resolved key=value run configuration. Unknown keys are rejected at
/// insertion time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig::default()
    }

    /// Parses a config file: one `key=value` per line, `#` comments and
    /// blank lines allowed.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key, rejecting names no command understands.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let known = SYNTH_KEYS.contains(&key)
            || PIPELINE_KEYS.contains(&key)
            || IO_KEYS.contains(&key);
        if !known {
            return Err(Error::config(format!("unknown config key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `KEY=VALUE` override strings.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override {item:?} is not KEY=VALUE")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(format!("missing required config key {key:?}")))
    }

    /// The generator config described by this run config.
    pub fn synth_config(&self) -> Result<SynthConfig> {
        let d = SynthConfig::default();
        Ok(SynthConfig {
            num_classes: self.parsed("num_classes", d.num_classes)?,
            train_per_class: self.parsed("train_per_class", d.train_per_class)?,
            test_per_class: self.parsed("test_per_class", d.test_per_class)?,
            image_size: self.parsed("image_size", d.image_size)?,
            glyph_size: self.parsed("glyph_size", d.glyph_size)?,
            clutter_density: self.parsed("clutter_density", d.clutter_density)?,
            seed: self.parsed("seed", d.seed)?,
        })
    }

    /// The pipeline config described by this run config.
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        for (key, value) in &self.entries {
            if PIPELINE_KEYS.contains(&key.as_str()) {
                cfg.apply_key(key, value)?;
            }
        }
        Ok(cfg)
    }

    /// Writes every resolved key in sorted order.
    pub fn write_resolved(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(&format!("{k}={v}\n"));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Fills in the full effective key set for reproducibility artifacts:
    /// synth keys, pipeline keys, and io keys that apply to this run.
    fn resolve_for(&self, synth: Option<&SynthConfig>, pipeline: Option<&PipelineConfig>) -> Self {
        let mut resolved = self.clone();
        if let Some(s) = synth {
            let pairs = [
                ("num_classes", s.num_classes.to_string()),
                ("train_per_class", s.train_per_class.to_string()),
                ("test_per_class", s.test_per_class.to_string()),
                ("image_size", s.image_size.to_string()),
                ("glyph_size", s.glyph_size.to_string()),
                ("clutter_density", s.clutter_density.to_string()),
                ("seed", s.seed.to_string()),
            ];
            for (k, v) in pairs {
                resolved.entries.insert(k.into(), v);
            }
        }
        if let Some(p) = pipeline {
            for (k, v) in p.to_key_values() {
                resolved.entries.insert(k, v);
            }
        }
        resolved
    }
}

/// Generates a dataset directory from the synth keys.
pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let out_dir = PathBuf::from(cfg.require("out_dir")?);
    let synth = cfg.synth_config()?;
    let (train, test) = generate(&synth)?;
    write_dataset(&out_dir, &train, &test)?;
    cfg.resolve_for(Some(&synth), None)
        .write_resolved(out_dir.join("run_config.txt"))?;
    println!(
        "wrote {} train and {} test images to {}",
        train.len(),
        test.len(),
        out_dir.display()
    );
    Ok(out_dir)
}

/// Trains a pipeline and writes the model bundle. The dataset comes from
/// `dataset_dir` when set, otherwise it is generated from the synth keys.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let out_dir = PathBuf::from(cfg.require("out_dir")?);
    let pipeline_cfg = cfg.pipeline_config()?;
    let (train, synth_used) = match cfg.get("dataset_dir") {
        Some(dir) => {
            let (train, _) = load_dataset(dir)?;
            (train, None)
        }
        None => {
            let synth = cfg.synth_config()?;
            let (train, _) = generate(&synth)?;
            (train, Some(synth))
        }
    };
    let samples: Vec<(Image, usize)> = train
        .into_iter()
        .map(|r| resize_to_input(r.image, &pipeline_cfg).map(|img| (img, r.label)))
        .collect::<Result<_>>()?;

    let model = train_pipeline_logged(&samples, &pipeline_cfg, &mut |stage, dt| {
        println!("stage {stage}: {:.2}s", dt.as_secs_f64());
    })?;
    save_pipeline(&model, &out_dir)?;
    cfg.resolve_for(synth_used.as_ref(), Some(&pipeline_cfg))
        .write_resolved(out_dir.join("run_config.txt"))?;

    print!("{}", sparsity_report(&model.selection));
    println!("model bundle written to {}", out_dir.display());
    Ok(out_dir)
}

/// Estimates parts for one image: writes `boxes.csv`, the normalized
/// saliency map as `saliency.pgm`, and `overlay.ppm` with the boxes drawn.
pub fn cmd_parts(model_dir: &Path, image_path: &Path, out_dir: &Path) -> Result<()> {
    let model = load_pipeline(model_dir)?;
    let raw = load_image(image_path)?;
    let img = resize_to_input(raw, &model.config)?;
    let estimate = estimate_parts_detailed(&img, &model, SaliencyChannels::Selected)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let image_id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let mut csv = String::from("image,rank,x0,y0,x1,y1,recall\n");
    for b in &estimate.boxes {
        csv.push_str(&format!(
            "{image_id},{},{},{},{},{},{}\n",
            b.rank, b.x0, b.y0, b.x1, b.y1, b.recall
        ));
    }
    let path = out_dir.join("boxes.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;

    if let Some(sal) = &estimate.saliency {
        sal.write_pgm(out_dir.join("saliency.pgm"))?;
    }
    write_image(out_dir.join("overlay.ppm"), &draw_overlay(&img, &estimate.boxes))?;

    let mut resolved = RunConfig::new();
    for (k, v) in model.config.to_key_values() {
        resolved.entries.insert(k, v);
    }
    resolved.write_resolved(out_dir.join("run_config.txt"))?;
    println!(
        "initial class {}, {} boxes -> {}",
        estimate.initial_class,
        estimate.boxes.len(),
        out_dir.display()
    );
    Ok(())
}

/// Which classifier variants `eval` writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalVariants {
    pub baseline: bool,
    pub no_selection: bool,
}

impl Default for EvalVariants {
    fn default() -> Self {
        EvalVariants {
            baseline: true,
            no_selection: true,
        }
    }
}

impl std::str::FromStr for EvalVariants {
    type Err = Error;

    /// Comma-separated subset of `baseline`, `nofs`, `fs` (fs always runs).
    fn from_str(s: &str) -> Result<Self> {
        let mut v = EvalVariants {
            baseline: false,
            no_selection: false,
        };
        for item in s.split(',') {
            match item.trim() {
                "fs" | "" => {}
                "baseline" => v.baseline = true,
                "nofs" => v.no_selection = true,
                other => {
                    return Err(Error::config(format!(
                        "unknown variant {other:?}; expected baseline, nofs or fs"
                    )))
                }
            }
        }
        Ok(v)
    }
}

/// Evaluates a model bundle over a dataset's test split and writes the
/// report files.
pub fn cmd_eval(
    model_dir: &Path,
    dataset_dir: &Path,
    out_dir: &Path,
    variants: EvalVariants,
) -> Result<()> {
    let model = load_pipeline(model_dir)?;
    let (_, test) = load_dataset(dataset_dir)?;
    let samples: Vec<(Image, usize)> = test
        .into_iter()
        .map(|r| resize_to_input(r.image, &model.config).map(|img| (img, r.label)))
        .collect::<Result<_>>()?;
    let opts = EvalOptions {
        baseline: variants.baseline,
        ablation: variants.no_selection,
    };
    let report = evaluate(&samples, &model, &opts)?;
    report.write_files(out_dir)?;

    let mut resolved = RunConfig::new();
    for (k, v) in model.config.to_key_values() {
        resolved.entries.insert(k, v);
    }
    resolved.write_resolved(out_dir.join("run_config.txt"))?;

    println!("with_selection accuracy: {:.4}", report.with_selection.accuracy);
    if let Some(b) = &report.baseline {
        println!("baseline accuracy:       {:.4}", b.accuracy);
    }
    if let Some(n) = &report.no_selection {
        println!("no_selection accuracy:   {:.4}", n.accuracy);
    }
    println!("report written to {}", out_dir.display());
    Ok(())
}

fn resize_to_input(img: Image, cfg: &PipelineConfig) -> Result<Image> {
    let (h, w) = cfg.input_size;
    if (img.height(), img.width()) == (h, w) {
        Ok(img)
    } else {
        resize_bilinear(&img, h, w)
    }
}

/// Copies the image and burns in box outlines, one palette color per rank.
fn draw_overlay(img: &Image, boxes: &[crate::parts::PartBox]) -> Image {
    const COLORS: [[f32; 3]; 4] = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.4, 1.0],
        [1.0, 1.0, 0.0],
    ];
    let (h, w) = (img.height(), img.width());
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let px = img.rgb(y, x);
            data.extend_from_slice(&px);
        }
    }
    for b in boxes {
        let color = COLORS[(b.rank - 1) % COLORS.len()];
        let mut put = |x: usize, y: usize| {
            let i = (y * w + x) * 3;
            data[i..i + 3].copy_from_slice(&color);
        };
        for x in b.x0..=b.x1 {
            put(x, b.y0);
            put(x, b.y1);
        }
        for y in b.y0..=b.y1 {
            put(b.x0, y);
            put(b.x1, y);
        }
    }
    Image::new(h, w, 3, data).expect("overlay pixels in range")
}
