//! The end-to-end flow: train the extractor, fit the L1 selection model on
//! global features, estimate class-specific parts from selected-channel
//! saliency, extract part features, and classify with an L2 model over the
//! concatenated vector. Also the evaluation report with its file formats.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::backbone::{
    self, forward, input_gradients, load_backbone, save_backbone, BackboneParams, FeatureVector,
    TrainConfig,
};
use crate::error::{Error, Result};
use crate::grid::{resize_bilinear, write_image, Image};
use crate::parts::{
    boxes_from_clusters, cluster_pixels_weighted, default_nms_radius, find_peaks, FeatureWeights,
    PartBox,
};
use crate::saliency::{compute_saliency, normalize, threshold, ThresholdMethod};
use crate::sparse_linear::{
    fit_ovr, load_linear_model, predict, save_linear_model, selected_channels, LinearModel,
    Regularization, SolverConfig,
};

/// Which feature channels drive the saliency map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaliencyChannels {
    /// The channels the L1 model selected for the predicted class.
    Selected,
    /// Every channel; the feature-selection ablation.
    All,
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Number of parts to estimate.
    pub k: usize,
    pub feature_dim: usize,
    pub input_size: (usize, usize),
    pub input_channels: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    /// L1 strength for the selection model.
    pub lambda_l1: f32,
    /// L2 strength for the final classifier.
    pub lambda_l2: f32,
    pub threshold_method: ThresholdMethod,
    /// Suppression radius; `None` derives it from the image side.
    pub nms_radius: Option<usize>,
    /// Saliency-mass quantile for box fitting.
    pub box_quantile: f64,
    pub feature_weights: FeatureWeights,
    pub seed: u64,
    /// Also fit the all-channels final classifier for the ablation.
    pub train_ablation: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 4,
            feature_dim: 64,
            input_size: (64, 64),
            input_channels: 3,
            epochs: 10,
            learning_rate: 0.05,
            batch_size: 16,
            lambda_l1: 0.1,
            lambda_l2: 1e-3,
            threshold_method: ThresholdMethod::Mean,
            nms_radius: None,
            box_quantile: 1.0,
            feature_weights: [1.0; 6],
            seed: 0,
            train_ablation: true,
        }
    }
}

impl PipelineConfig {
    pub fn nms_radius_for(&self, h: usize, w: usize) -> usize {
        self.nms_radius.unwrap_or_else(|| default_nms_radius(h, w))
    }

    /// Key=value snapshot in fixed key order.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let w = self.feature_weights;
        vec![
            ("batch_size".into(), self.batch_size.to_string()),
            ("box_quantile".into(), self.box_quantile.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            (
                "feature_weights".into(),
                format!("{},{},{},{},{},{}", w[0], w[1], w[2], w[3], w[4], w[5]),
            ),
            ("feature_dim".into(), self.feature_dim.to_string()),
            ("input_channels".into(), self.input_channels.to_string()),
            ("input_h".into(), self.input_size.0.to_string()),
            ("input_w".into(), self.input_size.1.to_string()),
            ("k".into(), self.k.to_string()),
            ("lambda_l1".into(), self.lambda_l1.to_string()),
            ("lambda_l2".into(), self.lambda_l2.to_string()),
            ("learning_rate".into(), self.learning_rate.to_string()),
            (
                "nms_radius".into(),
                self.nms_radius.map_or("auto".into(), |r| r.to_string()),
            ),
            ("seed".into(), self.seed.to_string()),
            ("threshold".into(), self.threshold_method.to_string()),
            ("train_ablation".into(), self.train_ablation.to_string()),
        ]
    }

    /// Rebuilds a config from `to_key_values` output; unknown keys are
    /// rejected.
    pub fn from_key_values<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (key, value) in pairs {
            cfg.apply_key(key, value)?;
        }
        Ok(cfg)
    }

    /// Sets one field from its key=value form.
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "batch_size" => self.batch_size = num(key, value)?,
            "box_quantile" => self.box_quantile = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "feature_dim" => self.feature_dim = num(key, value)?,
            "feature_weights" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 6 {
                    return Err(Error::config("feature_weights: expected 6 comma-separated values"));
                }
                for (i, p) in parts.iter().enumerate() {
                    self.feature_weights[i] = num(key, p)?;
                }
            }
            "input_channels" => self.input_channels = num(key, value)?,
            "input_h" => self.input_size.0 = num(key, value)?,
            "input_w" => self.input_size.1 = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "lambda_l1" => self.lambda_l1 = num(key, value)?,
            "lambda_l2" => self.lambda_l2 = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "nms_radius" => {
                self.nms_radius = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "seed" => self.seed = num(key, value)?,
            "threshold" => self.threshold_method = value.parse()?,
            "train_ablation" => self.train_ablation = num(key, value)?,
            other => return Err(Error::config(format!("unknown pipeline key {other:?}"))),
        }
        Ok(())
    }
}

/// A trained pipeline: extractor, selection model, final classifier(s).
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub backbone: BackboneParams,
    /// L1 one-vs-rest model over global features; defines the selected
    /// channel sets and the initial prediction.
    pub selection: LinearModel,
    /// L2 model over `(k + 1) * D` concatenated features.
    pub final_model: LinearModel,
    /// Final classifier for the all-channels ablation, when trained.
    pub ablation_model: Option<LinearModel>,
    pub k: usize,
    pub config: PipelineConfig,
}

impl PipelineModel {
    fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }
}

/// Everything [`estimate_parts`] derives for one image.
#[derive(Debug, Clone)]
pub struct PartEstimate {
    pub initial_class: usize,
    /// The normalized saliency map, when any channel was selected.
    pub saliency: Option<crate::saliency::SaliencyMap>,
    pub boxes: Vec<PartBox>,
}

/// Initial prediction plus estimated part boxes for one image.
///
/// Returns an empty box list when the selected channel set is empty or no
/// pixels survive thresholding; classification then falls back to the
/// zero-padded part slots.
pub fn estimate_parts(img: &Image, model: &PipelineModel) -> Result<(usize, Vec<PartBox>)> {
    estimate_parts_with(img, model, SaliencyChannels::Selected)
}

/// [`estimate_parts`] with an explicit choice of saliency channels.
pub fn estimate_parts_with(
    img: &Image,
    model: &PipelineModel,
    channels: SaliencyChannels,
) -> Result<(usize, Vec<PartBox>)> {
    estimate_parts_detailed(img, model, channels).map(|e| (e.initial_class, e.boxes))
}

/// [`estimate_parts_with`], also exposing the saliency map for inspection.
pub fn estimate_parts_detailed(
    img: &Image,
    model: &PipelineModel,
    channels: SaliencyChannels,
) -> Result<PartEstimate> {
    let (_, global) = forward(img, &model.backbone)?;
    let (initial_class, _) = predict(&model.selection, &global)?;
    let selected: Vec<usize> = match channels {
        SaliencyChannels::Selected => selected_channels(&model.selection, initial_class)?.channels,
        SaliencyChannels::All => (0..model.feature_dim()).collect(),
    };
    if selected.is_empty() {
        return Ok(PartEstimate {
            initial_class,
            saliency: None,
            boxes: Vec::new(),
        });
    }
    let grads = input_gradients(img, &model.backbone, &selected)?;
    let sal = normalize(&compute_saliency(&grads)?);
    let sparse = threshold(&sal, model.config.threshold_method)?;
    let mut estimate = PartEstimate {
        initial_class,
        saliency: Some(sal),
        boxes: Vec::new(),
    };
    if sparse.is_empty() {
        return Ok(estimate);
    }
    let radius = model.config.nms_radius_for(img.height(), img.width());
    let peaks = find_peaks(&sparse, model.k, radius)?;
    if peaks.is_empty() {
        return Ok(estimate);
    }
    let (assignment, _) =
        cluster_pixels_weighted(&sparse, img, &peaks, &model.config.feature_weights)?;
    estimate.boxes = boxes_from_clusters(&assignment, model.config.box_quantile)?;
    Ok(estimate)
}

/// Concatenates the global feature with per-part features (ascending part
/// rank); missing parts are zero-padded so the result always has dimension
/// `(k + 1) * D`.
pub fn extract_part_features(
    img: &Image,
    boxes: &[PartBox],
    model: &PipelineModel,
) -> Result<FeatureVector> {
    if boxes.len() > model.k {
        return Err(Error::invalid(format!(
            "{} boxes exceed the configured part count {}",
            boxes.len(),
            model.k
        )));
    }
    let d = model.feature_dim();
    let (_, global) = forward(img, &model.backbone)?;
    let mut data = Vec::with_capacity((model.k + 1) * d);
    data.extend_from_slice(global.data());
    let mut ordered: Vec<&PartBox> = boxes.iter().collect();
    ordered.sort_by_key(|b| b.rank);
    let (in_h, in_w) = model.backbone.input_size();
    for b in ordered {
        let crop = img.crop(b.x0, b.y0, b.x1, b.y1)?;
        let resized = resize_bilinear(&crop, in_h, in_w)?;
        let (_, part) = forward(&resized, &model.backbone)?;
        data.extend_from_slice(part.data());
    }
    data.resize((model.k + 1) * d, 0.0);
    Ok(FeatureVector::new(data))
}

/// Trains the full pipeline. Deterministic given `cfg.seed`; any stage
/// failure is reported with the stage name.
pub fn train_pipeline(train: &[(Image, usize)], cfg: &PipelineConfig) -> Result<PipelineModel> {
    train_pipeline_logged(train, cfg, &mut |_, _| {})
}

/// [`train_pipeline`] reporting each stage's wall time to `log`.
pub fn train_pipeline_logged(
    train: &[(Image, usize)],
    cfg: &PipelineConfig,
    log: &mut dyn FnMut(&'static str, std::time::Duration),
) -> Result<PipelineModel> {
    let initial = BackboneParams::default_architecture(
        cfg.input_channels,
        cfg.feature_dim,
        cfg.input_size,
        cfg.seed,
    )
    .map_err(|e| e.in_stage("train_backbone"))?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let backbone_params = timed("train_backbone", log, || {
        backbone::train_backbone(train, &initial, &train_cfg)
    })?;

    let labels: Vec<usize> = train.iter().map(|(_, l)| *l).collect();
    let globals: Vec<FeatureVector> = timed("global_features", log, || {
        train
            .par_iter()
            .map(|(img, _)| forward(img, &backbone_params).map(|(_, f)| f))
            .collect()
    })?;

    let selection = timed("fit_selection", log, || {
        fit_ovr(
            &globals,
            &labels,
            Regularization::L1,
            cfg.lambda_l1,
            &SolverConfig::default(),
        )
    })?;

    let mut model = PipelineModel {
        backbone: backbone_params,
        final_model: placeholder_final(&selection, cfg)?,
        selection,
        ablation_model: None,
        k: cfg.k,
        config: cfg.clone(),
    };

    model.final_model = timed("fit_final", log, || {
        fit_final(train, &model, SaliencyChannels::Selected, cfg)
    })?;
    if cfg.train_ablation {
        model.ablation_model = Some(timed("fit_ablation", log, || {
            fit_final(train, &model, SaliencyChannels::All, cfg)
        })?);
    }
    Ok(model)
}

fn timed<T>(
    stage: &'static str,
    log: &mut dyn FnMut(&'static str, std::time::Duration),
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let start = std::time::Instant::now();
    let out = f().map_err(|e| e.in_stage(stage))?;
    log(stage, start.elapsed());
    Ok(out)
}

// Placeholder L2 model so part estimation can run before the real final
// model exists; replaced before train_pipeline returns.
fn placeholder_final(selection: &LinearModel, cfg: &PipelineConfig) -> Result<LinearModel> {
    let dim = (cfg.k + 1) * cfg.feature_dim;
    LinearModel::new(
        vec![vec![0.0; dim]; selection.num_classes()],
        vec![0.0; selection.num_classes()],
        Regularization::L2,
        cfg.lambda_l2,
        vec![0.0; dim],
        vec![1.0; dim],
    )
}

/// Part features for every training image (using each image's own initial
/// prediction), then an L2 fit over the concatenation.
fn fit_final(
    train: &[(Image, usize)],
    model: &PipelineModel,
    channels: SaliencyChannels,
    cfg: &PipelineConfig,
) -> Result<LinearModel> {
    let features: Vec<FeatureVector> = train
        .par_iter()
        .map(|(img, _)| {
            let (_, boxes) = estimate_parts_with(img, model, channels)?;
            extract_part_features(img, &boxes, model)
        })
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = train.iter().map(|(_, l)| *l).collect();
    fit_ovr(
        &features,
        &labels,
        Regularization::L2,
        cfg.lambda_l2,
        &SolverConfig::default(),
    )
}

/// Classifies one image through the part-based path.
pub fn classify(img: &Image, model: &PipelineModel) -> Result<(usize, Vec<f32>)> {
    let (_, boxes) = estimate_parts(img, model)?;
    let features = extract_part_features(img, &boxes, model)?;
    predict(&model.final_model, &features)
}

/// Per-image evaluation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome {
    pub label: usize,
    pub initial_class: usize,
    pub final_class: usize,
    pub boxes: Vec<PartBox>,
}

/// Accuracy, confusion matrix and per-image records for one classifier
/// variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutcome {
    pub accuracy: f64,
    /// `confusion[true_class][predicted_class]` counts.
    pub confusion: Vec<Vec<u32>>,
    pub records: Vec<ImageOutcome>,
}

impl VariantOutcome {
    fn from_records(records: Vec<ImageOutcome>, num_classes: usize) -> Self {
        let mut confusion = vec![vec![0u32; num_classes]; num_classes];
        for r in &records {
            confusion[r.label][r.final_class] += 1;
        }
        let correct: u32 = (0..num_classes).map(|c| confusion[c][c]).sum();
        VariantOutcome {
            accuracy: correct as f64 / records.len() as f64,
            confusion,
            records,
        }
    }
}

/// Which variants [`evaluate`] should include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Global-features-only prediction with the selection model.
    pub baseline: bool,
    /// All-channels saliency variant; requires a trained ablation model.
    pub ablation: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            baseline: true,
            ablation: false,
        }
    }
}

/// The full evaluation artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub num_classes: usize,
    /// The part-based classifier with feature selection.
    pub with_selection: VariantOutcome,
    /// Global-only baseline (selection model on global features).
    pub baseline: Option<VariantOutcome>,
    /// The all-channels (no feature selection) part-based variant.
    pub no_selection: Option<VariantOutcome>,
}

/// Evaluates the model over a labeled test set.
pub fn evaluate(
    test: &[(Image, usize)],
    model: &PipelineModel,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::invalid("evaluation needs at least one image"));
    }
    let num_classes = model.selection.num_classes();
    if test.iter().any(|(_, l)| *l >= num_classes) {
        return Err(Error::invalid("test label outside the trained classes"));
    }
    if opts.ablation && model.ablation_model.is_none() {
        return Err(Error::invalid(
            "ablation evaluation requires a model trained with train_ablation",
        ));
    }

    let with_selection = run_variant(test, model, SaliencyChannels::Selected, &model.final_model)?;
    let no_selection = if opts.ablation {
        let ablation_model = model.ablation_model.as_ref().unwrap();
        Some(run_variant(test, model, SaliencyChannels::All, ablation_model)?)
    } else {
        None
    };
    let baseline = if opts.baseline {
        let records: Vec<ImageOutcome> = test
            .par_iter()
            .map(|(img, label)| {
                let (_, global) = forward(img, &model.backbone)?;
                let (class, _) = predict(&model.selection, &global)?;
                Ok(ImageOutcome {
                    label: *label,
                    initial_class: class,
                    final_class: class,
                    boxes: Vec::new(),
                })
            })
            .collect::<Result<_>>()?;
        Some(VariantOutcome::from_records(records, num_classes))
    } else {
        None
    };
    Ok(EvalReport {
        num_classes,
        with_selection,
        baseline,
        no_selection,
    })
}

fn run_variant(
    test: &[(Image, usize)],
    model: &PipelineModel,
    channels: SaliencyChannels,
    final_model: &LinearModel,
) -> Result<VariantOutcome> {
    let records: Vec<ImageOutcome> = test
        .par_iter()
        .map(|(img, label)| {
            let (initial, boxes) = estimate_parts_with(img, model, channels)?;
            let features = extract_part_features(img, &boxes, model)?;
            let (final_class, _) = predict(final_model, &features)?;
            Ok(ImageOutcome {
                label: *label,
                initial_class: initial,
                final_class,
                boxes,
            })
        })
        .collect::<Result<_>>()?;
    Ok(VariantOutcome::from_records(records, model.selection.num_classes()))
}

// --- model bundle and report files ---------------------------------------

const BUNDLE_FILES: [&str; 6] = [
    "backbone.arch",
    "backbone.tensor",
    "selection.meta",
    "selection.tensor",
    "final.meta",
    "final.tensor",
];

/// Writes the model bundle directory: backbone descriptor and weights,
/// both linear models, optional ablation model, and the config snapshot.
pub fn save_pipeline(model: &PipelineModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_backbone(
        &model.backbone,
        dir.join("backbone.arch"),
        dir.join("backbone.tensor"),
    )?;
    save_linear_model(
        &model.selection,
        dir.join("selection.tensor"),
        dir.join("selection.meta"),
    )?;
    save_linear_model(
        &model.final_model,
        dir.join("final.tensor"),
        dir.join("final.meta"),
    )?;
    if let Some(ablation) = &model.ablation_model {
        save_linear_model(
            ablation,
            dir.join("ablation.tensor"),
            dir.join("ablation.meta"),
        )?;
    }
    let mut snapshot = String::new();
    for (k, v) in model.config.to_key_values() {
        snapshot.push_str(&format!("{k}={v}\n"));
    }
    let path = dir.join("config.txt");
    fs::write(&path, snapshot).map_err(|e| Error::io(&path, e))
}

/// Loads a bundle written by [`save_pipeline`].
pub fn load_pipeline(dir: impl AsRef<Path>) -> Result<PipelineModel> {
    let dir = dir.as_ref();
    for name in BUNDLE_FILES {
        if !dir.join(name).exists() {
            return Err(Error::format(format!(
                "model bundle {} is missing {name}",
                dir.display()
            )));
        }
    }
    let backbone = load_backbone(dir.join("backbone.arch"), dir.join("backbone.tensor"))?;
    let selection = load_linear_model(dir.join("selection.tensor"), dir.join("selection.meta"))?;
    let final_model = load_linear_model(dir.join("final.tensor"), dir.join("final.meta"))?;
    let ablation_model = if dir.join("ablation.tensor").exists() {
        Some(load_linear_model(
            dir.join("ablation.tensor"),
            dir.join("ablation.meta"),
        )?)
    } else {
        None
    };
    let path = dir.join("config.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let pairs: Vec<(&str, &str)> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .ok_or_else(|| Error::format(format!("config.txt: bad line {l:?}")))
        })
        .collect::<Result<_>>()?;
    let config = PipelineConfig::from_key_values(pairs)?;
    Ok(PipelineModel {
        backbone,
        selection,
        final_model,
        ablation_model,
        k: config.k,
        config,
    })
}

impl EvalReport {
    /// Writes the report files into `dir`: `summary.txt`, per-variant
    /// confusion matrices and record/box CSVs, and a log-scaled PGM
    /// rendering of each confusion matrix.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut summary = String::new();
        summary.push_str(&format!(
            "with_selection_accuracy={}\n",
            self.with_selection.accuracy
        ));
        if let Some(b) = &self.baseline {
            summary.push_str(&format!("baseline_accuracy={}\n", b.accuracy));
        }
        if let Some(n) = &self.no_selection {
            summary.push_str(&format!("no_selection_accuracy={}\n", n.accuracy));
        }
        let path = dir.join("summary.txt");
        fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;

        self.write_variant(dir, "fs", &self.with_selection)?;
        if let Some(b) = &self.baseline {
            self.write_variant(dir, "baseline", b)?;
        }
        if let Some(n) = &self.no_selection {
            self.write_variant(dir, "nofs", n)?;
        }
        Ok(())
    }

    fn write_variant(&self, dir: &Path, tag: &str, v: &VariantOutcome) -> Result<()> {
        // Confusion matrix, raw counts.
        let mut csv = String::new();
        for row in &v.confusion {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        let path = dir.join(format!("confusion_{tag}.csv"));
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;

        // Per-image records and box lines.
        let mut records = String::from("image,label,initial,final\n");
        let mut boxes = String::from("image,rank,x0,y0,x1,y1,recall\n");
        for (i, r) in v.records.iter().enumerate() {
            records.push_str(&format!(
                "{i},{},{},{}\n",
                r.label, r.initial_class, r.final_class
            ));
            for b in &r.boxes {
                boxes.push_str(&format!(
                    "{i},{},{},{},{},{},{}\n",
                    b.rank, b.x0, b.y0, b.x1, b.y1, b.recall
                ));
            }
        }
        let path = dir.join(format!("records_{tag}.csv"));
        fs::write(&path, records).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(format!("boxes_{tag}.csv"));
        fs::write(&path, boxes).map_err(|e| Error::io(&path, e))?;

        // Display-only log scaling; the CSV above stays raw.
        let max = v.confusion.iter().flatten().cloned().max().unwrap_or(0);
        let denom = (1.0 + max as f64).ln().max(f64::MIN_POSITIVE);
        let pixels: Vec<f32> = v
            .confusion
            .iter()
            .flatten()
            .map(|&c| {
                let v = (1.0 + c as f64).ln() / denom;
                ((v * 255.0).round() / 255.0) as f32
            })
            .collect();
        let img = Image::new(self.num_classes, self.num_classes, 1, pixels)?;
        write_image(dir.join(format!("confusion_{tag}.pgm")), &img)
    }
}
