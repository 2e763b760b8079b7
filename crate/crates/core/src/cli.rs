//! The command layer behind the `wfdl` binary: train, eval, reconstruct,
//! filter, synth. Everything here is a plain function over a config so
//! the commands are testable without spawning a process, and every
//! command is deterministic given its config and seed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::data::{
    self, batches, decode_image, load_dataset, preprocess, synth_dataset, SynthConfig,
};
use crate::loss::{loss_and_gradient, LossConfig};
use crate::model::{AutoencoderParams, ModelConfig};
use crate::optim::{radam_init, radam_step, RAdamHyper};
use crate::scoring::{anomaly_score, rescale_for_display, residual_map, EvalReport, ScoredSample};
use crate::spectral::{dft2, idft2, radial_filter, spectrum_image, FilterSpec};
use crate::types::{Image, RealMatrix};
use crate::{Error, Result};

/// Full training-run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub image_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub optimizer: RAdamHyper,
    pub seed: u64,
    pub checkpoint_path: PathBuf,
    pub dataset_root: PathBuf,
    pub category: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            image_size: 256,
            epochs: 2000,
            batch_size: 64,
            loss: LossConfig::default(),
            optimizer: RAdamHyper::default(),
            seed: 0,
            checkpoint_path: PathBuf::from("model.ckpt"),
            dataset_root: PathBuf::from("."),
            category: String::from("synthetic"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch size must be positive".into(),
            ));
        }
        ModelConfig::for_input_size(self.image_size)?;
        self.optimizer.validate()
    }

    /// Merge `key = value` lines from a flat config file; later CLI flag
    /// overrides are applied on top by the binary.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key = value", path.display(), lineno + 1))
            })?;
            self.set_key(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        }
        Ok(())
    }

    fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad_num = |e: std::num::ParseIntError| Error::Config(format!("bad integer: {e}"));
        let bad_float = |e: std::num::ParseFloatError| Error::Config(format!("bad number: {e}"));
        match key {
            "image_size" => self.image_size = value.parse().map_err(bad_num)?,
            "epochs" => self.epochs = value.parse().map_err(bad_num)?,
            "batch_size" => self.batch_size = value.parse().map_err(bad_num)?,
            "seed" => self.seed = value.parse().map_err(bad_num)?,
            "loss" => self.loss.kind = value.parse()?,
            "weight_mode" => self.loss.weight_mode = value.parse()?,
            "checkpoint" => self.checkpoint_path = PathBuf::from(value),
            "dataset_root" => self.dataset_root = PathBuf::from(value),
            "category" => self.category = value.to_string(),
            "learning_rate" => self.optimizer.learning_rate = value.parse().map_err(bad_float)?,
            "beta1" => self.optimizer.beta1 = value.parse().map_err(bad_float)?,
            "beta2" => self.optimizer.beta2 = value.parse().map_err(bad_float)?,
            "weight_decay" => self.optimizer.weight_decay = value.parse().map_err(bad_float)?,
            "epsilon" => self.optimizer.epsilon = value.parse().map_err(bad_float)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Metrics land next to the checkpoint: `model.ckpt` -> `model.metrics.csv`.
    pub fn metrics_path(&self) -> PathBuf {
        self.checkpoint_path.with_extension("metrics.csv")
    }
}

/// One finished epoch. Wall-clock time stays in memory (and on the
/// console); the metrics file records only the deterministic columns so
/// identical runs produce identical files.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

/// Train on the `train/good` images of a category and write the
/// checkpoint plus a line-per-epoch metrics file.
pub fn cmd_train(config: &RunConfig) -> Result<MetricsLog> {
    config.validate()?;
    let split = load_dataset(&config.dataset_root, &config.category, config.image_size)?;
    if split.train_normal.is_empty() {
        return Err(Error::DatasetLayout {
            path: config.dataset_root.join(&config.category),
            reason: "no readable training images".into(),
        });
    }
    train_on_images(config, &split.train_normal)
}

/// The training loop itself, shared by [`cmd_train`] and the tests that
/// drive training on in-memory datasets.
pub fn train_on_images(config: &RunConfig, train_images: &[Image]) -> Result<MetricsLog> {
    config.validate()?;
    let model_config = ModelConfig::for_input_size(config.image_size)?;
    let mut model = AutoencoderParams::init(&model_config, config.seed)?;
    let mut flat = model.flatten();
    let mut opt_state = radam_init(flat.len());

    let metrics_path = config.metrics_path();
    let mut metrics_file = std::fs::File::create(&metrics_path).map_err(|source| Error::Io {
        path: metrics_path.clone(),
        source,
    })?;
    writeln!(metrics_file, "epoch,mean_loss").map_err(|source| Error::Io {
        path: metrics_path.clone(),
        source,
    })?;

    let mut log = MetricsLog::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let epoch_seed = data::stream_seed(config.seed, 3, epoch);
        let mut loss_sum = 0.0;
        let mut sample_count = 0usize;
        for batch in batches(train_images, config.batch_size, epoch_seed)? {
            let owned: Vec<Image> = batch.iter().map(|&img| img.clone()).collect();
            let (recons, cache) = model.forward(&owned)?;
            let scale = 1.0 / owned.len() as f64;
            let per_image: Vec<(f64, crate::types::GradientImage)> = owned
                .par_iter()
                .zip(recons.par_iter())
                .map(|(input, recon)| loss_and_gradient(input, recon, &config.loss))
                .collect::<Result<_>>()?;
            let mut upstream = Vec::with_capacity(per_image.len());
            for (value, grad) in per_image {
                if !value.is_finite() {
                    return Err(Error::TrainingFault(format!(
                        "non-finite loss {value} at epoch {epoch}"
                    )));
                }
                loss_sum += value;
                sample_count += 1;
                upstream.push(grad.scaled(scale));
            }
            let grads = model.backward(&cache, &upstream)?;
            radam_step(&mut opt_state, &mut flat, &grads.flatten(), &config.optimizer)?;
            model.load_flat(&flat)?;
        }
        let mean_loss = loss_sum / sample_count as f64;
        let seconds = start.elapsed().as_secs_f64();
        writeln!(metrics_file, "{epoch},{mean_loss:.12e}").map_err(|source| Error::Io {
            path: metrics_path.clone(),
            source,
        })?;
        metrics_file.flush().map_err(|source| Error::Io {
            path: metrics_path.clone(),
            source,
        })?;
        log::info!("epoch {epoch}: mean loss {mean_loss:.6e} ({seconds:.1}s)");
        log.records.push(EpochRecord {
            epoch,
            mean_loss,
            seconds,
        });
    }

    Checkpoint::new(
        &model,
        config.loss,
        config.optimizer,
        config.seed,
        Some(opt_state),
    )
    .save(&config.checkpoint_path)?;
    Ok(log)
}

/// Score every test image of a category and write the report table.
pub fn cmd_eval(
    checkpoint_path: &Path,
    dataset_root: &Path,
    category: &str,
    out_path: &Path,
) -> Result<EvalReport> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let model = checkpoint.to_model()?;
    let split = load_dataset(dataset_root, category, model.config.input_size)?;
    let report = evaluate_split(&model, &split.test)?;
    report.write_csv(out_path)?;
    Ok(report)
}

/// Score a list of test samples against a model.
pub fn evaluate_split(
    model: &AutoencoderParams,
    test: &[data::TestSample],
) -> Result<EvalReport> {
    let samples: Vec<ScoredSample> = test
        .par_iter()
        .map(|sample| -> Result<ScoredSample> {
            let recon = model.reconstruct(&sample.image)?;
            Ok(ScoredSample {
                identifier: sample.identifier.clone(),
                score: anomaly_score(&sample.image, &recon)?,
                label: sample.label,
            })
        })
        .collect::<Result<_>>()?;
    EvalReport::from_samples(samples)
}

/// The five reconstruction panels, in write order.
pub const RECONSTRUCT_PANELS: [&str; 5] = [
    "original.png",
    "original_spectrum.png",
    "reconstruction.png",
    "reconstruction_spectrum.png",
    "residual.png",
];

/// Write the original, its log-spectrum, the reconstruction, its
/// log-spectrum, and the residual map under `out_dir`.
pub fn cmd_reconstruct(
    checkpoint_path: &Path,
    image_path: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let model = checkpoint.to_model()?;
    let raw = image::open(image_path).map_err(|source| Error::Image {
        path: image_path.to_path_buf(),
        source,
    })?;
    let input = preprocess(&raw, model.config.input_size)?;
    let recon = model.reconstruct(&input)?;

    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let spectrum_panel = |img: &Image| -> RealMatrix {
        // spectrum of the channel mean, rendered with the display shift
        let mut mean = img.plane(0).clone();
        for c in 1..img.channels() {
            mean += img.plane(c);
        }
        mean /= img.channels() as f64;
        spectrum_image(&dft2(&mean))
    };

    let paths: Vec<PathBuf> = RECONSTRUCT_PANELS
        .iter()
        .map(|name| out_dir.join(name))
        .collect();
    data::save_png(&input, &paths[0])?;
    data::save_plane_png(&spectrum_panel(&input), &paths[1])?;
    data::save_png(&recon, &paths[2])?;
    data::save_plane_png(&spectrum_panel(&recon), &paths[3])?;
    data::save_plane_png(&rescale_for_display(&residual_map(&input, &recon)?), &paths[4])?;
    Ok(paths)
}

/// Radial-filter an image: per channel `dft2 -> filter -> idft2`,
/// clamped back to `[0, 1]`.
pub fn cmd_filter(
    image_path: &Path,
    spec: &FilterSpec,
    out_path: &Path,
) -> Result<()> {
    let raw = image::open(image_path).map_err(|source| Error::Image {
        path: image_path.to_path_buf(),
        source,
    })?;
    let input = decode_image(&raw)?;
    let filtered = filter_image(&input, spec);
    data::save_png(&filtered, out_path)
}

/// In-memory core of [`cmd_filter`].
pub fn filter_image(input: &Image, spec: &FilterSpec) -> Image {
    let planes = input
        .planes()
        .iter()
        .map(|p| idft2(&radial_filter(&dft2(p), spec)))
        .collect();
    Image::new(planes)
        .expect("filtering preserves shape")
        .clamped()
}

/// Materialize a synthetic dataset to disk in the MVTec layout.
pub fn cmd_synth(config: &SynthConfig, out_root: &Path, category: &str) -> Result<()> {
    let split = synth_dataset(config)?;
    data::export_mvtec_layout(&split, out_root, category)
}
