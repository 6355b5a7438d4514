//! The four-way mask comparison: trained, time-shuffled and random input
//! masks, plus trained masks measured on the hardware twin.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bptt::Encoding;
use crate::config::{DatasetKind, RunConfig, Scenario};
use crate::data::{load_mnist_split, synth_timitlike, ImageDataset, LabeledData, SequenceDataset, SynthConfig};
use crate::error::{Error, Result};
use crate::masking::{random_mask, shuffle_mask, MaskSet};
use crate::params::SystemParams;
use crate::train::{
    evaluate_features, extract_features, retrain_output, train_masks, Checkpointing, FeatureSet,
    TrainOutcome, TrainSpec,
};
use crate::twin::{hybrid_pipeline, HybridOutcome};

pub const SCHEMA_VERSION: u32 = 1;

/// Directory holding the bundled digit subset.
pub fn bundled_mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("mnist-subset")
}

/// Train, validation and test sets of one task.
pub enum Workload {
    Images {
        train: ImageDataset,
        validation: ImageDataset,
        test: ImageDataset,
    },
    Sequences {
        train: SequenceDataset,
        validation: SequenceDataset,
        test: SequenceDataset,
    },
}

impl Workload {
    /// Loads or generates the data described by `cfg`. Image sets that are
    /// smaller than requested are used whole, with a warning.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        match cfg.dataset {
            DatasetKind::Mnist => {
                let dir = cfg
                    .mnist_dir
                    .clone()
                    .or_else(|| std::env::var_os("MNIST_DIR").map(PathBuf::from))
                    .unwrap_or_else(bundled_mnist_dir);
                let full = load_mnist_split(&dir, "train")?;
                let t10k = load_mnist_split(&dir, "t10k")?;
                if full.len() <= cfg.n_validation {
                    return Err(Error::Config(format!(
                        "{} training images cannot hold a validation split of {}",
                        full.len(),
                        cfg.n_validation
                    )));
                }
                let n_train = cfg.n_train.min(full.len() - cfg.n_validation);
                if n_train < cfg.n_train {
                    log::warn!(
                        "{} has {} training images; using {n_train} for training instead of {}",
                        dir.display(),
                        full.len(),
                        cfg.n_train
                    );
                }
                if t10k.len() < cfg.n_test {
                    log::warn!("using all {} test images instead of {}", t10k.len(), cfg.n_test);
                }
                Ok(Workload::Images {
                    train: full.slice(0..n_train, "train"),
                    validation: full.slice(n_train..n_train + cfg.n_validation, "validation"),
                    test: t10k.take(cfg.n_test),
                })
            }
            DatasetKind::Synthetic => {
                let synth = synth_config(cfg);
                let all = synth_timitlike(&synth)?;
                let (rest, test) = all.split_tail(cfg.n_test);
                let (train, validation) = rest.split_tail(cfg.n_validation);
                Ok(Workload::Sequences { train, validation, test })
            }
        }
    }

    pub fn train(&self) -> &dyn LabeledData {
        match self {
            Workload::Images { train, .. } => train,
            Workload::Sequences { train, .. } => train,
        }
    }

    pub fn validation(&self) -> &dyn LabeledData {
        match self {
            Workload::Images { validation, .. } => validation,
            Workload::Sequences { validation, .. } => validation,
        }
    }

    pub fn test(&self) -> &dyn LabeledData {
        match self {
            Workload::Images { test, .. } => test,
            Workload::Sequences { test, .. } => test,
        }
    }
}

/// Generator settings of the synthetic task in `cfg`.
pub fn synth_config(cfg: &RunConfig) -> SynthConfig {
    SynthConfig {
        n_sequences: cfg.n_train + cfg.n_validation + cfg.n_test,
        length: cfg.seq_length,
        base_channels: cfg.seq_base_channels,
        n_classes: cfg.seq_classes,
        noise_sigma: cfg.seq_noise,
        seed: cfg.data_seed,
        ..SynthConfig::default()
    }
}

/// Error rates of one set of masks on the three splits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Errors {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub task: String,
    /// Errors after retraining the outputs on simulated features.
    pub errors: Errors,
    /// Test error of outputs trained jointly with the input masks.
    pub joint_test_error: Option<f64>,
    /// Selected half-width of the random-mask baseline and the validation
    /// error of every candidate.
    pub selected_scale: Option<f64>,
    pub scale_search: Vec<(f64, f64)>,
    pub twin: Option<HybridOutcome>,
    pub loss_curve: Option<PathBuf>,
    /// Training loss averaged over the first and last 100 iterations.
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub config: RunConfig,
    pub wall_clock_seconds: f64,
    pub seed: u64,
    pub workers: usize,
    /// SHA-256 of the evaluated masks in their binary format.
    pub mask_hash: String,
}

impl RunReport {
    /// Scalar metrics as `metric,value` rows.
    pub fn csv_rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![
            ("scenario".to_string(), self.scenario.to_string()),
            ("task".into(), self.task.clone()),
            ("train_error".into(), self.errors.train.to_string()),
            ("validation_error".into(), self.errors.validation.to_string()),
            ("test_error".into(), self.errors.test.to_string()),
        ];
        let mut opt = |name: &str, v: Option<f64>| {
            if let Some(v) = v {
                rows.push((name.into(), v.to_string()));
            }
        };
        opt("joint_test_error", self.joint_test_error);
        opt("selected_scale", self.selected_scale);
        opt("initial_loss", self.initial_loss);
        opt("final_loss", self.final_loss);
        if let Some(t) = &self.twin {
            opt("twin_sim_error", Some(t.sim_error));
            opt("twin_error", Some(t.twin_error));
            opt("twin_reuse_error", Some(t.twin_reuse_error));
            rows.push(("twin_excursions".into(), t.twin_excursions.to_string()));
        }
        rows.extend([
            ("seed".into(), self.seed.to_string()),
            ("workers".into(), self.workers.to_string()),
            ("wall_clock_seconds".into(), self.wall_clock_seconds.to_string()),
            ("mask_hash".into(), self.mask_hash.clone()),
        ]);
        rows
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        let mut csv = fs::File::create(dir.join("report.csv"))?;
        writeln!(csv, "metric,value")?;
        for (k, v) in self.csv_rows() {
            writeln!(csv, "{k},{v}")?;
        }
        Ok(())
    }
}

/// A configured task with its data loaded and a worker pool of fixed size.
pub struct Experiment {
    pub cfg: RunConfig,
    pub params: SystemParams,
    pub workload: Workload,
    pool: rayon::ThreadPool,
}

impl Experiment {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.check()?;
        let params = cfg.system_params()?;
        let workload = Workload::load(&cfg)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
        Ok(Experiment {
            cfg,
            params,
            workload,
            pool,
        })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn encoding(&self) -> Encoding {
        match self.cfg.dataset {
            DatasetKind::Mnist => Encoding::StaticRepeat {
                repeats: self.cfg.repeats,
            },
            DatasetKind::Synthetic => Encoding::Streaming,
        }
    }

    fn n_in(&self) -> usize {
        self.workload.train().n_in()
    }

    fn n_out(&self) -> usize {
        self.workload.train().n_classes()
    }

    pub fn train_spec(&self) -> TrainSpec {
        let c = &self.cfg;
        let mut spec = TrainSpec::new(self.encoding(), c.iterations, c.batch_size, c.learning_rate, c.seed);
        spec.momentum = c.momentum;
        spec.augment = c.augment && c.dataset == DatasetKind::Mnist;
        spec
    }

    pub fn retrain_spec(&self) -> TrainSpec {
        let c = &self.cfg;
        let mut spec = TrainSpec::new(
            self.encoding(),
            c.retrain_iterations,
            c.retrain_batch_size,
            c.retrain_learning_rate,
            c.seed ^ 0x5245_5452,
        );
        spec.momentum = c.momentum;
        spec
    }

    pub fn initial_masks(&self) -> MaskSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        MaskSet::uniform(self.params.mask_steps(), self.n_in(), self.n_out(), self.cfg.init_scale, &mut rng)
    }

    /// Trains all masks from [`initial_masks`](Self::initial_masks).
    pub fn optimize(&self, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
        let mut spec = self.train_spec();
        spec.checkpoint = checkpoint_dir.map(|dir| Checkpointing {
            dir: dir.to_path_buf(),
            every: self.cfg.checkpoint_every,
        });
        self.pool
            .install(|| train_masks(self.workload.train(), &spec, &self.params, self.initial_masks()))
    }

    /// Simulated readout features of `data` under `masks`.
    pub fn features(&self, masks: &MaskSet, data: &dyn LabeledData) -> Result<FeatureSet> {
        self.pool
            .install(|| extract_features(masks, &self.params, self.encoding(), data, self.cfg.precision))
    }

    /// Test-set cross-entropy and error rate of `masks` as they are.
    pub fn evaluate(&self, masks: &MaskSet) -> Result<(f64, f64)> {
        evaluate_features(masks, &self.features(masks, self.workload.test())?)
    }

    /// Retrains `U` and `y0` of `masks` on simulated training features,
    /// starting from the current output masks.
    pub fn refit_outputs(&self, masks: &MaskSet) -> Result<(MaskSet, Errors)> {
        let train = self.features(masks, self.workload.train())?;
        let validation = self.features(masks, self.workload.validation())?;
        let test = self.features(masks, self.workload.test())?;
        let mut fitted = masks.clone();
        retrain_output(&mut fitted, &train, &self.retrain_spec())?;
        let errors = Errors {
            train: evaluate_features(&fitted, &train)?.1,
            validation: evaluate_features(&fitted, &validation)?.1,
            test: evaluate_features(&fitted, &test)?.1,
        };
        Ok((fitted, errors))
    }

    /// Time-shuffled control built from trained masks; outputs are refit
    /// from zero.
    pub fn shuffled_masks(&self, trained: &MaskSet) -> MaskSet {
        let mut masks = shuffle_mask(trained, self.cfg.seed ^ 0x5348_5546);
        masks.u.iter_mut().chain(masks.y0.iter_mut()).for_each(|v| *v = 0.0);
        masks
    }

    /// Random input masks at every candidate scale; the scale with the
    /// lowest validation error wins.
    pub fn random_search(&self) -> Result<(MaskSet, Errors, f64, Vec<(f64, f64)>)> {
        let mut best: Option<(MaskSet, Errors, f64)> = None;
        let mut search = Vec::new();
        for (i, &scale) in self.cfg.random_scales.iter().enumerate() {
            let masks = random_mask(
                self.params.mask_steps(),
                self.n_in(),
                self.n_out(),
                scale,
                self.cfg.seed.wrapping_mul(1000).wrapping_add(i as u64),
            )?;
            let (fitted, errors) = self.refit_outputs(&masks)?;
            log::info!("random masks, scale {scale}: validation error {:.2}%", 100.0 * errors.validation);
            search.push((scale, errors.validation));
            if best.as_ref().map_or(true, |b| errors.validation < b.1.validation) {
                best = Some((fitted, errors, scale));
            }
        }
        let (masks, errors, scale) = best.expect("random_scales is non-empty");
        Ok((masks, errors, scale, search))
    }

    pub fn hybrid(&self, trained: &MaskSet) -> Result<HybridOutcome> {
        self.pool.install(|| {
            hybrid_pipeline(
                self.workload.train(),
                self.workload.test(),
                trained,
                &self.params,
                self.encoding(),
                &self.cfg.twin(),
                &self.retrain_spec(),
            )
        })
    }

    fn report(&self, scenario: Scenario, masks: &MaskSet, errors: Errors, started: Instant) -> RunReport {
        RunReport {
            schema_version: SCHEMA_VERSION,
            scenario,
            task: self.cfg.task.clone(),
            errors,
            joint_test_error: None,
            selected_scale: None,
            scale_search: Vec::new(),
            twin: None,
            loss_curve: None,
            initial_loss: None,
            final_loss: None,
            n_train: self.workload.train().len(),
            n_validation: self.workload.validation().len(),
            n_test: self.workload.test().len(),
            config: self.cfg.clone(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            seed: self.cfg.seed,
            workers: self.workers(),
            mask_hash: masks.content_hash(),
        }
    }

    /// Runs one scenario with artifacts under `out/<scenario>/`. Shuffled and
    /// twin runs read the trained masks from `out/optimized/final.bin`.
    pub fn run(&self, scenario: Scenario, out: &Path) -> Result<RunReport> {
        let started = Instant::now();
        let dir = out.join(scenario.name());
        let trained_path = out.join(Scenario::Optimized.name()).join("final.bin");
        let load_trained = || -> Result<MaskSet> {
            if !trained_path.exists() {
                return Err(Error::MissingArtifact(format!(
                    "scenario {scenario} requires optimized masks ({} not found; run the optimized scenario first)",
                    trained_path.display()
                )));
            }
            MaskSet::load(&trained_path)
        };
        let report = match scenario {
            Scenario::Optimized => {
                let outcome = self.optimize(Some(&dir))?;
                let (_, joint) = self.evaluate(&outcome.masks)?;
                let (fitted, errors) = self.refit_outputs(&outcome.masks)?;
                fitted.save(&dir.join("retrained.bin"))?;
                let mut r = self.report(scenario, &fitted, errors, started);
                r.joint_test_error = Some(joint);
                r.loss_curve = Some(dir.join("losses.csv"));
                if let Some((start, end)) = crate::train::curve_ends(&outcome.curve, 100) {
                    r.initial_loss = Some(start);
                    r.final_loss = Some(end);
                }
                r
            }
            Scenario::Shuffled => {
                let masks = self.shuffled_masks(&load_trained()?);
                let (fitted, errors) = self.refit_outputs(&masks)?;
                self.report(scenario, &fitted, errors, started)
            }
            Scenario::Random => {
                let (fitted, errors, scale, search) = self.random_search()?;
                let mut r = self.report(scenario, &fitted, errors, started);
                r.selected_scale = Some(scale);
                r.scale_search = search;
                r
            }
            Scenario::Twin => {
                let trained = load_trained()?;
                let (_, errors) = self.refit_outputs(&trained)?;
                let hybrid = self.hybrid(&trained)?;
                let mut r = self.report(scenario, &trained, errors, started);
                r.twin = Some(hybrid);
                r
            }
        };
        let mut report = report;
        report.wall_clock_seconds = started.elapsed().as_secs_f64();
        report.write(&dir)?;
        log::info!("{scenario}: test error {:.2}%", 100.0 * report.errors.test);
        Ok(report)
    }
}

/// Writes `summary.csv` with one row per scenario.
pub fn write_summary(reports: &[RunReport], out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut f = fs::File::create(out.join("summary.csv"))?;
    writeln!(f, "scenario,train_error,validation_error,test_error,mask_hash")?;
    for r in reports {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.scenario, r.errors.train, r.errors.validation, r.errors.test, r.mask_hash
        )?;
    }
    Ok(())
}
