//! Mask training with BPTT and output-only retraining on fixed features.

mod augment;
mod loss;
mod optimizer;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rayon::prelude::*;

pub use augment::{shift_augment, shift_image, SHIFTS};
pub use loss::cross_entropy;
pub use optimizer::{LrSchedule, OptimizerState, Trainable};

use crate::bptt::{self, argmax, Encoding, Example, Gradients};
use crate::data::{BatchSampler, LabeledData};
use crate::error::{Error, Result};
use crate::fast_model;
use crate::masking::{dot, MaskSet};
use crate::params::SystemParams;

/// Examples evaluated sequentially inside one parallel work unit. Fixed so
/// that the reduction order, and hence the result, does not depend on the
/// number of worker threads.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
}

/// Numeric width used when simulating features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Clone, Debug)]
pub struct Checkpointing {
    pub dir: PathBuf,
    /// Write `masks_<iter>.bin` every this many iterations (0 disables).
    pub every: usize,
}

#[derive(Clone, Debug)]
pub struct TrainSpec {
    pub trainable: Trainable,
    pub loss: LossKind,
    pub encoding: Encoding,
    /// One-pixel shifts on image data.
    pub augment: bool,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub log_every: usize,
    pub checkpoint: Option<Checkpointing>,
}

impl TrainSpec {
    pub fn new(encoding: Encoding, iterations: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        TrainSpec {
            trainable: Trainable::All,
            loss: LossKind::CrossEntropy,
            encoding,
            augment: false,
            batch_size,
            iterations,
            learning_rate,
            momentum: 0.9,
            seed,
            log_every: 100,
            checkpoint: None,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct LossPoint {
    pub iteration: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub masks: MaskSet,
    pub curve: Vec<LossPoint>,
}

/// Mean loss, mean gradient and correct-readout count over a batch.
pub fn batch_gradient(
    masks: &MaskSet,
    params: &SystemParams,
    encoding: Encoding,
    batch: &[Example],
) -> Result<(f64, Gradients, usize)> {
    let partials: Vec<Result<(f64, Gradients, usize)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grads = Gradients::zeros_like(masks);
            let mut correct = 0;
            for ex in chunk {
                let (l, g, c) = bptt::loss_and_gradient(masks, params, encoding, ex)?;
                loss += l;
                grads.add_assign(&g);
                correct += c;
            }
            Ok((loss, grads, correct))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(masks);
    let mut correct = 0;
    for part in partials {
        let (l, g, c) = part?;
        loss += l;
        grads.add_assign(&g);
        correct += c;
    }
    let n = batch.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads, correct))
}

/// Trains masks with Nesterov momentum on minibatches drawn uniformly with
/// replacement. Returns `init` unchanged when `spec.iterations == 0`.
pub fn train_masks(
    data: &dyn LabeledData,
    spec: &TrainSpec,
    params: &SystemParams,
    init: MaskSet,
) -> Result<TrainOutcome> {
    spec.check()?;
    check_masks(&init, data, params)?;
    let mut masks = init;
    let mut opt = OptimizerState::new(
        &masks,
        spec.learning_rate,
        spec.momentum,
        LrSchedule::LinearDecay { total: spec.iterations },
        spec.trainable,
    );
    let mut sampler = BatchSampler::new(spec.seed);
    let mut curve = Vec::with_capacity(spec.iterations);
    let side = if spec.augment { data.image_side() } else { None };
    let mut log = match &spec.checkpoint {
        Some(c) => {
            fs::create_dir_all(&c.dir)?;
            let mut f = BufWriter::new(File::create(c.dir.join("losses.csv"))?);
            writeln!(f, "iter,loss,lr")?;
            Some(f)
        }
        None => None,
    };

    for iteration in 0..spec.iterations {
        let indices = sampler.sample(data.len(), spec.batch_size.min(data.len()))?;
        let shifted: Vec<Option<Vec<f64>>> = indices
            .iter()
            .map(|&i| side.map(|s| shift_augment(data.example(i).inputs, s, sampler.rng())))
            .collect();
        let batch: Vec<Example> = indices
            .iter()
            .zip(&shifted)
            .map(|(&i, img)| {
                let ex = data.example(i);
                Example {
                    inputs: img.as_deref().unwrap_or(ex.inputs),
                    labels: ex.labels,
                }
            })
            .collect();

        let lr = opt.learning_rate();
        let ahead = opt.lookahead(&masks);
        let result = match batch_gradient(&ahead, params, spec.encoding, &batch) {
            Err(Error::NonFinite { .. }) => None,
            other => Some(other?),
        };
        let Some((loss, grads, _)) = result.filter(|(l, g, _)| l.is_finite() && g.is_finite()) else {
            return Err(Error::Diverged {
                iteration,
                last_good: Box::new(masks),
            });
        };
        opt.step(&mut masks, &grads);
        curve.push(LossPoint {
            iteration,
            loss,
            learning_rate: lr,
        });
        if let Some(f) = log.as_mut() {
            writeln!(f, "{iteration},{loss},{lr}")?;
        }
        if spec.log_every > 0 && (iteration + 1) % spec.log_every == 0 {
            let window = &curve[curve.len().saturating_sub(spec.log_every)..];
            let mean = window.iter().map(|p| p.loss).sum::<f64>() / window.len() as f64;
            log::info!("iteration {}: loss {mean:.5} (lr {lr:.3e})", iteration + 1);
        }
        if let Some(c) = &spec.checkpoint {
            if c.every > 0 && (iteration + 1) % c.every == 0 {
                masks.save(&c.dir.join(format!("masks_{}.bin", iteration + 1)))?;
            }
        }
    }
    if let (Some(c), Some(mut f)) = (&spec.checkpoint, log) {
        f.flush()?;
        masks.save(&c.dir.join("final.bin"))?;
    }
    Ok(TrainOutcome { masks, curve })
}

fn check_masks(masks: &MaskSet, data: &dyn LabeledData, params: &SystemParams) -> Result<()> {
    masks.check()?;
    if masks.n_mask() != params.mask_steps() || masks.n_in() != data.n_in() || masks.n_out() != data.n_classes() {
        return Err(Error::Shape(format!(
            "masks are {}x{}x{} but data/params need {}x{}x{}",
            masks.n_mask(),
            masks.n_in(),
            masks.n_out(),
            params.mask_steps(),
            data.n_in(),
            data.n_classes()
        )));
    }
    Ok(())
}

/// Fixed readout features: one row of `n_features` states per readout.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub n_features: usize,
    pub rows: Vec<f64>,
    pub labels: Vec<usize>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Concatenates feature sets in order.
    pub fn concat(parts: Vec<FeatureSet>) -> FeatureSet {
        let n_features = parts.first().map(|p| p.n_features).unwrap_or(0);
        let mut out = FeatureSet {
            n_features,
            rows: Vec::new(),
            labels: Vec::new(),
        };
        for p in parts {
            out.rows.extend(p.rows);
            out.labels.extend(p.labels);
        }
        out
    }

    /// Builds the readout rows of one example from its state trace.
    pub fn from_trace(trace: &fast_model::StateTrace, encoding: Encoding, labels: &[usize]) -> FeatureSet {
        let n = trace.n_mask();
        let (rows, labels) = match encoding {
            Encoding::StaticRepeat { .. } => (trace.last_period().to_vec(), labels[..1].to_vec()),
            Encoding::Streaming => (trace.a_bar.clone(), labels.to_vec()),
        };
        FeatureSet {
            n_features: n,
            rows,
            labels,
        }
    }
}

/// Simulates every example with the input masks and collects readout
/// states. Row order follows example order.
pub fn extract_features(
    masks: &MaskSet,
    params: &SystemParams,
    encoding: Encoding,
    data: &dyn LabeledData,
    precision: Precision,
) -> Result<FeatureSet> {
    let parts: Vec<Result<FeatureSet>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let ex = data.example(i);
            let drive = bptt::encode_example(masks, encoding, &ex)?;
            let trace = match precision {
                Precision::F64 => fast_model::forward(&drive, params, None)?,
                Precision::F32 => fast_model::forward_f32(&drive, params, None)?,
            };
            Ok(FeatureSet::from_trace(&trace, encoding, ex.labels))
        })
        .collect();
    Ok(FeatureSet::concat(parts.into_iter().collect::<Result<Vec<_>>>()?))
}

/// Mean cross-entropy and error rate of the output masks on `features`.
pub fn evaluate_features(masks: &MaskSet, features: &FeatureSet) -> Result<(f64, f64)> {
    if features.is_empty() {
        return Err(Error::Shape("no features to evaluate".into()));
    }
    let mut loss = 0.0;
    let mut errors = 0usize;
    for i in 0..features.len() {
        let y = bptt::readout(masks, features.row(i));
        loss += cross_entropy(&y, features.labels[i])?.0;
        if argmax(&y) != features.labels[i] {
            errors += 1;
        }
    }
    let n = features.len() as f64;
    Ok((loss / n, errors as f64 / n))
}

/// Trains only `U` and `y0` on precomputed features; `m0` and `M` are not
/// touched.
///
/// Optimization runs on standardized features (zero mean, unit variance per
/// step) and the result is folded back into `U` and `y0`, so the readout is
/// still `y0 + U a`. This only changes the conditioning of the problem, which
/// matters when feature scales differ by orders of magnitude between mask
/// sets.
pub fn retrain_output(masks: &mut MaskSet, features: &FeatureSet, spec: &TrainSpec) -> Result<Vec<LossPoint>> {
    spec.check()?;
    if features.n_features != masks.n_mask() {
        return Err(Error::Shape(format!(
            "{} features for {} masking steps",
            features.n_features,
            masks.n_mask()
        )));
    }
    if features.is_empty() {
        return Err(Error::Shape("no features to train on".into()));
    }
    let n = masks.n_mask();
    let n_out = masks.n_out();
    let (mean, std) = column_moments(features);
    let standardized: Vec<f64> = features
        .rows
        .chunks(n)
        .flat_map(|row| row.iter().zip(&mean).zip(&std).map(|((x, m), s)| (x - m) / s))
        .collect();

    // Output weights in standardized coordinates.
    let mut prim = MaskSet::zeros(n, 0, n_out);
    for o in 0..n_out {
        let u = masks.output_row(o);
        prim.y0[o] = masks.y0[o] + dot(u, &mean);
        for k in 0..n {
            prim.u[o * n + k] = u[k] * std[k];
        }
    }
    let unfold = |prim: &MaskSet, masks: &mut MaskSet| {
        for o in 0..n_out {
            let mut bias = prim.y0[o];
            for k in 0..n {
                let u = prim.u[o * n + k] / std[k];
                masks.u[o * n + k] = u;
                bias -= u * mean[k];
            }
            masks.y0[o] = bias;
        }
    };

    let mut opt = OptimizerState::new(
        &prim,
        spec.learning_rate,
        spec.momentum,
        LrSchedule::LinearDecay { total: spec.iterations },
        Trainable::OutputOnly,
    );
    let mut sampler = BatchSampler::new(spec.seed);
    let mut curve = Vec::with_capacity(spec.iterations);
    for iteration in 0..spec.iterations {
        let lr = opt.learning_rate();
        let ahead = opt.lookahead(&prim);
        let indices = sampler.sample(features.len(), spec.batch_size.min(features.len()))?;
        let mut grads = Gradients::zeros_like(&prim);
        let mut loss = 0.0;
        for &i in &indices {
            let row = &standardized[i * n..(i + 1) * n];
            let y: Vec<f64> = (0..n_out).map(|o| ahead.y0[o] + dot(ahead.output_row(o), row)).collect();
            let (l, dy) = cross_entropy(&y, features.labels[i])?;
            loss += l;
            for (o, &g) in dy.iter().enumerate() {
                grads.d_y0[o] += g;
                for (d, &x) in grads.d_u[o * n..(o + 1) * n].iter_mut().zip(row) {
                    *d += g * x;
                }
            }
        }
        let scale = 1.0 / indices.len() as f64;
        grads.scale(scale);
        loss *= scale;
        if !loss.is_finite() {
            unfold(&prim, masks);
            return Err(Error::Diverged {
                iteration,
                last_good: Box::new(masks.clone()),
            });
        }
        opt.step(&mut prim, &grads);
        curve.push(LossPoint {
            iteration,
            loss,
            learning_rate: lr,
        });
    }
    unfold(&prim, masks);
    Ok(curve)
}

/// Per-column mean and standard deviation; constant columns get unit scale.
fn column_moments(features: &FeatureSet) -> (Vec<f64>, Vec<f64>) {
    let n = features.n_features;
    let count = features.len() as f64;
    let mut mean = vec![0.0; n];
    for row in features.rows.chunks(n) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; n];
    for row in features.rows.chunks(n) {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / count).sqrt();
            if s > 1e-12 { s } else { 1.0 }
        })
        .collect();
    (mean, std)
}

/// Mean of the first and last `window` points of a loss curve.
pub fn curve_ends(curve: &[LossPoint], window: usize) -> Option<(f64, f64)> {
    if curve.is_empty() {
        return None;
    }
    let w = window.clamp(1, curve.len());
    let mean = |s: &[LossPoint]| s.iter().map(|p| p.loss).sum::<f64>() / s.len() as f64;
    Some((mean(&curve[..w]), mean(&curve[curve.len() - w..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sequence, SequenceDataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn small_params(n_mask: usize) -> SystemParams {
        SystemParams::new(0.241, 0.8, 0.241 * 0.5 * n_mask as f64, FRAC_PI_4, n_mask).unwrap()
    }

    /// Two-class sequences whose label is the sign of the first channel.
    fn separable(n: usize, seed: u64) -> SequenceDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sequences = (0..n)
            .map(|_| {
                let len = 6;
                let mut frames = Vec::new();
                let mut labels = Vec::new();
                for _ in 0..len {
                    let class = rng.gen_range(0..2);
                    let x: f64 = if class == 1 { rng.gen_range(0.3..1.0) } else { -rng.gen_range(0.3..1.0) };
                    frames.extend([x, rng.gen_range(-1.0..1.0)]);
                    labels.push(class);
                }
                Sequence { frames, labels }
            })
            .collect();
        SequenceDataset::new(sequences, 2, 2).unwrap()
    }

    #[test]
    fn zero_iterations_return_initial_masks() {
        let data = separable(4, 1);
        let params = small_params(6);
        let init = MaskSet::uniform(6, 2, 2, 0.1, &mut ChaCha8Rng::seed_from_u64(2));
        let spec = TrainSpec::new(Encoding::Streaming, 0, 2, 0.1, 3);
        let out = train_masks(&data, &spec, &params, init.clone()).unwrap();
        assert_eq!(out.masks, init);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn separable_toy_task_is_learned() {
        let train = separable(200, 4);
        let test = separable(50, 5);
        let params = small_params(8);
        let init = MaskSet::uniform(8, 2, 2, 0.1, &mut ChaCha8Rng::seed_from_u64(6));
        let spec = TrainSpec::new(Encoding::Streaming, 2000, 10, 0.5, 7);
        let out = train_masks(&train, &spec, &params, init).unwrap();
        let features = extract_features(&out.masks, &params, Encoding::Streaming, &test, Precision::F64).unwrap();
        let (_, err) = evaluate_features(&out.masks, &features).unwrap();
        assert!(err < 0.01, "error rate {err}");
        let (start, end) = curve_ends(&out.curve, 100).unwrap();
        assert!(end < start);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(20, 8);
        let params = small_params(5);
        let init = MaskSet::uniform(5, 2, 2, 0.1, &mut ChaCha8Rng::seed_from_u64(9));
        let spec = TrainSpec::new(Encoding::Streaming, 30, 7, 0.2, 10);
        let a = train_masks(&data, &spec, &params, init.clone()).unwrap();
        let b = train_masks(&data, &spec, &params, init).unwrap();
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn output_only_training_freezes_inputs() {
        let data = separable(20, 11);
        let params = small_params(5);
        let init = MaskSet::uniform(5, 2, 2, 0.3, &mut ChaCha8Rng::seed_from_u64(12));
        let mut spec = TrainSpec::new(Encoding::Streaming, 20, 5, 0.2, 13);
        spec.trainable = Trainable::OutputOnly;
        let out = train_masks(&data, &spec, &params, init.clone()).unwrap();
        assert_eq!(out.masks.input_hash(), init.input_hash());
        assert_ne!(out.masks.u, init.u);
    }

    #[test]
    fn identical_features_plateau_at_label_entropy() {
        // 3:1 class balance, uninformative features.
        let labels: Vec<usize> = (0..400).map(|i| usize::from(i % 4 == 0)).collect();
        let features = FeatureSet {
            n_features: 3,
            rows: vec![0.5; 3 * 400],
            labels,
        };
        let mut masks = MaskSet::zeros(3, 1, 2);
        let spec = TrainSpec::new(Encoding::Streaming, 3000, 50, 0.5, 1);
        retrain_output(&mut masks, &features, &spec).unwrap();
        let (loss, _) = evaluate_features(&masks, &features).unwrap();
        let entropy = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((loss - entropy).abs() < 1e-3, "{loss} vs {entropy}");
    }

    #[test]
    fn one_hot_features_are_separable() {
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let mut rows = vec![0.0; 3 * 300];
        for (i, &l) in labels.iter().enumerate() {
            rows[i * 3 + l] = 1.0;
        }
        let features = FeatureSet { n_features: 3, rows, labels };
        let mut masks = MaskSet::zeros(3, 4, 3);
        masks.m.iter_mut().for_each(|v| *v = 0.25);
        let hash = masks.input_hash();
        let spec = TrainSpec::new(Encoding::Streaming, 500, 30, 0.5, 2);
        retrain_output(&mut masks, &features, &spec).unwrap();
        assert_eq!(evaluate_features(&masks, &features).unwrap().1, 0.0);
        assert_eq!(masks.input_hash(), hash);
    }

    #[test]
    fn batch_gradient_is_mean_of_examples() {
        let data = separable(6, 14);
        let params = small_params(4);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut masks = MaskSet::uniform(4, 2, 2, 0.5, &mut rng);
        masks.u.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let batch: Vec<Example> = (0..data.len()).map(|i| data.example(i)).collect();
        let (_, g, _) = batch_gradient(&masks, &params, Encoding::Streaming, &batch).unwrap();
        let mut mean = Gradients::zeros_like(&masks);
        for ex in &batch {
            mean.add_assign(&bptt::loss_and_gradient(&masks, &params, Encoding::Streaming, ex).unwrap().1);
        }
        mean.scale(1.0 / batch.len() as f64);
        for (a, b) in g.values().zip(mean.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        let data = separable(4, 16);
        let params = small_params(4);
        let init = MaskSet::zeros(4, 2, 2);
        let mut spec = TrainSpec::new(Encoding::Streaming, 1, 2, 0.0, 1);
        assert!(train_masks(&data, &spec, &params, init.clone()).is_err());
        spec.learning_rate = 0.1;
        spec.momentum = 1.0;
        assert!(train_masks(&data, &spec, &params, init.clone()).is_err());
        spec.momentum = 0.9;
        assert!(train_masks(&data, &spec, &params, MaskSet::zeros(5, 2, 2)).is_err());
    }

    #[test]
    fn divergence_reports_iteration() {
        let data = separable(4, 17);
        let params = small_params(4);
        let mut init = MaskSet::zeros(4, 2, 2);
        init.u[0] = 1e308;
        init.u[1] = -1e308;
        let spec = TrainSpec::new(Encoding::Streaming, 5, 2, 1e10, 1);
        match train_masks(&data, &spec, &params, init) {
            Err(Error::Diverged { iteration, .. }) => assert!(iteration < 5),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
