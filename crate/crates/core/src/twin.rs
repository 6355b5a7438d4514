//! Software stand-in for the physical loop: gain mismatch, slow phase drift
//! and measurement noise on top of the fast model.

use std::f64::consts::TAU;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::bptt::{self, Encoding};
use crate::data::LabeledData;
use crate::error::{Error, Result};
use crate::fast_model::{self, RhoCoeffs, StateTrace};
use crate::masking::{DriveSequence, MaskSet};
use crate::params::SystemParams;
use crate::train::{evaluate_features, extract_features, retrain_output, FeatureSet, Precision, TrainSpec};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TwinConfig {
    /// Added to the loop gain.
    pub delta_beta: f64,
    /// Peak phase excursion of the drift, radians.
    pub phi_drift_amplitude: f64,
    /// Drift period in dataset samples; `None` spans one period over the
    /// whole run.
    pub phi_drift_period: Option<usize>,
    /// Standard deviation of the noise added to measured states.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        TwinConfig {
            delta_beta: 0.05,
            phi_drift_amplitude: 0.05,
            phi_drift_period: None,
            noise_sigma: 0.005,
            seed: 0,
        }
    }
}

impl TwinConfig {
    /// A twin that reproduces the fast model exactly.
    pub fn null() -> Self {
        TwinConfig {
            delta_beta: 0.0,
            phi_drift_amplitude: 0.0,
            phi_drift_period: None,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn is_null(&self) -> bool {
        self.delta_beta == 0.0 && self.phi_drift_amplitude == 0.0 && self.noise_sigma == 0.0
    }

    /// Checks the twin against the system it perturbs. A gain at or above
    /// one with the quadrature bias lets the loop oscillate, which is
    /// reported rather than simulated.
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        let beta = params.beta() + self.delta_beta;
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidParams(format!(
                "noise_sigma must be a finite non-negative number, got {}",
                self.noise_sigma
            )));
        }
        if !beta.is_finite() || !self.phi_drift_amplitude.is_finite() {
            return Err(Error::InvalidParams("twin gain and drift must be finite".into()));
        }
        if beta.abs() >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "twin gain beta + delta_beta = {beta} leaves the stable regime |beta| < 1"
            )));
        }
        if self.phi_drift_period == Some(0) {
            return Err(Error::InvalidParams("phi_drift_period must be at least 1".into()));
        }
        Ok(())
    }

    pub fn beta(&self, params: &SystemParams) -> f64 {
        params.beta() + self.delta_beta
    }

    /// Bias phase seen by the sample at `position` in a run of `total`
    /// samples. The drift is slow compared to one sample, so it is held
    /// constant within a sample.
    pub fn phi_at(&self, params: &SystemParams, position: usize, total: usize) -> f64 {
        if self.phi_drift_amplitude == 0.0 {
            return params.phi();
        }
        let period = self.phi_drift_period.unwrap_or(total.max(1)) as f64;
        params.phi() + self.phi_drift_amplitude * (TAU * position as f64 / period).sin()
    }
}

/// Runs the twin on one sample at `position` of a run of `total` samples.
/// Noise is drawn from a stream keyed by `(seed, position)`, so results do
/// not depend on evaluation order.
pub fn twin_forward(
    drive: &DriveSequence,
    params: &SystemParams,
    cfg: &TwinConfig,
    position: usize,
    total: usize,
) -> Result<StateTrace> {
    cfg.validate(params)?;
    let rho = RhoCoeffs::from_params(params);
    let mut trace = fast_model::simulate(drive, &rho, cfg.beta(params), cfg.phi_at(params, position, total), None)?;
    add_noise(&mut trace.a_bar, cfg, position);
    Ok(trace)
}

fn add_noise(states: &mut [f64], cfg: &TwinConfig, position: usize) {
    if cfg.noise_sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(position as u64);
    let normal = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
    for a in states {
        *a += normal.sample(&mut rng);
    }
}

/// Trace CSV with an extra `noisy` column (1 when measurement noise was
/// added).
pub fn write_twin_csv<W: Write>(trace: &StateTrace, cfg: &TwinConfig, mut w: W) -> Result<()> {
    let noisy = u8::from(cfg.noise_sigma > 0.0);
    writeln!(w, "step,period,mask_step,a_bar,noisy")?;
    let n = trace.n_mask();
    for (j, a) in trace.a_bar.iter().enumerate() {
        writeln!(w, "{j},{},{},{a},{noisy}", j / n, j % n)?;
    }
    Ok(())
}

/// Readout features measured on the twin. Sample `i` of `data` sits at
/// position `offset + i` of a run of `total` samples.
pub fn twin_features(
    masks: &MaskSet,
    params: &SystemParams,
    encoding: Encoding,
    data: &dyn LabeledData,
    cfg: &TwinConfig,
    offset: usize,
    total: usize,
) -> Result<(FeatureSet, usize)> {
    cfg.validate(params)?;
    let parts: Vec<Result<(FeatureSet, usize)>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let ex = data.example(i);
            let drive = bptt::encode_example(masks, encoding, &ex)?;
            let trace = twin_forward(&drive, params, cfg, offset + i, total)?;
            let excursions = fast_model::count_excursions(&trace, &drive);
            Ok((FeatureSet::from_trace(&trace, encoding, ex.labels), excursions))
        })
        .collect();
    let mut features = Vec::with_capacity(parts.len());
    let mut excursions = 0;
    for part in parts {
        let (f, e) = part?;
        features.push(f);
        excursions += e;
    }
    Ok((FeatureSet::concat(features), excursions))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct HybridOutcome {
    /// Test error with the outputs trained together with the input masks.
    pub sim_trained_error: f64,
    /// Test error of outputs refit on simulated features.
    pub sim_error: f64,
    /// Test error of outputs refit on twin features.
    pub twin_error: f64,
    /// Test error of the simulation-retrained outputs applied to twin
    /// features.
    pub twin_reuse_error: f64,
    /// Steps where the total phase left `[-pi/2, pi/2]` on the twin test set.
    pub twin_excursions: usize,
}

/// Records twin features for the full train and test sets with fixed input
/// masks, retrains the outputs on the twin training features, and compares
/// against the same procedure on simulated features and against reusing the
/// simulated readout on twin features.
pub fn hybrid_pipeline(
    train: &dyn LabeledData,
    test: &dyn LabeledData,
    masks: &MaskSet,
    params: &SystemParams,
    encoding: Encoding,
    cfg: &TwinConfig,
    retrain: &TrainSpec,
) -> Result<HybridOutcome> {
    cfg.validate(params)?;
    let total = train.len() + test.len();

    let sim_train = extract_features(masks, params, encoding, train, Precision::F64)?;
    let sim_test = extract_features(masks, params, encoding, test, Precision::F64)?;
    let sim_trained_error = evaluate_features(masks, &sim_test)?.1;
    // Both readouts share a first fit on simulated features and are then
    // fine-tuned on simulated or twin features, so a null twin reproduces
    // the simulation exactly.
    let mut first_fit = masks.clone();
    retrain_output(&mut first_fit, &sim_train, retrain)?;
    let mut sim_masks = first_fit.clone();
    retrain_output(&mut sim_masks, &sim_train, retrain)?;
    let sim_error = evaluate_features(&sim_masks, &sim_test)?.1;

    let (twin_train, _) = twin_features(masks, params, encoding, train, cfg, 0, total)?;
    let (twin_test, twin_excursions) = twin_features(masks, params, encoding, test, cfg, train.len(), total)?;
    let mut twin_masks = first_fit;
    retrain_output(&mut twin_masks, &twin_train, retrain)?;
    let twin_error = evaluate_features(&twin_masks, &twin_test)?.1;
    let twin_reuse_error = evaluate_features(&sim_masks, &twin_test)?.1;

    log::info!(
        "hybrid: sim {:.2}% (retrained {:.2}%), twin {:.2}%, twin with sim outputs {:.2}%",
        100.0 * sim_trained_error,
        100.0 * sim_error,
        100.0 * twin_error,
        100.0 * twin_reuse_error
    );
    Ok(HybridOutcome {
        sim_trained_error,
        sim_error,
        twin_error,
        twin_reuse_error,
        twin_excursions,
    })
}

/// Pearson correlation of two equally long series.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::random_mask;
    use rand::Rng;

    fn random_drive(n_mask: usize, periods: usize, seed: u64) -> DriveSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = (0..n_mask * periods).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DriveSequence::from_phases(n_mask, z).unwrap()
    }

    #[test]
    fn null_twin_is_bit_identical() {
        let params = SystemParams::default().with_mask_steps(50).unwrap();
        let drive = random_drive(50, 5, 1);
        let sim = fast_model::forward(&drive, &params, None).unwrap();
        let twin = twin_forward(&drive, &params, &TwinConfig::null(), 17, 100).unwrap();
        assert_eq!(sim.a_bar, twin.a_bar);
    }

    #[test]
    fn noise_on_zero_drive_has_requested_std() {
        let params = SystemParams::default().with_mask_steps(100).unwrap();
        let drive = DriveSequence::from_phases(100, vec![0.0; 20_000]).unwrap();
        let cfg = TwinConfig {
            noise_sigma: 0.01,
            ..TwinConfig::null()
        };
        let trace = twin_forward(&drive, &params, &cfg, 0, 1).unwrap();
        let n = trace.a_bar.len() as f64;
        let mean = trace.a_bar.iter().sum::<f64>() / n;
        let std = (trace.a_bar.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 0.01).abs() < 0.05 * 0.01, "std {std}");
    }

    #[test]
    fn small_gain_offset_stays_correlated() {
        let params = SystemParams::default();
        let drive = random_drive(params.mask_steps(), 10, 2);
        let sim = fast_model::forward(&drive, &params, None).unwrap();
        let cfg = TwinConfig {
            delta_beta: 0.05,
            ..TwinConfig::null()
        };
        let twin = twin_forward(&drive, &params, &cfg, 0, 1).unwrap();
        let r = correlation(&sim.a_bar, &twin.a_bar);
        assert!(r >= 0.95, "correlation {r}");
    }

    #[test]
    fn noise_depends_only_on_seed_and_position() {
        let params = SystemParams::default().with_mask_steps(20).unwrap();
        let drive = random_drive(20, 3, 3);
        let cfg = TwinConfig {
            noise_sigma: 0.02,
            seed: 9,
            ..TwinConfig::default()
        };
        let a = twin_forward(&drive, &params, &cfg, 4, 10).unwrap();
        let b = twin_forward(&drive, &params, &cfg, 4, 10).unwrap();
        let c = twin_forward(&drive, &params, &cfg, 5, 10).unwrap();
        assert_eq!(a.a_bar, b.a_bar);
        assert_ne!(a.a_bar, c.a_bar);
    }

    #[test]
    fn drift_follows_one_slow_sinusoid() {
        let params = SystemParams::default();
        let cfg = TwinConfig {
            phi_drift_amplitude: 0.05,
            ..TwinConfig::null()
        };
        assert_eq!(cfg.phi_at(&params, 0, 400), params.phi());
        assert!((cfg.phi_at(&params, 100, 400) - params.phi() - 0.05).abs() < 1e-15);
        assert!((cfg.phi_at(&params, 300, 400) - params.phi() + 0.05).abs() < 1e-15);
    }

    #[test]
    fn destabilizing_twin_rejected() {
        let params = SystemParams::default();
        let drive = random_drive(params.mask_steps(), 1, 4);
        let cfg = TwinConfig {
            delta_beta: 0.3,
            ..TwinConfig::null()
        };
        assert!(matches!(twin_forward(&drive, &params, &cfg, 0, 1), Err(Error::InvalidParams(_))));
        let cfg = TwinConfig {
            noise_sigma: -1.0,
            ..TwinConfig::null()
        };
        assert!(cfg.validate(&params).is_err());
    }

    #[test]
    fn csv_marks_noisy_rows() {
        let params = SystemParams::default().with_mask_steps(4).unwrap();
        let drive = random_drive(4, 2, 5);
        let cfg = TwinConfig {
            noise_sigma: 0.01,
            ..TwinConfig::null()
        };
        let trace = twin_forward(&drive, &params, &cfg, 0, 1).unwrap();
        let mut out = Vec::new();
        write_twin_csv(&trace, &cfg, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("step,period,mask_step,a_bar,noisy\n"));
        assert_eq!(text.lines().count(), 9);
        assert!(text.lines().skip(1).all(|l| l.ends_with(",1")));
    }

    #[test]
    fn null_twin_pipeline_matches_simulation() {
        use crate::data::{Sequence, SequenceDataset};
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut make = |n: usize| {
            let sequences = (0..n)
                .map(|_| {
                    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..2)).collect();
                    let frames = labels.iter().map(|&l| if l == 1 { 0.8 } else { -0.8 }).collect();
                    Sequence { frames, labels }
                })
                .collect();
            SequenceDataset::new(sequences, 1, 2).unwrap()
        };
        let (train, test) = (make(30), make(10));
        let params = SystemParams::new(0.241, 0.8, 0.241 * 3.0, std::f64::consts::FRAC_PI_4, 6).unwrap();
        let masks = random_mask(6, 1, 2, 0.5, 7).unwrap();
        let spec = TrainSpec::new(Encoding::Streaming, 200, 10, 0.5, 8);
        let out = hybrid_pipeline(&train, &test, &masks, &params, Encoding::Streaming, &TwinConfig::null(), &spec).unwrap();
        assert_eq!(out.sim_error, out.twin_error);
        assert_eq!(out.sim_error, out.twin_reuse_error);
    }
}
