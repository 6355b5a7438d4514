//! Quantitative self-checks with fixed thresholds, shared by the `check`
//! command and the acceptance tests.

use std::f64::consts::FRAC_PI_4;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bptt::{gradcheck, Encoding, Example};
use crate::dde_oracle;
use crate::error::Result;
use crate::fast_model::{self, RhoCoeffs};
use crate::masking::{DriveSequence, MaskSet};
use crate::params::SystemParams;
use crate::twin::correlation;

pub const GRADCHECK_TOL: f64 = 1e-6;
/// Central-difference step. Near the cube root of machine epsilon, where
/// truncation and rounding error balance; at 1e-6 rounding alone reaches
/// 1e-6 relative on components of order 1e-4.
pub const GRADCHECK_EPSILON: f64 = 1e-5;
pub const ORACLE_MIN_CORRELATION: f64 = 0.999;
pub const ORACLE_SELF_CONVERGENCE: f64 = 1e-8;
pub const STABILITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
    /// Human-readable condition, e.g. `< 1e-6`.
    pub threshold: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub suite: String,
    pub measurements: Vec<Measurement>,
}

impl CheckReport {
    fn new(suite: &str) -> Self {
        CheckReport {
            suite: suite.into(),
            measurements: Vec::new(),
        }
    }

    fn below(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        self.measurements.push(Measurement {
            name: name.into(),
            value,
            threshold: format!("< {limit:e}"),
            passed: value < limit,
        });
    }

    fn at_least(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        self.measurements.push(Measurement {
            name: name.into(),
            value,
            threshold: format!(">= {limit}"),
            passed: value >= limit,
        });
    }

    pub fn passed(&self) -> bool {
        !self.measurements.is_empty() && self.measurements.iter().all(|m| m.passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.measurements {
            let tag = if m.passed { "ok  " } else { "FAIL" };
            writeln!(f, "[{tag}] {}: {:.6e} (want {})", m.name, m.value, m.threshold)?;
        }
        write!(f, "{}: {}", self.suite, if self.passed() { "pass" } else { "FAIL" })
    }
}

/// Small gradcheck instance: `N_m` steps, `N_in` inputs, and whether the
/// drive is streamed or statically repeated.
#[derive(Clone, Copy, Debug)]
pub struct GradcheckCase {
    pub n_mask: usize,
    pub n_in: usize,
    pub encoding: Encoding,
}

pub const GRADCHECK_CASES: [GradcheckCase; 6] = [
    GradcheckCase { n_mask: 4, n_in: 1, encoding: Encoding::Streaming },
    GradcheckCase { n_mask: 8, n_in: 3, encoding: Encoding::StaticRepeat { repeats: 3 } },
    GradcheckCase { n_mask: 16, n_in: 10, encoding: Encoding::Streaming },
    GradcheckCase { n_mask: 4, n_in: 10, encoding: Encoding::StaticRepeat { repeats: 10 } },
    GradcheckCase { n_mask: 8, n_in: 1, encoding: Encoding::StaticRepeat { repeats: 2 } },
    GradcheckCase { n_mask: 16, n_in: 3, encoding: Encoding::Streaming },
];

/// Backpropagated gradients against central differences on random small
/// instances. Delay and time constant are chosen so one masking step is half
/// a time constant, which keeps both recurrence paths significant.
pub fn gradcheck_suite(seed: u64) -> Result<CheckReport> {
    const N_OUT: usize = 3;
    const FRAMES: usize = 3;
    let mut report = CheckReport::new("gradcheck");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in GRADCHECK_CASES {
        let params = SystemParams::new(0.241, 0.8, 0.241 * 0.5 * case.n_mask as f64, FRAC_PI_4, case.n_mask)?;
        let mut masks = MaskSet::uniform(case.n_mask, case.n_in, N_OUT, 0.8, &mut rng);
        for v in masks.u.iter_mut().chain(masks.y0.iter_mut()) {
            *v = rng.gen_range(-3.0..3.0);
        }
        let (n_frames, mode) = match case.encoding {
            Encoding::Streaming => (FRAMES, "streaming".to_string()),
            Encoding::StaticRepeat { repeats } => (1, format!("static x{repeats}")),
        };
        let inputs: Vec<f64> = (0..n_frames * case.n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n_frames).map(|_| rng.gen_range(0..N_OUT)).collect();
        let ex = Example {
            inputs: &inputs,
            labels: &labels,
        };
        let g = gradcheck(&masks, &params, case.encoding, &ex, GRADCHECK_EPSILON)?;
        report.below(
            format!(
                "N_m={} N_in={} {mode}: max relative error ({} params, worst #{})",
                case.n_mask, case.n_in, g.n_params, g.worst_index
            ),
            g.max_rel_error,
            GRADCHECK_TOL,
        );
    }
    Ok(report)
}

/// Fast model against the integrated delay equation at `params` over
/// `periods` periods of drive uniform on `[-amplitude, amplitude]`.
pub fn oracle_suite(params: &SystemParams, periods: usize, amplitude: f64, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("oracle");
    let n = params.mask_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = (0..n * periods).map(|_| rng.gen_range(-amplitude..amplitude)).collect();
    let drive = DriveSequence::from_phases(n, z)?;
    let fast = fast_model::forward(&drive, params, None)?;
    let at_rest = |_: f64| 0.0;
    let coarse = dde_oracle::integrate(&drive, params, params.step_len() / 50.0, &at_rest)?;
    let fine = dde_oracle::integrate(&drive, params, params.step_len() / 100.0, &at_rest)?;
    let coarse = dde_oracle::averaged(&coarse, params.step_len())?;
    let fine = dde_oracle::averaged(&fine, params.step_len())?;
    let convergence = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let deviation = fine.iter().zip(&fast.a_bar).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    report.at_least(
        format!("Pearson correlation, fast model vs oracle ({periods} periods, N_m={n})"),
        correlation(&fast.a_bar, &fine),
        ORACLE_MIN_CORRELATION,
    );
    report.below("oracle change under step halving (max abs)", convergence, ORACLE_SELF_CONVERGENCE);
    // Informational: the fast model is an approximation, not a convergent scheme.
    report.measurements.push(Measurement {
        name: "max abs deviation, fast model vs oracle".into(),
        value: deviation,
        threshold: "report only".into(),
        passed: true,
    });
    Ok(report)
}

/// Random initial history under zero drive must relax to the rest state in
/// both models.
///
/// The continuous history interpolates linearly between random node values
/// at the masking step boundaries; the fast model gets the exact step
/// averages of that function. Nodes are uniform on `[-beta/2, beta/2]`, the
/// range the states can occupy.
pub fn stability_suite(params: &SystemParams, periods: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("stability");
    let n = params.mask_steps();
    let half = params.beta().abs() / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<f64> = (0..=n).map(|_| rng.gen_range(-half..half)).collect();
    let step_avg: Vec<f64> = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let (delay, step_len) = (params.delay(), params.step_len());
    let history = |t: f64| {
        let x = ((t + delay) / step_len).clamp(0.0, n as f64);
        let k = (x.floor() as usize).min(n - 1);
        let f = x - k as f64;
        nodes[k] * (1.0 - f) + nodes[k + 1] * f
    };

    let drive = DriveSequence::from_phases(n, vec![0.0; n * periods])?;
    let fast = fast_model::forward(&drive, params, Some(&step_avg))?;
    report.below(
        format!("fast model: max |a| over period {periods}"),
        fast.last_period_max_abs(),
        STABILITY_TOL,
    );
    let trace = dde_oracle::integrate(&drive, params, step_len / 20.0, &history)?;
    let averaged = dde_oracle::averaged(&trace, step_len)?;
    let last = averaged[averaged.len() - n..].iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    report.below(format!("oracle: max |a| over period {periods}"), last, STABILITY_TOL);
    Ok(report)
}

/// Identities of the recurrence weights over a log grid of `P_m / T`.
pub fn coefficient_suite(points: usize) -> Result<CheckReport> {
    let mut report = CheckReport::new("coefficients");
    let (lo, hi) = (1e-3f64.ln(), 10f64.ln());
    let mut sum_err = 0.0f64;
    let mut min_rho = f64::INFINITY;
    let mut fixed_err = 0.0f64;
    for i in 0..points {
        let x = (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp();
        let rho = RhoCoeffs::new(x, 1.0)?;
        sum_err = sum_err.max((rho.rho1 + rho.rho2 - (1.0 - rho.rho0)).abs());
        min_rho = min_rho.min(rho.rho1).min(rho.rho2);
        for gamma in [-0.4, -0.1, 0.0, 0.25, 0.4] {
            fixed_err = fixed_err.max((fast_model::step(gamma, gamma, gamma, &rho) - gamma).abs());
        }
    }
    report.below("max |rho1 + rho2 - (1 - rho0)|", sum_err, 1e-12);
    report.measurements.push(Measurement {
        name: "min(rho1, rho2)".into(),
        value: min_rho,
        threshold: "> 0".into(),
        passed: min_rho > 0.0,
    });
    report.below("constant-drive fixed point error", fixed_err, 1e-10);
    Ok(report)
}
