//! Reference integrator for the continuous-time delay equation
//!
//! ```text
//! T a'(t) = -a(t) + beta * (sin^2(a(t - D) + z(t) + phi) - 1/2)
//! ```
//!
//! Classic RK4 on a uniform grid whose step divides the masking step, so
//! drive discontinuities always fall on grid points. The delayed state at
//! half steps comes from cubic Hermite interpolation of the stored
//! trajectory using the slopes computed during integration. Only used to
//! validate [`crate::fast_model`].

use std::io::Write;

use crate::error::{Error, Result};
use crate::masking::DriveSequence;
use crate::params::SystemParams;

/// Magnitude at which the integration is declared unstable.
const BLOWUP: f64 = 1e3;

/// Sampled solution on the grid `t_n = n h`, `n = 0..=intervals`.
#[derive(Clone, Debug)]
pub struct ContinuousTrace {
    pub h: f64,
    /// State at each grid point.
    pub a: Vec<f64>,
    /// Slope at the start of each interval (right limit).
    slope_start: Vec<f64>,
    /// Slope at the end of each interval (left limit).
    slope_end: Vec<f64>,
}

impl ContinuousTrace {
    /// Builds a trace from samples alone; slopes are estimated with
    /// second-order finite differences, which is exact for polynomials up to
    /// degree two.
    pub fn from_samples(h: f64, a: Vec<f64>) -> Result<Self> {
        if a.len() < 3 || !(h > 0.0) {
            return Err(Error::Shape("need at least three samples and h > 0".into()));
        }
        let n = a.len();
        let slope: Vec<f64> = (0..n)
            .map(|i| match i {
                0 => (-3.0 * a[0] + 4.0 * a[1] - a[2]) / (2.0 * h),
                i if i == n - 1 => (3.0 * a[i] - 4.0 * a[i - 1] + a[i - 2]) / (2.0 * h),
                i => (a[i + 1] - a[i - 1]) / (2.0 * h),
            })
            .collect();
        Ok(ContinuousTrace {
            h,
            slope_start: slope[..n - 1].to_vec(),
            slope_end: slope[1..].to_vec(),
            a,
        })
    }

    pub fn intervals(&self) -> usize {
        self.a.len() - 1
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.a.len()).map(move |n| n as f64 * self.h)
    }

    /// Cubic Hermite value at the midpoint of interval `n`.
    fn midpoint(&self, n: usize) -> f64 {
        0.5 * (self.a[n] + self.a[n + 1]) + 0.125 * self.h * (self.slope_start[n] - self.slope_end[n])
    }

    /// CSV with columns `step,period,mask_step,t,a,h` on the integration grid;
    /// `step` is the masking step containing the sample.
    pub fn write_csv<W: Write>(&self, mut w: W, substeps: usize, n_mask: usize) -> Result<()> {
        writeln!(w, "step,period,mask_step,t,a,h")?;
        for (n, (t, a)) in self.times().zip(&self.a).enumerate() {
            let step = n / substeps;
            writeln!(w, "{step},{},{},{t},{a},{}", step / n_mask, step % n_mask, self.h)?;
        }
        Ok(())
    }
}

/// Integrates the delay equation over `drive` with grid step `h`.
///
/// `history` gives the state on `[-D, 0]`. `h` must divide the masking step
/// exactly and be at most a twentieth of it.
pub fn integrate(
    drive: &DriveSequence,
    params: &SystemParams,
    h: f64,
    history: &dyn Fn(f64) -> f64,
) -> Result<ContinuousTrace> {
    let step_len = params.step_len();
    let substeps = grid_ratio(step_len, h, "P_m")?;
    if substeps < 20 {
        return Err(Error::InvalidParams(format!(
            "integrator step {h} is coarser than P_m/20"
        )));
    }
    let lag = grid_ratio(params.delay(), h, "D")?;
    let (tau, beta, phi) = (params.time_constant(), params.beta(), params.phi());
    let rhs = |a: f64, delayed: f64, z: f64| (-a + beta * ((delayed + z + phi).sin().powi(2) - 0.5)) / tau;

    let total = drive.len() * substeps;
    let mut trace = ContinuousTrace {
        h,
        a: Vec::with_capacity(total + 1),
        slope_start: Vec::with_capacity(total),
        slope_end: Vec::with_capacity(total),
    };
    trace.a.push(history(0.0));

    // Delayed state at grid offset `n - lag` plus `frac` of a step.
    let delayed = |trace: &ContinuousTrace, n: usize, frac: f64| -> f64 {
        let k = n as isize - lag as isize;
        if k < 0 || (k == 0 && frac == 0.0) {
            let t = (k as f64 + frac) * h;
            return if t >= 0.0 { trace.a[0] } else { history(t) };
        }
        let k = k as usize;
        if frac == 0.0 {
            trace.a[k]
        } else if frac == 1.0 {
            trace.a[k + 1]
        } else {
            trace.midpoint(k)
        }
    };

    for n in 0..total {
        let z = drive.z[n / substeps];
        let a = trace.a[n];
        let d0 = delayed(&trace, n, 0.0);
        let dm = delayed(&trace, n, 0.5);
        let d1 = delayed(&trace, n, 1.0);
        let k1 = rhs(a, d0, z);
        let k2 = rhs(a + 0.5 * h * k1, dm, z);
        let k3 = rhs(a + 0.5 * h * k2, dm, z);
        let k4 = rhs(a + h * k3, d1, z);
        let next = a + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !next.is_finite() || next.abs() > BLOWUP {
            return Err(Error::Unstable {
                time: (n + 1) as f64 * h,
                value: next,
            });
        }
        trace.slope_start.push(k1);
        trace.slope_end.push(rhs(next, d1, z));
        trace.a.push(next);
    }
    Ok(trace)
}

/// Average of the trace over each masking step of length `step_len`.
///
/// Each interval is integrated with the end-corrected trapezoid rule
/// `h/2 (a0 + a1) + h^2/12 (a0' - a1')`, the exact integral of the cubic
/// Hermite interpolant.
pub fn averaged(trace: &ContinuousTrace, step_len: f64) -> Result<Vec<f64>> {
    let substeps = grid_ratio(step_len, trace.h, "P_m")?;
    if trace.intervals() % substeps != 0 {
        return Err(Error::Shape(format!(
            "trace of {} intervals does not cover whole masking steps of {substeps}",
            trace.intervals()
        )));
    }
    let h = trace.h;
    let averages = (0..trace.intervals() / substeps)
        .map(|m| {
            let sum: f64 = (m * substeps..(m + 1) * substeps)
                .map(|n| {
                    0.5 * h * (trace.a[n] + trace.a[n + 1])
                        + h * h / 12.0 * (trace.slope_start[n] - trace.slope_end[n])
                })
                .sum();
            sum / step_len
        })
        .collect();
    Ok(averages)
}

fn grid_ratio(span: f64, h: f64, name: &str) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParams(format!("integrator step must be positive, got {h}")));
    }
    let ratio = span / h;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidParams(format!(
            "{name}/h = {ratio} is not an integer"
        )));
    }
    Ok(rounded as usize)
}
