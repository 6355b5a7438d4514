//! Discrete-time model of the delay loop.
//!
//! Within one masking step the delayed state is replaced by its step
//! average, which makes the low-pass equation solvable in closed form. The
//! result is a recurrence over step-averaged states:
//!
//! ```text
//! a[j] = rho0 * a[j-1] + rho1 * g[j-1] + rho2 * g[j]
//! g[j] = beta * (sin^2(a[j - N_m] + z[j] + phi) - 1/2)
//! ```
//!
//! `a[j]` is the time average of the state over step `j`, so
//! `rho0 + rho1 + rho2 = 1`.

use std::io::Write;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::masking::DriveSequence;
use crate::params::SystemParams;

/// Recurrence weights for one masking step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhoCoeffs {
    pub rho0: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// `1 - exp(-P_m / T)`.
    pub kappa: f64,
}

impl RhoCoeffs {
    pub fn new(step_len: f64, time_constant: f64) -> Result<Self> {
        if !(step_len > 0.0 && time_constant > 0.0) || !step_len.is_finite() {
            return Err(Error::InvalidParams(format!(
                "rho coefficients need P_m > 0 and T > 0 (P_m = {step_len}, T = {time_constant})"
            )));
        }
        let x = step_len / time_constant;
        let rho0 = (-x).exp();
        let kappa = -(-x).exp_m1();
        // rho2 = 1 - kappa / x cancels badly for small x; use its series there.
        let rho2 = if x < 1e-2 {
            x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 24.0 - x * (1.0 / 120.0 - x / 720.0))))
        } else {
            1.0 - kappa / x
        };
        Ok(RhoCoeffs {
            rho0,
            rho1: kappa - rho2,
            rho2,
            kappa,
        })
    }

    pub fn from_params(params: &SystemParams) -> Self {
        RhoCoeffs::new(params.step_len(), params.time_constant())
            .expect("checked parameters give valid coefficients")
    }
}

/// Nonlinear drive term for one step.
#[inline]
pub fn gamma(a_delayed: f64, z: f64, beta: f64, phi: f64) -> f64 {
    beta * ((a_delayed + z + phi).sin().powi(2) - 0.5)
}

/// Derivative of [`gamma`] with respect to its phase argument.
#[inline]
pub fn gamma_slope(a_delayed: f64, z: f64, beta: f64, phi: f64) -> f64 {
    beta * (2.0 * (a_delayed + z + phi)).sin()
}

/// One recurrence update.
#[inline]
pub fn step(a_prev: f64, gamma_prev: f64, gamma_next: f64, rho: &RhoCoeffs) -> f64 {
    rho.rho0 * a_prev + rho.rho1 * gamma_prev + rho.rho2 * gamma_next
}

/// Step-averaged states over a driven run.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrace {
    n_mask: usize,
    /// One value per masking step, same length as the drive.
    pub a_bar: Vec<f64>,
    /// The `N_m` states preceding the run.
    pub history: Vec<f64>,
}

impl StateTrace {
    pub fn n_mask(&self) -> usize {
        self.n_mask
    }

    pub fn len(&self) -> usize {
        self.a_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_bar.is_empty()
    }

    pub fn periods(&self) -> usize {
        self.a_bar.len() / self.n_mask
    }

    /// States of period `i`.
    pub fn period(&self, i: usize) -> &[f64] {
        &self.a_bar[i * self.n_mask..(i + 1) * self.n_mask]
    }

    pub fn last_period(&self) -> &[f64] {
        self.period(self.periods() - 1)
    }

    /// State `a[j - N_m]` seen by step `j` through the delay line.
    #[inline]
    pub fn delayed(&self, j: usize) -> f64 {
        if j < self.n_mask {
            self.history[j]
        } else {
            self.a_bar[j - self.n_mask]
        }
    }

    /// Largest absolute state over the final period.
    pub fn last_period_max_abs(&self) -> f64 {
        self.last_period().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with columns `step,period,mask_step,a_bar`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,period,mask_step,a_bar")?;
        for (j, a) in self.a_bar.iter().enumerate() {
            writeln!(w, "{j},{},{},{a}", j / self.n_mask, j % self.n_mask)?;
        }
        Ok(())
    }
}

/// Simulates the recurrence over `drive`.
///
/// `history` holds the `N_m` states before the run (zeros when `None`). The
/// run starts at rest at the last history value.
pub fn forward(
    drive: &DriveSequence,
    params: &SystemParams,
    history: Option<&[f64]>,
) -> Result<StateTrace> {
    let rho = RhoCoeffs::from_params(params);
    simulate(drive, &rho, params.beta(), params.phi(), history)
}

/// [`forward`] with explicit gain and phase, used by the hardware twin.
pub fn simulate(
    drive: &DriveSequence,
    rho: &RhoCoeffs,
    beta: f64,
    phi: f64,
    history: Option<&[f64]>,
) -> Result<StateTrace> {
    let n = drive.n_mask();
    let history = resolve_history(n, history)?;
    let a_bar = run::<f64>(&drive.z, n, rho, beta, phi, &history)?;
    Ok(StateTrace {
        n_mask: n,
        a_bar,
        history,
    })
}

/// Reduced-precision variant of [`forward`] for speed studies. The
/// returned trace is widened back to `f64`.
pub fn forward_f32(
    drive: &DriveSequence,
    params: &SystemParams,
    history: Option<&[f64]>,
) -> Result<StateTrace> {
    let n = drive.n_mask();
    let history = resolve_history(n, history)?;
    let rho = RhoCoeffs::from_params(params);
    let a = run::<f32>(&drive.z, n, &rho, params.beta(), params.phi(), &history)?;
    Ok(StateTrace {
        n_mask: n,
        a_bar: a.into_iter().map(f64::from).collect(),
        history,
    })
}

fn resolve_history(n: usize, history: Option<&[f64]>) -> Result<Vec<f64>> {
    match history {
        None => Ok(vec![0.0; n]),
        Some(h) if h.len() == n && h.iter().all(|v| v.is_finite()) => Ok(h.to_vec()),
        Some(h) => Err(Error::Shape(format!(
            "history must hold {n} finite states, got {} values",
            h.len()
        ))),
    }
}

fn run<F: Float>(
    z: &[f64],
    n: usize,
    rho: &RhoCoeffs,
    beta: f64,
    phi: f64,
    history: &[f64],
) -> Result<Vec<F>> {
    let cast = |v: f64| F::from(v).expect("finite value fits the float type");
    let (rho0, rho1, rho2) = (cast(rho.rho0), cast(rho.rho1), cast(rho.rho2));
    let (beta, phi, half) = (cast(beta), cast(phi), cast(0.5));
    let history: Vec<F> = history.iter().map(|&v| cast(v)).collect();

    let mut a: Vec<F> = Vec::with_capacity(z.len());
    let mut a_prev = history[n - 1];
    let mut g_prev = a_prev;
    for (j, &zj) in z.iter().enumerate() {
        let delayed = if j < n { history[j] } else { a[j - n] };
        let s = (delayed + cast(zj) + phi).sin();
        let g = beta * (s * s - half);
        let next = rho0 * a_prev + rho1 * g_prev + rho2 * g;
        if !next.is_finite() {
            return Err(Error::NonFinite {
                step: j,
                value: next.to_f64().unwrap_or(f64::NAN),
            });
        }
        a.push(next);
        a_prev = next;
        g_prev = g;
    }
    Ok(a)
}

/// Number of steps where the total phase `a[j - N_m] + z[j]` leaves
/// `[-pi/2, pi/2]`.
pub fn count_excursions(trace: &StateTrace, drive: &DriveSequence) -> usize {
    (0..trace.len())
        .filter(|&j| (trace.delayed(j) + drive.z[j]).abs() > std::f64::consts::FRAC_PI_2)
        .count()
}
