//! Physical constants of the delay loop and the masking geometry.
//!
//! All times are in microseconds and all phases in radians. A
//! [`SystemParams`] can only be obtained through [`validate`], so every
//! consumer downstream works with checked values.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when comparing the masking period with the delay.
const PERIOD_DELAY_RTOL: f64 = 1e-12;

/// Unchecked parameter values as supplied by a user or config file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    /// Low-pass time constant `T`.
    pub time_constant: f64,
    /// Loop gain.
    pub beta: f64,
    /// Feedback delay `D`.
    pub delay: f64,
    /// Offset phase.
    pub phi: f64,
    /// Masking period `P`.
    pub period: f64,
    /// Masking steps per period.
    pub mask_steps: usize,
}

impl Default for RawParams {
    /// Laboratory values of the opto-electronic setup with 400 masking steps.
    fn default() -> Self {
        RawParams {
            time_constant: 0.241,
            beta: 0.8,
            delay: 20.82,
            phi: FRAC_PI_4,
            period: 20.82,
            mask_steps: 400,
        }
    }
}

/// Checked system parameters. Immutable after construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SystemParams {
    raw: RawParams,
    step_len: f64,
}

/// Checks raw values and derives the masking step duration `P / N_m`.
pub fn validate(raw: RawParams) -> Result<SystemParams> {
    let bad = |msg: String| Err(Error::InvalidParams(msg));
    if !(raw.time_constant.is_finite() && raw.time_constant > 0.0) {
        return bad(format!("T must be positive, got {}", raw.time_constant));
    }
    if !(raw.delay.is_finite() && raw.delay > 0.0) {
        return bad(format!("D must be positive, got {}", raw.delay));
    }
    if raw.mask_steps == 0 {
        return bad("N_m must be at least 1".into());
    }
    if !raw.beta.is_finite() || !raw.phi.is_finite() || !raw.period.is_finite() {
        return bad("beta, phi and P must be finite".into());
    }
    if (raw.period - raw.delay).abs() > PERIOD_DELAY_RTOL * raw.delay {
        return bad(format!(
            "P must equal D (P = {}, D = {})",
            raw.period, raw.delay
        ));
    }
    let params = SystemParams {
        raw,
        step_len: raw.period / raw.mask_steps as f64,
    };
    if params.may_oscillate() {
        log::warn!(
            "beta = {} with phi = pi/4 is outside the stable regime; the loop may self-oscillate",
            raw.beta
        );
    }
    Ok(params)
}

impl SystemParams {
    /// Convenience constructor: `validate(RawParams { .. })`.
    pub fn new(
        time_constant: f64,
        beta: f64,
        delay: f64,
        phi: f64,
        mask_steps: usize,
    ) -> Result<Self> {
        validate(RawParams {
            time_constant,
            beta,
            delay,
            phi,
            period: delay,
            mask_steps,
        })
    }

    /// Same physics with a different number of masking steps.
    pub fn with_mask_steps(&self, mask_steps: usize) -> Result<Self> {
        validate(RawParams {
            mask_steps,
            ..self.raw
        })
    }

    /// Same geometry with a different gain and offset phase.
    pub fn with_gain_phase(&self, beta: f64, phi: f64) -> Result<Self> {
        validate(RawParams { beta, phi, ..self.raw })
    }

    pub fn raw(&self) -> RawParams {
        self.raw
    }

    pub fn time_constant(&self) -> f64 {
        self.raw.time_constant
    }

    pub fn beta(&self) -> f64 {
        self.raw.beta
    }

    pub fn delay(&self) -> f64 {
        self.raw.delay
    }

    pub fn phi(&self) -> f64 {
        self.raw.phi
    }

    pub fn period(&self) -> f64 {
        self.raw.period
    }

    pub fn mask_steps(&self) -> usize {
        self.raw.mask_steps
    }

    /// Duration of one masking step, `P / N_m`.
    pub fn step_len(&self) -> f64 {
        self.step_len
    }

    /// True when the gain is at or above the oscillation threshold at the
    /// quadrature operating point.
    pub fn may_oscillate(&self) -> bool {
        self.raw.beta >= 1.0 && (self.raw.phi - FRAC_PI_4).abs() < 1e-12
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        validate(RawParams::default()).expect("default parameters are valid")
    }
}
