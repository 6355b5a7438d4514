//! Reverse-mode gradients through the delayed recurrence.
//!
//! The state `a[j]` feeds the loss along three paths: directly through the
//! readout, into `a[j+1]` with weight `rho0`, and into the drive term
//! `g[j + N_m]` through the delay line. With `d[j]` the adjoint of `a[j]`
//! and `s[j] = g'[j] (rho2 d[j] + rho1 d[j+1])` the adjoint of the phase
//! argument at step `j`:
//!
//! ```text
//! d[j] = readout[j] + rho0 d[j+1] + s[j + N_m]
//! ```
//!
//! `s[j]` is also the adjoint of the drive `z[j]`, which distributes onto
//! `m0[k]` and `M[k,:]` for the step's mask position `k`. The phase wrap is
//! differentiated as the identity.

use crate::error::{Error, Result};
use crate::fast_model::{self, gamma_slope, RhoCoeffs, StateTrace};
use crate::masking::{dot, DriveSequence, MaskSet};
use crate::params::SystemParams;
use crate::train::cross_entropy;

/// How data instances map onto masking periods.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    /// One instance repeated for `repeats` periods; only the final period is
    /// read out. The run starts from zero history.
    StaticRepeat { repeats: usize },
    /// One frame per period, read out every period.
    Streaming,
}

/// A single training example. `inputs` holds the frames row-major (a
/// single frame for static encoding); `labels` holds one class per readout.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub inputs: &'a [f64],
    pub labels: &'a [usize],
}

/// Gradient of a scalar loss with respect to every mask parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub d_m0: Vec<f64>,
    pub d_m: Vec<f64>,
    pub d_u: Vec<f64>,
    pub d_y0: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(masks: &MaskSet) -> Self {
        Gradients {
            d_m0: vec![0.0; masks.m0.len()],
            d_m: vec![0.0; masks.m.len()],
            d_u: vec![0.0; masks.u.len()],
            d_y0: vec![0.0; masks.y0.len()],
        }
    }

    /// All components in the parameter order of [`MaskSet::params`].
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.d_m0
            .iter()
            .chain(&self.d_m)
            .chain(&self.d_u)
            .chain(&self.d_y0)
            .copied()
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.d_m0, &mut self.d_m, &mut self.d_u, &mut self.d_y0]
    }

    fn blocks(&self) -> [&Vec<f64>; 4] {
        [&self.d_m0, &self.d_m, &self.d_u, &self.d_y0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Forward pass for one example, keeping what the backward pass needs.
#[derive(Clone, Debug)]
pub struct Pass {
    pub drive: DriveSequence,
    pub trace: StateTrace,
    /// `(period, label)` for every readout.
    pub readouts: Vec<(usize, usize)>,
    /// Output vector for each readout.
    pub logits: Vec<Vec<f64>>,
}

impl Pass {
    /// Number of readouts whose arg-max equals the label.
    pub fn correct(&self) -> usize {
        self.readouts
            .iter()
            .zip(&self.logits)
            .filter(|((_, label), y)| argmax(y) == *label)
            .count()
    }
}

pub(crate) fn argmax(y: &[f64]) -> usize {
    y.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Builds the drive for an example under the given encoding.
pub fn encode_example(masks: &MaskSet, encoding: Encoding, ex: &Example) -> Result<DriveSequence> {
    match encoding {
        Encoding::StaticRepeat { repeats } => {
            if repeats == 0 {
                return Err(Error::Config("static encoding needs at least one repeat".into()));
            }
            DriveSequence::repeated(masks, ex.inputs, repeats)
        }
        Encoding::Streaming => DriveSequence::streaming(masks, ex.inputs),
    }
}

/// Periods that are read out, paired with their labels.
fn readouts(encoding: Encoding, periods: usize, labels: &[usize]) -> Result<Vec<(usize, usize)>> {
    let out: Vec<(usize, usize)> = match encoding {
        Encoding::StaticRepeat { .. } => labels.first().map(|&l| vec![(periods - 1, l)]).unwrap_or_default(),
        Encoding::Streaming => labels.iter().copied().enumerate().collect(),
    };
    let expected = match encoding {
        Encoding::StaticRepeat { .. } => 1,
        Encoding::Streaming => periods,
    };
    if out.len() != expected || labels.len() != expected {
        return Err(Error::Shape(format!(
            "{} labels for {expected} readouts",
            labels.len()
        )));
    }
    Ok(out)
}

/// Output vector `y0 + U a` for one period of states.
pub fn readout(masks: &MaskSet, states: &[f64]) -> Vec<f64> {
    (0..masks.n_out())
        .map(|o| masks.y0[o] + dot(masks.output_row(o), states))
        .collect()
}

pub fn forward_example(
    masks: &MaskSet,
    params: &SystemParams,
    encoding: Encoding,
    ex: &Example,
) -> Result<Pass> {
    let drive = encode_example(masks, encoding, ex)?;
    let trace = fast_model::forward(&drive, params, None)?;
    let readouts = readouts(encoding, drive.periods(), ex.labels)?;
    let logits = readouts
        .iter()
        .map(|&(p, _)| readout(masks, trace.period(p)))
        .collect();
    Ok(Pass {
        drive,
        trace,
        readouts,
        logits,
    })
}

/// Mean cross-entropy over the readouts of one example.
pub fn example_loss(pass: &Pass) -> Result<f64> {
    let mut total = 0.0;
    for (y, &(_, label)) in pass.logits.iter().zip(&pass.readouts) {
        total += cross_entropy(y, label)?.0;
    }
    Ok(total / pass.readouts.len() as f64)
}

/// Loss of one example, evaluated with a fresh forward pass.
pub fn loss(masks: &MaskSet, params: &SystemParams, encoding: Encoding, ex: &Example) -> Result<f64> {
    example_loss(&forward_example(masks, params, encoding, ex)?)
}

/// Reverse pass.
///
/// `inputs` are the frames the drive was built from (row-major, indexed by
/// `drive.instance`); `output_adjoints` pairs each read-out period with the
/// loss gradient at that period's output vector.
pub fn backward(
    trace: &StateTrace,
    drive: &DriveSequence,
    inputs: &[f64],
    output_adjoints: &[(usize, Vec<f64>)],
    masks: &MaskSet,
    params: &SystemParams,
) -> Result<Gradients> {
    let n = masks.n_mask();
    let n_in = masks.n_in();
    let n_out = masks.n_out();
    let len = drive.len();
    if trace.len() != len || trace.n_mask() != n || drive.n_mask() != n {
        return Err(Error::Shape(format!(
            "trace of {} steps does not match drive of {len} steps",
            trace.len()
        )));
    }
    let instances = if n_in == 0 { 0 } else { inputs.len() / n_in };
    if inputs.len() != instances * n_in || drive.instance.iter().any(|&i| i >= instances) {
        return Err(Error::Shape("drive refers to inputs that were not supplied".into()));
    }

    let mut grads = Gradients::zeros_like(masks);
    // Readout adjoint per step.
    let mut direct = vec![0.0; len];
    for (period, dy) in output_adjoints {
        if *period >= drive.periods() || dy.len() != n_out {
            return Err(Error::Shape(format!("bad output adjoint for period {period}")));
        }
        let states = trace.period(*period);
        for (o, &g) in dy.iter().enumerate() {
            grads.d_y0[o] += g;
            let row = &mut grads.d_u[o * n..(o + 1) * n];
            for (k, r) in row.iter_mut().enumerate() {
                *r += g * states[k];
            }
            let u = masks.output_row(o);
            for (k, d) in direct[period * n..(period + 1) * n].iter_mut().enumerate() {
                *d += g * u[k];
            }
        }
    }

    let rho = RhoCoeffs::from_params(params);
    let (beta, phi) = (params.beta(), params.phi());
    let mut delta = vec![0.0; len + 1];
    let mut dz = vec![0.0; len];
    for j in (0..len).rev() {
        let feedback = if j + n < len { dz[j + n] } else { 0.0 };
        delta[j] = direct[j] + rho.rho0 * delta[j + 1] + feedback;
        let d_gamma = rho.rho2 * delta[j] + rho.rho1 * delta[j + 1];
        dz[j] = gamma_slope(trace.delayed(j), drive.z[j], beta, phi) * d_gamma;
    }

    // Sum drive adjoints per (instance, mask step) before the outer product.
    let mut per_instance = vec![0.0; instances * n];
    for (j, &g) in dz.iter().enumerate() {
        per_instance[drive.instance_of_step(j) * n + j % n] += g;
    }
    for (inst, dzs) in per_instance.chunks_exact(n).enumerate() {
        let s = &inputs[inst * n_in..(inst + 1) * n_in];
        for (k, &g) in dzs.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.d_m0[k] += g;
            let row = &mut grads.d_m[k * n_in..(k + 1) * n_in];
            for (r, &x) in row.iter_mut().zip(s) {
                *r += g * x;
            }
        }
    }
    Ok(grads)
}

/// Loss and gradient of one example; also returns the number of correct
/// readouts.
pub fn loss_and_gradient(
    masks: &MaskSet,
    params: &SystemParams,
    encoding: Encoding,
    ex: &Example,
) -> Result<(f64, Gradients, usize)> {
    let pass = forward_example(masks, params, encoding, ex)?;
    let count = pass.readouts.len() as f64;
    let mut total = 0.0;
    let mut adjoints = Vec::with_capacity(pass.readouts.len());
    for (y, &(period, label)) in pass.logits.iter().zip(&pass.readouts) {
        let (l, mut dy) = cross_entropy(y, label)?;
        total += l;
        dy.iter_mut().for_each(|v| *v /= count);
        adjoints.push((period, dy));
    }
    let grads = backward(&pass.trace, &pass.drive, ex.inputs, &adjoints, masks, params)?;
    Ok((total / count, grads, pass.correct()))
}

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Parameter index (storage order m0, M, U, y0) with the largest error.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub n_params: usize,
    /// `(analytic, numeric)` for every parameter, in storage order.
    pub components: Vec<(f64, f64)>,
}

impl GradcheckReport {
    /// Worst relative error over components whose magnitude exceeds `floor`.
    /// Gradients near machine precision (for example `d_U` when every state
    /// sits at the rounding-level fixed point) are invisible to central
    /// differences and are skipped.
    pub fn max_rel_error_above(&self, floor: f64) -> f64 {
        self.components
            .iter()
            .filter(|(a, n)| a.abs() + n.abs() > floor)
            .map(|&(a, n)| rel_error(a, n))
            .fold(0.0, f64::max)
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (numeric - analytic).abs() / (numeric.abs() + analytic.abs() + 1e-12)
}

/// Compares [`loss_and_gradient`] against central differences
/// `(L(p + eps) - L(p - eps)) / 2 eps` for every parameter.
pub fn gradcheck(
    masks: &MaskSet,
    params: &SystemParams,
    encoding: Encoding,
    ex: &Example,
    epsilon: f64,
) -> Result<GradcheckReport> {
    let (_, grads, _) = loss_and_gradient(masks, params, encoding, ex)?;
    let analytic: Vec<f64> = grads.values().collect();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        n_params: analytic.len(),
        components: Vec::with_capacity(analytic.len()),
    };
    let mut probe = masks.clone();
    for (i, &g_bp) in analytic.iter().enumerate() {
        let original = *probe.param_mut(i);
        *probe.param_mut(i) = original + epsilon;
        let plus = loss(&probe, params, encoding, ex)?;
        *probe.param_mut(i) = original - epsilon;
        let minus = loss(&probe, params, encoding, ex)?;
        *probe.param_mut(i) = original;
        let g_fd = (plus - minus) / (2.0 * epsilon);
        let rel = rel_error(g_bp, g_fd);
        report.components.push((g_bp, g_fd));
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = g_bp;
            report.worst_numeric = g_fd;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn instance(n_mask: usize, n_in: usize, n_out: usize, seed: u64) -> (MaskSet, SystemParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut masks = MaskSet::uniform(n_mask, n_in, n_out, 0.8, &mut rng);
        for v in masks.u.iter_mut().chain(masks.y0.iter_mut()) {
            *v = rng.gen_range(-3.0..3.0);
        }
        // Few steps per period so that P_m / T is of order one.
        let params = SystemParams::new(0.241, 0.8, 0.241 * n_mask as f64 * 0.5, FRAC_PI_4, n_mask).unwrap();
        (masks, params)
    }

    #[test]
    fn zero_readout_kills_input_gradients() {
        let (mut masks, params) = instance(8, 3, 4, 1);
        masks.u.iter_mut().for_each(|v| *v = 0.0);
        let inputs = [0.3, -0.2, 0.9];
        let ex = Example { inputs: &inputs, labels: &[2] };
        let (_, g, _) = loss_and_gradient(&masks, &params, Encoding::StaticRepeat { repeats: 3 }, &ex).unwrap();
        assert!(g.d_m.iter().chain(&g.d_m0).all(|&v| v == 0.0));
        assert!(g.d_y0.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn streaming_gradcheck_small_instance() {
        let (masks, params) = instance(8, 3, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inputs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ex = Example { inputs: &inputs, labels: &[0, 2] };
        let report = gradcheck(&masks, &params, Encoding::Streaming, &ex, 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn static_repeat_gradcheck_ten_periods() {
        let (masks, params) = instance(8, 3, 3, 3);
        let inputs = [0.5, -0.7, 0.2];
        let ex = Example { inputs: &inputs, labels: &[1] };
        let report = gradcheck(&masks, &params, Encoding::StaticRepeat { repeats: 10 }, &ex, 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn zero_masks_check_passes() {
        let (mut masks, params) = instance(4, 2, 2, 4);
        masks.m0.iter_mut().chain(masks.m.iter_mut()).for_each(|v| *v = 0.0);
        let inputs = [0.4, -0.6];
        let ex = Example { inputs: &inputs, labels: &[1] };
        let report = gradcheck(&masks, &params, Encoding::StaticRepeat { repeats: 4 }, &ex, 1e-6).unwrap();
        assert!(report.max_rel_error_above(1e-10) < 1e-6, "{report:?}");
        // States rest at sin^2(phi) - 1/2, which is zero up to rounding, so
        // d_U is rounding noise that finite differences resolve as zero.
        let n_in = masks.m0.len() + masks.m.len();
        for &(a, n) in &report.components[n_in..n_in + masks.u.len()] {
            assert!(a.abs() < 1e-15 && n.abs() < 1e-10, "{a} {n}");
        }
    }

    #[test]
    fn mismatched_trace_rejected() {
        let (masks, params) = instance(4, 1, 2, 5);
        let d1 = DriveSequence::from_phases(4, vec![0.1; 8]).unwrap();
        let d2 = DriveSequence::from_phases(4, vec![0.1; 12]).unwrap();
        let trace = fast_model::forward(&d1, &params, None).unwrap();
        assert!(backward(&trace, &d2, &[0.0; 3], &[], &masks, &params).is_err());
    }

    #[test]
    fn gradient_is_linear_in_output_adjoints() {
        let (masks, params) = instance(6, 2, 3, 6);
        let inputs = [0.3, 0.1, -0.4, 0.8];
        let drive = DriveSequence::streaming(&masks, &inputs).unwrap();
        let trace = fast_model::forward(&drive, &params, None).unwrap();
        let a1 = vec![(0, vec![0.2, -0.1, 0.5]), (1, vec![0.0, 0.3, -0.2])];
        let a2 = vec![(1, vec![1.0, 0.4, -0.7])];
        let alpha = -1.7;
        let g1 = backward(&trace, &drive, &inputs, &a1, &masks, &params).unwrap();
        let g2 = backward(&trace, &drive, &inputs, &a2, &masks, &params).unwrap();
        let mut combined: Vec<(usize, Vec<f64>)> = a1
            .iter()
            .map(|(p, v)| (*p, v.iter().map(|x| alpha * x).collect()))
            .collect();
        combined.extend(a2);
        let g = backward(&trace, &drive, &inputs, &combined, &masks, &params).unwrap();
        let mut expected = g1.clone();
        expected.scale(alpha);
        expected.add_assign(&g2);
        for (x, y) in g.values().zip(expected.values()) {
            assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn early_readout_has_no_later_adjoint() {
        // A loss on period 0 only cannot depend on the drive of period 1.
        let (masks, params) = instance(6, 2, 2, 8);
        let inputs = [0.3, 0.1, -0.4, 0.8];
        let drive = DriveSequence::streaming(&masks, &inputs).unwrap();
        let trace = fast_model::forward(&drive, &params, None).unwrap();
        let adj = vec![(0, vec![1.0, -1.0])];
        let g = backward(&trace, &drive, &inputs[..2], &adj, &masks, &params);
        // Instance 1 is referenced by the drive, so slicing it away errors;
        // with both instances present its contribution is exactly zero.
        assert!(g.is_err());
        let g_full = backward(&trace, &drive, &inputs, &adj, &masks, &params).unwrap();
        let g_zero_second = backward(&trace, &drive, &[0.3, 0.1, 0.0, 0.0], &adj, &masks, &params).unwrap();
        assert_eq!(g_full, g_zero_second);
    }
}
