//! Drives the fast model at the laboratory parameters with a random
//! single-channel input stream and writes the per-step states as CSV.
//!
//! cargo run --release --example fast_model_trace -- [out.csv]

use std::fs::File;
use std::io::BufWriter;

use dcmz::masking::{DriveSequence, MaskSet};
use dcmz::{fast_model, SystemParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dcmz::Result<()> {
    let params = SystemParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let masks = MaskSet::uniform(params.mask_steps(), 1, 2, 0.5, &mut rng);
    let frames: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let drive = DriveSequence::streaming(&masks, &frames)?;
    let trace = fast_model::forward(&drive, &params, None)?;

    let rho = fast_model::RhoCoeffs::from_params(&params);
    println!("P_m = {:.5}, rho = ({:.5}, {:.5}, {:.5})", params.step_len(), rho.rho0, rho.rho1, rho.rho2);
    for p in (0..trace.periods()).step_by(5) {
        let s = trace.period(p);
        let (lo, hi) = s.iter().fold((f64::MAX, f64::MIN), |(l, h), &a| (l.min(a), h.max(a)));
        println!("period {p:2}: states in [{lo:+.4}, {hi:+.4}]");
    }
    if let Some(path) = std::env::args().nth(1) {
        trace.write_csv(BufWriter::new(File::create(&path)?))?;
        println!("wrote {} steps to {path}", trace.len());
    }
    Ok(())
}
