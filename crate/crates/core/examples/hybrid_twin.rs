//! The simulated hardware: how far its states drift from the fast model, and
//! what retraining the outputs on its features buys.

use dcmz::config::RunConfig;
use dcmz::experiment::Experiment;
use dcmz::masking::{DriveSequence, MaskSet};
use dcmz::twin::{correlation, twin_forward, TwinConfig};
use dcmz::{fast_model, SystemParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dcmz::Result<()> {
    let params = SystemParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let masks = MaskSet::uniform(params.mask_steps(), 1, 2, 0.5, &mut rng);
    let frames: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let drive = DriveSequence::streaming(&masks, &frames)?;
    let sim = fast_model::forward(&drive, &params, None)?;
    for (label, cfg) in [
        ("null twin", TwinConfig::null()),
        ("default twin", TwinConfig::default()),
        ("gain +0.15", TwinConfig { delta_beta: 0.15, ..TwinConfig::default() }),
    ] {
        let twin = twin_forward(&drive, &params, &cfg, 0, 1)?;
        println!("{label:<13} correlation with simulation {:.5}", correlation(&sim.a_bar, &twin.a_bar));
    }

    let exp = Experiment::new(RunConfig::preset("seq-desk")?)?;
    let trained = exp.optimize(None)?.masks;
    let h = exp.hybrid(&trained)?;
    println!();
    println!("simulation features, refit outputs   {:.2}%", 100.0 * h.sim_error);
    println!("twin features, refit outputs         {:.2}%", 100.0 * h.twin_error);
    println!("twin features, simulation outputs    {:.2}%", 100.0 * h.twin_reuse_error);
    Ok(())
}
