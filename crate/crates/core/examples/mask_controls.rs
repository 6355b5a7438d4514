//! Trained masks against two controls on the sequence task: the same masks
//! with their time slots permuted, and random masks at the best of several
//! scales. Each gets a fresh output layer.

use dcmz::config::RunConfig;
use dcmz::experiment::Experiment;

fn main() -> dcmz::Result<()> {
    let exp = Experiment::new(RunConfig::preset("seq-desk")?)?;
    let trained = exp.optimize(None)?.masks;

    let (_, optimized) = exp.refit_outputs(&trained)?;
    let (_, shuffled) = exp.refit_outputs(&exp.shuffled_masks(&trained))?;
    let (_, random, scale, search) = exp.random_search()?;

    for (s, err) in &search {
        println!("random scale {s:<6} validation {:.2}%", 100.0 * err);
    }
    println!("optimized        test {:.2}%", 100.0 * optimized.test);
    println!("time-shuffled    test {:.2}%", 100.0 * shuffled.test);
    println!("random (x{scale:<5}) test {:.2}%", 100.0 * random.test);
    Ok(())
}
