//! Mask training on digits with the `mnist-desk` preset, followed by output
//! retraining. Trailing `--key value` pairs override the preset, e.g.
//!
//! cargo run --release --example train_mnist_desk -- --iterations 2000
//!
//! Uses the bundled digit subset unless `MNIST_DIR` is set.

use dcmz::config::{parse_overrides, RunConfig};
use dcmz::experiment::Experiment;

fn main() -> dcmz::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut overrides = vec![("task".to_string(), "mnist-desk".to_string())];
    overrides.extend(parse_overrides(&args)?);
    let exp = Experiment::new(RunConfig::resolve(None, &overrides)?)?;

    let outcome = exp.optimize(None)?;
    let (_, joint) = exp.evaluate(&outcome.masks)?;
    let (_, errors) = exp.refit_outputs(&outcome.masks)?;
    println!("jointly trained test error: {:.2}%", 100.0 * joint);
    println!(
        "after output retraining: train {:.2}%  validation {:.2}%  test {:.2}%",
        100.0 * errors.train,
        100.0 * errors.validation,
        100.0 * errors.test
    );
    Ok(())
}
