//! Frame classification on generated 39-channel sequences with streamed
//! input: every frame occupies one delay period.

use dcmz::config::RunConfig;
use dcmz::data::synth_timitlike;
use dcmz::experiment::{synth_config, Experiment};

fn main() -> dcmz::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cfg = RunConfig::preset("seq-desk")?;
    let data = synth_timitlike(&synth_config(&cfg))?;
    let first = &data.sequences[0];
    let labels: Vec<String> = first.labels.iter().take(30).map(|l| l.to_string()).collect();
    println!("{} sequences x {} frames, {} channels", data.sequences.len(), cfg.seq_length, data.n_in);
    println!("labels of sequence 0: {}", labels.join(""));

    let exp = Experiment::new(cfg)?;
    let outcome = exp.optimize(None)?;
    for p in outcome.curve.iter().step_by(250) {
        println!("iteration {:5}  loss {:.4}", p.iteration, p.loss);
    }
    let (_, errors) = exp.refit_outputs(&outcome.masks)?;
    println!("frame error: validation {:.2}%  test {:.2}%", 100.0 * errors.validation, 100.0 * errors.test);
    Ok(())
}
