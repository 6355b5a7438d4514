//! Command-line front end. Every subcommand accepts trailing `--key value`
//! pairs that override configuration keys.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bptt::{gradcheck, Encoding, Example};
use crate::checks::{self, CheckReport, GRADCHECK_TOL};
use crate::config::{parse_overrides, DatasetKind, RunConfig, Scenario};
use crate::data::{read_maybe_gz, synth_timitlike, LabeledData, SequenceDataset, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC, SEQ_MAGIC};
use crate::dde_oracle;
use crate::error::{Error, Result};
use crate::experiment::{synth_config, write_summary, Experiment};
use crate::fast_model;
use crate::masking::{MaskSet, MASK_MAGIC};
use crate::params::SystemParams;
use crate::twin::{twin_forward, write_twin_csv};

#[derive(Parser, Debug)]
#[command(name = "dcmz", version, about = "Train and evaluate masks for a photonic delay-loop model")]
pub struct Cli {
    /// Configuration file (`key = value` per line).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

/// Trailing configuration overrides such as `--task mnist-desk --iterations 500`.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pub pairs: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train input and output masks with backpropagation through time.
    Train {
        /// Start from these masks instead of a fresh initialization.
        #[arg(long, value_name = "PATH")]
        init: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Refit the output masks on simulated (or twin) features.
    Retrain {
        #[arg(long, value_name = "PATH")]
        masks: PathBuf,
        /// Measure features on the hardware twin.
        #[arg(long)]
        twin: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Test-set loss and error rate of saved masks.
    Eval {
        #[arg(long, value_name = "PATH")]
        masks: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one comparison scenario, or all of them in order.
    Run {
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a validation suite; exits with 1 if a threshold is violated.
    Check {
        #[arg(value_enum)]
        suite: Suite,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Finite-difference check of the gradient on one random instance.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        n_mask: usize,
        #[arg(long, default_value_t = 3)]
        n_in: usize,
        #[arg(long, default_value_t = 3)]
        n_out: usize,
        /// Periods of drive (frames when streaming, repeats otherwise).
        #[arg(long, default_value_t = 2)]
        periods: usize,
        #[arg(long)]
        streaming: bool,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
    },
    /// Write the state trace of one test example as CSV.
    ExportTrace {
        /// Masks to drive the loop with (fresh initialization if omitted).
        #[arg(long, value_name = "PATH")]
        masks: Option<PathBuf>,
        /// Test example index.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_enum, default_value = "fast")]
        model: TraceModel,
        #[arg(long, value_name = "PATH")]
        file: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Subcommand, Debug)]
pub enum DataCommand {
    /// Generate the synthetic sequence task and save it.
    Synth {
        #[arg(long, value_name = "PATH")]
        file: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Summarize an IDX, sequence or mask file.
    Inspect { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Optimized,
    Shuffled,
    Random,
    Twin,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Gradcheck,
    Oracle,
    Stability,
    Coefficients,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TraceModel {
    Fast,
    Twin,
    Oracle,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(cli: &Cli, overrides: &Overrides) -> Result<RunConfig> {
    let mut pairs = parse_overrides(&overrides.pairs)?;
    if let Some(seed) = cli.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    if let Some(workers) = cli.workers {
        pairs.push(("workers".into(), workers.to_string()));
    }
    RunConfig::resolve(cli.config.as_deref(), &pairs)
}

/// Runs a parsed command; `Ok(1)` signals a validation failure.
pub fn execute(cli: &Cli) -> Result<i32> {
    let out = &cli.out;
    match &cli.command {
        Command::Train { init, overrides } => {
            let exp = Experiment::new(resolve(cli, overrides)?)?;
            let dir = out.join("train");
            let outcome = match init {
                Some(path) => {
                    let mut spec = exp.train_spec();
                    spec.checkpoint = Some(crate::train::Checkpointing {
                        dir: dir.clone(),
                        every: exp.cfg.checkpoint_every,
                    });
                    crate::train::train_masks(exp.workload.train(), &spec, &exp.params, MaskSet::load(path)?)?
                }
                None => exp.optimize(Some(&dir))?,
            };
            let (loss, error) = exp.evaluate(&outcome.masks)?;
            println!("test loss {loss:.5}, test error {:.2}%", 100.0 * error);
            println!("masks: {}", dir.join("final.bin").display());
            Ok(0)
        }
        Command::Retrain { masks, twin, overrides } => {
            let exp = Experiment::new(resolve(cli, overrides)?)?;
            let masks = MaskSet::load(masks)?;
            let dir = out.join("retrain");
            fs::create_dir_all(&dir)?;
            if *twin {
                let outcome = exp.hybrid(&masks)?;
                println!("{}", serde_json::to_string_pretty(&outcome)?);
            } else {
                let (fitted, errors) = exp.refit_outputs(&masks)?;
                fitted.save(&dir.join("retrained.bin"))?;
                println!(
                    "train {:.2}%, validation {:.2}%, test {:.2}%",
                    100.0 * errors.train,
                    100.0 * errors.validation,
                    100.0 * errors.test
                );
                println!("masks: {}", dir.join("retrained.bin").display());
            }
            Ok(0)
        }
        Command::Eval { masks, overrides } => {
            let exp = Experiment::new(resolve(cli, overrides)?)?;
            let masks = MaskSet::load(masks)?;
            let (loss, error) = exp.evaluate(&masks)?;
            println!("test loss {loss:.5}, test error {:.2}% on {} examples", 100.0 * error, exp.workload.test().len());
            Ok(0)
        }
        Command::Run { scenario, overrides } => {
            let mut cfg = resolve(cli, overrides)?;
            let scenarios = match scenario {
                Some(ScenarioArg::All) => Scenario::ALL.to_vec(),
                Some(s) => vec![to_scenario(*s)],
                None => vec![cfg.scenario],
            };
            cfg.scenario = scenarios[0];
            let exp = Experiment::new(cfg)?;
            let mut reports = Vec::new();
            for sc in scenarios {
                let r = exp.run(sc, out)?;
                println!(
                    "{sc:<9} train {:6.2}%  validation {:6.2}%  test {:6.2}%",
                    100.0 * r.errors.train,
                    100.0 * r.errors.validation,
                    100.0 * r.errors.test
                );
                reports.push(r);
            }
            if reports.len() > 1 {
                write_summary(&reports, out)?;
            }
            Ok(0)
        }
        Command::Check { suite, overrides } => {
            let cfg = resolve(cli, overrides)?;
            let params = cfg.system_params()?;
            let suites = match suite {
                Suite::All => vec![Suite::Gradcheck, Suite::Oracle, Suite::Stability, Suite::Coefficients],
                s => vec![*s],
            };
            let mut ok = true;
            for s in suites {
                let report = run_suite(s, &params, cfg.seed)?;
                println!("{report}");
                ok &= report.passed();
            }
            Ok(if ok { 0 } else { 1 })
        }
        Command::Data { command } => match command {
            DataCommand::Synth { file, overrides } => {
                let mut cfg = resolve(cli, overrides)?;
                cfg.dataset = DatasetKind::Synthetic;
                let data = synth_timitlike(&synth_config(&cfg))?;
                let path = file.clone().unwrap_or_else(|| out.join("synthetic.seq"));
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent)?;
                }
                data.save(&path)?;
                println!(
                    "{} sequences, {} frames, {} inputs, {} classes -> {}",
                    data.len(),
                    data.total_frames(),
                    data.n_in,
                    data.n_classes,
                    path.display()
                );
                Ok(0)
            }
            DataCommand::Inspect { path } => {
                println!("{}", inspect(path)?);
                Ok(0)
            }
        },
        Command::Gradcheck {
            n_mask,
            n_in,
            n_out,
            periods,
            streaming,
            epsilon,
        } => {
            let seed = cli.seed.unwrap_or(1);
            let report = random_gradcheck(*n_mask, *n_in, *n_out, *periods, *streaming, *epsilon, seed)?;
            println!(
                "max relative error {:.3e} at parameter {} (analytic {:.6e}, numeric {:.6e}) over {} parameters",
                report.max_rel_error, report.worst_index, report.worst_analytic, report.worst_numeric, report.n_params
            );
            Ok(if report.max_rel_error < GRADCHECK_TOL { 0 } else { 1 })
        }
        Command::ExportTrace {
            masks,
            index,
            model,
            file,
            overrides,
        } => {
            let exp = Experiment::new(resolve(cli, overrides)?)?;
            let masks = match masks {
                Some(p) => MaskSet::load(p)?,
                None => exp.initial_masks(),
            };
            let test = exp.workload.test();
            if *index >= test.len() {
                return Err(Error::Config(format!("index {index} outside the {} test examples", test.len())));
            }
            let drive = crate::bptt::encode_example(&masks, exp.encoding(), &test.example(*index))?;
            let path = file.clone().unwrap_or_else(|| out.join(format!("trace_{index}.csv")));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            let w = BufWriter::new(File::create(&path)?);
            match model {
                TraceModel::Fast => fast_model::forward(&drive, &exp.params, None)?.write_csv(w)?,
                TraceModel::Twin => {
                    let cfg = exp.cfg.twin();
                    let position = exp.workload.train().len() + index;
                    let total = exp.workload.train().len() + test.len();
                    let trace = twin_forward(&drive, &exp.params, &cfg, position, total)?;
                    write_twin_csv(&trace, &cfg, w)?
                }
                TraceModel::Oracle => {
                    let substeps = 20;
                    let h = exp.params.step_len() / substeps as f64;
                    let trace = dde_oracle::integrate(&drive, &exp.params, h, &|_| 0.0)?;
                    trace.write_csv(w, substeps, exp.params.mask_steps())?
                }
            }
            println!("{} steps -> {}", drive.len(), path.display());
            Ok(0)
        }
    }
}

fn to_scenario(s: ScenarioArg) -> Scenario {
    match s {
        ScenarioArg::Optimized => Scenario::Optimized,
        ScenarioArg::Shuffled => Scenario::Shuffled,
        ScenarioArg::Random => Scenario::Random,
        ScenarioArg::Twin | ScenarioArg::All => Scenario::Twin,
    }
}

fn run_suite(suite: Suite, params: &SystemParams, seed: u64) -> Result<CheckReport> {
    match suite {
        Suite::Gradcheck => checks::gradcheck_suite(seed),
        Suite::Oracle => checks::oracle_suite(params, 20, 1.0, seed),
        Suite::Stability => checks::stability_suite(params, 50, seed),
        Suite::Coefficients => checks::coefficient_suite(200),
        Suite::All => unreachable!("expanded by the caller"),
    }
}

/// Gradient check on random masks and inputs.
pub fn random_gradcheck(
    n_mask: usize,
    n_in: usize,
    n_out: usize,
    periods: usize,
    streaming: bool,
    epsilon: f64,
    seed: u64,
) -> Result<crate::bptt::GradcheckReport> {
    if n_mask == 0 || n_out == 0 || periods == 0 {
        return Err(Error::Config("n_mask, n_out and periods must be at least 1".into()));
    }
    let params = SystemParams::new(0.241, 0.8, 0.241 * 0.5 * n_mask as f64, std::f64::consts::FRAC_PI_4, n_mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = MaskSet::uniform(n_mask, n_in, n_out, 0.8, &mut rng);
    for v in masks.u.iter_mut().chain(masks.y0.iter_mut()) {
        *v = rng.gen_range(-3.0..3.0);
    }
    let (frames, encoding) = if streaming {
        (periods, Encoding::Streaming)
    } else {
        (1, Encoding::StaticRepeat { repeats: periods })
    };
    let inputs: Vec<f64> = (0..frames * n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..frames).map(|_| rng.gen_range(0..n_out)).collect();
    gradcheck(
        &masks,
        &params,
        encoding,
        &Example {
            inputs: &inputs,
            labels: &labels,
        },
        epsilon,
    )
}

/// One-paragraph description of a data or mask file.
pub fn inspect(path: &Path) -> Result<String> {
    let bytes = read_maybe_gz(path)?;
    if bytes.len() < 8 {
        return Err(Error::format(path, "file too short to identify"));
    }
    let be = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    let le = u32::from_le_bytes(bytes[..4].try_into().unwrap());
    let le64 = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let histogram = |labels: &mut dyn Iterator<Item = usize>| {
        let mut counts = Vec::<usize>::new();
        for l in labels {
            if counts.len() <= l {
                counts.resize(l + 1, 0);
            }
            counts[l] += 1;
        }
        counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
    };
    if be == IDX_IMAGE_MAGIC {
        let (n, rows, cols, pixels) = crate::data::parse_idx_images(&bytes, path)?;
        let mean = pixels.iter().map(|&p| p as f64).sum::<f64>() / pixels.len().max(1) as f64 / 255.0;
        Ok(format!("IDX images: {n} x {rows}x{cols}, mean intensity {mean:.4}"))
    } else if be == IDX_LABEL_MAGIC {
        let labels = crate::data::parse_idx_labels(&bytes, path)?;
        Ok(format!(
            "IDX labels: {} entries, class counts [{}]",
            labels.len(),
            histogram(&mut labels.iter().map(|&l| l as usize))
        ))
    } else if le == SEQ_MAGIC {
        let data = SequenceDataset::from_bytes(&bytes, path)?;
        Ok(format!(
            "sequences: {} sequences, {} frames, {} inputs, {} classes, class counts [{}]",
            data.len(),
            data.total_frames(),
            data.n_in,
            data.n_classes,
            histogram(&mut data.sequences.iter().flat_map(|s| s.labels.iter().copied()))
        ))
    } else if le64 == MASK_MAGIC {
        let masks = MaskSet::from_bytes(&bytes, path)?;
        let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Ok(format!(
            "masks: N_m={} N_in={} N_out={}, max |M| {:.4}, max |U| {:.4}, sha256 {}",
            masks.n_mask(),
            masks.n_in(),
            masks.n_out(),
            max_abs(&masks.m),
            max_abs(&masks.u),
            masks.content_hash()
        ))
    } else {
        Err(Error::format(path, "unrecognized file format"))
    }
}
