//! Command implementations. Each command resolves its configuration, writes its outputs
//! into the output directory and finishes with `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use reflow_core::data::{bimodal_1d, burgers_training_pairs, gen_power_law_ensemble, macro_micro_dataset, LinearGaussianSpec, PowerLawFieldSpec};
use reflow_core::io::{read_checkpoint, read_ensemble, write_checkpoint, write_ensemble};
use reflow_core::metrics::{macro_micro_eval, w1_1d, MacroProblem};
use reflow_core::sampler::{integrate, IntegratorSpec, OdeSampler};
use reflow_core::spectral::{ensemble_energy_spectrum, ensemble_structure_function};
use reflow_core::transport::{history_csv, train, Coupling, GaussianTransportProblem, Mlp, VelocityField, VelocityModel};
use reflow_core::verify::*;
use reflow_core::{Ensemble, Grid, Rng};

use crate::bench::{bench_integrators, build_problem, sweep_controller, Table};
use crate::config::*;
use crate::error::{CliError, CliResult, EXIT_NUMERIC};
use crate::plot::{loglog_svg, parse_table_csv, parse_xy_csv, scatter_svg};

#[derive(Debug, Parser)]
#[command(name = "reflow", version, about = "Rectified-flow transport laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train an MLP velocity on a dataset.
    Train(TrainArgs),
    /// Draw samples from a checkpointed velocity.
    Sample(SampleArgs),
    /// Spectra, structure functions or law-level metrics for a dataset (and model).
    Eval(EvalArgs),
    /// Fixed-step integrators versus the adaptive controller.
    BenchIntegrators(BenchArgs),
    /// The 20-configuration controller sweep.
    SweepController(BenchArgs),
    /// Run the error-theory checks and write one JSON report per check.
    Verify(VerifyArgs),
    /// Render a CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (output file for `plot`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub kind: Option<DataKind>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// `euler-16`, `rk2-16`, `rk4-16`, `midpoint-32` or `adaptive`.
    #[arg(long)]
    pub integrator: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub integrator: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub benchmark: Option<Benchmark>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub reference_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<PlotKind>,
    #[arg(long)]
    pub title: Option<String>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn out_dir(p: &Option<PathBuf>) -> CliResult<PathBuf> {
    let d = require_path(p, "output")?;
    fs::create_dir_all(&d).map_err(|e| CliError::data(format!("{}: {e}", d.display())))?;
    Ok(d)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    write(path, serde_json::to_string_pretty(v).expect("serializable") + "\n")
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Config echo, versions and seed next to the outputs.
fn manifest<T: Serialize>(dir: &Path, command: &str, cfg: &T, seed: Option<u64>, outputs: &[&str], start: Instant) -> CliResult<()> {
    write_json(
        &dir.join("manifest.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": cfg,
            "outputs": outputs,
            "elapsed_ms": start.elapsed().as_secs_f64() * 1e3,
        }),
    )
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a),
        Command::BenchIntegrators(a) => bench(a, false),
        Command::SweepController(a) => bench(a, true),
        Command::Verify(a) => verify(a),
        Command::Plot(a) => plot(a),
    }
}

/// On-disk dataset: `spec.json` plus `coupling.json` (vector kinds) or ensemble files.
pub enum Dataset {
    Vector(Coupling),
    Fields(Ensemble),
    Burgers { pairs: Coupling, grid: Arc<Grid>, macros: Vec<MacroProblem> },
}

fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg: GenDataConfig = load(a.common.config.as_deref())?;
    set(&mut cfg.kind, a.kind);
    set(&mut cfg.n, a.n);
    set_opt(&mut cfg.seed, a.common.seed);
    set_opt(&mut cfg.out, a.common.out);
    let seed = require_seed(cfg.seed)?;
    let dir = out_dir(&cfg.out)?;
    if cfg.n == 0 {
        return Err(CliError::config("n must be positive"));
    }
    let rng = Rng::new(seed);
    let mut outputs = vec!["spec.json"];
    match cfg.kind {
        DataKind::Gaussian => {
            let g = &cfg.gaussian;
            let p = GaussianTransportProblem::scalar(g.m0, g.s0, g.m1, g.s1, g.coupling)?;
            write_json(&dir.join("coupling.json"), &p.coupling(cfg.n, &mut rng.fork(0))?)?;
            outputs.push("coupling.json");
        }
        DataKind::Mixture => {
            let mix = bimodal_1d();
            let mut r = rng.fork(0);
            let u0: Vec<Vec<f64>> = (0..cfg.n).map(|_| vec![r.normal()]).collect();
            let u1: Vec<Vec<f64>> = (0..cfg.n).map(|_| mix.sample(&mut r)).collect();
            write_json(&dir.join("coupling.json"), &Coupling::new(u0, u1, None)?)?;
            outputs.push("coupling.json");
        }
        DataKind::LinearGaussian => {
            write_json(&dir.join("coupling.json"), &LinearGaussianSpec::toy().coupling(cfg.n, &mut rng.fork(0))?)?;
            outputs.push("coupling.json");
        }
        DataKind::PowerLaw => {
            let spec = cfg
                .power_law
                .get_or_insert_with(|| PowerLawFieldSpec::new_1d(256, 2.0, 1.0, 128.0, seed));
            spec.seed = seed;
            write_ensemble(&dir.join("ensemble.bin"), &gen_power_law_ensemble(spec, cfg.n)?)?;
            outputs.push("ensemble.bin");
        }
        DataKind::Burgers => {
            let pairs = burgers_training_pairs(&cfg.burgers, cfg.n, &rng.fork(0))?;
            let grid = cfg.burgers.grid()?;
            write_ensemble(&dir.join("u0.bin"), &Ensemble::from_values(grid.clone(), pairs.u0.clone())?)?;
            write_ensemble(&dir.join("u1.bin"), &Ensemble::from_values(grid, pairs.u1.clone())?)?;
            let macros = macro_micro_dataset(&cfg.burgers, cfg.n_macro, cfg.n_micro, &rng.fork(1))?;
            fs::create_dir_all(dir.join("macro")).map_err(|e| CliError::data(e.to_string()))?;
            for (i, m) in macros.iter().enumerate() {
                write_ensemble(&dir.join(format!("macro/{i:03}_conditions.bin")), &m.micro_initial)?;
                write_ensemble(&dir.join(format!("macro/{i:03}_reference.bin")), &m.micro_solution)?;
            }
            outputs.extend(["u0.bin", "u1.bin", "macro/"]);
        }
    }
    write_json(&dir.join("spec.json"), &cfg)?;
    manifest(&dir, "gen-data", &cfg, Some(seed), &outputs, start)
}

pub fn read_dataset(dir: &Path) -> CliResult<Dataset> {
    let spec: GenDataConfig = serde_json::from_str(&read_text(&dir.join("spec.json"))?)
        .map_err(|e| CliError::data(format!("{}: {e}", dir.join("spec.json").display())))?;
    match spec.kind {
        DataKind::Gaussian | DataKind::Mixture | DataKind::LinearGaussian => {
            let c: Coupling = serde_json::from_str(&read_text(&dir.join("coupling.json"))?)
                .map_err(|e| CliError::data(format!("coupling.json: {e}")))?;
            Ok(Dataset::Vector(Coupling::new(c.u0, c.u1, c.cond)?))
        }
        DataKind::PowerLaw => Ok(Dataset::Fields(read_ensemble(&dir.join("ensemble.bin"))?)),
        DataKind::Burgers => {
            let u0 = read_ensemble(&dir.join("u0.bin"))?;
            let u1 = read_ensemble(&dir.join("u1.bin"))?;
            let rows = |e: &Ensemble| e.iter().map(|f| f.values().to_vec()).collect::<Vec<_>>();
            let pairs = Coupling::new(rows(&u0), rows(&u1), Some(rows(&u0)))?;
            let mut macros = Vec::new();
            for i in 0.. {
                let c = dir.join(format!("macro/{i:03}_conditions.bin"));
                if !c.exists() {
                    break;
                }
                macros.push(MacroProblem {
                    conditions: read_ensemble(&c)?,
                    reference: read_ensemble(&dir.join(format!("macro/{i:03}_reference.bin")))?,
                });
            }
            Ok(Dataset::Burgers {
                pairs,
                grid: u0.grid().clone(),
                macros,
            })
        }
    }
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg: TrainCmdConfig = load(a.common.config.as_deref())?;
    set_opt(&mut cfg.data, a.data);
    set_opt(&mut cfg.out, a.common.out);
    set_opt(&mut cfg.seed, a.common.seed);
    set(&mut cfg.hidden, a.hidden);
    set(&mut cfg.train.iterations, a.iterations);
    set(&mut cfg.train.learning_rate, a.lr);
    set(&mut cfg.train.batch_size, a.batch_size);
    let seed = require_seed(cfg.seed)?;
    cfg.train.seed = seed;
    let data_dir = require_path(&cfg.data, "dataset")?;
    let dir = out_dir(&cfg.out)?;
    let coupling = match read_dataset(&data_dir)? {
        Dataset::Vector(c) => c,
        Dataset::Burgers { pairs, .. } => pairs,
        Dataset::Fields(_) => return Err(CliError::data("power-law datasets have no pairs to train on")),
    };
    let state_dim = coupling.u1[0].len();
    let cond_dim = match (&coupling.cond, cfg.train.objective.source) {
        (Some(c), _) => c[0].len(),
        (None, reflow_core::transport::Source::Noise) => coupling.u0[0].len(),
        (None, reflow_core::transport::Source::Chord) => 0,
    };
    let mut model = Mlp::new(state_dim, cond_dim, &cfg.hidden, &mut Rng::new(seed).fork(1))?;
    let hist = train(&mut model, &coupling, &cfg.train)?;
    write_checkpoint(&dir.join("model.ckpt"), &VelocityModel::Mlp(model).to_checkpoint())?;
    write(&dir.join("loss.csv"), history_csv(&hist))?;
    manifest(&dir, "train", &cfg, Some(seed), &["model.ckpt", "loss.csv"], start)
}

fn load_model(path: &Path) -> CliResult<VelocityModel> {
    if !path.exists() {
        return Err(CliError::data(format!("{}: no such file", path.display())));
    }
    Ok(VelocityModel::from_checkpoint(&read_checkpoint(path)?)?)
}

/// Per-sample conditions for a conditional model, cycling through the dataset.
fn conditions(model: &dyn VelocityField, data: Option<&Path>, n: usize) -> CliResult<Vec<Vec<f64>>> {
    if model.cond_dim() == 0 {
        return Ok(vec![Vec::new(); n]);
    }
    let dir = data.ok_or_else(|| CliError::config("conditional model: --data is required for conditions"))?;
    let pool = match read_dataset(dir)? {
        Dataset::Vector(c) => c.cond.unwrap_or(c.u0),
        Dataset::Burgers { pairs, .. } => pairs.u0,
        Dataset::Fields(_) => return Err(CliError::data("power-law datasets carry no conditions")),
    };
    if pool[0].len() != model.cond_dim() {
        return Err(CliError::data(format!(
            "condition dimension {} does not match the model's {}",
            pool[0].len(),
            model.cond_dim()
        )));
    }
    Ok((0..n).map(|i| pool[i % pool.len()].clone()).collect())
}

fn draw(model: &dyn VelocityField, spec: &IntegratorSpec, conds: &[Vec<f64>], sigma0: f64, rng: &Rng) -> CliResult<(Vec<Vec<f64>>, Vec<usize>)> {
    use rayon::prelude::*;
    let out = conds
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut r = rng.fork(i as u64);
            let u: Vec<f64> = r.normal_vec(model.state_dim()).into_iter().map(|x| sigma0 * x).collect();
            integrate(model, &u, c, spec, false).map(|(x, t)| (x, t.nfe))
        })
        .collect::<reflow_core::Result<Vec<_>>>()?;
    Ok(out.into_iter().unzip())
}

fn sample(a: SampleArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg: SampleConfig = load(a.common.config.as_deref())?;
    set_opt(&mut cfg.model, a.model);
    set_opt(&mut cfg.data, a.data);
    set(&mut cfg.n, a.n);
    set(&mut cfg.integrator, a.integrator);
    set_opt(&mut cfg.seed, a.common.seed);
    set_opt(&mut cfg.out, a.common.out);
    let seed = require_seed(cfg.seed)?;
    let spec = parse_integrator(&cfg.integrator, &cfg.controller)?;
    let model = load_model(&require_path(&cfg.model, "model")?)?;
    let dir = out_dir(&cfg.out)?;
    let conds = conditions(&model, cfg.data.as_deref(), cfg.n)?;
    let (samples, nfe) = draw(&model, &spec, &conds, cfg.sigma0, &Rng::new(seed))?;
    let avg = nfe.iter().sum::<usize>() as f64 / nfe.len().max(1) as f64;
    write_json(&dir.join("samples.json"), &json!({ "integrator": spec.label(), "avg_nfe": avg, "nfe": nfe, "samples": samples }))?;
    manifest(&dir, "sample", &cfg, Some(seed), &["samples.json"], start)
}

fn spectrum_csv(ens: &Ensemble) -> String {
    let mut s = String::from("k,energy\n");
    for (k, e) in ensemble_energy_spectrum(ens).energies.iter().enumerate() {
        s.push_str(&format!("{k},{e:.10e}\n"));
    }
    s
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg: EvalConfig = load(a.common.config.as_deref())?;
    set_opt(&mut cfg.data, a.data);
    set_opt(&mut cfg.model, a.model);
    set(&mut cfg.integrator, a.integrator);
    set_opt(&mut cfg.seed, a.common.seed);
    set_opt(&mut cfg.out, a.common.out);
    let seed = require_seed(cfg.seed)?;
    let spec = parse_integrator(&cfg.integrator, &cfg.controller)?;
    let data_dir = require_path(&cfg.data, "dataset")?;
    let dir = out_dir(&cfg.out)?;
    let model = cfg.model.as_deref().map(load_model).transpose()?;
    let rng = Rng::new(seed);
    let mut outputs = Vec::new();
    match (read_dataset(&data_dir)?, model) {
        (Dataset::Fields(ens), _) => {
            write(&dir.join("spectrum.csv"), spectrum_csv(&ens))?;
            let n = ens.grid().dims()[0];
            let dx = ens.grid().spacing()[0];
            let radii: Vec<f64> = (1..=n / 4).map(|i| i as f64 * dx).collect();
            let mut sf = ensemble_structure_function(&ens, &radii)?;
            sf.fit(2.0 * dx, (n / 8).max(3) as f64 * dx)?;
            let mut csv = String::from("r,s2\n");
            for (r, v) in sf.radii.iter().zip(&sf.values) {
                csv.push_str(&format!("{r:.10e},{v:.10e}\n"));
            }
            write(&dir.join("structure.csv"), csv)?;
            write_json(&dir.join("eval.json"), &json!({ "members": ens.len(), "zeta2": sf.zeta2, "prefactor": sf.prefactor }))?;
            outputs.extend(["spectrum.csv", "structure.csv", "eval.json"]);
        }
        (Dataset::Burgers { grid, macros, .. }, Some(m)) => {
            let sampler = OdeSampler {
                velocity: &m,
                grid,
                spec,
                sigma0: cfg.sigma0,
            };
            let report = macro_micro_eval(&sampler, &macros, &rng)?;
            write_json(&dir.join("eval.json"), &report.to_json())?;
            let refs = Ensemble::new(macros.iter().flat_map(|p| p.reference.members().to_vec()).collect())?;
            write(&dir.join("spectrum.csv"), spectrum_csv(&refs))?;
            outputs.extend(["eval.json", "spectrum.csv"]);
        }
        (Dataset::Vector(c), Some(m)) => {
            let conds: Vec<Vec<f64>> = match &c.cond {
                Some(cs) => cs.clone(),
                None if m.cond_dim() > 0 => c.u0.clone(),
                None => vec![Vec::new(); c.len()],
            };
            let (samples, nfe) = draw(&m, &spec, &conds, cfg.sigma0, &rng)?;
            let dim = c.u1[0].len();
            let mut w1 = Vec::with_capacity(dim);
            let mut mean_err = Vec::with_capacity(dim);
            for j in 0..dim {
                let a: Vec<f64> = samples.iter().map(|x| x[j]).collect();
                let b: Vec<f64> = c.u1.iter().map(|x| x[j]).collect();
                w1.push(w1_1d(&a, &b)?);
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                mean_err.push((mean(&a) - mean(&b)).abs());
            }
            let avg = nfe.iter().sum::<usize>() as f64 / nfe.len() as f64;
            write_json(&dir.join("eval.json"), &json!({ "w1_per_coordinate": w1, "mean_abs_error": mean_err, "avg_nfe": avg }))?;
            outputs.push("eval.json");
        }
        (_, None) => return Err(CliError::config("this dataset needs --model to evaluate")),
    }
    manifest(&dir, "eval", &cfg, Some(seed), &outputs, start)
}

fn bench(a: BenchArgs, sweep: bool) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg: BenchConfig = load(a.common.config.as_deref())?;
    set(&mut cfg.benchmark, a.benchmark);
    set_opt(&mut cfg.model, a.model);
    set(&mut cfg.samples, a.samples);
    set(&mut cfg.reference_steps, a.reference_steps);
    set_opt(&mut cfg.seed, a.common.seed);
    set_opt(&mut cfg.out, a.common.out);
    let seed = require_seed(cfg.seed)?;
    if cfg.samples == 0 || cfg.reference_steps == 0 {
        return Err(CliError::config("samples and reference_steps must be positive"));
    }
    cfg.controller.validate()?;
    let dir = out_dir(&cfg.out)?;
    let model = cfg.model.as_deref().map(load_model).transpose()?;
    let problem = build_problem(cfg.benchmark, model, cfg.samples, &Rng::new(seed))?;
    let table: Table = if sweep {
        sweep_controller(&problem, &cfg.controller, cfg.reference_steps)?
    } else {
        bench_integrators(&problem, &cfg.controller, cfg.reference_steps)?
    };
    write(&dir.join("table.csv"), table.to_csv())?;
    write(&dir.join("table.md"), table.to_markdown())?;
    write_json(&dir.join("table.json"), &table)?;
    print!("{}", table.to_markdown());
    let name = if sweep { "sweep-controller" } else { "bench-integrators" };
    manifest(&dir, name, &cfg, Some(seed), &["table.csv", "table.md", "table.json"], start)
}

/// Runs every check; returns the reports in a fixed order.
pub fn verification_suite(cfg: &VerifyConfig, seed: u64) -> reflow_core::Result<Vec<VerificationReport>> {
    use reflow_core::transport::{CouplingKind, FnVelocity};
    let root = Rng::new(seed);
    let mut out = Vec::new();

    let hs: Vec<f64> = (3..=9).map(|k| 0.5f64.powi(k)).collect();
    let lin = FnVelocity::new(1, |u: &[f64], _, o: &mut [f64]| o[0] = u[0]);
    let lte = lte_order_check(&lin, &[1.0], &[], 0.0, &hs)?;
    let tv = FnVelocity::new(1, |_, t, o: &mut [f64]| o[0] = t);
    let lte_t = lte_order_check(&tv, &[0.0], &[], 0.0, &hs)?;
    let slope_ok = lte.slope.is_some_and(|s| (cfg.lte_slope.0..=cfg.lte_slope.1).contains(&s));
    let ratio_ok = lte_t.ratios.iter().all(|q| (q - 1.0).abs() <= cfg.lte_ratio_tol);
    out.push(VerificationReport::new(
        "lte_order",
        slope_ok && ratio_ok,
        &[("slope_min", cfg.lte_slope.0), ("slope_max", cfg.lte_slope.1), ("ratio_tol", cfg.lte_ratio_tol)],
        &json!({ "linear": lte, "time_only": lte_t }),
    ));

    let g = global_error_check(&lin, &[1.0], &[], &[16, 32, 64, 128, 256], 4096, &mut root.fork(1))?;
    let ok = g.slope.is_some_and(|s| (cfg.global_slope.0..=cfg.global_slope.1).contains(&s)) && g.dominated;
    out.push(VerificationReport::new(
        "global_euler",
        ok,
        &[("slope_min", cfg.global_slope.0), ("slope_max", cfg.global_slope.1)],
        &g,
    ));

    let p = GaussianTransportProblem::scalar(0.0, 1.0, 2.0, 1.0, CouplingKind::Comonotone)?;
    let tcfg = TerminalConfig {
        slack: cfg.terminal_slack,
        ..Default::default()
    };
    let mut violations = 0;
    let mut cheb_violations = 0;
    let mut worst = 0.0f64;
    for trial in 0..cfg.trials {
        let mut r = root.fork(100 + trial as u64);
        let xs: Vec<Vec<f64>> = (0..cfg.trial_samples).map(|_| p.sample_source(&mut r)).collect();
        let delta = r.uniform_range(-1.0, 1.0);
        let amp = r.uniform_range(0.0, 2.0);
        for pert in [Perturbation::Offset(vec![delta]), Perturbation::Oscillation(amp)] {
            let learned = PerturbedVelocity { base: &p, perturbation: pert };
            let rep = terminal_decomposition_check(&p, &learned, &xs, &[], &tcfg, &mut r)?;
            violations += usize::from(!rep.holds);
            worst = worst.max(rep.terminal_error / rep.bound.max(1e-300));
            let ch = chebyshev_tail_check(&rep, &[0.05, 0.1, 0.25, 0.5], cfg.chebyshev_sigmas);
            cheb_violations += ch.violations.len();
        }
    }
    out.push(VerificationReport::new(
        "terminal_decomposition",
        violations == 0,
        &[("slack", cfg.terminal_slack), ("trials", cfg.trials as f64)],
        &json!({ "violations": violations, "worst_error_over_bound": worst }),
    ));
    out.push(VerificationReport::new(
        "chebyshev_tail",
        cheb_violations == 0,
        &[("sigmas", cfg.chebyshev_sigmas)],
        &json!({ "violations": cheb_violations }),
    ));

    let spec = PowerLawFieldSpec::new_1d(64, 2.0, 1.0, 32.0, seed);
    let truth = gen_power_law_ensemble(&spec, 48)?;
    let dx = std::f64::consts::TAU / 64.0;
    let radii: Vec<f64> = (1..=16).map(|i| i as f64 * dx).collect();
    let mut sf = ensemble_structure_function(&truth, &radii)?;
    sf.fit(2.0 * dx, 8.0 * dx)?;
    let modulus = sf.modulus().ok_or_else(|| reflow_core::ReflowError::InvalidParameter("structure-function fit failed".into()))?;
    let cov = reflow_core::spectral::tail_coverage_report(&truth, &[4, 8, 16], modulus, 1.0, 32, &mut root.fork(2))?;
    let sur = noisy_projection(&truth, 8, 0.2, &mut root.fork(3))?;
    let one = one_step_capacity_check(&truth, &sur, 8, &cov, 128, &mut root.fork(4))?;
    out.push(VerificationReport::new("one_step_capacity", one.holds, &[("relative_slack", 1e-9)], &one));

    let master = toy_master_pipeline(&ToyPipelineConfig {
        steps: cfg.master_steps,
        seed,
        ..Default::default()
    })?;
    out.push(VerificationReport::new("master_inequality", master.all_finite, &[], &master));
    Ok(out)
}

fn verify(a: VerifyArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg: VerifyConfig = load(a.common.config.as_deref())?;
    set(&mut cfg.trials, a.trials);
    set_opt(&mut cfg.seed, a.common.seed);
    set_opt(&mut cfg.out, a.common.out);
    let seed = require_seed(cfg.seed)?;
    let dir = out_dir(&cfg.out)?;
    let reports = verification_suite(&cfg, seed)?;
    let mut outputs = Vec::new();
    for r in &reports {
        write_json(&dir.join(format!("{}.json", r.name)), r)?;
        outputs.push(format!("{}.json", r.name));
        println!("{} {}", if r.passed { "PASS" } else { "FAIL" }, r.name);
    }
    let summary: Vec<_> = reports.iter().map(|r| json!({ "name": r.name, "passed": r.passed })).collect();
    write_json(&dir.join("summary.json"), &summary)?;
    outputs.push("summary.json".into());
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    manifest(&dir, "verify", &cfg, Some(seed), &names, start)?;
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_NUMERIC,
            message: "one or more verification checks failed".into(),
        })
    }
}

fn plot(a: PlotArgs) -> CliResult<()> {
    let mut cfg: PlotConfig = load(a.common.config.as_deref())?;
    set_opt(&mut cfg.input, a.input);
    set(&mut cfg.kind, a.kind);
    set(&mut cfg.title, a.title);
    set_opt(&mut cfg.out, a.common.out);
    let input = require_path(&cfg.input, "input")?;
    let out = require_path(&cfg.out, "output")?;
    let text = read_text(&input)?;
    let svg = match cfg.kind {
        PlotKind::Spectrum => {
            let pts = parse_xy_csv(&text).map_err(CliError::data)?;
            loglog_svg(&pts, &cfg.title, "k", "E(k)")
        }
        PlotKind::Scatter => {
            let rows = parse_table_csv(&text).map_err(CliError::data)?;
            scatter_svg(&rows, &cfg.title, "Avg. NFE", "Rel. L2 error")
        }
    }
    .ok_or_else(|| CliError::data("nothing to plot"))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::data(e.to_string()))?;
    }
    write(&out, svg)
}
