use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tactile_mpc::bench::{run_bench, write_bench_csv};
use tactile_mpc::mpc::{assemble_qf, build_qp, load_checkpoint, save_checkpoint, MpcConfig, MpcParams};
use tactile_mpc::qp::write_dump;
use tactile_mpc::sim::{
    make_controller, mean_gap_variance, object_by_name, run_episode, run_suite, stability_metrics,
    success_rate, write_suite_table, write_trace_csv, ControllerKind, GraspStatus, RuntimeStats,
    StabilityMetrics, WorldConfig,
};
use tactile_mpc::tactile::{generate_dataset, read_dataset, write_dataset, DatasetConfig, TrialRecord};
use tactile_mpc::train::{
    grad_check, samples_from_records, smoothed_losses, train, write_history_csv, GradCheckReport, GRAD_CHECK_TOL,
};
use tactile_mpc::Error;

use crate::config::{BenchSection, ExportKind, ExportSection, GradcheckSection, SimulateSection, TrainSection};
use crate::meta::{write_record, FileHash};

/// Gradient check ran but disagreed with finite differences.
#[derive(Debug)]
pub struct GradCheckFailed {
    pub worst: f64,
}

impl std::fmt::Display for GradCheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gradient check failed: max relative error {:.3e} > {GRAD_CHECK_TOL:e}", self.worst)
    }
}

impl std::error::Error for GradCheckFailed {}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> anyhow::Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{what} is required")).into())
}

fn random_params(m: usize, seed: u64) -> MpcParams {
    MpcParams::random(m, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gen_data(cfg: &DatasetConfig, out: &Path, force: bool) -> anyhow::Result<()> {
    let (manifest, records) = generate_dataset(cfg)?;
    write_dataset(out, &manifest, &records, force)?;
    let outputs = vec![
        FileHash::file(out, tactile_mpc::tactile::MANIFEST_NAME)?,
        FileHash::tree(out, ".")?,
    ];
    write_record(out, "gen-data", cfg.seed, cfg, vec![], outputs)?;
    println!(
        "wrote {} trials ({} sub-trials) to {}",
        cfg.trials,
        records.len(),
        out.display()
    );
    Ok(())
}

pub fn train_cmd(cfg: &mut TrainSection, out: &Path) -> anyhow::Result<()> {
    let data = required(&cfg.data, "training data (--data)")?.to_path_buf();
    let (manifest, records) = read_dataset(&data)?;
    if manifest.embed_dim != cfg.mpc.embed_dim {
        return Err(Error::Config(format!(
            "dataset embeddings have {} entries but the layer expects {}",
            manifest.embed_dim, cfg.mpc.embed_dim
        ))
        .into());
    }
    let mut inputs = vec![FileHash::input(&data)?];
    let init = match &cfg.init {
        Some(path) => {
            inputs.push(FileHash::input(path)?);
            load_checkpoint(path)?.0
        }
        None => random_params(cfg.mpc.embed_dim, cfg.init_seed),
    };
    create_dir(out)?;
    let outcome = train(
        &records,
        manifest.frame_interval(),
        &cfg.train,
        &cfg.mpc,
        &init,
        Some(&out.join("checkpoints")),
    )?;
    write_history_csv(create(&out.join("history.csv"))?, &outcome.history)?;
    save_checkpoint(&out.join("params.json"), &outcome.params, &cfg.mpc)?;

    #[derive(Serialize)]
    struct Validation<'a> {
        train_trials: &'a [usize],
        val_trials: &'a [usize],
        #[serde(flatten)]
        eval: &'a tactile_mpc::train::Evaluation,
    }
    write_json(
        &out.join("validation.json"),
        &Validation {
            train_trials: &outcome.train_trials,
            val_trials: &outcome.val_trials,
            eval: &outcome.validation,
        },
    )?;
    let outputs = vec![
        FileHash::file(out, "history.csv")?,
        FileHash::file(out, "params.json")?,
        FileHash::file(out, "validation.json")?,
        FileHash::tree(out, "checkpoints")?,
    ];
    write_record(out, "train", cfg.train.seed, &*cfg, inputs, outputs)?;

    let smooth = smoothed_losses(&outcome.history, 5);
    let first = outcome.history.first().map_or(f64::NAN, |e| e.train_loss);
    println!(
        "epochs {}: loss {first:.4} -> {:.4} (smoothed); held-out median terminal error {:.3} mm over {} samples",
        outcome.history.len(),
        smooth.last().copied().unwrap_or(f64::NAN),
        outcome.validation.median_terminal_error,
        outcome.validation.evaluated
    );
    Ok(())
}

/// Loads a checkpoint or falls back to a seeded draw under `mpc`, updating
/// the section's recorded layer config to what is actually used.
fn params_or_random(
    path: &Option<PathBuf>,
    mpc: &mut MpcConfig,
    seed: u64,
    inputs: &mut Vec<FileHash>,
) -> anyhow::Result<MpcParams> {
    match path {
        Some(p) => {
            inputs.push(FileHash::input(p)?);
            let (params, cfg) = load_checkpoint(p)?;
            *mpc = cfg;
            Ok(params)
        }
        None => Ok(random_params(mpc.embed_dim, seed)),
    }
}

fn dataset_or_generated(
    data: &Option<PathBuf>,
    trials: usize,
    seed: u64,
    inputs: &mut Vec<FileHash>,
) -> anyhow::Result<(f64, Vec<TrialRecord>)> {
    match data {
        Some(d) => {
            inputs.push(FileHash::input(d)?);
            let (manifest, records) = read_dataset(d)?;
            Ok((manifest.frame_interval(), records))
        }
        None => {
            let cfg = DatasetConfig {
                trials,
                seed,
                ..DatasetConfig::default()
            };
            let (manifest, records) = generate_dataset(&cfg)?;
            Ok((manifest.frame_interval(), records))
        }
    }
}

pub fn gradcheck(cfg: &mut GradcheckSection, out: &Path) -> anyhow::Result<()> {
    let mut inputs = Vec::new();
    let params = params_or_random(&cfg.params, &mut cfg.mpc, cfg.seed, &mut inputs)?;
    let (interval, records) = dataset_or_generated(&cfg.data, cfg.generated_trials, cfg.seed, &mut inputs)?;
    let mut samples = samples_from_records(&records, interval, cfg.mpc.horizon, cfg.frame_stride);
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    #[derive(Serialize)]
    struct Checked {
        trial_id: usize,
        #[serde(flatten)]
        report: GradCheckReport,
    }
    let mut checked = Vec::with_capacity(cfg.samples);
    let mut skipped = 0;
    for s in &samples {
        if checked.len() == cfg.samples {
            break;
        }
        match grad_check(&cfg.mpc, &params, s, cfg.terminal_scale, cfg.step) {
            Ok(report) => {
                log::info!("sample from trial {}: max error {:.3e}", s.trial_id, report.max_error);
                checked.push(Checked {
                    trial_id: s.trial_id,
                    report,
                });
            }
            Err(Error::DegenerateActiveSet { .. }) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if checked.len() < cfg.samples {
        return Err(Error::Config(format!(
            "only {} non-degenerate samples available, {} requested",
            checked.len(),
            cfg.samples
        ))
        .into());
    }
    let worst = checked.iter().map(|c| c.report.max_error).fold(0.0, f64::max);
    let passed = checked.iter().all(|c| c.report.passed);

    #[derive(Serialize)]
    struct Report<'a> {
        tolerance: f64,
        step: f64,
        checked: usize,
        skipped_degenerate: usize,
        max_error: f64,
        passed: bool,
        samples: &'a [Checked],
    }
    create_dir(out)?;
    write_json(
        &out.join("gradcheck.json"),
        &Report {
            tolerance: GRAD_CHECK_TOL,
            step: cfg.step,
            checked: checked.len(),
            skipped_degenerate: skipped,
            max_error: worst,
            passed,
            samples: &checked,
        },
    )?;
    write_record(
        out,
        "gradcheck",
        cfg.seed,
        &*cfg,
        inputs,
        vec![FileHash::file(out, "gradcheck.json")?],
    )?;
    println!(
        "gradcheck: {} samples ({skipped} degenerate skipped), max relative error {worst:.3e}, tolerance {GRAD_CHECK_TOL:e}: {}",
        checked.len(),
        if passed { "PASS" } else { "FAIL" }
    );
    if !passed {
        return Err(GradCheckFailed { worst }.into());
    }
    Ok(())
}

#[derive(Serialize)]
struct EpisodeOutcome<'a> {
    controller: ControllerKind,
    object: &'a str,
    seed: u64,
    success: bool,
    hold_duration: f64,
    final_status: GraspStatus,
    metrics: Option<StabilityMetrics>,
    controller_failures: usize,
}

pub fn simulate(cfg: &mut SimulateSection, out: &Path) -> anyhow::Result<()> {
    let controller: Option<ControllerKind> = cfg.controller.as_deref().map(str::parse).transpose()?;
    if let Some(o) = &cfg.object {
        object_by_name(o)?;
    }
    let kinds: Vec<ControllerKind> = controller.map_or_else(|| cfg.suite.controllers.clone(), |c| vec![c]);
    let mut inputs = Vec::new();
    let (params, mpc) = match &cfg.params {
        Some(p) => {
            inputs.push(FileHash::input(p)?);
            load_checkpoint(p)?
        }
        None if kinds.iter().all(|&k| k == ControllerKind::Pd) => {
            let m = cfg.suite.world.embed_dim;
            (
                MpcParams::zeros(m),
                MpcConfig {
                    embed_dim: m,
                    ..MpcConfig::default()
                },
            )
        }
        None => {
            return Err(Error::Config("MPC controllers need trained parameters (--params)".into()).into());
        }
    };
    create_dir(out)?;

    if let (Some(kind), Some(object)) = (controller, cfg.object.clone()) {
        let world = WorldConfig {
            object: object_by_name(&object)?,
            ..cfg.suite.world.clone()
        };
        let mut c = make_controller(kind, &params, &mpc, cfg.suite.pd)?;
        let r = run_episode(c.as_mut(), &world, cfg.suite.duration, cfg.suite.seed)?;
        write_trace_csv(create(&out.join("trace.csv"))?, &r.trace)?;
        write_json(
            &out.join("result.json"),
            &EpisodeOutcome {
                controller: kind,
                object: &object,
                seed: cfg.suite.seed,
                success: r.success,
                hold_duration: r.hold_duration,
                final_status: r.final_status,
                metrics: stability_metrics(&r).ok(),
                controller_failures: r.controller_failures,
            },
        )?;
        let timing: RuntimeStats = r.runtime_stats();
        write_json(&out.join("timing.json"), &timing)?;
        let outputs = vec![
            FileHash::file(out, "trace.csv")?,
            FileHash::file(out, "result.json")?,
            FileHash::file(out, "timing.json")?.timing(),
        ];
        write_record(out, "simulate", cfg.suite.seed, &*cfg, inputs, outputs)?;
        println!(
            "{kind} on {object} (seed {}): success {} after holding {:.2} s ({:?}); median solve {:.2e} s",
            cfg.suite.seed, r.success, r.hold_duration, r.final_status, timing.median
        );
        return Ok(());
    }

    let mut suite = cfg.suite.clone();
    suite.controllers = kinds;
    if let Some(o) = &cfg.object {
        suite.objects = vec![o.clone()];
    }
    let rows = run_suite(&suite, &params, &mpc)?;
    write_suite_table(create(&out.join("success.csv"))?, &rows, &suite.controllers)?;
    {
        let mut w = csv::Writer::from_writer(create(&out.join("episodes.csv"))?);
        w.write_record([
            "controller",
            "object",
            "episode",
            "seed",
            "success",
            "hold_duration",
            "final_status",
            "settle_time",
            "gap",
            "gap_variance",
            "controller_failures",
        ])?;
        for r in &rows {
            let m = |f: fn(&StabilityMetrics) -> f64| r.metrics.as_ref().map_or(String::new(), |x| f(x).to_string());
            w.write_record([
                r.controller.to_string(),
                r.object.clone(),
                r.episode.to_string(),
                r.seed.to_string(),
                r.success.to_string(),
                r.hold_duration.to_string(),
                format!("{:?}", r.final_status),
                m(|x| x.settle_time),
                m(|x| x.inter_agent_gap),
                m(|x| x.post_settle_variance),
                r.controller_failures.to_string(),
            ])?;
        }
        w.flush()?;
        let mut t = csv::Writer::from_writer(create(&out.join("timing.csv"))?);
        t.write_record(["controller", "object", "episode", "median_solve_time"])?;
        for r in &rows {
            t.write_record([
                r.controller.to_string(),
                r.object.clone(),
                r.episode.to_string(),
                r.median_solve_time.to_string(),
            ])?;
        }
        t.flush()?;
    }
    let outputs = vec![
        FileHash::file(out, "success.csv")?,
        FileHash::file(out, "episodes.csv")?,
        FileHash::file(out, "timing.csv")?.timing(),
    ];
    write_record(out, "simulate", suite.seed, &*cfg, inputs, outputs)?;

    for &k in &suite.controllers {
        println!("{k:>8}: success {:.2}", success_rate(&rows, k, None));
    }
    for o in &suite.objects {
        let vars: Vec<String> = suite
            .controllers
            .iter()
            .map(|&k| match mean_gap_variance(&rows, k, o) {
                Some(v) => format!("{k} {v:.3e}"),
                None => format!("{k} -"),
            })
            .collect();
        println!("{o}: gap variance {}", vars.join(", "));
    }
    Ok(())
}

pub fn bench(cfg: &mut BenchSection, out: &Path) -> anyhow::Result<()> {
    let mut inputs = Vec::new();
    let params = params_or_random(&cfg.params, &mut cfg.mpc, cfg.init_seed, &mut inputs)?;
    let results = run_bench(&cfg.bench, &cfg.mpc, &params)?;
    create_dir(out)?;
    write_bench_csv(create(&out.join("bench.csv"))?, &results)?;
    write_json(&out.join("bench.json"), &results)?;
    let outputs = vec![
        FileHash::file(out, "bench.csv")?.timing(),
        FileHash::file(out, "bench.json")?.timing(),
    ];
    write_record(out, "bench", cfg.bench.seed, &*cfg, inputs, outputs)?;
    println!("{:>6} {:>12} {:>12} {:>9}", "batch", "multi (s)", "single (s)", "increase");
    for r in &results {
        println!(
            "{:>6} {:>12.6} {:>12.6} {:>8.2}%{}",
            r.batch_size,
            r.multi_rt,
            r.single_rt,
            r.increase_pct,
            if r.failures > 0 { format!("  ({} failed solves)", r.failures) } else { String::new() }
        );
    }
    Ok(())
}

pub fn export(cfg: &ExportSection, out: &Path) -> anyhow::Result<()> {
    create_dir(out)?;
    let mut inputs = Vec::new();
    let file = match cfg.what {
        ExportKind::Frames => {
            let data = required(&cfg.data, "a dataset (--data)")?;
            inputs.push(FileHash::input(data)?);
            let (manifest, records) = read_dataset(data)?;
            let mut w = csv::Writer::from_writer(create(&out.join("frames.csv"))?);
            let mut header: Vec<String> = ["trial", "subtrial", "active", "slip", "frame", "agent", "opening"]
                .map(String::from)
                .to_vec();
            header.extend((0..manifest.embed_dim).map(|k| format!("e{k}")));
            w.write_record(&header)?;
            for r in &records {
                for f in r.frames.iter().step_by(cfg.frame_stride.max(1)) {
                    for agent in 0..2 {
                        let mut row = vec![
                            r.trial_id.to_string(),
                            r.subtrial_index.to_string(),
                            r.active_agent.to_string(),
                            r.slippage_opening.to_string(),
                            f.index.to_string(),
                            (agent + 1).to_string(),
                            f.openings[agent].to_string(),
                        ];
                        row.extend(f.embeddings[agent].iter().map(|v| v.to_string()));
                        w.write_record(&row)?;
                    }
                }
            }
            w.flush()?;
            "frames.csv"
        }
        ExportKind::Penalty => {
            let path = required(&cfg.params, "a checkpoint (--params)")?;
            inputs.push(FileHash::input(path)?);
            let (params, mpc) = load_checkpoint(path)?;
            let q = assemble_qf(&params, &mpc)?;
            let mut w = csv::Writer::from_writer(create(&out.join("penalty.csv"))?);
            for i in 0..q.nrows() {
                w.write_record((0..q.ncols()).map(|j| q[(i, j)].to_string()))?;
            }
            w.flush()?;
            "penalty.csv"
        }
        ExportKind::Qp => {
            let path = required(&cfg.params, "a checkpoint (--params)")?;
            let data = required(&cfg.data, "a dataset (--data)")?;
            inputs.push(FileHash::input(path)?);
            inputs.push(FileHash::input(data)?);
            let (params, mpc) = load_checkpoint(path)?;
            let (manifest, records) = read_dataset(data)?;
            let samples = samples_from_records(&records, manifest.frame_interval(), mpc.horizon, cfg.frame_stride);
            let Some(sample) = samples.get(cfg.sample) else {
                bail!(Error::Config(format!(
                    "sample {} out of range ({} samples)",
                    cfg.sample,
                    samples.len()
                )));
            };
            let problem = build_qp(&params, &mpc, &sample.input)?;
            fs::write(out.join("qp.txt"), write_dump(&problem)).context("writing qp.txt")?;
            "qp.txt"
        }
    };
    write_record(out, "export", 0, cfg, inputs, vec![FileHash::file(out, file)?])?;
    println!("wrote {}", out.join(file).display());
    Ok(())
}
