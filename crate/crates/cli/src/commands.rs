use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clutter_core::distill::{
    eval_placement, export_dataset, label_validity, oracle_success, tasks_from_scenes, train_supervised, PlacementDataset,
};
use clutter_core::env::{replay_scene, GeneratorConfig, GeneratorEnv, NetworkPolicy, PlacementPolicy};
use clutter_core::eval::{
    attempts_study, diversity_map, evaluate, generalization_eval, run_episodes, EvalReport, Evaluated, RandomRejectionSampling,
    EVAL_SEED_OFFSET,
};
use clutter_core::policy::Checkpoint;
use clutter_core::ppo::{train as train_policy, CurveRow};
use clutter_core::scene::{deserialize_scene, serialize_scene, ChangeKind, PlacementRecord, RegionChange, SceneSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{RunConfig, Suite};
use crate::{Baseline, PolicyArgs};

/// Returned by `replay` when a scene fails re-simulation.
#[derive(Debug)]
pub struct ReplayFailed {
    pub failed: usize,
    pub total: usize,
}

impl std::fmt::Display for ReplayFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} of {} scenes failed replay", self.failed, self.total)
    }
}

impl std::error::Error for ReplayFailed {}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Creates the run directory and snapshots the materialized config there.
fn run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_file(&cfg.out.join("config.toml"), cfg.to_toml())?;
    Ok(cfg.out.clone())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)
        .map_err(clutter_core::Error::from)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    Checkpoint::from_json(&text).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// The policy a command runs, with the environment matching its
/// observation layout.
enum Driver {
    Rrs,
    Network(Checkpoint),
}

impl Driver {
    fn load(args: &PolicyArgs) -> Result<Self> {
        match (&args.checkpoint, args.baseline) {
            (Some(path), _) => Ok(Driver::Network(load_checkpoint(path)?)),
            (None, Some(Baseline::Rrs)) => Ok(Driver::Rrs),
            (None, None) => anyhow::bail!("either --checkpoint or --baseline is required"),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Driver::Rrs => "rrs",
            Driver::Network(_) => "policy",
        }
    }

    fn env(&self, cfg: &RunConfig, generator: GeneratorConfig) -> Result<GeneratorEnv> {
        let obs = match self {
            Driver::Rrs => cfg.variant.configure(&cfg.observation, &cfg.train).0,
            Driver::Network(ckpt) => ckpt.observation,
        };
        Ok(GeneratorEnv::new(cfg.scene.spec(), generator, obs)?)
    }

    fn evaluated(&self, cfg: &RunConfig) -> Evaluated<'_> {
        match self {
            Driver::Rrs => Evaluated::Rrs,
            Driver::Network(ckpt) => Evaluated::Network(&ckpt.policy, cfg.eval.mode),
        }
    }

    fn placement_policy(&self, cfg: &RunConfig) -> Box<dyn PlacementPolicy + '_> {
        match self {
            Driver::Rrs => Box::new(RandomRejectionSampling),
            Driver::Network(ckpt) => Box::new(NetworkPolicy {
                net: &ckpt.policy,
                mode: cfg.eval.mode,
            }),
        }
    }
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let dir = run_dir(cfg)?;
    let env = cfg.env()?;
    let (_, train_cfg) = cfg.variant.configure(&cfg.observation, &cfg.train);
    let mut curve = BufWriter::new(File::create(dir.join("curve.csv"))?);
    writeln!(curve, "{}", CurveRow::CSV_HEADER)?;
    let start = Instant::now();
    let outcome = train_policy(&env, &train_cfg, cfg.seed, cfg.jobs, |row, _| {
        writeln!(curve, "{}", row.to_csv())?;
        curve.flush()?;
        eprintln!(
            "update {:>5}  step {:>9}  success {:.3}  reward {:.1}",
            row.update, row.step, row.success_rate, row.mean_reward
        );
        Ok(())
    })?;
    write_file(&dir.join("checkpoint.json"), outcome.checkpoint.to_json())?;
    let last = outcome.curve.last().copied();
    let summary = json!({
        "variant": cfg.variant.name(),
        "seed": cfg.seed,
        "updates": outcome.curve.len(),
        "steps": last.map(|r| r.step),
        "final_success_rate": last.map(|r| r.success_rate),
        "seconds": start.elapsed().as_secs_f64(),
    });
    write_file(&dir.join("train.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{summary}");
    Ok(())
}

pub fn generate(cfg: &RunConfig, policy: &PolicyArgs, episodes: usize) -> Result<()> {
    let dir = run_dir(cfg)?;
    let driver = Driver::load(policy)?;
    let env = driver.env(cfg, cfg.generator)?;
    let records = run_episodes(&env, driver.evaluated(cfg), None, episodes, cfg.seed, cfg.jobs)?;
    let scenes = dir.join("scenes");
    fs::create_dir_all(&scenes)?;
    let mut index = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let name = format!("scene_{i:04}.json");
        write_file(&scenes.join(&name), serialize_scene(&rec.spec, &rec.placements))?;
        index.push(json!({ "file": name, "success": rec.success, "placements": rec.placements.len() }));
    }
    let successes = records.iter().filter(|r| r.success).count();
    let summary = json!({
        "policy": driver.label(),
        "episodes": episodes,
        "successes": successes,
        "scenes": index,
    });
    write_file(&dir.join("generate.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{}", json!({ "episodes": episodes, "successes": successes, "dir": scenes }));
    Ok(())
}

pub fn eval(cfg: &RunConfig, policy: &PolicyArgs, change: Option<ChangeKind>) -> Result<()> {
    let dir = run_dir(cfg)?;
    let driver = Driver::load(policy)?;
    // Verdicts do not depend on it and failed settles end sooner.
    let generator = GeneratorConfig {
        stop_when_decided: true,
        ..cfg.generator
    };
    let env = driver.env(cfg, generator)?;
    let evaluated = driver.evaluated(cfg);
    let label = driver.label();
    let (episodes, seed, jobs) = (cfg.eval.episodes, cfg.seed, cfg.jobs);
    let mut csv = String::from(EvalReport::CSV_HEADER);
    csv.push('\n');
    let report = match cfg.eval.suite {
        Suite::Standard => {
            let change = change.map(RegionChange::new);
            let (report, _) = evaluate(&env, evaluated, change.as_ref(), episodes, seed, jobs)?;
            csv.push_str(&report.to_csv_row(change.map_or("original", |c| c.kind.name())));
            csv.push('\n');
            json!({ "suite": "standard", "policy": label, "report": report })
        }
        Suite::Generalization => {
            let rows = generalization_eval(&env, evaluated, &ChangeKind::ALL, episodes, seed, jobs)?;
            for row in &rows {
                csv.push_str(&row.report.to_csv_row(row.change.name()));
                csv.push('\n');
            }
            json!({ "suite": "generalization", "policy": label, "rows": rows })
        }
        Suite::Diversity => {
            let (map, report) = diversity_map(&env, evaluated, episodes, seed, jobs)?;
            csv.push_str(&report.to_csv_row(label));
            csv.push('\n');
            write_file(&dir.join("diversity.csv"), map.to_csv())?;
            write_file(&dir.join("diversity.pgm"), map.to_pgm(env.region(), cfg.eval.map_size))?;
            json!({ "suite": "diversity", "policy": label, "report": report, "coverage": map.coverage, "mean_coverage": map.mean_coverage })
        }
        Suite::Attempts => {
            let rows = attempts_study(
                env.spec(),
                &generator,
                env.obs_config(),
                evaluated,
                &cfg.eval.budgets,
                episodes,
                seed,
                jobs,
            )?;
            for row in &rows {
                csv.push_str(&row.report.to_csv_row(&format!("budget_{}", row.max_attempts)));
                csv.push('\n');
            }
            json!({ "suite": "attempts", "policy": label, "rows": rows })
        }
    };
    write_file(&dir.join("eval.csv"), &csv)?;
    write_file(&dir.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    print!("{csv}");
    Ok(())
}

fn compact_scene(spec: &SceneSpec, placements: &[PlacementRecord]) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(&serialize_scene(spec, placements))?;
    Ok(value.to_string())
}

fn write_scenes(path: &Path, scenes: &[(SceneSpec, Vec<PlacementRecord>)]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for (spec, placements) in scenes {
        writeln!(out, "{}", compact_scene(spec, placements)?)?;
    }
    out.flush()?;
    Ok(())
}

fn read_scenes(path: &Path) -> Result<Vec<(SceneSpec, Vec<PlacementRecord>)>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line?;
            deserialize_scene(&line).with_context(|| format!("{} line {}", path.display(), i + 1))
        })
        .collect()
}

pub fn export(cfg: &RunConfig, policy: &PolicyArgs) -> Result<()> {
    let dir = run_dir(cfg)?;
    let driver = Driver::load(policy)?;
    let env = driver.env(cfg, cfg.generator)?;
    let d = &cfg.distill;
    let start = Instant::now();
    let dataset = {
        let mut p = driver.placement_policy(cfg);
        export_dataset(&env, p.as_mut(), d.scenes, d.samples, d.resolution, cfg.seed)?
    };
    let seconds = start.elapsed().as_secs_f64();
    let mut out = BufWriter::new(File::create(dir.join("dataset.jsonl"))?);
    dataset.write_jsonl(&mut out)?;
    out.flush()?;
    write_scenes(&dir.join("scenes.jsonl"), &dataset.scenes)?;

    let holdout = run_episodes(
        &env,
        driver.evaluated(cfg),
        None,
        d.holdout_scenes,
        cfg.seed.wrapping_add(EVAL_SEED_OFFSET),
        cfg.jobs,
    )?;
    let holdout: Vec<_> = holdout.into_iter().map(|r| (r.spec, r.placements)).collect();
    write_scenes(&dir.join("holdout.jsonl"), &holdout)?;

    let validity = if dataset.samples.is_empty() {
        None
    } else {
        Some(label_validity(&dataset, &cfg.generator)?)
    };
    if let Some(w) = &dataset.warning {
        eprintln!("warning: {w}");
    }
    let summary = json!({
        "header": dataset.header,
        "warning": dataset.warning,
        "export_seconds": seconds,
        "label_validity": validity,
        "holdout_scenes": holdout.len(),
    });
    write_file(&dir.join("export.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{summary}");
    Ok(())
}

pub fn distill(cfg: &RunConfig, dataset_path: &Path) -> Result<()> {
    let file = File::open(dataset_path).with_context(|| format!("opening dataset {}", dataset_path.display()))?;
    let mut dataset =
        PlacementDataset::read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", dataset_path.display()))?;
    let source = dataset_path.parent().unwrap_or(Path::new("."));
    let scenes_path = source.join("scenes.jsonl");
    let validity = if scenes_path.exists() {
        dataset.scenes = read_scenes(&scenes_path)?;
        Some(label_validity(&dataset, &cfg.generator)?)
    } else {
        None
    };
    let holdout_path = source.join("holdout.jsonl");
    let tasks = if holdout_path.exists() {
        tasks_from_scenes(&read_scenes(&holdout_path)?)
    } else {
        Vec::new()
    };

    let dir = run_dir(cfg)?;
    let models = dir.join("models");
    fs::create_dir_all(&models)?;
    let resolution = dataset.header.resolution;
    let mut rows = Vec::new();
    let mut csv = String::from("samples,final_loss,placement_success\n");
    for &size in &cfg.distill.sizes {
        let n = if size == 0 { dataset.samples.len() } else { size };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let subset = dataset.subsample(n, &mut rng);
        let (model, curve) = train_supervised(&subset, &cfg.distill.supervised, cfg.seed)?;
        let success = if tasks.is_empty() {
            None
        } else {
            Some(eval_placement(&model, &tasks, &cfg.generator, resolution)?)
        };
        let final_loss = curve.last().copied().unwrap_or(f64::NAN);
        write_file(&models.join(format!("model_{}.json", subset.samples.len())), serde_json::to_string(&model)?)?;
        csv.push_str(&format!(
            "{},{final_loss},{}\n",
            subset.samples.len(),
            success.map_or(String::new(), |s| s.to_string())
        ));
        rows.push(json!({ "samples": subset.samples.len(), "final_loss": final_loss, "placement_success": success, "loss_curve": curve }));
    }
    let oracle = if tasks.is_empty() {
        None
    } else {
        Some(oracle_success(&tasks, &cfg.generator)?)
    };
    let report = json!({
        "dataset": dataset_path,
        "label_validity": validity,
        "holdout_tasks": tasks.len(),
        "oracle_success": oracle,
        "models": rows,
    });
    write_file(&dir.join("distill.json"), serde_json::to_string_pretty(&report)?)?;
    write_file(&dir.join("distill.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn scene_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(path)
                .with_context(|| format!("listing {}", path.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            inner.retain(|p| p.extension().is_some_and(|e| e == "json"));
            inner.sort();
            files.extend(inner);
        } else {
            files.push(path.clone());
        }
    }
    Ok(files)
}

pub fn replay(cfg: &RunConfig, paths: &[PathBuf]) -> Result<()> {
    let files = scene_files(paths)?;
    let mut failed = 0;
    for file in &files {
        let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
        let (spec, placements) = deserialize_scene(&text).with_context(|| format!("parsing {}", file.display()))?;
        let verdict = replay_scene(&spec, &placements, &cfg.generator)?;
        if !verdict.passed() {
            failed += 1;
        }
        println!(
            "{}",
            json!({
                "file": file,
                "passed": verdict.passed(),
                "placements": placements.len(),
                "stable": verdict.stable,
                "max_position_error": verdict.max_position_error,
                "bit_exact": verdict.bit_exact,
            })
        );
    }
    if failed > 0 {
        return Err(ReplayFailed {
            failed,
            total: files.len(),
        }
        .into());
    }
    Ok(())
}
