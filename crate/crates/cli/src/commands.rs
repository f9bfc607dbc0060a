//! Subcommand bodies. Each reads its parameters from [`Settings`], writes its
//! output files and a run manifest, and prints a `key=value` summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cdnmf_core::cache::{events_from_records, read_events, write_events};
use cdnmf_core::datagen::{generate_logs, generate_rated_dataset, SynthConfig};
use cdnmf_core::ingest::{
    read_interactions, write_interactions, write_log_records, write_ratings, LogReader,
};
use cdnmf_core::kv::KvBlock;
use cdnmf_core::train::INIT_STDDEV;
use cdnmf_core::{
    evaluate_rmse, grid_search, run_simulation, split_train_test, train, ContentMode, FactorModel,
    Grid, Hyperparams, ItemScores, LogRecord, Policy, Rating, Variant,
};
use rayon::prelude::*;

use crate::error::CliError;
use crate::settings::Settings;

pub const DEFAULT_SEED: u64 = 42;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))
}

/// `dir/name.csv` plus `suffix` → `dir/name.suffix.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}.{suffix}.{ext}"))
}

pub fn manifest_path(report_dir: &Path, command: &str) -> PathBuf {
    report_dir.join(format!("run-manifest-{command}.txt"))
}

fn finish(settings: &Settings, report_dir: &Path, command: &str) -> Result<(), CliError> {
    write_text(
        &manifest_path(report_dir, command),
        &settings.manifest(command).to_string(),
    )
}

fn delimiter(settings: &mut Settings) -> Result<u8, CliError> {
    let d = settings.string("delimiter", Some(","))?;
    let d = match d.as_str() {
        "tab" | "\\t" => "\t",
        other => other,
    };
    match d.as_bytes() {
        [b] => Ok(*b),
        _ => Err(CliError::usage(format!(
            "delimiter must be a single byte, got {d:?}"
        ))),
    }
}

fn read_ratings(path: &Path) -> Result<Vec<Rating>, CliError> {
    read_interactions(open(path)?).map_err(|e| CliError::from_core(path.display(), e))
}

fn read_model(path: &Path) -> Result<FactorModel, CliError> {
    FactorModel::read_from(open(path)?).map_err(|e| CliError::from_core(path.display(), e))
}

fn hyperparams(settings: &mut Settings) -> Result<(Variant, Hyperparams), CliError> {
    let variant: Variant = settings.get("variant", Some(Variant::Biased))?;
    let hyper = Hyperparams::new(
        settings.get("k", Some(10))?,
        settings.get("alpha", Some(0.01))?,
        settings.get("beta", Some(0.05))?,
        settings.get("iters", Some(100))?,
        settings.get("seed", Some(DEFAULT_SEED))?,
    );
    hyper
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok((variant, hyper))
}

fn print_kv(kv: &KvBlock) {
    print!("{kv}");
}

pub fn ingest(settings: &mut Settings) -> Result<(), CliError> {
    let logs = settings.input_path("logs")?;
    let mode: ContentMode = settings.get("mode", Some(ContentMode::LiveTv))?;
    let out = settings.output_path("out", None)?;
    let delim = delimiter(settings)?;
    let on_error = settings.string("on_error", Some("abort"))?;
    let skip_errors = match on_error.as_str() {
        "abort" => false,
        "skip" => true,
        other => {
            return Err(CliError::usage(format!(
                "on_error must be abort or skip, got {other:?}"
            )))
        }
    };
    let report_dir = settings.report_dir()?;

    let reader =
        LogReader::new(open(&logs)?, delim).map_err(|e| CliError::from_core(logs.display(), e))?;
    let mut records: Vec<LogRecord> = Vec::new();
    let mut bad_lines = 0usize;
    for item in reader {
        match item {
            Ok(rec) => records.push(rec),
            Err(e) if skip_errors => {
                bad_lines += 1;
                eprintln!("warning: {}: {e}", logs.display());
            }
            Err(e) => return Err(CliError::from_core(logs.display(), e)),
        }
    }
    let agg = cdnmf_core::ingest::aggregate_interactions_sharded(
        &records,
        mode,
        rayon::current_num_threads(),
    );
    let events = events_from_records(&records, mode, &agg.users, &agg.items);

    let core_err = |p: &Path| {
        let p = p.display().to_string();
        move |e| CliError::from_core(p, e)
    };
    write_interactions(create(&out)?, &agg.triples).map_err(core_err(&out))?;
    let users_path = sibling(&out, "users");
    let items_path = sibling(&out, "items");
    let events_path = sibling(&out, "events");
    agg.users
        .write_sidecar(create(&users_path)?)
        .map_err(core_err(&users_path))?;
    agg.items
        .write_sidecar(create(&items_path)?)
        .map_err(core_err(&items_path))?;
    write_events(create(&events_path)?, &events).map_err(core_err(&events_path))?;

    if agg.triples.is_empty() {
        eprintln!("warning: {} produced no interactions", logs.display());
    }
    let mut summary = KvBlock::new();
    summary
        .set("records", agg.records)
        .set("bad_lines", bad_lines)
        .set("skipped", agg.skipped)
        .set("users", agg.users.len())
        .set("items", agg.items.len())
        .set("triples", agg.triples.len())
        .set("events", events.len());
    write_text(&report_dir.join("ingest-summary.txt"), &summary.to_string())?;
    print_kv(&summary);
    finish(settings, &report_dir, "ingest")
}

pub fn train_cmd(settings: &mut Settings) -> Result<(), CliError> {
    let interactions = settings.input_path("interactions")?;
    let (variant, hyper) = hyperparams(settings)?;
    let ratio = settings.ratio("ratio", 0.7)?;
    let report_dir = settings.report_dir()?;
    let model_path = settings.output_path("model", Some(report_dir.join("model.txt")))?;

    let ratings = read_ratings(&interactions)?;
    let split = split_train_test(&ratings, ratio, hyper.seed)
        .map_err(|e| CliError::from_core(interactions.display(), e))?;
    let model =
        train(&split.train, variant, &hyper).map_err(|e| CliError::from_core("training", e))?;

    let write = |path: PathBuf, data: &[Rating]| -> Result<(), CliError> {
        write_ratings(create(&path)?, data).map_err(|e| CliError::from_core(path.display(), e))
    };
    write(report_dir.join("train.csv"), &split.train)?;
    write(report_dir.join("test.csv"), &split.test)?;
    write_text(&model_path, &model.to_text())?;

    let mut summary = KvBlock::new();
    summary
        .set("variant", variant)
        .set("users", model.num_users())
        .set("items", model.num_items())
        .set("train", split.train.len())
        .set("test", split.test.len())
        .set("init_stddev", INIT_STDDEV)
        .set("epochs_run", model.epochs_run)
        .set("final_train_loss", model.final_train_loss)
        .set("model", model_path.display());
    print_kv(&summary);
    finish(settings, &report_dir, "train")
}

pub fn evaluate_cmd(settings: &mut Settings) -> Result<(), CliError> {
    let model_path = settings.input_path("model")?;
    let test = if settings.has("test") {
        let path = settings.input_path("test")?;
        read_ratings(&path)?
    } else {
        let path = settings.input_path("interactions")?;
        let ratio = settings.ratio("ratio", 0.7)?;
        let seed: u64 = settings.get("seed", Some(DEFAULT_SEED))?;
        let ratings = read_ratings(&path)?;
        split_train_test(&ratings, ratio, seed)
            .map_err(|e| CliError::from_core(path.display(), e))?
            .test
    };
    let report_dir = settings.report_dir()?;
    let model = read_model(&model_path)?;
    let report = evaluate_rmse(&model, &test).map_err(|e| CliError::from_core("evaluation", e))?;

    write_text(&report_dir.join("eval.txt"), &report.to_kv().to_string())?;
    write_text(
        &report_dir.join("eval.csv"),
        &format!(
            "{}\n{}\n",
            cdnmf_core::EvalReport::CSV_HEADER,
            report.csv_row()
        ),
    )?;
    print_kv(&report.to_kv());
    finish(settings, &report_dir, "evaluate")
}

pub fn gridsearch_cmd(settings: &mut Settings) -> Result<(), CliError> {
    let interactions = settings.input_path("interactions")?;
    let variant: Variant = settings.get("variant", Some(Variant::Biased))?;
    let grid = Grid {
        k_values: settings.list("k_values", Some("5,10"))?,
        alpha_values: settings.list("alpha_values", Some("0.01"))?,
        beta_values: settings.list("beta_values", Some("0.01,0.05"))?,
        iterations: settings.get("iters", Some(100))?,
    };
    grid.validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let val_ratio = settings.ratio("val_ratio", 0.2)?;
    let ratio = settings.ratio("ratio", 0.7)?;
    let seed: u64 = settings.get("seed", Some(DEFAULT_SEED))?;
    let jobs: usize = settings.get("jobs", Some(1))?;
    let report_dir = settings.report_dir()?;
    let model_path =
        settings.output_path("model", Some(report_dir.join("gridsearch-model.txt")))?;

    let ratings = read_ratings(&interactions)?;
    let split = split_train_test(&ratings, ratio, seed)
        .map_err(|e| CliError::from_core(interactions.display(), e))?;
    let search = grid_search(&split.train, variant, &grid, val_ratio, seed, jobs)
        .map_err(|e| CliError::from_core("grid search", e))?;
    let model = train(&split.train, variant, &search.best)
        .map_err(|e| CliError::from_core("retraining winner", e))?;
    let test =
        evaluate_rmse(&model, &split.test).map_err(|e| CliError::from_core("evaluation", e))?;

    let mut winner = search.winner_kv();
    winner
        .set("test_rmse", test.rmse)
        .set("n_test", test.n_test)
        .set("n_coldstart", test.n_coldstart);
    write_text(&report_dir.join("gridsearch.csv"), &search.to_csv())?;
    write_text(&report_dir.join("gridsearch-best.txt"), &winner.to_string())?;
    write_text(&model_path, &model.to_text())?;
    print!("{}", search.to_csv());
    print_kv(&winner);
    finish(settings, &report_dir, "gridsearch")
}

pub fn simulate_cmd(settings: &mut Settings) -> Result<(), CliError> {
    let events_path = settings.input_path("events")?;
    let names: Vec<String> = settings.list("policies", Some("lru,lfu,mf"))?;
    let capacities: Vec<usize> = settings.list("capacities", Some("10"))?;
    if capacities.contains(&0) {
        return Err(CliError::usage("capacities must all be at least 1"));
    }
    let jobs: usize = settings.get("jobs", Some(1))?;
    let mut policies = Vec::new();
    for name in &names {
        policies.push(match name.as_str() {
            "lru" => Policy::Lru,
            "lfu" => Policy::Lfu,
            "mf" => {
                let path = settings.input_path("model")?;
                Policy::MfScore(ItemScores::from_model(&read_model(&path)?))
            }
            other => {
                return Err(CliError::usage(format!(
                    "unknown policy {other:?} (expected lru, lfu or mf)"
                )))
            }
        });
    }
    let report_dir = settings.report_dir()?;

    let events = read_events(open(&events_path)?)
        .map_err(|e| CliError::from_core(events_path.display(), e))?;
    let runs: Vec<(&Policy, usize)> = policies
        .iter()
        .flat_map(|p| capacities.iter().map(move |&c| (p, c)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::data(format!("thread pool: {e}")))?;
    let results = pool
        .install(|| {
            runs.par_iter()
                .map(|(p, c)| run_simulation(&events, p, *c))
                .collect::<Result<Vec<_>, _>>()
        })
        .map_err(|e| CliError::from_core(events_path.display(), e))?;

    let mut csv = format!("{}\n", cdnmf_core::CacheSimResult::CSV_HEADER);
    for r in &results {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&report_dir.join("simulate.csv"), &csv)?;
    print!("{csv}");
    finish(settings, &report_dir, "simulate")
}

pub fn datagen_cmd(settings: &mut Settings) -> Result<(), CliError> {
    let config = SynthConfig {
        n_users: settings.get("n_users", Some(1000))?,
        n_items: settings.get("n_items", Some(100))?,
        zipf_s: settings.get("zipf_s", Some(1.1))?,
        k_true: settings.get("k_true", Some(2))?,
        noise_sigma: settings.get("noise_sigma", Some(0.5))?,
        n_events: settings.get("n_events", Some(100_000))?,
        seed: settings.get("seed", Some(DEFAULT_SEED))?,
    };
    config
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let logs_out = settings
        .has("logs_out")
        .then(|| settings.output_path("logs_out", None))
        .transpose()?;
    let ratings_out = settings
        .has("ratings_out")
        .then(|| settings.output_path("ratings_out", None))
        .transpose()?;
    let truth_out = settings
        .has("truth_out")
        .then(|| settings.output_path("truth_out", None))
        .transpose()?;
    if logs_out.is_none() && ratings_out.is_none() && truth_out.is_none() {
        return Err(CliError::usage(
            "datagen needs at least one of logs_out, ratings_out, truth_out",
        ));
    }
    let delim = delimiter(settings)?;
    let report_dir = settings.report_dir()?;

    let mut summary = KvBlock::new();
    if let Some(path) = &logs_out {
        let logs = generate_logs(&config).map_err(|e| CliError::from_core("datagen", e))?;
        write_log_records(create(path)?, &logs, delim)
            .map_err(|e| CliError::from_core(path.display(), e))?;
        summary.set("log_records", logs.len());
    }
    if ratings_out.is_some() || truth_out.is_some() {
        let (ratings, truth) =
            generate_rated_dataset(&config).map_err(|e| CliError::from_core("datagen", e))?;
        if let Some(path) = &ratings_out {
            write_ratings(create(path)?, &ratings)
                .map_err(|e| CliError::from_core(path.display(), e))?;
        }
        if let Some(path) = &truth_out {
            write_text(path, &truth.to_text())?;
        }
        summary.set("ratings", ratings.len());
    }
    print_kv(&summary);
    finish(settings, &report_dir, "datagen")
}

/// ingest → train → evaluate → simulate with one set of parameters.
pub fn pipeline(settings: &mut Settings) -> Result<(), CliError> {
    let report_dir = settings.report_dir()?;
    settings.default_to("out", report_dir.join("interactions.csv").display());
    ingest(settings)?;
    let out = settings.output_path("out", None)?;
    settings.default_to("interactions", out.display());
    settings.default_to("events", sibling(&out, "events").display());
    train_cmd(settings)?;
    settings.default_to("test", report_dir.join("test.csv").display());
    settings.default_to("model", report_dir.join("model.txt").display());
    evaluate_cmd(settings)?;
    simulate_cmd(settings)?;
    finish(settings, &report_dir, "pipeline")
}

/// Re-executes the command recorded in a run manifest.
pub fn replay(manifest: &Path) -> Result<(), CliError> {
    let mut settings = Settings::load(Some(manifest), Vec::new())?;
    let command = settings.string("command", None)?;
    dispatch(&command, &mut settings)
}

pub fn dispatch(command: &str, settings: &mut Settings) -> Result<(), CliError> {
    match command {
        "ingest" => ingest(settings),
        "train" => train_cmd(settings),
        "evaluate" => evaluate_cmd(settings),
        "gridsearch" => gridsearch_cmd(settings),
        "simulate" => simulate_cmd(settings),
        "datagen" => datagen_cmd(settings),
        "pipeline" => pipeline(settings),
        other => Err(CliError::usage(format!("unknown command {other:?}"))),
    }
}
