//! Subcommand bodies. Each resolves its settings, runs, writes outputs
//! atomically and leaves a manifest beside them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use eopt::data::{synth_generate, write_dataset, write_labels, MappedDataset, StorageType, SynthConfig, TokenSource, N_BANDS};
use eopt::data::{denormalize_reflectance, ObservationSeries, N_CHANNELS};
use eopt::dates::Day;
use eopt::embedding::{emit_scatter, embed_pixels, DateWindow, SummaryConfig, SUMMARY_COLUMNS};
use eopt::error::{Error, Result};
use eopt::forecasting::{
    baseline_dataset, evaluate_l1, forecast_dataset, parse_trajectories, write_reports, write_trajectories,
    ForecastRequest, IndexSpec,
};
use eopt::indices::Index;
use eopt::model::{build_model, read_checkpoint, write_checkpoint, ModelConfig};
use eopt::training::{chinchilla_params, chinchilla_tokens, emissions, train, TrainConfig};

use crate::manifest::{beside, sha256_file, RunManifest};
use crate::numfmt::{integer_mantissa, sig3};
use crate::selection::PixelSelection;
use crate::settings::Settings;
use crate::{
    BaselineArgs, Command, ConfigArgs, EmbedArgs, EmissionsArgs, EvaluateArgs, ForecastArgs, GenDataArgs, SizeArgs,
    TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "model.eock";
pub const LOSS_LOG_FILE: &str = "loss.csv";
pub const TRAIN_MANIFEST_FILE: &str = "train.manifest";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const EMBED_MANIFEST_FILE: &str = "embed.manifest";

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Forecast(a) => forecast(a),
        Command::Baseline(a) => baseline(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Embed(a) => embed(a),
        Command::Size(a) => size(a, out),
        Command::Emissions(a) => emissions_cmd(a, out),
    }
}

fn load(common: &ConfigArgs, flags: Vec<(&str, Option<String>)>) -> Result<Settings> {
    Settings::load(common.config.as_deref(), flags, &common.set)
}

/// `scatter_<column>.svg`
pub fn scatter_file(column: &str) -> String {
    format!("scatter_{column}.svg")
}

/// Default labels path: the dataset path with extension `labels.csv`.
pub fn default_labels_path(out: &Path) -> PathBuf {
    out.with_extension("labels.csv")
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut s = load(
        &a.common,
        vec![
            ("pixels", a.pixels),
            ("start", a.start),
            ("end", a.end),
            ("cadence", a.cadence),
            ("seed", a.seed),
            ("noise_sigma", a.noise_sigma),
            ("trend_max", a.trend_max),
            ("regime_switch_prob", a.regime_switch_prob),
            ("phase_jitter_days", a.phase_jitter_days),
            ("pixel_variation", a.pixel_variation),
            ("storage", a.storage),
            ("out", a.out),
            ("labels", a.labels),
        ],
    )?;
    let out: String = s.required("out")?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n_pixels: s.or("pixels", d.n_pixels)?,
        start: s.or("start", d.start)?,
        end: s.or("end", d.end)?,
        cadence_days: s.or("cadence", d.cadence_days)?,
        seed: s.or("seed", d.seed)?,
        noise_sigma: s.or("noise_sigma", d.noise_sigma)?,
        trend_max: s.or("trend_max", d.trend_max)?,
        regime_switch_prob: s.or("regime_switch_prob", d.regime_switch_prob)?,
        phase_jitter_days: s.or("phase_jitter_days", d.phase_jitter_days)?,
        pixel_variation: s.or("pixel_variation", d.pixel_variation)?,
        storage: s.or::<StorageType>("storage", d.storage)?,
        ..d
    };
    let out = PathBuf::from(out);
    let labels = PathBuf::from(s.or("labels", default_labels_path(&out).display().to_string())?);
    let resolved = s.finish()?;

    let generated = synth_generate(&cfg)?;
    write_dataset(&generated.dataset, &out)?;
    write_labels(&generated.labels, &labels)?;
    let mut m = RunManifest::new("gen-data", resolved);
    m.seed = Some(cfg.seed);
    m.dataset_sha256 = Some(sha256_file(&out)?);
    m.outputs = vec![("dataset".into(), out.clone()), ("labels".into(), labels)];
    m.write(&beside(&out))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut s = load(
        &a.common,
        vec![
            ("data", a.data),
            ("out_dir", a.out_dir),
            ("preset", a.preset),
            ("total_steps", a.total_steps),
            ("tokens_per_step", a.tokens_per_step),
            ("max_lr", a.max_lr),
            ("seed", a.seed),
            ("divergence", a.divergence),
            ("checkpoint_every", a.checkpoint_every),
        ],
    )?;
    let data = PathBuf::from(s.required::<String>("data")?);
    let out_dir = PathBuf::from(s.required::<String>("out_dir")?);
    let model_cfg = s.delegate(|kv| ModelConfig::from_kv(kv, None), |c| c.to_kv())?;
    let train_cfg = s.delegate(TrainConfig::from_kv, |c| c.to_kv())?;
    let resolved = s.finish()?;
    model_cfg.validate()?;
    train_cfg.validate()?;

    let mapped = MappedDataset::open(&data)?;
    let view = mapped.view();
    fs::create_dir_all(&out_dir)?;
    let params = build_model(&model_cfg, train_cfg.seed)?;
    let outcome = train(params, &view, &train_cfg, Some(&out_dir), |r| {
        let val = r.val_loss.map(|v| format!(" val {v:.5}")).unwrap_or_default();
        eprintln!("step {} loss {:.5}{val} lr {:.3e}", r.step, r.train_loss, r.lr);
    })?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let loss_log = out_dir.join(LOSS_LOG_FILE);
    write_checkpoint(&outcome.params, train_cfg.total_steps, &checkpoint)?;
    outcome.log.write_csv(&loss_log)?;

    let mut m = RunManifest::new("train", resolved);
    m.seed = Some(train_cfg.seed);
    m.dataset_sha256 = Some(sha256_file(&data)?);
    m.inputs = vec![("data".into(), data)];
    m.outputs = vec![("checkpoint".into(), checkpoint), ("loss_log".into(), loss_log)];
    m.write(&out_dir.join(TRAIN_MANIFEST_FILE))
}

fn forecast_request(s: &mut Settings) -> Result<ForecastRequest> {
    let divergence: Day = s.required("divergence")?;
    let horizon: usize = s.required("horizon")?;
    let cadence_days: Option<u32> = s.optional("cadence")?;
    let pixels: PixelSelection = s.or("pixels", PixelSelection::All)?;
    Ok(ForecastRequest { pixels: pixels.indices(), divergence, horizon, cadence_days })
}

fn forecast(a: ForecastArgs) -> Result<()> {
    let mut s = load(
        &a.common,
        vec![
            ("data", a.data),
            ("checkpoint", a.checkpoint),
            ("divergence", a.divergence),
            ("horizon", a.horizon),
            ("cadence", a.cadence),
            ("pixels", a.pixels),
            ("out", a.out),
        ],
    )?;
    let data = PathBuf::from(s.required::<String>("data")?);
    let checkpoint = PathBuf::from(s.required::<String>("checkpoint")?);
    let out = PathBuf::from(s.required::<String>("out")?);
    let request = forecast_request(&mut s)?;
    let resolved = s.finish()?;

    let ck = read_checkpoint(&checkpoint)?;
    let mapped = MappedDataset::open(&data)?;
    let series = forecast_dataset(&ck.params, &mapped.view(), &request)?;
    write_trajectories(&series, &out)?;
    let mut m = RunManifest::new("forecast", resolved);
    m.dataset_sha256 = Some(sha256_file(&data)?);
    m.inputs = vec![("data".into(), data), ("checkpoint".into(), checkpoint)];
    m.outputs = vec![("trajectories".into(), out.clone())];
    m.write(&beside(&out))
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let mut s = load(
        &a.common,
        vec![
            ("data", a.data),
            ("divergence", a.divergence),
            ("horizon", a.horizon),
            ("cadence", a.cadence),
            ("pixels", a.pixels),
            ("out", a.out),
        ],
    )?;
    let data = PathBuf::from(s.required::<String>("data")?);
    let out = PathBuf::from(s.required::<String>("out")?);
    let request = forecast_request(&mut s)?;
    let resolved = s.finish()?;

    let mapped = MappedDataset::open(&data)?;
    let series = baseline_dataset(&mapped.view(), &request)?;
    write_trajectories(&series, &out)?;
    let mut m = RunManifest::new("baseline", resolved);
    m.dataset_sha256 = Some(sha256_file(&data)?);
    m.inputs = vec![("data".into(), data)];
    m.outputs = vec![("trajectories".into(), out.clone())];
    m.write(&beside(&out))
}

/// `name=path` or bare `path` (named after the file stem).
fn named_path(entry: &str) -> Result<(String, PathBuf)> {
    let entry = entry.trim();
    match entry.split_once('=') {
        Some((name, path)) if !name.trim().is_empty() && !path.trim().is_empty() => {
            Ok((name.trim().to_string(), PathBuf::from(path.trim())))
        }
        Some(_) => Err(Error::Config(format!("prediction entry {entry:?} must be name=path"))),
        None => {
            let path = PathBuf::from(entry);
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Config(format!("cannot name prediction {entry:?}")))?
                .to_string();
            Ok((name, path))
        }
    }
}

/// Dataset values at the dates and pixels of `like`, on the raw scale.
pub fn truth_like(src: &dyn TokenSource, like: &[ObservationSeries]) -> Result<Vec<ObservationSeries>> {
    let dates: Vec<Day> = (0..src.n_time()).map(|t| src.date(t)).collect();
    let mut tok = [0.0f32; N_CHANNELS];
    like.iter()
        .map(|p| {
            let pixel = usize::try_from(p.pixel_id)
                .ok()
                .filter(|&i| i < src.n_index())
                .ok_or_else(|| Error::Alignment(format!("pixel {} is not in the dataset", p.pixel_id)))?;
            let reflectances = p
                .dates
                .iter()
                .map(|d| {
                    let t = dates
                        .binary_search(d)
                        .map_err(|_| Error::Alignment(format!("date {d} is not in the dataset")))?;
                    src.read_token(pixel, t, &mut tok);
                    let mut b = [0.0f32; N_BANDS];
                    b.iter_mut().zip(&tok).for_each(|(o, &v)| *o = denormalize_reflectance(v));
                    Ok(b)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ObservationSeries { pixel_id: p.pixel_id, dates: p.dates.clone(), reflectances })
        })
        .collect()
}

/// Last dataset date before the earliest forecast date.
pub fn forecast_origin(src: &dyn TokenSource, predictions: &[ObservationSeries]) -> Result<Day> {
    let first = predictions
        .iter()
        .filter_map(|s| s.dates.first().copied())
        .min()
        .ok_or_else(|| Error::Alignment("predictions contain no dates".into()))?;
    match src.steps_before(first) {
        0 => Err(Error::Alignment(format!("no dataset date precedes the first forecast date {first}"))),
        n => Ok(src.date(n - 1)),
    }
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let pred = (!a.pred.is_empty()).then(|| a.pred.join(","));
    let mut s = load(
        &a.common,
        vec![
            ("data", a.data),
            ("predictions", pred),
            ("truth", a.truth),
            ("index", a.index),
            ("out", a.out),
        ],
    )?;
    let data = PathBuf::from(s.required::<String>("data")?);
    let entries: String = s.required("predictions")?;
    let truth_path: Option<String> = s.optional("truth")?;
    let index: IndexSpec = s.or("index", IndexSpec::Index(Index::Ndvi))?;
    let out = PathBuf::from(s.required::<String>("out")?);
    let resolved = s.finish()?;

    let named = entries.split(',').map(named_path).collect::<Result<Vec<_>>>()?;
    let mut predictions = Vec::with_capacity(named.len());
    for (name, path) in &named {
        predictions.push((name.clone(), parse_trajectories(&fs::read_to_string(path)?)?));
    }
    let mapped = MappedDataset::open(&data)?;
    let view = mapped.view();
    let truth = match &truth_path {
        Some(p) => parse_trajectories(&fs::read_to_string(p)?)?,
        None => truth_like(&view, &predictions[0].1)?,
    };
    let origin = forecast_origin(&view, &predictions[0].1)?;
    let reports = predictions
        .iter()
        .map(|(name, p)| evaluate_l1(name, p, &truth, origin, index))
        .collect::<Result<Vec<_>>>()?;
    write_reports(&reports, &out)?;

    let mut m = RunManifest::new("evaluate", resolved);
    m.dataset_sha256 = Some(sha256_file(&data)?);
    m.inputs = std::iter::once(("data".to_string(), data))
        .chain(named.into_iter().map(|(n, p)| (format!("prediction.{n}"), p)))
        .chain(truth_path.map(|p| ("truth".to_string(), PathBuf::from(p))))
        .collect();
    m.outputs = vec![("report".into(), out.clone())];
    m.write(&beside(&out))
}

fn embed(a: EmbedArgs) -> Result<()> {
    let mut s = load(
        &a.common,
        vec![
            ("data", a.data),
            ("checkpoint", a.checkpoint),
            ("year", a.year),
            ("start", a.start),
            ("end", a.end),
            ("pixels", a.pixels),
            ("components", a.components),
            ("colorings", a.colorings),
            ("out_dir", a.out_dir),
        ],
    )?;
    let data = PathBuf::from(s.required::<String>("data")?);
    let checkpoint = PathBuf::from(s.required::<String>("checkpoint")?);
    let out_dir = PathBuf::from(s.required::<String>("out_dir")?);
    let window = match s.optional::<i32>("year")? {
        Some(y) => DateWindow::year(y)?,
        None => DateWindow::new(s.required("start")?, s.required("end")?)?,
    };
    let pixels: PixelSelection = s.or("pixels", PixelSelection::All)?;
    let k: usize = s.or("components", 2)?;
    let colorings: String = s.or("colorings", "all".to_string())?;
    let d = SummaryConfig::default();
    let summary = SummaryConfig {
        mid_summer_doy: s.or("mid_summer_doy", d.mid_summer_doy)?,
        rgb_full_scale: s.or("rgb_full_scale", d.rgb_full_scale)?,
    };
    let resolved = s.finish()?;
    let columns: Vec<String> = if colorings.trim() == "all" {
        SUMMARY_COLUMNS.iter().map(|c| c.to_string()).collect()
    } else {
        colorings.split(',').map(|c| c.trim().to_string()).collect()
    };
    if let Some(bad) = columns.iter().find(|c| !SUMMARY_COLUMNS.contains(&c.as_str())) {
        return Err(Error::UnknownColumn {
            name: bad.clone(),
            valid: SUMMARY_COLUMNS.iter().map(|c| c.to_string()).collect(),
        });
    }

    let ck = read_checkpoint(&checkpoint)?;
    let mapped = MappedDataset::open(&data)?;
    let view = mapped.view();
    let range = pixels.range(view.n_index())?;
    let mut table = embed_pixels(&ck.params, &view, range, window, &summary)?;
    table.fit_and_project(k)?;
    fs::create_dir_all(&out_dir)?;
    let csv = out_dir.join(EMBEDDINGS_FILE);
    table.write_csv(&csv)?;
    let mut outputs = vec![("embeddings".to_string(), csv)];
    for c in &columns {
        let path = out_dir.join(scatter_file(c));
        emit_scatter(&table, c, &path)?;
        outputs.push((format!("scatter.{c}"), path));
    }
    let mut m = RunManifest::new("embed", resolved);
    m.dataset_sha256 = Some(sha256_file(&data)?);
    m.inputs = vec![("data".into(), data), ("checkpoint".into(), checkpoint)];
    m.outputs = outputs;
    m.write(&out_dir.join(EMBED_MANIFEST_FILE))
}

fn number(what: &str, text: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .map_err(|e| Error::Config(format!("{what}: cannot parse {text:?}: {e}")))
}

fn size(a: SizeArgs, out: &mut dyn Write) -> Result<()> {
    let line = match (a.params, a.tokens) {
        (Some(p), None) => format!("{} tokens", integer_mantissa(chinchilla_tokens(number("params", &p)?)?)),
        (None, Some(t)) => format!("{} params", integer_mantissa(chinchilla_params(number("tokens", &t)?)?)),
        _ => return Err(Error::Config("pass exactly one of --params or --tokens".into())),
    };
    writeln!(out, "{line}")?;
    Ok(())
}

fn emissions_cmd(a: EmissionsArgs, out: &mut dyn Write) -> Result<()> {
    let kg = emissions(number("kwh", &a.kwh)?, number("intensity", &a.intensity)?)?;
    writeln!(out, "{}", sig3(kg))?;
    Ok(())
}
