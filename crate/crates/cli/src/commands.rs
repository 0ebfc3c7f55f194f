use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use qc_core::cepstral::CepstralExtractor;
use qc_core::features::{fused_features, intensity_vector, IntensityVector, Standardizer};
use qc_core::io::{
    load_event, read_intensity_csv, read_manifest, read_tensor, write_intensity_csv,
    write_manifest, write_sensor_csv, write_tensor, Manifest, ManifestEvent,
};
use qc_core::neural::{load_checkpoint, save_checkpoint, NetworkSpec};
use qc_core::synth::generate_dataset;
use qc_core::training::{
    evaluate, read_scatter_csv, split_by_ground_motion, train_with, write_history_csv,
    write_scatter_csv, write_scatter_svg, Dataset, EvalReport, FeatureKind, Sample,
    SampleFeatures, SplitPlan, StopReason,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::CliError;

pub const CONFIG_SIDECAR: &str = "config.json";
pub const MANIFEST_NAME: &str = "manifest.json";
pub const REPORT_FORMAT: &str = "qc-report";

fn data_err(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{context}: {e}"))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| data_err(&format!("cannot create {}", dir.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| data_err(&format!("cannot write {}", path.display()), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| data_err(&format!("cannot read {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| data_err(&format!("bad JSON in {}", path.display()), e))
}

/// Everything needed to rerun the command that produced a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub config: BTreeMap<String, Value>,
}

fn write_sidecar(dir: &Path, command: &str, inputs: &[(&str, String)], cfg: &RunConfig) -> Result<(), CliError> {
    let sidecar = Sidecar {
        command: command.into(),
        inputs: inputs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        config: cfg.to_flat(),
    };
    write_json(&dir.join(CONFIG_SIDECAR), &sidecar)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub events: usize,
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<SynthSummary, CliError> {
    let records = out.join("records");
    ensure_dir(&records)?;
    let events = generate_dataset(&cfg.synth, cfg.seed)?;
    events
        .par_iter()
        .map(|e| write_sensor_csv(&records.join(format!("{}.csv", e.id)), &e.sensors))
        .collect::<qc_core::Result<Vec<()>>>()?;
    let manifest = Manifest::new(
        cfg.synth.sr,
        events
            .iter()
            .map(|e| ManifestEvent {
                id: e.id.clone(),
                gm_id: e.gm_id,
                angle_deg: e.angle_deg,
                scale: e.scale,
                drift_ratio: e.drift_ratio,
                record: format!("records/{}.csv", e.id),
            })
            .collect(),
    );
    let path = out.join(MANIFEST_NAME);
    write_manifest(&path, &manifest)?;
    write_sidecar(out, "synth", &[], cfg)?;
    Ok(SynthSummary {
        manifest: path,
        events: manifest.events.len(),
    })
}

fn load_manifest(path: &Path) -> Result<(Manifest, PathBuf), CliError> {
    let m = read_manifest(path).map_err(|e| data_err("cannot load events", e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((m, base))
}

fn compute_features(
    cfg: &RunConfig,
    extractor: Option<&CepstralExtractor>,
    base: &Path,
    event: &ManifestEvent,
    sr: f64,
    kind: FeatureKind,
) -> qc_core::Result<SampleFeatures> {
    let sensors = load_event(base, event, sr)?;
    Ok(match (kind.cepstral(), extractor) {
        (Some(ck), Some(ex)) => SampleFeatures::Sequence(fused_features(ex, &sensors, ck)?),
        _ => SampleFeatures::Vector(intensity_vector(&sensors, &cfg.features.etas)?.values),
    })
}

/// Per-event features computed from the records, in manifest order. Failures are
/// returned alongside the successes.
fn features_from_records(
    cfg: &RunConfig,
    manifest: &Manifest,
    base: &Path,
    kind: FeatureKind,
) -> Result<Vec<(usize, Result<SampleFeatures, CliError>)>, CliError> {
    let extractor = match kind.cepstral() {
        Some(_) => Some(CepstralExtractor::new(manifest.sr, cfg.features.cepstral.clone())?),
        None => None,
    };
    Ok(manifest
        .events
        .par_iter()
        .enumerate()
        .map(|(i, ev)| {
            let f = compute_features(cfg, extractor.as_ref(), base, ev, manifest.sr, kind)
                .map_err(|e| {
                    let msg = format!("event `{}`: {e}", ev.id);
                    if e.is_divergence() {
                        CliError::Divergence(msg)
                    } else {
                        CliError::Data(msg)
                    }
                });
            (i, f)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractSummary {
    pub kind: FeatureKind,
    pub extracted: usize,
    pub failed: Vec<CliError>,
    /// (rows, columns) of every written tensor or vector.
    pub shape: (usize, usize),
    pub valid_frames: Option<(usize, usize)>,
}

impl ExtractSummary {
    pub fn line(&self) -> String {
        let frames = match self.valid_frames {
            Some((lo, hi)) => format!(", valid frames {lo}..={hi}"),
            None => String::new(),
        };
        format!(
            "extracted {} of {} events as {} features {}x{}{frames}",
            self.extracted,
            self.extracted + self.failed.len(),
            self.kind,
            self.shape.0,
            self.shape.1
        )
    }
}

fn kind_dir(root: &Path, kind: FeatureKind) -> PathBuf {
    root.join(kind.as_str())
}

pub const INTENSITY_TABLE: &str = "intensity.csv";

/// Writes `<out>/<kind>/<id>.qct` per event, or `<out>/intensity/intensity.csv`.
/// Per-event failures are reported and skipped; the caller turns them into an error.
pub fn cmd_extract(cfg: &RunConfig, events: &Path, kind: FeatureKind, out: &Path) -> Result<ExtractSummary, CliError> {
    let (manifest, base) = load_manifest(events)?;
    let dir = kind_dir(out, kind);
    ensure_dir(&dir)?;
    let results = features_from_records(cfg, &manifest, &base, kind)?;
    let mut failed = Vec::new();
    let mut shape = (0, 0);
    let mut frames: Option<(usize, usize)> = None;
    let mut table: Vec<(String, IntensityVector)> = Vec::new();
    for (i, r) in results {
        let ev = &manifest.events[i];
        match r {
            Err(msg) => failed.push(msg),
            Ok(SampleFeatures::Sequence(t)) => {
                write_tensor(&dir.join(format!("{}.qct", ev.id)), &t)?;
                shape = t.values().dim();
                let (lo, hi) = frames.unwrap_or((usize::MAX, 0));
                frames = Some((lo.min(t.n_w()), hi.max(t.n_w())));
            }
            Ok(SampleFeatures::Vector(v)) => {
                shape = (1, v.len());
                table.push((
                    ev.id.clone(),
                    IntensityVector {
                        values: v,
                        etas: cfg.features.etas.clone(),
                    },
                ));
            }
        }
    }
    if kind == FeatureKind::Intensity {
        write_intensity_csv(&dir.join(INTENSITY_TABLE), &table)?;
    }
    write_sidecar(
        &dir,
        "extract",
        &[("events", events.display().to_string()), ("feature", kind.to_string())],
        cfg,
    )?;
    Ok(ExtractSummary {
        kind,
        extracted: manifest.events.len() - failed.len(),
        failed,
        shape,
        valid_frames: frames,
    })
}

/// Labelled dataset for `kind`, read from extracted files when `features` is given,
/// otherwise computed from the records.
pub fn load_dataset(
    cfg: &RunConfig,
    events: &Path,
    kind: FeatureKind,
    features: Option<&Path>,
) -> Result<(Manifest, Dataset), CliError> {
    let (manifest, base) = load_manifest(events)?;
    let feats: Vec<SampleFeatures> = match features {
        None => features_from_records(cfg, &manifest, &base, kind)?
            .into_iter()
            .map(|(_, r)| r)
            .collect::<Result<_, _>>()?,
        Some(root) => {
            let dir = kind_dir(root, kind);
            if kind == FeatureKind::Intensity {
                let rows: HashMap<String, Vec<f64>> =
                    read_intensity_csv(&dir.join(INTENSITY_TABLE))?.into_iter().collect();
                manifest
                    .events
                    .iter()
                    .map(|e| {
                        rows.get(&e.id)
                            .map(|v| SampleFeatures::Vector(v.clone()))
                            .ok_or_else(|| CliError::Data(format!("no intensity row for event `{}`", e.id)))
                    })
                    .collect::<Result<_, _>>()?
            } else {
                manifest
                    .events
                    .iter()
                    .map(|e| Ok(SampleFeatures::Sequence(read_tensor(&dir.join(format!("{}.qct", e.id)))?)))
                    .collect::<Result<_, CliError>>()?
            }
        }
    };
    let samples = manifest
        .events
        .iter()
        .zip(feats)
        .map(|(e, features)| Sample {
            id: e.id.clone(),
            gm_id: e.gm_id,
            drift_ratio: e.drift_ratio,
            features,
        })
        .collect();
    let data = Dataset::new(kind, samples)?;
    Ok((manifest, data))
}

/// Metadata stored next to each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub feature: FeatureKind,
    pub seed: u64,
    pub spec: NetworkSpec,
    pub lr: f64,
    pub batch_size: usize,
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
    pub epochs_run: usize,
    pub stop: StopReason,
    pub n_train: usize,
    pub n_val: usize,
    pub standardizer: Option<Standardizer>,
    pub history: Vec<qc_core::training::EpochRecord>,
}

pub const CHECKPOINT_NAME: &str = "checkpoint.qnn";
pub const CHECKPOINT_META: &str = "checkpoint.json";
pub const SPLIT_NAME: &str = "split.json";
pub const HISTORY_NAME: &str = "history.csv";
pub const EVAL_NAME: &str = "eval.json";

/// Ground-motion split shared by all feature kinds of one seed.
pub fn plan_split(cfg: &RunConfig, manifest: &Manifest) -> Result<SplitPlan, CliError> {
    let plan = split_by_ground_motion(&manifest.gm_ids(), cfg.split, cfg.seed)
        .map_err(|e| data_err("cannot split ground motions", e))?;
    plan.check_disjoint()?;
    Ok(plan)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub meta: CheckpointMeta,
}

/// Trains one feature kind into `<out>/<kind>/`. A divergent run still writes its
/// best checkpoint and history, then fails with a divergence error.
pub fn cmd_train(
    cfg: &RunConfig,
    events: &Path,
    kind: FeatureKind,
    features: Option<&Path>,
    out: &Path,
) -> Result<TrainSummary, CliError> {
    let (manifest, data) = load_dataset(cfg, events, kind, features)?;
    let plan = plan_split(cfg, &manifest)?;
    let mut train_set = data.subset(|g| plan.train_gm_ids.binary_search(&g).is_ok());
    let mut val_set = data.subset(|g| plan.val_gm_ids.binary_search(&g).is_ok());
    let standardizer = if cfg.train.standardize {
        let st = train_set
            .fit_standardizer()
            .ok_or_else(|| CliError::Data("empty training split".into()))?;
        train_set.standardize(&st)?;
        val_set.standardize(&st)?;
        Some(st)
    } else {
        None
    };

    let tcfg = cfg.train_config(kind);
    let spec = kind.default_spec(data.input_dim());
    let outcome = train_with(&spec, &train_set, &val_set, &tcfg, |r| {
        eprintln!(
            "[{kind}] epoch {:>3}  train {:.6}  val {:.6}",
            r.epoch, r.train_mae, r.val_mae
        );
    })?;

    let dir = kind_dir(out, kind);
    ensure_dir(&dir)?;
    save_checkpoint(&outcome.params, &dir.join(CHECKPOINT_NAME))?;
    write_history_csv(&dir.join(HISTORY_NAME), &outcome.history)?;
    write_json(&dir.join(SPLIT_NAME), &plan)?;
    let meta = CheckpointMeta {
        feature: kind,
        seed: cfg.seed,
        spec,
        lr: tcfg.lr,
        batch_size: tcfg.batch_size,
        best_epoch: outcome.best_epoch,
        best_val_mae: outcome.best_val_mae,
        epochs_run: outcome.history.len(),
        stop: outcome.stop.clone(),
        n_train: train_set.len(),
        n_val: val_set.len(),
        standardizer,
        history: outcome.history.clone(),
    };
    write_json(&dir.join(CHECKPOINT_META), &meta)?;
    write_sidecar(
        &dir,
        "train",
        &[("events", events.display().to_string()), ("feature", kind.to_string())],
        cfg,
    )?;
    if let StopReason::Divergence(msg) = &outcome.stop {
        return Err(CliError::Divergence(format!(
            "{msg}; best checkpoint kept in {}",
            dir.display()
        )));
    }
    Ok(TrainSummary { dir, meta })
}

/// Evaluates `<run>/<kind>/checkpoint.qnn` on the test ground motions and writes
/// `eval.json` plus the scatter CSV and SVG into the same directory.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    events: &Path,
    kind: FeatureKind,
    features: Option<&Path>,
    run: &Path,
) -> Result<EvalReport, CliError> {
    let dir = kind_dir(run, kind);
    let meta: CheckpointMeta = read_json(&dir.join(CHECKPOINT_META))?;
    if meta.feature != kind {
        return Err(CliError::Usage(format!(
            "checkpoint in {} was trained on {} features, not {kind}",
            dir.display(),
            meta.feature
        )));
    }
    let params = load_checkpoint(&dir.join(CHECKPOINT_NAME))?;
    if params.spec != meta.spec {
        return Err(CliError::Data(format!(
            "checkpoint layout in {} disagrees with its metadata",
            dir.display()
        )));
    }
    let plan: SplitPlan = read_json(&dir.join(SPLIT_NAME))?;
    plan.check_disjoint()?;
    let (_, data) = load_dataset(cfg, events, kind, features)?;
    if data.input_dim() != params.spec.input_dim {
        return Err(CliError::Usage(format!(
            "features are {} wide but the checkpoint expects {}",
            data.input_dim(),
            params.spec.input_dim
        )));
    }
    let mut test = data.subset(|g| plan.test_gm_ids.binary_search(&g).is_ok());
    if test.is_empty() {
        return Err(CliError::Data("the test split holds no events".into()));
    }
    if let Some(st) = &meta.standardizer {
        test.standardize(st)?;
    }
    let report = evaluate(&params, &test, cfg.report.fit_degree)?;
    write_json(&dir.join(EVAL_NAME), &report)?;
    write_scatter_csv(&dir.join(format!("scatter_{kind}.csv")), &report.points)?;
    write_scatter_svg(&dir.join(format!("scatter_{kind}.svg")), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub feature: FeatureKind,
    pub test_mae_pct: f64,
    pub n_test: usize,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub fit_coeffs: Vec<f64>,
}

/// Test MAE per feature kind for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    /// `(I - MFB) / I` in percent; positive when MFB is more accurate.
    pub mfb_gain_over_intensity_pct: f64,
    pub mfb_not_worse_than_intensity: bool,
}

impl ComparisonReport {
    pub fn row(&self, kind: FeatureKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.feature == kind)
    }
}

pub const REPORT_NAME: &str = "report.json";

/// Collects the three evaluations under `run` into `report.json` and copies each
/// scatter to `scatter_<kind>.csv` / `.svg` at the top level.
pub fn cmd_report(cfg: &RunConfig, run: &Path) -> Result<ComparisonReport, CliError> {
    let mut rows = Vec::new();
    for kind in FeatureKind::ALL {
        let dir = kind_dir(run, kind);
        let eval: EvalReport = read_json(&dir.join(EVAL_NAME))?;
        let meta: CheckpointMeta = read_json(&dir.join(CHECKPOINT_META))?;
        if eval.feature != kind || meta.feature != kind {
            return Err(CliError::Data(format!("{} holds results for another feature kind", dir.display())));
        }
        let csv_path = run.join(format!("scatter_{kind}.csv"));
        write_scatter_csv(&csv_path, &eval.points)?;
        write_scatter_svg(&run.join(format!("scatter_{kind}.svg")), &eval)?;
        let points = read_scatter_csv(&csv_path)?;
        let recomputed = points.iter().map(|p| p.abs_error_pct).sum::<f64>() / points.len() as f64;
        if (recomputed - eval.mae_pct).abs() > 1e-12 * eval.mae_pct.max(1.0) {
            return Err(CliError::Data(format!(
                "{kind} MAE {} does not match its scatter data ({recomputed})",
                eval.mae_pct
            )));
        }
        rows.push(ReportRow {
            feature: kind,
            test_mae_pct: eval.mae_pct,
            n_test: eval.n_samples,
            best_epoch: meta.best_epoch,
            epochs_run: meta.epochs_run,
            fit_coeffs: eval.fit_coeffs,
        });
    }
    let mae = |k: FeatureKind| rows.iter().find(|r| r.feature == k).map(|r| r.test_mae_pct).unwrap_or(f64::NAN);
    let (mfb, inten) = (mae(FeatureKind::Mfb), mae(FeatureKind::Intensity));
    let report = ComparisonReport {
        format: REPORT_FORMAT.into(),
        version: 1,
        seed: cfg.seed,
        mfb_gain_over_intensity_pct: (inten - mfb) / inten * 100.0,
        mfb_not_worse_than_intensity: mfb <= inten,
        rows,
    };
    write_json(&run.join(REPORT_NAME), &report)?;
    write_sidecar(run, "report", &[], cfg)?;
    Ok(report)
}
