//! Scenario runs on disk: stream generation, the event fold, and artifact files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::export::{component_file_name, component_ply, metrics_csv, snapshot_json, FinalModel, MetricsRow};
use super::{Pipeline, PipelineConfig, PipelineError, Scenario};
use crate::simulator::{evaluate, generate_stream, generate_temple, Evaluation, MatchEvent, ModelComponent, Scene, SceneParams};

/// Where a run's scene comes from: it is regenerated from these rather than stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSource {
    pub scene: SceneParams,
    pub scene_seed: u64,
}

impl SceneSource {
    pub fn build(&self) -> Result<Scene, RunError> {
        generate_temple(&self.scene, self.scene_seed).map_err(|e| RunError::Scene(e.to_string()))
    }
}

/// A serialized match stream, replayable without the scenario that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamDocument {
    #[serde(flatten)]
    pub source: SceneSource,
    pub events: Vec<MatchEvent>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("event {t}: {source}")]
    Pipeline { t: usize, source: PipelineError },
    #[error("scene: {0}")]
    Scene(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, bytes).map_err(io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| RunError::Json { path: path.to_path_buf(), source })?;
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|source| RunError::Json { path: path.to_path_buf(), source })
}

/// Scene and stream of a scenario, truncated to `max_events`.
pub fn generate(scenario: &Scenario) -> Result<(Scene, StreamDocument), RunError> {
    let (scene_params, scene_seed, stream, _) = scenario.resolved();
    let source = SceneSource { scene: scene_params, scene_seed };
    let scene = source.build()?;
    let mut events = generate_stream(&scene, &stream);
    if let Some(n) = scenario.max_events {
        events.truncate(n);
    }
    Ok((scene, StreamDocument { source, events }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub rows: Vec<MetricsRow>,
    pub final_model: FinalModel,
    pub evaluation: Option<Evaluation>,
    /// Cluster reconstructions run per timestep.
    pub reconstructed: Vec<usize>,
}

/// Folds the events through a fresh pipeline. With `out`, writes
/// `snapshots/NNNN.json` (every `snapshot_every` events and the last), `metrics.csv`,
/// `final/cluster_NNNN.ply` per effective cluster and `final/model.json`.
pub fn run_events(
    cfg: PipelineConfig,
    scene: Option<Scene>,
    events: &[MatchEvent],
    out: Option<&Path>,
    snapshot_every: usize,
) -> Result<RunSummary, RunError> {
    let mut pipeline = Pipeline::new(cfg, scene.clone());
    let mut rows = Vec::with_capacity(events.len());
    let mut reconstructed = Vec::with_capacity(events.len());
    let every = snapshot_every.max(1);
    for (t, ev) in events.iter().enumerate() {
        let snap = pipeline.process_event(ev).map_err(|source| RunError::Pipeline { t, source })?;
        log::info!(
            "t={t} view={} raw={} effective={} registered={} outliers={}",
            ev.view,
            snap.metrics.clusters_raw,
            snap.metrics.clusters_effective,
            snap.metrics.registered_cameras,
            snap.metrics.outlier_cameras
        );
        rows.push(MetricsRow::new(t, &snap.metrics));
        reconstructed.push(snap.reconstructed.len());
        if let Some(dir) = out {
            if t % every == 0 || t + 1 == events.len() {
                write_file(&dir.join("snapshots").join(format!("{t:04}.json")), snapshot_json(&snap).as_bytes())?;
            }
        }
    }
    let components = pipeline.components();
    let final_model = FinalModel::from_components(&components);
    let evaluation = scene.as_ref().map(|s| evaluate(&model_components(&final_model), s));
    if let Some(dir) = out {
        write_file(&dir.join("metrics.csv"), metrics_csv(&rows).as_bytes())?;
        let fin = dir.join("final");
        fs::create_dir_all(&fin).map_err(io(&fin))?;
        for c in &components {
            write_file(&fin.join(component_file_name(c)), &component_ply(c))?;
        }
        write_json(&fin.join("model.json"), &final_model)?;
        if let Some(ev) = &evaluation {
            write_json(&dir.join("evaluation.json"), ev)?;
        }
    }
    Ok(RunSummary { rows, final_model, evaluation, reconstructed })
}

/// Generates the scenario's stream and runs it, writing artifacts plus `scenario.json`
/// and `source.json` into `out`.
pub fn run_scenario(scenario: &Scenario, out: Option<&Path>) -> Result<RunSummary, RunError> {
    let (scene, doc) = generate(scenario)?;
    if let Some(dir) = out {
        write_json(&dir.join("scenario.json"), scenario)?;
        write_json(&dir.join("source.json"), &doc.source)?;
    }
    let (_, _, _, pipeline) = scenario.resolved();
    run_events(pipeline, Some(scene), &doc.events, out, scenario.snapshot_every)
}

/// Replays a serialized stream; the scene is regenerated for evaluation.
pub fn replay(doc: &StreamDocument, cfg: PipelineConfig, out: Option<&Path>, snapshot_every: usize) -> Result<RunSummary, RunError> {
    let scene = doc.source.build()?;
    if let Some(dir) = out {
        write_json(&dir.join("source.json"), &doc.source)?;
    }
    run_events(cfg, Some(scene), &doc.events, out, snapshot_every)
}

pub fn model_components(model: &FinalModel) -> Vec<ModelComponent> {
    model
        .components
        .iter()
        .map(|c| ModelComponent { cameras: c.cameras.iter().filter_map(|r| Some((r.camera?, r.center.into()))).collect() })
        .collect()
}
