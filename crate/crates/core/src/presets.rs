//! Shipped device presets, the model registry and plan-file resolution.
//!
//! A plan file is the JSON form of [`SweepPlan`] where devices and models may
//! be given either inline or as references: devices by preset name
//! (`t4.sim`, `l4.sim`) or by a path relative to the plan file, models by
//! registry name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::model::{LoopOrder, ModelSpec, PrecisionMode, SweepPlan};
use crate::sim::DeviceProfile;

pub const T4_SIM: &str = include_str!("../presets/t4.sim");
pub const L4_SIM: &str = include_str!("../presets/l4.sim");
pub const DEFAULT_PLAN: &str = include_str!("../presets/paper-default.plan");
const MODELS_FIXTURE: &str = include_str!("../fixtures/models.json");

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
}

/// Built-in device presets by reference name.
pub fn device_preset(name: &str) -> Option<DeviceProfile> {
    let text = match name {
        "t4.sim" | "sim-t4" => T4_SIM,
        "l4.sim" | "sim-l4" => L4_SIM,
        _ => return None,
    };
    Some(serde_json::from_str(text).expect("shipped device preset parses"))
}

#[derive(Deserialize)]
struct ModelsFixture {
    models: Vec<ModelSpec>,
}

/// Default model registry: resnet18, resnet50, resnet101.
pub fn model_registry() -> Vec<ModelSpec> {
    let fixture: ModelsFixture =
        serde_json::from_str(MODELS_FIXTURE).expect("model fixture parses");
    fixture.models
}

pub fn model_by_name(name: &str) -> Option<ModelSpec> {
    model_registry().into_iter().find(|m| m.name == name)
}

pub fn load_device_file(path: &Path) -> Result<DeviceProfile, PresetError> {
    let text = std::fs::read_to_string(path).map_err(|source| PresetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| PresetError::Parse {
        what: path.display().to_string(),
        source,
    })
}

/// Resolves a device reference: a preset name, otherwise a file path.
pub fn resolve_device(reference: &str, base_dir: &Path) -> Result<DeviceProfile, PresetError> {
    if let Some(profile) = device_preset(reference) {
        return Ok(profile);
    }
    let path = Path::new(reference);
    let path = if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    };
    load_device_file(&path)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DeviceRef {
    Name(String),
    Inline(Box<DeviceProfile>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ModelRef {
    Name(String),
    Inline(ModelSpec),
}

#[derive(Deserialize)]
struct PlanFile {
    devices: Vec<DeviceRef>,
    models: Vec<ModelRef>,
    precisions: Vec<PrecisionMode>,
    batch_sizes: Vec<u32>,
    sweeps: u32,
    repeats: u32,
    warmup_iters: u32,
    timed_iters: u32,
    telemetry_period_ms: u32,
    seed: u64,
    #[serde(default)]
    loop_order: LoopOrder,
    #[serde(default)]
    cpu_baseline_ips: BTreeMap<String, f64>,
}

/// Parses plan text, resolving references relative to `base_dir`.
///
/// The result is not validated; pass it through
/// [`validate_plan`](crate::model::validate_plan).
pub fn parse_plan(text: &str, base_dir: &Path) -> Result<SweepPlan, PresetError> {
    let file: PlanFile = serde_json::from_str(text).map_err(|source| PresetError::Parse {
        what: "plan".into(),
        source,
    })?;
    let devices = file
        .devices
        .into_iter()
        .map(|d| match d {
            DeviceRef::Name(name) => resolve_device(&name, base_dir),
            DeviceRef::Inline(profile) => Ok(*profile),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let models = file
        .models
        .into_iter()
        .map(|m| match m {
            ModelRef::Name(name) => model_by_name(&name).ok_or(PresetError::UnknownModel(name)),
            ModelRef::Inline(spec) => Ok(spec),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepPlan {
        devices,
        models,
        precisions: file.precisions,
        batch_sizes: file.batch_sizes,
        sweeps: file.sweeps,
        repeats: file.repeats,
        warmup_iters: file.warmup_iters,
        timed_iters: file.timed_iters,
        telemetry_period_ms: file.telemetry_period_ms,
        seed: file.seed,
        loop_order: file.loop_order,
        cpu_baseline_ips: file.cpu_baseline_ips,
    })
}

pub fn load_plan(path: &Path) -> Result<SweepPlan, PresetError> {
    let text = std::fs::read_to_string(path).map_err(|source| PresetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_plan(&text, base)
}

/// The shipped plan encoding the reference procedure's constants.
pub fn default_plan() -> Result<SweepPlan, PresetError> {
    parse_plan(DEFAULT_PLAN, Path::new("."))
}
