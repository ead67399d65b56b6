//! File formats: training CSVs, persisted models and value functions with a
//! verified manifest, instance bundles, and result/trace CSV export.
//!
//! Every persisted artifact is a JSON document
//! `{schema_version, kind, content_hash, created_at_unix, payload}` where the
//! hash covers the canonical payload serialization; loading verifies the
//! kind, version, and hash. Lookup tables travel as base64 little-endian
//! f64 blocks so round-trips are bit-exact and compact.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{ScenarioConfig, StorageSpec};
use crate::policy::Policy;
use crate::process::{Models, ProcessModel};
use crate::series::TrainingSeries;
use crate::sim::RolloutTrace;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Artifact {
    schema_version: u32,
    kind: String,
    content_hash: String,
    created_at_unix: u64,
    payload: serde_json::Value,
}

/// Hash of the canonical serialization of any serializable value.
pub fn content_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(canonical_hash(&serde_json::to_value(value)?))
}

fn canonical_hash(payload: &serde_json::Value) -> String {
    // serde_json::Value orders map keys, so this string is canonical.
    let canonical = serde_json::to_string(payload).expect("value serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Persist a payload under an artifact manifest.
pub fn save_artifact<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    let value = serde_json::to_value(payload)?;
    let artifact = Artifact {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        content_hash: canonical_hash(&value),
        created_at_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        payload: value,
    };
    let mut file = fs::File::create(path)?;
    file.write_all(serde_json::to_string(&artifact)?.as_bytes())?;
    Ok(())
}

/// Load and verify an artifact of the expected kind.
pub fn load_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let artifact: Artifact = serde_json::from_str(&text)?;
    if artifact.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "schema version {} (expected {SCHEMA_VERSION}) in {}",
            artifact.schema_version,
            path.display()
        )));
    }
    if artifact.kind != kind {
        return Err(Error::Schema(format!(
            "artifact kind '{}' (expected '{kind}') in {}",
            artifact.kind,
            path.display()
        )));
    }
    if canonical_hash(&artifact.payload) != artifact.content_hash {
        return Err(Error::Checksum);
    }
    Ok(serde_json::from_value(artifact.payload)?)
}

pub fn save_model(path: &Path, model: &ProcessModel) -> Result<()> {
    save_artifact(path, "process-model", model)
}

pub fn load_model(path: &Path) -> Result<ProcessModel> {
    load_artifact(path, "process-model")
}

/// Base64 little-endian encoding for f64 tables.
pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

pub fn decode_f64s(text: &str, expect_len: usize) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Schema(format!("bad float block: {e}")))?;
    if bytes.len() != expect_len * 8 {
        return Err(Error::Schema(format!(
            "float block holds {} bytes, expected {}",
            bytes.len(),
            expect_len * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Provenance recorded alongside a value function: the solver settings and
/// the hashes of the models it was computed against.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VfaMeta {
    #[serde(default)]
    pub method: String,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub wind_model_hash: String,
    #[serde(default)]
    pub price_model_hash: String,
}

/// Wire form of a lookup VFA: grid dimensions, provenance, and one float
/// block per time step.
#[derive(Serialize, Deserialize)]
struct LookupVfaWire {
    horizon: usize,
    r_levels: usize,
    wind_infos: usize,
    price_infos: usize,
    table_len: usize,
    #[serde(default)]
    meta: VfaMeta,
    blocks: Vec<String>,
}

pub fn save_lookup_vfa(path: &Path, vfa: &crate::solver::LookupVfa, meta: &VfaMeta) -> Result<()> {
    let wire = LookupVfaWire {
        horizon: vfa.horizon,
        r_levels: vfa.r_levels,
        wind_infos: vfa.wind_infos,
        price_infos: vfa.price_infos,
        table_len: vfa.tables.first().map(|t| t.len()).unwrap_or(0),
        meta: meta.clone(),
        blocks: vfa.tables.iter().map(|t| encode_f64s(t)).collect(),
    };
    save_artifact(path, "lookup-vfa", &wire)
}

pub fn load_lookup_vfa(path: &Path) -> Result<crate::solver::LookupVfa> {
    let wire: LookupVfaWire = load_artifact(path, "lookup-vfa")?;
    let tables = wire
        .blocks
        .iter()
        .map(|b| decode_f64s(b, wire.table_len))
        .collect::<Result<Vec<_>>>()?;
    Ok(crate::solver::LookupVfa {
        horizon: wire.horizon,
        r_levels: wire.r_levels,
        wind_infos: wire.wind_infos,
        price_infos: wire.price_infos,
        tables,
    })
}

pub fn save_linear_vfa(path: &Path, vfa: &crate::solver::LinearVfa) -> Result<()> {
    save_artifact(path, "linear-vfa", vfa)
}

pub fn load_linear_vfa(path: &Path) -> Result<crate::solver::LinearVfa> {
    load_artifact(path, "linear-vfa")
}

/// A policy plus the model files it was built against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub label: String,
    pub wind_model: String,
    pub price_model: String,
    /// Provenance (tuning scenario-set hash, solver settings, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
    /// Inline policy, or a path to a lookup VFA artifact for large tables.
    pub policy: PolicyPayload,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum PolicyPayload {
    Inline { policy: Policy },
    LookupFile { path: String },
}

pub fn save_policy(path: &Path, bundle: &PolicyBundle) -> Result<()> {
    save_artifact(path, "policy", bundle)
}

pub fn load_policy(path: &Path) -> Result<PolicyBundle> {
    load_artifact(path, "policy")
}

/// Resolve a bundle into a concrete policy, loading referenced files
/// relative to the bundle location.
pub fn resolve_policy(bundle: &PolicyBundle, base: &Path) -> Result<Policy> {
    match &bundle.policy {
        PolicyPayload::Inline { policy } => Ok(policy.clone()),
        PolicyPayload::LookupFile { path } => {
            let vfa = load_lookup_vfa(&base.join(path))?;
            Ok(Policy::Lookup(vfa))
        }
    }
}

/// Parse an ISO-8601 timestamp (`YYYY-MM-DDTHH:MM:SS`, optional trailing
/// `Z`) or raw unix seconds.
pub fn parse_timestamp(text: &str) -> Option<i64> {
    let t = text.trim();
    if let Ok(secs) = t.parse::<i64>() {
        return Some(secs);
    }
    let t = t.strip_suffix('Z').unwrap_or(t);
    let (date, time) = t.split_once('T')?;
    let mut dp = date.split('-');
    let year: i64 = dp.next()?.parse().ok()?;
    let month: i64 = dp.next()?.parse().ok()?;
    let day: i64 = dp.next()?.parse().ok()?;
    let mut tp = time.split(':');
    let hour: i64 = tp.next()?.parse().ok()?;
    let minute: i64 = tp.next()?.parse().ok()?;
    let second: i64 = tp.next().map(|s| s.parse().ok()).unwrap_or(Some(0))?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    // Days since the unix epoch, via the civil-date algorithm.
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (month + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    let days = era * 146_097 + doe - 719_468;
    Some(days * 86_400 + hour * 3_600 + minute * 60 + second)
}

fn format_timestamp(secs: i64) -> String {
    // Inverse of the civil-date algorithm above.
    let days = secs.div_euclid(86_400);
    let rem = secs.rem_euclid(86_400);
    let era = if days >= -719_468 { days + 719_468 } else { days + 719_468 - 146_096 } / 146_097;
    let doe = days + 719_468 - era * 146_097;
    let yoe = (doe - doe / 1_460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = if m <= 2 { y + 1 } else { y };
    format!(
        "{year:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        rem / 3_600,
        (rem % 3_600) / 60,
        rem % 60
    )
}

/// Read a training CSV with header `timestamp,actual,reference[,temperature]`.
pub fn load_training_csv(path: &Path) -> Result<TrainingSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let has_temp = headers.iter().any(|h| h.eq_ignore_ascii_case("temperature"));
    let mut timestamps = Vec::new();
    let mut actual = Vec::new();
    let mut reference = Vec::new();
    let mut temperature = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record?;
        let field = |k: usize| -> Result<&str> {
            record.get(k).ok_or(Error::CsvRow {
                line,
                msg: format!("missing column {k}"),
            })
        };
        let ts = parse_timestamp(field(0)?).ok_or(Error::CsvRow {
            line,
            msg: format!("bad timestamp '{}'", field(0)?),
        })?;
        let parse_num = |k: usize| -> Result<f64> {
            field(k)?.parse::<f64>().map_err(|e| Error::CsvRow {
                line,
                msg: format!("bad number in column {k}: {e}"),
            })
        };
        timestamps.push(ts);
        actual.push(parse_num(1)?);
        reference.push(parse_num(2)?);
        if has_temp {
            temperature.push(parse_num(3)?);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    TrainingSeries::new(
        timestamps,
        actual,
        reference,
        if has_temp { Some(temperature) } else { None },
    )
}

pub fn write_training_csv(path: &Path, series: &TrainingSeries) -> Result<()> {
    let mut out = String::new();
    let has_temp = series.temperature.is_some();
    out.push_str(if has_temp {
        "timestamp,actual,reference,temperature\n"
    } else {
        "timestamp,actual,reference\n"
    });
    for t in 0..series.len() {
        out.push_str(&format_timestamp(series.timestamps[t]));
        out.push_str(&format!(",{},{}", series.actual[t], series.reference[t]));
        if let Some(temp) = &series.temperature {
            out.push_str(&format!(",{}", temp[t]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a single-value CSV `timestamp,<name>`.
pub fn load_profile_csv(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let v = record
            .get(1)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or(Error::CsvRow {
                line: i + 2,
                msg: "bad value".into(),
            })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_profile_csv(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let mut out = format!("timestamp,{name}\n");
    for (t, v) in values.iter().enumerate() {
        out.push_str(&format!(
            "{},{v}\n",
            format_timestamp(t as i64 * crate::series::STEP_SECONDS)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Instance description mirroring the test-case table: battery parameters
/// plus references to the profile files. Hand-authored plain JSON (no
/// manifest wrapper).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub horizon: usize,
    /// Temperature label for bookkeeping: hot, avg, or cool.
    pub temperature: String,
    pub forecast_id: u32,
    pub r_max_mwh: f64,
    pub rho_kwh: f64,
    pub eta: f64,
    pub r_levels: usize,
    /// Initial charge as a fraction of capacity.
    pub r0_frac: f64,
    pub e_max_kw: f64,
    pub load_csv: String,
    pub wind_forecast_csv: String,
    pub temperature_csv: String,
    #[serde(default)]
    pub e0_error: f64,
    #[serde(default)]
    pub p0_error: f64,
    #[serde(default)]
    pub p_min: Option<f64>,
    #[serde(default)]
    pub p_max: Option<f64>,
}

pub fn save_instance(path: &Path, instance: &InstanceFile) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(instance)?)?;
    Ok(())
}

pub fn load_instance(path: &Path) -> Result<InstanceFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Assemble the runtime scenario from an instance file and trained models.
/// Profile paths resolve relative to the instance file.
pub fn build_scenario(path: &Path, models: &Models) -> Result<ScenarioConfig> {
    let instance = load_instance(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let load_kw = load_profile_csv(&base.join(&instance.load_csv))?;
    let mut wind_forecast_kw = load_profile_csv(&base.join(&instance.wind_forecast_csv))?;
    let temperature = load_profile_csv(&base.join(&instance.temperature_csv))?;
    let want = instance.horizon + 1;
    for (name, len) in [
        ("load", load_kw.len()),
        ("wind forecast", wind_forecast_kw.len()),
        ("temperature", temperature.len()),
    ] {
        if len < want {
            return Err(Error::InvalidInput(format!(
                "{name} profile has {len} rows, instance horizon needs {want}"
            )));
        }
    }
    // Snap forecasts onto the wind error grid so outage scenarios cancel.
    let wstep = models.wind.grid().step();
    for f in wind_forecast_kw.iter_mut() {
        *f = (*f / wstep).round() * wstep;
    }

    let extras = match &models.price {
        ProcessModel::Hsmm(m) => m.extras.clone(),
        _ => None,
    };
    let (price_reference, classes) = match extras {
        Some(ex) => (
            ex.reference_series(0, want),
            ex.labels_for(&temperature[..want.max(51)])?,
        ),
        None => (vec![0.0; want], vec![0usize; want]),
    };
    let price_grid = models.price.grid();
    let ref_min = price_reference.iter().cloned().fold(f64::INFINITY, f64::min);
    let ref_max = price_reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let storage = StorageSpec {
        r_max_kwh: instance.r_max_mwh * 1000.0,
        eta: instance.eta,
        rho_ch_kwh: instance.rho_kwh,
        rho_dch_kwh: instance.rho_kwh,
        r_levels: instance.r_levels,
    };
    storage.validate()?;
    let r0_idx = ((instance.r0_frac * (instance.r_levels - 1) as f64).round() as usize)
        .min(instance.r_levels - 1);
    let scenario = ScenarioConfig {
        horizon: instance.horizon,
        load_kw: load_kw[..want].to_vec(),
        wind_forecast_kw: wind_forecast_kw[..want].to_vec(),
        price_reference,
        classes: classes[..want].to_vec(),
        storage,
        r0_idx,
        e0_error: instance.e0_error,
        p0_error: instance.p0_error,
        e_max_kw: instance.e_max_kw,
        p_min: instance.p_min.unwrap_or(ref_min + price_grid.min()),
        p_max: instance.p_max.unwrap_or(ref_max + price_grid.max()),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Scenario-set description consumed by the simulate/compare commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpecFile {
    pub label: String,
    /// `typical` or `worst-case`.
    pub kind: String,
    pub count: usize,
    pub seed: u64,
    #[serde(default = "default_pool")]
    pub pool: usize,
}

fn default_pool() -> usize {
    40
}

pub fn load_scenario_spec(path: &Path) -> Result<ScenarioSpecFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn save_scenario_spec(path: &Path, spec: &ScenarioSpecFile) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(spec)?)?;
    Ok(())
}

/// Trace export: one row per step, the exact column set the plotting
/// pipeline consumes.
pub fn write_trace_csv(path: &Path, trace: &RolloutTrace) -> Result<()> {
    let mut out = String::from("t,R,E,P,x_GL,x_GR,x_RG,x_EL,x_ER,x_RL,contribution\n");
    for row in &trace.rows {
        let d = &row.decision;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.t,
            row.r_kwh,
            row.e_kw,
            row.price,
            d.grid_to_load,
            d.grid_to_batt,
            d.batt_to_grid,
            d.wind_to_load,
            d.wind_to_batt,
            d.batt_to_load,
            row.contribution
        ));
    }
    fs::write(path, out)?;
    Ok(())
}
