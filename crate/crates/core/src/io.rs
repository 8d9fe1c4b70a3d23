//! Run artifacts: the snapshot CSV, the run metadata JSON, flat
//! `key=value` configuration files and atomic file output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LeibensonError, Result};
use crate::params::LeibensonParams;
use crate::sde::{ParticleEnsemble, SDEConfig, SnapRounding};

pub const RUN_SCHEMA: &str = "leibenson-run/1";
pub const SNAPSHOT_FILE: &str = "snapshots.csv";
pub const METADATA_FILE: &str = "metadata.json";

/// Floats are written with 17 significant digits, enough to round-trip.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn snapshot_header(d: usize) -> String {
    let mut h = String::from("t,particle_id");
    for i in 1..=d {
        h.push_str(&format!(",x{i}"));
    }
    h
}

/// Serializes snapshots as `t,particle_id,x1,...,xd` rows.
pub fn write_snapshot_csv(snapshots: &[ParticleEnsemble], d: usize) -> Result<String> {
    let mut out = snapshot_header(d);
    out.push('\n');
    for e in snapshots {
        if e.d != d {
            return Err(LeibensonError::Domain("snapshot dimension mismatch".into()));
        }
        let t = format_float(e.time);
        for (i, id) in e.stream_ids.iter().enumerate() {
            out.push_str(&t);
            out.push(',');
            out.push_str(&id.to_string());
            for v in e.position(i) {
                out.push(',');
                out.push_str(&format_float(*v));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Parses a snapshot CSV. Consecutive rows sharing `t` form one snapshot.
/// Step indices are left at zero; [`load_run`] restores them.
pub fn read_snapshot_csv(text: &str) -> Result<Vec<ParticleEnsemble>> {
    let bad = |line: usize, msg: &str| LeibensonError::Format(format!("snapshot CSV line {line}: {msg}"));
    if !text.ends_with('\n') {
        return Err(LeibensonError::Format("snapshot CSV is truncated (no final newline)".into()));
    }
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let columns = header.split(',').count();
    if columns < 3 {
        return Err(bad(1, "too few columns"));
    }
    let d = columns - 2;
    if header != snapshot_header(d) {
        return Err(bad(1, &format!("unexpected header {header:?}")));
    }
    let mut out: Vec<ParticleEnsemble> = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(bad(lineno, &format!("expected {columns} fields, found {}", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(lineno, &format!("bad number {s:?}")))
        };
        let t = num(fields[0])?;
        let id: u64 = fields[1].parse().map_err(|_| bad(lineno, "bad particle id"))?;
        if out.last().is_none_or(|e| e.time != t) {
            if out.iter().any(|e| e.time == t) {
                return Err(bad(lineno, "snapshot rows are not contiguous"));
            }
            out.push(ParticleEnsemble { time: t, step: 0, d, positions: Vec::new(), stream_ids: Vec::new() });
        }
        let e = out.last_mut().expect("pushed above");
        e.stream_ids.push(id);
        for f in &fields[2..] {
            e.positions.push(num(f)?);
        }
    }
    Ok(out)
}

/// `f = C − κ(τ^{−1/β}r)^s` constants, echoed so that consumers never
/// recompute them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsEcho {
    pub d: usize,
    pub p: f64,
    pub q: f64,
    pub delta: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub c_norm: f64,
    pub radial_exponent: f64,
    pub coefficient_factor: f64,
}

impl ConstantsEcho {
    pub fn new(params: &LeibensonParams, delta: f64) -> Self {
        ConstantsEcho {
            d: params.d(),
            p: params.p(),
            q: params.q(),
            delta,
            beta: params.beta(),
            gamma: params.gamma(),
            kappa: params.kappa(),
            c_norm: params.c_norm(),
            radial_exponent: params.radial_exponent(),
            coefficient_factor: params.coefficient_factor(),
        }
    }
}

/// Treatment of the source point when `p < 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginPolicy {
    pub clamp_active: bool,
    pub clamp_radius: f64,
    pub rule: String,
}

impl OriginPolicy {
    pub fn new(config: &SDEConfig) -> Self {
        OriginPolicy {
            clamp_active: config.params.p() < 2.0,
            clamp_radius: config.origin_clamp_value(),
            rule: "for |X| < clamp_radius coefficients are read at clamp_radius along the same direction".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub schema: String,
    pub library_version: String,
    /// Echo of the configuration as given by the caller.
    pub config: serde_json::Value,
    pub sde: SDEConfig,
    pub constants: ConstantsEcho,
    pub snap_rounding: Vec<SnapRounding>,
    pub origin_policy: OriginPolicy,
    pub snapshot_file: String,
    pub snapshot_sha256: String,
}

impl RunMetadata {
    pub fn new(config_echo: serde_json::Value, sde: &SDEConfig, snapshot_csv: &[u8]) -> Result<Self> {
        Ok(RunMetadata {
            schema: RUN_SCHEMA.into(),
            library_version: env!("CARGO_PKG_VERSION").into(),
            config: config_echo,
            sde: sde.clone(),
            constants: ConstantsEcho::new(&sde.params, sde.delta),
            snap_rounding: sde.snap_rounding()?,
            origin_policy: OriginPolicy::new(sde),
            snapshot_file: SNAPSHOT_FILE.into(),
            snapshot_sha256: sha256_hex(snapshot_csv),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let meta: RunMetadata = serde_json::from_str(text)?;
        if meta.schema != RUN_SCHEMA {
            return Err(LeibensonError::Format(format!("unsupported run schema {:?}", meta.schema)));
        }
        Ok(meta)
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| LeibensonError::Domain(format!("{} is not a file path", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        fs::write(&tmp, bytes)?;
        fs::File::open(&tmp)?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Writes the snapshot CSV and then the metadata into `dir`.
pub fn write_run(dir: &Path, config_echo: serde_json::Value, sde: &SDEConfig, snapshots: &[ParticleEnsemble]) -> Result<RunMetadata> {
    fs::create_dir_all(dir)?;
    let csv = write_snapshot_csv(snapshots, sde.params.d())?;
    let meta = RunMetadata::new(config_echo, sde, csv.as_bytes())?;
    write_atomic(&dir.join(SNAPSHOT_FILE), csv.as_bytes())?;
    write_atomic(&dir.join(METADATA_FILE), meta.to_json()?.as_bytes())?;
    Ok(meta)
}

/// Reads a run directory, refusing snapshot data whose hash differs from
/// the metadata or whose shape disagrees with the recorded configuration.
pub fn load_run(dir: &Path) -> Result<(RunMetadata, Vec<ParticleEnsemble>)> {
    let meta = RunMetadata::from_json(&fs::read_to_string(dir.join(METADATA_FILE))?)?;
    let bytes = fs::read(dir.join(&meta.snapshot_file))?;
    let actual = sha256_hex(&bytes);
    if actual != meta.snapshot_sha256 {
        return Err(LeibensonError::Format(format!(
            "snapshot hash mismatch: metadata has {}, file has {actual}",
            meta.snapshot_sha256
        )));
    }
    let text = String::from_utf8(bytes).map_err(|_| LeibensonError::Format("snapshot CSV is not UTF-8".into()))?;
    let mut snapshots = read_snapshot_csv(&text)?;
    if snapshots.len() != meta.snap_rounding.len() {
        return Err(LeibensonError::Format(format!(
            "expected {} snapshots, found {}",
            meta.snap_rounding.len(),
            snapshots.len()
        )));
    }
    for (e, r) in snapshots.iter_mut().zip(&meta.snap_rounding) {
        if e.d != meta.sde.params.d() || e.len() != meta.sde.n_particles || e.time != r.actual {
            return Err(LeibensonError::Format(format!("snapshot at t = {} does not match the metadata", e.time)));
        }
        e.step = r.step;
    }
    Ok((meta, snapshots))
}

/// Parses a flat `key=value` file. Blank lines and lines starting with
/// `#` are skipped; unknown and repeated keys are errors.
pub fn parse_key_values(text: &str, allowed: &[&str]) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| LeibensonError::Format(format!("line {}: expected key=value", k + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !allowed.contains(&key) {
            return Err(LeibensonError::Format(format!("line {}: unknown key {key:?}", k + 1)));
        }
        if out.iter().any(|(k2, _)| k2 == key) {
            return Err(LeibensonError::Format(format!("line {}: duplicate key {key:?}", k + 1)));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}
