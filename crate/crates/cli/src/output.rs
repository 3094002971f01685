//! Run manifests and artifact writers. Every artifact carries the id of the
//! manifest that produced it; wall-clock time goes to a separate file so the
//! remaining outputs are bit-reproducible.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use jnd_core::data::ppm_bytes;
use jnd_core::tensor::Tensor;
use jnd_core::{JndError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA_HEADER: &str = "schema=1";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// First 16 hex digits of the SHA-256 of the other fields.
    pub manifest_id: String,
    pub command: String,
    /// Effective configuration, without output paths.
    pub config: serde_json::Value,
    /// Absent for commands that draw no random numbers.
    pub seed: Option<u64>,
    pub model_sha256: Option<String>,
    pub dataset: String,
    pub toolkit_version: String,
    /// Named tallies such as skipped misclassified images.
    pub counts: BTreeMap<String, usize>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        model_sha256: Option<String>,
        dataset: String,
        counts: BTreeMap<String, usize>,
    ) -> Result<Self> {
        let mut m = RunManifest {
            manifest_id: String::new(),
            command: command.to_string(),
            config,
            seed,
            model_sha256,
            dataset,
            toolkit_version: TOOLKIT_VERSION.to_string(),
            counts,
        };
        m.manifest_id = sha256_hex(&serde_json::to_vec(&m)?)[..16].to_string();
        Ok(m)
    }

    pub fn write(&self, dir: &Path, wall_clock_seconds: f64) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)?;
        let timing = serde_json::json!({ "manifest_id": self.manifest_id, "wall_clock_seconds": wall_clock_seconds });
        write_json(&dir.join(TIMING_FILE), &timing)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| JndError::Input(format!("cannot read `{}`: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| JndError::Input(format!("`{}` is not a run manifest: {e}", path.display())))
    }
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// PPM with a `# manifest <id>` comment after the magic number.
pub fn write_ppm(path: &Path, image: &Tensor<f64>, manifest_id: &str) -> Result<()> {
    let bytes = ppm_bytes(image)?;
    let mut out = bytes[..3].to_vec();
    out.extend_from_slice(format!("# manifest {manifest_id}\n").as_bytes());
    out.extend_from_slice(&bytes[3..]);
    fs::write(path, out)?;
    Ok(())
}

/// CSV writer whose header starts with `schema=1,manifest` and whose rows start
/// with the schema version and manifest id.
pub struct CsvOut {
    writer: csv::Writer<fs::File>,
    manifest_id: String,
}

impl CsvOut {
    pub fn create(path: &Path, manifest_id: &str, columns: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec![SCHEMA_HEADER, "manifest"];
        header.extend_from_slice(columns);
        writer.write_record(&header).map_err(csv_err)?;
        Ok(Self { writer, manifest_id: manifest_id.to_string() })
    }

    pub fn row(&mut self, cells: &[String]) -> Result<()> {
        let mut row = vec![SCHEMA_VERSION.to_string(), self.manifest_id.clone()];
        row.extend_from_slice(cells);
        self.writer.write_record(&row).map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> JndError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => JndError::Io(io),
        other => JndError::Format(format!("CSV: {other:?}")),
    }
}

/// Shortest round-trip decimal; empty for a missing value.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn ensure_dir(path: &Path, flag: &str) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| JndError::Input(format!("{flag}: cannot create `{}`: {e}", path.display())))
}
