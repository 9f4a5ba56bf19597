use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha1::{Digest, Sha1};

use gcnstab::model::Constants;
use gcnstab::{Error, Result};

/// Hash of `bytes` as git stores a blob: `sha1("blob <len>\0" ++ bytes)`.
pub fn git_blob_sha1(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub git_sha1: String,
}

pub fn hash_inputs(paths: &[PathBuf]) -> Result<Vec<InputFile>> {
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            Ok(InputFile { path: p.clone(), git_sha1: git_blob_sha1(&bytes) })
        })
        .collect()
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ResolvedConstants {
    pub alpha_sigma: Option<f64>,
    pub nu_sigma: Option<f64>,
    pub alpha_ell: Option<f64>,
    pub nu_ell: Option<f64>,
    /// Number, or "inf" when the run diverged.
    #[serde(rename = "M")]
    pub loss_bound: Option<Value>,
}

impl ResolvedConstants {
    pub fn new(act: Constants, loss: Constants) -> Self {
        ResolvedConstants {
            alpha_sigma: Some(act.alpha),
            nu_sigma: Some(act.nu),
            alpha_ell: Some(loss.alpha),
            nu_ell: Some(loss.nu),
            loss_bound: None,
        }
    }
}

/// Everything needed to repeat a run. Written beside each artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub argv: Vec<String>,
    pub flags: Value,
    pub constants: ResolvedConstants,
    pub g_lambda: Option<f64>,
    pub lambda_max: Option<f64>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<PathBuf>,
    /// Extra per-subcommand results.
    pub summary: Value,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, argv: Vec<String>, flags: impl Serialize) -> Self {
        RunManifest {
            tool: "gcnstab",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            argv,
            flags: serde_json::to_value(flags).unwrap_or(Value::Null),
            constants: ResolvedConstants::default(),
            g_lambda: None,
            lambda_max: None,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: Value::Null,
        }
    }
}

/// `out.csv` → `out.csv.manifest.json`; a directory gets `manifest.json` inside.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        return output.join("manifest.json");
    }
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn write_manifest(m: &RunManifest, output: &Path) -> Result<PathBuf> {
    let path = manifest_path(output);
    let body = serde_json::to_string_pretty(m).expect("manifest serializes");
    fs::write(&path, body + "\n").map_err(|e| Error::Io { path: path.clone(), source: e })?;
    Ok(path)
}

/// JSON number, or a string for non-finite values.
pub fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x.is_nan() {
        Value::from("nan")
    } else if x > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(git_blob_sha1(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
        // `git hash-object /dev/null`
        assert_eq!(git_blob_sha1(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    }

    #[test]
    fn manifest_sits_beside_the_output() {
        assert_eq!(manifest_path(Path::new("/tmp/x/run.csv")), PathBuf::from("/tmp/x/run.csv.manifest.json"));
    }

    #[test]
    fn non_finite_values_become_strings() {
        assert_eq!(json_f64(f64::INFINITY), Value::from("inf"));
        assert_eq!(json_f64(f64::NAN), Value::from("nan"));
        assert_eq!(json_f64(0.5), Value::from(0.5));
    }
}
