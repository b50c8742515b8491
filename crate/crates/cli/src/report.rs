//! Config-file merging, provenance blocks and report output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use msc_core::tensor_io::ActivationCache;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{CliError, CliResult};

/// Overlays explicitly given command-line values on a JSON config file.
///
/// Unknown config keys are rejected by the target type. Unset options and
/// `false` switches on the command line leave the file's value in place.
pub fn merge_config<T: Serialize + DeserializeOwned>(cli: T, config: Option<&Path>) -> CliResult<T> {
    let Some(path) = config else {
        return Ok(cli);
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let file: T = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let mut base = to_object(&file)?;
    for (k, v) in to_object(&cli)? {
        if !(v.is_null() || v == Value::Bool(false)) {
            base.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn to_object<T: Serialize>(v: &T) -> CliResult<Map<String, Value>> {
    match serde_json::to_value(v)? {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Usage("parameters must serialize to an object".into())),
    }
}

/// Report wrapper: the provenance block followed by the command's payload.
pub struct Report {
    provenance: Value,
}

impl Report {
    pub fn new<P: Serialize>(command: &str, seed: Option<u64>, cache: Option<&ActivationCache>, params: &P) -> CliResult<Self> {
        let cache_hash = match cache {
            Some(c) => Value::String(c.content_hash()?),
            None => Value::Null,
        };
        Ok(Report {
            provenance: json!({
                "tool": "msc",
                "version": env!("CARGO_PKG_VERSION"),
                "command": command,
                "seed": seed,
                "cache_hash": cache_hash,
                "params": serde_json::to_value(params)?,
            }),
        })
    }

    pub fn to_json<B: Serialize>(&self, body: &B) -> CliResult<String> {
        let mut out = Map::new();
        out.insert("provenance".into(), self.provenance.clone());
        out.insert("result".into(), serde_json::to_value(body)?);
        let mut s = serde_json::to_string_pretty(&Value::Object(out))?;
        s.push('\n');
        Ok(s)
    }

    /// Writes the report to `out`, or standard output when absent.
    pub fn emit<B: Serialize>(&self, body: &B, out: Option<&PathBuf>) -> CliResult<()> {
        write_text(&self.to_json(body)?, out)
    }
}

pub fn write_text(text: &str, out: Option<&PathBuf>) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(p.clone(), e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Io(PathBuf::from("<stdout>"), e))
        }
    }
}
