//! Result files: a metadata header followed by rows, as CSV or JSON.

use std::path::Path;

use serde_json::{json, Value};

use crate::config::{CampaignConfig, Command, Format};
use crate::error::{io_error, CliError, CliResult};

pub const META_PREFIX: &str = "# meta: ";

/// Rows of one result, in both encodings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: String,
    pub csv: Vec<String>,
    pub json: Vec<Value>,
}

impl Table {
    pub fn new(header: &str) -> Self {
        Self {
            header: header.to_string(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, csv: String, json: Value) {
        self.csv.push(csv);
        self.json.push(json);
    }
}

/// Where the configuration came from.
#[derive(Debug, Clone)]
pub struct Sources<'a> {
    pub file: Option<&'a Path>,
    pub file_config: Option<&'a CampaignConfig>,
    pub flags: &'a CampaignConfig,
}

/// Everything needed to re-run the campaign exactly.
pub fn meta(command: Command, resolved: &CampaignConfig, sources: &Sources<'_>) -> Value {
    json!({
        "tool": "wgfi",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": wgfi::VERSION,
        "command": command.name(),
        "config_hash": resolved.hash(),
        "seed": resolved.seed,
        "config": resolved,
        "config_file": sources.file,
        "file_config": sources.file_config,
        "flags": sources.flags,
    })
}

pub fn render(meta: &Value, table: &Table, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = format!("{META_PREFIX}{meta}\n{}\n", table.header);
            for row in &table.csv {
                out.push_str(row);
                out.push('\n');
            }
            out
        }
        Format::Json => {
            let doc = json!({ "meta": meta, "rows": table.json });
            serde_json::to_string_pretty(&doc).expect("json value serializes") + "\n"
        }
    }
}

/// Metadata of a result file in either format.
pub fn parse_meta(text: &str) -> CliResult<Value> {
    if let Some(rest) = text.strip_prefix(META_PREFIX) {
        let line = rest.lines().next().unwrap_or_default();
        return serde_json::from_str(line).map_err(|e| CliError::config(format!("bad meta line: {e}")));
    }
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| CliError::config(format!("result file is neither CSV nor JSON: {e}")))?;
    doc.get("meta")
        .cloned()
        .ok_or_else(|| CliError::config("result file has no meta record"))
}

pub fn write_or_print(text: &str, path: Option<&Path>) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_error(p, e)),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Runtime(format!("stdout: {e}")))
        }
    }
}
