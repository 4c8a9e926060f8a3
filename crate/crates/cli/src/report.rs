//! Report assembly: provenance-tagged JSON, CSV curves, field dumps and timings.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nlflow_core::degiorgi::Provenance;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const TOOL: &str = "nlflow";

fn provenance_name(p: Provenance) -> Value {
    serde_json::to_value(p).expect("provenance serializes")
}

fn is_tagged(map: &Map<String, Value>) -> bool {
    map.len() == 2 && map.contains_key("value") && map.contains_key("provenance")
}

/// Wraps every floating-point leaf as `{value, provenance}`; integers (seeds, counts,
/// indices) and already-tagged entries are left alone.
pub fn tag(value: Value, provenance: Provenance) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => json!({ "value": n, "provenance": provenance_name(provenance) }),
        Value::Array(items) => Value::Array(items.into_iter().map(|v| tag(v, provenance)).collect()),
        Value::Object(map) if is_tagged(&map) => Value::Object(map),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, tag(v, provenance))).collect()),
        other => other,
    }
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

/// Accumulates one subcommand's outputs; flushed even when the pipeline aborts.
pub struct Session {
    pub sections: BTreeMap<String, Value>,
    pub curves: BTreeMap<String, String>,
    pub fields: BTreeMap<String, Vec<u8>>,
    pub extra_files: BTreeMap<String, Vec<u8>>,
    timings: Vec<(String, f64)>,
    failures: Vec<String>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

impl Session {
    pub fn new() -> Self {
        Self {
            sections: BTreeMap::new(),
            curves: BTreeMap::new(),
            fields: BTreeMap::new(),
            extra_files: BTreeMap::new(),
            timings: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Measured section: every float is tagged `measured`.
    pub fn measured(&mut self, name: &str, value: Value) {
        self.sections.insert(name.to_string(), tag(value, Provenance::Measured));
    }

    pub fn section(&mut self, name: &str, value: Value, provenance: Provenance) {
        self.sections.insert(name.to_string(), tag(value, provenance));
    }

    pub fn verdict(&mut self, name: impl Into<String>, ok: bool) {
        if !ok {
            self.failures.push(name.into());
        }
    }

    pub fn failures(&self) -> &[String] {
        &self.failures
    }

    pub fn phase<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T, CliError>) -> Result<T, CliError> {
        let start = Instant::now();
        let out = f(self);
        self.timings.push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    /// Deterministic JSON; wall-clock times go to a separate file.
    pub fn report(&self, config: &ExperimentConfig, error: Option<&CliError>) -> Value {
        let status = match (error, self.failures.is_empty()) {
            (Some(_), _) => "aborted",
            (None, true) => "pass",
            (None, false) => "fail",
        };
        let mut root = Map::new();
        root.insert("tool".into(), json!(TOOL));
        root.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        root.insert("subcommand".into(), json!(config.subcommand.name()));
        root.insert("status".into(), json!(status));
        root.insert("failed_verdicts".into(), json!(self.failures));
        root.insert("config".into(), to_value(&config.echo));
        root.insert("seeds".into(), json!(config.seeds));
        if let Some(e) = error {
            root.insert("error".into(), json!(e.to_string()));
        }
        for (k, v) in &self.sections {
            root.insert(k.clone(), v.clone());
        }
        Value::Object(root)
    }

    pub fn write(&self, config: &ExperimentConfig, error: Option<&CliError>) -> Result<(), CliError> {
        let dir = &config.out_dir;
        let mut report = serde_json::to_string_pretty(&self.report(config, error)).expect("report serializes");
        report.push('\n');
        write_file(&dir.join("report.json"), report.as_bytes())?;
        for (name, text) in &self.curves {
            write_file(&dir.join("curves").join(format!("{name}.csv")), text.as_bytes())?;
        }
        for (name, bytes) in &self.fields {
            write_file(&dir.join("fields").join(name), bytes)?;
        }
        for (name, bytes) in &self.extra_files {
            write_file(&dir.join(name), bytes)?;
        }
        let timings: Map<String, Value> = self.timings.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        let mut text = serde_json::to_string_pretty(&json!({ "wall_clock_seconds": timings })).expect("timings");
        text.push('\n');
        write_file(&dir.join("timings.json"), text.as_bytes())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// CSV with a header line; floats use the round-trip formatter.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| crate::io::format_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagging_wraps_floats_only() {
        let v = tag(json!({"a": 1.5, "seed": 3, "xs": [0.25], "t": {"value": 0.5, "provenance": "calibrated"}}), Provenance::Measured);
        assert_eq!(v["a"], json!({"value": 1.5, "provenance": "measured"}));
        assert_eq!(v["seed"], json!(3));
        assert_eq!(v["xs"][0]["provenance"], json!("measured"));
        assert_eq!(v["t"]["provenance"], json!("calibrated"));
    }

    #[test]
    fn csv_table_rows() {
        let t = csv_table(&["k", "u"], vec![vec![0.0, 0.5], vec![1.0, 1e-20]]);
        assert_eq!(t, "k,u\n0,0.5\n1,1e-20\n");
    }
}
