//! The `summary.json` document.

use serde_json::{json, Value};

use crate::config::Command;

pub fn summary(
    command: Command,
    seed: u64,
    status: &str,
    exit_code: i32,
    message: Option<&str>,
    files: &[String],
    results: Value,
) -> Value {
    json!({
        "version": concat!("v", env!("CARGO_PKG_VERSION")),
        "command": command.name(),
        "status": status,
        "exit_code": exit_code,
        "seed": seed,
        "message": message,
        "files": files,
        "results": results,
    })
}

/// Pretty JSON with a trailing newline. Keys come out sorted because
/// `serde_json` maps are ordered by key without `preserve_order`.
pub fn render(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("a JSON value always serializes");
    s.push(b'\n');
    s
}
