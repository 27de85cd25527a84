//! Config files. Keys are flag names (`noise_sigma` or `noise-sigma`).
//! Top-level keys apply to every subcommand that accepts them; a table named
//! after a subcommand (`[train-pool]`) applies to that subcommand only and
//! wins over top-level keys. Flags given on the command line win over both.

use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, Command};
use serde_json::{Map, Value};

use crate::error::CliError;

fn load(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
    } else {
        let t: toml::Value =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| CliError::Usage(e.to_string()))?
    };
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(CliError::Usage(format!("config {} is not a table", path.display()))),
    }
}

fn scalar(v: &Value) -> Result<String, CliError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(CliError::Usage(format!("unsupported config value {other}"))),
    }
}

fn accepts(cmd: &Command, key: &str) -> bool {
    cmd.get_arguments().any(|a| a.get_long() == Some(key))
}

/// Turns one config entry into command-line tokens for `cmd`.
fn tokens(cmd: &Command, key: &str, value: &Value) -> Result<Vec<OsString>, CliError> {
    let arg = cmd
        .get_arguments()
        .find(|a| a.get_long() == Some(key))
        .expect("caller checked the flag exists");
    let flag = format!("--{key}");
    if !arg.get_action().takes_values() {
        return match value {
            Value::Bool(true) => Ok(vec![flag.into()]),
            Value::Bool(false) => Ok(vec![]),
            other => Err(CliError::Usage(format!("config key {key}: expected true/false, got {other}"))),
        };
    }
    let items = match value {
        Value::Array(items) => items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?,
        v => vec![scalar(v)?],
    };
    if matches!(arg.get_action(), ArgAction::Append) && arg.get_value_delimiter().is_none() {
        Ok(items.into_iter().map(|v| format!("{flag}={v}").into()).collect())
    } else {
        Ok(vec![format!("{flag}={}", items.join(",")).into()])
    }
}

/// Long flag names present in user arguments.
fn given(args: &[OsString]) -> Vec<String> {
    args.iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect()
}

/// Finds `--config`, and splices the file's values in after the subcommand
/// name, skipping flags the user already gave.
pub fn expand(root: &Command, args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let Some(s) = a.to_str() else { continue };
        if s == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let Some(pos) = args
        .iter()
        .position(|a| a.to_str().is_some_and(|s| root.find_subcommand(s).is_some()))
    else {
        return Ok(args);
    };
    let sub_name = args[pos].to_str().expect("matched as str").to_string();
    let sub = root.find_subcommand(&sub_name).expect("matched above");
    let map = load(Path::new(&path))?;
    let normal = |k: &str| k.replace('_', "-");

    let mut chosen: Vec<(String, Value)> = Vec::new();
    for (key, value) in &map {
        let key = normal(key);
        if value.is_object() {
            if root.find_subcommand(&key).is_none() {
                return Err(CliError::Usage(format!("unknown config table [{key}]")));
            }
            continue;
        }
        if accepts(sub, &key) {
            chosen.push((key, value.clone()));
        } else if !root.get_subcommands().any(|c| accepts(c, &key)) {
            return Err(CliError::Usage(format!("unknown config key {key}")));
        }
    }
    if let Some(Value::Object(table)) = map.get(&sub_name).or_else(|| map.get(&sub_name.replace('-', "_"))) {
        for (key, value) in table {
            let key = normal(key);
            if !accepts(sub, &key) {
                return Err(CliError::Usage(format!("unknown config key {key} for {sub_name}")));
            }
            chosen.retain(|(k, _)| *k != key);
            chosen.push((key, value.clone()));
        }
    }

    let user = given(&args[pos + 1..]);
    let mut out = args[..=pos].to_vec();
    for (key, value) in &chosen {
        if key == "config" || user.contains(key) {
            continue;
        }
        out.extend(tokens(sub, key, value)?);
    }
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}
