//! `--config FILE` support: a flat `key = value` file whose entries are
//! spliced into the argument list ahead of the command-line flags, so flags
//! given explicitly override the file.

use std::fs;

use crate::CliError;

/// Expands every `--config PATH` (or `--config=PATH`) in `args`.
pub fn expand(args: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut files = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let path = it
                .next()
                .ok_or_else(|| CliError::Param("--config needs a file path".into()))?;
            files.push(path);
        } else if let Some(path) = a.strip_prefix("--config=") {
            files.push(path.to_string());
        } else {
            rest.push(a);
        }
    }
    if files.is_empty() {
        return Ok(rest);
    }
    let mut from_file = Vec::new();
    for path in files {
        let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
        from_file.extend(parse(&text, &path)?);
    }
    // program name and subcommand words come first
    let split = 1 + rest[1..].iter().take_while(|a| !a.starts_with('-')).count();
    let mut out: Vec<String> = rest[..split].to_vec();
    out.extend(from_file);
    out.extend_from_slice(&rest[split..]);
    Ok(out)
}

fn parse(text: &str, path: &str) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Param(format!("{path}:{}: expected `key = value`", no + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() {
            return Err(CliError::Param(format!("{path}:{}: empty key", no + 1)));
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}
