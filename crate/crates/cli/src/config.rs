//! Flat `key = value` config files, merged into argv before parsing.
//!
//! Each key is a long flag name of the chosen subcommand (or a global flag).
//! Values from the file are inserted right after the subcommand, so anything
//! given on the command line wins: a key that also appears as a flag on the
//! command line is dropped from the file entirely (this also holds for flags
//! that take several values). `key = true` turns a switch on, `key = false`
//! leaves it off.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use coded_exposure::Error;

/// Short flags and the long names they stand for.
const SHORT_ALIASES: &[(&str, &str)] = &[("-o", "output")];

pub const SUBCOMMANDS: &[&str] = &[
    "ingest",
    "gen-pattern",
    "train-pattern",
    "encode",
    "stats",
    "energy",
    "hwsim",
    "verify",
];

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, Error> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("invalid key '{}'", key),
            });
        }
        entries.push((key.to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

/// Path given to `--config`, if any.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut iter = args.iter().skip(1);
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            return iter.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn flag_name(arg: &str) -> Option<&str> {
    if let Some(long) = arg.strip_prefix("--") {
        return Some(long.split('=').next().unwrap_or(long));
    }
    SHORT_ALIASES.iter().find(|(short, _)| arg == *short).map(|(_, long)| *long)
}

/// Argument vector with the config file's entries spliced in.
pub fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>, Error> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let entries = parse_config(&text)?;
    let Some(at) = args.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(args);
    };
    let given: Vec<String> = args
        .iter()
        .filter_map(|a| flag_name(&a.to_string_lossy()).map(str::to_string))
        .collect();
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        if given.contains(&key) {
            continue;
        }
        match value.as_str() {
            "true" => injected.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                injected.push(format!("--{key}").into());
                injected.extend(value.split_whitespace().map(OsString::from));
            }
        }
    }
    let mut merged = args[..=at].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[at + 1..]);
    Ok(merged)
}
