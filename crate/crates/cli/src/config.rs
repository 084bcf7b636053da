//! Config files preload flags for a subcommand.
//!
//! ```text
//! # comment
//! seed = 7              # applies to every subcommand that has --seed
//! [deblur]
//! iters = 12
//! saturated = true      # boolean flags: true sets, false leaves unset
//! ```
//!
//! Section keys must be flags of that subcommand. Flags given on the command
//! line win over config values.

use std::collections::BTreeMap;
use std::path::Path;

use clap::Command;

use crate::error::{CliError, Result};

#[derive(Debug, Default, PartialEq)]
pub struct Config {
    pub global: Vec<(String, String)>,
    pub sections: BTreeMap<String, Vec<(String, String)>>,
}

pub fn parse(text: &str) -> Result<Config> {
    let mut cfg = Config::default();
    let mut section: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim().to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!("config line {}: expected key = value", n + 1))
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(CliError::usage(format!("config line {}: empty key", n + 1)));
        }
        match &section {
            None => cfg.global.push((key, value)),
            Some(s) => cfg
                .sections
                .entry(s.clone())
                .or_default()
                .push((key, value)),
        }
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text)
}

/// `--config` value from raw arguments, if any.
pub fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn to_flags(sub: &Command, pairs: &[(String, String)], strict: bool) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (key, value) in pairs {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()));
        let Some(arg) = arg else {
            if strict {
                return Err(CliError::usage(format!(
                    "config key '{key}' is not a flag of '{}'",
                    sub.get_name()
                )));
            }
            continue;
        };
        if arg.get_action().takes_values() {
            out.push(format!("--{key}"));
            out.push(value.clone());
        } else {
            match value.as_str() {
                "true" => out.push(format!("--{key}")),
                "false" => {}
                _ => {
                    return Err(CliError::usage(format!(
                        "config key '{key}' is a switch; use true or false"
                    )))
                }
            }
        }
    }
    Ok(out)
}

/// Inserts config-derived flags right after the subcommand name so that
/// later command-line flags override them.
pub fn merge(args: Vec<String>, cfg: &Config, cmd: &Command) -> Result<Vec<String>> {
    let pos = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| cmd.find_subcommand(a.as_str()).is_some())
        .map(|(i, _)| i);
    let Some(pos) = pos else {
        return Ok(args);
    };
    let sub = cmd.find_subcommand(&args[pos]).expect("found above");
    for name in cfg.sections.keys() {
        if cmd.find_subcommand(name).is_none() {
            return Err(CliError::usage(format!(
                "config section [{name}] is not a subcommand"
            )));
        }
    }
    let mut injected = to_flags(sub, &cfg.global, false)?;
    if let Some(pairs) = cfg.sections.get(sub.get_name()) {
        injected.extend(to_flags(sub, pairs, true)?);
    }
    let mut merged = args[..=pos].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[pos + 1..]);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_comments_and_underscores() {
        let cfg =
            parse("seed = 3 # x\n\n[deblur]\nsi_realizations = \"8\"\nsaturated=true\n").unwrap();
        assert_eq!(cfg.global, vec![("seed".into(), "3".into())]);
        assert_eq!(
            cfg.sections["deblur"],
            vec![
                ("si-realizations".to_string(), "8".to_string()),
                ("saturated".to_string(), "true".to_string())
            ]
        );
        assert!(parse("novalue\n").is_err());
    }

    #[test]
    fn config_path_forms() {
        let a: Vec<String> = ["x", "--config", "c.toml", "blur"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(config_path(&a).as_deref(), Some("c.toml"));
        let b: Vec<String> = ["x", "blur", "--config=d"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(config_path(&b).as_deref(), Some("d"));
    }
}
