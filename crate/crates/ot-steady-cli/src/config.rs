//! Layered run configuration: defaults, then a named preset, then a flat
//! `key = value` config file, then command line flags, later layers winning.
//! Every key a command reads is recorded with its final value so the run
//! manifest holds the complete resolved configuration.

use crate::Failure;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Flags every run-producing subcommand shares.
#[derive(clap::Args)]
pub(crate) struct CommonArgs {
    /// Flat `key = value` config file, overridden by explicit flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named settings bundle; only `paper` is defined
    #[arg(long)]
    pub preset: Option<String>,
    /// Directory for CSV outputs and the run manifest
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Base RNG seed
    #[arg(long)]
    pub seed: Option<u64>,
}

pub(crate) struct Settings {
    file: BTreeMap<String, String>,
    preset: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(command: &str, config: Option<&Path>, preset: &[(&str, &str)]) -> Result<Self, Failure> {
        let file = match config {
            Some(p) => parse_config_file(p)?,
            None => BTreeMap::new(),
        };
        let preset = preset.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut resolved = BTreeMap::new();
        resolved.insert("command".to_string(), command.to_string());
        Ok(Settings { file, preset, resolved })
    }

    /// File value if present, else preset value. Both layers are consumed so
    /// leftover file keys can be rejected as unknown at the end.
    fn layered(&mut self, key: &str) -> Option<String> {
        let f = self.file.remove(key);
        let p = self.preset.remove(key);
        f.or(p)
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, Failure> {
        let layered = self.layered(key);
        let val = match flag {
            Some(v) => v,
            None => match layered {
                Some(s) => parse_value(key, &s)?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), val.to_string());
        Ok(val)
    }

    pub fn get_required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T, Failure> {
        let layered = self.layered(key);
        let val = match flag {
            Some(v) => v,
            None => match layered {
                Some(s) => parse_value(key, &s)?,
                None => {
                    let flag_name = key.replace('_', "-");
                    return Err(Failure::Usage(format!("missing required setting '{key}' (--{flag_name} or a config entry)")));
                }
            },
        };
        self.resolved.insert(key.to_string(), val.to_string());
        Ok(val)
    }

    /// A setting that may stay unset; the literal `none` in a config file
    /// clears a preset value.
    pub fn get_optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, Failure> {
        let layered = self.layered(key);
        let val = match flag {
            Some(v) => Some(v),
            None => match layered.as_deref() {
                Some("none") | None => None,
                Some(s) => Some(parse_value(key, s)?),
            },
        };
        let shown = val.as_ref().map_or_else(|| "none".to_string(), |v| v.to_string());
        self.resolved.insert(key.to_string(), shown);
        Ok(val)
    }

    /// Overrides the recorded value for a key, for settings whose effective
    /// value is computed after resolution (an auto-selected step size, say).
    pub fn put(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Rejects leftover (unknown) config keys and hands back the resolved
    /// map for the manifest.
    pub fn finish(self) -> Result<BTreeMap<String, String>, Failure> {
        if let Some(key) = self.file.keys().next() {
            return Err(Failure::Usage(format!("unknown config key '{key}'")));
        }
        Ok(self.resolved)
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T, Failure> {
    raw.parse::<T>().map_err(|_| Failure::Usage(format!("config key '{key}': cannot parse value '{raw}'")))
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure::Usage(format!("{}:{}: expected 'key = value'", path.display(), lineno + 1)));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Failure::Usage(format!("{}:{}: empty key", path.display(), lineno + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Failure::Usage(format!("{}:{}: duplicate key '{key}'", path.display(), lineno + 1)));
        }
    }
    Ok(map)
}

/// Validates `--preset`. Only `paper` exists; commands without one pass an
/// empty table.
pub(crate) fn preset_entries(
    flag: &Option<String>,
    paper: &'static [(&'static str, &'static str)],
) -> Result<&'static [(&'static str, &'static str)], Failure> {
    match flag.as_deref() {
        None => Ok(&[]),
        Some("paper") => {
            if paper.is_empty() {
                Err(Failure::Usage("this command has no 'paper' preset".to_string()))
            } else {
                Ok(paper)
            }
        }
        Some(other) => Err(Failure::Usage(format!("unknown preset '{other}' (expected 'paper')"))),
    }
}
