//! Flat `key=value` settings shared by flags, config files and meta records.
//!
//! Every option is declared once as a [`Key`]; the same name is the long flag
//! and the config-file key. Precedence: flag, environment, config file,
//! sibling defaults, built-in default.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};
use poold::io::KeyValues;

pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
    pub default: Option<&'static str>,
    pub env: Option<&'static str>,
}

pub const fn key(name: &'static str, help: &'static str) -> Key {
    Key {
        name,
        help,
        default: None,
        env: None,
    }
}

pub const fn keyd(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        help,
        default: Some(default),
        env: None,
    }
}

pub fn command(name: &'static str, about: &'static str, keys: &[Key]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("flat key=value file with any of the options below; flags override it"),
    );
    for k in keys {
        let mut arg = Arg::new(k.name).long(k.name).value_name("VALUE").help(k.help);
        if let Some(d) = k.default {
            arg = arg.help(format!("{} [default: {d}]", k.help));
        }
        if let Some(e) = k.env {
            arg = arg.env(e);
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

/// Resolved settings for one subcommand.
#[derive(Debug, Clone)]
pub struct Settings {
    pub command: String,
    values: KeyValues,
}

impl Settings {
    /// Merges defaults, `fallback` (lower than the file), the config file,
    /// environment and flags.
    pub fn resolve(command: &str, keys: &[Key], matches: &ArgMatches, fallback: Option<&KeyValues>) -> Result<Self> {
        let known = |name: &str| keys.iter().any(|k| k.name == name);
        let mut values = KeyValues::new();
        for k in keys {
            if let Some(d) = k.default {
                values.set(k.name, d);
            }
        }
        if let Some(fb) = fallback {
            for (k, v) in fb.iter() {
                if known(k) {
                    values.set(k, v);
                }
            }
        }
        if let Some(path) = matches.get_one::<String>("config") {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {path}"))?;
            let file = KeyValues::parse(&text).with_context(|| format!("in config file {path}"))?;
            for (k, v) in file.iter() {
                match k {
                    "command" if v != command => {
                        bail!("config file {path} is for '{v}', not '{command}'")
                    }
                    "command" | "version" => {}
                    _ if known(k) => values.set(k, v),
                    _ => bail!("config file {path}: unknown key '{k}' for '{command}'"),
                }
            }
        }
        for source in [ValueSource::EnvVariable, ValueSource::CommandLine] {
            for k in keys {
                if matches.value_source(k.name) == Some(source) {
                    if let Some(v) = matches.get_one::<String>(k.name) {
                        values.set(k.name, v);
                    }
                }
            }
        }
        // drop empty values so "key=" clears a default
        let mut cleaned = KeyValues::new();
        for (k, v) in values.iter() {
            if !v.is_empty() {
                cleaned.set(k, v);
            }
        }
        Ok(Settings {
            command: command.to_string(),
            values: cleaned,
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key)
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.get(key).is_some()
    }

    pub fn opt<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("--{key}={v}: {e}")))
            .transpose()
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.opt(key)?.ok_or_else(|| anyhow!("missing required option --{key}"))
    }

    /// Comma-separated list.
    pub fn list<T>(&self, key: &str) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<T>().map_err(|e| anyhow!("--{key}: '{s}': {e}")))
                .collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.set(key, value);
    }

    /// Meta record: loadable again with `--config`.
    pub fn meta(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("command", &self.command);
        kv.set("version", env!("CARGO_PKG_VERSION"));
        for (k, v) in self.values.iter() {
            kv.set(k, v);
        }
        kv
    }

    pub fn write_meta(&self, dir: &Path, extra: &[(&str, String)]) -> Result<()> {
        let mut kv = self.meta();
        let mut text = kv.to_text();
        if !extra.is_empty() {
            kv = KeyValues::new();
            for (k, v) in extra {
                kv.set(*k, v);
            }
            text.push_str("# results\n");
            for line in kv.to_text().lines() {
                text.push_str("# ");
                text.push_str(line);
                text.push('\n');
            }
        }
        let path = dir.join("meta.txt");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
