//! TOML configuration files.
//!
//! Top-level keys hold global flags and one table per subcommand holds that
//! subcommand's flags, keyed by long flag name:
//!
//! ```toml
//! threads = 4
//!
//! [select]
//! method = "top-km"
//! budget = 10000
//! ```
//!
//! Values become argv tokens inserted after the subcommand name, skipping
//! every flag that is already on the command line.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{anyhow, Context};
use clap::CommandFactory;

use crate::args::Cli;
use crate::error::UsageError;

/// Returns the `--config` path given on the command line, if any.
fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

struct Flag {
    long: String,
    aliases: Vec<String>,
    short: Option<char>,
}

fn flags_of(cmd: &clap::Command) -> Vec<Flag> {
    cmd.get_arguments()
        .filter_map(|a| {
            a.get_long().map(|l| Flag {
                long: l.to_string(),
                aliases: a.get_visible_aliases().unwrap_or_default().into_iter().map(String::from).collect(),
                short: a.get_short(),
            })
        })
        .collect()
}

fn on_command_line(argv: &[OsString], flag: &Flag) -> bool {
    let longs: Vec<String> = std::iter::once(&flag.long).chain(&flag.aliases).map(|l| format!("--{l}")).collect();
    argv.iter().skip(1).any(|a| {
        let s = a.to_string_lossy();
        longs.iter().any(|l| s == *l || s.strip_prefix(l.as_str()).is_some_and(|r| r.starts_with('=')))
            || flag.short.is_some_and(|c| s.starts_with(&format!("-{c}")) && !s.starts_with("--"))
    })
}

fn push_value(out: &mut Vec<OsString>, flag: &str, v: &toml::Value) -> Result<(), String> {
    match v {
        toml::Value::Boolean(true) => out.push(format!("--{flag}").into()),
        toml::Value::Boolean(false) => {}
        toml::Value::String(s) => {
            out.push(format!("--{flag}").into());
            out.push(s.into());
        }
        toml::Value::Integer(i) => {
            out.push(format!("--{flag}").into());
            out.push(i.to_string().into());
        }
        toml::Value::Float(f) => {
            out.push(format!("--{flag}").into());
            out.push(f.to_string().into());
        }
        toml::Value::Array(items) => {
            for item in items {
                if matches!(item, toml::Value::Array(_) | toml::Value::Table(_)) {
                    return Err(format!("nested value for {flag:?}"));
                }
                push_value(out, flag, item)?;
            }
        }
        toml::Value::Datetime(_) | toml::Value::Table(_) => return Err(format!("unsupported value for {flag:?}")),
    }
    Ok(())
}

fn subcommand_at(argv: &[OsString], root: &clap::Command) -> Option<usize> {
    argv.iter()
        .skip(1)
        .position(|a| root.find_subcommand(a.to_string_lossy().as_ref()).is_some())
        .map(|p| p + 1)
}

/// Rewrites `stats <path>` as `stats --corpus <path>`.
fn positional_corpus(mut argv: Vec<OsString>) -> Vec<OsString> {
    let root = Cli::command();
    let Some(pos) = subcommand_at(&argv, &root) else {
        return argv;
    };
    if argv[pos] != "stats" {
        return argv;
    }
    let sub = root.find_subcommand("stats").expect("stats exists");
    let takes_value = |name: &str| {
        root.get_arguments()
            .chain(sub.get_arguments())
            .find(|a| {
                a.get_long_and_visible_aliases().is_some_and(|l| l.contains(&name))
                    || a.get_short().is_some_and(|c| name == c.to_string())
            })
            .is_some_and(|a| a.get_action().takes_values())
    };
    let mut i = pos + 1;
    while i < argv.len() {
        let s = argv[i].to_string_lossy().to_string();
        if s == "--" {
            break;
        }
        if let Some(long) = s.strip_prefix("--") {
            if !long.contains('=') && takes_value(long) {
                i += 1;
            }
        } else if let Some(short) = s.strip_prefix('-').filter(|r| !r.is_empty()) {
            if short.len() == 1 && takes_value(short) {
                i += 1;
            }
        } else {
            argv.insert(i, "--corpus".into());
            break;
        }
        i += 1;
    }
    argv
}

/// Expands `--config` into argv tokens. Without a config file the argv is
/// returned with only the positional corpus rewritten.
pub fn merge(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let argv = positional_corpus(argv);
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;

    let root = Cli::command();
    let sub_names: Vec<String> = root.get_subcommands().map(|c| c.get_name().to_string()).collect();
    let Some(pos) = subcommand_at(&argv, &root) else {
        return Ok(argv);
    };
    let sub_name = argv[pos].to_string_lossy().to_string();
    let sub = root.find_subcommand(&sub_name).expect("known subcommand");
    let globals = flags_of(&root);
    let locals = flags_of(sub);

    let mut extra = Vec::new();
    let mut apply = |flags: &[Flag], key: &str, v: &toml::Value, section: &str| -> anyhow::Result<()> {
        let flag = flags
            .iter()
            .find(|f| f.long == key && f.long != "config" && f.long != "help" && f.long != "version")
            .ok_or_else(|| UsageError(format!("config {}: unknown key {key:?} in {section}", path.display())))?;
        if !on_command_line(&argv, flag) {
            push_value(&mut extra, key, v).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        }
        Ok(())
    };
    for (key, v) in &table {
        match v {
            toml::Value::Table(t) if sub_names.contains(key) => {
                if *key == sub_name {
                    for (k, v) in t {
                        apply(&locals, k, v, &format!("[{key}]"))?;
                    }
                }
            }
            toml::Value::Table(_) => {
                return Err(anyhow!(UsageError(format!(
                    "config {}: unknown section [{key}]",
                    path.display()
                ))))
            }
            _ => apply(&globals, key, v, "the top level")?,
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

/// Renders the resolved configuration in the same TOML layout.
pub fn render(cli: &Cli) -> anyhow::Result<String> {
    let mut top = toml::Table::try_from(&cli.global)?;
    let sub = match &cli.command {
        crate::args::Command::Stats(a) => toml::Table::try_from(a)?,
        crate::args::Command::Score(a) => toml::Table::try_from(a)?,
        crate::args::Command::Cluster(a) => toml::Table::try_from(a)?,
        crate::args::Command::Select(a) => toml::Table::try_from(a)?,
        crate::args::Command::Export(a) => toml::Table::try_from(a)?,
        crate::args::Command::Report(a) => toml::Table::try_from(a)?,
        crate::args::Command::Validate(a) => toml::Table::try_from(a)?,
    };
    top.insert(cli.command.name().to_string(), toml::Value::Table(sub));
    Ok(toml::to_string(&top)?)
}
