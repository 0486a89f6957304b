//! `key = value` config files. Entries are spliced into argv as flags the user
//! did not pass explicitly, so clap does all validation and flags always win.

use std::path::Path;

use clap::{ArgAction, ArgMatches, Command};

/// Splices config entries into `args` (program name and subcommand first).
pub fn merge_config_file(cmd: &Command, args: Vec<String>, text: &str) -> Result<Vec<String>, String> {
    let Some(sub_name) = args.get(1) else {
        return Ok(args);
    };
    let Some(sub) = cmd.find_subcommand(sub_name) else {
        return Ok(args);
    };
    let mut extra = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", lineno + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(format!("config line {}: nested config files are not supported", lineno + 1));
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| format!("config line {}: unknown key `{key}` for `{sub_name}`", lineno + 1))?;
        let flag = format!("--{key}");
        let given = args
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value {
                "true" | "1" | "yes" => extra.push(flag),
                "false" | "0" | "no" => {}
                _ => return Err(format!("config line {}: `{key}` expects true or false", lineno + 1)),
            },
            _ => extra.push(format!("{flag}={value}")),
        }
    }
    let mut out = args;
    out.splice(2..2, extra);
    Ok(out)
}

/// Finds `--config PATH` / `--config=PATH` in raw args.
pub fn config_path(args: &[String]) -> Option<&str> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(String::as_str);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p);
        }
    }
    None
}

pub fn read_config(path: &Path) -> std::io::Result<String> {
    std::fs::read_to_string(path)
}

/// Every argument of the chosen subcommand as `key = value` lines, defaults
/// included; the output is itself a valid config file.
pub fn resolved(sub: &Command, matches: &ArgMatches) -> String {
    let mut out = format!("# resolved config for `{}`\n", sub.get_name());
    for arg in sub.get_arguments() {
        let (Some(long), id) = (arg.get_long(), arg.get_id().as_str()) else {
            continue;
        };
        if long == "help" || long == "config" {
            continue;
        }
        let value = match matches.get_raw(id) {
            Some(vals) => vals
                .map(|v| v.to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join(","),
            None => continue,
        };
        out.push_str(&format!("{long} = {value}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{Arg, ArgAction};

    fn cmd() -> Command {
        Command::new("t").subcommand(
            Command::new("run")
                .arg(Arg::new("steps").long("steps"))
                .arg(Arg::new("fast").long("fast").action(ArgAction::SetTrue)),
        )
    }

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn flags_override_file() {
        let out = merge_config_file(&cmd(), args(&["t", "run", "--steps", "5"]), "steps = 9\nfast = true # go\n").unwrap();
        assert_eq!(out, args(&["t", "run", "--fast", "--steps", "5"]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = merge_config_file(&cmd(), args(&["t", "run"]), "\n# c\nbogus = 1\n").unwrap_err();
        assert!(err.contains("unknown key `bogus`"), "{err}");
        assert!(merge_config_file(&cmd(), args(&["t", "run"]), "steps").is_err());
    }

    #[test]
    fn finds_config_path() {
        assert_eq!(config_path(&args(&["t", "run", "--config", "a.cfg"])), Some("a.cfg"));
        assert_eq!(config_path(&args(&["t", "--config=b"])), Some("b"));
        assert_eq!(config_path(&args(&["t"])), None);
    }
}
