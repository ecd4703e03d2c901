//! Flat `key = value` configuration files with `#` comments.
//!
//! Precedence is defaults < file < command-line flags. Unknown keys are a
//! hard error so typos never pass silently; keys belonging to other
//! subcommands of the same pipeline are accepted and ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// Every key any subcommand understands: training and model parameters
/// plus file paths. The per-subcommand help listings are checked against
/// this registry by a test.
pub const CONFIG_KEYS: &[&str] = &[
    // TrainConfig fields
    "seed",
    "lambda",
    "tau",
    "epochs",
    "batch_size",
    "max_lr",
    "mode",
    "dataset_fraction",
    "cost_kind",
    "eval_every",
    "max_new",
    // ModelConfig fields
    "vocab_size",
    "context_len",
    "d_model",
    "n_heads",
    "n_layers",
    // data and tooling parameters
    "n_items",
    "merges",
    "student_tokenizer",
    "lambdas",
    "sizes",
    "reps",
    "exact_cap",
    "trials",
    "n",
    "split",
    // paths
    "corpus",
    "teacher_ckpt",
    "teacher_vocab",
    "teacher_merges",
    "student_ckpt",
    "student_vocab",
    "student_merges",
    "student_init",
    "probe",
    "reference",
    "out_dir",
];

/// Parsed key/value pairs from one configuration file.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn empty() -> Self {
        Settings::default()
    }

    /// Parses a config file; unknown keys and malformed lines are errors.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("reading config {path:?}: {e}")))?;
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "config {path:?} line {}: expected `key = value`, got {raw:?}",
                    i + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !CONFIG_KEYS.contains(&key) {
                return Err(CliError::config(format!(
                    "config {path:?} line {}: unknown key {key:?}",
                    i + 1
                )));
            }
            values.insert(String::from(key), String::from(value));
        }
        Ok(Settings { values })
    }

    /// Resolves one value: flag beats file beats default.
    pub fn resolve<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw.parse().map_err(|e| {
                CliError::config(format!("config key {key} = {raw:?}: {e}"))
            }),
            None => Ok(default),
        }
    }

    /// Resolves an optional value with no default.
    pub fn resolve_opt<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::config(format!("config key {key} = {raw:?}: {e}"))),
            None => Ok(None),
        }
    }

    /// A path that must be present (flag or file).
    pub fn require_path(&self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        self.resolve_opt(key, flag)?
            .ok_or_else(|| CliError::config(format!("missing required path: {key}")))
    }

    /// The output directory: flag beats file beats the `ULD_OUT`
    /// environment variable beats `out`.
    pub fn out_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        if let Some(dir) = flag {
            return dir;
        }
        if let Some(raw) = self.values.get("out_dir") {
            return PathBuf::from(raw);
        }
        match std::env::var("ULD_OUT") {
            Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from("out"),
        }
    }
}

/// Comma-separated list parser for flags like `--lambdas 0,0.5,1`.
pub fn parse_list<T>(raw: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| CliError::config(format!("{what} entry {s:?}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(content: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file
    }

    #[test]
    fn parses_and_resolves_with_precedence() {
        let file = write_config("# a comment\nseed = 9\nlambda = 2.5\n");
        let settings = Settings::from_file(file.path()).unwrap();
        // file beats default
        assert_eq!(settings.resolve("seed", None::<u64>, 1).unwrap(), 9);
        // flag beats file
        assert_eq!(settings.resolve("seed", Some(4u64), 1).unwrap(), 4);
        // default when absent everywhere
        assert_eq!(settings.resolve("epochs", None::<usize>, 5).unwrap(), 5);
    }

    #[test]
    fn unknown_key_is_a_hard_error() {
        let file = write_config("sead = 9\n");
        let err = Settings::from_file(file.path()).unwrap_err();
        assert!(format!("{err}").contains("unknown key"));
    }

    #[test]
    fn malformed_line_is_an_error() {
        let file = write_config("seed 9\n");
        assert!(Settings::from_file(file.path()).is_err());
    }

    #[test]
    fn bad_value_reports_the_key() {
        let file = write_config("seed = notanumber\n");
        let settings = Settings::from_file(file.path()).unwrap();
        let err = settings.resolve("seed", None::<u64>, 1).unwrap_err();
        assert!(format!("{err}").contains("seed"));
    }

    #[test]
    fn out_dir_precedence_uses_environment() {
        let settings = Settings::empty();
        std::env::set_var("ULD_OUT", "/tmp/uld-test-out");
        assert_eq!(
            settings.out_dir(None),
            PathBuf::from("/tmp/uld-test-out")
        );
        assert_eq!(
            settings.out_dir(Some(PathBuf::from("explicit"))),
            PathBuf::from("explicit")
        );
        std::env::remove_var("ULD_OUT");
    }

    #[test]
    fn list_parser_handles_spaces() {
        let parsed: Vec<f64> = parse_list("0, 0.5 ,1.5", "lambdas").unwrap();
        assert_eq!(parsed, vec![0.0, 0.5, 1.5]);
        assert!(parse_list::<f64>("0,x", "lambdas").is_err());
    }
}
