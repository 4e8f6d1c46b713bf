//! Run configuration: front-end / analyticity / dropout / backend choices,
//! the canonical system-name mapping, and the flat key=value config file
//! with flag overrides.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use wavespk_core::model::{DropoutChoice, FrontendChoice};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Cosine,
    Plda,
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Cosine => "cosine",
            Backend::Plda => "plda",
        }
    }

    pub fn parse(s: &str) -> Result<Backend, CliError> {
        match s {
            "cosine" => Ok(Backend::Cosine),
            "plda" => Ok(Backend::Plda),
            other => Err(CliError::Usage(format!(
                "unknown backend '{other}' (expected cosine or plda)"
            ))),
        }
    }
}

/// A fully resolved system configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConfig {
    pub front_end: FrontendChoice,
    pub analytic: bool,
    pub dropout: DropoutChoice,
}

impl SystemConfig {
    /// Validate the combination rules: analytic is undefined for mel, and
    /// dropout applies only to the non-parametric filters.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.analytic && self.front_end == FrontendChoice::Mel {
            return Err(CliError::Usage(String::from(
                "--analytic cannot be combined with --front-end mel",
            )));
        }
        if !matches!(self.dropout, DropoutChoice::None)
            && self.front_end != FrontendChoice::Tdf
        {
            return Err(CliError::Usage(format!(
                "--dropout {} requires --front-end tdf (dropout applies to non-parametric filters)",
                self.dropout.name()
            )));
        }
        Ok(())
    }

    /// Canonical system name, e.g. "tdf+H+VD" or "mel".
    pub fn system_name(&self) -> String {
        let mut name = self.front_end.name().to_string();
        if self.analytic {
            name.push_str("+H");
        }
        match self.dropout {
            DropoutChoice::None => {}
            DropoutChoice::Bernoulli(_) => name.push_str("+BD"),
            DropoutChoice::Gaussian(_) => name.push_str("+GD"),
            DropoutChoice::Variational => name.push_str("+VD"),
        }
        name
    }

    /// Parse a canonical system name back into a configuration (dropout
    /// rates take their defaults).
    pub fn from_system_name(name: &str) -> Result<SystemConfig, CliError> {
        let mut parts = name.split('+');
        let front_end = match parts.next() {
            Some("mel") => FrontendChoice::Mel,
            Some("tdf") => FrontendChoice::Tdf,
            Some("sinc") => FrontendChoice::Sinc,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown front end in system name '{name}' ({other:?})"
                )))
            }
        };
        let mut analytic = false;
        let mut dropout = DropoutChoice::None;
        for p in parts {
            match p {
                "H" => analytic = true,
                "BD" => dropout = DropoutChoice::Bernoulli(DEFAULT_BD_P),
                "GD" => dropout = DropoutChoice::Gaussian(DEFAULT_GD_ALPHA),
                "VD" => dropout = DropoutChoice::Variational,
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown modifier '{other}' in system name '{name}'"
                    )))
                }
            }
        }
        let cfg = SystemConfig {
            front_end,
            analytic,
            dropout,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The nine canonical ablation systems.
    pub fn all_systems() -> Vec<SystemConfig> {
        ["mel", "tdf", "tdf+H", "tdf+VD", "tdf+H+VD", "tdf+H+BD", "tdf+H+GD", "sinc", "sinc+H"]
            .iter()
            .map(|n| SystemConfig::from_system_name(n).expect("canonical names are valid"))
            .collect()
    }
}

pub const DEFAULT_BD_P: f64 = 0.25;
pub const DEFAULT_GD_ALPHA: f64 = 0.25;

/// Flat key=value configuration file with a mandatory version key. Lines
/// starting with '#' are comments. Values read here act as defaults;
/// command-line flags override them.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut values = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}: line {} is not key=value",
                    path.display(),
                    i + 1
                ))
            })?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        match values.get("version").map(String::as_str) {
            Some("1") => {}
            Some(v) => {
                return Err(CliError::Usage(format!(
                    "{}: unsupported config version '{v}'",
                    path.display()
                )))
            }
            None => {
                return Err(CliError::Usage(format!(
                    "{}: config file must declare version=1",
                    path.display()
                )))
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                CliError::Usage(format!("config key '{key}' has unparsable value '{v}'"))
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_nine_system_names_round_trip() {
        let names = [
            "mel", "tdf", "tdf+H", "tdf+VD", "tdf+H+VD", "tdf+H+BD", "tdf+H+GD", "sinc",
            "sinc+H",
        ];
        for name in names {
            let cfg = SystemConfig::from_system_name(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.system_name(), name);
        }
        assert_eq!(SystemConfig::all_systems().len(), 9);
    }

    #[test]
    fn invalid_combinations_are_usage_errors() {
        assert!(SystemConfig::from_system_name("mel+H").is_err());
        assert!(SystemConfig::from_system_name("sinc+VD").is_err());
        let bad = SystemConfig {
            front_end: FrontendChoice::Mel,
            analytic: false,
            dropout: DropoutChoice::Variational,
        };
        let err = bad.validate().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(format!("{err}").contains("--front-end"));
    }

    #[test]
    fn config_file_requires_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        fs::write(&p, "front_end=tdf\n").unwrap();
        assert!(ConfigFile::load(&p).is_err());
        fs::write(&p, "version=1\n# comment\nfront_end=tdf\nepochs=12\n").unwrap();
        let cfg = ConfigFile::load(&p).unwrap();
        assert_eq!(cfg.get("front_end"), Some("tdf"));
        assert_eq!(cfg.get_parsed::<usize>("epochs").unwrap(), Some(12));
    }
}
