//! Effective run parameters: config-file values overlaid with command-line
//! flags, with every value actually used recorded for the run manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cdnmf_core::kv::KvBlock;

use crate::error::CliError;

pub type Overrides = Vec<(&'static str, Option<String>)>;

#[derive(Debug, Default)]
pub struct Settings {
    given: BTreeMap<String, String>,
    effective: KvBlock,
}

impl Settings {
    pub fn load(config: Option<&Path>, overrides: Overrides) -> Result<Self, CliError> {
        let mut given = BTreeMap::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            let kv = KvBlock::parse(&text)
                .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
            given = kv.to_map();
        }
        for (key, value) in overrides {
            if let Some(v) = value {
                given.insert(key.to_string(), v);
            }
        }
        Ok(Settings {
            given,
            effective: KvBlock::new(),
        })
    }

    #[cfg(test)]
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Settings {
            given: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            effective: KvBlock::new(),
        }
    }

    pub fn has(&self, key: &str) -> bool {
        self.given.contains_key(key)
    }

    /// Supplies a value for `key` unless the config or a flag already did.
    pub fn default_to(&mut self, key: &str, value: impl Display) {
        self.given
            .entry(key.to_string())
            .or_insert_with(|| value.to_string());
    }

    fn record(&mut self, key: &str, value: &str) {
        self.effective.set(key, value);
    }

    pub fn get<T>(&mut self, key: &str, default: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.given.get(key).cloned() {
            Some(raw) => {
                let v = raw.trim().parse::<T>().map_err(|e| {
                    CliError::usage(format!("invalid value for {key}: {raw:?} ({e})"))
                })?;
                self.record(key, raw.trim());
                Ok(v)
            }
            None => match default {
                Some(v) => {
                    self.record(key, &v.to_string());
                    Ok(v)
                }
                None => Err(CliError::usage(format!("missing required setting {key}"))),
            },
        }
    }

    pub fn string(&mut self, key: &str, default: Option<&str>) -> Result<String, CliError> {
        self.get(key, default.map(str::to_string))
    }

    /// A path that must already exist.
    pub fn input_path(&mut self, key: &str) -> Result<PathBuf, CliError> {
        let path = PathBuf::from(self.string(key, None)?);
        if !path.exists() {
            return Err(CliError::usage(format!(
                "{key}: {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    pub fn output_path(
        &mut self,
        key: &str,
        default: Option<PathBuf>,
    ) -> Result<PathBuf, CliError> {
        let default = default.map(|p| p.to_string_lossy().into_owned());
        Ok(PathBuf::from(self.string(key, default.as_deref())?))
    }

    pub fn list<T>(&mut self, key: &str, default: Option<&str>) -> Result<Vec<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.string(key, default)?;
        let values = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| CliError::usage(format!("invalid entry {s:?} in {key} ({e})")))
            })
            .collect::<Result<Vec<T>, _>>()?;
        if values.is_empty() {
            return Err(CliError::usage(format!(
                "{key} must list at least one value"
            )));
        }
        Ok(values)
    }

    pub fn ratio(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        let v: f64 = self.get(key, Some(default))?;
        if !(v > 0.0 && v < 1.0) {
            return Err(CliError::usage(format!(
                "{key} must lie in (0, 1), got {v}"
            )));
        }
        Ok(v)
    }

    pub fn report_dir(&mut self) -> Result<PathBuf, CliError> {
        let dir = self.output_path("report_dir", Some(PathBuf::from("reports")))?;
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    /// The manifest for `command`: every effective parameter as key=value.
    pub fn manifest(&self, command: &str) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.set("command", command);
        for (k, v) in self.effective.entries() {
            kv.set(k, v);
        }
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_and_defaults_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "# comment\nk=10\nalpha=0.3\n").unwrap();
        let mut s =
            Settings::load(Some(&cfg), vec![("k", Some("52".into())), ("beta", None)]).unwrap();
        assert_eq!(s.get::<usize>("k", None).unwrap(), 52);
        assert_eq!(s.get::<f64>("alpha", Some(0.1)).unwrap(), 0.3);
        assert_eq!(s.get::<f64>("beta", Some(0.05)).unwrap(), 0.05);
        let m = s.manifest("train");
        assert_eq!(m.get("command"), Some("train"));
        assert_eq!(m.get("k"), Some("52"));
        assert_eq!(m.get("beta"), Some("0.05"));
    }

    #[test]
    fn errors_name_the_field() {
        let mut s = Settings::from_pairs(&[("k", "many"), ("ratio", "1.5"), ("k_values", "1,x")]);
        let err = s.get::<usize>("k", None).unwrap_err();
        assert_eq!(err.code, 1);
        assert!(err.message.contains("k"));
        assert!(s.ratio("ratio", 0.7).unwrap_err().message.contains("ratio"));
        assert!(s
            .list::<usize>("k_values", None)
            .unwrap_err()
            .message
            .contains("k_values"));
        assert!(s.string("logs", None).unwrap_err().message.contains("logs"));
    }

    #[test]
    fn lists_parse_comma_separated_values() {
        let mut s = Settings::from_pairs(&[("alpha_values", "0.01, 0.07,0.3")]);
        assert_eq!(
            s.list::<f64>("alpha_values", None).unwrap(),
            vec![0.01, 0.07, 0.3]
        );
    }
}
