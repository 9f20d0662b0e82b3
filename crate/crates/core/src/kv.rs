//! Line-oriented `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown and repeated
//! keys are errors. Every config type echoes its fully resolved values with
//! [`KvConfig::to_text`], which parses back to an identical config.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{MunitError, Result};

pub trait KvConfig: Default {
    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    fn pairs(&self) -> Vec<(&'static str, String)>;

    /// Checks cross-field invariants after parsing.
    fn validate(&self) -> Result<()> {
        Ok(())
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                MunitError::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(MunitError::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| MunitError::Config(format!("line {}: {}", lineno + 1, strip_prefix(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MunitError::io(path, e))?;
        Self::from_text(&text)
    }

    fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

fn strip_prefix(e: MunitError) -> String {
    match e {
        MunitError::Config(msg) => msg,
        other => other.to_string(),
    }
}

pub fn parse_value<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| MunitError::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

/// Implements [`KvConfig::set`] and [`KvConfig::pairs`] for a struct whose
/// listed fields all implement `FromStr + Display`.
#[macro_export]
macro_rules! kv_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $ty {
            fn kv_set(&mut self, key: &str, value: &str) -> $crate::Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = $crate::kv::parse_value(key, value)?;
                        Ok(())
                    })*
                    _ => Err($crate::MunitError::Config(format!("unknown key `{key}`"))),
                }
            }

            fn kv_pairs(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.to_string())),*]
            }
        }
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, PartialEq)]
    struct Demo {
        steps: usize,
        lr: f64,
        name: String,
    }

    kv_fields!(Demo { steps, lr, name });

    impl KvConfig for Demo {
        fn set(&mut self, key: &str, value: &str) -> Result<()> {
            self.kv_set(key, value)
        }

        fn pairs(&self) -> Vec<(&'static str, String)> {
            self.kv_pairs()
        }
    }

    #[test]
    fn parse_and_echo_round_trip() {
        let cfg = Demo::from_text("# comment\nsteps = 10\n\nlr=0.0001\nname=a b\n").unwrap();
        assert_eq!(
            cfg,
            Demo {
                steps: 10,
                lr: 1e-4,
                name: "a b".into()
            }
        );
        assert_eq!(Demo::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        let e = Demo::from_text("stepz=1").unwrap_err().to_string();
        assert!(e.contains("unknown key `stepz`"), "{e}");
        assert!(Demo::from_text("steps=1\nsteps=2").is_err());
        assert!(Demo::from_text("steps").is_err());
        let e = Demo::from_text("steps=-1").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }
}
