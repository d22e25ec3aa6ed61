//! TOML configuration for the two services. Every field is optional;
//! command-line flags take precedence.
//!
//! ```toml
//! keys_dir = "keys"
//! storage_dir = "state/ma"
//! listen = "127.0.0.1:7402"
//! csp_addr = "127.0.0.1:7401"
//! default_epsilon = 0.5
//! budget_cap = 5.0
//! window_secs = 30
//! analysts = ["extra-keys/analyst-bob"]
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CspConfig {
    pub keys_dir: Option<PathBuf>,
    pub storage_dir: Option<PathBuf>,
    pub listen: Option<String>,
    pub window_secs: Option<u64>,
    /// Public key directories of analysts outside `keys_dir`.
    #[serde(default)]
    pub analysts: Vec<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaConfig {
    pub keys_dir: Option<PathBuf>,
    pub storage_dir: Option<PathBuf>,
    pub listen: Option<String>,
    pub csp_addr: Option<String>,
    pub default_epsilon: Option<f64>,
    pub budget_cap: Option<f64>,
    pub window_secs: Option<u64>,
    #[serde(default)]
    pub analysts: Vec<PathBuf>,
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> io::Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ma_config() {
        let cfg: MaConfig = toml::from_str(
            "keys_dir = \"k\"\ncsp_addr = \"127.0.0.1:1\"\ndefault_epsilon = 0.5\nbudget_cap = 2.0\n",
        )
        .unwrap();
        assert_eq!(cfg.default_epsilon, Some(0.5));
        assert_eq!(cfg.budget_cap, Some(2.0));
        assert!(cfg.analysts.is_empty());
        assert!(toml::from_str::<MaConfig>("bogus = 1").is_err());
    }

    #[test]
    fn missing_path_gives_defaults() {
        assert_eq!(load::<CspConfig>(None).unwrap(), CspConfig::default());
    }
}
