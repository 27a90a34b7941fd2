//! JSON configuration and the run manifest.
//!
//! A config document is merged over the serialized defaults, so any subset
//! of keys may be given. Keys that do not exist in the defaults are errors.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{IceError, Result};
use crate::simbench::ExperimentConfig;

/// Dotted paths of keys in `user` that have no counterpart in `reference`.
pub fn unknown_keys(user: &Value, reference: &Value) -> Vec<String> {
    let mut out = Vec::new();
    walk(user, reference, "", &mut out);
    out
}

fn walk(user: &Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(u), Value::Object(r)) = (user, reference) {
        for (k, v) in u {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match r.get(k) {
                Some(rv) => walk(v, rv, &path, out),
                None => out.push(path),
            }
        }
    }
}

fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(bv) => merge(bv, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, u) => *b = u,
    }
}

/// Parse a config document, or a manifest previously written by `ice bench`.
pub fn resolve(text: &str) -> Result<ExperimentConfig> {
    let mut user: Value = serde_json::from_str(text).map_err(|e| IceError::Config(format!("invalid JSON: {e}")))?;
    if let Value::Object(m) = &user {
        if m.contains_key("digest") && m.contains_key("config") {
            user = m["config"].clone();
        }
    }
    if !user.is_object() {
        return Err(IceError::Config("the configuration must be a JSON object".into()));
    }
    let mut merged = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
    let unknown = unknown_keys(&user, &merged);
    if !unknown.is_empty() {
        return Err(IceError::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    merge(&mut merged, user);
    let cfg: ExperimentConfig = serde_json::from_value(merged).map_err(|e| IceError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Lowercase hex SHA-256 of the canonical JSON of `value`.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Digest of the resolved configuration alone.
    pub digest: String,
    pub version: String,
    pub seed: u64,
    pub timestamp: String,
    /// Resolved configuration, including every solver setting.
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            digest: digest_of(config),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config: config.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(resolve("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn nested_partial_override_keeps_section_defaults() {
        let cfg = resolve(r#"{"trials": 3, "ogive": {"tau": 0.2}}"#).unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.ogive.tau, 0.2);
        assert_eq!(cfg.ogive.max_iter, 4000);
        assert_eq!(cfg.ogice.max_iter, 5000);
    }

    #[test]
    fn all_unknown_keys_are_listed() {
        let err = resolve(r#"{"trails": 3, "ogice": {"stepmu": 1, "tol": 1e-4}, "fica": {"x": 0}}"#).unwrap_err();
        let msg = err.to_string();
        for key in ["trails", "ogice.stepmu", "fica.x"] {
            assert!(msg.contains(key), "{msg}");
        }
        assert!(!msg.contains("ogice.tol"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(resolve(r#"{"trials": 0}"#).is_err());
        assert!(resolve(r#"{"algorithms": ["ogice-x"]}"#).is_err());
        assert!(resolve("[1, 2]").is_err());
        assert!(resolve("{").is_err());
    }

    #[test]
    fn manifest_round_trips_as_config() {
        let cfg = resolve(r#"{"trials": 2, "seed": 9}"#).unwrap();
        let m = RunManifest::new(&cfg);
        let again = resolve(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(digest_of(&again), m.digest);
        assert_eq!(m.digest.len(), 64);
    }

    #[test]
    fn digest_tracks_the_config() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: a.seed + 1, ..a.clone() };
        assert_eq!(digest_of(&a), digest_of(&a.clone()));
        assert_ne!(digest_of(&a), digest_of(&b));
    }
}
