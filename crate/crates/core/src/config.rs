//! The single JSON document that configures a run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::ExperimentConfig;
use crate::model::ModelConfig;
use crate::scene::DataConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    /// Parse, default and validate a JSON document. An empty (or
    /// whitespace-only) document yields the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let text = if text.trim().is_empty() { "{}" } else { text };
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::field(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.experiment.validate()?;
        if self.model.image_channels != self.data.channels {
            return Err(Error::field("model.image_channels", "must equal data.channels"));
        }
        self.model
            .check_resolution(self.data.width, self.data.height)
            .map_err(|e| Error::field("data.width", e.to_string()))
    }

    /// Compact JSON with object keys in sorted order.
    pub fn canonical_json(&self) -> Result<String> {
        // serde_json's Map is ordered by key, so a round trip through Value
        // sorts every object
        let v = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&v)?)
    }

    /// Hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(text: &str) -> String {
        match RunConfig::from_json(text).unwrap_err() {
            Error::Field { field, .. } => field,
            e => panic!("expected a field error, got {e}"),
        }
    }

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::from_json(" {} ").unwrap(), RunConfig::default());
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(r#"{"train": {"lr": -1}}"#), "train.lr");
        assert_eq!(field_of(r#"{"train": {"lr": "fast"}}"#), "train.lr");
        assert_eq!(field_of(r#"{"train": {"speed": 1}}"#), "train.speed");
        assert_eq!(field_of(r#"{"bogus": 1}"#), "bogus");
        assert_eq!(field_of(r#"{"data": {"width": 30}}"#), "data.width");
        assert_eq!(field_of(r#"{"experiment": {"probe": {"hidden": 0}}}"#), "experiment.probe.hidden");
    }

    #[test]
    fn hash_ignores_key_order_and_tracks_values() {
        let a = RunConfig::from_json(r#"{"train": {"lr": 0.001, "seed": 3}, "data": {"width": 32}}"#).unwrap();
        let b = RunConfig::from_json(r#"{"data": {"width": 32}, "train": {"seed": 3, "lr": 0.001}}"#).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
        assert_ne!(a.hash().unwrap(), RunConfig::default().hash().unwrap());
    }

    #[test]
    fn canonical_json_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.canonical_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = RunConfig::load(Path::new("/nonexistent/run.json")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
