//! JSON run configuration.
//!
//! ```json
//! {
//!   "interactions": "listens.tsv",
//!   "variants": [
//!     {"name": "MusiCNN", "embeddings": "emb/musicnn.pare"},
//!     {"name": "Random", "random_dim": 64}
//!   ],
//!   "split": {"boundary": "2020-02-20", "train_days": 365, "holdout_days": 30},
//!   "models": ["knn", "shallow", "seqrec"],
//!   "k": 50,
//!   "seed": 0,
//!   "output_dir": "runs/demo"
//! }
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! `seed` drives the user halves, model initialization, sampling and the
//! bootstrap; it overrides the `seed` fields of the model sections.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DEFAULT_RESAMPLES;
use crate::ingest::Delimiter;
use crate::seqrec::SeqConfig;
use crate::shallow::ShallowConfig;
use crate::split::{SplitConfig, DAY, DEFAULT_BOUNDARY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn,
    Shallow,
    Seqrec,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Knn, ModelKind::Shallow, ModelKind::Seqrec];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::Shallow => "shallow",
            ModelKind::Seqrec => "seqrec",
        }
    }

    /// Section heading used in rendered reports.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Knn => "KNN",
            ModelKind::Shallow => "Shallow Net",
            ModelKind::Seqrec => "BERT4Rec",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        ModelKind::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Either a `YYYY-MM-DD` / RFC 3339 string or unix seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Boundary {
    Timestamp(i64),
    Date(String),
}

impl Boundary {
    pub fn resolve(&self) -> Result<i64> {
        match self {
            Boundary::Timestamp(t) => Ok(*t),
            Boundary::Date(s) => {
                if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
                    return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
                }
                DateTime::parse_from_rfc3339(s)
                    .map(|d| d.timestamp())
                    .map_err(|e| Error::Config(format!("split.boundary `{s}`: {e}")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub boundary: Boundary,
    pub train_days: i64,
    pub holdout_days: i64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            boundary: Boundary::Timestamp(DEFAULT_BOUNDARY),
            train_days: 365,
            holdout_days: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    /// PARE file, or CSV with an `item_id` column followed by the vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Random variant: knn gets a seeded random table of this width, the
    /// trained models learn item embeddings from scratch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_dim: Option<usize>,
}

impl VariantSpec {
    pub fn is_random(&self) -> bool {
        self.embeddings.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub interactions: PathBuf,
    /// Defaults to the interactions file extension (`.csv` or TSV otherwise).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Delimiter>,
    pub variants: Vec<VariantSpec>,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub shallow: ShallowConfig,
    #[serde(default)]
    pub seqrec: SeqConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

fn default_k() -> usize {
    50
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid run config: {e}")))
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.interactions);
        fix(&mut self.output_dir);
        for v in &mut self.variants {
            if let Some(p) = v.embeddings.as_mut() {
                fix(p);
            }
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn format(&self) -> Delimiter {
        self.format.unwrap_or_else(|| Delimiter::from_path(&self.interactions))
    }

    pub fn split_config(&self) -> Result<SplitConfig> {
        let cfg = SplitConfig {
            boundary: self.split.boundary.resolve()?,
            train_window: self.split.train_days.checked_mul(DAY).ok_or_else(|| Error::Config("split.train_days overflows".into()))?,
            holdout_window: self
                .split
                .holdout_days
                .checked_mul(DAY)
                .ok_or_else(|| Error::Config("split.holdout_days overflows".into()))?,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn shallow_config(&self) -> ShallowConfig {
        ShallowConfig { seed: self.seed, ..self.shallow.clone() }
    }

    pub fn seqrec_config(&self) -> SeqConfig {
        SeqConfig { seed: self.seed, ..self.seqrec.clone() }
    }

    /// Checks values and that referenced input files exist.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant is required".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::Config("bootstrap_resamples must be at least 1".into()));
        }
        let mut names = BTreeSet::new();
        for v in &self.variants {
            if v.name.is_empty() || v.name.contains(['/', '\\', ',']) || v.name.contains("__") {
                return Err(Error::Config(format!("variant name `{}` must be non-empty without `/`, `\\`, `,` or `__`", v.name)));
            }
            if !names.insert(v.name.to_lowercase()) {
                return Err(Error::Config(format!("duplicate variant name `{}`", v.name)));
            }
            match (&v.embeddings, v.random_dim) {
                (Some(p), None) => {
                    if !p.is_file() {
                        return Err(Error::Config(format!("variant `{}`: {} does not exist", v.name, p.display())));
                    }
                }
                (None, Some(d)) if d > 0 => {}
                _ => {
                    return Err(Error::Config(format!(
                        "variant `{}` needs exactly one of `embeddings` or a positive `random_dim`",
                        v.name
                    )))
                }
            }
        }
        let mut seen = BTreeSet::new();
        if let Some(m) = self.models.iter().find(|m| !seen.insert(**m)) {
            return Err(Error::Config(format!("model `{m}` listed twice")));
        }
        if !self.interactions.is_file() {
            return Err(Error::Config(format!("interactions file {} does not exist", self.interactions.display())));
        }
        self.split_config()?;
        self.shallow.validate()?;
        self.seqrec.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn date_boundary() {
        assert_eq!(Boundary::Date("2020-02-20".into()).resolve().unwrap(), DEFAULT_BOUNDARY);
        assert_eq!(Boundary::Date("2020-02-20T00:00:00Z".into()).resolve().unwrap(), DEFAULT_BOUNDARY);
        assert!(Boundary::Date("20 Feb".into()).resolve().is_err());
    }

    #[test]
    fn defaults_follow_reference_constants() {
        let cfg = RunConfig::from_json(r#"{"interactions": "x.tsv", "variants": [{"name": "Random", "random_dim": 8}]}"#).unwrap();
        assert_eq!(cfg.k, 50);
        assert_eq!(cfg.models, ModelKind::ALL.to_vec());
        assert_eq!(cfg.shallow.n_neg, 20);
        assert_eq!(cfg.shallow.epochs, 100);
        assert_eq!(cfg.seqrec.epochs, 200);
        assert_eq!(cfg.seqrec.max_len, 300);
        assert_eq!(cfg.split_config().unwrap(), SplitConfig::default());
    }

    #[test]
    fn relative_paths_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("log.tsv"), "user_id\titem_id\ttimestamp\n").unwrap();
        let text = r#"{"interactions": "log.tsv", "variants": [{"name": "A", "embeddings": "missing.pare"}]}"#;
        std::fs::write(dir.path().join("run.json"), text).unwrap();
        let cfg = RunConfig::load(dir.path().join("run.json")).unwrap();
        assert_eq!(cfg.interactions, dir.path().join("log.tsv"));
        assert!(cfg.validate().unwrap_err().to_string().contains("missing.pare"));
    }

    #[test]
    fn rejects_bad_variants() {
        let base = r#"{"interactions": "x.tsv", "variants": VARS}"#;
        for vars in [
            r#"[{"name": "A", "random_dim": 4}, {"name": "a", "random_dim": 4}]"#,
            r#"[{"name": "A"}]"#,
            r#"[{"name": "A", "random_dim": 0}]"#,
            r#"[{"name": "a/b", "random_dim": 4}]"#,
        ] {
            let cfg = RunConfig::from_json(&base.replace("VARS", vars)).unwrap();
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{vars}");
        }
        assert!(RunConfig::from_json(r#"{"interactions": "x", "variants": [], "bogus": 1}"#).is_err());
    }
}
