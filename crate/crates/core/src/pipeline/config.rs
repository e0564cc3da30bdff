use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gcn::GcnConfig;
use crate::learners::{LearnerKind, TrainConfig};
use crate::merge::{MergeConfig, MergeLaplacian};

/// Grid for `alpha` used by `sweep` when no values are given.
pub const ALPHA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
/// Grid for `k`.
pub const K_GRID: [f64; 8] = [1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 50.0, 100.0];

/// One candidate graph: trained by a learner, read from an `.adj` file, or
/// the dataset's own graph.
///
/// In JSON a view is `"gat"`, `"observed"`, `"import:<path>"`,
/// `{"kind": "gat", "train": {...}}` or `{"import": "<path>"}`.
#[derive(Clone, Debug, PartialEq)]
pub enum ViewSpec {
    Learn { kind: LearnerKind, train: TrainConfig },
    Import { path: PathBuf },
    Observed,
}

impl ViewSpec {
    pub fn learn(kind: LearnerKind) -> Self {
        ViewSpec::Learn {
            kind,
            train: TrainConfig::default(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ViewSpec::Learn { kind, .. } => kind.name().to_string(),
            ViewSpec::Import { path } => format!("import:{}", path.display()),
            ViewSpec::Observed => "observed".into(),
        }
    }

    fn from_value(v: Value) -> std::result::Result<Self, String> {
        match v {
            Value::String(s) => {
                if s == "observed" {
                    Ok(ViewSpec::Observed)
                } else if let Some(path) = s.strip_prefix("import:") {
                    Ok(ViewSpec::Import { path: path.into() })
                } else {
                    s.parse::<LearnerKind>()
                        .map(ViewSpec::learn)
                        .map_err(|e| e.to_string())
                }
            }
            Value::Object(mut map) => {
                if let Some(path) = map.remove("import") {
                    if !map.is_empty() {
                        return Err("an import view takes no other fields".into());
                    }
                    let path = path.as_str().ok_or("import path must be a string")?;
                    return Ok(ViewSpec::Import { path: path.into() });
                }
                let kind = map.remove("kind").ok_or("view object needs \"kind\" or \"import\"")?;
                let kind = kind
                    .as_str()
                    .ok_or("view kind must be a string")?
                    .parse::<LearnerKind>()
                    .map_err(|e| e.to_string())?;
                let train = match map.remove("train") {
                    Some(t) => serde_json::from_value(t).map_err(|e| format!("view {kind}: {e}"))?,
                    None => TrainConfig::default(),
                };
                if let Some(key) = map.keys().next() {
                    return Err(format!("unknown view field {key:?}"));
                }
                Ok(ViewSpec::Learn { kind, train })
            }
            other => Err(format!("a view must be a string or an object, got {other}")),
        }
    }
}

impl fmt::Display for ViewSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for ViewSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ViewSpec::Learn { kind, train } => {
                #[derive(Serialize)]
                struct Learn<'a> {
                    kind: LearnerKind,
                    train: &'a TrainConfig,
                }
                Learn { kind: *kind, train }.serialize(s)
            }
            other => s.serialize_str(&other.label()),
        }
    }
}

impl<'de> Deserialize<'de> for ViewSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        ViewSpec::from_value(Value::deserialize(d)?).map_err(D::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeSettings {
    pub alpha: f64,
    /// Subspace dimension; `None` means ten times the class count.
    pub p: Option<usize>,
    pub k: usize,
    pub laplacian: MergeLaplacian,
}

impl Default for MergeSettings {
    fn default() -> Self {
        let m = MergeConfig::for_classes(1);
        Self {
            alpha: m.alpha,
            p: None,
            k: m.k,
            laplacian: m.laplacian,
        }
    }
}

impl MergeSettings {
    pub fn resolve(&self, num_classes: usize) -> MergeConfig {
        MergeConfig {
            alpha: self.alpha,
            p: self.p.unwrap_or(10 * num_classes),
            k: self.k,
            laplacian: self.laplacian,
        }
    }
}

/// Extra classifiers trained next to the merged graph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Baselines {
    /// GCN on the mean of the views' normalized adjacencies.
    pub average: bool,
    /// One GCN per view, combined by averaged and by maximal probabilities.
    pub ensemble: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    /// Scale every feature row to sum one before any training.
    pub row_normalize: bool,
    pub views: Vec<ViewSpec>,
    pub merge: MergeSettings,
    pub gcn: GcnConfig,
    pub repetitions: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub baselines: Baselines,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            row_normalize: true,
            views: LearnerKind::ALL.into_iter().map(ViewSpec::learn).collect(),
            merge: MergeSettings::default(),
            gcn: GcnConfig::default(),
            repetitions: 5,
            seed: 0,
            output: PathBuf::from("out"),
            baselines: Baselines::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Config("at least one view is required".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if !(self.merge.alpha >= 0.0 && self.merge.alpha.is_finite()) || self.merge.k == 0 || self.merge.p == Some(0) {
            return Err(Error::Config("merge needs alpha >= 0, k >= 1 and p >= 1".into()));
        }
        self.gcn.validate()?;
        for v in &self.views {
            if let ViewSpec::Learn { train, .. } = v {
                train.validate()?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_value(v)
    }

    pub fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a JSON file and applies `key=value` overrides in order.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets the leaf named by a dotted path, for example `merge.alpha=0.4` or
/// `views.1.train.epochs=50`. The value is parsed as JSON and falls back to
/// a plain string. Missing object keys are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("override {key:?}: {part:?} is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("override {key:?}: index {idx} out of {len}")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("override {key:?}: {part:?} is not inside an object"))),
        };
    }
    Err(Error::Config("empty override key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn views_accept_every_form() {
        let cfg = PipelineConfig::from_json(
            r#"{"views": ["gat", "observed", "import:a.adj", {"import": "b.adj"},
                          {"kind": "progcn", "train": {"epochs": 3}}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.views[0], ViewSpec::learn(LearnerKind::Gat));
        assert_eq!(cfg.views[1], ViewSpec::Observed);
        assert_eq!(cfg.views[2], ViewSpec::Import { path: "a.adj".into() });
        assert_eq!(cfg.views[3], ViewSpec::Import { path: "b.adj".into() });
        match &cfg.views[4] {
            ViewSpec::Learn { kind, train } => {
                assert_eq!(*kind, LearnerKind::Progcn);
                assert_eq!(train.epochs, 3);
            }
            other => panic!("{other:?}"),
        }
        let back = PipelineConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"views": ["knn"]}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"views": [{"kind": "gat", "lr": 1}]}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"merge": {"beta": 1}}"#).is_err());
        let empty = PipelineConfig::from_json(r#"{"views": []}"#).unwrap();
        assert!(empty.validate().is_err());
        let zero = PipelineConfig::from_json(r#"{"repetitions": 0}"#).unwrap();
        assert!(zero.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let mut v = serde_json::to_value(PipelineConfig::default()).unwrap();
        apply_override(&mut v, "merge.alpha=0.7").unwrap();
        apply_override(&mut v, "merge.p=12").unwrap();
        apply_override(&mut v, "views.1.train.epochs=9").unwrap();
        apply_override(&mut v, "dataset=some/dir").unwrap();
        let cfg = PipelineConfig::from_value(v.clone()).unwrap();
        assert_eq!(cfg.merge.alpha, 0.7);
        assert_eq!(cfg.merge.p, Some(12));
        assert_eq!(cfg.dataset, PathBuf::from("some/dir"));
        match &cfg.views[1] {
            ViewSpec::Learn { train, .. } => assert_eq!(train.epochs, 9),
            other => panic!("{other:?}"),
        }
        assert!(apply_override(&mut v, "views.9.kind=gat").is_err());
        assert!(apply_override(&mut v, "merge.alpha.x=1").is_err());
        assert!(apply_override(&mut v, "noequals").is_err());
    }

    #[test]
    fn merge_p_defaults_to_ten_per_class() {
        let m = MergeSettings::default().resolve(7);
        assert_eq!(m.p, 70);
        assert_eq!(m.k, 30);
        assert_eq!(m.alpha, 0.4);
    }
}
