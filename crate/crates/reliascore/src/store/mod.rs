//! Run manifests and split dumps: how model outputs reach the engine.
//!
//! A run manifest is a TOML file naming the model, its group, its class
//! count and the dumps for each dataset role:
//!
//! ```toml
//! schema_version = 1
//! model_id = "resnet-a"
//! group = "baseline"
//! num_classes = 3
//! model = "model.json"            # optional toy model, enables ODIN and attacks
//!
//! [[splits]]
//! role = "id_val"
//! path = "id_val.hre"
//! features = "id_val.features.hre"  # optional raw inputs
//!
//! [[splits]]
//! role = "adv_id"
//! path = "adv.hre"
//! derived_from = { role = "id_test", cap = 128, seed = 0 }
//! ```
//!
//! Relative paths resolve against the manifest's directory.

mod dump;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use reliascore_core::runtime::ToyModel;
use reliascore_core::sampling::sample_indices;
use serde::{Deserialize, Serialize};

pub use dump::{write_split, DecodeError, SplitDump, HEADER_LEN, MAGIC};

use crate::{formats, Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Dataset role of a split.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Role {
    IdVal,
    IdTest,
    /// Distribution-shifted split, e.g. `ds_val`.
    Shift(String),
    /// Out-of-distribution split, e.g. `ood_noise`.
    Ood(String),
    /// Adversarially perturbed ID samples.
    AdvId,
}

impl Role {
    fn tag_ok(tag: &str) -> bool {
        !tag.is_empty() && tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    }

    /// The part after `ds_`/`ood_`, or the full role name.
    pub fn tag(&self) -> String {
        match self {
            Role::Shift(t) | Role::Ood(t) => t.clone(),
            other => other.to_string(),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::IdVal => f.write_str("id_val"),
            Role::IdTest => f.write_str("id_test"),
            Role::Shift(t) => write!(f, "ds_{t}"),
            Role::Ood(t) => write!(f, "ood_{t}"),
            Role::AdvId => f.write_str("adv_id"),
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Role> {
        let role = match s {
            "id_val" => Role::IdVal,
            "id_test" => Role::IdTest,
            "adv_id" => Role::AdvId,
            _ => match (s.strip_prefix("ds_"), s.strip_prefix("ood_")) {
                (Some(t), _) if Role::tag_ok(t) => Role::Shift(t.into()),
                (_, Some(t)) if Role::tag_ok(t) => Role::Ood(t.into()),
                _ => {
                    return Err(Error::Value(format!(
                        "unknown split role `{s}` (expected id_val, id_test, ds_<tag>, ood_<tag> or adv_id)"
                    )))
                }
            },
        };
        Ok(role)
    }
}

impl TryFrom<String> for Role {
    type Error = Error;

    fn try_from(s: String) -> Result<Role> {
        s.parse()
    }
}

impl From<Role> for String {
    fn from(r: Role) -> String {
        r.to_string()
    }
}

/// Records that a split (normally `adv_id`) was built from a seeded subset
/// of another split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Derivation {
    pub role: Role,
    pub cap: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub role: Role,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_from: Option<Derivation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub model_id: String,
    pub group: String,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub splits: Vec<SplitEntry>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Value(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::write(path, e))
    }
}

/// A split's logits plus, when available, its raw input features.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSplit {
    pub role: Role,
    pub logits: SplitDump,
    pub features: Option<SplitDump>,
}

impl LoadedSplit {
    pub fn is_unlabeled(&self) -> bool {
        self.logits.is_unlabeled()
    }
}

/// A fully loaded and validated run. Shift and OOD splits are sorted by
/// tag, so manifest order never affects scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub manifest_path: PathBuf,
    pub model_id: String,
    pub group: String,
    pub num_classes: usize,
    pub id_val: LoadedSplit,
    pub id_test: LoadedSplit,
    pub shifts: Vec<LoadedSplit>,
    pub ood: Vec<LoadedSplit>,
    pub adv: Option<LoadedSplit>,
    /// How `adv` was drawn from a clean split, when the manifest says.
    pub adv_derivation: Option<Derivation>,
    pub model: Option<ToyModel>,
}

impl ModelRun {
    /// Number of distribution-shift splits.
    pub fn num_shifts(&self) -> usize {
        self.shifts.len()
    }

    pub fn num_ood(&self) -> usize {
        self.ood.len()
    }

    pub fn split(&self, role: &Role) -> Option<&LoadedSplit> {
        match role {
            Role::IdVal => Some(&self.id_val),
            Role::IdTest => Some(&self.id_test),
            Role::AdvId => self.adv.as_ref(),
            Role::Shift(_) => self.shifts.iter().find(|s| &s.role == role),
            Role::Ood(_) => self.ood.iter().find(|s| &s.role == role),
        }
    }
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_entry(base: &Path, entry: &SplitEntry, num_classes: usize) -> Result<LoadedSplit> {
    let path = resolve(base, &entry.path);
    let logits = SplitDump::read_logits(&path)?;
    if logits.cols() != num_classes {
        return Err(Error::ShapeMismatch(format!(
            "{}: split `{}` has K={} but the manifest declares num_classes={}",
            path.display(),
            entry.role,
            logits.cols(),
            num_classes
        )));
    }
    let labeled = !matches!(entry.role, Role::Ood(_));
    if labeled && logits.has_unlabeled() {
        return Err(Error::Value(format!(
            "{}: split `{}` must be fully labeled",
            path.display(),
            entry.role
        )));
    }
    let features = match &entry.features {
        None => None,
        Some(f) => {
            let fpath = resolve(base, f);
            let feats = SplitDump::read(&fpath)?;
            if feats.rows() != logits.rows() || feats.labels() != logits.labels() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: features do not pair with the logits of `{}`",
                    fpath.display(),
                    entry.role
                )));
            }
            Some(feats)
        }
    };
    Ok(LoadedSplit {
        role: entry.role.clone(),
        logits,
        features,
    })
}

/// Loads a run manifest and every dump it references, checking all dump and
/// manifest invariants.
pub fn load_run(manifest_path: &Path) -> Result<ModelRun> {
    let manifest = RunManifest::read(manifest_path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::parse(
            manifest_path,
            format!("unsupported schema_version {}", manifest.schema_version),
        ));
    }
    let id = &manifest.model_id;
    if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']) || id.chars().any(char::is_control) {
        return Err(Error::parse(manifest_path, format!("model_id `{id}` is not usable as a file name")));
    }
    if manifest.num_classes == 0 {
        return Err(Error::parse(manifest_path, "num_classes must be positive"));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let k = manifest.num_classes;

    let mut seen = std::collections::BTreeSet::new();
    for s in &manifest.splits {
        if !seen.insert(s.role.clone()) {
            return Err(Error::Value(format!("split role `{}` listed twice", s.role)));
        }
    }
    let find = |role: Role| manifest.splits.iter().find(move |s| s.role == role);
    let required = |role: Role| -> Result<LoadedSplit> {
        let entry = find(role.clone()).ok_or_else(|| Error::MissingSplit(role.to_string()))?;
        load_entry(base, entry, k)
    };
    let id_val = required(Role::IdVal)?;
    let id_test = required(Role::IdTest)?;

    let mut shifts = Vec::new();
    let mut ood = Vec::new();
    for entry in &manifest.splits {
        match entry.role {
            Role::Shift(_) => shifts.push(load_entry(base, entry, k)?),
            Role::Ood(_) => ood.push(load_entry(base, entry, k)?),
            _ => {}
        }
    }
    if shifts.is_empty() {
        return Err(Error::MissingSplit("ds_<tag>".into()));
    }
    if ood.is_empty() {
        return Err(Error::MissingSplit("ood_<tag>".into()));
    }
    shifts.sort_by(|a, b| a.role.cmp(&b.role));
    ood.sort_by(|a, b| a.role.cmp(&b.role));

    let adv_derivation = find(Role::AdvId).and_then(|e| e.derived_from.clone());
    let adv = match find(Role::AdvId) {
        None => None,
        Some(entry) => {
            let split = load_entry(base, entry, k)?;
            if let Some(d) = &entry.derived_from {
                let source = match d.role {
                    Role::IdTest => &id_test,
                    Role::IdVal => &id_val,
                    ref other => {
                        return Err(Error::Value(format!("adv_id cannot be derived from `{other}`")));
                    }
                };
                let idx = sample_indices(source.logits.rows(), d.cap.max(1), d.seed);
                let expected: Vec<i32> = idx.iter().map(|&i| source.logits.labels()[i]).collect();
                if split.logits.labels() != expected.as_slice() {
                    return Err(Error::ShapeMismatch(format!(
                        "adv_id does not match the {}-sample subset of `{}` (seed {})",
                        d.cap, d.role, d.seed
                    )));
                }
            }
            Some(split)
        }
    };

    let model = match &manifest.model {
        None => None,
        Some(p) => {
            let model = formats::read_toy_model(&resolve(base, p))?;
            if model.num_classes() != k {
                return Err(Error::ShapeMismatch(format!(
                    "model has {} classes, manifest {}",
                    model.num_classes(),
                    k
                )));
            }
            let splits = [&id_val, &id_test]
                .into_iter()
                .chain(&shifts)
                .chain(&ood)
                .chain(adv.as_ref());
            for s in splits {
                if let Some(f) = &s.features {
                    if f.cols() != model.input_dim() {
                        return Err(Error::ShapeMismatch(format!(
                            "features of `{}` have width {}, model expects {}",
                            s.role,
                            f.cols(),
                            model.input_dim()
                        )));
                    }
                }
            }
            Some(model)
        }
    };

    Ok(ModelRun {
        manifest_path: manifest_path.to_path_buf(),
        model_id: manifest.model_id,
        group: manifest.group,
        num_classes: k,
        id_val,
        id_test,
        shifts,
        ood,
        adv,
        adv_derivation,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_names_round_trip() {
        for s in ["id_val", "id_test", "adv_id", "ds_c1", "ood_gaussian-noise"] {
            assert_eq!(s.parse::<Role>().unwrap().to_string(), s);
        }
        for bad in ["ds_", "ood_", "train", "ds_a b"] {
            assert!(bad.parse::<Role>().is_err(), "{bad}");
        }
        assert_eq!("ds_val".parse::<Role>().unwrap(), Role::Shift("val".into()));
    }
}
