use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MetaSysIdConfig, Normalizer, TrainedModel};
use crate::diffnet::{read_params_file, write_params_file, MlpSpec, ParameterSet};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Text manifest written next to the `.params` files of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    pub method: String,
    pub seed: u64,
    /// Content hash of the training data.
    pub data_digest: String,
    pub spec: MlpSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_spec: Option<MlpSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfg: Option<MetaSysIdConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<Normalizer>,
    /// Parameter role (`theta`, `theta_bar`, `psi`) to file name.
    pub files: BTreeMap<String, String>,
}

impl ModelManifest {
    pub fn new(method: &str, seed: u64, data_digest: &str, spec: &MlpSpec) -> Self {
        ModelManifest {
            format_version: MANIFEST_VERSION,
            method: method.to_string(),
            seed,
            data_digest: data_digest.to_string(),
            spec: spec.clone(),
            encoder_spec: None,
            cfg: None,
            normalizer: None,
            files: BTreeMap::new(),
        }
    }
}

/// Writes `<stem>.<role>.params` for every role plus `<stem>.toml`.
pub fn save_bundle(dir: &Path, stem: &str, mut manifest: ModelManifest, params: &[(&str, &ParameterSet)]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    manifest.files.clear();
    for (role, p) in params {
        let name = format!("{stem}.{role}.params");
        write_params_file(dir.join(&name), p)?;
        manifest.files.insert(role.to_string(), name);
    }
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join(format!("{stem}.toml"));
    fs::write(&path, text)?;
    Ok(path)
}

/// Reads a manifest and all parameter files it names.
pub fn load_bundle(manifest_path: &Path) -> Result<(ModelManifest, BTreeMap<String, ParameterSet>)> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: ModelManifest = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Format(format!("unsupported manifest version {}", manifest.format_version)));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut params = BTreeMap::new();
    for (role, file) in &manifest.files {
        params.insert(role.clone(), read_params_file(dir.join(file))?);
    }
    Ok((manifest, params))
}

pub fn save_trained_model(
    dir: &Path,
    stem: &str,
    model: &TrainedModel,
    seed: u64,
    data_digest: &str,
    normalizer: Option<&Normalizer>,
) -> Result<PathBuf> {
    model.validate()?;
    let mut m = ModelManifest::new("meta_sys_id", seed, data_digest, &model.spec);
    m.cfg = Some(model.cfg.clone());
    m.normalizer = normalizer.cloned();
    save_bundle(dir, stem, m, &[("theta", &model.theta), ("theta_bar", &model.theta_bar)])
}

pub fn load_trained_model(manifest_path: &Path) -> Result<(TrainedModel, ModelManifest)> {
    let (manifest, mut params) = load_bundle(manifest_path)?;
    let mut take = |role: &str| {
        params
            .remove(role)
            .ok_or_else(|| Error::Format(format!("manifest lists no `{role}` parameters")))
    };
    let model = TrainedModel {
        spec: manifest.spec.clone(),
        theta: take("theta")?,
        theta_bar: take("theta_bar")?,
        cfg: manifest
            .cfg
            .clone()
            .ok_or_else(|| Error::Format("manifest has no training config".into()))?,
    };
    model.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{init_params, Activation};

    #[test]
    fn trained_model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MlpSpec::new(vec![1 + 4, 6, 1], Activation::Silu).unwrap();
        let model = TrainedModel {
            theta: init_params(&spec, 1),
            theta_bar: init_params(&spec, 2),
            spec,
            cfg: MetaSysIdConfig { d_c: 4, ..MetaSysIdConfig::polynomial() },
        };
        let norm = Normalizer::identity(1, 1);
        let path = save_trained_model(dir.path(), "m", &model, 7, "abc", Some(&norm)).unwrap();
        let (back, manifest) = load_trained_model(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(manifest.seed, 7);
        assert_eq!(manifest.normalizer, Some(norm));
        let text = fs::read_to_string(&path).unwrap();
        assert!(toml::from_str::<ModelManifest>(&(text + "\nbogus = 1\n")).is_err());
    }
}
