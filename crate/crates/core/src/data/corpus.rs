use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generate::{generate_scene, mix_seed};
use super::profile::DatasetProfile;
use super::scene::HierScene;
use crate::error::{AimsError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_EVAL_FRACTION: f64 = 0.1;

/// Scenes of one profile, split into training and held-out evaluation sets.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSplit {
    pub profile: DatasetProfile,
    pub train: Vec<HierScene>,
    pub eval: Vec<HierScene>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    profile: DatasetProfile,
    train: Vec<String>,
    eval: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    seed: u64,
    profiles: Vec<ManifestEntry>,
}

/// In-memory multi-profile corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    seed: u64,
    splits: Vec<ProfileSplit>,
}

impl Corpus {
    /// Generates `counts[i]` scenes for `profiles[i]`; the last `round(count · eval_fraction)`
    /// scenes of each profile form its evaluation split.
    pub fn build(profiles: &[DatasetProfile], counts: &[usize], seed: u64, eval_fraction: f64) -> Result<Corpus> {
        if profiles.len() != counts.len() {
            return Err(AimsError::Config(format!(
                "{} profiles but {} counts",
                profiles.len(),
                counts.len()
            )));
        }
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(AimsError::Config(format!("eval fraction {eval_fraction} outside [0, 1)")));
        }
        let mut splits = Vec::with_capacity(profiles.len());
        for (pi, (profile, &count)) in profiles.iter().zip(counts).enumerate() {
            if count == 0 {
                return Err(AimsError::Config(format!("profile {} has count 0", profile.name)));
            }
            profile.check_feasible()?;
            let n_eval = ((count as f64 * eval_fraction).round() as usize).min(count - 1);
            let mut scenes = (0..count)
                .map(|i| generate_scene(profile, mix_seed(&[seed, pi as u64, i as u64])))
                .collect::<Result<Vec<_>>>()?;
            let eval = scenes.split_off(count - n_eval);
            splits.push(ProfileSplit { profile: profile.clone(), train: scenes, eval });
        }
        Ok(Corpus { seed, splits })
    }

    pub fn from_splits(seed: u64, splits: Vec<ProfileSplit>) -> Corpus {
        Corpus { seed, splits }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn splits(&self) -> &[ProfileSplit] {
        &self.splits
    }

    pub fn split(&self, profile: &str) -> Option<&ProfileSplit> {
        self.splits.iter().find(|s| s.profile.name == profile)
    }

    pub fn len(&self) -> usize {
        self.splits.iter().map(|s| s.train.len() + s.eval.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `manifest.json` and `<profile>/{train,eval}/NNNNN.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut entries = Vec::new();
        for split in &self.splits {
            let mut entry = ManifestEntry { profile: split.profile.clone(), train: vec![], eval: vec![] };
            for (part, scenes, names) in
                [("train", &split.train, &mut entry.train), ("eval", &split.eval, &mut entry.eval)]
            {
                let sub = dir.join(&split.profile.name).join(part);
                fs::create_dir_all(&sub).map_err(|e| AimsError::io(&sub, e))?;
                for (i, scene) in scenes.iter().enumerate() {
                    let rel = format!("{}/{part}/{i:05}.json", split.profile.name);
                    let path = dir.join(&rel);
                    let text = serde_json::to_string(scene).map_err(|e| AimsError::json(&path, e))?;
                    fs::write(&path, text).map_err(|e| AimsError::io(&path, e))?;
                    names.push(rel);
                }
            }
            entries.push(entry);
        }
        let manifest = Manifest { format_version: 1, seed: self.seed, profiles: entries };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| AimsError::json(&path, e))?;
        fs::write(&path, text).map_err(|e| AimsError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Corpus> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| AimsError::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| AimsError::json(&path, e))?;
        if manifest.format_version != 1 {
            return Err(AimsError::Config(format!(
                "{}: unsupported corpus format version {}",
                path.display(),
                manifest.format_version
            )));
        }
        let load = |names: &[String]| -> Result<Vec<HierScene>> {
            names
                .iter()
                .map(|rel| {
                    let path: PathBuf = dir.join(rel);
                    let text = fs::read_to_string(&path).map_err(|e| AimsError::io(&path, e))?;
                    serde_json::from_str(&text).map_err(|e| AimsError::json(&path, e))
                })
                .collect()
        };
        let splits = manifest
            .profiles
            .into_iter()
            .map(|e| Ok(ProfileSplit { train: load(&e.train)?, eval: load(&e.eval)?, profile: e.profile }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus { seed: manifest.seed, splits })
    }
}
