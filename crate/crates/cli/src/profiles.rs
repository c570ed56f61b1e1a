//! Profile files for `data build`.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use aims_core::data::{standard_profiles, DatasetProfile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    #[serde(flatten)]
    pub profile: DatasetProfile,
    /// Scenes to generate; the `--count` default when absent.
    #[serde(default)]
    pub count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileFile {
    pub profiles: Vec<ProfileEntry>,
}

/// Reads `standard` or a TOML / JSON profile file into profiles and per-profile counts.
pub fn load(spec: &str, default_count: usize) -> anyhow::Result<(Vec<DatasetProfile>, Vec<usize>)> {
    if spec == "standard" {
        let profiles = standard_profiles();
        let counts = vec![default_count; profiles.len()];
        return Ok((profiles, counts));
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ProfileFile = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    if file.profiles.is_empty() {
        bail!("{} lists no profiles", path.display());
    }
    let counts = file.profiles.iter().map(|e| e.count.unwrap_or(default_count)).collect();
    Ok((file.profiles.into_iter().map(|e| e.profile).collect(), counts))
}
