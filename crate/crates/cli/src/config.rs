//! Experiment configuration: one TOML file, every key optional, overlaid on
//! the defaults and then on `--set key=value` flags.

use std::path::{Path, PathBuf};

use forge_core::aligner::AlignerConfig;
use forge_core::corpus::PreprocessConfig;
use forge_core::generator::GeneratorConfig;
use forge_core::mtl::MtlConfig;
use forge_core::rl::RlConfig;
use forge_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub alignments: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Copied into every component seed.
    pub seed: u64,
    pub paths: Paths,
    pub aligner_corpus: PreprocessConfig,
    pub generator_corpus: PreprocessConfig,
    pub aligner: AlignerConfig,
    pub generator: GeneratorConfig,
    pub mtl: MtlConfig,
    pub rl: RlConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            paths: Paths::default(),
            aligner_corpus: PreprocessConfig::aligner(),
            generator_corpus: PreprocessConfig::generator(),
            aligner: AlignerConfig::default(),
            generator: GeneratorConfig::default(),
            mtl: MtlConfig::default(),
            rl: RlConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// `a.b.c=value` as a nested table; the value is read as TOML and falls
/// back to a bare string.
fn assignment(text: &str) -> Result<toml::Value> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got {text:?}")))?;
    let parsed: toml::Table = toml::from_str(&format!("v = {raw}"))
        .unwrap_or_else(|_| toml::Table::from_iter([("v".to_string(), toml::Value::String(raw.to_string()))]));
    let mut value = parsed["v"].clone();
    for part in key.trim().rsplit('.') {
        if part.is_empty() {
            return Err(Error::Config(format!("empty key segment in {key:?}")));
        }
        value = toml::Value::Table(toml::Table::from_iter([(part.to_string(), value)]));
    }
    Ok(value)
}

impl ExperimentConfig {
    /// Defaults, then the file, then each `key=value` in order.
    pub fn load(file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(ExperimentConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, toml::Value::Table(table));
        }
        for s in sets {
            merge(&mut value, assignment(s)?);
        }
        let mut config: ExperimentConfig = value.try_into().map_err(|e| Error::Config(e.to_string()))?;
        config.apply_seed();
        config.validate()?;
        Ok(config)
    }

    fn apply_seed(&mut self) {
        self.aligner.seed = self.seed;
        self.generator.seed = self.seed;
        self.rl.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.aligner.validate()?;
        self.generator.validate()?;
        self.mtl.validate()?;
        self.rl.validate()?;
        for (name, pc) in [("aligner_corpus", &self.aligner_corpus), ("generator_corpus", &self.generator_corpus)] {
            if pc.caps.input < 8 || pc.caps.output < 8 {
                return Err(Error::Config(format!("{name} vocabulary caps must be at least 8")));
            }
        }
        for (name, p) in [
            ("paths.corpus", &self.paths.corpus),
            ("paths.alignments", &self.paths.alignments),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("{name} {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        crate::manifest::hex(&Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlays_apply_in_order() {
        let c = ExperimentConfig::load(
            None,
            &["generator.epochs=3".into(), "seed=9".into(), "generator.epochs=4".into()],
        )
        .unwrap();
        assert_eq!(c.generator.epochs, 4);
        assert_eq!(c.rl.seed, 9);
        assert_eq!(c.generator.dropout, 0.3);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(ExperimentConfig::load(None, &["generator.dropout=1.5".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["generator.nonsense=1".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["noequals".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.rl.kappa = 0.5;
        assert_ne!(a.hash(), b.hash());
    }
}
