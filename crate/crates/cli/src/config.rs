//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cellxai::augment::AugmentConfig;
use cellxai::explain::{ExplainParams, SlicParams, DEFAULT_KERNEL_WIDTH, DEFAULT_RIDGE_ALPHA, DEFAULT_SAMPLES, DEFAULT_TOP_K};
use cellxai::imagestore::LabelRule;
use cellxai::model::ReferenceNetConfig;
use cellxai::sampling::{DEFAULT_FOLDS, DEFAULT_REPORT_FOLD};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub n_segments: usize,
    pub compactness: f64,
    pub iterations: usize,
    pub kernel_width: f64,
    pub alpha: f64,
    pub top_k: usize,
    pub positive_only: bool,
}

impl Default for LimeConfig {
    fn default() -> Self {
        let slic = SlicParams::default();
        Self {
            n_samples: DEFAULT_SAMPLES,
            n_segments: slic.n_segments,
            compactness: slic.compactness,
            iterations: slic.iterations,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            alpha: DEFAULT_RIDGE_ALPHA,
            top_k: DEFAULT_TOP_K,
            positive_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Directory name to class label; the nearest named ancestor wins.
    pub labels: BTreeMap<String, u8>,
    pub seed: u64,
    pub k: usize,
    pub report_fold: usize,
    pub holdout_fraction: f64,
    /// Augmented copies added per training image; 0 disables augmentation.
    pub augment_copies: usize,
    pub augment: AugmentConfig,
    pub reference: ReferenceNetConfig,
    pub lime: LimeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: None,
            out_dir: None,
            model: None,
            labels: LabelRule::default().names().clone(),
            seed: 0,
            k: DEFAULT_FOLDS,
            report_fold: DEFAULT_REPORT_FOLD,
            holdout_fraction: 0.0,
            augment_copies: 1,
            augment: AugmentConfig::default(),
            reference: ReferenceNetConfig::default(),
            lime: LimeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
                toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", p.display()))
            }
        }
    }

    /// Pushes the run seed into every seeded component.
    pub fn propagate_seed(&mut self) {
        self.augment.seed = self.seed;
        self.reference.seed = self.seed;
    }

    pub fn label_rule(&self) -> Result<LabelRule, String> {
        LabelRule::new(self.labels.iter().map(|(k, &v)| (k, v))).map_err(|e| e.to_string())
    }

    pub fn explain_params(&self) -> ExplainParams {
        ExplainParams {
            slic: SlicParams {
                n_segments: self.lime.n_segments,
                compactness: self.lime.compactness,
                iterations: self.lime.iterations,
            },
            n_samples: self.lime.n_samples,
            kernel_width: self.lime.kernel_width,
            alpha: self.lime.alpha,
            ..ExplainParams::with_seed(self.seed)
        }
    }

    /// SHA-256 of the canonical JSON form, paths excluded so that relocating
    /// inputs or outputs does not change the digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.data_root = None;
        c.out_dir = None;
        c.model = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let d = Sha256::digest(json.as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn metadata(&self) -> Metadata {
        Metadata {
            seed: self.seed,
            config_digest: self.digest(),
            version: VERSION.to_string(),
        }
    }
}

/// Provenance triple stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub config_digest: String,
    pub version: String,
}

impl Metadata {
    pub fn png_text(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("config_digest", self.config_digest.clone()),
            ("version", self.version.clone()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let c = RunConfig::default();
        assert_eq!((c.k, c.report_fold), (3, 1));
        assert_eq!((c.reference.epochs, c.reference.batch_size), (35, 32));
    }

    #[test]
    fn toml_overrides_defaults() {
        let c: RunConfig = toml::from_str("seed = 9\nk = 4\n[reference]\nepochs = 3\n[lime]\nn_samples = 50\n").unwrap();
        assert_eq!((c.seed, c.k, c.reference.epochs, c.lime.n_samples), (9, 4, 3, 50));
        assert_eq!(c.reference.batch_size, 32);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }

    #[test]
    fn label_table_replaces_default_rule() {
        let c: RunConfig = toml::from_str("[labels]\nblast = 1\nhealthy = 0\n").unwrap();
        let rule = c.label_rule().unwrap();
        assert_eq!(rule.label_for(Path::new("x/Blast/a.bmp")), Some(1));
        assert_eq!(rule.label_for(Path::new("all/a.bmp")), None);
        let bad: RunConfig = toml::from_str("[labels]\nblast = 2\n").unwrap();
        assert!(bad.label_rule().is_err());
    }

    #[test]
    fn digest_ignores_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out_dir = Some("/elsewhere".into());
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
