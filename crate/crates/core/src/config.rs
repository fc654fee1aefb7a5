//! Flat key-value run configuration (TOML), with per-key overrides.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::classify::{KernelChoice, MlpParams, SvmParams};
use crate::error::{Error, Result};
use crate::pda::{FitOptions, LambdaChoice, Mode};
use crate::signal::{ClassSpec, Label};

/// Smoothing parameter: chosen by GCV or fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSetting {
    Auto,
    Fixed(f64),
}

impl Serialize for LambdaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LambdaSetting::Auto => s.serialize_str("auto"),
            LambdaSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(LambdaSetting::Fixed(v)),
            Raw::Text(t) if t == "auto" => Ok(LambdaSetting::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "lambda must be \"auto\" or a number, got \"{t}\""
            ))),
        }
    }
}

/// Which parameterizations to fit and classify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSetting {
    Constant,
    Varying,
    Both,
}

impl ModeSetting {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            ModeSetting::Constant => vec![Mode::Constant],
            ModeSetting::Varying => vec![Mode::TimeVarying],
            ModeSetting::Both => vec![Mode::Constant, Mode::TimeVarying],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Svm,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    // fitting
    pub knot_spacing: f64,
    pub window: f64,
    pub lambda: LambdaSetting,
    pub mode: ModeSetting,
    pub max_iter: usize,
    pub tol: f64,
    pub fpca_components: usize,
    // classification
    pub classifier: ClassifierKind,
    pub nn_baseline: bool,
    pub svm_kernel: KernelKind,
    /// Unset means `1 / feature dimension`.
    pub svm_gamma: Option<f64>,
    pub svm_c: f64,
    pub svm_tol: f64,
    pub mlp_lr: f64,
    pub mlp_epochs: usize,
    pub folds: usize,
    pub seed: u64,
    pub file_id: String,
    // transient responses
    pub response_duration: f64,
    pub response_points: usize,
    // simulation
    pub sample_rate: f64,
    pub n_normal: usize,
    pub n_abnormal: usize,
    pub noise_sd: f64,
    pub normal_w1: [f64; 2],
    pub normal_w0: [f64; 2],
    pub abnormal_w1: [f64; 2],
    pub abnormal_w0: [f64; 2],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let normal = ClassSpec::normal(200);
        let abnormal = ClassSpec::abnormal(200);
        PipelineConfig {
            knot_spacing: 0.012,
            window: 0.2,
            lambda: LambdaSetting::Auto,
            mode: ModeSetting::Constant,
            max_iter: 50,
            tol: 1e-6,
            fpca_components: 4,
            classifier: ClassifierKind::Svm,
            nn_baseline: false,
            svm_kernel: KernelKind::Rbf,
            svm_gamma: None,
            svm_c: 1.0,
            svm_tol: 1e-3,
            mlp_lr: 0.5,
            mlp_epochs: 2000,
            folds: 5,
            seed: 0,
            file_id: "synthetic".to_string(),
            response_duration: 1.0,
            response_points: 201,
            sample_rate: 360.0,
            n_normal: normal.count,
            n_abnormal: abnormal.count,
            noise_sd: normal.noise_sd,
            normal_w1: [normal.w1_range.0, normal.w1_range.1],
            normal_w0: [normal.w0_range.0, normal.w0_range.1],
            abnormal_w1: [abnormal.w1_range.0, abnormal.w1_range.1],
            abnormal_w0: [abnormal.w0_range.0, abnormal.w0_range.1],
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

/// Every config key with a one-line description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("knot_spacing", "B-spline knot spacing in seconds"),
    ("window", "beat window in seconds"),
    (
        "lambda",
        "smoothing parameter: auto or a non-negative number",
    ),
    ("mode", "constant, varying or both"),
    ("max_iter", "maximum fitting iterations"),
    ("tol", "relative convergence tolerance"),
    (
        "fpca_components",
        "principal components per coefficient curve",
    ),
    ("classifier", "svm or mlp"),
    ("nn_baseline", "also evaluate the Fourier network"),
    ("svm_kernel", "linear or rbf"),
    ("svm_gamma", "RBF width (default 1 / feature count)"),
    ("svm_c", "SVM box constraint"),
    ("svm_tol", "SVM stopping tolerance"),
    ("mlp_lr", "network learning rate"),
    ("mlp_epochs", "network training epochs"),
    ("folds", "cross-validation folds"),
    ("seed", "random seed"),
    ("file_id", "label for the metrics table"),
    ("response_duration", "transient response horizon in seconds"),
    ("response_points", "samples per transient response"),
    ("sample_rate", "simulated sample rate in Hz"),
    ("n_normal", "simulated normal beats"),
    ("n_abnormal", "simulated abnormal beats"),
    ("noise_sd", "simulated noise standard deviation"),
    ("normal_w1", "normal damping range, e.g. [1.5, 3.5]"),
    ("normal_w0", "normal stiffness range"),
    ("abnormal_w1", "abnormal damping range"),
    ("abnormal_w0", "abnormal stiffness range"),
];

/// Parses a command-line value as a TOML scalar or array, else as a string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl PipelineConfig {
    /// Reads an optional config file, then applies `key = value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = crate::io::read_text(p)?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::parse(p.display().to_string(), e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            table.insert(key.replace('-', "_"), parse_value(raw));
        }
        let config: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::parse("config", e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        positive("knot_spacing", self.knot_spacing)?;
        positive("window", self.window)?;
        if self.knot_spacing > self.window {
            return Err(Error::invalid(format!(
                "knot_spacing {} exceeds the window {}",
                self.knot_spacing, self.window
            )));
        }
        if let LambdaSetting::Fixed(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::invalid(format!(
                    "lambda must be non-negative, got {l}"
                )));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        positive("tol", self.tol)?;
        if self.fpca_components == 0 {
            return Err(Error::invalid("fpca_components must be at least 1"));
        }
        if let Some(g) = self.svm_gamma {
            positive("svm_gamma", g)?;
        }
        positive("svm_c", self.svm_c)?;
        positive("svm_tol", self.svm_tol)?;
        positive("mlp_lr", self.mlp_lr)?;
        if self.folds < 2 {
            return Err(Error::invalid(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        positive("response_duration", self.response_duration)?;
        if self.response_points < 2 {
            return Err(Error::invalid("response_points must be at least 2"));
        }
        positive("sample_rate", self.sample_rate)?;
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::invalid(format!(
                "noise_sd must be non-negative, got {}",
                self.noise_sd
            )));
        }
        for c in self.class_specs() {
            c.validate()?;
        }
        Ok(())
    }

    pub fn fit_options(&self, mode: Mode) -> FitOptions {
        FitOptions {
            mode,
            lambda: match self.lambda {
                LambdaSetting::Auto => LambdaChoice::default(),
                LambdaSetting::Fixed(v) => LambdaChoice::Fixed(v),
            },
            max_iter: self.max_iter,
            tol: self.tol,
            ..FitOptions::default()
        }
    }

    pub fn svm_params(&self) -> SvmParams {
        SvmParams {
            kernel: match self.svm_kernel {
                KernelKind::Linear => KernelChoice::Linear,
                KernelKind::Rbf => KernelChoice::Rbf {
                    gamma: self.svm_gamma,
                },
            },
            c: self.svm_c,
            tol: self.svm_tol,
            seed: self.seed,
        }
    }

    pub fn mlp_params(&self) -> MlpParams {
        MlpParams {
            learning_rate: self.mlp_lr,
            epochs: self.mlp_epochs,
            seed: self.seed,
        }
    }

    pub fn class_specs(&self) -> [ClassSpec; 2] {
        let spec = |label, count, w1: [f64; 2], w0: [f64; 2]| ClassSpec {
            label,
            count,
            w1_range: (w1[0], w1[1]),
            w0_range: (w0[0], w0[1]),
            noise_sd: self.noise_sd,
            x0: 1.0,
            v0: 0.0,
        };
        [
            spec(Label::Normal, self.n_normal, self.normal_w1, self.normal_w0),
            spec(
                Label::Abnormal,
                self.n_abnormal,
                self.abnormal_w1,
                self.abnormal_w0,
            ),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        let text = c.to_toml();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), c);
        assert!(text.contains("lambda = \"auto\""));
        assert_eq!(c.hash(), PipelineConfig::from_toml(&text).unwrap().hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = PipelineConfig::from_toml("seed = 9\nlambda = 1e-6\nmode = \"both\"\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.lambda, LambdaSetting::Fixed(1e-6));
        assert_eq!(c.mode, ModeSetting::Both);
        assert_eq!(c.knot_spacing, 0.012);
        let c = PipelineConfig::from_toml("lambda = 0").unwrap();
        assert_eq!(c.lambda, LambdaSetting::Fixed(0.0));
    }

    #[test]
    fn unknown_and_bad_keys_rejected() {
        assert!(PipelineConfig::from_toml("knots = 3").is_err());
        assert!(PipelineConfig::from_toml("lambda = \"gcv\"").is_err());
        assert!(PipelineConfig::from_toml("folds = 1").is_err());
        assert!(PipelineConfig::from_toml("knot_spacing = -0.1").is_err());
        assert!(PipelineConfig::from_toml("normal_w1 = [-1.0, 2.0]").is_err());
    }

    #[test]
    fn overrides_apply_over_file() {
        let dir = std::env::temp_dir().join(format!("odeclass-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        std::fs::write(&path, "seed = 1\nfolds = 3\n").unwrap();
        let over = vec![
            ("seed".to_string(), "7".to_string()),
            ("mode".to_string(), "varying".to_string()),
            ("file-id".to_string(), "rec100".to_string()),
            ("normal_w0".to_string(), "[9000.0, 9500.0]".to_string()),
        ];
        let c = PipelineConfig::load(Some(&path), &over).unwrap();
        assert_eq!((c.seed, c.folds), (7, 3));
        assert_eq!(c.mode, ModeSetting::Varying);
        assert_eq!(c.file_id, "rec100");
        assert_eq!(c.normal_w0, [9000.0, 9500.0]);
        let bad = vec![("bogus".to_string(), "1".to_string())];
        assert!(PipelineConfig::load(Some(&path), &bad).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn key_list_covers_every_field() {
        let mut listed: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
        let config = PipelineConfig {
            svm_gamma: Some(0.5),
            ..PipelineConfig::default()
        };
        let table: toml::Table = toml::from_str(&config.to_toml()).unwrap();
        let mut fields: Vec<&str> = table.keys().map(String::as_str).collect();
        listed.sort_unstable();
        fields.sort_unstable();
        assert_eq!(listed, fields);
    }
}
