//! Run configuration and its canonical, hashable resolution.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dimred_sup::{DEFAULT_GDA_CAP, DEFAULT_NCA_CAP, DEFAULT_SHRINKAGE};
use crate::dimred_unsup::{DEFAULT_GPLVM_CAP, DEFAULT_ISOMAP_CAP, DEFAULT_LANDMARK_ISOMAP_CAP};
use crate::error::{Error, Result};
use crate::render::DEFAULT_STRETCH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Pca,
    Ppca,
    Gplvm,
    Isomap,
    LIsomap,
    Lda,
    Gda,
    Nca,
    Threshold,
}

impl Method {
    /// The eight dimensionality-reduction methods.
    pub const ALL8: [Method; 8] = [
        Method::Pca,
        Method::Ppca,
        Method::Gplvm,
        Method::Isomap,
        Method::LIsomap,
        Method::Lda,
        Method::Gda,
        Method::Nca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Ppca => "ppca",
            Method::Gplvm => "gplvm",
            Method::Isomap => "isomap",
            Method::LIsomap => "l-isomap",
            Method::Lda => "lda",
            Method::Gda => "gda",
            Method::Nca => "nca",
            Method::Threshold => "threshold",
        }
    }

    pub fn is_supervised(self) -> bool {
        matches!(self, Method::Lda | Method::Gda | Method::Nca)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL8
            .into_iter()
            .chain([Method::Threshold])
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Per-method knobs; unset fields take method defaults, fields a method does
/// not use are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParams {
    pub k: Option<usize>,
    pub landmarks: Option<usize>,
    /// Random landmark selection (seeded by the run seed) instead of max-min.
    pub random_landmarks: Option<bool>,
    pub largest_component: Option<bool>,
    /// Training subsample size for the capped methods.
    pub cap: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub jitter: Option<f64>,
    pub shrinkage: Option<f64>,
    /// `rbf` or `linear`.
    pub kernel: Option<String>,
    pub gamma: Option<f64>,
    pub regularization: Option<f64>,
    pub step_init: Option<f64>,
}

pub const DEFAULT_K: usize = 12;
pub const DEFAULT_LANDMARKS: usize = 300;
pub const DEFAULT_UNSUPERVISED_Q: usize = 3;

/// Method parameters with every default filled in; the canonical form that
/// enters provenance and hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum ResolvedParams {
    Pca {},
    Ppca { tol: f64, max_iter: usize },
    Gplvm { cap: usize, max_iter: usize, jitter: f64 },
    Isomap { k: usize, cap: usize, largest_component: bool },
    LIsomap { k: usize, cap: usize, landmarks: usize, random_landmarks: bool, largest_component: bool },
    Lda { shrinkage: f64 },
    Gda { cap: usize, kernel: String, gamma: Option<f64>, regularization: f64 },
    Nca { cap: usize, max_iter: usize, step_init: f64 },
    Threshold {},
}

impl MethodParams {
    pub fn resolve(&self, method: Method) -> Result<ResolvedParams> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        let at_least_one = |name: &str, v: usize| {
            if v >= 1 {
                Ok(v)
            } else {
                Err(Error::Config(format!("{name} must be at least 1")))
            }
        };
        let k = at_least_one("k", self.k.unwrap_or(DEFAULT_K))?;
        let largest_component = self.largest_component.unwrap_or(false);
        Ok(match method {
            Method::Pca => ResolvedParams::Pca {},
            Method::Ppca => ResolvedParams::Ppca {
                tol: positive("tol", self.tol.unwrap_or(1e-10))?,
                max_iter: at_least_one("max_iter", self.max_iter.unwrap_or(2000))?,
            },
            Method::Gplvm => ResolvedParams::Gplvm {
                cap: at_least_one("cap", self.cap.unwrap_or(DEFAULT_GPLVM_CAP))?,
                max_iter: self.max_iter.unwrap_or(100),
                jitter: positive("jitter", self.jitter.unwrap_or(1e-8))?,
            },
            Method::Isomap => ResolvedParams::Isomap {
                k,
                cap: at_least_one("cap", self.cap.unwrap_or(DEFAULT_ISOMAP_CAP))?,
                largest_component,
            },
            Method::LIsomap => ResolvedParams::LIsomap {
                k,
                cap: at_least_one("cap", self.cap.unwrap_or(DEFAULT_LANDMARK_ISOMAP_CAP))?,
                landmarks: at_least_one("landmarks", self.landmarks.unwrap_or(DEFAULT_LANDMARKS))?,
                random_landmarks: self.random_landmarks.unwrap_or(false),
                largest_component,
            },
            Method::Lda => {
                let s = self.shrinkage.unwrap_or(DEFAULT_SHRINKAGE);
                if !(s >= 0.0) {
                    return Err(Error::Config(format!("shrinkage must be non-negative, got {s}")));
                }
                ResolvedParams::Lda { shrinkage: s }
            }
            Method::Gda => {
                let kernel = self.kernel.clone().unwrap_or_else(|| "rbf".into());
                if kernel != "rbf" && kernel != "linear" {
                    return Err(Error::Config(format!("unknown GDA kernel {kernel:?}")));
                }
                let gamma = match (&*kernel, self.gamma) {
                    ("rbf", Some(g)) => Some(positive("gamma", g)?),
                    _ => None,
                };
                ResolvedParams::Gda {
                    cap: at_least_one("cap", self.cap.unwrap_or(DEFAULT_GDA_CAP))?,
                    kernel,
                    gamma,
                    regularization: positive("regularization", self.regularization.unwrap_or(1e-3))?,
                }
            }
            Method::Nca => ResolvedParams::Nca {
                cap: at_least_one("cap", self.cap.unwrap_or(DEFAULT_NCA_CAP))?,
                max_iter: self.max_iter.unwrap_or(200),
                step_init: positive("step_init", self.step_init.unwrap_or(0.1))?,
            },
            Method::Threshold => ResolvedParams::Threshold {},
        })
    }
}

fn default_classes() -> Vec<u8> {
    vec![1, 2]
}

fn default_score_classes() -> [u8; 2] {
    [1, 2]
}

fn default_stretch() -> [f64; 2] {
    DEFAULT_STRETCH
}

fn default_bit_depth() -> u8 {
    8
}

/// Everything that determines an enhancement of an already-loaded page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhanceSpec {
    pub method: Method,
    #[serde(default)]
    pub q: Option<usize>,
    #[serde(default)]
    pub params: MethodParams,
    #[serde(default)]
    pub seed: u64,
    /// Band subset (indices into the manifest order).
    #[serde(default)]
    pub bands: Option<Vec<usize>>,
    /// Classes the supervised methods train on.
    #[serde(default = "default_classes")]
    pub train_classes: Vec<u8>,
    /// Classes scored by the Fisher criterion.
    #[serde(default = "default_score_classes")]
    pub score_classes: [u8; 2],
    /// Embedding components shown as gray or R, G, B; defaults to the first up to three.
    #[serde(default)]
    pub components: Option<Vec<usize>>,
    #[serde(default = "default_stretch")]
    pub stretch: [f64; 2],
    #[serde(default)]
    pub invert: bool,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: u8,
    /// Threshold source: a band index, or an image path (CLI only).
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub t1: Option<f64>,
    #[serde(default)]
    pub t2: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

impl EnhanceSpec {
    pub fn new(method: Method) -> Self {
        EnhanceSpec {
            method,
            q: None,
            params: MethodParams::default(),
            seed: 0,
            bands: None,
            train_classes: default_classes(),
            score_classes: default_score_classes(),
            components: None,
            stretch: DEFAULT_STRETCH,
            invert: false,
            bit_depth: 8,
            source: None,
            t1: None,
            t2: None,
            alpha: None,
        }
    }

    /// Checks that do not need the page.
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.bit_depth, 8 | 16) {
            return Err(Error::Config(format!("bit depth must be 8 or 16, got {}", self.bit_depth)));
        }
        let [lo, hi] = self.stretch;
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(Error::Config(format!("stretch ({lo}, {hi}) must satisfy 0 ≤ lo < hi ≤ 100")));
        }
        if self.score_classes[0] == self.score_classes[1] {
            return Err(Error::Config("score classes must differ".into()));
        }
        let mut tc = self.train_classes.clone();
        tc.sort_unstable();
        tc.dedup();
        if tc.len() != self.train_classes.len() || tc.len() < 2 || tc.contains(&0) {
            return Err(Error::Config(format!(
                "train classes must be at least two distinct nonzero labels, got {:?}",
                self.train_classes
            )));
        }
        if let Some(c) = &self.components {
            if c.is_empty() || c.len() > 3 {
                return Err(Error::Config("components must list 1 to 3 indices".into()));
            }
        }
        if self.q == Some(0) {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if let (Some(t1), Some(t2)) = (self.t1, self.t2) {
            if t1 > t2 {
                return Err(Error::Config(format!("t1 = {t1} exceeds t2 = {t2}")));
            }
        }
        self.params.resolve(self.method).map(|_| ())
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A complete run: inputs, outputs and the enhancement itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Empty only for threshold runs on an image source.
    #[serde(default)]
    pub manifest: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Page name used in output file names; defaults to the manifest directory name.
    #[serde(default)]
    pub page: Option<String>,
    #[serde(flatten)]
    pub spec: EnhanceSpec,
}
