//! Experiment configuration: one JSON document pins the data source, the
//! class split, mixture proportions, surrogate, risk form, and seed, so any
//! report can be reproduced from its echoed config alone.
//!
//! ```json
//! {
//!   "dataset": {
//!     "source": "synthetic",
//!     "kcl": { "kind": "gauss", "classes": [
//!       { "mean": [0.0, 0.0], "cov": 1.0, "prior": 0.5 },
//!       { "mean": [6.0, 0.0], "cov": 1.0, "prior": 0.5 } ] },
//!     "ac": { "kind": "gauss", "classes": [
//!       { "mean": [3.0, 6.0], "cov": 1.0, "prior": 1.0 } ] }
//!   },
//!   "theta": 0.75,
//!   "n_kcl": 3000,
//!   "n_u": 3000,
//!   "loss": { "kind": "square" },
//!   "model": { "arch": "linear" },
//!   "train": { "form": "cllac_convex" },
//!   "seed": 7
//! }
//! ```
//!
//! `eta` (training-side mixture misspecification) and `mu` (test-side prior
//! shift) default to 1, the unperturbed run. Training hyperparameters left
//! out fall back to the per-form defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dists::SourceDist;
use crate::losses::SurrogateLoss;
use crate::model::Arch;
use crate::num::Real;
use crate::risks::RiskForm;
use crate::train::{StepRule, TrainConfig};
use crate::{Error, Result};

/// Where the experiment's data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "source",
    rename_all = "snake_case",
    bound(
        serialize = "T: Real + Serialize",
        deserialize = "T: Real + Deserialize<'de>"
    )
)]
pub enum DatasetSpec<T> {
    /// Generative sources: the known-class joint and the augmented pool.
    Synthetic { kcl: SourceDist<T>, ac: SourceDist<T> },
    /// MNIST-family IDX files. The train pair feeds the complementary and
    /// unlabeled pools; the test pair feeds evaluation, so no instance can
    /// leak across.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

/// Training section: the form is mandatory, everything else overlays the
/// per-form defaults from [`TrainConfig::defaults`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct TrainSpec<T> {
    pub form: RiskForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<StepRule<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<T>,
}

impl<T: Real> TrainSpec<T> {
    pub fn form_only(form: RiskForm) -> Self {
        TrainSpec {
            form,
            epochs: None,
            batch: None,
            lr: None,
            rule: None,
            weight_decay: None,
        }
    }

    /// Fills the gaps with the form's defaults; the experiment seed drives
    /// the epoch shuffles.
    pub fn resolve(&self, seed: u64) -> TrainConfig<T> {
        let mut cfg = TrainConfig::defaults(self.form);
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch {
            cfg.batch = b;
        }
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if let Some(rule) = self.rule {
            cfg.rule = rule;
        }
        if let Some(wd) = self.weight_decay {
            cfg.weight_decay = wd;
        }
        cfg.seed = seed;
        cfg
    }
}

fn one<T: Real>() -> T {
    T::one()
}

pub const DEFAULT_N_TEST: usize = 10_000;

fn default_n_test() -> usize {
    DEFAULT_N_TEST
}

/// Everything a run needs. One seed drives sampling, model init, and epoch
/// shuffles through independent purpose-tagged streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    deny_unknown_fields,
    bound(
        serialize = "T: Real + Serialize",
        deserialize = "T: Real + Deserialize<'de>"
    )
)]
pub struct ExperimentConfig<T> {
    pub dataset: DatasetSpec<T>,
    /// Original class ids kept as the K known classes, in the order that
    /// becomes labels `0..K`. Ingested datasets only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub known_classes: Vec<usize>,
    /// Original class ids collapsed into the augmented pool. Ingested
    /// datasets only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub augmented_classes: Vec<usize>,
    /// Known-class share of the unlabeled/test mixture.
    pub theta: T,
    /// Mixture misspecification fed to training: the risk context sees
    /// `eta * theta` (clamped) while the data keeps the true `theta`.
    #[serde(default = "one")]
    pub eta: T,
    /// Test-side prior shift: the augmented prior mass is scaled by `mu`
    /// and renormalized before the test set is drawn.
    #[serde(default = "one")]
    pub mu: T,
    /// Complementary sample count. Ingested datasets default to half the
    /// known-class training pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_kcl: Option<usize>,
    /// Unlabeled sample count; defaults to the resolved `n_kcl` on ingested
    /// datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_u: Option<usize>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    pub loss: SurrogateLoss<T>,
    pub model: Arch,
    pub train: TrainSpec<T>,
    pub seed: u64,
}

impl<T: Real> ExperimentConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !self.theta.is_finite() || self.theta < T::zero() || self.theta > T::one() {
            return Err(Error::invalid(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        if !self.eta.is_finite() || self.eta <= T::zero() {
            return Err(Error::invalid("eta must be finite and positive"));
        }
        if !self.mu.is_finite() || self.mu <= T::zero() {
            return Err(Error::invalid("mu must be finite and positive"));
        }
        // Re-run the constructor check on deserialized loss values.
        SurrogateLoss::new(self.loss.kind, self.loss.scale)?;
        for (name, n) in [("n_kcl", self.n_kcl), ("n_u", self.n_u)] {
            if n == Some(0) {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.n_test == 0 {
            return Err(Error::invalid("n_test must be at least 1"));
        }
        match &self.dataset {
            DatasetSpec::Synthetic { kcl, .. } => {
                if !self.known_classes.is_empty() || !self.augmented_classes.is_empty() {
                    return Err(Error::invalid(
                        "class selections apply to ingested datasets; synthetic sources \
                         define their own classes",
                    ));
                }
                if kcl.k() < 2 {
                    return Err(Error::invalid(
                        "the known-class source needs at least 2 classes",
                    ));
                }
                if self.n_kcl.is_none() || self.n_u.is_none() {
                    return Err(Error::invalid(
                        "synthetic datasets need explicit n_kcl and n_u",
                    ));
                }
            }
            DatasetSpec::Idx { .. } => {
                if self.known_classes.len() < 2 {
                    return Err(Error::invalid("need at least 2 known classes"));
                }
                if self.augmented_classes.is_empty() {
                    return Err(Error::invalid("need at least 1 augmented class"));
                }
                let mut seen = self.known_classes.clone();
                seen.extend_from_slice(&self.augmented_classes);
                seen.sort_unstable();
                let before = seen.len();
                seen.dedup();
                if seen.len() != before {
                    return Err(Error::invalid(
                        "known and augmented class lists must be disjoint and \
                         duplicate-free",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Known-class count the run will use.
    pub fn k(&self) -> usize {
        match &self.dataset {
            DatasetSpec::Synthetic { kcl, .. } => kcl.k(),
            DatasetSpec::Idx { .. } => self.known_classes.len(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self>
    where
        T: serde::de::DeserializeOwned,
    {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self>
    where
        T: serde::de::DeserializeOwned,
    {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> Result<String>
    where
        T: Serialize,
    {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::{FiniteJoint, GaussClass, GaussMixSpec};
    use crate::losses::LossKind;

    fn gauss_pair() -> DatasetSpec<f64> {
        DatasetSpec::Synthetic {
            kcl: SourceDist::Gauss(GaussMixSpec {
                classes: vec![
                    GaussClass {
                        mean: vec![0.0, 0.0],
                        cov: crate::dists::CovSpec::Spherical(1.0),
                        prior: 0.5,
                    },
                    GaussClass {
                        mean: vec![6.0, 0.0],
                        cov: crate::dists::CovSpec::Spherical(1.0),
                        prior: 0.5,
                    },
                ],
            }),
            ac: SourceDist::Gauss(GaussMixSpec {
                classes: vec![GaussClass {
                    mean: vec![3.0, 6.0],
                    cov: crate::dists::CovSpec::Spherical(1.0),
                    prior: 1.0,
                }],
            }),
        }
    }

    fn base() -> ExperimentConfig<f64> {
        ExperimentConfig {
            dataset: gauss_pair(),
            known_classes: vec![],
            augmented_classes: vec![],
            theta: 0.75,
            eta: 1.0,
            mu: 1.0,
            n_kcl: Some(100),
            n_u: Some(100),
            n_test: 1000,
            loss: SurrogateLoss::unit(LossKind::Square),
            model: Arch::Linear,
            train: TrainSpec::form_only(RiskForm::CllacConvex),
            seed: 7,
        }
    }

    #[test]
    fn json_round_trip_preserves_the_config() {
        let cfg = base();
        let text = cfg.to_json_pretty().unwrap();
        let back = ExperimentConfig::<f64>::from_json(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_document_fills_defaults() {
        let text = r#"{
            "dataset": {
                "source": "synthetic",
                "kcl": { "kind": "gauss", "classes": [
                    { "mean": [0.0], "cov": 1.0, "prior": 0.5 },
                    { "mean": [4.0], "cov": 1.0, "prior": 0.5 } ] },
                "ac": { "kind": "gauss", "classes": [
                    { "mean": [2.0], "cov": 1.0, "prior": 1.0 } ] }
            },
            "theta": 0.5,
            "n_kcl": 50,
            "n_u": 80,
            "loss": { "kind": "logistic" },
            "model": { "arch": "mlp", "hidden": [16] },
            "train": { "form": "cllac_rewrite", "epochs": 3 },
            "seed": 1
        }"#;
        let cfg = ExperimentConfig::<f64>::from_json(text).unwrap();
        assert_eq!(cfg.eta, 1.0);
        assert_eq!(cfg.mu, 1.0);
        assert_eq!(cfg.n_test, DEFAULT_N_TEST);
        assert_eq!(cfg.loss.scale, 1.0);
        assert_eq!(cfg.k(), 2);
        let train = cfg.train.resolve(cfg.seed);
        assert_eq!(train.epochs, 3);
        assert_eq!(train.batch, 256);
        assert_eq!(train.seed, 1);
        assert_eq!(train.weight_decay, 1e-4);
    }

    #[test]
    fn resolve_respects_form_defaults() {
        let spec = TrainSpec::<f64>::form_only(RiskForm::CllacConvex);
        assert_eq!(spec.resolve(3).weight_decay, 0.0);
        let spec = TrainSpec::<f64>::form_only(RiskForm::CllacCompact);
        assert_eq!(spec.resolve(3).weight_decay, 1e-4);
        let mut spec = TrainSpec::<f64>::form_only(RiskForm::CllacCompact);
        spec.weight_decay = Some(0.25);
        assert_eq!(spec.resolve(3).weight_decay, 0.25);
    }

    #[test]
    fn validation_rejects_bad_documents() {
        let mut cfg = base();
        cfg.theta = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = base();
        cfg.eta = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = base();
        cfg.n_kcl = None;
        assert!(cfg.validate().is_err(), "synthetic needs explicit counts");

        let mut cfg = base();
        cfg.known_classes = vec![0, 1];
        assert!(cfg.validate().is_err(), "class lists are idx-only");

        let mut cfg = base();
        cfg.dataset = DatasetSpec::Idx {
            train_images: "a".into(),
            train_labels: "b".into(),
            test_images: "c".into(),
            test_labels: "d".into(),
        };
        cfg.known_classes = vec![0, 1, 2];
        cfg.augmented_classes = vec![2];
        assert!(cfg.validate().is_err(), "overlapping class lists");
        cfg.augmented_classes = vec![3];
        assert!(cfg.validate().is_ok());
        cfg.known_classes = vec![0];
        assert!(cfg.validate().is_err(), "need two known classes");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let cfg = base();
        let mut text = cfg.to_json_pretty().unwrap();
        text = text.replacen("\"theta\"", "\"thta\"", 1);
        assert!(ExperimentConfig::<f64>::from_json(&text).is_err());
    }

    #[test]
    fn finite_sources_parse_too() {
        let ds = DatasetSpec::Synthetic {
            kcl: SourceDist::Finite(
                FiniteJoint::from_rows(
                    vec![vec![0.0], vec![1.0]],
                    vec![vec![0.25, 0.25], vec![0.25, 0.25]],
                )
                .unwrap(),
            ),
            ac: SourceDist::Finite(
                FiniteJoint::from_rows(vec![vec![2.0]], vec![vec![1.0]]).unwrap(),
            ),
        };
        let mut cfg = base();
        cfg.dataset = ds;
        let text = cfg.to_json_pretty().unwrap();
        let back = ExperimentConfig::<f64>::from_json(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
