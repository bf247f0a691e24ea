//! Mini-batch gradient training of the one-versus-rest model against any
//! risk form estimable without true labels, plus test-time evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dists::TestDataset;
use crate::model::{OvrModel, Scorer};
use crate::num::Real;
use crate::risks::{emp_risk, emp_risk_grad_indexed, RiskContext, RiskData, RiskForm};
use crate::rng::stream;
use crate::{Error, Result};

/// Parameter update rule. `Adaptive` is the accumulated-delta scheme
/// (squared-gradient and squared-update running averages), with the learning
/// rate acting as a multiplier on the computed step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub enum StepRule<T> {
    Fixed,
    Momentum { beta: T },
    Adaptive { rho: T, eps: T },
}

impl<T: Real> StepRule<T> {
    pub fn default_adaptive() -> Self {
        StepRule::Adaptive {
            rho: T::of(0.95),
            eps: T::of(1e-6),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            StepRule::Fixed => Ok(()),
            StepRule::Momentum { beta } => {
                if !beta.is_finite() || beta < T::zero() || beta >= T::one() {
                    return Err(Error::config("momentum beta must lie in [0, 1)"));
                }
                Ok(())
            }
            StepRule::Adaptive { rho, eps } => {
                if !rho.is_finite() || rho <= T::zero() || rho >= T::one() {
                    return Err(Error::config("adaptive rho must lie in (0, 1)"));
                }
                if !eps.is_finite() || eps <= T::zero() {
                    return Err(Error::config("adaptive eps must be positive"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct TrainConfig<T> {
    pub form: RiskForm,
    pub epochs: usize,
    pub batch: usize,
    pub lr: T,
    pub rule: StepRule<T>,
    /// Coupled L2 decay added to the gradient as `wd * params`.
    pub weight_decay: T,
    /// Seeds the epoch shuffles (stream tag `shuffle`); independent of the
    /// model-init and sampling seeds.
    pub seed: u64,
}

impl<T: Real> TrainConfig<T> {
    /// Defaults for a form: adaptive steps, lr 0.5, batch 256, and a small
    /// weight decay except for the convex form, whose objective is left
    /// unregularized.
    pub fn defaults(form: RiskForm) -> Self {
        TrainConfig {
            form,
            epochs: 50,
            batch: 256,
            lr: T::of(0.5),
            rule: StepRule::default_adaptive(),
            weight_decay: if form == RiskForm::CllacConvex {
                T::zero()
            } else {
                T::of(1e-4)
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.form.trainable() {
            return Err(Error::config(format!(
                "{} needs true labels and cannot be trained here",
                self.form.tag()
            )));
        }
        if self.batch == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        // lr = 0 is allowed: a deliberate no-op run still produces a history.
        if !self.lr.is_finite() || self.lr < T::zero() {
            return Err(Error::config("learning rate must be finite and nonnegative"));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < T::zero() {
            return Err(Error::config("weight decay must be finite and nonnegative"));
        }
        self.rule.validate()
    }
}

/// Risk trajectory entry; `epoch` 0 is the initial model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct EpochRecord<T> {
    pub epoch: usize,
    /// Full-data empirical risk (without the decay term) after the epoch.
    pub risk: T,
}

#[derive(Clone, Debug)]
pub struct Trained<T> {
    pub model: OvrModel<T>,
    pub history: Vec<EpochRecord<T>>,
}

/// Training failure. Divergence carries the last model with finite
/// parameters and the history up to that point, so a caller can inspect or
/// salvage the run.
#[derive(Debug)]
pub enum TrainError<T> {
    Diverged { epoch: usize, last: Box<Trained<T>> },
    Invalid(Error),
}

impl<T> From<Error> for TrainError<T> {
    fn from(e: Error) -> Self {
        TrainError::Invalid(e)
    }
}

impl<T> std::fmt::Display for TrainError<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainError::Diverged { epoch, .. } => {
                write!(f, "training diverged at epoch {epoch}")
            }
            TrainError::Invalid(e) => e.fmt(f),
        }
    }
}

impl<T: std::fmt::Debug> std::error::Error for TrainError<T> {}

struct Optimizer<T> {
    rule: StepRule<T>,
    lr: T,
    velocity: Vec<T>,
    sq_grad: Vec<T>,
    sq_delta: Vec<T>,
}

impl<T: Real> Optimizer<T> {
    fn new(rule: StepRule<T>, lr: T, n: usize) -> Self {
        let state = |needed: bool| if needed { vec![T::zero(); n] } else { Vec::new() };
        Optimizer {
            rule,
            lr,
            velocity: state(matches!(rule, StepRule::Momentum { .. })),
            sq_grad: state(matches!(rule, StepRule::Adaptive { .. })),
            sq_delta: state(matches!(rule, StepRule::Adaptive { .. })),
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T]) {
        match self.rule {
            StepRule::Fixed => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            StepRule::Momentum { beta } => {
                for ((p, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
                    *v = beta * *v + g;
                    *p -= self.lr * *v;
                }
            }
            StepRule::Adaptive { rho, eps } => {
                let one_m = T::one() - rho;
                for (((p, sg), sd), &g) in params
                    .iter_mut()
                    .zip(&mut self.sq_grad)
                    .zip(&mut self.sq_delta)
                    .zip(grad)
                {
                    *sg = rho * *sg + one_m * g * g;
                    let delta = g * ((*sd + eps).sqrt() / (*sg + eps).sqrt());
                    *sd = rho * *sd + one_m * delta * delta;
                    *p -= self.lr * delta;
                }
            }
        }
    }
}

/// Trains `model` on the data a form consumes. Complementary batches walk a
/// fresh shuffle each epoch; unlabeled batches walk their own shuffle,
/// wrapping around when exhausted, so every complementary batch is paired
/// with an unlabeled one of the same nominal size.
pub fn train<T: Real>(
    model: OvrModel<T>,
    data: &RiskData<'_, T>,
    ctx: &RiskContext<T>,
    cfg: &TrainConfig<T>,
) -> std::result::Result<Trained<T>, TrainError<T>> {
    cfg.validate()?;
    ctx.check_form(cfg.form)?;
    let cl = data
        .cl
        .filter(|cl| !cl.is_empty())
        .ok_or_else(|| Error::invalid("training needs complementary data"))?;
    if cl.k != ctx.k {
        return Err(Error::invalid(format!(
            "complementary data has k = {}, context k = {}",
            cl.k, ctx.k
        ))
        .into());
    }
    let n_u = if cfg.form.is_cllac() {
        data.unlabeled
            .filter(|u| !u.is_empty())
            .ok_or_else(|| Error::invalid("this form needs unlabeled data"))?
            .len()
    } else {
        0
    };

    let mut model = model;
    let mut rng = stream(cfg.seed, "shuffle");
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let initial = emp_risk(cfg.form, &model, data, ctx)?;
    if !initial.is_finite() {
        return Err(Error::invalid("initial risk is not finite").into());
    }
    history.push(EpochRecord {
        epoch: 0,
        risk: initial,
    });

    let mut opt = Optimizer::new(cfg.rule, cfg.lr, model.params().len());
    let mut cl_order: Vec<usize> = (0..cl.len()).collect();
    let mut u_order: Vec<usize> = (0..n_u).collect();
    let mut prev = model.params().to_vec();
    let wd = cfg.weight_decay;

    for epoch in 1..=cfg.epochs {
        cl_order.shuffle(&mut rng);
        u_order.shuffle(&mut rng);
        let mut u_cursor = 0usize;
        for chunk in cl_order.chunks(cfg.batch) {
            let u_batch: Vec<usize> = if n_u > 0 {
                // Same nominal batch size, wrapping over the shuffled order.
                (0..cfg.batch.min(n_u))
                    .map(|j| u_order[(u_cursor + j) % n_u])
                    .collect()
            } else {
                Vec::new()
            };
            u_cursor = if n_u > 0 { (u_cursor + u_batch.len()) % n_u } else { 0 };
            let u_idx = if n_u > 0 { Some(u_batch.as_slice()) } else { None };
            let (value, mut grad) =
                emp_risk_grad_indexed(cfg.form, &model, data, ctx, Some(chunk), u_idx)?;
            if wd > T::zero() {
                for (g, &p) in grad.iter_mut().zip(model.params()) {
                    *g += wd * p;
                }
            }
            let bad_input = !value.is_finite() || grad.iter().any(|g| !g.is_finite());
            if bad_input {
                return Err(diverged(epoch, model_with(model, &prev), history));
            }
            prev.copy_from_slice(model.params());
            opt.step(model.params_mut(), &grad);
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(diverged(epoch, model_with(model, &prev), history));
            }
        }
        let risk = emp_risk(cfg.form, &model, data, ctx)?;
        if !risk.is_finite() {
            return Err(diverged(epoch, model, history));
        }
        history.push(EpochRecord { epoch, risk });
    }
    Ok(Trained { model, history })
}

fn model_with<T: Real>(mut model: OvrModel<T>, params: &[T]) -> OvrModel<T> {
    model.params_mut().copy_from_slice(params);
    model
}

fn diverged<T: Real>(
    epoch: usize,
    model: OvrModel<T>,
    history: Vec<EpochRecord<T>>,
) -> TrainError<T> {
    TrainError::Diverged {
        epoch,
        last: Box::new(Trained { model, history }),
    }
}

// --------------------------------------------------------------------------
// Feature standardization
// --------------------------------------------------------------------------

/// Per-feature affine map to zero mean and unit variance, fitted on training
/// features and applied unchanged to evaluation features. Standard
/// deviations are floored at 1e-8 so constant features pass through shifted
/// but not blown up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [T]>,
        T: 'a,
    {
        let mut mean: Vec<crate::num::Accumulator<T>> = Vec::new();
        let mut sq: Vec<crate::num::Accumulator<T>> = Vec::new();
        let mut n = 0usize;
        for row in rows {
            if mean.is_empty() {
                mean = (0..row.len()).map(|_| crate::num::Accumulator::new()).collect();
                sq = (0..row.len()).map(|_| crate::num::Accumulator::new()).collect();
            }
            if row.len() != mean.len() {
                return Err(Error::invalid("inconsistent feature dimensions"));
            }
            for (j, &v) in row.iter().enumerate() {
                mean[j].add(v);
                sq[j].add(v * v);
            }
            n += 1;
        }
        if n == 0 || mean.is_empty() {
            return Err(Error::invalid("standardizer needs at least one nonempty row"));
        }
        let nf = T::of(n as f64);
        let floor = T::of(1e-8);
        let mean: Vec<T> = mean.into_iter().map(|a| a.total() / nf).collect();
        let std = sq
            .into_iter()
            .zip(&mean)
            .map(|(a, &m)| {
                let var = (a.total() / nf - m * m).max(T::zero());
                var.sqrt().max(floor)
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn transform(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, rows: &mut [Vec<T>]) {
        for row in rows {
            *row = self.transform(row);
        }
    }
}

// --------------------------------------------------------------------------
// Evaluation
// --------------------------------------------------------------------------

/// How test predictions are read off the scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Argmax over all `K + 1` outputs.
    Full,
    /// Argmax over the first `K` outputs only; the model never predicts the
    /// augmented class. The natural rule for the complementary-only
    /// baselines, whose augmented output is never trained.
    KnownOnly,
}

/// Test-set summary. Ratios with an empty denominator are reported as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct Metrics<T> {
    pub n: usize,
    /// Fraction correct over all `K + 1` classes.
    pub accuracy: T,
    /// Fraction correct among samples whose true class is known.
    pub known_accuracy: T,
    /// Fraction of truly augmented samples predicted augmented.
    pub ac_recall: T,
    /// Fraction of augmented predictions that are truly augmented.
    pub ac_precision: T,
    /// Recall per true class, `0..=K`; index `K` equals `ac_recall`.
    pub per_class: Vec<T>,
    /// `confusion[true][predicted]`, both `0..=K`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate<T: Real, S: Scorer<T>>(
    f: &S,
    test: &TestDataset<T>,
    rule: DecisionRule,
) -> Result<Metrics<T>> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let k = test.k;
    let span = match rule {
        DecisionRule::Full => k + 1,
        DecisionRule::KnownOnly => k,
    };
    if f.outputs() < span {
        return Err(Error::invalid(format!(
            "scorer has {} outputs, needs {span}",
            f.outputs()
        )));
    }
    let mut confusion = vec![vec![0usize; k + 1]; k + 1];
    for (x, &label) in test.features.iter().zip(&test.labels) {
        if label > k {
            return Err(Error::invalid(format!("test label {label} out of range")));
        }
        let s = f.scores(x);
        let mut best = 0usize;
        for i in 1..span {
            if s[i] > s[best] {
                best = i;
            }
        }
        confusion[label][best] += 1;
    }
    let n = test.len();
    let correct: usize = (0..=k).map(|i| confusion[i][i]).sum();
    let known_total: usize = confusion[..k].iter().map(|row| row.iter().sum::<usize>()).sum();
    let known_correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let ac_total: usize = confusion[k].iter().sum();
    let pred_ac_total: usize = (0..=k).map(|i| confusion[i][k]).sum();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            T::zero()
        } else {
            T::of(num as f64) / T::of(den as f64)
        }
    };
    let per_class = (0..=k)
        .map(|i| ratio(confusion[i][i], confusion[i].iter().sum()))
        .collect();
    Ok(Metrics {
        n,
        accuracy: ratio(correct, n),
        known_accuracy: ratio(known_correct, known_total),
        ac_recall: ratio(confusion[k][k], ac_total),
        ac_precision: ratio(confusion[k][k], pred_ac_total),
        per_class,
        confusion,
    })
}
