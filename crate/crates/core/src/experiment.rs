//! The config-driven pipeline behind the `cllac` binary: prepare the three
//! datasets, train under the (possibly misspecified) mixture weight,
//! evaluate on the (possibly prior-shifted) test draw, and report.
//!
//! Features are standardized with statistics fitted on the complementary
//! and unlabeled pools only, and the normalization is folded back into the
//! trained model's first layer, so checkpoints and all reported metrics
//! live in raw feature space.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::dists::{
    perturb_known_prior, perturb_test_priors, perturb_theta, sample_complementary, sample_test,
    sample_unlabeled, ComplementaryDataset, MixtureSpec, TestDataset, UnlabeledDataset,
};
use crate::io::{ingest_idx, save_model, RawLabeled};
use crate::model::OvrModel;
use crate::num::Real;
use crate::rng::stream;
use crate::risks::{RiskContext, RiskData, RiskForm};
use crate::train::{
    evaluate, train, DecisionRule, EpochRecord, Metrics, Standardizer, TrainError,
};
use crate::{Error, Result};

// --------------------------------------------------------------------------
// Preparation
// --------------------------------------------------------------------------

/// The three datasets a run consumes, in raw feature space, plus the
/// quantities derived from the perturbation knobs.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub cl: ComplementaryDataset<T>,
    pub unlabeled: UnlabeledDataset<T>,
    pub test: TestDataset<T>,
    pub d: usize,
    /// Mixture weight the risk estimator will assume (`eta * theta`,
    /// clamped); the data always comes from the true `theta`.
    pub vartheta: T,
    pub vartheta_clamped: bool,
    /// Known-class share of the test draw after the `mu` prior shift.
    pub test_theta: T,
    /// Fitted on the complementary and unlabeled features only.
    pub standardizer: Standardizer<T>,
}

/// Samples/draws the complementary, unlabeled, and test sets a config
/// describes. Synthetic sources sample their generative specs; ingested
/// datasets are split by the class lists, with the complementary and
/// unlabeled draws taken without replacement from disjoint parts of the
/// training pool and the test set drawn from the held-out test pool.
pub fn prepare<T: Real>(cfg: &ExperimentConfig<T>) -> Result<Prepared<T>> {
    cfg.validate()?;
    let (vartheta, vartheta_clamped) = perturb_theta(cfg.theta, cfg.eta)?;
    let (cl, unlabeled, test, test_theta) = match &cfg.dataset {
        DatasetSpec::Synthetic { kcl, ac } => {
            let spec = MixtureSpec {
                theta: cfg.theta,
                kcl: kcl.clone(),
                ac: ac.clone(),
            };
            spec.validate()?;
            let n_kcl = cfg.n_kcl.expect("validated: synthetic has explicit n_kcl");
            let n_u = cfg.n_u.expect("validated: synthetic has explicit n_u");
            let cl = sample_complementary(kcl, n_kcl, cfg.seed)?;
            let unlabeled = sample_unlabeled(&spec, n_u, cfg.seed)?;
            let shifted = perturb_test_priors(&spec, cfg.mu)?;
            let test = sample_test(&shifted, cfg.n_test, cfg.seed)?;
            (cl, unlabeled, test, shifted.theta)
        }
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => draw_from_idx(
            cfg,
            ingest_idx::<T>(train_images, train_labels)?,
            ingest_idx::<T>(test_images, test_labels)?,
        )?,
    };
    let d = cl
        .features
        .first()
        .ok_or_else(|| Error::invalid("empty complementary draw"))?
        .len();
    let standardizer = Standardizer::fit(
        cl.features
            .iter()
            .map(|r| r.as_slice())
            .chain(unlabeled.features.iter().map(|r| r.as_slice())),
    )?;
    Ok(Prepared {
        cl,
        unlabeled,
        test,
        d,
        vartheta,
        vartheta_clamped,
        test_theta,
        standardizer,
    })
}

/// Training pool split by the configured class lists: known-class samples
/// carry their new label (position in the config order), augmented-class
/// samples collapse into one unlabeled pool, all other classes are dropped.
struct SplitPools<T> {
    known: Vec<(Vec<T>, usize)>,
    ac: Vec<Vec<T>>,
}

fn split_pools<T>(
    raw: RawLabeled<T>,
    known: &[usize],
    augmented: &[usize],
    which: &str,
) -> Result<SplitPools<T>> {
    let mut pools = SplitPools {
        known: Vec::new(),
        ac: Vec::new(),
    };
    let mut known_counts = vec![0usize; known.len()];
    let mut ac_counts = vec![0usize; augmented.len()];
    for (x, y) in raw.features.into_iter().zip(raw.labels) {
        if let Some(pos) = known.iter().position(|&c| c == y) {
            known_counts[pos] += 1;
            pools.known.push((x, pos));
        } else if let Some(pos) = augmented.iter().position(|&c| c == y) {
            ac_counts[pos] += 1;
            pools.ac.push(x);
        }
    }
    for (count, &class) in known_counts.iter().chain(&ac_counts).zip(known.iter().chain(augmented))
    {
        if *count == 0 {
            return Err(Error::invalid(format!(
                "class {class} has no samples in the {which} split"
            )));
        }
    }
    Ok(pools)
}

type Drawn<T> = (
    ComplementaryDataset<T>,
    UnlabeledDataset<T>,
    TestDataset<T>,
    T,
);

fn draw_from_idx<T: Real>(
    cfg: &ExperimentConfig<T>,
    train: RawLabeled<T>,
    test: RawLabeled<T>,
) -> Result<Drawn<T>> {
    if train.d != test.d {
        return Err(Error::invalid(format!(
            "training split has d = {}, test split d = {}",
            train.d, test.d
        )));
    }
    let k = cfg.known_classes.len();
    let train_pools = split_pools(train, &cfg.known_classes, &cfg.augmented_classes, "training")?;
    let test_pools = split_pools(test, &cfg.known_classes, &cfg.augmented_classes, "test")?;

    let n_kcl = cfg.n_kcl.unwrap_or(train_pools.known.len() / 2).max(1);
    let n_u = cfg.n_u.unwrap_or(n_kcl);

    // Complementary draw: a seeded shuffle of the known training pool,
    // first n_kcl entries; the unlabeled draw continues from the cursor so
    // the two sets never share an instance.
    let mut known_order: Vec<usize> = (0..train_pools.known.len()).collect();
    known_order.shuffle(&mut stream(cfg.seed, "pool-known"));
    if n_kcl > known_order.len() {
        return Err(Error::invalid(format!(
            "n_kcl = {n_kcl} exceeds the {} known-class training samples",
            known_order.len()
        )));
    }
    let mut rng_cl = stream(cfg.seed, "cl");
    let mut cl = ComplementaryDataset {
        features: Vec::with_capacity(n_kcl),
        labels: Vec::with_capacity(n_kcl),
        k,
    };
    for &i in &known_order[..n_kcl] {
        let (x, y) = &train_pools.known[i];
        let mut ybar = rng_cl.gen_range(0..k - 1);
        if ybar >= *y {
            ybar += 1;
        }
        assert_ne!(ybar, *y, "complementary label equals the true label");
        cl.features.push(x.clone());
        cl.labels.push(ybar);
    }

    let mut ac_order: Vec<usize> = (0..train_pools.ac.len()).collect();
    ac_order.shuffle(&mut stream(cfg.seed, "pool-ac"));
    let mut rng_u = stream(cfg.seed, "unlabeled");
    let mut known_cursor = n_kcl;
    let mut ac_cursor = 0usize;
    let mut unlabeled = UnlabeledDataset {
        features: Vec::with_capacity(n_u),
    };
    for _ in 0..n_u {
        if T::of(rng_u.gen::<f64>()) < cfg.theta {
            if known_cursor >= known_order.len() {
                return Err(Error::invalid(
                    "known-class training pool exhausted by the unlabeled draw; \
                     lower n_kcl or n_u",
                ));
            }
            unlabeled
                .features
                .push(train_pools.known[known_order[known_cursor]].0.clone());
            known_cursor += 1;
        } else {
            if ac_cursor >= ac_order.len() {
                return Err(Error::invalid(
                    "augmented training pool exhausted by the unlabeled draw; \
                     lower n_u or raise theta",
                ));
            }
            unlabeled
                .features
                .push(train_pools.ac[ac_order[ac_cursor]].clone());
            ac_cursor += 1;
        }
    }

    // Test draw: i.i.d. from the shifted mixture over the held-out pools
    // (with replacement; the pools are empirical stand-ins for the class
    // conditionals).
    let test_theta = perturb_known_prior(cfg.theta, cfg.mu)?;
    let mut rng_t = stream(cfg.seed, "test");
    let mut test = TestDataset {
        features: Vec::with_capacity(cfg.n_test),
        labels: Vec::with_capacity(cfg.n_test),
        k,
    };
    for _ in 0..cfg.n_test {
        if T::of(rng_t.gen::<f64>()) < test_theta {
            let (x, y) = &test_pools.known[rng_t.gen_range(0..test_pools.known.len())];
            test.features.push(x.clone());
            test.labels.push(*y);
        } else {
            test.features
                .push(test_pools.ac[rng_t.gen_range(0..test_pools.ac.len())].clone());
            test.labels.push(k);
        }
    }
    Ok((cl, unlabeled, test, test_theta))
}

// --------------------------------------------------------------------------
// Run
// --------------------------------------------------------------------------

/// Test metrics in report form; `overall` is the accuracy over all `K + 1`
/// classes and `per_class` the per-true-class recalls, augmented last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct ReportMetrics<T> {
    pub n: usize,
    pub overall: T,
    pub known_accuracy: T,
    pub ac_recall: T,
    pub ac_precision: T,
    pub per_class: Vec<T>,
    pub confusion: Vec<Vec<usize>>,
}

impl<T: Real> From<Metrics<T>> for ReportMetrics<T> {
    fn from(m: Metrics<T>) -> Self {
        ReportMetrics {
            n: m.n,
            overall: m.accuracy,
            known_accuracy: m.known_accuracy,
            ac_recall: m.ac_recall,
            ac_precision: m.ac_precision,
            per_class: m.per_class,
            confusion: m.confusion,
        }
    }
}

/// Wall-clock milliseconds per pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub prepare_ms: u64,
    pub train_ms: u64,
    pub eval_ms: u64,
}

/// Everything needed to audit or reproduce a run: the config echo plus the
/// derived mixture weights, metrics, artifact references, and timings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct RunReport<T> {
    pub config: ExperimentConfig<T>,
    pub vartheta: T,
    pub vartheta_clamped: bool,
    pub test_theta: T,
    pub metrics: ReportMetrics<T>,
    /// Epoch-history CSV, relative to the report, once written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<String>,
    /// Model checkpoint, relative to the report, once written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub timings: Timings,
}

/// A finished run: the report plus the artifacts it references. The model
/// scores raw features (normalization already folded in).
#[derive(Clone, Debug)]
pub struct RunOutcome<T> {
    pub report: RunReport<T>,
    pub model: OvrModel<T>,
    pub history: Vec<EpochRecord<T>>,
}

/// How a form's predictions are read at test time: mixture-aware forms use
/// all `K + 1` outputs; complementary-only baselines never train the
/// augmented output, so they decide among the known classes.
pub fn decision_rule(form: RiskForm) -> DecisionRule {
    if form.is_cl_only() {
        DecisionRule::KnownOnly
    } else {
        DecisionRule::Full
    }
}

/// The full pipeline: prepare, standardize, train under `vartheta`, fold
/// the normalization into the model, evaluate on the raw test set.
pub fn run<T: Real>(cfg: &ExperimentConfig<T>) -> Result<RunOutcome<T>> {
    let t = Instant::now();
    let prepared = prepare(cfg)?;
    let prepare_ms = t.elapsed().as_millis() as u64;

    let k = prepared.cl.k;
    let model = OvrModel::new(cfg.model.clone(), k, prepared.d, cfg.seed)?;
    let ctx = RiskContext::new(k, prepared.vartheta, cfg.loss)?;
    let train_cfg = cfg.train.resolve(cfg.seed);

    let mut cl = prepared.cl.clone();
    prepared.standardizer.apply(&mut cl.features);
    let mut unlabeled = prepared.unlabeled.clone();
    prepared.standardizer.apply(&mut unlabeled.features);
    let data = if train_cfg.form.is_cl_only() {
        RiskData::cl_only(&cl)
    } else {
        RiskData::cllac(&cl, &unlabeled)
    };

    let t = Instant::now();
    let trained = train(model, &data, &ctx, &train_cfg).map_err(|e| match e {
        TrainError::Diverged { epoch, .. } => Error::Diverged { epoch },
        TrainError::Invalid(err) => err,
    })?;
    let train_ms = t.elapsed().as_millis() as u64;

    let mut model = trained.model;
    model.absorb_input_affine(&prepared.standardizer.mean, &prepared.standardizer.std)?;

    let t = Instant::now();
    let metrics = evaluate(&model, &prepared.test, decision_rule(train_cfg.form))?;
    let eval_ms = t.elapsed().as_millis() as u64;

    Ok(RunOutcome {
        report: RunReport {
            config: cfg.clone(),
            vartheta: prepared.vartheta,
            vartheta_clamped: prepared.vartheta_clamped,
            test_theta: prepared.test_theta,
            metrics: metrics.into(),
            history: None,
            checkpoint: None,
            timings: Timings {
                prepare_ms,
                train_ms,
                eval_ms,
            },
        },
        model,
        history: trained.history,
    })
}

// --------------------------------------------------------------------------
// Artifacts
// --------------------------------------------------------------------------

pub fn history_csv<T: Real>(history: &[EpochRecord<T>]) -> String {
    let mut out = String::from("epoch,emp_risk\n");
    for rec in history {
        out.push_str(&format!("{},{}\n", rec.epoch, rec.risk));
    }
    out
}

/// Files a written run leaves behind.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub report: PathBuf,
    pub history: PathBuf,
    pub checkpoint: PathBuf,
}

/// Writes `report.json`, `history.csv`, and `model.bin` into `dir`
/// (created if needed) and fills the report's artifact references.
pub fn write_outcome<T: Real + Serialize>(
    dir: &Path,
    outcome: &mut RunOutcome<T>,
) -> Result<RunArtifacts> {
    fs::create_dir_all(dir)?;
    let paths = RunArtifacts {
        report: dir.join("report.json"),
        history: dir.join("history.csv"),
        checkpoint: dir.join("model.bin"),
    };
    fs::write(&paths.history, history_csv(&outcome.history))?;
    save_model(&paths.checkpoint, &outcome.model)?;
    outcome.report.history = Some("history.csv".into());
    outcome.report.checkpoint = Some("model.bin".into());
    let mut text = serde_json::to_string_pretty(&outcome.report)?;
    text.push('\n');
    fs::write(&paths.report, text)?;
    Ok(paths)
}

// --------------------------------------------------------------------------
// Sweeps
// --------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Training-side mixture misspecification; the model is retrained at
    /// every value (the data never changes, only the assumed weight).
    Eta,
    /// Test-side prior shift; the model is trained once and re-evaluated on
    /// every shifted test draw (training never sees `mu`).
    Mu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct SweepRow<T> {
    pub value: T,
    pub overall_accuracy: T,
    pub ac_recall: T,
    pub per_class: Vec<T>,
}

impl<T: Real> From<(T, ReportMetrics<T>)> for SweepRow<T> {
    fn from((value, m): (T, ReportMetrics<T>)) -> Self {
        SweepRow {
            value,
            overall_accuracy: m.overall,
            ac_recall: m.ac_recall,
            per_class: m.per_class,
        }
    }
}

/// One row per value, in input order. Rows are computed in parallel across
/// at most `threads` workers; every path is deterministic in the config
/// seed, so the thread count never changes the results.
pub fn sweep<T: Real + Send + Sync>(
    cfg: &ExperimentConfig<T>,
    parameter: SweepParameter,
    values: &[T],
    threads: usize,
) -> Result<Vec<SweepRow<T>>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    if threads == 0 {
        return Err(Error::invalid("thread count must be at least 1"));
    }
    match parameter {
        SweepParameter::Eta => {
            let results = parallel_map(values, threads, |&eta| {
                let mut c = cfg.clone();
                c.eta = eta;
                Ok((eta, run(&c)?.report.metrics).into())
            });
            results.into_iter().collect()
        }
        SweepParameter::Mu => {
            // mu only moves the test draw, so one trained model serves the
            // whole sweep.
            let outcome = run(cfg)?;
            let results = parallel_map(values, threads, |&mu| {
                let mut c = cfg.clone();
                c.mu = mu;
                let prepared = prepare(&c)?;
                let metrics = evaluate(
                    &outcome.model,
                    &prepared.test,
                    decision_rule(cfg.train.form),
                )?;
                Ok((mu, ReportMetrics::from(metrics)).into())
            });
            results.into_iter().collect()
        }
    }
}

pub fn sweep_csv<T: Real>(rows: &[SweepRow<T>]) -> String {
    let mut out = String::from("value,overall_accuracy,ac_recall");
    if let Some(first) = rows.first() {
        for i in 0..first.per_class.len() {
            out.push_str(&format!(",class_{i}_accuracy"));
        }
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{}",
            row.value, row.overall_accuracy, row.ac_recall
        ));
        for v in &row.per_class {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Applies `f` to every value, splitting the slice into contiguous chunks
/// across at most `threads` scoped workers.
fn parallel_map<V: Sync, R: Send>(
    values: &[V],
    threads: usize,
    f: impl Fn(&V) -> Result<R> + Sync,
) -> Vec<Result<R>> {
    if threads <= 1 || values.len() <= 1 {
        return values.iter().map(f).collect();
    }
    let chunk = values.len().div_ceil(threads);
    let mut out: Vec<Option<Result<R>>> = Vec::new();
    out.resize_with(values.len(), || None);
    std::thread::scope(|scope| {
        for (vals, outs) in values.chunks(chunk).zip(out.chunks_mut(chunk)) {
            let f = &f;
            scope.spawn(move || {
                for (v, o) in vals.iter().zip(outs.iter_mut()) {
                    *o = Some(f(v));
                }
            });
        }
    });
    out.into_iter().map(|o| o.expect("worker filled its chunk")).collect()
}
