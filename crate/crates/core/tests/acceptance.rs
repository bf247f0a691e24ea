//! Acceptance gate: ten criteria, one printed pass/fail line each.
//!
//! Every test prints `AC-n <label>: pass|FAIL (<details>)` before asserting,
//! so a full run (`cargo test --test acceptance -- --nocapture`) shows the
//! whole scoreboard even when reading only stdout.
//!
//! AC-8 runs on a generated four-glyph image corpus by default; set
//! `CLLAC_MNIST_DIR` to a directory holding the standard
//! `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`, `t10k-images-idx3-ubyte`,
//! `t10k-labels-idx1-ubyte` files to run it on real digits instead.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use cllac_core::config::{DatasetSpec, ExperimentConfig, TrainSpec};
use cllac_core::dists::{
    ComplementaryDataset, CovSpec, FiniteJoint, GaussClass, GaussMixSpec, MixtureSpec, SourceDist,
    UnlabeledDataset,
};
use cllac_core::experiment::{self, SweepParameter};
use cllac_core::losses::{LossKind, SurrogateLoss};
use cllac_core::model::{Arch, OvrModel};
use cllac_core::rng::stream;
use cllac_core::risks::{emp_risk, RiskContext, RiskData, RiskForm};
use cllac_core::train::{evaluate, DecisionRule};
use cllac_core::verify::{self, GaussBayesScorer};

const SEED: u64 = 0;

fn report(id: &str, label: &str, ok: bool, details: &str) {
    println!("{id} {label}: {} ({details})", if ok { "pass" } else { "FAIL" });
    assert!(ok, "{id} {label} failed: {details}");
}

#[test]
fn ac01_rewrite_identity_matches_supervised_risk() {
    let t = Instant::now();
    let r = verify::verify_rewrite_identity(200, SEED, 1e-10).unwrap();
    let secs = t.elapsed().as_secs_f64();
    report(
        "AC-1",
        "rewrite identity",
        r.pass && secs < 2.0,
        &format!(
            "max residual {:.2e} over {} trials, tol {:.0e}, {secs:.2}s",
            r.max_abs_residual, r.trials, r.tolerance
        ),
    );
}

#[test]
fn ac02_expectation_rewrite_matches_direct_tables() {
    let t = Instant::now();
    let r = verify::verify_rewrite_expectation(200, SEED).unwrap();
    let secs = t.elapsed().as_secs_f64();
    report(
        "AC-2",
        "expectation rewrite on random tables",
        r.pass && secs < 1.0,
        &format!(
            "max residual {:.2e} over {} trials, tol {:.0e}, {secs:.2}s",
            r.max_abs_residual, r.trials, r.tolerance
        ),
    );
}

#[test]
fn ac03_symmetric_losses_cancel_the_complementary_constants() {
    let t = Instant::now();
    let r = verify::verify_symmetric_simplification(100, SEED).unwrap();
    report(
        "AC-3",
        "symmetric-loss simplification",
        r.pass,
        &format!(
            "max residual {:.2e} over {} trials (ramp and sigmoid, scales 1 and 2.5), {:.2}s",
            r.max_abs_residual,
            r.trials,
            t.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn ac04_compact_and_convex_forms_match_the_rewrite() {
    let t = Instant::now();
    let reports = verify::verify_compact_forms(200, SEED).unwrap();
    let compact = &reports[0];
    let convex = &reports[1];
    let reduced = &reports[2];

    // The reduced form must deviate on generic scores but coincide at the
    // all-zero model, where every dropped odd difference vanishes.
    let mut rng = stream(SEED, "acceptance-reduced");
    let k = 3;
    let cl = ComplementaryDataset {
        features: (0..8)
            .map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect(),
        labels: (0..8).map(|_| rng.gen_range(0..k)).collect(),
        k,
    };
    let u = UnlabeledDataset {
        features: (0..8)
            .map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect(),
    };
    let zero = OvrModel::<f64>::new(Arch::Linear, k, 2, 0).unwrap();
    let ctx = RiskContext::new(k, 0.6, SurrogateLoss::unit(LossKind::Square)).unwrap();
    let data = RiskData::cllac(&cl, &u);
    let rw = emp_risk(RiskForm::CllacRewrite, &zero, &data, &ctx).unwrap();
    let rd = emp_risk(RiskForm::CllacReduced, &zero, &data, &ctx).unwrap();
    let zero_gap = (rw - rd).abs();

    let ok = compact.pass
        && convex.pass
        && reduced.max_abs_residual > 0.0
        && zero_gap <= 1e-12;
    report(
        "AC-4",
        "compact/convex equivalences and documented reduced-form gap",
        ok,
        &format!(
            "compact {:.2e}, convex {:.2e}, reduced gap up to {:.2e} generically \
             and {zero_gap:.2e} at the zero model, {:.2}s",
            compact.max_abs_residual,
            convex.max_abs_residual,
            reduced.max_abs_residual,
            t.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn ac05_estimator_is_unbiased_and_converges_at_root_n() {
    let t = Instant::now();
    // Fixed random scorer and mixture: four support points, three known
    // classes, two augmented points, theta 0.6.
    let kcl = FiniteJoint::new(
        vec![
            vec![0.0, 0.0],
            vec![1.5, -0.5],
            vec![-1.0, 1.0],
            vec![0.5, 2.0],
        ],
        vec![
            0.10, 0.05, 0.05, //
            0.05, 0.20, 0.05, //
            0.05, 0.05, 0.15, //
            0.10, 0.05, 0.10,
        ],
        3,
    )
    .unwrap();
    let ac = FiniteJoint::new(vec![vec![-2.0, -2.0], vec![2.5, 2.5]], vec![0.6, 0.4], 1).unwrap();
    let spec = MixtureSpec {
        theta: 0.6,
        kcl: SourceDist::Finite(kcl),
        ac: SourceDist::Finite(ac),
    };
    let model = OvrModel::new(Arch::Mlp { hidden: vec![4] }, 3, 2, 7).unwrap();
    let loss = SurrogateLoss::unit(LossKind::Square);
    let unb = verify::verify_unbiasedness(
        &spec,
        &model,
        &loss,
        RiskForm::CllacRewrite,
        &[100, 1000, 10_000],
        200,
        SEED,
    )
    .unwrap();

    // The deliberately biased estimator must fail the same three-SE test.
    let controls = verify::verify_negative_controls(SEED).unwrap();
    let secs = t.elapsed().as_secs_f64();
    report(
        "AC-5",
        "unbiasedness with Monte-Carlo rate, biased control rejected",
        unb.pass && controls.pass && secs < 60.0,
        &format!(
            "worst mean deviation {:.2e}, log-RMSE slope {:.3}, controls: {}, {secs:.1}s",
            unb.rows
                .iter()
                .map(|r| (r.mean - unb.exact).abs())
                .fold(0.0, f64::max),
            unb.slope,
            controls.notes,
            secs = secs
        ),
    );
}

#[test]
fn ac06_analytic_gradients_match_central_differences() {
    let t = Instant::now();
    let r = verify::verify_gradients(SEED).unwrap();
    report(
        "AC-6",
        "gradient check, every trainable form x both architectures",
        r.pass,
        &format!(
            "max relative error {:.2e} over {} coordinates, tol {:.0e}, {:.2}s",
            r.max_abs_residual,
            r.trials,
            r.tolerance,
            t.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// End-to-end fixtures
// ---------------------------------------------------------------------------

fn gauss_class(mean: [f64; 2]) -> GaussClass<f64> {
    GaussClass {
        mean: mean.to_vec(),
        cov: CovSpec::Spherical(1.0),
        prior: 1.0,
    }
}

/// Three unit-variance known classes and one augmented class on square
/// corners, every pair of means at least six standard deviations apart.
fn gauss_sources() -> (GaussMixSpec<f64>, GaussMixSpec<f64>) {
    let kcl = GaussMixSpec {
        classes: vec![
            gauss_class([0.0, 0.0]),
            gauss_class([6.0, 0.0]),
            gauss_class([0.0, 6.0]),
        ],
    };
    let ac = GaussMixSpec {
        classes: vec![gauss_class([6.0, 6.0])],
    };
    (kcl, ac)
}

fn gauss_cfg() -> ExperimentConfig<f64> {
    let (kcl, ac) = gauss_sources();
    ExperimentConfig {
        dataset: DatasetSpec::Synthetic {
            kcl: SourceDist::Gauss(kcl),
            ac: SourceDist::Gauss(ac),
        },
        known_classes: vec![],
        augmented_classes: vec![],
        theta: 0.75,
        eta: 1.0,
        mu: 1.0,
        n_kcl: Some(3000),
        n_u: Some(3000),
        n_test: 10_000,
        loss: SurrogateLoss::unit(LossKind::Square),
        model: Arch::Linear,
        train: TrainSpec::form_only(RiskForm::CllacConvex),
        seed: 42,
    }
}

#[test]
fn ac07_gaussian_end_to_end_tracks_the_bayes_ceiling() {
    let t = Instant::now();
    let cfg = gauss_cfg();

    // Separation precondition: every pair of component means is at least six
    // standard deviations apart (sigma is 1 throughout).
    let (kcl, ac) = gauss_sources();
    let means: Vec<&Vec<f64>> = kcl
        .classes
        .iter()
        .chain(ac.classes.iter())
        .map(|c| &c.mean)
        .collect();
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d2: f64 = (0..2).map(|a| (means[i][a] - means[j][a]).powi(2)).sum();
            assert!(d2.sqrt() >= 6.0, "means {i} and {j} are too close");
        }
    }

    let outcome = experiment::run(&cfg).unwrap();
    let m = &outcome.report.metrics;

    // Ceiling: the exact posterior scorer on the same drawn test set.
    let spec = MixtureSpec {
        theta: cfg.theta,
        kcl: SourceDist::Gauss(kcl),
        ac: SourceDist::Gauss(ac),
    };
    let scorer = GaussBayesScorer::new(&spec).unwrap();
    let prepared = experiment::prepare(&cfg).unwrap();
    let bayes = evaluate(&scorer, &prepared.test, DecisionRule::Full).unwrap();

    // Complementary-only baseline: trained without unlabeled data and decided
    // over known classes only, so it can never flag the augmented class.
    let mut baseline_cfg = gauss_cfg();
    baseline_cfg.loss = SurrogateLoss::unit(LossKind::Logistic);
    baseline_cfg.train = TrainSpec::form_only(RiskForm::ClGeneral);
    let baseline = experiment::run(&baseline_cfg).unwrap();

    let secs = t.elapsed().as_secs_f64();
    let ok = m.overall >= 0.90
        && m.ac_recall >= 0.90
        && m.overall >= bayes.accuracy - 0.06
        && baseline.report.metrics.ac_recall == 0.0
        && secs < 30.0;
    report(
        "AC-7",
        "gaussian end-to-end vs posterior ceiling",
        ok,
        &format!(
            "overall {:.4}, ac_recall {:.4}, ceiling {:.4}, baseline ac_recall {:.4}, {secs:.1}s",
            m.overall, m.ac_recall, bayes.accuracy, baseline.report.metrics.ac_recall
        ),
    );
}

// ---------------------------------------------------------------------------
// Image corpus
// ---------------------------------------------------------------------------

/// One 28x28 image: a class-specific stroke (horizontal bar, vertical bar,
/// square ring, or X) at random intensity and offset over uniform noise.
fn glyph(class: usize, rng: &mut impl Rng) -> Vec<u8> {
    let mut img: Vec<u8> = (0..28 * 28).map(|_| rng.gen_range(0..=30)).collect();
    let dx = rng.gen_range(-3i32..=3);
    let dy = rng.gen_range(-3i32..=3);
    let intensity = rng.gen_range(140..=255u8);
    let mut put = |r: i32, c: i32| {
        let (r, c) = (r + dy, c + dx);
        if (0..28).contains(&r) && (0..28).contains(&c) {
            img[(r * 28 + c) as usize] = intensity;
        }
    };
    match class {
        0 => {
            for r in 12..16 {
                for c in 4..24 {
                    put(r, c);
                }
            }
        }
        1 => {
            for r in 4..24 {
                for c in 12..16 {
                    put(r, c);
                }
            }
        }
        2 => {
            for r in 6..22 {
                for c in 6..22 {
                    if !(8..20).contains(&r) || !(8..20).contains(&c) {
                        put(r, c);
                    }
                }
            }
        }
        _ => {
            for i in 4..24 {
                for t in 0..2 {
                    put(i, i + t);
                    put(i, 27 - i + t);
                }
            }
        }
    }
    img
}

fn write_idx_pair(dir: &Path, prefix: &str, per_class: usize, seed_tag: &str) -> (PathBuf, PathBuf) {
    let mut rng = stream(81, seed_tag);
    let n = 4 * per_class;
    let mut images = Vec::with_capacity(16 + n * 28 * 28);
    images.extend_from_slice(&0x0803u32.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&28u32.to_be_bytes());
    images.extend_from_slice(&28u32.to_be_bytes());
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&0x0801u32.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for class in 0..4 {
        for _ in 0..per_class {
            images.extend_from_slice(&glyph(class, &mut rng));
            labels.push(class as u8);
        }
    }
    let ip = dir.join(format!("{prefix}-images.idx"));
    let lp = dir.join(format!("{prefix}-labels.idx"));
    std::fs::write(&ip, images).unwrap();
    std::fs::write(&lp, labels).unwrap();
    (ip, lp)
}

/// Returns the four IDX paths: real digits when `CLLAC_MNIST_DIR` is set, the
/// generated glyph corpus otherwise.
fn image_corpus(dir: &Path) -> ([PathBuf; 4], &'static str) {
    if let Some(root) = std::env::var_os("CLLAC_MNIST_DIR") {
        let root = PathBuf::from(root);
        let files = [
            root.join("train-images-idx3-ubyte"),
            root.join("train-labels-idx1-ubyte"),
            root.join("t10k-images-idx3-ubyte"),
            root.join("t10k-labels-idx1-ubyte"),
        ];
        for f in &files {
            assert!(f.exists(), "CLLAC_MNIST_DIR set but {} is missing", f.display());
        }
        (files, "mnist")
    } else {
        let (ti, tl) = write_idx_pair(dir, "train", 600, "glyph-train");
        let (ei, el) = write_idx_pair(dir, "test", 200, "glyph-test");
        ([ti, tl, ei, el], "glyphs")
    }
}

fn image_cfg(paths: &[PathBuf; 4], seed: u64) -> ExperimentConfig<f64> {
    let mut train = TrainSpec::form_only(RiskForm::CllacRewrite);
    train.epochs = Some(20);
    ExperimentConfig {
        dataset: DatasetSpec::Idx {
            train_images: paths[0].clone(),
            train_labels: paths[1].clone(),
            test_images: paths[2].clone(),
            test_labels: paths[3].clone(),
        },
        known_classes: vec![0, 1, 2],
        augmented_classes: vec![3],
        theta: 0.75,
        eta: 1.0,
        mu: 1.0,
        n_kcl: Some(900),
        n_u: Some(900),
        n_test: 2000,
        loss: SurrogateLoss::unit(LossKind::Sigmoid),
        model: Arch::Mlp { hidden: vec![128] },
        train,
        seed,
    }
}

#[test]
fn ac08_image_corpus_end_to_end_with_mlp() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (paths, corpus) = image_corpus(dir.path());

    let mut rows = Vec::new();
    let mut overalls = Vec::new();
    let mut all_ok = true;
    for seed in [1, 2, 3] {
        let outcome = experiment::run(&image_cfg(&paths, seed)).unwrap();
        let m = outcome.report.metrics;
        all_ok &= m.overall >= 0.90 && m.ac_recall >= 0.90;
        overalls.push(m.overall);
        rows.push(format!(
            "seed {seed}: overall {:.4} ac_recall {:.4}",
            m.overall, m.ac_recall
        ));
    }
    let mean = overalls.iter().sum::<f64>() / overalls.len() as f64;
    let std = (overalls.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
        / (overalls.len() - 1) as f64)
        .sqrt();

    let mut baseline_cfg = image_cfg(&paths, 1);
    baseline_cfg.loss = SurrogateLoss::unit(LossKind::Logistic);
    baseline_cfg.train = TrainSpec::form_only(RiskForm::ClGeneral);
    baseline_cfg.train.epochs = Some(10);
    let baseline = experiment::run(&baseline_cfg).unwrap();
    let baseline_recall = baseline.report.metrics.ac_recall;

    let secs = t.elapsed().as_secs_f64();
    let ok = all_ok && baseline_recall == 0.0 && secs < 600.0;
    report(
        "AC-8",
        "image corpus with a 128-unit MLP over three seeds",
        ok,
        &format!(
            "{corpus}: {}; mean {mean:.4} +- {std:.4}; baseline ac_recall \
             {baseline_recall:.4}, {secs:.0}s",
            rows.join("; ")
        ),
    );
}

#[test]
fn ac09_overestimated_mixture_weight_stays_robust() {
    let t = Instant::now();
    let values = [0.6, 1.0, 1.4, 1.8, 2.2, 2.6];
    let rows = experiment::sweep(&gauss_cfg(), SweepParameter::Eta, &values, 1).unwrap();
    let exact = rows[1].overall_accuracy;
    let max = rows
        .iter()
        .map(|r| r.overall_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let overshoot_ok = rows[1..]
        .iter()
        .all(|r| (r.overall_accuracy - exact).abs() <= 0.10);
    let secs = t.elapsed().as_secs_f64();
    let ok = max - exact <= 0.02 && overshoot_ok;
    report(
        "AC-9",
        "accuracy across assumed-weight scalings",
        ok,
        &format!(
            "{}; exact-weight 1.0 within 0.02 of max, overshoots within 0.10, {secs:.1}s",
            rows.iter()
                .map(|r| format!("{}:{:.4}", r.value, r.overall_accuracy))
                .collect::<Vec<_>>()
                .join(" "),
        ),
    );
}

#[test]
fn ac10_test_prior_shift_leaves_accuracy_stable() {
    let t = Instant::now();
    let values = [0.5, 1.0, 2.0, 4.0];
    let rows = experiment::sweep(&gauss_cfg(), SweepParameter::Mu, &values, 1).unwrap();
    let accs: Vec<f64> = rows.iter().map(|r| r.overall_accuracy).collect();
    let range = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let secs = t.elapsed().as_secs_f64();
    report(
        "AC-10",
        "one trained model under test-prior shift",
        range <= 0.05,
        &format!(
            "{}; accuracy range {range:.4} <= 0.05, {secs:.1}s",
            rows.iter()
                .map(|r| format!("{}:{:.4}", r.value, r.overall_accuracy))
                .collect::<Vec<_>>()
                .join(" "),
        ),
    );
}
