//! Self-verification suite: exact identity checks on random instances,
//! Monte-Carlo unbiasedness of the empirical estimator, finite-difference
//! gradient checks, Bayes-rule references, and negative controls that must
//! detect deliberately corrupted estimators.
//!
//! Everything here runs at f64; the tolerances are calibrated for that
//! precision. All checks are deterministic given their seed.

use serde::Serialize;

use crate::dists::{
    mixture, sample_complementary, sample_unlabeled, FiniteJoint, GaussSampler, MixtureSpec,
    SourceDist,
};
use crate::losses::{LossKind, SurrogateLoss};
use crate::model::{Arch, OvrModel, Scorer};
use crate::num::Accumulator;
use crate::risks::{
    cllac_bracket_grad, emp_risk, emp_risk_grad, exact_cl_risk, exact_cllac_risk,
    exact_supervised_risk, rewrite_expectation, unlabeled_term, unlabeled_term_grad, RiskContext,
    RiskData, RiskForm,
};
use crate::rng::stream;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Outcome of one verification check. `pass` holds exactly when
/// `max_abs_residual <= tolerance`.
#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub name: String,
    pub trials: usize,
    pub max_abs_residual: f64,
    /// Documentation-only checks carry an unbounded tolerance, which JSON
    /// renders as `null`.
    pub tolerance: f64,
    pub pass: bool,
    pub notes: String,
}

impl VerificationReport {
    fn new(name: &str, trials: usize, residual: f64, tolerance: f64, notes: String) -> Self {
        VerificationReport {
            name: name.to_string(),
            trials,
            max_abs_residual: residual,
            tolerance,
            pass: residual <= tolerance,
            notes,
        }
    }
}

// --------------------------------------------------------------------------
// Random instance generation
// --------------------------------------------------------------------------

/// Exponential draws normalized by the joint constructor: a symmetric
/// simplex draw over the probability table.
fn random_joint(rng: &mut ChaCha8Rng, m: usize, labels: usize, d: usize) -> FiniteJoint<f64> {
    let support: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mass: Vec<f64> = (0..m * labels)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
        .collect();
    FiniteJoint::new(support, mass, labels).unwrap()
}

fn random_spec(rng: &mut ChaCha8Rng, m: usize, k: usize, d: usize, theta: f64) -> MixtureSpec<f64> {
    MixtureSpec {
        theta,
        kcl: SourceDist::Finite(random_joint(rng, m, k, d)),
        ac: SourceDist::Finite(random_joint(rng, m.max(3) - 1, 1, d)),
    }
}

/// Linear scorer with moderate coefficients, keeping scores in roughly
/// [-2, 2] on the unit-box supports above.
fn random_linear(rng: &mut ChaCha8Rng, k: usize, d: usize) -> OvrModel<f64> {
    let n = Arch::Linear.param_count(k, d);
    let params = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    OvrModel::from_params(Arch::Linear, k, d, params).unwrap()
}

// --------------------------------------------------------------------------
// Identity checks
// --------------------------------------------------------------------------

/// Checks that the rewritten mixture risk equals the supervised risk of the
/// exact test joint on random finite instances. The first trials pin the
/// mixture weight to 0 and 1 so the degenerate mixtures are always covered.
pub fn verify_rewrite_identity(trials: usize, seed: u64, tol: f64) -> Result<VerificationReport> {
    if trials == 0 {
        return Err(Error::invalid("verification needs at least one trial"));
    }
    let mut rng = stream(seed, "verify-rewrite");
    let mut max_res = 0.0f64;
    for trial in 0..trials {
        let k = 2 + trial % 3;
        let m = 2 + trial % 7;
        let d = 1 + trial % 3;
        let theta = match trial {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.0..=1.0),
        };
        let spec = random_spec(&mut rng, m, k, d, theta);
        let f = random_linear(&mut rng, k, d);
        let kind = if trial % 2 == 0 { LossKind::Square } else { LossKind::Logistic };
        let loss = SurrogateLoss::unit(kind);
        let lhs = exact_cllac_risk(RiskForm::CllacRewrite, &f, &spec, &loss)?;
        let rhs = exact_supervised_risk(&f, &mixture(&spec)?, &loss)?;
        max_res = max_res.max((lhs - rhs).abs());
    }
    Ok(VerificationReport::new(
        "rewrite_identity",
        trials,
        max_res,
        tol,
        "rewritten mixture risk vs supervised risk of the exact test joint".into(),
    ))
}

/// Checks the generic expectation rewrite on random per-label tables:
/// the complementary-weighted bracket must reproduce the direct expectation.
pub fn verify_rewrite_expectation(trials: usize, seed: u64) -> Result<VerificationReport> {
    if trials == 0 {
        return Err(Error::invalid("verification needs at least one trial"));
    }
    let mut rng = stream(seed, "verify-table");
    let mut max_res = 0.0f64;
    for trial in 0..trials {
        let k = 2 + trial % 4;
        let m = 2 + trial % 7;
        let joint = random_joint(&mut rng, m, k, 1);
        let table: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let direct: f64 = (0..m)
            .map(|i| (0..k).map(|y| joint.prob(i, y) * table[i][y]).sum::<f64>())
            .sum();
        let rewritten = rewrite_expectation(&table, &joint)?;
        max_res = max_res.max((direct - rewritten).abs());
    }
    Ok(VerificationReport::new(
        "rewrite_expectation",
        trials,
        max_res,
        1e-12,
        "per-label tables: complementary bracket vs direct expectation".into(),
    ))
}

/// Checks the symmetric-loss simplification: the complementary estimator
/// with its additive constants equals the direct expectation of the
/// normalized per-label loss, for both symmetric losses at scales 1 and 2.5.
pub fn verify_symmetric_simplification(trials: usize, seed: u64) -> Result<VerificationReport> {
    if trials == 0 {
        return Err(Error::invalid("verification needs at least one trial"));
    }
    let mut rng = stream(seed, "verify-symmetric");
    let mut max_res = 0.0f64;
    for trial in 0..trials {
        let k = 2 + trial % 3;
        let m = 2 + trial % 5;
        let joint = random_joint(&mut rng, m, k, 2);
        let f = random_linear(&mut rng, k, 2);
        let kind = if trial % 2 == 0 { LossKind::Ramp } else { LossKind::Sigmoid };
        let scale = if trial % 4 < 2 { 1.0 } else { 2.5 };
        let loss = SurrogateLoss::new(kind, scale)?;
        let lhs = exact_cl_risk(RiskForm::ClSymmetric, &f, &joint, &loss)?;
        // Direct side: E_p[phi(f_y) + (1/(K-1)) sum_{j != y} phi(-f_j)].
        let mut rhs = 0.0;
        for i in 0..m {
            let s = f.scores(joint.support_row(i));
            for y in 0..k {
                let mut l = loss.eval(s[y]);
                for (j, &sj) in s.iter().enumerate().take(k) {
                    if j != y {
                        l += loss.eval(-sj) / (k - 1) as f64;
                    }
                }
                rhs += joint.prob(i, y) * l;
            }
        }
        max_res = max_res.max((lhs - rhs).abs());
    }
    Ok(VerificationReport::new(
        "symmetric_simplification",
        trials,
        max_res,
        1e-10,
        "complementary estimator with constants vs direct normalized loss".into(),
    ))
}

/// Compares the algebraic rearrangements against the canonical rewrite:
/// the compact form must match for every loss, the convex form for
/// linear-odd losses, and the reduced form's deviation is reported as
/// documentation (its report never fails, but the notes record the observed
/// gap, which must be generically nonzero).
pub fn verify_compact_forms(trials: usize, seed: u64) -> Result<Vec<VerificationReport>> {
    if trials == 0 {
        return Err(Error::invalid("verification needs at least one trial"));
    }
    let mut rng = stream(seed, "verify-compact");
    let mut max_compact = 0.0f64;
    let mut max_convex = 0.0f64;
    let mut max_reduced = 0.0f64;
    let mut min_reduced_generic = f64::INFINITY;
    for trial in 0..trials {
        let k = 2 + trial % 3;
        let m = 2 + trial % 5;
        let theta = rng.gen_range(0.1..=1.0);
        let spec = random_spec(&mut rng, m, k, 2, theta);
        let f = random_linear(&mut rng, k, 2);
        let kinds = [LossKind::Square, LossKind::Logistic, LossKind::Ramp, LossKind::Sigmoid];
        let kind = kinds[trial % 4];
        let scale = if trial % 2 == 0 { 1.0 } else { 2.5 };
        let loss = SurrogateLoss::new(kind, scale)?;
        let rw = exact_cllac_risk(RiskForm::CllacRewrite, &f, &spec, &loss)?;
        let cp = exact_cllac_risk(RiskForm::CllacCompact, &f, &spec, &loss)?;
        max_compact = max_compact.max((rw - cp).abs());
        let rd = exact_cllac_risk(RiskForm::CllacReduced, &f, &spec, &loss)?;
        max_reduced = max_reduced.max((rw - rd).abs());
        min_reduced_generic = min_reduced_generic.min((rw - rd).abs());
        let unit = SurrogateLoss::unit(if trial % 2 == 0 {
            LossKind::Square
        } else {
            LossKind::Logistic
        });
        let rw1 = exact_cllac_risk(RiskForm::CllacRewrite, &f, &spec, &unit)?;
        let cv = exact_cllac_risk(RiskForm::CllacConvex, &f, &spec, &unit)?;
        max_convex = max_convex.max((rw1 - cv).abs());
    }
    Ok(vec![
        VerificationReport::new(
            "compact_form_equivalence",
            trials,
            max_compact,
            1e-12,
            "compact expansion vs canonical rewrite, all losses".into(),
        ),
        VerificationReport::new(
            "convex_form_equivalence",
            trials,
            max_convex,
            1e-10,
            "score substitution vs canonical rewrite, linear-odd losses".into(),
        ),
        VerificationReport::new(
            "reduced_form_deviation",
            trials,
            max_reduced,
            f64::INFINITY,
            format!(
                "documented bias of the reduced form: deviation from the rewrite \
                 in [{min_reduced_generic:.3e}, {max_reduced:.3e}] across generic trials; \
                 zero only when the known-class odd differences have zero expectation"
            ),
        ),
    ])
}

// --------------------------------------------------------------------------
// Gradient checks
// --------------------------------------------------------------------------

/// Central-difference check of the analytic empirical gradients: every
/// trainable form (plus the supervised reference) on both architectures, 20
/// random coordinates each, relative error at most 1e-4.
pub fn verify_gradients(seed: u64) -> Result<VerificationReport> {
    let mut rng = stream(seed, "verify-grad");
    let k = 3;
    let d = 2;
    let n = 12;
    let cl = crate::dists::ComplementaryDataset {
        features: (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect(),
        labels: (0..n).map(|_| rng.gen_range(0..k)).collect(),
        k,
    };
    let u = crate::dists::UnlabeledDataset {
        features: (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect(),
    };
    let t = crate::dists::TestDataset {
        features: (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect(),
        labels: (0..n).map(|_| rng.gen_range(0..=k)).collect(),
        k,
    };
    let sig = SurrogateLoss::unit(LossKind::Sigmoid);
    let cases: [(RiskForm, SurrogateLoss<f64>, RiskData<'_, f64>); 7] = [
        (RiskForm::CllacRewrite, sig, RiskData::cllac(&cl, &u)),
        (RiskForm::CllacCompact, sig, RiskData::cllac(&cl, &u)),
        (RiskForm::CllacReduced, sig, RiskData::cllac(&cl, &u)),
        (
            RiskForm::CllacConvex,
            SurrogateLoss::unit(LossKind::Square),
            RiskData::cllac(&cl, &u),
        ),
        (
            RiskForm::ClGeneral,
            SurrogateLoss::unit(LossKind::Logistic),
            RiskData::cl_only(&cl),
        ),
        (RiskForm::ClSymmetric, sig, RiskData::cl_only(&cl)),
        (
            RiskForm::SupervisedOvr,
            SurrogateLoss::unit(LossKind::Square),
            RiskData::labeled(&t),
        ),
    ];
    let mut max_rel = 0.0f64;
    let mut trials = 0usize;
    for arch in [Arch::Linear, Arch::Mlp { hidden: vec![5] }] {
        for (form, loss, data) in &cases {
            let model = OvrModel::new(arch.clone(), k, d, rng.gen()).unwrap();
            let ctx = RiskContext::new(k, 0.7, *loss)?;
            let (_, grad) = emp_risk_grad(*form, &model, data, &ctx)?;
            let h = 1e-6;
            for _ in 0..20 {
                let p = rng.gen_range(0..grad.len());
                let mut up = model.clone();
                up.params_mut()[p] += h;
                let mut dn = model.clone();
                dn.params_mut()[p] -= h;
                let num = (emp_risk(*form, &up, data, &ctx)? - emp_risk(*form, &dn, data, &ctx)?)
                    / (2.0 * h);
                let rel = (num - grad[p]).abs() / (1e-6 + grad[p].abs().max(num.abs()));
                max_rel = max_rel.max(rel);
                trials += 1;
            }
        }
    }
    Ok(VerificationReport::new(
        "gradient_check",
        trials,
        max_rel,
        1e-4,
        "central differences vs analytic gradients, all forms x both architectures".into(),
    ))
}

// --------------------------------------------------------------------------
// Monte-Carlo unbiasedness
// --------------------------------------------------------------------------

/// Mean and spread of the empirical estimator at one sample size.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct UnbiasednessRow {
    pub n: usize,
    pub mean: f64,
    pub stddev: f64,
    /// Standard error of the mean over the repeats.
    pub se: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct UnbiasednessReport {
    pub exact: f64,
    pub rows: Vec<UnbiasednessRow>,
    /// Least-squares slope of log RMSE against log n.
    pub slope: f64,
    pub pass: bool,
    pub notes: String,
}

impl UnbiasednessReport {
    pub fn as_report(&self, name: &str) -> VerificationReport {
        let max_dev = self
            .rows
            .iter()
            .map(|r| (r.mean - self.exact).abs())
            .fold(0.0, f64::max);
        VerificationReport {
            name: name.to_string(),
            trials: self.rows.len(),
            max_abs_residual: max_dev,
            tolerance: if self.pass { f64::MAX } else { 0.0 },
            pass: self.pass,
            notes: format!("{} (slope {:.3})", self.notes, self.slope),
        }
    }
}

/// Draws `repeats` independent dataset pairs at each size in `n_list`,
/// estimates the risk, and checks that the mean stays within three standard
/// errors of the exact value while the RMSE shrinks at the Monte-Carlo rate
/// (log-log slope within [-0.6, -0.4]).
pub fn verify_unbiasedness(
    spec: &MixtureSpec<f64>,
    f: &OvrModel<f64>,
    loss: &SurrogateLoss<f64>,
    form: RiskForm,
    n_list: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<UnbiasednessReport> {
    if n_list.is_empty() || n_list.iter().any(|&n| n == 0) {
        return Err(Error::invalid("sample sizes must be positive and non-empty"));
    }
    if repeats < 2 {
        return Err(Error::invalid("at least two repeats are needed for a spread"));
    }
    let exact = exact_cllac_risk(form, f, spec, loss)?;
    let ctx = RiskContext::new(spec.k(), spec.theta, *loss)?;
    let mut rows = Vec::with_capacity(n_list.len());
    let mut within = true;
    for (ni, &n) in n_list.iter().enumerate() {
        let mut mean_acc = Accumulator::new();
        let mut sq_acc = Accumulator::new();
        for rep in 0..repeats {
            let draw_seed = seed
                .wrapping_add(1 + ni as u64)
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(rep as u64);
            let cl = sample_complementary(&spec.kcl, n, draw_seed)?;
            let u = sample_unlabeled(spec, n, draw_seed)?;
            let est = emp_risk(form, f, &RiskData::cllac(&cl, &u), &ctx)?;
            mean_acc.add(est);
            sq_acc.add((est - exact) * (est - exact));
        }
        let mean = mean_acc.total() / repeats as f64;
        let mse = sq_acc.total() / repeats as f64;
        let var = (mse - (mean - exact) * (mean - exact)).max(0.0);
        let stddev = var.sqrt();
        let se = stddev / (repeats as f64).sqrt();
        if (mean - exact).abs() > 3.0 * se {
            within = false;
        }
        rows.push(UnbiasednessRow {
            n,
            mean,
            stddev,
            se,
            rmse: mse.sqrt(),
        });
    }
    let slope = loglog_slope(&rows);
    let slope_ok = n_list.len() < 2 || (-0.6..=-0.4).contains(&slope);
    Ok(UnbiasednessReport {
        exact,
        rows,
        slope,
        pass: within && slope_ok,
        notes: format!(
            "{} at theta {}: mean within 3 SE at every n: {}; slope in [-0.6, -0.4]: {}",
            form.tag(),
            spec.theta,
            within,
            slope_ok
        ),
    })
}

fn loglog_slope(rows: &[UnbiasednessRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.rmse > 0.0)
        .map(|r| ((r.n as f64).ln(), r.rmse.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    num / den
}

// --------------------------------------------------------------------------
// Bayes references
// --------------------------------------------------------------------------

/// Bayes rule of a finite joint: per support point the most probable label
/// (smallest index on ties), and the zero-one risk of that rule. Support
/// points with zero instance marginal have no decision and are noted.
#[derive(Clone, Debug, Serialize)]
pub struct BayesReference {
    pub decisions: Vec<Option<usize>>,
    pub risk: f64,
    pub notes: String,
}

pub fn bayes_reference(p_te: &FiniteJoint<f64>) -> BayesReference {
    let mut decisions = Vec::with_capacity(p_te.m());
    let mut risk = Accumulator::new();
    let mut skipped = 0usize;
    for i in 0..p_te.m() {
        let marg = p_te.x_marginal(i);
        if marg <= 0.0 {
            decisions.push(None);
            skipped += 1;
            continue;
        }
        let mut best = 0usize;
        for y in 1..p_te.labels() {
            if p_te.prob(i, y) > p_te.prob(i, best) {
                best = y;
            }
        }
        decisions.push(Some(best));
        risk.add(marg - p_te.prob(i, best));
    }
    BayesReference {
        decisions,
        risk: risk.total(),
        notes: if skipped == 0 {
            "all support points decided".into()
        } else {
            format!("{skipped} zero-marginal support points skipped")
        },
    }
}

/// The exact posterior scorer for Gaussian mixture data: known class `y`
/// scores `ln(theta * pi_y) + ln N(x; mu_y, Sigma_y)`, the augmented output
/// scores the log of the augmented component's share. Its argmax is the
/// Bayes rule, which makes it the accuracy ceiling for trained models.
pub struct GaussBayesScorer {
    kcl: GaussSampler<f64>,
    ac: GaussSampler<f64>,
    k: usize,
    log_theta: f64,
    log_ac: f64,
}

impl GaussBayesScorer {
    pub fn new(spec: &MixtureSpec<f64>) -> Result<Self> {
        spec.validate()?;
        let (kcl, ac) = match (&spec.kcl, &spec.ac) {
            (SourceDist::Gauss(kcl), SourceDist::Gauss(ac)) => (kcl.sampler()?, ac.sampler()?),
            _ => {
                return Err(Error::invalid(
                    "the posterior scorer needs gaussian sources; use the finite \
                     Bayes reference for enumerable joints",
                ))
            }
        };
        Ok(GaussBayesScorer {
            k: spec.k(),
            kcl,
            ac,
            log_theta: spec.theta.ln(),
            log_ac: (1.0 - spec.theta).ln(),
        })
    }
}

impl Scorer<f64> for GaussBayesScorer {
    fn outputs(&self) -> usize {
        self.k + 1
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.k + 1);
        for y in 0..self.k {
            s.push(self.log_theta + self.kcl.prior(y).ln() + self.kcl.log_pdf(y, x));
        }
        s.push(self.log_ac + self.ac.log_density(x));
        s
    }
}

// --------------------------------------------------------------------------
// Classifier consistency
// --------------------------------------------------------------------------

/// One free score per (support point, output): the most expressive model a
/// finite joint admits.
struct TabularScores {
    support: Vec<Vec<f64>>,
    table: Vec<Vec<f64>>,
}

impl Scorer<f64> for TabularScores {
    fn outputs(&self) -> usize {
        self.table[0].len()
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        // Supports are copied bit-exactly from the joint, so equality is safe.
        let i = self
            .support
            .iter()
            .position(|row| row.as_slice() == x)
            .expect("x not on the support");
        self.table[i].clone()
    }
}

/// Minimizing the rewritten risk over tabular scores must recover the Bayes
/// rule: full-batch gradient descent on the exact weighted risk of five
/// fixed random joints, then the zero-one risk of the trained argmax must
/// come within 0.01 of the Bayes reference risk. Fixtures are drawn with a
/// posterior margin of at least 0.05 so the target rule is stable.
pub fn verify_bayes_consistency(seed: u64) -> Result<VerificationReport> {
    let mut rng = stream(seed, "verify-bayes");
    let loss = SurrogateLoss::unit(LossKind::Square);
    let mut max_gap = 0.0f64;
    for fixture in 0..5 {
        let (spec, te) = loop {
            let k = 2 + fixture % 3;
            let m = 4 + fixture % 3;
            let theta = rng.gen_range(0.3..0.8);
            let spec = random_spec(&mut rng, m, k, 1, theta);
            let te = mixture(&spec)?;
            if bayes_margin(&te) >= 0.05 {
                break (spec, te);
            }
        };
        let k = spec.k();
        let kcl = spec.kcl.as_finite().unwrap();
        let pbar = kcl.complementary()?;
        let mut scorer = TabularScores {
            support: (0..te.m()).map(|i| te.support_row(i).to_vec()).collect(),
            table: vec![vec![0.0; k + 1]; te.m()],
        };
        // Full-batch gradient descent on the exact weighted risk. The
        // objective is quadratic in each score, so fixed steps converge.
        let lr = 0.5;
        for _ in 0..4000 {
            let mut grad = vec![vec![0.0; k + 1]; te.m()];
            for i in 0..pbar.m() {
                for ybar in 0..k {
                    let w = spec.theta * pbar.prob(i, ybar);
                    cllac_bracket_grad(
                        RiskForm::CllacRewrite,
                        &loss,
                        k,
                        &scorer.table[i],
                        ybar,
                        w,
                        &mut grad[i],
                    );
                }
            }
            for i in 0..te.m() {
                unlabeled_term_grad(&loss, k, &scorer.table[i], te.x_marginal(i), &mut grad[i]);
            }
            for (row, g) in scorer.table.iter_mut().zip(&grad) {
                for (s, &gi) in row.iter_mut().zip(g) {
                    *s -= lr * gi;
                }
            }
        }
        let reference = bayes_reference(&te);
        let mut trained_risk = Accumulator::new();
        for i in 0..te.m() {
            let marg = te.x_marginal(i);
            if marg <= 0.0 {
                continue;
            }
            let s = &scorer.table[i];
            let mut best = 0usize;
            for y in 1..=k {
                if s[y] > s[best] {
                    best = y;
                }
            }
            trained_risk.add(marg - te.prob(i, best));
        }
        let gap = trained_risk.total() - reference.risk;
        max_gap = max_gap.max(gap);
    }
    Ok(VerificationReport::new(
        "bayes_consistency",
        5,
        max_gap,
        0.01,
        "tabular risk minimization reaches the Bayes zero-one risk".into(),
    ))
}

/// Smallest posterior gap between the best and second-best label over
/// support points with nonnegligible mass.
fn bayes_margin(te: &FiniteJoint<f64>) -> f64 {
    let mut margin = f64::INFINITY;
    for i in 0..te.m() {
        let marg = te.x_marginal(i);
        if marg <= 1e-9 {
            continue;
        }
        let mut best = 0.0f64;
        let mut second = 0.0f64;
        for y in 0..te.labels() {
            let p = te.prob(i, y) / marg;
            if p > best {
                second = best;
                best = p;
            } else if p > second {
                second = p;
            }
        }
        margin = margin.min(best - second);
    }
    margin
}

// --------------------------------------------------------------------------
// Negative controls
// --------------------------------------------------------------------------

/// Deliberately corrupted estimators must be caught: a shifted mixture
/// weight must break the rewrite identity, the estimator with its
/// known-class correction dropped must fail the unbiasedness test, and the
/// property gates must reject mismatched losses. This report passes when
/// every corruption is detected.
pub fn verify_negative_controls(seed: u64) -> Result<VerificationReport> {
    let mut rng = stream(seed, "verify-controls");
    let mut notes = Vec::new();
    let mut all_detected = true;

    // Corrupted mixture weight: evaluating the estimator as if theta were
    // 0.1 larger must move the value away from the supervised risk.
    let spec = random_spec(&mut rng, 4, 3, 2, 0.5);
    let f = random_linear(&mut rng, 3, 2);
    let loss = SurrogateLoss::unit(LossKind::Logistic);
    let mut corrupted = spec.clone();
    corrupted.theta = 0.6;
    let lhs = exact_cllac_risk(RiskForm::CllacRewrite, &f, &corrupted, &loss)?;
    let rhs = exact_supervised_risk(&f, &mixture(&spec)?, &loss)?;
    let theta_residual = (lhs - rhs).abs();
    let theta_detected = theta_residual > 1e-4;
    all_detected &= theta_detected;
    notes.push(format!(
        "shifted theta residual {theta_residual:.3e} (detected: {theta_detected})"
    ));

    // Ablated estimator: dropping the subtracted known-class term of the
    // bracket re-biases the augmented part by theta * E[l_ac]; the
    // unbiasedness test must fail on it.
    let model = random_linear(&mut rng, 3, 2);
    let spec = random_spec(&mut rng, 4, 3, 2, 0.6);
    let loss = SurrogateLoss::unit(LossKind::Square);
    let exact = exact_cllac_risk(RiskForm::CllacRewrite, &model, &spec, &loss)?;
    let ctx = RiskContext::new(3, spec.theta, loss)?;
    let repeats = 100;
    let n = 10_000;
    let mut mean_acc = Accumulator::new();
    let mut sq_acc = Accumulator::new();
    for rep in 0u64..repeats {
        let cl = sample_complementary(&spec.kcl, n, seed.wrapping_add(1000 + rep))?;
        let u = sample_unlabeled(&spec, n, seed.wrapping_add(1000 + rep))?;
        let base = emp_risk(RiskForm::CllacRewrite, &model, &RiskData::cllac(&cl, &u), &ctx)?;
        // Add back the dropped correction: + theta * mean_cl[l_ac(x)].
        let mut add = Accumulator::new();
        for x in &cl.features {
            let s = model.scores(x);
            add.add(unlabeled_term(&loss, 3, &s));
        }
        let ablated = base + spec.theta * add.total() / n as f64;
        mean_acc.add(ablated);
        sq_acc.add(ablated * ablated);
    }
    let mean = mean_acc.total() / repeats as f64;
    let var = (sq_acc.total() / repeats as f64 - mean * mean).max(0.0);
    let se = (var / repeats as f64).sqrt();
    let bias_detected = (mean - exact).abs() > 3.0 * se;
    all_detected &= bias_detected;
    notes.push(format!(
        "ablated estimator deviates {:.3e} ({}x SE) (detected: {bias_detected})",
        (mean - exact).abs(),
        ((mean - exact).abs() / se.max(f64::MIN_POSITIVE)) as u64,
    ));

    // Property gates: a non-symmetric loss in the symmetric estimator and a
    // non-linear-odd loss in the convex form are configuration errors.
    let sq_ctx = RiskContext::new(3, 0.5, SurrogateLoss::unit(LossKind::Square))?;
    let ramp_ctx = RiskContext::new(3, 0.5, SurrogateLoss::unit(LossKind::Ramp))?;
    let gates_detected = sq_ctx.check_form(RiskForm::ClSymmetric).is_err()
        && ramp_ctx.check_form(RiskForm::CllacConvex).is_err();
    all_detected &= gates_detected;
    notes.push(format!("property gates reject mismatches: {gates_detected}"));

    Ok(VerificationReport {
        name: "negative_controls".into(),
        trials: 3,
        max_abs_residual: if all_detected { 0.0 } else { 1.0 },
        tolerance: 0.5,
        pass: all_detected,
        notes: notes.join("; "),
    })
}

// --------------------------------------------------------------------------
// Full suite
// --------------------------------------------------------------------------

/// Runs every check with its standard parameters. The CLI surfaces this as
/// one JSON array; any failing must-pass check is a verification failure.
pub fn run_all(seed: u64) -> Result<Vec<VerificationReport>> {
    let mut reports = vec![
        verify_rewrite_identity(200, seed, 1e-10)?,
        verify_rewrite_expectation(200, seed)?,
        verify_symmetric_simplification(100, seed)?,
    ];
    reports.extend(verify_compact_forms(200, seed)?);
    reports.push(verify_gradients(seed)?);
    let mut rng = stream(seed, "verify-unbiased-fixture");
    let spec = random_spec(&mut rng, 4, 3, 2, 0.6);
    let model = random_linear(&mut rng, 3, 2);
    let loss = SurrogateLoss::unit(LossKind::Square);
    let unb = verify_unbiasedness(
        &spec,
        &model,
        &loss,
        RiskForm::CllacRewrite,
        &[100, 1000, 10_000],
        200,
        seed,
    )?;
    reports.push(unb.as_report("unbiasedness"));
    reports.push(verify_bayes_consistency(seed)?);
    reports.push(verify_negative_controls(seed)?);
    Ok(reports)
}
