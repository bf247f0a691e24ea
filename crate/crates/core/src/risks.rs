//! Risk forms and their exact and empirical evaluators.
//!
//! The per-label loss underneath every form is the one-versus-rest
//! composite over `C` components,
//!
//! ```text
//! l(j, F(x)) = phi(f_j(x)) + sum_{c != j} phi(-f_c(x)),
//! ```
//!
//! with `C = K + 1` when the augmented-class output participates and
//! `C = K` for the complementary-label-only baselines.
//!
//! The central identity turns an expectation under a joint `p` over `K`
//! classes into one under its complementary joint `pbar`:
//!
//! ```text
//! E_p[t(x, y)] = E_pbar[ -(K - 1) * t(x, ybar) + sum_j t(x, j) ]
//! ```
//!
//! for any per-(instance, label) table `t` ([`rewrite_expectation`]).
//! Applying it to the known-class part of the test mixture
//! `p_te = theta * p_kcl + (1 - theta) * p_ac` expresses the full
//! `(K + 1)`-way risk through quantities estimable from complementary labels
//! and unlabeled mixture draws alone; the remaining augmented term uses
//! `(1 - theta) * E_ac[.] = E_te[.] - theta * E_kcl[.]`. The risk forms are
//! algebraic rearrangements of that estimator (plus the supervised and
//! CL-only references), all sharing one weighted evaluation kernel so the
//! exact evaluators and the empirical estimator agree bit-for-bit when the
//! empirical weights are set to the joint probabilities.

use serde::{Deserialize, Serialize};

use crate::dists::{mixture, ComplementaryDataset, FiniteJoint, MixtureSpec, TestDataset, UnlabeledDataset};
use crate::losses::{check_property, LossProperty, PropertyKind, SurrogateLoss};
use crate::model::{OvrModel, Scorer};
use crate::num::{Accumulator, Real};
use crate::{Error, Result};

/// The estimator family. Tags (`snake_case` of the variant name) appear in
/// configs and JSON reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskForm {
    /// Fully supervised `(K + 1)`-way one-versus-rest risk under the test
    /// joint; the reference the other forms are checked against.
    SupervisedOvr,
    /// `K`-class risk rewritten through the complementary joint via the
    /// generic rewrite identity; no unlabeled data, no augmented output.
    ClGeneral,
    /// `K`-class complementary risk for symmetric losses:
    /// `(K - 1) * E_pbar[Lbar] - K * scale + 2 * scale`, where the per-label
    /// losses carry a `1 / (K - 1)` normalization on their complement sums.
    ClSymmetric,
    /// Canonical rewritten risk for the augmented-class setting: the rewrite
    /// identity applied to the known-class part of the mixture plus the
    /// unlabeled-minus-known correction for the augmented term.
    CllacRewrite,
    /// [`CllacRewrite`](Self::CllacRewrite) with the complementary bracket
    /// expanded and collapsed; algebraically identical for every loss.
    CllacCompact,
    /// [`CllacCompact`](Self::CllacCompact) minus the known-class
    /// odd-difference sum `sum_j (phi(f_j) - phi(-f_j))`. Not an unbiased
    /// rewrite in general; kept so its deviation can be measured. Equals the
    /// other forms when that sum has zero complementary expectation (e.g.
    /// the all-zero scorer).
    CllacReduced,
    /// [`CllacCompact`](Self::CllacCompact) with the odd differences
    /// collapsed to plain scores, which is valid exactly for linear-odd
    /// losses; convex whenever the loss is convex.
    CllacConvex,
}

impl RiskForm {
    pub const ALL: [RiskForm; 7] = [
        RiskForm::SupervisedOvr,
        RiskForm::ClGeneral,
        RiskForm::ClSymmetric,
        RiskForm::CllacRewrite,
        RiskForm::CllacCompact,
        RiskForm::CllacReduced,
        RiskForm::CllacConvex,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            RiskForm::SupervisedOvr => "supervised_ovr",
            RiskForm::ClGeneral => "cl_general",
            RiskForm::ClSymmetric => "cl_symmetric",
            RiskForm::CllacRewrite => "cllac_rewrite",
            RiskForm::CllacCompact => "cllac_compact",
            RiskForm::CllacReduced => "cllac_reduced",
            RiskForm::CllacConvex => "cllac_convex",
        }
    }

    /// Forms estimable from complementary labels plus unlabeled data.
    pub fn is_cllac(self) -> bool {
        matches!(
            self,
            RiskForm::CllacRewrite
                | RiskForm::CllacCompact
                | RiskForm::CllacReduced
                | RiskForm::CllacConvex
        )
    }

    /// Forms estimable from complementary labels alone (`K`-way head; the
    /// augmented output neither contributes nor receives gradient).
    pub fn is_cl_only(self) -> bool {
        matches!(self, RiskForm::ClGeneral | RiskForm::ClSymmetric)
    }

    /// Forms the trainer accepts (everything that does not need true labels).
    pub fn trainable(self) -> bool {
        self != RiskForm::SupervisedOvr
    }
}

/// Evaluation context: known-class count, the mixture weight the estimator
/// assumes (possibly a perturbed one), and the surrogate loss.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct RiskContext<T> {
    pub k: usize,
    pub theta: T,
    pub loss: SurrogateLoss<T>,
}

impl<T: Real> RiskContext<T> {
    pub fn new(k: usize, theta: T, loss: SurrogateLoss<T>) -> Result<Self> {
        let ctx = RiskContext { k, theta, loss };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("risk context needs at least 2 known classes"));
        }
        if !self.theta.is_finite() || self.theta < T::zero() || self.theta > T::one() {
            return Err(Error::invalid(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        if !self.loss.scale.is_finite() || self.loss.scale <= T::zero() {
            return Err(Error::invalid("loss scale must be finite and positive"));
        }
        Ok(())
    }

    /// Checks the structural requirements a form places on the loss:
    /// the symmetric-CL constants need a symmetric loss, and the convex form
    /// substitutes scores for odd differences, which needs a linear-odd
    /// loss. Residuals are probed on the default grid at tolerance 1e-9.
    pub fn check_form(&self, form: RiskForm) -> Result<()> {
        self.validate()?;
        let needs = match form {
            RiskForm::ClSymmetric => Some(PropertyKind::Symmetric),
            RiskForm::CllacConvex => Some(PropertyKind::LinearOdd),
            _ => None,
        };
        if let Some(kind) = needs {
            let check = check_property(&self.loss, &LossProperty::default_grid(kind))?;
            if !check.holds {
                return Err(Error::config(format!(
                    "{} requires a {} loss; {:?} (scale {}) violates it with residual {}",
                    form.tag(),
                    match kind {
                        PropertyKind::Symmetric => "symmetric",
                        PropertyKind::LinearOdd => "linear-odd",
                    },
                    self.loss.kind,
                    self.loss.scale,
                    check.max_residual,
                )));
            }
        }
        Ok(())
    }
}

// --------------------------------------------------------------------------
// Per-sample kernels
// --------------------------------------------------------------------------

/// One-versus-rest composite loss of label `j` over `comps` score components.
fn ovr_term<T: Real>(loss: &SurrogateLoss<T>, s: &[T], comps: usize, j: usize) -> T {
    let mut v = loss.eval(s[j]);
    for (i, &si) in s.iter().enumerate().take(comps) {
        if i != j {
            v += loss.eval(-si);
        }
    }
    v
}

/// Accumulates `w * d(ovr_term) / d(s)` into `g`.
fn ovr_term_grad<T: Real>(loss: &SurrogateLoss<T>, s: &[T], comps: usize, j: usize, w: T, g: &mut [T]) {
    g[j] += w * loss.grad(s[j]);
    for (i, &si) in s.iter().enumerate().take(comps) {
        if i != j {
            g[i] -= w * loss.grad(-si);
        }
    }
}

/// `phi(s_i) - phi(-s_i)`: the odd part the compact expansion isolates.
fn odd_diff<T: Real>(loss: &SurrogateLoss<T>, si: T) -> T {
    loss.eval(si) - loss.eval(-si)
}

/// Derivative of [`odd_diff`] in `s_i`.
fn odd_diff_grad<T: Real>(loss: &SurrogateLoss<T>, si: T) -> T {
    loss.grad(si) + loss.grad(-si)
}

/// Complementary-sample bracket of the mixture estimators. `s` has `k + 1`
/// components; `ybar < k`.
pub(crate) fn cllac_bracket<T: Real>(
    form: RiskForm,
    loss: &SurrogateLoss<T>,
    k: usize,
    s: &[T],
    ybar: usize,
) -> T {
    let km1 = T::of((k - 1) as f64);
    match form {
        RiskForm::CllacRewrite => {
            // -(K-1) l(ybar) + sum_{j<K} l(j) - l(K), each l over K+1 comps.
            let mut v = -km1 * ovr_term(loss, s, k + 1, ybar);
            for j in 0..k {
                v += ovr_term(loss, s, k + 1, j);
            }
            v - ovr_term(loss, s, k + 1, k)
        }
        RiskForm::CllacCompact => {
            let mut v = -km1 * odd_diff(loss, s[ybar]) - odd_diff(loss, s[k]);
            for &sj in s.iter().take(k) {
                v += odd_diff(loss, sj);
            }
            v
        }
        RiskForm::CllacReduced => -km1 * odd_diff(loss, s[ybar]) - odd_diff(loss, s[k]),
        RiskForm::CllacConvex => {
            let mut v = km1 * s[ybar] + s[k];
            for &sj in s.iter().take(k) {
                v -= sj;
            }
            v
        }
        _ => unreachable!("not a mixture form: {form:?}"),
    }
}

/// Accumulates `w * d(cllac_bracket) / d(s)` into `g`.
pub(crate) fn cllac_bracket_grad<T: Real>(
    form: RiskForm,
    loss: &SurrogateLoss<T>,
    k: usize,
    s: &[T],
    ybar: usize,
    w: T,
    g: &mut [T],
) {
    let km1 = T::of((k - 1) as f64);
    match form {
        RiskForm::CllacRewrite => {
            ovr_term_grad(loss, s, k + 1, ybar, -w * km1, g);
            for j in 0..k {
                ovr_term_grad(loss, s, k + 1, j, w, g);
            }
            ovr_term_grad(loss, s, k + 1, k, -w, g);
        }
        RiskForm::CllacCompact => {
            for i in 0..k {
                let coeff = if i == ybar { T::one() - km1 } else { T::one() };
                g[i] += w * coeff * odd_diff_grad(loss, s[i]);
            }
            g[k] -= w * odd_diff_grad(loss, s[k]);
        }
        RiskForm::CllacReduced => {
            g[ybar] -= w * km1 * odd_diff_grad(loss, s[ybar]);
            g[k] -= w * odd_diff_grad(loss, s[k]);
        }
        RiskForm::CllacConvex => {
            for gi in g.iter_mut().take(k) {
                *gi -= w;
            }
            g[ybar] += w * km1;
            g[k] += w;
        }
        _ => unreachable!("not a mixture form: {form:?}"),
    }
}

/// Unlabeled-sample term shared by all mixture forms: the augmented-label
/// composite loss `phi(f_K) + sum_{j<K} phi(-f_j)`.
pub(crate) fn unlabeled_term<T: Real>(loss: &SurrogateLoss<T>, k: usize, s: &[T]) -> T {
    ovr_term(loss, s, k + 1, k)
}

/// Accumulates `w * d(unlabeled_term) / d(s)` into `g`.
pub(crate) fn unlabeled_term_grad<T: Real>(
    loss: &SurrogateLoss<T>,
    k: usize,
    s: &[T],
    w: T,
    g: &mut [T],
) {
    ovr_term_grad(loss, s, k + 1, k, w, g);
}

/// `K`-component complementary bracket of the general rewrite.
fn cl_general_bracket<T: Real>(loss: &SurrogateLoss<T>, k: usize, s: &[T], ybar: usize) -> T {
    let mut v = -T::of((k - 1) as f64) * ovr_term(loss, s, k, ybar);
    for j in 0..k {
        v += ovr_term(loss, s, k, j);
    }
    v
}

fn cl_general_bracket_grad<T: Real>(
    loss: &SurrogateLoss<T>,
    k: usize,
    s: &[T],
    ybar: usize,
    w: T,
    g: &mut [T],
) {
    ovr_term_grad(loss, s, k, ybar, -w * T::of((k - 1) as f64), g);
    for j in 0..k {
        ovr_term_grad(loss, s, k, j, w, g);
    }
}

/// Per-sample part of the symmetric-CL estimator, `(K - 1) * Lbar(ybar)`
/// with `Lbar(ybar) = (1/(K-1)) sum_{j != ybar} phi(f_j) + phi(-f_ybar)`;
/// the constant `-K * scale + 2 * scale` is added once per unit weight.
fn cl_symmetric_pointwise<T: Real>(loss: &SurrogateLoss<T>, k: usize, s: &[T], ybar: usize) -> T {
    let mut v = T::of((k - 1) as f64) * loss.eval(-s[ybar]);
    for (j, &sj) in s.iter().enumerate().take(k) {
        if j != ybar {
            v += loss.eval(sj);
        }
    }
    v
}

fn cl_symmetric_pointwise_grad<T: Real>(
    loss: &SurrogateLoss<T>,
    k: usize,
    s: &[T],
    ybar: usize,
    w: T,
    g: &mut [T],
) {
    g[ybar] -= w * T::of((k - 1) as f64) * loss.grad(-s[ybar]);
    for (j, &sj) in s.iter().enumerate().take(k) {
        if j != ybar {
            g[j] += w * loss.grad(sj);
        }
    }
}

/// Constant offset of the symmetric-CL estimator per unit of total weight.
fn cl_symmetric_constant<T: Real>(loss: &SurrogateLoss<T>, k: usize) -> T {
    loss.scale * (T::of(2.0) - T::of(k as f64))
}

// --------------------------------------------------------------------------
// Weighted evaluation kernel
// --------------------------------------------------------------------------

/// A complementary-labeled point with a weight: a sample (weight `1/n`) or a
/// support cell (weight `pbar(x, ybar)`).
#[derive(Clone, Copy, Debug)]
pub struct WeightedCl<'a, T> {
    pub x: &'a [T],
    pub ybar: usize,
    pub weight: T,
}

/// An unlabeled point with a weight.
#[derive(Clone, Copy, Debug)]
pub struct WeightedX<'a, T> {
    pub x: &'a [T],
    pub weight: T,
}

/// A truly labeled point with a weight; `label = k` is the augmented class.
#[derive(Clone, Copy, Debug)]
pub struct WeightedLabeled<'a, T> {
    pub x: &'a [T],
    pub label: usize,
    pub weight: T,
}

/// Weighted-average risk evaluation: the common kernel under both the exact
/// evaluators (weights = probabilities over an enumerated support) and the
/// empirical estimator (uniform weights over samples). Which item lists a
/// form consumes:
///
/// * `supervised_ovr`: `labeled` only;
/// * `cl_general`, `cl_symmetric`: `cl` only (first `K` score components);
/// * mixture forms: `cl` and `unlabeled`, combined as
///   `theta * sum_cl w * bracket + sum_u w * term`.
///
/// Sums are compensated and follow item order.
pub fn weighted_risk<T: Real, S: Scorer<T>>(
    form: RiskForm,
    f: &S,
    ctx: &RiskContext<T>,
    cl: &[WeightedCl<'_, T>],
    unlabeled: &[WeightedX<'_, T>],
    labeled: &[WeightedLabeled<'_, T>],
) -> Result<T> {
    ctx.check_form(form)?;
    let k = ctx.k;
    check_outputs(form, f.outputs(), k)?;
    match form {
        RiskForm::SupervisedOvr => {
            if labeled.is_empty() {
                return Err(Error::invalid("supervised_ovr needs labeled data"));
            }
            let mut acc = Accumulator::new();
            for item in labeled {
                check_weight(item.weight)?;
                if item.label > k {
                    return Err(Error::invalid(format!(
                        "label {} out of range for k = {k}",
                        item.label
                    )));
                }
                let s = f.scores(item.x);
                acc.add(item.weight * ovr_term(&ctx.loss, &s, k + 1, item.label));
            }
            Ok(acc.total())
        }
        RiskForm::ClGeneral | RiskForm::ClSymmetric => {
            if cl.is_empty() {
                return Err(Error::invalid(format!("{} needs complementary data", form.tag())));
            }
            let mut acc = Accumulator::new();
            let mut wacc = Accumulator::new();
            for item in cl {
                check_weight(item.weight)?;
                check_ybar(item.ybar, k)?;
                let s = f.scores(item.x);
                let v = match form {
                    RiskForm::ClGeneral => cl_general_bracket(&ctx.loss, k, &s, item.ybar),
                    _ => cl_symmetric_pointwise(&ctx.loss, k, &s, item.ybar),
                };
                acc.add(item.weight * v);
                wacc.add(item.weight);
            }
            let mut total = acc.total();
            if form == RiskForm::ClSymmetric {
                total += wacc.total() * cl_symmetric_constant(&ctx.loss, k);
            }
            Ok(total)
        }
        _ => {
            if cl.is_empty() || unlabeled.is_empty() {
                return Err(Error::invalid(format!(
                    "{} needs complementary and unlabeled data",
                    form.tag()
                )));
            }
            let mut cl_acc = Accumulator::new();
            for item in cl {
                check_weight(item.weight)?;
                check_ybar(item.ybar, k)?;
                let s = f.scores(item.x);
                cl_acc.add(item.weight * cllac_bracket(form, &ctx.loss, k, &s, item.ybar));
            }
            let mut u_acc = Accumulator::new();
            for item in unlabeled {
                check_weight(item.weight)?;
                let s = f.scores(item.x);
                u_acc.add(item.weight * unlabeled_term(&ctx.loss, k, &s));
            }
            Ok(ctx.theta * cl_acc.total() + u_acc.total())
        }
    }
}

fn check_weight<T: Real>(w: T) -> Result<()> {
    if !w.is_finite() || w < T::zero() {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    Ok(())
}

fn check_ybar(ybar: usize, k: usize) -> Result<()> {
    if ybar >= k {
        return Err(Error::invalid(format!(
            "complementary label {ybar} out of range for k = {k}"
        )));
    }
    Ok(())
}

fn check_outputs(form: RiskForm, outputs: usize, k: usize) -> Result<()> {
    let needed = if form.is_cl_only() { k } else { k + 1 };
    if outputs < needed {
        return Err(Error::invalid(format!(
            "{} needs {needed} score components, scorer has {outputs}",
            form.tag()
        )));
    }
    Ok(())
}

// --------------------------------------------------------------------------
// Exact evaluators
// --------------------------------------------------------------------------

/// Exact `(K + 1)`-way supervised risk under a finite test joint with
/// `K + 1` label columns. Enumerates support-major, label-minor.
pub fn exact_supervised_risk<T: Real, S: Scorer<T>>(
    f: &S,
    p_te: &FiniteJoint<T>,
    loss: &SurrogateLoss<T>,
) -> Result<T> {
    if p_te.labels() < 3 {
        return Err(Error::invalid(
            "test joint needs at least 3 labels (2 known + augmented)",
        ));
    }
    let k = p_te.labels() - 1;
    let ctx = RiskContext::new(k, T::zero(), *loss)?;
    let mut items = Vec::with_capacity(p_te.m() * p_te.labels());
    for i in 0..p_te.m() {
        for y in 0..p_te.labels() {
            items.push(WeightedLabeled {
                x: p_te.support_row(i),
                label: y,
                weight: p_te.prob(i, y),
            });
        }
    }
    weighted_risk(RiskForm::SupervisedOvr, f, &ctx, &[], &[], &items)
}

/// Exact complementary-label-only risk (`cl_general` or `cl_symmetric`)
/// under a known-class joint. The scorer's first `K` components are used.
pub fn exact_cl_risk<T: Real, S: Scorer<T>>(
    form: RiskForm,
    f: &S,
    p_kcl: &FiniteJoint<T>,
    loss: &SurrogateLoss<T>,
) -> Result<T> {
    if !form.is_cl_only() {
        return Err(Error::invalid(format!(
            "{} is not a complementary-label-only form",
            form.tag()
        )));
    }
    let pbar = p_kcl.complementary()?;
    let ctx = RiskContext::new(p_kcl.labels(), T::zero(), *loss)?;
    let items = enumerate_cl(&pbar);
    weighted_risk(form, f, &ctx, &items, &[], &[])
}

/// Exact mixture-form risk under a finite mixture spec. The estimator's
/// mixture weight is the spec's own `theta`; complementary cells enumerate
/// support-major over the complementary joint of the known-class component,
/// unlabeled points enumerate the merged mixture support with instance
/// marginals as weights.
pub fn exact_cllac_risk<T: Real, S: Scorer<T>>(
    form: RiskForm,
    f: &S,
    spec: &MixtureSpec<T>,
    loss: &SurrogateLoss<T>,
) -> Result<T> {
    if !form.is_cllac() {
        return Err(Error::invalid(format!("{} is not a mixture form", form.tag())));
    }
    let kcl = spec
        .kcl
        .as_finite()
        .ok_or_else(|| Error::invalid("exact risk needs a finite known-class source"))?;
    let pbar = kcl.complementary()?;
    let te = mixture(spec)?;
    let ctx = RiskContext::new(kcl.labels(), spec.theta, *loss)?;
    let cl_items = enumerate_cl(&pbar);
    let u_items: Vec<WeightedX<'_, T>> = (0..te.m())
        .map(|i| WeightedX {
            x: te.support_row(i),
            weight: te.x_marginal(i),
        })
        .collect();
    weighted_risk(form, f, &ctx, &cl_items, &u_items, &[])
}

fn enumerate_cl<T: Real>(pbar: &FiniteJoint<T>) -> Vec<WeightedCl<'_, T>> {
    let mut items = Vec::with_capacity(pbar.m() * pbar.labels());
    for i in 0..pbar.m() {
        for ybar in 0..pbar.labels() {
            items.push(WeightedCl {
                x: pbar.support_row(i),
                ybar,
                weight: pbar.prob(i, ybar),
            });
        }
    }
    items
}

/// The generic rewrite identity, evaluated exactly: given a per-(support,
/// label) table `t` over the `K` labels of `p_kcl`, returns
/// `E_pbar[-(K - 1) t(x, ybar) + sum_j t(x, j)]`, which equals
/// `E_p[t(x, y)]`.
pub fn rewrite_expectation<T: Real>(table: &[Vec<T>], p_kcl: &FiniteJoint<T>) -> Result<T> {
    let k = p_kcl.labels();
    if k < 2 {
        return Err(Error::invalid("rewrite needs at least 2 labels"));
    }
    if table.len() != p_kcl.m() || table.iter().any(|row| row.len() != k) {
        return Err(Error::invalid(format!(
            "table must be {} x {k}",
            p_kcl.m()
        )));
    }
    let pbar = p_kcl.complementary()?;
    let km1 = T::of((k - 1) as f64);
    let mut acc = Accumulator::new();
    for (i, row) in table.iter().enumerate() {
        for (ybar, &t) in row.iter().enumerate() {
            let mut v = -km1 * t;
            for &tj in row {
                v += tj;
            }
            acc.add(pbar.prob(i, ybar) * v);
        }
    }
    Ok(acc.total())
}

// --------------------------------------------------------------------------
// Empirical estimator
// --------------------------------------------------------------------------

/// The data views an empirical evaluation may consume.
#[derive(Clone, Copy, Debug, Default)]
pub struct RiskData<'a, T> {
    pub cl: Option<&'a ComplementaryDataset<T>>,
    pub unlabeled: Option<&'a UnlabeledDataset<T>>,
    pub labeled: Option<&'a TestDataset<T>>,
}

impl<'a, T> RiskData<'a, T> {
    pub fn cllac(cl: &'a ComplementaryDataset<T>, unlabeled: &'a UnlabeledDataset<T>) -> Self {
        RiskData {
            cl: Some(cl),
            unlabeled: Some(unlabeled),
            labeled: None,
        }
    }

    pub fn cl_only(cl: &'a ComplementaryDataset<T>) -> Self {
        RiskData {
            cl: Some(cl),
            unlabeled: None,
            labeled: None,
        }
    }

    pub fn labeled(test: &'a TestDataset<T>) -> Self {
        RiskData {
            cl: None,
            unlabeled: None,
            labeled: Some(test),
        }
    }
}

/// Empirical risk: sample averages in place of expectations. Mixture forms
/// combine the two averages as
/// `theta * mean_cl[bracket] + mean_unlabeled[term]`.
pub fn emp_risk<T: Real, S: Scorer<T>>(
    form: RiskForm,
    f: &S,
    data: &RiskData<'_, T>,
    ctx: &RiskContext<T>,
) -> Result<T> {
    let cl_items: Vec<WeightedCl<'_, T>> = match data.cl {
        Some(cl) if !cl.is_empty() => {
            let w = T::one() / T::of(cl.len() as f64);
            cl.features
                .iter()
                .zip(&cl.labels)
                .map(|(x, &ybar)| WeightedCl { x, ybar, weight: w })
                .collect()
        }
        _ => Vec::new(),
    };
    let u_items: Vec<WeightedX<'_, T>> = match data.unlabeled {
        Some(u) if !u.is_empty() => {
            let w = T::one() / T::of(u.len() as f64);
            u.features.iter().map(|x| WeightedX { x, weight: w }).collect()
        }
        _ => Vec::new(),
    };
    let l_items: Vec<WeightedLabeled<'_, T>> = match data.labeled {
        Some(t) if !t.is_empty() => {
            let w = T::one() / T::of(t.len() as f64);
            t.features
                .iter()
                .zip(&t.labels)
                .map(|(x, &label)| WeightedLabeled { x, label, weight: w })
                .collect()
        }
        _ => Vec::new(),
    };
    weighted_risk(form, f, ctx, &cl_items, &u_items, &l_items)
}

/// Empirical risk and its gradient in the model parameters, over the listed
/// sample indices (`None` = all). Used directly by the trainer for
/// mini-batches.
pub(crate) fn emp_risk_grad_indexed<T: Real>(
    form: RiskForm,
    model: &OvrModel<T>,
    data: &RiskData<'_, T>,
    ctx: &RiskContext<T>,
    cl_idx: Option<&[usize]>,
    u_idx: Option<&[usize]>,
) -> Result<(T, Vec<T>)> {
    ctx.check_form(form)?;
    let k = ctx.k;
    check_outputs(form, model.outputs(), k)?;
    if form == RiskForm::SupervisedOvr {
        return supervised_grad(model, data, ctx);
    }
    let cl = data
        .cl
        .filter(|cl| !cl.is_empty())
        .ok_or_else(|| Error::invalid(format!("{} needs complementary data", form.tag())))?;
    if cl.k != k {
        return Err(Error::invalid(format!(
            "complementary data has k = {}, context k = {k}",
            cl.k
        )));
    }
    let mut grad = vec![T::zero(); model.params().len()];
    let mut gs = vec![T::zero(); k + 1];
    let mut value = Accumulator::new();

    let owned_idx: Vec<usize>;
    let cl_indices: &[usize] = match cl_idx {
        Some(idx) => idx,
        None => {
            owned_idx = (0..cl.len()).collect();
            &owned_idx
        }
    };
    if cl_indices.is_empty() {
        return Err(Error::invalid("empty complementary batch"));
    }
    let w = T::one() / T::of(cl_indices.len() as f64);
    // Mixture brackets carry the assumed mixture weight; CL-only forms do not.
    let cl_scale = if form.is_cllac() { ctx.theta * w } else { w };
    for &i in cl_indices {
        let x = &cl.features[i];
        let ybar = cl.labels[i];
        check_ybar(ybar, k)?;
        let s = model.scores(x);
        for g in gs.iter_mut() {
            *g = T::zero();
        }
        let v = match form {
            RiskForm::ClGeneral => {
                cl_general_bracket_grad(&ctx.loss, k, &s, ybar, T::one(), &mut gs);
                cl_general_bracket(&ctx.loss, k, &s, ybar)
            }
            RiskForm::ClSymmetric => {
                cl_symmetric_pointwise_grad(&ctx.loss, k, &s, ybar, T::one(), &mut gs);
                cl_symmetric_pointwise(&ctx.loss, k, &s, ybar)
            }
            _ => {
                cllac_bracket_grad(form, &ctx.loss, k, &s, ybar, T::one(), &mut gs);
                cllac_bracket(form, &ctx.loss, k, &s, ybar)
            }
        };
        value.add(cl_scale * v);
        model.backprop_acc(x, &gs, cl_scale, &mut grad);
    }
    let mut total = value.total();
    if form == RiskForm::ClSymmetric {
        total += cl_symmetric_constant(&ctx.loss, k);
    }
    if form.is_cllac() {
        let u = data
            .unlabeled
            .filter(|u| !u.is_empty())
            .ok_or_else(|| Error::invalid(format!("{} needs unlabeled data", form.tag())))?;
        let owned_u: Vec<usize>;
        let u_indices: &[usize] = match u_idx {
            Some(idx) => idx,
            None => {
                owned_u = (0..u.len()).collect();
                &owned_u
            }
        };
        if u_indices.is_empty() {
            return Err(Error::invalid("empty unlabeled batch"));
        }
        let wu = T::one() / T::of(u_indices.len() as f64);
        let mut u_value = Accumulator::new();
        for &i in u_indices {
            let x = &u.features[i];
            let s = model.scores(x);
            for g in gs.iter_mut() {
                *g = T::zero();
            }
            u_value.add(wu * unlabeled_term(&ctx.loss, k, &s));
            unlabeled_term_grad(&ctx.loss, k, &s, T::one(), &mut gs);
            model.backprop_acc(x, &gs, wu, &mut grad);
        }
        total += u_value.total();
    }
    Ok((total, grad))
}

fn supervised_grad<T: Real>(
    model: &OvrModel<T>,
    data: &RiskData<'_, T>,
    ctx: &RiskContext<T>,
) -> Result<(T, Vec<T>)> {
    let t = data
        .labeled
        .filter(|t| !t.is_empty())
        .ok_or_else(|| Error::invalid("supervised_ovr needs labeled data"))?;
    let k = ctx.k;
    let w = T::one() / T::of(t.len() as f64);
    let mut grad = vec![T::zero(); model.params().len()];
    let mut gs = vec![T::zero(); k + 1];
    let mut value = Accumulator::new();
    for (x, &label) in t.features.iter().zip(&t.labels) {
        if label > k {
            return Err(Error::invalid(format!("label {label} out of range for k = {k}")));
        }
        let s = model.scores(x);
        for g in gs.iter_mut() {
            *g = T::zero();
        }
        value.add(w * ovr_term(&ctx.loss, &s, k + 1, label));
        ovr_term_grad(&ctx.loss, &s, k + 1, label, T::one(), &mut gs);
        model.backprop_acc(x, &gs, w, &mut grad);
    }
    Ok((value.total(), grad))
}

/// Empirical risk and gradient over full datasets.
pub fn emp_risk_grad<T: Real>(
    form: RiskForm,
    model: &OvrModel<T>,
    data: &RiskData<'_, T>,
    ctx: &RiskContext<T>,
) -> Result<(T, Vec<T>)> {
    emp_risk_grad_indexed(form, model, data, ctx, None, None)
}
