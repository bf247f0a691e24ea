//! Exact finite distributions, generative mixtures, and the samplers that
//! produce the three data views: complementary-labeled, unlabeled, and test.
//!
//! Class indices are 0-based throughout. A joint over the known classes has
//! `K` label columns; a joint over the test distribution has `K + 1`, with
//! column `K` holding the augmented class. A complementary label is a class
//! the instance does *not* belong to, drawn uniformly from the `K - 1`
//! candidates, so the complementary joint of `p` is
//! `pbar(x, ybar) = (1 / (K - 1)) * sum_{y != ybar} p(x, y)`.
//!
//! The test distribution is the mixture `theta * p_kcl + (1 - theta) * p_ac`:
//! known classes keep their joint structure at total weight `theta`, and the
//! augmented component contributes only an instance marginal at weight
//! `1 - theta`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::num::{Accumulator, Real};
use crate::rng::stream;
use crate::{Error, Result};

// --------------------------------------------------------------------------
// Exact finite joints
// --------------------------------------------------------------------------

/// A discrete joint over a finite instance support and a finite label space,
/// stored dense. Construction validates and normalizes, so every value is a
/// true probability; this is the substrate all exact oracles run on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawJoint<T>",
    into = "RawJoint<T>",
    bound(
        serialize = "T: Real + Serialize",
        deserialize = "T: Real + Deserialize<'de>"
    )
)]
pub struct FiniteJoint<T> {
    support: Vec<Vec<T>>,
    prob: Vec<T>, // m * labels, row-major
    labels: usize,
}

/// Serde image of [`FiniteJoint`]: probabilities as one row per support
/// point. Deserializing re-runs full validation and normalization.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawJoint<T> {
    support: Vec<Vec<T>>,
    prob: Vec<Vec<T>>,
}

impl<T: Real> TryFrom<RawJoint<T>> for FiniteJoint<T> {
    type Error = Error;

    fn try_from(raw: RawJoint<T>) -> Result<Self> {
        FiniteJoint::from_rows(raw.support, raw.prob)
    }
}

impl<T: Real> From<FiniteJoint<T>> for RawJoint<T> {
    fn from(joint: FiniteJoint<T>) -> Self {
        let prob = (0..joint.m())
            .map(|i| joint.prob[i * joint.labels..(i + 1) * joint.labels].to_vec())
            .collect();
        RawJoint {
            support: joint.support,
            prob,
        }
    }
}

impl<T: Real> FiniteJoint<T> {
    /// Builds a joint from a flat row-major mass matrix. Masses must be
    /// finite and nonnegative with positive total; they are normalized to
    /// sum to one. Support rows must be finite, equally sized, and distinct
    /// (two identical feature vectors would make merges and per-point
    /// posteriors ambiguous).
    pub fn new(support: Vec<Vec<T>>, prob: Vec<T>, labels: usize) -> Result<Self> {
        let m = support.len();
        if m == 0 {
            return Err(Error::invalid("support must be non-empty"));
        }
        if labels == 0 {
            return Err(Error::invalid("label space must be non-empty"));
        }
        let d = support[0].len();
        for (i, row) in support.iter().enumerate() {
            if row.len() != d {
                return Err(Error::invalid(format!(
                    "support row {i} has {} features, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("support row {i} is not finite")));
            }
            for prev in &support[..i] {
                if prev == row {
                    return Err(Error::invalid(format!("support row {i} duplicates an earlier row")));
                }
            }
        }
        if prob.len() != m * labels {
            return Err(Error::invalid(format!(
                "probability matrix has {} entries, expected {m} x {labels}",
                prob.len()
            )));
        }
        let mut total = Accumulator::new();
        for &p in &prob {
            if !p.is_finite() || p < T::zero() {
                return Err(Error::invalid("probabilities must be finite and nonnegative"));
            }
            total.add(p);
        }
        let total = total.total();
        if total <= T::zero() {
            return Err(Error::invalid("total probability mass must be positive"));
        }
        let prob = prob.into_iter().map(|p| p / total).collect();
        Ok(FiniteJoint {
            support,
            prob,
            labels,
        })
    }

    /// As [`new`](Self::new) with one probability row per support point.
    pub fn from_rows(support: Vec<Vec<T>>, prob_rows: Vec<Vec<T>>) -> Result<Self> {
        if prob_rows.len() != support.len() {
            return Err(Error::invalid(format!(
                "{} probability rows for {} support rows",
                prob_rows.len(),
                support.len()
            )));
        }
        let labels = prob_rows.first().map_or(0, Vec::len);
        for (i, row) in prob_rows.iter().enumerate() {
            if row.len() != labels {
                return Err(Error::invalid(format!(
                    "probability row {i} has {} labels, expected {labels}",
                    row.len()
                )));
            }
        }
        let prob = prob_rows.into_iter().flatten().collect();
        Self::new(support, prob, labels)
    }

    /// Internal constructor for values already known to be a distribution;
    /// skips renormalization so derived joints keep exact arithmetic
    /// relationships to their sources (e.g. a two-class complement is a
    /// bit-exact column swap).
    fn from_normalized(support: Vec<Vec<T>>, prob: Vec<T>, labels: usize) -> Self {
        debug_assert_eq!(prob.len(), support.len() * labels);
        debug_assert!(prob.iter().all(|p| p.is_finite() && *p >= T::zero()));
        FiniteJoint {
            support,
            prob,
            labels,
        }
    }

    pub fn m(&self) -> usize {
        self.support.len()
    }

    pub fn d(&self) -> usize {
        self.support[0].len()
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn support_row(&self, i: usize) -> &[T] {
        &self.support[i]
    }

    pub fn prob(&self, i: usize, y: usize) -> T {
        self.prob[i * self.labels + y]
    }

    /// Instance marginal at support point `i`.
    pub fn x_marginal(&self, i: usize) -> T {
        let row = &self.prob[i * self.labels..(i + 1) * self.labels];
        row.iter().copied().fold(T::zero(), |a, b| a + b)
    }

    /// Label marginal over the whole support.
    pub fn label_marginal(&self, y: usize) -> T {
        let mut acc = Accumulator::new();
        for i in 0..self.m() {
            acc.add(self.prob(i, y));
        }
        acc.total()
    }

    /// Complementary joint: same support, labels reweighted by
    /// `pbar(x, ybar) = (1 / (labels - 1)) * sum_{y != ybar} p(x, y)`.
    /// Preserves the instance marginal. With two labels this is exactly a
    /// column swap.
    pub fn complementary(&self) -> Result<FiniteJoint<T>> {
        let k = self.labels;
        if k < 2 {
            return Err(Error::invalid(
                "complementary joint needs at least two labels",
            ));
        }
        let mut prob = vec![T::zero(); self.prob.len()];
        if k == 2 {
            for i in 0..self.m() {
                prob[i * 2] = self.prob(i, 1);
                prob[i * 2 + 1] = self.prob(i, 0);
            }
        } else {
            let denom = T::of((k - 1) as f64);
            for i in 0..self.m() {
                for ybar in 0..k {
                    let mut acc = Accumulator::new();
                    for y in 0..k {
                        if y != ybar {
                            acc.add(self.prob(i, y));
                        }
                    }
                    prob[i * k + ybar] = acc.total() / denom;
                }
            }
        }
        Ok(FiniteJoint::from_normalized(
            self.support.clone(),
            prob,
            k,
        ))
    }

    /// Restriction to a subset of label columns, renormalized. Used to carve
    /// the known-class joint out of a larger labeled source.
    pub fn select_labels(&self, cols: &[usize]) -> Result<FiniteJoint<T>> {
        self.check_cols(cols)?;
        let mut prob = Vec::with_capacity(self.m() * cols.len());
        for i in 0..self.m() {
            for &c in cols {
                prob.push(self.prob(i, c));
            }
        }
        FiniteJoint::new(self.support.clone(), prob, cols.len())
    }

    /// Collapse of a subset of label columns into a single-label joint (an
    /// instance marginal), renormalized. Used to pool augmented classes.
    pub fn collapse_labels(&self, cols: &[usize]) -> Result<FiniteJoint<T>> {
        self.check_cols(cols)?;
        let mut prob = Vec::with_capacity(self.m());
        for i in 0..self.m() {
            let mut acc = Accumulator::new();
            for &c in cols {
                acc.add(self.prob(i, c));
            }
            prob.push(acc.total());
        }
        FiniteJoint::new(self.support.clone(), prob, 1)
    }

    fn check_cols(&self, cols: &[usize]) -> Result<()> {
        if cols.is_empty() {
            return Err(Error::invalid("label selection must be non-empty"));
        }
        for (i, &c) in cols.iter().enumerate() {
            if c >= self.labels {
                return Err(Error::invalid(format!(
                    "label {c} out of range for {} labels",
                    self.labels
                )));
            }
            if cols[..i].contains(&c) {
                return Err(Error::invalid(format!("label {c} selected twice")));
            }
        }
        Ok(())
    }

    /// Draws one `(support index, label)` cell from the joint.
    fn sample_cell<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let u = T::unit_uniform(rng);
        let mut cum = T::zero();
        let mut last_positive = 0;
        for (idx, &p) in self.prob.iter().enumerate() {
            if p > T::zero() {
                last_positive = idx;
                cum = cum + p;
                if u < cum {
                    return (idx / self.labels, idx % self.labels);
                }
            }
        }
        // Rounding can leave cum fractionally below 1; charge the remainder
        // to the last cell with mass.
        (last_positive / self.labels, last_positive % self.labels)
    }
}

// --------------------------------------------------------------------------
// Gaussian mixture sources
// --------------------------------------------------------------------------

/// Covariance of one Gaussian class: a shared variance, a diagonal, or a
/// full SPD matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovSpec<T> {
    Spherical(T),
    Diag(Vec<T>),
    Full(Vec<Vec<T>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussClass<T> {
    pub mean: Vec<T>,
    pub cov: CovSpec<T>,
    pub prior: T,
}

/// Class-conditional Gaussian source: one component per class, priors
/// normalized at use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussMixSpec<T> {
    pub classes: Vec<GaussClass<T>>,
}

impl<T: Real> GaussMixSpec<T> {
    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn d(&self) -> Result<usize> {
        let d = self
            .classes
            .first()
            .ok_or_else(|| Error::invalid("gaussian source needs at least one class"))?
            .mean
            .len();
        if d == 0 {
            return Err(Error::invalid("gaussian mean must be non-empty"));
        }
        Ok(d)
    }

    /// Validates and prepares the source for sampling (priors normalized,
    /// covariance factors computed).
    pub fn sampler(&self) -> Result<GaussSampler<T>> {
        let d = self.d()?;
        let mut total = T::zero();
        let mut classes = Vec::with_capacity(self.classes.len());
        for (c, class) in self.classes.iter().enumerate() {
            if class.mean.len() != d {
                return Err(Error::invalid(format!(
                    "class {c} mean has {} entries, expected {d}",
                    class.mean.len()
                )));
            }
            if class.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("class {c} mean is not finite")));
            }
            if !class.prior.is_finite() || class.prior < T::zero() {
                return Err(Error::invalid(format!(
                    "class {c} prior must be finite and nonnegative"
                )));
            }
            total += class.prior;
            classes.push(PreparedClass {
                mean: class.mean.clone(),
                factor: Factor::new(&class.cov, d, c)?,
                cum: T::zero(),
                prior: T::zero(),
            });
        }
        if total <= T::zero() {
            return Err(Error::invalid("class priors must have positive total"));
        }
        let mut cum = T::zero();
        for (class, spec) in classes.iter_mut().zip(&self.classes) {
            class.prior = spec.prior / total;
            cum = cum + class.prior;
            class.cum = cum;
        }
        Ok(GaussSampler { classes, d })
    }
}

/// Lower-triangular factor of one covariance, shaped to its sparsity.
#[derive(Clone, Debug)]
enum Factor<T> {
    Spherical(T),
    Diag(Vec<T>),
    Full(Vec<Vec<T>>),
}

impl<T: Real> Factor<T> {
    fn new(cov: &CovSpec<T>, d: usize, class: usize) -> Result<Self> {
        match cov {
            CovSpec::Spherical(v) => {
                if !v.is_finite() || *v <= T::zero() {
                    return Err(Error::invalid(format!(
                        "class {class} variance must be positive"
                    )));
                }
                Ok(Factor::Spherical(v.sqrt()))
            }
            CovSpec::Diag(vs) => {
                if vs.len() != d {
                    return Err(Error::invalid(format!(
                        "class {class} diagonal covariance has {} entries, expected {d}",
                        vs.len()
                    )));
                }
                if vs.iter().any(|v| !v.is_finite() || *v <= T::zero()) {
                    return Err(Error::invalid(format!(
                        "class {class} diagonal covariance must be positive"
                    )));
                }
                Ok(Factor::Diag(vs.iter().map(|v| v.sqrt()).collect()))
            }
            CovSpec::Full(rows) => Ok(Factor::Full(cholesky(rows, d, class)?)),
        }
    }

    /// `mean + L * z` with `z` standard normal.
    fn sample_into<R: rand::Rng + ?Sized>(&self, mean: &[T], rng: &mut R) -> Vec<T> {
        match self {
            Factor::Spherical(s) => mean
                .iter()
                .map(|&m| m + *s * T::standard_normal(rng))
                .collect(),
            Factor::Diag(ss) => mean
                .iter()
                .zip(ss)
                .map(|(&m, &s)| m + s * T::standard_normal(rng))
                .collect(),
            Factor::Full(l) => {
                let d = mean.len();
                let z: Vec<T> = (0..d).map(|_| T::standard_normal(rng)).collect();
                (0..d)
                    .map(|i| {
                        let mut v = mean[i];
                        for j in 0..=i {
                            v += l[i][j] * z[j];
                        }
                        v
                    })
                    .collect()
            }
        }
    }

    /// `ln det(Sigma) = 2 * sum ln L_ii`.
    fn log_det(&self, d: usize) -> T {
        match self {
            Factor::Spherical(s) => T::of(2.0) * T::of(d as f64) * s.ln(),
            Factor::Diag(ss) => T::of(2.0) * ss.iter().map(|s| s.ln()).sum::<T>(),
            Factor::Full(l) => {
                T::of(2.0) * (0..l.len()).map(|i| l[i][i].ln()).sum::<T>()
            }
        }
    }

    /// `(x - mean)^T Sigma^{-1} (x - mean)` via the stored factor.
    fn mahalanobis_sq(&self, mean: &[T], x: &[T]) -> T {
        match self {
            Factor::Spherical(s) => x
                .iter()
                .zip(mean)
                .map(|(&xi, &mi)| {
                    let z = (xi - mi) / *s;
                    z * z
                })
                .sum(),
            Factor::Diag(ss) => x
                .iter()
                .zip(mean)
                .zip(ss)
                .map(|((&xi, &mi), &si)| {
                    let z = (xi - mi) / si;
                    z * z
                })
                .sum(),
            Factor::Full(l) => {
                // Forward-substitute L z = x - mean; the quad form is |z|^2.
                let d = mean.len();
                let mut z = vec![T::zero(); d];
                for i in 0..d {
                    let mut v = x[i] - mean[i];
                    for j in 0..i {
                        v -= l[i][j] * z[j];
                    }
                    z[i] = v / l[i][i];
                }
                z.iter().map(|&zi| zi * zi).sum()
            }
        }
    }
}

/// Dense lower Cholesky; failure means the matrix is not SPD.
fn cholesky<T: Real>(rows: &[Vec<T>], d: usize, class: usize) -> Result<Vec<Vec<T>>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid(format!(
            "class {class} covariance must be {d} x {d}"
        )));
    }
    for i in 0..d {
        for j in 0..d {
            if !rows[i][j].is_finite() {
                return Err(Error::invalid(format!("class {class} covariance is not finite")));
            }
            if (rows[i][j] - rows[j][i]).abs() > T::of(1e-9) * (T::one() + rows[i][j].abs()) {
                return Err(Error::invalid(format!(
                    "class {class} covariance is not symmetric"
                )));
            }
        }
    }
    let mut l = vec![vec![T::zero(); d]; d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = rows[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= T::zero() {
                    return Err(Error::invalid(format!(
                        "class {class} covariance is not positive definite"
                    )));
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

#[derive(Clone, Debug)]
struct PreparedClass<T> {
    mean: Vec<T>,
    factor: Factor<T>,
    cum: T,
    prior: T,
}

/// A validated, sampling-ready Gaussian source.
#[derive(Clone, Debug)]
pub struct GaussSampler<T> {
    classes: Vec<PreparedClass<T>>,
    d: usize,
}

impl<T: Real> GaussSampler<T> {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (Vec<T>, usize) {
        let u = T::unit_uniform(rng);
        let mut idx = self.classes.len() - 1;
        for (c, class) in self.classes.iter().enumerate() {
            if u < class.cum {
                idx = c;
                break;
            }
        }
        let class = &self.classes[idx];
        (class.factor.sample_into(&class.mean, rng), idx)
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Normalized class prior.
    pub fn prior(&self, class: usize) -> T {
        self.classes[class].prior
    }

    /// Log density of one class component at `x`.
    pub fn log_pdf(&self, class: usize, x: &[T]) -> T {
        assert_eq!(x.len(), self.d, "dimension mismatch");
        let c = &self.classes[class];
        let two_pi = T::of(std::f64::consts::TAU);
        -T::of(0.5)
            * (T::of(self.d as f64) * two_pi.ln()
                + c.factor.log_det(self.d)
                + c.factor.mahalanobis_sq(&c.mean, x))
    }

    /// Log density of the prior-weighted mixture at `x`.
    pub fn log_density(&self, x: &[T]) -> T {
        let logs: Vec<T> = (0..self.classes.len())
            .map(|c| self.classes[c].prior.ln() + self.log_pdf(c, x))
            .collect();
        let m = logs.iter().cloned().fold(T::neg_infinity(), T::max);
        if !m.is_finite() {
            return m;
        }
        let sum: T = logs.iter().map(|&l| (l - m).exp()).sum();
        m + sum.ln()
    }
}

// --------------------------------------------------------------------------
// Sources and the test-time mixture
// --------------------------------------------------------------------------

/// A labeled source: exact finite joint or generative Gaussian mixture.
/// Exact risk evaluation requires `Finite`; sampling works with either.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "snake_case",
    bound(
        serialize = "T: Real + Serialize",
        deserialize = "T: Real + Deserialize<'de>"
    )
)]
pub enum SourceDist<T> {
    Finite(FiniteJoint<T>),
    Gauss(GaussMixSpec<T>),
}

impl<T: Real> SourceDist<T> {
    /// Number of classes the source is labeled with.
    pub fn k(&self) -> usize {
        match self {
            SourceDist::Finite(j) => j.labels(),
            SourceDist::Gauss(g) => g.k(),
        }
    }

    pub fn as_finite(&self) -> Option<&FiniteJoint<T>> {
        match self {
            SourceDist::Finite(j) => Some(j),
            SourceDist::Gauss(_) => None,
        }
    }

    fn prepared(&self) -> Result<PreparedSource<'_, T>> {
        Ok(match self {
            SourceDist::Finite(j) => PreparedSource::Finite(j),
            SourceDist::Gauss(g) => PreparedSource::Gauss(g.sampler()?),
        })
    }
}

enum PreparedSource<'a, T> {
    Finite(&'a FiniteJoint<T>),
    Gauss(GaussSampler<T>),
}

impl<T: Real> PreparedSource<'_, T> {
    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (Vec<T>, usize) {
        match self {
            PreparedSource::Finite(j) => {
                let (i, y) = j.sample_cell(rng);
                (j.support_row(i).to_vec(), y)
            }
            PreparedSource::Gauss(g) => g.sample(rng),
        }
    }
}

/// The deployment distribution: known classes (joint `kcl`, `K >= 2` labels)
/// at weight `theta`, augmented component (`ac`) at weight `1 - theta`. A
/// finite `ac` must carry exactly one label column (it only contributes an
/// instance marginal); a Gaussian `ac` may have any number of components,
/// all collapsed to the single augmented label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct MixtureSpec<T> {
    pub theta: T,
    pub kcl: SourceDist<T>,
    pub ac: SourceDist<T>,
}

impl<T: Real> MixtureSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !self.theta.is_finite() || self.theta < T::zero() || self.theta > T::one() {
            return Err(Error::invalid(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        if self.k() < 2 {
            return Err(Error::invalid("known-class source needs at least 2 classes"));
        }
        match &self.ac {
            SourceDist::Finite(j) if j.labels() != 1 => Err(Error::invalid(format!(
                "augmented component must have a single label column, got {}",
                j.labels()
            ))),
            SourceDist::Gauss(g) if g.classes.is_empty() => {
                Err(Error::invalid("augmented component has no classes"))
            }
            _ => Ok(()),
        }
    }

    /// Known-class count `K`.
    pub fn k(&self) -> usize {
        self.kcl.k()
    }
}

/// Exact test-time joint over `K + 1` labels. Requires both components
/// finite. Supports are merged by feature-vector equality: known-class rows
/// keep their order, augmented rows shared with the known support fold into
/// the same row's last column, unshared augmented rows are appended.
pub fn mixture<T: Real>(spec: &MixtureSpec<T>) -> Result<FiniteJoint<T>> {
    spec.validate()?;
    let kcl = spec
        .kcl
        .as_finite()
        .ok_or_else(|| Error::invalid("exact mixture needs a finite known-class source"))?;
    let ac = spec
        .ac
        .as_finite()
        .ok_or_else(|| Error::invalid("exact mixture needs a finite augmented source"))?;
    if kcl.d() != ac.d() {
        return Err(Error::invalid(format!(
            "component dimensions differ: {} vs {}",
            kcl.d(),
            ac.d()
        )));
    }
    let k = kcl.labels();
    let theta = spec.theta;
    let acw = T::one() - theta;

    let mut support: Vec<Vec<T>> = (0..kcl.m()).map(|i| kcl.support_row(i).to_vec()).collect();
    let mut prob = vec![T::zero(); kcl.m() * (k + 1)];
    for i in 0..kcl.m() {
        for y in 0..k {
            prob[i * (k + 1) + y] = theta * kcl.prob(i, y);
        }
    }
    for j in 0..ac.m() {
        let x = ac.support_row(j);
        let mass = acw * ac.prob(j, 0);
        match support.iter().position(|row| row.as_slice() == x) {
            Some(i) => prob[i * (k + 1) + k] = mass,
            None => {
                support.push(x.to_vec());
                prob.extend(std::iter::repeat(T::zero()).take(k));
                prob.push(mass);
            }
        }
    }
    // Component masses each sum to 1, so the mixture is already normalized.
    Ok(FiniteJoint::from_normalized(support, prob, k + 1))
}

// --------------------------------------------------------------------------
// Sampled datasets
// --------------------------------------------------------------------------

/// Instances with one class each that they do not belong to (`0..k`).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplementaryDataset<T> {
    pub features: Vec<Vec<T>>,
    /// Complementary label per instance, `0..k`.
    pub labels: Vec<usize>,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledDataset<T> {
    pub features: Vec<Vec<T>>,
}

/// Labeled evaluation data over `K + 1` classes; label `k` is the augmented
/// class (all augmented components collapse to it).
#[derive(Clone, Debug, PartialEq)]
pub struct TestDataset<T> {
    pub features: Vec<Vec<T>>,
    /// True label per instance, `0..=k`, where `k` means augmented.
    pub labels: Vec<usize>,
    pub k: usize,
}

impl<T> ComplementaryDataset<T> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

impl<T> UnlabeledDataset<T> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

impl<T> TestDataset<T> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Draws `(x, y)` pairs from the known-class source and replaces each true
/// label with a complementary label drawn uniformly from the other `k - 1`
/// classes. Stream tag: `"cl"`.
pub fn sample_complementary<T: Real>(
    kcl: &SourceDist<T>,
    n: usize,
    seed: u64,
) -> Result<ComplementaryDataset<T>> {
    let k = kcl.k();
    if k < 2 {
        return Err(Error::invalid(
            "complementary labels need at least 2 classes",
        ));
    }
    let prepared = kcl.prepared()?;
    let mut rng = stream(seed, "cl");
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y) = prepared.sample(&mut rng);
        let draw = rng.gen_range(0..k - 1);
        let ybar = if draw >= y { draw + 1 } else { draw };
        assert_ne!(ybar, y, "complementary label equals the latent true label");
        features.push(x);
        labels.push(ybar);
    }
    Ok(ComplementaryDataset {
        features,
        labels,
        k,
    })
}

/// Draws instances from the mixture and discards labels. Stream tag:
/// `"unlabeled"`.
pub fn sample_unlabeled<T: Real>(
    spec: &MixtureSpec<T>,
    n: usize,
    seed: u64,
) -> Result<UnlabeledDataset<T>> {
    let (features, _) = sample_mixture(spec, n, seed, "unlabeled")?;
    Ok(UnlabeledDataset { features })
}

/// Draws labeled instances from the mixture, collapsing every augmented
/// component to the single label `k`. Stream tag: `"test"`.
pub fn sample_test<T: Real>(spec: &MixtureSpec<T>, n: usize, seed: u64) -> Result<TestDataset<T>> {
    let (features, labels) = sample_mixture(spec, n, seed, "test")?;
    Ok(TestDataset {
        features,
        labels,
        k: spec.k(),
    })
}

fn sample_mixture<T: Real>(
    spec: &MixtureSpec<T>,
    n: usize,
    seed: u64,
    tag: &str,
) -> Result<(Vec<Vec<T>>, Vec<usize>)> {
    spec.validate()?;
    let k = spec.k();
    let kcl = spec.kcl.prepared()?;
    let ac = spec.ac.prepared()?;
    let mut rng = stream(seed, tag);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        if T::unit_uniform(&mut rng) < spec.theta {
            let (x, y) = kcl.sample(&mut rng);
            features.push(x);
            labels.push(y);
        } else {
            let (x, _) = ac.sample(&mut rng);
            features.push(x);
            labels.push(k);
        }
    }
    Ok((features, labels))
}

// --------------------------------------------------------------------------
// Perturbations
// --------------------------------------------------------------------------

/// Training-side mixture-weight misspecification: returns `eta * theta`
/// clamped to `[0, 1]` and whether clamping occurred. The clamped value is
/// what a run under misspecification feeds the risk context; sampling always
/// uses the true `theta`.
pub fn perturb_theta<T: Real>(theta: T, eta: T) -> Result<(T, bool)> {
    if !theta.is_finite() || theta < T::zero() || theta > T::one() {
        return Err(Error::invalid(format!("theta must lie in [0, 1], got {theta}")));
    }
    if !eta.is_finite() || eta <= T::zero() {
        return Err(Error::invalid(format!(
            "eta must be finite and positive, got {eta}"
        )));
    }
    let raw = theta * eta;
    let clamped = raw.min(T::one()).max(T::zero());
    Ok((clamped, clamped != raw))
}

/// Known-class share after the test-side prior shift: the augmented mass
/// `1 - theta` is scaled by `mu` and the prior vector renormalized, giving
/// `theta / (theta + mu * (1 - theta))`.
pub fn perturb_known_prior<T: Real>(theta: T, mu: T) -> Result<T> {
    if !theta.is_finite() || theta < T::zero() || theta > T::one() {
        return Err(Error::invalid(format!("theta must lie in [0, 1], got {theta}")));
    }
    if !mu.is_finite() || mu <= T::zero() {
        return Err(Error::invalid(format!("mu must be finite and positive, got {mu}")));
    }
    let denom = theta + mu * (T::one() - theta);
    if denom > T::zero() {
        Ok(theta / denom)
    } else {
        // theta = 0 and the augmented mass scaled: still all augmented.
        Ok(T::zero())
    }
}

/// Test-side class-prior shift applied to a mixture spec: every
/// class-conditional is untouched, only the known/augmented split moves to
/// [`perturb_known_prior`].
pub fn perturb_test_priors<T: Real>(spec: &MixtureSpec<T>, mu: T) -> Result<MixtureSpec<T>> {
    spec.validate()?;
    Ok(MixtureSpec {
        theta: perturb_known_prior(spec.theta, mu)?,
        kcl: spec.kcl.clone(),
        ac: spec.ac.clone(),
    })
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_joint() -> impl Strategy<Value = FiniteJoint<f64>> {
        (2usize..=4, 1usize..=6).prop_flat_map(|(k, m)| {
            proptest::collection::vec(0.01f64..1.0, m * k).prop_map(move |mass| {
                let support = (0..m).map(|i| vec![i as f64]).collect();
                FiniteJoint::new(support, mass, k).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        /// Complementary reweighting keeps every instance marginal.
        #[test]
        fn complement_preserves_marginals(j in arb_joint()) {
            let c = j.complementary().unwrap();
            for i in 0..j.m() {
                prop_assert!((j.x_marginal(i) - c.x_marginal(i)).abs() <= 1e-15);
            }
        }

        /// Taking the complement twice is the identity for two classes.
        #[test]
        fn double_complement_two_classes(mass in proptest::collection::vec(0.01f64..1.0, 4)) {
            let j = FiniteJoint::new(vec![vec![0.0], vec![1.0]], mass, 2).unwrap();
            let cc = j.complementary().unwrap().complementary().unwrap();
            for i in 0..2 {
                for y in 0..2 {
                    prop_assert_eq!(cc.prob(i, y), j.prob(i, y));
                }
            }
        }

        /// Mixture mass splits exactly theta / 1 - theta between components.
        #[test]
        fn mixture_mass_split(j in arb_joint(), theta in 0.0f64..=1.0) {
            let ac = FiniteJoint::new(vec![vec![100.0]], vec![1.0], 1).unwrap();
            let spec = MixtureSpec { theta, kcl: SourceDist::Finite(j), ac: SourceDist::Finite(ac) };
            let te = mixture(&spec).unwrap();
            let k = spec.k();
            let known: f64 = (0..k).map(|y| te.label_marginal(y)).sum();
            prop_assert!((known - theta).abs() < 1e-12);
            prop_assert!((te.label_marginal(k) - (1.0 - theta)).abs() < 1e-12);
        }
    }
}
