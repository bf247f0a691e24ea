//! One-versus-rest scorers: a linear model and a small rectifier MLP.
//!
//! A model for `k` known classes always has `k + 1` outputs; output `k`
//! scores the augmented class. Parameters live in one flat vector per model
//! (per layer: weight matrix row-major, then biases), which keeps the
//! optimizer and checkpoint code independent of the architecture.

use serde::{Deserialize, Serialize};

use crate::num::Real;
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Arch {
    Linear,
    Mlp { hidden: Vec<usize> },
}

impl Arch {
    /// Layer widths from input to output.
    fn widths(&self, k: usize, d: usize) -> Vec<usize> {
        let mut w = vec![d];
        if let Arch::Mlp { hidden } = self {
            w.extend_from_slice(hidden);
        }
        w.push(k + 1);
        w
    }

    pub fn param_count(&self, k: usize, d: usize) -> usize {
        let w = self.widths(k, d);
        w.windows(2).map(|io| io[0] * io[1] + io[1]).sum()
    }
}

/// Anything that turns an instance into `k + 1` scores. Implemented by
/// [`OvrModel`] and by the tabular scorer the verification suite trains on
/// exact distributions.
pub trait Scorer<T> {
    fn outputs(&self) -> usize;

    fn scores(&self, x: &[T]) -> Vec<T>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct OvrModel<T> {
    arch: Arch,
    k: usize,
    d: usize,
    params: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    /// Predicted class, `0..=k`; `k` is the augmented class.
    pub class: usize,
    pub scores: Vec<T>,
}

impl<T: Real> OvrModel<T> {
    /// Fresh model. The linear model starts at zero (its training objectives
    /// are convex, so symmetry breaking is unnecessary and a constant start
    /// makes runs comparable); MLP weights are uniform on
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from the `"init"` stream of
    /// `seed`, biases zero.
    pub fn new(arch: Arch, k: usize, d: usize, seed: u64) -> Result<Self> {
        if k < 1 {
            return Err(Error::invalid("model needs at least one known class"));
        }
        if d < 1 {
            return Err(Error::invalid("model needs at least one feature"));
        }
        if let Arch::Mlp { hidden } = &arch {
            if hidden.is_empty() || hidden.iter().any(|&h| h == 0) {
                return Err(Error::invalid("hidden layer widths must be positive"));
            }
        }
        let mut params = vec![T::zero(); arch.param_count(k, d)];
        if let Arch::Mlp { .. } = arch {
            let mut rng = stream(seed, "init");
            let widths = arch.widths(k, d);
            let mut off = 0;
            for io in widths.windows(2) {
                let (fan_in, fan_out) = (io[0], io[1]);
                let bound = T::one() / T::of(fan_in as f64).sqrt();
                for w in &mut params[off..off + fan_in * fan_out] {
                    *w = (T::of(2.0) * T::unit_uniform(&mut rng) - T::one()) * bound;
                }
                off += fan_in * fan_out + fan_out; // biases stay zero
            }
        }
        Ok(OvrModel { arch, k, d, params })
    }

    /// Rebuilds a model from checkpointed parameters.
    pub fn from_params(arch: Arch, k: usize, d: usize, params: Vec<T>) -> Result<Self> {
        let expected = arch.param_count(k, d);
        if params.len() != expected {
            return Err(Error::invalid(format!(
                "parameter count {} does not match architecture ({expected})",
                params.len()
            )));
        }
        let mut model = Self::new(arch, k, d, 0)?;
        model.params = params;
        Ok(model)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Index of the augmented-class output.
    pub fn augmented_index(&self) -> usize {
        self.k
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Folds an input normalization `x -> (x - mean) / std` into the first
    /// dense layer, so the model scores raw inputs exactly as it scored
    /// normalized ones. Lets checkpoints stay free of preprocessing state.
    pub fn absorb_input_affine(&mut self, mean: &[T], std: &[T]) -> Result<()> {
        if mean.len() != self.d || std.len() != self.d {
            return Err(Error::invalid(format!(
                "normalization has {} dimensions, model inputs {}",
                mean.len(),
                self.d
            )));
        }
        if std.iter().any(|s| !s.is_finite() || *s <= T::zero())
            || mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::invalid("normalization must be finite with positive scales"));
        }
        let widths = self.arch.widths(self.k, self.d);
        let (nin, nout) = (widths[0], widths[1]);
        for j in 0..nout {
            let row = j * nin;
            let mut shift = T::zero();
            for i in 0..nin {
                self.params[row + i] = self.params[row + i] / std[i];
                shift += self.params[row + i] * mean[i];
            }
            self.params[nin * nout + j] -= shift;
        }
        Ok(())
    }

    /// Forward pass, keeping each layer's input activation for backprop.
    fn forward(&self, x: &[T]) -> Vec<Vec<T>> {
        assert_eq!(x.len(), self.d, "feature dimension mismatch");
        let widths = self.arch.widths(self.k, self.d);
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(widths.len());
        acts.push(x.to_vec());
        let mut off = 0;
        let layers = widths.len() - 1;
        for (l, io) in widths.windows(2).enumerate() {
            let (nin, nout) = (io[0], io[1]);
            let input = acts.last().unwrap().clone();
            let weights = &self.params[off..off + nin * nout];
            let biases = &self.params[off + nin * nout..off + nin * nout + nout];
            let mut out = Vec::with_capacity(nout);
            for j in 0..nout {
                let row = &weights[j * nin..(j + 1) * nin];
                let mut v = biases[j];
                for i in 0..nin {
                    v += row[i] * input[i];
                }
                // Hidden layers rectify; the output layer is linear.
                if l + 1 < layers && v < T::zero() {
                    v = T::zero();
                }
                out.push(v);
            }
            acts.push(out);
            off += nin * nout + nout;
        }
        acts
    }

    /// Accumulates `scale * d(upstream . scores) / d(params)` into `acc`.
    /// The rectifier's derivative at its kink is taken as zero.
    pub fn backprop_acc(&self, x: &[T], upstream: &[T], scale: T, acc: &mut [T]) {
        assert_eq!(upstream.len(), self.k + 1, "upstream dimension mismatch");
        assert_eq!(acc.len(), self.params.len(), "gradient buffer mismatch");
        let widths = self.arch.widths(self.k, self.d);
        let acts = self.forward(x);
        // Layer parameter offsets.
        let mut offsets = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for io in widths.windows(2) {
            offsets.push(off);
            off += io[0] * io[1] + io[1];
        }
        let mut delta: Vec<T> = upstream.to_vec();
        for l in (0..widths.len() - 1).rev() {
            let (nin, nout) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for j in 0..nout {
                let dj = delta[j] * scale;
                let wrow = &mut acc[off + j * nin..off + (j + 1) * nin];
                for i in 0..nin {
                    wrow[i] += dj * input[i];
                }
                acc[off + nin * nout + j] += dj;
            }
            if l > 0 {
                let weights = &self.params[off..off + nin * nout];
                let mut prev = vec![T::zero(); nin];
                for (i, p) in prev.iter_mut().enumerate() {
                    // Rectifier mask: the stored activation is positive iff
                    // the pre-activation was.
                    if input[i] > T::zero() {
                        let mut v = T::zero();
                        for j in 0..nout {
                            v += weights[j * nin + i] * delta[j];
                        }
                        *p = v;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Gradient of `upstream . scores(x)` in the parameters.
    pub fn backprop(&self, x: &[T], upstream: &[T]) -> Vec<T> {
        let mut acc = vec![T::zero(); self.params.len()];
        self.backprop_acc(x, upstream, T::one(), &mut acc);
        acc
    }

    /// Argmax prediction with smallest-index tie-break.
    pub fn predict(&self, x: &[T]) -> Prediction<T> {
        let scores = self.scores(x);
        let mut class = 0;
        for (j, &s) in scores.iter().enumerate() {
            if s > scores[class] {
                class = j;
            }
        }
        Prediction { class, scores }
    }
}

impl<T: Real> Scorer<T> for OvrModel<T> {
    fn outputs(&self) -> usize {
        self.k + 1
    }

    fn scores(&self, x: &[T]) -> Vec<T> {
        self.forward(x).pop().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        // 4 inputs -> 16 hidden -> 3 outputs: 4*16 + 16 + 16*3 + 3 = 131.
        assert_eq!(Arch::Mlp { hidden: vec![16] }.param_count(2, 4), 131);
        assert_eq!(Arch::Linear.param_count(2, 4), 15); // 3 * 4 + 3
    }

    #[test]
    fn zero_init_linear_predicts_first_class() {
        let m: OvrModel<f64> = OvrModel::new(Arch::Linear, 3, 2, 0).unwrap();
        assert!(m.params().iter().all(|&p| p == 0.0));
        let p = m.predict(&[0.4, -1.0]);
        assert_eq!(p.scores, vec![0.0; 4]);
        assert_eq!(p.class, 0);
    }

    #[test]
    fn linear_scores_match_manual_affine_map() {
        let mut m: OvrModel<f64> = OvrModel::new(Arch::Linear, 1, 2, 0).unwrap();
        // W = [[1, 2], [3, 4]], b = [0.5, -0.5]
        m.params_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 0.5, -0.5]);
        let s = m.scores(&[10.0, 100.0]);
        assert_eq!(s, vec![210.5, 429.5]);
    }

    #[test]
    fn absorbed_normalization_scores_raw_inputs_identically() {
        let mut rng = crate::rng::stream(11, "test-absorb");
        let mean = vec![0.4, -1.2, 3.0];
        let std = vec![2.0, 0.5, 1.3];
        for arch in [Arch::Linear, Arch::Mlp { hidden: vec![6] }] {
            let mut m: OvrModel<f64> = OvrModel::new(arch, 2, 3, 5).unwrap();
            for p in m.params_mut() {
                *p += 0.4 * (f64::unit_uniform(&mut rng) - 0.5);
            }
            let mut folded = m.clone();
            folded.absorb_input_affine(&mean, &std).unwrap();
            for _ in 0..10 {
                let x: Vec<f64> =
                    (0..3).map(|_| 6.0 * f64::unit_uniform(&mut rng) - 3.0).collect();
                let normalized: Vec<f64> = x
                    .iter()
                    .zip(mean.iter().zip(&std))
                    .map(|(&v, (&m, &s))| (v - m) / s)
                    .collect();
                let want = m.scores(&normalized);
                let got = folded.scores(&x);
                for (w, g) in want.iter().zip(&got) {
                    assert!((w - g).abs() <= 1e-12, "want {w}, got {g}");
                }
            }
        }
        let mut m: OvrModel<f64> = OvrModel::new(Arch::Linear, 2, 3, 5).unwrap();
        assert!(m.absorb_input_affine(&mean[..2], &std[..2]).is_err());
        assert!(m.absorb_input_affine(&mean, &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn tie_break_picks_smallest_index() {
        let mut m: OvrModel<f64> = OvrModel::new(Arch::Linear, 2, 1, 0).unwrap();
        // Scores for x = 1: [b0, b1, b2] = [1, 3, 3].
        m.params_mut().copy_from_slice(&[0.0, 0.0, 0.0, 1.0, 3.0, 3.0]);
        assert_eq!(m.predict(&[1.0]).class, 1);
    }

    #[test]
    fn mlp_init_is_deterministic_and_seed_sensitive() {
        let arch = Arch::Mlp { hidden: vec![8] };
        let a: OvrModel<f64> = OvrModel::new(arch.clone(), 2, 3, 42).unwrap();
        let b: OvrModel<f64> = OvrModel::new(arch.clone(), 2, 3, 42).unwrap();
        let c: OvrModel<f64> = OvrModel::new(arch, 2, 3, 43).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        // Bound scale: first layer fan_in 3.
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.params()[..24].iter().all(|w| w.abs() <= bound));
        // Biases zero.
        assert!(a.params()[24..32].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = crate::rng::stream(7, "test-bp");
        for arch in [Arch::Linear, Arch::Mlp { hidden: vec![6, 5] }] {
            let mut m: OvrModel<f64> = OvrModel::new(arch, 3, 4, 7).unwrap();
            for p in m.params_mut() {
                *p += 0.2 * (f64::unit_uniform(&mut rng) - 0.5);
            }
            let x: Vec<f64> = (0..4).map(|_| 2.0 * f64::unit_uniform(&mut rng) - 1.0).collect();
            let u: Vec<f64> = (0..4).map(|_| 2.0 * f64::unit_uniform(&mut rng) - 1.0).collect();
            let grad = m.backprop(&x, &u);
            let h = 1e-6;
            for _ in 0..20 {
                let idx = (f64::unit_uniform(&mut rng) * grad.len() as f64) as usize;
                let orig = m.params()[idx];
                m.params_mut()[idx] = orig + h;
                let fp: f64 = m.scores(&x).iter().zip(&u).map(|(s, w)| s * w).sum();
                m.params_mut()[idx] = orig - h;
                let fm: f64 = m.scores(&x).iter().zip(&u).map(|(s, w)| s * w).sum();
                m.params_mut()[idx] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let an = grad[idx];
                let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel <= 1e-4, "param {idx}: analytic {an} vs fd {fd}");
            }
        }
    }

    #[test]
    fn backprop_is_linear_in_upstream() {
        // Disjoint upstreams on a linear model touch disjoint parameters,
        // so additivity holds bit-for-bit.
        let mut m: OvrModel<f64> = OvrModel::new(Arch::Linear, 2, 3, 0).unwrap();
        for (i, p) in m.params_mut().iter_mut().enumerate() {
            *p = 0.1 * (i as f64 + 1.0);
        }
        let x = [0.3, -0.7, 1.1];
        let u1 = [2.0, 0.0, 0.0];
        let u2 = [0.0, 0.0, 0.5];
        let combined = [2.0, 0.0, 0.5];
        let g1 = m.backprop(&x, &u1);
        let g2 = m.backprop(&x, &u2);
        let g = m.backprop(&x, &combined);
        for i in 0..g.len() {
            assert_eq!(g[i], g1[i] + g2[i]);
        }

        // Overlapping upstreams through an MLP share hidden parameters;
        // additivity then holds to rounding.
        let m: OvrModel<f64> = OvrModel::new(Arch::Mlp { hidden: vec![5] }, 2, 3, 9).unwrap();
        let u1 = [0.7, -0.3, 0.1];
        let u2 = [-0.2, 0.9, 0.4];
        let combined: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let g1 = m.backprop(&x, &u1);
        let g2 = m.backprop(&x, &u2);
        let g = m.backprop(&x, &combined);
        for i in 0..g.len() {
            let sum = g1[i] + g2[i];
            assert!((g[i] - sum).abs() <= 1e-13 * sum.abs().max(1.0));
        }
    }

    #[test]
    fn from_params_validates_count() {
        assert!(OvrModel::from_params(Arch::Linear, 2, 3, vec![0.0; 12]).is_ok());
        assert!(OvrModel::<f64>::from_params(Arch::Linear, 2, 3, vec![0.0; 11]).is_err());
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(OvrModel::<f64>::new(Arch::Linear, 0, 3, 0).is_err());
        assert!(OvrModel::<f64>::new(Arch::Linear, 2, 0, 0).is_err());
        assert!(OvrModel::<f64>::new(Arch::Mlp { hidden: vec![] }, 2, 3, 0).is_err());
        assert!(OvrModel::<f64>::new(Arch::Mlp { hidden: vec![4, 0] }, 2, 3, 0).is_err());
    }

    #[test]
    fn works_at_f32() {
        let m: OvrModel<f32> = OvrModel::new(Arch::Mlp { hidden: vec![4] }, 2, 3, 1).unwrap();
        let s = m.scores(&[0.1, 0.2, 0.3]);
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|v| v.is_finite()));
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        /// Positive rescaling of a linear model's parameters never changes
        /// the predicted class.
        #[test]
        fn prediction_invariant_under_positive_scaling(
            params in proptest::collection::vec(-2.0f64..2.0, 8),
            x in proptest::collection::vec(-2.0f64..2.0, 3),
            c in 0.1f64..10.0,
        ) {
            let mut m: OvrModel<f64> = OvrModel::new(Arch::Linear, 1, 3, 0).unwrap();
            m.params_mut().copy_from_slice(&params);
            let base = m.predict(&x).class;
            for p in m.params_mut() {
                *p *= c;
            }
            prop_assert_eq!(m.predict(&x).class, base);
        }
    }
}
