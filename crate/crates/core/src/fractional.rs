//! Caputo derivatives on a uniform time grid via the L1 scheme.
//!
//! For order `α ∈ (0, 1)` the L1 approximation reads
//!
//! ```text
//! D^α f(t_n) ≈ Δt^{-α} / Γ(2-α) · Σ_{j=1..n} b_{n-j} (f_j − f_{j-1}),
//! b_l = (l+1)^{1-α} − l^{1-α}.
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// `Γ(x)` for real `x`.
pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerTerm<T> {
    pub order: T,
    pub weight: T,
}

/// Leading order `α` plus lower-order terms `p_k D^{α_k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionalSpec<T> {
    pub order: T,
    #[serde(default = "Vec::new")]
    pub lower: Vec<LowerTerm<T>>,
}

impl<T: Real> FractionalSpec<T> {
    pub fn single(order: T) -> Result<Self> {
        let s = FractionalSpec {
            order,
            lower: Vec::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn multi(order: T, lower: Vec<LowerTerm<T>>) -> Result<Self> {
        let s = FractionalSpec { order, lower };
        s.validate()?;
        Ok(s)
    }

    /// Checks `0 < α_1 < … < α_m < α < 1` and `p_k > 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.order > T::zero() && self.order < T::one()) {
            return Err(Error::InvalidFractional(format!(
                "leading order must lie in (0, 1), got {}",
                self.order
            )));
        }
        let mut prev = T::zero();
        for (k, term) in self.lower.iter().enumerate() {
            if !(term.order > prev) {
                return Err(Error::InvalidFractional(format!(
                    "lower order {} (term {}) is not strictly increasing",
                    term.order,
                    k + 1
                )));
            }
            if !(term.weight > T::zero()) {
                return Err(Error::InvalidFractional(format!(
                    "weight of term {} must be positive, got {}",
                    k + 1,
                    term.weight
                )));
            }
            prev = term.order;
        }
        if !(prev < self.order) {
            return Err(Error::InvalidFractional(
                "lower orders must stay below the leading order".into(),
            ));
        }
        Ok(())
    }

    /// `(order, weight)` for every term, the leading one first with weight 1.
    pub fn terms(&self) -> impl Iterator<Item = (T, T)> + '_ {
        std::iter::once((self.order, T::one()))
            .chain(self.lower.iter().map(|t| (t.order, t.weight)))
    }
}

/// L1 convolution weights for one order.
#[derive(Clone, Debug)]
pub struct L1Weights<T> {
    order: T,
    scale: T,
    lags: Vec<T>,
}

impl<T: Real> L1Weights<T> {
    /// Weights for `steps` time steps of size `dt`.
    pub fn new(order: T, dt: T, steps: usize) -> Result<Self> {
        if !(order > T::zero() && order < T::one()) {
            return Err(Error::InvalidFractional(format!(
                "order must lie in (0, 1), got {order}"
            )));
        }
        let a = order.as_f64();
        let scale = T::lit(dt.as_f64().powf(-a) / gamma(2.0 - a));
        let e = 1.0 - a;
        let lags = (0..steps.max(1))
            .map(|l| {
                let l = l as f64;
                T::lit((l + 1.0).powf(e) - l.powf(e))
            })
            .collect();
        Ok(L1Weights { order, scale, lags })
    }

    pub fn order(&self) -> T {
        self.order
    }

    /// `Δt^{-α} / Γ(2-α)`.
    pub fn scale(&self) -> T {
        self.scale
    }

    /// Dimensionless lag coefficients `b_l`.
    pub fn lags(&self) -> &[T] {
        &self.lags
    }

    /// Weight multiplying `f_j − f_{j-1}` in the value at `t_n`.
    pub fn weight(&self, n: usize, j: usize) -> T {
        debug_assert!(1 <= j && j <= n);
        self.scale * self.lags[n - j]
    }
}

/// Combined weights `K_l = Σ_o p_o Δt^{-α_o}/Γ(2-α_o) b^{(o)}_l` of a
/// multi-term operator acting on increments.
pub fn memory_weights<T: Real>(spec: &FractionalSpec<T>, dt: T, steps: usize) -> Result<Vec<T>> {
    spec.validate()?;
    let mut k = vec![T::zero(); steps.max(1)];
    for (order, weight) in spec.terms() {
        let w = L1Weights::new(order, dt, steps)?;
        for (kl, &b) in k.iter_mut().zip(w.lags()) {
            *kl += weight * w.scale() * b;
        }
    }
    Ok(k)
}

/// Applies increment weights `K` to samples; index 0 of the result is 0.
pub(crate) fn apply_increment_weights<T: Real>(k: &[T], f: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); f.len()];
    for n in 1..f.len() {
        let mut s = T::zero();
        for j in 1..=n {
            s += k[n - j] * (f[j] - f[j - 1]);
        }
        out[n] = s;
    }
    out
}

fn check_samples<T>(samples: &[T]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::ShapeMismatch {
            what: "time series (need at least two samples)",
            expected: 2,
            got: samples.len(),
        });
    }
    Ok(())
}

/// L1 Caputo derivative of `samples` (taken at `t_n = nΔt`). Entry 0 is 0.
pub fn caputo_apply<T: Real>(order: T, dt: T, samples: &[T]) -> Result<Vec<T>> {
    check_samples(samples)?;
    let w = L1Weights::new(order, dt, samples.len() - 1)?;
    let k: Vec<T> = w.lags().iter().map(|&b| w.scale() * b).collect();
    Ok(apply_increment_weights(&k, samples))
}

/// `D^α f + Σ p_k D^{α_k} f` with every term discretized by L1.
pub fn multiterm_apply<T: Real>(spec: &FractionalSpec<T>, dt: T, samples: &[T]) -> Result<Vec<T>> {
    check_samples(samples)?;
    let k = memory_weights(spec, dt, samples.len() - 1)?;
    Ok(apply_increment_weights(&k, samples))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtremumReport<T> {
    /// Time index of the (first) discrete minimum.
    pub argmin: usize,
    /// L1 Caputo value at the minimum.
    pub value: T,
    pub slack: T,
    pub pass: bool,
}

/// Evaluates the L1 Caputo derivative at the discrete minimizer of `samples`
/// (searched over `t_1..t_N`); the continuous statement is that it is `≤ 0`.
///
/// The allowed slack is `1e-8·max(1, max|f|) + Δt·(max f − min f)`.
pub fn check_extremum_lemma<T: Real>(order: T, dt: T, samples: &[T]) -> Result<ExtremumReport<T>> {
    let d = caputo_apply(order, dt, samples)?;
    let mut argmin = 1;
    for n in 2..samples.len() {
        if samples[n] < samples[argmin] {
            argmin = n;
        }
    }
    let (lo, hi, amax) = samples.iter().fold(
        (samples[0], samples[0], T::zero()),
        |(lo, hi, am), &x| (lo.min(x), hi.max(x), am.max(x.abs())),
    );
    let slack = T::lit(1e-8) * amax.max(T::one()) + dt * (hi - lo);
    let value = d[argmin];
    Ok(ExtremumReport {
        argmin,
        value,
        slack,
        pass: value <= slack,
    })
}
