//! Interaction kernel `γ`, the antisymmetric two-point field `α` and the
//! symmetric tensor field `Θ`, tied together by `γ = α·(Θ·α)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Scalar two-point interaction kernel.
pub trait Kernel<T: Real>: Sync {
    /// Kernel value for the ordered pair `(x, y)`; zero beyond the horizon.
    fn eval(&self, x: &[T], y: &[T]) -> T;

    /// Horizon of the kernel support.
    fn horizon(&self) -> T;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelForm {
    /// `γ = γ_* / |x - y|^(d + 2β)`.
    Power,
    /// `γ = (γ_* + (γ^* - γ_*)(1 - r²/ε²)) / r^(d + 2β)`, sweeping the full
    /// admissible band from `γ^*` at contact down to `γ_*` at the horizon.
    Bounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec<T> {
    pub dimension: usize,
    pub beta: T,
    pub gamma_lower: T,
    pub gamma_upper: T,
    pub horizon: T,
    pub form: KernelForm,
}

impl<T: Real> KernelSpec<T> {
    pub fn power(dimension: usize, beta: T, gamma: T, horizon: T) -> Result<Self> {
        let k = KernelSpec {
            dimension,
            beta,
            gamma_lower: gamma,
            gamma_upper: gamma,
            horizon,
            form: KernelForm::Power,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn bounded(
        dimension: usize,
        beta: T,
        gamma_lower: T,
        gamma_upper: T,
        horizon: T,
    ) -> Result<Self> {
        let k = KernelSpec {
            dimension,
            beta,
            gamma_lower,
            gamma_upper,
            horizon,
            form: KernelForm::Bounded,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > T::zero() && self.beta < T::one()) {
            return Err(Error::InvalidKernel(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if !(self.gamma_lower > T::zero()) || !(self.gamma_upper >= self.gamma_lower) {
            return Err(Error::InvalidKernel(
                "kernel constants must satisfy 0 < gamma_lower <= gamma_upper".into(),
            ));
        }
        if !(self.horizon > T::zero()) {
            return Err(Error::InvalidKernel("horizon must be positive".into()));
        }
        Ok(())
    }

    /// Exponent `d + 2β` of the singularity.
    pub fn singularity(&self) -> T {
        T::from_usize_lossy(self.dimension) + self.beta + self.beta
    }

    /// Kernel as a function of distance.
    pub fn radial(&self, r: T) -> T {
        if r <= T::zero() || r > self.horizon * (T::one() + T::lit(1e-9)) {
            return T::zero();
        }
        let s = r.powf(self.singularity());
        match self.form {
            KernelForm::Power => self.gamma_lower / s,
            KernelForm::Bounded => {
                let rho = r / self.horizon;
                let blend = (T::one() - rho * rho).max(T::zero());
                (self.gamma_lower + (self.gamma_upper - self.gamma_lower) * blend) / s
            }
        }
    }
}

pub(crate) fn distance<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter()
        .zip(y)
        .fold(T::zero(), |acc, (&a, &b)| acc + (b - a) * (b - a))
        .sqrt()
}

impl<T: Real> Kernel<T> for KernelSpec<T> {
    fn eval(&self, x: &[T], y: &[T]) -> T {
        self.radial(distance(x, y))
    }

    fn horizon(&self) -> T {
        self.horizon
    }
}

/// Kernel multiplied by `1 + skew·sign(x₀ − y₀)`; breaks pair symmetry on
/// purpose so that the identity checks can be shown to detect it.
#[derive(Clone, Debug)]
pub struct SkewedKernel<K, T> {
    pub inner: K,
    pub skew: T,
}

impl<T: Real, K: Kernel<T>> Kernel<T> for SkewedKernel<K, T> {
    fn eval(&self, x: &[T], y: &[T]) -> T {
        let g = self.inner.eval(x, y);
        let s = if x[0] > y[0] {
            self.skew
        } else if x[0] < y[0] {
            -self.skew
        } else {
            T::zero()
        };
        g * (T::one() + s)
    }

    fn horizon(&self) -> T {
        self.inner.horizon()
    }
}

/// Small dense `d×d` matrix stored in a fixed 2×2 array.
pub type Tensor<T> = [[T; 2]; 2];

/// Two-point symmetric positive definite tensor `Θ(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TensorField<T> {
    /// `c·I`.
    Isotropic { scale: T },
    /// `diag(c₁, …, c_d)`.
    Diagonal { entries: Vec<T> },
    /// `c·(1 + a·cos(Σ_k (x_k + y_k)))·I` with `|a| < 1`.
    Modulated { scale: T, amplitude: T },
}

impl<T: Real> Default for TensorField<T> {
    fn default() -> Self {
        TensorField::Isotropic { scale: T::one() }
    }
}

impl<T: Real> TensorField<T> {
    pub fn validate(&self, dimension: usize) -> Result<()> {
        let ok = match self {
            TensorField::Isotropic { scale } => *scale > T::zero(),
            TensorField::Diagonal { entries } => {
                entries.len() == dimension && entries.iter().all(|&c| c > T::zero())
            }
            TensorField::Modulated { scale, amplitude } => {
                *scale > T::zero() && amplitude.abs() < T::one()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidKernel(format!(
                "tensor field is not positive definite: {self:?}"
            )))
        }
    }

    pub fn eval(&self, x: &[T], y: &[T]) -> Tensor<T> {
        let z = T::zero();
        let mut m = [[z; 2]; 2];
        match self {
            TensorField::Isotropic { scale } => {
                for (k, row) in m.iter_mut().enumerate().take(x.len()) {
                    row[k] = *scale;
                }
            }
            TensorField::Diagonal { entries } => {
                for (k, &c) in entries.iter().enumerate() {
                    m[k][k] = c;
                }
            }
            TensorField::Modulated { scale, amplitude } => {
                let s: T = x.iter().zip(y).fold(z, |acc, (&a, &b)| acc + a + b);
                let c = *scale * (T::one() + *amplitude * s.cos());
                for (k, row) in m.iter_mut().enumerate().take(x.len()) {
                    row[k] = c;
                }
            }
        }
        m
    }
}

pub(crate) fn mat_vec<T: Real>(m: &Tensor<T>, v: &[T; 2]) -> [T; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

pub(crate) fn dot<T: Real>(a: &[T; 2], b: &[T; 2]) -> T {
    a[0] * b[0] + a[1] * b[1]
}

/// Antisymmetric field `α(x, y) = e·sqrt(γ / (e·Θe))` with `e` the unit
/// vector from `x` to `y`, so that `α·(Θ·α) = γ` holds pointwise.
#[derive(Clone, Debug)]
pub struct AntisymmetricField<K, T> {
    kernel: K,
    theta: TensorField<T>,
}

impl<T: Real, K: Kernel<T>> AntisymmetricField<K, T> {
    pub fn new(kernel: K, theta: TensorField<T>) -> Self {
        AntisymmetricField { kernel, theta }
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn theta(&self) -> &TensorField<T> {
        &self.theta
    }

    pub fn eval(&self, x: &[T], y: &[T]) -> [T; 2] {
        let r = distance(x, y);
        let mut e = [T::zero(); 2];
        if r <= T::zero() {
            return e;
        }
        for (k, (&a, &b)) in x.iter().zip(y).enumerate() {
            e[k] = (b - a) / r;
        }
        let g = self.kernel.eval(x, y);
        let quad = dot(&e, &mat_vec(&self.theta.eval(x, y), &e));
        let s = (g / quad).sqrt();
        [e[0] * s, e[1] * s]
    }
}
