//! Infinite-horizon limit of the power kernel: with `γ = C_{1,β}/(2|x−y|^{1+2β})`
//! the operator `−L` becomes the fractional Laplacian `(−Δ)^β` in one
//! dimension. The comparison uses a Gaussian, whose fractional Laplacian is a
//! one-dimensional Fourier integral.

use serde::{Deserialize, Serialize};

use crate::domain::{AccessibleRegion, DomainSpec, NodeSet};
use crate::error::{Error, Result};
use crate::fractional::gamma;
use crate::scalar::Real;

/// `C_{1,β} = 4^β Γ(1/2 + β) / (√π |Γ(−β)|)`.
pub fn fractional_constant(beta: f64) -> f64 {
    4f64.powf(beta) * gamma(0.5 + beta) / (std::f64::consts::PI.sqrt() * gamma(-beta).abs())
}

/// `(−Δ)^β exp(−(x−c)²/σ²)` by quadrature of
/// `σ/√π ∫_0^∞ k^{2β} e^{−σ²k²/4} cos(k(x−c)) dk`.
///
/// With `k = s²` the integrand is smooth at the origin; composite Simpson on
/// `[0, s_max]` where the Gaussian factor has decayed below `e^{-40}`.
pub fn gaussian_fractional_laplacian(x: f64, center: f64, sigma: f64, beta: f64) -> f64 {
    let s_max = (160.0 / (sigma * sigma)).powf(0.25);
    let panels = 20_000;
    let hs = s_max / panels as f64;
    let f = |s: f64| {
        let k = s * s;
        2.0 * s * k.powf(2.0 * beta) * (-sigma * sigma * k * k / 4.0).exp() * (k * (x - center)).cos()
    };
    let mut acc = f(0.0) + f(s_max);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * hs);
    }
    sigma / std::f64::consts::PI.sqrt() * acc * hs / 3.0
}

/// Closed form of the above at `x = c`.
pub fn gaussian_fractional_laplacian_center(sigma: f64, beta: f64) -> f64 {
    let a = sigma * sigma / 4.0;
    sigma / std::f64::consts::PI.sqrt() * gamma(beta + 0.5) / (2.0 * a.powf(beta + 0.5))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitCheckSpec {
    pub beta: f64,
    pub lower: f64,
    pub upper: f64,
    pub spacing: f64,
    pub sigma: f64,
    pub amplitude: f64,
    /// Horizons for the truncated runs, in multiples of the domain diameter.
    pub horizon_factors: Vec<f64>,
}

impl Default for LimitCheckSpec {
    fn default() -> Self {
        LimitCheckSpec {
            beta: 0.25,
            lower: 0.0,
            upper: 1.0,
            spacing: 1.0 / 512.0,
            sigma: 0.1,
            amplitude: 1.0,
            horizon_factors: vec![1.0, 2.0, 4.0],
        }
    }
}

impl LimitCheckSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidKernel(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.sigma > 0.0) || !(self.upper > self.lower) || !(self.spacing > 0.0) {
            return Err(Error::InvalidDomain(
                "limit check needs sigma > 0, upper > lower and spacing > 0".into(),
            ));
        }
        if self.horizon_factors.iter().any(|&f| !(f >= 1.0)) {
            return Err(Error::InvalidDomain(
                "horizon factors must be at least 1 (horizon covers the domain)".into(),
            ));
        }
        Ok(())
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    fn profile(&self, x: f64) -> f64 {
        let z = (x - self.center()) / self.sigma;
        self.amplitude * (-z * z).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncatedRun {
    pub horizon: f64,
    pub discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitReport {
    pub n_interior: usize,
    pub n_nodes: usize,
    /// Discrepancy with the analytic far-field tail added.
    pub discrepancy: f64,
    pub truncated: Vec<TruncatedRun>,
    pub x: Vec<f64>,
    pub nonlocal: Vec<f64>,
    pub oracle: Vec<f64>,
}

impl LimitReport {
    pub fn trend_decreasing(&self) -> bool {
        self.truncated.windows(2).all(|w| w[1].discrepancy < w[0].discrepancy)
    }
}

/// `2 Σ_y w γ(|x−y|) (u(x) − u(y))` over every stored node `y ≠ x`, with the
/// pair at exactly the horizon weighted by one half. With `tail` the
/// contribution of the unbounded exterior beyond the node set, where `u` is
/// taken to vanish, is added in closed form.
fn apply_power<T: Real>(nodes: &NodeSet<T>, gamma_star: T, beta: T, horizon_cells: Option<i64>, u: &[T], tail: bool) -> Vec<T> {
    let w = nodes.uniform_weight();
    let h = nodes.spacing();
    let two = T::lit(2.0);
    let p = T::one() + two * beta;
    let (lo, hi) = nodes.exterior().chain(nodes.interior()).fold((i64::MAX, i64::MIN), |(lo, hi), i| {
        let k = nodes.lattice_index(i)[0];
        (lo.min(k), hi.max(k))
    });
    let edge_lo = nodes.lower()[0] + h * (T::lit(lo as f64) - T::lit(0.5));
    let edge_hi = nodes.lower()[0] + h * (T::lit(hi as f64) + T::lit(0.5));
    nodes
        .interior()
        .map(|i| {
            let ki = nodes.lattice_index(i)[0];
            let mut s = T::zero();
            for j in 0..nodes.len() {
                if j == i {
                    continue;
                }
                let dk = (nodes.lattice_index(j)[0] - ki).abs();
                let factor = match horizon_cells {
                    Some(m) if dk > m => continue,
                    Some(m) if dk == m => T::lit(0.5),
                    _ => T::one(),
                };
                let r = h * T::lit(dk as f64);
                s += factor * w * gamma_star / r.powf(p) * (u[i] - u[j]);
            }
            let mut out = two * s;
            if tail {
                let x = nodes.coord(i)[0];
                let far = ((x - edge_lo).powf(-two * beta) + (edge_hi - x).powf(-two * beta)) / (two * beta);
                out += two * gamma_star * far * u[i];
            }
            out
        })
        .collect()
}

fn central_discrepancy(spec: &LimitCheckSpec, x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let third = (spec.upper - spec.lower) / 3.0;
    let (lo, hi) = (spec.lower + third, spec.upper - third);
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for ((&xi, &ai), &bi) in x.iter().zip(a).zip(b) {
        if xi >= lo - 1e-12 && xi <= hi + 1e-12 {
            diff = diff.max((ai - bi).abs());
            scale = scale.max(bi.abs());
        }
    }
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn node_set<T: Real>(spec: &LimitCheckSpec, factor: f64) -> Result<NodeSet<T>> {
    let diam = spec.upper - spec.lower;
    let domain = DomainSpec {
        dimension: 1,
        lower: vec![T::lit(spec.lower)],
        upper: vec![T::lit(spec.upper)],
        horizon: T::lit(factor * diam),
        spacing: T::lit(spec.spacing),
        accessible: AccessibleRegion::All,
    };
    NodeSet::build_unbounded_horizon(&domain)
}

/// Compares `−L u` with the Fourier oracle on the middle third of the domain.
pub fn run_limit_check<T: Real>(spec: &LimitCheckSpec) -> Result<LimitReport> {
    spec.validate()?;
    let beta = T::lit(spec.beta);
    let gamma_star = T::lit(fractional_constant(spec.beta) / 2.0);
    let oracle_at = |x: f64| spec.amplitude * gaussian_fractional_laplacian(x, spec.center(), spec.sigma, spec.beta);

    let nodes = node_set::<T>(spec, 1.0)?;
    let u: Vec<T> = (0..nodes.len()).map(|i| T::lit(spec.profile(nodes.coord(i)[0].as_f64()))).collect();
    let x: Vec<f64> = nodes.interior().map(|i| nodes.coord(i)[0].as_f64()).collect();
    let oracle: Vec<f64> = x.iter().map(|&xi| oracle_at(xi)).collect();
    let nonlocal: Vec<f64> = apply_power(&nodes, gamma_star, beta, None, &u, true)
        .into_iter()
        .map(|v| v.as_f64())
        .collect();
    let discrepancy = central_discrepancy(spec, &x, &nonlocal, &oracle);

    let mut truncated = Vec::new();
    for &factor in &spec.horizon_factors {
        let nodes = node_set::<T>(spec, factor)?;
        let u: Vec<T> = (0..nodes.len()).map(|i| T::lit(spec.profile(nodes.coord(i)[0].as_f64()))).collect();
        let lhs: Vec<f64> = apply_power(&nodes, gamma_star, beta, Some(nodes.horizon_cells()), &u, false)
            .into_iter()
            .map(|v| v.as_f64())
            .collect();
        truncated.push(TruncatedRun {
            horizon: factor * (spec.upper - spec.lower),
            discrepancy: central_discrepancy(spec, &x, &lhs, &oracle),
        });
    }

    Ok(LimitReport {
        n_interior: nodes.n_interior(),
        n_nodes: nodes.len(),
        discrepancy,
        truncated,
        x,
        nonlocal,
        oracle,
    })
}
