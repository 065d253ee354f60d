//! Average nonlocal flux data and the forward/adjoint duality behind it.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::domain::{NodeLabel, NodeSet};
use crate::error::{Error, Result};
use crate::inversion::BasisSpec;
use crate::ops::Interactions;
use crate::scalar::Real;
use crate::solver::{Model, Propagator, SourceSpec, SpaceTimeField, TimeGrid};

/// Instrument weight `h(x, t) ≥ 0` on `Ω_a × [0, T]`, stored as its zero
/// extension `h_0` over the whole collar.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSpec<T> {
    n_exterior: usize,
    n_times: usize,
    values: Vec<T>,
}

impl<T: Real> SensorSpec<T> {
    /// Samples `h` on accessible nodes; every other collar node gets 0.
    ///
    /// Rejects negative values and data that do not vanish at `t = 0` and
    /// `t = T`.
    pub fn from_fn(nodes: &NodeSet<T>, grid: &TimeGrid<T>, h: impl Fn(&[T], T) -> T) -> Result<Self> {
        let ne = nodes.n_exterior();
        let levels = grid.n_levels();
        let mut values = vec![T::zero(); ne * levels];
        for n in 0..levels {
            let t = grid.time(n);
            for (e, x) in nodes.exterior().enumerate() {
                if nodes.label(x) == NodeLabel::Accessible {
                    values[n * ne + e] = h(nodes.coord(x), t);
                }
            }
        }
        Self::from_values(ne, levels, values)
    }

    /// Time-major samples over the exterior block.
    pub fn from_values(n_exterior: usize, n_times: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != n_exterior * n_times || n_times < 2 {
            return Err(Error::ShapeMismatch {
                what: "sensor samples",
                expected: n_exterior * n_times,
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(**v >= T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidSensor(format!(
                "sensor weight must be finite and nonnegative, got {v}"
            )));
        }
        let s = SensorSpec {
            n_exterior,
            n_times,
            values,
        };
        if s.exterior_at(0).iter().chain(s.exterior_at(n_times - 1)).any(|&v| v != T::zero()) {
            return Err(Error::InvalidSensor(
                "sensor weight must vanish at t = 0 and t = T".into(),
            ));
        }
        Ok(s)
    }

    /// Product of a spatial hat centred in the accessible region and the time
    /// bump `4t(T−t)/T²`.
    pub fn default_bump(nodes: &NodeSet<T>, grid: &TimeGrid<T>) -> Result<Self> {
        Self::windowed_bump(nodes, grid, T::zero(), T::one())
    }

    /// Spatial hat times the bump `4(t−a)(b−t)/(b−a)²` on the window
    /// `[a, b] = [start·T, end·T]`, zero outside it.
    pub fn windowed_bump(nodes: &NodeSet<T>, grid: &TimeGrid<T>, start: T, end: T) -> Result<Self> {
        if !(start >= T::zero() && end <= T::one() && start < end) {
            return Err(Error::InvalidSensor(format!(
                "time window [{start}, {end}] must satisfy 0 <= start < end <= 1"
            )));
        }
        let t_end = grid.final_time();
        let (a, b) = (start * t_end, end * t_end);
        let profile = accessible_hat(nodes);
        Self::from_fn(nodes, grid, |x, t| {
            if t <= a || t >= b {
                T::zero()
            } else {
                profile(x) * T::lit(4.0) * (t - a) * (b - t) / ((b - a) * (b - a))
            }
        })
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_exterior(&self) -> usize {
        self.n_exterior
    }

    /// `h_0(·, t_n)` over the exterior block.
    pub fn exterior_at(&self, n: usize) -> &[T] {
        &self.values[n * self.n_exterior..(n + 1) * self.n_exterior]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == T::zero())
    }

    pub fn scaled(&self, c: T) -> Self {
        SensorSpec {
            values: self.values.iter().map(|&v| v * c).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn check_shape(&self, n_exterior: usize, n_times: usize) -> Result<()> {
        if self.n_exterior != n_exterior || self.n_times != n_times {
            return Err(Error::ShapeMismatch {
                what: "sensor samples",
                expected: n_exterior * n_times,
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Spatial hat over the accessible region: along the measured face it peaks
/// half a horizon outside the box, transversally it peaks mid-face. Every
/// accessible node receives a strictly positive weight.
fn accessible_hat<T: Real>(nodes: &NodeSet<T>) -> impl Fn(&[T]) -> T {
    use crate::domain::AccessibleRegion;
    let h = nodes.spacing();
    let eps = nodes.horizon();
    let half = T::lit(0.5);
    let lower: Vec<T> = nodes.lower().to_vec();
    let upper: Vec<T> = nodes
        .cells()
        .iter()
        .zip(&lower)
        .map(|(&c, &a)| a + h * T::lit(c as f64))
        .collect();
    let region = nodes.accessible_region();
    move |x: &[T]| -> T {
        let hat = |s: T, c: T, w: T| (T::one() - (s - c).abs() / w).max(T::zero());
        match region {
            AccessibleRegion::All => T::one(),
            AccessibleRegion::Face { axis, upper: up } => {
                let c = if up {
                    upper[axis] + eps * half
                } else {
                    lower[axis] - eps * half
                };
                let mut v = hat(x[axis], c, eps * half + h);
                for k in 0..x.len() {
                    if k != axis {
                        let mid = (lower[k] + upper[k]) * half;
                        let w = (upper[k] - lower[k]) * half + eps + h;
                        v *= hat(x[k], mid, w);
                    }
                }
                v
            }
        }
    }
}

/// Trapezoid weight of time level `n` out of `levels`.
fn trapezoid<T: Real>(n: usize, levels: usize) -> T {
    if n == 0 || n + 1 == levels {
        T::lit(0.5)
    } else {
        T::one()
    }
}

/// Average nonlocal flux `Σ_{x∈Ω_a} Σ_n w_x Δt c_n N(Θ·D*u)(x, t_n) h(x, t_n)`.
pub fn measure<T: Real>(
    ints: &Interactions<T>,
    nodes: &NodeSet<T>,
    grid: &TimeGrid<T>,
    field: &SpaceTimeField<T>,
    sensor: &SensorSpec<T>,
) -> Result<T> {
    if nodes.accessible().next().is_none() {
        return Err(Error::EmptyAccessible);
    }
    sensor.check_shape(nodes.n_exterior(), grid.n_levels())?;
    if field.n_times() != grid.n_levels() || field.n_nodes() != nodes.len() {
        return Err(Error::ShapeMismatch {
            what: "trajectory",
            expected: nodes.len() * grid.n_levels(),
            got: field.values().len(),
        });
    }
    let levels = grid.n_levels();
    let w = nodes.uniform_weight();
    let mut total = T::zero();
    for n in 0..levels {
        let h = sensor.exterior_at(n);
        if h.iter().all(|&v| v == T::zero()) {
            continue;
        }
        let flux = apply_interaction_n(ints, field, n)?;
        let mut s = T::zero();
        for (e, (&f, &hv)) in flux.iter().zip(h).enumerate() {
            if nodes.label(nodes.n_interior() + e) == NodeLabel::Accessible {
                s += f * hv;
            }
        }
        total += trapezoid::<T>(n, levels) * s;
    }
    Ok(total * w * grid.dt)
}

/// Flux density `N(Θ·D*u)` over the collar at time level `t_index`.
pub fn apply_interaction_n<T: Real>(
    ints: &Interactions<T>,
    field: &SpaceTimeField<T>,
    t_index: usize,
) -> Result<Vec<T>> {
    if t_index >= field.n_times() {
        return Err(Error::TimeIndexOutOfRange {
            index: t_index,
            len: field.n_times(),
        });
    }
    ints.flux_density(field.at(t_index))
}

/// `Σ_{x∈Ω} Σ_n w_x Δt φ(x) v(t_n) w(x, t_n)`, the adjoint side of the duality.
pub fn adjoint_pairing<T: Real>(
    nodes: &NodeSet<T>,
    grid: &TimeGrid<T>,
    adjoint: &SpaceTimeField<T>,
    profile: &[T],
    signal: &[T],
) -> T {
    let w = nodes.uniform_weight();
    let mut s = T::zero();
    for (n, &v) in signal.iter().enumerate() {
        if v == T::zero() {
            continue;
        }
        let row = adjoint.at(n);
        let inner = profile.iter().zip(row).fold(T::zero(), |a, (&p, &x)| a + p * x);
        s += v * inner;
    }
    s * w * grid.dt
}

/// The two temporal modes `v_1 = v` and `v_2 = (discrete time operator) v`.
pub fn temporal_modes<T: Real>(model: &Model<T>, grid: &TimeGrid<T>, v: &[T]) -> Result<[Vec<T>; 2]> {
    if v.first().copied() != Some(T::zero()) {
        return Err(Error::InvalidSource("v must vanish at t = 0".into()));
    }
    let v2 = model.time_derivative(grid, v)?;
    Ok([v.to_vec(), v2])
}

/// Flux data `m[j][i]` for sources `φ_j v_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet<T> {
    pub values: Vec<[T; 2]>,
    /// Relative noise level applied, 0 for clean data.
    pub noise: T,
    pub seed: Option<u64>,
}

impl<T: Real> MeasurementSet<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mode(&self, i: usize) -> Vec<T> {
        self.values.iter().map(|m| m[i]).collect()
    }

    /// Euclidean distance between two data sets of equal size.
    pub fn distance(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (a, b)| {
                acc + (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])
            })
            .sqrt()
    }

    pub fn norm(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |acc, a| acc + a[0] * a[0] + a[1] * a[1])
            .sqrt()
    }

    /// Multiplies every datum by `1 + level·ξ`, `ξ ~ N(0, 1)` from a seeded stream.
    pub fn with_noise(mut self, level: T, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in &mut self.values {
            for v in m.iter_mut() {
                let xi: f64 = StandardNormal.sample(&mut rng);
                *v *= T::one() + level * T::lit(xi);
            }
        }
        self.noise = level;
        self.seed = Some(seed);
        self
    }

    /// `j,i,value` rows with 1-based source and mode indices.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["j", "i", "value"])?;
        for (j, m) in self.values.iter().enumerate() {
            for (i, v) in m.iter().enumerate() {
                w.write_record(&[(j + 1).to_string(), (i + 1).to_string(), v.as_f64().to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut values: Vec<[T; 2]> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("malformed measurement row {rec:?}")))
            };
            let (j, i, v) = (parse(0)? as usize, parse(1)? as usize, parse(2)?);
            if j == 0 || !(1..=2).contains(&i) {
                return Err(Error::Config(format!("bad indices in measurement row {rec:?}")));
            }
            if values.len() < j {
                values.resize(j, [T::zero(); 2]);
            }
            values[j - 1][i - 1] = T::lit(v);
        }
        Ok(MeasurementSet {
            values,
            noise: T::zero(),
            seed: None,
        })
    }
}

/// Runs the forward model for every `φ_j v_i` and measures the flux.
pub fn synthesize_dataset<T: Real>(
    ints: &Interactions<T>,
    nodes: &NodeSet<T>,
    propagator: &Propagator<T>,
    model: &Model<T>,
    basis: &BasisSpec<T>,
    v: &[T],
    sensor: &SensorSpec<T>,
) -> Result<MeasurementSet<T>> {
    if sensor.is_zero() {
        return Err(Error::InvalidSensor("sensor weight is identically zero".into()));
    }
    let grid = *propagator.grid();
    let modes = temporal_modes(model, &grid, v)?;
    let values = basis
        .profiles()
        .par_iter()
        .map(|phi| -> Result<[T; 2]> {
            let mut out = [T::zero(); 2];
            for (slot, signal) in out.iter_mut().zip(&modes) {
                let src = SourceSpec::new(phi.clone(), signal.clone())?;
                let u = propagator.forward(&src)?;
                *slot = measure(ints, nodes, &grid, &u, sensor)?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementSet {
        values,
        noise: T::zero(),
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::kernel::{AntisymmetricField, KernelSpec, TensorField};
    use crate::ops::{AssemblyOptions, OperatorMatrix};
    use crate::solver::{CoefficientField, FieldKind};

    fn setting() -> (NodeSet<f64>, Interactions<f64>, OperatorMatrix<f64>, TimeGrid<f64>) {
        let nodes = NodeSet::build(&DomainSpec::unit(1, 0.0625, 0.125)).unwrap();
        let k = KernelSpec::power(1, 0.25, 1.0, 0.125).unwrap();
        let ints = Interactions::new(&nodes, &AntisymmetricField::new(k, TensorField::default()));
        let op = OperatorMatrix::assemble(&ints, AssemblyOptions::default()).unwrap();
        (nodes, ints, op, TimeGrid::new(1.0, 16).unwrap())
    }

    #[test]
    fn sensor_rejects_negative_and_nonvanishing_endpoints() {
        let (nodes, _, _, grid) = setting();
        assert!(SensorSpec::from_fn(&nodes, &grid, |_, _| -1.0).is_err());
        assert!(SensorSpec::from_fn(&nodes, &grid, |_, _| 1.0).is_err());
        let s = SensorSpec::default_bump(&nodes, &grid).unwrap();
        assert!(!s.is_zero());
    }

    #[test]
    fn default_hat_positive_on_accessible_nodes() {
        let (nodes, _, _, grid) = setting();
        let s = SensorSpec::default_bump(&nodes, &grid).unwrap();
        let mid = s.exterior_at(grid.steps / 2);
        for (e, x) in nodes.exterior().enumerate() {
            let acc = nodes.label(x) == NodeLabel::Accessible;
            assert_eq!(mid[e] > 0.0, acc, "node {x}");
        }
    }

    #[test]
    fn zero_field_or_sensor_measures_zero() {
        let (nodes, ints, op, grid) = setting();
        let s = SensorSpec::default_bump(&nodes, &grid).unwrap();
        let zero = SpaceTimeField::zeros(FieldKind::Forward, nodes.len(), nodes.n_interior(), grid.n_levels());
        assert_eq!(measure(&ints, &nodes, &grid, &zero, &s).unwrap(), 0.0);

        let q = CoefficientField::zeros(nodes.n_interior());
        let src = SourceSpec::new(vec![1.0; nodes.n_interior()], grid.sample(|t| t)).unwrap();
        let u = crate::solver::solve_nde(&op, &q, grid, &src).unwrap();
        let z = SensorSpec::from_fn(&nodes, &grid, |_, _| 0.0).unwrap();
        assert_eq!(measure(&ints, &nodes, &grid, &u, &z).unwrap(), 0.0);
        assert!(measure(&ints, &nodes, &grid, &u, &s).unwrap() > 0.0);
    }

    #[test]
    fn time_index_out_of_range() {
        let (nodes, ints, _, grid) = setting();
        let f = SpaceTimeField::zeros(FieldKind::Forward, nodes.len(), nodes.n_interior(), grid.n_levels());
        assert!(matches!(
            apply_interaction_n(&ints, &f, grid.n_levels()),
            Err(Error::TimeIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn noise_is_seeded() {
        let m = MeasurementSet {
            values: vec![[1.0, 2.0], [3.0, 4.0]],
            noise: 0.0,
            seed: None,
        };
        let a = m.clone().with_noise(0.01, 7);
        let b = m.clone().with_noise(0.01, 7);
        let c = m.with_noise(0.01, 8);
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn measurement_csv_round_trips() {
        let m = MeasurementSet {
            values: vec![[1.5, -2.0], [0.25, 4.0]],
            noise: 0.0,
            seed: None,
        };
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = MeasurementSet::<f64>::read_csv(&buf[..]).unwrap();
        assert_eq!(back, m);
    }
}
