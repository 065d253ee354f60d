//! Forward and adjoint time stepping under volume constraints.
//!
//! Both models share one structure: a time operator acting on increments
//! with lower-triangular Toeplitz weights `K_l`,
//!
//! ```text
//! Σ_{j=1..n} K_{n-j} (u^j − u^{j-1}) + (A + Q) u^n = f^n,
//! ```
//!
//! where `A` is the interior block of `−L`. Implicit Euler is the special case
//! `K = (1/Δt, 0, 0, …)`; the multi-term L1 scheme supplies a full memory. The
//! adjoint stepper is the exact transpose of this space-time system, which makes
//! forward/adjoint duality an algebraic identity.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::domain::NodeSet;
use crate::error::{Error, Result};
use crate::fractional::{memory_weights, FractionalSpec};
use crate::measurement::SensorSpec;
use crate::ops::{Interactions, OperatorMatrix};
use crate::scalar::Real;

/// Uniform time grid `t_n = nΔt`, `n = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<T> {
    pub dt: T,
    pub steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(final_time: T, steps: usize) -> Result<Self> {
        if steps == 0 || !(final_time > T::zero()) {
            return Err(Error::InvalidSource(
                "time grid needs a positive final time and at least one step".into(),
            ));
        }
        Ok(TimeGrid {
            dt: final_time / T::from_usize_lossy(steps),
            steps,
        })
    }

    pub fn final_time(&self) -> T {
        self.dt * T::from_usize_lossy(self.steps)
    }

    pub fn n_levels(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, n: usize) -> T {
        self.dt * T::from_usize_lossy(n)
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.n_levels()).map(|n| self.time(n)).collect()
    }

    /// Samples `f` at every time level.
    pub fn sample(&self, f: impl Fn(T) -> T) -> Vec<T> {
        (0..self.n_levels()).map(|n| f(self.time(n))).collect()
    }
}

/// Time-derivative model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Model<T> {
    /// First-order time derivative (implicit Euler).
    Nde,
    /// Multi-term Caputo derivative (L1 scheme).
    Mttfnde(FractionalSpec<T>),
}

impl<T: Real> Model<T> {
    /// Increment weights `K_l` of the discrete time operator.
    pub fn memory(&self, grid: &TimeGrid<T>) -> Result<Vec<T>> {
        match self {
            Model::Nde => Ok(vec![T::one() / grid.dt]),
            Model::Mttfnde(spec) => memory_weights(spec, grid.dt, grid.steps),
        }
    }

    /// The discrete time operator applied to a scalar series; entry 0 is 0.
    ///
    /// For `Nde` this is the backward difference, for `Mttfnde` the L1
    /// multi-term derivative. Both are exactly the operators the forward
    /// stepper applies, which the moment identities rely on.
    pub fn time_derivative(&self, grid: &TimeGrid<T>, samples: &[T]) -> Result<Vec<T>> {
        if samples.len() != grid.n_levels() {
            return Err(Error::ShapeMismatch {
                what: "time series",
                expected: grid.n_levels(),
                got: samples.len(),
            });
        }
        let k = self.memory(grid)?;
        let mut out = vec![T::zero(); samples.len()];
        for n in 1..samples.len() {
            let mut s = T::zero();
            for j in (1..=n).rev().take(k.len()) {
                s += k[n - j] * (samples[j] - samples[j - 1]);
            }
            out[n] = s;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Forward,
    Adjoint,
}

/// Nodal values over all nodes and time levels, stored time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField<T> {
    pub kind: FieldKind,
    n_nodes: usize,
    n_interior: usize,
    values: Vec<T>,
}

impl<T: Real> SpaceTimeField<T> {
    pub fn zeros(kind: FieldKind, n_nodes: usize, n_interior: usize, n_times: usize) -> Self {
        SpaceTimeField {
            kind,
            n_nodes,
            n_interior,
            values: vec![T::zero(); n_nodes * n_times],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn n_times(&self) -> usize {
        self.values.len() / self.n_nodes.max(1)
    }

    pub fn at(&self, n: usize) -> &[T] {
        &self.values[n * self.n_nodes..(n + 1) * self.n_nodes]
    }

    pub fn at_mut(&mut self, n: usize) -> &mut [T] {
        &mut self.values[n * self.n_nodes..(n + 1) * self.n_nodes]
    }

    pub fn get(&self, node: usize, n: usize) -> T {
        self.values[n * self.n_nodes + node]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
    }

    /// Writes `node,time_index,time,value` rows.
    pub fn write_csv<W: Write>(&self, grid: &TimeGrid<T>, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["node", "time_index", "time", "value"])?;
        for n in 0..self.n_times() {
            let t = grid.time(n).as_f64().to_string();
            for (i, v) in self.at(n).iter().enumerate() {
                w.write_record(&[i.to_string(), n.to_string(), t.clone(), v.as_f64().to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Binary dump: little-endian `u64` time count, `u64` node count, then the
    /// values as row-major (time-major) little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(&(self.n_times() as u64).to_le_bytes())?;
        writer.write_all(&(self.n_nodes as u64).to_le_bytes())?;
        for v in &self.values {
            writer.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump written by [`SpaceTimeField::write_binary`].
    pub fn read_binary(bytes: &[u8], kind: FieldKind, n_interior: usize) -> Result<Self> {
        let word = |k: usize| -> Option<[u8; 8]> { bytes.get(8 * k..8 * k + 8)?.try_into().ok() };
        let bad = || Error::InvalidSource("truncated trajectory dump".into());
        let n_times = u64::from_le_bytes(word(0).ok_or_else(bad)?) as usize;
        let n_nodes = u64::from_le_bytes(word(1).ok_or_else(bad)?) as usize;
        let count = n_times * n_nodes;
        if bytes.len() != 16 + 8 * count {
            return Err(bad());
        }
        let values = (0..count)
            .map(|k| T::lit(f64::from_le_bytes(word(2 + k).unwrap())))
            .collect();
        Ok(SpaceTimeField {
            kind,
            n_nodes,
            n_interior,
            values,
        })
    }
}

/// Reaction coefficient `q ≥ 0` on interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField<T> {
    values: Vec<T>,
}

impl<T: Real> CoefficientField<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        for (node, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::NegativeCoefficient {
                    node,
                    value: v.as_f64(),
                });
            }
        }
        Ok(CoefficientField { values })
    }

    pub fn from_fn(nodes: &NodeSet<T>, f: impl Fn(&[T]) -> T) -> Result<Self> {
        Self::new(nodes.interior().map(|i| f(nodes.coord(i))).collect())
    }

    pub fn zeros(n_interior: usize) -> Self {
        CoefficientField {
            values: vec![T::zero(); n_interior],
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Separated source `φ(x)·v(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSpec<T> {
    pub profile: Vec<T>,
    pub signal: Vec<T>,
}

impl<T: Real> SourceSpec<T> {
    pub fn new(profile: Vec<T>, signal: Vec<T>) -> Result<Self> {
        match signal.first() {
            Some(&v0) if v0 == T::zero() => Ok(SourceSpec { profile, signal }),
            Some(_) => Err(Error::InvalidSource("temporal strength must vanish at t = 0".into())),
            None => Err(Error::InvalidSource("empty temporal strength".into())),
        }
    }
}

/// Factorized stepper for one coefficient field, model and time grid.
#[derive(Clone, Debug)]
pub struct Propagator<T: Real> {
    n_nodes: usize,
    n_interior: usize,
    memory: Vec<T>,
    grid: TimeGrid<T>,
    exterior_coupling: DMatrix<T>,
    factor: Cholesky<T, Dyn>,
}

impl<T: Real> Propagator<T> {
    pub fn new(
        op: &OperatorMatrix<T>,
        q: &CoefficientField<T>,
        model: &Model<T>,
        grid: TimeGrid<T>,
    ) -> Result<Self> {
        let n = op.n_interior();
        if q.values().len() != n {
            return Err(Error::ShapeMismatch {
                what: "reaction coefficient",
                expected: n,
                got: q.values().len(),
            });
        }
        let memory = model.memory(&grid)?;
        let mut system = op.interior_block();
        for i in 0..n {
            system[(i, i)] += memory[0] + q.values()[i];
        }
        let factor = Cholesky::new(system).ok_or(Error::SingularSystem)?;
        Ok(Propagator {
            n_nodes: op.n_nodes(),
            n_interior: n,
            memory,
            grid,
            exterior_coupling: op.interior_exterior_block(),
            factor,
        })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn memory(&self) -> &[T] {
        &self.memory
    }

    fn k(&self, l: usize) -> T {
        self.memory.get(l).copied().unwrap_or_else(T::zero)
    }

    fn check_profile(&self, profile: &[T]) -> Result<()> {
        if profile.len() != self.n_interior {
            return Err(Error::ShapeMismatch {
                what: "source profile",
                expected: self.n_interior,
                got: profile.len(),
            });
        }
        Ok(())
    }

    /// Forward trajectory with zero initial data. `exterior(n)` supplies the
    /// collar values at level `n` (homogeneous constraint when `None`).
    pub fn forward_with_exterior(
        &self,
        source: Option<&SourceSpec<T>>,
        exterior: Option<&dyn Fn(usize) -> Vec<T>>,
    ) -> Result<SpaceTimeField<T>> {
        let levels = self.grid.n_levels();
        if let Some(s) = source {
            self.check_profile(&s.profile)?;
            if s.signal.len() != levels {
                return Err(Error::ShapeMismatch {
                    what: "source signal",
                    expected: levels,
                    got: s.signal.len(),
                });
            }
        }
        let ni = self.n_interior;
        let ne = self.n_nodes - ni;
        let mut field = SpaceTimeField::zeros(FieldKind::Forward, self.n_nodes, ni, levels);
        for n in 1..levels {
            let mut rhs = DVector::zeros(ni);
            if let Some(s) = source {
                let v = s.signal[n];
                for (r, &p) in rhs.iter_mut().zip(&s.profile) {
                    *r = p * v;
                }
            }
            if let Some(g) = exterior {
                let gv = g(n);
                if gv.len() != ne {
                    return Err(Error::ShapeMismatch {
                        what: "exterior data",
                        expected: ne,
                        got: gv.len(),
                    });
                }
                rhs -= &self.exterior_coupling * DVector::from_vec(gv.clone());
                field.at_mut(n)[ni..].copy_from_slice(&gv);
            }
            // history: K_0 u^{n-1} − Σ_{j=1}^{n-1} K_{n-j} (u^j − u^{j-1})
            let prev = field.at(n - 1);
            let k0 = self.memory[0];
            for i in 0..ni {
                rhs[i] += k0 * prev[i];
            }
            let lo = n.saturating_sub(self.memory.len()).max(1);
            for j in lo..n {
                let kk = self.k(n - j);
                let (uj, ujm) = (field.at(j), field.at(j - 1));
                for i in 0..ni {
                    rhs[i] -= kk * (uj[i] - ujm[i]);
                }
            }
            let sol = self.factor.solve(&rhs);
            field.at_mut(n)[..ni].copy_from_slice(sol.as_slice());
        }
        Ok(field)
    }

    pub fn forward(&self, source: &SourceSpec<T>) -> Result<SpaceTimeField<T>> {
        self.forward_with_exterior(Some(source), None)
    }

    /// Adjoint trajectory from the transposed space-time system:
    ///
    /// ```text
    /// (K_0 + A + Q) w^n = −A_IE h^n − Σ_{k>n} (K_{k-n} − K_{k-n-1}) w^k,
    /// ```
    ///
    /// swept from `n = N` down to `0` with `w^{N+1} = 0`. Collar values are `h_0`.
    pub fn adjoint_transpose(&self, sensor: &SensorSpec<T>) -> Result<SpaceTimeField<T>> {
        let levels = self.grid.n_levels();
        sensor.check_shape(self.n_nodes - self.n_interior, levels)?;
        let ni = self.n_interior;
        let mut field = SpaceTimeField::zeros(FieldKind::Adjoint, self.n_nodes, ni, levels);
        for n in (0..levels).rev() {
            let h = sensor.exterior_at(n);
            let mut rhs = -(&self.exterior_coupling * DVector::from_column_slice(h));
            let hi = (n + self.memory.len()).min(levels - 1);
            for k in (n + 1)..=hi {
                let c = self.k(k - n) - self.k(k - n - 1);
                let wk = field.at(k);
                for i in 0..ni {
                    rhs[i] -= c * wk[i];
                }
            }
            let sol = self.factor.solve(&rhs);
            let row = field.at_mut(n);
            row[..ni].copy_from_slice(sol.as_slice());
            row[ni..].copy_from_slice(h);
        }
        Ok(field)
    }
}

/// Implicit-Euler trajectory of `∂u/∂t − Lu + qu = φv` with zero volume
/// constraint and zero initial data.
pub fn solve_nde<T: Real>(
    op: &OperatorMatrix<T>,
    q: &CoefficientField<T>,
    grid: TimeGrid<T>,
    source: &SourceSpec<T>,
) -> Result<SpaceTimeField<T>> {
    Propagator::new(op, q, &Model::Nde, grid)?.forward(source)
}

/// L1-implicit trajectory of `D^α u + Σ p_k D^{α_k} u − Lu + qu = φv`.
pub fn solve_mttfnde<T: Real>(
    op: &OperatorMatrix<T>,
    q: &CoefficientField<T>,
    fractional: &FractionalSpec<T>,
    grid: TimeGrid<T>,
    source: &SourceSpec<T>,
) -> Result<SpaceTimeField<T>> {
    Propagator::new(op, q, &Model::Mttfnde(fractional.clone()), grid)?.forward(source)
}

/// Adjoint of the NDE, `−∂w/∂t − Lw + qw = 0`, `w = h_0` outside, `w(T) = 0`,
/// computed through the time reversal `w̃(t) = w(T − t)` with the forward stepper.
pub fn solve_adjoint_nde<T: Real>(
    op: &OperatorMatrix<T>,
    q: &CoefficientField<T>,
    grid: TimeGrid<T>,
    sensor: &SensorSpec<T>,
) -> Result<SpaceTimeField<T>> {
    let prop = Propagator::new(op, q, &Model::Nde, grid)?;
    let levels = grid.n_levels();
    sensor.check_shape(op.n_nodes() - op.n_interior(), levels)?;
    let reversed = |k: usize| sensor.exterior_at(levels - 1 - k).to_vec();
    let tilde = prop.forward_with_exterior(None, Some(&reversed))?;
    let mut out = SpaceTimeField::zeros(FieldKind::Adjoint, op.n_nodes(), op.n_interior(), levels);
    for n in 0..levels {
        out.at_mut(n).copy_from_slice(tilde.at(levels - 1 - n));
    }
    Ok(out)
}

/// Backward-in-time NDE adjoint by direct transposed stepping.
pub fn solve_adjoint_nde_backward<T: Real>(
    op: &OperatorMatrix<T>,
    q: &CoefficientField<T>,
    grid: TimeGrid<T>,
    sensor: &SensorSpec<T>,
) -> Result<SpaceTimeField<T>> {
    Propagator::new(op, q, &Model::Nde, grid)?.adjoint_transpose(sensor)
}

/// Fractional adjoint defined as the exact transpose of the L1 forward stepper.
pub fn solve_adjoint_mttfnde<T: Real>(
    op: &OperatorMatrix<T>,
    q: &CoefficientField<T>,
    fractional: &FractionalSpec<T>,
    grid: TimeGrid<T>,
    sensor: &SensorSpec<T>,
) -> Result<SpaceTimeField<T>> {
    Propagator::new(op, q, &Model::Mttfnde(fractional.clone()), grid)?.adjoint_transpose(sensor)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakMpReport<T> {
    pub min: T,
    pub min_node: usize,
    pub min_time: usize,
    pub max_abs: T,
    pub pass: bool,
}

/// PASS iff `min u ≥ −1e-12·max|u|` over all nodes and times.
pub fn verify_weak_mp<T: Real>(field: &SpaceTimeField<T>) -> WeakMpReport<T> {
    let mut min = T::zero();
    let (mut min_node, mut min_time) = (0, 0);
    let mut first = true;
    for n in 0..field.n_times() {
        for (i, &v) in field.at(n).iter().enumerate() {
            if first || v < min {
                min = v;
                min_node = i;
                min_time = n;
                first = false;
            }
        }
    }
    let max_abs = field.max_abs();
    WeakMpReport {
        min,
        min_node,
        min_time,
        max_abs,
        pass: min >= -T::lit(1e-12) * max_abs,
    }
}

/// Interior nodes (per time level) that discrete data can reach.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceMap {
    n_interior: usize,
    active: Vec<bool>,
}

impl InfluenceMap {
    pub fn is_active(&self, node: usize, n: usize) -> bool {
        self.active[n * self.n_interior + node]
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Connected components of the interior interaction graph.
fn interior_components<T: Real>(op: &OperatorMatrix<T>) -> Vec<usize> {
    let n = op.n_interior();
    let a = op.matrix();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if comp[j] == usize::MAX && a[(i, j)] != T::zero() {
                    comp[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    comp
}

fn close_over_components(comp: &[usize], seeds: &mut [bool]) {
    let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut hit = vec![false; n_comp];
    for (i, &s) in seeds.iter().enumerate() {
        if s {
            hit[comp[i]] = true;
        }
    }
    for (i, s) in seeds.iter_mut().enumerate() {
        *s = hit[comp[i]];
    }
}

/// Influence of a nonnegative forward source: once the source has fired,
/// every implicit step spreads positivity over the whole connected component.
pub fn forward_influence<T: Real>(op: &OperatorMatrix<T>, source: &SourceSpec<T>) -> InfluenceMap {
    let n = op.n_interior();
    let levels = source.signal.len();
    let comp = interior_components(op);
    let mut active = vec![false; n * levels];
    for t in 1..levels {
        let mut seeds: Vec<bool> = (0..n)
            .map(|i| {
                active[(t - 1) * n + i] || source.profile[i] * source.signal[t] > T::zero()
            })
            .collect();
        close_over_components(&comp, &mut seeds);
        active[t * n..(t + 1) * n].copy_from_slice(&seeds);
    }
    InfluenceMap {
        n_interior: n,
        active,
    }
}

/// Influence of the sensor data on the adjoint field, swept backward in time.
pub fn adjoint_influence<T: Real>(op: &OperatorMatrix<T>, sensor: &SensorSpec<T>) -> InfluenceMap {
    let n = op.n_interior();
    let levels = sensor.n_times();
    let comp = interior_components(op);
    let coupling = op.interior_exterior_block();
    let mut active = vec![false; n * levels];
    for t in (0..levels).rev() {
        let h = sensor.exterior_at(t);
        let mut seeds: Vec<bool> = (0..n)
            .map(|i| {
                (t + 1 < levels && active[(t + 1) * n + i])
                    || h.iter()
                        .enumerate()
                        .any(|(x, &hv)| hv > T::zero() && coupling[(i, x)] < T::zero())
            })
            .collect();
        close_over_components(&comp, &mut seeds);
        active[t * n..(t + 1) * n].copy_from_slice(&seeds);
    }
    InfluenceMap {
        n_interior: n,
        active,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrongMpReport<T> {
    pub identically_zero: bool,
    pub checked: usize,
    /// First `(node, time)` inside the influence set that is not positive.
    pub violation: Option<(usize, usize, T)>,
    pub pass: bool,
}

/// PASS iff the interior field vanishes identically or is strictly positive on
/// every interior node inside the influence set.
pub fn verify_strong_mp<T: Real>(field: &SpaceTimeField<T>, influence: &InfluenceMap) -> StrongMpReport<T> {
    let ni = field.n_interior();
    let identically_zero =
        (0..field.n_times()).all(|n| field.at(n)[..ni].iter().all(|&v| v == T::zero()));
    if identically_zero {
        return StrongMpReport {
            identically_zero,
            checked: 0,
            violation: None,
            pass: true,
        };
    }
    let mut checked = 0;
    for n in 0..field.n_times() {
        for i in 0..ni {
            if influence.is_active(i, n) {
                checked += 1;
                let v = field.get(i, n);
                if !(v > T::zero()) {
                    return StrongMpReport {
                        identically_zero,
                        checked,
                        violation: Some((i, n, v)),
                        pass: false,
                    };
                }
            }
        }
    }
    StrongMpReport {
        identically_zero,
        checked,
        violation: None,
        pass: true,
    }
}

/// Spatial discretization bundle shared by every solve.
#[derive(Clone, Debug)]
pub struct Discretization<T: Real> {
    pub nodes: NodeSet<T>,
    pub interactions: Interactions<T>,
    pub operator: OperatorMatrix<T>,
}
