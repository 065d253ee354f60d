//! Reconstruction of the reaction coefficient from flux data.
//!
//! The pipeline mirrors the uniqueness argument step by step:
//!
//! 1. duality turns each datum `m[j][i]` into `⟨φ_j, V_i⟩` with moment fields
//!    `V_1 = Σ_n Δt v_n w^n` and `V_2 = Σ_n Δt v2_n w^n` of the adjoint state;
//! 2. a complete (here: Gram-invertible) family `{φ_j}` recovers `V_1`, `V_2`;
//! 3. the time-integrated adjoint equation `V_2 + D(Θ·D*V_1) + q V_1 = 0`,
//!    whose collar trace `V_1 = Σ_n Δt v_n h_0^n` is known, is solved for `q`
//!    wherever `V_1 > 0`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::domain::NodeSet;
use crate::error::{Error, Result};
use crate::measurement::{synthesize_dataset, MeasurementSet, SensorSpec};
use crate::ops::{Interactions, OperatorMatrix};
use crate::scalar::Real;
use crate::solver::{CoefficientField, Model, Propagator, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// Indicator of each interior node.
    Nodal,
    /// L²-orthonormal Dirichlet sine modes of the box.
    Sine,
}

/// Source profiles `φ_j` on interior nodes with their discrete Gram matrix.
#[derive(Clone, Debug)]
pub struct BasisSpec<T: Real> {
    kind: BasisKind,
    profiles: Vec<Vec<T>>,
    gram: DMatrix<T>,
}

impl<T: Real> BasisSpec<T> {
    pub fn nodal(nodes: &NodeSet<T>) -> Self {
        let n = nodes.n_interior();
        let profiles = (0..n)
            .map(|j| {
                let mut p = vec![T::zero(); n];
                p[j] = T::one();
                p
            })
            .collect();
        Self::from_profiles(BasisKind::Nodal, nodes, profiles)
    }

    /// First `count` sine modes, ordered by wavenumber magnitude in 2-D.
    pub fn sine(nodes: &NodeSet<T>, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("basis needs at least one function".into()));
        }
        let d = nodes.dimension();
        let cells = nodes.cells().to_vec();
        let h = nodes.spacing();
        let lengths: Vec<T> = cells.iter().map(|&c| h * T::lit(c as f64)).collect();
        let mut modes: Vec<[usize; 2]> = Vec::new();
        if d == 1 {
            modes.extend((1..cells[0] as usize).map(|j| [j, 0]));
        } else {
            for j in 1..cells[0] as usize {
                for k in 1..cells[1] as usize {
                    modes.push([j, k]);
                }
            }
            modes.sort_by_key(|m| (m[0] * m[0] + m[1] * m[1], m[0]));
        }
        if count > modes.len() {
            return Err(Error::Config(format!(
                "grid resolves only {} sine modes, {count} requested",
                modes.len()
            )));
        }
        let pi = T::pi();
        let two = T::lit(2.0);
        let profiles = modes[..count]
            .iter()
            .map(|m| {
                nodes
                    .interior()
                    .map(|i| {
                        let li = nodes.lattice_index(i);
                        (0..d).fold(T::one(), |acc, axis| {
                            let arg = pi
                                * T::from_usize_lossy(m[axis])
                                * T::lit(li[axis] as f64)
                                / T::lit(cells[axis] as f64);
                            acc * (two / lengths[axis]).sqrt() * arg.sin()
                        })
                    })
                    .collect()
            })
            .collect();
        Ok(Self::from_profiles(BasisKind::Sine, nodes, profiles))
    }

    fn from_profiles(kind: BasisKind, nodes: &NodeSet<T>, profiles: Vec<Vec<T>>) -> Self {
        let w = nodes.uniform_weight();
        let j = profiles.len();
        let gram = if kind == BasisKind::Nodal {
            DMatrix::from_diagonal_element(j, j, w)
        } else {
            DMatrix::from_fn(j, j, |a, b| {
                profiles[a]
                    .iter()
                    .zip(&profiles[b])
                    .fold(T::zero(), |acc, (&x, &y)| acc + w * x * y)
            })
        };
        BasisSpec {
            kind,
            profiles,
            gram,
        }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profiles(&self) -> &[Vec<T>] {
        &self.profiles
    }

    pub fn gram(&self) -> &DMatrix<T> {
        &self.gram
    }

    /// Ratio of extreme Gram eigenvalues.
    pub fn condition_estimate(&self) -> T {
        if self.kind == BasisKind::Nodal {
            return T::one();
        }
        let eig = SymmetricEigen::new(self.gram.clone());
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((T::max_value().unwrap(), T::zero()), |(lo, hi), &e| {
                (lo.min(e), hi.max(e))
            });
        if lo > T::zero() {
            hi / lo
        } else {
            T::max_value().unwrap()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionOptions {
    /// Masking threshold `δ`: nodes with `|V_1| < δ·max|V_1|` are not divided.
    pub mask_threshold: f64,
    /// Largest acceptable Gram condition estimate without the ridge term.
    pub max_condition: f64,
    /// Adds `λ = 1e-12·trace(G)/J` to the Gram diagonal.
    pub ridge: bool,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions {
            mask_threshold: 1e-10,
            max_condition: 1e12,
            ridge: false,
        }
    }
}

/// Moment fields `V_1`, `V_2` on interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub v1: Vec<T>,
    pub v2: Vec<T>,
    pub condition: T,
}

/// Solves `G a^i = m^i` and expands `V_i = Σ_k a^i_k φ_k`.
pub fn recover_moments<T: Real>(
    data: &MeasurementSet<T>,
    basis: &BasisSpec<T>,
    options: &InversionOptions,
) -> Result<Moments<T>> {
    let j = basis.len();
    if data.len() != j {
        return Err(Error::ShapeMismatch {
            what: "measurement set",
            expected: j,
            got: data.len(),
        });
    }
    let condition = basis.condition_estimate();
    let mut gram = basis.gram().clone();
    if options.ridge {
        let lambda = T::lit(1e-12) * gram.trace() / T::from_usize_lossy(j);
        for k in 0..j {
            gram[(k, k)] += lambda;
        }
    } else if condition.as_f64() > options.max_condition {
        return Err(Error::IllConditionedGram {
            condition: condition.as_f64(),
        });
    }
    let n = basis.profiles().first().map_or(0, Vec::len);
    let expand = |coef: &DVector<T>| -> Vec<T> {
        let mut v = vec![T::zero(); n];
        for (c, phi) in coef.iter().zip(basis.profiles()) {
            for (vi, &p) in v.iter_mut().zip(phi) {
                *vi += *c * p;
            }
        }
        v
    };
    let solve = |rhs: Vec<T>| -> Result<Vec<T>> {
        if basis.kind() == BasisKind::Nodal && !options.ridge {
            let w = gram[(0, 0)];
            return Ok(rhs.into_iter().map(|m| m / w).collect());
        }
        let chol = gram.clone().cholesky().ok_or(Error::IllConditionedGram {
            condition: condition.as_f64(),
        })?;
        Ok(expand(&chol.solve(&DVector::from_vec(rhs))))
    };
    Ok(Moments {
        v1: solve(data.mode(0))?,
        v2: solve(data.mode(1))?,
        condition,
    })
}

/// Known collar trace of `V_1`: `Σ_n Δt v_n h_0(x, t_n)` per exterior node.
pub fn extend_v1_exterior<T: Real>(sensor: &SensorSpec<T>, grid: &TimeGrid<T>, v: &[T]) -> Result<Vec<T>> {
    if v.len() != sensor.n_times() {
        return Err(Error::ShapeMismatch {
            what: "temporal strength",
            expected: sensor.n_times(),
            got: v.len(),
        });
    }
    let mut out = vec![T::zero(); sensor.n_exterior()];
    for (n, &vn) in v.iter().enumerate() {
        for (o, &h) in out.iter_mut().zip(sensor.exterior_at(n)) {
            *o += vn * h;
        }
    }
    for o in &mut out {
        *o *= grid.dt;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub min_v1: f64,
    pub max_v1: f64,
    pub gram_condition: f64,
    pub masked: Vec<usize>,
    /// `max |V_2 + A V_1 + q̂ V_1|` over unmasked nodes, relative to the
    /// largest of `|V_2|`, `|A V_1|`, `|q̂ V_1|` there.
    pub identity_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult<T> {
    /// `q̂` on interior nodes; `None` where the node is masked.
    pub q: Vec<Option<T>>,
    pub v1: Vec<T>,
    pub v2: Vec<T>,
    pub v1_exterior: Vec<T>,
    pub diagnostics: Diagnostics,
}

impl<T: Real> ReconstructionResult<T> {
    /// Largest `|q̂ − q| / max(|q|, 1)` over unmasked nodes.
    pub fn max_relative_error(&self, truth: &[T]) -> T {
        self.q
            .iter()
            .zip(truth)
            .filter_map(|(q, &t)| q.map(|q| (q - t).abs() / t.abs().max(T::one())))
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Discrete relative L² error over unmasked nodes.
    pub fn relative_l2_error(&self, truth: &[T]) -> T {
        let (mut num, mut den) = (T::zero(), T::zero());
        for (q, &t) in self.q.iter().zip(truth) {
            if let Some(q) = q {
                num += (*q - t) * (*q - t);
                den += t * t;
            }
        }
        if den > T::zero() {
            (num / den).sqrt()
        } else {
            num.sqrt()
        }
    }

    /// `x[,y][,q_true],q_hat,masked` rows for interior nodes; `q_true` only
    /// when the truth is given.
    pub fn write_csv<W: Write>(&self, nodes: &NodeSet<T>, truth: Option<&[T]>, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["x"];
        if nodes.dimension() > 1 {
            header.push("y");
        }
        if truth.is_some() {
            header.push("q_true");
        }
        header.extend(["q_hat", "masked"]);
        w.write_record(&header)?;
        for (i, q) in self.q.iter().enumerate() {
            let mut rec: Vec<String> = nodes.coord(i).iter().map(|c| c.as_f64().to_string()).collect();
            if let Some(t) = truth {
                rec.push(t[i].as_f64().to_string());
            }
            rec.push(q.map_or(String::new(), |v| v.as_f64().to_string()));
            rec.push(q.is_none().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `q̂ = −(V_2 + A V_1) / V_1` on unmasked interior nodes, with `A` the
/// composite operator `D(Θ·D*·)` applied to `V_1` extended by its collar trace.
pub fn reconstruct_q<T: Real>(
    v1: &[T],
    v1_exterior: &[T],
    v2: &[T],
    op: &OperatorMatrix<T>,
    options: &InversionOptions,
) -> Result<ReconstructionResult<T>> {
    let ni = op.n_interior();
    if v1.len() != ni || v2.len() != ni {
        return Err(Error::ShapeMismatch {
            what: "moment field",
            expected: ni,
            got: v1.len().min(v2.len()),
        });
    }
    let full: Vec<T> = v1.iter().chain(v1_exterior).copied().collect();
    let av1 = op.apply(&full)?;
    let vmax = v1.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    let cut = T::lit(options.mask_threshold) * vmax;
    let mut q = Vec::with_capacity(ni);
    let mut masked = Vec::new();
    let mut residual = 0.0f64;
    for i in 0..ni {
        if !(v1[i].abs() >= cut) || v1[i] == T::zero() {
            masked.push(i);
            q.push(None);
            continue;
        }
        let qi = -(v2[i] + av1[i]) / v1[i];
        let scale = v2[i].abs().max(av1[i].abs()).max((qi * v1[i]).abs());
        let r = (v2[i] + av1[i] + qi * v1[i]).abs();
        if scale > T::zero() {
            residual = residual.max((r / scale).as_f64());
        }
        q.push(Some(qi));
    }
    if masked.len() == ni {
        return Err(Error::SensorDoesNotIlluminate);
    }
    let (min_v1, max_v1) = v1.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v.as_f64()), hi.max(v.as_f64()))
    });
    Ok(ReconstructionResult {
        q,
        v1: v1.to_vec(),
        v2: v2.to_vec(),
        v1_exterior: v1_exterior.to_vec(),
        diagnostics: Diagnostics {
            min_v1,
            max_v1,
            gram_condition: f64::NAN,
            masked,
            identity_residual: residual,
        },
    })
}

/// `max |V_2 + A V_1 + q V_1|` on interior nodes relative to `max |A V_1|`,
/// for a candidate coefficient.
pub fn identity_residual<T: Real>(
    v1: &[T],
    v1_exterior: &[T],
    v2: &[T],
    q: &[T],
    op: &OperatorMatrix<T>,
) -> Result<T> {
    let full: Vec<T> = v1.iter().chain(v1_exterior).copied().collect();
    let av1 = op.apply(&full)?;
    let (mut worst, mut scale) = (T::zero(), T::zero());
    for i in 0..op.n_interior() {
        worst = worst.max((v2[i] + av1[i] + q[i] * v1[i]).abs());
        scale = scale.max(av1[i].abs()).max(v2[i].abs());
    }
    Ok(if scale > T::zero() { worst / scale } else { worst })
}

/// Everything fixed across a family of forward runs: discretization, time
/// model, sensor, source family and temporal strength.
#[derive(Clone, Debug)]
pub struct Experiment<T: Real> {
    pub nodes: NodeSet<T>,
    pub interactions: Interactions<T>,
    pub operator: OperatorMatrix<T>,
    pub grid: TimeGrid<T>,
    pub model: Model<T>,
    pub sensor: SensorSpec<T>,
    pub basis: BasisSpec<T>,
    pub signal: Vec<T>,
}

impl<T: Real> Experiment<T> {
    pub fn propagator(&self, q: &CoefficientField<T>) -> Result<Propagator<T>> {
        Propagator::new(&self.operator, q, &self.model, self.grid)
    }

    pub fn synthesize(&self, q: &CoefficientField<T>) -> Result<MeasurementSet<T>> {
        let prop = self.propagator(q)?;
        synthesize_dataset(
            &self.interactions,
            &self.nodes,
            &prop,
            &self.model,
            &self.basis,
            &self.signal,
            &self.sensor,
        )
    }

    /// Full reconstruction from data: moments, collar trace, division.
    pub fn reconstruct(&self, data: &MeasurementSet<T>, options: &InversionOptions) -> Result<ReconstructionResult<T>> {
        let moments = recover_moments(data, &self.basis, options)?;
        let ext = extend_v1_exterior(&self.sensor, &self.grid, &self.signal)?;
        let mut out = reconstruct_q(&moments.v1, &ext, &moments.v2, &self.operator, options)?;
        out.diagnostics.gram_condition = moments.condition.as_f64();
        Ok(out)
    }

    /// Synthesizes data for two coefficients and compares both spaces.
    pub fn uniqueness_probe(&self, qa: &CoefficientField<T>, qb: &CoefficientField<T>) -> Result<UniquenessReport> {
        let (da, db) = rayon::join(|| self.synthesize(qa), || self.synthesize(qb));
        let (da, db) = (da?, db?);
        let coefficient_distance = qa
            .values()
            .iter()
            .zip(qb.values())
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs().as_f64()));
        let data_distance = da.distance(&db).as_f64();
        let data_scale = da.norm().max(db.norm()).as_f64();
        Ok(UniquenessReport {
            coefficient_distance,
            data_distance,
            data_scale,
        })
    }
}

/// Fractional pipeline entry point: validates the multi-term specification
/// against the experiment model before reconstructing.
pub fn reconstruct_q_fractional<T: Real>(
    experiment: &Experiment<T>,
    data: &MeasurementSet<T>,
    options: &InversionOptions,
) -> Result<ReconstructionResult<T>> {
    match &experiment.model {
        Model::Mttfnde(spec) => spec.validate()?,
        Model::Nde => {
            return Err(Error::InvalidFractional(
                "experiment uses the first-order time model".into(),
            ))
        }
    }
    experiment.reconstruct(data, options)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UniquenessReport {
    /// `max |q_a − q_b|`.
    pub coefficient_distance: f64,
    pub data_distance: f64,
    pub data_scale: f64,
}

impl UniquenessReport {
    /// Data are considered distinct above `1e-6` of their scale.
    pub fn data_distinct(&self) -> bool {
        self.data_distance > 1e-6 * self.data_scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;

    #[test]
    fn nodal_gram_is_diagonal_weight() {
        let nodes = NodeSet::<f64>::build(&DomainSpec::unit(1, 0.125, 0.25)).unwrap();
        let b = BasisSpec::nodal(&nodes);
        assert_eq!(b.len(), 7);
        assert_eq!(b.gram(), &DMatrix::from_diagonal_element(7, 7, 0.125));
        assert_eq!(b.condition_estimate(), 1.0);
    }

    #[test]
    fn sine_gram_is_identity() {
        let nodes = NodeSet::<f64>::build(&DomainSpec::unit(1, 1.0 / 64.0, 0.125)).unwrap();
        let b = BasisSpec::sine(&nodes, 32).unwrap();
        let err = (b.gram() - DMatrix::identity(32, 32)).amax();
        assert!(err < 1e-12, "{err}");
        assert!(BasisSpec::sine(&nodes, 64).is_err());
        let nodes2 = NodeSet::<f64>::build(&DomainSpec::unit(2, 0.125, 0.25)).unwrap();
        let b2 = BasisSpec::sine(&nodes2, 10).unwrap();
        assert!((b2.gram() - DMatrix::identity(10, 10)).amax() < 1e-12);
    }

    #[test]
    fn zero_data_gives_zero_moments() {
        let nodes = NodeSet::<f64>::build(&DomainSpec::unit(1, 0.125, 0.25)).unwrap();
        let b = BasisSpec::nodal(&nodes);
        let data = MeasurementSet {
            values: vec![[0.0; 2]; 7],
            noise: 0.0,
            seed: None,
        };
        let m = recover_moments(&data, &b, &InversionOptions::default()).unwrap();
        assert!(m.v1.iter().chain(&m.v2).all(|&v| v == 0.0));
    }

    #[test]
    fn nodal_moments_divide_by_weight() {
        let nodes = NodeSet::<f64>::build(&DomainSpec::unit(1, 0.125, 0.25)).unwrap();
        let b = BasisSpec::nodal(&nodes);
        let data = MeasurementSet {
            values: (0..7).map(|j| [j as f64, 1.0]).collect(),
            noise: 0.0,
            seed: None,
        };
        let m = recover_moments(&data, &b, &InversionOptions::default()).unwrap();
        for j in 0..7 {
            assert_eq!(m.v1[j], j as f64 / 0.125);
            assert_eq!(m.v2[j], 8.0);
        }
    }

    #[test]
    fn size_mismatch_rejected() {
        let nodes = NodeSet::<f64>::build(&DomainSpec::unit(1, 0.125, 0.25)).unwrap();
        let b = BasisSpec::nodal(&nodes);
        let data = MeasurementSet {
            values: vec![[0.0; 2]; 3],
            noise: 0.0,
            seed: None,
        };
        assert!(recover_moments(&data, &b, &InversionOptions::default()).is_err());
    }
}
