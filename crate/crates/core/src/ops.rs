//! Discrete nonlocal vector calculus on a [`NodeSet`].
//!
//! Integrals over `Ω ∪ Ω_I` become weighted sums over the stored nodes; the
//! pair weight `ω_ij = w_j·χ_ij` carries the horizon factor `χ` from the
//! stencil. Because `ω`, `γ` and `Θ` are pair-symmetric and `α` is
//! antisymmetric, the discrete Gauss theorem and Green's first identity hold
//! exactly, up to roundoff.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::domain::NodeSet;
use crate::error::{Error, Result};
use crate::kernel::{dot, mat_vec, AntisymmetricField, Kernel, Tensor};
use crate::scalar::Real;

/// Per-pair data of the interaction graph, stored row-wise (CSR).
#[derive(Clone, Debug)]
pub struct Interactions<T> {
    n_nodes: usize,
    n_interior: usize,
    weight: T,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    factor: Vec<T>,
    gamma: Vec<T>,
    alpha: Vec<[T; 2]>,
    theta: Vec<Tensor<T>>,
    reverse: Vec<usize>,
    mirror: Vec<Option<usize>>,
}

/// Vector-valued two-point field `ν(x_i, x_j)` aligned with the pair list.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoPointField<T> {
    pub values: Vec<[T; 2]>,
}

impl<T: Real> Interactions<T> {
    /// Evaluates `γ`, `α` and `Θ` on every in-horizon node pair.
    pub fn new<K: Kernel<T>>(nodes: &NodeSet<T>, alpha: &AntisymmetricField<K, T>) -> Self {
        let stencil = nodes.stencil();
        let n = nodes.len();
        let rows: Vec<Vec<(usize, T, [i64; 2])>> = (0..n)
            .map(|i| {
                let li = nodes.lattice_index(i);
                let mut row: Vec<(usize, T, [i64; 2])> = stencil
                    .iter()
                    .filter_map(|o| {
                        nodes
                            .find([li[0] + o.delta[0], li[1] + o.delta[1]])
                            .map(|j| (j, o.factor, o.delta))
                    })
                    .collect();
                row.sort_by_key(|e| e.0);
                row
            })
            .collect();

        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col = Vec::new();
        let mut factor = Vec::new();
        let mut deltas = Vec::new();
        for row in &rows {
            for &(j, f, d) in row {
                col.push(j);
                factor.push(f);
                deltas.push(d);
            }
            row_ptr.push(col.len());
        }

        let (mut gamma, mut alpha_v, mut theta) = (
            Vec::with_capacity(col.len()),
            Vec::with_capacity(col.len()),
            Vec::with_capacity(col.len()),
        );
        for i in 0..n {
            let xi = nodes.coord(i);
            for &j in &col[row_ptr[i]..row_ptr[i + 1]] {
                let xj = nodes.coord(j);
                gamma.push(alpha.kernel().eval(xi, xj));
                alpha_v.push(alpha.eval(xi, xj));
                theta.push(alpha.theta().eval(xi, xj));
            }
        }

        let find_in_row = |i: usize, j: usize| -> Option<usize> {
            let slice = &col[row_ptr[i]..row_ptr[i + 1]];
            slice.binary_search(&j).ok().map(|k| row_ptr[i] + k)
        };
        let mut reverse = vec![usize::MAX; col.len()];
        let mut mirror = vec![None; col.len()];
        for i in 0..n {
            let li = nodes.lattice_index(i);
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = col[k];
                reverse[k] = find_in_row(j, i).expect("stencil is symmetric");
                let d = deltas[k];
                mirror[k] = nodes
                    .find([li[0] - d[0], li[1] - d[1]])
                    .and_then(|jm| find_in_row(i, jm));
            }
        }

        Interactions {
            n_nodes: n,
            n_interior: nodes.n_interior(),
            weight: nodes.uniform_weight(),
            row_ptr,
            col,
            factor,
            gamma,
            alpha: alpha_v,
            theta,
            reverse,
            mirror,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_pairs(&self) -> usize {
        self.col.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn pair_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn gamma(&self, k: usize) -> T {
        self.gamma[k]
    }

    pub fn alpha(&self, k: usize) -> [T; 2] {
        self.alpha[k]
    }

    pub fn theta(&self, k: usize) -> &Tensor<T> {
        &self.theta[k]
    }

    /// Quadrature weight `ω_ij` of pair `k`.
    pub fn pair_weight(&self, k: usize) -> T {
        self.weight * self.factor[k]
    }

    pub fn node_weight(&self) -> T {
        self.weight
    }

    /// Index of pair `(j, i)` given pair `k = (i, j)`.
    pub fn reverse(&self, k: usize) -> usize {
        self.reverse[k]
    }

    /// Kernel symmetry on every stored pair, relative tolerance `rtol`.
    pub fn check_kernel_symmetry(&self, rtol: T) -> Result<()> {
        for i in 0..self.n_nodes {
            for k in self.pair_range(i) {
                let (a, b) = (self.gamma[k], self.gamma[self.reverse[k]]);
                if (a - b).abs() > rtol * a.abs().max(b.abs()) {
                    return Err(Error::KernelAsymmetric {
                        i,
                        j: self.col[k],
                        forward: a.as_f64(),
                        backward: b.as_f64(),
                    });
                }
            }
        }
        Ok(())
    }

    /// `α` antisymmetry, `Θ` symmetry (both senses) and `α·(Θ·α) = γ`.
    pub fn check_field_consistency(&self, rtol: T) -> Result<()> {
        for i in 0..self.n_nodes {
            for k in self.pair_range(i) {
                let j = self.col[k];
                let r = self.reverse[k];
                let (a, ar) = (self.alpha[k], self.alpha[r]);
                let scale = a[0].abs() + a[1].abs();
                if (a[0] + ar[0]).abs() + (a[1] + ar[1]).abs() > rtol * scale {
                    return Err(Error::InconsistentFields {
                        i,
                        j,
                        reason: "alpha is not antisymmetric".into(),
                    });
                }
                let (t, tr) = (&self.theta[k], &self.theta[r]);
                let tscale = t[0][0].abs() + t[1][1].abs();
                let mut asym = (t[0][1] - t[1][0]).abs();
                for p in 0..2 {
                    for q in 0..2 {
                        asym += (t[p][q] - tr[p][q]).abs();
                    }
                }
                if asym > rtol * tscale {
                    return Err(Error::InconsistentFields {
                        i,
                        j,
                        reason: "theta is not symmetric".into(),
                    });
                }
                let g = dot(&a, &mat_vec(t, &a));
                if (g - self.gamma[k]).abs() > rtol * self.gamma[k].abs() {
                    return Err(Error::InconsistentFields {
                        i,
                        j,
                        reason: format!("alpha.(theta.alpha) = {g} but gamma = {}", self.gamma[k]),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_len(&self, what: &'static str, got: usize) -> Result<()> {
        if got != self.n_nodes {
            return Err(Error::ShapeMismatch {
                what,
                expected: self.n_nodes,
                got,
            });
        }
        Ok(())
    }

    fn check_pairs(&self, what: &'static str, nu: &TwoPointField<T>) -> Result<()> {
        if nu.values.len() != self.n_pairs() {
            return Err(Error::ShapeMismatch {
                what,
                expected: self.n_pairs(),
                got: nu.values.len(),
            });
        }
        Ok(())
    }

    /// `D*u(x, y) = −(u(y) − u(x))·α(x, y)`; `−D*` is the nonlocal gradient.
    pub fn adjoint_divergence(&self, u: &[T]) -> Result<TwoPointField<T>> {
        self.check_len("scalar field", u.len())?;
        let mut values = Vec::with_capacity(self.n_pairs());
        for (i, &ui) in u.iter().enumerate() {
            for k in self.pair_range(i) {
                let diff = u[self.col[k]] - ui;
                let a = self.alpha[k];
                values.push([-diff * a[0], -diff * a[1]]);
            }
        }
        Ok(TwoPointField { values })
    }

    /// Pointwise `Θ·ν`.
    pub fn apply_tensor(&self, nu: &TwoPointField<T>) -> Result<TwoPointField<T>> {
        self.check_pairs("two-point field", nu)?;
        Ok(TwoPointField {
            values: nu
                .values
                .iter()
                .zip(&self.theta)
                .map(|(v, t)| mat_vec(t, v))
                .collect(),
        })
    }

    /// `Σ_j ω_ij (ν(i,j) + ν(j,i))·α(i,j)` and the matching sum of magnitudes.
    fn flux_sum(&self, nu: &TwoPointField<T>, i: usize) -> (T, T) {
        let mut s = T::zero();
        let mut a = T::zero();
        for k in self.pair_range(i) {
            let v = nu.values[k];
            let vr = nu.values[self.reverse[k]];
            let term = self.pair_weight(k) * dot(&[v[0] + vr[0], v[1] + vr[1]], &self.alpha[k]);
            s += term;
            a += term.abs();
        }
        (s, a)
    }

    /// Nonlocal divergence `D(ν)` at every node (integration over the node set).
    pub fn divergence(&self, nu: &TwoPointField<T>) -> Result<Vec<T>> {
        self.check_pairs("two-point field", nu)?;
        Ok((0..self.n_nodes).map(|i| self.flux_sum(nu, i).0).collect())
    }

    /// Interaction operator `N(ν)` on the collar; interior entries are zero.
    pub fn interaction(&self, nu: &TwoPointField<T>) -> Result<Vec<T>> {
        self.check_pairs("two-point field", nu)?;
        Ok((0..self.n_nodes)
            .map(|i| {
                if i < self.n_interior {
                    T::zero()
                } else {
                    -self.flux_sum(nu, i).0
                }
            })
            .collect())
    }

    /// `Σ_i w_i Σ_j ω_ij a(i,j)·b(i,j)` and its magnitude sum.
    pub fn pair_inner(&self, a: &TwoPointField<T>, b: &TwoPointField<T>) -> Result<(T, T)> {
        self.check_pairs("two-point field", a)?;
        self.check_pairs("two-point field", b)?;
        let mut s = T::zero();
        let mut m = T::zero();
        for i in 0..self.n_nodes {
            for k in self.pair_range(i) {
                let t = self.weight * self.pair_weight(k) * dot(&a.values[k], &b.values[k]);
                s += t;
                m += t.abs();
            }
        }
        Ok((s, m))
    }

    /// `D(Θ·D*u) = −L u` evaluated with the reduced pair formula
    /// `−2 Σ_j ω_ij γ_ij (u_j − u_i)` at every node.
    pub fn neg_laplacian(&self, u: &[T]) -> Result<Vec<T>> {
        self.check_len("scalar field", u.len())?;
        let two = T::lit(2.0);
        Ok((0..self.n_nodes)
            .map(|i| {
                let mut s = T::zero();
                for k in self.pair_range(i) {
                    s += self.pair_weight(k) * self.gamma[k] * (u[self.col[k]] - u[i]);
                }
                -two * s
            })
            .collect())
    }

    /// Same as [`Interactions::neg_laplacian`], but sums each in-horizon
    /// neighbour together with its reflection through `x_i` so that the
    /// leading singular contributions cancel before weighting.
    pub fn neg_laplacian_paired(&self, u: &[T]) -> Result<Vec<T>> {
        self.check_len("scalar field", u.len())?;
        let two = T::lit(2.0);
        Ok((0..self.n_nodes)
            .map(|i| {
                let mut s = T::zero();
                for k in self.pair_range(i) {
                    let j = self.col[k];
                    match self.mirror[k] {
                        Some(km) if km != k => {
                            // each reflected pair visited once, from the larger column
                            if j < self.col[km] {
                                continue;
                            }
                            let (wa, wb) = (
                                self.pair_weight(k) * self.gamma[k],
                                self.pair_weight(km) * self.gamma[km],
                            );
                            if wa == wb {
                                s += wa * ((u[j] - u[i]) + (u[self.col[km]] - u[i]));
                            } else {
                                s += wa * (u[j] - u[i]) + wb * (u[self.col[km]] - u[i]);
                            }
                        }
                        _ => s += self.pair_weight(k) * self.gamma[k] * (u[j] - u[i]),
                    }
                }
                -two * s
            })
            .collect())
    }

    /// `N(Θ·D*u)(x) = 2 Σ_j ω_xj γ_xj (u_j − u_x)` on the collar, indexed by
    /// position within the exterior block.
    pub fn flux_density(&self, u: &[T]) -> Result<Vec<T>> {
        self.check_len("scalar field", u.len())?;
        let two = T::lit(2.0);
        Ok((self.n_interior..self.n_nodes)
            .map(|x| {
                let mut s = T::zero();
                for k in self.pair_range(x) {
                    s += self.pair_weight(k) * self.gamma[k] * (u[self.col[k]] - u[x]);
                }
                two * s
            })
            .collect())
    }
}

/// Residual report of a discrete integral identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityResidual<T> {
    pub lhs: T,
    pub rhs: T,
    pub residual: T,
    /// Sum of magnitudes of every summand; roundoff is measured against it.
    pub scale: T,
}

impl<T: Real> IdentityResidual<T> {
    pub fn relative(&self) -> T {
        if self.scale > T::zero() {
            self.residual / self.scale
        } else {
            self.residual
        }
    }
}

/// Discrete nonlocal Gauss theorem: `Σ_Ω w D(ν) = Σ_{Ω_I} w N(ν)`.
pub fn check_gauss<T: Real>(ints: &Interactions<T>, nu: &TwoPointField<T>) -> Result<IdentityResidual<T>> {
    ints.check_pairs("two-point field", nu)?;
    let w = ints.weight;
    let (mut lhs, mut rhs, mut scale) = (T::zero(), T::zero(), T::zero());
    for i in 0..ints.n_nodes {
        let (s, a) = ints.flux_sum(nu, i);
        if i < ints.n_interior {
            lhs += w * s;
        } else {
            rhs += -(w * s);
        }
        scale += w * a;
    }
    Ok(IdentityResidual {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        scale,
    })
}

/// Discrete Green's first identity
/// `Σ_Ω w ν D(Θ·D*u) − ΣΣ w ω (D*ν)·(Θ·D*u) = Σ_{Ω_I} w ν N(Θ·D*u)`,
/// evaluated through the general `D`, `D*`, `N` operators.
pub fn check_green<T: Real>(ints: &Interactions<T>, u: &[T], nu: &[T]) -> Result<IdentityResidual<T>> {
    ints.check_len("u", u.len())?;
    ints.check_len("nu", nu.len())?;
    let flux = ints.apply_tensor(&ints.adjoint_divergence(u)?)?;
    let dnu = ints.adjoint_divergence(nu)?;
    let w = ints.weight;

    let (mut first, mut boundary, mut scale) = (T::zero(), T::zero(), T::zero());
    for i in 0..ints.n_nodes {
        let (s, a) = ints.flux_sum(&flux, i);
        if i < ints.n_interior {
            first += w * nu[i] * s;
        } else {
            boundary += w * nu[i] * (-s);
        }
        scale += w * nu[i].abs() * a;
    }
    let (pair, pair_scale) = ints.pair_inner(&dnu, &flux)?;
    let lhs = first - pair;
    Ok(IdentityResidual {
        lhs,
        rhs: boundary,
        residual: (lhs - boundary).abs(),
        scale: scale + pair_scale,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AssemblyOptions {
    /// Evaluate matrix-free applications with reflected-pair summation.
    pub symmetric_pairing: bool,
}

/// Dense matrix of `u ↦ D(Θ·D*u) = −L u` over all nodes.
///
/// Rows of collar nodes hold the same pair sum restricted to the node set,
/// i.e. `−N(Θ·D*u)`.
#[derive(Clone, Debug)]
pub struct OperatorMatrix<T: Real> {
    matrix: DMatrix<T>,
    n_interior: usize,
    options: AssemblyOptions,
}

impl<T: Real> OperatorMatrix<T> {
    pub fn assemble(ints: &Interactions<T>, options: AssemblyOptions) -> Result<Self> {
        // floors sized for f64, widened to a few ulps for narrower types
        let ulps = T::lit(64.0) * T::epsilon();
        ints.check_kernel_symmetry(T::lit(1e-12).max(ulps))?;
        ints.check_field_consistency(T::lit(1e-10).max(ulps))?;
        let n = ints.n_nodes;
        let two = T::lit(2.0);
        let rows: Vec<Vec<(usize, T)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                ints.pair_range(i)
                    .map(|k| (ints.col[k], two * ints.pair_weight(k) * ints.gamma[k]))
                    .collect()
            })
            .collect();
        let mut matrix = DMatrix::zeros(n, n);
        for (i, row) in rows.into_iter().enumerate() {
            let mut diag = T::zero();
            for (j, c) in row {
                matrix[(i, j)] = -c;
                diag += c;
            }
            if !diag.is_finite() {
                return Err(Error::Overflow { row: i });
            }
            matrix[(i, i)] = diag;
        }
        Ok(OperatorMatrix {
            matrix,
            n_interior: ints.n_interior,
            options,
        })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn options(&self) -> AssemblyOptions {
        self.options
    }

    /// `A_II`, the interior-by-interior block.
    pub fn interior_block(&self) -> DMatrix<T> {
        let n = self.n_interior;
        self.matrix.view((0, 0), (n, n)).into_owned()
    }

    /// `A_IE`, coupling interior rows to collar values.
    pub fn interior_exterior_block(&self) -> DMatrix<T> {
        let (n, m) = (self.n_interior, self.n_nodes() - self.n_interior);
        self.matrix.view((0, n), (n, m)).into_owned()
    }

    /// `−L u` at every node.
    pub fn apply(&self, u: &[T]) -> Result<Vec<T>> {
        if u.len() != self.n_nodes() {
            return Err(Error::ShapeMismatch {
                what: "scalar field",
                expected: self.n_nodes(),
                got: u.len(),
            });
        }
        let n = self.n_nodes();
        Ok((0..n)
            .map(|i| {
                let row = self.matrix.row(i);
                row.iter().zip(u).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect())
    }

    /// Largest |row sum| over interior rows relative to the largest entry.
    pub fn interior_row_sum_defect(&self) -> T {
        let mut worst = T::zero();
        let mut big = T::zero();
        for i in 0..self.n_interior {
            let row = self.matrix.row(i);
            let s = row.iter().fold(T::zero(), |a, &b| a + b);
            worst = worst.max(s.abs());
            big = row.iter().fold(big, |a, &b| a.max(b.abs()));
        }
        if big > T::zero() {
            worst / big
        } else {
            worst
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "col", "value"])?;
        for i in 0..self.n_nodes() {
            for j in 0..self.n_nodes() {
                let v = self.matrix[(i, j)];
                if v != T::zero() {
                    w.write_record(&[i.to_string(), j.to_string(), v.as_f64().to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::kernel::{KernelSpec, SkewedKernel, TensorField};

    fn setup(h: f64, eps: f64) -> (NodeSet<f64>, Interactions<f64>) {
        let nodes = NodeSet::build(&DomainSpec::unit(1, h, eps)).unwrap();
        let k = KernelSpec::power(1, 0.25, 1.0, eps).unwrap();
        let a = AntisymmetricField::new(k, TensorField::default());
        let ints = Interactions::new(&nodes, &a);
        (nodes, ints)
    }

    #[test]
    fn constants_are_annihilated() {
        let (nodes, ints) = setup(1.0 / 16.0, 0.25);
        let op = OperatorMatrix::assemble(&ints, AssemblyOptions::default()).unwrap();
        let u = vec![3.0; nodes.len()];
        let lu = op.apply(&u).unwrap();
        for i in nodes.interior() {
            assert!(lu[i].abs() < 1e-12 * op.matrix().amax());
        }
        assert!(op.interior_row_sum_defect() < 1e-12);
    }

    #[test]
    fn linear_field_is_annihilated_at_full_ball_nodes() {
        let (nodes, ints) = setup(1.0 / 16.0, 0.25);
        let u: Vec<f64> = (0..nodes.len()).map(|i| nodes.coord(i)[0]).collect();
        let lu = ints.neg_laplacian(&u).unwrap();
        for i in nodes.interior() {
            assert!(lu[i].abs() < 1e-12, "node {i}: {}", lu[i]);
        }
    }

    #[test]
    fn m_matrix_sign_pattern() {
        let (_, ints) = setup(1.0 / 16.0, 0.25);
        let op = OperatorMatrix::assemble(&ints, AssemblyOptions::default()).unwrap();
        let a = op.interior_block();
        for i in 0..a.nrows() {
            assert!(a[(i, i)] > 0.0);
            for j in 0..a.ncols() {
                if i != j {
                    assert!(a[(i, j)] <= 0.0);
                    assert_eq!(a[(i, j)], a[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn assembly_rejects_asymmetric_kernel() {
        let nodes = NodeSet::build(&DomainSpec::unit(1, 0.125, 0.25)).unwrap();
        let k = SkewedKernel {
            inner: KernelSpec::power(1, 0.25, 1.0, 0.25).unwrap(),
            skew: 0.2,
        };
        let a = AntisymmetricField::new(k, TensorField::default());
        let ints = Interactions::new(&nodes, &a);
        assert!(matches!(
            OperatorMatrix::assemble(&ints, AssemblyOptions::default()),
            Err(Error::KernelAsymmetric { .. })
        ));
    }

    #[test]
    fn paired_and_plain_sums_agree() {
        let (nodes, ints) = setup(1.0 / 32.0, 0.125);
        let u: Vec<f64> = (0..nodes.len()).map(|i| (3.0 * nodes.coord(i)[0]).sin()).collect();
        let a = ints.neg_laplacian(&u).unwrap();
        let b = ints.neg_laplacian_paired(&u).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }

    #[test]
    fn composite_operator_matches_reduced_formula() {
        let nodes = NodeSet::<f64>::build(&DomainSpec::unit(2, 0.125, 0.25)).unwrap();
        let k = KernelSpec::bounded(2, 0.3, 1.0, 2.0, 0.25).unwrap();
        let theta = TensorField::Modulated {
            scale: 1.5,
            amplitude: 0.3,
        };
        let ints = Interactions::new(&nodes, &AntisymmetricField::new(k, theta));
        let u: Vec<f64> = (0..nodes.len())
            .map(|i| {
                let x = nodes.coord(i);
                (x[0] * 2.0).cos() + x[1] * x[1]
            })
            .collect();
        let general = ints
            .divergence(&ints.apply_tensor(&ints.adjoint_divergence(&u).unwrap()).unwrap())
            .unwrap();
        let reduced = ints.neg_laplacian(&u).unwrap();
        for (g, r) in general.iter().zip(&reduced) {
            assert!((g - r).abs() <= 1e-10 * r.abs().max(1.0f64));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (_, ints) = setup(0.125, 0.25);
        assert!(matches!(
            ints.neg_laplacian(&[1.0, 2.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
