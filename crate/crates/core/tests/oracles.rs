//! Library results against brute-force or closed-form references.

use nonlocal_inverse::fractional::{caputo_apply, gamma, multiterm_apply};
use nonlocal_inverse::measurement::{adjoint_pairing, measure};
use nonlocal_inverse::{
    AntisymmetricField, AssemblyOptions, CoefficientField, DomainSpec, FractionalSpec, Interactions, KernelSpec,
    LowerTerm, Model, NodeLabel, NodeSet, OperatorMatrix, Propagator, SensorSpec, SourceSpec, TensorField, TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn power_setup(dim: usize, cells: usize, m: usize, beta: f64) -> (NodeSet<f64>, KernelSpec<f64>, Interactions<f64>) {
    let h = 1.0 / cells as f64;
    let nodes = NodeSet::build(&DomainSpec::unit(dim, h, m as f64 * h)).unwrap();
    let k = KernelSpec::power(dim, beta, 1.0, nodes.horizon()).unwrap();
    let ints = Interactions::new(&nodes, &AntisymmetricField::new(k.clone(), TensorField::default()));
    (nodes, k, ints)
}

#[test]
fn collar_matches_brute_force_in_2d() {
    for &(cells, m) in &[(6i64, 1i64), (8, 2), (10, 3)] {
        let h = 1.0 / cells as f64;
        let nodes = NodeSet::<f64>::build(&DomainSpec::unit(2, h, m as f64 * h)).unwrap();
        let interior: Vec<(i64, i64)> = (1..cells).flat_map(|i| (1..cells).map(move |j| (i, j))).collect();
        let mut collar = 0;
        for i in -m - 2..=cells + m + 2 {
            for j in -m - 2..=cells + m + 2 {
                if interior.contains(&(i, j)) {
                    continue;
                }
                let near = interior
                    .iter()
                    .any(|&(a, b)| (a - i).pow(2) + (b - j).pow(2) <= m * m);
                if near {
                    collar += 1;
                    assert!(nodes.find([i, j]).is_some(), "missing collar node ({i}, {j})");
                }
            }
        }
        assert_eq!(nodes.n_interior(), interior.len());
        assert_eq!(nodes.n_exterior(), collar, "cells {cells}, m {m}");
    }
}

/// `−L u` by looping over every node pair and testing the distance directly.
fn naive_neg_laplacian(nodes: &NodeSet<f64>, k: &KernelSpec<f64>, u: &[f64]) -> Vec<f64> {
    let eps = nodes.horizon();
    let w = nodes.uniform_weight();
    (0..nodes.len())
        .map(|i| {
            let xi = nodes.coord(i);
            let mut s = 0.0;
            for j in 0..nodes.len() {
                let xj = nodes.coord(j);
                let r = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if j == i || r > eps * (1.0 + 1e-9) {
                    continue;
                }
                let half = if (r - eps).abs() <= 1e-9 * eps { 0.5 } else { 1.0 };
                s += half * w * k.radial(r) * (u[j] - u[i]);
            }
            -2.0 * s
        })
        .collect()
}

#[test]
fn operator_matches_pair_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(dim, cells, m, beta) in &[(1, 20, 3, 0.25), (1, 16, 1, 0.75), (2, 8, 2, 0.4)] {
        let (nodes, k, ints) = power_setup(dim, cells, m, beta);
        let u: Vec<f64> = (0..nodes.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = ints.neg_laplacian(&u).unwrap();
        let slow = naive_neg_laplacian(&nodes, &k, &u);
        let scale = slow.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
        }
        let op = OperatorMatrix::assemble(&ints, AssemblyOptions::default()).unwrap();
        let applied = op.apply(&u).unwrap();
        for i in nodes.interior() {
            assert!((applied[i] - slow[i]).abs() <= 1e-12 * scale);
        }
    }
}

#[test]
fn quadratic_profile_converges_to_closed_form() {
    // −L x² = −4γ ε^{2−2β}/(2−2β) in one dimension
    let (beta, eps) = (0.25f64, 0.25f64);
    let exact = -4.0 * eps.powf(2.0 - 2.0 * beta) / (2.0 - 2.0 * beta);
    let at_centre = |cells: usize| {
        let (nodes, _, ints) = power_setup(1, cells, cells / 4, beta);
        let u: Vec<f64> = (0..nodes.len()).map(|i| nodes.coord(i)[0].powi(2)).collect();
        let c = nodes.find([(cells / 2) as i64, 0]).unwrap();
        ints.neg_laplacian(&u).unwrap()[c]
    };
    let (coarse, fine) = (at_centre(64), at_centre(128));
    let raw = (fine - exact).abs() / exact.abs();
    assert!(raw < 0.01, "raw error {raw}");
    let p = 2f64.powf(1.5);
    let extrapolated = (p * fine - coarse) / (p - 1.0);
    let rich = (extrapolated - exact).abs() / exact.abs();
    assert!(rich < raw / 5.0, "Richardson {rich} vs raw {raw}");
}

#[test]
fn measurement_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (nodes, k, ints) = power_setup(1, 24, 3, 0.3);
    let grid = TimeGrid::new(1.0, 12).unwrap();
    let q = CoefficientField::from_fn(&nodes, |x| 1.0 + x[0]).unwrap();
    let op = OperatorMatrix::assemble(&ints, AssemblyOptions::default()).unwrap();
    let prop = Propagator::new(&op, &q, &Model::Nde, grid).unwrap();
    let phi: Vec<f64> = (0..nodes.n_interior()).map(|_| rng.random::<f64>()).collect();
    let v = grid.sample(|t| t * t);
    let u = prop.forward(&SourceSpec::new(phi, v).unwrap()).unwrap();
    let sensor = SensorSpec::default_bump(&nodes, &grid).unwrap();

    let w = nodes.uniform_weight();
    let mut expect = 0.0;
    for n in 0..grid.n_levels() {
        let c = if n == 0 || n == grid.steps { 0.5 } else { 1.0 };
        let un = u.at(n);
        let flux = naive_neg_laplacian(&nodes, &k, un);
        for (e, x) in nodes.exterior().enumerate() {
            if nodes.label(x) == NodeLabel::Accessible {
                // N(Θ·D*u) = L u = −(−L u) on the collar
                expect += c * w * grid.dt * (-flux[x]) * sensor.exterior_at(n)[e];
            }
        }
    }
    let got = measure(&ints, &nodes, &grid, &u, &sensor).unwrap();
    assert!((got - expect).abs() <= 1e-12 * expect.abs(), "{got} vs {expect}");
}

/// Each interior impulse `e_i ⊗ e_n` gives one entry of the measurement
/// functional; together they must equal the adjoint field entrywise.
#[test]
fn fractional_adjoint_is_the_transposed_response() {
    let (nodes, _, ints) = power_setup(1, 12, 2, 0.25);
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let spec = FractionalSpec::multi(0.7, vec![LowerTerm { order: 0.3, weight: 0.5 }]).unwrap();
    let model = Model::Mttfnde(spec);
    let q = CoefficientField::from_fn(&nodes, |x| 1.0 + (3.0 * x[0]).sin().powi(2)).unwrap();
    let op = OperatorMatrix::assemble(&ints, AssemblyOptions::default()).unwrap();
    let prop = Propagator::new(&op, &q, &model, grid).unwrap();
    let sensor = SensorSpec::default_bump(&nodes, &grid).unwrap();
    let adj = prop.adjoint_transpose(&sensor).unwrap();
    let scale = adj.max_abs();
    let ni = nodes.n_interior();
    let w = nodes.uniform_weight();
    for n in 1..grid.n_levels() {
        for i in 0..ni {
            let mut phi = vec![0.0; ni];
            phi[i] = 1.0;
            let mut v = vec![0.0; grid.n_levels()];
            v[n] = 1.0;
            let u = prop.forward(&SourceSpec::new(phi.clone(), v.clone()).unwrap()).unwrap();
            let m = measure(&ints, &nodes, &grid, &u, &sensor).unwrap();
            assert!((m / (w * grid.dt) - adj.get(i, n)).abs() <= 1e-12 * scale);
            let pairing = adjoint_pairing(&nodes, &grid, &adj, &phi, &v);
            assert!((m - pairing).abs() <= 1e-12 * scale * w * grid.dt);
        }
    }
}

#[test]
fn l1_derivative_matches_defining_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (alpha, dt, n) = (0.35, 0.05, 30);
    let f: Vec<f64> = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lib = caputo_apply(alpha, dt, &f).unwrap();
    for k in 1..=n {
        let mut s = 0.0;
        for j in 1..=k {
            let l = (k - j) as f64;
            s += ((l + 1.0).powf(1.0 - alpha) - l.powf(1.0 - alpha)) * (f[j] - f[j - 1]);
        }
        let expect = s / (dt.powf(alpha) * gamma(2.0 - alpha));
        assert!((lib[k] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }
    // the multi-term operator is the weighted sum of single terms
    let spec = FractionalSpec::multi(0.8, vec![LowerTerm { order: 0.2, weight: 2.0 }]).unwrap();
    let combined = multiterm_apply(&spec, dt, &f).unwrap();
    let a = caputo_apply(0.8, dt, &f).unwrap();
    let b = caputo_apply(0.2, dt, &f).unwrap();
    for k in 0..=n {
        assert!((combined[k] - a[k] - 2.0 * b[k]).abs() <= 1e-12 * combined[k].abs().max(1.0));
    }
}

#[test]
fn l1_is_exact_for_linear_functions() {
    // D^α t = t^{1−α}/Γ(2−α), reproduced exactly by piecewise-linear interpolation
    let (alpha, dt, n) = (0.6, 0.1, 20);
    let f: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
    let d = caputo_apply(alpha, dt, &f).unwrap();
    for (k, &dk) in d.iter().enumerate() {
        let t = k as f64 * dt;
        let exact = t.powf(1.0 - alpha) / gamma(2.0 - alpha);
        assert!((dk - exact).abs() <= 1e-12 * exact.max(1.0));
    }
}
