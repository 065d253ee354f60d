//! Acceptance suite. Runs as a plain binary so that every criterion prints one
//! status line; exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;

use nonlocal_inverse::config::{CoefficientSource, Scenario};
use nonlocal_inverse::fractional::{caputo_apply, check_extremum_lemma};
use nonlocal_inverse::limit::{run_limit_check, LimitCheckSpec};
use nonlocal_inverse::measurement::{adjoint_pairing, measure};
use nonlocal_inverse::ops::{check_gauss, check_green};
use nonlocal_inverse::pipeline::Setup;
use nonlocal_inverse::solver::verify_weak_mp;
use nonlocal_inverse::{
    AntisymmetricField, BasisKind, CoefficientField, DomainSpec, FractionalSpec, InversionOptions, Interactions,
    KernelSpec, LowerTerm, Model, NodeLabel, NodeSet, Propagator, SensorSpec, SourceSpec, TensorField, TimeGrid,
    TwoPointField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fractional() -> Model<f64> {
    Model::Mttfnde(
        FractionalSpec::multi(
            0.7,
            vec![LowerTerm {
                order: 0.3,
                weight: 0.5,
            }],
        )
        .unwrap(),
    )
}

fn standard(model: Model<f64>) -> Setup {
    let mut s = Scenario::standard();
    s.model = model;
    Setup::new(&s).unwrap()
}

fn random_sensor(rng: &mut ChaCha8Rng, nodes: &NodeSet<f64>, grid: &TimeGrid<f64>) -> SensorSpec<f64> {
    let (ne, levels) = (nodes.n_exterior(), grid.n_levels());
    let mut values = vec![0.0; ne * levels];
    for n in 1..levels - 1 {
        for e in 0..ne {
            if nodes.label(nodes.n_interior() + e) == NodeLabel::Accessible {
                values[n * ne + e] = rng.random::<f64>();
            }
        }
    }
    SensorSpec::from_values(ne, levels, values).unwrap()
}

fn random_signal(rng: &mut ChaCha8Rng, levels: usize) -> Vec<f64> {
    (0..levels).map(|n| if n == 0 { 0.0 } else { rng.random::<f64>() }).collect()
}

fn c1_gauss_green() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut sizes = Vec::new();
    for &(cells, m) in &[(14usize, 2usize), (30, 3), (60, 4), (100, 3)] {
        let h = 1.0 / cells as f64;
        let nodes = NodeSet::build(&DomainSpec::unit(1, h, m as f64 * h)).unwrap();
        assert!((16..=128).contains(&nodes.len()), "{} nodes", nodes.len());
        sizes.push(nodes.len());
        let k = KernelSpec::power(1, 0.25, 1.0, nodes.horizon()).unwrap();
        let ints = Interactions::new(&nodes, &AntisymmetricField::new(k, TensorField::default()));
        for _ in 0..100 {
            let nu = TwoPointField {
                values: (0..ints.n_pairs())
                    .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                    .collect(),
            };
            worst = worst.max(check_gauss(&ints, &nu).unwrap().relative());
            let u: Vec<f64> = (0..nodes.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..nodes.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            worst = worst.max(check_green(&ints, &u, &v).unwrap().relative());
        }
    }
    check(worst <= 1e-12, format!("max relative residual {worst:.2e} over node counts {sizes:?}"))
}

fn c2_duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for model in [Model::Nde, fractional()] {
        let s = standard(model.clone());
        let prop = Propagator::new(&s.operator, &s.coefficient, &model, s.grid).unwrap();
        for _ in 0..10 {
            let phi: Vec<f64> = (0..s.nodes.n_interior()).map(|_| rng.random::<f64>()).collect();
            let v = random_signal(&mut rng, s.grid.n_levels());
            let h = random_sensor(&mut rng, &s.nodes, &s.grid);
            let u = prop.forward(&SourceSpec::new(phi.clone(), v.clone()).unwrap()).unwrap();
            let lhs = measure(&s.interactions, &s.nodes, &s.grid, &u, &h).unwrap();
            let w = prop.adjoint_transpose(&h).unwrap();
            let rhs = adjoint_pairing(&s.nodes, &s.grid, &w, &phi, &v);
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
        }
    }
    check(worst <= 1e-10, format!("max relative residual {worst:.2e}, NDE and multi-term"))
}

fn c3_weak_mp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::INFINITY;
    for model in [Model::Nde, fractional()] {
        let s = standard(model.clone());
        let prop = Propagator::new(&s.operator, &s.coefficient, &model, s.grid).unwrap();
        for _ in 0..100 {
            let phi: Vec<f64> = (0..s.nodes.n_interior()).map(|_| rng.random::<f64>()).collect();
            let v = random_signal(&mut rng, s.grid.n_levels());
            let rep = verify_weak_mp(&prop.forward(&SourceSpec::new(phi, v).unwrap()).unwrap());
            worst = worst.min(rep.min / rep.max_abs);
        }
    }
    check(worst >= -1e-12, format!("min u / max |u| = {worst:.2e} over 200 runs"))
}

fn c4_v1_positive() -> Outcome {
    let s = standard(Model::Nde);
    let default = SensorSpec::default_bump(&s.nodes, &s.grid).unwrap();
    assert_eq!(default, s.sensor);
    let w = s.propagator().unwrap().adjoint_transpose(&s.sensor).unwrap();
    let ni = s.nodes.n_interior();
    let min = (0..ni)
        .map(|i| (0..s.grid.n_levels()).map(|n| s.grid.dt * s.signal[n] * w.get(i, n)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    check(min > 0.0, format!("min V1 = {min:.3e} over {ni} interior nodes"))
}

fn l1_error(steps: usize) -> f64 {
    let dt = 1.0 / steps as f64;
    let f: Vec<f64> = (0..=steps).map(|n| (n as f64 * dt).powi(2)).collect();
    let d = caputo_apply(0.5, dt, &f).unwrap();
    // D^{1/2} t² = Γ(3)/Γ(5/2) t^{3/2} = 8/(3√π) t^{3/2}
    let c = 8.0 / (3.0 * std::f64::consts::PI.sqrt());
    let exact: Vec<f64> = (0..=steps).map(|n| c * (n as f64 * dt).powf(1.5)).collect();
    let err = d.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    err / exact.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn c5_l1() -> Outcome {
    let steps = [32usize, 64, 128, 256, 512];
    let errs: Vec<f64> = steps.iter().map(|&n| l1_error(n)).collect();
    let rates: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let xs: Vec<f64> = steps.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 5.0, ys.iter().sum::<f64>() / 5.0);
    let slope = -xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let e512 = errs[4];
    check(
        e512 <= 0.01 && (slope - 1.5).abs() <= 0.15,
        format!("error at 512 steps {e512:.2e}, fitted order {slope:.3} (pairwise {rates:.3?})"),
    )
}

fn c6_extremum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let steps = 200;
    let dt = 1.0 / steps as f64;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let c = rng.random_range(0.2..0.8);
        let a = rng.random_range(0.5..3.0);
        let b = rng.random_range(0.0..0.02);
        let k = rng.random_range(1.0..5.0);
        let order = rng.random_range(0.1..0.95);
        let f: Vec<f64> = (0..=steps)
            .map(|n| {
                let t = n as f64 * dt;
                a * (t - c).powi(2) + b * (k * std::f64::consts::TAU * t).cos() + 1.0
            })
            .collect();
        let rep = check_extremum_lemma(order, dt, &f).unwrap();
        assert!(rep.argmin > 0 && rep.argmin < steps, "minimum on the boundary");
        if !rep.pass {
            return Err(format!("value {:.3e} > slack {:.3e}", rep.value, rep.slack));
        }
        worst = worst.max(rep.value - rep.slack);
    }
    check(true, format!("max (value - slack) = {worst:.3e} over 20 functions"))
}

fn coefficient_set() -> Vec<(&'static str, CoefficientSource)> {
    vec![
        ("0", CoefficientSource::Zero),
        ("1+x", CoefficientSource::Affine { offset: 1.0, slope: 1.0 }),
        ("1+sin^2", CoefficientSource::OnePlusSin2),
    ]
}

fn inverse_crime(model: Model<f64>) -> Outcome {
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for (name, q) in coefficient_set() {
        let mut sc = Scenario::standard();
        sc.model = model.clone();
        sc.coefficient = q;
        let s = Setup::new(&sc).unwrap();
        let exp = s.experiment().unwrap();
        let data = exp.synthesize(&s.coefficient).unwrap();
        let rec = exp.reconstruct(&data, &InversionOptions::default()).unwrap();
        assert!(rec.diagnostics.masked.len() < s.nodes.n_interior());
        let e = rec.max_relative_error(s.coefficient.values());
        lines.push(format!("{name}: {e:.1e}"));
        worst = worst.max(e);
    }
    check(worst <= 1e-6, format!("max relative error {}", lines.join(", ")))
}

fn sine_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sine_basis.toml")
}

fn c9_sine() -> Outcome {
    let base = Scenario::from_path(&sine_config()).unwrap();
    assert_eq!(base.basis.kind, BasisKind::Sine);
    let mut errs = Vec::new();
    for j in [8usize, 16, 32, 64] {
        let mut sc = base.clone();
        sc.basis.count = Some(j);
        let s = Setup::new(&sc).unwrap();
        let exp = s.experiment().unwrap();
        let data = exp.synthesize(&s.coefficient).unwrap();
        let rec = exp.reconstruct(&data, &s.inversion_options()).unwrap();
        errs.push(rec.relative_l2_error(s.coefficient.values()));
    }
    let monotone = errs.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    check(
        errs[2] <= 0.05 && monotone,
        format!(
            "relative L2 error for J = 8, 16, 32, 64: {}",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c10_limit() -> Outcome {
    let r = run_limit_check::<f64>(&LimitCheckSpec::default()).unwrap();
    let trend: Vec<f64> = r.truncated.iter().map(|t| t.discrepancy).collect();
    check(
        r.discrepancy <= 0.02,
        format!(
            "discrepancy {:.2e} on the central third, {} interior nodes (truncated horizons: {trend:.3?})",
            r.discrepancy, r.n_interior
        ),
    )
}

fn c11_uniqueness() -> Outcome {
    let s = standard(Model::Nde);
    let exp = s.experiment().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = s.nodes.n_interior();
    let (mut min_ratio, mut max_same) = (f64::INFINITY, 0.0f64);
    for _ in 0..20 {
        let qa = CoefficientField::new((0..n).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap();
        let qb = CoefficientField::new((0..n).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap();
        let r = exp.uniqueness_probe(&qa, &qb).unwrap();
        assert!(r.coefficient_distance > 0.0);
        min_ratio = min_ratio.min(r.data_distance / r.data_scale);
        let same = exp.uniqueness_probe(&qa, &qa.clone()).unwrap();
        max_same = max_same.max(same.data_distance / same.data_scale);
    }
    check(
        min_ratio > 1e-6 && max_same <= 1e-12,
        format!("distinct pairs min ratio {min_ratio:.2e}, identical pairs max ratio {max_same:.1e}"),
    )
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_nonlocal-inverse"))
        .args(args)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c12_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let noisy = tmp.path().join("noisy.toml");
    let mut sc = Scenario::standard();
    sc.noise.level = 0.01;
    std::fs::write(&noisy, sc.to_toml_string().unwrap()).unwrap();
    let noisy = noisy.to_str().unwrap().to_string();
    let mut runs = Vec::new();
    for (rep, threads) in [(0, "1"), (1, "3")] {
        let root = tmp.path().join(format!("run{rep}"));
        for cmd in ["forward", "adjoint", "measure", "invert", "verify"] {
            let out = root.join(cmd);
            run_cli(&[cmd, "--seed", "42", "--threads", threads, "--out", out.to_str().unwrap()]);
        }
        let out = root.join("noisy");
        run_cli(&["invert", "--config", &noisy, "--seed", "42", "--threads", threads, "--out", out.to_str().unwrap()]);
        runs.push(snapshot(&root));
    }
    let files = runs[0].len();
    check(
        files > 10 && runs[0] == runs[1],
        format!("{files} output files byte-identical across two runs"),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: Vec<Criterion> = vec![
        ("nonlocal Gauss and Green identities", c1_gauss_green),
        ("forward/adjoint duality", c2_duality),
        ("weak maximum principle", c3_weak_mp),
        ("positivity of V1 with the default sensor", c4_v1_positive),
        ("Caputo L1 accuracy and order", c5_l1),
        ("Caputo extremum property", c6_extremum),
        ("nodal reconstruction, first-order model", || inverse_crime(Model::Nde)),
        ("nodal reconstruction, multi-term model", || inverse_crime(fractional())),
        ("truncated sine basis reconstruction", c9_sine),
        ("fractional Laplacian limit", c10_limit),
        ("uniqueness probe", c11_uniqueness),
        ("determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.into_iter().enumerate() {
        let start = std::time::Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {:>2} {status}  {name}: {detail} [{secs:.1} s]", k + 1);
    }
    println!("acceptance: {failed} of 12 criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
