//! Scenario-driven runs behind the command line tool. Every run writes CSV
//! tables plus a JSON metadata file into an output directory; nothing that
//! depends on wall-clock time or thread scheduling is written.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{CoefficientSource, ProfileSource, Scenario};
use crate::domain::{DomainSpec, NodeSet};
use crate::error::{Error, Result};
use crate::fractional::{caputo_apply, check_extremum_lemma, gamma, FractionalSpec, LowerTerm};
use crate::inversion::{
    identity_residual, reconstruct_q_fractional, BasisKind, BasisSpec, Experiment, InversionOptions,
};
use crate::kernel::{AntisymmetricField, KernelSpec, SkewedKernel, TensorField};
use crate::limit::run_limit_check;
use crate::measurement::{adjoint_pairing, measure, SensorSpec};
use crate::ops::{check_gauss, check_green, AssemblyOptions, Interactions, OperatorMatrix, TwoPointField};
use crate::solver::{
    adjoint_influence, forward_influence, solve_adjoint_nde, verify_strong_mp, verify_weak_mp, CoefficientField,
    Model, Propagator, SourceSpec, TimeGrid,
};

/// Everything a run needs, built once from a validated scenario.
#[derive(Clone, Debug)]
pub struct Setup {
    pub scenario: Scenario,
    pub nodes: NodeSet<f64>,
    pub interactions: Interactions<f64>,
    pub operator: OperatorMatrix<f64>,
    pub grid: TimeGrid<f64>,
    pub coefficient: CoefficientField<f64>,
    /// Whether `coefficient` is known ground truth (enables error norms).
    pub truth_known: bool,
    pub signal: Vec<f64>,
    pub sensor: SensorSpec<f64>,
}

fn read_coefficient_csv(path: &Path, n: usize) -> Result<(Vec<f64>, bool)> {
    let file = File::open(path).map_err(|e| Error::Config(format!("coefficient csv {}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let (col, truth) = match headers.iter().position(|h| h.trim() == "q_true") {
        Some(c) => (c, true),
        None => match headers.iter().position(|h| h.trim() == "q") {
            Some(c) => (c, false),
            None => {
                return Err(Error::Config(format!(
                    "coefficient csv {}: needs a `q_true` or `q` column",
                    path.display()
                )))
            }
        },
    };
    let mut values = Vec::with_capacity(n);
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("");
        let v: f64 = field.trim().parse().map_err(|_| {
            Error::Config(format!(
                "coefficient csv {}: line {}: cannot parse `{field}`",
                path.display(),
                row + 2
            ))
        })?;
        values.push(v);
    }
    if values.len() != n {
        return Err(Error::Config(format!(
            "coefficient csv {}: {} rows for {n} interior nodes",
            path.display(),
            values.len()
        )));
    }
    Ok((values, truth))
}

impl Setup {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let domain = scenario.domain.spec();
        let nodes = NodeSet::build(&domain)?;
        let kernel = scenario.kernel.spec(domain.dimension, domain.horizon);
        kernel.validate()?;
        let interactions = Interactions::new(&nodes, &AntisymmetricField::new(kernel, scenario.tensor.clone()));
        let operator = OperatorMatrix::assemble(
            &interactions,
            AssemblyOptions {
                symmetric_pairing: scenario.kernel.symmetric_pairing,
            },
        )?;
        let grid = TimeGrid::new(scenario.time.final_time, scenario.time.steps)?;
        let (coefficient, truth_known) = match &scenario.coefficient {
            CoefficientSource::Csv { path } => {
                let (v, truth) = read_coefficient_csv(path, nodes.n_interior())?;
                (CoefficientField::new(v)?, truth)
            }
            other => (
                CoefficientField::from_fn(&nodes, |x| other.eval(x).unwrap_or(0.0))?,
                true,
            ),
        };
        let t_end = grid.final_time();
        let signal = grid.sample(|t| scenario.signal.eval(t, t_end));
        let sensor = SensorSpec::windowed_bump(&nodes, &grid, scenario.sensor.start, scenario.sensor.end)?;
        Ok(Setup {
            scenario: scenario.clone(),
            nodes,
            interactions,
            operator,
            grid,
            coefficient,
            truth_known,
            signal,
            sensor,
        })
    }

    pub fn model(&self) -> &Model<f64> {
        &self.scenario.model
    }

    pub fn propagator(&self) -> Result<Propagator<f64>> {
        Propagator::new(&self.operator, &self.coefficient, self.model(), self.grid)
    }

    /// Source profile `φ` on interior nodes.
    pub fn profile(&self) -> Vec<f64> {
        let d = self.nodes.dimension();
        let domain = self.scenario.domain.spec();
        self.nodes
            .interior()
            .map(|i| {
                let x = self.nodes.coord(i);
                match &self.scenario.source {
                    ProfileSource::Constant { value } => *value,
                    ProfileSource::SineMode { mode } => (0..d)
                        .map(|k| {
                            let s = (x[k] - domain.lower[k]) / (domain.upper[k] - domain.lower[k]);
                            (*mode as f64 * std::f64::consts::PI * s).sin()
                        })
                        .product(),
                    ProfileSource::Hat { center, width } => (0..d)
                        .map(|k| {
                            let c = center
                                .as_ref()
                                .map_or(0.5 * (domain.lower[k] + domain.upper[k]), |c| c[k]);
                            (1.0 - (x[k] - c).abs() / width).max(0.0)
                        })
                        .product(),
                }
            })
            .collect()
    }

    pub fn basis(&self) -> Result<BasisSpec<f64>> {
        match self.scenario.basis.kind {
            BasisKind::Nodal => Ok(BasisSpec::nodal(&self.nodes)),
            BasisKind::Sine => BasisSpec::sine(&self.nodes, self.scenario.basis.count.unwrap_or(0)),
        }
    }

    pub fn experiment(&self) -> Result<Experiment<f64>> {
        Ok(Experiment {
            nodes: self.nodes.clone(),
            interactions: self.interactions.clone(),
            operator: self.operator.clone(),
            grid: self.grid,
            model: self.model().clone(),
            sensor: self.sensor.clone(),
            basis: self.basis()?,
            signal: self.signal.clone(),
        })
    }

    pub fn inversion_options(&self) -> InversionOptions {
        InversionOptions {
            mask_threshold: self.scenario.basis.mask_threshold,
            ridge: self.scenario.basis.ridge,
            ..InversionOptions::default()
        }
    }
}

/// Files written by a run and a one-line human summary.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Writer {
            dir,
            files: Vec::new(),
        })
    }

    fn file(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        self.file(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn finish(self, summary: String) -> RunOutput {
        RunOutput {
            files: self.files,
            summary,
        }
    }
}

fn model_json(model: &Model<f64>) -> Value {
    serde_json::to_value(model).unwrap_or(Value::Null)
}

fn metadata(command: &str, setup: &Setup, extra: Value) -> Result<Value> {
    let s = &setup.scenario;
    let mut meta = json!({
        "command": command,
        "config_hash": s.hash()?,
        "seed": s.seed,
        "dimension": setup.nodes.dimension(),
        "spacing": setup.nodes.spacing(),
        "horizon": setup.nodes.horizon(),
        "n_nodes": setup.nodes.len(),
        "n_interior": setup.nodes.n_interior(),
        "n_exterior": setup.nodes.n_exterior(),
        "final_time": setup.grid.final_time(),
        "steps": setup.grid.steps,
        "model": model_json(&s.model),
        "kernel": {
            "form": s.kernel.form,
            "beta": s.kernel.beta,
            "gamma_lower": s.kernel.gamma_lower,
            "gamma_upper": s.kernel.gamma_upper.unwrap_or(s.kernel.gamma_lower),
        },
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
        m.extend(e);
    }
    Ok(meta)
}

fn coefficient_hash(q: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in q {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Forward trajectory for the source `φ(x)v(t)` of the scenario.
pub fn run_forward(setup: &Setup, out: &Path) -> Result<RunOutput> {
    let prop = setup.propagator()?;
    let source = SourceSpec::new(setup.profile(), setup.signal.clone())?;
    let u = prop.forward(&source)?;
    let weak = verify_weak_mp(&u);
    let mut w = Writer::new(out)?;
    w.file("nodes.csv", |f| setup.nodes.write_csv(f))?;
    w.file("trajectory.csv", |f| u.write_csv(&setup.grid, f))?;
    let meta = metadata(
        "forward",
        setup,
        json!({ "max_abs": u.max_abs(), "min_value": weak.min }),
    )?;
    w.json("metadata.json", &meta)?;
    Ok(w.finish(format!(
        "forward: {} levels x {} nodes, max |u| = {:e}",
        setup.grid.n_levels(),
        setup.nodes.len(),
        u.max_abs()
    )))
}

/// Adjoint trajectory driven by the sensor, and its time moments.
pub fn run_adjoint(setup: &Setup, out: &Path) -> Result<RunOutput> {
    let prop = setup.propagator()?;
    let adj = prop.adjoint_transpose(&setup.sensor)?;
    let v2 = setup.model().time_derivative(&setup.grid, &setup.signal)?;
    let ni = setup.nodes.n_interior();
    let dt = setup.grid.dt;
    let mut v1m = vec![0.0; ni];
    let mut v2m = vec![0.0; ni];
    for n in 0..setup.grid.n_levels() {
        for (i, &wv) in adj.at(n)[..ni].iter().enumerate() {
            v1m[i] += dt * setup.signal[n] * wv;
            v2m[i] += dt * v2[n] * wv;
        }
    }
    let mut extra = json!({ "max_abs": adj.max_abs() });
    if matches!(setup.model(), Model::Nde) {
        let reversed = solve_adjoint_nde(&setup.operator, &setup.coefficient, setup.grid, &setup.sensor)?;
        let diff = adj
            .values()
            .iter()
            .zip(reversed.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        extra["time_reversal_max_difference"] = json!(diff);
    }
    let mut w = Writer::new(out)?;
    w.file("nodes.csv", |f| setup.nodes.write_csv(f))?;
    w.file("adjoint.csv", |f| adj.write_csv(&setup.grid, f))?;
    w.file("moments.csv", |f| {
        let mut c = csv::Writer::from_writer(f);
        c.write_record(["node", "v1", "v2"])?;
        for i in 0..ni {
            c.write_record([i.to_string(), v1m[i].to_string(), v2m[i].to_string()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    w.json("metadata.json", &metadata("adjoint", setup, extra)?)?;
    let min_v1 = v1m.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(w.finish(format!("adjoint: min V1 = {min_v1:e}")))
}

fn dataset(setup: &Setup, experiment: &Experiment<f64>) -> Result<crate::measurement::MeasurementSet<f64>> {
    let data = experiment.synthesize(&setup.coefficient)?;
    let level = setup.scenario.noise.level;
    Ok(if level > 0.0 {
        data.with_noise(level, setup.scenario.seed)
    } else {
        data
    })
}

fn dataset_sidecar(setup: &Setup, experiment: &Experiment<f64>) -> Result<Value> {
    metadata(
        "measure",
        setup,
        json!({
            "q_true_hash": coefficient_hash(setup.coefficient.values()),
            "basis": { "kind": experiment.basis.kind(), "count": experiment.basis.len() },
            "noise_level": setup.scenario.noise.level,
            "noise_seed": if setup.scenario.noise.level > 0.0 { Some(setup.scenario.seed) } else { None },
            "sensor_window": [setup.scenario.sensor.start, setup.scenario.sensor.end],
        }),
    )
}

/// Synthetic flux data for every source of the basis.
pub fn run_measure(setup: &Setup, out: &Path) -> Result<RunOutput> {
    let experiment = setup.experiment()?;
    let data = dataset(setup, &experiment)?;
    let mut w = Writer::new(out)?;
    w.file("measurements.csv", |f| data.write_csv(f))?;
    w.json("measurements.json", &dataset_sidecar(setup, &experiment)?)?;
    Ok(w.finish(format!("measure: {} sources x 2 temporal modes", data.len())))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InversionSummary {
    pub contract: &'static str,
    pub basis: BasisKind,
    pub basis_size: usize,
    pub masked: usize,
    pub min_v1: f64,
    pub gram_condition: f64,
    pub identity_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_relative_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_l2_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_identity_residual: Option<f64>,
}

/// Synthesizes data, reconstructs `q` and compares with the truth when known.
pub fn run_invert(setup: &Setup, out: &Path) -> Result<(RunOutput, InversionSummary)> {
    let experiment = setup.experiment()?;
    let data = dataset(setup, &experiment)?;
    let options = setup.inversion_options();
    let rec = match setup.model() {
        Model::Nde => experiment.reconstruct(&data, &options)?,
        Model::Mttfnde(_) => reconstruct_q_fractional(&experiment, &data, &options)?,
    };
    let noisy = setup.scenario.noise.level > 0.0;
    let truth = setup.truth_known.then(|| setup.coefficient.values());
    let summary = InversionSummary {
        contract: if noisy {
            "exploratory: noisy data, no accuracy contract"
        } else {
            "noise-free synthetic data"
        },
        basis: experiment.basis.kind(),
        basis_size: experiment.basis.len(),
        masked: rec.diagnostics.masked.len(),
        min_v1: rec.diagnostics.min_v1,
        gram_condition: rec.diagnostics.gram_condition,
        identity_residual: rec.diagnostics.identity_residual,
        max_relative_error: truth.map(|t| rec.max_relative_error(t)),
        relative_l2_error: truth.map(|t| rec.relative_l2_error(t)),
        truth_identity_residual: match truth {
            Some(t) => Some(identity_residual(&rec.v1, &rec.v1_exterior, &rec.v2, t, &setup.operator)?),
            None => None,
        },
    };
    let mut w = Writer::new(out)?;
    w.file("measurements.csv", |f| data.write_csv(f))?;
    w.json("measurements.json", &dataset_sidecar(setup, &experiment)?)?;
    w.file("reconstruction.csv", |f| rec.write_csv(&setup.nodes, truth, f))?;
    w.json("diagnostics.json", &serde_json::to_value(&rec.diagnostics)?)?;
    let meta = metadata("invert", setup, json!({ "summary": &summary }))?;
    w.json("summary.json", &meta)?;
    let line = match summary.max_relative_error {
        Some(e) => format!("invert: max relative error {e:e} ({})", summary.contract),
        None => format!("invert: {} masked nodes, truth unknown ({})", summary.masked, summary.contract),
    };
    Ok((w.finish(line), summary))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    /// Known accuracy loss, reported rather than hidden.
    Degraded,
}

impl Status {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Degraded => "DEGRADED",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub value: f64,
    pub tolerance: f64,
    pub note: String,
}

impl Check {
    fn new(name: &str, ok: bool, value: f64, tolerance: f64, note: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            status: Status::from_bool(ok),
            value,
            tolerance,
            note: note.into(),
        }
    }

    fn failed(name: &str, err: &Error) -> Self {
        Check {
            name: name.to_string(),
            status: Status::Fail,
            value: f64::NAN,
            tolerance: f64::NAN,
            note: err.to_string(),
        }
    }
}

/// Collects checks, turning errors into FAIL rows.
struct Report(Vec<Check>);

impl Report {
    fn push(&mut self, name: &str, r: Result<Check>) {
        self.0.push(r.unwrap_or_else(|e| Check::failed(name, &e)));
    }
}

fn random_nonneg(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn random_signal(rng: &mut ChaCha8Rng, levels: usize) -> Vec<f64> {
    let mut v = random_nonneg(rng, levels);
    v[0] = 0.0;
    v
}

fn random_sensor(rng: &mut ChaCha8Rng, nodes: &NodeSet<f64>, grid: &TimeGrid<f64>) -> Result<SensorSpec<f64>> {
    let levels = grid.n_levels();
    let ne = nodes.n_exterior();
    let mut values = vec![0.0; ne * levels];
    for n in 1..levels.saturating_sub(1) {
        for e in 0..ne {
            if nodes.label(nodes.n_interior() + e) == crate::domain::NodeLabel::Accessible {
                values[n * ne + e] = rng.random::<f64>();
            }
        }
    }
    SensorSpec::from_values(ne, levels, values)
}

fn fractional_for(model: &Model<f64>) -> Result<FractionalSpec<f64>> {
    match model {
        Model::Mttfnde(s) => Ok(s.clone()),
        Model::Nde => FractionalSpec::multi(
            0.7,
            vec![LowerTerm {
                order: 0.3,
                weight: 0.5,
            }],
        ),
    }
}

/// Relative error of `−L x²` at the domain centre for a 1-D power kernel,
/// against `−4γ ε^{2−2β}/(2−2β)`.
pub fn quadrature_error(beta: f64, spacing: f64, horizon: f64, paired: bool) -> Result<f64> {
    let nodes = NodeSet::build(&DomainSpec::unit(1, spacing, horizon))?;
    let k = KernelSpec::power(1, beta, 1.0, horizon)?;
    let ints = Interactions::new(&nodes, &AntisymmetricField::new(k, TensorField::default()));
    let u: Vec<f64> = (0..nodes.len()).map(|i| nodes.coord(i)[0].powi(2)).collect();
    let lu = if paired {
        ints.neg_laplacian_paired(&u)?
    } else {
        ints.neg_laplacian(&u)?
    };
    let centre = nodes
        .find([(0.5 / spacing).round() as i64, 0])
        .ok_or_else(|| Error::InvalidDomain("grid has no centre node".into()))?;
    let exact = -4.0 * horizon.powf(2.0 - 2.0 * beta) / (2.0 - 2.0 * beta);
    Ok((lu[centre] - exact).abs() / exact.abs())
}

/// Relative max-norm error of the L1 derivative of `t²` on `[0, 1]`.
pub fn l1_error_t2(order: f64, steps: usize) -> Result<f64> {
    let dt = 1.0 / steps as f64;
    let f: Vec<f64> = (0..=steps).map(|n| (n as f64 * dt).powi(2)).collect();
    let d = caputo_apply(order, dt, &f)?;
    let c = 2.0 / gamma(3.0 - order);
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for (n, &dn) in d.iter().enumerate() {
        let exact = c * (n as f64 * dt).powf(2.0 - order);
        err = err.max((dn - exact).abs());
        scale = scale.max(exact.abs());
    }
    Ok(err / scale)
}

/// Least-squares slope of `log e` against `log Δt`.
pub fn fitted_order(steps: &[usize], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = steps.iter().map(|&s| (1.0 / s as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

fn identity_checks(report: &mut Report, rng: &mut ChaCha8Rng, setup: &Setup, ints: &Interactions<f64>, label: &str) {
    let trials = setup.scenario.verify.trials.max(1);
    let name = format!("gauss{label}");
    let r = (|| -> Result<Check> {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let nu = TwoPointField {
                values: (0..ints.n_pairs())
                    .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                    .collect(),
            };
            worst = worst.max(check_gauss(ints, &nu)?.relative());
        }
        Ok(Check::new(&name, worst <= 1e-12, worst, 1e-12, format!("{trials} random two-point fields")))
    })();
    report.push(&name, r);
    let name = format!("green{label}");
    let r = (|| -> Result<Check> {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let n = ints.n_nodes();
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nu: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            worst = worst.max(check_green(ints, &u, &nu)?.relative());
        }
        Ok(Check::new(&name, worst <= 1e-12, worst, 1e-12, format!("{trials} random field pairs")))
    })();
    report.push(&name, r);
}

/// Batch of property checks on the scenario; failures are report rows.
pub fn verify_checks(setup: &Setup) -> Vec<Check> {
    let s = &setup.scenario;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut report = Report(Vec::new());
    let trials = s.verify.trials.max(1);
    let nodes = &setup.nodes;
    let grid = setup.grid;
    let levels = grid.n_levels();

    if s.verify.inject_skew != 0.0 {
        let kernel = SkewedKernel {
            inner: s.kernel.spec(nodes.dimension(), nodes.horizon()),
            skew: s.verify.inject_skew,
        };
        let skewed = Interactions::new(nodes, &AntisymmetricField::new(kernel, s.tensor.clone()));
        report.push(
            "kernel_symmetry_skewed",
            Ok(match skewed.check_kernel_symmetry(1e-12) {
                Ok(()) => Check::new("kernel_symmetry_skewed", true, 0.0, 1e-12, "fault injection"),
                Err(e) => Check::new("kernel_symmetry_skewed", false, f64::NAN, 1e-12, format!("fault injection: {e}")),
            }),
        );
        report.push(
            "assembly_skewed",
            OperatorMatrix::assemble(&skewed, AssemblyOptions::default())
                .map(|_| Check::new("assembly_skewed", true, 0.0, 0.0, "fault injection")),
        );
        identity_checks(&mut report, &mut rng, setup, &skewed, "_skewed");
    }

    report.push(
        "kernel_symmetry",
        setup
            .interactions
            .check_kernel_symmetry(1e-12)
            .map(|()| Check::new("kernel_symmetry", true, 0.0, 1e-12, "")),
    );
    identity_checks(&mut report, &mut rng, setup, &setup.interactions, "");

    let a = setup.operator.interior_block();
    let n = a.nrows();
    let mut asym = 0.0f64;
    let mut mmatrix = true;
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
            if i != j {
                mmatrix &= a[(i, j)] <= 0.0;
                off += a[(i, j)].abs();
            }
        }
        mmatrix &= a[(i, i)] >= off;
    }
    let amax = a.amax();
    report.push(
        "operator_symmetry",
        Ok(Check::new("operator_symmetry", asym <= 1e-14 * amax, asym / amax, 1e-14, "interior block")),
    );
    report.push(
        "m_matrix",
        Ok(Check::new("m_matrix", mmatrix, if mmatrix { 0.0 } else { 1.0 }, 0.0, "sign pattern and diagonal dominance")),
    );

    let frac = fractional_for(setup.model());
    let models: Vec<(&str, Result<Model<f64>>)> = vec![
        ("nde", Ok(Model::Nde)),
        ("mttfnde", frac.map(Model::Mttfnde)),
    ];
    for (tag, model) in models {
        let name = format!("duality_{tag}");
        let r = (|| -> Result<Check> {
            let model = model?;
            let prop = Propagator::new(&setup.operator, &setup.coefficient, &model, grid)?;
            let mut worst = 0.0f64;
            for _ in 0..trials.min(10) {
                let phi = random_nonneg(&mut rng, nodes.n_interior());
                let v = random_signal(&mut rng, levels);
                let sensor = random_sensor(&mut rng, nodes, &grid)?;
                let u = prop.forward(&SourceSpec::new(phi.clone(), v.clone())?)?;
                let m = measure(&setup.interactions, nodes, &grid, &u, &sensor)?;
                let w = prop.adjoint_transpose(&sensor)?;
                let p = adjoint_pairing(nodes, &grid, &w, &phi, &v);
                worst = worst.max((m - p).abs() / m.abs().max(p.abs()));
            }
            Ok(Check::new(&name, worst <= 1e-10, worst, 1e-10, "random phi, v, h"))
        })();
        report.push(&name, r);

        let name = format!("weak_mp_{tag}");
        let model = if tag == "nde" { Ok(Model::Nde) } else { fractional_for(setup.model()).map(Model::Mttfnde) };
        let r = (|| -> Result<Check> {
            let prop = Propagator::new(&setup.operator, &setup.coefficient, &model?, grid)?;
            let mut worst = f64::INFINITY;
            let mut ok = true;
            for _ in 0..trials {
                let phi = random_nonneg(&mut rng, nodes.n_interior());
                let v = random_signal(&mut rng, levels);
                let rep = verify_weak_mp(&prop.forward(&SourceSpec::new(phi, v)?)?);
                ok &= rep.pass;
                let scaled = if rep.max_abs > 0.0 { rep.min / rep.max_abs } else { 0.0 };
                worst = worst.min(scaled);
            }
            Ok(Check::new(&name, ok, worst, -1e-12, format!("min u / max |u| over {trials} runs")))
        })();
        report.push(&name, r);
    }

    let r = (|| -> Result<Check> {
        let prop = setup.propagator()?;
        let source = SourceSpec::new(setup.profile(), setup.signal.clone())?;
        let u = prop.forward(&source)?;
        let rep = verify_strong_mp(&u, &forward_influence(&setup.operator, &source));
        Ok(Check::new(
            "strong_mp_forward",
            rep.pass,
            rep.violation.map_or(0.0, |v| v.2),
            0.0,
            format!("{} node-levels in the influence set", rep.checked),
        ))
    })();
    report.push("strong_mp_forward", r);

    let r = (|| -> Result<Check> {
        let prop = setup.propagator()?;
        let w = prop.adjoint_transpose(&setup.sensor)?;
        let rep = verify_strong_mp(&w, &adjoint_influence(&setup.operator, &setup.sensor));
        Ok(Check::new(
            "strong_mp_adjoint",
            rep.pass,
            rep.violation.map_or(0.0, |v| v.2),
            0.0,
            format!("{} node-levels in the influence set", rep.checked),
        ))
    })();
    report.push("strong_mp_adjoint", r);

    let r = (|| -> Result<Check> {
        let prop = setup.propagator()?;
        let w = prop.adjoint_transpose(&setup.sensor)?;
        let ni = nodes.n_interior();
        let mut v1 = vec![0.0; ni];
        for (n, &vn) in setup.signal.iter().enumerate() {
            for (acc, &wv) in v1.iter_mut().zip(&w.at(n)[..ni]) {
                *acc += grid.dt * vn * wv;
            }
        }
        let min = v1.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Check::new("v1_positive", min > 0.0, min, 0.0, "min over interior nodes"))
    })();
    report.push("v1_positive", r);

    if let Model::Nde = setup.model() {
        let r = (|| -> Result<Check> {
            let prop = setup.propagator()?;
            let a = prop.adjoint_transpose(&setup.sensor)?;
            let b = solve_adjoint_nde(&setup.operator, &setup.coefficient, grid, &setup.sensor)?;
            let diff = a
                .values()
                .iter()
                .zip(b.values())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            let rel = diff / a.max_abs().max(f64::MIN_POSITIVE);
            Ok(Check::new("adjoint_time_reversal", rel <= 1e-10, rel, 1e-10, "transposed vs reversed stepping"))
        })();
        report.push("adjoint_time_reversal", r);
    }

    let order = match setup.model() {
        Model::Mttfnde(spec) => spec.order,
        Model::Nde => 0.5,
    };
    let r = (|| -> Result<Check> {
        let steps = 256;
        let dt = 1.0 / steps as f64;
        let mut ok = true;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..trials {
            let centre = rng.random_range(0.25..0.75);
            let amp = rng.random_range(0.0..0.01);
            let freq = rng.random_range(1.0..6.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let f: Vec<f64> = (0..=steps)
                .map(|n| {
                    let t = n as f64 * dt;
                    (t - centre).powi(2) + amp * (freq * std::f64::consts::TAU * t + phase).sin()
                })
                .collect();
            let rep = check_extremum_lemma(order, dt, &f)?;
            ok &= rep.pass;
            worst = worst.max(rep.value - rep.slack);
        }
        Ok(Check::new("extremum_lemma", ok, worst, 0.0, format!("value minus slack, order {order}")))
    })();
    report.push("extremum_lemma", r);

    let r = (|| -> Result<Check> {
        let e = l1_error_t2(0.5, 512)?;
        Ok(Check::new("caputo_l1_accuracy", e <= 0.01, e, 0.01, "t^2, order 0.5, 512 steps"))
    })();
    report.push("caputo_l1_accuracy", r);
    let r = (|| -> Result<Check> {
        let steps = [32, 64, 128, 256, 512];
        let errs = steps.iter().map(|&n| l1_error_t2(0.5, n)).collect::<Result<Vec<_>>>()?;
        let p = fitted_order(&steps, &errs);
        Ok(Check::new("caputo_l1_order", (p - 1.5).abs() <= 0.15, p, 0.15, "expected 1.5"))
    })();
    report.push("caputo_l1_order", r);

    for &beta in &[s.kernel.beta, 0.75] {
        for paired in [false, true] {
            let name = format!("quadrature_beta_{beta}{}", if paired { "_paired" } else { "" });
            let r = (|| -> Result<Check> {
                let coarse = quadrature_error(beta, 1.0 / 64.0, 0.25, paired)?;
                let fine = quadrature_error(beta, 1.0 / 128.0, 0.25, paired)?;
                let rate = (coarse / fine).log2();
                let mut c = Check::new(
                    &name,
                    fine <= 0.01,
                    fine,
                    0.01,
                    format!("-L x^2 at h = 1/128 (h = 1/64: {coarse:.3e}, observed rate {rate:.2})"),
                );
                if fine > 0.01 {
                    c.status = Status::Degraded;
                }
                Ok(c)
            })();
            report.push(&name, r);
        }
    }

    if setup.truth_known {
        let r = (|| -> Result<Check> {
            let mut small = setup.clone();
            small.scenario.basis.kind = BasisKind::Nodal;
            let exp = small.experiment()?;
            let data = exp.synthesize(&setup.coefficient)?;
            let rec = exp.reconstruct(&data, &setup.inversion_options())?;
            let e = rec.max_relative_error(setup.coefficient.values());
            Ok(Check::new("inverse_crime_nodal", e <= 1e-6, e, 1e-6, "nodal basis, noise-free"))
        })();
        report.push("inverse_crime_nodal", r);
    }
    report.0
}

/// Runs [`verify_checks`] and writes the table.
pub fn run_verify(setup: &Setup, out: &Path) -> Result<(RunOutput, Vec<Check>)> {
    let checks = verify_checks(setup);
    let mut w = Writer::new(out)?;
    w.file("verify.csv", |f| {
        let mut c = csv::Writer::from_writer(f);
        c.write_record(["check", "status", "value", "tolerance", "note"])?;
        for k in &checks {
            c.write_record([
                k.name.clone(),
                k.status.as_str().to_string(),
                format!("{:e}", k.value),
                format!("{:e}", k.tolerance),
                k.note.clone(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    let failed = checks.iter().filter(|c| c.status == Status::Fail).count();
    w.json(
        "verify.json",
        &metadata("verify", setup, json!({ "checks": &checks, "failed": failed }))?,
    )?;
    let summary = format!("verify: {} checks, {failed} failed", checks.len());
    Ok((w.finish(summary), checks))
}

/// Comparison with the fractional Laplacian, independent of the scenario grid.
pub fn run_limit(scenario: &Scenario, out: &Path) -> Result<(RunOutput, crate::limit::LimitReport)> {
    let report = run_limit_check::<f64>(&scenario.limit)?;
    let mut w = Writer::new(out)?;
    w.file("limit.csv", |f| {
        let mut c = csv::Writer::from_writer(f);
        c.write_record(["x", "nonlocal", "oracle"])?;
        for ((x, a), b) in report.x.iter().zip(&report.nonlocal).zip(&report.oracle) {
            c.write_record([x.to_string(), a.to_string(), b.to_string()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    w.json(
        "limit.json",
        &json!({
            "command": "limit-check",
            "config_hash": scenario.hash()?,
            "spec": &scenario.limit,
            "n_interior": report.n_interior,
            "n_nodes": report.n_nodes,
            "discrepancy": report.discrepancy,
            "tolerance": 0.02,
            "pass": report.discrepancy <= 0.02,
            "truncated": &report.truncated,
            "truncated_trend_decreasing": report.trend_decreasing(),
        }),
    )?;
    let summary = format!(
        "limit-check: discrepancy {:.3e} on the central third ({} interior nodes)",
        report.discrepancy, report.n_interior
    );
    Ok((w.finish(summary), report))
}
