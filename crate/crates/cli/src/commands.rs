//! Command implementations: each produces data files and a list of checks.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DVector;
use serde_json::json;

use qnoise::correlator::{fdt_residuals, tls_equal_time_variance, tls_variance_asymptote, weak_spectrum_of};
use qnoise::hilbert::{thermal_state, DensityMatrix, Operator, C64};
use qnoise::junction::{fig1_scan, JunctionConfig};
use qnoise::kernel::{solve_kernel, KernelSign, MemoryKernel};
use qnoise::oscillator::{
    coherent_state, quasi_moment, squeezed_vacuum, thermal_osc, weak_moment, FockSpace, Ladder, Ordering,
    QuasiMomentRequest,
};
use qnoise::povm::{exact_moments, finite_eta_correlator, sample_trajectories, MeasurementPlan};

use crate::config::{
    CalibrationParams, FdtParams, Fig1Params, Params, PfunctionParams, PovmParams, RunConfig, SpectrumParams,
    StateKind, System, TlsVarianceParams,
};
use crate::manifest::{self, sha256_hex, Check, OutputDigest, RunManifest};
use crate::table::{Table, TEXT_UNIT};
use crate::{CliError, InModule};

/// Silence and FDT residuals must vanish to this level.
pub const RESIDUAL_TOL: f64 = 1e-12;
/// Agreement of weak moments with P/Q moments.
pub const MOMENT_TOL: f64 = 1e-9;
/// Relative error of the calibrated Im f(Ω).
pub const CALIBRATION_TOL: f64 = 1e-10;
/// Monte Carlo estimates must sit within this many standard errors.
pub const MC_SIGMAS: f64 = 4.0;

/// Data written by one command before the manifest is added.
pub struct Artifacts {
    pub files: Vec<(PathBuf, Vec<u8>)>,
    pub checks: Vec<Check>,
}

/// Runs a merged configuration on a pool of `cfg.threads` workers and
/// writes data files plus the manifest.
pub fn run(cfg: &RunConfig) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let artifacts = pool.install(|| compute(cfg))?;
    let mut outputs = Vec::new();
    for (path, bytes) in &artifacts.files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, bytes)?;
        outputs.push(OutputDigest {
            path: path.clone(),
            sha256: sha256_hex(bytes),
        });
    }
    let m = RunManifest {
        schema_version: manifest::SCHEMA_VERSION,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
        checks: artifacts.checks,
        outputs,
    };
    manifest::write(&m)?;
    Ok(m)
}

/// Pure part of [`run`]: no file system access.
pub fn compute(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let (table, mut extra, checks) = match &cfg.params {
        Params::Fig1(p) => fig1(p)?,
        Params::Spectrum(p) => spectrum(p)?,
        Params::FdtCheck(p) => fdt_check(p)?,
        Params::Pfunction(p) => pfunction(p)?,
        Params::TlsVariance(p) => tls_variance(p)?,
        Params::PovmConverge(p) => povm_converge(p, cfg.seed)?,
        Params::CalibrateKernel(p) => calibrate_kernel(p)?,
    };
    let mut files = vec![(cfg.output.clone(), table.emit(cfg.format)?)];
    for (suffix, bytes) in extra.drain(..) {
        files.push((manifest::sibling(&cfg.output, suffix), bytes));
    }
    Ok(Artifacts { files, checks })
}

type Outcome = (Table, Vec<(&'static str, Vec<u8>)>, Vec<Check>);

fn json_bytes(v: &serde_json::Value) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

fn fig1(p: &Fig1Params) -> Result<Outcome, CliError> {
    if p.steps == 0 || !p.z_max.is_finite() || p.z_max <= 0.0 {
        return Err(CliError::Config("fig1: need steps >= 1 and z_max > 0".into()));
    }
    let cfg = JunctionConfig {
        t: p.t,
        ..JunctionConfig::default()
    };
    let z: Vec<f64> = (0..=p.steps).map(|i| p.z_max * i as f64 / p.steps as f64).collect();
    let scan = fig1_scan(&cfg, &z).in_module("junction")?;
    let mut table = Table::new(&[
        ("z", "1"),
        ("emission", "2piG*Omega*t0"),
        ("sym_abs", "2piG*Omega*t0"),
        ("re_sq", "2piG*Omega*t0"),
        ("violated", "bool"),
    ]);
    for r in &scan.rows {
        table.push(vec![
            r.z.into(),
            r.emission.into(),
            r.sym_abs.into(),
            r.re_sq.into(),
            r.violated.into(),
        ])?;
    }
    let summary = match scan.interval {
        Some(i) => json!({ "z_lo": i.z_lo, "z_hi": finite_or_null(i.z_hi) }),
        None => json!({ "z_lo": null, "z_hi": null }),
    };
    let check = Check::new("violation_interval", scan.interval.is_some(), format!("{summary}"));
    Ok((table, vec![("summary.json", json_bytes(&summary)?)], vec![check]))
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

/// Named system: Hamiltonian and observables.
struct Model {
    h: Operator,
    observables: Vec<(&'static str, Operator)>,
}

fn model(system: System, dim: usize) -> Result<Model, CliError> {
    match system {
        System::Tls => Ok(Model {
            h: Operator::pauli_z().scale(C64::new(0.5, 0.0)),
            observables: vec![
                ("sx", Operator::pauli_x()),
                ("sy", Operator::pauli_y()),
                ("sz", Operator::pauli_z()),
            ],
        }),
        System::Oscillator => {
            let fock = FockSpace::new(dim).in_module("oscillator")?;
            Ok(Model {
                h: fock.hamiltonian(1.0),
                observables: vec![("x", fock.x.clone()), ("p", fock.p.clone())],
            })
        }
        System::Custom => Err(CliError::Config("custom system needs explicit matrices".into())),
    }
}

fn named(model: &Model, name: Option<&str>, fallback: usize) -> Result<Operator, CliError> {
    match name {
        None => Ok(model.observables[fallback].1.clone()),
        Some(n) => model
            .observables
            .iter()
            .find(|(k, _)| *k == n)
            .map(|(_, op)| op.clone())
            .ok_or_else(|| CliError::Config(format!("unknown observable {n:?}"))),
    }
}

fn spectrum(p: &SpectrumParams) -> Result<Outcome, CliError> {
    let (h, a, b) = match p.system {
        System::Custom => {
            let need = |op: &Option<Operator>, key: &str| {
                op.clone()
                    .ok_or_else(|| CliError::Config(format!("custom system needs `{key}`")))
            };
            let a = need(&p.a_matrix, "a_matrix")?;
            let b = p.b_matrix.clone().unwrap_or_else(|| a.clone());
            (need(&p.h_matrix, "h_matrix")?, a, b)
        }
        system => {
            let m = model(system, p.dim)?;
            let a = named(&m, p.a.as_deref(), 0)?;
            let b = named(&m, p.b.as_deref().or(p.a.as_deref()), 0)?;
            (m.h, a, b)
        }
    };
    let td = p.td.unwrap_or(p.t);
    let kernel = MemoryKernel::equilibrium(td, p.sign).in_module("kernel")?;
    let rho = thermal_state(&h, p.t).in_module("hilbert")?;
    let lines = weak_spectrum_of(&h, &rho, &a, &b, &kernel).in_module("correlator")?;
    let mut table = Table::new(&[("omega", "Omega"), ("weight_re", "1"), ("weight_im", "1")]);
    for line in lines.lines() {
        table.push(vec![line.omega.into(), line.weight.re.into(), line.weight.im.into()])?;
    }
    let mut checks = Vec::new();
    if td == p.t && p.sign == KernelSign::Emission {
        let max = lines.max_weight();
        checks.push(Check::new(
            "equilibrium_silence",
            max < RESIDUAL_TOL,
            format!("max |weight| {max:.3e}"),
        ));
    }
    Ok((table, Vec::new(), checks))
}

fn fdt_check(p: &FdtParams) -> Result<Outcome, CliError> {
    let m = model(p.system, p.dim)?;
    let mut table = Table::new(&[
        ("a", TEXT_UNIT),
        ("b", TEXT_UNIT),
        ("omega", "Omega"),
        ("residual_re", "1"),
        ("residual_im", "1"),
        ("residual_abs", "1"),
    ]);
    let mut worst: f64 = 0.0;
    for (na, a) in &m.observables {
        for (nb, b) in &m.observables {
            for (omega, r) in fdt_residuals(&m.h, p.t, a, b).in_module("correlator")? {
                worst = worst.max(r.norm());
                table.push(vec![
                    (*na).into(),
                    (*nb).into(),
                    omega.into(),
                    r.re.into(),
                    r.im.into(),
                    r.norm().into(),
                ])?;
            }
        }
    }
    let check = Check::new(
        "fdt_residuals",
        worst < RESIDUAL_TOL,
        format!("max residual {worst:.3e}"),
    );
    Ok((table, Vec::new(), vec![check]))
}

fn state(p: &PfunctionParams) -> Result<(String, DensityMatrix), CliError> {
    let rho = match p.state {
        StateKind::Coherent => coherent_state(C64::new(p.beta_re, p.beta_im), p.dim),
        StateKind::Thermal => thermal_osc(p.nbar, p.dim),
        StateKind::Squeezed => squeezed_vacuum(p.r, p.dim),
    }
    .in_module("oscillator")?;
    let label = match p.state {
        StateKind::Coherent => format!("coherent({},{})", p.beta_re, p.beta_im),
        StateKind::Thermal => format!("thermal({})", p.nbar),
        StateKind::Squeezed => format!("squeezed({})", p.r),
    };
    Ok((label, rho))
}

fn pfunction(p: &PfunctionParams) -> Result<Outcome, CliError> {
    let (label, rho) = state(p)?;
    let mut table = Table::new(&[
        ("state", TEXT_UNIT),
        ("n", "1"),
        ("k", "1"),
        ("ordering", TEXT_UNIT),
        ("moment_re", "1"),
        ("moment_im", "1"),
    ]);
    let mut worst: f64 = 0.0;
    for order in 0..=p.max_order {
        for n in 0..=order {
            let k = order - n;
            let mut moments = Vec::new();
            for ordering in [Ordering::P, Ordering::Q, Ordering::Wigner] {
                let m = quasi_moment(&QuasiMomentRequest {
                    rho: &rho,
                    n,
                    k,
                    ordering,
                })
                .in_module("oscillator")?;
                table.push(vec![
                    label.clone().into(),
                    (n as f64).into(),
                    (k as f64).into(),
                    ordering.to_string().into(),
                    m.re.into(),
                    m.im.into(),
                ])?;
                moments.push(m);
            }
            // the weak moment is independent of the letter arrangement
            let mut word = vec![Ladder::Lower; n];
            word.extend(std::iter::repeat_n(Ladder::Raise, k));
            let emission = weak_moment(&rho, &word, KernelSign::Emission).in_module("oscillator")?;
            let absorption = weak_moment(&rho, &word, KernelSign::Absorption).in_module("oscillator")?;
            worst = worst
                .max((emission - moments[0]).norm())
                .max((absorption - moments[1]).norm());
        }
    }
    let check = Check::new(
        "weak_moments_match_p_and_q",
        worst < MOMENT_TOL,
        format!("max deviation {worst:.3e}"),
    );
    Ok((table, Vec::new(), vec![check]))
}

fn tls_variance(p: &TlsVarianceParams) -> Result<Outcome, CliError> {
    let value = tls_equal_time_variance(1.0, p.omega_tinf).in_module("correlator")?;
    let mut table = Table::new(&[
        ("omega_tinf", "1"),
        ("variance", "1"),
        ("asymptote", "1"),
        ("negative", "bool"),
    ]);
    table.push(vec![
        p.omega_tinf.into(),
        value.into(),
        tls_variance_asymptote(1.0, p.omega_tinf).into(),
        (value < 0.0).into(),
    ])?;
    Ok((table, Vec::new(), Vec::new()))
}

/// Two-level test case: H = σz/2, ρ = |+y⟩⟨+y|, A = σx + 1/2 at t = 0 and
/// B = σz at t = 0.6.
fn povm_plan(p: &PovmParams, eta: f64) -> Result<MeasurementPlan, CliError> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let rho = DensityMatrix::pure(&DVector::from_vec(vec![C64::new(s, 0.0), C64::new(0.0, s)])).in_module("hilbert")?;
    let a = &Operator::pauli_x() + &Operator::identity(2).scale(C64::new(0.5, 0.0));
    MeasurementPlan::new(
        Operator::pauli_z().scale(C64::new(0.5, 0.0)),
        rho,
        vec![(a, 0.0), (Operator::pauli_z(), 0.6)],
        p.kernel.clone(),
        p.dt,
        p.lead,
        eta,
    )
    .in_module("povm")
}

fn povm_converge(p: &PovmParams, seed: u64) -> Result<Outcome, CliError> {
    if p.etas.is_empty() {
        return Err(CliError::Config("povm-converge: `etas` is empty".into()));
    }
    let mut table = Table::new(&[
        ("eta", "1"),
        ("estimate", "1"),
        ("stderr", "1"),
        ("weak_reference", "1"),
        ("bias", "1"),
        ("exact", "1"),
    ]);
    let mut ndjson = Vec::new();
    let mut checks = Vec::new();
    let mut by_eta = Vec::new();
    for (i, &eta) in p.etas.iter().enumerate() {
        let plan = povm_plan(p, eta)?;
        let reference = plan.weak_reference((0, 1)).in_module("povm")?.re;
        let est =
            finite_eta_correlator(&plan, (0, 1), p.samples, seed.wrapping_add(i as u64), None).in_module("povm")?;
        let exact = exact_moments(&plan).in_module("povm")?.second[(0, 1)];
        let bias = est.estimate - reference;
        table.push(vec![
            eta.into(),
            est.estimate.into(),
            est.stderr.into(),
            reference.into(),
            bias.into(),
            exact.into(),
        ])?;
        let z = (est.estimate - exact).abs() / est.stderr;
        checks.push(Check::new(
            &format!("estimate_brackets_exact_eta_{eta}"),
            z < MC_SIGMAS,
            format!("|estimate - exact| = {z:.2} stderr"),
        ));
        by_eta.push((eta, (exact - reference).abs()));
        if p.trajectories > 0 {
            for record in sample_trajectories(&plan, p.trajectories, seed.wrapping_add(i as u64)).in_module("povm")? {
                serde_json::to_writer(&mut ndjson, &record)?;
                ndjson.write_all(b"\n")?;
            }
        }
    }
    by_eta.sort_by(|x, y| y.0.total_cmp(&x.0));
    let shrinking = by_eta.windows(2).all(|w| w[1].1 <= w[0].1);
    checks.push(Check::new(
        "bias_shrinks_with_eta",
        shrinking,
        format!(
            "{:?}",
            by_eta.iter().map(|(e, b)| format!("{e}: {b:.3e}")).collect::<Vec<_>>()
        ),
    ));
    let extra = if p.trajectories > 0 {
        vec![("trajectories.ndjson", ndjson)]
    } else {
        Vec::new()
    };
    Ok((table, extra, checks))
}

fn calibrate_kernel(p: &CalibrationParams) -> Result<Outcome, CliError> {
    let mut table = Table::new(&[
        ("omega", "Omega"),
        ("T", "Omega"),
        ("im_f", "1"),
        ("iterations", "1"),
        ("residual", "1"),
    ]);
    let mut worst: f64 = 0.0;
    for &omega in &p.omega {
        for &t in &p.t {
            let s = solve_kernel(omega, t).in_module("kernel")?;
            let want = if t == 0.0 {
                1.0
            } else {
                1.0 / (omega / (2.0 * t)).tanh()
            };
            worst = worst.max(((s.im_f - want) / want).abs());
            table.push(vec![
                omega.into(),
                t.into(),
                s.im_f.into(),
                f64::from(s.iterations).into(),
                s.report.max_abs().into(),
            ])?;
        }
    }
    let check = Check::new(
        "im_f_matches_coth",
        worst < CALIBRATION_TOL,
        format!("max relative error {worst:.3e}"),
    );
    Ok((table, Vec::new(), vec![check]))
}
