//! Detector memory function f in the time and frequency domains.
//!
//! The frequency-domain kernel is purely imaginary and odd in ω. The
//! equilibrium family `f(ω) = i coth(ω / 2T_d)` (ħ = k_B = 1) is the unique
//! choice for which a detector at temperature `T_d` records nothing from a
//! system in equilibrium at the same temperature; its time-domain form is
//! `f(t) = T_d coth(π T_d t)`, reducing to `1/(π t)` at `T_d = 0`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TABLE_ANTISYMMETRY_TOL: f64 = 1e-10;

/// +1 selects emission-type (equilibrium) order, -1 the sign-reversed
/// absorption-type kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub enum KernelSign {
    Emission,
    Absorption,
}

impl KernelSign {
    pub fn value(self) -> f64 {
        match self {
            KernelSign::Emission => 1.0,
            KernelSign::Absorption => -1.0,
        }
    }

    pub fn from_value(v: i32) -> Result<Self> {
        KernelSign::try_from(v).map_err(|e| Error::param("sign", e))
    }
}

impl TryFrom<i32> for KernelSign {
    type Error = String;
    fn try_from(v: i32) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(KernelSign::Emission),
            -1 => Ok(KernelSign::Absorption),
            other => Err(format!("kernel sign must be 1 or -1, got {other}")),
        }
    }
}

impl From<KernelSign> for i32 {
    fn from(s: KernelSign) -> i32 {
        match s {
            KernelSign::Emission => 1,
            KernelSign::Absorption => -1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase", deny_unknown_fields)]
enum KernelSpec {
    Markovian {},
    Equilibrium {
        #[serde(rename = "Td")]
        td: f64,
        #[serde(default = "default_sign")]
        sign: KernelSign,
    },
    Tabulated {
        omega: Vec<f64>,
        im_f: Vec<f64>,
    },
}

fn default_sign() -> KernelSign {
    KernelSign::Emission
}

/// Memory kernel variants. Constructed values always satisfy the variant
/// invariants (non-negative `T_d`, odd tables on an ascending grid).
///
/// JSON form: `{"variant": "equilibrium", "Td": 0.0, "sign": 1}`,
/// `{"variant": "markovian"}` or
/// `{"variant": "tabulated", "omega": [...], "im_f": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpec", into = "KernelSpec")]
pub enum MemoryKernel {
    /// f = 0: symmetrized order.
    Markovian,
    Equilibrium {
        td: f64,
        sign: KernelSign,
    },
    /// Im f on an ascending frequency grid, linearly interpolated.
    Tabulated {
        omega: Vec<f64>,
        im_f: Vec<f64>,
    },
}

impl TryFrom<KernelSpec> for MemoryKernel {
    type Error = Error;
    fn try_from(spec: KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::Markovian {} => Ok(MemoryKernel::Markovian),
            KernelSpec::Equilibrium { td, sign } => MemoryKernel::equilibrium(td, sign),
            KernelSpec::Tabulated { omega, im_f } => MemoryKernel::tabulated(omega, im_f),
        }
    }
}

impl From<MemoryKernel> for KernelSpec {
    fn from(k: MemoryKernel) -> Self {
        match k {
            MemoryKernel::Markovian => KernelSpec::Markovian {},
            MemoryKernel::Equilibrium { td, sign } => KernelSpec::Equilibrium { td, sign },
            MemoryKernel::Tabulated { omega, im_f } => KernelSpec::Tabulated { omega, im_f },
        }
    }
}

impl MemoryKernel {
    pub fn equilibrium(td: f64, sign: KernelSign) -> Result<Self> {
        if !(td >= 0.0) || !td.is_finite() {
            return Err(Error::param(
                "Td",
                format!("detector temperature must be finite and >= 0, got {td}"),
            ));
        }
        Ok(MemoryKernel::Equilibrium { td, sign })
    }

    /// Zero-temperature emission kernel, f(t) = 1/(π t).
    pub fn zero_temperature() -> Self {
        MemoryKernel::Equilibrium {
            td: 0.0,
            sign: KernelSign::Emission,
        }
    }

    pub fn tabulated(omega: Vec<f64>, im_f: Vec<f64>) -> Result<Self> {
        if omega.len() != im_f.len() {
            return Err(Error::InvalidTable(format!(
                "{} frequencies but {} values",
                omega.len(),
                im_f.len()
            )));
        }
        if omega.len() < 2 {
            return Err(Error::InvalidTable("need at least two points".into()));
        }
        if omega.iter().chain(im_f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTable("non-finite entry".into()));
        }
        if omega.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTable("frequencies must be strictly ascending".into()));
        }
        let table = MemoryKernel::Tabulated { omega, im_f };
        if let MemoryKernel::Tabulated { omega, im_f } = &table {
            for (w, v) in omega.iter().zip(im_f) {
                if let Ok(mirror) = interpolate(omega, im_f, -w) {
                    if (mirror + v).abs() > TABLE_ANTISYMMETRY_TOL {
                        return Err(Error::InvalidTable(format!("f(-w) != -f(w) at w = {w}")));
                    }
                }
            }
        }
        Ok(table)
    }

    pub fn is_markovian(&self) -> bool {
        matches!(self, MemoryKernel::Markovian)
    }

    /// f(ω), purely imaginary.
    pub fn f_omega(&self, omega: f64) -> Result<Complex64> {
        let im = match self {
            MemoryKernel::Markovian => 0.0,
            MemoryKernel::Equilibrium { td, sign } => {
                if omega == 0.0 {
                    return Err(Error::FrequencyPole);
                }
                sign.value() * coth_half_ratio(omega, *td)
            }
            MemoryKernel::Tabulated { omega: grid, im_f } => interpolate(grid, im_f, omega)?,
        };
        Ok(Complex64::new(0.0, im))
    }

    /// f(t), real and odd.
    pub fn f_time(&self, t: f64) -> Result<f64> {
        match self {
            MemoryKernel::Markovian => Ok(0.0),
            MemoryKernel::Equilibrium { td, sign } => {
                if t == 0.0 {
                    return Err(Error::TimeSingularity);
                }
                let v = if *td == 0.0 {
                    1.0 / (PI * t)
                } else {
                    td / (PI * td * t).tanh()
                };
                Ok(sign.value() * v)
            }
            MemoryKernel::Tabulated { .. } => {
                Err(Error::UnsupportedKernel("tabulated kernels have no time-domain form"))
            }
        }
    }
}

/// coth(ω / 2T), with the T = 0 limit sign(ω).
fn coth_half_ratio(omega: f64, temperature: f64) -> f64 {
    if temperature == 0.0 {
        omega.signum()
    } else {
        1.0 / (omega / (2.0 * temperature)).tanh()
    }
}

/// tanh(Ω / 2T), with the T = 0 limit 1 for Ω > 0.
pub(crate) fn tanh_half_ratio(omega: f64, temperature: f64) -> f64 {
    if temperature == 0.0 {
        omega.signum()
    } else {
        (omega / (2.0 * temperature)).tanh()
    }
}

fn interpolate(grid: &[f64], values: &[f64], x: f64) -> Result<f64> {
    let lo = grid[0];
    let hi = grid[grid.len() - 1];
    if !(x >= lo && x <= hi) {
        return Err(Error::Extrapolation { omega: x, lo, hi });
    }
    let k = match grid.binary_search_by(|g| g.total_cmp(&x)) {
        Ok(k) => return Ok(values[k]),
        Err(k) => k,
    };
    let (x0, x1) = (grid[k - 1], grid[k]);
    let s = (x - x0) / (x1 - x0);
    Ok(values[k - 1] * (1.0 - s) + values[k] * s)
}

/// Discretization of the time axis used to sample `∫dt' f(t - t')(...)`.
///
/// Samples sit at midpoints `t_c ± (k + 1/2) dt` around each measurement
/// time, so the odd kernel cancels pairwise around its singularity. The
/// window is truncated at `t_min` with a smooth (C∞) taper of length
/// `taper` that suppresses the edge artefact of kernels that do not decay
/// (T_d > 0 tends to a constant). Nothing is needed at `t_max`: samples
/// later than every measurement never contribute.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub taper: f64,
}

impl TimeGrid {
    pub fn new(dt: f64, t_min: f64, t_max: f64) -> Result<Self> {
        Self::with_taper(dt, t_min, t_max, 0.0)
    }

    pub fn with_taper(dt: f64, t_min: f64, t_max: f64, taper: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        if !(t_max > t_min) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::param(
                "window",
                format!("need t_min < t_max, got [{t_min}, {t_max}]"),
            ));
        }
        if !(taper >= 0.0) || taper > t_max - t_min {
            return Err(Error::param("taper", format!("invalid taper length {taper}")));
        }
        Ok(Self {
            dt,
            t_min,
            t_max,
            taper,
        })
    }

    /// Window ending at the latest measurement, starting `lead` before the
    /// earliest one, with the first half of the lead-in tapered.
    pub fn for_times(dt: f64, lead: f64, times: &[f64]) -> Result<Self> {
        let first = times.iter().copied().fold(f64::INFINITY, f64::min);
        let last = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !first.is_finite() {
            return Err(Error::param("times", "no measurement times"));
        }
        Self::with_taper(dt, first - lead, last.max(first + dt), 0.5 * lead)
    }

    /// Times inside the window and clear of the taper.
    pub fn contains_flat(&self, t: f64) -> bool {
        t >= self.t_min + self.taper && t <= self.t_max
    }

    fn taper_weight(&self, t: f64) -> f64 {
        if self.taper == 0.0 {
            return 1.0;
        }
        smooth_step((t - self.t_min) / self.taper)
    }

    /// `(t', f(center - t') · dt · taper(t'))` for all midpoint samples in
    /// the window, ordered by increasing `t'`. Empty for the Markovian kernel.
    pub fn samples(&self, kernel: &MemoryKernel, center: f64) -> Result<Vec<(f64, f64)>> {
        if kernel.is_markovian() {
            return Ok(Vec::new());
        }
        let below = ((center - self.t_min) / self.dt - 0.5).floor();
        let above = ((self.t_max - center) / self.dt - 0.5).floor();
        let mut out = Vec::new();
        if below >= 0.0 {
            for k in (0..=below as usize).rev() {
                let u = (k as f64 + 0.5) * self.dt;
                let t = center - u;
                let w = self.taper_weight(t);
                if w > 0.0 {
                    out.push((t, kernel.f_time(u)? * self.dt * w));
                }
            }
        }
        if above >= 0.0 {
            for k in 0..=above as usize {
                let u = (k as f64 + 0.5) * self.dt;
                out.push((center + u, kernel.f_time(-u)? * self.dt * self.taper_weight(center + u)));
            }
        }
        Ok(out)
    }
}

/// C∞ step: 0 for s <= 0, 1 for s >= 1.
fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let psi = |u: f64| (-1.0 / u).exp();
    let a = psi(s);
    a / (a + psi(1.0 - s))
}

/// Residuals of the two-level no-information conditions at Ω > 0 for a
/// probe value f(Ω).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub omega: f64,
    pub temperature: f64,
    /// |Re f(Ω)|, from the off-resonance condition.
    pub residual_real: f64,
    /// 1 - Im f(Ω) tanh(Ω/2T), the line at ω = +Ω.
    pub residual_imag_plus: f64,
    /// 1 + Im f(-Ω) tanh(Ω/2T) with f(-Ω) = -f(Ω), the line at ω = -Ω.
    pub residual_imag_minus: f64,
}

impl CalibrationReport {
    pub fn max_abs(&self) -> f64 {
        self.residual_real
            .abs()
            .max(self.residual_imag_plus.abs())
            .max(self.residual_imag_minus.abs())
    }
}

pub fn calibration_residual(f_probe: Complex64, omega: f64, temperature: f64) -> Result<CalibrationReport> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::param("omega", format!("must be > 0, got {omega}")));
    }
    if temperature < 0.0 || temperature.is_nan() {
        return Err(Error::NegativeTemperature(temperature));
    }
    let th = tanh_half_ratio(omega, temperature);
    let f_minus = -f_probe;
    let report = CalibrationReport {
        omega,
        temperature,
        residual_real: f_probe.re.abs(),
        residual_imag_plus: 1.0 - f_probe.im * th,
        residual_imag_minus: 1.0 + f_minus.im * th,
    };
    if !(report.residual_real.is_finite()
        && report.residual_imag_plus.is_finite()
        && report.residual_imag_minus.is_finite())
    {
        return Err(Error::param("f_probe", "non-finite residual"));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSolution {
    pub kernel: MemoryKernel,
    /// Im f(Ω) found by root finding.
    pub im_f: f64,
    pub iterations: u32,
    pub report: CalibrationReport,
}

const BRACKET: (f64, f64) = (1.0, 1e6);

/// Find Im f(Ω) that makes the two-level calibration residuals vanish, by
/// bisection on [1, 1e6].
pub fn solve_kernel(omega: f64, temperature: f64) -> Result<KernelSolution> {
    let residual = |y: f64| -> Result<f64> {
        Ok(calibration_residual(Complex64::new(0.0, y), omega, temperature)?.residual_imag_plus)
    };
    let (mut lo, mut hi) = BRACKET;
    let mut r_lo = residual(lo)?;
    let r_hi = residual(hi)?;
    if r_lo < 0.0 || r_hi > 0.0 {
        return Err(Error::NoRoot { lo, hi });
    }
    let mut iterations = 0;
    while r_lo != 0.0 && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let r_mid = residual(mid)?;
        if r_mid > 0.0 {
            lo = mid;
            r_lo = r_mid;
        } else {
            hi = mid;
        }
    }
    let im_f = if r_lo == 0.0 { lo } else { 0.5 * (lo + hi) };
    Ok(KernelSolution {
        kernel: MemoryKernel::equilibrium(temperature, KernelSign::Emission)?,
        im_f,
        iterations,
        report: calibration_residual(Complex64::new(0.0, im_f), omega, temperature)?,
    })
}
