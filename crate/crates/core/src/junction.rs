//! Current noise of a tunnel junction under DC and AC bias.
//!
//! Frequencies in units of the drive Ω where convenient, currents scaled
//! by the conductance G. Noise values of [`SqueezingReport`] are per-line
//! coefficients in units of 2πGΩt₀ with t₀ = 2πδ(0).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// |J_N(z)| below which the photon-assisted sums are truncated.
const BESSEL_CUTOFF: f64 = 1e-14;
/// Tolerance of the violation test; ties count as not violated.
const TIE_TOL: f64 = 1e-12;
const SCAN_STEP: f64 = 0.01;
const SCAN_MAX: f64 = 20.0;
const BISECT_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JunctionConfig {
    #[serde(rename = "G", default = "one")]
    pub g: f64,
    #[serde(rename = "T", default)]
    pub t: f64,
    #[serde(rename = "Td", default)]
    pub td: f64,
    #[serde(rename = "Omega", default = "one")]
    pub omega: f64,
    #[serde(default)]
    pub z: f64,
    #[serde(rename = "V_dc", default)]
    pub v_dc: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for JunctionConfig {
    fn default() -> Self {
        Self {
            g: 1.0,
            t: 0.0,
            td: 0.0,
            omega: 1.0,
            z: 0.0,
            v_dc: 0.0,
        }
    }
}

impl JunctionConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.g, self.t, self.td, self.omega, self.z, self.v_dc]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("junction", "non-finite parameter"));
        }
        if !(self.g > 0.0) {
            return Err(Error::param("G", format!("must be > 0, got {}", self.g)));
        }
        if !(self.omega > 0.0) {
            return Err(Error::param("Omega", format!("must be > 0, got {}", self.omega)));
        }
        if self.t < 0.0 {
            return Err(Error::NegativeTemperature(self.t));
        }
        if self.td < 0.0 {
            return Err(Error::NegativeTemperature(self.td));
        }
        if self.z < 0.0 {
            return Err(Error::param("z", format!("must be >= 0, got {}", self.z)));
        }
        Ok(())
    }
}

/// `α coth(α/2T)`: |α| at T = 0 and 2T at α = 0.
pub fn w(alpha: f64, temperature: f64) -> f64 {
    if temperature == 0.0 {
        return alpha.abs();
    }
    let x = alpha / (2.0 * temperature);
    if x.abs() < 1e-4 {
        let x2 = x * x;
        return 2.0 * temperature * (1.0 + x2 / 3.0 - x2 * x2 / 45.0);
    }
    alpha / x.tanh()
}

/// J_0(z), …, J_nmax(z) by Miller's downward recurrence, normalized with
/// J_0² + 2ΣJ_n² = 1 and signed with J_0 + 2ΣJ_2k = 1.
pub fn bessel_j_table(z: f64, nmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if z == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = nmax.max(z.ceil() as usize) + 30 + (10.0 * z.cbrt()).ceil() as usize;
    let mut vals = vec![0.0; start + 2];
    vals[start] = 1e-300;
    for n in (1..=start).rev() {
        vals[n - 1] = 2.0 * n as f64 / z * vals[n] - vals[n + 1];
        if vals[n - 1].abs() > 1e100 {
            for v in vals.iter_mut().skip(n - 1) {
                *v *= 1e-100;
            }
        }
    }
    let peak = vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    for v in vals.iter_mut() {
        *v /= peak;
    }
    let squares: f64 = vals[0] * vals[0] + 2.0 * vals[1..].iter().map(|v| v * v).sum::<f64>();
    let even: f64 = vals[0] + 2.0 * vals.iter().skip(2).step_by(2).sum::<f64>();
    let scale = even.signum() / squares.sqrt();
    for (o, v) in out.iter_mut().zip(&vals) {
        *o = v * scale;
    }
    out
}

/// J_n(z) for any integer n.
pub fn bessel_j(n: i64, z: f64) -> f64 {
    let table = bessel_j_table(z, n.unsigned_abs() as usize);
    let v = table[n.unsigned_abs() as usize];
    if n < 0 && n % 2 != 0 {
        -v
    } else {
        v
    }
}

/// Smallest N > z with |J_n(z)| < 1e-14 for all n ≥ N.
pub fn bessel_cutoff(z: f64) -> usize {
    let table = bessel_j_table(z, (z.ceil() as usize) + 60);
    let mut n = z.ceil() as usize;
    while n + 1 < table.len() && table[n..].iter().any(|v| v.abs() >= BESSEL_CUTOFF) {
        n += 1;
    }
    n.max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DcOrdering {
    Symmetrized,
    Weak,
}

/// DC-biased noise in units of G: `Σ_± w(ω ± V, T)/2`, minus `w(ω, T_d)`
/// in weak order.
pub fn dc_noise(cfg: &JunctionConfig, omega: f64, ordering: DcOrdering) -> Result<f64> {
    cfg.validate()?;
    if cfg.z != 0.0 {
        return Err(Error::param("z", "DC noise needs z = 0"));
    }
    let sym = 0.5 * (w(omega + cfg.v_dc, cfg.t) + w(omega - cfg.v_dc, cfg.t));
    Ok(cfg.g
        * match ordering {
            DcOrdering::Symmetrized => sym,
            DcOrdering::Weak => sym - w(omega, cfg.td),
        })
}

fn signed(table: &[f64], n: i64) -> f64 {
    let k = n.unsigned_abs() as usize;
    match table.get(k) {
        None => 0.0,
        Some(v) if n < 0 && k % 2 == 1 => -v,
        Some(v) => *v,
    }
}

/// Coefficient of 2πδ(ω + ω' - 2mΩ) in the symmetrized photon-assisted
/// noise at pure AC bias, in units of G: `Σ_n J_n J_{n-2m} w(ω - nΩ, T)`.
pub fn pat_weight(cfg: &JunctionConfig, m: i64, omega: f64) -> Result<f64> {
    pat_weight_with_cutoff(cfg, m, omega, bessel_cutoff(cfg.z))
}

/// [`pat_weight`] with an explicit truncation |n| ≤ `cutoff` of every
/// Bessel index.
pub fn pat_weight_with_cutoff(cfg: &JunctionConfig, m: i64, omega: f64, cutoff: usize) -> Result<f64> {
    cfg.validate()?;
    if cfg.v_dc != 0.0 {
        return Err(Error::param("V_dc", "photon-assisted noise is evaluated at V_dc = 0"));
    }
    let table = bessel_j_table(cfg.z, cutoff);
    let c = cutoff as i64;
    let lo = (-c).max(2 * m - c);
    let hi = c.min(2 * m + c);
    let mut total = 0.0;
    for n in lo..=hi {
        total += signed(&table, n) * signed(&table, n - 2 * m) * w(omega - n as f64 * cfg.omega, cfg.t);
    }
    Ok(cfg.g * total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqueezingReport {
    pub z: f64,
    pub sym_abs: f64,
    pub re_sq: f64,
    pub emission: f64,
    pub quad_var: f64,
    pub bound: f64,
    pub violated: bool,
}

impl SqueezingReport {
    /// `re_sq - emission`; positive inside the violation region.
    pub fn margin(&self) -> f64 {
        self.re_sq - self.emission
    }
}

/// Noise correlators at ω = Ω for a zero-temperature detector and pure AC
/// drive.
pub fn squeezing_report(cfg: &JunctionConfig) -> Result<SqueezingReport> {
    cfg.validate()?;
    if cfg.td != 0.0 {
        return Err(Error::param("Td", "the emission branch needs T_d = 0"));
    }
    if cfg.v_dc != 0.0 {
        return Err(Error::param("V_dc", "squeezing report needs V_dc = 0"));
    }
    let omega = cfg.omega;
    let scale = cfg.g * omega;
    let sym_abs = pat_weight(cfg, 0, omega)? / scale;
    let re_sq = pat_weight(cfg, 1, omega)? / scale;
    // sym_abs - 1 summed termwise with Σ J_n² = 1, free of cancellation
    let cutoff = bessel_cutoff(cfg.z);
    let table = bessel_j_table(cfg.z, cutoff);
    let c = cutoff as i64;
    let emission = (-c..=c)
        .map(|n| {
            let j = signed(&table, n);
            j * j * (w(omega - n as f64 * omega, cfg.t) - w(omega, cfg.td))
        })
        .sum::<f64>()
        / omega;
    debug_assert!((emission - (sym_abs - 1.0)).abs() < 1e-12 * sym_abs.max(1.0));
    let quad_var = 0.5 * (sym_abs - re_sq);
    let bound = 0.5;
    let violated = re_sq - emission > TIE_TOL;
    Ok(SqueezingReport {
        z: cfg.z,
        sym_abs,
        re_sq,
        emission,
        quad_var,
        bound,
        violated,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationInterval {
    pub z_lo: f64,
    pub z_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig1Scan {
    pub rows: Vec<SqueezingReport>,
    pub interval: Option<ViolationInterval>,
}

fn margin_at(cfg: &JunctionConfig, z: f64) -> Result<f64> {
    Ok(squeezing_report(&JunctionConfig { z, ..*cfg })?.margin())
}

/// Bisect between `inside` (margin > 0) and `outside` (margin ≤ 0).
fn bisect_edge(cfg: &JunctionConfig, mut inside: f64, mut outside: f64) -> Result<f64> {
    while (inside - outside).abs() > BISECT_TOL {
        let mid = 0.5 * (inside + outside);
        if margin_at(cfg, mid)? > 0.0 {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    Ok(0.5 * (inside + outside))
}

/// First interval of drive strengths z ≥ 0 on which the classical
/// inequality fails, bracketed on a 0.01 scan up to z = 20 and refined by
/// bisection to 1e-8.
pub fn violation_interval(cfg: &JunctionConfig) -> Result<Option<ViolationInterval>> {
    let steps = (SCAN_MAX / SCAN_STEP).round() as usize;
    let mut prev = (0.0, margin_at(cfg, 0.0)?);
    let mut z_lo = None;
    if prev.1 > 0.0 {
        z_lo = Some(0.0);
    }
    for i in 1..=steps {
        let z = i as f64 * SCAN_STEP;
        let m = margin_at(cfg, z)?;
        match z_lo {
            None if m > 0.0 => z_lo = Some(bisect_edge(cfg, z, prev.0)?),
            Some(lo) if m <= 0.0 => {
                let hi = bisect_edge(cfg, prev.0, z)?;
                return Ok(Some(ViolationInterval { z_lo: lo, z_hi: hi }));
            }
            _ => {}
        }
        prev = (z, m);
    }
    Ok(z_lo.map(|lo| ViolationInterval {
        z_lo: lo,
        z_hi: f64::INFINITY,
    }))
}

/// One report per z plus the violation interval.
pub fn fig1_scan(cfg: &JunctionConfig, z_grid: &[f64]) -> Result<Fig1Scan> {
    if z_grid.is_empty() {
        return Err(Error::param("z_grid", "empty grid"));
    }
    let rows = z_grid
        .iter()
        .map(|&z| squeezing_report(&JunctionConfig { z, ..*cfg }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Fig1Scan {
        rows,
        interval: violation_interval(cfg)?,
    })
}
