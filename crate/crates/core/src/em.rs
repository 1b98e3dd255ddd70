//! Electromagnetic model of the flexible reflecting surface.
//!
//! Two levels of description live here:
//!
//! * the macroscopic sheet, characterised by a scalar electric surface
//!   admittance `Y_e` and magnetic surface impedance `Z_m`, from which the
//!   local reflection/transmission coefficients follow and which can be
//!   synthesised for an anomalous TM reflection;
//! * the individual unit cell, described either by its equivalent circuit
//!   (top-layer RLC in series with the varactor, shunted by the substrate
//!   inductance) or by the measured trigonometric-polynomial fit of the
//!   reflection amplitude as a function of phase state and incidence angle.
//!
//! The per-element incidence angle on a bent surface comes from rotating the
//! nominal element normal and measuring it against the incoming ray. All
//! functions are pure.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Free-space wave impedance (ohms), rounded as is customary in RIS work.
pub const ETA0: f64 = 377.0;
/// Speed of light (m/s), rounded consistently with [`ETA0`].
pub const SPEED_OF_LIGHT: f64 = 3.0e8;
/// Largest incidence angle (degrees) covered by the fitted amplitude model.
pub const FIT_MAX_INCIDENCE_DEG: f64 = 45.0;
/// Largest admissible element bend (degrees).
pub const MAX_BEND_DEG: f64 = 90.0;

const SINGULAR_REL: f64 = 1e-15;
const POLE_TOL: f64 = 1e-9;
const MIN_SOURCE_DISTANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmError {
    #[error("singular surface: {0} denominator vanishes")]
    SingularSurface(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate geometry: source is {distance:e} m from the element")]
    DegenerateGeometry { distance: f64 },
    #[error("invalid fit coefficients: {0}")]
    InvalidFit(String),
    #[error("invalid circuit parameters: {0}")]
    InvalidCircuit(String),
}

pub type Result<T> = std::result::Result<T, EmError>;

fn is_singular(denominator: Complex64, scale: f64) -> bool {
    denominator.norm() <= SINGULAR_REL * scale
}

// ---------------------------------------------------------------------------
// Macroscopic sheet
// ---------------------------------------------------------------------------

/// Scalar surface parameters of an electrically thin sheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceParams {
    /// Electric surface admittance (S).
    pub y_e: Complex64,
    /// Magnetic surface impedance (ohm).
    pub z_m: Complex64,
}

impl SurfaceParams {
    pub fn new(y_e: Complex64, z_m: Complex64) -> Self {
        Self { y_e, z_m }
    }

    /// True when both parameters are purely imaginary (passive, lossless
    /// sheet) up to a relative tolerance of 1e-12.
    pub fn is_lossless(&self) -> bool {
        fn imaginary(z: Complex64) -> bool {
            z.re.abs() <= 1e-12 * z.norm()
        }
        imaginary(self.y_e) && imaginary(self.z_m)
    }

    pub fn is_finite(&self) -> bool {
        self.y_e.is_finite() && self.z_m.is_finite()
    }
}

/// Local reflection and transmission coefficients of a homogeneous sheet
/// under normal incidence.
pub fn rt_from_surface_params(sp: SurfaceParams) -> Result<(Complex64, Complex64)> {
    if !sp.is_finite() {
        return Err(EmError::Domain("surface parameters must be finite".into()));
    }
    let ey = sp.y_e * ETA0;
    let d_e = 2.0 + ey;
    let d_m = 2.0 * ETA0 + sp.z_m;
    if is_singular(d_e, 2.0 + ey.norm()) {
        return Err(EmError::SingularSurface("2 + eta0*Y_e"));
    }
    if is_singular(d_m, 2.0 * ETA0 + sp.z_m.norm()) {
        return Err(EmError::SingularSurface("2*eta0 + Z_m"));
    }
    let coupling = 2.0 * (ETA0 * ETA0 * sp.y_e - sp.z_m) / (d_e * d_m);
    let r = -coupling;
    let t = -(ey - 2.0) / d_e + coupling;
    Ok((r, t))
}

/// `|A_r| = sqrt(cos i / cos r)`: reflected field amplitude that carries the
/// impinging normal power flux away at the reflection angle.
pub fn reflected_amplitude_norm(iota_i_deg: f64, iota_r_deg: f64) -> Result<f64> {
    let ci = iota_i_deg.to_radians().cos();
    let cr = iota_r_deg.to_radians().cos();
    if !(cr > 1e-12) {
        return Err(EmError::Domain(format!(
            "reflection angle {iota_r_deg} deg has no forward power flux"
        )));
    }
    if ci < 0.0 {
        return Err(EmError::Domain(format!(
            "incidence angle {iota_i_deg} deg is behind the surface"
        )));
    }
    Ok((ci / cr).sqrt())
}

/// Point-wise `(Y_e(x), Z_m(x))` that turns a TM plane wave incident at
/// `iota_i` into a reflected TM plane wave at `iota_r` with relative
/// amplitude `a_r`, on a reflective (non-transmitting) sheet.
pub fn tm_surface_synthesis(
    iota_i_deg: f64,
    iota_r_deg: f64,
    a_r: Complex64,
    x: f64,
    frequency_hz: f64,
) -> Result<SurfaceParams> {
    if !(iota_i_deg.abs() < 90.0 && iota_r_deg.abs() < 90.0) {
        return Err(EmError::Domain(format!(
            "angles must lie strictly inside (-90, 90) deg, got {iota_i_deg} and {iota_r_deg}"
        )));
    }
    if !(frequency_hz > 0.0) {
        return Err(EmError::Domain("frequency must be positive".into()));
    }
    let k0 = 2.0 * PI * frequency_hz / SPEED_OF_LIGHT;
    let (si, ci) = iota_i_deg.to_radians().sin_cos();
    let (sr, cr) = iota_r_deg.to_radians().sin_cos();
    let e_i = Complex64::from_polar(1.0, -k0 * si * x);
    let e_r = Complex64::from_polar(1.0, -k0 * sr * x);

    let magnetic = e_i - a_r * e_r;
    let electric = ci * e_i + a_r * cr * e_r;
    if is_singular(electric, ci + a_r.norm() * cr) {
        return Err(EmError::SingularSurface("Y_e"));
    }
    if is_singular(magnetic, 1.0 + a_r.norm()) {
        return Err(EmError::SingularSurface("Z_m"));
    }
    Ok(SurfaceParams {
        y_e: (2.0 / ETA0) * magnetic / electric,
        z_m: 2.0 * ETA0 * electric / magnetic,
    })
}

// ---------------------------------------------------------------------------
// Unit-cell equivalent circuit
// ---------------------------------------------------------------------------

/// Lumped components of the unit cell at one incidence angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellComponents {
    pub l_b: f64,
    pub l_t: f64,
    pub r_t: f64,
    pub c_t: f64,
}

/// One row of the optional angle-dependent component table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleComponents {
    pub iota_deg: f64,
    #[serde(flatten)]
    pub components: CellComponents,
}

/// Equivalent-circuit description of the varactor-loaded unit cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitParams {
    /// Bottom-layer (substrate) inductance, H.
    pub l_b: f64,
    /// Top-layer inductance, H.
    pub l_t: f64,
    /// Top-layer resistance, ohm.
    pub r_t: f64,
    /// Top-layer capacitance, F.
    pub c_t: f64,
    /// Varactor capacitance range `[min, max]`, F.
    pub c_range: [f64; 2],
    /// Operating frequency, Hz.
    pub frequency_hz: f64,
    /// Substrate relative permittivity.
    pub eps_r: f64,
    /// Substrate thickness, m.
    pub h_sub: f64,
    /// Optional per-angle components, linearly interpolated and held constant
    /// beyond the first/last row. Empty means angle-independent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub angle_table: Vec<AngleComponents>,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self {
            l_b: 15.83e-9,
            l_t: 38.26e-9,
            r_t: 2.2,
            c_t: 15.6e-12,
            c_range: [0.63e-12, 2.67e-12],
            frequency_hz: 0.839e9,
            eps_r: 2.65,
            h_sub: 12.0e-3,
            angle_table: Vec::new(),
        }
    }
}

impl CircuitParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l_b", self.l_b),
            ("l_t", self.l_t),
            ("c_t", self.c_t),
            ("c_range[0]", self.c_range[0]),
            ("c_range[1]", self.c_range[1]),
            ("frequency_hz", self.frequency_hz),
            ("eps_r", self.eps_r),
            ("h_sub", self.h_sub),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(EmError::InvalidCircuit(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.r_t >= 0.0) {
            return Err(EmError::InvalidCircuit(format!("r_t must be >= 0, got {}", self.r_t)));
        }
        if self.c_range[0] > self.c_range[1] {
            return Err(EmError::InvalidCircuit("c_range min exceeds max".into()));
        }
        if self.eps_r < 1.0 {
            return Err(EmError::InvalidCircuit("eps_r must be >= 1".into()));
        }
        for row in &self.angle_table {
            let c = row.components;
            if !(c.l_b > 0.0 && c.l_t > 0.0 && c.c_t > 0.0 && c.r_t >= 0.0) {
                return Err(EmError::InvalidCircuit(format!(
                    "angle_table row at {} deg has non-physical components",
                    row.iota_deg
                )));
            }
        }
        if self.angle_table.windows(2).any(|w| w[0].iota_deg >= w[1].iota_deg) {
            return Err(EmError::InvalidCircuit("angle_table must be sorted by angle".into()));
        }
        Ok(())
    }

    pub fn angular_frequency(&self) -> f64 {
        2.0 * PI * self.frequency_hz
    }

    /// Components at incidence angle `iota_deg`.
    pub fn components_at(&self, iota_deg: f64) -> CellComponents {
        let base = CellComponents { l_b: self.l_b, l_t: self.l_t, r_t: self.r_t, c_t: self.c_t };
        let table = &self.angle_table;
        match table.len() {
            0 => base,
            1 => table[0].components,
            _ => {
                if iota_deg <= table[0].iota_deg {
                    return table[0].components;
                }
                let last = table[table.len() - 1];
                if iota_deg >= last.iota_deg {
                    return last.components;
                }
                let hi = table.partition_point(|r| r.iota_deg <= iota_deg);
                let (a, b) = (table[hi - 1], table[hi]);
                let w = (iota_deg - a.iota_deg) / (b.iota_deg - a.iota_deg);
                let lerp = |x: f64, y: f64| x + w * (y - x);
                CellComponents {
                    l_b: lerp(a.components.l_b, b.components.l_b),
                    l_t: lerp(a.components.l_t, b.components.l_t),
                    r_t: lerp(a.components.r_t, b.components.r_t),
                    c_t: lerp(a.components.c_t, b.components.c_t),
                }
            }
        }
    }

    /// Substrate inductance implied by the short-circuited line model.
    pub fn substrate_inductance(&self) -> Result<f64> {
        let z_b = short_line_impedance(self.frequency_hz, self.eps_r, self.h_sub)?;
        Ok(z_b.im / self.angular_frequency())
    }
}

/// Input impedance of the grounded dielectric, modelled as a shorted
/// transmission line of length `h_sub`.
pub fn short_line_impedance(frequency_hz: f64, eps_r: f64, h_sub: f64) -> Result<Complex64> {
    if !(frequency_hz > 0.0) || !(eps_r >= 1.0) || !(h_sub >= 0.0) {
        return Err(EmError::Domain(format!(
            "need f > 0, eps_r >= 1, H >= 0 (got {frequency_hz}, {eps_r}, {h_sub})"
        )));
    }
    let n = eps_r.sqrt();
    let arg = 2.0 * PI * frequency_hz * n * h_sub / SPEED_OF_LIGHT;
    let k = ((arg - PI / 2.0) / PI).round();
    if (arg - PI / 2.0 - k * PI).abs() < POLE_TOL {
        return Err(EmError::Domain(format!(
            "substrate is a quarter-wave resonator at {frequency_hz} Hz (tangent pole)"
        )));
    }
    Ok(Complex64::new(0.0, ETA0 / n * arg.tan()))
}

/// Unit-cell input impedance `Z(iota, omega, C)`.
pub fn unit_cell_impedance(iota_deg: f64, capacitance: f64, cp: &CircuitParams) -> Result<Complex64> {
    check_cell_inputs(iota_deg, capacitance, cp)?;
    let w = cp.angular_frequency();
    let c = cp.components_at(iota_deg);
    let j = Complex64::i();
    let shunt = j * w * c.l_b;
    let series = c.r_t + j * w * c.l_t + 1.0 / (j * w * c.c_t) + 1.0 / (j * w * capacitance);
    let sum = shunt + series;
    if is_singular(sum, shunt.norm() + series.norm()) {
        return Ok(Complex64::new(f64::INFINITY, 0.0));
    }
    Ok(shunt * series / sum)
}

/// Reflection coefficient `(Z - eta0) / (Z + eta0)` of the unit cell.
pub fn unit_cell_gamma(iota_deg: f64, capacitance: f64, cp: &CircuitParams) -> Result<Complex64> {
    let z = unit_cell_impedance(iota_deg, capacitance, cp)?;
    if !z.is_finite() {
        // Parallel resonance of a lossless cell: open circuit.
        return Ok(Complex64::new(1.0, 0.0));
    }
    Ok((z - ETA0) / (z + ETA0))
}

fn check_cell_inputs(iota_deg: f64, capacitance: f64, cp: &CircuitParams) -> Result<()> {
    if !(0.0..90.0).contains(&iota_deg) {
        return Err(EmError::Domain(format!("incidence angle {iota_deg} deg outside [0, 90)")));
    }
    let [lo, hi] = cp.c_range;
    if !(capacitance >= lo && capacitance <= hi) {
        return Err(EmError::Domain(format!(
            "varactor capacitance {capacitance:e} F outside [{lo:e}, {hi:e}]"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Fitted amplitude model
// ---------------------------------------------------------------------------

/// Unit in which the incidence angle enters the fitted polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Degrees,
    Radians,
}

/// Weights of the fitted reflection-amplitude model
/// `p1 + p2 sin(t) - p3 cos(t) + p4 i + p5 i^2 + p6 sin(t) i + p7 cos(t) i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFit", into = "RawFit")]
pub struct FitCoefficients {
    p: [f64; 7],
    unit: AngleUnit,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFit {
    p: [f64; 7],
    #[serde(default)]
    iota_unit: AngleUnit,
}

impl TryFrom<RawFit> for FitCoefficients {
    type Error = EmError;
    fn try_from(raw: RawFit) -> Result<Self> {
        FitCoefficients::with_unit(raw.p, raw.iota_unit)
    }
}

impl From<FitCoefficients> for RawFit {
    fn from(f: FitCoefficients) -> Self {
        RawFit { p: f.p, iota_unit: f.unit }
    }
}

/// Weights measured on the flexible-surface test platform.
pub const MEASURED_FIT: [f64; 7] = [0.8816, 0.0473, -0.1010, 0.0004, -0.000019, 0.000055, 0.000321];

impl Default for FitCoefficients {
    fn default() -> Self {
        Self { p: MEASURED_FIT, unit: AngleUnit::Degrees }
    }
}

impl FitCoefficients {
    pub fn new(p: [f64; 7]) -> Result<Self> {
        Self::with_unit(p, AngleUnit::Degrees)
    }

    /// Builds the model and checks on a 1-degree grid over the valid domain
    /// that the amplitude stays inside (0, 1].
    pub fn with_unit(p: [f64; 7], unit: AngleUnit) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(EmError::InvalidFit("weights must be finite".into()));
        }
        let fit = Self { p, unit };
        for theta_deg in 0..360 {
            for iota_deg in 0..=45 {
                let v = fit.raw(f64::from(theta_deg).to_radians(), f64::from(iota_deg));
                if !(v > 0.0 && v <= 1.0) {
                    return Err(EmError::InvalidFit(format!(
                        "amplitude {v} at theta={theta_deg} deg, iota={iota_deg} deg is outside (0, 1]"
                    )));
                }
            }
        }
        Ok(fit)
    }

    pub fn weights(&self) -> [f64; 7] {
        self.p
    }

    pub fn unit(&self) -> AngleUnit {
        self.unit
    }

    fn raw(&self, theta: f64, iota_deg: f64) -> f64 {
        let i = match self.unit {
            AngleUnit::Degrees => iota_deg,
            AngleUnit::Radians => iota_deg.to_radians(),
        };
        let (s, c) = theta.sin_cos();
        let p = &self.p;
        p[0] + p[1] * s - p[2] * c + p[3] * i + p[4] * i * i + p[5] * s * i + p[6] * c * i
    }
}

/// Fitted amplitude, with a flag telling whether clamping to [0, 1] applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amplitude {
    pub value: f64,
    pub clamped: bool,
}

/// Reflection amplitude of one element in phase state `theta` (radians) at
/// incidence `iota_deg` (degrees, within the fitted range).
pub fn fitted_amplitude(theta: f64, iota_deg: f64, fit: &FitCoefficients) -> Result<Amplitude> {
    if !theta.is_finite() || !iota_deg.is_finite() {
        return Err(EmError::Domain("phase and angle must be finite".into()));
    }
    if !(0.0..=FIT_MAX_INCIDENCE_DEG).contains(&iota_deg) {
        return Err(EmError::Domain(format!(
            "incidence angle {iota_deg} deg outside the fitted range [0, 45]"
        )));
    }
    let raw = fit.raw(theta, iota_deg);
    let value = raw.clamp(0.0, 1.0);
    Ok(Amplitude { value, clamped: value != raw })
}

/// One row of an exported amplitude table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitRow {
    pub theta_deg: f64,
    pub iota_deg: f64,
    pub delta: f64,
}

/// Samples the fitted amplitude on a phase x angle grid.
pub fn fit_table(fit: &FitCoefficients, theta_step_deg: f64, iota_step_deg: f64) -> Result<Vec<FitRow>> {
    if !(theta_step_deg > 0.0 && iota_step_deg > 0.0) {
        return Err(EmError::Domain("grid steps must be positive".into()));
    }
    let n_theta = (360.0 / theta_step_deg).ceil() as usize;
    let n_iota = (FIT_MAX_INCIDENCE_DEG / iota_step_deg).floor() as usize;
    let mut rows = Vec::with_capacity(n_theta * (n_iota + 1));
    for a in 0..n_theta {
        let theta_deg = a as f64 * theta_step_deg;
        if theta_deg >= 360.0 {
            break;
        }
        for b in 0..=n_iota {
            let iota_deg = b as f64 * iota_step_deg;
            let delta = fitted_amplitude(theta_deg.to_radians(), iota_deg, fit)?.value;
            rows.push(FitRow { theta_deg, iota_deg, delta });
        }
    }
    Ok(rows)
}

/// Writes rows as CSV with header `theta_deg,iota_deg,delta,phase_deg`.
pub fn write_fit_table<W: std::io::Write>(mut out: W, rows: &[FitRow]) -> std::io::Result<()> {
    writeln!(out, "theta_deg,iota_deg,delta,phase_deg")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.theta_deg, r.iota_deg, r.delta, r.theta_deg)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Discrete phase codebooks
// ---------------------------------------------------------------------------

/// Uniform discrete phase codebook `{2 pi k / 2^bits}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PhaseCodebook {
    bits: u8,
}

impl TryFrom<u8> for PhaseCodebook {
    type Error = EmError;
    fn try_from(bits: u8) -> Result<Self> {
        PhaseCodebook::new(bits)
    }
}

impl From<PhaseCodebook> for u8 {
    fn from(c: PhaseCodebook) -> u8 {
        c.bits
    }
}

impl Default for PhaseCodebook {
    fn default() -> Self {
        Self { bits: 2 }
    }
}

impl PhaseCodebook {
    pub fn new(bits: u8) -> Result<Self> {
        if (1..=3).contains(&bits) {
            Ok(Self { bits })
        } else {
            Err(EmError::Domain(format!("phase resolution must be 1..=3 bits, got {bits}")))
        }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn levels(&self) -> usize {
        1 << self.bits
    }

    pub fn step(&self) -> f64 {
        2.0 * PI / self.levels() as f64
    }

    pub fn phase(&self, index: usize) -> f64 {
        (index % self.levels()) as f64 * self.step()
    }

    pub fn phases(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.levels()).map(|k| self.phase(k))
    }

    /// Index of the codeword nearest to `theta` in circular distance; exact
    /// ties go to the smaller codeword.
    pub fn nearest_index(&self, theta: f64) -> usize {
        let n = self.levels();
        let x = theta.rem_euclid(2.0 * PI) / self.step();
        let lo = (x.floor() as usize).min(n - 1);
        let hi = (lo + 1) % n;
        let frac = x - lo as f64;
        if frac < 0.5 {
            lo
        } else if frac > 0.5 {
            hi
        } else {
            lo.min(hi)
        }
    }
}

/// Nearest codeword to `theta` (radians).
pub fn quantize_phase(theta: f64, codebook: PhaseCodebook) -> f64 {
    codebook.phase(codebook.nearest_index(theta))
}

/// Absolute circular distance between two phases, in `[0, pi]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

// ---------------------------------------------------------------------------
// Geometry of the bendable array
// ---------------------------------------------------------------------------

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn unit(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    (n > 1e-12 && n.is_finite()).then(|| scale(a, 1.0 / n))
}

/// Rodrigues rotation of `v` about unit axis `k` by `angle` radians.
fn rotate(v: Vec3, k: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    add(add(scale(v, c), scale(cross(k, v), s)), scale(k, dot(k, v) * (1.0 - c)))
}

/// Orientation and placement of a uniform linear array.
///
/// Elements sit along `axis` (horizontal), spaced `spacing` metres and
/// centred on `center`; `normal` is the unbent broadside direction. The
/// vertical rotation axis is `axis x normal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayFrame {
    pub center: Vec3,
    pub axis: Vec3,
    pub normal: Vec3,
    pub spacing: f64,
}

impl ArrayFrame {
    pub fn new(center: Vec3, axis: Vec3, normal: Vec3, spacing: f64) -> Result<Self> {
        let axis = unit(axis).ok_or_else(|| EmError::Domain("array axis must be non-zero".into()))?;
        let normal = unit(normal).ok_or_else(|| EmError::Domain("array normal must be non-zero".into()))?;
        if dot(axis, normal).abs() > 1e-9 {
            return Err(EmError::Domain("array axis and normal must be orthogonal".into()));
        }
        if !(spacing > 0.0) {
            return Err(EmError::Domain("element spacing must be positive".into()));
        }
        Ok(Self { center, axis, normal, spacing })
    }

    pub fn vertical(&self) -> Vec3 {
        cross(self.axis, self.normal)
    }

    pub fn element_position(&self, index: usize, count: usize) -> Vec3 {
        let offset = index as f64 - (count as f64 - 1.0) / 2.0;
        add(self.center, scale(self.axis, offset * self.spacing))
    }

    /// Element normal after rotating by `bend_h` about the array axis and
    /// then by `bend_v` about the vertical axis (degrees).
    pub fn bent_normal(&self, bend_h_deg: f64, bend_v_deg: f64) -> Vec3 {
        let n = rotate(self.normal, self.axis, bend_h_deg.to_radians());
        rotate(n, self.vertical(), bend_v_deg.to_radians())
    }

    /// Sine of the angle off broadside, along the array axis, of the
    /// direction from the array centre to `point`.
    pub fn steering_sine(&self, point: Vec3) -> f64 {
        match unit(sub(point, self.center)) {
            Some(u) => dot(u, self.axis).clamp(-1.0, 1.0),
            None => 0.0,
        }
    }
}

/// Incidence angle on one element, projected into the fitted range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncidentAngle {
    /// Angle used by the amplitude model, in `[0, 45]` degrees.
    pub degrees: f64,
    /// Geometric angle before projection, in `[0, 180]` degrees.
    pub raw_degrees: f64,
    /// Set when the geometric angle fell outside the fitted range.
    pub out_of_model: bool,
}

/// Angle between the ray towards `source` and the element normal after
/// bending.
pub fn effective_incident_angle(
    frame: &ArrayFrame,
    bend_h_deg: f64,
    bend_v_deg: f64,
    element_pos: Vec3,
    source_pos: Vec3,
) -> Result<IncidentAngle> {
    let ray = sub(source_pos, element_pos);
    let distance = norm(ray);
    if !(distance >= MIN_SOURCE_DISTANCE) {
        return Err(EmError::DegenerateGeometry { distance });
    }
    let n = frame.bent_normal(bend_h_deg, bend_v_deg);
    let cos = (dot(n, ray) / distance).clamp(-1.0, 1.0);
    let raw_degrees = cos.acos().to_degrees();
    let out_of_model = raw_degrees > FIT_MAX_INCIDENCE_DEG;
    Ok(IncidentAngle {
        degrees: raw_degrees.min(FIT_MAX_INCIDENCE_DEG),
        raw_degrees,
        out_of_model,
    })
}

// ---------------------------------------------------------------------------
// Reflection matrix
// ---------------------------------------------------------------------------

/// Per-element state of the surface for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisConfiguration {
    pub codebook: PhaseCodebook,
    /// Discrete phases, radians, members of `codebook`.
    pub phases: Vec<f64>,
    /// Rotation about the horizontal (array) axis, degrees.
    pub bend_h: Vec<f64>,
    /// Rotation about the vertical axis, degrees.
    pub bend_v: Vec<f64>,
    /// Projected incidence angles, degrees.
    pub incident_angles: Vec<f64>,
    /// Fitted amplitudes.
    pub amplitudes: Vec<f64>,
    /// Number of elements whose geometric angle exceeded the fitted range.
    pub out_of_model: usize,
}

impl RisConfiguration {
    /// Derives incidence angles from the geometry and amplitudes from the
    /// fitted model. `phases` are quantized to `codebook`; bends must lie
    /// within +-90 degrees.
    pub fn build(
        frame: &ArrayFrame,
        codebook: PhaseCodebook,
        phases: &[f64],
        bend_h: &[f64],
        bend_v: &[f64],
        source: Vec3,
        fit: &FitCoefficients,
    ) -> Result<Self> {
        let m = phases.len();
        if bend_h.len() != m || bend_v.len() != m {
            return Err(EmError::Domain(format!(
                "per-element vectors disagree: {m} phases, {} / {} bends",
                bend_h.len(),
                bend_v.len()
            )));
        }
        if let Some(b) = bend_h.iter().chain(bend_v).find(|b| !(b.abs() <= MAX_BEND_DEG)) {
            return Err(EmError::Domain(format!("bend {b} deg exceeds +-{MAX_BEND_DEG}")));
        }
        let phases: Vec<f64> = phases.iter().map(|&t| quantize_phase(t, codebook)).collect();
        let mut incident_angles = Vec::with_capacity(m);
        let mut amplitudes = Vec::with_capacity(m);
        let mut out_of_model = 0;
        for i in 0..m {
            let pos = frame.element_position(i, m);
            let angle = effective_incident_angle(frame, bend_h[i], bend_v[i], pos, source)?;
            out_of_model += usize::from(angle.out_of_model);
            incident_angles.push(angle.degrees);
            amplitudes.push(fitted_amplitude(phases[i], angle.degrees, fit)?.value);
        }
        Ok(Self {
            codebook,
            phases,
            bend_h: bend_h.to_vec(),
            bend_v: bend_v.to_vec(),
            incident_angles,
            amplitudes,
            out_of_model,
        })
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }
}

/// Diagonal of the reflection matrix, `delta_m * exp(j theta_m)`.
pub fn reflection_matrix(cfg: &RisConfiguration, fit: &FitCoefficients) -> Result<Vec<Complex64>> {
    if cfg.incident_angles.len() != cfg.phases.len() {
        return Err(EmError::Domain("configuration lacks per-element angles".into()));
    }
    cfg.phases
        .iter()
        .zip(&cfg.incident_angles)
        .map(|(&theta, &iota)| {
            let a = fitted_amplitude(theta, iota, fit)?;
            Ok(Complex64::from_polar(a.value, theta))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const J: Complex64 = Complex64::new(0.0, 1.0);

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn transparent_sheet() {
        let (r, t) = rt_from_surface_params(SurfaceParams::new(0.0.into(), 0.0.into())).unwrap();
        assert!(close(r, 0.0.into(), 1e-15));
        assert!(close(t, 1.0.into(), 1e-15));
    }

    #[test]
    fn matched_absorber() {
        let sp = SurfaceParams::new((2.0 / ETA0).into(), (2.0 * ETA0).into());
        let (r, t) = rt_from_surface_params(sp).unwrap();
        assert!(r.norm() < 1e-15 && t.norm() < 1e-15, "{r} {t}");
    }

    #[test]
    fn capacitive_sheet() {
        let sp = SurfaceParams::new(J * (2.0 / ETA0), 0.0.into());
        let (r, t) = rt_from_surface_params(sp).unwrap();
        assert!(close(r, Complex64::new(-0.5, -0.5), 1e-14), "{r}");
        assert!(close(t, Complex64::new(0.5, -0.5), 1e-14), "{t}");
        assert!((r.norm_sqr() + t.norm_sqr() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_sheet() {
        let sp = SurfaceParams::new((-2.0 / ETA0).into(), 0.0.into());
        assert_eq!(rt_from_surface_params(sp), Err(EmError::SingularSurface("2 + eta0*Y_e")));
        let sp = SurfaceParams::new(0.0.into(), (-2.0 * ETA0).into());
        assert!(matches!(rt_from_surface_params(sp), Err(EmError::SingularSurface(_))));
    }

    #[test]
    fn synthesis_normal_incidence() {
        let sp = tm_surface_synthesis(0.0, 0.0, J, 0.0, 1e9).unwrap();
        assert!(close(sp.y_e, -J * (2.0 / ETA0), 1e-15));
        assert!(close(sp.z_m, J * (2.0 * ETA0), 1e-9));
        assert!(sp.is_lossless());
    }

    #[test]
    fn synthesis_specular_singular() {
        assert_eq!(
            tm_surface_synthesis(0.0, 0.0, 1.0.into(), 0.0, 1e9),
            Err(EmError::SingularSurface("Z_m"))
        );
        assert_eq!(
            tm_surface_synthesis(0.0, 0.0, (-1.0).into(), 0.0, 1e9),
            Err(EmError::SingularSurface("Y_e"))
        );
        assert!(matches!(tm_surface_synthesis(90.0, 0.0, J, 0.0, 1e9), Err(EmError::Domain(_))));
    }

    #[test]
    fn amplitude_norm() {
        assert!((reflected_amplitude_norm(0.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((reflected_amplitude_norm(0.0, 60.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((reflected_amplitude_norm(45.0, 45.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(reflected_amplitude_norm(0.0, 90.0).is_err());
    }

    #[test]
    fn short_line() {
        let z = short_line_impedance(1.5e9, 7.0, 0.0).unwrap();
        assert_eq!(z, Complex64::new(0.0, 0.0));
        let z = short_line_impedance(1.5e9, 4.0, 12.5e-3).unwrap();
        assert!(z.re == 0.0 && (z.im - 188.5).abs() < 0.1, "{z}");
        // quarter-wave: 2 pi f sqrt(4) H / c = pi/2 at f = 3 GHz, H = 12.5 mm
        assert!(matches!(short_line_impedance(3.0e9, 4.0, 12.5e-3), Err(EmError::Domain(_))));
    }

    #[test]
    fn lossless_cell_has_unit_gamma() {
        let cp = CircuitParams { r_t: 0.0, ..CircuitParams::default() };
        for c in [0.63e-12, 1.0e-12, 2.67e-12] {
            for iota in [0.0, 30.0, 60.0] {
                let g = unit_cell_gamma(iota, c, &cp).unwrap();
                assert!((g.norm() - 1.0).abs() < 1e-12, "{g}");
            }
        }
    }

    #[test]
    fn resonant_cell() {
        // Independent evaluation at the series resonance of L_T with C_T and C.
        let (l_b, l_t, r_t, c_t, c): (f64, f64, f64, f64, f64) = (15.83e-9, 38.26e-9, 2.2, 15.6e-12, 1.0e-12);
        let c_series = 1.0 / (1.0 / c_t + 1.0 / c);
        let f0 = 1.0 / (2.0 * PI * (l_t * c_series).sqrt());
        assert!((f0 - 0.839e9).abs() < 1e6);
        let cp = CircuitParams { frequency_hz: f0, ..CircuitParams::default() };
        let w = 2.0 * PI * f0;
        // Series branch reduces to R_T at resonance.
        let zl = Complex64::new(0.0, w * l_b);
        let z = zl * r_t / (zl + r_t);
        let expected = (z - ETA0) / (z + ETA0);
        let g = unit_cell_gamma(0.0, c, &cp).unwrap();
        assert!((g - expected).norm() < 1e-9);
        assert!((g.norm() - 0.988).abs() < 0.005, "{}", g.norm());
        assert!((g.arg().abs() - PI).abs() < 0.05, "{}", g.arg());
    }

    #[test]
    fn cell_rejects_out_of_range_capacitance() {
        let cp = CircuitParams::default();
        assert!(unit_cell_gamma(0.0, 3e-12, &cp).is_err());
        assert!(unit_cell_gamma(90.0, 1e-12, &cp).is_err());
    }

    #[test]
    fn angle_table_interpolates() {
        let row = |iota_deg, r_t| AngleComponents {
            iota_deg,
            components: CellComponents { l_b: 1e-9, l_t: 1e-9, r_t, c_t: 1e-12 },
        };
        let cp = CircuitParams { angle_table: vec![row(0.0, 1.0), row(40.0, 3.0)], ..Default::default() };
        cp.validate().unwrap();
        assert_eq!(cp.components_at(20.0).r_t, 2.0);
        assert_eq!(cp.components_at(80.0).r_t, 3.0);
    }

    #[test]
    fn fitted_spot_values() {
        let fit = FitCoefficients::default();
        let d = |t: f64, i| fitted_amplitude(t, i, &fit).unwrap().value;
        assert!((d(0.0, 0.0) - 0.9826).abs() < 1e-4);
        assert!((d(PI / 2.0, 0.0) - 0.9289).abs() < 1e-4);
        assert!((d(PI, 30.0) - 0.7659).abs() < 1e-3);
        assert!(fitted_amplitude(0.0, 45.5, &fit).is_err());
    }

    #[test]
    fn fit_rejects_out_of_range_weights() {
        assert!(FitCoefficients::new([1.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(FitCoefficients::new([0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn clamp_flag() {
        // Built without the grid check to exercise the clamp path.
        let fit = FitCoefficients { p: [1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], unit: AngleUnit::Degrees };
        let a = fitted_amplitude(0.0, 0.0, &fit).unwrap();
        assert_eq!(a, Amplitude { value: 1.0, clamped: true });
    }

    #[test]
    fn quantizer_examples() {
        let cb = PhaseCodebook::new(2).unwrap();
        assert_eq!(quantize_phase(0.0, cb), 0.0);
        assert_eq!(quantize_phase(0.8, cb), PI / 2.0);
        assert_eq!(quantize_phase(2.0 * PI - 0.01, cb), 0.0);
        // exact tie between 0 and pi/2
        assert_eq!(cb.nearest_index(PI / 4.0), 0);
        // wrap-around tie between 3pi/2 and 0
        assert_eq!(cb.nearest_index(7.0 * PI / 4.0), 0);
        assert!(PhaseCodebook::new(0).is_err() && PhaseCodebook::new(4).is_err());
        assert_eq!(PhaseCodebook::new(3).unwrap().levels(), 8);
    }

    fn frame() -> ArrayFrame {
        ArrayFrame::new([0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.1).unwrap()
    }

    #[test]
    fn incident_angle_examples() {
        let f = frame();
        let a = effective_incident_angle(&f, 0.0, 0.0, [0.0; 3], [0.0, 50.0, 0.0]).unwrap();
        assert!(a.degrees.abs() < 1e-12 && !a.out_of_model);
        let a = effective_incident_angle(&f, 30.0, 0.0, [0.0; 3], [0.0, 50.0, 0.0]).unwrap();
        assert!((a.degrees - 30.0).abs() < 1e-9);
        let off = 60f64.to_radians();
        let src = [0.0, 50.0 * off.cos(), 50.0 * off.sin()];
        let a = effective_incident_angle(&f, 0.0, 0.0, [0.0; 3], src).unwrap();
        assert!(a.out_of_model && a.degrees == 45.0 && (a.raw_degrees - 60.0).abs() < 1e-9);
        assert!(matches!(
            effective_incident_angle(&f, 0.0, 0.0, [0.0; 3], [0.0; 3]),
            Err(EmError::DegenerateGeometry { .. })
        ));
    }

    #[test]
    fn vertical_bend_rotates_in_plane() {
        let f = frame();
        // Source 20 degrees towards +x in the horizontal plane; bending the
        // element by 20 degrees about the vertical axis faces it.
        let t = 20f64.to_radians();
        let src = [-10.0 * t.sin(), 10.0 * t.cos(), 0.0];
        let n = f.bent_normal(0.0, 20.0);
        let a = effective_incident_angle(&f, 0.0, 20.0, [0.0; 3], src).unwrap();
        let b = effective_incident_angle(&f, 0.0, -20.0, [0.0; 3], src).unwrap();
        assert!(a.degrees.min(b.degrees) < 1e-9, "{n:?} {a:?} {b:?}");
    }

    #[test]
    fn reflection_matrix_examples() {
        let f = frame();
        let fit = FitCoefficients::default();
        let cb = PhaseCodebook::default();
        let m = 4;
        let src = [0.0, 1e6, 0.0];
        let cfg = RisConfiguration::build(&f, cb, &vec![0.0; m], &vec![0.0; m], &vec![0.0; m], src, &fit).unwrap();
        let theta = reflection_matrix(&cfg, &fit).unwrap();
        for t in &theta {
            assert!((t - Complex64::new(0.9826, 0.0)).norm() < 1e-4);
        }
        let cfg = RisConfiguration::build(&frame(), cb, &[PI / 2.0], &[0.0], &[0.0], src, &fit).unwrap();
        let theta = reflection_matrix(&cfg, &fit).unwrap();
        assert!((theta[0] - Complex64::new(0.0, 0.9289)).norm() < 1e-4);
        assert_eq!(cfg.amplitudes[0], theta[0].norm());
    }

    #[test]
    fn bends_beyond_ninety_rejected() {
        let fit = FitCoefficients::default();
        let r = RisConfiguration::build(&frame(), PhaseCodebook::default(), &[0.0], &[91.0], &[0.0], [0.0, 5.0, 0.0], &fit);
        assert!(matches!(r, Err(EmError::Domain(_))));
    }

    #[test]
    fn fit_table_csv() {
        let rows = fit_table(&FitCoefficients::default(), 90.0, 15.0).unwrap();
        assert_eq!(rows.len(), 4 * 4);
        let mut buf = Vec::new();
        write_fit_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta_deg,iota_deg,delta,phase_deg\n0,0,0.9826"));
    }
}
