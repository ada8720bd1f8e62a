//! Physical model of the charged quantum dot: spin and Overhauser
//! Hamiltonians, radiative collapse operators, polarization ladder operators,
//! and the instantaneous linearly-polarized pulse.
//!
//! Basis order is fixed as {|↑⟩, |↓⟩, |T⇑⟩, |T⇓⟩}: two electron ground spin
//! states followed by the two trion states. Time is in ps, magnetic fields in
//! mT (converted to T internally), energies as angular frequencies in rad/ps.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dagger, expm, CMat, Superoperator, I, ONE, ZERO};

/// Basis indices.
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const TRION_UP: usize = 2;
pub const TRION_DOWN: usize = 3;

/// Bohr magneton over ħ, rad·ps⁻¹·T⁻¹.
pub const MU_B_OVER_HBAR: f64 = 8.794e-2;

/// Physical parameters of the spin-photon interface.
///
/// Serde defaults are the fitted values, so partial config blocks override
/// individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QDParams {
    /// Electron g-factor.
    #[serde(default = "defaults::g_e")]
    pub g_e: f64,
    /// Hole g-factor.
    #[serde(default = "defaults::g_h")]
    pub g_h: f64,
    /// Applied transverse field, mT.
    #[serde(default = "defaults::b_mt")]
    pub b_mt: f64,
    /// Overhauser standard deviation per Cartesian axis, mT.
    #[serde(default = "defaults::sigma_o_mt")]
    pub sigma_o_mt: f64,
    /// Trion lifetime, ps.
    #[serde(default = "defaults::t1_ps")]
    pub t1_ps: f64,
    /// Pulse linear-polarization angle, rad.
    #[serde(default = "defaults::theta_rad")]
    pub theta_rad: f64,
    /// Global detection efficiency in (0, 1].
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    /// Delay between pulses 1 and 2, ps.
    #[serde(default = "defaults::t12_ps")]
    pub t12_ps: f64,
    /// Delay between pulses 2 and 3, ps.
    #[serde(default = "defaults::t23_ps")]
    pub t23_ps: f64,
    /// Laser repetition rate, MHz.
    #[serde(default = "defaults::f_mhz")]
    pub f_mhz: f64,
}

mod defaults {
    pub fn g_e() -> f64 {
        0.60
    }
    pub fn g_h() -> f64 {
        0.3
    }
    pub fn b_mt() -> f64 {
        40.0
    }
    pub fn sigma_o_mt() -> f64 {
        10.5
    }
    pub fn t1_ps() -> f64 {
        200.0
    }
    pub fn theta_rad() -> f64 {
        0.4
    }
    pub fn eta() -> f64 {
        1.0
    }
    pub fn t12_ps() -> f64 {
        810.0
    }
    pub fn t23_ps() -> f64 {
        810.0
    }
    pub fn f_mhz() -> f64 {
        81.0
    }
}

impl QDParams {
    /// The parameter set the three-photon correlation data is reproduced with.
    pub fn fitted() -> Self {
        Self {
            g_e: 0.60,
            g_h: 0.3,
            b_mt: 40.0,
            sigma_o_mt: 10.5,
            t1_ps: 200.0,
            theta_rad: 0.4,
            eta: 1.0,
            t12_ps: 810.0,
            t23_ps: 810.0,
            f_mhz: 81.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParams { field: field.into(), reason })
            }
        };
        check(self.t1_ps > 0.0, "t1_ps", format!("must be > 0, got {}", self.t1_ps))?;
        check(self.b_mt >= 0.0, "b_mt", format!("must be >= 0, got {}", self.b_mt))?;
        check(
            self.sigma_o_mt >= 0.0,
            "sigma_o_mt",
            format!("must be >= 0, got {}", self.sigma_o_mt),
        )?;
        check(
            self.eta > 0.0 && self.eta <= 1.0,
            "eta",
            format!("must be in (0, 1], got {}", self.eta),
        )?;
        check(self.t12_ps > 0.0, "t12_ps", format!("must be > 0, got {}", self.t12_ps))?;
        check(self.t23_ps > 0.0, "t23_ps", format!("must be > 0, got {}", self.t23_ps))?;
        check(self.f_mhz > 0.0, "f_mhz", format!("must be > 0, got {}", self.f_mhz))?;
        Ok(())
    }

    /// Purcell-enhanced decay rate γ = 1/T₁, ps⁻¹.
    pub fn gamma(&self) -> f64 {
        1.0 / self.t1_ps
    }

    /// Electron Zeeman splitting Δ_e = g_e μ_B B / ħ, rad/ps.
    pub fn delta_e(&self) -> f64 {
        self.g_e * MU_B_OVER_HBAR * self.b_mt * 1e-3
    }

    /// Hole Zeeman splitting Δ_h = g_h μ_B B / ħ, rad/ps.
    pub fn delta_h(&self) -> f64 {
        self.g_h * MU_B_OVER_HBAR * self.b_mt * 1e-3
    }

    /// Electron Larmor period 2π/Δ_e, ps.
    pub fn larmor_period_ps(&self) -> f64 {
        std::f64::consts::TAU / self.delta_e()
    }

    /// Emission-window length treated as t → ∞: max(6 ns, 30·T₁).
    pub fn final_window_ps(&self) -> f64 {
        (30.0 * self.t1_ps).max(6000.0)
    }

    /// Laser repetition period, ps.
    pub fn rep_period_ps(&self) -> f64 {
        1e6 / self.f_mhz
    }
}

fn basis_op(row: usize, col: usize) -> CMat {
    let mut m = Array2::from_elem((4, 4), ZERO);
    m[[row, col]] = ONE;
    m
}

/// Electron Pauli operators on the ground manifold, embedded in 4×4.
pub fn sigma_e(axis: usize) -> CMat {
    let mut m = Array2::from_elem((4, 4), ZERO);
    match axis {
        0 => {
            m[[UP, DOWN]] = ONE;
            m[[DOWN, UP]] = ONE;
        }
        1 => {
            m[[DOWN, UP]] = I;
            m[[UP, DOWN]] = -I;
        }
        2 => {
            m[[UP, UP]] = ONE;
            m[[DOWN, DOWN]] = -ONE;
        }
        _ => panic!("axis must be 0..3"),
    }
    m
}

/// Hole pseudo-spin σ_y on the trion manifold, embedded in 4×4.
fn sigma_y_h() -> CMat {
    let mut m = Array2::from_elem((4, 4), ZERO);
    m[[TRION_DOWN, TRION_UP]] = I;
    m[[TRION_UP, TRION_DOWN]] = -I;
    m
}

/// R-polarized lowering operator |↑⟩⟨T⇑|.
pub fn sigma_r() -> CMat {
    basis_op(UP, TRION_UP)
}

/// L-polarized lowering operator |↓⟩⟨T⇓|.
pub fn sigma_l() -> CMat {
    basis_op(DOWN, TRION_DOWN)
}

/// Spin Hamiltonian with a static Overhauser field, rad/ps.
///
/// `H = (Δ_e/2)σ_y^(e) + (Δ_h/2)σ_y^(h) + (g_e μ_B/2ħ) B_O·σ⃗^(e)`; the
/// Overhauser term acts on the electron ground manifold only.
pub fn spin_hamiltonian(p: &QDParams, b_overhauser_mt: [f64; 3]) -> CMat {
    let mut h = sigma_e(1).mapv(|z| z * (p.delta_e() / 2.0));
    h = h + sigma_y_h().mapv(|z| z * (p.delta_h() / 2.0));
    for (axis, &b) in b_overhauser_mt.iter().enumerate() {
        let w = 0.5 * p.g_e * MU_B_OVER_HBAR * b * 1e-3;
        h = h + sigma_e(axis).mapv(|z| z * w);
    }
    h
}

/// Radiative collapse operators `A_R = √γ|↑⟩⟨T⇑|`, `A_L = √γ|↓⟩⟨T⇓|`.
pub fn collapse_operators(p: &QDParams) -> Vec<CMat> {
    let root_gamma = p.gamma().sqrt();
    vec![
        sigma_r().mapv(|z| z * root_gamma),
        sigma_l().mapv(|z| z * root_gamma),
    ]
}

/// Polarization labels used by the detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    R,
    L,
    H,
    V,
    D,
    A,
}

impl Polarization {
    pub const ALL: [Polarization; 6] = [
        Polarization::R,
        Polarization::L,
        Polarization::H,
        Polarization::V,
        Polarization::D,
        Polarization::A,
    ];

    /// The orthogonal partner within the same basis.
    pub fn orthogonal(self) -> Self {
        match self {
            Polarization::R => Polarization::L,
            Polarization::L => Polarization::R,
            Polarization::H => Polarization::V,
            Polarization::V => Polarization::H,
            Polarization::D => Polarization::A,
            Polarization::A => Polarization::D,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Polarization::R => "R",
            Polarization::L => "L",
            Polarization::H => "H",
            Polarization::V => "V",
            Polarization::D => "D",
            Polarization::A => "A",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "R" => Some(Polarization::R),
            "L" => Some(Polarization::L),
            "H" => Some(Polarization::H),
            "V" => Some(Polarization::V),
            "D" => Some(Polarization::D),
            "A" => Some(Polarization::A),
            _ => None,
        }
    }

    pub fn vector(self) -> PolarizationVector {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
        match self {
            Polarization::H => PolarizationVector::new(0.0, 0.0),
            Polarization::V => PolarizationVector::new(FRAC_PI_2, 0.0),
            Polarization::D => PolarizationVector::new(FRAC_PI_4, 0.0),
            Polarization::A => PolarizationVector::new(FRAC_PI_4, PI),
            Polarization::R => PolarizationVector::new(FRAC_PI_4, -FRAC_PI_2),
            Polarization::L => PolarizationVector::new(FRAC_PI_4, FRAC_PI_2),
        }
    }

    /// Lowering operator for this label.
    pub fn lowering(self) -> CMat {
        self.vector().lowering()
    }

    /// Detected Jones ket on the {|R⟩, |L⟩} basis.
    pub fn jones_ket(self) -> [C64; 2] {
        self.vector().jones_ket()
    }
}

/// Polarization on the Poincaré parametrization `cosθ_p H + e^{iφ_p} sinθ_p V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationVector {
    pub theta_p: f64,
    pub phi_p: f64,
}

impl PolarizationVector {
    pub fn new(theta_p: f64, phi_p: f64) -> Self {
        Self { theta_p, phi_p }
    }

    /// Coefficients (c_H, c_V) of the lowering operator.
    fn coeffs(&self) -> (C64, C64) {
        let ch = C64::new(self.theta_p.cos(), 0.0);
        let cv = C64::from_polar(self.theta_p.sin(), self.phi_p);
        (ch, cv)
    }

    /// σ_p = cosθ_p σ_H + e^{iφ_p} sinθ_p σ_V, with σ_H = (σ_L+σ_R)/√2 and
    /// σ_V = −i(σ_L−σ_R)/√2.
    pub fn lowering(&self) -> CMat {
        let rt2 = std::f64::consts::SQRT_2;
        let sh = (sigma_l() + sigma_r()).mapv(|z| z / rt2);
        let sv = (sigma_l() - sigma_r()).mapv(|z| -I * z / rt2);
        let (ch, cv) = self.coeffs();
        sh.mapv(|z| z * ch) + sv.mapv(|z| z * cv)
    }

    /// Detected Jones ket on {|R⟩, |L⟩}.
    ///
    /// A jump operator with coefficient pattern c on (R, L) heralds the photon
    /// ket with the conjugated pattern, so the detection kets carry `e^{−iφ_p}`
    /// where the lowering operators carry `e^{+iφ_p}`.
    pub fn jones_ket(&self) -> [C64; 2] {
        let rt2 = std::f64::consts::SQRT_2;
        // |H> = (|R>+|L>)/√2, |V> = −i(|R>−|L>)/√2 (conjugate of the σ_V pattern)
        let h = [C64::new(1.0 / rt2, 0.0), C64::new(1.0 / rt2, 0.0)];
        let v = [-I * C64::new(1.0 / rt2, 0.0), I * C64::new(1.0 / rt2, 0.0)];
        let (ch, cv) = self.coeffs();
        let (ch, cv) = (ch.conj(), cv.conj());
        [ch * h[0] + cv * v[0], ch * h[1] + cv * v[1]]
    }

    /// Verify the Jones vector is normalized.
    pub fn validate(&self) -> Result<()> {
        let (ch, cv) = self.coeffs();
        let norm = (ch.norm_sqr() + cv.norm_sqr()).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NonUnitPolarization(norm));
        }
        Ok(())
    }
}

/// Polarization-resolved lowering operator for a unit Jones vector.
pub fn polarization_lowering(pol: &PolarizationVector) -> Result<CMat> {
    pol.validate()?;
    Ok(pol.lowering())
}

/// Options for the instantaneous pulse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseOptions {
    /// With `false` the exponent prefactor is exactly π/2 as written, which
    /// rotates each circular transition by π/√2 (population transfer ≈ 0.803).
    /// With `true` the prefactor is scaled by √2 so each transition undergoes
    /// a full π rotation.
    #[serde(default)]
    pub normalized: bool,
}

/// Unitary of the instantaneous linearly-polarized pulse,
/// `R_θ = exp[−i(π/2)s(cosθ σ_{y,H} + sinθ σ_{y,V})]` with
/// `σ_{y,j} = −i(σ_j − σ_j†)` and `s ∈ {1, √2}`.
pub fn pulse_unitary(theta: f64, normalized: bool) -> CMat {
    let rt2 = std::f64::consts::SQRT_2;
    let sh = (sigma_l() + sigma_r()).mapv(|z| z / rt2);
    let sv = (sigma_l() - sigma_r()).mapv(|z| -I * z / rt2);
    let syh = (&sh - &dagger(&sh)).mapv(|z| -I * z);
    let syv = (&sv - &dagger(&sv)).mapv(|z| -I * z);
    let gen = syh.mapv(|z| z * theta.cos()) + syv.mapv(|z| z * theta.sin());
    let scale = if normalized { rt2 } else { 1.0 };
    let exponent = gen.mapv(|z| -I * z * (std::f64::consts::FRAC_PI_2 * scale));
    expm(&exponent).expect("pulse generator is square")
}

/// Pulse superoperator `𝒫_θ ρ = R_θ ρ R_θ†`.
pub fn pulse_superoperator(theta: f64, normalized: bool) -> Superoperator {
    Superoperator::conjugation(&pulse_unitary(theta, normalized))
}
