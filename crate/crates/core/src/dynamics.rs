//! Liouvillian construction and the photon-number decomposition propagators.
//!
//! Between instantaneous pulses the generator is time-independent, so every
//! propagator is a single matrix exponential of the 16×16 generator: the full
//! propagator `𝒦(t) = exp(𝓛t)`, the no-click propagator
//! `𝒦⁰_p(t) = exp((𝓛−𝒥_p)t)`, and the bright propagator
//! `𝓑_p(t) = 𝒦(t) − 𝒦⁰_p(t)`, whose trace gives the probability of at
//! least one detected photon of polarization p in the window.

use crate::error::{Error, Result};
use crate::linalg::{dagger, CMat, Superoperator};
use crate::model::{
    collapse_operators, pulse_superoperator, spin_hamiltonian, Polarization,
    PolarizationVector, PulseOptions, QDParams,
};

/// Lindblad generator `𝓛ρ = −i[H, ρ] + Σ_j (A_jρA_j† − ½{A_j†A_j, ρ})`.
pub fn liouvillian(h: &CMat, collapse: &[CMat]) -> Result<Superoperator> {
    let dev = crate::linalg::hermiticity_deviation(h);
    if dev > 1e-9 {
        return Err(Error::NonHermitian { max_dev: dev });
    }
    let dim = h.nrows();
    let i = crate::linalg::I;
    let mut l = Superoperator::left_mul(h)
        .sub(&Superoperator::right_mul(h))
        .scale_complex(-i);
    for a in collapse {
        let ada = dagger(a).dot(a);
        l = l
            .add(&Superoperator::conjugation(a))
            .sub(&Superoperator::left_mul(&ada).scale(0.5))
            .sub(&Superoperator::right_mul(&ada).scale(0.5));
    }
    debug_assert_eq!(l.dim(), dim);
    Ok(l)
}

/// Polarization-resolved jump superoperator `𝒥_p ρ = ηγ σ_p ρ σ_p†`.
pub fn jump_superoperator(
    pol: &PolarizationVector,
    eta: f64,
    gamma: f64,
) -> Result<Superoperator> {
    pol.validate()?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParams {
            field: "eta".into(),
            reason: format!("must be in [0, 1], got {eta}"),
        });
    }
    let s = pol.lowering();
    Ok(Superoperator::conjugation(&s).scale(eta * gamma))
}

/// `exp(𝓛 t)` for `t ≥ 0`.
pub fn propagate(l: &Superoperator, t_ps: f64) -> Result<Superoperator> {
    if t_ps < 0.0 {
        return Err(Error::NegativeTime(t_ps));
    }
    l.exp_scaled(t_ps)
}

/// Bright propagator `𝓑_p(t) = exp(𝓛t) − exp((𝓛−𝒥_p)t)`.
pub fn bright_propagator(
    l: &Superoperator,
    jump: &Superoperator,
    t_ps: f64,
) -> Result<Superoperator> {
    if t_ps < 0.0 {
        return Err(Error::NegativeTime(t_ps));
    }
    let full = l.exp_scaled(t_ps)?;
    let no_click = l.sub(jump).exp_scaled(t_ps)?;
    Ok(full.sub(&no_click))
}

/// Propagator bundle for one Overhauser configuration.
///
/// Immutable after construction; shareable across threads.
#[derive(Debug, Clone)]
pub struct Propagators {
    liouvillian: Superoperator,
    pulse: Superoperator,
    jumps: [Superoperator; 6],
    gamma: f64,
}

impl Propagators {
    pub fn new(
        params: &QDParams,
        b_overhauser_mt: [f64; 3],
        pulse: PulseOptions,
    ) -> Result<Self> {
        params.validate()?;
        let h = spin_hamiltonian(params, b_overhauser_mt);
        let l = liouvillian(&h, &collapse_operators(params))?;
        let p = pulse_superoperator(params.theta_rad, pulse.normalized);
        let gamma = params.gamma();
        let jumps = Polarization::ALL
            .map(|pol| jump_superoperator(&pol.vector(), params.eta, gamma).unwrap());
        Ok(Self { liouvillian: l, pulse: p, jumps, gamma })
    }

    pub fn liouvillian(&self) -> &Superoperator {
        &self.liouvillian
    }

    pub fn pulse(&self) -> &Superoperator {
        &self.pulse
    }

    pub fn jump(&self, pol: Polarization) -> &Superoperator {
        &self.jumps[Polarization::ALL.iter().position(|&p| p == pol).unwrap()]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Full propagator `𝒦(t)`.
    pub fn full(&self, t_ps: f64) -> Result<Superoperator> {
        propagate(&self.liouvillian, t_ps)
    }

    /// No-click propagator `𝒦⁰_p(t)`.
    pub fn no_click(&self, pol: Polarization, t_ps: f64) -> Result<Superoperator> {
        if t_ps < 0.0 {
            return Err(Error::NegativeTime(t_ps));
        }
        self.liouvillian.sub(self.jump(pol)).exp_scaled(t_ps)
    }

    /// Bright propagator `𝓑_p(t)`.
    pub fn bright(&self, pol: Polarization, t_ps: f64) -> Result<Superoperator> {
        bright_propagator(&self.liouvillian, self.jump(pol), t_ps)
    }
}

impl Superoperator {
    fn scale_complex(&self, factor: num_complex::Complex64) -> Superoperator {
        Superoperator::new(self.matrix().mapv(|z| z * factor)).unwrap()
    }
}
