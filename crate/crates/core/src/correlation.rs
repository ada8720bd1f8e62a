//! The three-pulse protocol: polarization-resolved coincidence probabilities,
//! conditional ratios, photon-#2 Stokes trajectories, and parity curves
//! versus the t₂₃ delay.
//!
//! The conditional state is
//! `ρ_p(t) = lim_{t→∞} 𝓑_{p₃}(t,t₃)𝒫_θ 𝓑_{p₂}(t₃,t₂)𝒫_θ 𝓑_{p₁}(t₂,t₁)𝒫_θ ρ(t₁)`
//! with the mixed ground state at t₁. Unnormalized probabilities are averaged
//! over Overhauser samples before any ratio is formed (average of numerators
//! over average of denominators); ratio uncertainties use the delta method
//! with the sample covariance.

use ndarray::Array1;
use num_complex::Complex64 as C64;

use crate::dynamics::Propagators;
use crate::error::{Error, Result};
use crate::linalg::{trace_vec, vec_op, CVec, DensityMatrix};
use crate::model::{Polarization, PulseOptions, QDParams};
use crate::overhauser::{monte_carlo_vectors, sample_field, MonteCarloConfig, OverhauserSample};

/// Pulse times derived from the inter-pulse delays; t₁ = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSequence {
    pub t1_ps: f64,
    pub t2_ps: f64,
    pub t3_ps: f64,
    pub theta_rad: f64,
    pub rep_period_ps: f64,
}

impl PulseSequence {
    pub fn from_params(p: &QDParams) -> Result<Self> {
        let seq = Self {
            t1_ps: 0.0,
            t2_ps: p.t12_ps,
            t3_ps: p.t12_ps + p.t23_ps,
            theta_rad: p.theta_rad,
            rep_period_ps: p.rep_period_ps(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1_ps < self.t2_ps && self.t2_ps < self.t3_ps) {
            return Err(Error::InvalidSequence(format!(
                "pulse times must be strictly increasing: {} {} {}",
                self.t1_ps, self.t2_ps, self.t3_ps
            )));
        }
        Ok(())
    }
}

/// Monte-Carlo experiment configuration shared by the correlation ops.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: QDParams,
    pub mc: MonteCarloConfig,
    pub pulse: PulseOptions,
}

impl ExperimentConfig {
    pub fn new(params: QDParams, mc: MonteCarloConfig) -> Self {
        Self { params, mc, pulse: PulseOptions::default() }
    }
}

/// Per-sample engine: caches the heralding window and readout rows so that
/// only the t₂₃-dependent pieces are recomputed along a grid.
pub struct ThreePulseEngine {
    props: Propagators,
    /// `𝒫 𝓑_{p₁}(t₁₂) 𝒫 vec(ρ₀)` — state entering window 2, pulse applied.
    window2_input: CVec,
    /// Readout rows `w` with `P = w·x` for `x` the window-2 output,
    /// `w = (𝓑_{p₃}(T_f) 𝒫)ᵀ vec(I)`, one per p₃ ∈ {R, L}.
    readout_rows: [CVec; 2],
}

impl ThreePulseEngine {
    pub fn new(
        params: &QDParams,
        sample: &OverhauserSample,
        pulse: PulseOptions,
        p1: Polarization,
    ) -> Result<Self> {
        PulseSequence::from_params(params)?;
        let props = Propagators::new(params, sample.b_o_mt, pulse)?;
        let u0 = vec_op(DensityMatrix::mixed_ground().matrix());
        let after_pulse1 = props.pulse().apply_vec(&u0);
        let v1 = props
            .bright(p1, params.t12_ps)?
            .apply_vec(&after_pulse1);
        let window2_input = props.pulse().apply_vec(&v1);

        let tf = params.final_window_ps();
        let full_tf = props.full(tf)?;
        let trace_row = vec_op(&crate::linalg::eye(4));
        let mut readout_rows = [Array1::from_elem(16, C64::new(0.0, 0.0)), Array1::from_elem(16, C64::new(0.0, 0.0))];
        for (slot, p3) in [Polarization::R, Polarization::L].iter().enumerate() {
            let bright = full_tf.sub(&props.no_click(*p3, tf)?);
            let m = bright.compose(props.pulse());
            readout_rows[slot] = m.matrix().t().dot(&trace_row);
        }
        Ok(Self { props, window2_input, readout_rows })
    }

    pub fn propagators(&self) -> &Propagators {
        &self.props
    }

    fn readout_row(&self, p3: Polarization) -> Result<&CVec> {
        match p3 {
            Polarization::R => Ok(&self.readout_rows[0]),
            Polarization::L => Ok(&self.readout_rows[1]),
            other => Err(Error::InvalidSequence(format!(
                "photon #3 is read out in the circular basis, got {other:?}"
            ))),
        }
    }

    /// Unnormalized coincidence probability at a single delay.
    pub fn probability(
        &self,
        p2: Polarization,
        p3: Polarization,
        t23_ps: f64,
    ) -> Result<f64> {
        let b2 = self.props.bright(p2, t23_ps)?;
        let x = b2.apply_vec(&self.window2_input);
        Ok(self.readout_row(p3)?.dot(&x).re)
    }

    /// Unnormalized probabilities over a uniform t₂₃ grid for all listed
    /// (p₂, p₃) combinations, by semigroup stepping.
    ///
    /// Output layout: `out[t * (p2s.len() * p3s.len()) + i2 * p3s.len() + i3]`.
    pub fn probabilities_grid(
        &self,
        grid: &Grid,
        p2s: &[Polarization],
        p3s: &[Polarization],
    ) -> Result<Vec<f64>> {
        let l = self.props.liouvillian();
        let step_full = l.exp_scaled(grid.step_ps)?;
        let mut step_noclick = Vec::with_capacity(p2s.len());
        for &p2 in p2s {
            step_noclick.push(l.sub(self.props.jump(p2)).exp_scaled(grid.step_ps)?);
        }
        let t0 = grid.start_ps;
        let mut k_full = if t0 == 0.0 {
            self.window2_input.clone()
        } else {
            self.props.full(t0)?.apply_vec(&self.window2_input)
        };
        let mut k_noclick: Vec<CVec> = p2s
            .iter()
            .map(|&p2| -> Result<CVec> {
                if t0 == 0.0 {
                    Ok(self.window2_input.clone())
                } else {
                    Ok(self.props.no_click(p2, t0)?.apply_vec(&self.window2_input))
                }
            })
            .collect::<Result<_>>()?;

        let mut out = Vec::with_capacity(grid.len * p2s.len() * p3s.len());
        for t_index in 0..grid.len {
            if t_index > 0 {
                k_full = step_full.apply_vec(&k_full);
                for (k0, step) in k_noclick.iter_mut().zip(&step_noclick) {
                    *k0 = step.apply_vec(k0);
                }
            }
            for k0 in &k_noclick {
                let bright_vec = &k_full - k0;
                for &p3 in p3s {
                    out.push(self.readout_row(p3)?.dot(&bright_vec).re);
                }
            }
        }
        Ok(out)
    }
}

/// Uniform t₂₃ grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start_ps: f64,
    pub step_ps: f64,
    pub len: usize,
}

impl Grid {
    /// Default span: 0 to 6.5 ns in 50 ps steps (two precession periods).
    pub fn default_t23() -> Self {
        Self { start_ps: 0.0, step_ps: 50.0, len: 131 }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len)
            .map(|i| self.start_ps + i as f64 * self.step_ps)
            .collect()
    }
}

/// Full three-pulse conditional state and its probability for one sample.
pub fn three_pulse_conditional(
    params: &QDParams,
    sample: &OverhauserSample,
    pulse: PulseOptions,
    p1: Polarization,
    p2: Polarization,
    p3: Polarization,
) -> Result<(DensityMatrix, f64)> {
    PulseSequence::from_params(params)?;
    let props = Propagators::new(params, sample.b_o_mt, pulse)?;
    let u0 = vec_op(DensityMatrix::mixed_ground().matrix());
    let mut v = props.pulse().apply_vec(&u0);
    v = props.bright(p1, params.t12_ps)?.apply_vec(&v);
    v = props.pulse().apply_vec(&v);
    v = props.bright(p2, params.t23_ps)?.apply_vec(&v);
    v = props.pulse().apply_vec(&v);
    v = props.bright(p3, params.final_window_ps())?.apply_vec(&v);
    let prob = trace_vec(&v).re;
    let rho = crate::linalg::unvec_op(&v);
    Ok((DensityMatrix::from_matrix_unchecked(rho), prob))
}

/// One MC-averaged coincidence probability.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceEntry {
    pub p1: Polarization,
    pub p2: Polarization,
    pub p3: Polarization,
    pub probability: f64,
    pub stderr: f64,
}

/// MC-averaged unnormalized coincidence probabilities per polarization triple.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceTable {
    pub entries: Vec<CoincidenceEntry>,
}

impl CoincidenceTable {
    pub fn get(&self, p1: Polarization, p2: Polarization, p3: Polarization) -> Option<&CoincidenceEntry> {
        self.entries
            .iter()
            .find(|e| e.p1 == p1 && e.p2 == p2 && e.p3 == p3)
    }
}

/// Averaged coincidence table at the configured (t₁₂, t₂₃).
pub fn coincidence_table(
    cfg: &ExperimentConfig,
    triples: &[(Polarization, Polarization, Polarization)],
) -> Result<CoincidenceTable> {
    let params = cfg.params.clone();
    let pulse = cfg.pulse;
    let triples_owned = triples.to_vec();
    let rows = monte_carlo_vectors(&cfg.mc, params.sigma_o_mt, |sample| {
        let mut by_p1: Vec<(Polarization, ThreePulseEngine)> = Vec::new();
        let mut out = Vec::with_capacity(triples_owned.len());
        for &(p1, p2, p3) in &triples_owned {
            if !by_p1.iter().any(|(q, _)| *q == p1) {
                by_p1.push((p1, ThreePulseEngine::new(&params, sample, pulse, p1)?));
            }
            let engine = &by_p1.iter().find(|(q, _)| *q == p1).unwrap().1;
            out.push(engine.probability(p2, p3, params.t23_ps)?);
        }
        Ok(out)
    })?;
    let (mean, stderr) = crate::overhauser::reduce_mean_stderr(&rows);
    let entries = triples
        .iter()
        .zip(mean.iter().zip(&stderr))
        .map(|(&(p1, p2, p3), (&probability, &stderr))| CoincidenceEntry {
            p1,
            p2,
            p3,
            probability,
            stderr,
        })
        .collect();
    Ok(CoincidenceTable { entries })
}

/// A conditional probability with uncertainty; `value` is `None` when the
/// denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalRatio {
    pub value: Option<f64>,
    pub stderr: f64,
}

fn conditional_ratio(num: &CoincidenceEntry, alt: &CoincidenceEntry) -> ConditionalRatio {
    let n = num.probability;
    let m = alt.probability;
    let d = n + m;
    if d <= 0.0 {
        return ConditionalRatio { value: None, stderr: 0.0 };
    }
    let dn = m / (d * d);
    let dm = -n / (d * d);
    let var = (dn * num.stderr).powi(2) + (dm * alt.stderr).powi(2);
    ConditionalRatio { value: Some(n / d), stderr: var.sqrt() }
}

/// The four named conditional polarization probabilities of the protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalProbabilities {
    pub r2_given_r3: ConditionalRatio,
    pub r2_given_l3: ConditionalRatio,
    pub h2_given_r3: ConditionalRatio,
    pub h2_given_l3: ConditionalRatio,
}

/// Ratios P(R₂|R₃), P(R₂|L₃), P(H₂|R₃), P(H₂|L₃) from an averaged table.
pub fn conditional_probabilities(table: &CoincidenceTable) -> Result<ConditionalProbabilities> {
    use Polarization::*;
    let need = |p2: Polarization, p3: Polarization| -> Result<&CoincidenceEntry> {
        table.get(R, p2, p3).ok_or_else(|| {
            Error::InvalidSequence(format!("table is missing triple (R, {p2:?}, {p3:?})"))
        })
    };
    Ok(ConditionalProbabilities {
        r2_given_r3: conditional_ratio(need(R, R)?, need(L, R)?),
        r2_given_l3: conditional_ratio(need(R, L)?, need(L, L)?),
        h2_given_r3: conditional_ratio(need(H, R)?, need(V, R)?),
        h2_given_l3: conditional_ratio(need(H, L)?, need(V, L)?),
    })
}

/// One sampled curve point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t23_ps: f64,
    pub value: Option<f64>,
    pub stderr: f64,
}

/// A named curve over the t₂₃ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub points: Vec<CurvePoint>,
}

fn pair_stats(rows: &[Vec<f64>], i: usize, j: usize) -> (f64, f64, f64, f64, f64) {
    let n = rows.len() as f64;
    let mut mx = 0.0;
    let mut my = 0.0;
    for r in rows {
        mx += r[i];
        my += r[j];
    }
    mx /= n;
    my /= n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    if rows.len() > 1 {
        for r in rows {
            vx += (r[i] - mx) * (r[i] - mx);
            vy += (r[j] - my) * (r[j] - my);
            cxy += (r[i] - mx) * (r[j] - my);
        }
        let f = 1.0 / ((n - 1.0) * n); // variance of the mean
        vx *= f;
        vy *= f;
        cxy *= f;
    }
    (mx, my, vx, vy, cxy)
}

fn conditional_point(rows: &[Vec<f64>], i: usize, j: usize) -> (Option<f64>, f64) {
    let (mx, my, vx, vy, cxy) = pair_stats(rows, i, j);
    let d = mx + my;
    if d <= 0.0 {
        return (None, 0.0);
    }
    let dn = my / (d * d);
    let dm = -mx / (d * d);
    let var = dn * dn * vx + dm * dm * vy + 2.0 * dn * dm * cxy;
    (Some(mx / d), var.max(0.0).sqrt())
}

fn stokes_point(rows: &[Vec<f64>], i: usize, j: usize) -> (Option<f64>, f64) {
    let (mx, my, vx, vy, cxy) = pair_stats(rows, i, j);
    let d = mx + my;
    if d <= 0.0 {
        return (None, 0.0);
    }
    let dn = 2.0 * my / (d * d);
    let dm = -2.0 * mx / (d * d);
    let var = dn * dn * vx + dm * dm * vy + 2.0 * dn * dm * cxy;
    (Some((mx - my) / d), var.max(0.0).sqrt())
}

fn grid_rows(
    cfg: &ExperimentConfig,
    grid: &Grid,
    p2s: &[Polarization],
    p3s: &[Polarization],
) -> Result<Vec<Vec<f64>>> {
    let params = cfg.params.clone();
    let pulse = cfg.pulse;
    let p2s = p2s.to_vec();
    let p3s = p3s.to_vec();
    monte_carlo_vectors(&cfg.mc, params.sigma_o_mt, move |sample| {
        let engine = ThreePulseEngine::new(&params, sample, pulse, Polarization::R)?;
        engine.probabilities_grid(grid, &p2s, &p3s)
    })
}

/// Stokes components of photon #2 conditioned on p₁ = R and p₃ ∈ {R, L}.
///
/// Conventions: s_x = (H−V)/(H+V), s_y = (D−A)/(D+A), s_z = (R−L)/(R+L).
pub fn photon2_bloch_vector(cfg: &ExperimentConfig, grid: &Grid) -> Result<Vec<Curve>> {
    use Polarization::*;
    let p2s = [H, V, D, A, R, L];
    let p3s = [R, L];
    let rows = grid_rows(cfg, grid, &p2s, &p3s)?;
    let times = grid.times();
    let col = |i2: usize, i3: usize, t: usize| t * (p2s.len() * p3s.len()) + i2 * p3s.len() + i3;
    let mut curves = Vec::new();
    for (i3, p3name) in ["r3", "l3"].iter().enumerate() {
        for (comp, (ia, ib)) in [("s_x", (0usize, 1usize)), ("s_y", (2, 3)), ("s_z", (4, 5))] {
            let points = times
                .iter()
                .enumerate()
                .map(|(t, &t23)| {
                    let (value, stderr) = stokes_point(&rows, col(ia, i3, t), col(ib, i3, t));
                    CurvePoint { t23_ps: t23, value, stderr }
                })
                .collect();
            curves.push(Curve { name: format!("{comp}_{p3name}"), points });
        }
    }
    Ok(curves)
}

/// Measurement basis for the photon-#2 parity curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParityBasis {
    Circular,
    Linear,
}

/// Conditional parity curves P(p₂|R₃) and P(p₂|L₃) versus t₂₃, with
/// p₂ ∈ {R} (circular) or {H} (linear).
pub fn parity_curves(
    cfg: &ExperimentConfig,
    grid: &Grid,
    basis: ParityBasis,
) -> Result<Vec<Curve>> {
    use Polarization::*;
    let (p2s, names) = match basis {
        ParityBasis::Circular => ([R, L], ["p_r2_given_r3", "p_r2_given_l3"]),
        ParityBasis::Linear => ([H, V], ["p_h2_given_r3", "p_h2_given_l3"]),
    };
    let p3s = [R, L];
    let rows = grid_rows(cfg, grid, &p2s, &p3s)?;
    let times = grid.times();
    let col = |i2: usize, i3: usize, t: usize| t * 4 + i2 * 2 + i3;
    let mut curves = Vec::new();
    for (i3, name) in names.iter().enumerate() {
        let points = times
            .iter()
            .enumerate()
            .map(|(t, &t23)| {
                let (value, stderr) = conditional_point(&rows, col(0, i3, t), col(1, i3, t));
                CurvePoint { t23_ps: t23, value, stderr }
            })
            .collect();
        curves.push(Curve { name: (*name).to_string(), points });
    }
    Ok(curves)
}

/// Write curves as CSV with columns `t23_ps,quantity,value,stderr`.
///
/// Undefined points (vanishing denominators, e.g. t₂₃ = 0) are omitted.
pub fn write_curves_csv<W: std::io::Write>(out: &mut W, curves: &[Curve]) -> Result<()> {
    writeln!(out, "t23_ps,quantity,value,stderr")?;
    for curve in curves {
        for p in &curve.points {
            if let Some(v) = p.value {
                writeln!(out, "{},{},{},{}", p.t23_ps, curve.name, v, p.stderr)?;
            }
        }
    }
    Ok(())
}

/// Extract oscillation period from a curve by parabolic peak refinement.
///
/// Returns the mean spacing between successive interior maxima.
pub fn oscillation_period_ps(points: &[CurvePoint]) -> Option<f64> {
    let vals: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.value.map(|v| (p.t23_ps, v)))
        .collect();
    let mut peaks = Vec::new();
    for w in vals.windows(3) {
        let [(t0, a), (t1, b), (t2, c)] = [w[0], w[1], w[2]];
        if b > a && b >= c {
            // parabolic refinement through the three points
            let denom = a - 2.0 * b + c;
            let offset = if denom.abs() > 1e-15 { 0.5 * (a - c) / denom } else { 0.0 };
            let step = (t2 - t0) / 2.0;
            peaks.push(t1 + offset * step);
        }
    }
    if peaks.len() < 2 {
        return None;
    }
    let spacings: Vec<f64> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    Some(spacings.iter().sum::<f64>() / spacings.len() as f64)
}

/// Convenience: a single deterministic sample at the given index.
pub fn single_sample(params: &QDParams, master_seed: u64, index: u64) -> OverhauserSample {
    sample_field(master_seed, index, params.sigma_o_mt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn zero_sample() -> OverhauserSample {
        OverhauserSample { b_o_mt: [0.0; 3], sample_index: 0, seed: 0 }
    }

    fn no_noise_params() -> QDParams {
        let mut p = QDParams::fitted();
        p.sigma_o_mt = 0.0;
        p
    }

    #[test]
    fn selection_rules_lock_polarization_without_field() {
        use Polarization::*;
        let mut p = no_noise_params();
        p.b_mt = 0.0;
        let s = zero_sample();
        let (_, p_rrr) =
            three_pulse_conditional(&p, &s, PulseOptions::default(), R, R, R).unwrap();
        let (_, p_rrl) =
            three_pulse_conditional(&p, &s, PulseOptions::default(), R, R, L).unwrap();
        assert!(p_rrr > 0.0);
        assert!(p_rrl / p_rrr < 1e-6, "ratio {}", p_rrl / p_rrr);
    }

    #[test]
    fn rejects_invalid_sequence() {
        use Polarization::*;
        let mut p = no_noise_params();
        p.t23_ps = -10.0;
        let s = zero_sample();
        assert!(three_pulse_conditional(&p, &s, PulseOptions::default(), R, R, R)
            .is_err());
        let seq = PulseSequence {
            t1_ps: 0.0,
            t2_ps: 500.0,
            t3_ps: 400.0,
            theta_rad: 0.4,
            rep_period_ps: 12346.0,
        };
        assert!(matches!(seq.validate(), Err(Error::InvalidSequence(_))));
    }

    #[test]
    fn circular_triples_sum_to_cubed_click_probability() {
        use Polarization::*;
        // long windows, normalized pulses, eta = 1: each per-window factor is 1
        let mut p = no_noise_params();
        p.t12_ps = 6000.0;
        p.t23_ps = 6000.0;
        let s = zero_sample();
        let pulse = PulseOptions { normalized: true };
        let mut total = 0.0;
        for p1 in [R, L] {
            for p2 in [R, L] {
                for p3 in [R, L] {
                    let (_, prob) =
                        three_pulse_conditional(&p, &s, pulse, p1, p2, p3).unwrap();
                    total += prob;
                }
            }
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn engine_matches_direct_route() {
        use Polarization::*;
        let p = no_noise_params();
        let s = zero_sample();
        let engine = ThreePulseEngine::new(&p, &s, PulseOptions::default(), R).unwrap();
        for (p2, p3) in [(R, R), (H, L), (D, R), (V, L)] {
            let direct =
                three_pulse_conditional(&p, &s, PulseOptions::default(), R, p2, p3)
                    .unwrap()
                    .1;
            let fast = engine.probability(p2, p3, p.t23_ps).unwrap();
            assert_abs_diff_eq!(direct, fast, epsilon = 1e-10);
        }
    }

    #[test]
    fn grid_walk_matches_pointwise() {
        use Polarization::*;
        let p = no_noise_params();
        let s = zero_sample();
        let engine = ThreePulseEngine::new(&p, &s, PulseOptions::default(), R).unwrap();
        let grid = Grid { start_ps: 0.0, step_ps: 200.0, len: 8 };
        let rows = engine.probabilities_grid(&grid, &[R, L], &[R, L]).unwrap();
        for (t_index, &t) in grid.times().iter().enumerate() {
            for (i2, &p2) in [R, L].iter().enumerate() {
                for (i3, &p3) in [R, L].iter().enumerate() {
                    let direct = engine.probability(p2, p3, t).unwrap();
                    let walked = rows[t_index * 4 + i2 * 2 + i3];
                    assert_abs_diff_eq!(direct, walked, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn frozen_probabilities_at_fitted_point() {
        // deterministic σ_O = 0 anchors, cross-checked against an independent
        // scipy implementation of the same model
        use Polarization::*;
        let p = no_noise_params();
        let s = zero_sample();
        let engine = ThreePulseEngine::new(&p, &s, PulseOptions::default(), R).unwrap();
        let anchors = [
            (H, L, 0.095402180512),
            (H, R, 0.029501971946),
            (L, L, 0.063566397627),
            (L, R, 0.049122451328),
            (R, L, 0.064726952803),
            (R, R, 0.072392503158),
            (V, L, 0.032891169918),
            (V, R, 0.092012982540),
        ];
        for (p2, p3, expect) in anchors {
            let got = engine.probability(p2, p3, 810.0).unwrap();
            assert_abs_diff_eq!(got, expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn conditional_probability_symmetry_and_arithmetic() {
        use Polarization::*;
        let mk = |p2: Polarization, p3: Polarization, prob: f64| CoincidenceEntry {
            p1: R,
            p2,
            p3,
            probability: prob,
            stderr: 0.01,
        };
        // equal numerator/alternative → 0.5
        let table = CoincidenceTable {
            entries: vec![
                mk(R, R, 0.2),
                mk(L, R, 0.2),
                mk(R, L, 0.3),
                mk(L, L, 0.1),
                mk(H, R, 0.25),
                mk(V, R, 0.05),
                mk(H, L, 0.15),
                mk(V, L, 0.15),
            ],
        };
        let cond = conditional_probabilities(&table).unwrap();
        assert_abs_diff_eq!(cond.r2_given_r3.value.unwrap(), 0.5, epsilon = 1e-12);
        // hand-built spreadsheet arithmetic
        assert_abs_diff_eq!(cond.r2_given_l3.value.unwrap(), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(cond.h2_given_r3.value.unwrap(), 0.25 / 0.30, epsilon = 1e-12);
        assert_abs_diff_eq!(cond.h2_given_l3.value.unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_denominator_is_undefined() {
        use Polarization::*;
        let mk = |p2: Polarization, p3: Polarization, prob: f64| CoincidenceEntry {
            p1: R,
            p2,
            p3,
            probability: prob,
            stderr: 0.0,
        };
        let table = CoincidenceTable {
            entries: vec![
                mk(R, R, 0.0),
                mk(L, R, 0.0),
                mk(R, L, 0.1),
                mk(L, L, 0.1),
                mk(H, R, 0.1),
                mk(V, R, 0.1),
                mk(H, L, 0.1),
                mk(V, L, 0.1),
            ],
        };
        let cond = conditional_probabilities(&table).unwrap();
        assert!(cond.r2_given_r3.value.is_none());
        assert!(cond.r2_given_l3.value.is_some());
    }

    #[test]
    fn complementary_ratios_sum_to_one() {
        // P(p2|·) + P(p2⊥|·) = 1 by construction of the ratio
        use Polarization::*;
        let p = no_noise_params();
        let s = zero_sample();
        let engine = ThreePulseEngine::new(&p, &s, PulseOptions::default(), R).unwrap();
        let ph = engine.probability(H, R, 700.0).unwrap();
        let pv = engine.probability(V, R, 700.0).unwrap();
        let r_h = ph / (ph + pv);
        let r_v = pv / (ph + pv);
        assert_abs_diff_eq!(r_h + r_v, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eta_invariance_of_conditionals() {
        use Polarization::*;
        let p = no_noise_params();
        let mut p_low = p.clone();
        p_low.eta = 0.05;
        let s = zero_sample();
        let e1 = ThreePulseEngine::new(&p, &s, PulseOptions::default(), R).unwrap();
        let e2 = ThreePulseEngine::new(&p_low, &s, PulseOptions::default(), R).unwrap();
        let ratio = |e: &ThreePulseEngine| {
            let a = e.probability(R, R, 810.0).unwrap();
            let b = e.probability(L, R, 810.0).unwrap();
            a / (a + b)
        };
        assert_abs_diff_eq!(ratio(&e1), ratio(&e2), epsilon = 1e-9);
    }

    #[test]
    fn bloch_norm_is_one_without_dephasing() {
        // σ_O = 0, B = 0: the conditioned photon state is pure
        let mut p = no_noise_params();
        p.b_mt = 0.0;
        let cfg = ExperimentConfig {
            params: p,
            mc: MonteCarloConfig::new(1, 0),
            pulse: PulseOptions::default(),
        };
        let grid = Grid { start_ps: 400.0, step_ps: 400.0, len: 4 };
        let curves = photon2_bloch_vector(&cfg, &grid).unwrap();
        for t in 0..grid.len {
            let norm2: f64 = ["s_x_r3", "s_y_r3", "s_z_r3"]
                .iter()
                .map(|n| {
                    curves
                        .iter()
                        .find(|c| &c.name == n)
                        .unwrap()
                        .points[t]
                        .value
                        .unwrap()
                        .powi(2)
                })
                .sum();
            assert_abs_diff_eq!(norm2.sqrt(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn bloch_points_to_r_pole_at_small_t23() {
        let p = no_noise_params();
        let cfg = ExperimentConfig {
            params: p,
            mc: MonteCarloConfig::new(1, 0),
            pulse: PulseOptions::default(),
        };
        let grid = Grid { start_ps: 10.0, step_ps: 10.0, len: 2 };
        let curves = photon2_bloch_vector(&cfg, &grid).unwrap();
        let sz = curves.iter().find(|c| c.name == "s_z_r3").unwrap().points[0]
            .value
            .unwrap();
        assert!(sz > 0.95, "s_z(t→0⁺ | R₃) = {sz}");
    }

    #[test]
    fn flat_parity_without_field() {
        let mut p = no_noise_params();
        p.b_mt = 0.0;
        let cfg = ExperimentConfig {
            params: p,
            mc: MonteCarloConfig::new(1, 0),
            pulse: PulseOptions::default(),
        };
        let grid = Grid { start_ps: 100.0, step_ps: 500.0, len: 6 };
        let curves = parity_curves(&cfg, &grid, ParityBasis::Circular).unwrap();
        let c = curves.iter().find(|c| c.name == "p_r2_given_r3").unwrap();
        for pt in &c.points {
            assert_abs_diff_eq!(pt.value.unwrap(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn parity_period_matches_larmor() {
        let p = no_noise_params();
        let cfg = ExperimentConfig {
            params: p.clone(),
            mc: MonteCarloConfig::new(1, 0),
            pulse: PulseOptions::default(),
        };
        let grid = Grid::default_t23();
        let curves = parity_curves(&cfg, &grid, ParityBasis::Circular).unwrap();
        let c = curves.iter().find(|c| c.name == "p_r2_given_r3").unwrap();
        let period = oscillation_period_ps(&c.points).unwrap();
        let expected = p.larmor_period_ps();
        assert!(
            (period - expected).abs() / expected < 0.05,
            "period {period} vs Larmor {expected}"
        );
    }

    #[test]
    fn rotated_basis_table_near_measured_reference() {
        // t₂₃ = 2t₁₂: the circular-basis conditionals sit near the measured
        // 0.27/0.73 pattern (the experimental values carry ±0.02 and
        // unmodeled imperfections; this anchors the sign and scale)
        use Polarization::*;
        let mut p = QDParams::fitted();
        p.t23_ps = 2.0 * p.t12_ps;
        let cfg = ExperimentConfig {
            params: p,
            mc: MonteCarloConfig::new(300, 5),
            pulse: PulseOptions::default(),
        };
        let table = coincidence_table(
            &cfg,
            &[(R, R, R), (R, L, R), (R, R, L), (R, L, L)],
        )
        .unwrap();
        let ratio = |p3: Polarization| {
            conditional_ratio(
                table.get(R, R, p3).unwrap(),
                table.get(R, L, p3).unwrap(),
            )
            .value
            .unwrap()
        };
        let p_r2_up = ratio(R);
        let p_r2_down = ratio(L);
        // the simulation sits slightly outside the measured values (which
        // include imperfections pulling toward 0.5) but on the right side
        assert!((p_r2_up - 0.27).abs() < 0.08, "P(R2|up) = {p_r2_up}");
        assert!((p_r2_down - 0.73).abs() < 0.08, "P(R2|down) = {p_r2_down}");
        assert!(p_r2_up < 0.5 && p_r2_down > 0.5);
    }

    #[test]
    fn bloch_norm_decays_under_disorder() {
        let cfg = ExperimentConfig {
            params: QDParams::fitted(),
            mc: MonteCarloConfig::new(200, 9),
            pulse: PulseOptions::default(),
        };
        // quarter-period steps: comparing t and t + T isolates the envelope
        // from intra-period structure of the wrapped phase distribution
        let quarter = cfg.params.larmor_period_ps() / 4.0;
        let grid = Grid { start_ps: 300.0, step_ps: quarter, len: 8 };
        let curves = photon2_bloch_vector(&cfg, &grid).unwrap();
        let comp = |name: &str, t: usize| -> f64 {
            curves
                .iter()
                .find(|c| c.name == name)
                .unwrap()
                .points[t]
                .value
                .unwrap()
        };
        let norms: Vec<f64> = (0..grid.len)
            .map(|t| {
                (comp("s_x_r3", t).powi(2)
                    + comp("s_y_r3", t).powi(2)
                    + comp("s_z_r3", t).powi(2))
                .sqrt()
            })
            .collect();
        for t in 0..4 {
            assert!(
                norms[t + 4] < norms[t],
                "envelope not decaying: {norms:?}"
            );
            assert!(norms[t] <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn doubling_samples_stays_within_two_standard_errors() {
        use Polarization::*;
        let run = |n: u64| {
            let cfg = ExperimentConfig {
                params: QDParams::fitted(),
                mc: MonteCarloConfig::new(n, 77),
                pulse: PulseOptions::default(),
            };
            let table = coincidence_table(
                &cfg,
                &[(R, R, R), (R, L, R)],
            )
            .unwrap();
            conditional_probabilities_pair(&table)
        };
        let (p1, se1) = run(1000);
        let (p2, se2) = run(2000);
        let se = (se1 * se1 + se2 * se2).sqrt();
        assert!(
            (p1 - p2).abs() < 2.0 * se,
            "P(R2|R3): {p1} ± {se1} vs {p2} ± {se2}"
        );
    }

    fn conditional_probabilities_pair(table: &CoincidenceTable) -> (f64, f64) {
        use Polarization::*;
        let ratio = conditional_ratio(
            table.get(R, R, R).unwrap(),
            table.get(R, L, R).unwrap(),
        );
        (ratio.value.unwrap(), ratio.stderr)
    }

    #[test]
    fn basis_sum_invariance_of_pair_totals() {
        use Polarization::*;
        let p = no_noise_params();
        let s = zero_sample();
        let engine = ThreePulseEngine::new(&p, &s, PulseOptions::default(), R).unwrap();
        let total = |a: Polarization, b: Polarization| {
            engine.probability(a, R, 900.0).unwrap() + engine.probability(b, R, 900.0).unwrap()
        };
        let rl = total(R, L);
        let hv = total(H, V);
        let da = total(D, A);
        assert_abs_diff_eq!(rl, hv, epsilon = 1e-10);
        assert_abs_diff_eq!(rl, da, epsilon = 1e-10);
    }
}
