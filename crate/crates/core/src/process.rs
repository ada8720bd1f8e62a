//! One-step process map of the cluster-generation protocol: extraction from
//! spin-photon correlations, conversion to an equivalent two-qubit map,
//! k-fold composition, and fidelities to the ideal chain.
//!
//! The map C sends 2×2 spin operators to 4×4 spin⊗photon operators (ordering
//! spin-major, photon basis {|R⟩, |L⟩}); it is reconstructed from the 64
//! constraints `Tr[σ_i^(e)σ_j^(p) C(|ψ_k⟩⟨ψ_k|)] = ⟨σ_iσ_j⟩_k` over the four
//! initial spin states {|↓⟩, |↑⟩, |+⟩, |+i⟩}.

use ndarray::{s, Array2};
use num_complex::Complex64 as C64;

use crate::dynamics::Propagators;
use crate::error::{Error, Result};
use crate::linalg::{
    conjugation_matrix, dagger, expm, eye, kron, lu_solve, trace, unvec_op, vec_op,
    CMat, ONE, ZERO,
};
use crate::model::{Polarization, PulseOptions, QDParams, MU_B_OVER_HBAR};
use crate::overhauser::{monte_carlo_vectors, reduce_mean_stderr, MonteCarloConfig};

/// Initial spin states used for map tomography.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialSpin {
    Down,
    Up,
    Plus,
    PlusI,
}

impl InitialSpin {
    pub const ALL: [InitialSpin; 4] =
        [InitialSpin::Down, InitialSpin::Up, InitialSpin::Plus, InitialSpin::PlusI];

    /// Ket on the ground doublet {|↑⟩, |↓⟩}.
    pub fn ket(self) -> [C64; 2] {
        let rt2 = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            InitialSpin::Down => [ZERO, ONE],
            InitialSpin::Up => [ONE, ZERO],
            InitialSpin::Plus => [C64::new(rt2, 0.0), C64::new(rt2, 0.0)],
            InitialSpin::PlusI => [C64::new(rt2, 0.0), C64::new(0.0, rt2)],
        }
    }

    pub fn projector(self) -> CMat {
        let k = self.ket();
        Array2::from_shape_fn((2, 2), |(i, j)| k[i] * k[j].conj())
    }
}

/// 2×2 spin Pauli basis {I, X, Y, Z}.
fn spin_pauli(i: usize) -> CMat {
    let mut m = Array2::from_elem((2, 2), ZERO);
    match i {
        0 => {
            m[[0, 0]] = ONE;
            m[[1, 1]] = ONE;
        }
        1 => {
            m[[0, 1]] = ONE;
            m[[1, 0]] = ONE;
        }
        2 => {
            m[[0, 1]] = -crate::linalg::I;
            m[[1, 0]] = crate::linalg::I;
        }
        3 => {
            m[[0, 0]] = ONE;
            m[[1, 1]] = -ONE;
        }
        _ => unreachable!(),
    }
    m
}

/// Photon Pauli basis from the detected Jones kets: X = H−V, Y = D−A, Z = R−L.
fn photon_pauli(j: usize) -> CMat {
    use Polarization::*;
    let proj = |p: Polarization| {
        let k = p.jones_ket();
        Array2::from_shape_fn((2, 2), |(a, b)| k[a] * k[b].conj())
    };
    match j {
        0 => eye(2),
        1 => proj(H) - proj(V),
        2 => proj(D) - proj(A),
        3 => proj(R) - proj(L),
        _ => unreachable!(),
    }
}

/// Spin⊗photon observable σ_i^(e) ⊗ σ_j^(p), i, j ∈ {I, X, Y, Z}.
pub fn pauli_observable(i: usize, j: usize) -> CMat {
    kron(&spin_pauli(i), &photon_pauli(j))
}

fn observable(i: usize, j: usize) -> CMat {
    pauli_observable(i, j)
}

/// 16 spin-photon correlations ⟨σ_i^(e)σ_j^(p)⟩, spin index major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationTable(pub [[f64; 4]; 4]);

/// Unnormalized conditional moments ⟨σ_i^(e)(t|p)⟩ for one initial state:
/// `moments[i][p]` with i ∈ {I, X, Y, Z} and p indexed by `Polarization::ALL`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments(pub [[f64; 6]; 4]);

impl ConditionalMoments {
    fn flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    fn from_flat(v: &[f64]) -> Self {
        let mut m = [[0.0; 6]; 4];
        for i in 0..4 {
            for p in 0..6 {
                m[i][p] = v[i * 6 + p];
            }
        }
        Self(m)
    }
}

fn embed_spin(rho2: &CMat) -> CMat {
    let mut m = Array2::from_elem((4, 4), ZERO);
    m.slice_mut(s![..2, ..2]).assign(rho2);
    m
}

fn sigma_e_embedded(i: usize) -> CMat {
    if i == 0 {
        eye(4)
    } else {
        crate::model::sigma_e(i - 1)
    }
}

/// Conditional moments after a single pulse, window `[0, t]`.
pub fn conditional_moments(
    props: &Propagators,
    initial_spin: InitialSpin,
    t_ps: f64,
) -> Result<ConditionalMoments> {
    let rho0 = embed_spin(&initial_spin.projector());
    let after_pulse = props.pulse().apply_vec(&vec_op(&rho0));
    let mut m = [[0.0; 6]; 4];
    let full = props.full(t_ps)?;
    for (pi, &pol) in Polarization::ALL.iter().enumerate() {
        let bright = full.sub(&props.no_click(pol, t_ps)?);
        let rho_p = unvec_op(&bright.apply_vec(&after_pulse));
        for i in 0..4 {
            m[i][pi] = trace(&sigma_e_embedded(i).dot(&rho_p)).re;
        }
    }
    Ok(ConditionalMoments(m))
}

/// Correlations from conditional moments, per the protocol's ratio forms.
pub fn correlations_from_moments(m: &ConditionalMoments) -> CorrelationTable {
    use Polarization as P;
    let idx = |p: P| P::ALL.iter().position(|&q| q == p).unwrap();
    let (r, l, h, v, d, a) =
        (idx(P::R), idx(P::L), idx(P::H), idx(P::V), idx(P::D), idx(P::A));
    let mm = &m.0;
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        let den_rl = mm[0][l] + mm[0][r];
        let den_hv = mm[0][h] + mm[0][v];
        let den_da = mm[0][d] + mm[0][a];
        c[i][0] = (mm[i][l] + mm[i][r]) / den_rl;
        c[i][1] = (mm[i][h] - mm[i][v]) / den_hv;
        c[i][2] = (mm[i][d] - mm[i][a]) / den_da;
        c[i][3] = (mm[i][r] - mm[i][l]) / den_rl;
    }
    CorrelationTable(c)
}

/// Spin-photon correlations for a converged emission window.
///
/// Errors if the unconditioned trion population at `t_ps` exceeds 1e-6, i.e.
/// "a photon was emitted prior to t" is not yet a near-certainty.
pub fn spin_photon_correlations(
    props: &Propagators,
    initial_spin: InitialSpin,
    t_ps: f64,
) -> Result<CorrelationTable> {
    let rho0 = embed_spin(&initial_spin.projector());
    let after_pulse = props.pulse().apply_vec(&vec_op(&rho0));
    let evolved = unvec_op(&props.full(t_ps)?.apply_vec(&after_pulse));
    let residual = (evolved[[2, 2]] + evolved[[3, 3]]).re;
    if residual > 1e-6 {
        return Err(Error::NonConvergedWindow { residual, t_ps });
    }
    Ok(correlations_from_moments(&conditional_moments(props, initial_spin, t_ps)?))
}

/// Linear map from spin-operator space to spin⊗photon-operator space,
/// represented as a 16×4 matrix on column-stacked vectorizations.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessMap {
    matrix: CMat,
    pub condition_time_ps: Option<f64>,
}

impl ProcessMap {
    /// Row-major (re, im) pairs of the 16×4 matrix, for serialization.
    pub fn matrix_rows_re_im(&self) -> Vec<Vec<[f64; 2]>> {
        (0..16)
            .map(|r| {
                (0..4)
                    .map(|c| {
                        let z = self.matrix[[r, c]];
                        [z.re, z.im]
                    })
                    .collect()
            })
            .collect()
    }

    pub fn new(matrix: CMat, condition_time_ps: Option<f64>) -> Result<Self> {
        if matrix.dim() != (16, 4) {
            return Err(Error::DimensionMismatch(format!(
                "process map must be 16x4, got {:?}",
                matrix.dim()
            )));
        }
        Ok(Self { matrix, condition_time_ps })
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    /// Apply to a 2×2 spin operator, yielding a 4×4 spin⊗photon operator.
    pub fn apply(&self, rho_spin: &CMat) -> CMat {
        unvec_op(&self.matrix.dot(&vec_op(rho_spin)))
    }

    /// Max Hermiticity-preservation residual over deterministic random inputs.
    pub fn hermiticity_residual(&self, n_states: usize) -> f64 {
        let mut worst: f64 = 0.0;
        let mut rng = crate::overhauser::SplitMix::new(0xABCD);
        for _ in 0..n_states {
            let g = Array2::from_shape_fn((2, 2), |_| {
                C64::new(rng.next_f64() - 0.5, rng.next_f64() - 0.5)
            });
            let rho = (&g + &dagger(&g)).mapv(|z| z * 0.5);
            let out = self.apply(&rho);
            worst = worst.max(crate::linalg::hermiticity_deviation(&out));
        }
        worst
    }

    /// Max |Tr C(ρ) − Tr ρ| over the four tomography input states.
    pub fn trace_preservation_residual(&self) -> f64 {
        InitialSpin::ALL
            .iter()
            .map(|&st| {
                let rho = st.projector();
                (trace(&self.apply(&rho)).re - trace(&rho).re).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// The unique linear map consistent with the 64 correlation constraints.
pub fn build_process_map(
    correlations: &[(InitialSpin, CorrelationTable)],
    condition_time_ps: Option<f64>,
) -> Result<ProcessMap> {
    if correlations.len() != 4 {
        return Err(Error::DimensionMismatch(format!(
            "need 4 initial states, got {}",
            correlations.len()
        )));
    }
    // unknowns m_{ba}: C(E_a) = Σ_b m_{ba} F_b, 64 reals;
    // equations: Σ_a w_{ka} Σ_b m_{ba} Tr[F_q F_b] = c_{q,k}
    let mut a_mat = Array2::from_elem((64, 64), ZERO);
    let mut rhs = Array2::from_elem((64, 1), ZERO);
    let f_basis: Vec<CMat> = (0..16).map(|q| observable(q / 4, q % 4)).collect();
    for (k, (state, table)) in correlations.iter().enumerate() {
        let rho_k = state.projector();
        let w: Vec<f64> = (0..4)
            .map(|a| 0.5 * trace(&spin_pauli(a).dot(&rho_k)).re)
            .collect();
        for q in 0..16 {
            let row = k * 16 + q;
            for b in 0..16 {
                let gram = trace(&f_basis[q].dot(&f_basis[b])).re;
                if gram.abs() < 1e-14 {
                    continue;
                }
                for (a, &wka) in w.iter().enumerate() {
                    a_mat[[row, b * 4 + a]] = C64::new(wka * gram, 0.0);
                }
            }
            rhs[[row, 0]] = C64::new(table.0[q / 4][q % 4], 0.0);
        }
    }
    let sol = lu_solve(&a_mat, &rhs)?;
    // assemble the vec-basis matrix: C(ρ) = Σ_a (Tr[E_a ρ]/2) Σ_b m_{ba} F_b
    let mut matrix = Array2::from_elem((16, 4), ZERO);
    for b in 0..16 {
        let fb = vec_op(&f_basis[b]);
        for a in 0..4 {
            let m_ba = sol[[b * 4 + a, 0]].re;
            if m_ba == 0.0 {
                continue;
            }
            let ea = vec_op(&spin_pauli(a));
            for r in 0..16 {
                for c in 0..4 {
                    matrix[[r, c]] += fb[r] * ea[c].conj() * (0.5 * m_ba);
                }
            }
        }
    }
    let map = ProcessMap::new(matrix, condition_time_ps)?;
    // verify the constraints are reproduced
    let mut residual: f64 = 0.0;
    for (state, table) in correlations {
        let out = map.apply(&state.projector());
        for q in 0..16 {
            let pred = trace(&f_basis[q].dot(&out)).re;
            residual = residual.max((pred - table.0[q / 4][q % 4]).abs());
        }
    }
    if residual > 1e-8 {
        return Err(Error::InvalidParams {
            field: "process_map".into(),
            reason: format!("linear-system residual {residual:.3e} exceeds 1e-8"),
        });
    }
    Ok(map)
}

/// Ideal step: the emission isometry `K₀ = |↑R⟩⟨↑| + |↓L⟩⟨↓|` followed by the
/// π/2 spin precession.
pub fn ideal_step_map() -> ProcessMap {
    let mut k0 = Array2::from_elem((4, 2), ZERO);
    k0[[0, 0]] = ONE; // |↑R⟩⟨↑|
    k0[[3, 1]] = ONE; // |↓L⟩⟨↓|
    let a = kron(&quarter_turn(), &eye(2)).dot(&k0);
    ProcessMap { matrix: conjugation_matrix(&a), condition_time_ps: None }
}

/// π/2 precession about the field axis: |↑⟩ → |+⟩ → |↓⟩.
fn quarter_turn() -> CMat {
    let h = spin_pauli(2).mapv(|z| z * std::f64::consts::FRAC_PI_4);
    expm(&h.mapv(|z| -crate::linalg::I * z)).unwrap()
}

/// Equivalent two-qubit map `D` with `D(ρ_s ⊗ |R⟩⟨R|) = C(ρ_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitMap {
    matrix: CMat,
}

impl TwoQubitMap {
    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        unvec_op(&self.matrix.dot(&vec_op(rho)))
    }
}

/// Complete `C` to a two-qubit map by projecting the photon input on |R⟩:
/// `D(ρ_s ⊗ X) = ⟨R|X|R⟩ C(ρ_s)`, zero action on coherences to/from |L⟩.
pub fn to_two_qubit(c: &ProcessMap) -> TwoQubitMap {
    // T: vec(4×4) → vec(2×2), (Tρ)_{ss'} = ρ_{(s,R),(s',R)}
    let mut t = Array2::from_elem((4, 16), ZERO);
    for s_row in 0..2 {
        for s_col in 0..2 {
            let row = s_col * 2 + s_row;
            let col = (2 * s_col) * 4 + (2 * s_row);
            t[[row, col]] = ONE;
        }
    }
    TwoQubitMap { matrix: c.matrix().dot(&t) }
}

/// Apply a process map on the spin factor of a spin ⊗ (qubits) state; the new
/// photon lands directly after the spin.
pub fn apply_on_spin_factor(map: &ProcessMap, rho: &CMat) -> CMat {
    let n = rho.nrows();
    let half = n / 2;
    let mut out = Array2::from_elem((2 * n, 2 * n), ZERO);
    for s_row in 0..2 {
        for s_col in 0..2 {
            let block = rho
                .slice(s![
                    s_row * half..(s_row + 1) * half,
                    s_col * half..(s_col + 1) * half
                ])
                .to_owned();
            let mut e = Array2::from_elem((2, 2), ZERO);
            e[[s_row, s_col]] = ONE;
            let ce = map.apply(&e);
            out = out + kron(&ce, &block);
        }
    }
    out
}

/// Insert a fresh photon in |R⟩⟨R| after the spin factor, then apply a
/// two-qubit map on the (spin, new photon) pair: the D-route of composition.
pub fn apply_two_qubit_on_spin_factor(map: &TwoQubitMap, rho: &CMat) -> CMat {
    let n = rho.nrows();
    let half = n / 2;
    let mut expanded = Array2::from_elem((2 * n, 2 * n), ZERO);
    for s_row in 0..2 {
        for s_col in 0..2 {
            let block = rho.slice(s![
                s_row * half..(s_row + 1) * half,
                s_col * half..(s_col + 1) * half
            ]);
            // (spin=s, photon=R) composite index = 2s
            let (r_row, r_col) = (2 * s_row, 2 * s_col);
            expanded
                .slice_mut(s![
                    r_row * half..(r_row + 1) * half,
                    r_col * half..(r_col + 1) * half
                ])
                .assign(&block);
        }
    }
    let mut out = Array2::from_elem((2 * n, 2 * n), ZERO);
    for a_row in 0..4 {
        for a_col in 0..4 {
            let block = expanded
                .slice(s![
                    a_row * half..(a_row + 1) * half,
                    a_col * half..(a_col + 1) * half
                ])
                .to_owned();
            let mut e = Array2::from_elem((4, 4), ZERO);
            e[[a_row, a_col]] = ONE;
            let de = map.apply(&e);
            out = out + kron(&de, &block);
        }
    }
    out
}

/// Spin + k-photon state and its fidelity to the ideal chain from |+⟩.
pub fn compose_and_fidelity(
    map: &ProcessMap,
    k: usize,
    rho_s: &CMat,
) -> Result<(CMat, f64)> {
    if !(1..=4).contains(&k) {
        return Err(Error::PhotonCountOutOfRange(k));
    }
    let ideal = ideal_step_map();
    let mut rho = rho_s.clone();
    let mut target = InitialSpin::Plus.projector();
    for _ in 0..k {
        rho = apply_on_spin_factor(map, &rho);
        target = apply_on_spin_factor(&ideal, &target);
    }
    let f = trace(&target.dot(&rho)).re;
    Ok((rho, f))
}

/// How the Overhauser average enters the k-step composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AveragingMode {
    /// Average the extracted map over samples, then compose (default; the
    /// faithful reading of averaging the conditional density matrix itself).
    MapFirst,
    /// Compose each sample's map, then average the fidelities.
    PerSample,
}

/// Initial spin state for the composition chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainInitialState {
    /// Heralded |↑⟩ at t₁, evolved under the sample Liouvillian for t₁₂
    /// (ground manifold), Overhauser-averaged.
    HeraldedEvolved,
    /// The ideal initialized spin |+⟩.
    IdealPlus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityOptions {
    pub averaging: AveragingMode,
    pub initial_state: ChainInitialState,
    /// Map condition time; defaults to t₁₂.
    pub map_time_ps: Option<f64>,
    pub k_max: usize,
}

impl Default for FidelityOptions {
    fn default() -> Self {
        Self {
            averaging: AveragingMode::MapFirst,
            initial_state: ChainInitialState::HeraldedEvolved,
            map_time_ps: None,
            k_max: 4,
        }
    }
}

/// Ground-manifold propagator for the heralded spin (2×2); the applied field
/// sits on the y axis, the Overhauser components on all three.
fn ground_propagator(params: &QDParams, b_o_mt: [f64; 3], t_ps: f64) -> CMat {
    let unit = 0.5 * params.g_e * MU_B_OVER_HBAR * 1e-3;
    let mut h = spin_pauli(1).mapv(|z| z * (unit * b_o_mt[0]));
    h = h + spin_pauli(2).mapv(|z| z * (0.5 * params.delta_e() + unit * b_o_mt[1]));
    h = h + spin_pauli(3).mapv(|z| z * (unit * b_o_mt[2]));
    expm(&h.mapv(|z| -crate::linalg::I * z * t_ps)).unwrap()
}

/// Result of the Monte-Carlo fidelity chain.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityChain {
    /// F_k for k = 1..=k_max.
    pub f_k: Vec<f64>,
    /// Standard errors (10-batch means for MapFirst, per-sample for PerSample).
    pub stderr: Vec<f64>,
    /// Trace of the composed state at each k.
    pub trace_k: Vec<f64>,
    /// The ensemble-averaged one-step map (absent for per-sample composition,
    /// where no single map exists).
    pub map: Option<ProcessMap>,
}

/// Extract the map(s) over the Overhauser ensemble and compose to F_k.
pub fn fidelity_chain(
    params: &QDParams,
    mc: &MonteCarloConfig,
    pulse: PulseOptions,
    opts: &FidelityOptions,
) -> Result<FidelityChain> {
    if !(1..=4).contains(&opts.k_max) {
        return Err(Error::PhotonCountOutOfRange(opts.k_max));
    }
    let t_map = opts.map_time_ps.unwrap_or(params.t12_ps);
    let k_max = opts.k_max;

    // per-sample payload: 4 states × 24 moments, then 8 reals of rho_s
    let rows = monte_carlo_vectors(mc, params.sigma_o_mt, |sample| {
        let props = Propagators::new(params, sample.b_o_mt, pulse)?;
        let mut row = Vec::with_capacity(4 * 24 + 8);
        for state in InitialSpin::ALL {
            row.extend(conditional_moments(&props, state, t_map)?.flat());
        }
        let u = ground_propagator(params, sample.b_o_mt, params.t12_ps);
        let rho_s = u.dot(&InitialSpin::Up.projector()).dot(&dagger(&u));
        for j in 0..2 {
            for i in 0..2 {
                row.push(rho_s[[i, j]].re);
                row.push(rho_s[[i, j]].im);
            }
        }
        Ok(row)
    })?;

    let build_from_rows = |subset: &[Vec<f64>]| -> Result<(ProcessMap, CMat)> {
        let (mean, _) = reduce_mean_stderr(subset);
        let mut correlations = Vec::with_capacity(4);
        for (si, state) in InitialSpin::ALL.iter().enumerate() {
            let m = ConditionalMoments::from_flat(&mean[si * 24..(si + 1) * 24]);
            correlations.push((*state, correlations_from_moments(&m)));
        }
        let map = build_process_map(&correlations, Some(t_map))?;
        let base = 4 * 24;
        let mut rho_s = Array2::from_elem((2, 2), ZERO);
        for j in 0..2 {
            for i in 0..2 {
                let k = base + (j * 2 + i) * 2;
                rho_s[[i, j]] = C64::new(mean[k], mean[k + 1]);
            }
        }
        Ok((map, rho_s))
    };

    let chain = |map: &ProcessMap, rho_s: &CMat| -> (Vec<f64>, Vec<f64>) {
        let ideal = ideal_step_map();
        let mut rho = match opts.initial_state {
            ChainInitialState::HeraldedEvolved => rho_s.clone(),
            ChainInitialState::IdealPlus => InitialSpin::Plus.projector(),
        };
        let mut target = InitialSpin::Plus.projector();
        let mut f_k = Vec::with_capacity(k_max);
        let mut tr_k = Vec::with_capacity(k_max);
        for _ in 0..k_max {
            rho = apply_on_spin_factor(map, &rho);
            target = apply_on_spin_factor(&ideal, &target);
            f_k.push(trace(&target.dot(&rho)).re);
            tr_k.push(trace(&rho).re);
        }
        (f_k, tr_k)
    };

    match opts.averaging {
        AveragingMode::MapFirst => {
            let (map, rho_s) = build_from_rows(&rows)?;
            let (f_k, trace_k) = chain(&map, &rho_s);
            let n_batches = 10.min(rows.len());
            let mut batch_f: Vec<Vec<f64>> = Vec::new();
            if n_batches >= 2 {
                let per = rows.len() / n_batches;
                for b in 0..n_batches {
                    let lo = b * per;
                    let hi = if b == n_batches - 1 { rows.len() } else { lo + per };
                    if let Ok((map_b, rho_b)) = build_from_rows(&rows[lo..hi]) {
                        batch_f.push(chain(&map_b, &rho_b).0);
                    }
                }
            }
            let stderr = if batch_f.len() >= 2 {
                reduce_mean_stderr(&batch_f).1
            } else {
                vec![0.0; k_max]
            };
            Ok(FidelityChain { f_k, stderr, trace_k, map: Some(map) })
        }
        AveragingMode::PerSample => {
            let mut per_sample_f = Vec::with_capacity(rows.len());
            let mut per_sample_tr = Vec::with_capacity(rows.len());
            for row in &rows {
                let (map, rho_s) = build_from_rows(std::slice::from_ref(row))?;
                let (f_k, tr_k) = chain(&map, &rho_s);
                per_sample_f.push(f_k);
                per_sample_tr.push(tr_k);
            }
            let (f_k, stderr) = reduce_mean_stderr(&per_sample_f);
            let (trace_k, _) = reduce_mean_stderr(&per_sample_tr);
            Ok(FidelityChain { f_k, stderr, trace_k, map: None })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fitted_props(b_o: [f64; 3]) -> (QDParams, Propagators) {
        let mut p = QDParams::fitted();
        p.sigma_o_mt = 0.0;
        let props = Propagators::new(&p, b_o, PulseOptions::default()).unwrap();
        (p, props)
    }

    fn correlations_of_map(map: &ProcessMap) -> Vec<(InitialSpin, CorrelationTable)> {
        InitialSpin::ALL
            .iter()
            .map(|&st| {
                let out = map.apply(&st.projector());
                let mut c = [[0.0; 4]; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        c[i][j] = trace(&observable(i, j).dot(&out)).re;
                    }
                }
                (st, CorrelationTable(c))
            })
            .collect()
    }

    fn sim_correlations(
        props: &Propagators,
        t: f64,
    ) -> Vec<(InitialSpin, CorrelationTable)> {
        InitialSpin::ALL
            .iter()
            .map(|&st| {
                let m = conditional_moments(props, st, t).unwrap();
                (st, correlations_from_moments(&m))
            })
            .collect()
    }

    fn random_hermitian(dim: usize, rng: &mut crate::overhauser::SplitMix) -> CMat {
        let g = Array2::from_shape_fn((dim, dim), |_| {
            C64::new(rng.next_f64() - 0.5, rng.next_f64() - 0.5)
        });
        (&g + &dagger(&g)).mapv(|z| z * 0.5)
    }

    #[test]
    fn identity_correlation_is_one() {
        let (p, props) = fitted_props([0.0; 3]);
        let c =
            spin_photon_correlations(&props, InitialSpin::Up, 30.0 * p.t1_ps).unwrap();
        assert_abs_diff_eq!(c.0[0][0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn correlations_error_on_unconverged_window() {
        let (p, props) = fitted_props([0.0; 3]);
        let err = spin_photon_correlations(&props, InitialSpin::Up, p.t12_ps);
        assert!(matches!(err, Err(Error::NonConvergedWindow { .. })));
    }

    #[test]
    fn ideal_limit_zz_correlation() {
        // normalized pulse, B = 0, initial |↑⟩: photon exactly R, spin stays up
        let mut p = QDParams::fitted();
        p.sigma_o_mt = 0.0;
        p.b_mt = 0.0;
        let props =
            Propagators::new(&p, [0.0; 3], PulseOptions { normalized: true }).unwrap();
        let c = spin_photon_correlations(&props, InitialSpin::Up, 6000.0).unwrap();
        // convention: R-detected photon ↔ spin ↑ is the +1 sector
        assert_abs_diff_eq!(c.0[3][3], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(c.0[3][0], 1.0, epsilon = 1e-8); // spin stays up
        assert_abs_diff_eq!(c.0[0][3], 1.0, epsilon = 1e-8); // photon is R
    }

    #[test]
    fn ideal_limit_coherence_preserved() {
        // initial |+⟩ with B = 0, θ = 0: XX correlation has magnitude 1
        let mut p = QDParams::fitted();
        p.sigma_o_mt = 0.0;
        p.b_mt = 0.0;
        p.theta_rad = 0.0;
        let props =
            Propagators::new(&p, [0.0; 3], PulseOptions { normalized: true }).unwrap();
        let c = spin_photon_correlations(&props, InitialSpin::Plus, 6000.0).unwrap();
        assert_abs_diff_eq!(c.0[1][1].abs(), 1.0, epsilon = 1e-8);

        // θ ≠ 0 rotates the coherence within the photon x-y plane by the
        // pulse-imprinted trion phase 2θ; the in-plane magnitude stays 1
        p.theta_rad = 0.4;
        let props =
            Propagators::new(&p, [0.0; 3], PulseOptions { normalized: true }).unwrap();
        let c = spin_photon_correlations(&props, InitialSpin::Plus, 6000.0).unwrap();
        assert_abs_diff_eq!(c.0[1][1].abs(), (2.0 * 0.4f64).cos(), epsilon = 1e-8);
        let in_plane = (c.0[1][1].powi(2) + c.0[1][2].powi(2)).sqrt();
        assert_abs_diff_eq!(in_plane, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn round_trip_recovers_ideal_map() {
        let ideal = ideal_step_map();
        let rebuilt = build_process_map(&correlations_of_map(&ideal), None).unwrap();
        let dist = (rebuilt.matrix() - ideal.matrix())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(dist < 1e-7, "operator distance {dist}");
    }

    #[test]
    fn ideal_map_properties() {
        let ideal = ideal_step_map();
        // basis input → photon exactly R
        let up_out = ideal.apply(&InitialSpin::Up.projector());
        let photon = crate::linalg::partial_trace(&up_out, &[2, 2], &[1]).unwrap();
        assert_abs_diff_eq!(photon[[0, 0]].re, 1.0, epsilon = 1e-12);
        // C(|+⟩⟨+|) is pure with unit trace
        let plus_out = ideal.apply(&InitialSpin::Plus.projector());
        assert_abs_diff_eq!(trace(&plus_out).re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trace(&plus_out.dot(&plus_out)).re, 1.0, epsilon = 1e-12);
        assert!(ideal.trace_preservation_residual() < 1e-12);
        assert!(ideal.hermiticity_residual(100) < 1e-12);
    }

    #[test]
    fn ideal_chain_fidelity_is_one() {
        let ideal = ideal_step_map();
        let plus = InitialSpin::Plus.projector();
        for k in 1..=4 {
            let (rho, f) = compose_and_fidelity(&ideal, k, &plus).unwrap();
            assert_abs_diff_eq!(f, 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(trace(&rho).re, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn compose_rejects_out_of_range_k() {
        let ideal = ideal_step_map();
        let plus = InitialSpin::Plus.projector();
        assert!(compose_and_fidelity(&ideal, 0, &plus).is_err());
        assert!(compose_and_fidelity(&ideal, 5, &plus).is_err());
    }

    #[test]
    fn map_from_simulation_is_physical() {
        let (p, props) = fitted_props([3.0, -4.0, 2.0]);
        let map =
            build_process_map(&sim_correlations(&props, p.t12_ps), Some(p.t12_ps))
                .unwrap();
        assert!(map.hermiticity_residual(100) < 1e-8);
        assert!(map.trace_preservation_residual() < 0.02);
    }

    #[test]
    fn two_qubit_map_defining_identity() {
        let ideal = ideal_step_map();
        let d = to_two_qubit(&ideal);
        for st in InitialSpin::ALL {
            let rho_s = st.projector();
            let mut r_photon = Array2::from_elem((2, 2), ZERO);
            r_photon[[0, 0]] = ONE;
            let via_d = d.apply(&kron(&rho_s, &r_photon));
            let via_c = ideal.apply(&rho_s);
            let dist = (&via_d - &via_c)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(dist < 1e-9, "{st:?}: {dist}");
        }
    }

    #[test]
    fn two_qubit_map_preserves_hermiticity() {
        let (p, props) = fitted_props([1.0, 2.0, 3.0]);
        let map =
            build_process_map(&sim_correlations(&props, p.t12_ps), Some(p.t12_ps))
                .unwrap();
        let d = to_two_qubit(&map);
        let mut rng = crate::overhauser::SplitMix::new(5);
        for _ in 0..100 {
            let rho = random_hermitian(4, &mut rng);
            let out = d.apply(&rho);
            assert!(crate::linalg::hermiticity_deviation(&out) < 1e-8);
        }
    }

    #[test]
    fn dual_route_composition_agrees() {
        // D-based route equals direct C route for k = 2 on random spin states
        let (p, props) = fitted_props([-2.0, 5.0, 1.0]);
        let map =
            build_process_map(&sim_correlations(&props, p.t12_ps), Some(p.t12_ps))
                .unwrap();
        let d = to_two_qubit(&map);
        let mut rng = crate::overhauser::SplitMix::new(17);
        for _ in 0..20 {
            let rho = random_hermitian(2, &mut rng);
            let c_route = apply_on_spin_factor(&map, &apply_on_spin_factor(&map, &rho));
            let d_route = apply_two_qubit_on_spin_factor(
                &d,
                &apply_two_qubit_on_spin_factor(&d, &rho),
            );
            let dist = (&c_route - &d_route)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(dist < 1e-9, "dist {dist}");
        }
    }

    #[test]
    fn frozen_sigma0_fidelity_chain() {
        // deterministic σ_O = 0 anchor at the fitted parameters, ρ_s = |+⟩,
        // cross-checked against an independent scipy implementation
        let (_, props) = fitted_props([0.0; 3]);
        let map = build_process_map(&sim_correlations(&props, 810.0), Some(810.0))
            .unwrap();
        let plus = InitialSpin::Plus.projector();
        let expected = [0.8014049817, 0.6066577304, 0.4612910417, 0.3512789576];
        for (k, &e) in expected.iter().enumerate() {
            let (_, f) = compose_and_fidelity(&map, k + 1, &plus).unwrap();
            assert_abs_diff_eq!(f, e, epsilon = 1e-6);
        }
    }

    #[test]
    fn frozen_sigma0_heralded_chain() {
        // pins the full fidelity_chain path (heralded ρ_s construction
        // included) against the independent scipy implementation
        let mut p = QDParams::fitted();
        p.sigma_o_mt = 0.0;
        let mc = MonteCarloConfig::new(1, 0);
        let chain = fidelity_chain(
            &p,
            &mc,
            PulseOptions::default(),
            &FidelityOptions::default(),
        )
        .unwrap();
        let expected = [0.7865627998, 0.5950902825, 0.4525585048, 0.3446308972];
        for (f, e) in chain.f_k.iter().zip(&expected) {
            assert_abs_diff_eq!(f, e, epsilon = 1e-6);
        }
    }

    #[test]
    fn fidelity_chain_monotone_and_traced() {
        let p = QDParams::fitted();
        let mc = MonteCarloConfig::new(60, 11);
        let chain =
            fidelity_chain(&p, &mc, PulseOptions::default(), &FidelityOptions::default())
                .unwrap();
        for w in chain.f_k.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "F_k not non-increasing: {:?}", chain.f_k);
        }
        for (f, tr) in chain.f_k.iter().zip(&chain.trace_k) {
            assert!((0.0..=1.0 + 1e-9).contains(f));
            assert!(*tr > 0.95 && *tr <= 1.0 + 1e-9, "trace {tr}");
        }
    }

    #[test]
    fn singular_constraint_system_detected() {
        // duplicate tomography states make the reconstruction underdetermined
        let ideal = ideal_step_map();
        let mut correlations = correlations_of_map(&ideal);
        correlations[1] = correlations[0];
        assert!(matches!(
            build_process_map(&correlations, None),
            Err(Error::SingularSystem)
        ));
    }
}
