//! Efficiency and entanglement-rate budget: first-lens brightness from the
//! measured fiber rate, and the n-photon rate table at the first lens, in
//! fiber, and at the end of the tomography setup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named transmission factor in one of the setup stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyFactor {
    pub name: String,
    pub transmission: f64,
}

fn factor(name: &str, transmission: f64) -> EfficiencyFactor {
    EfficiencyFactor { name: name.into(), transmission }
}

/// The full efficiency budget of the setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyBudget {
    /// Excitation repetition rate, MHz.
    #[serde(default = "bdefaults::f_mhz")]
    pub f_mhz: f64,
    /// Measured unpolarized single-photon rate in fiber, MHz.
    #[serde(default = "bdefaults::fiber_rate")]
    pub measured_fiber_rate_mhz: f64,
    /// Collection setup efficiency.
    #[serde(default = "bdefaults::eta_c")]
    pub eta_c: f64,
    /// Tomography setup efficiency.
    #[serde(default = "bdefaults::eta_t")]
    pub eta_t: f64,
    /// Three-path demultiplexer single-photon efficiency.
    #[serde(default = "bdefaults::eta_d")]
    pub eta_d: f64,
    #[serde(default = "bdefaults::collection")]
    pub collection_factors: Vec<EfficiencyFactor>,
    #[serde(default = "bdefaults::tomography")]
    pub tomography_factors: Vec<EfficiencyFactor>,
    #[serde(default = "bdefaults::demux")]
    pub demux_factors: Vec<EfficiencyFactor>,
}

mod bdefaults {
    use super::{EfficiencyBudget, EfficiencyFactor};

    pub fn f_mhz() -> f64 {
        81.0
    }
    pub fn fiber_rate() -> f64 {
        0.8
    }
    pub fn eta_c() -> f64 {
        0.43
    }
    pub fn eta_t() -> f64 {
        0.69
    }
    pub fn eta_d() -> f64 {
        0.18
    }
    pub fn collection() -> Vec<EfficiencyFactor> {
        EfficiencyBudget::measured().collection_factors
    }
    pub fn tomography() -> Vec<EfficiencyFactor> {
        EfficiencyBudget::measured().tomography_factors
    }
    pub fn demux() -> Vec<EfficiencyFactor> {
        EfficiencyBudget::measured().demux_factors
    }
}

impl EfficiencyBudget {
    /// The measured budget of the experiment.
    pub fn measured() -> Self {
        Self {
            f_mhz: 81.0,
            measured_fiber_rate_mhz: 0.8,
            eta_c: 0.43,
            eta_t: 0.69,
            eta_d: 0.18,
            collection_factors: vec![
                factor("lens and cryostat window", 0.89),
                factor("excitation waveplates and mirrors", 0.92),
                factor("4 band-pass filters", 0.70),
                factor("fiber coupling", 0.75),
            ],
            tomography_factors: vec![
                factor("2 waveplates and polarizing beam-splitter", 0.86),
                factor("fiber transmission", 0.9),
                factor("detector efficiency", 0.90),
            ],
            demux_factors: vec![
                factor("non-polarizing beam splitter 1", 0.63),
                factor("non-polarizing beam splitter 2", 0.41),
                factor("fiber connector", 0.7),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParams {
                    field: name.into(),
                    reason: format!("efficiency must be in (0, 1], got {v}"),
                })
            }
        };
        check("eta_c", self.eta_c)?;
        check("eta_t", self.eta_t)?;
        check("eta_d", self.eta_d)?;
        if self.f_mhz <= 0.0 || self.measured_fiber_rate_mhz < 0.0 {
            return Err(Error::InvalidParams {
                field: "rates".into(),
                reason: "repetition and fiber rates must be positive".into(),
            });
        }
        Ok(())
    }

    /// Total setup efficiency η_s = η_C η_T η_D, exact.
    pub fn eta_s_exact(&self) -> f64 {
        self.eta_c * self.eta_t * self.eta_d
    }

    /// η_s at its displayed precision (two significant figures), the value
    /// the published brightness derives from.
    pub fn eta_s_displayed(&self) -> f64 {
        round_sig(self.eta_s_exact(), 2)
    }

    /// Deviation of each stage's composite from the product of its factors.
    pub fn factor_product_deviations(&self) -> [(f64, f64); 3] {
        let prod = |fs: &[EfficiencyFactor]| -> f64 {
            fs.iter().map(|f| f.transmission).product()
        };
        [
            (prod(&self.collection_factors), self.eta_c),
            (prod(&self.tomography_factors), self.eta_t),
            (prod(&self.demux_factors), self.eta_d),
        ]
        .map(|(p, eta)| (p, (p - eta).abs()))
    }
}

/// Round to `sig` significant figures.
pub fn round_sig(x: f64, sig: i32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(sig - 1 - magnitude);
    (x * scale).round() / scale
}

/// Result of a brightness derivation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Brightness {
    /// B_FL from the exact product η_C η_T η_D.
    pub exact: f64,
    /// B_FL with η_s at its displayed two-figure precision.
    pub displayed_eta: f64,
}

/// First-lens brightness `B_FL = measured_fiber_rate / (f · η_s)`.
pub fn first_lens_brightness(b: &EfficiencyBudget) -> Result<Brightness> {
    b.validate()?;
    let exact = b.measured_fiber_rate_mhz / (b.f_mhz * b.eta_s_exact());
    let displayed_eta = b.measured_fiber_rate_mhz / (b.f_mhz * b.eta_s_displayed());
    Ok(Brightness { exact, displayed_eta })
}

/// The nine entanglement-generation rates, MHz: rows are (first lens, fiber,
/// n-correlation), columns n = 1, 2, 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateTable {
    pub b_fl: f64,
    /// Exact values.
    pub rates_mhz: [[f64; 3]; 3],
    /// Rounded to two significant figures for table comparison.
    pub rates_rounded: [[f64; 3]; 3],
}

impl RateTable {
    pub const ROW_LABELS: [&'static str; 3] =
        ["at the first lens", "in fiber", "n-correlation rate"];
}

/// Rates `f·B_FLⁿ`, `f·B_FLⁿ·η_Cⁿ`, `f·B_FLⁿ·η_Cⁿ·η_Tⁿ` for n = 1, 2, 3.
pub fn rate_table(b: &EfficiencyBudget, b_fl: f64) -> Result<RateTable> {
    b.validate()?;
    if !(0.0..=1.0).contains(&b_fl) {
        return Err(Error::ProbabilityOutOfRange { name: "b_fl".into(), value: b_fl });
    }
    let mut rates = [[0.0; 3]; 3];
    for (col, n) in (1..=3).enumerate() {
        let first_lens = b.f_mhz * b_fl.powi(n);
        rates[0][col] = first_lens;
        rates[1][col] = first_lens * b.eta_c.powi(n);
        rates[2][col] = rates[1][col] * b.eta_t.powi(n);
    }
    let rounded = rates.map(|row| row.map(|x| round_sig(x, 2)));
    Ok(RateTable { b_fl, rates_mhz: rates, rates_rounded: rounded })
}

/// The nine published rates (MHz) for comparison.
pub const PUBLISHED_RATES_MHZ: [[f64; 3]; 3] =
    [[15.0, 2.8, 0.52], [6.5, 0.52, 0.041], [4.5, 0.25, 0.014]];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn brightness_from_measured_budget() {
        let b = EfficiencyBudget::measured();
        let br = first_lens_brightness(&b).unwrap();
        // with η_s at its displayed precision (0.053) the published 18.6%
        assert_abs_diff_eq!(b.eta_s_displayed(), 0.053, epsilon = 1e-12);
        assert_abs_diff_eq!(br.displayed_eta, 0.186, epsilon = 1e-3);
        // the exact product gives 18.5%
        assert_abs_diff_eq!(br.exact, 0.1849, epsilon = 1e-3);
    }

    #[test]
    fn lossless_source_has_unit_brightness() {
        let mut b = EfficiencyBudget::measured();
        b.measured_fiber_rate_mhz = b.f_mhz * b.eta_s_exact();
        assert_abs_diff_eq!(
            first_lens_brightness(&b).unwrap().exact,
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn brightness_is_linear_in_rate() {
        let b = EfficiencyBudget::measured();
        let mut b2 = b.clone();
        b2.measured_fiber_rate_mhz *= 2.0;
        let r1 = first_lens_brightness(&b).unwrap().exact;
        let r2 = first_lens_brightness(&b2).unwrap().exact;
        assert_abs_diff_eq!(r2, 2.0 * r1, epsilon = 1e-12);
    }

    #[test]
    fn table_matches_published_values() {
        let b = EfficiencyBudget::measured();
        let t = rate_table(&b, 0.186).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(
                    t.rates_rounded[r][c],
                    PUBLISHED_RATES_MHZ[r][c],
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn unit_efficiencies_give_flat_table() {
        let mut b = EfficiencyBudget::measured();
        b.eta_c = 1.0;
        b.eta_t = 1.0;
        let t = rate_table(&b, 1.0).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(t.rates_mhz[r][c], b.f_mhz, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn n1_column_telescopes() {
        let b = EfficiencyBudget::measured();
        let t = rate_table(&b, 0.186).unwrap();
        assert_abs_diff_eq!(t.rates_mhz[1][0] / t.rates_mhz[0][0], b.eta_c, epsilon = 1e-12);
        assert_abs_diff_eq!(t.rates_mhz[2][0] / t.rates_mhz[1][0], b.eta_t, epsilon = 1e-12);
    }

    #[test]
    fn entries_strictly_decrease() {
        let b = EfficiencyBudget::measured();
        let t = rate_table(&b, 0.186).unwrap();
        for r in 0..3 {
            assert!(t.rates_mhz[r][0] > t.rates_mhz[r][1]);
            assert!(t.rates_mhz[r][1] > t.rates_mhz[r][2]);
        }
        for c in 0..3 {
            assert!(t.rates_mhz[0][c] > t.rates_mhz[1][c]);
            assert!(t.rates_mhz[1][c] > t.rates_mhz[2][c]);
        }
    }

    #[test]
    fn factor_products_match_composites() {
        let b = EfficiencyBudget::measured();
        let dev = b.factor_product_deviations();
        // collection: 0.89·0.92·0.70·0.75 = 0.4299 vs 0.43
        assert!(dev[0].1 < 0.005, "collection deviation {}", dev[0].1);
        // tomography: 0.86·0.9·0.90 = 0.6966, which rounds to 0.70, not the
        // displayed 0.69; the deviation is 0.0066
        assert!(dev[1].1 < 0.0075, "tomography deviation {}", dev[1].1);
        assert_abs_diff_eq!(dev[1].0, 0.6966, epsilon = 1e-10);
        // demux: 0.63·0.41·0.7 = 0.1808 vs 0.18
        assert!(dev[2].1 < 0.005, "demux deviation {}", dev[2].1);
    }

    #[test]
    fn round_sig_behaviour() {
        assert_abs_diff_eq!(round_sig(15.066, 2), 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(round_sig(0.52119, 2), 0.52, epsilon = 1e-12);
        assert_abs_diff_eq!(round_sig(0.041435, 2), 0.041, epsilon = 1e-12);
        assert_abs_diff_eq!(round_sig(0.053406, 2), 0.053, epsilon = 1e-12);
        assert_abs_diff_eq!(round_sig(0.0, 2), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_invalid_budget() {
        let mut b = EfficiencyBudget::measured();
        b.eta_c = 0.0;
        assert!(first_lens_brightness(&b).is_err());
        let b = EfficiencyBudget::measured();
        assert!(rate_table(&b, 1.5).is_err());
    }
}
