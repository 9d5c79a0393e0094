//! Scenario configuration: physical layout, power budgets and solver
//! tolerances, loaded from JSON with every key optional.

use std::f64::consts::FRAC_PI_4;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{PolarPosition, SPEED_OF_LIGHT};
use crate::detection::{max_leakage, NoiseUncertainty};
use crate::error::{Error, Result};

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Iteration caps and convergence thresholds for every solver stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub wmmse_eps: f64,
    pub wmmse_max_iter: usize,
    /// Relative bracket width at which the dual bisections stop.
    pub bisection_rel_tol: f64,
    pub bisection_max_iter: usize,
    pub bracket_doublings: usize,
    /// Ratio test on successive residuals of the alternating minimization.
    pub hybrid_eps: f64,
    pub hybrid_max_iter: usize,
    pub mo_eps: f64,
    pub mo_max_iter: usize,
    pub admm_eps: f64,
    pub admm_max_iter: usize,
    pub admm_penalty: f64,
    /// Per-iteration multiplicative growth of the ADMM penalty.
    pub admm_penalty_growth: f64,
    pub admm_dual_factor: f64,
    pub qcqp_max_iter: usize,
    pub dykstra_max_iter: usize,
    pub ao_eps: f64,
    pub ao_max_iter: usize,
    /// Leakage margin as a fraction of the budget, used when M_RF < 2L.
    pub delta_margin_frac: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            wmmse_eps: 1e-4,
            wmmse_max_iter: 100,
            bisection_rel_tol: 1e-10,
            bisection_max_iter: 200,
            bracket_doublings: 60,
            hybrid_eps: 1e-3,
            hybrid_max_iter: 50,
            mo_eps: 1e-10,
            mo_max_iter: 300,
            admm_eps: 1e-4,
            admm_max_iter: 300,
            admm_penalty: 1.0,
            admm_penalty_growth: 1.02,
            admm_dual_factor: 1.0,
            qcqp_max_iter: 500,
            dykstra_max_iter: 200,
            ao_eps: 1e-3,
            ao_max_iter: 30,
            delta_margin_frac: 0.01,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tolerances.wmmse_eps", self.wmmse_eps),
            ("tolerances.bisection_rel_tol", self.bisection_rel_tol),
            ("tolerances.hybrid_eps", self.hybrid_eps),
            ("tolerances.mo_eps", self.mo_eps),
            ("tolerances.admm_eps", self.admm_eps),
            ("tolerances.admm_penalty", self.admm_penalty),
            ("tolerances.admm_dual_factor", self.admm_dual_factor),
            ("tolerances.ao_eps", self.ao_eps),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(cfg_err(field, "must be a positive finite number"));
            }
        }
        let counts = [
            ("tolerances.wmmse_max_iter", self.wmmse_max_iter),
            ("tolerances.bisection_max_iter", self.bisection_max_iter),
            ("tolerances.hybrid_max_iter", self.hybrid_max_iter),
            ("tolerances.mo_max_iter", self.mo_max_iter),
            ("tolerances.admm_max_iter", self.admm_max_iter),
            ("tolerances.qcqp_max_iter", self.qcqp_max_iter),
            ("tolerances.dykstra_max_iter", self.dykstra_max_iter),
            ("tolerances.ao_max_iter", self.ao_max_iter),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(cfg_err(field, "must be at least 1"));
            }
        }
        if !(self.admm_penalty_growth >= 1.0 && self.admm_penalty_growth.is_finite()) {
            return Err(cfg_err("tolerances.admm_penalty_growth", "must be a finite number no smaller than 1"));
        }
        if !(0.0..1.0).contains(&self.delta_margin_frac) {
            return Err(cfg_err("tolerances.delta_margin_frac", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Every physical and algorithmic parameter of one scenario.
///
/// Powers carry their unit in the key (`_dbm`, `_db`); internally the
/// crate works in watts and linear ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub m_a: usize,
    pub m_b: usize,
    pub m_w: usize,
    pub m_rf: usize,
    pub streams: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub n_c: usize,
    pub n_ray: usize,
    pub carrier_hz: f64,
    pub bob_noise_dbm: f64,
    pub willie_noise_dbm: f64,
    pub noise_uncertainty_db: f64,
    pub kappa: f64,
    pub p_max_dbm: f64,
    /// Alice's antenna spacing in wavelengths.
    pub alice_spacing_wl: f64,
    /// Surface element spacing in wavelengths.
    pub ris_spacing_wl: f64,
    /// Bob's and Willie's antenna spacing in wavelengths.
    pub rx_spacing_wl: f64,
    pub alice: PolarPosition,
    pub bob: PolarPosition,
    pub willie: PolarPosition,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub realizations: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            m_a: 64,
            m_b: 4,
            m_w: 4,
            m_rf: 4,
            streams: 2,
            n_y: 90,
            n_z: 8,
            n_c: 5,
            n_ray: 10,
            carrier_hz: 28e9,
            bob_noise_dbm: -110.0,
            willie_noise_dbm: -110.0,
            noise_uncertainty_db: 3.0,
            kappa: 0.01,
            p_max_dbm: 40.0,
            alice_spacing_wl: 0.5,
            ris_spacing_wl: 0.5,
            rx_spacing_wl: 0.5,
            alice: PolarPosition::new(50.0, -FRAC_PI_4),
            bob: PolarPosition::new(15.0, FRAC_PI_4),
            willie: PolarPosition::new(10.0, FRAC_PI_4),
            tolerances: Tolerances::default(),
            seed: 0,
            realizations: 100,
        }
    }
}

fn cfg_err(field: &str, reason: &str) -> Error {
    Error::Config { field: field.to_string(), reason: reason.to_string() }
}

impl SystemConfig {
    /// Parses JSON text; blank input yields the defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: SystemConfig = if text.trim().is_empty() {
            SystemConfig::default()
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config {
                field: json_field_hint(&e.to_string()),
                reason: e.to_string(),
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reduced profile: 30×8 surface and 10 realizations.
    pub fn desk_scale(mut self) -> Self {
        self.n_y = 30;
        self.n_z = 8;
        self.realizations = 10;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("m_a", self.m_a),
            ("m_b", self.m_b),
            ("m_w", self.m_w),
            ("m_rf", self.m_rf),
            ("streams", self.streams),
            ("n_y", self.n_y),
            ("n_z", self.n_z),
            ("n_c", self.n_c),
            ("n_ray", self.n_ray),
            ("realizations", self.realizations),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(cfg_err(field, "must be at least 1"));
            }
        }
        if self.streams > self.m_rf {
            return Err(cfg_err("streams", "must not exceed m_rf (L <= M_RF)"));
        }
        if self.m_rf > self.m_a {
            return Err(cfg_err("m_rf", "must not exceed m_a (M_RF <= M_A)"));
        }
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("alice_spacing_wl", self.alice_spacing_wl),
            ("ris_spacing_wl", self.ris_spacing_wl),
            ("rx_spacing_wl", self.rx_spacing_wl),
            ("noise_uncertainty_db", self.noise_uncertainty_db),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(cfg_err(field, "must be a positive finite number"));
            }
        }
        for (field, v) in [
            ("bob_noise_dbm", self.bob_noise_dbm),
            ("willie_noise_dbm", self.willie_noise_dbm),
            ("p_max_dbm", self.p_max_dbm),
        ] {
            if !v.is_finite() {
                return Err(cfg_err(field, "must be finite"));
            }
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(cfg_err("kappa", "must lie in [0, 1)"));
        }
        for (field, p) in [("alice", self.alice), ("bob", self.bob), ("willie", self.willie)] {
            if !(p.range_m > 0.0 && p.range_m.is_finite()) || !p.azimuth_rad.is_finite() {
                return Err(cfg_err(field, "range must be positive and azimuth finite"));
            }
        }
        self.tolerances.validate()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn n_ris(&self) -> usize {
        self.n_y * self.n_z
    }

    pub fn path_count(&self) -> usize {
        self.n_c * self.n_ray
    }

    pub fn p_max_w(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }

    pub fn bob_noise_w(&self) -> f64 {
        dbm_to_watts(self.bob_noise_dbm)
    }

    pub fn willie_noise_w(&self) -> f64 {
        dbm_to_watts(self.willie_noise_dbm)
    }

    pub fn rho(&self) -> f64 {
        db_to_linear(self.noise_uncertainty_db)
    }

    pub fn noise_uncertainty(&self) -> NoiseUncertainty {
        NoiseUncertainty::new(self.willie_noise_w(), self.rho(), self.m_w)
            .expect("validated config yields a valid uncertainty model")
    }

    pub fn p_leak(&self) -> f64 {
        max_leakage(self.kappa, &self.noise_uncertainty())
    }

    /// True when the RF chain count allows exact hybrid realization.
    pub fn rf_chains_sufficient(&self) -> bool {
        self.m_rf >= 2 * self.streams
    }
}

pub fn load_config(path: &Path) -> Result<SystemConfig> {
    let text = std::fs::read_to_string(path)?;
    SystemConfig::from_json_str(&text)
}

fn json_field_hint(msg: &str) -> String {
    // serde messages quote the offending key as `name`
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = SystemConfig::from_json_str("  \n").unwrap();
        assert_eq!(cfg, SystemConfig::default());
        assert_eq!((cfg.m_a, cfg.m_b, cfg.m_w, cfg.n_y, cfg.n_z), (64, 4, 4, 90, 8));
        assert_eq!((cfg.m_rf, cfg.streams, cfg.n_c, cfg.n_ray), (4, 2, 5, 10));
        assert!((cfg.p_max_w() - 10.0).abs() < 1e-12);
        assert!((cfg.bob_noise_w() - 1e-14).abs() < 1e-26);
    }

    #[test]
    fn streams_above_rf_chains_rejected() {
        let err = SystemConfig::from_json_str(r#"{"streams": 5}"#).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "streams"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_names_field() {
        let err = SystemConfig::from_json_str(r#"{"bogus": 1}"#).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "bogus"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn partial_override() {
        let cfg = SystemConfig::from_json_str(r#"{"kappa": 0.05, "bob": {"range_m": 20.0, "azimuth_rad": 0.1}}"#)
            .unwrap();
        assert_eq!(cfg.kappa, 0.05);
        assert_eq!(cfg.bob.range_m, 20.0);
        assert_eq!(cfg.m_a, 64);
    }

    #[test]
    fn desk_scale_profile() {
        let cfg = SystemConfig::default().desk_scale();
        assert_eq!(cfg.n_ris(), 240);
        assert_eq!(cfg.realizations, 10);
    }
}
