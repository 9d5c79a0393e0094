//! Willie's radiometer under bounded noise uncertainty: detection error
//! probability, optimal threshold and the admissible leakage power.
//!
//! The warden is assumed to average infinitely many samples, so the test
//! statistic converges to the received power and only the noise
//! uncertainty randomizes the decision.

use serde::{Deserialize, Serialize};

use crate::channel::scale_rows;
use crate::error::{Error, Result};
use crate::linalg::{fro2, CMat, CVec};

/// Log-uniform uncertainty of the warden's noise power on
/// `[σ̂²/ρ, ρσ̂²]`, per antenna.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseUncertainty {
    pub nominal: f64,
    pub rho: f64,
    pub antennas: usize,
}

impl NoiseUncertainty {
    pub fn new(nominal: f64, rho: f64, antennas: usize) -> Result<Self> {
        if !(nominal > 0.0 && nominal.is_finite()) {
            return Err(Error::param("nominal", "noise power must be positive"));
        }
        if !(rho > 1.0 && rho.is_finite()) {
            return Err(Error::param("rho", "uncertainty factor must exceed 1"));
        }
        if antennas == 0 {
            return Err(Error::param("antennas", "need at least one antenna"));
        }
        Ok(Self { nominal, rho, antennas })
    }

    pub fn from_db(nominal: f64, rho_db: f64, antennas: usize) -> Result<Self> {
        Self::new(nominal, 10f64.powf(rho_db / 10.0), antennas)
    }

    pub fn lower(&self) -> f64 {
        self.nominal / self.rho
    }

    pub fn upper(&self) -> f64 {
        self.rho * self.nominal
    }

    fn mw(&self) -> f64 {
        self.antennas as f64
    }

    /// Leakage at which the minimum DEP reaches zero.
    pub fn saturation_leakage(&self) -> f64 {
        self.mw() * self.nominal * (self.rho - 1.0 / self.rho)
    }
}

pub fn noise_pdf(x: f64, u: &NoiseUncertainty) -> f64 {
    if x >= u.lower() && x <= u.upper() {
        1.0 / (2.0 * u.rho.ln() * x)
    } else {
        0.0
    }
}

/// `‖F Θ G W_RF W_BB‖_F²`.
pub fn leakage_power(f: &CMat, v: &CVec, g: &CMat, w_rf: &CMat, w_bb: &CMat) -> Result<f64> {
    if f.ncols() != v.len() || g.nrows() != v.len() || g.ncols() != w_rf.nrows() || w_rf.ncols() != w_bb.nrows() {
        return Err(Error::dim(
            "leakage_power",
            format!(
                "F {:?}, v {}, G {:?}, W_RF {:?}, W_BB {:?}",
                f.shape(),
                v.len(),
                g.shape(),
                w_rf.shape(),
                w_bb.shape()
            ),
        ));
    }
    let fw = f * scale_rows(g, v) * (w_rf * w_bb);
    Ok(fro2(&fw))
}

pub fn optimal_threshold(z: f64, u: &NoiseUncertainty) -> f64 {
    (u.mw() * u.lower() + z).min(u.mw() * u.upper())
}

/// Detection error probability for threshold `gamma` and leakage `z`.
pub fn dep(gamma: f64, z: f64, u: &NoiseUncertainty) -> f64 {
    let lo = ((gamma - z) / u.mw()).max(u.lower());
    let hi = (gamma / u.mw()).min(u.upper());
    if hi <= lo {
        return 1.0;
    }
    (1.0 - (hi / lo).ln() / (2.0 * u.rho.ln())).clamp(0.0, 1.0)
}

pub fn min_dep(z: f64, u: &NoiseUncertainty) -> f64 {
    if z >= u.saturation_leakage() {
        return 0.0;
    }
    let arg = u.rho * z / (u.mw() * u.nominal);
    (1.0 - arg.ln_1p() / (2.0 * u.rho.ln())).clamp(0.0, 1.0)
}

/// Largest leakage power that keeps the minimum DEP at or above `1 − κ`.
pub fn max_leakage(kappa: f64, u: &NoiseUncertainty) -> f64 {
    let second = (2.0 * kappa * u.rho.ln()).exp_m1() * u.mw() * u.lower();
    u.saturation_leakage().min(second)
}

/// Warden-side summary of a transmit configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub leakage: f64,
    pub threshold: f64,
    pub min_dep: f64,
    pub budget: f64,
    pub kappa: f64,
}

impl DetectionReport {
    pub fn evaluate(z: f64, kappa: f64, u: &NoiseUncertainty) -> Self {
        Self {
            leakage: z,
            threshold: optimal_threshold(z, u),
            min_dep: min_dep(z, u),
            budget: max_leakage(kappa, u),
            kappa,
        }
    }

    pub fn is_covert(&self, rel_slack: f64) -> bool {
        self.leakage <= self.budget * (1.0 + rel_slack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cn_matrix, cn_vector, C64};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn u() -> NoiseUncertainty {
        NoiseUncertainty::from_db(1e-14, 3.0, 4).unwrap()
    }

    #[test]
    fn rejects_invalid() {
        assert!(NoiseUncertainty::new(1.0, 1.0, 1).is_err());
        assert!(NoiseUncertainty::new(0.0, 2.0, 1).is_err());
        assert!(NoiseUncertainty::new(1.0, 2.0, 0).is_err());
    }

    #[test]
    fn pdf_support_and_value() {
        let u = u();
        assert_eq!(noise_pdf(u.lower() * 0.99, &u), 0.0);
        assert_eq!(noise_pdf(u.upper() * 1.01, &u), 0.0);
        let want = 1.0 / (2.0 * 1.9952623149688795f64.ln() * 1e-14);
        assert!((noise_pdf(1e-14, &u) / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pdf_integrates_to_one() {
        // Simpson's rule on a log-spaced grid: ∫ p(x) dx = ∫ p(e^s) e^s ds
        let u = u();
        let (a, b) = (u.lower().ln(), u.upper().ln());
        let n = 2000;
        let h = (b - a) / n as f64;
        let f = |s: f64| noise_pdf(s.exp().clamp(u.lower(), u.upper()), &u) * s.exp();
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        assert!((acc * h / 3.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn leakage_trivial_cases() {
        let one = CMat::from_element(1, 1, C64::new(1.0, 0.0));
        let v = CVec::from_element(1, C64::new(1.0, 0.0));
        assert_eq!(leakage_power(&one, &v, &one, &one, &one).unwrap(), 1.0);
        let zero = CMat::zeros(1, 1);
        assert_eq!(leakage_power(&one, &v, &one, &one, &zero).unwrap(), 0.0);
        assert!(leakage_power(&one, &CVec::zeros(2), &one, &one, &one).is_err());
    }

    #[test]
    fn leakage_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = cn_matrix(&mut rng, 2, 2);
        let g = cn_matrix(&mut rng, 2, 2);
        let wrf = cn_matrix(&mut rng, 2, 2);
        let wbb = cn_matrix(&mut rng, 2, 2);
        let v = cn_vector(&mut rng, 2);
        let mut total = 0.0;
        for a in 0..2 {
            for l in 0..2 {
                let mut s = C64::new(0.0, 0.0);
                for n in 0..2 {
                    for m in 0..2 {
                        for r in 0..2 {
                            s += f[(a, n)] * v[n] * g[(n, m)] * wrf[(m, r)] * wbb[(r, l)];
                        }
                    }
                }
                total += s.norm_sqr();
            }
        }
        let z = leakage_power(&f, &v, &g, &wrf, &wbb).unwrap();
        assert!((z - total).abs() < 1e-12 * total);
    }

    #[test]
    fn threshold_branches() {
        let u = u();
        let mw = 4.0;
        assert_eq!(optimal_threshold(0.0, &u), mw * u.lower());
        assert_eq!(optimal_threshold(1.0, &u), mw * u.upper());
        let zs = u.saturation_leakage();
        let g = optimal_threshold(zs, &u);
        assert!((g / (mw * u.upper()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dep_trivial_cases() {
        let u = u();
        assert_eq!(dep(4.0 * u.nominal, 0.0, &u), 1.0);
        assert_eq!(dep(4.0 * u.lower() * 0.5, 3e-15, &u), 1.0);
    }

    #[test]
    fn optimal_threshold_beats_random_thresholds() {
        let u = u();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = 0.3 * u.saturation_leakage();
        let best = dep(optimal_threshold(z, &u), z, &u);
        for _ in 0..200 {
            let gamma = rng.gen_range(0.1..10.0) * 4.0 * u.nominal;
            assert!(best <= dep(gamma, z, &u) + 1e-15);
        }
    }

    #[test]
    fn min_dep_special_values() {
        let u = u();
        assert_eq!(min_dep(0.0, &u), 1.0);
        assert_eq!(min_dep(u.saturation_leakage(), &u), 0.0);
        let half = 4.0 * u.nominal * (u.rho - 1.0) / u.rho;
        assert!((min_dep(half, &u) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn leakage_budget() {
        let u = u();
        assert_eq!(max_leakage(0.0, &u), 0.0);
        let k = 0.2;
        let second = ((2.0 * k * u.rho.ln()).exp() - 1.0) * 4.0 * u.nominal / u.rho;
        assert!((max_leakage(k, &u) / second - 1.0).abs() < 1e-12);
        assert!(second < u.saturation_leakage());
        assert!((min_dep(max_leakage(k, &u), &u) - (1.0 - k)).abs() < 1e-12);
    }

    #[test]
    fn report_flags_covertness() {
        let u = u();
        let b = max_leakage(0.01, &u);
        assert!(DetectionReport::evaluate(0.5 * b, 0.01, &u).is_covert(0.0));
        assert!(!DetectionReport::evaluate(2.0 * b, 0.01, &u).is_covert(1e-6));
    }
}
