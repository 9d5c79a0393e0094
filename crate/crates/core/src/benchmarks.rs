//! Reference schemes: fully-digital upper bound, random phases, far-field
//! design, and zero-forcing with a sum-path-gain surface.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, SPEED_OF_LIGHT};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::hybrid::hybrid_decompose;
use crate::linalg::{cis, fro2, project_null_space, right_singular_vectors, unit_phase, vec_norm2, CMat, CVec, C64, PINV_FLOOR};
use crate::orchestrator::{
    alternating_optimization, init_beamformers, random_phases, AoMode, BeamformerState, OptimizationTrace, Solution,
};
use crate::ris::hadamard_factor;
use crate::detection::DetectionReport;
use crate::wmmse::covert_rate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeId {
    Proposed,
    FD,
    RP,
    FF,
    ZF,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [SchemeId::Proposed, SchemeId::FD, SchemeId::RP, SchemeId::FF, SchemeId::ZF];

    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeId::Proposed => "proposed",
            SchemeId::FD => "fd",
            SchemeId::RP => "rp",
            SchemeId::FF => "ff",
            SchemeId::ZF => "zf",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Unknown { kind: "scheme", value: s.to_string() })
    }
}

/// I.i.d. uniform phases.
pub fn random_phase_v<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    random_phases(rng, n)
}

/// Projection of the dominant right singular vectors of `H_B` onto the
/// null space of `H_W`, at full power. The flag is set when that
/// projection vanishes and the zero precoder is returned.
pub fn zf_beamformer(h_b: &CMat, h_w: &CMat, p_max: f64, streams: usize) -> Result<(CMat, bool)> {
    if h_b.ncols() != h_w.ncols() {
        return Err(Error::dim("zf_beamformer", format!("H_B {:?} vs H_W {:?}", h_b.shape(), h_w.shape())));
    }
    let m_a = h_b.ncols();
    let w0 = right_singular_vectors(h_b, streams);
    let w = project_null_space(h_w, &w0, PINV_FLOOR);
    let p = fro2(&w);
    if !(p > 1e-24) {
        return Ok((CMat::zeros(m_a, streams), true));
    }
    Ok((w * C64::new((p_max / p).sqrt(), 0.0), false))
}

/// Outcome of the sum-path-gain ascent.
#[derive(Debug, Clone)]
pub struct PathGainOutcome {
    pub v: CVec,
    pub objective_trace: Vec<f64>,
}

/// Projected gradient ascent on `‖H Θ G W‖_F²` over unit-modulus `v`, with
/// Armijo backtracking from `1/λ_max`.
pub fn sum_path_gain_ris(channels: &ChannelSet, w_rf: &CMat, w_bb: &CMat, v_init: &CVec, max_iter: usize) -> Result<PathGainOutcome> {
    let n = channels.n();
    if v_init.len() != n {
        return Err(Error::dim("sum_path_gain_ris", format!("v has {} entries, expected {n}", v_init.len())));
    }
    let y = &channels.g * (w_rf * w_bb);
    let k = hadamard_factor(&channels.h.adjoint(), &y);
    let f = |v: &CVec| vec_norm2(&(&k * v));
    let small = &k * k.adjoint();
    let lmax = crate::linalg::max_eigenvalue(&small);
    let mut v = v_init.map(|z| unit_phase(z, C64::new(1.0, 0.0)));
    let mut fv = f(&v);
    let mut trace = vec![fv];
    if !(lmax > 0.0) {
        return Ok(PathGainOutcome { v, objective_trace: trace });
    }
    for _ in 0..max_iter {
        let grad = k.adjoint() * (&k * &v) * C64::new(2.0, 0.0);
        let mut tau = 1.0 / lmax;
        let mut next = None;
        for _ in 0..40 {
            let cand = CVec::from_iterator(n, (0..n).map(|i| unit_phase(v[i] + grad[i] * tau, v[i])));
            let fc = f(&cand);
            if fc >= fv {
                next = Some((cand, fc));
                break;
            }
            tau *= 0.5;
        }
        let Some((cand, fc)) = next else { break };
        let gain = fc - fv;
        v = cand;
        fv = fc;
        trace.push(fv);
        if gain <= 1e-10 * fv {
            break;
        }
    }
    Ok(PathGainOutcome { v, objective_trace: trace })
}

/// Rank-one LoS row towards `pos` using the plane-wave approximation of the
/// spherical model, with the receive ULA steering on the left.
fn far_field_channel(channels: &ChannelSet, pos: crate::channel::PolarPosition, m_rx: usize) -> CMat {
    let geo = &channels.geometry;
    let f = geo.carrier_hz;
    let k = 2.0 * std::f64::consts::PI * f / SPEED_OF_LIGHT;
    let elements = geo.surface.positions();
    let n = elements.len();
    let (c, s) = (pos.azimuth_rad.cos(), pos.azimuth_rad.sin());
    let gain = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * f * pos.range_m) / (n as f64).sqrt();
    let ris = CVec::from_iterator(n, elements.iter().map(|p| cis(k * (p[0] * c + p[1] * s)) * gain));
    let rx = CVec::from_fn(m_rx, |m, _| cis(k * geo.rx_spacing * m as f64 * s));
    rx * ris.transpose()
}

/// Same draw of `G`, with `H` and `F` replaced by far-field LoS channels.
pub fn far_field_scenario(channels: &ChannelSet) -> ChannelSet {
    let geo = &channels.geometry;
    ChannelSet {
        g: channels.g.clone(),
        h: far_field_channel(channels, geo.bob, channels.h.nrows()),
        f: far_field_channel(channels, geo.willie, channels.f.nrows()),
        geometry: geo.clone(),
    }
}

/// Runs one scheme on a channel draw from a shared initial state.
pub fn run_scheme<R: Rng + ?Sized>(
    scheme: SchemeId,
    cfg: &SystemConfig,
    channels: &ChannelSet,
    init: &BeamformerState,
    rng: &mut R,
) -> Result<Solution> {
    match scheme {
        SchemeId::Proposed => alternating_optimization(cfg, channels, init, AoMode::PROPOSED),
        SchemeId::FD => alternating_optimization(cfg, channels, init, AoMode::FULLY_DIGITAL),
        SchemeId::RP => {
            let mut start = init.clone();
            start.v = random_phase_v(rng, channels.n());
            alternating_optimization(cfg, channels, &start, AoMode::FIXED_SURFACE)
        }
        SchemeId::FF => alternating_optimization(cfg, &far_field_scenario(channels), init, AoMode::PROPOSED),
        SchemeId::ZF => zero_forcing_scheme(cfg, channels, init),
    }
}

/// Surface from sum-path-gain ascent, then a zero-forcing precoder on the
/// resulting effective channels realized through the hybrid stage.
pub fn zero_forcing_scheme(cfg: &SystemConfig, channels: &ChannelSet, init: &BeamformerState) -> Result<Solution> {
    let p_max = cfg.p_max_w();
    let p_leak = cfg.p_leak();
    let sigma2 = cfg.bob_noise_w();
    let tol = &cfg.tolerances;
    let pg = sum_path_gain_ris(channels, &init.w_rf, &init.w_bb, &init.v, tol.ao_max_iter * 10)?;
    let v = pg.v;
    let (h_b, h_w) = channels.effective(&v);
    let (w_zf, _) = zf_beamformer(&h_b, &h_w, p_max, cfg.streams)?;
    let mut hp = hybrid_decompose(&w_zf, cfg.m_rf, tol)?;
    hp.enforce_budgets(&h_w, p_max, p_leak);
    let state = BeamformerState { w_rf: hp.w_rf, w_bb: hp.w_bb, w_fd: w_zf, v };
    let w = state.product();
    let rate = covert_rate(&h_b, &w, sigma2)?;
    let leakage = fro2(&(&h_w * &w));
    Ok(Solution {
        rate,
        report: DetectionReport::evaluate(leakage, cfg.kappa, &cfg.noise_uncertainty()),
        power: fro2(&w),
        trace: OptimizationTrace::default(),
        converged: true,
        state,
    })
}

/// Draws channels and a shared initial state for one realization.
pub fn draw_realization<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<(ChannelSet, BeamformerState)> {
    let channels = ChannelSet::synthesize(cfg, rng)?;
    let init = init_beamformers(cfg, rng);
    Ok((channels, init))
}
