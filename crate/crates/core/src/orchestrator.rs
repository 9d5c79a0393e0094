//! Alternating optimization of the precoders and the reflection vector.

use rand::Rng;
use serde::Serialize;

use crate::channel::ChannelSet;
use crate::config::SystemConfig;
use crate::detection::{DetectionReport, NoiseUncertainty};
use crate::error::{Error, Result};
use crate::hybrid::{hybrid_decompose, HybridPrecoder};
use crate::linalg::{cis, cn_matrix, fro2, CMat, CVec, C64};
use crate::ris::admm_reflection;
use crate::wmmse::{covert_rate, mse_matrix, receive_filter, weight_matrix, wmmse_effective, WmmseProblem};

/// Relative slack allowed on the power and leakage budgets.
pub const FEASIBILITY_SLACK: f64 = 1e-6;

/// Precoders and reflection vector. In fully-digital mode `w_rf` is the
/// identity and `w_bb` carries the whole precoder.
#[derive(Debug, Clone)]
pub struct BeamformerState {
    pub w_rf: CMat,
    pub w_bb: CMat,
    pub w_fd: CMat,
    pub v: CVec,
}

impl BeamformerState {
    pub fn product(&self) -> CMat {
        &self.w_rf * &self.w_bb
    }

    pub fn fully_digital(w: CMat, v: CVec) -> Self {
        let m_a = w.nrows();
        Self { w_rf: CMat::identity(m_a, m_a), w_fd: w.clone(), w_bb: w, v }
    }
}

pub fn random_phases<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| cis(rng.gen_range(0.0..std::f64::consts::TAU)))
}

/// Random unit-modulus `v` and `W_RF`, Gaussian `W_BB` scaled to full power.
pub fn init_beamformers<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> BeamformerState {
    let v = random_phases(rng, cfg.n_ris());
    let w_rf = CMat::from_fn(cfg.m_a, cfg.m_rf, |_, _| cis(rng.gen_range(0.0..std::f64::consts::TAU)));
    let mut w_bb = cn_matrix(rng, cfg.m_rf, cfg.streams);
    let p = fro2(&(&w_rf * &w_bb));
    if p > 0.0 {
        w_bb *= C64::new((cfg.p_max_w() / p).sqrt(), 0.0);
    }
    let w_fd = &w_rf * &w_bb;
    BeamformerState { w_rf, w_bb, w_fd, v }
}

/// Which blocks the alternating loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AoMode {
    pub hybrid: bool,
    pub optimize_ris: bool,
}

impl AoMode {
    pub const PROPOSED: Self = Self { hybrid: true, optimize_ris: true };
    pub const FULLY_DIGITAL: Self = Self { hybrid: false, optimize_ris: true };
    pub const FIXED_SURFACE: Self = Self { hybrid: true, optimize_ris: false };
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub rate: f64,
    /// Rate of the unconstrained fully-digital Stage-I output.
    pub fd_rate: f64,
    pub leakage: f64,
    pub power: f64,
    pub wmmse_iterations: usize,
    pub hybrid_residual: f64,
    pub admm_iterations: usize,
    pub admm_primal_residual: f64,
    pub precoder_accepted: bool,
    pub surface_accepted: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OptimizationTrace {
    pub rows: Vec<TraceRow>,
}

impl OptimizationTrace {
    pub fn rates(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rate).collect()
    }

    /// True when no rate drops by more than `slack` (relative to the larger value).
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].rate >= w[0].rate - slack * w[0].rate.abs().max(1.0))
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: BeamformerState,
    pub rate: f64,
    pub report: DetectionReport,
    pub power: f64,
    pub trace: OptimizationTrace,
    pub converged: bool,
}

struct Budgets {
    p_max: f64,
    p_leak: f64,
    sigma2: f64,
    kappa: f64,
    uncertainty: NoiseUncertainty,
}

fn budgets(cfg: &SystemConfig) -> Budgets {
    Budgets {
        p_max: cfg.p_max_w(),
        p_leak: cfg.p_leak(),
        sigma2: cfg.bob_noise_w(),
        kappa: cfg.kappa,
        uncertainty: cfg.noise_uncertainty(),
    }
}

/// Scales `W_BB` so the state meets both budgets on its effective channels.
fn scale_to_budgets(state: &mut BeamformerState, h_w: &CMat, p_max: f64, p_leak: f64) {
    let mut hp = HybridPrecoder {
        w_rf: state.w_rf.clone(),
        w_bb: state.w_bb.clone(),
        margin: 0.0,
        relative_residual: 0.0,
        residual_trace: vec![],
        rank_deficient: false,
    };
    hp.enforce_budgets(h_w, p_max, p_leak);
    state.w_bb = hp.w_bb;
}

fn evaluate_state(channels: &ChannelSet, state: &BeamformerState, sigma2: f64) -> Result<(f64, f64, f64)> {
    let (h_b, h_w) = channels.effective(&state.v);
    let w = state.product();
    Ok((covert_rate(&h_b, &w, sigma2)?, fro2(&(&h_w * &w)), fro2(&w)))
}

/// Stage I and II for a fixed reflection vector. Returns the candidate
/// state, the Stage-I rate and WMMSE iteration count.
fn precoder_stage(
    cfg: &SystemConfig,
    channels: &ChannelSet,
    state: &BeamformerState,
    mode: AoMode,
    b: &Budgets,
) -> Result<(BeamformerState, f64, usize, f64)> {
    let (h_b, h_w) = channels.effective(&state.v);
    let tol = &cfg.tolerances;
    let run = |p_leak: f64| -> Result<(BeamformerState, f64, usize, f64, f64)> {
        let wm = wmmse_effective(
            WmmseProblem { h_b: &h_b, h_w: &h_w, streams: cfg.streams, p_max: b.p_max, p_leak, sigma2: b.sigma2 },
            Some(&state.product()),
            tol,
        )?;
        if !mode.hybrid {
            let cand = BeamformerState::fully_digital(wm.w.clone(), state.v.clone());
            return Ok((cand, wm.rate, wm.iterations, 0.0, 1.0));
        }
        let mut hp = hybrid_decompose(&wm.w, cfg.m_rf, tol)?;
        let scale = hp.enforce_budgets(&h_w, b.p_max, b.p_leak);
        let residual = hp.relative_residual;
        let cand = BeamformerState { w_rf: hp.w_rf, w_bb: hp.w_bb, w_fd: wm.w, v: state.v.clone() };
        Ok((cand, wm.rate, wm.iterations, residual, scale))
    };
    let (mut cand, mut fd_rate, mut iters, mut residual, scale) = run(b.p_leak)?;
    if mode.hybrid && scale < 1.0 {
        // the hybrid product overshot a budget: rerun Stage I with a tighter
        // leakage target and keep whichever realization rates higher
        let (rate_a, _, _) = evaluate_state(channels, &cand, b.sigma2)?;
        let margin = b.p_leak * (scale * scale * (1.0 - tol.delta_margin_frac));
        let (c2, fd2, it2, res2, _) = run(margin)?;
        let (rate_b, _, _) = evaluate_state(channels, &c2, b.sigma2)?;
        iters += it2;
        if rate_b > rate_a {
            cand = c2;
            fd_rate = fd2;
            residual = res2;
        }
    }
    Ok((cand, fd_rate, iters, residual))
}

/// Alternates Stage-I WMMSE, Stage-II hybrid decomposition and the ADMM
/// surface design. Each block update is kept only if it does not lower the
/// covert rate, so the trace is monotone.
pub fn alternating_optimization(
    cfg: &SystemConfig,
    channels: &ChannelSet,
    init: &BeamformerState,
    mode: AoMode,
) -> Result<Solution> {
    channels.check(cfg)?;
    let b = budgets(cfg);
    let tol = &cfg.tolerances;
    let mut state = init.clone();
    if !mode.hybrid && state.w_rf.shape() != (cfg.m_a, cfg.m_a) {
        state = BeamformerState::fully_digital(state.product(), state.v.clone());
    }
    {
        let (_, h_w) = channels.effective(&state.v);
        scale_to_budgets(&mut state, &h_w, b.p_max, b.p_leak);
    }
    let (mut rate, leak0, pow0) = evaluate_state(channels, &state, b.sigma2)?;
    let mut trace = OptimizationTrace::default();
    trace.rows.push(TraceRow {
        iteration: 0,
        rate,
        fd_rate: rate,
        leakage: leak0,
        power: pow0,
        wmmse_iterations: 0,
        hybrid_residual: 0.0,
        admm_iterations: 0,
        admm_primal_residual: 0.0,
        precoder_accepted: true,
        surface_accepted: false,
    });
    let mut converged = false;
    for t in 1..=tol.ao_max_iter {
        let start_rate = rate;
        let (cand, fd_rate, wmmse_iterations, hybrid_residual) = precoder_stage(cfg, channels, &state, mode, &b)?;
        let (cand_rate, _, _) = evaluate_state(channels, &cand, b.sigma2)?;
        let precoder_accepted = cand_rate >= rate;
        if precoder_accepted {
            state = cand;
            rate = cand_rate;
        }

        let mut admm_iterations = 0;
        let mut admm_primal_residual = 0.0;
        let mut surface_accepted = false;
        if mode.optimize_ris && rate > 0.0 {
            let (h_b, _) = channels.effective(&state.v);
            let w = state.product();
            let u = receive_filter(&h_b, &w, b.sigma2)?;
            let psi = weight_matrix(&mse_matrix(&h_b, &w, &u, b.sigma2)?)?;
            let out = admm_reflection(channels, &state.w_rf, &state.w_bb, &u, &psi, b.p_leak, &state.v, tol)?;
            admm_iterations = out.iterations;
            admm_primal_residual = out.primal_residual;
            // raw iterate first, budget rescaling follows
            let mut candidates = vec![out.last_iterate];
            if !out.kept_input && out.v != candidates[0] {
                candidates.push(out.v);
            }
            for v in candidates {
                let mut cand = state.clone();
                cand.v = v;
                let (_, h_w) = channels.effective(&cand.v);
                scale_to_budgets(&mut cand, &h_w, b.p_max, b.p_leak);
                let (cand_rate, _, _) = evaluate_state(channels, &cand, b.sigma2)?;
                if cand_rate > rate {
                    state = cand;
                    rate = cand_rate;
                    surface_accepted = true;
                }
            }
        }
        let (_, leakage, power) = evaluate_state(channels, &state, b.sigma2)?;
        trace.rows.push(TraceRow {
            iteration: t,
            rate,
            fd_rate,
            leakage,
            power,
            wmmse_iterations,
            hybrid_residual,
            admm_iterations,
            admm_primal_residual,
            precoder_accepted,
            surface_accepted,
        });
        if (rate - start_rate).abs() <= tol.ao_eps * rate.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    let (_, leakage, power) = evaluate_state(channels, &state, b.sigma2)?;
    Ok(Solution {
        rate,
        report: DetectionReport::evaluate(leakage, b.kappa, &b.uncertainty),
        power,
        trace,
        converged,
        state,
    })
}

/// Independent recomputation of rate, leakage and DEP with a feasibility
/// audit against every constraint.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Evaluation {
    pub rate: f64,
    pub power: f64,
    pub report: DetectionReport,
}

pub fn evaluate_solution(sol: &Solution, channels: &ChannelSet, cfg: &SystemConfig, hybrid: bool) -> Result<Evaluation> {
    let b = budgets(cfg);
    let state = &sol.state;
    if state.v.len() != channels.n() {
        return Err(Error::dim("evaluate_solution", format!("v has {} entries", state.v.len())));
    }
    if let Some(i) = state.v.iter().position(|z| (z.norm() - 1.0).abs() > 1e-9) {
        return Err(Error::Infeasible(format!("unit modulus: |v[{i}]| = {}", state.v[i].norm())));
    }
    if hybrid {
        if let Some(z) = state.w_rf.iter().find(|z| (z.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::Infeasible(format!("analog unit modulus: |W_RF entry| = {}", z.norm())));
        }
    }
    let (rate, leakage, power) = evaluate_state(channels, state, b.sigma2)?;
    if power > b.p_max * (1.0 + FEASIBILITY_SLACK) {
        return Err(Error::Infeasible(format!("power {power:e} W exceeds {:e} W", b.p_max)));
    }
    if leakage > b.p_leak * (1.0 + FEASIBILITY_SLACK) {
        return Err(Error::Infeasible(format!("covertness: leakage {leakage:e} W exceeds {:e} W", b.p_leak)));
    }
    let report = DetectionReport::evaluate(leakage, b.kappa, &b.uncertainty);
    if report.min_dep < 1.0 - b.kappa - 1e-6 {
        return Err(Error::Infeasible(format!("covertness: minimum DEP {} below {}", report.min_dep, 1.0 - b.kappa)));
    }
    Ok(Evaluation { rate, power, report })
}
