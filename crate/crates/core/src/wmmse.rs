//! Fully-digital precoder design by weighted MMSE with closed-form
//! receive-filter and weight updates and a two-level dual bisection for the
//! power and leakage constraints.

use crate::channel::ChannelSet;
use crate::config::{SystemConfig, Tolerances};
use crate::error::{Error, Result};
use crate::linalg::{
    fro2, hermitian_eigen, hermitian_part, ln_det_hpd, log2_det_eye_plus, orth_basis, pinv_hermitian, project_null_space,
    right_singular_vectors, CMat, CVec, C64, PINV_FLOOR,
};

/// `log2 det(I + σ⁻² H_B W W^H H_B^H)`.
pub fn covert_rate(h_b: &CMat, w: &CMat, sigma2: f64) -> Result<f64> {
    if h_b.ncols() != w.nrows() {
        return Err(Error::dim("covert_rate", format!("H_B {:?} vs W {:?}", h_b.shape(), w.shape())));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::param("sigma2", "noise power must be positive"));
    }
    let hw = h_b * w;
    let gram = hw.adjoint() * &hw / C64::new(sigma2, 0.0);
    Ok(log2_det_eye_plus(&gram))
}

/// `E = (I − U^H H_B W)(I − U^H H_B W)^H + σ² U^H U`.
pub fn mse_matrix(h_b: &CMat, w: &CMat, u: &CMat, sigma2: f64) -> Result<CMat> {
    if h_b.ncols() != w.nrows() || h_b.nrows() != u.nrows() || u.ncols() != w.ncols() {
        return Err(Error::dim(
            "mse_matrix",
            format!("H_B {:?}, W {:?}, U {:?}", h_b.shape(), w.shape(), u.shape()),
        ));
    }
    let l = w.ncols();
    let a = CMat::identity(l, l) - u.adjoint() * h_b * w;
    Ok(hermitian_part(&(&a * a.adjoint() + u.adjoint() * u * C64::new(sigma2, 0.0))))
}

/// MMSE receive filter `(H_B W W^H H_B^H + σ² I)⁻¹ H_B W`.
pub fn receive_filter(h_b: &CMat, w: &CMat, sigma2: f64) -> Result<CMat> {
    if h_b.ncols() != w.nrows() {
        return Err(Error::dim("receive_filter", format!("H_B {:?} vs W {:?}", h_b.shape(), w.shape())));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::numeric("receive_filter", "noise power must be positive for invertibility"));
    }
    let hw = h_b * w;
    let m = h_b.nrows();
    let sys = hermitian_part(&(&hw * hw.adjoint() + CMat::identity(m, m) * C64::new(sigma2, 0.0)));
    let chol = sys.cholesky().ok_or_else(|| Error::numeric("receive_filter", "system not positive definite"))?;
    Ok(chol.solve(&hw))
}

/// `Ψ = E⁻¹`, with a trace-scaled diagonal load when `E` is singular.
pub fn weight_matrix(e: &CMat) -> Result<CMat> {
    let l = e.nrows();
    let e = hermitian_part(e);
    let (vals, _) = hermitian_eigen(&e);
    let top = vals.iter().fold(0.0f64, |a, &b| a.max(b));
    let bottom = vals.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let loaded = if bottom > 1e-14 * top {
        e
    } else {
        let tr: f64 = (0..l).map(|i| e[(i, i)].re).sum();
        if !(tr > 0.0) {
            return Err(Error::numeric("weight_matrix", "MSE matrix is zero; cannot regularize"));
        }
        &e + CMat::identity(l, l) * C64::new(1e-12 * tr / l as f64, 0.0)
    };
    let chol = loaded.cholesky().ok_or_else(|| Error::numeric("weight_matrix", "MSE matrix not positive definite"))?;
    Ok(hermitian_part(&chol.inverse()))
}

/// `Tr(ΨE) − ln det Ψ`; with `Ψ = E⁻¹` this equals `L − ln det E⁻¹`.
pub fn wmmse_objective(e: &CMat, psi: &CMat) -> f64 {
    let tr: f64 = (psi * e).trace().re;
    tr - ln_det_hpd(psi).unwrap_or(f64::NEG_INFINITY)
}

/// `(H_B^H UΨU^H H_B + μI + υH_W^H H_W)^† H_B^H UΨ`.
pub fn wfd_closed_form(h_b: &CMat, h_w: &CMat, u: &CMat, psi: &CMat, mu: f64, upsilon: f64) -> Result<CMat> {
    if h_b.ncols() != h_w.ncols() || h_b.nrows() != u.nrows() || u.ncols() != psi.nrows() {
        return Err(Error::dim(
            "wfd_closed_form",
            format!("H_B {:?}, H_W {:?}, U {:?}, Ψ {:?}", h_b.shape(), h_w.shape(), u.shape(), psi.shape()),
        ));
    }
    let m_a = h_b.ncols();
    let x = h_b.adjoint() * u;
    let r = &x * psi;
    let sys = &r * x.adjoint()
        + CMat::identity(m_a, m_a) * C64::new(mu, 0.0)
        + h_w.adjoint() * h_w * C64::new(upsilon, 0.0);
    if fro2(&sys) == 0.0 {
        if fro2(&r) == 0.0 {
            return Ok(CMat::zeros(m_a, psi.ncols()));
        }
        return Err(Error::numeric("wfd_closed_form", "system matrix is identically zero"));
    }
    Ok(pinv_hermitian(&hermitian_part(&sys), PINV_FLOOR) * r)
}

/// Result of the dual bisection for one precoder update.
#[derive(Debug, Clone)]
pub struct BisectionSolution {
    pub w: CMat,
    pub mu: f64,
    pub upsilon: f64,
    pub power: f64,
    pub leakage: f64,
}

/// The precoder update restricted to `span[H_B^H U, H_W^H]`, outside of
/// which the system matrix acts as `μI` and the right-hand side vanishes.
struct Reduced {
    basis: CMat,
    a: CMat,
    b: CMat,
    r: CMat,
    hw: CMat,
    a_vals: Vec<f64>,
    a_vecs: CMat,
}

/// Closed-form `x(υ)` for a fixed `μ > 0`: with `(A + μI)⁻¹ = KK^H` and
/// `K^H B K = VDV^H`, `x(υ) = KV(I + υD)⁻¹V^H K^H r`.
struct Pencil {
    left: CMat,
    d: Vec<f64>,
    right: CMat,
}

impl Pencil {
    fn eval(&self, upsilon: f64) -> CMat {
        let mut s = self.right.clone();
        for (i, mut row) in s.row_iter_mut().enumerate() {
            row *= C64::new(1.0 / (1.0 + upsilon * self.d[i]), 0.0);
        }
        &self.left * s
    }
}

impl Reduced {
    fn new(h_b: &CMat, h_w: &CMat, u: &CMat, psi: &CMat, null_space: bool) -> Self {
        let x = h_b.adjoint() * u;
        let xn = fro2(&x).sqrt();
        let wn = fro2(h_w).sqrt();
        let basis = if xn == 0.0 {
            CMat::zeros(h_b.ncols(), 0)
        } else if null_space {
            orth_basis(&project_null_space(h_w, &x, PINV_FLOOR), 1e-10)
        } else {
            let mut cols = x.clone() / C64::new(xn, 0.0);
            if wn > 0.0 {
                let hw_cols = h_w.adjoint() / C64::new(wn, 0.0);
                let k = cols.ncols();
                cols = cols.insert_columns(k, hw_cols.ncols(), C64::new(0.0, 0.0));
                cols.columns_mut(k, hw_cols.ncols()).copy_from(&hw_cols);
            }
            orth_basis(&cols, 1e-10)
        };
        let xr = basis.adjoint() * &x;
        let a = hermitian_part(&(&xr * psi * xr.adjoint()));
        let hw = h_w * &basis;
        let b = hermitian_part(&(hw.adjoint() * &hw));
        let r = &xr * psi;
        let (vals, vecs) = hermitian_eigen(&a);
        Self { basis, a, b, r, hw, a_vals: vals.iter().map(|v| v.max(0.0)).collect(), a_vecs: vecs }
    }

    fn dim(&self) -> usize {
        self.basis.ncols()
    }

    fn direct(&self, mu: f64, upsilon: f64) -> CMat {
        let k = self.dim();
        let sys = &self.a + CMat::identity(k, k) * C64::new(mu, 0.0) + &self.b * C64::new(upsilon, 0.0);
        pinv_hermitian(&sys, PINV_FLOOR) * &self.r
    }

    fn pencil(&self, mu: f64) -> Pencil {
        let k = self.dim();
        let mut kmat = self.a_vecs.clone();
        for j in 0..k {
            let s = 1.0 / (self.a_vals[j] + mu).sqrt();
            kmat.column_mut(j).scale_mut(s);
        }
        let t = kmat.adjoint() * &self.b * &kmat;
        let (d, v) = hermitian_eigen(&t);
        let left = &kmat * &v;
        let right = left.adjoint() * &self.r;
        Pencil { left, d: d.iter().map(|x| x.max(0.0)).collect(), right }
    }

    fn power(&self, x: &CMat) -> f64 {
        fro2(x)
    }

    fn leak(&self, x: &CMat) -> f64 {
        fro2(&(&self.hw * x))
    }

    /// Inner search over υ at fixed μ; returns the leakage-feasible end.
    fn solve_upsilon(&self, mu: f64, p_leak: f64, tol: &Tolerances) -> Option<(CMat, f64)> {
        let pencil = if mu > 0.0 { Some(self.pencil(mu)) } else { None };
        let eval = |ups: f64| match &pencil {
            Some(p) => p.eval(ups),
            None => self.direct(mu, ups),
        };
        let x0 = eval(0.0);
        if self.leak(&x0) <= p_leak {
            return Some((x0, 0.0));
        }
        let mut hi = if mu > 0.0 {
            fro2(&self.r) / (mu * p_leak)
        } else {
            let tb: f64 = self.b.trace().re;
            let ta: f64 = self.a.trace().re;
            if tb > 0.0 {
                (ta / tb).max(f64::MIN_POSITIVE)
            } else {
                return None;
            }
        };
        let mut x_hi = eval(hi);
        let mut doublings = 0;
        while self.leak(&x_hi) > p_leak {
            if doublings >= tol.bracket_doublings || !hi.is_finite() {
                return None;
            }
            hi *= 2.0;
            x_hi = eval(hi);
            doublings += 1;
        }
        let mut lo = 0.0;
        for _ in 0..tol.bisection_max_iter {
            if hi - lo <= tol.bisection_rel_tol * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let x = eval(mid);
            let z = self.leak(&x);
            if z <= p_leak {
                hi = mid;
                x_hi = x;
                if z >= p_leak * (1.0 - 1e-12) {
                    break;
                }
            } else {
                lo = mid;
            }
        }
        Some((x_hi, hi))
    }
}

/// Dual bisection for the precoder update (outer search over μ, inner over
/// υ at the current trial μ). A non-positive `p_leak` confines the
/// precoder to the null space of `H_W`.
pub fn bisection_solve(
    h_b: &CMat,
    h_w: &CMat,
    u: &CMat,
    psi: &CMat,
    p_max: f64,
    p_leak: f64,
    tol: &Tolerances,
) -> Result<BisectionSolution> {
    if !(p_max > 0.0) {
        return Err(Error::param("P_max", "power budget must be positive"));
    }
    if h_b.ncols() != h_w.ncols() || h_b.nrows() != u.nrows() || u.ncols() != psi.nrows() {
        return Err(Error::dim(
            "bisection_solve",
            format!("H_B {:?}, H_W {:?}, U {:?}, Ψ {:?}", h_b.shape(), h_w.shape(), u.shape(), psi.shape()),
        ));
    }
    let null_space = !(p_leak > 0.0);
    let p_leak = if null_space { f64::INFINITY } else { p_leak };
    let red = Reduced::new(h_b, h_w, u, psi, null_space);
    let lift = |x: &CMat, mu: f64, upsilon: f64| {
        let w = &red.basis * x;
        BisectionSolution { power: fro2(&w), leakage: fro2(&(h_w * &w)), w, mu, upsilon }
    };
    if red.dim() == 0 || fro2(&red.r) == 0.0 {
        return Ok(BisectionSolution {
            w: CMat::zeros(h_b.ncols(), psi.ncols()),
            mu: 0.0,
            upsilon: 0.0,
            power: 0.0,
            leakage: 0.0,
        });
    }

    if let Some((x, ups)) = red.solve_upsilon(0.0, p_leak, tol) {
        if red.power(&x) <= p_max {
            return Ok(lift(&x, 0.0, ups));
        }
    }

    let mut hi = fro2(&red.r).sqrt() / p_max.sqrt();
    let mut best = None;
    for _ in 0..=tol.bracket_doublings {
        match red.solve_upsilon(hi, p_leak, tol) {
            Some((x, ups)) if red.power(&x) <= p_max => {
                best = Some((x, ups));
                break;
            }
            _ => hi *= 2.0,
        }
    }
    let (mut x_hi, mut ups_hi) =
        best.ok_or_else(|| Error::numeric("bisection_solve", "power multiplier not bracketed after doublings"))?;
    let mut lo = 0.0;
    for _ in 0..tol.bisection_max_iter {
        if hi - lo <= tol.bisection_rel_tol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match red.solve_upsilon(mid, p_leak, tol) {
            Some((x, ups)) if red.power(&x) <= p_max => {
                let p = red.power(&x);
                hi = mid;
                x_hi = x;
                ups_hi = ups;
                if p >= p_max * (1.0 - 1e-12) {
                    break;
                }
            }
            _ => lo = mid,
        }
    }
    Ok(lift(&x_hi, hi, ups_hi))
}

/// Iterates and diagnostics of one WMMSE run.
#[derive(Debug, Clone)]
pub struct WmmseOutput {
    pub w: CMat,
    pub u: CMat,
    pub psi: CMat,
    pub mu: f64,
    pub upsilon: f64,
    pub rate: f64,
    pub iterations: usize,
    /// WMMSE objective evaluated after each precoder update.
    pub objective_trace: Vec<f64>,
    pub rate_trace: Vec<f64>,
}

/// Problem data for a WMMSE run on fixed effective channels.
#[derive(Debug, Clone, Copy)]
pub struct WmmseProblem<'a> {
    pub h_b: &'a CMat,
    pub h_w: &'a CMat,
    pub streams: usize,
    pub p_max: f64,
    pub p_leak: f64,
    pub sigma2: f64,
}

/// Dominant right singular vectors of `H_B`, split evenly across the power budget.
pub fn default_init(h_b: &CMat, streams: usize, p_max: f64) -> CMat {
    right_singular_vectors(h_b, streams) * C64::new((p_max / streams as f64).sqrt(), 0.0)
}

pub fn wmmse_effective(problem: WmmseProblem<'_>, init: Option<&CMat>, tol: &Tolerances) -> Result<WmmseOutput> {
    let WmmseProblem { h_b, h_w, streams, p_max, p_leak, sigma2 } = problem;
    let mut w = match init {
        Some(w0) if fro2(w0) > 0.0 => {
            if w0.shape() != (h_b.ncols(), streams) {
                return Err(Error::dim("wmmse", format!("init {:?}", w0.shape())));
            }
            w0.clone()
        }
        _ => default_init(h_b, streams, p_max),
    };
    let mut objective_trace = Vec::new();
    let mut rate_trace = Vec::new();
    let (mut mu, mut upsilon) = (0.0, 0.0);
    let mut iterations = 0;
    // The initial point may be infeasible, so comparisons start after the
    // first update.
    let mut last_rate: Option<f64> = None;
    loop {
        let u = receive_filter(h_b, &w, sigma2)?;
        let e = mse_matrix(h_b, &w, &u, sigma2)?;
        let psi = weight_matrix(&e).unwrap_or_else(|_| CMat::identity(streams, streams));
        let rate = covert_rate(h_b, &w, sigma2)?;
        let mut converged = false;
        if iterations > 0 {
            objective_trace.push(wmmse_objective(&e, &psi));
            rate_trace.push(rate);
            converged = rate == 0.0
                || last_rate.is_some_and(|p| (rate - p).abs() <= tol.wmmse_eps * rate.abs().max(1e-300));
            last_rate = Some(rate);
        }
        if converged || iterations >= tol.wmmse_max_iter {
            return Ok(WmmseOutput { w, u, psi, mu, upsilon, rate, iterations, objective_trace, rate_trace });
        }
        let sol = bisection_solve(h_b, h_w, &u, &psi, p_max, p_leak, tol)?;
        w = sol.w;
        mu = sol.mu;
        upsilon = sol.upsilon;
        iterations += 1;
    }
}

/// Stage-I design on the effective channels induced by the reflection vector `v`.
pub fn wmmse_fully_digital(
    channels: &ChannelSet,
    v: &CVec,
    cfg: &SystemConfig,
    p_leak: f64,
    init: Option<&CMat>,
) -> Result<WmmseOutput> {
    let (h_b, h_w) = channels.effective(v);
    wmmse_effective(
        WmmseProblem {
            h_b: &h_b,
            h_w: &h_w,
            streams: cfg.streams,
            p_max: cfg.p_max_w(),
            p_leak,
            sigma2: cfg.bob_noise_w(),
        },
        init,
        &cfg.tolerances,
    )
}
