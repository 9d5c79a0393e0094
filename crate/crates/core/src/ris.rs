//! Reflection-vector design by ADMM: a convex QCQP step over the unit
//! discs and the leakage ellipsoid, a phase-alignment step, and a dual
//! ascent step.

use crate::channel::ChannelSet;
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg::{fro2, hermitian_eigen, unit_phase, vec_norm2, CMat, CVec, C64};

const REFINE_MAX_ITER: usize = 5000;

/// Quadratic and linear terms of the reflection subproblem,
/// `v^H Ξ v − 2 Re{v^H c}` subject to `v^H Υ v ≤ p_leak`.
///
/// Both matrices are Hadamard products of low-rank PSD factors, so thin
/// factors `Ξ = J^H J`, `Υ = K^H K` are kept alongside the dense forms.
#[derive(Debug, Clone)]
pub struct RisQuadratics {
    pub xi: CMat,
    pub upsilon: CMat,
    pub c: CVec,
    pub xi_factor: CMat,
    pub upsilon_factor: CMat,
}

/// Rows `(a, l)` of the factor are `conj(P[:, a]) ∘ Y[:, l]`.
pub(crate) fn hadamard_factor(p: &CMat, y: &CMat) -> CMat {
    let n = p.nrows();
    let (ra, rl) = (p.ncols(), y.ncols());
    let mut out = CMat::zeros(ra * rl, n);
    for a in 0..ra {
        for l in 0..rl {
            let row = a * rl + l;
            for j in 0..n {
                out[(row, j)] = p[(j, a)].conj() * y[(j, l)];
            }
        }
    }
    out
}

fn psd_sqrt(psi: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(psi);
    let mut s = vecs.clone();
    for j in 0..vals.len() {
        s.column_mut(j).scale_mut(vals[j].max(0.0).sqrt());
    }
    s * vecs.adjoint()
}

impl RisQuadratics {
    /// `v^H Ξ v − 2 Re{v^H c}`.
    pub fn objective(&self, v: &CVec) -> f64 {
        let jv = &self.xi_factor * v;
        vec_norm2(&jv) - 2.0 * v.dotc(&self.c).re
    }

    pub fn leakage(&self, v: &CVec) -> f64 {
        vec_norm2(&(&self.upsilon_factor * v))
    }

    fn xi_apply(&self, v: &CVec) -> CVec {
        self.xi_factor.adjoint() * (&self.xi_factor * v)
    }

    pub fn xi_max_eigenvalue(&self) -> f64 {
        let small = &self.xi_factor * self.xi_factor.adjoint();
        if small.nrows() == 0 {
            return 0.0;
        }
        hermitian_eigen(&small).0[0].max(0.0)
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }
}

/// Builds `Ξ = A ∘ Bᵀ`, `Υ = F̄ ∘ Bᵀ` and `c = diag(C)` for
/// `A = H^H UΨU^H H`, `B = GŴŴ^H G^H`, `C = H^H UΨŴ^H G^H`, `F̄ = F^H F`.
pub fn build_quadratics(h: &CMat, f: &CMat, g: &CMat, u: &CMat, psi: &CMat, w_hat: &CMat) -> Result<RisQuadratics> {
    let n = g.nrows();
    if h.ncols() != n || f.ncols() != n || g.ncols() != w_hat.nrows() || h.nrows() != u.nrows()
        || u.ncols() != psi.nrows() || psi.ncols() != w_hat.ncols()
    {
        return Err(Error::dim(
            "build_quadratics",
            format!(
                "H {:?}, F {:?}, G {:?}, U {:?}, Ψ {:?}, Ŵ {:?}",
                h.shape(),
                f.shape(),
                g.shape(),
                u.shape(),
                psi.shape(),
                w_hat.shape()
            ),
        ));
    }
    let y = g * w_hat;
    let hu = h.adjoint() * u;
    let p = &hu * psd_sqrt(psi);
    let xi_factor = hadamard_factor(&p, &y);
    let upsilon_factor = hadamard_factor(&f.adjoint(), &y);
    let x = &hu * psi;
    let c = CVec::from_fn(n, |i, _| (0..y.ncols()).map(|l| x[(i, l)] * y[(i, l)].conj()).sum());
    let xi = xi_factor.adjoint() * &xi_factor;
    let upsilon = upsilon_factor.adjoint() * &upsilon_factor;
    Ok(RisQuadratics { xi, upsilon, c, xi_factor, upsilon_factor })
}

/// Eigen-structure of a PSD matrix restricted to its range, for repeated
/// projections onto `{v : v^H Υ v ≤ p}`.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    basis: CMat,
    lambda: Vec<f64>,
}

impl Ellipsoid {
    pub fn from_hermitian(upsilon: &CMat) -> Self {
        let (vals, vecs) = hermitian_eigen(upsilon);
        let top = vals.iter().fold(0.0f64, |a, &b| a.max(b));
        let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-13 * top && top > 0.0).collect();
        let mut basis = CMat::zeros(upsilon.nrows(), keep.len());
        for (j, &i) in keep.iter().enumerate() {
            basis.set_column(j, &vecs.column(i));
        }
        Self { basis, lambda: keep.iter().map(|&i| vals[i]).collect() }
    }

    /// From `K` with `Υ = K^H K`.
    pub fn from_factor(k: &CMat) -> Self {
        let small = k * k.adjoint();
        let (vals, vecs) = hermitian_eigen(&small);
        let top = vals.iter().fold(0.0f64, |a, &b| a.max(b));
        let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-13 * top && top > 0.0).collect();
        let mut basis = CMat::zeros(k.ncols(), keep.len());
        for (j, &i) in keep.iter().enumerate() {
            let col = k.adjoint() * vecs.column(i) / C64::new(vals[i].sqrt(), 0.0);
            basis.set_column(j, &col);
        }
        Self { basis, lambda: keep.iter().map(|&i| vals[i]).collect() }
    }

    pub fn value(&self, v: &CVec) -> f64 {
        let z = self.basis.adjoint() * v;
        z.iter().zip(&self.lambda).map(|(z, l)| l * z.norm_sqr()).sum()
    }

    /// Euclidean projection of `v` onto `{x : x^H Υ x ≤ p}`.
    pub fn project(&self, v: &CVec, p: f64) -> CVec {
        if self.lambda.is_empty() {
            return v.clone();
        }
        let z = self.basis.adjoint() * v;
        let mags: Vec<f64> = z.iter().map(|c| c.norm_sqr()).collect();
        let value = |mu: f64| -> f64 {
            self.lambda.iter().zip(&mags).map(|(l, m)| l * m / (1.0 + mu * l).powi(2)).sum()
        };
        if value(0.0) <= p {
            return v.clone();
        }
        let shrink = |mu: f64| -> CVec {
            let coef = CVec::from_iterator(
                z.len(),
                z.iter().zip(&self.lambda).map(|(zi, l)| zi * (mu * l / (1.0 + mu * l))),
            );
            v - &self.basis * coef
        };
        if !(p > 0.0) {
            return v - &self.basis * z;
        }
        let lmin = self.lambda.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let mut hi = (value(0.0) / p).sqrt() / lmin;
        while value(hi) > p {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if value(mid) > p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        shrink(hi)
    }
}

/// Projection onto the leakage ellipsoid for a dense `Υ`.
pub fn project_ellipsoid(v: &CVec, upsilon: &CMat, p_leak: f64) -> CVec {
    Ellipsoid::from_hermitian(upsilon).project(v, p_leak)
}

fn project_discs(v: &CVec) -> CVec {
    v.map(|z| {
        let r = z.norm();
        if r > 1.0 {
            z / r
        } else {
            z
        }
    })
}

/// Dykstra's alternating projections onto the unit discs and the ellipsoid.
/// The output is scaled into the discs if Dykstra stops short, which keeps
/// it inside the (origin-centred) ellipsoid.
fn project_feasible(y: &CVec, ell: &Ellipsoid, p_leak: f64, max_iter: usize) -> CVec {
    let d = project_discs(y);
    if ell.value(&d) <= p_leak {
        return d;
    }
    let e = ell.project(y, p_leak);
    if e.iter().all(|z| z.norm() <= 1.0) {
        return e;
    }
    let mut x = y.clone();
    let mut p = CVec::zeros(y.len());
    let mut q = CVec::zeros(y.len());
    let scale = vec_norm2(y).max(1.0);
    for _ in 0..max_iter {
        let yk = project_discs(&(&x + &p));
        p = &x + &p - &yk;
        let xn = ell.project(&(&yk + &q), p_leak);
        q = &yk + &q - &xn;
        let change = vec_norm2(&(&xn - &x));
        let gap = vec_norm2(&(&xn - &yk));
        x = xn;
        if change <= 1e-18 * scale && gap <= 1e-18 * scale {
            break;
        }
    }
    let peak = x.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if peak > 1.0 {
        x /= C64::new(peak, 0.0);
    }
    x
}

/// Outcome of the convex v-step.
#[derive(Debug, Clone)]
pub struct VUpdate {
    pub v: CVec,
    pub iterations: usize,
    /// Projected-gradient fixed-point residual relative to the gradient scale.
    pub kkt_residual: f64,
    pub converged: bool,
}

struct VProblem<'a> {
    q: &'a RisQuadratics,
    ell: &'a Ellipsoid,
    xi_scale: f64,
    c_scale: f64,
    p_leak: f64,
    lambda_hint: std::cell::Cell<f64>,
}

impl VProblem<'_> {
    /// `2Ξv − 2c + ϱ(v − φ + ξ/ϱ)` with the scaled quadratic.
    fn gradient(&self, v: &CVec, anchor: &CVec, rho: f64) -> CVec {
        self.q.xi_apply(v) * C64::new(2.0 * self.xi_scale, 0.0) - &self.q.c * C64::new(2.0 * self.c_scale, 0.0)
            + (v - anchor) * C64::new(rho, 0.0)
    }

    fn value(&self, v: &CVec, anchor: &CVec, rho: f64) -> f64 {
        let jv = &self.q.xi_factor * v;
        self.xi_scale * vec_norm2(&jv) - 2.0 * self.c_scale * v.dotc(&self.q.c).re
            + 0.5 * rho * vec_norm2(&(v - anchor))
    }

    /// Exact solve through the low-rank dual when the budget is positive,
    /// projected gradient otherwise.
    fn solve(&self, anchor: &CVec, rho: f64, warm: &CVec, lmax: f64, tol: &Tolerances) -> VUpdate {
        if self.p_leak > 0.0 && self.p_leak.is_finite() {
            if let Some(out) = self.solve_dual(anchor, rho) {
                return out;
            }
        }
        self.solve_projected(anchor, rho, warm, lmax, tol)
    }

    /// Relaxes the leakage constraint with a multiplier `λ` found by
    /// bisection. For fixed `λ` the problem is
    /// `min (ϱ/2)‖v‖² + ‖W v‖² − 2Re{v^H b}` over the discs with
    /// `W = [√a J; √λ K]`, whose minimizer is `v = P((2/ϱ)(b − W^H ν))` at the
    /// unique minimizer `ν` of the strongly convex
    /// `Φ(ν) = ½‖ν‖² + (ϱ/2) Σ m(u_i)`, `m(u) = ½|u|² − ½(|u| − 1)₊²`.
    fn solve_dual(&self, anchor: &CVec, rho: f64) -> Option<VUpdate> {
        let b = &self.q.c * C64::new(self.c_scale, 0.0) + anchor * C64::new(0.5 * rho, 0.0);
        let j = &self.q.xi_factor * C64::new(self.xi_scale.sqrt(), 0.0);
        let k = &self.q.upsilon_factor;
        let (rj, rk) = (j.nrows(), k.nrows());
        let stack = |lambda: f64| -> CMat {
            let mut w = CMat::zeros(rj + rk, b.len());
            w.rows_mut(0, rj).copy_from(&j);
            w.rows_mut(rj, rk).copy_from(&(k * C64::new(lambda.sqrt(), 0.0)));
            w
        };
        let mut nu = CVec::zeros(rj + rk);
        let mut iterations = 0;
        let mut solve_at = |lambda: f64, nu: &mut CVec| -> Option<(CVec, f64)> {
            let w = stack(lambda);
            let (nu_new, v, it, g) = newton_phi(&w, &b, rho, nu)?;
            iterations += it;
            *nu = nu_new;
            Some((v, g))
        };
        let (v0, g0) = solve_at(0.0, &mut nu)?;
        if self.q.leakage(&v0) <= self.p_leak {
            return Some(VUpdate { v: v0, iterations, kkt_residual: g0, converged: g0 <= 1e-5 });
        }
        let leak = |v: &CVec| self.q.leakage(v);
        let excess = |v: &CVec| (leak(v) / self.p_leak).ln();
        // bracket ln λ around the previous multiplier, then Illinois regula falsi
        let kscale = self.ell_top().max(f64::MIN_POSITIVE);
        let hint = self.lambda_hint.get();
        let start = if hint > 0.0 { hint } else { rho / kscale };
        let mut nu_a = nu.clone();
        let (va, ga) = solve_at(start, &mut nu_a)?;
        let (mut lo, mut hi);
        let (mut f_lo, mut f_hi);
        let (mut v_hi, mut g_hi);
        let fa = excess(&va);
        if fa > 0.0 {
            lo = start;
            f_lo = fa;
            hi = start;
            loop {
                hi *= 4.0;
                let (v, g) = solve_at(hi, &mut nu_a)?;
                let f = excess(&v);
                if f <= 0.0 {
                    f_hi = f;
                    v_hi = v;
                    g_hi = g;
                    break;
                }
                lo = hi;
                f_lo = f;
                if hi > 1e300 {
                    return None;
                }
            }
        } else {
            hi = start;
            f_hi = fa;
            v_hi = va;
            g_hi = ga;
            lo = start;
            loop {
                lo /= 4.0;
                let (v, g) = solve_at(lo, &mut nu_a)?;
                let f = excess(&v);
                if f > 0.0 {
                    f_lo = f;
                    break;
                }
                hi = lo;
                f_hi = f;
                v_hi = v;
                g_hi = g;
                if lo < 1e-300 {
                    return None;
                }
            }
        }
        let (mut x_lo, mut x_hi) = (lo.ln(), hi.ln());
        let mut side = 0i8;
        for _ in 0..100 {
            if f_hi >= -1e-10 || x_hi - x_lo <= 1e-13 {
                break;
            }
            let mut x = x_hi - f_hi * (x_hi - x_lo) / (f_hi - f_lo);
            if !(x > x_lo && x < x_hi) {
                x = 0.5 * (x_lo + x_hi);
            }
            let (v, g) = solve_at(x.exp(), &mut nu_a)?;
            let f = excess(&v);
            if f > 0.0 {
                x_lo = x;
                f_lo = f;
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            } else {
                x_hi = x;
                f_hi = f;
                v_hi = v;
                g_hi = g;
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
            }
        }
        self.lambda_hint.set(x_hi.exp());
        let gap = 1.0 - leak(&v_hi) / self.p_leak;
        let kkt = g_hi.max(gap);
        Some(VUpdate { v: v_hi, iterations, kkt_residual: kkt, converged: kkt <= 1e-5 })
    }

    fn ell_top(&self) -> f64 {
        let small = self.q.upsilon_factor.clone() * self.q.upsilon_factor.adjoint();
        if small.nrows() == 0 {
            return 0.0;
        }
        hermitian_eigen(&small).0[0]
    }

    /// Accelerated projected gradient with function-value restart.
    fn solve_projected(&self, anchor: &CVec, rho: f64, warm: &CVec, lmax: f64, tol: &Tolerances) -> VUpdate {
        let lip = 2.0 * self.xi_scale * lmax + rho;
        let step = 1.0 / lip;
        let project = |y: &CVec| project_feasible(y, self.ell, self.p_leak, tol.dykstra_max_iter);
        let mut x = project(warm);
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut fx = self.value(&x, anchor, rho);
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        let gscale = (2.0 * self.c_scale * vec_norm2(&self.q.c).sqrt() + rho * vec_norm2(anchor).sqrt()).max(1e-300);
        while iterations < tol.qcqp_max_iter {
            iterations += 1;
            let g = self.gradient(&y, anchor, rho);
            let x_new = project(&(&y - g * C64::new(step, 0.0)));
            let f_new = self.value(&x_new, anchor, rho);
            if f_new > fx {
                // restart momentum from the last accepted point
                y = x.clone();
                t = 1.0;
                continue;
            }
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x_new + (&x_new - &x) * C64::new((t - 1.0) / t_new, 0.0);
            let moved = vec_norm2(&(&x_new - &x)).sqrt();
            x = x_new;
            fx = f_new;
            t = t_new;
            if moved * lip <= 1e-7 * gscale {
                let gx = self.gradient(&x, anchor, rho);
                let px = project(&(&x - gx * C64::new(step, 0.0)));
                residual = vec_norm2(&(&x - &px)).sqrt() * lip / gscale;
                if residual <= 1e-6 {
                    break;
                }
            }
        }
        if !residual.is_finite() {
            let gx = self.gradient(&x, anchor, rho);
            let px = project(&(&x - gx * C64::new(step, 0.0)));
            residual = vec_norm2(&(&x - &px)).sqrt() * lip / gscale;
        }
        VUpdate { v: x, iterations, kkt_residual: residual, converged: residual <= 1e-5 }
    }
}

fn disc(u: C64) -> C64 {
    let r = u.norm();
    if r > 1.0 {
        u / r
    } else {
        u
    }
}

fn m_value(u: C64) -> f64 {
    let r = u.norm();
    0.5 * r * r - 0.5 * (r - 1.0).max(0.0).powi(2)
}

/// Newton's method with backtracking on `Φ`. Returns `ν`, `v`, the step
/// count and the final gradient norm relative to its scale.
fn newton_phi(w: &CMat, b: &CVec, rho: f64, nu0: &CVec) -> Option<(CVec, CVec, usize, f64)> {
    let (r, n) = w.shape();
    let wh = w.adjoint();
    let u_of = |nu: &CVec| (b - &wh * nu) * C64::new(2.0 / rho, 0.0);
    let phi = |nu: &CVec, u: &CVec| 0.5 * vec_norm2(nu) + 0.5 * rho * u.iter().map(|&z| m_value(z)).sum::<f64>();
    let mut nu = nu0.clone();
    let mut u = u_of(&nu);
    let mut f = phi(&nu, &u);
    let mut steps = 0;
    let mut rel = f64::INFINITY;
    for _ in 0..50 {
        let p = u.map(disc);
        let wp = w * &p;
        let grad = &nu - &wp;
        let scale = vec_norm2(&nu).sqrt() + vec_norm2(&wp).sqrt() + 1e-300;
        rel = vec_norm2(&grad).sqrt() / scale;
        if rel <= 1e-12 {
            break;
        }
        // real 2r × 2r Hessian: I + (2/ϱ)[Emb(Σ c_i w_i w_i^H) − Σ_clip t_i t_iᵀ/|u_i|]
        let mut herm = CMat::zeros(r, r);
        let mut rank1: Vec<(f64, CVec)> = Vec::new();
        for i in 0..n {
            let col = w.column(i);
            let mag = u[i].norm();
            if mag <= 1.0 {
                herm += &col * col.adjoint();
            } else {
                herm += &col * col.adjoint() * C64::new(1.0 / mag, 0.0);
                rank1.push((1.0 / mag, col.into_owned() * (u[i] / mag)));
            }
        }
        let mut h = nalgebra::DMatrix::<f64>::identity(2 * r, 2 * r);
        let c = 2.0 / rho;
        for a in 0..r {
            for bb in 0..r {
                let z = herm[(a, bb)] * c;
                h[(a, bb)] += z.re;
                h[(a + r, bb + r)] += z.re;
                h[(a, bb + r)] -= z.im;
                h[(a + r, bb)] += z.im;
            }
        }
        for (wgt, t) in &rank1 {
            let tr: Vec<f64> = t.iter().map(|z| z.re).chain(t.iter().map(|z| z.im)).collect();
            for a in 0..2 * r {
                for bb in 0..2 * r {
                    h[(a, bb)] -= c * wgt * tr[a] * tr[bb];
                }
            }
        }
        let g_real = nalgebra::DVector::<f64>::from_iterator(2 * r, grad.iter().map(|z| z.re).chain(grad.iter().map(|z| z.im)));
        let chol = h.cholesky()?;
        let d_real = -chol.solve(&g_real);
        let d = CVec::from_fn(r, |i, _| C64::new(d_real[i], d_real[i + r]));
        let slope = g_real.dot(&d_real);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &nu + &d * C64::new(t, 0.0);
            let uc = u_of(&cand);
            let fc = phi(&cand, &uc);
            if fc <= f + 1e-4 * t * slope {
                accepted = f - fc > 1e-15 * f.abs();
                nu = cand;
                u = uc;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        steps += 1;
        if !accepted {
            break;
        }
    }
    let v = u.map(disc);
    Some((nu, v, steps, rel))
}

/// Minimizes `v^HΞv − 2Re{v^Hc} + (ϱ/2)‖v − φ + ξ/ϱ‖²` over the unit
/// discs intersected with the leakage ellipsoid.
pub fn v_update(
    q: &RisQuadratics,
    phi: &CVec,
    dual: &CVec,
    rho: f64,
    p_leak: f64,
    warm: Option<&CVec>,
    tol: &Tolerances,
) -> VUpdate {
    let ell = Ellipsoid::from_factor(&q.upsilon_factor);
    let anchor = phi - dual / C64::new(rho, 0.0);
    let prob = VProblem { q, ell: &ell, xi_scale: 1.0, c_scale: 1.0, p_leak, lambda_hint: Default::default() };
    prob.solve(&anchor, rho, warm.unwrap_or(phi), q.xi_max_eigenvalue(), tol)
}

/// Unit-modulus minimizer of `‖v − φ + ξ/ϱ‖²`; zero entries keep `prev`.
pub fn phi_update(v: &CVec, dual: &CVec, rho: f64, prev: &CVec) -> CVec {
    CVec::from_iterator(
        v.len(),
        (0..v.len()).map(|i| unit_phase(v[i] + dual[i] / rho, prev[i])),
    )
}

/// `ξ ← ξ̄ + factor·ϱ(v − φ)`.
pub fn dual_update(dual: &CVec, v: &CVec, phi: &CVec, rho: f64, factor: f64) -> CVec {
    dual + (v - phi) * C64::new(factor * rho, 0.0)
}

/// Outcome of one reflection design call.
#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub v: CVec,
    pub objective: f64,
    pub leakage: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    /// True when the incoming vector was kept because the ADMM iterate
    /// did not improve on it.
    pub kept_input: bool,
    /// Unit-modulus ADMM iterate at exit, feasible or not.
    pub last_iterate: CVec,
    pub augmented_trace: Vec<f64>,
}

fn tangent(v: &CVec, g: &CVec) -> CVec {
    CVec::from_iterator(v.len(), v.iter().zip(g.iter()).map(|(w, g)| g - w * (g * w.conj()).re))
}

fn re_dot(a: &CVec, b: &CVec) -> f64 {
    a.dotc(b).re
}

/// Pulls a unit-modulus `v` back inside the leakage ellipsoid by Newton
/// steps along the tangent leakage gradient.
fn restore_leakage(q: &RisQuadratics, mut v: CVec, p_leak: f64) -> Option<CVec> {
    let target = p_leak * (1.0 - 1e-9);
    for _ in 0..60 {
        let l = q.leakage(&v);
        if l <= p_leak {
            return Some(v);
        }
        let a = tangent(&v, &(q.upsilon_factor.adjoint() * (&q.upsilon_factor * &v) * C64::new(2.0, 0.0)));
        let an = vec_norm2(&a);
        if !(an > 0.0) {
            return None;
        }
        let beta = (l - target) / an;
        v = CVec::from_iterator(v.len(), v.iter().zip(a.iter()).map(|(w, d)| unit_phase(w - d * beta, *w)));
    }
    (q.leakage(&v) <= p_leak).then_some(v)
}

/// Gradient projection on the product of unit circles for
/// `v^HΞv − 2Re{v^Hc}` with the leakage constraint kept active by
/// restoration. Returns `None` when `v0` cannot be made feasible.
pub fn refine_on_circles(q: &RisQuadratics, v0: &CVec, p_leak: f64, max_iter: usize) -> Option<CVec> {
    let mut v = restore_leakage(q, v0.map(|z| unit_phase(z, C64::new(1.0, 0.0))), p_leak)?;
    let mut f = q.objective(&v);
    let lmax = q.xi_max_eigenvalue();
    let cn = q.c.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    let mut tau = 0.5 / lmax.max(cn).max(f64::MIN_POSITIVE);
    for _ in 0..max_iter {
        let g = tangent(&v, &((q.xi_apply(&v) - &q.c) * C64::new(2.0, 0.0)));
        let mut d = -g;
        if q.leakage(&v) >= p_leak * (1.0 - 1e-4) {
            let a = tangent(&v, &(q.upsilon_factor.adjoint() * (&q.upsilon_factor * &v)));
            let (dot, an) = (re_dot(&a, &d), vec_norm2(&a));
            if dot > 0.0 && an > 0.0 {
                d -= a * C64::new(dot / an, 0.0);
            }
        }
        if !(vec_norm2(&d) > 0.0) {
            break;
        }
        let mut t = tau;
        let mut next = None;
        for _ in 0..40 {
            let step = CVec::from_iterator(v.len(), v.iter().zip(d.iter()).map(|(w, d)| unit_phase(w + d * t, *w)));
            if let Some(cand) = restore_leakage(q, step, p_leak) {
                let fc = q.objective(&cand);
                if fc < f {
                    next = Some((cand, fc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = next else { break };
        let gain = (f - fc) / f.abs().max(f64::MIN_POSITIVE);
        v = cand;
        f = fc;
        tau = 2.0 * t;
        if gain < 1e-12 {
            break;
        }
    }
    Some(v)
}

/// ADMM on prebuilt quadratics. `v_in` is the current reflection vector;
/// the result never has a worse objective than a feasible `v_in`.
pub fn admm_solve(q: &RisQuadratics, p_leak: f64, v_in: &CVec, tol: &Tolerances) -> Result<AdmmOutcome> {
    let n = q.n();
    if v_in.len() != n {
        return Err(Error::dim("admm", format!("v has {} entries, expected {n}", v_in.len())));
    }
    let ell = Ellipsoid::from_factor(&q.upsilon_factor);
    let lmax = q.xi_max_eigenvalue();
    let cmean = q.c.iter().map(|z| z.norm()).sum::<f64>() / n.max(1) as f64;
    // rescale so the per-element terms are O(1) against the unit penalty
    let s = if lmax.max(cmean) > 0.0 { lmax.max(cmean) } else { 1.0 };
    let prob = VProblem { q, ell: &ell, xi_scale: 1.0 / s, c_scale: 1.0 / s, p_leak, lambda_hint: Default::default() };

    let aligned = CVec::from_iterator(n, (0..n).map(|i| unit_phase(q.c[i], v_in[i])));
    let incoming = v_in.map(|z| unit_phase(z, C64::new(1.0, 0.0)));
    let aligned_start = aligned.clone();
    let mut starts = vec![aligned];
    if incoming != starts[0] {
        starts.push(incoming);
    }
    let ok = |v: &CVec| q.leakage(v) <= p_leak * (1.0 + 1e-6);
    let mut best: Option<(f64, CVec, AdmmRun)> = None;
    for start in starts {
        let run = admm_run(&prob, s, start, lmax / s, tol);
        let cand = refine_on_circles(q, &run.phi, p_leak, REFINE_MAX_ITER).unwrap_or_else(|| run.phi.clone());
        let f = q.objective(&cand);
        let better = match &best {
            None => true,
            Some((fb, vb, _)) => (ok(&cand) && !ok(vb)) || (ok(&cand) == ok(vb) && f < *fb),
        };
        if better {
            best = Some((f, cand, run));
        }
    }
    let (mut obj, mut v_out, run) = best.expect("at least one start");
    if let Some(direct) = refine_on_circles(q, &aligned_start, p_leak, REFINE_MAX_ITER) {
        let f = q.objective(&direct);
        if !ok(&v_out) || f < obj {
            (v_out, obj) = (direct, f);
        }
    }
    if ok(v_in) {
        let polished = refine_on_circles(q, v_in, p_leak, REFINE_MAX_ITER).unwrap_or_else(|| v_in.clone());
        let (f_in, f_pol) = (q.objective(v_in), q.objective(&polished));
        if !ok(&v_out) || f_in.min(f_pol) < obj {
            (v_out, obj) = if f_pol < f_in { (polished, f_pol) } else { (v_in.clone(), f_in) };
        }
    }
    let leakage = q.leakage(&v_out);
    Ok(AdmmOutcome {
        kept_input: v_out == *v_in,
        feasible: ok(&v_out),
        v: v_out,
        objective: obj,
        leakage,
        iterations: run.iterations,
        primal_residual: run.primal,
        last_iterate: run.phi,
        augmented_trace: run.trace,
    })
}

struct AdmmRun {
    phi: CVec,
    iterations: usize,
    primal: f64,
    trace: Vec<f64>,
}

fn admm_run(prob: &VProblem<'_>, s: f64, phi0: CVec, xi_top: f64, tol: &Tolerances) -> AdmmRun {
    let q = prob.q;
    let n = q.n();
    let mut phi = phi0;
    let mut v = phi.clone();
    let mut dual = CVec::zeros(n);
    let mut rho = tol.admm_penalty;
    let mut trace = Vec::new();
    let mut prev_aug: Option<f64> = None;
    let mut primal = f64::INFINITY;
    let mut iterations = 0;
    let tight = 1e-3 * (n as f64).sqrt();
    while iterations < tol.admm_max_iter {
        iterations += 1;
        let anchor = &phi - &dual / C64::new(rho, 0.0);
        v = prob.solve(&anchor, rho, &v, xi_top, tol).v;
        let phi_old = phi.clone();
        phi = phi_update(&v, &dual, rho, &phi_old);
        dual = dual_update(&dual, &v, &phi, rho, tol.admm_dual_factor);
        primal = vec_norm2(&(&v - &phi)).sqrt();
        let dual_res = rho * vec_norm2(&(&phi - &phi_old)).sqrt();
        let aug = q.objective(&v) / s + 0.5 * rho * vec_norm2(&(&v - &phi + &dual / C64::new(rho, 0.0)))
            - vec_norm2(&dual) / (2.0 * rho);
        trace.push(aug * s);
        let settled = prev_aug.is_some_and(|p| (aug - p).abs() <= tol.admm_eps * p.abs().max(1e-300));
        prev_aug = Some(aug);
        if settled && primal <= tight {
            break;
        }
        if primal > 10.0 * dual_res {
            rho *= 2.0;
        }
        rho *= tol.admm_penalty_growth;
    }
    AdmmRun { phi, iterations, primal, trace }
}

/// Reflection design for the hybrid precoder `Ŵ = W_RF W_BB` with fixed
/// receive filter `U` and weight `Ψ`.
#[allow(clippy::too_many_arguments)]
pub fn admm_reflection(
    channels: &ChannelSet,
    w_rf: &CMat,
    w_bb: &CMat,
    u: &CMat,
    psi: &CMat,
    p_leak: f64,
    v_in: &CVec,
    tol: &Tolerances,
) -> Result<AdmmOutcome> {
    let w_hat = w_rf * w_bb;
    if fro2(&w_hat) == 0.0 {
        let leak = 0.0;
        return Ok(AdmmOutcome {
            v: v_in.clone(),
            objective: 0.0,
            leakage: leak,
            feasible: true,
            iterations: 0,
            primal_residual: 0.0,
            kept_input: true,
            last_iterate: v_in.clone(),
            augmented_trace: vec![],
        });
    }
    let q = build_quadratics(&channels.h, &channels.f, &channels.g, u, psi, &w_hat)?;
    admm_solve(&q, p_leak, v_in, tol)
}
