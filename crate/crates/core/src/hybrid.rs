//! Hybrid decomposition `W_FD ≈ W_RF W_BB` with a unit-modulus analog
//! stage: least-squares baseband updates alternating with Riemannian
//! conjugate gradient on the product of complex circles.

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg::{fro2, hermitian_part, left_singular_vectors, pinv, unit_phase, vec_norm2, CMat, CVec, C64, ONE, PINV_FLOOR};

const ARMIJO_C: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const ARMIJO_MAX_HALVINGS: usize = 50;

/// Analog and baseband precoders plus decomposition diagnostics.
#[derive(Debug, Clone)]
pub struct HybridPrecoder {
    pub w_rf: CMat,
    pub w_bb: CMat,
    /// Leakage margin applied upstream, watts.
    pub margin: f64,
    /// `‖W_FD − W_RF W_BB‖_F / ‖W_FD‖_F` at exit.
    pub relative_residual: f64,
    /// Squared normalized residual after each alternating round.
    pub residual_trace: Vec<f64>,
    pub rank_deficient: bool,
}

impl HybridPrecoder {
    pub fn product(&self) -> CMat {
        &self.w_rf * &self.w_bb
    }

    /// Scales `W_BB` down until both the power budget and the leakage budget
    /// hold; returns the applied amplitude factor.
    pub fn enforce_budgets(&mut self, h_w: &CMat, p_max: f64, p_leak: f64) -> f64 {
        let w = self.product();
        let power = fro2(&w);
        let leak = fro2(&(h_w * &w));
        let mut s: f64 = 1.0;
        if power > p_max {
            s = s.min((p_max / power).sqrt());
        }
        if leak > p_leak {
            s = s.min((p_leak.max(0.0) / leak).sqrt());
        }
        if s < 1.0 {
            // shave a hair below the boundary so roundoff cannot push us over
            let s = s * (1.0 - 1e-12);
            self.w_bb *= C64::new(s, 0.0);
            return s;
        }
        1.0
    }
}

/// Least-squares baseband precoder for a fixed analog stage. The flag is
/// set when `W_RF` is rank deficient and the pseudo-inverse was used.
pub fn baseband_ls(w_rf: &CMat, w_fd: &CMat) -> Result<(CMat, bool)> {
    if w_rf.nrows() != w_fd.nrows() {
        return Err(Error::dim("baseband_ls", format!("W_RF {:?} vs W_FD {:?}", w_rf.shape(), w_fd.shape())));
    }
    let gram = hermitian_part(&(w_rf.adjoint() * w_rf));
    let rhs = w_rf.adjoint() * w_fd;
    let diag_max = (0..gram.nrows()).map(|i| gram[(i, i)].re).fold(0.0f64, f64::max);
    if let Some(chol) = gram.clone().cholesky() {
        let l = chol.l();
        let dmin = (0..l.nrows()).map(|i| l[(i, i)].re).fold(f64::INFINITY, f64::min);
        if dmin * dmin > 1e-10 * diag_max {
            return Ok((chol.solve(&rhs), false));
        }
    }
    Ok((pinv(w_rf, PINV_FLOOR) * w_fd, true))
}

fn reshape(w_vec: &CVec, rows: usize) -> CMat {
    CMat::from_column_slice(rows, w_vec.len() / rows, w_vec.as_slice())
}

fn vectorize(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// `e(w) = ‖vec(W_FD) − (W_BBᵀ ⊗ I) w‖²`.
pub fn hybrid_objective(w_vec: &CVec, w_bb: &CMat, w_fd: &CMat) -> f64 {
    let w_rf = reshape(w_vec, w_fd.nrows());
    fro2(&(w_fd - w_rf * w_bb))
}

/// `2K^H K w − 2K^H vec(W_FD)` with `K = W_BBᵀ ⊗ I_{M_A}`, evaluated as
/// `vec(2 (W_RF W_BB − W_FD) W_BB^H)`.
pub fn euclidean_gradient(w_vec: &CVec, w_bb: &CMat, w_fd: &CMat) -> Result<CVec> {
    let m_a = w_fd.nrows();
    if m_a == 0 || w_vec.len() != m_a * w_bb.nrows() || w_bb.ncols() != w_fd.ncols() {
        return Err(Error::dim(
            "euclidean_gradient",
            format!("w {} , W_BB {:?}, W_FD {:?}", w_vec.len(), w_bb.shape(), w_fd.shape()),
        ));
    }
    let w_rf = reshape(w_vec, m_a);
    let g = (w_rf * w_bb - w_fd) * w_bb.adjoint() * C64::new(2.0, 0.0);
    Ok(vectorize(&g))
}

/// Projection onto the tangent space of the circle product at `w`.
pub fn riemannian_gradient(w_vec: &CVec, eucl_grad: &CVec) -> CVec {
    CVec::from_iterator(
        w_vec.len(),
        w_vec.iter().zip(eucl_grad.iter()).map(|(w, g)| g - w * (g * w.conj()).re),
    )
}

/// Transports a tangent vector to the tangent space at `w` by projection.
pub fn vector_transport(d_prev: &CVec, w_vec: &CVec) -> CVec {
    riemannian_gradient(w_vec, d_prev)
}

/// Entrywise `(w + τd)/|w + τd|`; a vanishing entry keeps its old value.
pub fn retract(w_vec: &CVec, direction: &CVec, tau: f64) -> CVec {
    CVec::from_iterator(
        w_vec.len(),
        w_vec.iter().zip(direction.iter()).map(|(w, d)| unit_phase(w + d * tau, *w)),
    )
}

#[derive(Debug, Clone)]
pub struct MoOutcome {
    pub w_rf: CMat,
    pub objective: f64,
    pub iterations: usize,
    pub stalled: bool,
    pub grad_norm_init: f64,
    pub grad_norm_final: f64,
    pub objective_trace: Vec<f64>,
}

fn re_inner(a: &CVec, b: &CVec) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Riemannian conjugate gradient (Polak-Ribière+, Armijo backtracking)
/// for the analog precoder with `W_BB` held fixed.
pub fn mo_analog(w_fd: &CMat, w_bb: &CMat, w_rf_init: &CMat, tol: &Tolerances) -> Result<MoOutcome> {
    if w_rf_init.shape() != (w_fd.nrows(), w_bb.nrows()) {
        return Err(Error::dim("mo_analog", format!("W_RF {:?}", w_rf_init.shape())));
    }
    let m_a = w_fd.nrows();
    let mut w = vectorize(w_rf_init);
    let mut f = hybrid_objective(&w, w_bb, w_fd);
    let mut g = riemannian_gradient(&w, &euclidean_gradient(&w, w_bb, w_fd)?);
    let grad_norm_init = vec_norm2(&g).sqrt();
    let mut d = -g.clone();
    let scale = fro2(w_fd).max(fro2(w_bb)).max(f64::MIN_POSITIVE);
    let mut trace = vec![f];
    let mut stalled = false;
    let mut iterations = 0;
    while iterations < tol.mo_max_iter {
        let gn2 = vec_norm2(&g);
        if f <= 1e-30 * scale || gn2 <= 1e-30 * scale * scale {
            break;
        }
        let mut slope = re_inner(&g, &d);
        if slope >= 0.0 {
            d = -g.clone();
            slope = -gn2;
        }
        let mut tau = 1.0;
        let mut accepted = None;
        for _ in 0..=ARMIJO_MAX_HALVINGS {
            let cand = retract(&w, &d, tau);
            let fc = hybrid_objective(&cand, w_bb, w_fd);
            if fc <= f + ARMIJO_C * tau * slope {
                accepted = Some((cand, fc));
                break;
            }
            tau *= ARMIJO_SHRINK;
        }
        let Some((w_new, f_new)) = accepted else {
            stalled = true;
            break;
        };
        iterations += 1;
        let g_new = riemannian_gradient(&w_new, &euclidean_gradient(&w_new, w_bb, w_fd)?);
        let g_old_t = vector_transport(&g, &w_new);
        let d_old_t = vector_transport(&d, &w_new);
        let beta = (re_inner(&g_new, &(&g_new - &g_old_t)) / gn2).max(0.0);
        d = -&g_new + d_old_t * C64::new(beta, 0.0);
        let decrease = (f - f_new) / f.max(f64::MIN_POSITIVE);
        w = w_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        if decrease < tol.mo_eps {
            break;
        }
    }
    Ok(MoOutcome {
        w_rf: reshape(&w, m_a),
        objective: f,
        iterations,
        stalled,
        grad_norm_init,
        grad_norm_final: vec_norm2(&g).sqrt(),
        objective_trace: trace,
    })
}

fn phases_of(m: &CMat) -> CMat {
    m.map(|z| unit_phase(z, ONE))
}

/// Exact realization with two analog columns per stream: every entry is
/// written as `c (e^{jα} + e^{jβ})` with `c` at least half the largest
/// modulus in its column. Requires `M_RF ≥ 2L`.
pub fn two_phasor_realization(w_fd: &CMat, m_rf: usize) -> Option<(CMat, CMat)> {
    let (m_a, l) = w_fd.shape();
    if m_rf < 2 * l {
        return None;
    }
    let mut w_rf = CMat::from_element(m_a, m_rf, ONE);
    let mut w_bb = CMat::zeros(m_rf, l);
    for s in 0..l {
        let col = w_fd.column(s);
        let c = 0.5 * col.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        if c == 0.0 {
            continue;
        }
        for i in 0..m_a {
            let z = col[i];
            let spread = (z.norm() / (2.0 * c)).clamp(0.0, 1.0).acos();
            w_rf[(i, 2 * s)] = C64::from_polar(1.0, z.arg() + spread);
            w_rf[(i, 2 * s + 1)] = C64::from_polar(1.0, z.arg() - spread);
        }
        w_bb[(2 * s, s)] = C64::new(c, 0.0);
        w_bb[(2 * s + 1, s)] = C64::new(c, 0.0);
    }
    Some((w_rf, w_bb))
}

/// Alternating minimization of `‖W_FD − W_RF W_BB‖_F` starting from the
/// phases of the leading left singular vectors of `W_FD`.
pub fn hybrid_decompose(w_fd: &CMat, m_rf: usize, tol: &Tolerances) -> Result<HybridPrecoder> {
    if m_rf == 0 {
        return Err(Error::param("M_RF", "need at least one RF chain"));
    }
    let (m_a, l) = w_fd.shape();
    if m_rf > m_a {
        return Err(Error::param("M_RF", "cannot exceed the number of antennas"));
    }
    let norm = fro2(w_fd).sqrt();
    if norm == 0.0 {
        return Ok(HybridPrecoder {
            w_rf: CMat::from_element(m_a, m_rf, ONE),
            w_bb: CMat::zeros(m_rf, l),
            margin: 0.0,
            relative_residual: 0.0,
            residual_trace: vec![0.0],
            rank_deficient: false,
        });
    }
    // Work on the unit-norm target so the Armijo step scale is problem independent.
    let target = w_fd / C64::new(norm, 0.0);
    let mut w_rf = phases_of(&left_singular_vectors(&target, m_rf));
    let (mut w_bb, mut rank_deficient) = baseband_ls(&w_rf, &target)?;
    let mut e_prev = fro2(&(&target - &w_rf * &w_bb));
    let mut trace = vec![e_prev];
    for _ in 0..tol.hybrid_max_iter {
        if e_prev <= 1e-28 {
            break;
        }
        let mo = mo_analog(&target, &w_bb, &w_rf, tol)?;
        w_rf = mo.w_rf;
        let (bb, rd) = baseband_ls(&w_rf, &target)?;
        w_bb = bb;
        rank_deficient = rd;
        let e = fro2(&(&target - &w_rf * &w_bb));
        trace.push(e);
        let ratio = e / e_prev;
        e_prev = e;
        if ratio < tol.hybrid_eps || ratio > 1.0 - 1e-9 {
            break;
        }
    }
    if m_rf >= 2 * l && e_prev > 0.0 {
        if let Some((rf, bb)) = two_phasor_realization(&target, m_rf) {
            let e = fro2(&(&target - &rf * &bb));
            if e < e_prev {
                w_rf = rf;
                w_bb = bb;
                e_prev = e;
                rank_deficient = false;
                trace.push(e);
            }
        }
    }
    Ok(HybridPrecoder {
        w_rf,
        w_bb: w_bb * C64::new(norm, 0.0),
        margin: 0.0,
        relative_residual: e_prev.sqrt(),
        residual_trace: trace,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cis, cn_matrix, cn_vector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_phase_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| cis(rng.gen_range(0.0..std::f64::consts::TAU)))
    }

    fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| cis(rng.gen_range(0.0..std::f64::consts::TAU)))
    }

    #[test]
    fn baseband_inverts_square_dft() {
        let n = 4;
        let dft = CMat::from_fn(n, n, |i, k| cis(-std::f64::consts::TAU * (i * k) as f64 / n as f64));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w_fd = cn_matrix(&mut rng, n, 2);
        let (bb, flag) = baseband_ls(&dft, &w_fd).unwrap();
        assert!(!flag);
        assert!((&dft * bb - w_fd).norm() < 1e-12);
    }

    #[test]
    fn baseband_is_least_squares_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w_rf = random_phase_matrix(&mut rng, 6, 2);
        let w_fd = cn_matrix(&mut rng, 6, 1);
        let (bb, _) = baseband_ls(&w_rf, &w_fd).unwrap();
        let best = fro2(&(&w_fd - &w_rf * &bb));
        let resid = &w_fd - &w_rf * &bb;
        assert!((w_rf.adjoint() * resid).norm() < 1e-12);
        for _ in 0..1000 {
            let probe = &bb + cn_matrix(&mut rng, 2, 1) * C64::new(0.1, 0.0);
            assert!(fro2(&(&w_fd - &w_rf * probe)) >= best - 1e-12);
        }
    }

    #[test]
    fn baseband_flags_rank_deficiency() {
        let w_rf = CMat::from_element(4, 2, ONE);
        let w_fd = CMat::from_element(4, 1, ONE);
        let (bb, flag) = baseband_ls(&w_rf, &w_fd).unwrap();
        assert!(flag);
        assert!((&w_rf * bb - w_fd).norm() < 1e-10);
    }

    #[test]
    fn objective_matches_frobenius_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w_rf = random_phase_matrix(&mut rng, 5, 3);
        let w_bb = cn_matrix(&mut rng, 3, 2);
        let w_fd = cn_matrix(&mut rng, 5, 2);
        let e = hybrid_objective(&vectorize(&w_rf), &w_bb, &w_fd);
        // (W_BBᵀ ⊗ I) vec(W_RF) = vec(W_RF W_BB)
        let k = w_bb.transpose().kronecker(&CMat::identity(5, 5));
        let direct = vec_norm2(&(vectorize(&w_fd) - k * vectorize(&w_rf)));
        assert!((e - direct).abs() <= 1e-10 * direct.max(1.0));
    }

    #[test]
    fn euclidean_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = cn_vector(&mut rng, 8);
        let w_bb = cn_matrix(&mut rng, 2, 2);
        let w_fd = cn_matrix(&mut rng, 4, 2);
        let g = euclidean_gradient(&w, &w_bb, &w_fd).unwrap();
        let h = 1e-6;
        for i in 0..8 {
            for (dir, take) in [(C64::new(1.0, 0.0), g[i].re), (C64::new(0.0, 1.0), g[i].im)] {
                let mut up = w.clone();
                up[i] += dir * h;
                let mut dn = w.clone();
                dn[i] -= dir * h;
                let fd = (hybrid_objective(&up, &w_bb, &w_fd) - hybrid_objective(&dn, &w_bb, &w_fd)) / (2.0 * h);
                assert!((fd - take).abs() <= 1e-6 * take.abs().max(1.0), "{fd} vs {take}");
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_exact_fit_and_zero_baseband() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w_rf = random_phase_matrix(&mut rng, 4, 2);
        let w_bb = cn_matrix(&mut rng, 2, 1);
        let w_fd = &w_rf * &w_bb;
        assert!(vec_norm2(&euclidean_gradient(&vectorize(&w_rf), &w_bb, &w_fd).unwrap()) < 1e-24);
        let zero = CMat::zeros(2, 1);
        assert_eq!(vec_norm2(&euclidean_gradient(&vectorize(&w_rf), &zero, &w_fd).unwrap()), 0.0);
    }

    #[test]
    fn riemannian_gradient_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random_unit(&mut rng, 6);
        assert!(vec_norm2(&riemannian_gradient(&w, &w)) < 1e-28);
        let tangential = &w * C64::new(0.0, 1.0);
        assert!((riemannian_gradient(&w, &tangential) - &tangential).norm() < 1e-15);
        let g = riemannian_gradient(&w, &cn_vector(&mut rng, 6));
        for i in 0..6 {
            assert!((g[i] * w[i].conj()).re.abs() < 1e-14);
        }
        let t = vector_transport(&cn_vector(&mut rng, 6), &w);
        for i in 0..6 {
            assert!((t[i] * w[i].conj()).re.abs() < 1e-14);
        }
    }

    #[test]
    fn retraction_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random_unit(&mut rng, 6);
        assert!((retract(&w, &cn_vector(&mut rng, 6), 0.0) - &w).norm() < 1e-15);
        let tau = 1e-4;
        let r = retract(&w, &(&w * C64::new(0.0, 1.0)), tau);
        for i in 0..6 {
            assert!(((r[i] * w[i].conj()).arg() - tau).abs() < 1e-10);
        }
        let r = retract(&w, &cn_vector(&mut rng, 6), 0.7);
        assert!(r.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let keep = retract(&w, &(-&w), 1.0);
        assert!((keep - &w).norm() < 1e-15);
    }

    #[test]
    fn manifold_step_on_exact_fit_returns_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w_rf = random_phase_matrix(&mut rng, 4, 2);
        let w_bb = cn_matrix(&mut rng, 2, 1);
        let out = mo_analog(&(&w_rf * &w_bb), &w_bb, &w_rf, &Tolerances::default()).unwrap();
        assert!(out.objective <= 1e-20);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn manifold_step_beats_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w_fd = cn_matrix(&mut rng, 4, 1);
        let w_bb = cn_matrix(&mut rng, 2, 1);
        let init = random_phase_matrix(&mut rng, 4, 2);
        let out = mo_analog(&w_fd, &w_bb, &init, &Tolerances::default()).unwrap();
        let e0 = hybrid_objective(&vectorize(&init), &w_bb, &w_fd);
        assert!(out.objective <= e0);
        assert!(out.grad_norm_final <= out.grad_norm_init);
        for pair in out.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
        assert!(out.w_rf.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let best_probe = (0..10_000)
            .map(|_| hybrid_objective(&vectorize(&random_phase_matrix(&mut rng, 4, 2)), &w_bb, &w_fd))
            .fold(f64::INFINITY, f64::min);
        assert!(out.objective <= best_probe + 1e-9);
    }

    #[test]
    fn two_chains_per_stream_realize_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let w_fd = cn_matrix(&mut rng, 8, 1);
            let hp = hybrid_decompose(&w_fd, 2, &Tolerances::default()).unwrap();
            assert!(hp.relative_residual <= 1e-6, "{}", hp.relative_residual);
            assert!((hp.product() - &w_fd).norm() <= 1e-6 * w_fd.norm());
            assert!(hp.w_rf.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn full_rf_chains_are_near_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w_fd = cn_matrix(&mut rng, 4, 2);
        let hp = hybrid_decompose(&w_fd, 4, &Tolerances::default()).unwrap();
        assert!(hp.relative_residual < 1e-6);
    }

    #[test]
    fn residual_trace_is_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w_fd = cn_matrix(&mut rng, 16, 3);
        let hp = hybrid_decompose(&w_fd, 4, &Tolerances::default()).unwrap();
        for pair in hp.residual_trace.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-9));
        }
        assert!(hp.w_rf.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_target_and_bad_chain_counts() {
        let hp = hybrid_decompose(&CMat::zeros(4, 1), 2, &Tolerances::default()).unwrap();
        assert_eq!(hp.relative_residual, 0.0);
        assert!(hybrid_decompose(&CMat::zeros(4, 1), 0, &Tolerances::default()).is_err());
        assert!(hybrid_decompose(&CMat::zeros(4, 1), 5, &Tolerances::default()).is_err());
    }

    #[test]
    fn budgets_are_enforced_by_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w_fd = cn_matrix(&mut rng, 6, 2);
        let h_w = cn_matrix(&mut rng, 2, 6);
        let mut hp = hybrid_decompose(&w_fd, 4, &Tolerances::default()).unwrap();
        let s = hp.enforce_budgets(&h_w, 0.5, 0.01);
        assert!(s < 1.0);
        let w = hp.product();
        assert!(fro2(&w) <= 0.5 && fro2(&(&h_w * &w)) <= 0.01);
        assert_eq!(hp.enforce_budgets(&h_w, 0.5, 0.01), 1.0);
    }
}
