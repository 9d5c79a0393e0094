//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Relative eigenvalue floor used by every pseudo-inverse in the crate.
pub const PINV_FLOOR: f64 = 1e-12;

#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// Squared Frobenius norm.
pub fn fro2(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn vec_norm2(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Eigen-decomposition of a Hermitian matrix by cyclic Jacobi rotations,
/// eigenvalues sorted descending.
pub fn hermitian_eigen(m: &CMat) -> (DVector<f64>, CMat) {
    let n = m.nrows();
    let mut a = hermitian_part(m);
    let mut v = CMat::identity(n, n);
    let floor = 1e-18 * a.norm();
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let g = a[(p, q)].norm();
                if g <= floor || g <= f64::EPSILON * (a[(p, p)].re * a[(q, q)].re).abs().sqrt() {
                    continue;
                }
                rotated = true;
                let e = a[(p, q)] / g;
                let (c, s) = jacobi_cs(a[(p, p)].re, a[(q, q)].re, g);
                rotate_columns(&mut a, p, q, c, s, e);
                for k in 0..n {
                    let (x, y) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = x * c - y * e * s;
                    a[(q, k)] = x * s + y * e * c;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                rotate_columns(&mut v, p, q, c, s, e);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(y, y)].re.total_cmp(&a[(x, x)].re));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)].re));
    let mut vecs = CMat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &v.column(i));
    }
    (vals, vecs)
}

const JACOBI_SWEEPS: usize = 80;

/// Rotation zeroing the off-diagonal `g` of the real-phase 2×2 block
/// `[[app, g], [g, aqq]]`.
fn jacobi_cs(app: f64, aqq: f64, g: f64) -> (f64, f64) {
    let zeta = (aqq - app) / (2.0 * g);
    let t = if zeta >= 0.0 { 1.0 / (zeta + (1.0 + zeta * zeta).sqrt()) } else { -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt()) };
    let c = 1.0 / (1.0 + t * t).sqrt();
    (c, c * t)
}

/// `[x_p, x_q] ← [c x_p − s ē x_q, s x_p + c ē x_q]`.
fn rotate_columns(m: &mut CMat, p: usize, q: usize, c: f64, s: f64, e: C64) {
    let ec = e.conj();
    for k in 0..m.nrows() {
        let (x, y) = (m[(k, p)], m[(k, q)]);
        m[(k, p)] = x * c - y * ec * s;
        m[(k, q)] = x * s + y * ec * c;
    }
}

/// Thin SVD `M = U diag(s) V^H` with `min(r, c)` triplets sorted by
/// descending singular value. Left vectors of zero singular values are zero.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

/// One-sided Jacobi SVD.
pub fn svd(m: &CMat) -> Svd {
    let (r, c) = m.shape();
    if r < c {
        let t = svd(&m.adjoint());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let mut a = m.clone();
    let mut v = CMat::identity(c, c);
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..c {
            for q in p + 1..c {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                let g = gamma.norm();
                if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let e = gamma / g;
                let (cs, sn) = jacobi_cs(alpha, beta, g);
                rotate_columns(&mut a, p, q, cs, sn, e);
                rotate_columns(&mut v, p, q, cs, sn, e);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..c).map(|k| a.column(k).norm()).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut u = CMat::zeros(r, c);
    let mut vs = CMat::zeros(c, c);
    for (j, &k) in order.iter().enumerate() {
        if norms[k] > 0.0 {
            u.set_column(j, &(a.column(k) / C64::new(norms[k], 0.0)));
        }
        vs.set_column(j, &v.column(k));
    }
    Svd { u, s: order.iter().map(|&k| norms[k]).collect(), v: vs }
}

pub fn max_eigenvalue(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    hermitian_eigen(m).0[0]
}

/// Pseudo-inverse of a Hermitian matrix through its eigenbasis; eigenvalues
/// below `rel_floor * max|λ|` are dropped.
pub fn pinv_hermitian(m: &CMat, rel_floor: f64) -> CMat {
    let n = m.nrows();
    let (vals, vecs) = hermitian_eigen(m);
    let scale = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut out = CMat::zeros(n, n);
    if scale == 0.0 {
        return out;
    }
    for k in 0..n {
        if vals[k].abs() > rel_floor * scale {
            let q = vecs.column(k);
            out += (&q * q.adjoint()) * C64::new(1.0 / vals[k], 0.0);
        }
    }
    out
}

/// Moore-Penrose pseudo-inverse via SVD.
pub fn pinv(m: &CMat, rel_floor: f64) -> CMat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return CMat::zeros(c, r);
    }
    let d = svd(m);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let mut out = CMat::zeros(c, r);
    for (k, &s) in d.s.iter().enumerate() {
        if smax > 0.0 && s > rel_floor * smax {
            out += (d.v.column(k) * d.u.column(k).adjoint()) * C64::new(1.0 / s, 0.0);
        }
    }
    out
}

/// Orthonormal basis (as columns) of the row space of `m`, keeping
/// singular values above `rel_floor` times the largest.
pub fn row_space_basis(m: &CMat, rel_floor: f64) -> CMat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return CMat::zeros(c, 0);
    }
    let d = svd(m);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let keep = d.s.iter().filter(|&&s| smax > 0.0 && s > rel_floor * smax).count();
    d.v.columns(0, keep).into_owned()
}

/// Removes the row-space component of `m` from the columns of `x`.
pub fn project_null_space(m: &CMat, x: &CMat, rel_floor: f64) -> CMat {
    let b = row_space_basis(m, rel_floor);
    x - &b * (b.adjoint() * x)
}

/// `log2 det(I + X)` for Hermitian PSD `X`; tiny negative eigenvalues from
/// roundoff are clipped.
pub fn log2_det_eye_plus(x: &CMat) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    hermitian_eigen(x).0.iter().map(|&l| (l.max(0.0)).ln_1p()).sum::<f64>() / std::f64::consts::LN_2
}

/// Natural log-determinant of a Hermitian positive definite matrix.
pub fn ln_det_hpd(x: &CMat) -> Option<f64> {
    let chol = hermitian_part(x).cholesky()?;
    Some(chol.l().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum())
}

/// Samples an `r × c` matrix with i.i.d. CN(0, 1) entries.
pub fn cn_matrix<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(r, c, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(s * re, s * im)
    })
}

pub fn cn_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    let m = cn_matrix(rng, n, 1);
    CVec::from_column_slice(m.as_slice())
}

/// Orthonormal basis for the column space, dropping directions with
/// singular value below `rel_tol * σ_max`.
pub fn orth_basis(m: &CMat, rel_tol: f64) -> CMat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return CMat::zeros(r, 0);
    }
    let d = svd(m);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let keep = d.s.iter().filter(|&&s| smax > 0.0 && s > rel_tol * smax).count();
    d.u.columns(0, keep).into_owned()
}

/// Extends orthonormal columns `q` to `target` orthonormal columns by
/// Gram-Schmidt over the standard basis.
pub fn complete_orthonormal(q: &CMat, target: usize) -> CMat {
    let n = q.nrows();
    let mut cols: Vec<CVec> = q.column_iter().map(|c| c.into_owned()).collect();
    let mut e = 0;
    while cols.len() < target && e < n {
        let mut cand = CVec::zeros(n);
        cand[e] = ONE;
        for _ in 0..2 {
            for b in &cols {
                let p = b.dotc(&cand);
                cand -= b * p;
            }
        }
        let nrm = vec_norm2(&cand).sqrt();
        if nrm > 1e-8 {
            cols.push(cand / C64::new(nrm, 0.0));
        }
        e += 1;
    }
    let mut out = CMat::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

/// Dominant right singular vectors of `m`, as columns; zero-padded when
/// `k` exceeds the number available.
pub fn right_singular_vectors(m: &CMat, k: usize) -> CMat {
    let (r, c) = m.shape();
    let mut out = CMat::zeros(c, k);
    if r == 0 || c == 0 {
        return out;
    }
    let d = svd(m);
    let take = k.min(d.s.len());
    out.columns_mut(0, take).copy_from(&d.v.columns(0, take));
    out
}

/// Dominant left singular vectors, completed to `k` orthonormal columns.
pub fn left_singular_vectors(m: &CMat, k: usize) -> CMat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return complete_orthonormal(&CMat::zeros(r, 0), k);
    }
    let d = svd(m);
    let keep = d.s.iter().filter(|&&s| s > 0.0).count().min(k);
    complete_orthonormal(&d.u.columns(0, keep).into_owned(), k)
}

/// `diag(v)` as a dense matrix.
pub fn diag(v: &CVec) -> CMat {
    CMat::from_diagonal(v)
}

/// Entrywise unit-modulus projection; zero entries map to `fallback`.
pub fn unit_phase(z: C64, fallback: C64) -> C64 {
    let r = z.norm();
    if r > 0.0 && r.is_finite() {
        z / r
    } else {
        fallback
    }
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eigen_residual(m: &CMat) -> f64 {
        let (vals, vecs) = hermitian_eigen(m);
        let d = CMat::from_diagonal(&vals.map(|v| C64::new(v, 0.0)));
        (&vecs * d * vecs.adjoint() - m).norm() / m.norm()
    }

    #[test]
    fn hermitian_eigen_reconstructs_clustered_spectra() {
        // one dominant eigenvalue over a tight cluster
        let mut rng = ChaCha8Rng::seed_from_u64(12694644513673204777);
        let hb = cn_matrix(&mut rng, 2, 4);
        let hw = cn_matrix(&mut rng, 2, 4);
        let u = cn_matrix(&mut rng, 2, 2);
        let a = cn_matrix(&mut rng, 2, 2);
        let psi = &a * a.adjoint() + CMat::identity(2, 2) * C64::new(0.1, 0.0);
        let x = hb.adjoint() * &u;
        let m = &x * &psi * x.adjoint() + CMat::identity(4, 4) * C64::new(0.1, 0.0) + hw.adjoint() * &hw * C64::new(0.01, 0.0);
        assert!(eigen_residual(&m) < 1e-12);
        for seed in 0..500 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 1 + (seed % 9) as usize;
            let k = cn_matrix(&mut rng, n, 1 + (seed % 3) as usize);
            let m = &k * k.adjoint() + CMat::identity(n, n) * C64::new(1e-3 * (seed % 4) as f64, 0.0);
            assert!(eigen_residual(&m) < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal() {
        for seed in 0..300u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (r, c) = (1 + (seed % 7) as usize, 1 + (seed / 7 % 7) as usize);
            let m = cn_matrix(&mut rng, r, c);
            let d = svd(&m);
            let p = r.min(c);
            assert_eq!(d.s.len(), p);
            assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
            let sig = CMat::from_diagonal(&DVector::from_iterator(p, d.s.iter().map(|&s| C64::new(s, 0.0))));
            let back = &d.u * sig * d.v.adjoint();
            assert!((back - &m).norm() < 1e-12 * m.norm(), "seed {seed}");
            assert!((d.v.adjoint() * &d.v - CMat::identity(p, p)).norm() < 1e-12);
            assert!((d.u.adjoint() * &d.u - CMat::identity(p, p)).norm() < 1e-12);
        }
    }

    #[test]
    fn pinv_hermitian_inverts_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = cn_matrix(&mut rng, 5, 5);
        let m = &a * a.adjoint() + CMat::identity(5, 5);
        let p = pinv_hermitian(&m, PINV_FLOOR);
        let err = fro2(&(&p * &m - CMat::identity(5, 5))).sqrt();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn pinv_hermitian_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = cn_matrix(&mut rng, 6, 2);
        let m = &a * a.adjoint();
        let p = pinv_hermitian(&m, PINV_FLOOR);
        // Penrose identity M P M = M
        let err = fro2(&(&m * &p * &m - &m)).sqrt() / fro2(&m).sqrt();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn svd_pinv_matches_penrose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = cn_matrix(&mut rng, 3, 7);
        let p = pinv(&a, PINV_FLOOR);
        assert!(fro2(&(&a * &p * &a - &a)).sqrt() < 1e-10);
        assert!(fro2(&(&p * &a * &p - &p)).sqrt() < 1e-10);
    }

    #[test]
    fn logdet_matches_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = cn_matrix(&mut rng, 4, 4);
        let x = &a * a.adjoint();
        let via_eig = log2_det_eye_plus(&x);
        let via_chol = ln_det_hpd(&(CMat::identity(4, 4) + &x)).unwrap() / std::f64::consts::LN_2;
        assert!((via_eig - via_chol).abs() < 1e-10);
    }

    #[test]
    fn completion_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = cn_matrix(&mut rng, 6, 2);
        let q = left_singular_vectors(&a, 4);
        assert_eq!(q.ncols(), 4);
        let g = q.adjoint() * &q;
        assert!(fro2(&(g - CMat::identity(4, 4))).sqrt() < 1e-10);
    }
}
