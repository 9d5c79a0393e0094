//! Array geometry, steering vectors, the Saleh-Valenzuela Alice-to-surface
//! channel and the spherical-wave surface-to-receiver channels.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, cis, cn_vector, CMat, CVec, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Standard deviation of the intra-cluster ray spread, radians.
const RAY_SPREAD: f64 = 5.0 * PI / 180.0;

/// A point on the xy-plane given by range and azimuth from the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarPosition {
    pub range_m: f64,
    pub azimuth_rad: f64,
}

impl PolarPosition {
    pub const fn new(range_m: f64, azimuth_rad: f64) -> Self {
        Self { range_m, azimuth_rad }
    }

    pub fn to_cartesian(&self) -> [f64; 3] {
        [self.range_m * self.azimuth_rad.cos(), self.range_m * self.azimuth_rad.sin(), 0.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ArrayKind {
    /// Linear array along the y axis.
    Ula { count: usize },
    /// Planar array on the yz-plane, `n_y` columns by `n_z` rows.
    Upa { n_y: usize, n_z: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub kind: ArrayKind,
    pub spacing: f64,
    pub center: [f64; 3],
}

impl ArrayGeometry {
    pub fn ula(count: usize, spacing: f64, center: [f64; 3]) -> Result<Self> {
        if count == 0 {
            return Err(Error::param("count", "array needs at least one element"));
        }
        check_positive("spacing", spacing)?;
        Ok(Self { kind: ArrayKind::Ula { count }, spacing, center })
    }

    /// The reflecting surface: a UPA on the yz-plane centred at the origin.
    pub fn surface(n_y: usize, n_z: usize, spacing: f64) -> Result<Self> {
        if n_y == 0 || n_z == 0 {
            return Err(Error::param("counts", "array needs at least one element per axis"));
        }
        check_positive("spacing", spacing)?;
        Ok(Self { kind: ArrayKind::Upa { n_y, n_z }, spacing, center: [0.0; 3] })
    }

    pub fn len(&self) -> usize {
        match self.kind {
            ArrayKind::Ula { count } => count,
            ArrayKind::Upa { n_y, n_z } => n_y * n_z,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element coordinates. UPA elements are ordered column-major in the
    /// sense of the Kronecker steering vector: index `i_y * n_z + i_z`.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        let d = self.spacing;
        let [cx, cy, cz] = self.center;
        match self.kind {
            ArrayKind::Ula { count } => {
                let half = (count as f64 - 1.0) / 2.0;
                (0..count).map(|m| [cx, cy + (m as f64 - half) * d, cz]).collect()
            }
            ArrayKind::Upa { n_y, n_z } => {
                let hy = (n_y as f64 - 1.0) / 2.0;
                let hz = (n_z as f64 - 1.0) / 2.0;
                let mut out = Vec::with_capacity(n_y * n_z);
                for iy in 0..n_y {
                    for iz in 0..n_z {
                        out.push([cx, cy + (iy as f64 - hy) * d, cz + (iz as f64 - hz) * d]);
                    }
                }
                out
            }
        }
    }

    /// Largest in-plane extent: `(count - 1) d` per axis, diagonal for a UPA.
    pub fn aperture(&self) -> f64 {
        let d = self.spacing;
        match self.kind {
            ArrayKind::Ula { count } => (count as f64 - 1.0) * d,
            ArrayKind::Upa { n_y, n_z } => {
                let ly = (n_y as f64 - 1.0) * d;
                let lz = (n_z as f64 - 1.0) * d;
                ly.hypot(lz)
            }
        }
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {v}")))
    }
}

/// Normalized ULA response, entry m = exp(j 2π d/λ m sin θ)/√M.
pub fn ula_response(theta: f64, m: usize, d: f64, lambda: f64) -> Result<CVec> {
    if m == 0 {
        return Err(Error::param("M", "array needs at least one element"));
    }
    check_positive("d", d)?;
    check_positive("lambda", lambda)?;
    let k = 2.0 * PI * d / lambda * theta.sin();
    let s = 1.0 / (m as f64).sqrt();
    Ok(CVec::from_fn(m, |i, _| cis(k * i as f64) * s))
}

/// Normalized UPA response: horizontal factor ⊗ vertical factor.
pub fn upa_response(theta: f64, phi: f64, n_y: usize, n_z: usize, d: f64, lambda: f64) -> Result<CVec> {
    if n_y == 0 || n_z == 0 {
        return Err(Error::param("N_y/N_z", "array needs at least one element per axis"));
    }
    check_positive("d", d)?;
    check_positive("lambda", lambda)?;
    let kh = 2.0 * PI * d / lambda * theta.sin() * phi.cos();
    let kv = 2.0 * PI * d / lambda * phi.sin();
    let s = 1.0 / ((n_y * n_z) as f64).sqrt();
    Ok(CVec::from_fn(n_y * n_z, |n, _| {
        let (iy, iz) = (n / n_z, n % n_z);
        cis(kh * iy as f64 + kv * iz as f64) * s
    }))
}

/// `2 f (D + D_B)^2 / c`.
pub fn rayleigh_distance(d: f64, d_b: f64, f: f64) -> Result<f64> {
    if !(d >= 0.0 && d_b >= 0.0) {
        return Err(Error::param("D", "apertures must be non-negative"));
    }
    check_positive("f", f)?;
    Ok(2.0 * f * (d + d_b).powi(2) / SPEED_OF_LIGHT)
}

/// Alice-to-surface path loss `69.4 + 24 log10(D)` dB as a linear gain.
pub fn path_loss_alice_ris(distance: f64) -> Result<f64> {
    check_positive("D_AX", distance)?;
    Ok(10f64.powf(-(69.4 + 24.0 * distance.log10()) / 10.0))
}

/// One draw of the clustered far-field channel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldParams {
    pub chi_ar: f64,
    pub gains: Vec<C64>,
    pub aoa_azimuth: Vec<f64>,
    pub aoa_elevation: Vec<f64>,
    pub aod: Vec<f64>,
}

impl FarFieldParams {
    pub fn sample<R: Rng + ?Sized>(clusters: usize, rays: usize, chi_ar: f64, rng: &mut R) -> Result<Self> {
        if clusters == 0 || rays == 0 {
            return Err(Error::param("L_p", "path count must be at least 1"));
        }
        check_positive("chi_ar", chi_ar)?;
        let centre = Uniform::new(-PI / 2.0, PI / 2.0);
        let jitter = Normal::new(0.0, RAY_SPREAD).expect("finite spread");
        let lp = clusters * rays;
        let mut aoa_azimuth = Vec::with_capacity(lp);
        let mut aoa_elevation = Vec::with_capacity(lp);
        let mut aod = Vec::with_capacity(lp);
        for _ in 0..clusters {
            let (ca, ce, cd) = (centre.sample(rng), centre.sample(rng), centre.sample(rng));
            for _ in 0..rays {
                aoa_azimuth.push(ca + jitter.sample(rng));
                aoa_elevation.push(ce + jitter.sample(rng));
                aod.push(cd + jitter.sample(rng));
            }
        }
        let gains = cn_vector(rng, lp).iter().copied().collect();
        Ok(Self { chi_ar, gains, aoa_azimuth, aoa_elevation, aod })
    }

    pub fn path_count(&self) -> usize {
        self.gains.len()
    }

    /// `G = sqrt(M_A N χ / L_p) Σ α_i a_UPA a_ULA^H`, shape N × M_A.
    pub fn channel(&self, m_a: usize, n_y: usize, n_z: usize, d_a: f64, d_x: f64, lambda: f64) -> Result<CMat> {
        let lp = self.path_count();
        if lp == 0 {
            return Err(Error::param("L_p", "path count must be at least 1"));
        }
        check_positive("chi_ar", self.chi_ar)?;
        let n = n_y * n_z;
        let scale = ((m_a * n) as f64 * self.chi_ar / lp as f64).sqrt();
        let mut g = CMat::zeros(n, m_a);
        for i in 0..lp {
            let ar = upa_response(self.aoa_azimuth[i], self.aoa_elevation[i], n_y, n_z, d_x, lambda)? * self.gains[i];
            let at = ula_response(self.aod[i], m_a, d_a, lambda)?;
            g += ar * at.adjoint();
        }
        Ok(g * C64::new(scale, 0.0))
    }
}

/// Samples the Alice-to-surface channel for a scenario.
pub fn build_far_field_channel<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<CMat> {
    let lambda = cfg.wavelength();
    let chi = path_loss_alice_ris(cfg.alice.range_m)?;
    let params = FarFieldParams::sample(cfg.n_c, cfg.n_ray, chi, rng)?;
    params.channel(cfg.m_a, cfg.n_y, cfg.n_z, cfg.alice_spacing_wl * lambda, cfg.ris_spacing_wl * lambda, lambda)
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// One receive antenna's row of the spherical-wave channel. `reference` is
/// the antenna's distance to the surface centre.
pub fn near_field_row(elements: &[[f64; 3]], rx: &[f64; 3], reference: f64, f: f64) -> Result<CVec> {
    let n = elements.len();
    let k = 2.0 * PI * f / SPEED_OF_LIGHT;
    let norm = 1.0 / (n as f64).sqrt();
    let mut row = CVec::zeros(n);
    for (i, e) in elements.iter().enumerate() {
        let r = distance(e, rx);
        if !(r > 1e-9) {
            return Err(Error::Geometry(format!("receiver at {rx:?} coincides with surface element {i}")));
        }
        let gain = SPEED_OF_LIGHT / (4.0 * PI * f * r);
        row[i] = cis(-k * (r - reference)) * (gain * norm);
    }
    Ok(row)
}

/// Spherical-wave LoS channel from the surface to an `m_rx`-antenna ULA
/// centred at `rx_center`, shape M_rx × N.
pub fn build_near_field_los_channel(
    ris: &ArrayGeometry,
    rx_center: PolarPosition,
    m_rx: usize,
    rx_spacing: f64,
    f: f64,
) -> Result<CMat> {
    check_positive("f", f)?;
    if !(rx_center.range_m > 0.0) {
        return Err(Error::param("range", "receiver range must be positive"));
    }
    let rx = ArrayGeometry::ula(m_rx, rx_spacing, rx_center.to_cartesian())?;
    let elements = ris.positions();
    let mut h = CMat::zeros(m_rx, elements.len());
    for (m, p) in rx.positions().iter().enumerate() {
        let reference = distance(p, &ris.center);
        let row = near_field_row(&elements, p, reference, f)?;
        h.set_row(m, &row.transpose());
    }
    Ok(h)
}

/// Where the channels in a [`ChannelSet`] came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGeometry {
    pub surface: ArrayGeometry,
    pub alice: PolarPosition,
    pub bob: PolarPosition,
    pub willie: PolarPosition,
    pub carrier_hz: f64,
    pub rx_spacing: f64,
    pub chi_ar: f64,
}

/// `G` (N × M_A), `H` (M_B × N) and `F` (M_W × N).
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub g: CMat,
    pub h: CMat,
    pub f: CMat,
    pub geometry: ChannelGeometry,
}

impl ChannelSet {
    pub fn synthesize<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Self> {
        let lambda = cfg.wavelength();
        let surface = ArrayGeometry::surface(cfg.n_y, cfg.n_z, cfg.ris_spacing_wl * lambda)?;
        let rx_spacing = cfg.rx_spacing_wl * lambda;
        let g = build_far_field_channel(cfg, rng)?;
        let h = build_near_field_los_channel(&surface, cfg.bob, cfg.m_b, rx_spacing, cfg.carrier_hz)?;
        let f = build_near_field_los_channel(&surface, cfg.willie, cfg.m_w, rx_spacing, cfg.carrier_hz)?;
        let geometry = ChannelGeometry {
            surface,
            alice: cfg.alice,
            bob: cfg.bob,
            willie: cfg.willie,
            carrier_hz: cfg.carrier_hz,
            rx_spacing,
            chi_ar: path_loss_alice_ris(cfg.alice.range_m)?,
        };
        let set = Self { g, h, f, geometry };
        set.check(cfg)?;
        Ok(set)
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn m_a(&self) -> usize {
        self.g.ncols()
    }

    /// Shape and finiteness audit against a config.
    pub fn check(&self, cfg: &SystemConfig) -> Result<()> {
        let n = cfg.n_ris();
        let expect = [
            ("G", self.g.shape(), (n, cfg.m_a)),
            ("H", self.h.shape(), (cfg.m_b, n)),
            ("F", self.f.shape(), (cfg.m_w, n)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::dim("ChannelSet", format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        if !(all_finite(&self.g) && all_finite(&self.h) && all_finite(&self.f)) {
            return Err(Error::numeric("ChannelSet", "non-finite channel entry"));
        }
        Ok(())
    }

    /// Effective Alice-to-Bob and Alice-to-Willie channels for a reflection vector.
    pub fn effective(&self, v: &CVec) -> (CMat, CMat) {
        let tg = scale_rows(&self.g, v);
        (&self.h * &tg, &self.f * &tg)
    }
}

/// `diag(v) · M` without forming the diagonal matrix.
pub fn scale_rows(m: &CMat, v: &CVec) -> CMat {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= v[i];
    }
    out
}
