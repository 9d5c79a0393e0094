//! Cascade-channel coherence, focusing diagnostics and spatial power maps.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::benchmarks::{far_field_scenario, sum_path_gain_ris, zf_beamformer};
use crate::channel::{near_field_row, ArrayGeometry, ChannelSet};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::hybrid::hybrid_decompose;
use crate::linalg::{right_singular_vectors, unit_phase, vec_norm2, CMat, CVec, C64, ONE};
use crate::channel::scale_rows;
use crate::orchestrator::{alternating_optimization, AoMode, BeamformerState};

/// `|h₁^H Θ G G^H Θ^H h₂|` and the same quantity normalized by the
/// norms of the two cascade channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coherence {
    pub inner: f64,
    pub coherence: f64,
}

pub fn equivalent_channel_inner_product(h1: &CVec, h2: &CVec, v: &CVec, g: &CMat) -> Result<Coherence> {
    let n = g.nrows();
    if h1.len() != n || h2.len() != n || v.len() != n {
        return Err(Error::dim(
            "equivalent_channel_inner_product",
            format!("h1 {}, h2 {}, v {}, G {:?}", h1.len(), h2.len(), v.len(), g.shape()),
        ));
    }
    // h̄ = G^H Θ^H h
    let bar = |h: &CVec| g.adjoint() * h.component_mul(&v.conjugate());
    let (b1, b2) = (bar(h1), bar(h2));
    let inner = b1.dotc(&b2).norm();
    let denom = (vec_norm2(&b1) * vec_norm2(&b2)).sqrt();
    let coherence = if denom > 0.0 { (inner / denom).min(1.0) } else { 0.0 };
    Ok(Coherence { inner, coherence })
}

/// Coefficient of variation of `|a_i|²/|b_i|` with `a = Gw` and
/// `b = diag(h^H) G w`; entries with `b_i = 0` are skipped and counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dispersion {
    pub cv: f64,
    pub excluded: usize,
}

pub fn focusing_ratio_dispersion(h: &CVec, g: &CMat, w: &CVec) -> Result<Dispersion> {
    if h.len() != g.nrows() || w.len() != g.ncols() {
        return Err(Error::dim("focusing_ratio_dispersion", format!("h {}, G {:?}, w {}", h.len(), g.shape(), w.len())));
    }
    let a = g * w;
    let mut ratios = Vec::with_capacity(a.len());
    let mut excluded = 0;
    for i in 0..a.len() {
        let b = (h[i].conj() * a[i]).norm();
        if b > 0.0 {
            ratios.push(a[i].norm_sqr() / b);
        } else {
            excluded += 1;
        }
    }
    if ratios.is_empty() {
        return Ok(Dispersion { cv: 0.0, excluded });
    }
    let m = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let var = ratios.iter().map(|r| (r - m).powi(2)).sum::<f64>() / ratios.len() as f64;
    Ok(Dispersion { cv: if m > 0.0 { var.sqrt() / m } else { 0.0 }, excluded })
}

/// Surface excitation meeting the equal-ratio focusing condition for a
/// single-antenna target row `h`: `|x_i| ∝ |h_i|` with conjugate phases,
/// normalized to unit energy.
pub fn ideal_focusing_field(h: &CVec) -> CVec {
    let x = h.conjugate();
    let e = vec_norm2(&x).sqrt();
    if e > 0.0 {
        x / C64::new(e, 0.0)
    } else {
        x
    }
}

/// Rectangular z = 0 region in front of the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { x0: 0.5, x1: 25.5, y0: -12.5, y1: 12.5, nx: 200, ny: 200 }
    }
}

impl GridSpec {
    pub fn x(&self, i: usize) -> f64 {
        if self.nx == 1 {
            return self.x0;
        }
        self.x0 + (self.x1 - self.x0) * i as f64 / (self.nx - 1) as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        if self.ny == 1 {
            return self.y0;
        }
        self.y0 + (self.y1 - self.y0) * j as f64 / (self.ny - 1) as f64
    }

    fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::param("grid", "need at least one point per axis"));
        }
        if !(self.x1 >= self.x0 && self.y1 >= self.y0) {
            return Err(Error::param("grid", "extents must be ordered"));
        }
        Ok(())
    }
}

/// Normalized received power over a grid, row-major with `ny` rows of `nx`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    /// Grid maximum before normalization, watts.
    pub peak: f64,
    /// Set when the field is identically zero and normalization was skipped.
    pub zero_field: bool,
}

impl HeatmapGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.spec.nx + i]
    }

    /// Value at the grid point nearest `(x, y)`.
    pub fn nearest(&self, x: f64, y: f64) -> f64 {
        let s = &self.spec;
        let idx = |v: f64, a: f64, b: f64, n: usize| -> usize {
            if n == 1 || b == a {
                return 0;
            }
            (((v - a) / (b - a)) * (n - 1) as f64).round().clamp(0.0, (n - 1) as f64) as usize
        };
        self.at(idx(x, s.x0, s.x1, s.nx), idx(y, s.y0, s.y1, s.ny))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let s = &self.spec;
        writeln!(out, "# {},{},{},{},{},{}", s.x0, s.x1, s.y0, s.y1, s.nx, s.ny)?;
        for j in 0..s.ny {
            let row: Vec<String> = (0..s.nx).map(|i| format!("{:e}", self.at(i, j))).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Power map for an arbitrary surface output `X` (N × L), i.e. the signal
/// leaving the surface, probed by single-antenna receivers.
pub fn heatmap_from_field(surface: &ArrayGeometry, carrier_hz: f64, field: &CMat, spec: GridSpec) -> Result<HeatmapGrid> {
    spec.validate()?;
    let elements = surface.positions();
    if field.nrows() != elements.len() {
        return Err(Error::dim("heatmap", format!("field has {} rows for {} elements", field.nrows(), elements.len())));
    }
    let raw: Vec<f64> = (0..spec.nx * spec.ny)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % spec.nx, k / spec.nx);
            let p = [spec.x(i), spec.y(j), 0.0];
            let h = near_field_row(&elements, &p, 0.0, carrier_hz)?;
            Ok((h.transpose() * field).iter().map(|z| z.norm_sqr()).sum::<f64>())
        })
        .collect::<Result<_>>()?;
    let peak = raw.iter().copied().fold(0.0f64, f64::max);
    if !(peak > 0.0) {
        return Ok(HeatmapGrid { spec, values: vec![0.0; raw.len()], peak: 0.0, zero_field: true });
    }
    let values = raw.iter().map(|p| p / peak).collect();
    Ok(HeatmapGrid { spec, values, peak, zero_field: false })
}

/// `‖h(p)^T Θ G W_RF W_BB‖²` over the grid, normalized to its maximum.
pub fn heatmap(channels: &ChannelSet, state: &BeamformerState, spec: GridSpec) -> Result<HeatmapGrid> {
    let field = scale_rows(&channels.g, &state.v) * state.product();
    heatmap_from_field(&channels.geometry.surface, channels.geometry.carrier_hz, &field, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Preset {
    /// Surface and precoder designed for Bob under the far-field model,
    /// ignoring Willie.
    Steering,
    /// Surface and precoder designed for Bob under the near-field model,
    /// ignoring Willie.
    Focusing,
    /// The covert design.
    Diffraction,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "steering" => Ok(Preset::Steering),
            "focusing" => Ok(Preset::Focusing),
            "diffraction" => Ok(Preset::Diffraction),
            _ => Err(Error::Unknown { kind: "preset", value: s.to_string() }),
        }
    }
}

/// Gain-maximizing design for Bob alone: sum-path-gain surface alternated
/// with dominant-eigenmode precoding at full power.
pub fn gain_only_design(cfg: &SystemConfig, channels: &ChannelSet, init: &BeamformerState) -> Result<BeamformerState> {
    let p_max = cfg.p_max_w();
    let mut state = init.clone();
    for _ in 0..5 {
        let pg = sum_path_gain_ris(channels, &state.w_rf, &state.w_bb, &state.v, 200)?;
        state.v = pg.v;
        let (h_b, _) = channels.effective(&state.v);
        let w = right_singular_vectors(&h_b, cfg.streams) * C64::new((p_max / cfg.streams as f64).sqrt(), 0.0);
        let hp = hybrid_decompose(&w, cfg.m_rf, &cfg.tolerances)?;
        state = BeamformerState { w_rf: hp.w_rf, w_bb: hp.w_bb, w_fd: w, v: state.v };
    }
    Ok(state)
}

/// Builds the transmit configuration of a preset on true near-field
/// channels. Steering designs on the far-field surrogate of the same draw.
pub fn preset_state(preset: Preset, cfg: &SystemConfig, channels: &ChannelSet, init: &BeamformerState) -> Result<BeamformerState> {
    match preset {
        Preset::Steering => gain_only_design(cfg, &far_field_scenario(channels), init),
        Preset::Focusing => gain_only_design(cfg, channels, init),
        Preset::Diffraction => Ok(alternating_optimization(cfg, channels, init, AoMode::PROPOSED)?.state),
    }
}

/// Rescales a state so it meets the covert budgets on the given channels.
pub fn make_covert(cfg: &SystemConfig, channels: &ChannelSet, state: &BeamformerState) -> BeamformerState {
    let (_, h_w) = channels.effective(&state.v);
    let mut hp = crate::hybrid::HybridPrecoder {
        w_rf: state.w_rf.clone(),
        w_bb: state.w_bb.clone(),
        margin: 0.0,
        relative_residual: 0.0,
        residual_trace: vec![],
        rank_deficient: false,
    };
    hp.enforce_budgets(&h_w, cfg.p_max_w(), cfg.p_leak());
    BeamformerState { w_rf: hp.w_rf, w_bb: hp.w_bb, w_fd: state.w_fd.clone(), v: state.v.clone() }
}

/// Zero-forcing design on the effective channels of the given surface.
pub fn zf_state(cfg: &SystemConfig, channels: &ChannelSet, v: &CVec) -> Result<BeamformerState> {
    let (h_b, h_w) = channels.effective(v);
    let (w, _) = zf_beamformer(&h_b, &h_w, cfg.p_max_w(), cfg.streams)?;
    let hp = hybrid_decompose(&w, cfg.m_rf, &cfg.tolerances)?;
    Ok(BeamformerState { w_rf: hp.w_rf, w_bb: hp.w_bb, w_fd: w, v: v.clone() })
}

/// Phase-aligned surface for a single-antenna row `h` and incident field
/// `a = Gw`: the received signal `Σ h_i v_i a_i` adds coherently.
pub fn phase_aligned_surface(h: &CVec, a: &CVec) -> CVec {
    CVec::from_iterator(h.len(), (0..h.len()).map(|i| unit_phase((h[i] * a[i]).conj(), ONE)))
}
