//! Normal-guided surface sampling and free-space ray sampling.
//!
//! Surface samples sit on the measured point's normal line with the
//! signed offset as their label, so the label equals the true distance
//! to the generating surface point regardless of the ray's incidence
//! angle. Labelling by distance along the ray instead would inflate
//! labels by 1/cos of the incidence angle.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::agent::action::ActionParams;
use crate::error::{Error, Result};
use crate::geometry::{Point3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Surface,
    Free,
}

/// A labelled training sample for the field.
#[derive(Debug, Clone, Copy)]
pub struct SdfSample {
    pub position: Point3,
    /// Signed meters. Surface samples satisfy |label| ≤ tr; free
    /// samples satisfy label ≥ tr.
    pub label: f64,
    pub kind: SampleKind,
    pub weight: f64,
}

/// `N_s` samples at `point + d·normal`, `d ~ N(0, σ_s²)` resampled into
/// `[−tr, tr]`, labelled with `d`. A degenerate normal yields nothing.
pub fn sample_surface(
    point: &Point3,
    normal: &Vec3,
    params: &ActionParams,
    tr: f64,
    rng: &mut ChaCha12Rng,
) -> Vec<SdfSample> {
    let norm = normal.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
        return Vec::new();
    }
    let gauss = Normal::new(0.0, params.sigma_s).unwrap();
    (0..params.n_s)
        .map(|_| {
            let mut d = gauss.sample(rng);
            let mut tries = 0;
            while d.abs() > tr {
                d = gauss.sample(rng);
                tries += 1;
                if tries > 1000 {
                    d = d.clamp(-tr, tr);
                    break;
                }
            }
            SdfSample {
                position: point + d * normal,
                label: d,
                kind: SampleKind::Surface,
                weight: 1.0,
            }
        })
        .collect()
}

/// `N_f` samples along the sensor ray at `s ~ U(η_min‖p‖, η_max‖p‖)`,
/// with the upper bound clamped to `‖p‖ − tr` so free labels never
/// enter the truncation band. Labels are the distance to the measured
/// endpoint.
pub fn sample_free_space(
    point: &Point3,
    origin: &Point3,
    params: &ActionParams,
    tr: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<SdfSample>> {
    let ray = point - origin;
    let dist = ray.norm();
    if dist <= 1e-9 {
        return Err(Error::InvalidInput("zero-length ray for free-space sampling".into()));
    }
    let dir = ray / dist;
    let s_hi = (params.eta_max * dist).min(dist - tr);
    if s_hi <= 0.0 {
        return Ok(Vec::new());
    }
    let s_lo = (params.eta_min * dist).min(s_hi);
    Ok((0..params.n_f)
        .map(|_| {
            let s = if s_hi - s_lo > 1e-12 {
                rng.gen_range(s_lo..s_hi)
            } else {
                s_lo
            };
            SdfSample {
                position: origin + s * dir,
                label: dist - s,
                kind: SampleKind::Free,
                weight: 1.0,
            }
        })
        .collect())
}
