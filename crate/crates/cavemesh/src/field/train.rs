//! Field optimization: BCE on truncated SDF labels plus an Eikonal
//! penalty, stepped with per-parameter moment-based gradient descent
//! over the decoder weights and every touched neural-point feature.
//!
//! Neighbor sets, interpolation weights, and decoder input offsets
//! depend only on geometry, so they are gathered once per call and
//! reused across iterations.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::decoder::{Activations, Decoder, FEATURE_DIM, PARAM_COUNT};
use super::sampling::{SampleKind, SdfSample};
use super::{NeuralPointMap, K_QUERY};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::geometry::Point3;

#[derive(Debug, Clone)]
pub struct FieldTrainConfig {
    /// Truncation band half-width in meters.
    pub tr: f64,
    pub learning_rate: f64,
    pub iters: usize,
    /// Scale applied to predictions and labels inside the BCE sigmoid.
    pub bce_scale: f64,
    pub eikonal_weight: f64,
    /// Cap on surface samples carrying the Eikonal stencil, selected by
    /// a fixed stride over the batch. The stencil costs six extra
    /// evaluations per sample, which dominates a training step; online
    /// runs cap it while evaluation uses every sample.
    pub eikonal_max_samples: usize,
    /// Feature learning rate as a multiple of the base rate. Features
    /// must travel much farther than decoder weights inside one
    /// scanblock budget.
    pub feature_lr_scale: f64,
}

impl FieldTrainConfig {
    /// Derives the per-step config from the action's truncation band.
    pub fn for_truncation(tr: f64, learning_rate: f64, iters: usize, eikonal_weight: f64) -> Self {
        FieldTrainConfig {
            tr,
            learning_rate,
            iters,
            bce_scale: tr / 4.0,
            eikonal_weight,
            eikonal_max_samples: usize::MAX,
            feature_lr_scale: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tr > 0.0 && self.learning_rate > 0.0 && self.bce_scale > 0.0) {
            return Err(Error::Config("field config values must be positive".into()));
        }
        if self.eikonal_max_samples == 0 {
            return Err(Error::Config("eikonal_max_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub total: f64,
    pub bce: f64,
    pub eikonal: f64,
}

#[derive(Debug, Clone)]
pub struct LossReport {
    pub initial: LossTerms,
    pub final_: LossTerms,
    pub iterations: usize,
    /// Samples with at least one neural point in range.
    pub samples_used: usize,
    /// Surface samples contributing to the Eikonal mean.
    pub eikonal_samples: usize,
}

/// One gathered evaluation position: neighbor indices, normalized
/// inverse-distance weights, and decoder offsets.
struct EvalPlan {
    gathers: Vec<(u32, f64, [f64; 3])>,
}

struct SamplePlan {
    label: f64,
    weight: f64,
    center: EvalPlan,
    /// Six stencil positions (±h per axis) for the Eikonal term.
    stencil: Option<Box<[EvalPlan; 6]>>,
}

fn plan_at(map: &NeuralPointMap, x: &Point3) -> Option<EvalPlan> {
    let (hits, _) = map.gather(x, K_QUERY);
    if hits.is_empty() {
        return None;
    }
    let mut total = 0.0;
    let mut gathers = Vec::with_capacity(hits.len());
    for &(idx, d) in &hits {
        let w = 1.0 / (d + super::WEIGHT_EPS);
        let np = &map.points[idx as usize];
        let o = (x - np.position) / map.pitch;
        gathers.push((idx, w, [o.x, o.y, o.z]));
        total += w;
    }
    for g in &mut gathers {
        g.1 /= total;
    }
    Some(EvalPlan { gathers })
}

fn build_plans(map: &NeuralPointMap, samples: &[SdfSample], eikonal_max: usize) -> Vec<SamplePlan> {
    let h = map.pitch / 10.0;
    let n_surface = samples.iter().filter(|s| s.kind == SampleKind::Surface).count();
    let stride = if n_surface > eikonal_max {
        n_surface.div_ceil(eikonal_max)
    } else {
        1
    };
    let mut surface_seen = 0usize;
    samples
        .iter()
        .filter_map(|s| {
            let center = plan_at(map, &s.position)?;
            let mut wants_stencil = false;
            if s.kind == SampleKind::Surface {
                wants_stencil = surface_seen % stride == 0;
                surface_seen += 1;
            }
            let stencil = if wants_stencil {
                let mut plans = Vec::with_capacity(6);
                let mut complete = true;
                for axis in 0..3 {
                    for sign in [1.0, -1.0] {
                        let mut q = s.position;
                        q[axis] += sign * h;
                        match plan_at(map, &q) {
                            Some(p) => plans.push(p),
                            None => {
                                complete = false;
                                break;
                            }
                        }
                    }
                    if !complete {
                        break;
                    }
                }
                if complete {
                    let arr: [EvalPlan; 6] = plans.try_into().ok().unwrap();
                    Some(Box::new(arr))
                } else {
                    None
                }
            } else {
                None
            };
            Some(SamplePlan {
                label: s.label,
                weight: s.weight,
                center,
                stencil,
            })
        })
        .collect()
}

/// Parameter view: decoder parameters followed by touched features.
struct ParamSpace {
    /// Sorted unique neural-point indices with trainable features.
    touched: Vec<u32>,
    slot_of: HashMap<u32, u32>,
}

impl ParamSpace {
    fn build(plans: &[SamplePlan]) -> ParamSpace {
        let mut touched: Vec<u32> = plans
            .iter()
            .flat_map(|p| {
                let stencil = p.stencil.iter().flat_map(|s| s.iter());
                std::iter::once(&p.center)
                    .chain(stencil)
                    .flat_map(|e| e.gathers.iter().map(|g| g.0))
            })
            .collect();
        touched.sort_unstable();
        touched.dedup();
        let slot_of = touched
            .iter()
            .enumerate()
            .map(|(slot, &idx)| (idx, slot as u32))
            .collect();
        ParamSpace { touched, slot_of }
    }

    fn len(&self) -> usize {
        PARAM_COUNT + self.touched.len() * FEATURE_DIM
    }

    fn gather(&self, map: &NeuralPointMap) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.len());
        theta.extend_from_slice(&map.decoder.params);
        for &idx in &self.touched {
            theta.extend_from_slice(&map.points[idx as usize].feature);
        }
        theta
    }

    fn scatter(&self, theta: &[f64], map: &mut NeuralPointMap) {
        map.decoder.params.copy_from_slice(&theta[..PARAM_COUNT]);
        for (slot, &idx) in self.touched.iter().enumerate() {
            let lo = PARAM_COUNT + slot * FEATURE_DIM;
            map.points[idx as usize]
                .feature
                .copy_from_slice(&theta[lo..lo + FEATURE_DIM]);
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Forward through one gathered position, caching per-neighbor
/// activations in the caller's buffer for the backward pass.
fn forward_plan(map: &NeuralPointMap, plan: &EvalPlan, acts_buf: &mut [Activations]) -> f64 {
    let mut pred = 0.0;
    for (i, &(idx, w_hat, offset)) in plan.gathers.iter().enumerate() {
        let np = &map.points[idx as usize];
        map.decoder.forward_into(&np.feature, &offset, &mut acts_buf[i]);
        pred += w_hat * acts_buf[i].output;
    }
    pred
}

fn backward_plan(
    map: &NeuralPointMap,
    plan: &EvalPlan,
    acts_buf: &[Activations],
    d_pred: f64,
    grads: &mut [f64],
    space: &ParamSpace,
) {
    for (&(idx, w_hat, _), acts) in plan.gathers.iter().zip(acts_buf.iter()) {
        let input_grad = map
            .decoder
            .backward(acts, d_pred * w_hat, &mut grads[..PARAM_COUNT]);
        let slot = space.slot_of[&idx] as usize;
        let lo = PARAM_COUNT + slot * FEATURE_DIM;
        for k in 0..FEATURE_DIM {
            grads[lo + k] += input_grad.feature[k];
        }
    }
}

/// Loss over the plans; fills `grads` when provided.
fn accumulate(
    map: &NeuralPointMap,
    plans: &[SamplePlan],
    cfg: &FieldTrainConfig,
    mut grads: Option<(&mut Vec<f64>, &ParamSpace)>,
) -> (LossTerms, usize) {
    let h = map.pitch / 10.0;
    let total_weight: f64 = plans.iter().map(|p| p.weight).sum();
    let n_eik = plans.iter().filter(|p| p.stencil.is_some()).count();

    let mut bce_acc = 0.0;
    let mut eik_acc = 0.0;
    let mut center_acts: Vec<Activations> = vec![Activations::default(); K_QUERY];
    let mut stencil_acts: Vec<Vec<Activations>> =
        (0..6).map(|_| vec![Activations::default(); K_QUERY]).collect();

    for plan in plans {
        // BCE term
        let bce_coeff = plan.weight / total_weight;
        let scale = cfg.bce_scale;
        let pred = forward_plan(map, &plan.center, &mut center_acts);
        let a = pred / scale;
        let y = sigmoid(plan.label / scale);
        bce_acc += bce_coeff * (softplus(-a) + (1.0 - y) * a);
        if let Some((grads, space)) = grads.as_mut() {
            let d_pred = bce_coeff * (sigmoid(a) - y) / scale;
            backward_plan(map, &plan.center, &center_acts, d_pred, grads, space);
        }

        // Eikonal term over the central-difference stencil
        if let Some(stencil) = &plan.stencil {
            let mut values = [0.0; 6];
            for (i, p) in stencil.iter().enumerate() {
                values[i] = forward_plan(map, p, &mut stencil_acts[i]);
            }
            let g = [
                (values[0] - values[1]) / (2.0 * h),
                (values[2] - values[3]) / (2.0 * h),
                (values[4] - values[5]) / (2.0 * h),
            ];
            let g_norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            let residual = g_norm - 1.0;
            eik_acc += residual * residual / n_eik as f64;
            if let Some((grads, space)) = grads.as_mut() {
                if g_norm > 1e-12 {
                    let base = cfg.eikonal_weight * 2.0 * residual / (g_norm * n_eik as f64);
                    for axis in 0..3 {
                        let d_g = base * g[axis] / (2.0 * h);
                        backward_plan(map, &stencil[2 * axis], &stencil_acts[2 * axis], d_g, grads, space);
                        backward_plan(
                            map,
                            &stencil[2 * axis + 1],
                            &stencil_acts[2 * axis + 1],
                            -d_g,
                            grads,
                            space,
                        );
                    }
                }
            }
        }
    }

    let terms = LossTerms {
        total: bce_acc + cfg.eikonal_weight * eik_acc,
        bce: bce_acc,
        eikonal: eik_acc,
    };
    (terms, n_eik)
}

/// Loss terms on a sample batch without touching any state.
pub fn evaluate_loss(map: &NeuralPointMap, samples: &[SdfSample], cfg: &FieldTrainConfig) -> LossTerms {
    let plans = build_plans(map, samples, cfg.eikonal_max_samples);
    accumulate(map, &plans, cfg, None).0
}

/// Runs `cfg.iters` optimization steps. A non-finite loss restores the
/// entry state and errors out.
pub fn train_field(
    map: &mut NeuralPointMap,
    samples: &[SdfSample],
    cfg: &FieldTrainConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to train on".into()));
    }
    let plans = build_plans(map, samples, cfg.eikonal_max_samples);
    if plans.is_empty() {
        return Err(Error::InvalidInput("no sample has neural-point support".into()));
    }
    let space = ParamSpace::build(&plans);
    let snapshot = space.gather(map);

    let (initial, n_eik) = accumulate(map, &plans, cfg, None);
    let mut adam = Adam::new(space.len());
    let mut theta = snapshot.clone();
    let mut grads = vec![0.0; space.len()];

    for _ in 0..cfg.iters {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let (terms, _) = accumulate(map, &plans, cfg, Some((&mut grads, &space)));
        if !terms.total.is_finite() {
            space.scatter(&snapshot, map);
            return Err(Error::Numerical("non-finite field loss; weights restored".into()));
        }
        adam.step_grouped(
            &mut theta,
            &grads,
            cfg.learning_rate,
            PARAM_COUNT,
            cfg.learning_rate * cfg.feature_lr_scale,
        );
        space.scatter(&theta, map);
    }

    let (final_, _) = accumulate(map, &plans, cfg, None);
    if !final_.total.is_finite() {
        space.scatter(&snapshot, map);
        return Err(Error::Numerical("non-finite field loss; weights restored".into()));
    }

    Ok(LossReport {
        initial,
        final_,
        iterations: cfg.iters,
        samples_used: plans.len(),
        eikonal_samples: n_eik,
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CAVEMAP\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a versioned binary dump of the map: grid parameters, neural
/// points with features, decoder weights, and the feature-init RNG
/// cursor so resumed runs stay deterministic.
pub fn save_checkpoint(map: &NeuralPointMap, seed: u64, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&seed.to_le_bytes()).map_err(io)?;
    w.write_all(&map.init_rng_word_pos().to_le_bytes()).map_err(io)?;
    w.write_all(&map.pitch.to_le_bytes()).map_err(io)?;
    w.write_all(&map.truncation.to_le_bytes()).map_err(io)?;
    w.write_all(&(map.points.len() as u64).to_le_bytes()).map_err(io)?;
    for np in &map.points {
        for c in [np.position.x, np.position.y, np.position.z] {
            w.write_all(&c.to_le_bytes()).map_err(io)?;
        }
        for f in &np.feature {
            w.write_all(&f.to_le_bytes()).map_err(io)?;
        }
        w.write_all(&np.update_count.to_le_bytes()).map_err(io)?;
    }
    w.write_all(&(map.decoder.params.len() as u64).to_le_bytes()).map_err(io)?;
    for p in &map.decoder.params {
        w.write_all(&p.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<NeuralPointMap> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    fn read_exact<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        Ok(buf)
    }
    let read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        Ok(u32::from_le_bytes(read_exact::<4>(r, path)?))
    };
    let read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        Ok(u64::from_le_bytes(read_exact::<8>(r, path)?))
    };
    let read_u128 = |r: &mut BufReader<File>| -> Result<u128> {
        Ok(u128::from_le_bytes(read_exact::<16>(r, path)?))
    };
    let read_f64 = |r: &mut BufReader<File>| -> Result<f64> {
        Ok(f64::from_le_bytes(read_exact::<8>(r, path)?))
    };

    let magic = read_exact::<8>(&mut r, path)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::parse(path, 0, "not a map checkpoint"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(path, 0, format!("unsupported checkpoint version {version}")));
    }
    let seed = read_u64(&mut r)?;
    let word_pos = read_u128(&mut r)?;
    let pitch = read_f64(&mut r)?;
    let truncation = read_f64(&mut r)?;

    let mut map = NeuralPointMap::new(pitch, truncation, seed);
    map.set_init_rng_word_pos(word_pos);

    let n_points = read_u64(&mut r)? as usize;
    for _ in 0..n_points {
        let x = read_f64(&mut r)?;
        let y = read_f64(&mut r)?;
        let z = read_f64(&mut r)?;
        let mut feature = [0.0; FEATURE_DIM];
        for f in &mut feature {
            *f = read_f64(&mut r)?;
        }
        let update_count = read_u64(&mut r)?;
        map.insert_restored(Point3::new(x, y, z), feature, update_count)?;
    }
    let n_params = read_u64(&mut r)? as usize;
    if n_params != PARAM_COUNT {
        return Err(Error::parse(path, 0, format!("decoder size mismatch: {n_params}")));
    }
    let mut params = vec![0.0; n_params];
    for p in &mut params {
        *p = read_f64(&mut r)?;
    }
    map.decoder = Decoder { params };
    Ok(map)
}

impl NeuralPointMap {
    fn init_rng_word_pos(&self) -> u128 {
        self.init_rng.get_word_pos()
    }

    fn set_init_rng_word_pos(&mut self, pos: u128) {
        self.init_rng.set_word_pos(pos);
    }

    fn insert_restored(
        &mut self,
        position: Point3,
        feature: [f64; FEATURE_DIM],
        update_count: u64,
    ) -> Result<()> {
        let key = crate::geometry::voxel_key(&position, self.pitch);
        if self.cells.contains_key(&key) {
            return Err(Error::InvalidInput("checkpoint has two points in one cell".into()));
        }
        let idx = self.points.len() as u32;
        self.points.push(super::NeuralPoint {
            position,
            feature,
            update_count,
        });
        self.cells.insert(key, idx);
        Ok(())
    }
}

/// Test support: a map whose field is exactly the SDF of the plane
/// z = 0 near the samples, built from the near-linear decoder with
/// each feature carrying its point's height.
pub fn plane_fit_map(pitch: f64, truncation: f64, extent: f64) -> NeuralPointMap {
    let mut map = NeuralPointMap::new(pitch, truncation, 0);
    map.decoder = Decoder::near_linear_plane(pitch);
    let n = (2.0 * extent / pitch).ceil() as i64;
    for i in 0..=n {
        for j in 0..=n {
            for k in -1..=1i64 {
                let p = Point3::new(
                    -extent + i as f64 * pitch,
                    -extent + j as f64 * pitch,
                    k as f64 * pitch,
                );
                let mut feature = [0.0; FEATURE_DIM];
                feature[0] = p.z;
                map.insert_restored(p, feature, 1).unwrap();
            }
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::action::ActionParams;
    use crate::field::sampling::{sample_surface, SampleKind};
    use crate::field::tests::block_of;
    use crate::geometry::Vec3;
    use crate::rng::{rng_for, Stream};

    fn plane_block(extent: f64, spacing: f64) -> crate::geometry::ScanBlock {
        let n = (2.0 * extent / spacing) as i64;
        let mut pts = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                pts.push(Point3::new(
                    -extent + i as f64 * spacing,
                    -extent + j as f64 * spacing,
                    0.0,
                ));
            }
        }
        block_of(pts)
    }

    fn plane_samples(extent: f64, n_anchors: usize, sigma: f64, tr: f64, seed: u64) -> Vec<SdfSample> {
        let mut rng = rng_for(seed, Stream::Test(40));
        let params = ActionParams {
            sigma_s: sigma,
            n_s: 4,
            n_f: 0,
            eta_min: 0.3,
            eta_max: 0.8,
            n_nn: 6,
        };
        let normal = Vec3::new(0.0, 0.0, 1.0);
        let mut samples = Vec::new();
        use rand::Rng;
        for _ in 0..n_anchors {
            let p = Point3::new(
                rng.gen_range(-extent..extent),
                rng.gen_range(-extent..extent),
                0.0,
            );
            samples.extend(sample_surface(&p, &normal, &params, tr, &mut rng));
        }
        samples
    }

    #[test]
    fn bce_gradient_is_flat_at_symmetric_point() {
        // labels 0 and predictions 0 sit at the symmetric point of the
        // BCE; the analytic d/dpred is exactly 0 there
        let s = 0.05;
        let a: f64 = 0.0;
        let y = sigmoid(0.0);
        assert!((sigmoid(a) - y).abs() < 1e-15);
        let bce = softplus(-a) + (1.0 - y) * a;
        assert!((bce - std::f64::consts::LN_2).abs() < 1e-12);
        let _ = s;
    }

    #[test]
    fn near_perfect_plane_field_has_tiny_eikonal() {
        let map = plane_fit_map(0.3, 0.15, 2.0);
        let samples = plane_samples(1.2, 60, 0.04, 0.15, 9);
        let cfg = FieldTrainConfig::for_truncation(0.15, 2e-3, 0, 0.1);
        let terms = evaluate_loss(&map, &samples, &cfg);
        assert!(terms.eikonal <= 1e-3, "eikonal {}", terms.eikonal);
    }

    #[test]
    fn frozen_batch_loss_decreases_over_long_run() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 11);
        map.update(&plane_block(1.5, 0.25));
        let samples = plane_samples(1.2, 40, 0.04, 0.15, 12);
        let cfg = FieldTrainConfig::for_truncation(0.15, 2e-3, 50, 0.1);
        let report = train_field(&mut map, &samples, &cfg).unwrap();
        assert!(
            report.final_.total < report.initial.total,
            "loss went {} -> {}",
            report.initial.total,
            report.final_.total
        );
    }

    #[test]
    fn trained_plane_field_predicts_height() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 13);
        map.update(&plane_block(1.5, 0.2));
        let samples = plane_samples(1.0, 80, 0.05, 0.15, 14);
        // eikonal off: this checks value fit only
        let cfg = FieldTrainConfig::for_truncation(0.15, 5e-3, 200, 0.0);
        train_field(&mut map, &samples, &cfg).unwrap();
        let tr = 0.15;
        let mut rng = rng_for(15, Stream::Test(41));
        use rand::Rng;
        for _ in 0..30 {
            let h = rng.gen_range(-tr..tr);
            let q = Point3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), h);
            let sample = map.query(&q);
            assert!(sample.valid);
            assert!(
                (sample.value - h).abs() <= 0.2 * tr,
                "pred {} for height {h}",
                sample.value
            );
        }
    }

    #[test]
    fn training_gradient_matches_finite_differences() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 21);
        map.update(&plane_block(0.8, 0.3));
        let samples = plane_samples(0.5, 6, 0.04, 0.15, 22);
        let cfg = FieldTrainConfig::for_truncation(0.15, 2e-3, 1, 0.1);
        let plans = build_plans(&map, &samples, usize::MAX);
        assert!(!plans.is_empty());
        let space = ParamSpace::build(&plans);
        let mut grads = vec![0.0; space.len()];
        let (_, _) = accumulate(&map, &plans, &cfg, Some((&mut grads, &space)));

        let theta0 = space.gather(&map);
        let h = 1e-6;
        // probe a few decoder weights and one feature slot
        let probes = [0usize, 100, PARAM_COUNT - 1, PARAM_COUNT, PARAM_COUNT + 7];
        for &i in &probes {
            let mut theta = theta0.clone();
            theta[i] += h;
            space.scatter(&theta, &mut map);
            let plus = accumulate(&map, &plans, &cfg, None).0.total;
            theta[i] -= 2.0 * h;
            space.scatter(&theta, &mut map);
            let minus = accumulate(&map, &plans, &cfg, None).0.total;
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (fd - grads[i]).abs() <= 1e-5 * fd.abs().max(1e-3),
                "param {i}: fd {fd} vs analytic {}",
                grads[i]
            );
        }
        space.scatter(&theta0, &mut map);
    }

    #[test]
    fn empty_or_unsupported_samples_error() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 31);
        let cfg = FieldTrainConfig::for_truncation(0.15, 2e-3, 5, 0.1);
        assert!(train_field(&mut map, &[], &cfg).is_err());
        let far = SdfSample {
            position: Point3::new(100.0, 0.0, 0.0),
            label: 0.0,
            kind: SampleKind::Surface,
            weight: 1.0,
        };
        assert!(train_field(&mut map, &[far], &cfg).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_preserves_map_and_queries() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 33);
        map.update(&plane_block(1.0, 0.25));
        let samples = plane_samples(0.8, 20, 0.04, 0.15, 34);
        let cfg = FieldTrainConfig::for_truncation(0.15, 2e-3, 10, 0.1);
        train_field(&mut map, &samples, &cfg).unwrap();

        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&map, 33, f.path()).unwrap();
        let restored = load_checkpoint(f.path()).unwrap();
        assert_eq!(restored.len(), map.len());
        assert_eq!(restored.pitch, map.pitch);
        let q = Point3::new(0.1, -0.2, 0.05);
        assert_eq!(map.query(&q).value, restored.query(&q).value);

        // resumed feature initialization continues the same stream
        let mut a = map.clone();
        let mut b = restored;
        let extra = block_of(vec![Point3::new(5.0, 5.0, 5.0)]);
        a.update(&extra);
        b.update(&extra);
        assert_eq!(a.points.last().unwrap().feature, b.points.last().unwrap().feature);
    }
}
