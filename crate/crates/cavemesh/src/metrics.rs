//! Reconstruction quality metrics and their reward mappings.
//!
//! Accuracy and completeness are mean nearest-neighbor distances
//! (mesh→truth and truth→mesh), Chamfer-L1 their average, and F-score
//! the harmonic mean of precision and recall at a distance threshold.
//! Nearest-neighbor queries use the exact kd-tree; approximate search
//! is not allowed here because tests pin oracle equality.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::mesh::TriangleMesh;
use crate::spatial::KdTree;

/// Quality metrics of one reconstruction, distances in centimeters.
#[derive(Debug, Clone, Copy)]
pub struct QualityReport {
    pub accuracy_cm: f64,
    pub completeness_cm: f64,
    pub chamfer_cm: f64,
    pub fscore_pct: f64,
    pub threshold_cm: f64,
}

impl QualityReport {
    pub fn compute(mesh_samples: &[Point3], gt: &[Point3], threshold_cm: f64) -> Result<QualityReport> {
        let acc = accuracy(mesh_samples, gt)?;
        let comp = completeness(gt, mesh_samples)?;
        Ok(QualityReport {
            accuracy_cm: acc,
            completeness_cm: comp,
            chamfer_cm: chamfer_l1(acc, comp),
            fscore_pct: f_score(mesh_samples, gt, threshold_cm)?,
            threshold_cm,
        })
    }

    /// Sentinel for a failed or empty reconstruction: distances far
    /// beyond every reward breakpoint and zero F-score.
    pub fn worst(threshold_cm: f64) -> QualityReport {
        QualityReport {
            accuracy_cm: 9999.0,
            completeness_cm: 9999.0,
            chamfer_cm: 9999.0,
            fscore_pct: 0.0,
            threshold_cm,
        }
    }

    pub fn csv_header() -> &'static str {
        "accuracy_cm,completeness_cm,chamfer_cm,fscore_pct,threshold_cm"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.accuracy_cm, self.completeness_cm, self.chamfer_cm, self.fscore_pct, self.threshold_cm
        )
    }
}

/// Mean distance (cm) from each of `from` to its nearest point in `to`.
pub fn accuracy(from: &[Point3], to: &[Point3]) -> Result<f64> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::InvalidInput("point sets must be non-empty".into()));
    }
    let tree = KdTree::build(to);
    let total: f64 = from
        .iter()
        .map(|p| tree.nearest(p).map(|(_, d)| d).unwrap_or(f64::INFINITY))
        .sum();
    Ok(total / from.len() as f64 * 100.0)
}

/// Mirror of [`accuracy`] with the roles swapped.
pub fn completeness(gt: &[Point3], mesh_samples: &[Point3]) -> Result<f64> {
    accuracy(gt, mesh_samples)
}

pub fn chamfer_l1(accuracy_cm: f64, completeness_cm: f64) -> f64 {
    (accuracy_cm + completeness_cm) / 2.0
}

/// Harmonic mean of precision and recall at `threshold_cm`, in percent.
pub fn f_score(mesh_samples: &[Point3], gt: &[Point3], threshold_cm: f64) -> Result<f64> {
    if !(threshold_cm > 0.0) {
        return Err(Error::InvalidInput("threshold must be positive".into()));
    }
    if mesh_samples.is_empty() || gt.is_empty() {
        return Err(Error::InvalidInput("point sets must be non-empty".into()));
    }
    let threshold_m = threshold_cm / 100.0;
    let within = |from: &[Point3], to: &[Point3]| -> f64 {
        let tree = KdTree::build(to);
        let hits = from
            .iter()
            .filter(|p| tree.nearest(p).map(|(_, d)| d <= threshold_m).unwrap_or(false))
            .count();
        hits as f64 / from.len() as f64
    };
    let precision = within(mesh_samples, gt);
    let recall = within(gt, mesh_samples);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(200.0 * precision * recall / (precision + recall))
}

/// Piecewise-linear map from a distance error (cm) to [−1, 1]:
/// full reward up to 5 cm, zero at 15 cm, full penalty from 30 cm.
pub fn distance_reward(error_cm: f64) -> f64 {
    if error_cm <= 5.0 {
        1.0
    } else if error_cm <= 15.0 {
        1.0 - (error_cm - 5.0) / 10.0
    } else if error_cm <= 30.0 {
        -(error_cm - 15.0) / 15.0
    } else {
        -1.0
    }
}

/// Piecewise-linear map from an F-score (%) to [−1, 1]: full penalty up
/// to 50%, zero at 80%, full reward at 100%.
pub fn fscore_reward(f_pct: f64) -> f64 {
    if f_pct <= 50.0 {
        -1.0
    } else if f_pct <= 80.0 {
        (f_pct - 50.0) / 30.0 - 1.0
    } else {
        (f_pct - 80.0) / 20.0
    }
}

/// Weights of the four reward components.
#[derive(Debug, Clone, Copy)]
pub struct RewardWeights {
    pub accuracy: f64,
    pub completeness: f64,
    pub chamfer: f64,
    pub fscore: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            accuracy: 1.0,
            completeness: 1.0,
            chamfer: 1.0,
            fscore: 2.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.accuracy, self.completeness, self.chamfer, self.fscore];
        if all.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("reward weights must be nonnegative".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("at least one reward weight must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted sum of the four mapped rewards.
pub fn composite_reward(report: &QualityReport, w: &RewardWeights) -> f64 {
    w.accuracy * distance_reward(report.accuracy_cm)
        + w.completeness * distance_reward(report.completeness_cm)
        + w.chamfer * distance_reward(report.chamfer_cm)
        + w.fscore * fscore_reward(report.fscore_pct)
}

/// Uniform area-weighted surface sampling at `density` points per
/// square meter. Per-triangle counts follow the exact expected value
/// with a deterministic fractional carry, positions are uniform
/// barycentric draws.
pub fn sample_mesh_surface(mesh: &TriangleMesh, density: f64, rng: &mut ChaCha12Rng) -> Vec<Point3> {
    let mut out = Vec::new();
    let mut carry = 0.0;
    for t in &mesh.triangles {
        let area = mesh.triangle_area(t);
        let want = area * density + carry;
        let count = want.floor() as usize;
        carry = want - count as f64;
        let a = mesh.vertices[t[0] as usize].coords;
        let b = mesh.vertices[t[1] as usize].coords;
        let c = mesh.vertices[t[2] as usize].coords;
        for _ in 0..count {
            let mut u: f64 = rng.gen();
            let mut v: f64 = rng.gen();
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            out.push(Point3::from(a + u * (b - a) + v * (c - a)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, Stream};
    use approx::assert_relative_eq;

    fn random_set(n: usize, stream: u64) -> Vec<Point3> {
        let mut rng = rng_for(99, Stream::Test(stream));
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn brute_mean_nn(from: &[Point3], to: &[Point3]) -> f64 {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p - q).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / from.len() as f64
            * 100.0
    }

    #[test]
    fn identical_sets_are_perfect() {
        let set = random_set(50, 1);
        assert_eq!(accuracy(&set, &set).unwrap(), 0.0);
        assert_eq!(completeness(&set, &set).unwrap(), 0.0);
        assert_eq!(f_score(&set, &set, 15.0).unwrap(), 100.0);
    }

    #[test]
    fn single_points_ten_cm_apart() {
        let a = vec![Point3::new(0.0, 0.0, 0.0)];
        let b = vec![Point3::new(0.10, 0.0, 0.0)];
        assert_relative_eq!(accuracy(&a, &b).unwrap(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn metrics_match_brute_force_oracle() {
        let a = random_set(200, 2);
        let b = random_set(200, 3);
        assert_relative_eq!(accuracy(&a, &b).unwrap(), brute_mean_nn(&a, &b), epsilon = 1e-9);
        assert_relative_eq!(completeness(&b, &a).unwrap(), brute_mean_nn(&b, &a), epsilon = 1e-9);
    }

    #[test]
    fn completeness_exceeds_accuracy_when_mesh_covers_subset() {
        // truth spans [-1,1]^3 but the "mesh" only covers a corner
        let gt = random_set(300, 4);
        let mesh: Vec<Point3> = gt
            .iter()
            .filter(|p| p.x > 0.0 && p.y > 0.0 && p.z > 0.0)
            .copied()
            .collect();
        let acc = accuracy(&mesh, &gt).unwrap();
        let comp = completeness(&gt, &mesh).unwrap();
        assert!(comp > acc);
    }

    #[test]
    fn chamfer_matches_published_convention() {
        assert_relative_eq!(chamfer_l1(10.47, 10.87), 10.67, epsilon = 0.01);
        assert_relative_eq!(chamfer_l1(9.55, 10.35), 9.95, epsilon = 0.01);
        assert_relative_eq!(chamfer_l1(7.0, 7.0), 7.0, epsilon = 1e-12);
    }

    #[test]
    fn fscore_harmonic_mean_cases() {
        // P = 1, R = 0.5: mesh sits on half of truth
        let gt = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(10.0, 0.0, 0.0),
        ];
        let mesh = vec![Point3::new(0.0, 0.0, 0.0)];
        let f = f_score(&mesh, &gt, 15.0).unwrap();
        assert_relative_eq!(f, 200.0 * 0.5 / 1.5, epsilon = 1e-9);

        let far = vec![Point3::new(100.0, 0.0, 0.0)];
        assert_eq!(f_score(&far, &gt, 15.0).unwrap(), 0.0);
    }

    #[test]
    fn distance_reward_breakpoints() {
        assert_eq!(distance_reward(0.0), 1.0);
        assert_eq!(distance_reward(5.0), 1.0);
        assert_relative_eq!(distance_reward(15.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(distance_reward(22.5), -0.5, epsilon = 1e-12);
        assert_eq!(distance_reward(30.0), -1.0);
        assert_eq!(distance_reward(500.0), -1.0);
    }

    #[test]
    fn fscore_reward_breakpoints() {
        assert_eq!(fscore_reward(0.0), -1.0);
        assert_eq!(fscore_reward(50.0), -1.0);
        assert_relative_eq!(fscore_reward(80.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(fscore_reward(90.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(fscore_reward(100.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reward_maps_are_monotone_and_bounded() {
        let mut prev = f64::INFINITY;
        for i in 0..=400 {
            let e = i as f64 * 0.1;
            let r = distance_reward(e);
            assert!((-1.0..=1.0).contains(&r));
            assert!(r <= prev + 1e-12);
            prev = r;
        }
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=100 {
            let f = i as f64;
            let r = fscore_reward(f);
            assert!((-1.0..=1.0).contains(&r));
            assert!(r >= prev - 1e-12);
            prev = r;
        }
    }

    #[test]
    fn composite_reward_extremes_and_weights() {
        let w = RewardWeights::default();
        let perfect = QualityReport {
            accuracy_cm: 0.0,
            completeness_cm: 0.0,
            chamfer_cm: 0.0,
            fscore_pct: 100.0,
            threshold_cm: 15.0,
        };
        assert_relative_eq!(composite_reward(&perfect, &w), 5.0, epsilon = 1e-12);

        let worst = QualityReport::worst(15.0);
        assert_relative_eq!(composite_reward(&worst, &w), -5.0, epsilon = 1e-12);

        let only_f = RewardWeights {
            accuracy: 0.0,
            completeness: 0.0,
            chamfer: 0.0,
            fscore: 1.0,
        };
        let report = QualityReport {
            fscore_pct: 90.0,
            ..perfect
        };
        assert_relative_eq!(composite_reward(&report, &only_f), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn composite_reward_is_monotone_in_each_argument() {
        let w = RewardWeights::default();
        let base = QualityReport {
            accuracy_cm: 10.0,
            completeness_cm: 12.0,
            chamfer_cm: 11.0,
            fscore_pct: 75.0,
            threshold_cm: 15.0,
        };
        let r0 = composite_reward(&base, &w);
        let mut worse = base;
        worse.accuracy_cm += 5.0;
        assert!(composite_reward(&worse, &w) <= r0);
        let mut better_f = base;
        better_f.fscore_pct += 10.0;
        assert!(composite_reward(&better_f, &w) >= r0);
    }

    #[test]
    fn mesh_sampling_density_is_area_weighted() {
        // two unit-ish triangles, total area 1.0
        let mesh = TriangleMesh {
            vertices: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            normals: None,
        };
        let mut rng = rng_for(5, Stream::Test(50));
        let pts = sample_mesh_surface(&mesh, 400.0, &mut rng);
        assert_eq!(pts.len(), 400);
        for p in &pts {
            assert!(p.z.abs() < 1e-12);
            assert!((0.0..=1.0).contains(&p.x));
            assert!((0.0..=1.0).contains(&p.y));
        }
    }
}
