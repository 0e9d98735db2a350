//! L0 normal smoothing.
//!
//! Minimizes a data term anchored at the oriented input normals plus an
//! L0 penalty on neighbor-normal differences. The auxiliary-variable
//! splitting alternates a hard-threshold step (`solve_zeta`) with a
//! closed-form quadratic update (`solve_normals`), doubling `beta`
//! after each outer loop until it passes `beta_max`. Hard thresholding
//! keeps genuine creases: neighbor pairs whose normal difference stays
//! above the threshold carry their difference into the quadratic and
//! are not averaged away.

use super::{NeighborGraph, NormalEstimate, SmoothingConfig};
use crate::geometry::{ScanBlock, Vec3};

/// Ragged per-point, per-neighbor vectors laid out like the graph.
pub type NeighborVectors = Vec<Vec<Vec3>>;

/// Differences `D(n)[i][j] = n_i − n_{N(i,j)}` over the graph.
pub fn neighbor_differences(normals: &[Vec3], graph: &NeighborGraph) -> NeighborVectors {
    graph
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, nbrs)| nbrs.iter().map(|&j| normals[i] - normals[j as usize]).collect())
        .collect()
}

/// Hard threshold: zero when `eta/beta > ‖d‖²`, otherwise `d` itself.
pub fn solve_zeta(d_values: &NeighborVectors, beta: f64, eta: f64) -> NeighborVectors {
    let threshold = eta / beta;
    d_values
        .iter()
        .map(|row| {
            row.iter()
                .map(|d| if threshold > d.norm_squared() { Vec3::zeros() } else { *d })
                .collect()
        })
        .collect()
}

/// One closed-form quadratic update per point:
/// `n_i = (n̂_i + β·Σ_j (n_{N(i,j)} + ζ_ij)) / (β·k_i + 1)`, renormalized.
/// `anchor` holds the data-term normals n̂, `current` the neighbor values
/// of this sweep. A zero pre-normalization result keeps the previous
/// normal.
pub fn solve_normals(
    anchor: &[Vec3],
    current: &[Vec3],
    zeta: &NeighborVectors,
    graph: &NeighborGraph,
    beta: f64,
) -> Vec<Vec3> {
    anchor
        .iter()
        .enumerate()
        .map(|(i, n_hat)| {
            let nbrs = &graph.neighbors[i];
            let mut sum = Vec3::zeros();
            for (j, &nb) in nbrs.iter().enumerate() {
                sum += current[nb as usize] + zeta[i][j];
            }
            let raw = (n_hat + beta * sum) / (beta * nbrs.len() as f64 + 1.0);
            let norm = raw.norm();
            if norm < 1e-12 {
                current[i]
            } else {
                raw / norm
            }
        })
        .collect()
}

/// Pre-normalization value of the Eq.-13 update, exposed for the
/// stationarity check against [`quadratic_objective`].
pub fn solve_normal_raw(
    n_hat: &Vec3,
    neighbor_normals: &[Vec3],
    zeta_row: &[Vec3],
    beta: f64,
) -> Vec3 {
    let mut sum = Vec3::zeros();
    for (nb, z) in neighbor_normals.iter().zip(zeta_row.iter()) {
        sum += nb + z;
    }
    (n_hat + beta * sum) / (beta * neighbor_normals.len() as f64 + 1.0)
}

/// The per-point quadratic the closed-form update minimizes:
/// `‖n − n̂‖² + β·Σ_j ‖n − n_{N(i,j)} − ζ_ij‖²`. On unit vectors the
/// data term equals `2(1 − nᵀn̂)`.
pub fn quadratic_objective(
    n: &Vec3,
    n_hat: &Vec3,
    neighbor_normals: &[Vec3],
    zeta_row: &[Vec3],
    beta: f64,
) -> f64 {
    let mut value = (n - n_hat).norm_squared();
    for (nb, z) in neighbor_normals.iter().zip(zeta_row.iter()) {
        value += beta * (n - nb - z).norm_squared();
    }
    value
}

/// Alternations per beta level. One sweep per level stalls on heavy
/// noise because most neighbor differences sit above the threshold at
/// the first levels; repeating the ζ/n alternation at fixed beta lets
/// pairs unfreeze as their neighborhoods contract.
const SWEEPS_PER_LEVEL: usize = 4;

/// Full alternating loop. Degenerate points pass through unchanged and
/// never appear as neighbors.
pub fn smooth_normals_l0(
    block: &ScanBlock,
    estimate: &NormalEstimate,
    cfg: &SmoothingConfig,
) -> NormalEstimate {
    // graph over non-degenerate points only, preserving original indices
    let graph = filtered_graph(block, estimate, cfg);
    let anchor = estimate.normals.clone();
    let mut current = estimate.normals.clone();

    let mut beta = cfg.beta;
    while beta <= cfg.beta_max {
        for _ in 0..SWEEPS_PER_LEVEL {
            let d = neighbor_differences(&current, &graph);
            let zeta = solve_zeta(&d, beta, cfg.eta);
            let updated = solve_normals(&anchor, &current, &zeta, &graph, beta);
            for i in 0..current.len() {
                if !estimate.degenerate[i] {
                    current[i] = updated[i];
                }
            }
        }
        beta *= 2.0;
    }

    NormalEstimate {
        normals: current,
        degenerate: estimate.degenerate.clone(),
        unoriented: estimate.unoriented.clone(),
    }
}

fn filtered_graph(block: &ScanBlock, estimate: &NormalEstimate, cfg: &SmoothingConfig) -> NeighborGraph {
    let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
    let neighbors = graph
        .neighbors
        .into_iter()
        .enumerate()
        .map(|(i, nbrs)| {
            if estimate.degenerate[i] {
                Vec::new()
            } else {
                nbrs.into_iter()
                    .filter(|&j| !estimate.degenerate[j as usize])
                    .collect()
            }
        })
        .collect();
    NeighborGraph { neighbors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normals::tests::{block_from_points, cylinder_points};
    use crate::normals::{estimate_normals_pca, orient_normals_msc_nvo};
    use crate::geometry::Point3;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn zeta_thresholds_small_differences_to_zero() {
        // eta=0.1, beta=1.0, ‖d‖²=0.05 < 0.1 → zero
        let d = vec![vec![Vec3::new(0.05f64.sqrt(), 0.0, 0.0)]];
        let z = solve_zeta(&d, 1.0, 0.1);
        assert_eq!(z[0][0], Vec3::zeros());
    }

    #[test]
    fn zeta_keeps_large_differences() {
        let d = vec![vec![Vec3::new(0.5, 0.0, 0.0)]];
        let z = solve_zeta(&d, 1.0, 0.1);
        assert_eq!(z[0][0], Vec3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn zeta_approaches_d_as_beta_grows() {
        let d = vec![vec![Vec3::new(1e-3, 0.0, 0.0), Vec3::new(0.0, 1e-4, 0.0)]];
        let z = solve_zeta(&d, 1e12, 0.1);
        assert_eq!(z[0], d[0]);
    }

    #[test]
    fn zeta_is_exact_minimizer_of_split_objective() {
        // brute force over the two candidates {0, d}
        let mut rng = crate::rng::rng_for(5, crate::rng::Stream::Test(1));
        for _ in 0..10_000 {
            let d = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let beta = rng.gen_range(0.01..100.0);
            let eta = rng.gen_range(0.001..10.0);
            let z = solve_zeta(&vec![vec![d]], beta, eta)[0][0];
            let objective = |zeta: Vec3| {
                let indicator = if zeta == Vec3::zeros() { 0.0 } else { 1.0 };
                beta * (d - zeta).norm_squared() + eta * indicator
            };
            let best = objective(Vec3::zeros()).min(objective(d));
            assert!(objective(z) <= best + 1e-15);
        }
    }

    #[test]
    fn solve_normals_fixed_point_when_neighbors_agree() {
        let u = Vec3::new(0.0, 0.0, 1.0);
        let anchor = vec![u, u, u];
        let graph = NeighborGraph {
            neighbors: vec![vec![1, 2], vec![0, 2], vec![0, 1]],
        };
        let zeta = vec![vec![Vec3::zeros(); 2]; 3];
        let out = solve_normals(&anchor, &anchor, &zeta, &graph, 1.0);
        for n in out {
            assert_relative_eq!((n - u).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn solve_normals_beta_zero_returns_anchor() {
        let anchor = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let current = vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 1.0)];
        let graph = NeighborGraph {
            neighbors: vec![vec![1], vec![0]],
        };
        let zeta = vec![vec![Vec3::zeros()]; 2];
        let out = solve_normals(&anchor, &current, &zeta, &graph, 0.0);
        assert_relative_eq!((out[0] - anchor[0]).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((out[1] - anchor[1]).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn solve_normals_matches_direct_formula_for_opposing_neighbor() {
        // one neighbor with opposing normal, beta = 1, zeta = 0
        let n_hat = Vec3::new(1.0, 0.0, 0.0);
        let opposing = Vec3::new(-1.0, 0.0, 0.0);
        let raw = solve_normal_raw(&n_hat, &[opposing], &[Vec3::zeros()], 1.0);
        // (n̂ + β·(n_nb + 0)) / (β·1 + 1) = (1 − 1, 0, 0)/2 = 0
        assert_relative_eq!(raw.norm(), 0.0, epsilon = 1e-15);

        let tilted = Vec3::new(0.0, 1.0, 0.0);
        let raw = solve_normal_raw(&n_hat, &[tilted], &[Vec3::zeros()], 1.0);
        assert_relative_eq!((raw - Vec3::new(0.5, 0.5, 0.0)).norm(), 0.0, epsilon = 1e-15);

        // zero pre-normalization keeps the previous normal
        let graph = NeighborGraph {
            neighbors: vec![vec![1], vec![0]],
        };
        let anchor = vec![n_hat, opposing];
        let zeta = vec![vec![Vec3::zeros()]; 2];
        let out = solve_normals(&anchor, &anchor, &zeta, &graph, 1.0);
        assert_eq!(out[0], n_hat);
    }

    #[test]
    fn update_is_stationary_point_of_quadratic() {
        // finite-difference gradient of the quadratic at the returned
        // value must vanish
        let mut rng = crate::rng::rng_for(9, crate::rng::Stream::Test(2));
        for _ in 0..200 {
            let rand_unit = |rng: &mut rand_chacha::ChaCha12Rng| {
                loop {
                    let v = Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    if v.norm() > 1e-3 {
                        return v.normalize();
                    }
                }
            };
            let n_hat = rand_unit(&mut rng);
            let k = rng.gen_range(1..6);
            let neighbors: Vec<Vec3> = (0..k).map(|_| rand_unit(&mut rng)).collect();
            let zeta: Vec<Vec3> = (0..k)
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        Vec3::zeros()
                    } else {
                        rand_unit(&mut rng) * rng.gen_range(0.0..0.5)
                    }
                })
                .collect();
            let beta = rng.gen_range(0.1..32.0);
            let raw = solve_normal_raw(&n_hat, &neighbors, &zeta, beta);

            let h = 1e-4;
            for axis in 0..3 {
                let mut plus = raw;
                let mut minus = raw;
                plus[axis] += h;
                minus[axis] -= h;
                let grad = (quadratic_objective(&plus, &n_hat, &neighbors, &zeta, beta)
                    - quadratic_objective(&minus, &n_hat, &neighbors, &zeta, beta))
                    / (2.0 * h);
                assert!(grad.abs() < 1e-8, "gradient {grad} along axis {axis}");
            }
        }
    }

    #[test]
    fn noiseless_plane_is_fixed_point() {
        let mut pts = Vec::new();
        for i in 0..15 {
            for j in 0..15 {
                pts.push(Point3::new(i as f64 * 0.3, j as f64 * 0.3, 0.0));
            }
        }
        let block = block_from_points(pts);
        let cfg = SmoothingConfig::default();
        let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
        let est = estimate_normals_pca(&block, &graph, &cfg).unwrap();
        let oriented = orient_normals_msc_nvo(&block, &est, &cfg).unwrap();
        let smoothed = smooth_normals_l0(&block, &oriented, &cfg);
        for (a, b) in oriented.normals.iter().zip(smoothed.normals.iter()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    pub(crate) fn noisy_plane_estimate(
        n_points: usize,
        noise_deg: f64,
        seed: u64,
    ) -> (crate::geometry::ScanBlock, NormalEstimate) {
        let mut rng = crate::rng::rng_for(seed, crate::rng::Stream::Test(3));
        let side = (n_points as f64).sqrt().ceil() as usize;
        let mut pts = Vec::new();
        for i in 0..side {
            for j in 0..side {
                if pts.len() >= n_points {
                    break;
                }
                pts.push(Point3::new(i as f64 * 0.3, j as f64 * 0.3, 0.0));
            }
        }
        let block = block_from_points(pts);
        let sigma = noise_deg.to_radians();
        let gauss = Normal::new(0.0, sigma).unwrap();
        let normals = (0..block.cloud.len())
            .map(|_| {
                let tilt: f64 = gauss.sample(&mut rng);
                let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
                Vec3::new(
                    tilt.sin() * azimuth.cos(),
                    tilt.sin() * azimuth.sin(),
                    tilt.cos(),
                )
            })
            .collect();
        let n = block.cloud.len();
        (
            block,
            NormalEstimate {
                normals,
                degenerate: vec![false; n],
                unoriented: vec![false; n],
            },
        )
    }

    #[test]
    fn smoothing_halves_angular_error_on_noisy_plane() {
        let (block, noisy) = noisy_plane_estimate(2000, 15.0, 42);
        let cfg = SmoothingConfig::default();
        let smoothed = smooth_normals_l0(&block, &noisy, &cfg);
        let truth = Vec3::new(0.0, 0.0, 1.0);
        let mean_err = |ns: &[Vec3]| {
            ns.iter().map(|n| n.dot(&truth).clamp(-1.0, 1.0).acos()).sum::<f64>() / ns.len() as f64
        };
        let before = mean_err(&noisy.normals);
        let after = mean_err(&smoothed.normals);
        assert!(
            after <= 0.5 * before,
            "error before {before:.4} rad, after {after:.4} rad"
        );
    }

    #[test]
    fn crease_between_perpendicular_planes_is_preserved() {
        // two planes meeting at 90°: z = 0 (x ≥ 0) and x = 0 (z ≥ 0)
        let mut pts = Vec::new();
        let mut true_normals = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push(Point3::new(0.25 + i as f64 * 0.25, j as f64 * 0.25, 0.0));
                true_normals.push(Vec3::new(0.0, 0.0, 1.0));
                pts.push(Point3::new(0.0, j as f64 * 0.25, 0.25 + i as f64 * 0.25));
                true_normals.push(Vec3::new(1.0, 0.0, 0.0));
            }
        }
        let block = block_from_points(pts);
        let n = block.cloud.len();
        let est = NormalEstimate {
            normals: true_normals.clone(),
            degenerate: vec![false; n],
            unoriented: vec![false; n],
        };
        let cfg = SmoothingConfig {
            radius: 1.0,
            ..SmoothingConfig::default()
        };
        let smoothed = smooth_normals_l0(&block, &est, &cfg);

        // within each plane normals stay at the plane normal
        for (i, n) in smoothed.normals.iter().enumerate() {
            assert!(
                n.dot(&true_normals[i]) > 0.98,
                "point {i} bled across the crease: {n:?}"
            );
        }

        // crease-crossing neighbor pairs keep zeta ≠ 0 at the final beta
        let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
        let d = neighbor_differences(&smoothed.normals, &graph);
        let zeta = solve_zeta(&d, cfg.beta_max, cfg.eta);
        let mut crossing_nonzero = 0;
        let mut crossing_total = 0;
        for i in 0..n {
            for (j, &nb) in graph.neighbors[i].iter().enumerate() {
                if true_normals[i].dot(&true_normals[nb as usize]) < 0.5 {
                    crossing_total += 1;
                    if zeta[i][j] != Vec3::zeros() {
                        crossing_nonzero += 1;
                    }
                }
            }
        }
        assert!(crossing_total > 0);
        assert_eq!(crossing_nonzero, crossing_total, "crease pairs lost their zeta");
    }

    #[test]
    fn large_eta_forces_zeta_to_zero_on_unit_normals() {
        // ‖D‖² ≤ 4 for unit normals, so eta/beta > 4 zeroes every zeta
        let block = block_from_points(cylinder_points(2.0, 10.0, 30, 20));
        let cfg = SmoothingConfig::default();
        let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
        let est = estimate_normals_pca(&block, &graph, &cfg).unwrap();
        let d = neighbor_differences(&est.normals, &graph);
        let eta = 4.1 * cfg.beta_max;
        let zeta = solve_zeta(&d, cfg.beta_max, eta);
        for row in &zeta {
            for z in row {
                assert_eq!(*z, Vec3::zeros());
            }
        }
    }

    #[test]
    fn degenerate_points_pass_through() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Point3::new(i as f64 * 0.3, j as f64 * 0.3, 0.0));
            }
        }
        pts.push(Point3::new(500.0, 0.0, 0.0));
        let block = block_from_points(pts);
        let cfg = SmoothingConfig::default();
        let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
        let est = estimate_normals_pca(&block, &graph, &cfg).unwrap();
        let idx = block.cloud.len() - 1;
        assert!(est.degenerate[idx]);
        let before = est.normals[idx];
        let smoothed = smooth_normals_l0(&block, &est, &cfg);
        assert_eq!(smoothed.normals[idx], before);
    }

    #[test]
    fn all_outputs_stay_unit_norm() {
        let (block, noisy) = noisy_plane_estimate(400, 20.0, 77);
        let cfg = SmoothingConfig::default();
        let smoothed = smooth_normals_l0(&block, &noisy, &cfg);
        for n in &smoothed.normals {
            assert!((n.norm() - 1.0).abs() < 1e-6);
        }
    }
}
