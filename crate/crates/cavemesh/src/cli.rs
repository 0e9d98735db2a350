//! Subcommand implementations behind the binary.

use std::path::{Path, PathBuf};

use crate::agent::policy::SelectMode;
use crate::agent::ppo::{load_policy, save_policy, train_agent, logs_to_csv};
use crate::agent::{ActionBins, ActionParams, StateEncoder};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{
    bounding_box, io as gio, partition_into_blocks, transform_cloud, Point3, PointCloud, Pose,
    ScanBlock,
};
use crate::mesh::io::{load_mesh, save_mesh, MeshFormat};
use crate::metrics::{sample_mesh_surface, QualityReport};
use crate::normals::l0::smooth_normals_l0;
use crate::normals::{estimate_normals_pca, orient_normals_msc_nvo, NeighborGraph};
use crate::rng::{rng_for, Stream};
use crate::sim::env::{ReconstructionPipeline, SimEnvironment};
use crate::sim::{
    build_trajectory, generate_ground_truth, scan_frame, Scene, SceneSpec,
};

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// `simulate`: generate a scene, scan it along the built trajectory,
/// and write per-frame clouds, the trajectory, the ground truth, and
/// the resolved scene spec.
pub fn cmd_simulate(spec_path: &Path, out_dir: &Path, config: &RunConfig) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SceneSpec = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", spec_path.display())))?;
    simulate_to_dir(&spec, out_dir, config)
}

pub fn simulate_to_dir(spec: &SceneSpec, out_dir: &Path, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let scene = Scene::generate(spec)?;
    let scanner = config.scanner.to_spec();
    let trajectory = build_trajectory(&scene, config.run.speed, scanner.frame_rate, config.run.sensor_height)?;

    for (i, (_, pose)) in trajectory.iter().enumerate() {
        let world = scan_frame(&scene, &scanner, pose, spec.seed, i as u64)?;
        let local = transform_cloud(&world, &pose.inverse());
        let path = out_dir.join(format!("frame_{i:05}.ply"));
        gio::save_point_cloud_ply(&local, &path)?;
    }
    gio::save_trajectory(&trajectory, &out_dir.join("trajectory.txt"))?;

    let gt = generate_ground_truth(&scene, 0.1)?;
    let gt_cloud = PointCloud::new(gt.points);
    gio::save_point_cloud_ply(&gt_cloud, &out_dir.join("ground_truth.ply"))?;

    let spec_text = toml::to_string_pretty(spec)
        .map_err(|e| Error::Config(format!("serializing scene spec: {e}")))?;
    std::fs::write(out_dir.join("scene.toml"), spec_text)
        .map_err(|e| Error::io(out_dir, e))?;

    println!(
        "simulated {} frames into {}",
        trajectory.len(),
        out_dir.display()
    );
    Ok(())
}

fn load_frames(frames_dir: &Path, trajectory_path: &Path) -> Result<Vec<(Pose, PointCloud)>> {
    let trajectory = gio::load_trajectory(trajectory_path)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(frames_dir)
        .map_err(|e| Error::io(frames_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("frame_"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.len() != trajectory.len() {
        return Err(Error::InvalidInput(format!(
            "{} frames but {} trajectory poses",
            paths.len(),
            trajectory.len()
        )));
    }
    let mut frames = Vec::with_capacity(paths.len());
    for (path, (_, pose)) in paths.iter().zip(trajectory.into_iter()) {
        let cloud = gio::load_point_cloud(path)?;
        frames.push((pose, cloud));
    }
    Ok(frames)
}

pub struct ReconstructArgs<'a> {
    pub frames_dir: &'a Path,
    pub trajectory: &'a Path,
    pub out: &'a Path,
    pub weights: Option<&'a Path>,
    pub gt: Option<&'a Path>,
    pub seed: u64,
}

/// `reconstruct`: fuse scanblocks, run the per-block pipeline with
/// either fixed default parameters or max-likelihood actions from a
/// trained policy, extract the final mesh, and optionally score it.
pub fn cmd_reconstruct(args: &ReconstructArgs, config: &RunConfig) -> Result<()> {
    let frames = load_frames(args.frames_dir, args.trajectory)?;
    let blocks: Vec<ScanBlock> = partition_into_blocks(&frames, config.run.scanblock_frames)?
        .into_iter()
        .map(|b| b.to_world())
        .collect();

    let policy = match args.weights {
        Some(path) => {
            let (net, encoder_seed) = load_policy(path)?;
            Some((net, StateEncoder::new(encoder_seed)))
        }
        None => None,
    };

    let pipeline_cfg = config.pipeline();
    let mut pipeline = ReconstructionPipeline::new(pipeline_cfg, args.seed);
    let mut rng = rng_for(args.seed, Stream::ActionSample(0));

    for (i, block) in blocks.iter().enumerate() {
        pipeline.ingest(block);
        let action = match &policy {
            None => ActionParams::defaults(),
            Some((net, encoder)) => {
                let points = pipeline.state_points();
                let centroid = centroid_of(&block.cloud.points);
                let state = encoder.encode(&points, &centroid);
                let fwd = net.forward(&state)?;
                let (indices, _) = net.select_action(&fwd, SelectMode::MaxLikelihood, &mut rng);
                net.decode(&indices)
            }
        };
        let artifacts = pipeline.process_block(block, &action, i as u64)?;
        println!(
            "block {i}: {} anchors, {} triangles in local mesh",
            artifacts.anchors_used,
            artifacts.mesh.triangles.len()
        );
    }

    let all_points: Vec<Point3> = blocks
        .iter()
        .flat_map(|b| b.cloud.points.iter().copied())
        .collect();
    let (min, max) = bounding_box(&all_points)
        .ok_or_else(|| Error::InvalidInput("no points in any block".into()))?;
    let mesh = pipeline.final_mesh(min, max, config.meshing.n_nn)?;
    save_mesh(&mesh, args.out, MeshFormat::from_path(args.out)?)?;
    println!(
        "wrote {} ({} vertices, {} triangles)",
        args.out.display(),
        mesh.vertices.len(),
        mesh.triangles.len()
    );

    if let Some(gt_path) = args.gt {
        let gt = gio::load_point_cloud(gt_path)?;
        let mut sample_rng = rng_for(args.seed, Stream::MeshSampling(u64::MAX));
        let samples = sample_mesh_surface(&mesh, config.metrics.sample_density, &mut sample_rng);
        if samples.is_empty() {
            return Err(Error::InvalidInput("final mesh has no surface to sample".into()));
        }
        let report = QualityReport::compute(&samples, &gt.points, config.metrics.threshold_cm)?;
        print_report(&report);
    }
    Ok(())
}

fn centroid_of(points: &[Point3]) -> Point3 {
    let mut acc = nalgebra::Vector3::zeros();
    for p in points {
        acc += p.coords;
    }
    Point3::from(acc / points.len().max(1) as f64)
}

/// `smooth`: estimate, orient, and smooth normals of one cloud treated
/// as a single scanblock, writing a PLY with the result. `dump_raw`
/// writes the pre-smoothing normals alongside.
pub fn cmd_smooth(
    input: &Path,
    out: &Path,
    dump_raw: Option<&Path>,
    config: &RunConfig,
) -> Result<()> {
    let cloud = gio::load_point_cloud(input)?;
    if cloud.len() < 3 {
        return Err(Error::InvalidInput("cloud has fewer than 3 points".into()));
    }
    let n = cloud.len();
    let block = ScanBlock {
        base_pose: Pose::identity(),
        cloud,
        frame_count: 1,
        sensor_origins: vec![Point3::origin()],
        frame_of_point: vec![0; n],
    };
    let smoothing = config.smoothing.to_config();
    smoothing.validate()?;
    let graph = NeighborGraph::build(&block.cloud.points, smoothing.radius, smoothing.k_max);
    let estimate = estimate_normals_pca(&block, &graph, &smoothing)?;
    let oriented = orient_normals_msc_nvo(&block, &estimate, &smoothing)?;
    if let Some(raw_path) = dump_raw {
        let mut raw_cloud = block.cloud.clone();
        raw_cloud.normals = Some(oriented.normals.clone());
        gio::save_point_cloud_ply(&raw_cloud, raw_path)?;
    }
    let smoothed = smooth_normals_l0(&block, &oriented, &smoothing);
    let mut out_cloud = block.cloud.clone();
    out_cloud.normals = Some(smoothed.normals);
    gio::save_point_cloud_ply(&out_cloud, out)?;
    let degenerate = smoothed.degenerate.iter().filter(|d| **d).count();
    println!(
        "smoothed {} normals ({degenerate} degenerate points) into {}",
        block.cloud.len(),
        out.display()
    );
    Ok(())
}

/// `evaluate`: score a mesh against a ground-truth cloud.
pub fn cmd_evaluate(
    mesh_path: &Path,
    gt_path: &Path,
    threshold_cm: Option<f64>,
    seed: u64,
    config: &RunConfig,
) -> Result<()> {
    let mesh = load_mesh(mesh_path)?;
    let gt = gio::load_point_cloud(gt_path)?;
    if gt.is_empty() {
        return Err(Error::InvalidInput("ground truth is empty".into()));
    }
    let threshold = threshold_cm.unwrap_or(config.metrics.threshold_cm);
    let mut rng = rng_for(seed, Stream::MeshSampling(0));
    let samples = sample_mesh_surface(&mesh, config.metrics.sample_density, &mut rng);
    if samples.is_empty() {
        return Err(Error::InvalidInput("mesh has no surface to sample".into()));
    }
    let report = QualityReport::compute(&samples, &gt.points, threshold)?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &QualityReport) {
    println!("{}", QualityReport::csv_header());
    println!("{}", report.csv_row());
    println!();
    println!("  accuracy      {:>9.3} cm", report.accuracy_cm);
    println!("  completeness  {:>9.3} cm", report.completeness_cm);
    println!("  chamfer-l1    {:>9.3} cm", report.chamfer_cm);
    println!(
        "  f-score       {:>9.3} %  (threshold {} cm)",
        report.fscore_pct, report.threshold_cm
    );
}

/// `train-agent`: PPO over the scene set, writing the weights
/// checkpoint and the per-iteration reward curve.
pub fn cmd_train_agent(
    scenes_dir: &Path,
    iterations: usize,
    seed: u64,
    out: &Path,
    curve: Option<&Path>,
    config: &RunConfig,
) -> Result<()> {
    let mut scene_paths: Vec<PathBuf> = std::fs::read_dir(scenes_dir)
        .map_err(|e| Error::io(scenes_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "toml").unwrap_or(false))
        .collect();
    scene_paths.sort();
    if scene_paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no scene .toml files in {}",
            scenes_dir.display()
        )));
    }
    let mut scenes = Vec::with_capacity(scene_paths.len());
    for path in &scene_paths {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SceneSpec =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        scenes.push(spec);
    }

    let mut env = SimEnvironment::new(
        scenes,
        config.scanner.to_spec(),
        config.pipeline(),
        config.run.encoder_seed,
        seed,
    )?;
    let mut ppo = config.ppo.to_config();
    ppo.iterations = iterations;
    let (net, logs) = train_agent(
        &mut env,
        &ppo,
        seed,
        iterations,
        config.run.encoder_seed,
        Some(out),
    )?;
    save_policy(&net, config.run.encoder_seed, out)?;
    let csv = logs_to_csv(&logs);
    if let Some(curve_path) = curve {
        std::fs::write(curve_path, &csv).map_err(|e| Error::io(curve_path, e))?;
    } else {
        print!("{csv}");
    }
    if let Some(last) = logs.last() {
        println!(
            "trained {} iterations; final mean reward {:.3}",
            logs.len(),
            last.mean_reward
        );
    }
    Ok(())
}

/// `dump-config`: write the effective configuration.
pub fn cmd_dump_config(out: &Path, config: &RunConfig) -> Result<()> {
    config.save(out)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Default PPO bins exposed for help text.
pub fn default_bins() -> ActionBins {
    ActionBins::default()
}

/// `version` banner: crate version plus the config schema version.
pub fn version_string() -> String {
    format!(
        "cavemesh {} (config schema v{})",
        env!("CARGO_PKG_VERSION"),
        crate::config::CONFIG_SCHEMA_VERSION
    )
}
