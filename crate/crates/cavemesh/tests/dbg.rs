use cavemesh::agent::policy::ActionIndices;
use cavemesh::agent::ppo::Environment;
use cavemesh::sim::env::*;
use cavemesh::sim::*;
use std::time::Instant;

fn run_one(spec: SceneSpec, anchors: usize, range: f64, rays: usize, label: &str) {
    let scanner = ScannerSpec { rays_per_frame: rays, max_range: range, range_sigma: 0.005, frame_rate: 10.0 };
    let cfg = PipelineConfig { max_anchors: anchors, ..PipelineConfig::default() };
    let mut env = SimEnvironment::new(vec![spec], scanner, cfg, 7, 42).unwrap();
    let t0 = Instant::now();
    env.reset(42).unwrap();
    let action = ActionIndices([1, 1, 2, 1, 1, 1]);
    let mut steps = 0; let mut rsum = 0.0;
    loop { steps += 1; let o = env.step(&action).unwrap(); rsum += o.reward; if o.done { break; } }
    let per_step = t0.elapsed().as_secs_f64() / steps as f64;
    let (_, report) = env.full_scene_report(6).unwrap();
    println!("{label}: steps={steps} {:.2}s/step acc={:.1} comp={:.1} cl1={:.1} f={:.1} mean_r={:.2}",
        per_step, report.accuracy_cm, report.completeness_cm, report.chamfer_cm, report.fscore_pct, rsum / steps as f64);
}

#[test]
fn dbg_final_quality() {
    run_one(SceneSpec::tube_default(3), 128, 6.0, 300, "tube_default.a128");
    run_one(SceneSpec::cave_default(4), 128, 6.0, 300, "cave_default.a128");
    let mut small_tube = SceneSpec::tube_default(5);
    small_tube.control_points = vec![[-1.0, 0.0, 0.0], [4.0, 0.4, 0.1], [9.0, -0.3, 0.0], [13.0, 0.2, 0.1]];
    small_tube.base_radius = 2.0;
    run_one(small_tube, 96, 5.0, 250, "small_tube.a96.r5");
}
