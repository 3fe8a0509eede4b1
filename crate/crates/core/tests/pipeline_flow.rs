use nalgebra::{Point3, Vector3};

use viewfuse::fuse::{fuse, tsdf_fuse, FuseView};
use viewfuse::inpaint::Registry;
use viewfuse::io::{load_bundle, save_bundle, DepthFormat, SaveOptions};
use viewfuse::pipeline::{run, PipelineConfig};
use viewfuse::refine::RefineConfig;
use viewfuse::synth::{generate, SceneSpec};
use viewfuse::{CameraModel, DepthMap, RgbImage};

fn small_spec(seed: u64) -> SceneSpec {
    let mut s = SceneSpec {
        seed,
        ..Default::default()
    };
    s.cameras.count = 6;
    s.cameras.width = 160;
    s.cameras.height = 120;
    s.cameras.fx = 131.6;
    s.cameras.fy = 131.6;
    s
}

#[test]
fn planefit_refinement_only_shrinks_the_residual() {
    let scene = generate(&small_spec(3)).unwrap();
    let cfg = PipelineConfig {
        tsdf: false,
        ..Default::default()
    };
    let out = run(&scene.cluttered, &cfg, &Registry::with_builtins()).unwrap();
    let report = &out.refine.report;
    assert!(!report.iterations.is_empty());
    for pair in report.iterations.windows(2) {
        assert!(pair[1].holes <= pair[0].holes, "holes grew: {} -> {}", pair[0].holes, pair[1].holes);
    }
    for it in &report.iterations {
        assert_eq!(it.accepted + it.dropped + it.residual, it.holes);
        assert!(it.after_voting <= it.after_cross_frame);
        assert!(it.after_cross_frame <= it.after_single_region);
        assert!(it.after_single_region <= it.after_single_pixel);
    }
    for state in &out.refine.states {
        state.check_monotone().unwrap();
    }
    // Pixels outside the removal mask keep their captured depth.
    for (f, v) in out.frames.iter().zip(&out.refine.views) {
        for i in 0..f.depth_cap.data.len() {
            if !f.mask.data[i] && f.depth_cap.data[i] > 0.0 {
                assert_eq!(v.depth.data[i], f.depth_cap.data[i]);
            }
        }
    }
}

#[test]
fn bundle_survives_a_disk_round_trip() {
    let scene = generate(&small_spec(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = SaveOptions {
        depth_format: DepthFormat::Float,
        ..Default::default()
    };
    save_bundle(&scene.cluttered, dir.path(), &opts).unwrap();

    let loaded = load_bundle(dir.path(), 1).unwrap();
    assert_eq!(loaded.frames.len(), scene.cluttered.frames.len());
    for (a, b) in loaded.frames.iter().zip(&scene.cluttered.frames) {
        assert_eq!(a.color, b.color);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.camera.dims(), b.camera.dims());
        assert!((a.camera.pose - b.camera.pose).abs().max() < 1e-12);
        let worst = a.depth_cap.data.iter().zip(&b.depth_cap.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "depth error {worst}");
    }
    assert_eq!(loaded.mesh.triangles, scene.cluttered.mesh.triangles);

    let strided = load_bundle(dir.path(), 2).unwrap();
    assert_eq!(strided.frames.len(), 3);
    assert_eq!(strided.frames.iter().map(|f| f.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(strided.frames[1].color, scene.cluttered.frames[2].color);

    let cfg = PipelineConfig {
        backend_color: "oracle".into(),
        backend_depth: "oracle".into(),
        tsdf: false,
        ..Default::default()
    };
    let out = run(&loaded, &cfg, &Registry::with_builtins()).unwrap();
    assert!(out.refine.report.converged());
}

#[test]
fn two_views_of_a_wall_fuse_onto_the_wall() {
    // Wall is the plane z = 2 in world coordinates; cameras look along +z.
    let make = |x: f64| {
        CameraModel::look_at(
            60.0,
            60.0,
            39.5,
            29.5,
            80,
            60,
            Point3::new(x, 0.0, 0.0),
            Point3::new(x, 0.0, 2.0),
            Vector3::new(0.0, -1.0, 0.0),
        )
        .unwrap()
    };
    let cams = [make(0.0), make(0.3)];
    let depths: Vec<DepthMap> = cams.iter().map(|c| DepthMap::filled(c.width, c.height, 2.0)).collect();
    let color = RgbImage::filled(80, 60, [200, 200, 200]);
    let views: Vec<FuseView<'_>> = cams
        .iter()
        .zip(&depths)
        .map(|(camera, depth)| FuseView {
            camera,
            color: &color,
            depth,
        })
        .collect();
    let rcfg = RefineConfig::default();

    let cloud = fuse(&views, &rcfg).unwrap();
    assert_eq!(cloud.len(), 2 * 80 * 60);
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        assert!((p.z - 2.0).abs() < 1e-12);
        assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
    }

    let mesh = tsdf_fuse(&views, &rcfg).unwrap();
    assert!(!mesh.triangles.is_empty());
    let worst = mesh.surface_points().iter().map(|p| (p.z - 2.0).abs()).fold(0.0, f64::max);
    assert!(worst < rcfg.tsdf_voxel / 2.0, "surface off the wall by {worst}");
}
