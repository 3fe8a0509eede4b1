use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};

use viewfuse::consistency::{run_stages, ViewInput};
use viewfuse::fuse::{fuse, tsdf_fuse, FuseView};
use viewfuse::inpaint::Registry;
use viewfuse::io::{self, DepthFormat, SaveOptions};
use viewfuse::loss::{area_sensitive_ce, combined_loss, PredictionSet};
use viewfuse::mask::{apply_projected_masks, mask_frame};
use viewfuse::metrics::{chamfer, image_metrics, mask_metrics, ImageMetrics, CHAMFER_FORMULA};
use viewfuse::pipeline::{self, ablation_ladder, backend_context, masked_points, StepTiming};
use viewfuse::refine::{inpaint_all, Backends, CompletedView, RefineOutput};
use viewfuse::synth::{generate, SceneSpec};
use viewfuse::{DepthMap, Frame, LabeledMesh, SceneBundle};

use crate::config::{self, Config};
use crate::{
    BenchArgs, Command, Common, ConsistencyArgs, EvalArgs, Failure, FuseArgs, InpaintArgs, LossArgs, PipelineArgs,
    ProjectArgs, SynthArgs, Tuning,
};

type Outcome = Result<(), Failure>;

pub fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Project(a) => project(a),
        Command::Inpaint(a) => inpaint(a),
        Command::Consistency(a) => consistency(a),
        Command::Pipeline(a) => run_pipeline(a),
        Command::Fuse(a) => fuse_views(a),
        Command::Eval(a) => eval(a),
        Command::Loss(a) => loss(a),
        Command::Bench(a) => bench(a),
    }
}

fn setup(common: &Common, tuning: &Tuning, base: &[(&str, Value)]) -> Result<Config, Failure> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    let overrides = tuning.overrides(common).map_err(Failure::Usage)?;
    let base: Vec<(String, Value)> = base.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    config::resolve(common.config.as_deref(), &base, &overrides).map_err(Failure::Usage)
}

fn check_backends(cfg: &Config, registry: &Registry) -> Outcome {
    let p = &cfg.pipeline;
    if !registry.has_color(&p.backend_color) {
        return Err(Failure::Usage(format!(
            "unknown color backend '{}' (available: {})",
            p.backend_color,
            registry.color_names().join(", ")
        )));
    }
    if !registry.has_depth(&p.backend_depth) {
        return Err(Failure::Usage(format!(
            "unknown depth backend '{}' (available: {})",
            p.backend_depth,
            registry.depth_names().join(", ")
        )));
    }
    Ok(())
}

fn check_stride(stride: usize) -> Outcome {
    if stride == 0 {
        return Err(Failure::Usage("--stride must be at least 1".into()));
    }
    Ok(())
}

#[derive(Default)]
struct Timings(Vec<StepTiming>);

impl Timings {
    fn time<T>(&mut self, step: &str, size: impl Fn(&T) -> usize, f: impl FnOnce() -> Result<T, Failure>) -> Result<T, Failure> {
        let start = Instant::now();
        let out = f()?;
        self.0.push(StepTiming {
            step: step.to_string(),
            seconds: start.elapsed().as_secs_f64(),
            output_size: size(&out),
        });
        Ok(out)
    }
}

fn write_report(path: &Path, command: &str, cfg: &Config, timings: &Timings, body: Value) -> Outcome {
    let mut report = json!({
        "command": command,
        "config": cfg,
        "threads": rayon::current_num_threads(),
        "timings": timings.0,
    });
    if let (Value::Object(r), Value::Object(b)) = (&mut report, body) {
        r.extend(b);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("report: {}", path.display());
    Ok(())
}

fn report_path(common: &Common, out: &Path, name: &str) -> PathBuf {
    common.report.clone().unwrap_or_else(|| out.join(name))
}

/// Depth format of an existing bundle, judged by its first frame.
fn depth_format_of(dir: &Path) -> DepthFormat {
    io::list_frames(dir)
        .ok()
        .and_then(|stems| stems.first().cloned())
        .and_then(|stem| io::find_depth(&dir.join("depth"), &stem).ok())
        .filter(|p| p.extension().is_some_and(|e| e == "vfd"))
        .map_or(DepthFormat::PngMillimeters, |_| DepthFormat::Float)
}

fn float_depth() -> SaveOptions {
    SaveOptions {
        depth_format: DepthFormat::Float,
        ..Default::default()
    }
}

/// A bundle of completed views that `viewfuse fuse` and `eval` can read.
fn views_bundle(frames: &[Frame], views: &[CompletedView]) -> SceneBundle {
    SceneBundle {
        frames: frames
            .iter()
            .zip(views)
            .map(|(f, v)| Frame {
                id: f.id,
                color: v.color.clone(),
                depth_cap: v.depth.clone(),
                mask: f.mask.clone(),
                camera: f.camera.clone(),
            })
            .collect(),
        mesh: LabeledMesh::default(),
        clean_renders: None,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn synth(a: SynthArgs) -> Outcome {
    let cfg = setup(&a.common, &Tuning::default(), &[])?;
    let mut spec: SceneSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SceneSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let mut t = Timings::default();
    let scene = t.time("generate", |s: &viewfuse::synth::SynthScene| s.cameras.len(), || Ok(generate(&spec)?))?;
    let opts = SaveOptions {
        depth_format: a.depth_format.into(),
        ..Default::default()
    };
    t.time("write", |_: &()| scene.cluttered.frames.len(), || {
        io::save_bundle(&scene.cluttered, &a.out, &opts)?;
        io::save_mesh(&a.out.join("clean_mesh.ply"), &scene.clean_mesh)?;
        Ok(())
    })?;
    let clutter: Vec<Value> = scene
        .clutter
        .iter()
        .map(|c| json!({ "instance_id": c.instance_id, "shape": c.shape, "base": [c.base.x, c.base.y, c.base.z] }))
        .collect();
    let visible: Vec<usize> = scene.visible_clutter.iter().map(|m| m.count()).collect();
    write_report(
        &report_path(&a.common, &a.out, "report.json"),
        "synth",
        &cfg,
        &t,
        json!({ "spec": spec, "frames": scene.cameras.len(), "clutter": clutter, "visible_clutter_pixels": visible }),
    )
}

fn project(a: ProjectArgs) -> Outcome {
    check_stride(a.stride)?;
    let cfg = setup(&a.common, &Tuning::default(), &[])?;
    let mut t = Timings::default();
    let mut bundle = t.time("load", |b: &SceneBundle| b.frames.len(), || Ok(io::load_bundle(&a.bundle, a.stride)?))?;
    t.time("project_masks", |n: &usize| *n, || {
        apply_projected_masks(&bundle.mesh, &mut bundle.frames, &cfg.pipeline.projection)?;
        Ok(bundle.frames.iter().map(|f| f.mask.count()).sum())
    })?;
    let opts = SaveOptions {
        depth_format: depth_format_of(&a.bundle),
        ..Default::default()
    };
    t.time("write", |_: &()| bundle.frames.len(), || Ok(io::save_bundle(&bundle, &a.out, &opts)?))?;
    let masks: Vec<Value> = bundle
        .frames
        .iter()
        .map(|f| json!({ "frame": f.id, "mask_pixels": f.mask.count() }))
        .collect();
    write_report(&report_path(&a.common, &a.out, "report.json"), "project", &cfg, &t, json!({ "masks": masks }))
}

fn load_and_mask(bundle_dir: &Path, stride: usize, cfg: &Config, t: &mut Timings) -> Result<SceneBundle, Failure> {
    let mut bundle = t.time("load", |b: &SceneBundle| b.frames.len(), || Ok(io::load_bundle(bundle_dir, stride)?))?;
    if cfg.pipeline.project_masks {
        t.time("project_masks", |n: &usize| *n, || {
            apply_projected_masks(&bundle.mesh, &mut bundle.frames, &cfg.pipeline.projection)?;
            Ok(bundle.frames.iter().map(|f| f.mask.count()).sum())
        })?;
    }
    Ok(bundle)
}

fn inpaint(a: InpaintArgs) -> Outcome {
    check_stride(a.stride)?;
    let cfg = setup(&a.common, &a.tuning, &[])?;
    let registry = Registry::with_builtins();
    check_backends(&cfg, &registry)?;
    let mut t = Timings::default();
    let bundle = load_and_mask(&a.bundle, a.stride, &cfg, &mut t)?;
    let ctx = backend_context(&bundle, &cfg.pipeline.backends);
    let backends = Backends::from_registry(&registry, &cfg.pipeline.backend_color, &cfg.pipeline.backend_depth, &ctx)?;
    let current = bundle
        .frames
        .iter()
        .map(|f| {
            let (color, depth) = mask_frame(&f.color, &f.depth_cap, &f.mask)?;
            Ok(CompletedView { color, depth })
        })
        .collect::<viewfuse::Result<Vec<_>>>()?;
    let holes: Vec<_> = bundle.frames.iter().map(|f| f.mask.clone()).collect();
    let filled = t.time("inpaint", |v: &Vec<CompletedView>| v.len(), || {
        Ok(inpaint_all(&bundle.frames, &current, &holes, &backends, 0)?
            .into_iter()
            .map(|(color, depth)| CompletedView { color, depth })
            .collect())
    })?;
    let out = views_bundle(&bundle.frames, &filled);
    t.time("write", |_: &()| out.frames.len(), || Ok(io::save_bundle(&out, &a.out, &float_depth())?))?;
    let frames: Vec<Value> = bundle
        .frames
        .iter()
        .zip(&filled)
        .map(|(f, v)| {
            let filled = f.mask.data.iter().zip(&v.depth.data).filter(|(&m, &d)| m && d > 0.0).count();
            json!({ "frame": f.id, "holes": f.mask.count(), "filled": filled })
        })
        .collect();
    write_report(&report_path(&a.common, &a.out, "report.json"), "inpaint", &cfg, &t, json!({ "frames": frames }))
}

fn consistency(a: ConsistencyArgs) -> Outcome {
    check_stride(a.stride)?;
    let cfg = setup(&a.common, &a.tuning, &[])?;
    let mut t = Timings::default();
    let (bundle, pred) = t.time("load", |(b, _): &(SceneBundle, SceneBundle)| b.frames.len(), || {
        Ok((io::load_bundle(&a.bundle, a.stride)?, io::load_bundle(&a.pred, 1)?))
    })?;
    if bundle.frames.len() != pred.frames.len() {
        return Err(Failure::Data(anyhow::anyhow!(
            "{} frames in the bundle (stride {}) but {} in the prediction",
            bundle.frames.len(),
            a.stride,
            pred.frames.len()
        )));
    }
    let views: Vec<ViewInput<'_>> = bundle
        .frames
        .iter()
        .zip(&pred.frames)
        .map(|(f, p)| ViewInput {
            camera: &f.camera,
            d_cap: &f.depth_cap,
            d_pre: &p.depth_cap,
            holes: &p.mask,
            inpainted: &p.mask,
        })
        .collect();
    let outputs = t.time("consistency", |o: &Vec<viewfuse::consistency::StageOutputs>| o.len(), || {
        Ok(run_stages(&views, &cfg.pipeline.consistency)?)
    })?;
    t.time("write", |_: &()| outputs.len(), || {
        for (f, o) in bundle.frames.iter().zip(&outputs) {
            let stem = io::frame_stem(f.id);
            for (k, d) in o.d_con.iter().enumerate() {
                io::save_depth(&a.out.join(format!("stage{}", k + 1)).join(format!("{stem}.vfd")), d)?;
            }
        }
        Ok(())
    })?;
    let diagnostics: Vec<_> = outputs.iter().map(|o| &o.diagnostics).collect();
    write_report(
        &report_path(&a.common, &a.out, "report.json"),
        "consistency",
        &cfg,
        &t,
        json!({ "stages": cfg.pipeline.consistency.stages, "frames": diagnostics }),
    )
}

fn ablation_names(cfg: &Config) -> Vec<&'static str> {
    let s = &cfg.pipeline.consistency.stages;
    let mut names = Vec::new();
    if !s.single_frame {
        names.push("no-single-prune");
    }
    if !s.cross_frame {
        names.push("no-cross-prune");
    }
    if !s.voting {
        names.push("no-voting");
    }
    names
}

fn run_pipeline(a: PipelineArgs) -> Outcome {
    check_stride(a.stride)?;
    let cfg = setup(&a.common, &a.tuning, &[])?;
    let registry = Registry::with_builtins();
    check_backends(&cfg, &registry)?;
    let out_dir = a.out.clone().unwrap_or_else(|| a.bundle.join("pipeline"));
    let mut t = Timings::default();
    let bundle = t.time("load", |b: &SceneBundle| b.frames.len(), || Ok(io::load_bundle(&a.bundle, a.stride)?))?;
    let out = pipeline::run(&bundle, &cfg.pipeline, &registry)?;
    t.0.extend(out.timings.iter().cloned());
    t.time("write", |_: &()| out.cloud.len(), || {
        io::save_cloud(&out_dir.join("cloud.ply"), &out.cloud.points, &out.cloud.normals, &out.cloud.colors)?;
        if let Some(m) = &out.mesh {
            io::save_surface(&out_dir.join("mesh.ply"), &m.vertices, Some(&m.colors), &m.triangles)?;
        }
        io::save_bundle(&views_bundle(&out.frames, &out.refine.views), &out_dir.join("completed"), &float_depth())?;
        Ok(())
    })?;
    write_report(
        &report_path(&a.common, &out_dir, "report.json"),
        "pipeline",
        &cfg,
        &t,
        pipeline_body(&cfg, &out.refine, out.cloud.len(), out.mesh.as_ref().map(|m| (m.vertices.len(), m.triangles.len()))),
    )
}

fn pipeline_body(cfg: &Config, refine: &RefineOutput, cloud_points: usize, mesh: Option<(usize, usize)>) -> Value {
    json!({
        "stages": cfg.pipeline.consistency.stages,
        "ablations": ablation_names(cfg),
        "refine": refine.report,
        "cloud_points": cloud_points,
        "mesh": mesh.map(|(v, f)| json!({ "vertices": v, "triangles": f })),
    })
}

fn fuse_views(a: FuseArgs) -> Outcome {
    check_stride(a.stride)?;
    let cfg = setup(&a.common, &Tuning::default(), &[])?;
    let mut t = Timings::default();
    let bundle = t.time("load", |b: &SceneBundle| b.frames.len(), || Ok(io::load_bundle(&a.views, a.stride)?))?;
    let views: Vec<FuseView<'_>> = bundle
        .frames
        .iter()
        .map(|f| FuseView {
            camera: &f.camera,
            color: &f.color,
            depth: &f.depth_cap,
        })
        .collect();
    let rcfg = &cfg.pipeline.refine;
    let cloud = t.time("fuse", |c: &viewfuse::fuse::FusedCloud| c.len(), || Ok(fuse(&views, rcfg)?))?;
    let mesh = if cfg.pipeline.tsdf {
        Some(t.time("tsdf", |m: &viewfuse::fuse::SurfaceMesh| m.triangles.len(), || Ok(tsdf_fuse(&views, rcfg)?))?)
    } else {
        None
    };
    t.time("write", |_: &()| cloud.len(), || {
        io::save_cloud(&a.out.join("cloud.ply"), &cloud.points, &cloud.normals, &cloud.colors)?;
        if let Some(m) = &mesh {
            io::save_surface(&a.out.join("mesh.ply"), &m.vertices, Some(&m.colors), &m.triangles)?;
        }
        Ok(())
    })?;
    write_report(
        &report_path(&a.common, &a.out, "report.json"),
        "fuse",
        &cfg,
        &t,
        json!({
            "cloud_points": cloud.len(),
            "mesh": mesh.map(|m| json!({ "vertices": m.vertices.len(), "triangles": m.triangles.len() })),
        }),
    )
}

/// Numeric stems of `dir/color/*.png`, sorted.
fn color_stems(dir: &Path) -> Result<Vec<String>, Failure> {
    let color = dir.join("color");
    let mut stems: Vec<(u64, String)> = Vec::new();
    for entry in fs::read_dir(&color).with_context(|| format!("listing {}", color.display()))? {
        let name = entry.with_context(|| format!("listing {}", color.display()))?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if let Ok(n) = stem.parse::<u64>() {
                stems.push((n, stem.to_string()));
            }
        }
    }
    stems.sort();
    Ok(stems.into_iter().map(|(_, s)| s).collect())
}

fn mean_metrics(items: &[ImageMetrics]) -> Option<ImageMetrics> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    Some(ImageMetrics {
        l1: items.iter().map(|m| m.l1).sum::<f64>() / n,
        l2: items.iter().map(|m| m.l2).sum::<f64>() / n,
        psnr: items.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: items.iter().map(|m| m.ssim).sum::<f64>() / n,
        pixels: items.iter().map(|m| m.pixels).sum(),
    })
}

/// Mean absolute depth error where both maps are valid (and `region` holds).
fn depth_l1(pred: &DepthMap, truth: &DepthMap, region: Option<&[bool]>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..truth.data.len() {
        if region.is_some_and(|r| !r[i]) {
            continue;
        }
        let (p, g) = (pred.data[i], truth.data[i]);
        if p > 0.0 && g > 0.0 {
            sum += (p - g).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Serialize)]
struct FrameEval {
    pred: String,
    truth: String,
    color: viewfuse::metrics::ImageReport,
    depth_l1_m: Option<f64>,
    depth_l1_region_m: Option<f64>,
}

fn eval(a: EvalArgs) -> Outcome {
    if a.truth_stride == 0 {
        return Err(Failure::Usage("--truth-stride must be at least 1".into()));
    }
    let cfg = setup(&a.common, &Tuning::default(), &[])?;
    let mut t = Timings::default();
    let pred_stems = color_stems(&a.pred)?;
    let truth_stems: Vec<String> = color_stems(&a.truth)?.into_iter().step_by(a.truth_stride).collect();
    if pred_stems.is_empty() || pred_stems.len() != truth_stems.len() {
        return Err(Failure::Data(anyhow::anyhow!(
            "{} predicted frames but {} ground-truth frames (truth stride {})",
            pred_stems.len(),
            truth_stems.len(),
            a.truth_stride
        )));
    }
    let (mut frames, mut pred_masks, mut truth_masks) = (Vec::new(), Vec::new(), Vec::new());
    t.time("images", |_: &()| pred_stems.len(), || {
        for (ps, ts) in pred_stems.iter().zip(&truth_stems) {
            let pc = io::load_color(&a.pred.join("color").join(format!("{ps}.png")))?;
            let tc = io::load_color(&a.truth.join("color").join(format!("{ts}.png")))?;
            let pm_path = a.pred.join("mask").join(format!("{ps}.png"));
            let region = if pm_path.exists() { Some(io::load_mask(&pm_path)?) } else { None };
            let tm_path = a.truth.join("mask").join(format!("{ts}.png"));
            if let (Some(pm), true) = (&region, tm_path.exists()) {
                pred_masks.extend_from_slice(&pm.data);
                truth_masks.extend_from_slice(&io::load_mask(&tm_path)?.data);
            }
            let color = image_metrics(&pc, &tc, region.as_ref())?;
            let (mut full, mut inside) = (None, None);
            if let (Ok(pd), Ok(td)) = (io::find_depth(&a.pred.join("depth"), ps), io::find_depth(&a.truth.join("depth"), ts)) {
                let (pd, td) = (io::load_depth(&pd)?, io::load_depth(&td)?);
                if pd.dims() != td.dims() {
                    return Err(Failure::Data(anyhow::anyhow!("depth {ps} and {ts} differ in size")));
                }
                full = depth_l1(&pd, &td, None);
                inside = region.as_ref().and_then(|m| depth_l1(&pd, &td, Some(&m.data)));
            }
            frames.push(FrameEval {
                pred: ps.clone(),
                truth: ts.clone(),
                color,
                depth_l1_m: full,
                depth_l1_region_m: inside,
            });
        }
        Ok(())
    })?;
    let masks = if pred_masks.is_empty() { None } else { Some(mask_metrics(&pred_masks, &truth_masks)?) };
    let geometry = match (&a.pred_geometry, &a.truth_geometry) {
        (Some(p), Some(g)) => Some(t.time("chamfer", |_: &Value| 1, || {
            let points = |path: &Path| -> Result<Vec<_>, Failure> {
                io::read_ply(path)?
                    .points()
                    .ok_or_else(|| Failure::Data(anyhow::anyhow!("{} has no x/y/z vertex properties", path.display())))
            };
            Ok(serde_json::to_value(chamfer(&points(p)?, &points(g)?)?).expect("serializes"))
        })?),
        _ => None,
    };
    let full: Vec<ImageMetrics> = frames.iter().map(|f| f.color.full).collect();
    let region: Vec<ImageMetrics> = frames.iter().filter_map(|f| f.color.region).collect();
    write_report(
        &report_path(&a.common, &a.pred, "metrics.json"),
        "eval",
        &cfg,
        &t,
        json!({
            "chamfer_formula": CHAMFER_FORMULA,
            "mean": { "full": mean_metrics(&full), "region": mean_metrics(&region) },
            "masks": masks,
            "chamfer": geometry,
            "frames": frames,
        }),
    )
}

fn loss(a: LossArgs) -> Outcome {
    let mut tuning_common = a.common.clone();
    if let Some(k) = a.k {
        tuning_common.set.push(format!("loss.k={k}"));
    }
    let cfg = setup(&tuning_common, &Tuning::default(), &[])?;
    let mut t = Timings::default();
    let mesh = t.time("load", |m: &LabeledMesh| m.vertices.len(), || Ok(io::load_mesh(&a.mesh)?))?;
    let raw: Value = read_json(&a.pred)?;
    let preds = match &raw {
        Value::Array(items) if items.iter().all(Value::is_number) => {
            PredictionSet::from_clutter_probs(&items.iter().map(|v| v.as_f64().expect("number")).collect::<Vec<_>>())
        }
        _ => PredictionSet {
            probs: serde_json::from_value(raw).context("predictions must be numbers or [p0, p1] pairs")?,
        },
    };
    let report = t.time("loss", |_: &viewfuse::loss::LossReport| 1, || Ok(area_sensitive_ce(&mesh, &preds, &cfg.loss)?))?;
    let combined = match a.loss_2d {
        Some(l2) => Some(combined_loss(report.loss, l2, &cfg.loss)?),
        None => None,
    };
    let path = a.common.report.clone().unwrap_or_else(|| PathBuf::from("loss_report.json"));
    write_report(&path, "loss", &cfg, &t, json!({ "loss": report, "combined": combined }))
}

fn bench(a: BenchArgs) -> Outcome {
    if a.seeds == 0 || a.frames == 0 || a.width == 0 {
        return Err(Failure::Usage("--seeds, --frames and --width must be positive".into()));
    }
    let base = [("backend_depth", json!("adversarial")), ("project_masks", json!(false)), ("tsdf", json!(false))];
    let cfg = setup(&a.common, &a.tuning, &base)?;
    let registry = Registry::with_builtins();
    check_backends(&cfg, &registry)?;
    let mut spec: SceneSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SceneSpec::default(),
    };
    spec.cameras.count = a.frames;
    spec.cameras.resize(a.width);
    let ladder = ablation_ladder();
    let mut per_seed = vec![Vec::new(); ladder.len()];
    let mut seconds = vec![0.0; ladder.len()];
    let mut t = Timings::default();
    for seed in 0..a.seeds {
        spec.seed = seed;
        let scene = t.time("generate", |s: &viewfuse::synth::SynthScene| s.cameras.len(), || Ok(generate(&spec)?))?;
        let mut bundle = scene.cluttered;
        t.time("project_masks", |n: &usize| *n, || {
            apply_projected_masks(&bundle.mesh, &mut bundle.frames, &cfg.pipeline.projection)?;
            Ok(bundle.frames.iter().map(|f| f.mask.count()).sum())
        })?;
        let clean = bundle.clean_renders.as_ref().expect("synthetic bundles carry clean renders");
        let truth: Vec<&DepthMap> = clean.iter().map(|c| &c.depth).collect();
        let max_depth = cfg.pipeline.refine.fuse_max_depth;
        let gt = masked_points(&bundle.frames, &truth, max_depth)?;
        for (k, (_, toggles)) in ladder.iter().enumerate() {
            let mut p = cfg.pipeline.clone();
            p.consistency.stages = *toggles;
            let start = Instant::now();
            let out = pipeline::run(&bundle, &p, &registry)?;
            seconds[k] += start.elapsed().as_secs_f64();
            let depths: Vec<&DepthMap> = out.refine.views.iter().map(|v| &v.depth).collect();
            let pred = masked_points(&bundle.frames, &depths, max_depth)?;
            per_seed[k].push(chamfer(&pred, &gt)?.chamfer_cm);
        }
        log::info!("seed {seed}: {:?}", per_seed.iter().map(|v| v.last()).collect::<Vec<_>>());
    }
    let means: Vec<f64> = per_seed.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let rows: Vec<Value> = ladder
        .iter()
        .enumerate()
        .map(|(k, (name, toggles))| {
            json!({ "checks": name, "stages": toggles, "mean_chamfer_cm": means[k], "per_seed_cm": per_seed[k], "seconds": seconds[k] })
        })
        .collect();
    let monotone = means.windows(2).all(|w| w[0] >= w[1]);
    for r in &rows {
        println!("{:<14} {:>8.3} cm", r["checks"].as_str().unwrap_or(""), r["mean_chamfer_cm"].as_f64().unwrap_or(f64::NAN));
    }
    write_report(
        &report_path(&a.common, &a.out, "report.json"),
        "bench",
        &cfg,
        &t,
        json!({
            "spec": spec,
            "seeds": a.seeds,
            "chamfer_formula": CHAMFER_FORMULA,
            "ladder": rows,
            "monotone": monotone,
            "full_over_none": means[means.len() - 1] / means[0],
        }),
    )
}
