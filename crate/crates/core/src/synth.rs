//! Procedural indoor scenes with exact ray-cast RGB-D ground truth.
//!
//! A scene is a closed room shell, some non-clutter furniture boxes, and
//! small clutter instances (boxes and spheres) resting on upward-facing
//! surfaces. Everything is tessellated into one labeled triangle mesh and
//! rendered by casting one ray per pixel against that mesh, so the depth of
//! any planar surface is exact up to floating point.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::image::Mask;
use crate::raycast::{render, Bvh, NO_HIT};
use crate::scene::{CleanRender, Frame, LabeledMesh, SceneBundle};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    #[serde(default = "default_furniture_color")]
    pub color: [u8; 3],
}

fn default_furniture_color() -> [u8; 3] {
    [120, 90, 60]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ClutterShape {
    Box { size: [f64; 3] },
    Sphere { radius: f64 },
}

impl ClutterShape {
    fn half_footprint(&self) -> [f64; 2] {
        match *self {
            ClutterShape::Box { size } => [size[0] / 2.0, size[1] / 2.0],
            ClutterShape::Sphere { radius } => [radius, radius],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClutterSpec {
    #[serde(flatten)]
    pub shape: ClutterShape,
    /// Footprint center (x, y); chosen at random on a support surface when absent.
    #[serde(default)]
    pub at: Option<[f64; 2]>,
    #[serde(default)]
    pub color: Option<[u8; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    /// Camera-to-look-at distance band in meters.
    pub distance: [f64; 2],
    /// Downward viewing angle band in degrees.
    pub elevation_deg: [f64; 2],
    /// Uniform jitter (meters) applied to the look-at point.
    pub look_at_jitter: f64,
    /// Fraction of a full circle covered by the orbit.
    pub arc: f64,
    /// Explicit look-at point; defaults to the centroid of the clutter.
    pub look_at: Option<[f64; 3]>,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            count: 20,
            width: 304,
            height: 228,
            fx: 250.0,
            fy: 250.0,
            distance: [2.0, 5.0],
            elevation_deg: [25.0, 50.0],
            look_at_jitter: 0.25,
            arc: 1.0,
            look_at: None,
        }
    }
}

impl CameraSpec {
    /// Changes the resolution to `width` pixels wide, keeping the aspect
    /// ratio and the field of view.
    pub fn resize(&mut self, width: usize) {
        let scale = width as f64 / self.width as f64;
        self.height = ((self.height as f64 * scale).round() as usize).max(1);
        self.width = width;
        self.fx *= scale;
        self.fy *= scale;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Room extent in meters: the room spans `[0, x] × [0, y] × [0, z]`, z up.
    pub room: [f64; 3],
    pub furniture: Vec<BoxSpec>,
    pub clutter: Vec<ClutterSpec>,
    /// Additional clutter instances placed at random.
    pub random_clutter: usize,
    pub cameras: CameraSpec,
    /// Maximum triangle edge length used when tessellating primitives.
    pub tessellation: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            room: [7.0, 6.0, 2.8],
            furniture: vec![
                BoxSpec {
                    min: [3.0, 2.6, 0.0],
                    max: [4.2, 3.4, 0.75],
                    color: [130, 85, 50],
                },
                BoxSpec {
                    min: [0.0, 1.0, 0.0],
                    max: [0.5, 2.2, 1.0],
                    color: [80, 110, 150],
                },
                BoxSpec {
                    min: [5.2, 4.6, 0.0],
                    max: [6.4, 5.1, 0.45],
                    color: [60, 130, 90],
                },
            ],
            clutter: Vec::new(),
            random_clutter: 6,
            cameras: CameraSpec::default(),
            tessellation: 0.05,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::DegenerateSpec(m.to_string()));
        if self.room.iter().any(|&v| !(v > 0.0)) {
            return bad("room dimensions must be positive");
        }
        if self.cameras.count == 0 {
            return bad("at least one camera is required");
        }
        if self.cameras.width == 0 || self.cameras.height == 0 || !(self.cameras.fx > 0.0 && self.cameras.fy > 0.0) {
            return bad("camera intrinsics must be positive");
        }
        let [d0, d1] = self.cameras.distance;
        if !(d0 > 0.0 && d1 >= d0) {
            return bad("camera distance band must be positive and ordered");
        }
        if !(self.tessellation > 0.0) {
            return bad("tessellation must be positive");
        }
        for f in &self.furniture {
            for k in 0..3 {
                if !(f.min[k] < f.max[k]) || f.min[k] < 0.0 || f.max[k] > self.room[k] {
                    return bad("furniture boxes must be non-empty and inside the room");
                }
            }
        }
        Ok(())
    }
}

/// A placed clutter instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacedClutter {
    pub instance_id: i32,
    pub shape: ClutterShape,
    /// Center of the footprint on its support surface.
    pub base: Point3<f64>,
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub spec: SceneSpec,
    /// Room shell and furniture only.
    pub clean_mesh: LabeledMesh,
    /// Clean mesh plus clutter instances.
    pub cluttered_mesh: LabeledMesh,
    pub clutter: Vec<PlacedClutter>,
    pub cameras: Vec<CameraModel>,
    /// Cluttered captures (empty masks) with the clean renders attached.
    pub cluttered: SceneBundle,
    /// Clean captures of the same cameras.
    pub clean: SceneBundle,
    /// Per view, pixels whose first hit is a clutter triangle.
    pub visible_clutter: Vec<Mask>,
}

const SHELL_COLORS: [[u8; 3]; 6] = [
    [150, 125, 95],  // floor
    [225, 225, 220], // ceiling
    [205, 195, 175], // wall y=0
    [185, 200, 205], // wall y=max
    [200, 185, 200], // wall x=0
    [190, 205, 180], // wall x=max
];

struct MeshBuilder {
    mesh: LabeledMesh,
    tess: f64,
}

impl MeshBuilder {
    fn new(tess: f64) -> Self {
        Self {
            mesh: LabeledMesh {
                colors: Some(Vec::new()),
                ..Default::default()
            },
            tess,
        }
    }

    fn push_vertex(&mut self, p: Point3<f64>, instance: i32, clutter: bool, color: [u8; 3]) -> u32 {
        self.mesh.vertices.push(p);
        self.mesh.instance_id.push(instance);
        self.mesh.clutter.push(clutter);
        self.mesh.colors.as_mut().unwrap().push(color);
        (self.mesh.vertices.len() - 1) as u32
    }

    /// Grid-tessellated parallelogram `origin + s * eu + t * ev`, s, t in [0, 1].
    fn quad(&mut self, origin: Point3<f64>, eu: Vector3<f64>, ev: Vector3<f64>, instance: i32, clutter: bool, color: [u8; 3]) {
        let nu = ((eu.norm() / self.tess).ceil() as usize).max(1);
        let nv = ((ev.norm() / self.tess).ceil() as usize).max(1);
        let base = self.mesh.vertices.len() as u32;
        for j in 0..=nv {
            for i in 0..=nu {
                let p = origin + eu * (i as f64 / nu as f64) + ev * (j as f64 / nv as f64);
                self.push_vertex(p, instance, clutter, color);
            }
        }
        let row = (nu + 1) as u32;
        for j in 0..nv as u32 {
            for i in 0..nu as u32 {
                let a = base + j * row + i;
                let b = a + 1;
                let c = a + row + 1;
                let d = a + row;
                self.mesh.triangles.push([a, b, c]);
                self.mesh.triangles.push([a, c, d]);
            }
        }
    }

    fn cuboid(&mut self, min: [f64; 3], max: [f64; 3], instance: i32, clutter: bool, color: [u8; 3]) {
        let [x0, y0, z0] = min;
        let [x1, y1, z1] = max;
        let (dx, dy, dz) = (x1 - x0, y1 - y0, z1 - z0);
        let p = Point3::new;
        let ex = Vector3::new(dx, 0.0, 0.0);
        let ey = Vector3::new(0.0, dy, 0.0);
        let ez = Vector3::new(0.0, 0.0, dz);
        self.quad(p(x0, y0, z0), ey, ex, instance, clutter, color); // bottom
        self.quad(p(x0, y0, z1), ex, ey, instance, clutter, color); // top
        self.quad(p(x0, y0, z0), ex, ez, instance, clutter, color); // y0
        self.quad(p(x0, y1, z0), ez, ex, instance, clutter, color); // y1
        self.quad(p(x0, y0, z0), ez, ey, instance, clutter, color); // x0
        self.quad(p(x1, y0, z0), ey, ez, instance, clutter, color); // x1
    }

    fn sphere(&mut self, center: Point3<f64>, r: f64, instance: i32, color: [u8; 3]) {
        let n_lat = ((std::f64::consts::PI * r / self.tess).ceil() as usize).max(6);
        let n_lon = ((2.0 * std::f64::consts::PI * r / self.tess).ceil() as usize).max(8);
        let top = self.push_vertex(center + Vector3::new(0.0, 0.0, r), instance, true, color);
        let mut rings = Vec::new();
        for i in 1..n_lat {
            let theta = std::f64::consts::PI * i as f64 / n_lat as f64;
            let start = self.mesh.vertices.len() as u32;
            for j in 0..n_lon {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / n_lon as f64;
                let p = center + Vector3::new(r * theta.sin() * phi.cos(), r * theta.sin() * phi.sin(), r * theta.cos());
                self.push_vertex(p, instance, true, color);
            }
            rings.push(start);
        }
        let bottom = self.push_vertex(center - Vector3::new(0.0, 0.0, r), instance, true, color);
        let n = n_lon as u32;
        for j in 0..n {
            let k = (j + 1) % n;
            self.mesh.triangles.push([top, rings[0] + j, rings[0] + k]);
            let last = *rings.last().unwrap();
            self.mesh.triangles.push([bottom, last + k, last + j]);
        }
        for w in rings.windows(2) {
            let (a, b) = (w[0], w[1]);
            for j in 0..n {
                let k = (j + 1) % n;
                self.mesh.triangles.push([a + j, b + j, b + k]);
                self.mesh.triangles.push([a + j, b + k, a + k]);
            }
        }
    }
}

/// Horizontal support rectangle at height `z`.
#[derive(Clone, Copy, Debug)]
struct Support {
    min: [f64; 2],
    max: [f64; 2],
    z: f64,
}

fn build_shell(spec: &SceneSpec) -> LabeledMesh {
    let [x, y, z] = spec.room;
    let mut b = MeshBuilder::new(spec.tessellation);
    let p = Point3::new;
    let ex = Vector3::new(x, 0.0, 0.0);
    let ey = Vector3::new(0.0, y, 0.0);
    let ez = Vector3::new(0.0, 0.0, z);
    b.quad(p(0.0, 0.0, 0.0), ex, ey, 0, false, SHELL_COLORS[0]);
    b.quad(p(0.0, 0.0, z), ey, ex, 1, false, SHELL_COLORS[1]);
    b.quad(p(0.0, 0.0, 0.0), ez, ex, 2, false, SHELL_COLORS[2]);
    b.quad(p(0.0, y, 0.0), ex, ez, 3, false, SHELL_COLORS[3]);
    b.quad(p(0.0, 0.0, 0.0), ey, ez, 4, false, SHELL_COLORS[4]);
    b.quad(p(x, 0.0, 0.0), ez, ey, 5, false, SHELL_COLORS[5]);
    for (k, f) in spec.furniture.iter().enumerate() {
        b.cuboid(f.min, f.max, 6 + k as i32, false, f.color);
    }
    b.mesh
}

fn overlaps(a_min: [f64; 2], a_max: [f64; 2], b_min: [f64; 2], b_max: [f64; 2], gap: f64) -> bool {
    a_min[0] < b_max[0] + gap && b_min[0] < a_max[0] + gap && a_min[1] < b_max[1] + gap && b_min[1] < a_max[1] + gap
}

fn random_shape(rng: &mut ChaCha8Rng) -> ClutterShape {
    if rng.gen_bool(0.6) {
        ClutterShape::Box {
            size: [rng.gen_range(0.12..0.35), rng.gen_range(0.12..0.35), rng.gen_range(0.08..0.3)],
        }
    } else {
        ClutterShape::Sphere {
            radius: rng.gen_range(0.07..0.15),
        }
    }
}

const CLUTTER_PALETTE: [[u8; 3]; 8] = [
    [220, 40, 40],
    [40, 180, 60],
    [40, 70, 220],
    [230, 200, 30],
    [200, 60, 200],
    [30, 200, 210],
    [240, 130, 20],
    [110, 50, 20],
];

fn place_clutter(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<PlacedClutter>> {
    let [rx, ry, _] = spec.room;
    let floor = Support {
        min: [0.0, 0.0],
        max: [rx, ry],
        z: 0.0,
    };
    let tops: Vec<Support> = spec
        .furniture
        .iter()
        .map(|f| Support {
            min: [f.min[0], f.min[1]],
            max: [f.max[0], f.max[1]],
            z: f.max[2],
        })
        .collect();
    // Height of the highest support under a footprint, or None if the
    // footprint straddles surfaces of different height.
    let support_at = |lo: [f64; 2], hi: [f64; 2]| -> Option<f64> {
        let mut z = None;
        for t in &tops {
            if overlaps(lo, hi, t.min, t.max, 0.0) {
                let inside = lo[0] >= t.min[0] && hi[0] <= t.max[0] && lo[1] >= t.min[1] && hi[1] <= t.max[1];
                if !inside {
                    return None;
                }
                z = Some(t.z);
            }
        }
        Some(z.unwrap_or(floor.z))
    };
    let first_id = 6 + spec.furniture.len() as i32;
    let mut placed: Vec<PlacedClutter> = Vec::new();
    let mut footprints: Vec<([f64; 2], [f64; 2])> = Vec::new();
    let mut requests: Vec<ClutterSpec> = spec.clutter.clone();
    for _ in 0..spec.random_clutter {
        requests.push(ClutterSpec {
            shape: random_shape(rng),
            at: None,
            color: None,
        });
    }
    // Random floor clutter stays away from the walls so orbiting cameras can see it.
    let margin = 1.0;
    for req in requests {
        let [hx, hy] = req.shape.half_footprint();
        let id = first_id + placed.len() as i32;
        let mut chosen = None;
        for _ in 0..500 {
            let (cx, cy) = match req.at {
                Some([x, y]) => (x, y),
                None => {
                    // Half of the random instances go on furniture tops.
                    let s = if !tops.is_empty() && rng.gen_bool(0.5) {
                        tops[rng.gen_range(0..tops.len())]
                    } else {
                        Support {
                            min: [margin, margin],
                            max: [rx - margin, ry - margin],
                            z: 0.0,
                        }
                    };
                    if s.max[0] - s.min[0] <= 2.0 * hx || s.max[1] - s.min[1] <= 2.0 * hy {
                        continue;
                    }
                    (rng.gen_range(s.min[0] + hx..s.max[0] - hx), rng.gen_range(s.min[1] + hy..s.max[1] - hy))
                }
            };
            let lo = [cx - hx, cy - hy];
            let hi = [cx + hx, cy + hy];
            if lo[0] < 0.0 || lo[1] < 0.0 || hi[0] > rx || hi[1] > ry {
                if req.at.is_some() {
                    return Err(Error::DegenerateSpec(format!("clutter at ({cx}, {cy}) leaves the room")));
                }
                continue;
            }
            let Some(z) = support_at(lo, hi) else {
                if req.at.is_some() {
                    return Err(Error::DegenerateSpec(format!("clutter at ({cx}, {cy}) straddles a furniture edge")));
                }
                continue;
            };
            if footprints.iter().any(|(a, b)| overlaps(lo, hi, *a, *b, 0.05)) {
                if req.at.is_some() {
                    return Err(Error::DegenerateSpec(format!("clutter at ({cx}, {cy}) overlaps another instance")));
                }
                continue;
            }
            chosen = Some((Point3::new(cx, cy, z), lo, hi));
            break;
        }
        let Some((base, lo, hi)) = chosen else {
            return Err(Error::DegenerateSpec("could not place all clutter instances".into()));
        };
        footprints.push((lo, hi));
        placed.push(PlacedClutter {
            instance_id: id,
            shape: req.shape.clone(),
            base,
        });
    }
    Ok(placed)
}

fn clutter_mesh(spec: &SceneSpec, clutter: &[PlacedClutter], requests_colors: &[Option<[u8; 3]>]) -> LabeledMesh {
    let mut b = MeshBuilder::new(spec.tessellation);
    for (k, c) in clutter.iter().enumerate() {
        let color = requests_colors
            .get(k)
            .copied()
            .flatten()
            .unwrap_or(CLUTTER_PALETTE[k % CLUTTER_PALETTE.len()]);
        match c.shape {
            ClutterShape::Box { size } => {
                let min = [c.base.x - size[0] / 2.0, c.base.y - size[1] / 2.0, c.base.z];
                let max = [c.base.x + size[0] / 2.0, c.base.y + size[1] / 2.0, c.base.z + size[2]];
                b.cuboid(min, max, c.instance_id, true, color);
            }
            ClutterShape::Sphere { radius } => {
                b.sphere(c.base + Vector3::new(0.0, 0.0, radius), radius, c.instance_id, color);
            }
        }
    }
    b.mesh
}

fn inside_box(p: &Point3<f64>, b: &BoxSpec, margin: f64) -> bool {
    (0..3).all(|k| p[k] > b.min[k] - margin && p[k] < b.max[k] + margin)
}

fn place_cameras(spec: &SceneSpec, target: Point3<f64>, rng: &mut ChaCha8Rng) -> Result<Vec<CameraModel>> {
    let cs = &spec.cameras;
    let [rx, ry, rz] = spec.room;
    let margin = 0.15;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut cams = Vec::with_capacity(cs.count);
    for k in 0..cs.count {
        let az = phase + std::f64::consts::TAU * cs.arc * k as f64 / cs.count as f64;
        let mut found = None;
        for attempt in 0..400 {
            let j = cs.look_at_jitter;
            let look = if j > 0.0 {
                target + Vector3::new(rng.gen_range(-j..=j), rng.gen_range(-j..=j), rng.gen_range(-j..=j) * 0.5)
            } else {
                target
            };
            let (d0, d1) = (cs.distance[0], cs.distance[1]);
            // Later attempts favour the near end of the band so tight rooms still fit.
            let hi = d1 - (d1 - d0) * (attempt as f64 / 400.0);
            let d = if hi > d0 { rng.gen_range(d0..=hi) } else { d0 };
            let (e0, e1) = (cs.elevation_deg[0].to_radians(), cs.elevation_deg[1].to_radians());
            let e = if e1 > e0 { rng.gen_range(e0..=e1) } else { e0 };
            // Widen the azimuth search when the nominal direction is blocked by a wall.
            let spread = std::f64::consts::PI * (attempt as f64 / 400.0);
            let a = az + if spread > 0.0 { rng.gen_range(-spread..=spread) } else { 0.0 };
            let eye = look + Vector3::new(d * e.cos() * a.cos(), d * e.cos() * a.sin(), d * e.sin());
            let inside_room = eye.x > margin && eye.y > margin && eye.x < rx - margin && eye.y < ry - margin && eye.z > 0.3 && eye.z < rz - margin;
            if !inside_room || spec.furniture.iter().any(|f| inside_box(&eye, f, 0.1)) {
                continue;
            }
            let cx = (cs.width as f64 - 1.0) / 2.0;
            let cy = (cs.height as f64 - 1.0) / 2.0;
            found = Some(CameraModel::look_at(cs.fx, cs.fy, cx, cy, cs.width, cs.height, eye, look, Vector3::z())?);
            break;
        }
        cams.push(found.ok_or_else(|| Error::DegenerateSpec(format!("could not place camera {k} inside the room")))?);
    }
    Ok(cams)
}

/// Builds the clean and cluttered scenes and renders both from the same
/// cameras.
pub fn generate(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clean_mesh = build_shell(spec);
    let clutter = place_clutter(spec, &mut rng)?;
    let colors: Vec<Option<[u8; 3]>> = spec.clutter.iter().map(|c| c.color).collect();
    let mut cluttered_mesh = clean_mesh.clone();
    cluttered_mesh.append(&clutter_mesh(spec, &clutter, &colors));

    let target = match spec.cameras.look_at {
        Some(t) => Point3::from(t),
        None if !clutter.is_empty() => {
            let n = clutter.len() as f64;
            let sum = clutter.iter().fold(Vector3::zeros(), |acc, c| acc + c.base.coords);
            Point3::from(sum / n)
        }
        None => Point3::new(spec.room[0] / 2.0, spec.room[1] / 2.0, 0.5),
    };
    let cameras = place_cameras(spec, target, &mut rng)?;

    let clean_bvh = Bvh::build(&clean_mesh);
    let clutter_bvh = Bvh::build(&cluttered_mesh);
    let mut clean_frames = Vec::with_capacity(cameras.len());
    let mut cluttered_frames = Vec::with_capacity(cameras.len());
    let mut clean_renders = Vec::with_capacity(cameras.len());
    let mut visible_clutter = Vec::with_capacity(cameras.len());
    for (id, cam) in cameras.iter().enumerate() {
        let (w, h) = cam.dims();
        let clean = render(&clean_bvh, cam);
        let dirty = render(&clutter_bvh, cam);
        let vis = Mask {
            width: w,
            height: h,
            data: dirty
                .triangle
                .iter()
                .map(|&t| t != NO_HIT && cluttered_mesh.triangle_is_clutter(t as usize))
                .collect(),
        };
        clean_renders.push(CleanRender {
            color: clean.color.clone(),
            depth: clean.depth.clone(),
        });
        clean_frames.push(Frame::new(id, clean.color, clean.depth, Mask::new(w, h), cam.clone())?);
        cluttered_frames.push(Frame::new(id, dirty.color, dirty.depth, Mask::new(w, h), cam.clone())?);
        visible_clutter.push(vis);
    }
    let cluttered = SceneBundle {
        frames: cluttered_frames,
        mesh: cluttered_mesh.clone(),
        clean_renders: Some(clean_renders.clone()),
    };
    let clean = SceneBundle {
        frames: clean_frames,
        mesh: clean_mesh.clone(),
        clean_renders: Some(clean_renders),
    };
    Ok(SynthScene {
        spec: spec.clone(),
        clean_mesh,
        cluttered_mesh,
        clutter,
        cameras,
        cluttered,
        clean,
        visible_clutter,
    })
}

// ------------------------------------------------------------ convex hull

/// Convex polytope as outward-facing planes `n · x <= d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexHull {
    pub planes: Vec<(Vector3<f64>, f64)>,
}

impl ConvexHull {
    /// Incremental hull of a point set. Returns `None` for sets with fewer
    /// than four non-coplanar points.
    pub fn from_points(points: &[Point3<f64>]) -> Option<Self> {
        if points.len() < 4 {
            return None;
        }
        let scale = points
            .iter()
            .map(|p| p.coords.amax())
            .fold(1.0f64, f64::max);
        let eps = 1e-10 * scale;
        let i0 = 0;
        let i1 = (0..points.len()).max_by(|&a, &b| {
            (points[a] - points[i0]).norm().total_cmp(&(points[b] - points[i0]).norm())
        })?;
        let line = (points[i1] - points[i0]).try_normalize(eps)?;
        let dist_line = |p: &Point3<f64>| {
            let v = p - points[i0];
            (v - line * v.dot(&line)).norm()
        };
        let i2 = (0..points.len()).max_by(|&a, &b| dist_line(&points[a]).total_cmp(&dist_line(&points[b])))?;
        if dist_line(&points[i2]) <= eps {
            return None;
        }
        let n = (points[i1] - points[i0]).cross(&(points[i2] - points[i0])).normalize();
        let dist_plane = |p: &Point3<f64>| n.dot(&(p - points[i0]));
        let i3 = (0..points.len()).max_by(|&a, &b| dist_plane(&points[a]).abs().total_cmp(&dist_plane(&points[b]).abs()))?;
        if dist_plane(&points[i3]).abs() <= eps {
            return None;
        }
        let interior = Point3::from((points[i0].coords + points[i1].coords + points[i2].coords + points[i3].coords) / 4.0);
        let orient = |f: [usize; 3]| -> [usize; 3] {
            let nn = (points[f[1]] - points[f[0]]).cross(&(points[f[2]] - points[f[0]]));
            if nn.dot(&(interior - points[f[0]])) > 0.0 {
                [f[0], f[2], f[1]]
            } else {
                f
            }
        };
        let mut faces: Vec<[usize; 3]> = vec![
            orient([i0, i1, i2]),
            orient([i0, i1, i3]),
            orient([i0, i2, i3]),
            orient([i1, i2, i3]),
        ];
        let above = |f: &[usize; 3], p: &Point3<f64>| -> f64 {
            let nn = (points[f[1]] - points[f[0]]).cross(&(points[f[2]] - points[f[0]]));
            let len = nn.norm();
            if len == 0.0 {
                return f64::NEG_INFINITY;
            }
            nn.dot(&(p - points[f[0]])) / len
        };
        for (pi, p) in points.iter().enumerate() {
            if [i0, i1, i2, i3].contains(&pi) {
                continue;
            }
            let visible: Vec<bool> = faces.iter().map(|f| above(f, p) > eps).collect();
            if !visible.iter().any(|&v| v) {
                continue;
            }
            let mut edges: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
                for k in 0..3 {
                    *edges.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
                }
            }
            let horizon: Vec<(usize, usize)> = edges
                .keys()
                .filter(|&&(a, b)| !edges.contains_key(&(b, a)))
                .copied()
                .collect();
            let mut next: Vec<[usize; 3]> = faces
                .iter()
                .zip(&visible)
                .filter(|(_, &v)| !v)
                .map(|(f, _)| *f)
                .collect();
            for (a, b) in horizon {
                next.push([a, b, pi]);
            }
            faces = next;
        }
        let planes = faces
            .iter()
            .filter_map(|f| {
                let nn = (points[f[1]] - points[f[0]]).cross(&(points[f[2]] - points[f[0]]));
                let nn = nn.try_normalize(0.0)?;
                Some((nn, nn.dot(&points[f[0]].coords)))
            })
            .collect();
        Some(Self { planes })
    }

    /// Inside or on the boundary, within `tol` meters.
    pub fn contains(&self, p: &Point3<f64>, tol: f64) -> bool {
        self.planes.iter().all(|(n, d)| n.dot(&p.coords) <= d + tol)
    }
}

/// Tolerance for counting a centroid as lying on a hull face.
pub const HULL_TOL: f64 = 1e-6;

/// Removes clean-mesh triangles whose centroid lies inside (or on) the
/// convex hull of any dropped clutter instance.
pub fn carve_holes(clean_mesh: &LabeledMesh, dropped_clutter: &LabeledMesh) -> LabeledMesh {
    let mut by_instance: BTreeMap<i32, Vec<Point3<f64>>> = BTreeMap::new();
    for (p, &id) in dropped_clutter.vertices.iter().zip(&dropped_clutter.instance_id) {
        by_instance.entry(id).or_default().push(*p);
    }
    let hulls: Vec<ConvexHull> = by_instance
        .values()
        .filter_map(|pts| ConvexHull::from_points(pts))
        .collect();
    let mut out = clean_mesh.clone();
    let verts = &clean_mesh.vertices;
    out.retain_triangles(|_, t| {
        let c = Point3::from((verts[t[0] as usize].coords + verts[t[1] as usize].coords + verts[t[2] as usize].coords) / 3.0);
        !hulls.iter().any(|h| h.contains(&c, HULL_TOL))
    });
    out
}

/// Clutter-only sub-mesh of a labeled mesh.
pub fn clutter_only(mesh: &LabeledMesh) -> LabeledMesh {
    mesh.select_vertices(|i| mesh.clutter[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SceneSpec {
        SceneSpec {
            cameras: CameraSpec {
                count: 3,
                width: 64,
                height: 48,
                fx: 55.0,
                fy: 55.0,
                ..Default::default()
            },
            tessellation: 0.25,
            random_clutter: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a.cluttered, b.cluttered);
        assert_eq!(a.clean, b.clean);
        let mut other = small_spec();
        other.seed = 9;
        assert_ne!(generate(&other).unwrap().cluttered, a.cluttered);
    }

    #[test]
    fn no_clutter_means_identical_bundles() {
        let mut spec = small_spec();
        spec.random_clutter = 0;
        let s = generate(&spec).unwrap();
        assert_eq!(s.cluttered, s.clean);
        assert!(s.visible_clutter.iter().all(|m| m.is_empty()));
    }

    #[test]
    fn labels_and_support() {
        let s = generate(&small_spec()).unwrap();
        s.cluttered_mesh.validate().unwrap();
        assert_eq!(s.clutter.len(), 3);
        for c in &s.clutter {
            let z_ok = c.base.z == 0.0 || s.spec.furniture.iter().any(|f| f.max[2] == c.base.z);
            assert!(z_ok, "clutter must rest on an upward surface, z={}", c.base.z);
        }
        let n_clutter = s.cluttered_mesh.clutter.iter().filter(|&&c| c).count();
        assert_eq!(n_clutter, s.cluttered_mesh.vertices.len() - s.clean_mesh.vertices.len());
    }

    #[test]
    fn cameras_respect_distance_band() {
        let mut spec = small_spec();
        spec.cameras.look_at_jitter = 0.0;
        spec.cameras.look_at = Some([3.5, 3.0, 0.5]);
        let s = generate(&spec).unwrap();
        for cam in &s.cameras {
            let d = (cam.center() - Point3::new(3.5, 3.0, 0.5)).norm();
            assert!((2.0 - 1e-9..=5.0 + 1e-9).contains(&d), "{d}");
        }
    }

    #[test]
    fn wall_depth_is_analytic() {
        // Camera at y = 0.5 looking straight at the y = 6 wall, 5.5 m away.
        let mesh = build_shell(&SceneSpec {
            furniture: vec![],
            ..Default::default()
        });
        let bvh = Bvh::build(&mesh);
        let cam = CameraModel::look_at(
            100.0,
            100.0,
            15.5,
            11.5,
            32,
            24,
            Point3::new(3.5, 0.5, 1.4),
            Point3::new(3.5, 6.0, 1.4),
            Vector3::z(),
        )
        .unwrap();
        let r = render(&bvh, &cam);
        for &d in &r.depth.data {
            assert!((d - 5.5).abs() < 1e-9, "{d}");
        }
    }

    #[test]
    fn degenerate_specs_rejected() {
        let mut s = small_spec();
        s.cameras.count = 0;
        assert!(matches!(generate(&s), Err(Error::DegenerateSpec(_))));
        let mut s = small_spec();
        s.room = [0.0, 1.0, 1.0];
        assert!(matches!(generate(&s), Err(Error::DegenerateSpec(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        let mut spec = small_spec();
        spec.clutter.push(ClutterSpec {
            shape: ClutterShape::Sphere { radius: 0.1 },
            at: Some([2.0, 2.0]),
            color: None,
        });
        let j = serde_json::to_string(&spec).unwrap();
        assert!(j.contains("\"shape\":\"sphere\""));
        let back: SceneSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, spec);
        let partial: SceneSpec = serde_json::from_str(r#"{"seed": 4, "random_clutter": 1}"#).unwrap();
        assert_eq!(partial.seed, 4);
        assert_eq!(partial.cameras.count, 20);
    }

    #[test]
    fn hull_of_cube() {
        let mut pts = Vec::new();
        for x in [0.0, 0.5, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 0.25, 1.0] {
                    pts.push(Point3::new(x, y, z));
                }
            }
        }
        let h = ConvexHull::from_points(&pts).unwrap();
        assert!(h.contains(&Point3::new(0.5, 0.5, 0.5), 0.0));
        assert!(h.contains(&Point3::new(1.0, 0.5, 0.0), 1e-9));
        assert!(!h.contains(&Point3::new(1.01, 0.5, 0.5), 1e-9));
        assert!(!h.contains(&Point3::new(0.5, -0.01, 0.5), 1e-9));
        assert!(ConvexHull::from_points(&pts[..3]).is_none());
        let flat: Vec<_> = pts.iter().map(|p| Point3::new(p.x, p.y, 0.0)).collect();
        assert!(ConvexHull::from_points(&flat).is_none());
    }

    #[test]
    fn carving() {
        let spec = SceneSpec {
            furniture: vec![],
            random_clutter: 0,
            clutter: vec![ClutterSpec {
                shape: ClutterShape::Box { size: [0.4, 0.3, 0.2] },
                at: Some([2.0, 2.0]),
                color: None,
            }],
            tessellation: 0.1,
            ..Default::default()
        };
        let clean = build_shell(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let placed = place_clutter(&spec, &mut rng).unwrap();
        let clutter = clutter_mesh(&spec, &placed, &[None]);
        let carved = carve_holes(&clean, &clutter);
        // Independent oracle: axis-aligned containment of each centroid.
        let in_box = |c: &Point3<f64>| {
            c.x >= 1.8 - 1e-9 && c.x <= 2.2 + 1e-9 && c.y >= 1.85 - 1e-9 && c.y <= 2.15 + 1e-9 && c.z >= -1e-9 && c.z <= 0.2 + 1e-9
        };
        let v = &clean.vertices;
        let expected: Vec<[u32; 3]> = clean
            .triangles
            .iter()
            .filter(|t| {
                let c = Point3::from((v[t[0] as usize].coords + v[t[1] as usize].coords + v[t[2] as usize].coords) / 3.0);
                !in_box(&c)
            })
            .copied()
            .collect();
        assert!(expected.len() < clean.triangles.len(), "some floor triangles lie under the box");
        assert_eq!(carved.triangles, expected);

        // A hull away from the mesh changes nothing.
        let mut far = clutter.clone();
        for p in far.vertices.iter_mut() {
            p.z += 1.0;
        }
        assert_eq!(carve_holes(&clean, &far).triangles, clean.triangles);

        // A hull enclosing everything empties the mesh.
        let mut huge = clutter.clone();
        for p in huge.vertices.iter_mut() {
            *p = Point3::new((p.x - 2.0) * 100.0, (p.y - 2.0) * 100.0, (p.z - 0.1) * 100.0);
        }
        assert!(carve_holes(&clean, &huge).triangles.is_empty());
    }
}
