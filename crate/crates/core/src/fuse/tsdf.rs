//! Sparse TSDF integration and marching-cubes surfacing.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::mc_tables::TRIANGLE_TABLE;
use super::FuseView;
use crate::error::{Error, Result};
use crate::refine::RefineConfig;

const B: usize = 8;
const B3: usize = B * B * B;

type Key = [i64; 3];

#[derive(Clone, Copy, Debug, Default)]
struct Voxel {
    tsdf: f32,
    weight: f32,
    color: [u8; 3],
}

#[derive(Clone)]
struct Block {
    voxels: Box<[Voxel; B3]>,
}

impl Block {
    fn new() -> Self {
        Self {
            voxels: Box::new([Voxel::default(); B3]),
        }
    }
}

#[inline]
fn local(i: usize, j: usize, k: usize) -> usize {
    (k * B + j) * B + i
}

/// Voxel `[i, j, k]` sits at `[i, j, k] * voxel` in world coordinates.
#[derive(Clone)]
pub struct TsdfVolume {
    voxel: f64,
    trunc: f64,
    max_depth: f64,
    max_voxels: u64,
    blocks: BTreeMap<Key, Block>,
}

impl TsdfVolume {
    pub fn new(rcfg: &RefineConfig) -> Result<Self> {
        rcfg.validate()?;
        Ok(Self {
            voxel: rcfg.tsdf_voxel,
            trunc: rcfg.tsdf_trunc,
            max_depth: rcfg.fuse_max_depth,
            max_voxels: rcfg.tsdf_max_voxels,
            blocks: BTreeMap::new(),
        })
    }

    pub fn allocated_voxels(&self) -> u64 {
        (self.blocks.len() * B3) as u64
    }

    fn block_of(&self, p: &Point3<f64>) -> Key {
        let s = self.voxel * B as f64;
        [(p.x / s).floor() as i64, (p.y / s).floor() as i64, (p.z / s).floor() as i64]
    }

    /// Blocks within the truncation band of any valid pixel.
    fn touched_blocks(&self, view: &FuseView<'_>) -> BTreeSet<Key> {
        let (w, h) = view.camera.dims();
        let steps = 4;
        let rows: Vec<BTreeSet<Key>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut set = BTreeSet::new();
                for x in 0..w {
                    let z = view.depth.get(x, y);
                    if !(z > 0.0 && z <= self.max_depth) {
                        continue;
                    }
                    let (o, dir) = view.camera.pixel_ray(x, y);
                    // Unit-z ray scaled so the offset is measured along the
                    // optical axis.
                    let dz = dir / view.camera.world_to_camera(&(o + dir)).z;
                    for s in 0..=steps {
                        let t = z - self.trunc + 2.0 * self.trunc * s as f64 / steps as f64;
                        if t > 0.0 {
                            set.insert(self.block_of(&(o + dz * t)));
                        }
                    }
                }
                set
            })
            .collect();
        rows.into_iter().flatten().collect()
    }

    /// Integrates one frame; frames must be integrated in a fixed order for
    /// reproducible output.
    pub fn integrate(&mut self, view: &FuseView<'_>) -> Result<()> {
        view.validate()?;
        let touched = self.touched_blocks(view);
        let new = touched.iter().filter(|k| !self.blocks.contains_key(*k)).count();
        let voxels = ((self.blocks.len() + new) * B3) as u64;
        if voxels > self.max_voxels {
            return Err(Error::GridTooLarge {
                voxels,
                cap: self.max_voxels,
            });
        }
        for k in &touched {
            self.blocks.entry(*k).or_insert_with(Block::new);
        }
        let (voxel, trunc, max_depth) = (self.voxel, self.trunc, self.max_depth);
        let cam = view.camera;
        let mut work: Vec<(&Key, &mut Block)> = self.blocks.iter_mut().filter(|(k, _)| touched.contains(*k)).collect();
        work.par_iter_mut().for_each(|(key, block)| {
            for k in 0..B {
                for j in 0..B {
                    for i in 0..B {
                        let g = [key[0] * B as i64 + i as i64, key[1] * B as i64 + j as i64, key[2] * B as i64 + k as i64];
                        let p = Point3::new(g[0] as f64 * voxel, g[1] as f64 * voxel, g[2] as f64 * voxel);
                        let Some(proj) = cam.project(&p) else {
                            continue;
                        };
                        let Some((px, py)) = cam.pixel_of(proj.u, proj.v) else {
                            continue;
                        };
                        let d = view.depth.get(px, py);
                        if !(d > 0.0 && d <= max_depth) {
                            continue;
                        }
                        let sdf = d - proj.depth;
                        if sdf < -trunc {
                            continue;
                        }
                        let value = (sdf / trunc).min(1.0) as f32;
                        let v = &mut block.voxels[local(i, j, k)];
                        let w = v.weight;
                        v.tsdf = (v.tsdf * w + value) / (w + 1.0);
                        let c = view.color.get(px, py);
                        for ch in 0..3 {
                            v.color[ch] = ((v.color[ch] as f32 * w + c[ch] as f32) / (w + 1.0)).round() as u8;
                        }
                        v.weight = w + 1.0;
                    }
                }
            }
        });
        Ok(())
    }

    /// Signed distance (in truncation units) and weight at a voxel.
    pub fn sample(&self, g: [i64; 3]) -> Option<(f32, f32)> {
        let key = g.map(|c| c.div_euclid(B as i64));
        let [i, j, k] = g.map(|c| c.rem_euclid(B as i64) as usize);
        let v = self.blocks.get(&key)?.voxels[local(i, j, k)];
        (v.weight > 0.0).then_some((v.tsdf, v.weight))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Point3<f64>>,
    pub colors: Vec<[u8; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl SurfaceMesh {
    /// Vertices of non-degenerate triangles.
    pub fn surface_points(&self) -> Vec<Point3<f64>> {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &v in t {
                used[v as usize] = true;
            }
        }
        self.vertices
            .iter()
            .zip(used)
            .filter_map(|(p, u)| u.then_some(*p))
            .collect()
    }
}

const CORNERS: [[i64; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the zero level set. Cubes with any unobserved corner are
/// skipped, and shared edges produce shared vertices.
pub fn marching_cubes(vol: &TsdfVolume) -> SurfaceMesh {
    let mut mesh = SurfaceMesh::default();
    let mut edge_vertex: HashMap<([i64; 3], usize), u32> = HashMap::new();
    let voxel_at = |g: [i64; 3], cache: &[Option<&Block>; 8], base: Key| -> Option<Voxel> {
        let key = g.map(|c| c.div_euclid(B as i64));
        let slot = ((key[0] - base[0]) + 2 * (key[1] - base[1]) + 4 * (key[2] - base[2])) as usize;
        let [i, j, k] = g.map(|c| c.rem_euclid(B as i64) as usize);
        let v = cache[slot]?.voxels[local(i, j, k)];
        (v.weight > 0.0).then_some(v)
    };
    for (&key, block) in &vol.blocks {
        let mut cache: [Option<&Block>; 8] = [None; 8];
        for c in &CORNERS {
            let n = [key[0] + c[0], key[1] + c[1], key[2] + c[2]];
            let slot = (c[0] + 2 * c[1] + 4 * c[2]) as usize;
            cache[slot] = if c == &[0, 0, 0] { Some(block) } else { vol.blocks.get(&n) };
        }
        for k in 0..B {
            for j in 0..B {
                for i in 0..B {
                    if block.voxels[local(i, j, k)].weight <= 0.0 {
                        continue;
                    }
                    let g0 = [key[0] * B as i64 + i as i64, key[1] * B as i64 + j as i64, key[2] * B as i64 + k as i64];
                    let mut vals = [Voxel::default(); 8];
                    let mut complete = true;
                    for (c, off) in CORNERS.iter().enumerate() {
                        match voxel_at([g0[0] + off[0], g0[1] + off[1], g0[2] + off[2]], &cache, key) {
                            Some(v) => vals[c] = v,
                            None => {
                                complete = false;
                                break;
                            }
                        }
                    }
                    if !complete {
                        continue;
                    }
                    let mut case = 0usize;
                    for (c, v) in vals.iter().enumerate() {
                        if v.tsdf < 0.0 {
                            case |= 1 << c;
                        }
                    }
                    if case == 0 || case == 255 {
                        continue;
                    }
                    let mut ids = [u32::MAX; 12];
                    for (e, &[a, b]) in EDGES.iter().enumerate() {
                        let (va, vb) = (vals[a], vals[b]);
                        if (va.tsdf < 0.0) == (vb.tsdf < 0.0) {
                            continue;
                        }
                        let (ca, cb) = (CORNERS[a], CORNERS[b]);
                        let axis = (0..3).find(|&d| ca[d] != cb[d]).unwrap();
                        let lo = if ca[axis] < cb[axis] { ca } else { cb };
                        let lo_g = [g0[0] + lo[0], g0[1] + lo[1], g0[2] + lo[2]];
                        ids[e] = *edge_vertex.entry((lo_g, axis)).or_insert_with(|| {
                            let t = (va.tsdf / (va.tsdf - vb.tsdf)) as f64;
                            let pa = Vector3::new((g0[0] + ca[0]) as f64, (g0[1] + ca[1]) as f64, (g0[2] + ca[2]) as f64);
                            let pb = Vector3::new((g0[0] + cb[0]) as f64, (g0[1] + cb[1]) as f64, (g0[2] + cb[2]) as f64);
                            let p = (pa + (pb - pa) * t) * vol.voxel;
                            let mut color = [0u8; 3];
                            for ch in 0..3 {
                                color[ch] = (va.color[ch] as f64 * (1.0 - t) + vb.color[ch] as f64 * t).round() as u8;
                            }
                            mesh.vertices.push(Point3::from(p));
                            mesh.colors.push(color);
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    for tri in TRIANGLE_TABLE[case].chunks(3) {
                        if tri[0] < 0 {
                            break;
                        }
                        let t = [ids[tri[0] as usize], ids[tri[1] as usize], ids[tri[2] as usize]];
                        if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                            mesh.triangles.push(t);
                        }
                    }
                }
            }
        }
    }
    mesh
}

/// Integrates the frames in order and extracts the surface.
pub fn tsdf_fuse(views: &[FuseView<'_>], rcfg: &RefineConfig) -> Result<SurfaceMesh> {
    if views.is_empty() {
        return Err(Error::NoFrames);
    }
    let mut vol = TsdfVolume::new(rcfg)?;
    for v in views {
        vol.integrate(v)?;
    }
    Ok(marching_cubes(&vol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, DepthMap};
    use crate::image::RgbImage;
    use nalgebra::Matrix4;

    #[test]
    fn flat_wall_is_recovered() {
        let cam = CameraModel::new(60.0, 60.0, 31.5, 23.5, 64, 48, Matrix4::identity()).unwrap();
        let depth = DepthMap::filled(64, 48, 1.503);
        let color = RgbImage::filled(64, 48, [50, 60, 70]);
        let rcfg = RefineConfig::default();
        let mesh = tsdf_fuse(&[FuseView { camera: &cam, color: &color, depth: &depth }], &rcfg).unwrap();
        assert!(mesh.triangles.len() > 100);
        let pts = mesh.surface_points();
        let rms = (pts.iter().map(|p| (p.z - 1.503).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
        assert!(rms < rcfg.tsdf_voxel, "rms {rms}");
        assert!(mesh.colors.iter().all(|&c| c == [50, 60, 70]));
    }

    #[test]
    fn no_frames() {
        assert!(matches!(tsdf_fuse(&[], &RefineConfig::default()), Err(Error::NoFrames)));
    }

    #[test]
    fn grid_cap() {
        let cam = CameraModel::new(60.0, 60.0, 31.5, 23.5, 64, 48, Matrix4::identity()).unwrap();
        let depth = DepthMap::filled(64, 48, 1.5);
        let color = RgbImage::new(64, 48);
        let rcfg = RefineConfig {
            tsdf_max_voxels: 1000,
            ..Default::default()
        };
        let r = tsdf_fuse(&[FuseView { camera: &cam, color: &color, depth: &depth }], &rcfg);
        assert!(matches!(r, Err(Error::GridTooLarge { cap: 1000, .. })));
    }
}
