//! Frames, sequences, and labeled meshes.

use std::collections::BTreeMap;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthMap};
use crate::image::{Mask, RgbImage};

/// One posed RGB-D capture with its clutter mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: usize,
    pub color: RgbImage,
    pub depth_cap: DepthMap,
    pub mask: Mask,
    pub camera: CameraModel,
}

impl Frame {
    pub fn new(id: usize, color: RgbImage, depth_cap: DepthMap, mask: Mask, camera: CameraModel) -> Result<Self> {
        let f = Self {
            id,
            color,
            depth_cap,
            mask,
            camera,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.camera.dims()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.camera.dims();
        if self.color.dims() != dims {
            return Err(Error::dims(format!("frame {} color", self.id), dims, self.color.dims()));
        }
        if self.depth_cap.dims() != dims {
            return Err(Error::dims(format!("frame {} depth", self.id), dims, self.depth_cap.dims()));
        }
        if self.mask.dims() != dims {
            return Err(Error::dims(format!("frame {} mask", self.id), dims, self.mask.dims()));
        }
        self.depth_cap.validate()
    }
}

/// Evolving inpainting result for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct InpaintState {
    pub color_pre: RgbImage,
    pub depth_pre: DepthMap,
    /// `d_con` after single-pixel pruning, region pruning, cross-frame
    /// pruning and cross-frame voting, in that order.
    pub stage_outputs: Vec<DepthMap>,
    /// Pixels that are still unfilled after consistency.
    pub residual_mask: Mask,
}

impl InpaintState {
    /// Checks that every stage keeps a subset of the previous stage's valid
    /// pixels, starting from `depth_pre`.
    pub fn check_monotone(&self) -> Result<()> {
        let mut prev = self.depth_pre.valid_mask();
        for (i, stage) in self.stage_outputs.iter().enumerate() {
            let cur = stage.valid_mask();
            if !cur.is_subset_of(&prev) {
                return Err(Error::Domain(format!(
                    "stage {} adds valid pixels not present in its input",
                    i + 1
                )));
            }
            prev = cur;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    NonClutter,
    Clutter,
}

impl Class {
    pub fn index(self) -> usize {
        match self {
            Class::NonClutter => 0,
            Class::Clutter => 1,
        }
    }

    pub fn from_clutter(is_clutter: bool) -> Self {
        if is_clutter {
            Class::Clutter
        } else {
            Class::NonClutter
        }
    }
}

/// Triangle mesh with per-vertex instance and clutter labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub instance_id: Vec<i32>,
    pub clutter: Vec<bool>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl LabeledMesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.instance_id.len() != n || self.clutter.len() != n {
            return Err(Error::InvalidMesh(format!(
                "{n} vertices but {} instance ids and {} class labels",
                self.instance_id.len(),
                self.clutter.len()
            )));
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(Error::InvalidMesh(format!("{n} vertices but {} colors", c.len())));
            }
        }
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidMesh(format!("triangle {t:?} references a missing vertex")));
        }
        let mut class_of: BTreeMap<i32, bool> = BTreeMap::new();
        for (&id, &c) in self.instance_id.iter().zip(&self.clutter) {
            if *class_of.entry(id).or_insert(c) != c {
                return Err(Error::InvalidMesh(format!("instance {id} mixes clutter and non-clutter vertices")));
            }
        }
        Ok(())
    }

    /// A triangle counts as clutter when any of its vertices is clutter.
    pub fn triangle_is_clutter(&self, t: usize) -> bool {
        self.triangles[t].iter().any(|&i| self.clutter[i as usize])
    }

    /// Appends `other`, shifting its triangle indices.
    pub fn append(&mut self, other: &LabeledMesh) {
        let base = self.vertices.len() as u32;
        let colors = match (self.colors.take(), &other.colors) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if base == 0 => Some(b.clone()),
            _ => None,
        };
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        self.instance_id.extend_from_slice(&other.instance_id);
        self.clutter.extend_from_slice(&other.clutter);
        self.colors = colors;
    }

    /// Keeps only triangles for which `keep` returns true; vertices are
    /// retained so labels stay addressable.
    pub fn retain_triangles(&mut self, mut keep: impl FnMut(usize, &[u32; 3]) -> bool) {
        let mut i = 0;
        self.triangles.retain(|t| {
            let k = keep(i, t);
            i += 1;
            k
        });
    }

    /// Sub-mesh made of the vertices (and the triangles fully inside them)
    /// selected by `pick`.
    pub fn select_vertices(&self, pick: impl Fn(usize) -> bool) -> LabeledMesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut out = LabeledMesh {
            colors: self.colors.as_ref().map(|_| Vec::new()),
            ..Default::default()
        };
        for i in 0..self.vertices.len() {
            if pick(i) {
                remap[i] = out.vertices.len() as u32;
                out.vertices.push(self.vertices[i]);
                out.instance_id.push(self.instance_id[i]);
                out.clutter.push(self.clutter[i]);
                if let (Some(dst), Some(src)) = (out.colors.as_mut(), self.colors.as_ref()) {
                    dst.push(src[i]);
                }
            }
        }
        for t in &self.triangles {
            let m = [remap[t[0] as usize], remap[t[1] as usize], remap[t[2] as usize]];
            if m.iter().all(|&v| v != u32::MAX) {
                out.triangles.push(m);
            }
        }
        out
    }
}

/// Ground-truth clean capture for one view (synthetic benches only).
#[derive(Clone, Debug, PartialEq)]
pub struct CleanRender {
    pub color: RgbImage,
    pub depth: DepthMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub frames: Vec<Frame>,
    pub mesh: LabeledMesh,
    pub clean_renders: Option<Vec<CleanRender>>,
}

impl SceneBundle {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidConfig("bundle has no frames".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.id != i {
                return Err(Error::InvalidConfig(format!("frame ids must be dense: position {i} has id {}", f.id)));
            }
            f.validate()?;
        }
        if let Some(clean) = &self.clean_renders {
            if clean.len() != self.frames.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} clean renders for {} frames",
                    clean.len(),
                    self.frames.len()
                )));
            }
        }
        self.mesh.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub instance_id: i32,
    pub class: Class,
    pub vertex_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    /// Sorted by instance id.
    pub instances: Vec<InstanceInfo>,
    /// Lower median of the per-instance vertex counts.
    pub median: usize,
}

impl InstanceStats {
    pub fn get(&self, instance_id: i32) -> Option<&InstanceInfo> {
        self.instances
            .binary_search_by_key(&instance_id, |i| i.instance_id)
            .ok()
            .map(|k| &self.instances[k])
    }
}

/// Lower median: for an even count, the smaller of the two middle values.
pub fn lower_median(values: &[usize]) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    Some(v[(v.len() - 1) / 2])
}

pub fn instance_stats(mesh: &LabeledMesh) -> Result<InstanceStats> {
    if mesh.vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    mesh.validate()?;
    let mut map: BTreeMap<i32, InstanceInfo> = BTreeMap::new();
    for (&id, &c) in mesh.instance_id.iter().zip(&mesh.clutter) {
        map.entry(id)
            .or_insert(InstanceInfo {
                instance_id: id,
                class: Class::from_clutter(c),
                vertex_count: 0,
            })
            .vertex_count += 1;
    }
    let instances: Vec<InstanceInfo> = map.into_values().collect();
    let counts: Vec<usize> = instances.iter().map(|i| i.vertex_count).collect();
    let median = lower_median(&counts).ok_or(Error::EmptyMesh)?;
    Ok(InstanceStats { instances, median })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh_with_sizes(sizes: &[usize]) -> LabeledMesh {
        let mut m = LabeledMesh::default();
        for (id, &n) in sizes.iter().enumerate() {
            for k in 0..n {
                m.vertices.push(Point3::new(k as f64, id as f64, 0.0));
                m.instance_id.push(id as i32);
                m.clutter.push(id % 2 == 1);
            }
        }
        m
    }

    #[test]
    fn single_instance() {
        let s = instance_stats(&mesh_with_sizes(&[10])).unwrap();
        assert_eq!(s.instances.len(), 1);
        assert_eq!(s.instances[0].vertex_count, 10);
        assert_eq!(s.median, 10);
    }

    #[test]
    fn odd_and_even_medians() {
        assert_eq!(instance_stats(&mesh_with_sizes(&[2, 4, 9])).unwrap().median, 4);
        // sort-and-index oracle: sorted [2,4,8,100], lower middle index (4-1)/2 = 1
        let sizes = [100, 2, 8, 4];
        let mut sorted = sizes.to_vec();
        sorted.sort();
        let expected = sorted[1];
        assert_eq!(expected, 4);
        assert_eq!(instance_stats(&mesh_with_sizes(&sizes)).unwrap().median, expected);
    }

    #[test]
    fn counts_sum_to_vertex_total() {
        let m = mesh_with_sizes(&[3, 7, 1, 12]);
        let s = instance_stats(&m).unwrap();
        assert_eq!(s.instances.iter().map(|i| i.vertex_count).sum::<usize>(), m.vertices.len());
        assert_eq!(s.get(1).unwrap().class, Class::Clutter);
        assert_eq!(s.get(2).unwrap().class, Class::NonClutter);
    }

    #[test]
    fn empty_mesh_errors() {
        assert!(matches!(instance_stats(&LabeledMesh::default()), Err(Error::EmptyMesh)));
    }

    #[test]
    fn mixed_instance_class_rejected() {
        let mut m = mesh_with_sizes(&[2]);
        m.clutter[1] = true;
        assert!(m.validate().is_err());
    }

    #[test]
    fn monotone_check() {
        let pre = DepthMap::filled(2, 1, 1.0);
        let mut s1 = pre.clone();
        s1.data[0] = 0.0;
        let mut state = InpaintState {
            color_pre: RgbImage::new(2, 1),
            depth_pre: pre.clone(),
            stage_outputs: vec![s1.clone(), s1.clone(), pre.clone()],
            residual_mask: Mask::new(2, 1),
        };
        assert!(state.check_monotone().is_err());
        state.stage_outputs[2] = s1;
        assert!(state.check_monotone().is_ok());
    }
}
