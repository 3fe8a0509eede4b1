//! Instance-weighted (area-sensitive) cross entropy over per-vertex class
//! probabilities.
//!
//! Probabilities are taken as given; how they are produced (softmax or
//! otherwise) is up to the caller. The returned value is a negative
//! log-likelihood, so lower is better and a perfect prediction gives ~0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{instance_stats, Class, LabeledMesh};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Modulating factor on the instance weight.
    pub k: f64,
    /// Weight of the 2D term in [`combined_loss`].
    pub lambda_2d: f64,
    /// Probabilities are clamped to `[epsilon, 1]` before the log.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            k: 1.0,
            lambda_2d: 0.3,
            epsilon: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return Err(Error::InvalidConfig(format!("k must be finite and >= 0, got {}", self.k)));
        }
        if !(self.lambda_2d >= 0.0) || !self.lambda_2d.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda_2d must be finite and >= 0, got {}", self.lambda_2d)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1e-3) {
            return Err(Error::InvalidConfig(format!("epsilon must lie in (0, 1e-3), got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Per-vertex probabilities indexed by [`Class::index`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub probs: Vec<[f64; 2]>,
}

impl PredictionSet {
    /// Builds two-class probabilities from clutter probabilities.
    pub fn from_clutter_probs(p: &[f64]) -> Self {
        Self {
            probs: p.iter().map(|&c| [1.0 - c, c]).collect(),
        }
    }

    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        if self.probs.len() != vertex_count {
            return Err(Error::PredictionMismatch(format!(
                "{} predictions for {} mesh vertices",
                self.probs.len(),
                vertex_count
            )));
        }
        for (j, p) in self.probs.iter().enumerate() {
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p[0] + p[1] - 1.0).abs() > 1e-6 {
                return Err(Error::PredictionMismatch(format!("vertex {j}: probabilities {p:?} are not a distribution")));
            }
        }
        Ok(())
    }
}

/// `(median / n_i)^k`.
pub fn instance_weight(n_i: f64, median: f64, k: f64) -> Result<f64> {
    if !(n_i > 0.0) || !n_i.is_finite() {
        return Err(Error::Domain(format!("instance size must be positive, got {n_i}")));
    }
    if !(median >= 1.0) || !median.is_finite() {
        return Err(Error::Domain(format!("median size must be >= 1, got {median}")));
    }
    if !(k >= 0.0) {
        return Err(Error::Domain(format!("k must be >= 0, got {k}")));
    }
    if k == 0.0 {
        return Ok(1.0);
    }
    Ok((median / n_i).powf(k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceLoss {
    pub instance_id: i32,
    pub class: Class,
    pub vertex_count: usize,
    pub weight: f64,
    /// `w_i * sum_j -log p_j / N_v`; these add up to the total loss.
    pub contribution: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    pub median: usize,
    pub per_instance: Vec<InstanceLoss>,
}

/// Area-sensitive cross entropy over a labeled mesh.
pub fn area_sensitive_ce(mesh: &LabeledMesh, preds: &PredictionSet, cfg: &LossConfig) -> Result<LossReport> {
    cfg.validate()?;
    let stats = instance_stats(mesh)?;
    preds.validate(mesh.vertices.len())?;
    let mut nll: BTreeMap<i32, f64> = BTreeMap::new();
    for (j, (&id, &c)) in mesh.instance_id.iter().zip(&mesh.clutter).enumerate() {
        let p = preds.probs[j][Class::from_clutter(c).index()].max(cfg.epsilon);
        *nll.entry(id).or_default() -= p.ln();
    }
    let n_v = mesh.vertices.len() as f64;
    let mut per_instance = Vec::with_capacity(stats.instances.len());
    let mut loss = 0.0;
    for info in &stats.instances {
        let w = instance_weight(info.vertex_count as f64, stats.median as f64, cfg.k)?;
        let contribution = w * nll[&info.instance_id] / n_v;
        loss += contribution;
        per_instance.push(InstanceLoss {
            instance_id: info.instance_id,
            class: info.class,
            vertex_count: info.vertex_count,
            weight: w,
            contribution,
        });
    }
    Ok(LossReport {
        loss,
        median: stats.median,
        per_instance,
    })
}

/// `loss_3d + lambda_2d * loss_2d`.
pub fn combined_loss(loss_3d: f64, loss_2d: f64, cfg: &LossConfig) -> Result<f64> {
    if !loss_3d.is_finite() || !loss_2d.is_finite() {
        return Err(Error::Domain(format!("non-finite loss terms ({loss_3d}, {loss_2d})")));
    }
    Ok(loss_3d + cfg.lambda_2d * loss_2d)
}
