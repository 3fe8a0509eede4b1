//! Synthetic hole masks for supervising depth completion: another view's
//! clutter mask is pasted onto a frame, minus the frame's own clutter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::DepthMap;
use crate::image::{check_dims, Mask};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    /// `m2 \ m1`.
    pub mask: Mask,
    /// Input depth with the training mask zeroed.
    pub masked_depth: DepthMap,
    /// Supervision target: the original depth.
    pub target_depth: DepthMap,
}

/// Overlays `m2` onto a frame with clutter mask `m1`. Pixels already in `m1`
/// are never masked, so nothing has to be hallucinated where clutter was.
pub fn synth_training_masks(depth: &DepthMap, m1: &Mask, m2: &Mask) -> Result<TrainingSample> {
    check_dims("m1", depth.dims(), m1.dims())?;
    check_dims("m2", depth.dims(), m2.dims())?;
    let mask = m2.difference(m1)?;
    let mut masked_depth = depth.clone();
    for (i, &m) in mask.data.iter().enumerate() {
        if m {
            masked_depth.data[i] = 0.0;
        }
    }
    Ok(TrainingSample {
        mask,
        masked_depth,
        target_depth: depth.clone(),
    })
}

/// A random other frame of the sequence, deterministic in `(seed, frame)`.
/// Returns `None` for single-frame sequences.
pub fn pick_partner_frame(frame: usize, n_frames: usize, seed: u64) -> Option<usize> {
    if n_frames < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let k = rng.gen_range(0..n_frames - 1);
    Some(if k >= frame { k + 1 } else { k })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_arithmetic() {
        let d = DepthMap::filled(8, 8, 1.5);
        let m1 = Mask::from_fn(8, 8, |x, _| x < 4);
        let m2 = Mask::from_fn(8, 8, |x, y| x >= 2 && y < 6);
        let s = synth_training_masks(&d, &m1, &m2).unwrap();
        let both = m1.intersection(&m2).unwrap().count();
        assert_eq!(s.mask.count(), m2.count() - both);
        assert!(s.mask.intersection(&m1).unwrap().is_empty());
        assert_eq!(s.masked_depth.data.iter().filter(|&&v| v == 0.0).count(), s.mask.count());
        assert_eq!(s.target_depth, d);

        assert!(synth_training_masks(&d, &m1, &m1).unwrap().mask.is_empty());
        assert_eq!(synth_training_masks(&d, &Mask::new(8, 8), &m2).unwrap().mask, m2);
    }

    #[test]
    fn partner_is_another_frame() {
        assert_eq!(pick_partner_frame(0, 1, 3), None);
        for f in 0..10 {
            let p = pick_partner_frame(f, 10, 7).unwrap();
            assert!(p != f && p < 10);
            assert_eq!(pick_partner_frame(f, 10, 7), Some(p));
        }
    }
}
