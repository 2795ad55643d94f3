//! Autoregressive inference: the network's own present-time estimates
//! replace the ground-truth past poses.

use std::collections::VecDeque;

use crate::armsim::{Sequence, WindowSpec};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::spdh::Pose3D;

/// History of estimated poses.
///
/// Frame `n` needs the estimates of frames `n - s, n - 2s, ..., n - Ms` for
/// a past stride of `s` frames, so the buffer keeps one ring of the last `M`
/// estimates for each frame phase `n mod s`. Until a ring is full the
/// missing oldest entries are filled with the earliest estimate available.
#[derive(Clone, Debug)]
pub struct RolloutState {
    past_count: usize,
    stride: usize,
    rings: Vec<VecDeque<Pose3D>>,
    earliest: Option<Pose3D>,
    frames_seen: usize,
}

impl RolloutState {
    pub fn new(past_count: usize, stride: usize) -> Result<Self> {
        if past_count == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "rollout needs a past count and stride of at least 1".into(),
            ));
        }
        Ok(Self {
            past_count,
            stride,
            rings: vec![VecDeque::with_capacity(past_count); stride],
            earliest: None,
            frames_seen: 0,
        })
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// True until every past slot of the next frame holds a real estimate.
    pub fn is_warmup(&self) -> bool {
        self.frames_seen < self.past_count * self.stride
    }

    /// Estimates that will feed the next frame, oldest first, without padding.
    pub fn buffer(&self) -> &VecDeque<Pose3D> {
        &self.rings[self.frames_seen % self.stride]
    }

    /// The `M` past poses for the next frame, or `None` before any estimate.
    pub fn history(&self) -> Option<Vec<Pose3D>> {
        let ring = self.buffer();
        let fill = ring.front().or(self.earliest.as_ref())?;
        let mut out = vec![fill.clone(); self.past_count - ring.len()];
        out.extend(ring.iter().cloned());
        Some(out)
    }

    /// Record the estimate of the next frame.
    pub fn push(&mut self, estimate: Pose3D) {
        if self.earliest.is_none() {
            self.earliest = Some(estimate.clone());
        }
        let ring = &mut self.rings[self.frames_seen % self.stride];
        if ring.len() == self.past_count {
            ring.pop_front();
        }
        ring.push_back(estimate);
        self.frames_seen += 1;
    }
}

/// The pose pushed into the history buffer for an estimate. Low-confidence
/// joints keep their decoded position instead of being zeroed: the network
/// only ever saw complete past poses in training.
pub fn buffered(estimate: &Pose3D) -> Pose3D {
    Pose3D {
        valid: vec![true; estimate.len()],
        ..estimate.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutFrame {
    pub frame: usize,
    pub current: Pose3D,
    pub future: Vec<Pose3D>,
    pub warmup: bool,
}

/// Run the network over a whole sequence, feeding back its own estimates.
/// The first frame has no history; its past is bootstrapped from an
/// estimation-only pass.
pub fn rollout(
    net: &Network<f32>,
    seq: &Sequence,
    window: &WindowSpec,
) -> Result<Vec<RolloutFrame>> {
    let stride = window.past_stride(seq.frame_rate)?;
    let mut state = RolloutState::new(net.config.past_count, stride)?;
    let k = &seq.intrinsics;
    let mut out = Vec::with_capacity(seq.len());
    for (n, (depth, gt)) in seq.depth.iter().zip(&seq.poses).enumerate() {
        let warmup = state.is_warmup();
        let past = match state.history() {
            Some(p) => p,
            None => {
                let boot = net.predict(depth, k, None)?.decode(k).current;
                vec![buffered(&boot); net.config.past_count]
            }
        };
        let pred = net.predict(depth, k, Some(&past))?.decode(k);
        let t = gt.timestamp;
        let mut current = pred.current;
        current.timestamp = t;
        let future = pred
            .future
            .into_iter()
            .zip(&window.future_offsets)
            .map(|(mut p, o)| {
                p.timestamp = t + o;
                p
            })
            .collect();
        state.push(buffered(&current));
        out.push(RolloutFrame {
            frame: n,
            current,
            future,
            warmup,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(t: f64) -> Pose3D {
        Pose3D::new(vec![[t, 0.0, 1.0]], t)
    }

    #[test]
    fn warmup_pads_with_earliest() {
        let mut s = RolloutState::new(3, 3).unwrap();
        assert!(s.history().is_none());
        s.push(at(0.0));
        // Frame 1 has no estimate of its own phase yet.
        assert_eq!(s.history().unwrap(), vec![at(0.0); 3]);
        s.push(at(1.0));
        s.push(at(2.0));
        s.push(at(3.0));
        // Frame 4: phase 1 ring holds frame 1.
        assert_eq!(s.history().unwrap(), vec![at(1.0), at(1.0), at(1.0)]);
        for f in 4..9 {
            assert!(s.is_warmup());
            s.push(at(f as f64));
        }
        assert!(!s.is_warmup());
        // Frame 9 sees frames 0, 3, 6.
        assert_eq!(s.history().unwrap(), vec![at(0.0), at(3.0), at(6.0)]);
    }

    #[test]
    fn buffered_keeps_low_confidence_positions() {
        let mut p = Pose3D::new(vec![[0.1, 0.2, 1.5], [0.3, -0.1, 2.0]], 0.5);
        p.valid[1] = false;
        let b = buffered(&p);
        assert_eq!(b.joints, p.joints);
        assert_eq!(b.timestamp, 0.5);
        assert_eq!(b.valid, vec![true, true]);
    }

    proptest! {
        #[test]
        fn buffers_stay_ordered_and_evenly_spaced(m in 1usize..12, stride in 1usize..5, frames in 0usize..120) {
            let mut s = RolloutState::new(m, stride).unwrap();
            for f in 0..frames {
                s.push(at(f as f64));
                let b = s.buffer();
                prop_assert!(b.len() <= m);
                for w in b.iter().collect::<Vec<_>>().windows(2) {
                    prop_assert_eq!(w[1].timestamp - w[0].timestamp, stride as f64);
                }
                if let Some(last) = b.back() {
                    // The newest entry is exactly one stride before the next frame.
                    prop_assert_eq!(last.timestamp, (f + 1) as f64 - stride as f64);
                }
            }
            prop_assert_eq!(s.is_warmup(), frames < m * stride);
            if frames > 0 {
                prop_assert_eq!(s.history().unwrap().len(), m);
            }
        }
    }
}
