//! Back-to-front sliding windows for lists longer than one prompt holds.

use serde::{Deserialize, Serialize};

use super::decode::{DecodeError, ListwiseRanker};
use crate::domain::{Permutation, RerankTask, DEFAULT_WINDOW_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub size: usize,
    pub stride: usize,
    /// Largest window a backend prompt may hold.
    pub cap: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            size: 20,
            stride: 10,
            cap: DEFAULT_WINDOW_CAP,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.size < 2 || self.size > self.cap {
            return Err(DecodeError::Window(format!(
                "window size {} outside 2..={}",
                self.size, self.cap
            )));
        }
        if self.stride == 0 || self.stride >= self.size {
            return Err(DecodeError::Window(format!(
                "stride {} must be in 1..{}",
                self.stride, self.size
            )));
        }
        Ok(())
    }

    /// Window ranges `[start, end)` (0-based) in the order they are visited:
    /// the last `size` positions first, then moving `stride` towards the
    /// head until a window starts at position 0.
    pub fn schedule(&self, n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if n <= self.size {
            out.push((0, n));
            return out;
        }
        let mut end = n;
        loop {
            let start = end.saturating_sub(self.size);
            out.push((start, end));
            if start == 0 {
                break;
            }
            end -= self.stride;
        }
        out
    }
}

/// Reranks a list of any length by running `inner` over overlapping windows
/// from the tail to the head, so strong candidates bubble forward.
///
/// A list that fits in one window is passed to `inner` unchanged.
pub fn sliding_window_rerank(
    task: &RerankTask,
    window: &WindowConfig,
    inner: &dyn ListwiseRanker,
) -> Result<Permutation, DecodeError> {
    window.validate()?;
    let n = task.len();
    if n <= window.size {
        return inner.rank(task);
    }
    let mut order: Vec<usize> = (1..=n).collect();
    for (start, end) in window.schedule(n) {
        let slots = order[start..end].to_vec();
        let sub = task.subtask(&slots);
        let perm = inner.rank(&sub)?;
        if !crate::domain::validate_permutation(&perm, slots.len()) {
            return Err(DecodeError::Window(format!(
                "inner ranker returned an invalid permutation for window {start}..{end}"
            )));
        }
        for (offset, &local) in perm.order.iter().enumerate() {
            order[start + offset] = slots[local - 1];
        }
    }
    Ok(Permutation { order })
}
