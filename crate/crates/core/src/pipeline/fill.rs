//! Morphological depth completion for masked instance patches.
//!
//! Targets are instance pixels (`instance_id > 0`) without valid depth.
//! 1. Dilation passes: each unfilled target takes the nearest depth (max-pool
//!    over inverted depth) among known pixels under the pass kernel. Passes
//!    follow the schedule, repeating its last kernel, up to `max_passes`.
//! 2. Fallback: any target still unfilled copies the closest known pixel
//!    (squared pixel distance, ties to the smallest `(row, col)`).
//! 3. Median pass: every target is replaced by the median of the instance
//!    pixels in its 3×3 window, read from the post-fallback state.
//!
//! Originally valid pixels are never modified.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::render::ChannelStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    Diamond,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillKernel {
    pub size: usize,
    pub shape: KernelShape,
}

impl FillKernel {
    pub const fn diamond(size: usize) -> Self {
        FillKernel { size, shape: KernelShape::Diamond }
    }

    pub const fn full(size: usize) -> Self {
        FillKernel { size, shape: KernelShape::Full }
    }

    fn offsets(&self) -> Vec<(isize, isize)> {
        let r = (self.size / 2) as isize;
        let mut v = Vec::new();
        for di in -r..=r {
            for dj in -r..=r {
                if self.shape == KernelShape::Full || di.abs() + dj.abs() <= r {
                    v.push((di, dj));
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillSchedule {
    pub kernels: Vec<FillKernel>,
    pub max_passes: usize,
}

impl Default for FillSchedule {
    /// Diamond 5, then full 7 and 9, at most 10 passes.
    fn default() -> Self {
        FillSchedule {
            kernels: alloc::vec![FillKernel::diamond(5), FillKernel::full(7), FillKernel::full(9)],
            max_passes: 10,
        }
    }
}

pub fn fill_holes(patch: &ChannelStack, schedule: &FillSchedule) -> Result<ChannelStack, PipelineError> {
    let (h, w) = (patch.height(), patch.width());
    if !patch.valid.as_slice().iter().any(|&v| v) {
        return Err(PipelineError::AllInvalid);
    }
    let targets: Vec<(usize, usize)> = patch
        .instance_id
        .indexed()
        .filter(|&(i, j, &id)| id > 0 && !patch.valid[(i, j)])
        .map(|(i, j, _)| (i, j))
        .collect();
    if targets.is_empty() {
        return Ok(patch.clone());
    }

    let mut depth = patch.depth.clone();
    let mut known = patch.valid.clone();
    let at = |i: usize, j: usize, di: isize, dj: isize| {
        let (a, b) = (i as isize + di, j as isize + dj);
        (a >= 0 && b >= 0 && a < h as isize && b < w as isize).then_some((a as usize, b as usize))
    };

    let mut pending: Vec<(usize, usize)> = targets.clone();
    for pass in 0..schedule.max_passes {
        if pending.is_empty() {
            break;
        }
        let Some(kernel) = schedule.kernels.get(pass.min(schedule.kernels.len().saturating_sub(1))) else { break };
        let offsets = kernel.offsets();
        let updates: Vec<((usize, usize), Option<f64>)> = pending
            .iter()
            .map(|&(i, j)| {
                let best = offsets
                    .iter()
                    .filter_map(|&(di, dj)| at(i, j, di, dj))
                    .filter(|&p| known[p])
                    .map(|p| depth[p])
                    .min_by(f64::total_cmp);
                ((i, j), best)
            })
            .collect();
        pending.clear();
        for (p, v) in updates {
            match v {
                Some(d) => {
                    depth[p] = d;
                    known[p] = true;
                }
                None => pending.push(p),
            }
        }
    }

    if !pending.is_empty() {
        let sources: Vec<(usize, usize)> = known.indexed().filter(|&(_, _, &k)| k).map(|(i, j, _)| (i, j)).collect();
        let fills: Vec<f64> = pending
            .iter()
            .map(|&(i, j)| {
                let src = sources
                    .iter()
                    .min_by_key(|&&(a, b)| {
                        let (di, dj) = (a as isize - i as isize, b as isize - j as isize);
                        ((di * di + dj * dj) as usize, a, b)
                    })
                    .expect("at least one valid pixel");
                depth[*src]
            })
            .collect();
        for (&p, d) in pending.iter().zip(fills) {
            depth[p] = d;
        }
    }

    let smoothed: Vec<f64> = targets
        .iter()
        .map(|&(i, j)| {
            let mut vals: Vec<f64> = (-1..=1)
                .flat_map(|di| (-1..=1).map(move |dj| (di, dj)))
                .filter_map(|(di, dj)| at(i, j, di, dj))
                .filter(|&p| patch.instance_id[p] > 0)
                .map(|p| depth[p])
                .collect();
            vals.sort_by(f64::total_cmp);
            let n = vals.len();
            if n % 2 == 1 {
                vals[n / 2]
            } else {
                0.5 * (vals[n / 2 - 1] + vals[n / 2])
            }
        })
        .collect();

    let mut out = patch.clone();
    for (&(i, j), d) in targets.iter().zip(smoothed) {
        out.depth[(i, j)] = d;
        out.valid[(i, j)] = true;
        let (u, v) = out.uv(i, j);
        let p = out.camera.backproject_unchecked(u, v, d);
        out.xy[(i, j)] = [p.x, p.y];
    }
    Ok(out)
}
