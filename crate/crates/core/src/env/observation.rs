use serde::{Deserialize, Serialize};

use super::{ActionMask, Action, Pos, VoxelView, AXES, N_ACTIONS};
use crate::error::{Error, Result};

/// Occupancy code as seen through an agent's sensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum PatchCode {
    Free = 0,
    Obstacle = 1,
    Nofly = 2,
    Target = 3,
    Agent = 4,
}

/// Length of the per-step feature frame fed to the spiking network.
pub const SNN_FRAME_LEN: usize = 82;

/// What one agent senses at one step.
///
/// Everything is computed from the Chebyshev ball of radius `sensor_radius`
/// around the agent, plus its own normalized position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Distance to the nearest obstacle (walls and ground included) along
    /// +x, -x, +y, -y, +z, -z; saturates at `sensor_radius`.
    pub depth: [f64; 6],
    /// Synthetic temperature field sample in `[0, 1]`.
    pub temperature: f64,
    /// Number of other active agents within the sensing radius.
    pub proximity: f64,
    /// Occupancy codes of the sensing cube, `(dz, dy, dx)` major order.
    pub patch: Vec<PatchCode>,
    /// Position divided by `dims - 1` per axis.
    pub position: [f64; 3],
    pub landed: bool,
    pub(crate) abs: Pos,
    pub(crate) dims: [usize; 3],
    pub(crate) radius: usize,
}

impl Observation {
    /// Terminal observation for a landed agent: all features zero.
    pub fn terminal(radius: usize, dims: [usize; 3]) -> Self {
        let side = 2 * radius + 1;
        Self {
            depth: [0.0; 6],
            temperature: 0.0,
            proximity: 0.0,
            patch: vec![PatchCode::Free; side * side * side],
            position: [0.0; 3],
            landed: true,
            abs: [0, 0, 0],
            dims,
            radius,
        }
    }

    pub fn sensor_radius(&self) -> usize {
        self.radius
    }

    /// Absolute voxel position of the observing agent.
    pub fn grid_position(&self) -> Pos {
        self.abs
    }

    /// Flat feature vector: depth, temperature, proximity, patch codes,
    /// position, landed flag. Length is fixed for a given radius.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.patch.len() + 12);
        f.extend_from_slice(&self.depth);
        f.push(self.temperature);
        f.push(self.proximity);
        f.extend(self.patch.iter().map(|&c| c as u8 as f64));
        f.extend_from_slice(&self.position);
        f.push(if self.landed { 1.0 } else { 0.0 });
        f
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.features().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Input("observation has a non-finite feature".into()))
        }
    }

    /// Patch lookup by offset from the agent; `None` outside the sensing cube.
    pub fn at(&self, off: Pos) -> Option<PatchCode> {
        let r = self.radius as i32;
        if off.iter().any(|c| c.abs() > r) {
            return None;
        }
        let side = 2 * r + 1;
        let i = ((off[2] + r) * side + (off[1] + r)) * side + (off[0] + r);
        Some(self.patch[i as usize])
    }

    /// Outcome of `action` as predicted from this observation alone.
    pub fn predict(&self, action: Action, velocity_limit: i32) -> (super::ResolvedMove, super::SafetyVerdict) {
        let mv = super::resolve_move(self, self.abs, action);
        let verdict = super::assess(self, self.abs, mv.dest, velocity_limit);
        (mv, verdict)
    }

    /// Actions that are kinematically possible: not blocked by walls,
    /// obstacles or the flight floor. Safety is deliberately not part of it.
    pub fn admissible(&self) -> ActionMask {
        let mut m = [false; N_ACTIONS];
        for a in Action::ALL {
            m[a.index()] = a == Action::Hover || !super::resolve_move(self, self.abs, a).bumped;
        }
        ActionMask(m)
    }

    /// Compact frame in `[0, 1]` for rate coding.
    pub fn snn_frame(&self) -> [f64; SNN_FRAME_LEN] {
        let mut f = [0.0; SNN_FRAME_LEN];
        if self.landed {
            return f;
        }
        let r = self.radius as f64;
        let mut k = 0;
        let mut push = |v: f64| {
            f[k] = v;
            k += 1;
        };
        for d in self.depth {
            push(d / r);
        }
        push(self.temperature);
        push((self.proximity / 4.0).min(1.0));
        for p in self.position {
            push(p);
        }
        // No-fly codes on the agent's layer, 5x5.
        for dy in -2..=2 {
            for dx in -2..=2 {
                push(flag(self.at([dx, dy, 0]) == Some(PatchCode::Nofly)));
            }
        }
        // Obstacles in the 3x3x3 neighbourhood.
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if (dx, dy, dz) != (0, 0, 0) {
                        push(flag(self.at([dx, dy, dz]) == Some(PatchCode::Obstacle)));
                    }
                }
            }
        }
        for d in AXES {
            push(flag(self.at(d) == Some(PatchCode::Agent)));
        }
        // Target columns visible on each lateral side.
        let ri = self.radius as i32;
        let mut sides = [0.0; 4];
        for dz in -ri..=ri {
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if self.at([dx, dy, dz]) == Some(PatchCode::Target) {
                        if dx > 0 {
                            sides[0] = 1.0;
                        }
                        if dx < 0 {
                            sides[1] = 1.0;
                        }
                        if dy > 0 {
                            sides[2] = 1.0;
                        }
                        if dy < 0 {
                            sides[3] = 1.0;
                        }
                    }
                }
            }
        }
        for s in sides {
            push(s);
        }
        // Per-action hazard: the move would end next to a no-fly voxel or
        // on another agent, as far as the sensors can tell.
        for a in Action::ALL {
            push(flag(self.predict(a, 1).1.violated()));
        }
        push(1.0);
        debug_assert_eq!(k, SNN_FRAME_LEN);
        f
    }

    /// Free run length along a lateral direction, for plan utility.
    pub(crate) fn lateral_depth(&self, dir: Pos) -> f64 {
        let i = AXES.iter().position(|&a| a == dir).expect("axis direction");
        self.depth[i]
    }

    pub(crate) fn target_toward(&self, dir: Pos) -> bool {
        let r = self.radius as i32;
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let ahead = dx * dir[0] + dy * dir[1] > 0;
                    if ahead && self.at([dx, dy, dz]) == Some(PatchCode::Target) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl VoxelView for Observation {
    fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn code(&self, p: Pos) -> PatchCode {
        let off = [p[0] - self.abs[0], p[1] - self.abs[1], p[2] - self.abs[2]];
        // Outside the sensing cube nothing is known; treat it as free.
        self.at(off).unwrap_or(PatchCode::Free)
    }

    fn sensor_radius(&self) -> i32 {
        self.radius as i32
    }
}
