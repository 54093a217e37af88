//! Partially observable 3D voxel world.
//!
//! The layer `z = 0` is the ground: targets sit there and agents only reach it
//! by landing. Flight happens in `1..dims[2]`. Positions outside the grid read
//! as obstacles everywhere.

mod layout;
mod observation;
mod world;

pub use layout::{Layout, LayoutDocument, Voxel, WorldConfig};
pub use observation::{Observation, PatchCode, SNN_FRAME_LEN};
pub use world::{AgentState, CoverageStats, StepOutcome, WorldState, REWARD_BUMP, REWARD_COVERAGE, REWARD_STEP, REWARD_TARGET, REWARD_VIOLATION};

use serde::{Deserialize, Serialize};

/// Integer voxel coordinate `[x, y, z]`.
pub type Pos = [i32; 3];

pub const N_ACTIONS: usize = 9;

/// Motor-level action set: hover, unit moves along each axis, land, evade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Hover = 0,
    MovePosX = 1,
    MoveNegX = 2,
    MovePosY = 3,
    MoveNegY = 4,
    Climb = 5,
    Descend = 6,
    Land = 7,
    Evade = 8,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [
        Action::Hover,
        Action::MovePosX,
        Action::MoveNegX,
        Action::MovePosY,
        Action::MoveNegY,
        Action::Climb,
        Action::Descend,
        Action::Land,
        Action::Evade,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// Fixed displacement for the axis moves; `None` for hover, land and evade.
    pub fn delta(self) -> Option<Pos> {
        match self {
            Action::MovePosX => Some([1, 0, 0]),
            Action::MoveNegX => Some([-1, 0, 0]),
            Action::MovePosY => Some([0, 1, 0]),
            Action::MoveNegY => Some([0, -1, 0]),
            Action::Climb => Some([0, 0, 1]),
            Action::Descend => Some([0, 0, -1]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationReason {
    NoflyProximity,
    VelocityExceeded,
    Collision,
}

/// Outcome of the safety predicate for one agent and one proposed move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub reason: Option<ViolationReason>,
}

impl SafetyVerdict {
    pub const SAFE: SafetyVerdict = SafetyVerdict { reason: None };

    pub fn violated(&self) -> bool {
        self.reason.is_some()
    }

    pub fn of(reason: ViolationReason) -> Self {
        Self { reason: Some(reason) }
    }
}

/// Boolean admissibility per action index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionMask(pub [bool; N_ACTIONS]);

impl ActionMask {
    pub const ALL: ActionMask = ActionMask([true; N_ACTIONS]);

    pub fn allows(&self, a: usize) -> bool {
        self.0.get(a).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// The six axis directions in depth-reading order: +x, -x, +y, -y, +z, -z.
pub const AXES: [Pos; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

pub(crate) fn add(p: Pos, d: Pos) -> Pos {
    [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
}

pub(crate) fn chebyshev(a: Pos, b: Pos) -> i32 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs()).max((a[2] - b[2]).abs())
}

/// Read access to voxels and other agents, either global (the world) or
/// restricted to an agent's sensor patch (an observation).
pub(crate) trait VoxelView {
    fn dims(&self) -> [usize; 3];
    fn code(&self, p: Pos) -> PatchCode;
    fn sensor_radius(&self) -> i32;
}

/// Where a move would take the agent once blocking rules are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedMove {
    pub dest: Pos,
    /// The move hit a wall, an obstacle or the flight floor and was cancelled.
    pub bumped: bool,
    /// The agent reaches the ground and becomes inactive.
    pub lands: bool,
}

pub(crate) fn evade_direction<V: VoxelView>(view: &V, pos: Pos) -> Option<Pos> {
    let r = view.sensor_radius();
    let mut best: Option<(i32, Pos)> = None;
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                let p = add(pos, [dx, dy, dz]);
                if p[2] < 0 {
                    continue;
                }
                if matches!(view.code(p), PatchCode::Obstacle | PatchCode::Agent) {
                    let d = dx.abs().max(dy.abs()).max(dz.abs());
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, [dx, dy, dz]));
                    }
                }
            }
        }
    }
    let (_, off) = best?;
    // Step away along the dominant axis of the offset.
    let axis = (0..3).max_by_key(|&i| (off[i].abs(), std::cmp::Reverse(i))).unwrap();
    let mut step = [0; 3];
    step[axis] = -off[axis].signum();
    Some(step)
}

pub(crate) fn resolve_move<V: VoxelView>(view: &V, pos: Pos, action: Action) -> ResolvedMove {
    let stay = |bumped| ResolvedMove { dest: pos, bumped, lands: false };
    let dims = view.dims();
    let step = match action {
        Action::Hover => return stay(false),
        Action::Land => [0, 0, -1],
        Action::Evade => match evade_direction(view, pos) {
            Some(s) => s,
            None => return stay(false),
        },
        a => a.delta().expect("axis move"),
    };
    let dest = add(pos, step);
    let in_bounds = (0..3).all(|i| dest[i] >= 0 && (dest[i] as usize) < dims[i]);
    if !in_bounds {
        return stay(true);
    }
    let lands = action == Action::Land && dest[2] == 0;
    if dest[2] == 0 && !lands {
        return stay(true);
    }
    match view.code(dest) {
        PatchCode::Obstacle => stay(true),
        _ => ResolvedMove { dest, bumped: false, lands },
    }
}

/// Safety predicate on the voxel an agent would end up in.
pub(crate) fn assess<V: VoxelView>(view: &V, pos: Pos, dest: Pos, velocity_limit: i32) -> SafetyVerdict {
    if chebyshev(pos, dest) > velocity_limit {
        return SafetyVerdict::of(ViolationReason::VelocityExceeded);
    }
    let near_nofly = std::iter::once(dest)
        .chain(AXES.iter().map(|&d| add(dest, d)))
        .any(|p| view.code(p) == PatchCode::Nofly);
    if near_nofly {
        return SafetyVerdict::of(ViolationReason::NoflyProximity);
    }
    if dest != pos && view.code(dest) == PatchCode::Agent {
        return SafetyVerdict::of(ViolationReason::Collision);
    }
    SafetyVerdict::SAFE
}
