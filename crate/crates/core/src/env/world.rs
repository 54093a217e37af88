use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::layout::{Layout, Voxel, WorldConfig};
use super::observation::{Observation, PatchCode};
use super::{add, assess, chebyshev, resolve_move, Action, ActionMask, Pos, SafetyVerdict, ViolationReason, VoxelView, AXES};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const REWARD_TARGET: f64 = 1.0;
pub const REWARD_COVERAGE: f64 = 0.1;
pub const REWARD_VIOLATION: f64 = -1.0;
pub const REWARD_STEP: f64 = -0.01;
pub const REWARD_BUMP: f64 = -0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Pos,
    pub active: bool,
    /// Landed inside a target column.
    pub landed_on_target: bool,
}

/// Result of one joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub verdicts: Vec<SafetyVerdict>,
    pub bumped: Vec<bool>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageStats {
    /// Visited free columns over all free columns.
    pub fraction: f64,
    /// Agent-step visit counts, indexed `[x][y]`.
    pub heatmap: Vec<Vec<u32>>,
}

/// Mutable state of one episode.
#[derive(Debug, Clone)]
pub struct WorldState {
    layout: Arc<Layout>,
    grid: Vec<Voxel>,
    dynamic: Vec<usize>,
    agents: Vec<AgentState>,
    visits: Vec<u32>,
    visited: Vec<bool>,
    free_column: Vec<bool>,
    target_column: Vec<bool>,
    target_claimed: Vec<bool>,
    clock: usize,
    dynamics_rng: StreamRng,
}

/// Generates a layout and spawns agents, all from `rng`.
pub fn init_world<R: Rng + ?Sized>(config: &WorldConfig, rng: &mut R) -> Result<WorldState> {
    let layout = Arc::new(Layout::generate(config, rng.random())?);
    WorldState::spawn(layout, rng)
}

impl WorldState {
    pub fn init<R: Rng + ?Sized>(config: &WorldConfig, rng: &mut R) -> Result<Self> {
        init_world(config, rng)
    }

    /// Fresh episode on a fixed layout. Agents go to distinct free voxels at
    /// `z = 1` that are not next to a no-fly zone.
    pub fn spawn<R: Rng + ?Sized>(layout: Arc<Layout>, rng: &mut R) -> Result<Self> {
        let cfg = &layout.config;
        let [dx, dy, _] = cfg.dims;
        let columns = dx * dy;
        let mut free_column = vec![true; columns];
        let mut target_column = vec![false; columns];
        for i in 0..layout.grid.len() {
            let c = i % columns;
            match layout.grid[i] {
                Voxel::Nofly => free_column[c] = false,
                Voxel::Target => target_column[c] = true,
                _ => {}
            }
        }
        let mut world = WorldState {
            grid: layout.grid.clone(),
            dynamic: layout.dynamic.clone(),
            agents: Vec::with_capacity(cfg.n_agents),
            visits: vec![0; columns],
            visited: vec![false; columns],
            free_column,
            target_column,
            target_claimed: vec![false; columns],
            clock: 0,
            dynamics_rng: StreamRng::seed_from_u64(rng.random()),
            layout,
        };
        let mut draws = 0;
        while world.agents.len() < world.layout.config.n_agents {
            if draws >= 10_000 {
                return Err(Error::config(format!(
                    "placed only {} of {} agents after 10000 draws",
                    world.agents.len(),
                    world.layout.config.n_agents
                )));
            }
            draws += 1;
            let p = [rng.random_range(0..dx) as i32, rng.random_range(0..dy) as i32, 1];
            if world.voxel(p) != Some(Voxel::Free) || world.agent_at(p).is_some() {
                continue;
            }
            if assess(&world, p, p, 1).violated() {
                continue;
            }
            world.agents.push(AgentState { pos: p, active: true, landed_on_target: false });
            let c = world.column(p);
            world.visited[c] = true;
        }
        Ok(world)
    }

    /// Places agents explicitly; for constructed test scenarios.
    pub fn with_agents(layout: Arc<Layout>, positions: &[Pos]) -> Result<Self> {
        let mut rng = StreamRng::seed_from_u64(layout.seed);
        let mut cfg = layout.config.clone();
        cfg.n_agents = 0;
        let empty = Arc::new(Layout { config: cfg, ..(*layout).clone() });
        let mut world = WorldState::spawn(empty, &mut rng)?;
        world.layout = layout;
        for &p in positions {
            if world.layout.index(p).is_none() {
                return Err(Error::usage(format!("agent position {p:?} out of bounds")));
            }
            if world.voxel(p) == Some(Voxel::Obstacle) {
                return Err(Error::usage(format!("agent position {p:?} is inside an obstacle")));
            }
            world.agents.push(AgentState { pos: p, active: true, landed_on_target: false });
            let c = world.column(p);
            world.visited[c] = true;
        }
        Ok(world)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.layout.config
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn clock(&self) -> usize {
        self.clock
    }

    pub fn voxel(&self, p: Pos) -> Option<Voxel> {
        self.layout.index(p).map(|i| self.grid[i])
    }

    /// Overwrites one voxel; for constructed test scenarios.
    pub fn set_voxel(&mut self, p: Pos, v: Voxel) -> Result<()> {
        let i = self.layout.index(p).ok_or_else(|| Error::usage(format!("{p:?} out of bounds")))?;
        self.grid[i] = v;
        let c = self.column(p);
        if v == Voxel::Nofly {
            self.free_column[c] = false;
        }
        Ok(())
    }

    fn column(&self, p: Pos) -> usize {
        p[1] as usize * self.layout.config.dims[0] + p[0] as usize
    }

    fn agent_at(&self, p: Pos) -> Option<usize> {
        self.agents.iter().position(|a| a.active && a.pos == p)
    }

    pub fn is_done(&self) -> bool {
        self.clock >= self.layout.config.max_steps || self.agents.iter().all(|a| !a.active)
    }

    pub fn observe(&self, id: usize) -> Observation {
        let cfg = &self.layout.config;
        let r = cfg.sensor_radius as i32;
        let agent = match self.agents.get(id) {
            Some(a) if a.active => *a,
            _ => return Observation::terminal(cfg.sensor_radius, cfg.dims),
        };
        let p = agent.pos;
        let view = AgentView { world: self, me: id };
        let mut depth = [0.0; 6];
        for (k, d) in AXES.iter().enumerate() {
            depth[k] = r as f64;
            for step in 1..=r {
                let q = [p[0] + d[0] * step, p[1] + d[1] * step, p[2] + d[2] * step];
                if q[2] <= 0 || view.code(q) == PatchCode::Obstacle {
                    depth[k] = step as f64;
                    break;
                }
            }
        }
        let side = (2 * r + 1) as usize;
        let mut patch = Vec::with_capacity(side * side * side);
        let mut proximity = 0.0;
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let code = view.code(add(p, [dx, dy, dz]));
                    if code == PatchCode::Agent {
                        proximity += 1.0;
                    }
                    patch.push(code);
                }
            }
        }
        let norm = |v: i32, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
        Observation {
            depth,
            temperature: self.layout.temperature[self.column(p)],
            proximity,
            patch,
            position: [norm(p[0], cfg.dims[0]), norm(p[1], cfg.dims[1]), norm(p[2], cfg.dims[2])],
            landed: false,
            abs: p,
            dims: cfg.dims,
            radius: cfg.sensor_radius,
        }
    }

    /// The safety predicate for agent `id` proposing `action`, evaluated
    /// against current positions.
    pub fn check_safety(&self, id: usize, action: Action) -> SafetyVerdict {
        let view = AgentView { world: self, me: id };
        let pos = self.agents[id].pos;
        let mv = resolve_move(&view, pos, action);
        assess(&view, pos, mv.dest, self.layout.config.velocity_limit as i32)
    }

    pub fn admissible(&self, id: usize) -> ActionMask {
        self.observe(id).admissible()
    }

    /// Applies one joint action. `actions[i]` must be `Some` exactly for
    /// active agents.
    pub fn step(&mut self, actions: &[Option<Action>]) -> Result<StepOutcome> {
        let n = self.agents.len();
        if actions.len() != n {
            return Err(Error::usage(format!("{} actions for {n} agents", actions.len())));
        }
        for (i, (a, st)) in actions.iter().zip(&self.agents).enumerate() {
            match (a, st.active) {
                (Some(_), false) => return Err(Error::usage(format!("action given for inactive agent {i}"))),
                (None, true) => return Err(Error::usage(format!("no action for active agent {i}"))),
                _ => {}
            }
        }
        let limit = self.layout.config.velocity_limit as i32;
        let mut rewards = vec![0.0; n];
        let mut verdicts = vec![SafetyVerdict::SAFE; n];
        let mut bumped = vec![false; n];
        let mut dest: Vec<Pos> = self.agents.iter().map(|a| a.pos).collect();
        let mut lands = vec![false; n];

        for i in 0..n {
            let Some(action) = actions[i] else { continue };
            let view = AgentView { world: self, me: i };
            let pos = self.agents[i].pos;
            let mv = resolve_move(&view, pos, action);
            let verdict = assess(&view, pos, mv.dest, limit);
            bumped[i] = mv.bumped;
            verdicts[i] = verdict;
            if !verdict.violated() {
                dest[i] = mv.dest;
                lands[i] = mv.lands;
            }
        }
        // Two agents heading for the same empty voxel: the lower index wins,
        // the others are reverted and flagged.
        for i in 0..n {
            if !self.agents[i].active || dest[i] == self.agents[i].pos {
                continue;
            }
            for j in 0..i {
                if self.agents[j].active && dest[j] == dest[i] && !lands[i] {
                    dest[i] = self.agents[i].pos;
                    lands[i] = false;
                    verdicts[i] = SafetyVerdict::of(ViolationReason::Collision);
                    break;
                }
            }
        }

        for i in 0..n {
            if !self.agents[i].active {
                continue;
            }
            let from = self.agents[i].pos;
            assert!(chebyshev(from, dest[i]) <= limit, "velocity limit breached by agent {i}");
            self.agents[i].pos = dest[i];
            let c = self.column(dest[i]);
            self.visits[c] += 1;
            let mut r = REWARD_STEP;
            if bumped[i] {
                r += REWARD_BUMP;
            }
            if verdicts[i].violated() {
                r += REWARD_VIOLATION;
            }
            if !self.visited[c] && self.free_column[c] {
                self.visited[c] = true;
                r += REWARD_COVERAGE;
            }
            if self.target_column[c] && !self.target_claimed[c] {
                self.target_claimed[c] = true;
                r += REWARD_TARGET;
            }
            if lands[i] {
                self.agents[i].active = false;
                self.agents[i].landed_on_target = self.target_column[c];
            }
            rewards[i] = r;
        }

        self.clock += 1;
        if self.clock % self.layout.config.drift_period == 0 {
            self.drift_obstacles();
        }
        Ok(StepOutcome { rewards, verdicts, bumped, done: self.is_done() })
    }

    fn drift_obstacles(&mut self) {
        const LATERAL: [Pos; 4] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]];
        for k in 0..self.dynamic.len() {
            let from = self.dynamic[k];
            let dir = LATERAL[self.dynamics_rng.random_range(0..4)];
            let to = add(self.layout.pos_of(from), dir);
            let Some(ti) = self.layout.index(to) else { continue };
            if self.grid[ti] == Voxel::Free && self.agent_at(to).is_none() {
                self.grid[from] = Voxel::Free;
                self.grid[ti] = Voxel::Obstacle;
                self.dynamic[k] = ti;
            }
        }
    }

    pub fn coverage_stats(&self) -> CoverageStats {
        let [dx, dy, _] = self.layout.config.dims;
        let free = self.free_column.iter().filter(|&&f| f).count();
        let visited = self.visited.iter().zip(&self.free_column).filter(|(v, f)| **v && **f).count();
        let heatmap = (0..dx).map(|x| (0..dy).map(|y| self.visits[y * dx + x]).collect()).collect();
        CoverageStats { fraction: if free == 0 { 0.0 } else { visited as f64 / free as f64 }, heatmap }
    }

    /// Flat `y * dx + x` visit counts.
    pub fn visit_counts(&self) -> &[u32] {
        &self.visits
    }

    pub fn active_count(&self) -> usize {
        self.agents.iter().filter(|a| a.active).count()
    }

    pub fn obstacle_count(&self) -> usize {
        self.grid.iter().filter(|&&v| v == Voxel::Obstacle).count()
    }
}

/// The world as seen by agent `me`: other active agents show up as `Agent`.
struct AgentView<'a> {
    world: &'a WorldState,
    me: usize,
}

impl VoxelView for AgentView<'_> {
    fn dims(&self) -> [usize; 3] {
        self.world.layout.config.dims
    }

    fn code(&self, p: Pos) -> PatchCode {
        let Some(i) = self.world.layout.index(p) else { return PatchCode::Obstacle };
        if let Some(j) = self.world.agent_at(p) {
            if j != self.me {
                return PatchCode::Agent;
            }
        }
        match self.world.grid[i] {
            Voxel::Free => PatchCode::Free,
            Voxel::Obstacle => PatchCode::Obstacle,
            Voxel::Nofly => PatchCode::Nofly,
            Voxel::Target => PatchCode::Target,
        }
    }

    fn sensor_radius(&self) -> i32 {
        self.world.layout.config.sensor_radius as i32
    }
}

impl VoxelView for WorldState {
    fn dims(&self) -> [usize; 3] {
        self.layout.config.dims
    }

    fn code(&self, p: Pos) -> PatchCode {
        AgentView { world: self, me: usize::MAX }.code(p)
    }

    fn sensor_radius(&self) -> i32 {
        self.layout.config.sensor_radius as i32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn open_config(dims: [usize; 3], n_agents: usize) -> WorldConfig {
        WorldConfig {
            dims,
            n_agents,
            obstacle_density: 0.0,
            n_nofly_zones: 0,
            n_targets: 0,
            ..WorldConfig::default()
        }
    }

    fn open_world(dims: [usize; 3], positions: &[Pos]) -> WorldState {
        let layout = Arc::new(Layout::generate(&open_config(dims, positions.len().max(1)), 1).unwrap());
        WorldState::with_agents(layout, positions).unwrap()
    }

    #[test]
    fn spawn_is_deterministic_and_valid() {
        let cfg = WorldConfig::default();
        let a = init_world(&cfg, &mut StreamRng::seed_from_u64(4)).unwrap();
        let b = init_world(&cfg, &mut StreamRng::seed_from_u64(4)).unwrap();
        assert_eq!(a.agents, b.agents);
        assert_eq!(a.grid, b.grid);
        let mut seen = std::collections::HashSet::new();
        for ag in a.agents() {
            assert_eq!(ag.pos[2], 1);
            assert_eq!(a.voxel(ag.pos), Some(Voxel::Free));
            assert!(seen.insert(ag.pos));
        }
    }

    #[test]
    fn unplaceable_agents_is_config_error() {
        let cfg = WorldConfig { dims: [2, 2, 2], n_agents: 5, ..open_config([2, 2, 2], 5) };
        let err = init_world(&cfg, &mut StreamRng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn depth_saturates_in_open_space() {
        let w = open_world([20, 20, 10], &[[10, 10, 5]]);
        assert_eq!(w.observe(0).depth, [3.0; 6]);
    }

    #[test]
    fn depth_reads_adjacent_obstacle() {
        let mut w = open_world([20, 20, 10], &[[10, 10, 5]]);
        w.set_voxel([11, 10, 5], Voxel::Obstacle).unwrap();
        let o = w.observe(0);
        assert_eq!(o.depth[0], 1.0);
        assert_eq!(o.depth[1], 3.0);
        assert_eq!(o, w.observe(0));
    }

    #[test]
    fn out_of_bounds_reads_as_obstacle() {
        let w = open_world([20, 20, 10], &[[0, 5, 5]]);
        let o = w.observe(0);
        assert_eq!(o.depth[1], 1.0);
        assert_eq!(o.at([-1, 0, 0]), Some(PatchCode::Obstacle));
        assert_eq!(o.features().len(), 6 + 2 + 343 + 3 + 1);
    }

    #[test]
    fn hovering_in_open_space_costs_only_step() {
        let mut w = open_world([10, 10, 4], &[[2, 2, 1], [7, 7, 1]]);
        let out = w.step(&[Some(Action::Hover), Some(Action::Hover)]).unwrap();
        assert!(out.verdicts.iter().all(|v| !v.violated()));
        assert_eq!(out.rewards, vec![REWARD_STEP; 2]);
    }

    #[test]
    fn boundary_move_is_clamped_not_violation() {
        let mut w = open_world([5, 5, 3], &[[0, 0, 1]]);
        let out = w.step(&[Some(Action::MoveNegX)]).unwrap();
        assert_eq!(w.agents()[0].pos, [0, 0, 1]);
        assert!(out.bumped[0]);
        assert!(!out.verdicts[0].violated());
        assert!((out.rewards[0] - (REWARD_STEP + REWARD_BUMP)).abs() < 1e-12);
    }

    #[test]
    fn entering_nofly_is_reverted_and_flagged() {
        // Three voxels in a row: agent, free, no-fly.
        let mut w = open_world([3, 1, 2], &[[0, 0, 1]]);
        w.set_voxel([2, 0, 1], Voxel::Nofly).unwrap();
        let out = w.step(&[Some(Action::MovePosX)]).unwrap();
        assert_eq!(out.verdicts[0], SafetyVerdict::of(ViolationReason::NoflyProximity));
        assert_eq!(w.agents()[0].pos, [0, 0, 1]);
    }

    #[test]
    fn simultaneous_arrival_is_a_collision() {
        let mut w = open_world([5, 5, 3], &[[1, 2, 1], [3, 2, 1]]);
        let out = w.step(&[Some(Action::MovePosX), Some(Action::MoveNegX)]).unwrap();
        assert!(!out.verdicts[0].violated());
        assert_eq!(out.verdicts[1], SafetyVerdict::of(ViolationReason::Collision));
        assert_eq!(w.agents()[0].pos, [2, 2, 1]);
        assert_eq!(w.agents()[1].pos, [3, 2, 1]);
    }

    #[test]
    fn landing_deactivates() {
        let mut w = open_world([5, 5, 3], &[[1, 1, 1]]);
        let out = w.step(&[Some(Action::Land)]).unwrap();
        assert!(!w.agents()[0].active);
        assert!(out.done);
        assert!(w.step(&[Some(Action::Hover)]).is_err());
        assert!(w.observe(0).landed);
    }

    #[test]
    fn descend_at_floor_is_bumped() {
        let mut w = open_world([5, 5, 3], &[[1, 1, 1]]);
        let out = w.step(&[Some(Action::Descend)]).unwrap();
        assert!(out.bumped[0]);
        assert_eq!(w.agents()[0].pos, [1, 1, 1]);
    }

    #[test]
    fn stationary_agent_coverage() {
        let mut w = open_world([6, 6, 3], &[[2, 2, 1]]);
        let fresh = w.coverage_stats();
        assert!((fresh.fraction - 1.0 / 36.0).abs() < 1e-12);
        assert_eq!(fresh.heatmap.iter().flatten().sum::<u32>(), 0);
        for _ in 0..50 {
            w.step(&[Some(Action::Hover)]).unwrap();
        }
        let s = w.coverage_stats();
        assert_eq!(s.heatmap[2][2], 50);
        assert_eq!(s.heatmap.iter().flatten().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn evade_moves_away_from_obstacle() {
        let mut w = open_world([10, 10, 6], &[[5, 5, 3]]);
        w.set_voxel([6, 5, 3], Voxel::Obstacle).unwrap();
        w.step(&[Some(Action::Evade)]).unwrap();
        assert_eq!(w.agents()[0].pos, [4, 5, 3]);
    }

    #[test]
    fn evade_without_stimulus_hovers() {
        let mut w = open_world([20, 20, 10], &[[10, 10, 5]]);
        w.step(&[Some(Action::Evade)]).unwrap();
        assert_eq!(w.agents()[0].pos, [10, 10, 5]);
    }

    #[test]
    fn observation_prediction_matches_world() {
        let cfg = WorldConfig::default();
        let w = init_world(&cfg, &mut StreamRng::seed_from_u64(21)).unwrap();
        for i in 0..w.agents().len() {
            let o = w.observe(i);
            for a in Action::ALL {
                assert_eq!(o.predict(a, 1).1, w.check_safety(i, a), "agent {i} action {a:?}");
            }
        }
    }
}
