use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Pos;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use rand::SeedableRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    /// Voxel grid extent `[x, y, z]`.
    pub dims: [usize; 3],
    pub n_agents: usize,
    /// Chebyshev sensing radius in voxels.
    pub sensor_radius: usize,
    pub obstacle_density: f64,
    pub n_nofly_zones: usize,
    /// Lateral footprint `[x, y]` of each no-fly column block.
    pub nofly_footprint: [usize; 2],
    pub n_targets: usize,
    pub max_steps: usize,
    /// Maximum Chebyshev displacement per step.
    pub velocity_limit: usize,
    /// Fraction of obstacles that drift.
    pub dynamic_fraction: f64,
    /// Drifting obstacles move once every this many ticks.
    pub drift_period: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dims: [40, 40, 10],
            n_agents: 10,
            sensor_radius: 3,
            obstacle_density: 0.08,
            n_nofly_zones: 4,
            nofly_footprint: [3, 3],
            n_targets: 12,
            max_steps: 50,
            velocity_limit: 1,
            dynamic_fraction: 0.1,
            drift_period: 5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::config("world.dims: every extent must be >= 1"));
        }
        if self.dims[2] < 2 {
            return Err(Error::config("world.dims: need at least 2 layers (ground + flight)"));
        }
        if self.dims.iter().any(|&d| d > 1024) {
            return Err(Error::config("world.dims: extent above 1024"));
        }
        for (name, v) in [("obstacle_density", self.obstacle_density), ("dynamic_fraction", self.dynamic_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("world.{name}: {v} outside [0, 1]")));
            }
        }
        if self.n_agents == 0 {
            return Err(Error::config("world.n_agents must be >= 1"));
        }
        if self.sensor_radius == 0 || self.sensor_radius > 8 {
            return Err(Error::config("world.sensor_radius must be in 1..=8"));
        }
        if self.velocity_limit == 0 {
            return Err(Error::config("world.velocity_limit must be >= 1"));
        }
        if self.drift_period == 0 {
            return Err(Error::config("world.drift_period must be >= 1"));
        }
        if self.n_nofly_zones > 0
            && (self.nofly_footprint[0] > self.dims[0] || self.nofly_footprint[1] > self.dims[1] || self.nofly_footprint.contains(&0))
        {
            return Err(Error::config("world.nofly_footprint does not fit the grid"));
        }
        Ok(())
    }

    pub fn columns(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn voxels(&self) -> usize {
        self.columns() * self.dims[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Voxel {
    Free,
    Obstacle,
    Nofly,
    Target,
}

/// A Gaussian bump of the synthetic temperature field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub(crate) struct Bump {
    pub center: [f64; 2],
    pub width: f64,
    pub amplitude: f64,
}

/// Static part of a world: what a fresh episode starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub config: WorldConfig,
    pub seed: u64,
    pub(crate) grid: Vec<Voxel>,
    pub(crate) dynamic: Vec<usize>,
    pub(crate) temperature: Vec<f64>,
}

/// JSON form of a layout, used for `world.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub dims: [usize; 3],
    pub seed: u64,
    pub obstacles: Vec<Pos>,
    pub dynamic_obstacles: Vec<Pos>,
    pub nofly: Vec<Pos>,
    pub targets: Vec<Pos>,
}

impl Layout {
    pub fn generate(config: &WorldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = StreamRng::seed_from_u64(seed);
        let n = config.voxels();
        let mut grid: Vec<Voxel> = (0..n)
            .map(|_| if rng.random::<f64>() < config.obstacle_density { Voxel::Obstacle } else { Voxel::Free })
            .collect();
        let [dx, dy, dz] = config.dims;
        let idx = |x: usize, y: usize, z: usize| (z * dy + y) * dx + x;

        let [fx, fy] = config.nofly_footprint;
        for _ in 0..config.n_nofly_zones {
            let x0 = rng.random_range(0..=dx - fx);
            let y0 = rng.random_range(0..=dy - fy);
            for z in 0..dz {
                for y in y0..y0 + fy {
                    for x in x0..x0 + fx {
                        grid[idx(x, y, z)] = Voxel::Nofly;
                    }
                }
            }
        }

        let mut placed = 0;
        let mut attempts = 0;
        while placed < config.n_targets && attempts < 10_000 {
            attempts += 1;
            let (x, y) = (rng.random_range(0..dx), rng.random_range(0..dy));
            let i = idx(x, y, 0);
            if matches!(grid[i], Voxel::Free | Voxel::Obstacle) {
                grid[i] = Voxel::Target;
                placed += 1;
            }
        }
        if placed < config.n_targets {
            return Err(Error::config(format!("could only place {placed} of {} targets", config.n_targets)));
        }

        let obstacles: Vec<usize> = (0..n).filter(|&i| grid[i] == Voxel::Obstacle).collect();
        let n_dyn = (config.dynamic_fraction * obstacles.len() as f64).round() as usize;
        let mut dynamic: Vec<usize> =
            index::sample(&mut rng, obstacles.len(), n_dyn).into_iter().map(|k| obstacles[k]).collect();
        dynamic.sort_unstable();

        let bumps: Vec<Bump> = (0..3)
            .map(|_| Bump {
                center: [rng.random::<f64>() * dx as f64, rng.random::<f64>() * dy as f64],
                width: (0.1 + 0.2 * rng.random::<f64>()) * dx.max(dy) as f64,
                amplitude: 0.5 + 0.5 * rng.random::<f64>(),
            })
            .collect();
        let temperature = temperature_field(dx, dy, &bumps);

        Ok(Self { config: config.clone(), seed, grid, dynamic, temperature })
    }

    pub fn voxel(&self, p: Pos) -> Option<Voxel> {
        self.index(p).map(|i| self.grid[i])
    }

    pub(crate) fn index(&self, p: Pos) -> Option<usize> {
        let [dx, dy, dz] = self.config.dims;
        if p[0] < 0 || p[1] < 0 || p[2] < 0 {
            return None;
        }
        let (x, y, z) = (p[0] as usize, p[1] as usize, p[2] as usize);
        (x < dx && y < dy && z < dz).then(|| (z * dy + y) * dx + x)
    }

    pub(crate) fn pos_of(&self, i: usize) -> Pos {
        let [dx, dy, _] = self.config.dims;
        [(i % dx) as i32, ((i / dx) % dy) as i32, (i / (dx * dy)) as i32]
    }

    pub fn count(&self, kind: Voxel) -> usize {
        self.grid.iter().filter(|&&v| v == kind).count()
    }

    pub fn to_document(&self) -> LayoutDocument {
        let list = |kind: Voxel| -> Vec<Pos> {
            (0..self.grid.len()).filter(|&i| self.grid[i] == kind).map(|i| self.pos_of(i)).collect()
        };
        LayoutDocument {
            dims: self.config.dims,
            seed: self.seed,
            obstacles: list(Voxel::Obstacle),
            dynamic_obstacles: self.dynamic.iter().map(|&i| self.pos_of(i)).collect(),
            nofly: list(Voxel::Nofly),
            targets: list(Voxel::Target),
        }
    }
}

fn temperature_field(dx: usize, dy: usize, bumps: &[Bump]) -> Vec<f64> {
    let raw: Vec<f64> = (0..dx * dy)
        .map(|i| {
            let (x, y) = ((i % dx) as f64, (i / dx) as f64);
            bumps
                .iter()
                .map(|b| {
                    let d2 = (x - b.center[0]).powi(2) + (y - b.center[1]).powi(2);
                    b.amplitude * (-d2 / (2.0 * b.width * b.width)).exp()
                })
                .sum()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    raw.into_iter().map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_density_leaves_only_zones_and_targets() {
        let cfg = WorldConfig { obstacle_density: 0.0, ..WorldConfig::default() };
        let layout = Layout::generate(&cfg, 3).unwrap();
        assert_eq!(layout.count(Voxel::Obstacle), 0);
        assert_eq!(layout.count(Voxel::Target), 12);
        assert!(layout.count(Voxel::Nofly) > 0);
        assert!(layout.dynamic.is_empty());
    }

    #[test]
    fn same_seed_same_layout() {
        let cfg = WorldConfig::default();
        assert_eq!(Layout::generate(&cfg, 11).unwrap(), Layout::generate(&cfg, 11).unwrap());
        assert_ne!(Layout::generate(&cfg, 11).unwrap().grid, Layout::generate(&cfg, 12).unwrap().grid);
    }

    #[test]
    fn obstacle_count_is_binomial() {
        let cfg = WorldConfig::default();
        let mean = 0.08 * 16000.0;
        let sd = (16000.0f64 * 0.08 * 0.92).sqrt();
        for seed in 0..5 {
            let n = Layout::generate(&cfg, seed).unwrap().count(Voxel::Obstacle) as f64;
            assert!((n - mean).abs() <= 3.0 * sd, "seed {seed}: {n}");
        }
    }

    #[test]
    fn temperature_is_normalized() {
        let layout = Layout::generate(&WorldConfig::default(), 5).unwrap();
        let lo = layout.temperature.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = layout.temperature.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dynamic_fraction_is_ten_percent() {
        let layout = Layout::generate(&WorldConfig::default(), 8).unwrap();
        let obstacles = layout.count(Voxel::Obstacle) as f64;
        assert_eq!(layout.dynamic.len(), (0.1 * obstacles).round() as usize);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = WorldConfig { obstacle_density: 1.5, ..WorldConfig::default() };
        assert!(bad.validate().is_err());
        let bad = WorldConfig { dims: [4, 4, 1], ..WorldConfig::default() };
        assert!(bad.validate().is_err());
    }
}
