//! Biased patch sampling over a 2D patch grid.
//!
//! Radial bias sampling weights every cell by `exp(-alpha * d)` where `d` is the
//! Euclidean distance (in patch units) to a randomly chosen center, normalizes
//! the weights into a distribution, and draws a group of distinct cells from it.
//! Uniform and Gaussian maps are provided as ablation baselines.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AvseError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(AvseError::domain(format!(
                "patch grid must be at least 1x1, got {rows}x{cols}"
            )));
        }
        Ok(PatchGrid { rows, cols })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn contains(&self, c: GridCoord) -> bool {
        c.row < self.rows && c.col < self.cols
    }

    /// Row-major flat index of a cell.
    pub fn flat(&self, c: GridCoord) -> usize {
        c.row * self.cols + c.col
    }

    pub fn coord(&self, flat: usize) -> GridCoord {
        GridCoord {
            row: flat / self.cols,
            col: flat % self.cols,
        }
    }
}

impl std::str::FromStr for PatchGrid {
    type Err = AvseError;

    /// Parses `HxW`, e.g. `14x14`.
    fn from_str(s: &str) -> Result<Self> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| AvseError::domain(format!("grid `{s}` is not of the form HxW")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| AvseError::domain(format!("grid `{s}` is not of the form HxW")))
        };
        PatchGrid::new(parse(h)?, parse(w)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCoord {
    pub row: usize,
    pub col: usize,
}

impl GridCoord {
    pub fn new(row: usize, col: usize) -> Self {
        GridCoord { row, col }
    }

    pub fn distance(&self, other: GridCoord) -> f64 {
        let dr = self.row as f64 - other.row as f64;
        let dc = self.col as f64 - other.col as f64;
        (dr * dr + dc * dc).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    #[serde(alias = "radial")]
    RadialBias,
    Uniform,
    Gaussian,
}

impl std::str::FromStr for SamplingStrategy {
    type Err = AvseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radial" | "radial_bias" => Ok(SamplingStrategy::RadialBias),
            "uniform" => Ok(SamplingStrategy::Uniform),
            "gaussian" => Ok(SamplingStrategy::Gaussian),
            other => Err(AvseError::domain(format!("unknown sampling strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub decay_alpha: f64,
    pub group_count: usize,
    pub group_size: usize,
    pub strategy: SamplingStrategy,
    pub seed: u64,
    /// Width of the Gaussian baseline; `None` means `min(rows, cols) / 4`.
    #[serde(default)]
    pub gaussian_sigma: Option<f64>,
}

impl SamplingConfig {
    /// Radial-bias config with two views of `ceil(cells / 2)` patches each.
    pub fn for_grid(grid: PatchGrid, decay_alpha: f64, seed: u64) -> Self {
        SamplingConfig {
            decay_alpha,
            group_count: 2,
            group_size: grid.cells().div_ceil(2),
            strategy: SamplingStrategy::RadialBias,
            seed,
            gaussian_sigma: None,
        }
    }

    pub fn validate(&self, grid: PatchGrid) -> Result<()> {
        if !(self.decay_alpha >= 0.0) || !self.decay_alpha.is_finite() {
            return Err(AvseError::domain(format!(
                "decay_alpha must be finite and nonnegative, got {}",
                self.decay_alpha
            )));
        }
        if self.group_count == 0 {
            return Err(AvseError::domain("group_count must be at least 1"));
        }
        if self.group_size == 0 || self.group_size > grid.cells() {
            return Err(AvseError::domain(format!(
                "group_size {} must be in 1..={}",
                self.group_size,
                grid.cells()
            )));
        }
        if let Some(s) = self.gaussian_sigma {
            if !(s > 0.0) {
                return Err(AvseError::domain(format!("gaussian_sigma must be positive, got {s}")));
            }
        }
        Ok(())
    }

    pub fn sigma_for(&self, grid: PatchGrid) -> f64 {
        self.gaussian_sigma
            .unwrap_or(grid.rows.min(grid.cols) as f64 / 4.0)
    }
}

/// Normalized sampling distribution over the cells of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    grid: PatchGrid,
    probs: Matrix,
    center: GridCoord,
}

impl ProbabilityMap {
    pub fn grid(&self) -> PatchGrid {
        self.grid
    }

    pub fn center(&self) -> GridCoord {
        self.center
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn prob(&self, c: GridCoord) -> f64 {
        self.probs[(c.row, c.col)]
    }

    /// Flat row-major view of the probabilities.
    pub fn as_slice(&self) -> &[f64] {
        self.probs.as_slice()
    }

    fn from_weights(grid: PatchGrid, center: GridCoord, weight: impl Fn(f64) -> f64) -> Result<Self> {
        if !grid.contains(center) {
            return Err(AvseError::domain(format!(
                "center ({}, {}) outside {}x{} grid",
                center.row, center.col, grid.rows, grid.cols
            )));
        }
        let mut probs = Matrix::zeros(grid.rows, grid.cols);
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                probs[(r, c)] = weight(center.distance(GridCoord::new(r, c)));
            }
        }
        let total: f64 = probs.as_slice().iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(AvseError::domain("weight map has no positive finite mass"));
        }
        probs.scale(1.0 / total);
        Ok(ProbabilityMap { grid, probs, center })
    }
}

/// Unnormalized radial weight `exp(-alpha * d)`.
pub fn radial_weight(distance: f64, decay_alpha: f64) -> f64 {
    (-decay_alpha * distance).exp()
}

/// Unnormalized Gaussian weight `exp(-d^2 / (2 sigma^2))`.
pub fn gaussian_weight(distance: f64, sigma: f64) -> f64 {
    (-(distance * distance) / (2.0 * sigma * sigma)).exp()
}

pub fn build_probability_map(
    grid: PatchGrid,
    center: GridCoord,
    decay_alpha: f64,
) -> Result<ProbabilityMap> {
    if !(decay_alpha >= 0.0) || !decay_alpha.is_finite() {
        return Err(AvseError::domain(format!(
            "decay_alpha must be finite and nonnegative, got {decay_alpha}"
        )));
    }
    ProbabilityMap::from_weights(grid, center, |d| radial_weight(d, decay_alpha))
}

pub fn gaussian_probability_map(grid: PatchGrid, center: GridCoord, sigma: f64) -> Result<ProbabilityMap> {
    if !(sigma > 0.0) {
        return Err(AvseError::domain(format!("sigma must be positive, got {sigma}")));
    }
    ProbabilityMap::from_weights(grid, center, |d| gaussian_weight(d, sigma))
}

pub fn uniform_probability_map(grid: PatchGrid) -> ProbabilityMap {
    ProbabilityMap::from_weights(grid, GridCoord::new(0, 0), |_| 1.0)
        .expect("uniform weights always have positive mass")
}

/// Draws `group_size` distinct flat indices without replacement, renormalizing
/// the remaining mass after every draw.
///
/// If the remaining mass underflows to zero (extreme `decay_alpha`), the rest of
/// the group is drawn uniformly from the cells not yet taken.
pub fn draw_group<R: Rng + ?Sized>(
    map: &ProbabilityMap,
    group_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = map.grid.cells();
    if group_size > n {
        return Err(AvseError::domain(format!(
            "group_size {group_size} exceeds the {n} cells of the grid"
        )));
    }
    let mut weights = map.as_slice().to_vec();
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            let mut last_positive = None;
            for (i, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                last_positive = Some(i);
                acc += w;
                if target < acc {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the running sum
            chosen.or(last_positive).expect("positive total implies a positive weight")
        } else {
            let remaining: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            remaining[rng.gen_range(0..remaining.len())]
        };
        taken[pick] = true;
        weights[pick] = 0.0;
        out.push(pick);
    }
    Ok(out)
}

/// Groups of patch indices, one per view.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub grid: PatchGrid,
    pub groups: Vec<Vec<usize>>,
    pub centers: Vec<GridCoord>,
    pub config: SamplingConfig,
}

impl SamplePlan {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = PlanDocument {
            grid: self.grid,
            strategy: self.config.strategy,
            alpha: self.config.decay_alpha,
            seed: self.config.seed,
            groups: self.groups.clone(),
            centers: self.centers.iter().map(|c| [c.row, c.col]).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PlanDocument = serde_json::from_str(s)?;
        let grid = PatchGrid::new(doc.grid.rows, doc.grid.cols)?;
        let group_size = doc.groups.first().map_or(0, Vec::len);
        for g in &doc.groups {
            if g.len() != group_size || g.iter().any(|&i| i >= grid.cells()) {
                return Err(AvseError::domain("plan groups are ragged or out of bounds"));
            }
        }
        Ok(SamplePlan {
            grid,
            centers: doc
                .centers
                .iter()
                .map(|&[r, c]| GridCoord::new(r, c))
                .collect(),
            config: SamplingConfig {
                decay_alpha: doc.alpha,
                group_count: doc.groups.len(),
                group_size,
                strategy: doc.strategy,
                seed: doc.seed,
                gaussian_sigma: None,
            },
            groups: doc.groups,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PlanDocument {
    grid: PatchGrid,
    strategy: SamplingStrategy,
    alpha: f64,
    seed: u64,
    groups: Vec<Vec<usize>>,
    centers: Vec<[usize; 2]>,
}

/// Builds a plan with an RNG seeded from `config.seed`.
pub fn make_sample_plan(grid: PatchGrid, config: &SamplingConfig) -> Result<SamplePlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    sample_plan_with_rng(grid, config, &mut rng)
}

/// Same as [`make_sample_plan`] but for the uniform/Gaussian ablation strategies only.
pub fn baseline_plan(grid: PatchGrid, config: &SamplingConfig) -> Result<SamplePlan> {
    if config.strategy == SamplingStrategy::RadialBias {
        return Err(AvseError::domain(
            "baseline_plan requires the uniform or gaussian strategy",
        ));
    }
    make_sample_plan(grid, config)
}

/// Draws one independent center per group, builds that group's map and draws it.
pub fn sample_plan_with_rng<R: Rng + ?Sized>(
    grid: PatchGrid,
    config: &SamplingConfig,
    rng: &mut R,
) -> Result<SamplePlan> {
    config.validate(grid)?;
    let mut groups = Vec::with_capacity(config.group_count);
    let mut centers = Vec::with_capacity(config.group_count);
    for _ in 0..config.group_count {
        let center = grid.coord(rng.gen_range(0..grid.cells()));
        let map = strategy_map(grid, center, config)?;
        groups.push(draw_group(&map, config.group_size, rng)?);
        centers.push(center);
    }
    Ok(SamplePlan {
        grid,
        groups,
        centers,
        config: config.clone(),
    })
}

/// The probability map a strategy uses around `center`.
pub fn strategy_map(grid: PatchGrid, center: GridCoord, config: &SamplingConfig) -> Result<ProbabilityMap> {
    match config.strategy {
        SamplingStrategy::RadialBias => build_probability_map(grid, center, config.decay_alpha),
        SamplingStrategy::Uniform => Ok(uniform_probability_map(grid)),
        SamplingStrategy::Gaussian => gaussian_probability_map(grid, center, config.sigma_for(grid)),
    }
}
