//! Discrete configuration space: uniform 1D site grids, the time-step
//! parameters tying lines together, and normalized site distributions.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Planck's constant in J·s (exact SI value).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Electron rest mass in kg.
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Weights below this value after normalization are set to exactly zero.
pub const WEIGHT_FLOOR: f64 = 1e-15;
/// Allowed deviation of a distribution's total mass from one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

// A compensated sum of already-normalized weights lands within a few ulps of
// one; skipping the rescale below this keeps `normalize` idempotent.
const RESCALE_SKIP: f64 = 1e-14;

/// Uniformly spaced sites along one spatial axis, positions in meters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n_sites: usize,
    spacing: f64,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_sites: usize) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidGrid("bounds must be finite".into()));
        }
        if x_max <= x_min {
            return Err(Error::InvalidGrid(format!(
                "x_max ({x_max}) must exceed x_min ({x_min})"
            )));
        }
        if n_sites < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 sites, got {n_sites}")));
        }
        let spacing = (x_max - x_min) / (n_sites - 1) as f64;
        if spacing <= 0.0 || !spacing.is_finite() {
            return Err(Error::InvalidGrid("spacing underflows".into()));
        }
        Ok(Self {
            x_min,
            x_max,
            n_sites,
            spacing,
        })
    }

    pub fn len(&self) -> usize {
        self.n_sites
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Position of site `i`.
    ///
    /// The lower half of the grid is measured from `x_min` and the upper half
    /// from `x_max`, so both endpoints are exact and a grid with
    /// `x_min == -x_max` is mirror symmetric bit for bit.
    pub fn position(&self, i: usize) -> f64 {
        debug_assert!(i < self.n_sites);
        let last = self.n_sites - 1;
        if 2 * i <= last {
            self.x_min + i as f64 * self.spacing
        } else {
            self.x_max - (last - i) as f64 * self.spacing
        }
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_sites).map(|i| self.position(i)).collect()
    }

    /// Index of the site closest to `x`, if `x` lies within half a cell of the grid.
    pub fn nearest_site(&self, x: f64) -> Option<usize> {
        let r = ((x - self.x_min) / self.spacing).round();
        if r < 0.0 || r > (self.n_sites - 1) as f64 || !r.is_finite() {
            return None;
        }
        Some(r as usize)
    }
}

/// Convenience constructor mirroring [`Grid1D::new`].
pub fn make_grid(x_min: f64, x_max: f64, n_sites: usize) -> Result<Grid1D> {
    Grid1D::new(x_min, x_max, n_sites)
}

/// Time step and the particle quantities that fix the line spacing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeParameters {
    tau: f64,
    v_y: f64,
    dy: f64,
    mass: f64,
    wavelength: f64,
}

impl TimeParameters {
    /// From mass, propagation speed and time step; the de Broglie wavelength
    /// follows as `h / (m v_y)`.
    pub fn from_velocity(mass: f64, v_y: f64, tau: f64) -> Result<Self> {
        for (name, v) in [("mass", mass), ("v_y", v_y), ("tau", tau)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidTime(format!("{name} must be positive, got {v}")));
            }
        }
        let wavelength = PLANCK / (mass * v_y);
        Ok(Self {
            tau,
            v_y,
            dy: v_y * tau,
            mass,
            wavelength,
        })
    }

    /// From mass, wavelength and the desired line spacing `dy`.
    pub fn from_wavelength(mass: f64, wavelength: f64, dy: f64) -> Result<Self> {
        for (name, v) in [("mass", mass), ("wavelength", wavelength), ("dy", dy)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidTime(format!("{name} must be positive, got {v}")));
            }
        }
        let v_y = PLANCK / (mass * wavelength);
        let tau = dy / v_y;
        Ok(Self {
            tau,
            v_y,
            dy: v_y * tau,
            mass,
            wavelength,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn v_y(&self) -> f64 {
        self.v_y
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
}

/// Normalized nonnegative weights over the sites of a grid.
#[derive(Debug, Clone)]
pub struct ProbabilityDistribution {
    grid: Arc<Grid1D>,
    weights: Vec<f64>,
}

impl PartialEq for ProbabilityDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.same_grid(other) && self.weights == other.weights
    }
}

impl ProbabilityDistribution {
    /// Wraps weights that are already normalized, validating them.
    pub fn new(grid: Arc<Grid1D>, weights: Vec<f64>) -> Result<Self> {
        check_weights(&grid, &weights)?;
        let sum = compensated_sum(weights.iter().copied());
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized(sum));
        }
        Ok(Self { grid, weights })
    }

    /// Point mass on one site.
    pub fn delta(grid: Arc<Grid1D>, site: usize) -> Result<Self> {
        if site >= grid.len() {
            return Err(Error::Invalid(format!("site {site} outside grid")));
        }
        let mut weights = vec![0.0; grid.len()];
        weights[site] = 1.0;
        Ok(Self { grid, weights })
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, site: usize) -> f64 {
        self.weights[site]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Sites carrying nonzero weight, ascending.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
    }

    /// True when both distributions refer to an identical grid.
    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }

    pub fn mean_position(&self) -> f64 {
        compensated_sum(self.weights.iter().enumerate().map(|(i, &w)| w * self.grid.position(i)))
    }
}

fn check_weights(grid: &Grid1D, weights: &[f64]) -> Result<()> {
    if weights.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: weights.len(),
        });
    }
    if let Some((site, &value)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::BadWeight { site, value });
    }
    Ok(())
}

fn rescale(weights: &mut [f64]) -> Result<()> {
    let sum = compensated_sum(weights.iter().copied());
    if !sum.is_finite() || sum <= 0.0 {
        return Err(Error::NoMass);
    }
    if (sum - 1.0).abs() > RESCALE_SKIP {
        weights.iter_mut().for_each(|w| *w /= sum);
    }
    Ok(())
}

/// Scales nonnegative weights to unit mass.
///
/// Entries that end up below [`WEIGHT_FLOOR`] are zeroed and the remainder
/// rescaled once more. Applying `normalize` to its own output is a no-op.
pub fn normalize(raw_weights: &[f64], grid: Arc<Grid1D>) -> Result<ProbabilityDistribution> {
    check_weights(&grid, raw_weights)?;
    let mut weights = raw_weights.to_vec();
    rescale(&mut weights)?;
    let mut clamped = false;
    for w in weights.iter_mut() {
        if *w > 0.0 && *w < WEIGHT_FLOOR {
            *w = 0.0;
            clamped = true;
        }
    }
    if clamped {
        // rescaling only grows weights, so nothing new drops under the floor
        rescale(&mut weights)?;
    }
    Ok(ProbabilityDistribution { grid, weights })
}
