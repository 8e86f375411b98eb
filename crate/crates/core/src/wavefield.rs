//! Closed-form near-field wavefunction behind one or two slits, built from
//! Fresnel integrals, and its conversion into per-line site distributions.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{normalize, Grid1D, ProbabilityDistribution};

/// Unnormalized field value; only `|Ψ|²` ratios carry meaning.
pub type ComplexAmplitude = Complex64;

// Below this |u| the power series is used, above it the continued fraction.
const SERIES_LIMIT: f64 = 2.0;
const MAX_TERMS: usize = 200;
const CF_MAX_ITER: usize = 500;
const CF_EPS: f64 = 1e-16;

/// Fresnel cosine integral `C(u) = ∫₀ᵘ cos(πt²/2) dt`.
pub fn fresnel_c(u: f64) -> Result<f64> {
    fresnel(u).map(|(c, _)| c)
}

/// Fresnel sine integral `S(u) = ∫₀ᵘ sin(πt²/2) dt`.
pub fn fresnel_s(u: f64) -> Result<f64> {
    fresnel(u).map(|(_, s)| s)
}

/// Both Fresnel integrals at once, `(C(u), S(u))`.
pub fn fresnel(u: f64) -> Result<(f64, f64)> {
    if !u.is_finite() {
        return Err(Error::NonFinite(u));
    }
    let ax = u.abs();
    let (c, s) = if ax <= SERIES_LIMIT {
        fresnel_series(ax)
    } else {
        fresnel_continued_fraction(ax)
    };
    Ok(if u < 0.0 { (-c, -s) } else { (c, s) })
}

/// Power series in `t = πx²/2`: the k-th term `x tᵏ/k!` feeds C for even k
/// and S for odd k, with alternating signs and a `1/(2k+1)` factor.
fn fresnel_series(x: f64) -> (f64, f64) {
    if x == 0.0 {
        return (0.0, 0.0);
    }
    let t = 0.5 * PI * x * x;
    let mut c = 0.0;
    let mut s = 0.0;
    let mut term = x; // x t^k / k!
    for k in 0..MAX_TERMS {
        let contrib = term / (2 * k + 1) as f64;
        match k % 4 {
            0 => c += contrib,
            1 => s += contrib,
            2 => c -= contrib,
            _ => s -= contrib,
        }
        if k > 2 && contrib < 1e-18 * c.abs().max(s.abs()) {
            break;
        }
        term *= t / (k + 1) as f64;
    }
    (c, s)
}

/// Modified Lentz evaluation of the complementary error function continued
/// fraction, giving the auxiliary functions for `x > 2`.
fn fresnel_continued_fraction(x: f64) -> (f64, f64) {
    let one = Complex64::new(1.0, 0.0);
    let pix2 = PI * x * x;
    let tiny = 1e-300;
    let mut b = Complex64::new(1.0, -pix2);
    let mut cc = Complex64::new(1.0 / tiny, 0.0);
    let mut d = one / b;
    let mut h = d;
    let mut n = -1.0_f64;
    for _ in 2..=CF_MAX_ITER {
        n += 2.0;
        let a = -n * (n + 1.0);
        b += Complex64::new(4.0, 0.0);
        d = one / (d * a + b);
        cc = b + Complex64::new(a, 0.0) / cc;
        let del = cc * d;
        h *= del;
        if (del.re - 1.0).abs() + del.im.abs() < CF_EPS {
            break;
        }
    }
    h *= Complex64::new(x, -x);
    let phase = Complex64::new((0.5 * pix2).cos(), (0.5 * pix2).sin());
    let cs = Complex64::new(0.5, 0.5) * (one - phase * h);
    (cs.re, cs.im)
}

/// Slit width `a` and center-to-center separation `d`; `d = 0` means a
/// single slit centered on `x = 0`, otherwise slits sit at `x = ±d/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlitGeometry {
    slit_width: f64,
    slit_separation: f64,
}

impl SlitGeometry {
    pub fn new(slit_width: f64, slit_separation: f64) -> Result<Self> {
        if !(slit_width.is_finite() && slit_width > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "slit width must be positive, got {slit_width}"
            )));
        }
        if !slit_separation.is_finite()
            || slit_separation < 0.0
            || (slit_separation > 0.0 && slit_separation < slit_width)
        {
            return Err(Error::InvalidGeometry(format!(
                "separation must be 0 or at least the slit width ({slit_width}), got {slit_separation}"
            )));
        }
        Ok(Self {
            slit_width,
            slit_separation,
        })
    }

    pub fn single(slit_width: f64) -> Result<Self> {
        Self::new(slit_width, 0.0)
    }

    pub fn slit_width(&self) -> f64 {
        self.slit_width
    }

    pub fn slit_separation(&self) -> f64 {
        self.slit_separation
    }

    pub fn is_single(&self) -> bool {
        self.slit_separation == 0.0
    }

    /// Aperture intervals `[lo, hi]` on the diaphragm, ascending.
    pub fn apertures(&self) -> Vec<(f64, f64)> {
        let h = 0.5 * self.slit_width;
        if self.is_single() {
            vec![(-h, h)]
        } else {
            let c = 0.5 * self.slit_separation;
            vec![(-c - h, -c + h), (c - h, c + h)]
        }
    }
}

fn check_propagation(y: f64, wavelength: f64) -> Result<()> {
    if !y.is_finite() {
        return Err(Error::NonFinite(y));
    }
    if y <= 0.0 {
        return Err(Error::NonPositiveDistance(y));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::InvalidWavelength(wavelength));
    }
    Ok(())
}

/// Field a distance `y` behind a single slit of width `geom.slit_width()`
/// centered on `x = 0`; the separation is ignored.
pub fn single_slit_amplitude(x: f64, y: f64, geom: &SlitGeometry, wavelength: f64) -> Result<ComplexAmplitude> {
    check_propagation(y, wavelength)?;
    if !x.is_finite() {
        return Err(Error::NonFinite(x));
    }
    Ok(single_unchecked(x, (2.0 / (wavelength * y)).sqrt(), geom.slit_width))
}

fn single_unchecked(x: f64, scale: f64, a: f64) -> ComplexAmplitude {
    let h = 0.5 * a;
    let u1 = scale * (x + h);
    let u2 = scale * (x - h);
    // inputs are finite here
    let (c1, s1) = fresnel(u1).unwrap_or((0.0, 0.0));
    let (c2, s2) = fresnel(u2).unwrap_or((0.0, 0.0));
    Complex64::new(c2 - c1, s2 - s1)
}

/// Superposition of two translated single-slit fields,
/// `Ψ(x − d/2, y) + Ψ(x + d/2, y)`.
pub fn double_slit_amplitude(x: f64, y: f64, geom: &SlitGeometry, wavelength: f64) -> Result<ComplexAmplitude> {
    check_propagation(y, wavelength)?;
    if !x.is_finite() {
        return Err(Error::NonFinite(x));
    }
    let scale = (2.0 / (wavelength * y)).sqrt();
    Ok(double_unchecked(x, scale, geom))
}

fn double_unchecked(x: f64, scale: f64, geom: &SlitGeometry) -> ComplexAmplitude {
    let half_d = 0.5 * geom.slit_separation;
    single_unchecked(x - half_d, scale, geom.slit_width) + single_unchecked(x + half_d, scale, geom.slit_width)
}

/// How the uniform diaphragm distribution treats sites near slit edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApertureAlignment {
    /// Equal weight on every site whose whole cell lies inside a slit.
    #[default]
    FullyCovered,
    /// Equal weight on every site whose center lies inside a slit.
    SiteCenter,
    /// Weight proportional to the covered length of each site's cell.
    CoveredLength,
}

/// Unnormalized aperture weights on the diaphragm line.
pub fn aperture_weights(grid: &Grid1D, geom: &SlitGeometry, alignment: ApertureAlignment) -> Vec<f64> {
    let dx = grid.spacing();
    let slack = 1e-9 * dx;
    let apertures = geom.apertures();
    (0..grid.len())
        .map(|i| {
            let x = grid.position(i);
            match alignment {
                ApertureAlignment::SiteCenter => {
                    let inside = apertures.iter().any(|&(lo, hi)| x >= lo - slack && x <= hi + slack);
                    if inside {
                        1.0
                    } else {
                        0.0
                    }
                }
                ApertureAlignment::FullyCovered | ApertureAlignment::CoveredLength => {
                    let (cl, ch) = (x - 0.5 * dx, x + 0.5 * dx);
                    let covered: f64 = apertures
                        .iter()
                        .map(|&(lo, hi)| (ch.min(hi) - cl.max(lo)).max(0.0))
                        .sum();
                    if alignment == ApertureAlignment::CoveredLength {
                        if covered > slack {
                            (covered / dx).min(1.0)
                        } else {
                            0.0
                        }
                    } else if covered >= dx - slack {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect()
}

/// Unnormalized `|Ψ|²` at every grid site, `y > 0`.
pub fn intensity_profile(grid: &Grid1D, y: f64, geom: &SlitGeometry, wavelength: f64) -> Result<Vec<f64>> {
    check_propagation(y, wavelength)?;
    let scale = (2.0 / (wavelength * y)).sqrt();
    Ok((0..grid.len())
        .map(|i| {
            let x = grid.position(i);
            if geom.is_single() {
                single_unchecked(x, scale, geom.slit_width).norm_sqr()
            } else {
                double_unchecked(x, scale, geom).norm_sqr()
            }
        })
        .collect())
}

/// Site distribution on the line a distance `y` behind the diaphragm, with
/// the default aperture alignment for `y = 0`.
pub fn line_distribution(
    grid: Arc<Grid1D>,
    y: f64,
    geom: &SlitGeometry,
    wavelength: f64,
) -> Result<ProbabilityDistribution> {
    line_distribution_aligned(grid, y, geom, wavelength, ApertureAlignment::default())
}

/// Like [`line_distribution`] with an explicit aperture alignment.
pub fn line_distribution_aligned(
    grid: Arc<Grid1D>,
    y: f64,
    geom: &SlitGeometry,
    wavelength: f64,
    alignment: ApertureAlignment,
) -> Result<ProbabilityDistribution> {
    if !y.is_finite() {
        return Err(Error::NonFinite(y));
    }
    if y < 0.0 {
        return Err(Error::NonPositiveDistance(y));
    }
    let raw = if y == 0.0 {
        aperture_weights(&grid, geom, alignment)
    } else {
        intensity_profile(&grid, y, geom, wavelength)?
    };
    normalize(&raw, grid)
}

/// Larger of the two boundary-site weights relative to the peak weight.
/// Values above about 1e-9 mean the grid truncates the distribution's tails.
pub fn boundary_weight_ratio(dist: &ProbabilityDistribution) -> f64 {
    let w = dist.weights();
    let peak = w.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    w[0].max(w[w.len() - 1]) / peak
}
