//! Maximal function of the surface measure of a sphere in ℝ³: spherical-cap
//! geometry, the closed-form supremum, and a brute-force search used as its
//! oracle.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LeibensonError, Result};
use crate::params::unit_ball_volume;

/// A sphere of radius `R` centred at the origin, seen from a point at
/// distance `x_norm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapGeometry {
    pub radius: f64,
    pub x_norm: f64,
}

impl CapGeometry {
    pub fn new(radius: f64, x_norm: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(LeibensonError::Domain(format!("sphere radius must be positive, got {radius}")));
        }
        if !(x_norm.is_finite() && x_norm >= 0.0) {
            return Err(LeibensonError::Domain(format!("|x| must be >= 0, got {x_norm}")));
        }
        Ok(CapGeometry { radius, x_norm })
    }

    /// Radius below which a ball around `x` misses the sphere.
    pub fn gap(&self) -> f64 {
        (self.x_norm - self.radius).abs()
    }

    fn require_off_center(&self) -> Result<()> {
        if self.x_norm == 0.0 {
            return Err(LeibensonError::Domain("cap geometry needs |x| > 0".into()));
        }
        Ok(())
    }
}

/// Height of the cap cut from the sphere by the ball `B_r(x)`.
pub fn cap_height(geom: &CapGeometry, r: f64) -> Result<f64> {
    geom.require_off_center()?;
    let (big_r, x) = (geom.radius, geom.x_norm);
    if r <= geom.gap() {
        return Ok(0.0);
    }
    if r > x + big_r {
        return Ok(2.0 * big_r);
    }
    Ok(big_r - (big_r * big_r + x * x - r * r) / (2.0 * x))
}

/// Area of the sphere inside `B_r(x)`, `2πR·h(r)`.
pub fn cap_area(geom: &CapGeometry, r: f64) -> Result<f64> {
    Ok(2.0 * PI * geom.radius * cap_height(geom, r)?)
}

/// `sup_r σ(B_r(x)) / |B_r|` in closed form. The supremum is attained at
/// `r = √3·||x| − R|` while that ball still cuts the sphere, and at
/// `r = |x| + R` otherwise.
pub fn maximal_surface_d3(geom: &CapGeometry) -> Result<f64> {
    geom.require_off_center()?;
    if geom.x_norm == geom.radius {
        return Err(LeibensonError::Domain("maximal function is infinite on the sphere".into()));
    }
    let (big_r, x) = (geom.radius, geom.x_norm);
    let w3 = unit_ball_volume(3);
    let gap = geom.gap();
    if 3f64.sqrt() * gap <= x + big_r {
        Ok(2.0 * PI * big_r / (w3 * 27f64.sqrt() * x * gap))
    } else {
        Ok(4.0 * PI * big_r * big_r / (w3 * (x + big_r).powi(3)))
    }
}

/// Maximum found by the brute-force search with its location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BruteForceMaximum {
    pub value: f64,
    pub argmax: f64,
}

fn average_ratio(geom: &CapGeometry, r: f64) -> f64 {
    let area = cap_area(geom, r).unwrap_or(0.0);
    area / (unit_ball_volume(3) * r * r * r)
}

/// Maximises the ball average over a log-spaced radius grid, then refines
/// around the best grid point by golden-section search.
pub fn maximal_surface_bruteforce_search(geom: &CapGeometry, grid_size: usize) -> Result<BruteForceMaximum> {
    geom.require_off_center()?;
    if grid_size < 1000 {
        return Err(LeibensonError::Domain(format!("grid size must be >= 1000, got {grid_size}")));
    }
    let lo = (geom.gap() * (1.0 - 1e-6)).max(1e-12 * geom.radius);
    let hi = (geom.x_norm + geom.radius) * 1.01;
    let log_lo = lo.ln();
    let step = (hi.ln() - log_lo) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|i| (log_lo + step * i as f64).exp()).collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &r)| (i, average_ratio(geom, r)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(grid_size - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (average_ratio(geom, c), average_ratio(geom, d));
    for _ in 0..200 {
        if (b - a) <= 1e-14 * b {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = average_ratio(geom, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = average_ratio(geom, d);
        }
    }
    let mut candidates = vec![(grid[best], average_ratio(geom, grid[best])), (c, fc), (d, fd)];
    // The outer branch peaks exactly at the kink r = |x| + R.
    let kink = geom.x_norm + geom.radius;
    candidates.push((kink, average_ratio(geom, kink)));
    let (argmax, value) = candidates.into_iter().fold((0.0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
    Ok(BruteForceMaximum { value, argmax })
}

pub fn maximal_surface_bruteforce(geom: &CapGeometry, grid_size: usize) -> Result<f64> {
    Ok(maximal_surface_bruteforce_search(geom, grid_size)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(r: f64, x: f64) -> CapGeometry {
        CapGeometry::new(r, x).unwrap()
    }

    #[test]
    fn cap_examples() {
        let g = geom(1.0, 2.0);
        assert_eq!(cap_height(&g, 1.0).unwrap(), 0.0);
        assert!((cap_height(&g, 3.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(cap_height(&g, 2.0).unwrap(), 0.75);
        assert!((cap_area(&g, 2.0).unwrap() - 1.5 * PI).abs() < 1e-14);
        assert_eq!(cap_area(&g, 0.5).unwrap(), 0.0);
        assert_eq!(cap_area(&g, 4.0).unwrap(), 4.0 * PI);
        assert!(cap_height(&geom(1.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let v = maximal_surface_d3(&geom(1.0, 2.0)).unwrap();
        assert!((v - 3.0 / (4.0 * 27f64.sqrt())).abs() < 1e-15);
        assert!((v - 0.144338).abs() < 1e-6);
        let v = maximal_surface_d3(&geom(1.0, 10.0)).unwrap();
        assert!((v - 3.0 / 1331.0).abs() < 1e-17);
        assert!(maximal_surface_d3(&geom(1.0, 1.0)).is_err());
        assert!(maximal_surface_d3(&geom(1.0, 0.0)).is_err());
    }

    #[test]
    fn branches_meet_continuously() {
        let s3 = 3f64.sqrt();
        let x = (s3 + 1.0) / (s3 - 1.0);
        let big_r = 1.0;
        let w3 = unit_ball_volume(3);
        let inner = 2.0 * PI * big_r / (w3 * 27f64.sqrt() * x * (x - big_r));
        let outer = 4.0 * PI * big_r * big_r / (w3 * (x + big_r).powi(3));
        assert!((inner - outer).abs() <= 1e-12 * outer);
    }

    #[test]
    fn bruteforce_oracle_and_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut branches = [0, 0];
        for _ in 0..100 {
            let big_r: f64 = rng.random_range(0.1..5.0);
            let x = big_r * rng.random_range(0.05..8.0);
            let g = geom(big_r, x);
            if (x - big_r).abs() < 1e-3 * big_r {
                continue;
            }
            let formula = maximal_surface_d3(&g).unwrap();
            let brute = maximal_surface_bruteforce_search(&g, 4000).unwrap();
            assert!((formula - brute.value).abs() <= 1e-6 * formula, "R={big_r} x={x}");
            if 3f64.sqrt() * g.gap() <= x + big_r {
                branches[0] += 1;
                let expected = 3f64.sqrt() * g.gap();
                assert!((brute.argmax - expected).abs() <= 1e-6 * expected);
            } else {
                branches[1] += 1;
            }
            // Supremum property.
            for k in 1..50 {
                let r = (x + big_r) * 1.2 * k as f64 / 50.0;
                assert!(average_ratio(&g, r) <= formula * (1.0 + 1e-12));
            }
        }
        assert!(branches[0] > 10 && branches[1] > 10);
    }

    #[test]
    fn homogeneity_and_boundary_asymptotics() {
        for &(big_r, x) in &[(1.0, 2.0), (1.0, 10.0), (2.0, 0.5)] {
            let base = maximal_surface_d3(&geom(big_r, x)).unwrap();
            for &lambda in &[0.1, 3.0, 17.0] {
                let scaled = maximal_surface_d3(&geom(lambda * big_r, lambda * x)).unwrap();
                assert!((scaled - base / lambda).abs() <= 1e-12 * base / lambda);
            }
        }
        let w3 = unit_ball_volume(3);
        let x = 1.0 + 1e-9;
        let v = maximal_surface_d3(&geom(1.0, x)).unwrap();
        let limit = 2.0 * PI / (w3 * 27f64.sqrt());
        assert!((v * x * (x - 1.0) - limit).abs() <= 1e-12 * limit);
        assert!(maximal_surface_bruteforce(&geom(1.0, 2.0), 10).is_err());
    }
}
