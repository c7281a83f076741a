//! Hexagonal multi-cell layout, user placement, per-link angles/distances,
//! path loss, and the no-blockage distance bound.
//!
//! Conventions: the elevation angle is measured from the array's vertical
//! axis with users below the BS, `theta = pi/2 + atan(h_bs / d)`, so the
//! horizon (`theta -> pi/2`) is the far-distance limit. Azimuth is wrapped
//! to `(-pi, pi]` and compared with circular distance.

use nalgebra::Vector2;
use rand::Rng;
use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate geometry: user at zero horizontal distance from BS")]
    DegenerateGeometry,
}

/// Positions of the base stations plus the shared cell dimensions.
/// Position 0 is the center (measured) cell.
#[derive(Debug, Clone)]
pub struct CellLayout<T: Real> {
    pub bs_positions: Vec<Vector2<T>>,
    pub r_cell: T,
    pub h_bs: T,
}

impl<T: Real> CellLayout<T> {
    pub fn cells(&self) -> usize {
        self.bs_positions.len()
    }

    /// Distance from a cell's hexagon center to each of its edges.
    pub fn apothem(&self) -> T {
        T::lit(3.0).sqrt() * T::lit(0.5) * self.r_cell
    }

    /// True when `p` lies inside the hexagon of cell `cell` (flat sides
    /// facing the six neighbor directions, circumradius `r_cell`).
    pub fn in_hexagon(&self, cell: usize, p: &Vector2<T>) -> bool {
        let rel = p - self.bs_positions[cell];
        let a = self.apothem();
        for i in 0..6 {
            let ang = T::lit(std::f64::consts::FRAC_PI_3) * T::of_usize(i);
            let dot = rel.x * ang.cos() + rel.y * ang.sin();
            if dot.abs() > a {
                return false;
            }
        }
        true
    }
}

/// A dropped user: owning cell index and planar coordinates in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPlacement<T: Real> {
    pub cell_index: usize,
    pub xy: Vector2<T>,
}

/// Angles, distance, and large-scale gain of one BS-user link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry<T: Real> {
    /// Horizontal BS-user distance in meters.
    pub d: T,
    /// Azimuth angle in radians, wrapped to `(-pi, pi]`.
    pub phi: T,
    /// Elevation angle from the vertical array axis, in `(pi/2, pi)`.
    pub theta: T,
    /// Linear path-loss power gain.
    pub rho: T,
}

/// Single-tier 7-cell layout: center BS at the origin plus six neighbors at
/// inter-site distance `sqrt(3) * r_cell`, at angles 0, 60, ..., 300 degrees.
pub fn build_hex_layout<T: Real>(r_cell: T, h_bs: T) -> Result<CellLayout<T>, GeometryError> {
    if r_cell <= T::zero() || h_bs <= T::zero() {
        return Err(GeometryError::InvalidParameter(format!(
            "r_cell and h_bs must be positive (got {}, {})",
            r_cell.as_f64(),
            h_bs.as_f64()
        )));
    }
    let isd = T::lit(3.0).sqrt() * r_cell;
    let mut bs_positions = vec![Vector2::new(T::zero(), T::zero())];
    for i in 0..6 {
        let ang = T::lit(std::f64::consts::FRAC_PI_3) * T::of_usize(i);
        bs_positions.push(Vector2::new(isd * ang.cos(), isd * ang.sin()));
    }
    Ok(CellLayout {
        bs_positions,
        r_cell,
        h_bs,
    })
}

/// Single-cell layout used by the clean-pipeline tests.
pub fn build_single_cell<T: Real>(r_cell: T, h_bs: T) -> Result<CellLayout<T>, GeometryError> {
    let mut layout = build_hex_layout(r_cell, h_bs)?;
    layout.bs_positions.truncate(1);
    Ok(layout)
}

/// Uniform rejection sampling of `pool_per_cell` users inside every cell's
/// hexagon, excluding the disc of radius `d_min` around the serving BS.
pub fn drop_users<T: Real, R: Rng>(
    layout: &CellLayout<T>,
    pool_per_cell: usize,
    d_min: T,
    rng: &mut R,
) -> Vec<UserPlacement<T>> {
    let mut users = Vec::with_capacity(pool_per_cell * layout.cells());
    let r = layout.r_cell;
    for cell in 0..layout.cells() {
        let center = layout.bs_positions[cell];
        let mut placed = 0;
        while placed < pool_per_cell {
            let x = T::lit(rng.random::<f64>() * 2.0 - 1.0) * r;
            let y = T::lit(rng.random::<f64>() * 2.0 - 1.0) * r;
            let p = Vector2::new(center.x + x, center.y + y);
            let dist = (p - center).norm();
            if dist >= d_min && layout.in_hexagon(cell, &p) {
                users.push(UserPlacement {
                    cell_index: cell,
                    xy: p,
                });
                placed += 1;
            }
        }
    }
    users
}

/// Geometry of the link from a BS at height `h_bs` to a ground-plane user.
///
/// Path loss uses the 3D distance: `rho = (max(d3, d_ref)/d_ref)^(-pl_exponent)`.
pub fn link_geometry<T: Real>(
    bs: &Vector2<T>,
    h_bs: T,
    user: &Vector2<T>,
    pl_exponent: T,
    d_ref: T,
) -> Result<LinkGeometry<T>, GeometryError> {
    let rel = user - bs;
    let d = rel.norm();
    if d <= T::zero() {
        return Err(GeometryError::DegenerateGeometry);
    }
    let phi = rel.y.atan2(rel.x);
    let theta = T::lit(std::f64::consts::FRAC_PI_2) + (h_bs / d).atan();
    let d3 = (d * d + h_bs * h_bs).sqrt();
    let rho = (d3.max(d_ref) / d_ref).powf(-pl_exponent);
    Ok(LinkGeometry { d, phi, theta, rho })
}

/// Largest BS-user distance for which the elevation null-space filter
/// provably does not block the user's own subspace:
/// `h_bs * tan(atan(r_cell / h_bs) - 2 delta_e)`.
pub fn d_max<T: Real>(h_bs: T, r_cell: T, delta_e: T) -> Result<T, GeometryError> {
    let edge = (r_cell / h_bs).atan();
    let two = T::lit(2.0);
    if two * delta_e >= edge {
        return Err(GeometryError::InvalidParameter(format!(
            "2*delta_e = {} must stay below atan(r_cell/h_bs) = {}",
            (two * delta_e).as_f64(),
            edge.as_f64()
        )));
    }
    Ok(h_bs * (edge - two * delta_e).tan())
}

/// One-ring angular spread for a scatterer ring of the given radius seen at
/// distance `d`: `atan(ring_radius / d)`.
pub fn ring_spread<T: Real>(ring_radius: T, d: T) -> T {
    (ring_radius / d).atan()
}

/// Circular distance between two azimuth angles.
pub fn azimuth_distance<T: Real>(a: T, b: T) -> T {
    let two_pi = T::two_pi();
    let mut d = (a - b).abs() % two_pi;
    if d > T::pi() {
        d = two_pi - d;
    }
    d
}

/// True when two links keep either an azimuth separation of `2*delta_a`
/// (circular) or an elevation separation of `2*delta_e`.
pub fn angular_separation_ok<T: Real>(
    a: &LinkGeometry<T>,
    b: &LinkGeometry<T>,
    delta_a: T,
    delta_e: T,
) -> bool {
    let two = T::lit(2.0);
    azimuth_distance(a.phi, b.phi) >= two * delta_a || (a.theta - b.theta).abs() >= two * delta_e
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    #[test]
    fn hex_layout_basics() {
        let layout = build_hex_layout(100.0f64, 35.0).unwrap();
        assert_eq!(layout.cells(), 7);
        assert_eq!(layout.bs_positions[0], Vector2::new(0.0, 0.0));
        for i in 1..7 {
            let d = layout.bs_positions[i].norm();
            assert!((d - 173.205_080_756_887_7).abs() < 1e-9, "site {i} at {d}");
        }
    }

    #[test]
    fn hex_layout_rejects_bad_params() {
        assert!(build_hex_layout(-1.0, 35.0).is_err());
        assert!(build_hex_layout(100.0, 0.0).is_err());
    }

    #[test]
    fn neighbor_hexagons_tile_without_overlap() {
        let layout = build_hex_layout::<f64>(100.0, 35.0).unwrap();
        // Midpoint towards a neighbor sits on the shared edge; nudge either
        // way and exactly one hexagon claims it.
        let mid = layout.bs_positions[1] * 0.5;
        let inward = mid * 0.999;
        let outward = mid * 1.001;
        assert!(layout.in_hexagon(0, &inward));
        assert!(!layout.in_hexagon(1, &inward));
        assert!(!layout.in_hexagon(0, &outward));
        assert!(layout.in_hexagon(1, &outward));
    }

    #[test]
    fn drop_users_counts_and_membership() {
        let layout = build_hex_layout(100.0, 35.0).unwrap();
        let mut rng = StdRng::seed_from_u64(42);
        let users = drop_users(&layout, 20, 10.0, &mut rng);
        assert_eq!(users.len(), 140);
        for u in &users {
            assert!(layout.in_hexagon(u.cell_index, &u.xy));
            let d = (u.xy - layout.bs_positions[u.cell_index]).norm();
            assert!(d >= 10.0);
        }
    }

    #[test]
    fn drop_users_respects_exclusion_radius() {
        let layout = build_single_cell(50.0, 35.0).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        let users = drop_users(&layout, 10_000, 10.0, &mut rng);
        let min = users
            .iter()
            .map(|u| u.xy.norm())
            .fold(f64::INFINITY, f64::min);
        assert!(min >= 10.0);
    }

    #[test]
    fn drop_users_deterministic() {
        let layout = build_hex_layout(100.0, 35.0).unwrap();
        let a = drop_users(&layout, 5, 10.0, &mut StdRng::seed_from_u64(9));
        let b = drop_users(&layout, 5, 10.0, &mut StdRng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn drop_users_sextant_density() {
        // Split the hexagon into 6 congruent triangles by vertex cuts; each
        // should get 1/6 of the samples within 3-sigma binomial tolerance.
        let layout = build_single_cell(100.0f64, 35.0).unwrap();
        let mut rng = StdRng::seed_from_u64(123);
        let n = 100_000;
        let users = drop_users(&layout, n, 0.0, &mut rng);
        let mut counts = [0usize; 6];
        for u in &users {
            // vertices at 30 + 60k degrees; sextant boundaries there too
            let ang = u.xy.y.atan2(u.xy.x).rem_euclid(2.0 * PI);
            let idx = ((ang - deg(30.0)).rem_euclid(2.0 * PI) / deg(60.0)) as usize % 6;
            counts[idx] += 1;
        }
        let p = 1.0 / 6.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (i, c) in counts.iter().enumerate() {
            let dev = (*c as f64 - n as f64 * p).abs();
            assert!(dev < 3.0 * sigma, "sextant {i}: count {c}, dev {dev}");
        }
    }

    #[test]
    fn link_geometry_angles() {
        let bs = Vector2::new(0.0, 0.0);
        let g = link_geometry(&bs, 35.0, &Vector2::new(35.0, 0.0), 3.5, 1.0).unwrap();
        assert!((g.theta - (FRAC_PI_2 + FRAC_PI_4)).abs() < 1e-12);
        assert!((g.phi - 0.0).abs() < 1e-12);

        let g = link_geometry(&bs, 35.0, &Vector2::new(350.0, 0.0), 3.5, 1.0).unwrap();
        assert!((g.theta - (FRAC_PI_2 + 0.1f64.atan())).abs() < 1e-12);
    }

    #[test]
    fn link_geometry_path_loss() {
        // horizontal distance sqrt(2^2 - h^2) with h chosen so d3 = 2*d_ref
        let bs = Vector2::new(0.0, 0.0);
        let h: f64 = 1.2;
        let d = (4.0f64 - h * h).sqrt();
        let g = link_geometry(&bs, h, &Vector2::new(d, 0.0), 3.5, 1.0).unwrap();
        let expect = 2.0f64.powf(-3.5);
        assert!((g.rho - expect).abs() < 1e-12);
        assert!((expect - 0.0884).abs() < 1e-4);
    }

    #[test]
    fn link_geometry_degenerate() {
        let bs = Vector2::new(1.0, 2.0);
        assert_eq!(
            link_geometry(&bs, 35.0, &Vector2::new(1.0, 2.0), 3.5, 1.0),
            Err(GeometryError::DegenerateGeometry)
        );
    }

    #[test]
    fn theta_decreases_with_distance() {
        let bs = Vector2::new(0.0, 0.0);
        let mut last = PI;
        for d in [5.0, 20.0, 50.0, 200.0, 5000.0] {
            let g = link_geometry(&bs, 35.0, &Vector2::new(d, 0.0), 3.5, 1.0).unwrap();
            assert!(g.theta < last);
            assert!(g.theta > FRAC_PI_2 && g.theta < PI);
            last = g.theta;
        }
    }

    #[test]
    fn rho_decreases_beyond_reference() {
        let bs = Vector2::new(0.0, 0.0);
        let mut last = f64::INFINITY;
        for d in [5.0, 10.0, 40.0, 90.0, 400.0] {
            let g = link_geometry(&bs, 35.0, &Vector2::new(d, 0.0), 3.5, 1.0).unwrap();
            assert!(g.rho < last);
            last = g.rho;
        }
    }

    #[test]
    fn d_max_values() {
        let d = d_max(50.0, 100.0, deg(3.0)).unwrap();
        assert!((d - 78.29).abs() < 0.05, "d_max = {d}");
        let d = d_max(35.0, 100.0, deg(3.0)).unwrap();
        assert!((d - 74.11).abs() < 0.05, "d_max = {d}");
    }

    #[test]
    fn d_max_zero_spread_recovers_cell_radius() {
        for (h, r) in [(35.0f64, 100.0), (50.0, 200.0), (10.0, 77.0)] {
            let d = d_max(h, r, 0.0).unwrap();
            assert!((d - r).abs() < 1e-9);
        }
    }

    #[test]
    fn d_max_precondition() {
        // atan(r/h) small against 2*delta_e
        assert!(d_max(100.0, 1.0, deg(3.0)).is_err());
    }

    #[test]
    fn ring_spread_values() {
        assert!((ring_spread(30.0, 30.0) - FRAC_PI_4).abs() < 1e-12);
        assert_eq!(ring_spread(0.0, 10.0), 0.0);
        let s = ring_spread(5.0f64, 57.29);
        assert!((s - 0.0872).abs() < 5e-4);
    }

    #[test]
    fn separation_cases() {
        let mk = |phi: f64, theta: f64| LinkGeometry {
            d: 50.0,
            phi,
            theta,
            rho: 1.0,
        };
        let da = deg(5.0);
        let de = deg(3.0);
        // azimuth gap 20 deg passes with delta_a = 5 deg
        assert!(angular_separation_ok(
            &mk(0.0, 2.0),
            &mk(deg(20.0), 2.0),
            da,
            de
        ));
        // azimuth gap 5, elevation gap 1: neither branch
        assert!(!angular_separation_ok(
            &mk(0.0, 2.0),
            &mk(deg(5.0), 2.0 + deg(1.0)),
            da,
            de
        ));
        // elevation gap 7 passes with delta_e = 3
        assert!(angular_separation_ok(
            &mk(0.0, 2.0),
            &mk(deg(5.0), 2.0 + deg(7.0)),
            da,
            de
        ));
    }

    #[test]
    fn azimuth_wraps_around() {
        let a = PI - deg(1.0);
        let b = -PI + deg(1.0);
        assert!((azimuth_distance(a, b) - deg(2.0)).abs() < 1e-12);
    }
}
