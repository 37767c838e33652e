//! Network geometry and system-level parameters.
//!
//! Cells are regular hexagons on a hexagonal lattice, enumerated in a
//! spiral: cell 0 at the origin, then ring 1 counterclockwise from bearing
//! 0°, then ring 2, and so on. Neighbouring centres are `√3·cell_radius`
//! apart, so `cell_radius` is the hexagon circumradius.
//!
//! Inside each cell the default layout puts array `n` at bearing `2πn/N` on
//! the array ring and user `i` at bearing `2πi/K` on the user ring. Every
//! array's broadside points at its own cell centre.

mod config;

pub use config::{GeometrySection, PositionsSection, PropagationSection, ScenarioConfig, SystemSection};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const INSIDE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn polar(center: Point, radius: f64, angle: f64) -> Self {
        Self::new(center.x + radius * angle.cos(), center.y + radius * angle.sin())
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Counts that size the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// L
    pub cells: usize,
    /// K; also the pilot length, since pilots are orthogonal within a cell.
    pub users_per_cell: usize,
    /// N
    pub arrays_per_cell: usize,
    /// M
    pub antennas_per_array: usize,
}

/// Scalars of the transmission model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkScalars {
    /// τ_c, samples per coherence interval.
    pub coherence_samples: usize,
    /// ρ_tr = ρ_p·τ_p, normalized total pilot power.
    pub rho_tr: f64,
    /// Downlink noise variance σ².
    pub sigma2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub array_ring_radius: f64,
    pub user_ring_radius: f64,
    /// Hexagon circumradius.
    pub cell_radius: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            array_ring_radius: 300.0,
            user_ring_radius: 700.0,
            cell_radius: 1000.0,
        }
    }
}

impl GeometryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.array_ring_radius > 0.0 && self.array_ring_radius.is_finite()) {
            return Err(invalid("geometry.array_ring_radius", "must be positive"));
        }
        if !(self.user_ring_radius > self.array_ring_radius && self.user_ring_radius.is_finite()) {
            return Err(invalid(
                "geometry.user_ring_radius",
                "must exceed array_ring_radius",
            ));
        }
        if !(self.cell_radius > 0.0 && self.cell_radius.is_finite()) {
            return Err(invalid("geometry.cell_radius", "must be positive"));
        }
        if self.user_ring_radius > inradius(self.cell_radius) + INSIDE_TOL {
            return Err(invalid(
                "geometry.user_ring_radius",
                format!(
                    "ring of radius {} leaves a hexagon of inradius {:.3}",
                    self.user_ring_radius,
                    inradius(self.cell_radius)
                ),
            ));
        }
        Ok(())
    }
}

fn inradius(cell_radius: f64) -> f64 {
    cell_radius * 3f64.sqrt() / 2.0
}

impl Dimensions {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("system.cells", self.cells),
            ("system.users_per_cell", self.users_per_cell),
            ("system.arrays_per_cell", self.arrays_per_cell),
            ("system.antennas_per_array", self.antennas_per_array),
        ] {
            if value == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        Ok(())
    }
}

impl LinkScalars {
    pub fn validate(&self, users_per_cell: usize) -> Result<()> {
        if self.coherence_samples <= users_per_cell {
            return Err(invalid(
                "system.coherence_samples",
                format!("must exceed the pilot length {users_per_cell}"),
            ));
        }
        if !(self.rho_tr > 0.0 && self.rho_tr.is_finite()) {
            return Err(invalid("system.rho_tr", "must be positive"));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(invalid("system.sigma2", "must be positive"));
        }
        Ok(())
    }
}

/// Immutable description of the network: dimensions, scalars and every
/// array and user position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkScenario {
    dims: Dimensions,
    link: LinkScalars,
    cell_radius: f64,
    cell_centers: Vec<Point>,
    array_positions: Vec<Vec<Point>>,
    user_positions: Vec<Vec<Point>>,
}

/// Centres of the first `cells` hexagons of the spiral enumeration.
pub fn hex_cell_centers(cells: usize, cell_radius: f64) -> Vec<Point> {
    let spacing = 3f64.sqrt() * cell_radius;
    let to_point = |q: i64, r: i64| {
        Point::new(
            spacing * (q as f64 + 0.5 * r as f64),
            spacing * (3f64.sqrt() / 2.0) * r as f64,
        )
    };
    let mut centers = vec![Point::new(0.0, 0.0)];
    let mut ring = 1i64;
    while centers.len() < cells {
        let mut members: Vec<(f64, Point)> = Vec::with_capacity(6 * ring as usize);
        for q in -ring..=ring {
            for r in -ring..=ring {
                let s = -q - r;
                if q.abs().max(r.abs()).max(s.abs()) == ring {
                    let p = to_point(q, r);
                    members.push((p.y.atan2(p.x).rem_euclid(2.0 * PI), p));
                }
            }
        }
        members.sort_by(|a, b| a.0.total_cmp(&b.0));
        centers.extend(members.into_iter().map(|(_, p)| p));
        ring += 1;
    }
    centers.truncate(cells);
    centers
}

fn inside_hexagon(point: Point, center: Point, cell_radius: f64) -> bool {
    let dx = point.x - center.x;
    let dy = point.y - center.y;
    let limit = inradius(cell_radius) + INSIDE_TOL * cell_radius.max(1.0);
    (0..6).all(|k| {
        let a = k as f64 * PI / 3.0;
        dx * a.cos() + dy * a.sin() <= limit
    })
}

/// Lays out the network with arrays and users equally spaced on two rings
/// around every cell centre. Deterministic.
pub fn build_reference_network(
    geometry: &GeometryParams,
    dims: Dimensions,
    link: LinkScalars,
) -> Result<NetworkScenario> {
    geometry.validate()?;
    dims.validate()?;
    let centers = hex_cell_centers(dims.cells, geometry.cell_radius);
    let ring = |center: Point, radius: f64, count: usize| -> Vec<Point> {
        (0..count)
            .map(|idx| Point::polar(center, radius, 2.0 * PI * idx as f64 / count as f64))
            .collect()
    };
    let arrays = centers
        .iter()
        .map(|&c| ring(c, geometry.array_ring_radius, dims.arrays_per_cell))
        .collect();
    let users = centers
        .iter()
        .map(|&c| ring(c, geometry.user_ring_radius, dims.users_per_cell))
        .collect();
    NetworkScenario::from_positions(dims, link, geometry.cell_radius, centers, arrays, users)
}

/// Places every array and user uniformly at random inside its own cell,
/// keeping users at least `min_distance` from every array in the network.
pub fn build_random_network(
    cell_radius: f64,
    dims: Dimensions,
    link: LinkScalars,
    min_distance: f64,
    seed: u64,
) -> Result<NetworkScenario> {
    use rand::Rng;

    dims.validate()?;
    if !(cell_radius > 0.0 && cell_radius.is_finite()) {
        return Err(invalid("geometry.cell_radius", "must be positive"));
    }
    if !(min_distance >= 0.0 && min_distance < 0.5 * inradius(cell_radius)) {
        return Err(invalid("min_distance", "must lie in [0, inradius/2)"));
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    let centers = hex_cell_centers(dims.cells, cell_radius);
    let draw = |center: Point, rng: &mut crate::rng::SimRng| loop {
        let p = Point::new(
            center.x + rng.random_range(-cell_radius..cell_radius),
            center.y + rng.random_range(-cell_radius..cell_radius),
        );
        if inside_hexagon(p, center, cell_radius) {
            return p;
        }
    };
    let arrays: Vec<Vec<Point>> = centers
        .iter()
        .map(|&c| (0..dims.arrays_per_cell).map(|_| draw(c, &mut rng)).collect())
        .collect();
    let users = centers
        .iter()
        .map(|&c| {
            (0..dims.users_per_cell)
                .map(|_| loop {
                    let u = draw(c, &mut rng);
                    if arrays.iter().flatten().all(|a| a.distance(u) >= min_distance) {
                        return u;
                    }
                })
                .collect()
        })
        .collect();
    NetworkScenario::from_positions(dims, link, cell_radius, centers, arrays, users)
}

impl NetworkScenario {
    /// Builds a scenario from explicit positions, checking every invariant.
    pub fn from_positions(
        dims: Dimensions,
        link: LinkScalars,
        cell_radius: f64,
        cell_centers: Vec<Point>,
        array_positions: Vec<Vec<Point>>,
        user_positions: Vec<Vec<Point>>,
    ) -> Result<Self> {
        dims.validate()?;
        link.validate(dims.users_per_cell)?;
        if !(cell_radius > 0.0 && cell_radius.is_finite()) {
            return Err(invalid("geometry.cell_radius", "must be positive"));
        }
        if cell_centers.len() != dims.cells {
            return Err(invalid("cell_centers", format!("expected {} entries", dims.cells)));
        }
        check_layout("positions.arrays", &array_positions, dims.cells, dims.arrays_per_cell)?;
        check_layout("positions.users", &user_positions, dims.cells, dims.users_per_cell)?;
        for (cell, center) in cell_centers.iter().enumerate() {
            for (what, pts) in [
                ("positions.arrays", &array_positions[cell]),
                ("positions.users", &user_positions[cell]),
            ] {
                if let Some(idx) = pts.iter().position(|&p| !inside_hexagon(p, *center, cell_radius)) {
                    return Err(invalid(
                        what,
                        format!("entry [{cell}][{idx}] lies outside cell {cell}"),
                    ));
                }
            }
        }
        for (cell, arrays) in array_positions.iter().enumerate() {
            for (n, a) in arrays.iter().enumerate() {
                for users in &user_positions {
                    if users.iter().any(|u| u.distance(*a) == 0.0) {
                        return Err(invalid(
                            "positions.users",
                            format!("a user coincides with array [{cell}][{n}]"),
                        ));
                    }
                }
            }
        }
        Ok(Self {
            dims,
            link,
            cell_radius,
            cell_centers,
            array_positions,
            user_positions,
        })
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn link(&self) -> LinkScalars {
        self.link
    }

    pub fn cells(&self) -> usize {
        self.dims.cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.dims.users_per_cell
    }

    pub fn arrays_per_cell(&self) -> usize {
        self.dims.arrays_per_cell
    }

    pub fn antennas(&self) -> usize {
        self.dims.antennas_per_array
    }

    /// τ_p, always equal to K.
    pub fn pilot_length(&self) -> usize {
        self.dims.users_per_cell
    }

    pub fn coherence_samples(&self) -> usize {
        self.link.coherence_samples
    }

    pub fn rho_tr(&self) -> f64 {
        self.link.rho_tr
    }

    pub fn sigma2(&self) -> f64 {
        self.link.sigma2
    }

    pub fn cell_radius(&self) -> f64 {
        self.cell_radius
    }

    pub fn cell_centers(&self) -> &[Point] {
        &self.cell_centers
    }

    pub fn array_positions(&self) -> &[Vec<Point>] {
        &self.array_positions
    }

    pub fn user_positions(&self) -> &[Vec<Point>] {
        &self.user_positions
    }

    /// Same scenario with a different number of antennas per array.
    pub fn with_antennas(&self, antennas: usize) -> Result<Self> {
        if antennas == 0 {
            return Err(invalid("system.antennas_per_array", "must be at least 1"));
        }
        let mut out = self.clone();
        out.dims.antennas_per_array = antennas;
        Ok(out)
    }

    /// Keeps only the first `arrays` arrays of every cell (activation order
    /// is the stored order).
    pub fn truncate_arrays(&self, arrays: usize) -> Result<Self> {
        if arrays == 0 || arrays > self.dims.arrays_per_cell {
            return Err(invalid(
                "system.arrays_per_cell",
                format!("cannot activate {arrays} of {} arrays", self.dims.arrays_per_cell),
            ));
        }
        let mut out = self.clone();
        out.dims.arrays_per_cell = arrays;
        for cell in &mut out.array_positions {
            cell.truncate(arrays);
        }
        Ok(out)
    }

    /// Unit vector along the broadside of array `(cell, array)`: towards the
    /// cell centre, or +y when the array sits exactly on the centre.
    pub fn broadside(&self, cell: usize, array: usize) -> Result<(f64, f64)> {
        self.check_array(cell, array)?;
        let a = self.array_positions[cell][array];
        let c = self.cell_centers[cell];
        let (dx, dy) = (c.x - a.x, c.y - a.y);
        let norm = dx.hypot(dy);
        if norm == 0.0 {
            Ok((0.0, 1.0))
        } else {
            Ok((dx / norm, dy / norm))
        }
    }

    /// Distance (m) and azimuth (rad) from array `(array_cell, array)` to
    /// user `(user_cell, user)`.
    ///
    /// The azimuth is the counterclockwise angle from the array broadside to
    /// the direction of the user, wrapped to (−π, π].
    pub fn geometry_of(
        &self,
        array_cell: usize,
        array: usize,
        user_cell: usize,
        user: usize,
    ) -> Result<(f64, f64)> {
        self.check_array(array_cell, array)?;
        self.check_user(user_cell, user)?;
        let a = self.array_positions[array_cell][array];
        let u = self.user_positions[user_cell][user];
        let (bx, by) = self.broadside(array_cell, array)?;
        let (dx, dy) = (u.x - a.x, u.y - a.y);
        let mut azimuth = (bx * dy - by * dx).atan2(bx * dx + by * dy);
        if azimuth <= -PI {
            azimuth += 2.0 * PI;
        }
        Ok((dx.hypot(dy), azimuth))
    }

    fn check_array(&self, cell: usize, array: usize) -> Result<()> {
        if cell >= self.dims.cells {
            return Err(Error::IndexOutOfRange { what: "cell", index: cell, limit: self.dims.cells });
        }
        if array >= self.dims.arrays_per_cell {
            return Err(Error::IndexOutOfRange {
                what: "array",
                index: array,
                limit: self.dims.arrays_per_cell,
            });
        }
        Ok(())
    }

    fn check_user(&self, cell: usize, user: usize) -> Result<()> {
        if cell >= self.dims.cells {
            return Err(Error::IndexOutOfRange { what: "cell", index: cell, limit: self.dims.cells });
        }
        if user >= self.dims.users_per_cell {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: user,
                limit: self.dims.users_per_cell,
            });
        }
        Ok(())
    }
}

fn check_layout(field: &str, layout: &[Vec<Point>], cells: usize, per_cell: usize) -> Result<()> {
    if layout.len() != cells || layout.iter().any(|c| c.len() != per_cell) {
        return Err(invalid(field, format!("expected {cells} cells of {per_cell} entries")));
    }
    if layout.iter().flatten().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(invalid(field, "non-finite coordinate"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link() -> LinkScalars {
        LinkScalars { coherence_samples: 200, rho_tr: 10.0, sigma2: 1.0 }
    }

    fn dims(cells: usize, users: usize, arrays: usize) -> Dimensions {
        Dimensions { cells, users_per_cell: users, arrays_per_cell: arrays, antennas_per_array: 4 }
    }

    #[test]
    fn reference_layout_counts() {
        let s = build_reference_network(&GeometryParams::default(), dims(7, 10, 4), link()).unwrap();
        assert_eq!(s.array_positions().iter().flatten().count(), 28);
        assert_eq!(s.user_positions().iter().flatten().count(), 70);
        for (cell, c) in s.cell_centers().iter().enumerate() {
            for a in &s.array_positions()[cell] {
                assert!((a.distance(*c) - 300.0).abs() < 1e-9);
            }
            for u in &s.user_positions()[cell] {
                assert!((u.distance(*c) - 700.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn first_ring_is_counterclockwise_from_zero() {
        let c = hex_cell_centers(7, 1000.0);
        let spacing = 3f64.sqrt() * 1000.0;
        for (k, p) in c.iter().enumerate().skip(1) {
            let expected = Point::polar(Point::new(0.0, 0.0), spacing, (k - 1) as f64 * PI / 3.0);
            assert!(p.distance(expected) < 1e-6, "cell {k}: {p:?}");
        }
        assert_eq!(hex_cell_centers(19, 1000.0).len(), 19);
    }

    #[test]
    fn single_cell_single_entities() {
        let s = build_reference_network(&GeometryParams::default(), dims(1, 1, 1), link()).unwrap();
        assert_eq!(s.array_positions()[0][0], Point::new(300.0, 0.0));
        assert_eq!(s.user_positions()[0][0], Point::new(700.0, 0.0));
    }

    #[test]
    fn four_arrays_at_quarter_turns() {
        let s = build_reference_network(&GeometryParams::default(), dims(1, 2, 4), link()).unwrap();
        for (n, a) in s.array_positions()[0].iter().enumerate() {
            let angle = a.y.atan2(a.x).rem_euclid(2.0 * PI);
            assert!((angle - n as f64 * PI / 2.0).abs() < 1e-12);
            assert!((a.distance(Point::new(0.0, 0.0)) - 300.0).abs() < 1e-9);
        }
    }

    fn origin_array(user: Point) -> NetworkScenario {
        NetworkScenario::from_positions(
            dims(1, 1, 1),
            link(),
            1000.0,
            vec![Point::new(0.0, 0.0)],
            vec![vec![Point::new(0.0, 0.0)]],
            vec![vec![user]],
        )
        .unwrap()
    }

    #[test]
    fn collinear_user_has_zero_azimuth() {
        let s = origin_array(Point::new(0.0, 700.0));
        let (d, az) = s.geometry_of(0, 0, 0, 0).unwrap();
        assert!((d - 700.0).abs() < 1e-12);
        assert!(az.abs() < 1e-15);
    }

    #[test]
    fn perpendicular_user_is_clockwise_negative() {
        let s = origin_array(Point::new(700.0, 0.0));
        let (d, az) = s.geometry_of(0, 0, 0, 0).unwrap();
        assert!((d - 700.0).abs() < 1e-12);
        assert!((az + PI / 2.0).abs() < 1e-15);
        let s = origin_array(Point::new(-700.0, 0.0));
        assert!((s.geometry_of(0, 0, 0, 0).unwrap().1 - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn azimuth_wraps_to_positive_pi() {
        let s = origin_array(Point::new(0.0, -700.0));
        assert_eq!(s.geometry_of(0, 0, 0, 0).unwrap().1, PI);
    }

    #[test]
    fn same_cell_distances_within_ring_bounds() {
        let s = build_reference_network(&GeometryParams::default(), dims(7, 10, 4), link()).unwrap();
        for cell in 0..7 {
            for n in 0..4 {
                for i in 0..10 {
                    let (d, az) = s.geometry_of(cell, n, cell, i).unwrap();
                    assert!((400.0 - 1e-9..=1000.0 + 1e-9).contains(&d), "{d}");
                    assert!(az > -PI && az <= PI);
                }
            }
        }
    }

    #[test]
    fn out_of_range_indices_rejected() {
        let s = build_reference_network(&GeometryParams::default(), dims(2, 2, 2), link()).unwrap();
        assert!(matches!(s.geometry_of(2, 0, 0, 0), Err(Error::IndexOutOfRange { what: "cell", .. })));
        assert!(matches!(s.geometry_of(0, 2, 0, 0), Err(Error::IndexOutOfRange { what: "array", .. })));
        assert!(matches!(s.geometry_of(0, 0, 0, 5), Err(Error::IndexOutOfRange { what: "user", .. })));
    }

    #[test]
    fn invalid_parameters_name_the_field() {
        let bad = GeometryParams { array_ring_radius: -1.0, ..Default::default() };
        let err = build_reference_network(&bad, dims(1, 1, 1), link()).unwrap_err();
        assert!(err.to_string().contains("geometry.array_ring_radius"));

        let err = build_reference_network(
            &GeometryParams::default(),
            dims(1, 10, 1),
            LinkScalars { coherence_samples: 10, ..link() },
        )
        .unwrap_err();
        assert!(err.to_string().contains("system.coherence_samples"));

        let outside = GeometryParams { user_ring_radius: 900.0, ..Default::default() };
        let err = build_reference_network(&outside, dims(1, 1, 1), link()).unwrap_err();
        assert!(err.to_string().contains("geometry.user_ring_radius"));
    }

    #[test]
    fn construction_is_deterministic() {
        let a = build_reference_network(&GeometryParams::default(), dims(7, 10, 4), link()).unwrap();
        let b = build_reference_network(&GeometryParams::default(), dims(7, 10, 4), link()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_keeps_leading_arrays() {
        let s = build_reference_network(&GeometryParams::default(), dims(7, 10, 4), link()).unwrap();
        let t = s.truncate_arrays(2).unwrap();
        assert_eq!(t.arrays_per_cell(), 2);
        assert_eq!(t.array_positions()[3][..], s.array_positions()[3][..2]);
        assert!(s.truncate_arrays(5).is_err());
    }
}
