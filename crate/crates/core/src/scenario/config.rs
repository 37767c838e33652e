//! TOML scenario files.
//!
//! ```toml
//! [system]
//! cells = 7
//! users_per_cell = 10
//! arrays_per_cell = 4
//! antennas_per_array = 20
//! coherence_samples = 200
//! rho_tr = 10.0
//! sigma2 = 1.0
//!
//! [geometry]
//! array_ring_radius = 300.0
//! user_ring_radius = 700.0
//! cell_radius = 1000.0
//!
//! [propagation]
//! angular_spread_deg = 10.0
//! antenna_spacing = 0.5
//! pathloss_exponent = 3.76
//! edge_snr_db = 0.0          # or: pathloss_ref_db = ...
//!
//! [positions]                # optional, overrides the ring layout
//! arrays = [[[300.0, 0.0]]]  # [cell][array] = [x, y]
//! users = [[[700.0, 0.0]]]
//! ```

use serde::{Deserialize, Serialize};

use super::{build_reference_network, hex_cell_centers, Dimensions, GeometryParams, LinkScalars, NetworkScenario, Point};
use crate::covariance::OneRingParams;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub propagation: PropagationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<PositionsSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub cells: usize,
    pub users_per_cell: usize,
    pub arrays_per_cell: usize,
    pub antennas_per_array: usize,
    /// Must equal `users_per_cell` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_length: Option<usize>,
    pub coherence_samples: usize,
    pub rho_tr: f64,
    pub sigma2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub array_ring_radius: f64,
    pub user_ring_radius: f64,
    pub cell_radius: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = GeometryParams::default();
        Self {
            array_ring_radius: g.array_ring_radius,
            user_ring_radius: g.user_ring_radius,
            cell_radius: g.cell_radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationSection {
    pub angular_spread_deg: f64,
    pub antenna_spacing: f64,
    pub pathloss_exponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathloss_ref_db: Option<f64>,
    /// `β(user_ring_radius) / σ²` in dB; used when `pathloss_ref_db` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_snr_db: Option<f64>,
}

impl Default for PropagationSection {
    fn default() -> Self {
        Self {
            angular_spread_deg: 10.0,
            antenna_spacing: 0.5,
            pathloss_exponent: 3.76,
            pathloss_ref_db: None,
            edge_snr_db: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionsSection {
    pub arrays: Vec<Vec<[f64; 2]>>,
    pub users: Vec<Vec<[f64; 2]>>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always serializable")
    }

    pub fn dimensions(&self) -> Dimensions {
        Dimensions {
            cells: self.system.cells,
            users_per_cell: self.system.users_per_cell,
            arrays_per_cell: self.system.arrays_per_cell,
            antennas_per_array: self.system.antennas_per_array,
        }
    }

    pub fn geometry(&self) -> GeometryParams {
        GeometryParams {
            array_ring_radius: self.geometry.array_ring_radius,
            user_ring_radius: self.geometry.user_ring_radius,
            cell_radius: self.geometry.cell_radius,
        }
    }

    pub fn link(&self) -> LinkScalars {
        LinkScalars {
            coherence_samples: self.system.coherence_samples,
            rho_tr: self.system.rho_tr,
            sigma2: self.system.sigma2,
        }
    }

    pub fn one_ring(&self) -> Result<OneRingParams> {
        let p = &self.propagation;
        if !(p.angular_spread_deg > 0.0 && p.angular_spread_deg <= 90.0) {
            return Err(invalid("propagation.angular_spread_deg", "must lie in (0, 90]"));
        }
        let params = match (p.pathloss_ref_db, p.edge_snr_db) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "propagation.edge_snr_db",
                    "give either pathloss_ref_db or edge_snr_db, not both",
                ))
            }
            (Some(ref_db), None) => OneRingParams {
                angular_spread: p.angular_spread_deg.to_radians(),
                antenna_spacing: p.antenna_spacing,
                pathloss_exponent: p.pathloss_exponent,
                pathloss_ref_db: ref_db,
            },
            (None, snr) => OneRingParams::with_edge_snr(
                snr.unwrap_or(0.0),
                self.geometry.user_ring_radius,
                self.system.sigma2,
                p.angular_spread_deg.to_radians(),
                p.antenna_spacing,
                p.pathloss_exponent,
            ),
        };
        params.validate()?;
        Ok(params)
    }

    /// Validates every field (first violation wins, reported by its dotted
    /// name) and builds the scenario and propagation parameters.
    pub fn build(&self) -> Result<(NetworkScenario, OneRingParams)> {
        let dims = self.dimensions();
        dims.validate()?;
        if let Some(tau_p) = self.system.pilot_length {
            if tau_p != dims.users_per_cell {
                return Err(invalid("system.pilot_length", "must equal users_per_cell"));
            }
        }
        let link = self.link();
        link.validate(dims.users_per_cell)?;
        let geometry = self.geometry();
        geometry.validate()?;
        let one_ring = self.one_ring()?;
        let scenario = match &self.positions {
            None => build_reference_network(&geometry, dims, link)?,
            Some(pos) => {
                let to_points = |v: &Vec<Vec<[f64; 2]>>| -> Vec<Vec<Point>> {
                    v.iter().map(|c| c.iter().map(|p| Point::new(p[0], p[1])).collect()).collect()
                };
                NetworkScenario::from_positions(
                    dims,
                    link,
                    geometry.cell_radius,
                    hex_cell_centers(dims.cells, geometry.cell_radius),
                    to_points(&pos.arrays),
                    to_points(&pos.users),
                )?
            }
        };
        Ok((scenario, one_ring))
    }
}
