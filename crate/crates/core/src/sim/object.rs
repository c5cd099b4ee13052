use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tactile::ContactState;

/// A grasped object as seen from the two gripper sites.
///
/// Openings above `slip_margin` lose the grasp; below `damage_margin` they
/// crush it. Incipient slip starts `onset_band` mm before the slip margin,
/// which is where a careful operator would label the slippage opening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub name: String,
    /// Undeformed width per site (mm).
    pub width: [f64; 2],
    /// Contact stiffness κ (N/mm).
    pub stiffness: f64,
    pub slip_margin: [f64; 2],
    pub damage_margin: [f64; 2],
    pub onset_band: f64,
    /// How strongly one site's grip reserve loads the other site.
    pub coupling: f64,
    /// Scales disturbance impulses.
    pub mass: f64,
    /// Peak-to-peak width drift (mm) and its period (s), for loose
    /// contents that shift over time.
    pub drift_amplitude: f64,
    pub drift_period: f64,
}

impl ObjectModel {
    pub fn validate(&self) -> Result<()> {
        for i in 0..2 {
            if !(self.damage_margin[i] < self.slip_margin[i] && self.slip_margin[i] <= self.width[i]) {
                return Err(Error::Config(format!(
                    "object `{}` site {}: need damage < slip <= width",
                    self.name,
                    i + 1
                )));
            }
        }
        if !(self.stiffness > 0.0) {
            return Err(Error::Config(format!("object `{}`: stiffness must be positive", self.name)));
        }
        if !(self.onset_band >= 0.0 && self.mass > 0.0 && self.drift_period > 0.0) {
            return Err(Error::Config(format!("object `{}`: bad band/mass/drift", self.name)));
        }
        Ok(())
    }

    /// Softer than the sensor gel in our units (κ below 1 N/mm).
    pub fn is_compliant(&self) -> bool {
        self.stiffness < 1.0
    }

    pub fn site_width(&self, site: usize, t: f64) -> f64 {
        if self.drift_amplitude == 0.0 {
            return self.width[site];
        }
        let phase = std::f64::consts::TAU * t / self.drift_period + site as f64 * 1.3;
        self.width[site] + 0.5 * self.drift_amplitude * phase.sin()
    }

    pub fn onset(&self, site: usize) -> f64 {
        self.slip_margin[site] - self.onset_band
    }

    /// The same object with both slip onsets moved to `onset`.
    pub fn with_onset(&self, onset: f64) -> Self {
        let mut out = self.clone();
        for i in 0..2 {
            out.slip_margin[i] = onset + self.onset_band;
            out.width[i] = out.width[i].max(out.slip_margin[i]);
        }
        out
    }

    /// Contact seen by each site at time `t`.
    pub fn contact(&self, openings: [f64; 2], t: f64) -> [ContactState; 2] {
        let reserve = [self.onset(0) - openings[0], self.onset(1) - openings[1]];
        std::array::from_fn(|i| {
            let depth = ((self.site_width(i, t) - openings[i]) / 2.0).max(0.0);
            let shear = if depth > 0.0 {
                reserve[i] + self.coupling * reserve[1 - i]
            } else {
                0.0
            };
            ContactState {
                depth,
                shear,
                material_stiffness: self.stiffness,
                slipping: openings[i] > self.slip_margin[i],
            }
        })
    }
}

fn object(
    name: &str,
    width: [f64; 2],
    stiffness: f64,
    slip: [f64; 2],
    damage: [f64; 2],
    onset_band: f64,
    coupling: f64,
) -> ObjectModel {
    ObjectModel {
        name: name.to_string(),
        width,
        stiffness,
        slip_margin: slip,
        damage_margin: damage,
        onset_band,
        coupling,
        mass: 1.0,
        drift_amplitude: 0.0,
        drift_period: 4.0,
    }
}

/// Five synthetic objects spanning stiff to soft and wide to narrow
/// margins.
pub fn object_menu() -> Vec<ObjectModel> {
    let mut bag = object(
        "granular_bag",
        [58.0, 56.5],
        0.4,
        [55.5, 54.0],
        [50.0, 48.5],
        0.6,
        0.45,
    );
    bag.drift_amplitude = 0.6;
    bag.mass = 1.4;
    let mut can = object(
        "crushable_can",
        [66.0, 66.0],
        1.2,
        [64.5, 64.5],
        [62.5, 62.5],
        0.6,
        0.3,
    );
    can.mass = 0.8;
    vec![
        object("rigid_tube", [40.0, 40.0], 6.0, [39.0, 39.0], [33.0, 33.0], 0.9, 0.1),
        object(
            "compliant_cylinder",
            [50.0, 48.0],
            0.7,
            [47.5, 45.5],
            [43.0, 41.0],
            0.6,
            0.4,
        ),
        can,
        object("stiff_pipe", [30.0, 31.0], 9.0, [29.2, 30.2], [25.0, 26.0], 0.8, 0.15),
        bag,
    ]
}

pub fn object_by_name(name: &str) -> Result<ObjectModel> {
    object_menu()
        .into_iter()
        .find(|o| o.name == name)
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "object",
            name: name.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn menu_is_valid() {
        let menu = object_menu();
        assert_eq!(menu.len(), 5);
        for o in &menu {
            o.validate().unwrap();
        }
        assert!(object_by_name("compliant_cylinder").is_ok());
        assert!(object_by_name("teapot").is_err());
    }

    #[test]
    fn contact_geometry() {
        let o = object_by_name("rigid_tube").unwrap();
        let c = o.contact([38.0, 41.0], 0.0);
        assert_eq!(c[0].depth, 1.0);
        assert_eq!(c[1].depth, 0.0);
        assert_eq!(c[1].shear, 0.0);
        assert!(!c[0].slipping && c[1].slipping);
        // own reserve 0.1, other −2.9 scaled by coupling
        assert!((c[0].shear - (0.1 + 0.1 * -2.9)).abs() < 1e-12);
    }
}
