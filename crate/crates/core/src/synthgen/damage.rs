//! Per-image damage configuration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::labels::{DamageLabels, Phase};
use crate::seed;
use crate::{Error, Result};

/// Frame bend magnitude range in frame-space units.
pub const BEND_RANGE: (f64, f64) = (0.03, 0.07);
/// Parameter range along a tube where bends and cuts are placed.
pub const SITE_RANGE: (f64, f64) = (0.3, 0.7);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dirt {
    None,
    Mud,
    Rust,
}

/// Probabilities driving [`sample_damage`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DamageProbabilities {
    /// Dirt or rust on a "before" image.
    pub before_dirt: f64,
    /// Dirt or rust on an "after" image.
    pub after_dirt: f64,
    /// Any frame damage on an "after" image.
    pub after_frame: f64,
    /// Conditional shares of (bent only, broken only, bent and broken) given frame damage.
    pub frame_split: [f64; 3],
    /// Per removable part on an "after" image: removed.
    pub part_removed: f64,
    /// Per removable part on an "after" image: deformed (never together with removed).
    pub part_deformed: f64,
    /// Share of dirty images that show rust rather than mud.
    pub rust_share: f64,
}

impl Default for DamageProbabilities {
    fn default() -> Self {
        Self {
            before_dirt: 0.20,
            after_dirt: 0.50,
            after_frame: 0.75,
            frame_split: [1.0 / 3.0; 3],
            part_removed: 0.25,
            part_deformed: 0.25,
            rust_share: 0.5,
        }
    }
}

impl DamageProbabilities {
    /// Everything zero: "after" images come out undamaged and clean.
    pub fn none() -> Self {
        Self {
            before_dirt: 0.0,
            after_dirt: 0.0,
            after_frame: 0.0,
            frame_split: [1.0 / 3.0; 3],
            part_removed: 0.0,
            part_deformed: 0.0,
            rust_share: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields: [(&'static str, f64); 9] = [
            ("before_dirt", self.before_dirt),
            ("after_dirt", self.after_dirt),
            ("after_frame", self.after_frame),
            ("frame_split[0]", self.frame_split[0]),
            ("frame_split[1]", self.frame_split[1]),
            ("frame_split[2]", self.frame_split[2]),
            ("part_removed", self.part_removed),
            ("part_deformed", self.part_deformed),
            ("rust_share", self.rust_share),
        ];
        for (name, value) in fields {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Probability { name, value });
            }
        }
        if self.part_removed + self.part_deformed > 1.0 + 1e-12 {
            return Err(Error::config(
                "part_removed + part_deformed must not exceed 1",
            ));
        }
        let split: f64 = self.frame_split.iter().sum();
        if (split - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("frame_split must sum to 1, sums to {split}")));
        }
        Ok(())
    }

    /// Marginal probability that an "after" image has a bent frame.
    pub fn p_bent(&self) -> f64 {
        self.after_frame * (self.frame_split[0] + self.frame_split[2])
    }

    pub fn p_broken(&self) -> f64 {
        self.after_frame * (self.frame_split[1] + self.frame_split[2])
    }
}

/// Location on a tube. `tube` indexes the model's breakable tubes (taken modulo
/// their count) so a damage state can be sampled without knowing the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeSite {
    pub tube: usize,
    pub position: f64,
    /// +1 or -1: side of the tube the bend pushes towards.
    pub direction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelDeform {
    /// Minor/major axis ratio of the warped rim.
    pub aspect: f64,
    /// Orientation of the major axis, radians.
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageState {
    pub phase: Phase,
    pub bent: bool,
    pub broken: bool,
    /// Ordered (front_wheel, rear_wheel, seat, handlebar, pedals).
    pub missing: [bool; 5],
    pub deformed: [bool; 5],
    /// Rim warps for (front, rear) when the wheel is deformed.
    pub wheel_deform: [Option<WheelDeform>; 2],
    /// Extra rotation (radians) applied to deformed seat, handlebar or crank.
    pub part_twist: [f64; 5],
    pub dirt: Dirt,
    pub bend_magnitude: f64,
    pub bend_site: Option<TubeSite>,
    pub break_site: Option<TubeSite>,
}

impl DamageState {
    pub fn pristine(phase: Phase) -> Self {
        Self {
            phase,
            bent: false,
            broken: false,
            missing: [false; 5],
            deformed: [false; 5],
            wheel_deform: [None, None],
            part_twist: [0.0; 5],
            dirt: Dirt::None,
            bend_magnitude: 0.0,
            bend_site: None,
            break_site: None,
        }
    }

    pub fn labels(&self) -> DamageLabels {
        DamageLabels {
            bent: self.bent,
            broken: self.broken,
            missing: self.missing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..5 {
            if self.missing[i] && self.deformed[i] {
                return Err(Error::contract(format!("part {i} is both missing and deformed")));
            }
        }
        if (self.bent || self.broken) && self.phase != Phase::After {
            return Err(Error::contract("frame damage on a non-after image"));
        }
        if self.bent != (self.bend_magnitude > 0.0) {
            return Err(Error::contract("bend_magnitude > 0 must coincide with bent"));
        }
        if self.bent != self.bend_site.is_some() || self.broken != self.break_site.is_some() {
            return Err(Error::contract("damage sites disagree with flags"));
        }
        Ok(())
    }
}

fn tube_site(rng: &mut impl Rng) -> TubeSite {
    TubeSite {
        tube: rng.random_range(0..64),
        position: rng.random_range(SITE_RANGE.0..SITE_RANGE.1),
        direction: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
    }
}

/// Draw a damage state for one image.
pub fn sample_damage(phase: Phase, seed: u64, probs: &DamageProbabilities) -> Result<DamageState> {
    probs.validate()?;
    let mut rng = seed::derived_rng(seed, &[b"damage"]);
    let mut state = DamageState::pristine(phase);
    let dirty = match phase {
        Phase::Before => rng.random::<f64>() < probs.before_dirt,
        Phase::After => rng.random::<f64>() < probs.after_dirt,
        Phase::NotApplicable => {
            return Err(Error::config("damage can only be sampled for before/after phases"))
        }
    };
    let rusty = rng.random::<f64>() < probs.rust_share;
    if dirty {
        state.dirt = if rusty { Dirt::Rust } else { Dirt::Mud };
    }
    if phase == Phase::Before {
        return Ok(state);
    }

    // Draws below are consumed unconditionally so each field keeps its own
    // position in the stream regardless of earlier outcomes.
    let frame_u: f64 = rng.random();
    let split_u: f64 = rng.random();
    let bend_magnitude = rng.random_range(BEND_RANGE.0..BEND_RANGE.1);
    let bend_site = tube_site(&mut rng);
    let break_site = tube_site(&mut rng);
    if frame_u < probs.after_frame {
        let [bent_only, broken_only, _] = probs.frame_split;
        let (bent, broken) = if split_u < bent_only {
            (true, false)
        } else if split_u < bent_only + broken_only {
            (false, true)
        } else {
            (true, true)
        };
        state.bent = bent;
        state.broken = broken;
    }
    if state.bent {
        state.bend_magnitude = bend_magnitude;
        state.bend_site = Some(bend_site);
    }
    if state.broken {
        state.break_site = Some(break_site);
    }

    for i in 0..5 {
        let u: f64 = rng.random();
        let aspect = rng.random_range(0.62..0.85);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let twist = rng.random_range(0.5..1.2) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        if u < probs.part_removed {
            state.missing[i] = true;
        } else if u < probs.part_removed + probs.part_deformed {
            state.deformed[i] = true;
            if i < 2 {
                state.wheel_deform[i] = Some(WheelDeform { aspect, angle });
            } else {
                state.part_twist[i] = twist;
            }
        }
    }
    Ok(state)
}
