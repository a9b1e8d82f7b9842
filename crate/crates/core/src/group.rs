//! Group representations acting on observation and action vectors.
//!
//! Three representations are used throughout the crate:
//!
//! * the trivial representation, which leaves any vector unchanged;
//! * the translational standard representation, `x ↦ x + g` on ℝ³;
//! * the rotational standard representation, which adds an angle to a
//!   scalar and rotates a 3-vector about the reference-frame z-axis.
//!
//! Angles are kept as raw radians. [`RotationAngle::canonical`] maps into
//! `[0, 2π)` on request and is never applied implicitly, so sums of many
//! small angle differences stay exact.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance for algebraic identities on single group elements.
pub const ALGEBRA_TOLERANCE: f64 = 1e-12;
/// Tolerance for simulator round trips (replay, reconstruction).
pub const SIMULATION_TOLERANCE: f64 = 1e-9;

/// Trivial representation: returns its input unchanged.
pub fn apply_trivial<T: Clone>(x: &[T]) -> Vec<T> {
    x.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RotationAngle(pub f64);

impl RotationAngle {
    pub const IDENTITY: RotationAngle = RotationAngle(0.0);

    pub fn new(theta: f64) -> Self {
        RotationAngle(theta)
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Equivalent angle in `[0, 2π)`.
    pub fn canonical(self) -> Self {
        let r = self.0.rem_euclid(TAU);
        // rem_euclid can round up to exactly TAU for tiny negative inputs
        RotationAngle(if r >= TAU { 0.0 } else { r })
    }

    /// The 3×3 matrix rotating about the z-axis.
    pub fn matrix(self) -> Matrix3<f64> {
        let (s, c) = self.0.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    /// Scalar form: `x + θ`.
    pub fn apply_scalar(self, x: f64) -> f64 {
        x + self.0
    }

    /// Vector form: `R_z(θ) v`.
    pub fn apply_vec3(self, v: &Vec3) -> Vec3 {
        self.matrix() * v
    }

    pub fn compose(self, other: RotationAngle) -> RotationAngle {
        RotationAngle(self.0 + other.0)
    }

    pub fn inverse(self) -> RotationAngle {
        RotationAngle(-self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Translation3(pub Vec3);

impl Translation3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Translation3(Vec3::new(x, y, z))
    }

    pub fn identity() -> Self {
        Translation3(Vec3::zeros())
    }

    pub fn offset(&self) -> &Vec3 {
        &self.0
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        x + self.0
    }

    pub fn compose(&self, other: &Translation3) -> Translation3 {
        Translation3(self.0 + other.0)
    }

    pub fn inverse(&self) -> Translation3 {
        Translation3(-self.0)
    }
}

/// A rotational or translational group element, for call sites that do not
/// know the kind statically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Representation {
    Rotation(RotationAngle),
    Translation(Translation3),
}

impl Representation {
    fn kind(&self) -> &'static str {
        match self {
            Representation::Rotation(_) => "rotation",
            Representation::Translation(_) => "translation",
        }
    }

    pub fn compose(&self, other: &Representation) -> Result<Representation> {
        match (self, other) {
            (Representation::Rotation(a), Representation::Rotation(b)) => {
                Ok(Representation::Rotation(a.compose(*b)))
            }
            (Representation::Translation(a), Representation::Translation(b)) => {
                Ok(Representation::Translation(a.compose(b)))
            }
            _ => Err(Error::IncompatibleGroupElements {
                left: self.kind(),
                right: other.kind(),
            }),
        }
    }

    pub fn invert(&self) -> Representation {
        match self {
            Representation::Rotation(a) => Representation::Rotation(a.inverse()),
            Representation::Translation(t) => Representation::Translation(t.inverse()),
        }
    }

    pub fn apply_vec3(&self, v: &Vec3) -> Vec3 {
        match self {
            Representation::Rotation(a) => a.apply_vec3(v),
            Representation::Translation(t) => t.apply(v),
        }
    }
}

/// Element of the cyclic group C4, stored as a quarter-turn count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct C4(u8);

impl C4 {
    pub const ALL: [C4; 4] = [C4(0), C4(1), C4(2), C4(3)];

    pub fn new(quarter_turns: u8) -> Option<Self> {
        (quarter_turns < 4).then_some(C4(quarter_turns))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn angle(self) -> RotationAngle {
        match self.0 {
            0 => RotationAngle(0.0),
            1 => RotationAngle(FRAC_PI_2),
            2 => RotationAngle(PI),
            _ => RotationAngle(3.0 * FRAC_PI_2),
        }
    }

    /// Exact integer rotation of an xy lattice direction.
    pub fn rotate_xy(self, x: i8, y: i8) -> (i8, i8) {
        match self.0 {
            0 => (x, y),
            1 => (-y, x),
            2 => (-x, -y),
            _ => (y, -x),
        }
    }
}

impl TryFrom<u8> for C4 {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        C4::new(v).ok_or_else(|| format!("C4 index {v} out of range 0..4"))
    }
}

impl From<C4> for u8 {
    fn from(c: C4) -> u8 {
        c.0
    }
}

/// Per-timestep augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupElement {
    /// Identity element; every field of the transition is left unchanged.
    Trivial,
    /// Structured continuous transform of a translation/rotation action.
    Continuous {
        delta_r: f64,
        delta_z: f64,
        delta_rot: f64,
        delta_theta: f64,
    },
    /// Quarter-turn of the xy part of a discrete action.
    Discrete { c4: C4 },
}

impl GroupElement {
    pub fn is_trivial(&self) -> bool {
        matches!(self, GroupElement::Trivial)
    }

    /// Continuous parameters `(δr, δz, δrot, δθ)` this element acts with.
    pub fn continuous_params(&self) -> (f64, f64, f64, f64) {
        match *self {
            GroupElement::Trivial => (1.0, 1.0, 0.0, 0.0),
            GroupElement::Continuous {
                delta_r,
                delta_z,
                delta_rot,
                delta_theta,
            } => (delta_r, delta_z, delta_rot, delta_theta),
            GroupElement::Discrete { c4 } => (1.0, 1.0, c4.angle().radians(), 0.0),
        }
    }
}
