//! Vector and rotation primitives.
//!
//! Frame conventions used throughout the crate:
//!
//! * Inertial frame: J2000 equatorial, `x` toward (ra 0, dec 0), `z` toward
//!   the north celestial pole.
//! * Sensor frame: `z` is the boresight, `x` grows with the pixel column and
//!   `y` with the pixel row.
//! * [`RotationMatrix`] maps inertial coordinates to sensor coordinates,
//!   `v_sensor = R * v_inertial`. Its rows are therefore the sensor axes
//!   expressed in the inertial frame, and the third row is the boresight.
//!
//! Euler form: `(ra, dec)` is the boresight direction and `roll` is the angle
//! of the sensor `x` axis measured from local east toward local north at the
//! boresight. Inverting, the sensor axes are
//!
//! ```text
//! x_s =  cos(roll) * east + sin(roll) * north
//! y_s = -sin(roll) * east + cos(roll) * north
//! z_s =  boresight
//! ```
//!
//! with `east = (-sin ra, cos ra, 0)` and
//! `north = (-sin dec cos ra, -sin dec sin ra, cos dec)`. Within
//! [`POLE_BAND_DEG`] of a pole `ra` is undefined; extraction pins it to 0 and
//! folds the whole azimuth into `roll`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cross-product norm below which two directions are treated as collinear.
pub const COLLINEAR_EPS: f64 = 1e-8;

/// |dec| above which the Euler form is flagged as singular.
pub const POLE_BAND_DEG: f64 = 89.999;

/// A direction in 3-space, normalized at construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 3]", from = "[f64; 3]")]
pub struct UnitVec3(Vector3<f64>);

impl UnitVec3 {
    pub fn new_normalize(v: Vector3<f64>) -> Self {
        UnitVec3(v.normalize())
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Self {
        Self::new_normalize(Vector3::new(x, y, z))
    }

    #[inline]
    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.0.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.0.y
    }

    #[inline]
    pub fn z(&self) -> f64 {
        self.0.z
    }

    #[inline]
    pub fn dot(&self, other: &UnitVec3) -> f64 {
        self.0.dot(&other.0)
    }
}

impl From<UnitVec3> for [f64; 3] {
    fn from(u: UnitVec3) -> Self {
        [u.0.x, u.0.y, u.0.z]
    }
}

impl From<[f64; 3]> for UnitVec3 {
    fn from(a: [f64; 3]) -> Self {
        UnitVec3::from_xyz(a[0], a[1], a[2])
    }
}

/// Unit vector for a celestial position given in degrees.
pub fn radec_to_unit(ra: f64, dec: f64) -> Result<UnitVec3> {
    if !(-90.0..=90.0).contains(&dec) || !ra.is_finite() {
        return Err(Error::Domain(dec));
    }
    let (sr, cr) = ra.to_radians().sin_cos();
    let (sd, cd) = dec.to_radians().sin_cos();
    Ok(UnitVec3::from_xyz(cd * cr, cd * sr, sd))
}

/// Great-circle separation in degrees, in `[0, 180]`.
#[inline]
pub fn angular_distance(u: &UnitVec3, v: &UnitVec3) -> f64 {
    u.dot(v).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Separation in radians via `atan2(|u×v|, u·v)`, accurate near zero where
/// the arccos form loses about half the mantissa.
pub fn separation_rad(u: &UnitVec3, v: &UnitVec3) -> f64 {
    u.0.cross(&v.0).norm().atan2(u.dot(v))
}

/// Orthonormal rotation, inertial to sensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Inertial direction to sensor direction.
    #[inline]
    pub fn to_sensor(&self, v: &UnitVec3) -> UnitVec3 {
        UnitVec3(self.0 * v.0)
    }

    /// Sensor direction to inertial direction.
    #[inline]
    pub fn to_inertial(&self, v: &UnitVec3) -> UnitVec3 {
        UnitVec3(self.0.tr_mul(&v.0))
    }

    pub fn boresight(&self) -> UnitVec3 {
        UnitVec3::new_normalize(self.0.row(2).transpose())
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Rotation angle (degrees) of `self * other⁻¹`.
    pub fn angle_to(&self, other: &RotationMatrix) -> f64 {
        let d = self.0 * other.0.transpose();
        ((d.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &RotationMatrix) -> f64 {
        (self.0 - other.0).amax()
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

/// Orthonormal frame of an ordered vector pair: the first vector, the pair
/// normal, and their cross product, as rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriadFrame(Matrix3<f64>);

impl TriadFrame {
    pub fn new(v1: &UnitVec3, v2: &UnitVec3) -> Result<Self> {
        let a = v1.0.normalize();
        let cross = v1.0.cross(&v2.0);
        let norm = cross.norm();
        if norm < COLLINEAR_EPS {
            return Err(Error::Collinear(norm));
        }
        let b = cross / norm;
        let c = a.cross(&b);
        Ok(TriadFrame(Matrix3::from_rows(&[
            a.transpose(),
            b.transpose(),
            c.transpose(),
        ])))
    }
}

/// Rotation taking the reference frame onto the observed one, `C_cmᵀ · C_cr`.
pub fn triad_from_frames(observed: &TriadFrame, reference: &TriadFrame) -> RotationMatrix {
    RotationMatrix(observed.0.tr_mul(&reference.0))
}

/// Dual-vector (TRIAD) attitude from two catalog directions `cs1, cs2`
/// and their observed counterparts `os1, os2`.
///
/// Builds the intermediate frame from each vector pair (first vector, normal
/// of the pair, and their cross product), giving `C_cm` from the sensor pair
/// and `C_cr` from the inertial pair, and returns `C_cmᵀ · C_cr`. The first
/// observation is reproduced exactly; the second only in the plane of the
/// pair.
pub fn triad_attitude(
    cs1: &UnitVec3,
    cs2: &UnitVec3,
    os1: &UnitVec3,
    os2: &UnitVec3,
) -> Result<RotationMatrix> {
    let c_cr = TriadFrame::new(cs1, cs2)?;
    let c_cm = TriadFrame::new(os1, os2)?;
    Ok(triad_from_frames(&c_cm, &c_cr))
}

/// Boresight pointing plus roll, degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub ra: f64,
    pub dec: f64,
    pub roll: f64,
    /// Set when |dec| exceeds [`POLE_BAND_DEG`]; `ra` is then pinned to 0.
    pub near_pole: bool,
}

fn wrap360(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

fn east_north(ra: f64, dec: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (sr, cr) = ra.to_radians().sin_cos();
    let (sd, cd) = dec.to_radians().sin_cos();
    (
        Vector3::new(-sr, cr, 0.0),
        Vector3::new(-sd * cr, -sd * sr, cd),
    )
}

pub fn matrix_to_euler(r: &RotationMatrix) -> EulerAngles {
    let m = &r.0;
    let rho = m[(2, 0)].hypot(m[(2, 1)]);
    let dec = m[(2, 2)].atan2(rho).to_degrees();
    let near_pole = dec.abs() > POLE_BAND_DEG;
    let (ra, east, north) = if near_pole {
        let (east, north) = east_north(0.0, dec.signum() * 90.0);
        (0.0, east, north)
    } else {
        // east and north from the boresight components directly; equal to
        // east_north(ra, dec) without the trigonometry
        let (cr, sr) = (m[(2, 0)] / rho, m[(2, 1)] / rho);
        let sd = m[(2, 2)];
        (
            wrap360(m[(2, 1)].atan2(m[(2, 0)]).to_degrees()),
            Vector3::new(-sr, cr, 0.0),
            Vector3::new(-sd * cr, -sd * sr, rho),
        )
    };
    let xs = Vector3::new(m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let roll = wrap360(xs.dot(&north).atan2(xs.dot(&east)).to_degrees());
    EulerAngles {
        ra,
        dec,
        roll,
        near_pole,
    }
}

pub fn euler_to_matrix(ra: f64, dec: f64, roll: f64) -> RotationMatrix {
    let (east, north) = east_north(ra, dec);
    let (sd, cd) = dec.to_radians().sin_cos();
    let (sr, cr) = ra.to_radians().sin_cos();
    let bore = Vector3::new(cd * cr, cd * sr, sd);
    let (sg, cg) = roll.to_radians().sin_cos();
    let xs = east * cg + north * sg;
    let ys = -east * sg + north * cg;
    RotationMatrix(Matrix3::from_rows(&[
        xs.transpose(),
        ys.transpose(),
        bore.transpose(),
    ]))
}

/// Rotation together with its Euler form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Attitude {
    pub rotation: RotationMatrix,
    pub euler: EulerAngles,
}

impl Attitude {
    pub fn from_rotation(rotation: RotationMatrix) -> Self {
        Attitude {
            rotation,
            euler: matrix_to_euler(&rotation),
        }
    }

    pub fn from_euler(ra: f64, dec: f64, roll: f64) -> Self {
        Self::from_rotation(euler_to_matrix(ra, dec, roll))
    }

    pub fn ra(&self) -> f64 {
        self.euler.ra
    }

    pub fn dec(&self) -> f64 {
        self.euler.dec
    }

    pub fn roll(&self) -> f64 {
        self.euler.roll
    }
}

/// Attitude rounded onto the `fnx` lattice. Components are lattice indices,
/// so the represented angle is `index * fnx` degrees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuantizedAttitude {
    pub qra: i32,
    pub qdec: i32,
    pub qroll: i32,
}

/// Number of `fnx` steps in a full turn; `fnx` is expected to divide 360.
#[inline]
pub fn wrap_steps(fnx: f64) -> i32 {
    ((360.0 / fnx).round() as i32).max(1)
}

impl QuantizedAttitude {
    /// Angles in degrees represented by this key.
    pub fn degrees(&self, fnx: f64) -> (f64, f64, f64) {
        (
            self.qra as f64 * fnx,
            self.qdec as f64 * fnx,
            self.qroll as f64 * fnx,
        )
    }

    /// Chebyshev distance on the lattice with ra/roll wraparound.
    pub fn lattice_distance(&self, other: &QuantizedAttitude, wrap: i32) -> i32 {
        let circ = |a: i32, b: i32| {
            let d = (a - b).rem_euclid(wrap);
            d.min(wrap - d)
        };
        circ(self.qra, other.qra)
            .max((self.qdec - other.qdec).abs())
            .max(circ(self.qroll, other.qroll))
    }

    /// The 26 lattice neighbours, wrapped.
    pub fn neighbors(&self, wrap: i32) -> impl Iterator<Item = QuantizedAttitude> + '_ {
        let center = *self;
        (-1..=1).flat_map(move |da: i32| {
            (-1..=1).flat_map(move |dd: i32| {
                (-1..=1).filter_map(move |dr: i32| {
                    if da == 0 && dd == 0 && dr == 0 {
                        return None;
                    }
                    Some(QuantizedAttitude {
                        qra: (center.qra + da).rem_euclid(wrap),
                        qdec: center.qdec + dd,
                        qroll: (center.qroll + dr).rem_euclid(wrap),
                    })
                })
            })
        })
    }
}

/// Rounds (half away from zero) each angle onto the `fnx` lattice; ra and
/// roll wrap so that 360 maps to 0.
pub fn quantize_euler(ra: f64, dec: f64, roll: f64, fnx: f64) -> QuantizedAttitude {
    let wrap = wrap_steps(fnx);
    QuantizedAttitude {
        qra: ((ra / fnx).round() as i32).rem_euclid(wrap),
        qdec: (dec / fnx).round() as i32,
        qroll: ((roll / fnx).round() as i32).rem_euclid(wrap),
    }
}

pub fn quantize_attitude(att: &Attitude, fnx: f64) -> QuantizedAttitude {
    quantize_euler(att.ra(), att.dec(), att.roll(), fnx)
}
