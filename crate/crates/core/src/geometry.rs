//! Vectors, unit quaternions and poses.
//!
//! Conventions: right-handed coordinates with +Y up, quaternion components
//! stored as `(x, y, z, w)`, Hamilton product. Every product is renormalized
//! so long chains of compositions stay on the unit sphere. Sign
//! canonicalization (`w >= 0`) is explicit and never applied implicitly by
//! the algebra.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// World up axis.
pub const UP: Vec3 = Vec3 {
    x: 0.0,
    y: 1.0,
    z: 0.0,
};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A rotation stored as a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        w: 1.0,
    };

    /// Builds a quaternion from raw components, normalizing them.
    ///
    /// Fails on non-finite or (near) zero-length input.
    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z + w * w).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize quaternion ({x}, {y}, {z}, {w})"
            )));
        }
        Ok(UnitQuaternion {
            x: x / n,
            y: y / n,
            z: z / n,
            w: w / n,
        })
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalized();
        let (s, c) = (angle * 0.5).sin_cos();
        UnitQuaternion {
            x: a.x * s,
            y: a.y * s,
            z: a.z * s,
            w: c,
        }
    }

    pub fn vector(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt()
    }

    pub fn dot(self, o: UnitQuaternion) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z + self.w * o.w
    }

    fn renormalized(self) -> Self {
        let n = self.norm();
        UnitQuaternion {
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
            w: self.w / n,
        }
    }

    /// Conjugate, which is the inverse for unit quaternions.
    pub fn inverse(self) -> Self {
        UnitQuaternion {
            x: -self.x,
            y: -self.y,
            z: -self.z,
            w: self.w,
        }
    }

    /// Same rotation with the sign chosen so that `w >= 0`.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = self.vector();
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    /// Splits `self` into `(swing, twist)` with `self = swing * twist`, where
    /// `twist` rotates about `axis` (unit length) and `swing` about an axis
    /// orthogonal to it.
    pub fn swing_twist(self, axis: Vec3) -> (UnitQuaternion, UnitQuaternion) {
        let proj = axis * self.vector().dot(axis);
        let n = (proj.dot(proj) + self.w * self.w).sqrt();
        let twist = if n < 1e-12 {
            UnitQuaternion::IDENTITY
        } else {
            UnitQuaternion {
                x: proj.x / n,
                y: proj.y / n,
                z: proj.z / n,
                w: self.w / n,
            }
        };
        let swing = self * twist.inverse();
        (swing, twist)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.z, self.w]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.w.is_finite()
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    /// Hamilton product, renormalized.
    fn mul(self, b: UnitQuaternion) -> UnitQuaternion {
        let a = self;
        UnitQuaternion {
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        }
        .renormalized()
    }
}

impl Neg for UnitQuaternion {
    type Output = UnitQuaternion;
    fn neg(self) -> UnitQuaternion {
        UnitQuaternion {
            x: -self.x,
            y: -self.y,
            z: -self.z,
            w: -self.w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: UnitQuaternion,
}

impl Pose {
    pub fn new(position: Vec3, rotation: UnitQuaternion) -> Self {
        Pose { position, rotation }
    }

    /// Applies `self` to a child pose expressed in `self`'s frame.
    pub fn compose(self, child: Pose) -> Pose {
        Pose {
            position: self.position + self.rotation.rotate(child.position),
            rotation: self.rotation * child.rotation,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.rotation.is_finite()
    }
}

/// Head and wrist poses at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionFrame {
    pub head: Pose,
    pub wrist_left: Pose,
    pub wrist_right: Pose,
}

impl MotionFrame {
    pub fn poses(&self) -> [&Pose; 3] {
        [&self.head, &self.wrist_left, &self.wrist_right]
    }

    pub fn poses_mut(&mut self) -> [&mut Pose; 3] {
        [&mut self.head, &mut self.wrist_left, &mut self.wrist_right]
    }
}

/// One continuous, uniformly sampled recording of a single subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Take {
    pub subject_id: String,
    pub take_id: String,
    pub fps: f64,
    pub frames: Vec<MotionFrame>,
}

impl Take {
    pub fn new(
        subject_id: impl Into<String>,
        take_id: impl Into<String>,
        fps: f64,
        frames: Vec<MotionFrame>,
    ) -> Result<Self> {
        let take = Take {
            subject_id: subject_id.into(),
            take_id: take_id.into(),
            fps,
            frames,
        };
        take.validate()?;
        Ok(take)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "take {}: fps must be positive, got {}",
                self.take_id, self.fps
            )));
        }
        if self.frames.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "take {}: no frames",
                self.take_id
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            for p in f.poses() {
                if !p.is_finite() || (p.rotation.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidArgument(format!(
                        "take {}: invalid pose in frame {i}",
                        self.take_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use proptest::prelude::*;

    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn same_rotation(a: UnitQuaternion, b: UnitQuaternion, tol: f64) -> bool {
        a.dot(b).abs() >= 1.0 - tol
    }

    fn qclose(a: UnitQuaternion, b: UnitQuaternion, tol: f64) -> bool {
        a.to_array()
            .iter()
            .zip(b.to_array())
            .all(|(x, y)| close(*x, y, tol))
    }

    fn yaw(angle: f64) -> UnitQuaternion {
        UnitQuaternion::from_axis_angle(UP, angle)
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(x, y, z, w)| {
                x * x + y * y + z * z + w * w > 1e-3
            })
            .prop_map(|(x, y, z, w)| UnitQuaternion::new(x, y, z, w).unwrap())
    }

    fn arb_vec() -> impl Strategy<Value = Vec3> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    #[test]
    fn identity_and_inverse() {
        let q = UnitQuaternion::new(0.1, -0.4, 0.3, 0.8).unwrap();
        assert!(qclose(UnitQuaternion::IDENTITY * q, q, 1e-12));
        assert!(qclose(q * q.inverse(), UnitQuaternion::IDENTITY, 1e-9));
        assert_eq!(UnitQuaternion::IDENTITY.inverse(), UnitQuaternion::IDENTITY);
        assert_eq!(q.inverse().to_array(), [-q.x, -q.y, -q.z, q.w]);
    }

    #[test]
    fn yaw_composition_on_shared_axis() {
        let q = yaw(FRAC_PI_2) * yaw(FRAC_PI_2);
        assert!(same_rotation(q, yaw(PI), 1e-12));
    }

    #[test]
    fn rotate_examples() {
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(UnitQuaternion::IDENTITY.rotate(v), v);
        let r = yaw(FRAC_PI_2).rotate(Vec3::new(1.0, 0.0, 0.0));
        assert!(close(r.x, 0.0, 1e-12) && close(r.y, 0.0, 1e-12) && close(r.z, -1.0, 1e-12));
        let q = UnitQuaternion::new(0.3, 0.2, -0.7, 0.1).unwrap();
        assert_eq!(q.rotate(Vec3::ZERO), Vec3::ZERO);
    }

    #[test]
    fn canonical_examples() {
        assert_eq!(UnitQuaternion::IDENTITY.canonical(), UnitQuaternion::IDENTITY);
        let neg = UnitQuaternion {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            w: -1.0,
        };
        assert_eq!(neg.canonical(), UnitQuaternion::IDENTITY);
    }

    #[test]
    fn swing_twist_pure_cases() {
        let q = yaw(0.7);
        let (swing, twist) = q.swing_twist(UP);
        assert!(qclose(swing, UnitQuaternion::IDENTITY, 1e-12));
        assert!(qclose(twist, q, 1e-12));

        let p = UnitQuaternion::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), 0.4);
        let (swing, twist) = p.swing_twist(UP);
        assert!(qclose(swing, p, 1e-12));
        assert!(qclose(twist, UnitQuaternion::IDENTITY, 1e-12));
    }

    #[test]
    fn swing_twist_degenerate_returns_identity_twist() {
        // 180 degrees about X: no component along Y and w = 0.
        let q = UnitQuaternion::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let (swing, twist) = q.swing_twist(UP);
        assert_eq!(twist, UnitQuaternion::IDENTITY);
        assert!(qclose(swing, q, 1e-12));
    }

    #[test]
    fn swing_twist_recomposes_seeded() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let q = UnitQuaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .unwrap();
            let (swing, twist) = q.swing_twist(UP);
            // Direct multiplication, written out independently of `Mul`.
            let (a, b) = (swing, twist);
            let r = [
                a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
                a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
                a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
                a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            ];
            for (c, e) in r.iter().zip(q.to_array()) {
                assert!(close(*c, e, 1e-9));
            }
            assert!(close(twist.x, 0.0, 1e-12) && close(twist.z, 0.0, 1e-12));
            assert!(close(swing.vector().dot(UP), 0.0, 1e-9));
        }
    }

    proptest! {
        #[test]
        fn products_stay_unit(a in arb_quat(), b in arb_quat()) {
            prop_assert!(((a * b).norm() - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn product_is_associative(a in arb_quat(), b in arb_quat(), c in arb_quat()) {
            prop_assert!(qclose((a * b) * c, a * (b * c), 1e-9));
        }

        #[test]
        fn rotation_preserves_norm(q in arb_quat(), v in arb_vec()) {
            prop_assert!(close(q.rotate(v).norm(), v.norm(), 1e-9));
        }

        #[test]
        fn canonical_is_same_rotation(q in arb_quat(), v in arb_vec()) {
            let a = q.canonical().rotate(v);
            let b = q.rotate(v);
            prop_assert!((a - b).norm() <= 1e-9);
            prop_assert!(q.canonical().w >= 0.0);
        }
    }
}
