//! Rodrigues rotations, orthographic plane projection and the camera model
//! that maps reference-frame points to image-plane pixel coordinates.
//!
//! A camera looks along its plane normal. Points are projected onto the
//! plane, rotated so the normal becomes `+z`, and the resulting in-plane
//! coordinates `(x_rp, y_rp)` relate to pixel coordinates `x_c` through the
//! measurement map `s * T(theta) * x_c + delta_c`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Proper rotation matrix (orthonormal, det 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Rodrigues' formula `I + sin(a) U + (1 - cos(a)) U^2` about a unit axis.
    pub fn about_axis(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) {
            return Err(Error::DegenerateAxis);
        }
        let u = axis / n;
        Ok(Self(rodrigues(u, angle.sin(), angle.cos())))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// First two rows, mapping a reference point to in-plane coordinates.
    pub fn in_plane_rows(&self) -> Matrix2x3<f64> {
        self.0.fixed_rows::<2>(0).into_owned()
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

fn rodrigues(u: Vector3<f64>, sin: f64, cos: f64) -> Matrix3<f64> {
    let skew = Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0);
    Matrix3::identity() + skew * sin + skew * skew * (1.0 - cos)
}

/// Rotation taking the direction of `v0` onto the direction of `v1`.
///
/// The axis is `v0 x v1`; antiparallel inputs have no unique axis and are
/// rejected, use [`RotationMatrix::about_axis`] instead.
pub fn rotation_between(v0: Vector3<f64>, v1: Vector3<f64>) -> Result<RotationMatrix> {
    let (n0, n1) = (v0.norm(), v1.norm());
    if !(n0 > 0.0 && n1 > 0.0) {
        return Err(Error::Validation("rotation_between needs nonzero vectors".into()));
    }
    let cross = v0.cross(&v1) / (n0 * n1);
    let cos = (v0.dot(&v1) / (n0 * n1)).clamp(-1.0, 1.0);
    let sin = cross.norm();
    if sin < 1e-12 {
        return if cos > 0.0 {
            Ok(RotationMatrix::identity())
        } else {
            Err(Error::DegenerateAxis)
        };
    }
    Ok(RotationMatrix(rodrigues(cross / sin, sin, cos)))
}

/// Plane `A x + B y + C z + D = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d: f64,
}

impl Plane {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let p = Self { a, b, c, d };
        p.validate()?;
        Ok(p)
    }

    /// Plane with the given normal passing through `point`.
    pub fn through(normal: Vector3<f64>, point: Vector3<f64>) -> Result<Self> {
        Self::new(normal.x, normal.y, normal.z, -normal.dot(&point))
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    pub fn validate(&self) -> Result<()> {
        let n2 = self.a * self.a + self.b * self.b + self.c * self.c;
        if n2 > 0.0 && n2.is_finite() && self.d.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidPlane)
        }
    }

    pub fn residual(&self, x: &Vector3<f64>) -> f64 {
        self.a * x.x + self.b * x.y + self.c * x.z + self.d
    }

    /// Rotation taking this plane's normal to `+z`.
    pub fn image_rotation(&self) -> Result<RotationMatrix> {
        self.validate()?;
        rotation_between(self.normal(), Vector3::z())
    }
}

/// Orthogonal projection of `x` onto `plane` (closed-form expansion).
pub fn project_to_plane(x: &Vector3<f64>, plane: &Plane) -> Result<Vector3<f64>> {
    plane.validate()?;
    let Plane { a, b, c, d } = *plane;
    let n2 = a * a + b * b + c * c;
    Ok(Vector3::new(
        x.x * (b * b + c * c) - a * (b * x.y + c * x.z + d),
        x.y * (a * a + c * c) - b * (a * x.x + c * x.z + d),
        x.z * (a * a + b * b) - c * (a * x.x + b * x.y + d),
    ) / n2)
}

/// Rotate a projected point so the plane normal aligns with `+z`; the first
/// two components are the in-plane coordinates.
pub fn rotate_to_image_frame(x_p: &Vector3<f64>, plane: &Plane) -> Result<Vector3<f64>> {
    Ok(plane.image_rotation()?.apply(x_p))
}

/// `T(theta) = [cos sin; -sin cos]`.
pub fn in_plane_rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// Pixel coordinates relative to the principal point (image center), `y`
/// pointing up. Use [`PixelCoord::to_raster`] for top-left raster indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
    pub in_frame: bool,
}

impl PixelCoord {
    /// Raster `(u, v)`: `u` rightward, `v` downward, origin top-left.
    pub fn to_raster(&self, image_size: (u32, u32)) -> (f64, f64) {
        image_to_raster([self.x, self.y], image_size)
    }
}

pub fn image_to_raster(xc: [f64; 2], image_size: (u32, u32)) -> (f64, f64) {
    (
        image_size.0 as f64 / 2.0 + xc[0],
        image_size.1 as f64 / 2.0 - xc[1],
    )
}

pub fn raster_to_image(u: f64, v: f64, image_size: (u32, u32)) -> [f64; 2] {
    [u - image_size.0 as f64 / 2.0, image_size.1 as f64 / 2.0 - v]
}

pub fn raster_in_frame(u: f64, v: f64, image_size: (u32, u32)) -> bool {
    u >= 0.0 && v >= 0.0 && u < image_size.0 as f64 && v < image_size.1 as f64
}

fn default_image_size() -> (u32, u32) {
    (512, 512)
}

/// Orthographic camera: plane, position, scale, in-plane rotation and offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub plane: Plane,
    pub position: [f64; 3],
    /// Reference units per pixel.
    pub s: f64,
    pub theta: f64,
    pub delta_c: [f64; 2],
    #[serde(default = "default_image_size")]
    pub image_size: (u32, u32),
    #[serde(default)]
    pub calibrated: bool,
}

impl CameraModel {
    /// Camera at `position` looking along `normal`, with `delta_c` derived
    /// from the position.
    pub fn looking_along(
        normal: Vector3<f64>,
        position: Vector3<f64>,
        s: f64,
        theta: f64,
        calibrated: bool,
    ) -> Result<Self> {
        let mut cam = Self {
            plane: Plane::through(normal, position)?,
            position: position.into(),
            s,
            theta,
            delta_c: [0.0; 2],
            image_size: default_image_size(),
            calibrated,
        };
        cam.delta_c = plane_offset(&cam)?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        self.plane.validate()?;
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::Validation(format!("camera scale must be > 0, got {}", self.s)));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Result<RotationMatrix> {
        self.plane.image_rotation()
    }

    /// `s T(theta) x_c + delta_c`.
    pub fn measurement_map(&self, xc: [f64; 2]) -> [f64; 2] {
        let m = in_plane_rotation(self.theta) * Vector2::new(xc[0], xc[1]) * self.s;
        [m.x + self.delta_c[0], m.y + self.delta_c[1]]
    }

    /// Inverse of [`Self::measurement_map`].
    pub fn inverse_measurement_map(&self, xrp: [f64; 2]) -> [f64; 2] {
        let d = Vector2::new(xrp[0] - self.delta_c[0], xrp[1] - self.delta_c[1]) / self.s;
        let xc = in_plane_rotation(self.theta).transpose() * d;
        [xc.x, xc.y]
    }

    /// Projects with a precomputed rotation (see [`pixel_project`]).
    pub fn project_with(&self, rot: &RotationMatrix, x: &Vector3<f64>, quantize: bool) -> PixelCoord {
        // in-plane coordinates do not depend on D, so R x equals R x_p there
        let xp = project_to_plane(x, &self.plane).expect("validated plane");
        let xrp = rot.apply(&xp);
        let xc = self.inverse_measurement_map([xrp.x, xrp.y]);
        let (mut u, mut v) = image_to_raster(xc, self.image_size);
        if quantize {
            u = u.round();
            v = v.round();
        }
        let [x, y] = raster_to_image(u, v, self.image_size);
        PixelCoord {
            x,
            y,
            in_frame: raster_in_frame(u, v, self.image_size),
        }
    }
}

/// In-plane offset of the camera position, via signed distances to the
/// rotated `Y'OZ'` and `X'OZ'` planes, each built from three points.
pub fn plane_offset(camera: &CameraModel) -> Result<[f64; 2]> {
    let r = camera.rotation()?;
    let rt = r.matrix().transpose();
    let (ex, ey, ez) = (rt.column(0).into_owned(), rt.column(1).into_owned(), rt.column(2).into_owned());
    let origin = Vector3::zeros();
    let pos = Vector3::from(camera.position);
    let dx = signed_distance_three_point(&pos, &origin, &(origin + ey), &(origin + ez))?;
    let dy = signed_distance_three_point(&pos, &origin, &(origin + ez), &(origin + ex))?;
    Ok([dx, dy])
}

/// Signed distance of `q` to the plane through `p1, p2, p3`, normal `p1p2 x p1p3`.
pub fn signed_distance_three_point(
    q: &Vector3<f64>,
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
    p3: &Vector3<f64>,
) -> Result<f64> {
    let n = (p2 - p1).cross(&(p3 - p1));
    let norm = n.norm();
    let scale = (p2 - p1).norm() * (p3 - p1).norm();
    if !(norm > 1e-12 * scale) || scale == 0.0 {
        return Err(Error::DegenerateBasis);
    }
    Ok((q - p1).dot(&n) / norm)
}

/// Map a reference-frame point to pixel coordinates of `camera`.
pub fn pixel_project(x: &Vector3<f64>, camera: &CameraModel, quantize: bool) -> Result<PixelCoord> {
    camera.validate()?;
    let rot = camera.rotation()?;
    Ok(camera.project_with(&rot, x, quantize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn unit_vec() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(a, b, c)| a * a + b * b + c * c > 1e-3)
            .prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    #[test]
    fn rotation_examples() {
        let z = Vector3::z();
        assert_eq!(rotation_between(z, z).unwrap(), RotationMatrix::identity());
        let r = rotation_between(z, Vector3::x()).unwrap();
        let expected = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        assert_relative_eq!(*r.matrix(), expected, epsilon = 1e-15);
        let d = Vector3::new(1.0, 1.0, 1.0) / 3f64.sqrt();
        let r = rotation_between(z, d).unwrap();
        assert_relative_eq!(r.apply(&z), d, epsilon = 1e-12);
        assert!(matches!(rotation_between(z, -z), Err(Error::DegenerateAxis)));
    }

    #[test]
    fn explicit_axis_handles_antiparallel() {
        let r = RotationMatrix::about_axis(Vector3::x(), std::f64::consts::PI).unwrap();
        assert_relative_eq!(r.apply(&Vector3::z()), -Vector3::z(), epsilon = 1e-12);
    }

    #[test]
    fn projection_examples() {
        let z0 = Plane::new(0.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(project_to_plane(&Vector3::new(3.0, -2.0, 7.0), &z0).unwrap(), Vector3::new(3.0, -2.0, 0.0));
        let p = Plane::new(1.0, 1.0, 1.0, -3.0).unwrap();
        let xp = project_to_plane(&Vector3::zeros(), &p).unwrap();
        assert_relative_eq!(xp, Vector3::new(1.0, 1.0, 1.0), epsilon = 1e-14);
        assert_relative_eq!(project_to_plane(&xp, &p).unwrap(), xp, epsilon = 1e-14);
        assert!(Plane::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn image_frame_examples() {
        let z0 = Plane::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let v = Vector3::new(1.5, -2.0, 0.0);
        assert_eq!(rotate_to_image_frame(&v, &z0).unwrap(), v);
        let x0 = Plane::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let r = rotate_to_image_frame(&Vector3::new(0.0, 2.0, 5.0), &x0).unwrap();
        assert_relative_eq!(r.z, 0.0, epsilon = 1e-12);
        assert_relative_eq!((r.x * r.x + r.y * r.y).sqrt(), 29f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn plane_offset_examples() {
        let at = |pos: [f64; 3], n: Vector3<f64>| {
            let cam = CameraModel {
                plane: Plane::through(n, Vector3::zeros()).unwrap(),
                position: pos,
                s: 1.0,
                theta: 0.0,
                delta_c: [0.0; 2],
                image_size: (512, 512),
                calibrated: true,
            };
            plane_offset(&cam).unwrap()
        };
        assert_eq!(at([0.0; 3], Vector3::new(0.3, 0.2, 1.0)), [0.0, 0.0]);
        let n = Vector3::new(0.3, -0.4, 1.0);
        let off = at((n * 7.0).into(), n);
        assert!(off[0].abs() < 1e-12 && off[1].abs() < 1e-12);
        assert_eq!(at([2.0, 0.0, 0.0], Vector3::z()), [2.0, 0.0]);
    }

    #[test]
    fn collinear_points_are_rejected() {
        let o = Vector3::zeros();
        let e = Vector3::x();
        assert!(matches!(
            signed_distance_three_point(&Vector3::y(), &o, &e, &(e * 2.0)),
            Err(Error::DegenerateBasis)
        ));
    }

    fn flat_cam(s: f64) -> CameraModel {
        CameraModel {
            plane: Plane::new(0.0, 0.0, 1.0, 0.0).unwrap(),
            position: [0.0; 3],
            s,
            theta: 0.0,
            delta_c: [0.0; 2],
            image_size: (512, 512),
            calibrated: true,
        }
    }

    #[test]
    fn pixel_projection_contracts() {
        let x = Vector3::new(12.25, -40.5, 3.0);
        let p = pixel_project(&x, &flat_cam(1.0), false).unwrap();
        assert_eq!((p.x, p.y), (12.25, -40.5));
        assert!(p.in_frame);
        let p2 = pixel_project(&x, &flat_cam(2.0), false).unwrap();
        assert_eq!((p2.x, p2.y), (6.125, -20.25));
        assert_eq!(p.to_raster((512, 512)), (268.25, 296.5));
        let q = pixel_project(&x, &flat_cam(1.0), true).unwrap();
        assert_eq!(q.to_raster((512, 512)), (268.0, 297.0));
        let far = pixel_project(&Vector3::new(300.0, 0.0, 0.0), &flat_cam(1.0), true).unwrap();
        assert!(!far.in_frame);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn rodrigues_is_proper_rotation(a in unit_vec(), b in unit_vec()) {
            prop_assume!((a.normalize() + b.normalize()).norm() > 1e-6);
            let r = rotation_between(a, b).unwrap();
            let m = r.matrix();
            prop_assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-10);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-10);
            prop_assert!((r.apply(&a).normalize() - b.normalize()).norm() < 1e-10);
        }

        #[test]
        fn in_plane_coords_ignore_offset(n in unit_vec(), d1 in -50.0..50.0f64, d2 in -50.0..50.0f64,
                                         x in -20.0..20.0f64, y in -20.0..20.0f64, z in -20.0..20.0f64) {
            prop_assume!((n.normalize() + Vector3::z()).norm() > 1e-3);
            let p1 = Plane::new(n.x, n.y, n.z, d1).unwrap();
            let p2 = Plane::new(n.x, n.y, n.z, d2).unwrap();
            let pt = Vector3::new(x, y, z);
            let r1 = rotate_to_image_frame(&project_to_plane(&pt, &p1).unwrap(), &p1).unwrap();
            let r2 = rotate_to_image_frame(&project_to_plane(&pt, &p2).unwrap(), &p2).unwrap();
            prop_assert!((r1.x - r2.x).abs() < 1e-9 && (r1.y - r2.y).abs() < 1e-9);
        }

        #[test]
        fn measurement_map_inverts_projection(n in unit_vec(), s in 0.01..3.0f64, th in -3.0..3.0f64,
                                              dx in -5.0..5.0f64, dy in -5.0..5.0f64,
                                              x in -20.0..20.0f64, y in -20.0..20.0f64, z in -20.0..20.0f64) {
            prop_assume!((n.normalize() + Vector3::z()).norm() > 1e-3);
            let cam = CameraModel {
                plane: Plane::through(n, Vector3::new(1.0, 2.0, 3.0)).unwrap(),
                position: [1.0, 2.0, 3.0], s, theta: th, delta_c: [dx, dy],
                image_size: (512, 512), calibrated: false,
            };
            let pt = Vector3::new(x, y, z);
            let pc = pixel_project(&pt, &cam, false).unwrap();
            let back = cam.measurement_map([pc.x, pc.y]);
            let xrp = rotate_to_image_frame(&project_to_plane(&pt, &cam.plane).unwrap(), &cam.plane).unwrap();
            prop_assert!((back[0] - xrp.x).abs() < 1e-10 * (1.0 + xrp.x.abs()));
            prop_assert!((back[1] - xrp.y).abs() < 1e-10 * (1.0 + xrp.y.abs()));
        }
    }

    #[test]
    fn camera_json_uses_documented_keys() {
        let cam = flat_cam(0.5);
        let v: serde_json::Value = serde_json::to_value(&cam).unwrap();
        for key in ["plane", "position", "s", "theta", "delta_c", "image_size", "calibrated"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["plane"].get("A").is_some() && v["plane"].get("D").is_some());
        let back: CameraModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, cam);
    }
}
