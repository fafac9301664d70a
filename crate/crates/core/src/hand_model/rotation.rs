use nalgebra::{Matrix3, Vector3};

const SMALL_ANGLE: f64 = 1e-8;

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula for an axis-angle vector. Falls back to the Taylor
/// expansion of the coefficients when the angle is below 1e-8 rad.
pub fn axis_angle_to_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(v);
    Matrix3::identity() + k * a + k * k * b
}

/// Maps an axis-angle vector to the equivalent rotation with angle in `[0, π]`.
pub fn canonicalize_axis_angle(v: &Vector3<f64>) -> Vector3<f64> {
    let theta = v.norm();
    if theta < SMALL_ANGLE {
        return *v;
    }
    let axis = v / theta;
    let mut wrapped = theta.rem_euclid(std::f64::consts::TAU);
    if wrapped > std::f64::consts::PI {
        wrapped = std::f64::consts::TAU - wrapped;
        return -axis * wrapped;
    }
    axis * wrapped
}
