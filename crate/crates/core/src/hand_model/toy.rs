//! Built-in toy right hand. Palm faces -z, fingers extend along +y, thumb
//! toward +x. Bone lengths are measured from an adult hand and rounded to
//! the millimeter.

use nalgebra::Vector3;

use super::{
    HandModelParams, Skinning, CANONICAL_PARENTS, NUM_BETAS, NUM_KEYPOINTS, NUM_ROTATIONS,
};

struct Finger {
    base: [f64; 3],
    direction: [f64; 3],
    lengths: [f64; 3],
}

const FINGERS: [Finger; 5] = [
    Finger {
        base: [0.020, 0.025, -0.005],
        direction: [0.6, 0.8, -0.1],
        lengths: [0.035, 0.032, 0.025],
    },
    Finger {
        base: [0.022, 0.085, 0.0],
        direction: [0.08, 1.0, 0.0],
        lengths: [0.040, 0.025, 0.020],
    },
    Finger {
        base: [0.002, 0.090, 0.0],
        direction: [0.0, 1.0, 0.0],
        lengths: [0.045, 0.028, 0.022],
    },
    Finger {
        base: [-0.017, 0.085, 0.0],
        direction: [-0.06, 1.0, 0.0],
        lengths: [0.040, 0.026, 0.021],
    },
    Finger {
        base: [-0.033, 0.074, 0.0],
        direction: [-0.15, 1.0, 0.0],
        lengths: [0.032, 0.020, 0.018],
    },
];

fn is_tip(j: usize) -> bool {
    j > 0 && j.is_multiple_of(4)
}

fn finger_mcp(j: usize) -> usize {
    1 + ((j - 1) / 4) * 4
}

fn rest_joints() -> [Vector3<f64>; NUM_KEYPOINTS] {
    let mut joints = [Vector3::zeros(); NUM_KEYPOINTS];
    for (f, finger) in FINGERS.iter().enumerate() {
        let dir = Vector3::from(finger.direction).normalize();
        let mut p = Vector3::from(finger.base);
        joints[1 + f * 4] = p;
        for (k, len) in finger.lengths.iter().enumerate() {
            p += dir * *len;
            joints[2 + f * 4 + k] = p;
        }
    }
    joints
}

fn shape_basis(rest: &[Vector3<f64>; NUM_KEYPOINTS]) -> Vec<[Vector3<f64>; NUM_KEYPOINTS]> {
    let mut basis = vec![[Vector3::zeros(); NUM_KEYPOINTS]; NUM_BETAS];
    for j in 1..NUM_KEYPOINTS {
        let from_wrist = rest[j] - rest[0];
        let from_mcp = rest[j] - rest[finger_mcp(j)];
        let finger = (j - 1) / 4;
        // overall size
        basis[0][j] = from_wrist * 0.05;
        // all finger lengths
        basis[1][j] = from_mcp * 0.05;
        // palm width
        basis[2][j] = Vector3::new(rest[j].x * 0.08, 0.0, 0.0);
        // thumb abduction
        if finger == 0 {
            basis[3][j] = Vector3::new(0.002, -0.001, 0.0) * ((j - 1) % 4 + 1) as f64;
        }
        // individual finger lengths
        basis[4 + finger][j] = from_mcp * 0.04;
        // palm length moves the four long fingers
        if finger > 0 {
            basis[9][j] = Vector3::new(0.0, 0.003, 0.0);
        }
    }
    basis
}

fn skinning(
    rest: &[Vector3<f64>; NUM_KEYPOINTS],
    basis: &[[Vector3<f64>; NUM_KEYPOINTS]],
    articulated: &[bool; NUM_KEYPOINTS],
) -> Skinning {
    let mut slot = [usize::MAX; NUM_KEYPOINTS];
    let mut next = 0;
    for j in 0..NUM_KEYPOINTS {
        if articulated[j] {
            slot[j] = next;
            next += 1;
        }
    }

    let mut vertices = Vec::new();
    let mut weights = Vec::new();
    let mut vertex_shape_basis = vec![Vec::new(); NUM_BETAS];
    let mut faces = Vec::new();
    for child in 1..NUM_KEYPOINTS {
        let parent = CANONICAL_PARENTS[child].expect("non-root");
        let first = vertices.len();
        for t in [0.25, 0.75] {
            for dz in [-0.006, 0.006] {
                let offset = Vector3::new(0.0, 0.0, dz);
                vertices.push(rest[parent] * (1.0 - t) + rest[child] * t + offset);
                let mut w = [0.0; NUM_ROTATIONS];
                if t > 0.5 && articulated[child] {
                    w[slot[parent]] = 0.7;
                    w[slot[child]] = 0.3;
                } else {
                    w[slot[parent]] = 1.0;
                }
                weights.push(w);
                for (k, b) in basis.iter().enumerate() {
                    vertex_shape_basis[k].push(b[parent] * (1.0 - t) + b[child] * t);
                }
            }
        }
        faces.push([first, first + 1, first + 2]);
        faces.push([first + 1, first + 3, first + 2]);
    }
    Skinning {
        vertices,
        weights,
        vertex_shape_basis,
        faces,
    }
}

pub(super) fn toy_model() -> HandModelParams {
    let rest = rest_joints();
    let basis = shape_basis(&rest);
    let mut articulated = [true; NUM_KEYPOINTS];
    for (j, a) in articulated.iter_mut().enumerate() {
        *a = !is_tip(j);
    }
    let skin = skinning(&rest, &basis, &articulated);
    HandModelParams::new(rest, CANONICAL_PARENTS, articulated, basis, Some(skin))
        .expect("toy model is valid")
}
