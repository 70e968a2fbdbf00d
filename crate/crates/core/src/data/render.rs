//! Fixed-camera software renderer.
//!
//! Orthographic projection along `(1,1,1)/√3` toward the origin with `+z` up,
//! flat Lambertian shading from one fixed light, a z-buffer, and a white
//! background. Output pixels are quantized to multiples of 1/255 so images
//! survive an 8-bit round trip unchanged.

use std::f64::consts::FRAC_1_SQRT_2;

use super::io::unit_from_level;
use super::mesh::{norm, Mesh};
use crate::tensor::Tensor;

/// Half-width of the square world-space window seen by the camera.
pub const VIEW_HALF_EXTENT: f64 = 2.0;

const VIEW_DIR: [f64; 3] = [
    0.577_350_269_189_625_8,
    0.577_350_269_189_625_8,
    0.577_350_269_189_625_8,
];
// Image-plane axes: right = (−1, 1, 0)/√2, up = (−1, −1, 2)/√6.
const RIGHT: [f64; 3] = [-FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0];
const UP: [f64; 3] = [
    -0.408_248_290_463_863,
    -0.408_248_290_463_863,
    0.816_496_580_927_726,
];
const LIGHT: [f64; 3] = [0.267_261_241_912_424_4, 0.534_522_483_824_848_8, 0.801_783_725_737_273_2];
const ALBEDO: [f64; 3] = [0.85, 0.55, 0.35];
const AMBIENT: f64 = 0.25;
const DIFFUSE: f64 = 0.65;

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn quantize(v: f64) -> f32 {
    unit_from_level((v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Renders `mesh` into a `[3×S×S]` image with channel values in `[0, 1]`.
pub fn render(mesh: &Mesh, image_size: usize) -> Tensor<f32> {
    let s = image_size;
    let mut depth = vec![f64::NEG_INFINITY; s * s];
    let mut shade = vec![None::<[f32; 3]>; s * s];
    let to_px = |p: &[f64; 3]| -> [f64; 3] {
        let u = dot(p, &RIGHT);
        let v = dot(p, &UP);
        [
            (u + VIEW_HALF_EXTENT) / (2.0 * VIEW_HALF_EXTENT) * s as f64,
            (VIEW_HALF_EXTENT - v) / (2.0 * VIEW_HALF_EXTENT) * s as f64,
            dot(p, &VIEW_DIR),
        ]
    };
    for f in 0..mesh.faces.len() {
        let n = mesh.face_normal(f);
        let len = norm(&n);
        if len == 0.0 {
            continue;
        }
        let lambert = (dot(&n, &LIGHT) / len).abs();
        let k = AMBIENT + DIFFUSE * lambert;
        let color = ALBEDO.map(|a| quantize(a * k));

        let [a, b, c] = mesh.triangle(f).map(|p| to_px(&p));
        let area = edge(&a, &b, &c);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let y0 = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let x1 = (a[0].max(b[0]).max(c[0]).ceil().max(0.0) as usize).min(s);
        let y1 = (a[1].max(b[1]).max(c[1]).ceil().max(0.0) as usize).min(s);
        for py in y0..y1 {
            for px in x0..x1 {
                let p = [px as f64 + 0.5, py as f64 + 0.5, 0.0];
                let w0 = edge(&b, &c, &p) / area;
                let w1 = edge(&c, &a, &p) / area;
                let w2 = edge(&a, &b, &p) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a[2] + w1 * b[2] + w2 * c[2];
                let idx = py * s + px;
                if z > depth[idx] {
                    depth[idx] = z;
                    shade[idx] = Some(color);
                }
            }
        }
    }
    let mut data = vec![1.0f32; 3 * s * s];
    for (idx, px) in shade.iter().enumerate() {
        if let Some(rgb) = px {
            for ch in 0..3 {
                data[ch * s * s + idx] = rgb[ch];
            }
        }
    }
    Tensor::new(vec![3, s, s], data).expect("3·S·S pixels")
}

fn edge(a: &[f64; 3], b: &[f64; 3], p: &[f64; 3]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// The camera's viewing axis as a unit vector pointing toward the camera.
pub fn view_direction() -> [f64; 3] {
    VIEW_DIR
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::io::level_from_unit;
    use crate::data::mesh::cross;
    use crate::data::ShapeParams;

    fn non_white_fraction(img: &Tensor<f32>) -> f64 {
        let s = img.shape()[1];
        let plane = s * s;
        let d = img.data();
        (0..plane)
            .filter(|&i| (0..3).any(|c| d[c * plane + i] != 1.0))
            .count() as f64
            / plane as f64
    }

    #[test]
    fn camera_basis() {
        let c = cross(&RIGHT, &UP);
        assert!(dot(&RIGHT, &UP).abs() < 1e-12);
        assert!((0..3).all(|k| (c[k] - VIEW_DIR[k]).abs() < 1e-12));
        for v in [RIGHT, UP, VIEW_DIR, LIGHT] {
            assert!((norm(&v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mesh_is_white() {
        let img = render(&Mesh::empty(), 16);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unit_box_silhouette() {
        let m = ShapeParams::Box { size: [1.0; 3] }.mesh();
        let img = render(&m, 64);
        let frac = non_white_fraction(&img);
        assert!((0.05..0.95).contains(&frac), "{frac}");
        // Projected hexagon area √3 over a 4×4 window.
        assert!((frac - 3f64.sqrt() / 16.0).abs() < 0.02, "{frac}");
        for corner in [0, 63, 64 * 63, 64 * 64 - 1] {
            for c in 0..3 {
                assert_eq!(img.data()[c * 4096 + corner], 1.0);
            }
        }
    }

    #[test]
    fn deterministic_and_quantized() {
        let m = ShapeParams::Torus { major: 0.6, minor: 0.2, major_segments: 32, minor_segments: 16 }.mesh();
        let a = render(&m, 32);
        assert_eq!(a, render(&m, 32));
        assert!(a.data().iter().all(|&v| unit_from_level(level_from_unit(v)) == v));
    }

    #[test]
    fn up_axis_points_up_in_image() {
        // A flat slab high on +z should occupy the upper part of the image.
        let m = ShapeParams::Box { size: [0.2, 0.2, 0.2] }.mesh().transformed([0.0, 0.0, -1.0], 1.0);
        let img = render(&m, 32);
        let d = img.data();
        let rows: Vec<usize> = (0..32 * 32).filter(|&i| d[i] != 1.0).map(|i| i / 32).collect();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|&r| r < 16));
    }
}
