use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::image::Mask;

/// The shape vocabulary. Class `i` of a dataset uses `Shape::ALL[i]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Disk,
    Square,
    Triangle,
    Star5,
    Cross,
    Annulus,
}

impl Shape {
    pub const ALL: [Shape; 6] =
        [Shape::Disk, Shape::Square, Shape::Triangle, Shape::Star5, Shape::Cross, Shape::Annulus];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Disk => "disk",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Star5 => "star5",
            Shape::Cross => "cross",
            Shape::Annulus => "annulus",
        }
    }

    /// Whether the point `(u, v)`, in the shape's own frame, lies inside a
    /// copy of the shape whose circumscribed circle has radius `r`.
    pub fn contains(self, u: f64, v: f64, r: f64) -> bool {
        match self {
            Shape::Disk => u * u + v * v <= r * r,
            Shape::Square => u.abs() <= 0.7 * r && v.abs() <= 0.7 * r,
            Shape::Triangle => {
                [1.5 * PI, PI / 6.0, 5.0 * PI / 6.0].iter().all(|a| u * a.cos() + v * a.sin() <= 0.5 * r)
            }
            Shape::Star5 => {
                let pts: Vec<(f64, f64)> = (0..10)
                    .map(|k| {
                        let a = PI / 2.0 + k as f64 * PI / 5.0;
                        let rad = if k % 2 == 0 { r } else { 0.45 * r };
                        (rad * a.cos(), rad * a.sin())
                    })
                    .collect();
                point_in_polygon(u, v, &pts)
            }
            Shape::Cross => {
                let (a, b) = (0.95 * r, 0.3 * r);
                (u.abs() <= a && v.abs() <= b) || (v.abs() <= a && u.abs() <= b)
            }
            Shape::Annulus => {
                let d = u * u + v * v;
                d <= r * r && d >= (0.55 * r) * (0.55 * r)
            }
        }
    }
}

fn point_in_polygon(x: f64, y: f64, pts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Position, size and orientation of a drawn shape, in pixels and radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub angle: f64,
}

impl Placement {
    /// Maps pixel-center coordinates into the shape's frame.
    pub fn local(&self, y: usize, x: usize) -> (f64, f64) {
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        let (s, c) = self.angle.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

pub fn shape_mask(shape: Shape, p: &Placement, height: usize, width: usize) -> Mask {
    Mask::from_fn(height, width, |y, x| {
        let (u, v) = p.local(y, x);
        shape.contains(u, v, p.radius)
    })
}
