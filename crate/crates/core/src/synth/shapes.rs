//! Axis-aligned shape rasterization with hard (non-antialiased) edges.

/// Shape vocabulary; categories cycle through this list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Circle,
    Triangle,
    Diamond,
    Ring,
    Cross,
    Bar,
    Frame,
}

pub const SHAPES: [Shape; 8] = [
    Shape::Square,
    Shape::Circle,
    Shape::Triangle,
    Shape::Diamond,
    Shape::Ring,
    Shape::Cross,
    Shape::Bar,
    Shape::Frame,
];

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
            Shape::Diamond => "diamond",
            Shape::Ring => "ring",
            Shape::Cross => "cross",
            Shape::Bar => "bar",
            Shape::Frame => "frame",
        }
    }

    /// Fraction of the bounding box the shape fills; used to size boxes so a
    /// target foreground fraction is hit.
    pub fn fill_ratio(self) -> f64 {
        match self {
            Shape::Square => 1.0,
            Shape::Circle => std::f64::consts::FRAC_PI_4,
            Shape::Triangle => 0.5,
            Shape::Diamond => 0.5,
            Shape::Ring => std::f64::consts::FRAC_PI_4 * (1.0 - 0.55 * 0.55),
            Shape::Cross => 2.0 * 0.34 - 0.34 * 0.34,
            Shape::Bar => 0.5,
            Shape::Frame => 1.0 - 0.6 * 0.6,
        }
    }

    /// Membership test in normalized bbox coordinates (u, v) in [0, 1).
    pub fn contains(self, u: f64, v: f64) -> bool {
        // center-origin coordinates in [-1, 1)
        let x = 2.0 * u - 1.0;
        let y = 2.0 * v - 1.0;
        match self {
            Shape::Square => true,
            Shape::Circle => x * x + y * y <= 1.0,
            // apex up, base at the bottom edge
            Shape::Triangle => y >= -1.0 && x.abs() <= (y + 1.0) / 2.0,
            Shape::Diamond => x.abs() + y.abs() <= 1.0,
            Shape::Ring => {
                let r2 = x * x + y * y;
                r2 <= 1.0 && r2 >= 0.55 * 0.55
            }
            Shape::Cross => x.abs() <= 0.34 || y.abs() <= 0.34,
            Shape::Bar => y.abs() <= 0.5,
            Shape::Frame => x.abs() > 0.6 || y.abs() > 0.6,
        }
    }
}

/// Pixel positions inside the shape for a bbox at (top, left) with side `size`.
pub fn rasterize(shape: Shape, top: usize, left: usize, size: usize) -> Vec<(usize, usize)> {
    let mut px = Vec::new();
    for dy in 0..size {
        let v = (dy as f64 + 0.5) / size as f64;
        for dx in 0..size {
            let u = (dx as f64 + 0.5) / size as f64;
            if shape.contains(u, v) {
                px.push((top + dy, left + dx));
            }
        }
    }
    px
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_ratio_matches_rasterization() {
        let size = 64;
        for shape in SHAPES {
            let count = rasterize(shape, 0, 0, size).len();
            let measured = count as f64 / (size * size) as f64;
            let expected = shape.fill_ratio();
            assert!(
                (measured - expected).abs() < 0.05,
                "{}: measured {measured:.3} vs expected {expected:.3}",
                shape.name()
            );
        }
    }

    #[test]
    fn square_fills_bbox() {
        assert_eq!(rasterize(Shape::Square, 2, 3, 4).len(), 16);
    }
}
