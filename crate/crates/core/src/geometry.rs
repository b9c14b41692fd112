//! Square grid with periodic boundaries. Node `i` sits at
//! `(i % side, i / side)`.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridGeometry {
    side: usize,
}

impl GridGeometry {
    pub fn new(side: usize) -> Self {
        assert!(side > 0, "grid side must be positive");
        Self { side }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn position(&self, i: usize) -> (usize, usize) {
        (i % self.side, i / self.side)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.side + x
    }

    /// Shortest signed displacement `to - from` along one axis, in
    /// `[-side/2, side/2)`.
    #[inline]
    pub fn wrap_delta(&self, from: f64, to: f64) -> f64 {
        let l = self.side as f64;
        let mut d = (to - from) % l;
        if d < -l / 2.0 {
            d += l;
        } else if d >= l / 2.0 {
            d -= l;
        }
        d
    }

    /// Signed toroidal displacement from node `from` to node `to`.
    #[inline]
    pub fn displacement(&self, from: usize, to: usize) -> (f64, f64) {
        let (fx, fy) = self.position(from);
        let (tx, ty) = self.position(to);
        (self.wrap_delta(fx as f64, tx as f64), self.wrap_delta(fy as f64, ty as f64))
    }

    /// Euclidean distance with per-axis wraparound.
    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distance_sq(i, j).sqrt()
    }

    #[inline]
    pub fn distance_sq(&self, i: usize, j: usize) -> f64 {
        let (dx, dy) = self.displacement(i, j);
        dx * dx + dy * dy
    }

    /// Squared toroidal distance from a continuous point to node `i`.
    #[inline]
    pub fn point_distance_sq(&self, point: (f64, f64), i: usize) -> f64 {
        let (x, y) = self.position(i);
        let dx = self.wrap_delta(point.0, x as f64);
        let dy = self.wrap_delta(point.1, y as f64);
        dx * dx + dy * dy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wraparound() {
        let g = GridGeometry::new(16);
        assert_eq!(g.distance(5, 5), 0.0);
        assert_eq!(g.distance(g.index(0, 0), g.index(15, 0)), 1.0);
        assert_eq!(g.distance(g.index(0, 0), g.index(8, 0)), 8.0);
        assert_eq!(g.displacement(g.index(1, 1), g.index(0, 15)), (-1.0, -2.0));
    }

    #[test]
    fn matches_nine_image_brute_force() {
        let g = GridGeometry::new(7);
        for i in 0..g.len() {
            for j in 0..g.len() {
                let (xi, yi) = g.position(i);
                let (xj, yj) = g.position(j);
                let mut best = f64::INFINITY;
                for ox in [-7i64, 0, 7] {
                    for oy in [-7i64, 0, 7] {
                        let dx = xj as i64 + ox - xi as i64;
                        let dy = yj as i64 + oy - yi as i64;
                        best = best.min(((dx * dx + dy * dy) as f64).sqrt());
                    }
                }
                assert_eq!(g.distance(i, j), best);
                assert_eq!(g.distance(i, j), g.distance(j, i));
            }
        }
    }
}
