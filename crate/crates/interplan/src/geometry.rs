//! 2D primitives: points, polylines, and oriented rectangles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2D point / vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Point) -> f64 {
        self.sub(o).norm()
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    }
    a
}

/// An open polyline with at least two distinct vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    vertices: Vec<Point>,
}

impl Polyline {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::Config("polyline needs at least 2 vertices".into()));
        }
        let degenerate = vertices
            .windows(2)
            .all(|w| w[0].dist(w[1]) < f64::EPSILON);
        if degenerate {
            return Err(Error::Config(
                "degenerate polyline: all vertices coincident".into(),
            ));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn total_length(&self) -> f64 {
        self.vertices.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    /// Perpendicular projection distance from `p` to the polyline.
    pub fn distance_to(&self, p: Point) -> f64 {
        self.project(p).0
    }

    /// Returns (distance, arclength of the closest point along the polyline).
    pub fn project(&self, p: Point) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        let mut s0 = 0.0;
        for w in self.vertices.windows(2) {
            let (d, t) = point_segment(p, w[0], w[1]);
            let seg_len = w[0].dist(w[1]);
            if d < best.0 {
                best = (d, s0 + t * seg_len);
            }
            s0 += seg_len;
        }
        best
    }

    /// Point at arclength `s` along the polyline, clamped to its ends.
    pub fn point_at(&self, s: f64) -> Point {
        let mut remaining = s.max(0.0);
        for w in self.vertices.windows(2) {
            let seg_len = w[0].dist(w[1]);
            if remaining <= seg_len && seg_len > f64::EPSILON {
                return w[0].add(w[1].sub(w[0]).scale(remaining / seg_len));
            }
            remaining -= seg_len;
        }
        *self.vertices.last().expect("non-empty")
    }

    /// Unit tangent of the segment containing arclength `s`.
    pub fn tangent_at_arclength(&self, s: f64) -> Point {
        let mut remaining = s.max(0.0);
        let mut last = Point::new(1.0, 0.0);
        for w in self.vertices.windows(2) {
            let seg_len = w[0].dist(w[1]);
            if seg_len > f64::EPSILON {
                last = w[1].sub(w[0]).scale(1.0 / seg_len);
                if remaining <= seg_len {
                    return last;
                }
            }
            remaining -= seg_len;
        }
        last
    }

    /// Unit tangent of the segment containing the closest point to `p`.
    pub fn tangent_at(&self, p: Point) -> Point {
        let mut best = (f64::INFINITY, Point::new(1.0, 0.0));
        for w in self.vertices.windows(2) {
            let (d, _) = point_segment(p, w[0], w[1]);
            if d < best.0 {
                let dir = w[1].sub(w[0]);
                let n = dir.norm();
                if n > f64::EPSILON {
                    best = (d, dir.scale(1.0 / n));
                }
            }
        }
        best.1
    }
}

/// Distance from `p` to segment `ab` plus the clamped parameter t in [0, 1].
fn point_segment(p: Point, a: Point, b: Point) -> (f64, f64) {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 < f64::EPSILON {
        return (p.dist(a), 0.0);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    (p.dist(a.add(ab.scale(t))), t)
}

/// Minimum distance between segments `a0a1` and `b0b1`; 0 if they intersect.
fn segment_segment(a0: Point, a1: Point, b0: Point, b1: Point) -> f64 {
    if segments_intersect(a0, a1, b0, b1) {
        return 0.0;
    }
    let d = [
        point_segment(a0, b0, b1).0,
        point_segment(a1, b0, b1).0,
        point_segment(b0, a0, a1).0,
        point_segment(b1, a0, a1).0,
    ];
    d.into_iter().fold(f64::INFINITY, f64::min)
}

fn segments_intersect(a0: Point, a1: Point, b0: Point, b1: Point) -> bool {
    let cross = |o: Point, p: Point, q: Point| {
        (p.x - o.x) * (q.y - o.y) - (p.y - o.y) * (q.x - o.x)
    };
    let d1 = cross(b0, b1, a0);
    let d2 = cross(b0, b1, a1);
    let d3 = cross(a0, a1, b0);
    let d4 = cross(a0, a1, b1);
    (d1 * d2 < 0.0 && d3 * d4 < 0.0)
        || (d1 == 0.0 && on_segment(b0, b1, a0))
        || (d2 == 0.0 && on_segment(b0, b1, a1))
        || (d3 == 0.0 && on_segment(a0, a1, b0))
        || (d4 == 0.0 && on_segment(a0, a1, b1))
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// An oriented rectangle: center pose plus half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Point,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn new(center: Point, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            half_length: length * 0.5,
            half_width: width * 0.5,
        }
    }

    pub fn corners(&self) -> [Point; 4] {
        let (s, c) = self.heading.sin_cos();
        let ax = Point::new(c, s);
        let ay = Point::new(-s, c);
        let l = self.half_length;
        let w = self.half_width;
        [
            self.center.add(ax.scale(l)).add(ay.scale(w)),
            self.center.add(ax.scale(l)).add(ay.scale(-w)),
            self.center.add(ax.scale(-l)).add(ay.scale(-w)),
            self.center.add(ax.scale(-l)).add(ay.scale(w)),
        ]
    }

    fn axes(&self) -> [Point; 2] {
        let (s, c) = self.heading.sin_cos();
        [Point::new(c, s), Point::new(-s, c)]
    }

    /// Separating-axis overlap test.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let ca = self.corners();
        let cb = other.corners();
        for axis in self.axes().into_iter().chain(other.axes()) {
            let pa = project_interval(&ca, axis);
            let pb = project_interval(&cb, axis);
            if pa.1 < pb.0 || pb.1 < pa.0 {
                return false;
            }
        }
        true
    }

    /// Boundary-to-boundary gap. Zero when the rectangles overlap or touch.
    pub fn gap(&self, other: &OrientedRect) -> f64 {
        if self.overlaps(other) {
            return 0.0;
        }
        let ca = self.corners();
        let cb = other.corners();
        let mut best = f64::INFINITY;
        for i in 0..4 {
            for j in 0..4 {
                let d = segment_segment(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4]);
                if d < best {
                    best = d;
                }
            }
        }
        best
    }
}

fn project_interval(corners: &[Point; 4], axis: Point) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in corners {
        let v = c.dot(axis);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}
