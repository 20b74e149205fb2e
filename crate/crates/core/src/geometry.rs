//! Planar primitives: vectors, segments and oriented boxes.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::num::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2<R> {
    pub x: R,
    pub y: R,
}

impl<R: Real> Vec2<R> {
    #[inline]
    pub fn new(x: R, y: R) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(R::zero(), R::zero())
    }

    /// Unit vector at `angle` radians.
    #[inline]
    pub fn from_angle(angle: R) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c, s)
    }

    #[inline]
    pub fn dot(self, o: Self) -> R {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Self) -> R {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_sq(self) -> R {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> R {
        self.norm_sq().sqrt()
    }

    /// Counter-clockwise normal.
    #[inline]
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    /// Rotates by the angle whose cosine and sine are given.
    #[inline]
    pub fn rotate_cs(self, c: R, s: R) -> Self {
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    #[inline]
    pub fn rotate(self, angle: R) -> Self {
        let (s, c) = angle.sin_cos();
        self.rotate_cs(c, s)
    }

    #[inline]
    pub fn lerp(self, o: Self, t: R) -> Self {
        self + (o - self) * t
    }

    pub fn cast<S: Real>(self) -> Vec2<S> {
        Vec2::new(S::lit(self.x.as_f64()), S::lit(self.y.as_f64()))
    }
}

impl<R: Real> Add for Vec2<R> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<R: Real> AddAssign for Vec2<R> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl<R: Real> Sub for Vec2<R> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<R: Real> Mul<R> for Vec2<R> {
    type Output = Self;
    #[inline]
    fn mul(self, k: R) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

impl<R: Real> Neg for Vec2<R> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Closest point on segment `[a, b]` to `p`.
#[derive(Clone, Copy, Debug)]
pub struct SegmentHit<R> {
    /// Segment parameter in `[0, 1]`.
    pub t: R,
    pub point: Vec2<R>,
    pub dist_sq: R,
}

pub fn closest_on_segment<R: Real>(p: Vec2<R>, a: Vec2<R>, b: Vec2<R>) -> SegmentHit<R> {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    let t = if len_sq > R::zero() {
        crate::num::clamp((p - a).dot(ab) / len_sq, R::zero(), R::one())
    } else {
        R::zero()
    };
    let point = a + ab * t;
    SegmentHit {
        t,
        point,
        dist_sq: (p - point).norm_sq(),
    }
}

fn orient<R: Real>(a: Vec2<R>, b: Vec2<R>, c: Vec2<R>) -> R {
    (b - a).cross(c - a)
}

fn on_segment<R: Real>(a: Vec2<R>, b: Vec2<R>, p: Vec2<R>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, including collinear overlap.
pub fn segments_intersect<R: Real>(p1: Vec2<R>, p2: Vec2<R>, q1: Vec2<R>, q2: Vec2<R>) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    let z = R::zero();
    if ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z)) {
        return true;
    }
    (d1 == z && on_segment(q1, q2, p1))
        || (d2 == z && on_segment(q1, q2, p2))
        || (d3 == z && on_segment(p1, p2, q1))
        || (d4 == z && on_segment(p1, p2, q2))
}

/// Point containment in a convex polygon of either winding. Boundary counts as inside.
pub fn point_in_convex<R: Real>(poly: &[Vec2<R>], p: Vec2<R>) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut pos = false;
    let mut neg = false;
    for i in 0..n {
        let c = orient(poly[i], poly[(i + 1) % n], p);
        if c > R::zero() {
            pos = true;
        } else if c < R::zero() {
            neg = true;
        }
        if pos && neg {
            return false;
        }
    }
    true
}

/// Oriented rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obb<R> {
    pub center: Vec2<R>,
    pub heading: R,
    pub half_length: R,
    pub half_width: R,
}

impl<R: Real> Obb<R> {
    pub fn new(center: Vec2<R>, heading: R, length: R, width: R) -> Self {
        let half = R::lit(0.5);
        Self {
            center,
            heading,
            half_length: length * half,
            half_width: width * half,
        }
    }

    /// Grows every side by `margin`.
    pub fn inflated(mut self, margin: R) -> Self {
        self.half_length += margin;
        self.half_width += margin;
        self
    }

    /// Corners counter-clockwise starting front-left.
    pub fn corners(&self) -> [Vec2<R>; 4] {
        let f = Vec2::from_angle(self.heading);
        let l = f.perp();
        let fl = f * self.half_length;
        let lw = l * self.half_width;
        let c = self.center;
        [c + fl + lw, c - fl + lw, c - fl - lw, c + fl - lw]
    }

    fn axes(&self) -> [Vec2<R>; 2] {
        let f = Vec2::from_angle(self.heading);
        [f, f.perp()]
    }

    fn project_onto(&self, axis: Vec2<R>) -> (R, R) {
        let c = self.center.dot(axis);
        let [f, l] = self.axes();
        let r = self.half_length * f.dot(axis).abs() + self.half_width * l.dot(axis).abs();
        (c - r, c + r)
    }

    /// Separating-axis test; touching boxes overlap.
    pub fn overlaps(&self, other: &Self) -> bool {
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        for axis in [a0, a1, b0, b1] {
            let (min_a, max_a) = self.project_onto(axis);
            let (min_b, max_b) = other.project_onto(axis);
            if max_a < min_b || max_b < min_a {
                return false;
            }
        }
        true
    }

    /// Euclidean distance between the two rectangles, zero when they overlap.
    pub fn distance(&self, other: &Self) -> R {
        if self.overlaps(other) {
            return R::zero();
        }
        let ca = self.corners();
        let cb = other.corners();
        let mut best = R::infinity();
        for (pts, poly) in [(&ca, &cb), (&cb, &ca)] {
            for &p in pts.iter() {
                for i in 0..4 {
                    let h = closest_on_segment(p, poly[i], poly[(i + 1) % 4]);
                    best = best.min(h.dist_sq);
                }
            }
        }
        best.sqrt()
    }
}
