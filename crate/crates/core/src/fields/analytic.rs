//! Constant-density analytic primitives and their compositions.

use serde::{Deserialize, Serialize};

use crate::geometry::{Ray, RigidTransform, Vec3};

fn v3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// A primitive tree. Leaves carry a constant interior density and an optional
/// emission color; unions take the densest child at each point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        density: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        emission: Option<[f64; 3]>,
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        density: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        emission: Option<[f64; 3]>,
    },
    Capsule {
        a: [f64; 3],
        b: [f64; 3],
        radius: f64,
        density: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        emission: Option<[f64; 3]>,
    },
    Union {
        children: Vec<Primitive>,
    },
    /// `pose` maps the child's local frame into the parent frame.
    Posed {
        pose: RigidTransform,
        child: std::boxed::Box<Primitive>,
    },
}

/// Density and emission at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub density: f64,
    pub emission: Option<[f64; 3]>,
}

const EMPTY: Sample = Sample {
    density: 0.0,
    emission: None,
};

impl Primitive {
    pub fn sphere(center: Vec3, radius: f64, density: f64) -> Self {
        Primitive::Sphere {
            center: center.into(),
            radius,
            density,
            emission: None,
        }
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3, density: f64) -> Self {
        Primitive::Box {
            center: center.into(),
            half_extents: half_extents.into(),
            density,
            emission: None,
        }
    }

    pub fn capsule(a: Vec3, b: Vec3, radius: f64, density: f64) -> Self {
        Primitive::Capsule {
            a: a.into(),
            b: b.into(),
            radius,
            density,
            emission: None,
        }
    }

    pub fn union(children: Vec<Primitive>) -> Self {
        Primitive::Union { children }
    }

    pub fn posed(self, pose: RigidTransform) -> Self {
        Primitive::Posed {
            pose,
            child: std::boxed::Box::new(self),
        }
    }

    /// Sets the emission color of every leaf.
    pub fn with_emission(mut self, color: [f64; 3]) -> Self {
        self.visit_leaves_mut(&mut |e| *e = Some(color));
        self
    }

    fn visit_leaves_mut(&mut self, f: &mut impl FnMut(&mut Option<[f64; 3]>)) {
        match self {
            Primitive::Sphere { emission, .. }
            | Primitive::Box { emission, .. }
            | Primitive::Capsule { emission, .. } => f(emission),
            Primitive::Union { children } => children.iter_mut().for_each(|c| c.visit_leaves_mut(f)),
            Primitive::Posed { child, .. } => child.visit_leaves_mut(f),
        }
    }

    pub fn has_emission(&self) -> bool {
        match self {
            Primitive::Sphere { emission, .. }
            | Primitive::Box { emission, .. }
            | Primitive::Capsule { emission, .. } => emission.is_some(),
            Primitive::Union { children } => children.iter().any(Primitive::has_emission),
            Primitive::Posed { child, .. } => child.has_emission(),
        }
    }

    /// Signed distance to the boundary (negative inside). Exact for leaves;
    /// unions take the minimum.
    pub fn sdf(&self, x: &Vec3) -> f64 {
        match self {
            Primitive::Sphere { center, radius, .. } => (x - v3(center)).norm() - radius,
            Primitive::Box {
                center, half_extents, ..
            } => {
                let q = (x - v3(center)).abs() - v3(half_extents);
                let outside = q.map(|c| c.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            Primitive::Capsule { a, b, radius, .. } => segment_distance(x, &v3(a), &v3(b)) - radius,
            Primitive::Union { children } => children.iter().map(|c| c.sdf(x)).fold(f64::INFINITY, f64::min),
            Primitive::Posed { pose, child } => child.sdf(&pose.inverse().apply(x)),
        }
    }

    pub fn sample(&self, x: &Vec3) -> Sample {
        match self {
            Primitive::Sphere { density, emission, .. }
            | Primitive::Box { density, emission, .. }
            | Primitive::Capsule { density, emission, .. } => {
                if self.sdf(x) <= 0.0 {
                    Sample {
                        density: *density,
                        emission: *emission,
                    }
                } else {
                    EMPTY
                }
            }
            Primitive::Union { children } => children.iter().fold(EMPTY, |best, c| {
                let s = c.sample(x);
                if s.density > best.density {
                    s
                } else {
                    best
                }
            }),
            Primitive::Posed { pose, child } => child.sample(&pose.inverse().apply(x)),
        }
    }

    pub fn density(&self, x: &Vec3) -> f64 {
        self.sample(x).density
    }

    /// Bounding spheres `(center, radius)` of all leaves in the parent frame.
    pub fn bounding_spheres(&self) -> Vec<(Vec3, f64)> {
        let mut out = Vec::new();
        self.collect_spheres(&RigidTransform::identity(), &mut out);
        out
    }

    fn collect_spheres(&self, pose: &RigidTransform, out: &mut Vec<(Vec3, f64)>) {
        match self {
            Primitive::Sphere { center, radius, .. } => out.push((pose.apply(&v3(center)), *radius)),
            Primitive::Box {
                center, half_extents, ..
            } => out.push((pose.apply(&v3(center)), v3(half_extents).norm())),
            Primitive::Capsule { a, b, radius, .. } => {
                let (a, b) = (v3(a), v3(b));
                out.push((pose.apply(&((a + b) * 0.5)), (a - b).norm() * 0.5 + radius));
            }
            Primitive::Union { children } => children.iter().for_each(|c| c.collect_spheres(pose, out)),
            Primitive::Posed { pose: local, child } => child.collect_spheres(&pose.compose(local), out),
        }
    }

    /// Conservative ray-parameter intervals outside of which the density is zero.
    pub fn ray_support(&self, ray: &Ray) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        self.collect_support(ray, &mut out);
        out
    }

    fn collect_support(&self, ray: &Ray, out: &mut Vec<(f64, f64)>) {
        match self {
            Primitive::Sphere { center, radius, .. } => out.extend(ray_sphere(ray, &v3(center), *radius)),
            Primitive::Box {
                center, half_extents, ..
            } => {
                let c = v3(center);
                let h = v3(half_extents);
                out.extend(ray_aabb(ray, &(c - h), &(c + h)));
            }
            Primitive::Capsule { a, b, radius, .. } => {
                let (a, b) = (v3(a), v3(b));
                out.extend(ray_sphere(ray, &((a + b) * 0.5), (a - b).norm() * 0.5 + radius));
            }
            Primitive::Union { children } => children.iter().for_each(|c| c.collect_support(ray, out)),
            Primitive::Posed { pose, child } => {
                let inv = pose.inverse();
                let local = Ray::new(inv.apply(&ray.origin), inv.apply_vector(ray.direction()));
                child.collect_support(&local, out);
            }
        }
    }
}

fn segment_distance(x: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 {
        ((x - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (x - (a + ab * s)).norm()
}

/// Parameter interval where a ray is inside a sphere (slightly padded).
pub fn ray_sphere(ray: &Ray, center: &Vec3, radius: f64) -> Option<(f64, f64)> {
    let oc = ray.origin - center;
    let b = oc.dot(ray.direction());
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let pad = 1e-9 * (1.0 + radius);
    Some((-b - s - pad, -b + s + pad))
}

/// Parameter interval where a ray is inside an axis-aligned box (slightly padded).
pub fn ray_aabb(ray: &Ray, lo: &Vec3, hi: &Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.direction()[a];
        if d.abs() < 1e-300 {
            if o < lo[a] || o > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - o) / d, (hi[a] - o) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    if t0 > t1 {
        return None;
    }
    let pad = 1e-9 * (1.0 + (hi - lo).norm());
    Some((t0 - pad, t1 + pad))
}
