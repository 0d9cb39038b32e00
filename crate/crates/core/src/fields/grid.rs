use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

/// Placement of a regular grid: node `(i, j, k)` sits at `origin + (i, j, k) * spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub res_x: usize,
    pub res_y: usize,
    pub res_z: usize,
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
}

impl GridSpec {
    /// A `res³` grid spanning the cube `[-half, half]³`.
    pub fn cube(res: usize, half: f64) -> Self {
        Self::cube_dims([res, res, res], half)
    }

    pub fn cube_dims(dims: [usize; 3], half: f64) -> Self {
        let step = |n: usize| if n > 1 { 2.0 * half / (n - 1) as f64 } else { 0.0 };
        Self {
            res_x: dims[0],
            res_y: dims[1],
            res_z: dims[2],
            origin: [-half, -half, -half],
            spacing: [step(dims[0]), step(dims[1]), step(dims[2])],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.res_x, self.res_y, self.res_z]
    }

    pub fn len(&self) -> usize {
        self.res_x * self.res_y * self.res_z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// x-fastest linear index.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.res_x * (j + self.res_y * k)
    }

    pub fn unindex(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.res_x;
        let j = (idx / self.res_x) % self.res_y;
        let k = idx / (self.res_x * self.res_y);
        [i, j, k]
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    pub fn node_at(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.unindex(idx);
        self.node(i, j, k)
    }

    pub fn max_corner(&self) -> Vec3 {
        self.node(self.res_x - 1, self.res_y - 1, self.res_z - 1)
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().filter(|s| *s > 0.0).fold(f64::INFINITY, f64::min)
    }

    /// Continuous grid coordinates of `x`, or `None` outside the node hull.
    fn local(&self, x: &Vec3) -> Option<[f64; 3]> {
        let dims = self.dims();
        let mut out = [0.0; 3];
        for a in 0..3 {
            if dims[a] == 1 {
                if (x[a] - self.origin[a]).abs() > 1e-12 {
                    return None;
                }
                continue;
            }
            let g = (x[a] - self.origin[a]) / self.spacing[a];
            if !(g >= 0.0 && g <= (dims[a] - 1) as f64) {
                return None;
            }
            out[a] = g;
        }
        Some(out)
    }

    /// Index of the node whose Voronoi cell contains `x`; `None` outside the
    /// grid's cells.
    pub fn nearest(&self, x: &Vec3) -> Option<[usize; 3]> {
        let dims = self.dims();
        let mut out = [0usize; 3];
        for a in 0..3 {
            let g = if self.spacing[a] > 0.0 {
                ((x[a] - self.origin[a]) / self.spacing[a]).round()
            } else {
                0.0
            };
            if !(g >= 0.0 && g < dims[a] as f64) {
                return None;
            }
            out[a] = g as usize;
        }
        Some(out)
    }
}

/// Dense scalar field on a [`GridSpec`], queried by trilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub spec: GridSpec,
    pub values: Vec<f32>,
}

impl ScalarGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
        }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec3) -> f32 + Sync) -> Self {
        use rayon::prelude::*;
        let values = (0..spec.len()).into_par_iter().map(|idx| f(spec.node_at(idx))).collect();
        Self { spec, values }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.spec.index(i, j, k)]
    }

    /// Trilinear interpolation; zero outside the grid's node hull.
    pub fn sample(&self, x: &Vec3) -> f64 {
        let s = &self.spec;
        if s.res_x > 1 && s.res_y > 1 && s.res_z > 1 {
            self.sample_full(x)
        } else {
            self.sample_degenerate(x)
        }
    }

    /// Samples at `x` and at `x ± h` along each axis, in the order
    /// centre, +x, −x, +y, −y, +z, −z.
    pub fn sample_stencil(&self, x: &Vec3, h: f64) -> [f64; 7] {
        let s = &self.spec;
        if !(s.res_x > 1 && s.res_y > 1 && s.res_z > 1) {
            return [
                Vec3::zeros(),
                Vec3::new(h, 0.0, 0.0),
                Vec3::new(-h, 0.0, 0.0),
                Vec3::new(0.0, h, 0.0),
                Vec3::new(0.0, -h, 0.0),
                Vec3::new(0.0, 0.0, h),
                Vec3::new(0.0, 0.0, -h),
            ]
            .map(|o| self.sample_degenerate(&(x + o)));
        }
        // cell and fraction of the −h, centre and +h coordinate on each axis
        let axis = |a: usize, n: usize| {
            let g = (x[a] - s.origin[a]) / s.spacing[a];
            let d = h / s.spacing[a];
            (cell_of(g - d, n), cell_of(g, n), cell_of(g + d, n))
        };
        let (xm, x0, xp) = axis(0, s.res_x);
        let (ym, y0, yp) = axis(1, s.res_y);
        let (zm, z0, zp) = axis(2, s.res_z);
        let at = |cx: Option<(usize, f64)>, cy: Option<(usize, f64)>, cz: Option<(usize, f64)>| match (cx, cy, cz) {
            (Some(cx), Some(cy), Some(cz)) => self.lerp_cell(cx, cy, cz),
            _ => 0.0,
        };
        [
            at(x0, y0, z0),
            at(xp, y0, z0),
            at(xm, y0, z0),
            at(x0, yp, z0),
            at(x0, ym, z0),
            at(x0, y0, zp),
            at(x0, y0, zm),
        ]
    }

    #[inline(always)]
    fn lerp_cell(&self, (ix, fx): (usize, f64), (iy, fy): (usize, f64), (iz, fz): (usize, f64)) -> f64 {
        let sy = self.spec.res_x;
        let sz = sy * self.spec.res_y;
        let i0 = ix + sy * iy + sz * iz;
        let v = &self.values[i0..i0 + sz + sy + 2];
        let c = |o: usize| v[o] as f64;
        let c00 = c(0) + (c(1) - c(0)) * fx;
        let c10 = c(sy) + (c(sy + 1) - c(sy)) * fx;
        let c01 = c(sz) + (c(sz + 1) - c(sz)) * fx;
        let c11 = c(sz + sy) + (c(sz + sy + 1) - c(sz + sy)) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        c0 + (c1 - c0) * fz
    }

    /// `sample` for grids with at least two nodes along every axis.
    #[inline(always)]
    fn sample_full(&self, x: &Vec3) -> f64 {
        let s = &self.spec;
        self.sample_local([
            (x.x - s.origin[0]) / s.spacing[0],
            (x.y - s.origin[1]) / s.spacing[1],
            (x.z - s.origin[2]) / s.spacing[2],
        ])
    }

    /// Trilinear interpolation at continuous grid coordinates `g`.
    #[inline(always)]
    fn sample_local(&self, g: [f64; 3]) -> f64 {
        let s = &self.spec;
        match (cell_of(g[0], s.res_x), cell_of(g[1], s.res_y), cell_of(g[2], s.res_z)) {
            (Some(cx), Some(cy), Some(cz)) => self.lerp_cell(cx, cy, cz),
            _ => 0.0,
        }
    }

    fn sample_degenerate(&self, x: &Vec3) -> f64 {
        let Some(g) = self.spec.local(x) else {
            return 0.0;
        };
        let dims = self.spec.dims();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            if dims[a] == 1 {
                continue;
            }
            let cell = (g[a].floor() as usize).min(dims[a] - 2);
            base[a] = cell;
            frac[a] = g[a] - cell as f64;
        }
        let step = [
            usize::from(dims[0] > 1),
            self.spec.res_x * usize::from(dims[1] > 1),
            self.spec.res_x * self.spec.res_y * usize::from(dims[2] > 1),
        ];
        let i0 = self.spec.index(base[0], base[1], base[2]);
        let v = &self.values;
        let c = |o: usize| v[i0 + o] as f64;
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let c00 = c(0) * (1.0 - fx) + c(step[0]) * fx;
        let c10 = c(step[1]) * (1.0 - fx) + c(step[1] + step[0]) * fx;
        let c01 = c(step[2]) * (1.0 - fx) + c(step[2] + step[0]) * fx;
        let c11 = c(step[2] + step[1]) * (1.0 - fx) + c(step[2] + step[1] + step[0]) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }

    /// Value of the node whose cell contains `x`; zero outside.
    pub fn sample_nearest(&self, x: &Vec3) -> f32 {
        match self.spec.nearest(x) {
            Some([i, j, k]) => self.get(i, j, k),
            None => 0.0,
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Lower node and fraction along an axis of `n ≥ 2` nodes; `None` outside.
#[inline(always)]
fn cell_of(g: f64, n: usize) -> Option<(usize, f64)> {
    if !(g >= 0.0 && g <= (n - 1) as f64) {
        return None;
    }
    let i = (g as usize).min(n - 2);
    Some((i, g - i as f64))
}

/// Interleaved RGB values on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbGrid {
    pub spec: GridSpec,
    pub values: Vec<[f32; 3]>,
}

impl RgbGrid {
    pub fn sample(&self, x: &Vec3) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = trilinear_channel(self, x, c);
        }
        out
    }
}

fn trilinear_channel(grid: &RgbGrid, x: &Vec3, c: usize) -> f64 {
    let spec = grid.spec;
    let Some(g) = spec.local(x) else {
        return 0.0;
    };
    let dims = spec.dims();
    let mut acc = 0.0;
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        if dims[a] > 1 {
            base[a] = (g[a].floor() as usize).min(dims[a] - 2);
            frac[a] = g[a] - base[a] as f64;
        }
    }
    for corner in 0..8usize {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let bit = (corner >> a) & 1;
            if dims[a] == 1 && bit == 1 {
                w = 0.0;
            }
            idx[a] = base[a] + bit;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w > 0.0 {
            acc += w * grid.values[spec.index(idx[0], idx[1], idx[2])][c] as f64;
        }
    }
    acc
}
