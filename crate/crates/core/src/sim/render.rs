//! Egocentric first-person rendering by column-wise ray casting.
//!
//! One ray per image column is marched through the grid (DDA) until it hits
//! a wall. The column is painted with the wall texture's palette color,
//! dimmed with distance, between a flat ceiling and floor. Output pixels are
//! quantized to u8, which makes observations byte-comparable and cheap to
//! store in the replay buffer.

use crate::autodiff::tensor::Tensor;
use crate::sim::map::OccupancyMap;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SimParams {
    pub obs_width: usize,
    pub obs_height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Number of discrete headings (8 = 45 degree turns).
    pub headings: usize,
    /// Append the collision flag as an extra observation input channel.
    pub collision_channel: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            obs_width: 16,
            obs_height: 16,
            fov_deg: 90.0,
            headings: 8,
            collision_channel: false,
        }
    }
}

impl SimParams {
    pub fn heading_angle(&self, heading: usize) -> f64 {
        heading as f64 * TAU / self.headings as f64
    }

    /// Unit displacement of a forward step, rounded to the grid.
    pub fn heading_delta(&self, heading: usize) -> (i64, i64) {
        let a = self.heading_angle(heading);
        (a.cos().round() as i64, a.sin().round() as i64)
    }

    /// Length of the flattened model input vector.
    pub fn obs_dim(&self) -> usize {
        self.obs_width * self.obs_height * 3 + usize::from(self.collision_channel)
    }
}

/// Rendered egocentric view plus the collision flag of the preceding action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, 256 levels per channel.
    pub pixels: Vec<u8>,
    pub collision: bool,
}

impl Observation {
    /// Flatten to a [1, obs_dim] model input with channels scaled to [0,1].
    pub fn to_input(&self, params: &SimParams) -> Tensor {
        let mut data: Vec<f64> = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        if params.collision_channel {
            data.push(f64::from(self.collision));
        }
        Tensor::row(data)
    }
}

/// Where one column's ray ended up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub cell: (usize, usize),
    pub texture: u8,
    /// Fisheye-corrected distance used for wall height and shading.
    pub distance: f64,
}

/// Deterministic texture palette: golden-angle hue wheel, distinct for
/// every id so differently textured walls never render identically.
pub fn palette(texture: u8) -> (f64, f64, f64) {
    let hue = (texture as f64 * 0.618_033_988_749_895).fract();
    hsv_to_rgb(hue, 0.65, 0.9)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

const CEILING: (f64, f64, f64) = (0.13, 0.13, 0.16);
const FLOOR: (f64, f64, f64) = (0.30, 0.28, 0.26);

fn column_angle(params: &SimParams, column: usize) -> f64 {
    let fov = params.fov_deg.to_radians();
    ((column as f64 + 0.5) / params.obs_width as f64 - 0.5) * fov
}

/// March a ray from the cell center until it hits a wall. The border
/// guarantees termination. Returns the hit and every free cell traversed.
fn march(map: &OccupancyMap, origin: (f64, f64), angle: f64) -> ((usize, usize), u8, f64, Vec<(usize, usize)>) {
    let (dx, dy) = (angle.cos(), angle.sin());
    let (mut cx, mut cy) = (origin.0 as i64, origin.1 as i64);
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    // Distance along the ray to the first x/y grid line, then per-cell strides.
    let mut t_max_x = if dx != 0.0 {
        let next = if dx > 0.0 { cx as f64 + 1.0 } else { cx as f64 };
        (next - origin.0) / dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy != 0.0 {
        let next = if dy > 0.0 { cy as f64 + 1.0 } else { cy as f64 };
        (next - origin.1) / dy
    } else {
        f64::INFINITY
    };
    let t_delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };

    let mut traversed = vec![(cx as usize, cy as usize)];
    loop {
        let t = if t_max_x < t_max_y {
            cx += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            cy += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        let (col, row) = (cx as usize, cy as usize);
        match map.cell(col, row) {
            crate::sim::map::Cell::Wall { texture } => {
                return ((col, row), texture, t.max(1e-6), traversed);
            }
            crate::sim::map::Cell::Free => traversed.push((col, row)),
        }
    }
}

/// Per-column ray hits for a pose, fisheye-corrected.
pub fn ray_hits(map: &OccupancyMap, col: usize, row: usize, heading: usize, params: &SimParams) -> Vec<RayHit> {
    let origin = (col as f64 + 0.5, row as f64 + 0.5);
    let base = params.heading_angle(heading);
    (0..params.obs_width)
        .map(|c| {
            let offset = column_angle(params, c);
            let (cell, texture, dist, _) = march(map, origin, base + offset);
            RayHit { cell, texture, distance: (dist * offset.cos()).max(1e-6) }
        })
        .collect()
}

/// Every cell any of the pose's rays passes through or hits. Used to decide
/// whether a viewpoint is affected by a set of changed cells.
pub fn touched_cells(
    map: &OccupancyMap,
    col: usize,
    row: usize,
    heading: usize,
    params: &SimParams,
) -> std::collections::BTreeSet<(usize, usize)> {
    let origin = (col as f64 + 0.5, row as f64 + 0.5);
    let base = params.heading_angle(heading);
    let mut cells = std::collections::BTreeSet::new();
    for c in 0..params.obs_width {
        let (hit, _, _, traversed) = march(map, origin, base + column_angle(params, c));
        cells.extend(traversed);
        cells.insert(hit);
    }
    cells
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Render the egocentric view at a pose. Pure in (map, pose, params).
pub fn render(map: &OccupancyMap, col: usize, row: usize, heading: usize, params: &SimParams) -> Observation {
    let (w, h) = (params.obs_width, params.obs_height);
    let hits = ray_hits(map, col, row, heading, params);
    let mut pixels = vec![0u8; w * h * 3];
    for (c, hit) in hits.iter().enumerate() {
        let wall_span = (h as f64 / hit.distance).min(h as f64);
        let top = ((h as f64 - wall_span) / 2.0).round() as usize;
        let bottom = (top + wall_span.round() as usize).min(h);
        let shade = (1.0 / (1.0 + 0.3 * hit.distance)).clamp(0.15, 1.0);
        let (tr, tg, tb) = palette(hit.texture);
        for r in 0..h {
            let (cr, cg, cb) = if r < top {
                CEILING
            } else if r < bottom {
                (tr * shade, tg * shade, tb * shade)
            } else {
                FLOOR
            };
            let idx = (r * w + c) * 3;
            pixels[idx] = quantize(cr);
            pixels[idx + 1] = quantize(cg);
            pixels[idx + 2] = quantize(cb);
        }
    }
    Observation { width: w, height: h, pixels, collision: false }
}
