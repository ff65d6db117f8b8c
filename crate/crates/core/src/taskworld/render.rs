use ndarray::Array3;
use rand::Rng;

use super::env::WorldState;
use super::task::{Shape, TaskSpec, Verb};
use crate::seeds::rng_from;

/// Rendered image side length in pixels.
pub const FRAME_SIZE: usize = 64;
/// H x W x 3 intensities in [0, 1].
pub type Frame = Array3<f32>;

const BACKGROUND: u8 = 128;
const GOAL_OUTLINE: u8 = 40;
const AGENT_LEVEL: u8 = 255;
const OBJECT_HALF: f64 = 0.055;
const AGENT_RADIUS: f64 = 0.04;
const OUTLINE_WIDTH: f64 = 0.022;

fn in_shape(shape: Shape, dx: f64, dy: f64) -> bool {
    match shape {
        Shape::Square => dx.abs() <= OBJECT_HALF && dy.abs() <= OBJECT_HALF,
        Shape::Circle => dx * dx + dy * dy <= OBJECT_HALF * OBJECT_HALF,
        Shape::Triangle => {
            // upright triangle: apex at +y, base at -0.5*h
            let h = OBJECT_HALF;
            if dy < -0.5 * h || dy > h {
                return false;
            }
            // width shrinks linearly from base to apex
            let frac = (h - dy) / (1.5 * h);
            dx.abs() <= 0.866 * h * frac
        }
    }
}

/// Deterministic raster: gray background, goal-region outline (push tasks),
/// colored object shape, white agent disc on top. Intensities are multiples of
/// 1/255 so frames round-trip exactly through byte storage.
pub fn render(state: &WorldState, task: &TaskSpec) -> Frame {
    let n = FRAME_SIZE;
    let mut img = Array3::<f32>::zeros((n, n, 3));
    let obj_rgb = task.object_color.rgb();
    let sr = task.success_radius;
    for r in 0..n {
        let y = 1.0 - (r as f64 + 0.5) / n as f64;
        for c in 0..n {
            let x = (c as f64 + 0.5) / n as f64;
            let mut px = [BACKGROUND; 3];
            if task.verb == Verb::Push {
                let d = super::env::dist([x, y], state.goal_pos);
                if d <= sr && d >= sr - OUTLINE_WIDTH {
                    px = [GOAL_OUTLINE; 3];
                }
            }
            let odx = x - state.object_pos[0];
            let ody = y - state.object_pos[1];
            if in_shape(task.object_shape, odx, ody) {
                px = obj_rgb;
            }
            let adx = x - state.agent_pos[0];
            let ady = y - state.agent_pos[1];
            if adx * adx + ady * ady <= AGENT_RADIUS * AGENT_RADIUS {
                px = [AGENT_LEVEL; 3];
            }
            for ch in 0..3 {
                img[[r, c, ch]] = px[ch] as f32 / 255.0;
            }
        }
    }
    img
}

/// Geometric mask of pixels the object shape covers (used by tests and
/// rendering diagnostics).
pub fn object_mask(state: &WorldState, task: &TaskSpec) -> Vec<(usize, usize)> {
    let n = FRAME_SIZE;
    let mut mask = Vec::new();
    for r in 0..n {
        let y = 1.0 - (r as f64 + 0.5) / n as f64;
        for c in 0..n {
            let x = (c as f64 + 0.5) / n as f64;
            if in_shape(
                task.object_shape,
                x - state.object_pos[0],
                y - state.object_pos[1],
            ) {
                mask.push((r, c));
            }
        }
    }
    mask
}

/// `clip(frame * brightness + U[0, noise_high) per element, 0, 1)`, seeded.
pub fn perturb_frame(frame: &Frame, brightness: f64, noise_high: f64, seed: u64) -> Frame {
    assert!(brightness >= 0.0 && noise_high >= 0.0);
    let mut rng = rng_from(seed);
    let b = brightness as f32;
    let mut out = frame.clone();
    if noise_high > 0.0 {
        let high = noise_high as f32;
        out.mapv_inplace(|v| (v * b + rng.random_range(0.0..high)).clamp(0.0, 1.0));
    } else if brightness != 1.0 {
        out.mapv_inplace(|v| (v * b).clamp(0.0, 1.0));
    }
    out
}
