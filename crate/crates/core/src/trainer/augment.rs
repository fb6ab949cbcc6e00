//! Random affine augmentation for single training images.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ROTATION_DEG: f64 = 30.0;
/// Shear angle bound, in degrees.
pub const SHEAR: f64 = 0.2;
/// Shift bound as a fraction of the image side.
pub const SHIFT: f64 = 0.2;

/// Draws for one augmented image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub shear_deg: f64,
    pub shift_rows: f64,
    pub shift_cols: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            rotation_deg: 0.0,
            shear_deg: 0.0,
            shift_rows: 0.0,
            shift_cols: 0.0,
            flip_horizontal: false,
            flip_vertical: false,
        }
    }

    pub fn sample<R: Rng>(h: usize, w: usize, rng: &mut R) -> Self {
        AugmentParams {
            rotation_deg: rng.random_range(-ROTATION_DEG..=ROTATION_DEG),
            shift_rows: rng.random_range(-SHIFT..=SHIFT) * h as f64,
            shift_cols: rng.random_range(-SHIFT..=SHIFT) * w as f64,
            shear_deg: rng.random_range(-SHEAR..=SHEAR),
            flip_horizontal: rng.random_bool(0.5),
            flip_vertical: rng.random_bool(0.5),
        }
    }
}

type Affine = [[f64; 3]; 2];

fn compose(a: &Affine, b: &Affine) -> Affine {
    let mut out = [[0.0; 3]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for c in 0..3 {
            row[c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + if c == 2 { a[r][2] } else { 0.0 };
        }
    }
    out
}

/// Output-to-input map in (row, col) coordinates about the image centre:
/// rotation, then shift, then shear.
fn inverse_map(p: &AugmentParams, h: usize, w: usize) -> Affine {
    let (s, c) = p.rotation_deg.to_radians().sin_cos();
    let rotation = [[c, -s, 0.0], [s, c, 0.0]];
    let shift = [[1.0, 0.0, p.shift_rows], [0.0, 1.0, p.shift_cols]];
    let sh = p.shear_deg.to_radians();
    let shear = [[1.0, -sh.sin(), 0.0], [0.0, sh.cos(), 0.0]];
    let (cr, cc) = (h as f64 / 2.0 - 0.5, w as f64 / 2.0 - 0.5);
    let to_origin = [[1.0, 0.0, -cr], [0.0, 1.0, -cc]];
    let back = [[1.0, 0.0, cr], [0.0, 1.0, cc]];
    compose(&back, &compose(&compose(&compose(&rotation, &shift), &shear), &to_origin))
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Apply fixed augmentation draws. Samples falling outside the image take
/// the nearest edge pixel; interpolation is bilinear.
pub fn apply(image: &Array3<f32>, p: &AugmentParams) -> Array3<f32> {
    let (h, w, ch) = image.dim();
    let mut out = Array3::zeros((h, w, ch));
    if h == 0 || w == 0 {
        return out;
    }
    let m = inverse_map(p, h, w);
    for r in 0..h {
        for c in 0..w {
            let (rf, cf) = (r as f64, c as f64);
            let sr = (m[0][0] * rf + m[0][1] * cf + m[0][2]).clamp(0.0, (h - 1) as f64);
            let sc = (m[1][0] * rf + m[1][1] * cf + m[1][2]).clamp(0.0, (w - 1) as f64);
            let (r0, c0) = (sr.floor() as usize, sc.floor() as usize);
            let (r1, c1) = ((r0 + 1).min(h - 1), (c0 + 1).min(w - 1));
            let (tr, tc) = ((sr - r0 as f64) as f32, (sc - c0 as f64) as f32);
            let dst_r = if p.flip_vertical { h - 1 - r } else { r };
            let dst_c = if p.flip_horizontal { w - 1 - c } else { c };
            for k in 0..ch {
                let top = lerp(image[[r0, c0, k]], image[[r0, c1, k]], tc);
                let bottom = lerp(image[[r1, c0, k]], image[[r1, c1, k]], tc);
                out[[dst_r, dst_c, k]] = lerp(top, bottom, tr);
            }
        }
    }
    out
}

/// Randomly rotate (±30°), shear (0.2°), shift (±20 % per axis) and flip
/// `image` (height, width, channels), deterministically in `seed`.
pub fn augment(image: &Array3<f32>, seed: u64) -> Array3<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, _) = image.dim();
    apply(image, &AugmentParams::sample(h, w, &mut rng))
}
