//! Random affine augmentation of square single-channel images: rotation,
//! shifts, shear, zoom and horizontal flip, resampled bilinearly with zero
//! fill outside the source image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ROTATION_DEG: f64 = 25.0;
/// Limit for shifts, shear and zoom, as a fraction.
pub const MAX_FRACTION: f64 = 0.1;

/// Ranges augmentation parameters are drawn from. Each range is symmetric:
/// `rotation_deg = 25` draws angles from `[-25, 25]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rotation_deg: f64,
    pub width_shift: f64,
    pub height_shift: f64,
    pub shear: f64,
    pub zoom: f64,
    pub horizontal_flip: bool,
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn flip_only() -> Self {
        AugmentConfig {
            horizontal_flip: true,
            ..Self::default()
        }
    }

    /// Every transform at its maximum range.
    pub fn full() -> Self {
        AugmentConfig {
            rotation_deg: MAX_ROTATION_DEG,
            width_shift: MAX_FRACTION,
            height_shift: MAX_FRACTION,
            shear: MAX_FRACTION,
            zoom: MAX_FRACTION,
            horizontal_flip: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, max: f64| {
            if !(0.0..=max).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {v} outside [0, {max}]"
                )));
            }
            Ok(())
        };
        check("rotation_deg", self.rotation_deg, MAX_ROTATION_DEG)?;
        check("width_shift", self.width_shift, MAX_FRACTION)?;
        check("height_shift", self.height_shift, MAX_FRACTION)?;
        check("shear", self.shear, MAX_FRACTION)?;
        check("zoom", self.zoom, MAX_FRACTION)
    }

    /// Only flips are possible, so an image has at most two variants.
    pub fn is_flip_only(&self) -> bool {
        self.rotation_deg == 0.0
            && self.width_shift == 0.0
            && self.height_shift == 0.0
            && self.shear == 0.0
            && self.zoom == 0.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AffineParams {
        let mut sym = |r: f64| {
            if r > 0.0 {
                rng.random_range(-r..=r)
            } else {
                0.0
            }
        };
        let rotation_deg = sym(self.rotation_deg);
        let width_shift = sym(self.width_shift);
        let height_shift = sym(self.height_shift);
        let shear = sym(self.shear);
        let zoom = 1.0 + sym(self.zoom);
        let flip = self.horizontal_flip && rng.random_bool(0.5);
        AffineParams {
            rotation_deg,
            width_shift,
            height_shift,
            shear,
            zoom,
            flip,
        }
    }
}

/// One concrete transform. Shifts are fractions of the image side, `zoom`
/// is a scale factor (1 = unchanged).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub width_shift: f64,
    pub height_shift: f64,
    pub shear: f64,
    pub zoom: f64,
    pub flip: bool,
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams {
            rotation_deg: 0.0,
            width_shift: 0.0,
            height_shift: 0.0,
            shear: 0.0,
            zoom: 1.0,
            flip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad =
            |name: &str, v: f64| Err(Error::InvalidArgument(format!("{name} = {v} out of range")));
        if !(self.rotation_deg.abs() <= MAX_ROTATION_DEG) {
            return bad("rotation_deg", self.rotation_deg);
        }
        for (name, v) in [
            ("width_shift", self.width_shift),
            ("height_shift", self.height_shift),
            ("shear", self.shear),
            ("zoom - 1", self.zoom - 1.0),
        ] {
            if !(v.abs() <= MAX_FRACTION + 1e-12) {
                return bad(name, v);
            }
        }
        Ok(())
    }

    fn is_identity_geometry(&self) -> bool {
        self.rotation_deg == 0.0
            && self.width_shift == 0.0
            && self.height_shift == 0.0
            && self.shear == 0.0
            && self.zoom == 1.0
    }
}

fn flip_horizontal(image: &[f32], size: usize) -> Vec<f32> {
    image
        .chunks(size)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

/// Apply `params` to a `size x size` row-major image. The flip is applied
/// first, then the geometric transform about the image centre.
pub fn apply_affine(image: &[f32], size: usize, params: &AffineParams) -> Result<Vec<f32>> {
    if image.len() != size * size {
        return Err(Error::Shape(format!(
            "{} pixels for a {size}x{size} image",
            image.len()
        )));
    }
    params.validate()?;
    let src = if params.flip {
        flip_horizontal(image, size)
    } else {
        image.to_vec()
    };
    if params.is_identity_geometry() {
        return Ok(src);
    }
    // forward map: p' = R * S * Z * (p - c) + c + t; sample the inverse
    let (sin, cos) = params.rotation_deg.to_radians().sin_cos();
    let z = params.zoom;
    let sh = params.shear;
    // M = R * [[1, sh], [0, 1]] * z
    let m = [
        [cos * z, (cos * sh - sin) * z],
        [sin * z, (sin * sh + cos) * z],
    ];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let c = (size as f64 - 1.0) / 2.0;
    let tx = params.width_shift * size as f64;
    let ty = params.height_shift * size as f64;
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= size as isize || y >= size as isize {
            0.0
        } else {
            f64::from(src[y as usize * size + x as usize])
        }
    };
    let mut out = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let u = x as f64 - c - tx;
            let v = y as f64 - c - ty;
            let sx = inv[0][0] * u + inv[0][1] * v + c;
            let sy = inv[1][0] * u + inv[1][1] * v + c;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let val = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
                + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
            out[y * size + x] = val.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// Sample parameters from `config` with `rng` and apply them.
pub fn augment<R: Rng + ?Sized>(
    image: &[f32],
    size: usize,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<f32>> {
    config.validate()?;
    apply_affine(image, size, &config.sample(rng))
}
