use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    /// Per-axis translation bound in pixels.
    pub max_translate_px: usize,
    pub rotate_range_deg: [f64; 2],
    pub scale_range: [f64; 2],
    pub fill_value: f64,
}

impl AugmentParams {
    /// 25 px at 512 px, scaled to `resolution`; rotation within 15 degrees
    /// and scale between 0.8 and 1.2.
    pub fn for_resolution(resolution: usize) -> Self {
        AugmentParams {
            max_translate_px: (25.0 * resolution as f64 / 512.0).round() as usize,
            rotate_range_deg: [-15.0, 15.0],
            scale_range: [0.8, 1.2],
            fill_value: 0.0,
        }
    }

    pub fn identity() -> Self {
        AugmentParams {
            max_translate_px: 0,
            rotate_range_deg: [0.0, 0.0],
            scale_range: [1.0, 1.0],
            fill_value: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [r0, r1] = self.rotate_range_deg;
        let [s0, s1] = self.scale_range;
        if !(r0 <= r1) || !(s0 <= s1) || !(s0 > 0.0) || !(0.0..=1.0).contains(&self.fill_value) {
            return Err(Error::config(format!("invalid augmentation ranges {self:?}")));
        }
        Ok(())
    }
}

/// Sample one translation, rotation and scale and apply them.
pub fn augment(image: &Image, params: &AugmentParams, rng: &mut Rng) -> Image {
    let k = params.max_translate_px as f64;
    let tx = rng.random_range(-k..=k);
    let ty = rng.random_range(-k..=k);
    let [r0, r1] = params.rotate_range_deg;
    let [s0, s1] = params.scale_range;
    let angle = rng.random_range(r0..=r1);
    let scale = rng.random_range(s0..=s1);
    affine_transform(image, tx, ty, angle, scale, params.fill_value)
}

/// Scale and rotate about the image centre, then shift by `(tx, ty)`.
/// Bilinear sampling; source positions outside the image read `fill`.
pub fn affine_transform(image: &Image, tx: f64, ty: f64, angle_deg: f64, scale: f64, fill: f64) -> Image {
    let side = image.side();
    let c = (side as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let sample = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= side as isize || y >= side as isize {
            fill
        } else {
            f64::from(image.get(x as usize, y as usize))
        }
    };
    let mut out = Image::zeros(side);
    for qy in 0..side {
        for qx in 0..side {
            // inverse map: undo translation, rotation, then scale
            let (dx, dy) = (qx as f64 - c - tx, qy as f64 - c - ty);
            let sx = (cos * dx + sin * dy) / scale + c;
            let sy = (-sin * dx + cos * dy) / scale + c;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let mut v = sample(x0, y0) * (1.0 - fx) * (1.0 - fy);
            if fx > 0.0 {
                v += sample(x0 + 1, y0) * fx * (1.0 - fy);
            }
            if fy > 0.0 {
                v += sample(x0, y0 + 1) * (1.0 - fx) * fy;
                if fx > 0.0 {
                    v += sample(x0 + 1, y0 + 1) * fx * fy;
                }
            }
            out.pixels_mut()[qy * side + qx] = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}
