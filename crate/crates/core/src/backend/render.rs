//! Differentiable renderer for the toy face domain and its inverse, a
//! moment-based attribute extractor.
//!
//! A face is a soft skin ellipse with five dark parts drawn as Gaussian
//! tubes: two eyes, a curved mouth and two tilted brows. Every part lives in
//! its own horizontal band so the extractor can read each attribute from
//! alpha-weighted moments inside a fixed window.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::types::ImageTensor;

pub const NUM_ATTRIBUTES: usize = 4;
pub const ATTRIBUTE_NAMES: [&str; NUM_ATTRIBUTES] =
    ["mouth_curvature", "mouth_openness", "eye_openness", "brow_angle"];

pub const MOUTH_CURVATURE: usize = 0;
pub const MOUTH_OPENNESS: usize = 1;
pub const EYE_OPENNESS: usize = 2;
pub const BROW_ANGLE: usize = 3;

pub const TOY_RESOLUTION: usize = 64;

const SKIN: [f64; 3] = [0.8, 0.45, 0.25];
const BACKGROUND: [f64; 3] = [-0.55, -0.35, -0.1];
const INK: [f64; 3] = [-0.85, -0.9, -0.8];

const FACE_CENTER: (f64, f64) = (32.0, 33.0);
const FACE_RADII: (f64, f64) = (26.0, 30.0);
const FACE_EDGE: f64 = 0.06;

const EYE_Y: f64 = 27.0;
const EYE_XS: [f64; 2] = [22.0, 42.0];
const EYE_AMP: f64 = 0.95;
const EYE_SX: f64 = 3.0;
const EYE_SY0: f64 = 0.5;
const EYE_SY1: f64 = 2.0;
const EYE_ROWS: (usize, usize) = (20, 35);
const EYE_COLS: [(usize, usize); 2] = [(12, 32), (32, 52)];

const MOUTH_X: f64 = 32.0;
const MOUTH_Y: f64 = 47.0;
const MOUTH_AMP: f64 = 0.9;
const MOUTH_ENV: f64 = 8.0;
const MOUTH_S0: f64 = 0.6;
const MOUTH_S1: f64 = 1.8;
const MOUTH_CURV_GAIN: f64 = 0.05;
const MOUTH_ROWS: (usize, usize) = (35, 62);
const MOUTH_COLS: (usize, usize) = (8, 56);

const BROW_Y: f64 = 13.0;
const BROW_XS: [f64; 2] = [22.0, 42.0];
const BROW_AMP: f64 = 0.9;
const BROW_ENV: f64 = 4.0;
const BROW_THICK: f64 = 1.0;
const BROW_SLOPE_GAIN: f64 = 0.8;
const BROW_ROWS: (usize, usize) = (3, 20);
const BROW_COLS: [(usize, usize); 2] = [(12, 32), (32, 52)];

#[inline]
fn gauss(x: f64, s: f64) -> f64 {
    (-(x * x) / (2.0 * s * s)).exp()
}

#[inline]
fn px(i: usize) -> f64 {
    i as f64 + 0.5
}

/// Attribute-to-geometry maps.
fn eye_sigma(a: f64) -> f64 {
    EYE_SY0 + EYE_SY1 * a
}
fn mouth_sigma(a: f64) -> f64 {
    MOUTH_S0 + MOUTH_S1 * a
}
fn mouth_curvature(a: f64) -> f64 {
    MOUTH_CURV_GAIN * (a - 0.5)
}
fn brow_slope(a: f64) -> f64 {
    BROW_SLOPE_GAIN * (a - 0.5)
}
/// Left brow rises toward the face center for positive slope; the right brow mirrors it.
fn brow_side_sign(side: usize) -> f64 {
    if side == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Renders attribute vectors into 64×64 RGB faces.
#[derive(Debug, Clone)]
pub struct FaceRenderer {
    background: Array3<f64>,
    /// Horizontal envelopes per column: eyes, mouth and brows.
    eye_x: [[f64; TOY_RESOLUTION]; 2],
    mouth_x: [f64; TOY_RESOLUTION],
    brow_x: [[f64; TOY_RESOLUTION]; 2],
}

impl Default for FaceRenderer {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-pixel part opacities for one render.
struct PartAlphas {
    /// [eyes, mouth, brows], each H × W
    parts: [Array2<f64>; 3],
    total: Array2<f64>,
}

impl FaceRenderer {
    pub fn new() -> Self {
        let n = TOY_RESOLUTION;
        let background = Array3::from_shape_fn((n, n, 3), |(y, x, c)| {
            let dx = (px(x) - FACE_CENTER.0) / FACE_RADII.0;
            let dy = (px(y) - FACE_CENTER.1) / FACE_RADII.1;
            let r = dx * dx + dy * dy;
            let mask = 1.0 / (1.0 + (-(1.0 - r) / FACE_EDGE).exp());
            BACKGROUND[c] + mask * (SKIN[c] - BACKGROUND[c])
        });
        let column = |center: f64, s: f64| std::array::from_fn(|x| gauss(px(x) - center, s));
        Self {
            background,
            eye_x: [column(EYE_XS[0], EYE_SX), column(EYE_XS[1], EYE_SX)],
            mouth_x: column(MOUTH_X, MOUTH_ENV),
            brow_x: [column(BROW_XS[0], BROW_ENV), column(BROW_XS[1], BROW_ENV)],
        }
    }

    pub fn resolution(&self) -> (usize, usize) {
        (TOY_RESOLUTION, TOY_RESOLUTION)
    }

    /// The face without any part drawn.
    pub fn background(&self) -> &Array3<f64> {
        &self.background
    }

    fn check(a: &[f64]) -> Result<()> {
        if a.len() != NUM_ATTRIBUTES {
            return Err(Error::Shape(format!(
                "expected {NUM_ATTRIBUTES} attributes, got {}",
                a.len()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attributes".into()));
        }
        Ok(())
    }

    fn alphas(&self, a: &[f64]) -> PartAlphas {
        let n = TOY_RESOLUTION;
        let sy = eye_sigma(a[EYE_OPENNESS]);
        let sm = mouth_sigma(a[MOUTH_OPENNESS]);
        let c = mouth_curvature(a[MOUTH_CURVATURE]);
        let m = brow_slope(a[BROW_ANGLE]);
        let mut eyes = Array2::zeros((n, n));
        let mut mouth = Array2::zeros((n, n));
        let mut brows = Array2::zeros((n, n));
        for y in 0..n {
            let yy = px(y);
            let eye_y = gauss(yy - EYE_Y, sy);
            for x in 0..n {
                let xx = px(x);
                let mut keep = 1.0;
                for k in 0..2 {
                    keep *= 1.0 - EYE_AMP * self.eye_x[k][x] * eye_y;
                }
                eyes[[y, x]] = 1.0 - keep;

                let dx = xx - MOUTH_X;
                let r = (yy - MOUTH_Y) + c * dx * dx;
                mouth[[y, x]] = MOUTH_AMP * self.mouth_x[x] * gauss(r, sm);

                let mut keep = 1.0;
                for (side, bx) in BROW_XS.into_iter().enumerate() {
                    let dx = xx - bx;
                    let r = (yy - BROW_Y) - brow_side_sign(side) * m * dx;
                    keep *= 1.0 - BROW_AMP * self.brow_x[side][x] * gauss(r, BROW_THICK);
                }
                brows[[y, x]] = 1.0 - keep;
            }
        }
        let total = Array2::from_shape_fn((n, n), |(y, x)| {
            1.0 - (1.0 - eyes[[y, x]]) * (1.0 - mouth[[y, x]]) * (1.0 - brows[[y, x]])
        });
        PartAlphas {
            parts: [eyes, mouth, brows],
            total,
        }
    }

    pub fn render(&self, a: &[f64]) -> Result<ImageTensor> {
        Self::check(a)?;
        let alphas = self.alphas(a);
        let n = TOY_RESOLUTION;
        let data = Array3::from_shape_fn((n, n, 3), |(y, x, ch)| {
            let t = alphas.total[[y, x]];
            self.background[[y, x, ch]] * (1.0 - t) + INK[ch] * t
        });
        Ok(ImageTensor(data))
    }

    /// Vector-Jacobian product: gradient of a scalar w.r.t. the attributes
    /// given its gradient w.r.t. the rendered pixels.
    pub fn render_vjp(&self, a: &[f64], grad_image: &Array3<f64>) -> Result<Array1<f64>> {
        Self::check(a)?;
        let n = TOY_RESOLUTION;
        if grad_image.dim() != (n, n, 3) {
            return Err(Error::Shape("render gradient must be 64x64x3".into()));
        }
        let alphas = self.alphas(a);
        let sy = eye_sigma(a[EYE_OPENNESS]);
        let sm = mouth_sigma(a[MOUTH_OPENNESS]);
        let c = mouth_curvature(a[MOUTH_CURVATURE]);
        let m = brow_slope(a[BROW_ANGLE]);
        let [eyes, mouth, brows] = &alphas.parts;
        let mut g = Array1::zeros(NUM_ATTRIBUTES);
        for y in 0..n {
            let yy = px(y);
            let dy = yy - EYE_Y;
            let eye_y = gauss(dy, sy);
            for x in 0..n {
                let xx = px(x);
                let g_total: f64 = (0..3)
                    .map(|ch| grad_image[[y, x, ch]] * (INK[ch] - self.background[[y, x, ch]]))
                    .sum();
                if g_total == 0.0 {
                    continue;
                }
                let (e, mo, b) = (eyes[[y, x]], mouth[[y, x]], brows[[y, x]]);
                let g_eyes = g_total * (1.0 - mo) * (1.0 - b);
                let g_mouth = g_total * (1.0 - e) * (1.0 - b);
                let g_brows = g_total * (1.0 - e) * (1.0 - mo);

                // eyes: 1 - Π(1 - q_k), dq/dsy = q·dy²/sy³
                let qs = [0, 1].map(|k| EYE_AMP * self.eye_x[k][x] * eye_y);
                let d_sy = ((1.0 - qs[1]) * qs[0] + (1.0 - qs[0]) * qs[1]) * dy * dy / (sy * sy * sy);
                g[EYE_OPENNESS] += g_eyes * d_sy * EYE_SY1;

                let dx = xx - MOUTH_X;
                let r = (yy - MOUTH_Y) + c * dx * dx;
                g[MOUTH_OPENNESS] += g_mouth * mo * r * r / (sm * sm * sm) * MOUTH_S1;
                g[MOUTH_CURVATURE] += g_mouth * mo * (-r / (sm * sm)) * dx * dx * MOUTH_CURV_GAIN;

                let qb = [0, 1].map(|side| {
                    let dx = xx - BROW_XS[side];
                    let sgn = brow_side_sign(side);
                    let r = (yy - BROW_Y) - sgn * m * dx;
                    (BROW_AMP * self.brow_x[side][x] * gauss(r, BROW_THICK), r, sgn * dx)
                });
                let d_m: f64 = (0..2)
                    .map(|k| {
                        let (q, r, sdx) = qb[k];
                        (1.0 - qb[1 - k].0) * q * (r / (BROW_THICK * BROW_THICK)) * sdx
                    })
                    .sum();
                g[BROW_ANGLE] += g_brows * d_m * BROW_SLOPE_GAIN;
            }
        }
        Ok(g)
    }
}

/// Reads the four attributes back out of a rendered face.
#[derive(Debug, Clone)]
pub struct AttributeExtractor {
    background: Array3<f64>,
    /// Per-pixel ink direction `b - ink` and its squared norm.
    ink_dir: Array3<f64>,
    ink_norm_sq: Array2<f64>,
    eye_col_mass: f64,
    mouth_col_mass: f64,
}

/// Intermediate moment sums of one extraction.
struct Moments {
    /// 1 where the alpha clamp is inactive.
    alpha_pass: Array2<f64>,
    mouth_u_mean: f64,
    mouth_y_mean: f64,
    mouth_suy: f64,
    mouth_suu: f64,
    brow_num: [f64; 2],
    brow_den: [f64; 2],
    raw: [f64; NUM_ATTRIBUTES],
}

impl AttributeExtractor {
    pub fn new(renderer: &FaceRenderer) -> Self {
        let background = renderer.background().clone();
        let n = TOY_RESOLUTION;
        let ink_dir = Array3::from_shape_fn((n, n, 3), |(y, x, c)| background[[y, x, c]] - INK[c]);
        let ink_norm_sq = Array2::from_shape_fn((n, n), |(y, x)| {
            (0..3).map(|c| ink_dir[[y, x, c]].powi(2)).sum()
        });
        let eye_col_mass = (EYE_COLS[0].0..EYE_COLS[0].1)
            .map(|x| gauss(px(x) - EYE_XS[0], EYE_SX))
            .sum::<f64>()
            + (EYE_COLS[1].0..EYE_COLS[1].1)
                .map(|x| gauss(px(x) - EYE_XS[1], EYE_SX))
                .sum::<f64>();
        let mouth_col_mass = (MOUTH_COLS.0..MOUTH_COLS.1)
            .map(|x| gauss(px(x) - MOUTH_X, MOUTH_ENV))
            .sum();
        Self {
            background,
            ink_dir,
            ink_norm_sq,
            eye_col_mass,
            mouth_col_mass,
        }
    }

    fn moments(&self, img: &ImageTensor) -> Result<Moments> {
        let n = TOY_RESOLUTION;
        if img.resolution() != (n, n) {
            return Err(Error::Shape(format!(
                "toy extractor expects {n}x{n} images, got {:?}",
                img.resolution()
            )));
        }
        let mut alpha = Array2::zeros((n, n));
        let mut alpha_pass = Array2::zeros((n, n));
        for y in 0..n {
            for x in 0..n {
                let q: f64 = (0..3)
                    .map(|c| (self.background[[y, x, c]] - img.0[[y, x, c]]) * self.ink_dir[[y, x, c]])
                    .sum::<f64>()
                    / self.ink_norm_sq[[y, x]];
                alpha[[y, x]] = q.clamp(0.0, 1.0);
                alpha_pass[[y, x]] = if q > 0.0 && q < 1.0 { 1.0 } else { 0.0 };
            }
        }
        let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();

        let mut eye_mass = 0.0;
        for (c0, c1) in EYE_COLS {
            for y in EYE_ROWS.0..EYE_ROWS.1 {
                for x in c0..c1 {
                    eye_mass += alpha[[y, x]];
                }
            }
        }
        let eye_sy = eye_mass / (EYE_AMP * self.eye_col_mass * sqrt_2pi);

        let (mut w, mut su, mut sy) = (0.0, 0.0, 0.0);
        for y in MOUTH_ROWS.0..MOUTH_ROWS.1 {
            for x in MOUTH_COLS.0..MOUTH_COLS.1 {
                let al = alpha[[y, x]];
                let u = (px(x) - MOUTH_X).powi(2);
                w += al;
                su += al * u;
                sy += al * (px(y) - MOUTH_Y);
            }
        }
        let (u_mean, y_mean) = if w > 0.0 { (su / w, sy / w) } else { (0.0, 0.0) };
        let (mut suy, mut suu) = (0.0, 0.0);
        for y in MOUTH_ROWS.0..MOUTH_ROWS.1 {
            for x in MOUTH_COLS.0..MOUTH_COLS.1 {
                let al = alpha[[y, x]];
                let du = (px(x) - MOUTH_X).powi(2) - u_mean;
                suy += al * du * (px(y) - MOUTH_Y - y_mean);
                suu += al * du * du;
            }
        }
        let curvature = if suu > 0.0 { -suy / suu } else { 0.0 };
        let mouth_s = w / (MOUTH_AMP * self.mouth_col_mass * sqrt_2pi);

        let mut brow_num = [0.0; 2];
        let mut brow_den = [0.0; 2];
        for side in 0..2 {
            let (c0, c1) = BROW_COLS[side];
            for y in BROW_ROWS.0..BROW_ROWS.1 {
                for x in c0..c1 {
                    let al = alpha[[y, x]];
                    let dx = px(x) - BROW_XS[side];
                    brow_num[side] += al * dx * (px(y) - BROW_Y);
                    brow_den[side] += al * dx * dx;
                }
            }
        }
        let slope_of = |s: usize| {
            if brow_den[s] > 0.0 {
                brow_num[s] / brow_den[s]
            } else {
                0.0
            }
        };
        let slope = 0.5 * (slope_of(0) - slope_of(1));

        let raw = [
            curvature / MOUTH_CURV_GAIN + 0.5,
            (mouth_s - MOUTH_S0) / MOUTH_S1,
            (eye_sy - EYE_SY0) / EYE_SY1,
            slope / BROW_SLOPE_GAIN + 0.5,
        ];
        Ok(Moments {
            alpha_pass,
            mouth_u_mean: u_mean,
            mouth_y_mean: y_mean,
            mouth_suy: suy,
            mouth_suu: suu,
            brow_num,
            brow_den,
            raw,
        })
    }

    /// Attributes in [0, 1] (clamped for out-of-domain images).
    pub fn extract(&self, img: &ImageTensor) -> Result<Array1<f64>> {
        let m = self.moments(img)?;
        Ok(Array1::from_iter(m.raw.iter().map(|v| v.clamp(0.0, 1.0))))
    }

    /// Gradient w.r.t. the pixels given the gradient w.r.t. [`Self::extract`].
    pub fn extract_vjp(&self, img: &ImageTensor, grad_attr: &Array1<f64>) -> Result<Array3<f64>> {
        if grad_attr.len() != NUM_ATTRIBUTES {
            return Err(Error::Shape("attribute gradient length".into()));
        }
        let m = self.moments(img)?;
        let n = TOY_RESOLUTION;
        let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
        // Gradient reaching each raw attribute through the output clamp.
        let g: Vec<f64> = (0..NUM_ATTRIBUTES)
            .map(|k| {
                if m.raw[k] > 0.0 && m.raw[k] < 1.0 {
                    grad_attr[k]
                } else {
                    0.0
                }
            })
            .collect();
        let mut g_alpha = Array2::<f64>::zeros((n, n));

        let d_eye = g[EYE_OPENNESS] / EYE_SY1 / (EYE_AMP * self.eye_col_mass * sqrt_2pi);
        for (c0, c1) in EYE_COLS {
            for y in EYE_ROWS.0..EYE_ROWS.1 {
                for x in c0..c1 {
                    g_alpha[[y, x]] += d_eye;
                }
            }
        }

        let d_open = g[MOUTH_OPENNESS] / MOUTH_S1 / (MOUTH_AMP * self.mouth_col_mass * sqrt_2pi);
        let d_curv = g[MOUTH_CURVATURE] / MOUTH_CURV_GAIN;
        for y in MOUTH_ROWS.0..MOUTH_ROWS.1 {
            for x in MOUTH_COLS.0..MOUTH_COLS.1 {
                let mut ga = d_open;
                if m.mouth_suu > 0.0 {
                    let du = (px(x) - MOUTH_X).powi(2) - m.mouth_u_mean;
                    let dyv = px(y) - MOUTH_Y - m.mouth_y_mean;
                    let dcurv = -(du * dyv * m.mouth_suu - m.mouth_suy * du * du) / (m.mouth_suu * m.mouth_suu);
                    ga += d_curv * dcurv;
                }
                g_alpha[[y, x]] += ga;
            }
        }

        let d_slope = g[BROW_ANGLE] / BROW_SLOPE_GAIN;
        for side in 0..2 {
            if m.brow_den[side] <= 0.0 {
                continue;
            }
            let sign = if side == 0 { 0.5 } else { -0.5 };
            let slope = m.brow_num[side] / m.brow_den[side];
            let (c0, c1) = BROW_COLS[side];
            for y in BROW_ROWS.0..BROW_ROWS.1 {
                for x in c0..c1 {
                    let dx = px(x) - BROW_XS[side];
                    let dyv = px(y) - BROW_Y;
                    g_alpha[[y, x]] += d_slope * sign * (dx * dyv - slope * dx * dx) / m.brow_den[side];
                }
            }
        }

        let mut out = Array3::zeros((n, n, 3));
        for y in 0..n {
            for x in 0..n {
                let ga = g_alpha[[y, x]] * m.alpha_pass[[y, x]];
                if ga == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    out[[y, x, c]] = -ga * self.ink_dir[[y, x, c]] / self.ink_norm_sq[[y, x]];
                }
            }
        }
        Ok(out)
    }
}

/// `img` shaded toward the ink colour so every pixel's ink coverage is at
/// least `amount`; keeps finite differences away from the coverage clamp.
#[cfg(test)]
pub(crate) fn inked(extractor: &AttributeExtractor, img: &ImageTensor, amount: f64) -> ImageTensor {
    ImageTensor(&img.0 - &(&extractor.ink_dir * amount))
}
