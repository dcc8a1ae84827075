//! Deterministic frame enhancement operators.

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use palette::{IntoColor, Lab, Srgb};

use super::{Params, ToolError};

pub trait PixelOp: Send + Sync {
    fn apply(&self, img: &RgbImage, params: &Params) -> Result<RgbImage, ToolError>;
}

pub(super) struct Brighten;
pub(super) struct Denoise;
pub(super) struct Deblur;
pub(super) struct Zoom;

impl PixelOp for Brighten {
    fn apply(&self, img: &RgbImage, params: &Params) -> Result<RgbImage, ToolError> {
        Ok(brighten(
            img,
            params.f64("clip_limit"),
            params.usize("tile").max(1),
        ))
    }
}

impl PixelOp for Denoise {
    fn apply(&self, img: &RgbImage, params: &Params) -> Result<RgbImage, ToolError> {
        Ok(denoise(img, params.f64("strength")))
    }
}

impl PixelOp for Deblur {
    fn apply(&self, img: &RgbImage, params: &Params) -> Result<RgbImage, ToolError> {
        Ok(deblur(img, params.f64("alpha"), params.f64("sigma")))
    }
}

impl PixelOp for Zoom {
    fn apply(&self, img: &RgbImage, params: &Params) -> Result<RgbImage, ToolError> {
        Ok(zoom(img, params.f64("factor")))
    }
}

/// Bicubic magnification; output dimensions are the input's times `factor`,
/// rounded, at least 1.
pub fn zoom(img: &RgbImage, factor: f64) -> RgbImage {
    let (w, h) = img.dimensions();
    let nw = ((w as f64 * factor).round() as u32).max(1);
    let nh = ((h as f64 * factor).round() as u32).max(1);
    imageops::resize(img, nw, nh, FilterType::CatmullRom)
}

/// Reflect-101 index into `0..n`.
fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// CLAHE over a single 8-bit channel, stored row-major.
///
/// The image is virtually padded (reflect-101) to a multiple of the tile
/// grid. Each tile histogram is clipped at `max(1, clip_limit * area / 256)`,
/// the excess is spread uniformly with the remainder dealt out at a regular
/// stride, and per-tile lookup tables are bilinearly interpolated between
/// tile centres.
pub fn clahe_channel(
    data: &[u8],
    width: usize,
    height: usize,
    clip_limit: f64,
    tiles: usize,
) -> Vec<u8> {
    let gx = tiles.min(width).max(1);
    let gy = tiles.min(height).max(1);
    let tw = width.div_ceil(gx);
    let th = height.div_ceil(gy);
    let area = (tw * th) as f64;
    let clip = ((clip_limit * area / 256.0) as usize).max(1);

    let mut luts = vec![[0u8; 256]; gx * gy];
    for ty in 0..gy {
        for tx in 0..gx {
            let mut hist = [0usize; 256];
            for y in ty * th..(ty + 1) * th {
                let sy = reflect101(y as isize, height);
                for x in tx * tw..(tx + 1) * tw {
                    hist[data[sy * width + reflect101(x as isize, width)] as usize] += 1;
                }
            }
            let mut excess = 0;
            for h in hist.iter_mut() {
                if *h > clip {
                    excess += *h - clip;
                    *h = clip;
                }
            }
            let batch = excess / 256;
            let mut residual = excess - batch * 256;
            hist.iter_mut().for_each(|h| *h += batch);
            if let Some(step) = 256usize.checked_div(residual) {
                let step = step.max(1);
                let mut i = 0;
                while i < 256 && residual > 0 {
                    hist[i] += 1;
                    residual -= 1;
                    i += step;
                }
            }
            let lut = &mut luts[ty * gx + tx];
            let mut cdf = 0usize;
            for (v, h) in hist.iter().enumerate() {
                cdf += h;
                lut[v] = (cdf as f64 * 255.0 / area).round().min(255.0) as u8;
            }
        }
    }

    let mut out = vec![0u8; data.len()];
    for y in 0..height {
        let fy = y as f64 / th as f64 - 0.5;
        let y1 = fy.floor();
        let ya = fy - y1;
        let ty1 = (y1.max(0.0) as usize).min(gy - 1);
        let ty2 = ((y1 + 1.0).max(0.0) as usize).min(gy - 1);
        for x in 0..width {
            let fx = x as f64 / tw as f64 - 0.5;
            let x1 = fx.floor();
            let xa = fx - x1;
            let tx1 = (x1.max(0.0) as usize).min(gx - 1);
            let tx2 = ((x1 + 1.0).max(0.0) as usize).min(gx - 1);
            let v = data[y * width + x] as usize;
            let at = |ty: usize, tx: usize| luts[ty * gx + tx][v] as f64;
            let top = at(ty1, tx1) * (1.0 - xa) + at(ty1, tx2) * xa;
            let bottom = at(ty2, tx1) * (1.0 - xa) + at(ty2, tx2) * xa;
            out[y * width + x] = (top * (1.0 - ya) + bottom * ya).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// CLAHE on the lightness of the CIE L*a*b* representation; chroma is kept.
pub fn brighten(img: &RgbImage, clip_limit: f64, tiles: usize) -> RgbImage {
    let (w, h) = img.dimensions();
    let labs: Vec<Lab> = img
        .pixels()
        .map(|p| {
            Srgb::new(p[0], p[1], p[2])
                .into_format::<f32>()
                .into_color()
        })
        .collect();
    let lightness: Vec<u8> = labs
        .iter()
        .map(|lab| (lab.l as f64 * 255.0 / 100.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let equalized = clahe_channel(&lightness, w as usize, h as usize, clip_limit, tiles);
    let mut out = RgbImage::new(w, h);
    for ((px, lab), l) in out.pixels_mut().zip(&labs).zip(equalized) {
        let adjusted = Lab::new(l as f32 * 100.0 / 255.0, lab.a, lab.b);
        let rgb: Srgb = adjusted.into_color();
        let to_u8 = |c: f32| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
        *px = Rgb([to_u8(rgb.red), to_u8(rgb.green), to_u8(rgb.blue)]);
    }
    out
}

const TEMPLATE_RADIUS: isize = 3;
const SEARCH_RADIUS: isize = 10;

/// Non-local means with a 7×7 template and 21×21 search window.
///
/// For pixel `p` and candidate `q = p + o`, `d²` is the mean squared RGB
/// difference between the templates around `p` and `q` (templates truncated
/// at the image border, coordinates of `q` clamped), and the weight is
/// `exp(-d² / strength²)`. Template sums for each offset `o` come from one
/// integral image, so the cost is independent of template size.
pub fn denoise(img: &RgbImage, strength: f64) -> RgbImage {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let (wu, hu) = (w as usize, h as usize);
    let px = |x: isize, y: isize| img.get_pixel(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32);
    let h2 = strength * strength;

    let mut acc = vec![[0.0f64; 3]; wu * hu];
    let mut weights = vec![0.0f64; wu * hu];
    let mut integral = vec![0.0f64; (wu + 1) * (hu + 1)];

    for oy in -SEARCH_RADIUS..=SEARCH_RADIUS {
        for ox in -SEARCH_RADIUS..=SEARCH_RADIUS {
            for y in 0..h {
                let mut row = 0.0;
                for x in 0..w {
                    let a = px(x, y);
                    let b = px(x + ox, y + oy);
                    row += (0..3)
                        .map(|c| (a[c] as f64 - b[c] as f64).powi(2))
                        .sum::<f64>();
                    let i = (y as usize + 1) * (wu + 1) + x as usize + 1;
                    integral[i] = integral[i - (wu + 1)] + row;
                }
            }
            for y in 0..h {
                let y0 = (y - TEMPLATE_RADIUS).max(0) as usize;
                let y1 = ((y + TEMPLATE_RADIUS).min(h - 1) + 1) as usize;
                for x in 0..w {
                    let x0 = (x - TEMPLATE_RADIUS).max(0) as usize;
                    let x1 = ((x + TEMPLATE_RADIUS).min(w - 1) + 1) as usize;
                    let sum = integral[y1 * (wu + 1) + x1]
                        - integral[y0 * (wu + 1) + x1]
                        - integral[y1 * (wu + 1) + x0]
                        + integral[y0 * (wu + 1) + x0];
                    let count = ((y1 - y0) * (x1 - x0) * 3) as f64;
                    let d2 = (sum / count).max(0.0);
                    let weight = (-d2 / h2).exp();
                    let q = px(x + ox, y + oy);
                    let i = y as usize * wu + x as usize;
                    for c in 0..3 {
                        acc[i][c] += weight * q[c] as f64;
                    }
                    weights[i] += weight;
                }
            }
        }
    }

    let mut out = RgbImage::new(w as u32, h as u32);
    for (i, p) in out.pixels_mut().enumerate() {
        *p = Rgb(std::array::from_fn(|c| {
            (acc[i][c] / weights[i]).round().clamp(0.0, 255.0) as u8
        }));
    }
    out
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Unsharp masking: `f + α(f − G_σ * f)`, rounded and clamped to `0..=255`.
/// The blur is separable with replicated borders.
pub fn deblur(img: &RgbImage, alpha: f64, sigma: f64) -> RgbImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let src: Vec<[f64; 3]> = img.pixels().map(|p| p.0.map(f64::from)).collect();

    let pass = |input: &[[f64; 3]], horizontal: bool| -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = [0.0; 3];
                for (k, tap) in kernel.iter().enumerate() {
                    let d = k as isize - r;
                    let (sx, sy) = if horizontal {
                        ((x as isize + d).clamp(0, w as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + d).clamp(0, h as isize - 1) as usize)
                    };
                    let v = input[sy * w + sx];
                    for c in 0..3 {
                        s[c] += tap * v[c];
                    }
                }
                out[y * w + x] = s;
            }
        }
        out
    };
    let blurred = pass(&pass(&src, true), false);

    let mut out = RgbImage::new(w as u32, h as u32);
    for (i, p) in out.pixels_mut().enumerate() {
        *p = Rgb(std::array::from_fn(|c| {
            let f = src[i][c];
            (f + alpha * (f - blurred[i][c])).round().clamp(0.0, 255.0) as u8
        }));
    }
    out
}
