//! Binary PPM heatmaps of scalar and vector fields.

use minflow_core::{magnitude_field, ScalarField64, VectorField64};

/// Target width in pixels; each cell becomes a square block.
const TARGET_PIXELS: usize = 512;
const ARROW: [u8; 3] = [230, 40, 40];

pub struct Image {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Image {
    fn new(width: usize, height: usize) -> Self {
        Self { width, height, rgb: vec![0; width * height * 3] }
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let k = 3 * (y as usize * self.width + x as usize);
            self.rgb[k..k + 3].copy_from_slice(&c);
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

fn scale_for(nx: usize) -> usize {
    (TARGET_PIXELS / nx.max(1)).max(1)
}

/// Linear grayscale over `[0, max]`; row `j = 0` is the bottom of the image.
fn heatmap(f: &ScalarField64) -> Image {
    let g = f.grid;
    let s = scale_for(g.nx);
    let mut img = Image::new(g.nx * s, g.ny * s);
    let top = f.max_value();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let level = if top > 0.0 { (f.at(i, j).max(0.0) / top * 255.0).round() as u8 } else { 0 };
            for dy in 0..s {
                for dx in 0..s {
                    let y = (g.ny - 1 - j) * s + dy;
                    img.put((i * s + dx) as i64, y as i64, [level; 3]);
                }
            }
        }
    }
    img
}

pub fn render_scalar(f: &ScalarField64) -> Image {
    heatmap(f)
}

/// Magnitude heatmap with one arrow every `max(1, nx / 16)` cells, scaled to the largest vector.
pub fn render_vector(v: &VectorField64) -> Image {
    let mag = magnitude_field(v);
    let mut img = heatmap(&mag);
    let top = mag.max_value();
    if top <= 0.0 {
        return img;
    }
    let g = v.grid;
    let s = scale_for(g.nx);
    let k = (g.nx / 16).max(1);
    let reach = 0.45 * (k * s) as f64;
    for j in (k / 2..g.ny).step_by(k) {
        for i in (k / 2..g.nx).step_by(k) {
            let [vx, vy] = v.cell_vector(i, j);
            if vx == 0.0 && vy == 0.0 {
                continue;
            }
            let cx = (i * s) as f64 + 0.5 * s as f64;
            let cy = ((g.ny - 1 - j) * s) as f64 + 0.5 * s as f64;
            let (ex, ey) = (cx + reach * vx / top, cy - reach * vy / top);
            line(&mut img, cx, cy, ex, ey);
            // Head: a short bar across the tip.
            let (nx, ny) = (-(ey - cy), ex - cx);
            let len = nx.hypot(ny).max(1e-12);
            let w = 0.25 * reach * (vx.hypot(vy) / top);
            line(&mut img, ex - w * nx / len, ey - w * ny / len, ex + w * nx / len, ey + w * ny / len);
        }
    }
    img
}

fn line(img: &mut Image, x0: f64, y0: f64, x1: f64, y1: f64) {
    let n = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for t in 0..=n {
        let a = t as f64 / n as f64;
        img.put((x0 + a * (x1 - x0)).floor() as i64, (y0 + a * (y1 - y0)).floor() as i64, ARROW);
    }
}
