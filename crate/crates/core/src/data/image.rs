use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// RGB image stored row-major, channel-interleaved, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * 3, "image data length");
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Snaps every value to the nearest multiple of 1/255, the grid an 8-bit PNG stores exactly.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Self {
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    /// Value at fractional coordinates with edge clamping, pixel centers at integers.
    pub fn sample_bilinear(&self, y: f64, x: f64) -> [f32; 3] {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let (a, b, c, d) = (self.get(y0, x0), self.get(y0, x1), self.get(y1, x0), self.get(y1, x1));
        std::array::from_fn(|k| {
            let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
            let bot = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
            (top * (1.0 - fy) + bot * fy) as f32
        })
    }

    /// Bilinear resampling of the window `[top, top + h) × [left, left + w)`
    /// (fractional bounds allowed) onto an `out_h × out_w` grid, half-pixel aligned.
    pub fn resample(&self, top: f64, left: f64, h: f64, w: f64, out_h: usize, out_w: usize) -> Self {
        let (sy, sx) = (h / out_h as f64, w / out_w as f64);
        Self::from_fn(out_h, out_w, |y, x| {
            self.sample_bilinear(top + (y as f64 + 0.5) * sy - 0.5, left + (x as f64 + 0.5) * sx - 0.5)
        })
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Self {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        self.resample(0.0, 0.0, self.height as f64, self.width as f64, out_h, out_w)
    }

    pub fn channel_mean(&self) -> [f64; 3] {
        let n = (self.height * self.width) as f64;
        let mut s = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            for k in 0..3 {
                s[k] += px[k] as f64;
            }
        }
        s.map(|v| v / n)
    }
}

/// Silhouette mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width, "mask data length");
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True when the set pixels form a single 8-connected component.
    pub fn is_connected(&self) -> bool {
        let Some(start) = self.data.iter().position(|&b| b) else {
            return false;
        };
        let mut seen = vec![false; self.data.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut reached = 0;
        while let Some(i) = stack.pop() {
            reached += 1;
            let (y, x) = ((i / self.width) as isize, (i % self.width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= self.height as isize || nx >= self.width as isize {
                        continue;
                    }
                    let j = ny as usize * self.width + nx as usize;
                    if self.data[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        reached == self.count()
    }

    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> Self {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        Self::from_fn(out_h, out_w, |y, x| {
            let sy = ((y as f64 + 0.5) * self.height as f64 / out_h as f64) as usize;
            let sx = ((x as f64 + 0.5) * self.width as f64 / out_w as f64) as usize;
            self.get(sy.min(self.height - 1), sx.min(self.width - 1))
        })
    }
}

/// Packs same-sized images into an `[N, 3, H, W]` tensor, mapping `[0, 1]` to `[-1, 1]`.
pub fn images_to_tensor<'a>(images: impl IntoIterator<Item = &'a Image>) -> Tensor<f32> {
    let images: Vec<&Image> = images.into_iter().collect();
    assert!(!images.is_empty(), "empty batch");
    let (h, w) = (images[0].height, images[0].width);
    let mut data = vec![0.0f32; images.len() * 3 * h * w];
    for (n, img) in images.iter().enumerate() {
        assert_eq!((img.height, img.width), (h, w), "batch images must share a size");
        let base = n * 3 * h * w;
        for (p, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[base + c * h * w + p] = px[c] * 2.0 - 1.0;
            }
        }
    }
    Tensor::new(vec![images.len(), 3, h, w], data).expect("sizes computed above")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity_and_constant() {
        let img = Image::from_fn(5, 7, |y, x| [y as f32 / 5.0, x as f32 / 7.0, 0.5]);
        assert_eq!(img.resize(5, 7), img);
        let c = Image::filled(9, 4, [0.2, 0.4, 0.6]).resize(13, 3);
        assert!(c.data().chunks(3).all(|p| (p[0] - 0.2).abs() < 1e-6 && (p[2] - 0.6).abs() < 1e-6));
    }

    #[test]
    fn connectivity() {
        let m = Mask::from_fn(4, 4, |y, x| y == x);
        assert!(m.is_connected());
        let m = Mask::from_fn(4, 4, |y, x| (y, x) == (0, 0) || (y, x) == (3, 3));
        assert!(!m.is_connected());
        assert!(!Mask::from_fn(2, 2, |_, _| false).is_connected());
    }

    #[test]
    fn tensor_layout() {
        let img = Image::from_fn(2, 2, |y, x| [(y * 2 + x) as f32 / 4.0, 0.0, 1.0]);
        let t = images_to_tensor([&img, &img]);
        assert_eq!(t.shape(), &[2, 3, 2, 2]);
        assert_eq!(&t.data()[..4], &[-1.0, -0.5, 0.0, 0.5]);
        assert_eq!(&t.data()[8..12], &[1.0; 4]);
    }
}
