//! Gradual-denoising analysis of one image.
//!
//! A [`LayerTrace`] holds the noisy input, every layer's noise component
//! and the partial sums `p_k = noisy + r_1 + ... + r_k`, accumulated exactly
//! as the forward pass does, so `p_0` is the input and `p_D` the network
//! output bit for bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::image::encode_png_levels;
use crate::data::denormalize;
use crate::model::{DenoiseNet, NoiseDecomposition, TEST_PAD};
use crate::tensor::{symmetric_pad, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LayerTrace {
    noisy: Tensor,
    decomposition: NoiseDecomposition,
    truth: Option<Tensor>,
    partials: Vec<Tensor>,
    valid_border: usize,
}

impl LayerTrace {
    /// `valid_border` pixels along each edge are excluded from error curves
    /// (use the depth when the trace comes from an unpadded forward pass).
    pub fn new(noisy: Tensor, decomposition: NoiseDecomposition, truth: Option<Tensor>, valid_border: usize) -> Result<Self> {
        let [nb, h, w, c] = noisy.bhwc()?;
        if nb != 1 || c != 1 {
            return Err(Error::invalid(format!("trace expects a (1, H, W, 1) image, got {:?}", noisy.shape())));
        }
        if decomposition.depth() == 0 {
            return Err(Error::invalid("trace needs at least one layer"));
        }
        for r in &decomposition.residuals {
            noisy.expect_same_shape(r, "trace noisy vs residual")?;
        }
        if let Some(t) = &truth {
            noisy.expect_same_shape(t, "trace noisy vs truth")?;
        }
        if 2 * valid_border >= h || 2 * valid_border >= w {
            return Err(Error::invalid(format!("valid border {valid_border} leaves no pixels of {h}x{w}")));
        }
        let mut partials = Vec::with_capacity(decomposition.depth() + 1);
        partials.push(noisy.clone());
        for r in &decomposition.residuals {
            let mut next = partials.last().expect("p_0 present").clone();
            next.add_assign(r)?;
            partials.push(next);
        }
        Ok(Self {
            noisy,
            decomposition,
            truth,
            partials,
            valid_border,
        })
    }

    /// Traces a full image the way [`DenoiseNet::denoise_image`] sees it:
    /// symmetric padding, forward pass, every map cropped back to `H × W`.
    /// The output is not clamped.
    pub fn from_image(model: &DenoiseNet, noisy: &Tensor, truth: Option<Tensor>) -> Result<Self> {
        let [_, h, w, _] = noisy.bhwc()?;
        let padded = symmetric_pad(noisy, TEST_PAD)?;
        let out = model.forward(&padded, true)?;
        let residuals = out
            .decomposition
            .expect("capture requested")
            .residuals
            .iter()
            .map(|r| r.crop(TEST_PAD, TEST_PAD, h, w))
            .collect::<Result<Vec<_>>>()?;
        Self::new(noisy.clone(), NoiseDecomposition { residuals }, truth, 0)
    }

    pub fn depth(&self) -> usize {
        self.decomposition.depth()
    }

    pub fn noisy(&self) -> &Tensor {
        &self.noisy
    }

    pub fn truth(&self) -> Option<&Tensor> {
        self.truth.as_ref()
    }

    pub fn residuals(&self) -> &[Tensor] {
        &self.decomposition.residuals
    }

    pub fn partials(&self) -> &[Tensor] {
        &self.partials
    }

    /// `p_k` for `0 <= k <= D`.
    pub fn partial_denoise(&self, k: usize) -> Result<&Tensor> {
        self.partials
            .get(k)
            .ok_or_else(|| Error::invalid(format!("partial depth {k} outside 0..={}", self.depth())))
    }

    /// RMSE of every partial sum against the ground truth, interior only.
    pub fn layer_rmse_curve(&self) -> Result<Vec<f64>> {
        let truth = self
            .truth
            .as_ref()
            .ok_or_else(|| Error::invalid("layer RMSE curve needs a ground-truth image"))?;
        let [_, h, w, _] = truth.bhwc()?;
        let b = self.valid_border;
        let interior = |t: &Tensor| t.crop(b, b, h - 2 * b, w - 2 * b);
        let truth = interior(truth)?;
        self.partials.iter().map(|p| Ok(rmse(&interior(p)?, &truth))).collect()
    }

    /// Per pixel, the 1-based layer whose noise component has the largest
    /// magnitude; ties go to the shallower layer.
    pub fn dominant_layer_map(&self) -> Vec<usize> {
        let residuals = self.residuals();
        (0..self.noisy.len())
            .map(|px| {
                let mut best = 0;
                for (i, r) in residuals.iter().enumerate().skip(1) {
                    if r.data()[px].abs() > residuals[best].data()[px].abs() {
                        best = i;
                    }
                }
                best + 1
            })
            .collect()
    }

    /// Writes the trace as images and CSVs into `out_dir`:
    ///
    /// * `residual_XX.png` per layer, each min-max stretched to 8 bits;
    /// * `partial_XX.png` for `k = 0..=D` on the usual 8-bit scale;
    /// * `layer_map.png`, an indexed-color image whose palette entry
    ///   `i` is layer `i + 1`;
    /// * `layers.csv` with each layer's stretch range (`level = 255 ·
    ///   (r - min) / (max - min)`) and its map color;
    /// * `rmse.csv` when a ground truth is present.
    pub fn export(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let [_, h, w, _] = self.noisy.bhwc()?;
        let depth = self.depth();
        let mut written = Vec::new();
        let mut save = |name: String, bytes: Vec<u8>| -> Result<()> {
            let path = out_dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            Ok(())
        };

        let mut ranges = Vec::with_capacity(depth);
        for (i, r) in self.residuals().iter().enumerate() {
            let (lo, hi, levels) = stretch(r.data());
            ranges.push((lo, hi));
            save(format!("residual_{:02}.png", i + 1), encode_png_levels(w, h, &levels)?)?;
        }
        for (k, p) in self.partials.iter().enumerate() {
            let levels: Vec<u8> = p.data().iter().map(|&v| denormalize(v)).collect();
            save(format!("partial_{k:02}.png"), encode_png_levels(w, h, &levels)?)?;
        }

        let palette = layer_palette(depth);
        let map: Vec<u8> = self.dominant_layer_map().iter().map(|&l| (l - 1) as u8).collect();
        save("layer_map.png".into(), encode_indexed_png(w, h, &map, &palette)?)?;

        let mut csv = String::from("layer,min,max,red,green,blue\n");
        for (i, ((lo, hi), [r, g, b])) in ranges.iter().zip(&palette).enumerate() {
            let _ = writeln!(csv, "{},{lo},{hi},{r},{g},{b}", i + 1);
        }
        save("layers.csv".into(), csv.into_bytes())?;

        if self.truth.is_some() {
            let mut csv = String::from("depth,rmse\n");
            for (k, e) in self.layer_rmse_curve()?.iter().enumerate() {
                let _ = writeln!(csv, "{k},{e}");
            }
            save("rmse.csv".into(), csv.into_bytes())?;
        }
        Ok(written)
    }
}

fn rmse(a: &Tensor, b: &Tensor) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    (sum / a.len() as f64).sqrt()
}

/// Fraction of consecutive steps of `curve` that strictly decrease.
pub fn monotone_fraction(curve: &[f64]) -> f64 {
    if curve.len() < 2 {
        return 1.0;
    }
    let down = curve.windows(2).filter(|w| w[1] < w[0]).count();
    down as f64 / (curve.len() - 1) as f64
}

/// Min-max stretch to 8 bits; a constant map becomes all zeros.
fn stretch(values: &[f32]) -> (f32, f32, Vec<u8>) {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi as f64 - lo as f64;
    let levels = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v as f64 - lo as f64) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    (lo, hi, levels)
}

/// Evenly spaced hues, shallow layers blue through deep layers red.
fn layer_palette(depth: usize) -> Vec<[u8; 3]> {
    (0..depth)
        .map(|i| {
            let t = if depth > 1 { i as f64 / (depth - 1) as f64 } else { 0.0 };
            hsv_to_rgb(240.0 * (1.0 - t), 0.85, 0.95)
        })
        .collect()
}

fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

fn encode_indexed_png(width: usize, height: usize, indices: &[u8], palette: &[[u8; 3]]) -> Result<Vec<u8>> {
    if palette.len() > 256 {
        return Err(Error::invalid(format!("{} layers exceed an 8-bit palette", palette.len())));
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(png::ColorType::Indexed);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_palette(palette.concat());
        let mut writer = encoder.write_header()?;
        writer.write_image_data(indices)?;
        writer.finish()?;
    }
    Ok(out)
}
