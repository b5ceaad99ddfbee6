//! Procedural grayscale images for toy experiments. Each generator is a pure
//! function of its seed; intensities stay inside `[-0.4, 0.4]`.

use super::GrayImage;
use crate::rng::CounterRng;

fn level(rng: &mut CounterRng) -> f32 {
    (rng.next_f64() * 0.8 - 0.4) as f32
}

fn range(rng: &mut CounterRng, lo: usize, hi: usize) -> usize {
    lo + rng.below((hi - lo + 1) as u64) as usize
}

fn paint_disk(px: &mut [f32], size: usize, cy: f64, cx: f64, radius: f64, value: f32) {
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            if dy * dy + dx * dx <= radius * radius {
                px[y * size + x] = value;
            }
        }
    }
}

/// Linear-gradient background with a few constant rectangles and disks.
pub fn shapes(size: usize, seed: u64) -> GrayImage {
    let mut rng = CounterRng::new(seed);
    let (a, gy, gx) = (level(&mut rng) * 0.5, level(&mut rng) * 0.5, level(&mut rng) * 0.5);
    let mut px: Vec<f32> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f32 / size as f32, (i % size) as f32 / size as f32);
            (a + gy * (y - 0.5) + gx * (x - 0.5)).clamp(-0.4, 0.4)
        })
        .collect();
    for _ in 0..range(&mut rng, 2, 5) {
        let (h, w) = (range(&mut rng, size / 8, size / 2), range(&mut rng, size / 8, size / 2));
        let (top, left) = (range(&mut rng, 0, size - h), range(&mut rng, 0, size - w));
        let v = level(&mut rng);
        for y in top..top + h {
            px[y * size + left..y * size + left + w].fill(v);
        }
    }
    for _ in 0..range(&mut rng, 1, 4) {
        let r = range(&mut rng, size / 16 + 1, size / 4) as f64;
        let (cy, cx) = (rng.next_f64() * size as f64, rng.next_f64() * size as f64);
        let v = level(&mut rng);
        paint_disk(&mut px, size, cy, cx, r, v);
    }
    GrayImage::new(size, size, px).expect("synthetic pixels in range")
}

/// Two-level stripes, horizontal or vertical, with random period and phase.
pub fn stripes(size: usize, seed: u64) -> GrayImage {
    let mut rng = CounterRng::new(seed);
    let vertical = rng.coin();
    let period = range(&mut rng, 6, 16);
    let duty = range(&mut rng, 2, period - 2);
    let phase = rng.below(period as u64) as usize;
    let (lo, hi) = (level(&mut rng), level(&mut rng));
    let px = (0..size * size)
        .map(|i| {
            let t = if vertical { i % size } else { i / size };
            if (t + phase) % period < duty {
                hi
            } else {
                lo
            }
        })
        .collect();
    GrayImage::new(size, size, px).expect("synthetic pixels in range")
}

/// Constant background covered by many overlapping constant disks.
pub fn disks(size: usize, seed: u64) -> GrayImage {
    let mut rng = CounterRng::new(seed);
    let mut px = vec![level(&mut rng); size * size];
    for _ in 0..range(&mut rng, 8, 16) {
        let r = range(&mut rng, 3, (size / 5).max(4)) as f64;
        let (cy, cx) = (rng.next_f64() * size as f64, rng.next_f64() * size as f64);
        let v = level(&mut rng);
        paint_disk(&mut px, size, cy, cx, r, v);
    }
    GrayImage::new(size, size, px).expect("synthetic pixels in range")
}
