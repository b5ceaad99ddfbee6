use denoisenet::data::{add_gaussian_noise, decode_gray, synthetic};
use denoisenet::diagnose::LayerTrace;
use denoisenet::model::{DenoiseNet, ModelConfig, NoiseDecomposition};
use denoisenet::rng::{derive_key, normal_at};
use denoisenet::tensor::Tensor;
use proptest::prelude::*;

fn trace(depth: usize, seed: u64) -> LayerTrace {
    let model = DenoiseNet::init(ModelConfig::new(depth, 4).unwrap(), seed).unwrap();
    let clean = synthetic::shapes(30, seed).to_tensor();
    let noisy = add_gaussian_noise(&clean, 25.0, seed).unwrap();
    LayerTrace::from_image(&model, &noisy, Some(clean)).unwrap()
}

fn random_decomposition(depth: usize, h: usize, w: usize, key: u64) -> NoiseDecomposition {
    let residuals = (0..depth)
        .map(|i| {
            let k = derive_key(key, i as u64);
            // Coarse grid: magnitude ties are frequent.
            let data = (0..h * w).map(|j| ((normal_at(k, j as u64) * 3.0).round() / 50.0) as f32).collect();
            Tensor::new(&[1, h, w, 1], data).unwrap()
        })
        .collect();
    NoiseDecomposition { residuals }
}

#[test]
fn partials_telescope_through_f32_addition() {
    let t = trace(6, 1);
    assert!(t.partial_denoise(0).unwrap().bit_eq(t.noisy()));
    for k in 1..=t.depth() {
        let (prev, cur, r) = (t.partial_denoise(k - 1).unwrap(), t.partial_denoise(k).unwrap(), &t.residuals()[k - 1]);
        for ((&p, &c), &r) in prev.data().iter().zip(cur.data()).zip(r.data()) {
            assert_eq!(c.to_bits(), (p + r).to_bits());
            // The difference recovers r_k up to one rounding of the sum.
            let ulp = f32::EPSILON * c.abs().max(p.abs());
            assert!(((c - p) - r).abs() <= ulp, "{c} - {p} vs {r}");
        }
    }
}

#[test]
fn final_partial_is_the_denoised_image() {
    let model = DenoiseNet::init(ModelConfig::new(5, 3).unwrap(), 2).unwrap();
    let noisy = add_gaussian_noise(&synthetic::disks(25, 2).to_tensor(), 25.0, 3).unwrap();
    let t = LayerTrace::from_image(&model, &noisy, None).unwrap();
    let padded = denoisenet::tensor::symmetric_pad(&noisy, denoisenet::model::TEST_PAD).unwrap();
    let full = model.forward(&padded, false).unwrap().denoised;
    let pad = denoisenet::model::TEST_PAD;
    assert!(t.partial_denoise(5).unwrap().bit_eq(&full.crop(pad, pad, 25, 25).unwrap()));
    assert!(t.partial_denoise(6).is_err());
}

#[test]
fn rmse_entry_zero_is_the_noisy_rmse() {
    let t = trace(4, 3);
    let (noisy, truth) = (t.noisy(), t.truth().unwrap());
    let n = noisy.len() as f64;
    let rmse = (noisy.data().iter().zip(truth.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / n).sqrt();
    let curve = t.layer_rmse_curve().unwrap();
    assert_eq!(curve.len(), 5);
    assert_eq!(curve[0], rmse);
}

#[test]
fn export_writes_the_documented_files() {
    let depth = 4;
    let t = trace(depth, 4);
    let dir = tempfile::tempdir().unwrap();
    let files = t.export(dir.path()).unwrap();
    assert_eq!(files.len(), depth + (depth + 1) + 1 + 2);
    let csvs = files.iter().filter(|p| p.extension().unwrap() == "csv").count();
    assert_eq!(csvs, 2);
    for p in &files {
        assert!(p.exists(), "{p:?}");
    }
}

#[test]
fn sidecar_ranges_invert_the_display_stretch() {
    let t = trace(5, 5);
    let dir = tempfile::tempdir().unwrap();
    t.export(dir.path()).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("layers.csv")).unwrap();
    for (i, row) in reader.records().enumerate() {
        let row = row.unwrap();
        assert_eq!(row[0].parse::<usize>().unwrap(), i + 1);
        let (lo, hi): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        let png = std::fs::read(dir.path().join(format!("residual_{:02}.png", i + 1))).unwrap();
        let levels = decode_gray(&png).unwrap().to_levels();
        let step = (hi - lo) / 255.0;
        for (&level, &r) in levels.iter().zip(t.residuals()[i].data()) {
            let restored = lo + level as f64 * step;
            assert!((restored - r as f64).abs() <= 0.5 * step + 1e-9, "layer {}: {restored} vs {r}", i + 1);
        }
    }
}

#[test]
fn layer_map_palette_matches_legend() {
    let t = trace(3, 6);
    let dir = tempfile::tempdir().unwrap();
    t.export(dir.path()).unwrap();
    let decoder = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(dir.path().join("layer_map.png")).unwrap()));
    let mut reader = decoder.read_info().unwrap();
    let palette = reader.info().palette.as_ref().unwrap().to_vec();
    let mut indices = vec![0; reader.output_buffer_size().unwrap()];
    reader.next_frame(&mut indices).unwrap();
    let map = t.dominant_layer_map();
    assert_eq!(indices.iter().map(|&i| i as usize + 1).collect::<Vec<_>>(), map);
    let mut legend = csv::Reader::from_path(dir.path().join("layers.csv")).unwrap();
    for (i, row) in legend.records().enumerate() {
        let row = row.unwrap();
        let rgb: Vec<u8> = (3..6).map(|c| row[c].parse().unwrap()).collect();
        assert_eq!(rgb, palette[3 * i..3 * i + 3]);
    }
}

#[test]
fn export_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = trace(3, 7).export(a.path()).unwrap();
    let fb = trace(3, 7).export(b.path()).unwrap();
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{x:?}");
    }
}

proptest! {
    #[test]
    fn dominant_layer_matches_brute_force_scan(depth in 1usize..7, seed in any::<u64>()) {
        let (h, w) = (5, 6);
        let d = random_decomposition(depth, h, w, seed);
        let t = LayerTrace::new(Tensor::zeros(&[1, h, w, 1]), d.clone(), None, 0).unwrap();
        let map = t.dominant_layer_map();
        prop_assert_eq!(map.len(), h * w);
        for (px, &layer) in map.iter().enumerate() {
            let mags: Vec<f32> = d.residuals.iter().map(|r| r.data()[px].abs()).collect();
            let max = mags.iter().copied().fold(f32::MIN, f32::max);
            let first = mags.iter().position(|&m| m == max).unwrap() + 1;
            prop_assert_eq!(layer, first);
            prop_assert!((1..=depth).contains(&layer));
        }
    }
}
