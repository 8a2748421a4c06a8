use super::*;
use crate::models::{Family, ModelSpec};
use crate::rng;
use rand::Rng as _;

#[test]
fn uniform_attention_gives_equal_cells() {
    let t = 49;
    let w = Tensor::full(&[4, t, t], 1.0 / t as f64);
    let map = attention_map(&w, (7, 7), (224, 224)).unwrap();
    for v in map.grid.data() {
        assert!((v - 1.0 / 49.0).abs() < 1e-15);
    }
    assert!(map.upsampled.data().iter().all(|v| *v == 0.5));
}

#[test]
fn single_token_grid_is_one() {
    let map = attention_map(&Tensor::ones(&[1, 3, 1, 1]), (1, 1), (32, 32)).unwrap();
    assert_eq!(map.grid.data(), &[1.0]);
}

#[test]
fn salience_sums_to_one_and_ignores_head_order() {
    let mut r = rng::substream(3, "attn");
    let (h, t) = (3, 6);
    let mut data = Vec::new();
    for _ in 0..h * t {
        let row: Vec<f64> = (0..t).map(|_| r.random::<f64>()).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / s));
    }
    let w = Tensor::new(vec![h, t, t], data.clone()).unwrap();
    let s = salience(&w).unwrap();
    assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut swapped = data[t * t..2 * t * t].to_vec();
    swapped.extend_from_slice(&data[..t * t]);
    swapped.extend_from_slice(&data[2 * t * t..]);
    let s2 = salience(&Tensor::new(vec![h, t, t], swapped).unwrap()).unwrap();
    for (a, b) in s.iter().zip(&s2) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn one_hot_grid_peak_stays_in_its_cell() {
    for cell in 0..49 {
        let grid = Tensor::from_fn(&[7, 7], |i| f64::from(u8::from(i == cell)));
        let up = upsample(&grid, 224, 224).unwrap();
        let argmax = up
            .data()
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > up.data()[best] { i } else { best });
        let (y, x) = (argmax / 224, argmax % 224);
        assert_eq!((y / 32, x / 32), (cell / 7, cell % 7), "cell {cell}");
        assert_eq!(up.data()[argmax], 1.0);
    }
}

#[test]
fn alpha_zero_returns_input() {
    let mut r = rng::substream(4, "img");
    let img = Tensor::from_fn(&[3, 8, 8], |_| r.random::<f64>());
    let grid = Tensor::from_fn(&[2, 2], |i| i as f64);
    let map = AttentionMap {
        upsampled: upsample(&grid, 8, 8).unwrap(),
        grid,
    };
    assert_eq!(render_heatmap(&map, &img, 0.0).unwrap(), img);
    let a = render_heatmap(&map, &img, 0.4).unwrap();
    assert_eq!(a, render_heatmap(&map, &img, 0.4).unwrap());
}

#[test]
fn constant_grid_tints_uniformly_at_mid_ramp() {
    let map = AttentionMap {
        grid: Tensor::full(&[2, 2], 0.25),
        upsampled: upsample(&Tensor::full(&[2, 2], 0.25), 4, 4).unwrap(),
    };
    let out = render_heatmap(&map, &Tensor::zeros(&[3, 4, 4]), 1.0).unwrap();
    let mid = ramp_color(0.5);
    for c in 0..3 {
        assert!(out.data()[c * 16..(c + 1) * 16].iter().all(|v| *v == mid[c]));
    }
}

#[test]
fn ramp_runs_blue_to_red() {
    assert_eq!(RAMP[0], [0, 0, 255]);
    assert_eq!(RAMP[255], [255, 1, 0]);
    for w in RAMP.windows(2) {
        assert!(w[1][0] > w[0][0] && w[1][2] < w[0][2]);
    }
}

#[test]
fn extraction_requires_transformer() {
    let spec = ModelSpec::desk(Family::Cnn, 32);
    let mut m = Model::build(&spec).unwrap();
    let err = extract_attention(&mut m, &Tensor::zeros(&[3, 32, 32])).unwrap_err();
    assert!(matches!(err, Error::UnsupportedFamily(_)));

    let spec = ModelSpec::desk(Family::VitResnet16, 64);
    let mut m = Model::build(&spec).unwrap();
    let map = extract_attention(&mut m, &Tensor::full(&[3, 64, 64], 0.2)).unwrap();
    assert_eq!(map.grid.shape(), &[4, 4]);
    assert!((map.grid.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(map.upsampled.shape(), &[64, 64]);
}
