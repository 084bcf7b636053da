#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use varblur::rng::stream_rng;
use varblur::{Image, KernelBasis, MixingField};

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, 0)
}

pub fn random_basis(rng: &mut ChaCha8Rng, count: usize, size: usize) -> KernelBasis {
    let k2 = size * size;
    let mut data: Vec<f64> = (0..count * k2)
        .map(|_| rng.random::<f64>() + 1e-3)
        .collect();
    for chunk in data.chunks_exact_mut(k2) {
        let s: f64 = chunk.iter().sum();
        chunk.iter_mut().for_each(|t| *t /= s);
    }
    KernelBasis::new(count, size, data).unwrap()
}

pub fn random_field(rng: &mut ChaCha8Rng, count: usize, h: usize, w: usize) -> MixingField {
    let n = h * w;
    let mut coeffs: Vec<f64> = (0..count * n).map(|_| rng.random::<f64>()).collect();
    for i in 0..n {
        let s: f64 = (0..count).map(|b| coeffs[b * n + i]).sum();
        for b in 0..count {
            coeffs[b * n + i] /= s;
        }
    }
    MixingField::new(count, h, w, coeffs).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.random::<f64>()).unwrap()
}
