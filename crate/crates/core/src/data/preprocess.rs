use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Global contrast normalization: subtract the image mean, divide by
/// `max(std, epsilon)` (population standard deviation).
pub fn gcn(image: &Tensor, epsilon: f64) -> Result<Tensor> {
    if !(epsilon > 0.0) {
        return Err(Error::config("gcn epsilon must be positive"));
    }
    let first = image.data()[0];
    if image.data().iter().all(|&x| x == first) {
        return Ok(image.map(|_| 0.0));
    }
    let n = image.len() as f64;
    let mean = image.data().iter().sum::<f64>() / n;
    let var = image.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt().max(epsilon);
    Ok(image.map(|x| (x - mean) / scale))
}

/// Deterministic augmentation: optional horizontal flip, then a shift by
/// `(dy, dx)` with zero fill. Positive `dx` moves content right.
pub fn augment_with(image: &Tensor, flip: bool, dy: i64, dx: i64) -> Result<Tensor> {
    let [c, h, w] = match *image.shape() {
        [c, h, w] => [c, h, w],
        _ => return Err(Error::shape(format!("augment needs [C, H, W], got {:?}", image.shape()))),
    };
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = y as i64 - dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            for x in 0..w {
                let sx = x as i64 - dx;
                if sx < 0 || sx >= w as i64 {
                    continue;
                }
                let sx = if flip { w - 1 - sx as usize } else { sx as usize };
                out[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx];
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out)
}

/// Random flip with probability 0.5, then a uniform shift in
/// `[-max_shift, max_shift]` on each axis.
pub fn augment(image: &Tensor, max_shift: usize, rng: &mut Prng) -> Result<Tensor> {
    if image.rank() == 3 && max_shift >= image.shape()[1] {
        return Err(Error::config(format!("max_shift {max_shift} must be below the image height")));
    }
    let flip = rng.bernoulli(0.5);
    let span = 2 * max_shift as u64 + 1;
    let dy = rng.below(span) as i64 - max_shift as i64;
    let dx = rng.below(span) as i64 - max_shift as i64;
    augment_with(image, flip, dy, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_normalizes_to_zero() {
        let img = Tensor::filled(&[3, 4, 4], 0.7).unwrap();
        assert!(gcn(&img, 1e-8).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gcn_moments_and_idempotence() {
        let mut rng = Prng::new(2);
        for _ in 0..20 {
            let img = Tensor::uniform(&[3, 8, 8], -5.0, 9.0, &mut rng).unwrap();
            let once = gcn(&img, 1e-8).unwrap();
            let n = once.len() as f64;
            let mean = once.data().iter().sum::<f64>() / n;
            let std = (once.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-12);
            assert!((std - 1.0).abs() < 1e-9);
            let twice = gcn(&once, 1e-8).unwrap();
            assert!(twice.max_abs_diff(&once).unwrap() < 1e-9);
        }
    }

    #[test]
    fn identity_and_flip_involution() {
        let img = Tensor::uniform(&[2, 4, 5], 0.0, 1.0, &mut Prng::new(3)).unwrap();
        assert_eq!(augment_with(&img, false, 0, 0).unwrap(), img);
        let f = augment_with(&img, true, 0, 0).unwrap();
        assert_ne!(f, img);
        assert_eq!(augment_with(&f, true, 0, 0).unwrap(), img);
    }

    #[test]
    fn shift_leaves_zero_band_on_entering_edge() {
        let ones = Tensor::filled(&[1, 6, 6], 1.0).unwrap();
        let s = augment_with(&ones, false, 0, 2).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(s.data()[y * 6 + x], if x < 2 { 0.0 } else { 1.0 });
            }
        }
        let up = augment_with(&ones, false, -1, 0).unwrap();
        assert_eq!(up.data().iter().filter(|&&v| v == 0.0).count(), 6);
        assert!(up.data()[30..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_augment_is_deterministic() {
        let img = Tensor::uniform(&[3, 8, 8], 0.0, 1.0, &mut Prng::new(4)).unwrap();
        let a = augment(&img, 2, &mut Prng::new(10)).unwrap();
        let b = augment(&img, 2, &mut Prng::new(10)).unwrap();
        assert_eq!(a, b);
        assert!(augment(&img, 8, &mut Prng::new(0)).is_err());
    }
}
