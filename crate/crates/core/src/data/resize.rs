use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Half-pixel-centred bilinear sampling weights along one axis.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Resizes `[H, W, C]` to `[out_h, out_w, C]`.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = match *input.shape() {
        [h, w, c] if h > 0 && w > 0 => (h, w, c),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "bilinear_resize: expected non-empty [H, W, C], got {:?}",
                input.shape()
            )))
        }
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("bilinear_resize: empty target".into()));
    }
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = input.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let p = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = p(y0, x0) + (p(y0, x1) - p(y0, x0)) * fx;
                let bottom = p(y1, x0) + (p(y1, x1) - p(y1, x0)) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_sizes_match() {
        let t = Tensor::from_fn(&[3, 4, 2], |i| i as f64 * 0.1);
        assert_eq!(bilinear_resize(&t, 3, 4).unwrap(), t);
    }

    #[test]
    fn smooth_mean_is_preserved() {
        let t = Tensor::from_fn(&[40, 40, 1], |i| {
            let (y, x) = ((i / 40) as f64, (i % 40) as f64);
            0.5 + 0.3 * (y / 7.0).sin() * (x / 9.0).cos()
        });
        let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
        for size in [17, 64, 224] {
            let r = bilinear_resize(&t, size, size).unwrap();
            assert!((mean(&r) - mean(&t)).abs() / mean(&t) < 0.01, "size {size}");
        }
    }

    #[test]
    fn halving_averages_pairs() {
        let t = Tensor::new(vec![1, 4, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let r = bilinear_resize(&t, 1, 2).unwrap();
        assert_eq!(r.data(), &[0.5, 2.5]);
    }
}
