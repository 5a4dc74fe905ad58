use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean of every channel over all pixels: `[H, W, C] -> [C]`.
pub fn global_average_pool(input: &Tensor) -> Result<Tensor> {
    let (h, w, c) = match *input.shape() {
        [h, w, c] if h > 0 && w > 0 => (h, w, c),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "global_average_pool: expected non-empty [H, W, C], got {:?}",
                input.shape()
            )))
        }
    };
    let mut out = vec![0.0; c];
    for px in input.data().chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let n = (h * w) as f64;
    Ok(Tensor::vector(out.into_iter().map(|s| s / n).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let constant = Tensor::filled(&[3, 4, 2], 1.25);
        assert_eq!(global_average_pool(&constant).unwrap().data(), &[1.25, 1.25]);
        let single = Tensor::new(vec![1, 1, 3], vec![4.0, -1.0, 0.5]).unwrap();
        assert_eq!(global_average_pool(&single).unwrap().data(), single.data());
        let quad = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_average_pool(&quad).unwrap().data(), &[2.5]);
        assert!(global_average_pool(&Tensor::zeros(&[0, 2, 1])).is_err());
    }
}
