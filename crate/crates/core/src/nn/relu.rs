use super::RealTensor;
use crate::error::{Error, Result};

pub fn relu_forward(x: &RealTensor) -> RealTensor {
    let mut out = x.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes `grad_out` where `x > 0`; the kink at zero gets a zero gradient.
pub fn relu_backward(x: &RealTensor, grad_out: &RealTensor) -> Result<RealTensor> {
    if !x.same_shape(grad_out) {
        return Err(Error::dim(
            "relu backward",
            format!("{:?} vs {:?}", x.shape(), grad_out.shape()),
        ));
    }
    let mut out = grad_out.clone();
    for (g, v) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if *v <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_difference_check, GradCheck};
    use crate::rng::{substream, Domain};
    use rand::Rng;

    fn row(v: &[f64]) -> RealTensor {
        RealTensor::from_vec(1, v.len(), 1, 1, v.to_vec()).unwrap()
    }

    #[test]
    fn sign_cases() {
        assert_eq!(relu_forward(&row(&[-1.0, 0.0, 2.0])).as_slice(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&row(&[-1.0, 0.0, 2.0]), &row(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 5.0]);

        let pos = row(&[0.5, 1.0, 3.0]);
        assert_eq!(relu_forward(&pos), pos);
        let g = row(&[1.0, -2.0, 3.0]);
        assert_eq!(relu_backward(&pos, &g).unwrap(), g);
        assert!(relu_backward(&pos, &row(&[1.0])).is_err());
    }

    #[test]
    fn finite_differences_away_from_kink() {
        let mut rng = substream(1, Domain::Scratch, 0);
        let mut vals: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        vals.retain(|v: &f64| v.abs() >= 1e-3);
        let x = row(&vals);
        let w: Vec<f64> = (0..vals.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let analytic = relu_backward(&x, &row(&w)).unwrap();
        let err = finite_difference_check(
            |p: &[f64]| {
                relu_forward(&row(p))
                    .as_slice()
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| a * b)
                    .sum()
            },
            &vals,
            analytic.as_slice(),
            &GradCheck {
                step: 1e-6,
                ..GradCheck::default()
            },
        );
        assert!(err < 1e-6, "{err}");
    }
}
