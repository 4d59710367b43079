use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::tensor::{Scalar, Tensor};

/// Per-unit multipliers: 0 for dropped units, `1/(1-p)` for survivors.
#[derive(Clone, Debug)]
pub struct DropoutMask<T> {
    factors: Option<Vec<T>>,
}

/// Inverted dropout; `drop_probability` is the fraction of units zeroed.
pub fn dropout<T: Scalar>(
    input: &Tensor<T>,
    drop_probability: f64,
    mode: Mode,
    seed: u64,
) -> Result<(Tensor<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&drop_probability) {
        return Err(Error::arg(
            "dropout",
            format!("drop probability must lie in [0, 1), got {drop_probability}"),
        ));
    }
    if mode == Mode::Eval || drop_probability == 0.0 {
        return Ok((input.clone(), DropoutMask { factors: None }));
    }
    let keep = T::lit(1.0 / (1.0 - drop_probability));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors: Vec<T> = (0..input.len())
        .map(|_| {
            if rng.random::<f64>() < drop_probability {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let out = input
        .data()
        .iter()
        .zip(&factors)
        .map(|(&x, &f)| x * f)
        .collect();
    Ok((
        Tensor::from_vec(input.shape(), out)?,
        DropoutMask {
            factors: Some(factors),
        },
    ))
}

pub fn dropout_backward<T: Scalar>(mask: &DropoutMask<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    match &mask.factors {
        None => Ok(grad_out.clone()),
        Some(f) if f.len() == grad_out.len() => Ok(Tensor::from_vec(
            grad_out.shape(),
            grad_out.data().iter().zip(f).map(|(&g, &m)| g * m).collect(),
        )?),
        Some(f) => Err(Error::shape(
            "dropout backward",
            format!("mask has {} units, gradient {}", f.len(), grad_out.len()),
        )),
    }
}
