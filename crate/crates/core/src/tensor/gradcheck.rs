use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// One differentiable input to a [`grad_check`] target.
#[derive(Debug, Clone)]
pub struct GradCheckInput {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl GradCheckInput {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        Self {
            shape: shape.to_vec(),
            data,
        }
    }
}

/// Largest relative disagreement between reverse-mode gradients and central differences,
/// `|analytic − fd| / max(|analytic|, |fd|, 1e-8)`, over every input element.
pub fn grad_check<F>(f: F, inputs: &[GradCheckInput], h: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    grad_check_sampled(f, inputs, h, usize::MAX, 0)
}

/// As [`grad_check`], but probes at most `max_per_input` elements of each input,
/// chosen reproducibly from `seed`.
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[GradCheckInput],
    h: f64,
    max_per_input: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|i| Tensor::leaf(&i.shape, i.data.clone()))
        .collect::<Result<_>>()?;
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(Error::Contract("grad_check target must be scalar".into()));
    }
    out.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().map(|g| g.clone()).unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let eval = |which: usize, elem: usize, delta: f64| -> Result<f64> {
        let ts: Vec<Tensor> = inputs
            .iter()
            .enumerate()
            .map(|(j, inp)| {
                let mut d = inp.data.clone();
                if j == which {
                    d[elem] += delta;
                }
                Tensor::new(&inp.shape, d)
            })
            .collect::<Result<_>>()?;
        f(&ts)?.item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for (which, inp) in inputs.iter().enumerate() {
        let n = inp.data.len();
        let elems: Vec<usize> = if n <= max_per_input {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, max_per_input).into_vec();
            v.sort_unstable();
            v
        };
        for e in elems {
            let fd = (eval(which, e, h)? - eval(which, e, -h)?) / (2.0 * h);
            let a = analytic[which][e];
            let denom = a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max((a - fd).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = GradCheckInput::new(&[5], vec![0.3, -1.2, 2.0, 0.7, -0.1]);
        let err = grad_check(|t| Ok(t[0].mul(&t[0])?.sum()), &[x], 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }
}
