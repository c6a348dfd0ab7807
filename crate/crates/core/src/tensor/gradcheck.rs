use super::{Tape, Tensor, Var};
use crate::error::{ensure, Result};

/// Compares the tape gradient of a scalar function with central finite
/// differences. Returns max |analytic − numeric| / max(1, |analytic|).
#[allow(clippy::needless_range_loop)]
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    ensure!(
        step > 0.0,
        Contract,
        "finite-difference step must be positive"
    );
    let eval = |point: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(point);
        let out = f(&tape, v)?;
        ensure!(
            out.numel() == 1,
            Contract,
            "grad_check needs a scalar function"
        );
        let y = out.item();
        ensure!(
            y.is_finite(),
            Evaluation,
            "function value {y} is not finite"
        );
        Ok(y)
    };

    eval(x)?;
    let tape = Tape::new();
    let v = tape.param(x);
    let out = f(&tape, v)?;
    let analytic = tape.backward(out)?.get(v);

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::new(vec![1], vec![3.0]).unwrap();
        let err = grad_check(|_, v| Ok(v.mul(v)?.sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn non_finite_value_is_an_evaluation_error() {
        let x = Tensor::new(vec![1], vec![-1.0]).unwrap();
        let res = grad_check(|_, v| Ok(v.ln().sum()), &x, 1e-5);
        assert!(matches!(res, Err(Error::Evaluation(_))));
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draw = |r: usize, c: usize| {
            Tensor::matrix(
                r,
                c,
                (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .unwrap()
        };
        let x = draw(3, 4);
        let other = draw(4, 2);
        let row = draw(1, 4);
        let col = draw(3, 1);
        let positive =
            Tensor::matrix(3, 4, x.data().iter().map(|v| v.abs() + 0.5).collect()).unwrap();

        type Case = Box<dyn for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>>;
        let (o, r, c) = (other.clone(), row.clone(), col.clone());
        let cases: Vec<(&str, Case)> = vec![
            (
                "add",
                Box::new(move |t, v| Ok(v.add(t.constant(&r))?.square().sum())),
            ),
            (
                "sub",
                Box::new(move |t, v| Ok(t.constant(&c).sub(v)?.square().sum())),
            ),
            ("mul", Box::new(|_, v| Ok(v.mul(v)?.mul(v)?.sum()))),
            (
                "matmul",
                Box::new(move |t, v| Ok(v.matmul(t.constant(&o))?.square().sum())),
            ),
            ("relu", Box::new(|_, v| Ok(v.relu().square().sum()))),
            ("sigmoid", Box::new(|_, v| Ok(v.sigmoid().sum()))),
            ("softplus", Box::new(|_, v| Ok(v.softplus().sum()))),
            ("exp", Box::new(|_, v| Ok(v.exp().sum()))),
            (
                "scale",
                Box::new(|_, v| Ok(v.scale(-2.5).add_scalar(1.0).square().sum())),
            ),
            ("sum_rows", Box::new(|_, v| Ok(v.sum_rows().square().sum()))),
            (
                "gather",
                Box::new(|_, v| Ok(v.gather_rows(&[2, 0, 2])?.square().sum())),
            ),
            (
                "concat",
                Box::new(|_, v| Ok(v.concat_cols(v.scale(2.0))?.square().sum())),
            ),
        ];
        for (name, f) in &cases {
            let err = grad_check(f, &x, 1e-5).unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
        let err = grad_check(|_, v| Ok(v.ln().sum()), &positive, 1e-5).unwrap();
        assert!(err < 1e-4, "ln: {err}");
        let err = grad_check(|t, v| Ok(t.scalar(1.0).div(v)?.sum()), &positive, 1e-5).unwrap();
        assert!(err < 1e-4, "div: {err}");
    }
}
