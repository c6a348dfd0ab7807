use rand::Rng;

use super::tape::{sigmoid, softplus};
use super::{Gradients, Parameters, Tape, Tensor, Var};
use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    fn apply_var(self, x: Var<'_>) -> Var<'_> {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Softplus => x.softplus(),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Softplus => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Softplus,
            other => return Err(Error::Config(format!("unknown activation code {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[in, out]`, so a batch `[B, in]` maps to `[B, out]` by `x · W + b`.
    pub weight: Tensor,
    /// `[1, out]`.
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        ensure!(
            weight.shape().len() == 2 && bias.numel() == weight.cols(),
            Dimension,
            "weight {:?} incompatible with bias {:?}",
            weight.shape(),
            bias.shape()
        );
        let out = weight.cols();
        let bias = Tensor::new(vec![1, out], bias.into_data())?;
        Ok(Self {
            weight: weight.with_grad(),
            bias: bias.with_grad(),
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// An [`MlpParams`] registered on a tape.
pub struct BoundMlp<'t> {
    vars: Vec<(Var<'t>, Var<'t>, Activation)>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        ensure!(
            !layers.is_empty(),
            Dimension,
            "an MLP needs at least one layer"
        );
        for pair in layers.windows(2) {
            ensure!(
                pair[0].output_dim() == pair[1].input_dim(),
                Dimension,
                "layer widths {} and {} do not chain",
                pair[0].output_dim(),
                pair[1].input_dim()
            );
        }
        Ok(Self { layers })
    }

    /// Uniform Glorot initialization with zero biases. `widths` lists every
    /// layer boundary including input and output, `activations` one per layer.
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(
            widths.len() >= 2 && activations.len() == widths.len() - 1,
            Dimension,
            "{} widths need {} activations, got {}",
            widths.len(),
            widths.len().saturating_sub(1),
            activations.len()
        );
        let mut layers = Vec::with_capacity(activations.len());
        for (w, &act) in widths.windows(2).zip(activations) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            layers.push(Layer::new(
                Tensor::matrix(fan_in, fan_out, data)?,
                Tensor::zeros(&[1, fan_out]),
                act,
            )?);
        }
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        BoundMlp {
            vars: self
                .layers
                .iter()
                .map(|l| (tape.param(&l.weight), tape.param(&l.bias), l.activation))
                .collect(),
        }
    }

    /// Adds the gradients of a bound copy into each parameter's `grad`.
    pub fn absorb_grads(&mut self, bound: &BoundMlp<'_>, grads: &Gradients) {
        for (layer, (w, b, _)) in self.layers.iter_mut().zip(&bound.vars) {
            add_grad(&mut layer.weight, &grads.get(*w));
            add_grad(&mut layer.bias, &grads.get(*b));
        }
    }

    /// Forward pass without building a graph.
    pub fn evaluate(&self, input: &Tensor) -> Result<Tensor> {
        ensure!(
            input.cols() == self.input_dim(),
            Dimension,
            "input has {} features, network expects {}",
            input.cols(),
            self.input_dim()
        );
        let rows = input.rows();
        let mut x = input.data().to_vec();
        for layer in &self.layers {
            let (k, c) = (layer.input_dim(), layer.output_dim());
            let w = layer.weight.data();
            let b = layer.bias.data();
            let mut out = vec![0.0; rows * c];
            for i in 0..rows {
                let orow = &mut out[i * c..(i + 1) * c];
                for t in 0..k {
                    let xv = x[i * k + t];
                    for (o, wv) in orow.iter_mut().zip(&w[t * c..(t + 1) * c]) {
                        *o += xv * wv;
                    }
                }
                for (o, bv) in orow.iter_mut().zip(b) {
                    *o = layer.activation.apply(*o + bv);
                }
            }
            x = out;
        }
        Tensor::matrix(rows, self.output_dim(), x)
    }
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, input: Var<'t>) -> Result<Var<'t>> {
        let mut x = input;
        for (w, b, act) in &self.vars {
            ensure!(
                x.cols() == w.rows(),
                Dimension,
                "input has {} features, layer expects {}",
                x.cols(),
                w.rows()
            );
            x = act.apply_var(x.matmul(*w)?.add(*b)?);
        }
        Ok(x)
    }
}

pub fn add_grad(t: &mut Tensor, g: &[f64]) {
    match &mut t.grad {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(e, v)| *e += v),
        None => t.grad = Some(g.to_vec()),
    }
}

impl Parameters for MlpParams {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for layer in &mut self.layers {
            f(&mut layer.weight);
            f(&mut layer.bias);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(act: Activation) -> MlpParams {
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        MlpParams::new(vec![Layer::new(w, Tensor::zeros(&[2]), act).unwrap()]).unwrap()
    }

    fn run(params: &MlpParams, x: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let input = tape.constant(&Tensor::matrix(1, x.len(), x.to_vec()).unwrap());
        bound.forward(input).unwrap().value().into_data()
    }

    #[test]
    fn identity_layer_passes_through() {
        assert_eq!(
            run(&single(Activation::Identity), &[1.0, 2.0]),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn relu_layer_clips_negatives() {
        assert_eq!(run(&single(Activation::Relu), &[-1.0, 3.0]), vec![0.0, 3.0]);
    }

    #[test]
    fn graph_forward_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = MlpParams::init(
            &[3, 5, 2],
            &[Activation::Relu, Activation::Sigmoid],
            &mut rng,
        )
        .unwrap();
        let x = Tensor::matrix(2, 3, vec![0.3, -1.2, 0.8, 1.5, 0.1, -0.4]).unwrap();

        // Hand-unrolled chain.
        let l0 = &params.layers[0];
        let l1 = &params.layers[1];
        let mut expected = Vec::new();
        for r in 0..2 {
            let h: Vec<f64> = (0..5)
                .map(|j| {
                    let s: f64 = (0..3).map(|i| x.get(r, i) * l0.weight.get(i, j)).sum();
                    (s + l0.bias.get(0, j)).max(0.0)
                })
                .collect();
            for j in 0..2 {
                let s: f64 = (0..5).map(|i| h[i] * l1.weight.get(i, j)).sum();
                expected.push(1.0 / (1.0 + (-(s + l1.bias.get(0, j))).exp()));
            }
        }

        let tape = Tape::new();
        let out = params.bind(&tape).forward(tape.constant(&x)).unwrap();
        for (a, b) in out.value().data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
        let straight = params.evaluate(&x).unwrap();
        assert_eq!(straight.data(), out.value().data());
    }

    #[test]
    fn mismatched_input_is_a_dimension_error() {
        let params = single(Activation::Identity);
        let tape = Tape::new();
        let input = tape.constant(&Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        assert!(matches!(
            params.bind(&tape).forward(input),
            Err(Error::Dimension(_))
        ));
        assert!(params
            .evaluate(&Tensor::matrix(1, 3, vec![0.0; 3]).unwrap())
            .is_err());
    }

    #[test]
    fn layers_must_chain() {
        let a = Layer::new(
            Tensor::zeros(&[2, 3]),
            Tensor::zeros(&[3]),
            Activation::Relu,
        )
        .unwrap();
        let b = Layer::new(
            Tensor::zeros(&[2, 1]),
            Tensor::zeros(&[1]),
            Activation::Relu,
        )
        .unwrap();
        assert!(MlpParams::new(vec![a, b]).is_err());
    }
}
