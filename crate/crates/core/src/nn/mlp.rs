use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

/// `y = act(x · weight + bias)`, followed by inverted dropout when training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// How dropout behaves during a forward pass.
pub enum Dropout<'a> {
    /// Evaluation mode: identity.
    Off,
    /// Draw fresh masks; every mask used is appended to `masks`.
    Sample {
        rng: &'a mut ChaCha8Rng,
        masks: Vec<Tensor>,
    },
    /// Reuse masks recorded by an earlier `Sample` pass, in order.
    Replay { masks: &'a [Tensor], next: usize },
}

impl<'a> Dropout<'a> {
    pub fn sample(rng: &'a mut ChaCha8Rng) -> Self {
        Dropout::Sample {
            rng,
            masks: Vec::new(),
        }
    }

    pub fn replay(masks: &'a [Tensor]) -> Self {
        Dropout::Replay { masks, next: 0 }
    }

    /// Masks drawn so far by a `Sample` pass.
    pub fn into_masks(self) -> Vec<Tensor> {
        match self {
            Dropout::Sample { masks, .. } => masks,
            _ => Vec::new(),
        }
    }

    fn mask(&mut self, shape: &[usize], rate: f64) -> Result<Option<Tensor>, NnError> {
        if rate == 0.0 {
            return Ok(None);
        }
        match self {
            Dropout::Off => Ok(None),
            Dropout::Sample { rng, masks } => {
                let keep = 1.0 / (1.0 - rate);
                let n = shape.iter().product();
                let data = (0..n)
                    .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                let m = Tensor::new(shape.to_vec(), data)?;
                masks.push(m.clone());
                Ok(Some(m))
            }
            Dropout::Replay { masks, next } => {
                let m = masks.get(*next).cloned().ok_or(NnError::DropoutReplay(*next))?;
                *next += 1;
                Ok(Some(m))
            }
        }
    }
}

/// Parameters of an [`Mlp`] placed on a tape.
pub struct Bound<'m, 't> {
    mlp: &'m Mlp,
    params: Vec<Var<'t>>,
}

impl<'m, 't> Bound<'m, 't> {
    /// Weight and bias vars in [`Mlp::params`] order.
    pub fn params(&self) -> &[Var<'t>] {
        &self.params
    }

    pub fn forward(&self, x: Var<'t>, dropout: &mut Dropout<'_>) -> Result<Var<'t>, NnError> {
        let cols = x.value().cols();
        if cols != self.mlp.input_dim() {
            return Err(NnError::Dimension {
                expected: self.mlp.input_dim(),
                got: cols,
            });
        }
        let mut h = x;
        for (layer, wb) in self.mlp.layers.iter().zip(self.params.chunks(2)) {
            h = h.matmul(wb[0])?.add(wb[1])?;
            if layer.activation == Activation::Relu {
                h = h.relu()?;
            }
            if let Some(mask) = dropout.mask(&h.shape(), layer.dropout)? {
                h = h.mul(h.tape().constant(mask))?;
            }
        }
        Ok(h)
    }
}

/// He-initialized network: hidden layers use `activation` and `dropout_rate`,
/// the output layer is linear without dropout.
pub fn init_mlp(dims: &[usize], activation: Activation, dropout_rate: f64, seed: u64) -> Result<Mlp, NnError> {
    Mlp::init(dims, activation, dropout_rate, seed)
}

impl Mlp {
    pub fn init(dims: &[usize], activation: Activation, dropout_rate: f64, seed: u64) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::Dims(dims.to_vec()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(NnError::DropoutRate(dropout_rate));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let std = (2.0 / w[0] as f64).sqrt();
                Layer {
                    weight: Tensor::randn(&[w[0], w[1]], std, &mut rng),
                    bias: Tensor::zeros(&[w[1]]),
                    activation: if i == last { Activation::None } else { activation },
                    dropout: if i == last { 0.0 } else { dropout_rate },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Dims(Vec::new()));
        }
        for (i, l) in layers.iter().enumerate() {
            let (fan_in, out) = (l.weight.rows(), l.weight.cols());
            if l.weight.shape().len() != 2 || l.bias.shape() != [out] {
                return Err(NnError::Dims(l.weight.shape().to_vec()));
            }
            if i > 0 && layers[i - 1].weight.cols() != fan_in {
                return Err(NnError::Dimension {
                    expected: layers[i - 1].weight.cols(),
                    got: fan_in,
                });
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return Err(NnError::DropoutRate(l.dropout));
            }
        }
        Ok(Self { layers })
    }

    /// Replaces the output layer's activation (e.g. a ReLU feature extractor).
    pub fn with_output_activation(mut self, activation: Activation) -> Self {
        if let Some(l) = self.layers.last_mut() {
            l.activation = activation;
        }
        self
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    /// Weights and biases, interleaved per layer.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Places the parameters on `tape`, as leaves when `trainable`.
    pub fn bind<'m, 't>(&'m self, tape: &'t Tape, trainable: bool) -> Bound<'m, 't> {
        let params = self
            .params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        Bound { mlp: self, params }
    }

    /// Binds caller-provided vars as the parameters, in [`Mlp::params`] order.
    pub fn bind_vars<'m, 't>(&'m self, params: Vec<Var<'t>>) -> Result<Bound<'m, 't>, NnError> {
        let expected = self.params();
        if params.len() != expected.len() {
            return Err(NnError::Dimension {
                expected: expected.len(),
                got: params.len(),
            });
        }
        for (p, e) in params.iter().zip(&expected) {
            if p.shape() != e.shape() {
                return Err(NnError::Tensor(crate::tensor::TensorError::Shape {
                    op: "bind_vars",
                    lhs: e.shape().to_vec(),
                    rhs: p.shape(),
                }));
            }
        }
        Ok(Bound { mlp: self, params })
    }

    /// Evaluation-mode forward pass outside any training tape.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let out = bound.forward(tape.constant(x.clone()), &mut Dropout::Off)?;
        let v = out.value().clone();
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[rows, cols], 1.0, &mut rng)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = init_mlp(&[3, 5, 2], Activation::Relu, 0.0, 1).unwrap();
        for p in m.params_mut() {
            p.data_mut().fill(0.0);
        }
        let y = m.predict(&input(4, 3, 2)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let m = init_mlp(&[3, 8, 8, 2], Activation::Relu, 0.0, 4).unwrap();
        let x = input(6, 3, 5);
        let tape = Tape::new();
        let b = m.bind(&tape, true);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train = b.forward(tape.constant(x.clone()), &mut Dropout::sample(&mut rng)).unwrap();
        assert_eq!(*train.value(), m.predict(&x).unwrap());
    }

    #[test]
    fn single_layer_matches_direct_matrix_product() {
        let mut m = init_mlp(&[3, 2], Activation::Relu, 0.0, 7).unwrap();
        m.params_mut()[1].data_mut().copy_from_slice(&[0.25, -0.5]);
        let x = input(4, 3, 8);
        let y = m.predict(&x).unwrap();
        let w = &m.layers()[0].weight;
        for i in 0..4 {
            for j in 0..2 {
                let mut expected = [0.25, -0.5][j];
                for k in 0..3 {
                    expected += x.get(i, k) * w.get(k, j);
                }
                assert!((y.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_mlp(&[2, 3], Activation::Relu, 0.0, 11).unwrap();
        let b = init_mlp(&[2, 3], Activation::Relu, 0.0, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.layers()[0].bias.data().iter().all(|&v| v == 0.0));
        assert_ne!(a, init_mlp(&[2, 3], Activation::Relu, 0.0, 12).unwrap());
    }

    #[test]
    fn init_variance_follows_he_law() {
        let m = init_mlp(&[100, 100], Activation::Relu, 0.0, 13).unwrap();
        let w = m.layers()[0].weight.data();
        assert_eq!(w.len(), 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let target = 2.0 / 100.0;
        assert!((var - target).abs() / target < 0.2, "var {var}");
    }

    #[test]
    fn bad_dims_are_rejected() {
        assert!(matches!(init_mlp(&[], Activation::Relu, 0.0, 0), Err(NnError::Dims(_))));
        assert!(matches!(init_mlp(&[4], Activation::Relu, 0.0, 0), Err(NnError::Dims(_))));
        assert!(init_mlp(&[2, 2], Activation::Relu, 1.0, 0).is_err());
        let m = init_mlp(&[3, 2], Activation::Relu, 0.0, 0).unwrap();
        assert!(matches!(m.predict(&input(2, 4, 0)), Err(NnError::Dimension { expected: 3, got: 4 })));
    }

    #[test]
    fn layer_dims_chain() {
        let m = init_mlp(&[5, 7, 3, 2], Activation::Relu, 0.5, 0).unwrap();
        for w in m.layers().windows(2) {
            assert_eq!(w[0].weight.cols(), w[1].weight.rows());
        }
        assert_eq!(m.layers().last().unwrap().dropout, 0.0);
        assert!(Mlp::from_layers(vec![m.layers()[0].clone(), m.layers()[2].clone()]).is_err());
        assert!(Mlp::from_layers(m.layers().to_vec()).is_ok());
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let m = init_mlp(&[4, 16, 3], Activation::Relu, 0.5, 21).unwrap();
        let x = input(1, 4, 22);
        let eval = m.predict(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let draws = 10_000;
        let mut acc = vec![0.0; 3];
        for _ in 0..draws {
            let tape = Tape::new();
            let b = m.bind(&tape, false);
            let y = b.forward(tape.constant(x.clone()), &mut Dropout::sample(&mut rng)).unwrap();
            acc.iter_mut().zip(y.value().data()).for_each(|(a, v)| *a += v);
        }
        let scale = eval.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, e) in acc.iter().zip(eval.data()) {
            let mean = a / draws as f64;
            assert!((mean - e).abs() <= 0.02 * scale, "mean {mean} vs eval {e}");
        }
    }

    #[test]
    fn replayed_masks_reproduce_the_pass() {
        let m = init_mlp(&[3, 8, 2], Activation::Relu, 0.5, 31).unwrap();
        let x = input(5, 3, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let tape = Tape::new();
        let b = m.bind(&tape, false);
        let mut d = Dropout::sample(&mut rng);
        let first = b.forward(tape.constant(x.clone()), &mut d).unwrap().value().clone();
        let masks = d.into_masks();
        assert_eq!(masks.len(), 1);
        let again = b.forward(tape.constant(x), &mut Dropout::replay(&masks)).unwrap();
        assert_eq!(*again.value(), first);
    }
}
