use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DiffError, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Linear,
    Softplus,
    Selu,
    LeakyRelu,
}

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Softplus => tape.softplus(x),
            Activation::Selu => tape.selu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_RELU_SLOPE),
        }
    }
}

/// Layer widths plus activations. `widths[0]` is the input width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self, DiffError> {
        let spec = Self { widths, hidden, output };
        spec.validate()?;
        Ok(spec)
    }

    pub fn linear(input: usize, output: usize) -> Self {
        Self {
            widths: vec![input, output],
            hidden: Activation::Linear,
            output: Activation::Linear,
        }
    }

    pub fn validate(&self) -> Result<(), DiffError> {
        if self.widths.len() < 2 || self.widths.iter().any(|&w| w == 0) {
            return Err(DiffError::BadSpec(format!("widths {:?}", self.widths)));
        }
        if !matches!(self.output, Activation::Linear | Activation::Softplus) {
            return Err(DiffError::BadSpec(format!(
                "output activation {:?} not in {{linear, softplus}}",
                self.output
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// An MLP whose weights live in a [`ParamStore`] under `prefix`.
///
/// Layer `i` owns `{prefix}.l{i}.w` (`in x out`) and `{prefix}.l{i}.b` (`1 x out`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub prefix: String,
}

impl Mlp {
    pub fn new(spec: MlpSpec, prefix: impl Into<String>) -> Result<Self, DiffError> {
        spec.validate()?;
        Ok(Self {
            spec,
            prefix: prefix.into(),
        })
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{}.w", self.prefix, layer)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{}.b", self.prefix, layer)
    }

    /// Glorot-normal weights, zero biases.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for l in 0..self.spec.num_layers() {
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let w = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            store.insert(self.weight_name(l), Tensor::matrix(fan_in, fan_out, w).expect("shape"));
            store.insert(self.bias_name(l), Tensor::zeros(1, fan_out));
        }
    }

    /// Records the forward pass of `input` (`batch x in`) on `tape`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var, DiffError> {
        let in_w = tape.value(input).cols();
        if in_w != self.spec.input_width() {
            return Err(DiffError::Layer {
                layer: format!("{}.l0", self.prefix),
                detail: format!("input width {} but spec expects {}", in_w, self.spec.input_width()),
            });
        }
        let mut h = input;
        let last = self.spec.num_layers() - 1;
        for l in 0..=last {
            let layer_err = |e: DiffError| DiffError::Layer {
                layer: format!("{}.l{}", self.prefix, l),
                detail: e.to_string(),
            };
            let w = tape.param(store, &self.weight_name(l)).map_err(layer_err)?;
            let b = tape.param(store, &self.bias_name(l)).map_err(layer_err)?;
            let expect = (self.spec.widths[l], self.spec.widths[l + 1]);
            if tape.value(w).dims2()? != expect {
                return Err(layer_err(DiffError::BadSpec(format!(
                    "weight shape {:?}, spec wants {:?}",
                    tape.value(w).shape(),
                    expect
                ))));
            }
            let z = tape.matmul(h, w).map_err(layer_err)?;
            let z = tape.add(z, b).map_err(layer_err)?;
            let act = if l == last { self.spec.output } else { self.spec.hidden };
            h = act.apply(tape, z);
        }
        Ok(h)
    }

    /// Forward pass without gradient bookkeeping.
    pub fn eval(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor, DiffError> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, store, x)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let mlp = Mlp::new(MlpSpec::new(vec![3, 5, 2], Activation::Selu, Activation::Linear).unwrap(), "f").unwrap();
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
        for l in 0..2 {
            store.get_mut(&mlp.weight_name(l)).unwrap().data_mut().fill(0.0);
        }
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let y = mlp.eval(&store, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_is_identity() {
        let mlp = Mlp::new(MlpSpec::linear(3, 3), "id").unwrap();
        let mut store = ParamStore::new();
        store.insert(mlp.weight_name(0), Tensor::identity(3));
        store.insert(mlp.bias_name(0), Tensor::zeros(1, 3));
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        assert_eq!(mlp.eval(&store, &x).unwrap(), x);
    }

    #[test]
    fn wrong_input_width_names_layer() {
        let mlp = Mlp::new(MlpSpec::linear(3, 1), "enc").unwrap();
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let err = mlp.eval(&store, &Tensor::zeros(4, 2)).unwrap_err();
        assert!(err.to_string().contains("enc.l0"), "{err}");
    }

    #[test]
    fn spec_rejects_bad_activation_and_widths() {
        assert!(MlpSpec::new(vec![3], Activation::Linear, Activation::Linear).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Linear, Activation::Linear).is_err());
        assert!(MlpSpec::new(vec![3, 1], Activation::Linear, Activation::Selu).is_err());
    }
}
