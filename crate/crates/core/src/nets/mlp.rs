use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::rng::SceneRng;

/// Fully connected layer `y = x W + b` with `W: fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, or
    /// all zero when `zero` is set.
    pub fn init(fan_in: usize, fan_out: usize, zero: bool, rng: &mut SceneRng) -> Self {
        if zero {
            return Self {
                w: Tensor::zeros(fan_in, fan_out),
                b: Tensor::zeros(1, fan_out),
            };
        }
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.uniform(-bound, bound)).collect::<Vec<_>>();
        let w = draw(fan_in * fan_out);
        let b = draw(fan_out);
        Self {
            w: Tensor::new(fan_in, fan_out, w).expect("finite init"),
            b: Tensor::new(1, fan_out, b).expect("finite init"),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }
}

/// Stack of linear layers with ReLU between them. The last layer is left
/// linear unless `relu_last` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_last: bool,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn init(dims: &[usize], relu_last: bool, zero_last: bool, rng: &mut SceneRng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return invalid(format!("mlp dims {dims:?} need two or more positive entries"));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Linear::init(dims[i], dims[i + 1], zero_last && i + 1 == n, rng))
            .collect();
        Ok(Self { layers, relu_last })
    }

    pub fn from_layers(layers: Vec<Linear>, relu_last: bool) -> Result<Self> {
        if layers.is_empty() {
            return invalid("mlp needs at least one layer");
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return invalid("mlp layer dims do not chain");
            }
        }
        if layers.iter().any(|l| l.b.shape() != (1, l.fan_out())) {
            return invalid("mlp bias shape does not match its layer");
        }
        Ok(Self { layers, relu_last })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    /// `[input, hidden..., output]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Linear::fan_out));
        d
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("{prefix}.{i}.w"), &l.w), (format!("{prefix}.{i}.b"), &l.b)])
            .collect()
    }

    /// Records the weights on `tape`; the returned handles follow
    /// [`Mlp::tensors`] order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let n = self.layers.len();
        let mut h = x;
        for i in 0..n {
            h = tape.matmul(h, vars[2 * i])?;
            h = tape.add_row_bias(h, vars[2 * i + 1])?;
            if i + 1 < n || self.relu_last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}
