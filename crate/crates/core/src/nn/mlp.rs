//! Fully connected networks for the actor and critics.

use super::graph::{Graph, NodeId};
use super::params::{bias_uniform, kaiming_uniform, ParamStore};
use super::tensor::Tensor;
use super::NnError;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Head {
    Linear,
    /// `bound · tanh(·)`
    Tanh { bound: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width followed by each layer's output width.
    pub widths: Vec<usize>,
    pub head: Head,
}

impl MlpSpec {
    /// Four linear layers with ReLU between them.
    pub fn four_layer(input: usize, hidden: [usize; 3], output: usize, head: Head) -> Self {
        Self { widths: vec![input, hidden[0], hidden[1], hidden[2], output], head }
    }

    pub fn layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn input(&self) -> usize {
        self.widths[0]
    }

    pub fn output(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore, NnError> {
        if self.layers() == 0 || self.widths.contains(&0) {
            return Err(NnError::Shape(format!("mlp widths {:?}", self.widths)));
        }
        let mut s = ParamStore::new();
        for l in 0..self.layers() {
            let (i, o) = (self.widths[l], self.widths[l + 1]);
            s.insert(&format!("l{l}.w"), kaiming_uniform(&[o, i], i, rng))?;
            s.insert(&format!("l{l}.b"), bias_uniform(o, i, rng))?;
        }
        Ok(s)
    }
}

/// Adds the network to `g` and returns the output node `[B, out]`.
pub fn forward_mlp<'p>(g: &mut Graph<'p>, store: &'p ParamStore, spec: &MlpSpec, x: NodeId) -> Result<NodeId, NnError> {
    let width = g.value(x).rows_cols().1;
    if width != spec.input() {
        return Err(NnError::Shape(format!("mlp input width {width}, expected {}", spec.input())));
    }
    let mut h = x;
    for l in 0..spec.layers() {
        let w = g.param(store, &format!("l{l}.w"))?;
        let b = g.param(store, &format!("l{l}.b"))?;
        h = g.linear(h, w, Some(b))?;
        if l + 1 < spec.layers() {
            h = g.relu(h);
        }
    }
    Ok(match spec.head {
        Head::Linear => h,
        Head::Tanh { bound } => {
            let t = g.tanh(h);
            g.scale(t, bound)
        }
    })
}

/// Forward pass without keeping the graph.
pub fn mlp_apply(store: &ParamStore, spec: &MlpSpec, input: &Tensor) -> Result<Tensor, NnError> {
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let y = forward_mlp(&mut g, store, spec, x)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::four_layer(5, [8, 8, 8], 3, Head::Tanh { bound: 0.15 });
        let mut s = spec.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for n in s.names().to_vec() {
            s.get_mut(&n).unwrap().data_mut().fill(0.0);
        }
        let y = mlp_apply(&s, &spec, &Tensor::full(&[2, 5], 0.7)).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_layer() {
        let spec = MlpSpec { widths: vec![3, 3], head: Head::Linear };
        let mut s = spec.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        *s.get_mut("l0.w").unwrap() = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        s.get_mut("l0.b").unwrap().data_mut().fill(0.0);
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 0.25, -9.0]).unwrap();
        assert_eq!(mlp_apply(&s, &spec, &x).unwrap(), x);
    }

    #[test]
    fn rejects_wrong_width() {
        let spec = MlpSpec::four_layer(5, [4, 4, 4], 1, Head::Linear);
        let s = spec.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(mlp_apply(&s, &spec, &Tensor::zeros(&[1, 4])).is_err());
    }
}
