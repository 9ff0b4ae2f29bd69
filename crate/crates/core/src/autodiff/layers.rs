use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Real, Tape, Tensor2, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slope")]
pub enum Activation {
    #[default]
    None,
    Relu,
    LeakyRelu(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormSpec {
    pub eps: f64,
    /// Weight of the old running value when folding in a batch statistic.
    pub momentum: f64,
}

impl Default for BatchNormSpec {
    fn default() -> Self {
        BatchNormSpec {
            eps: 1e-5,
            momentum: 0.9,
        }
    }
}

/// One affine layer, optionally followed by an activation and then batch
/// normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub batch_norm: Option<BatchNormSpec>,
}

impl LayerSpec {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, bn: bool) -> Self {
        LayerSpec {
            inputs,
            outputs,
            activation,
            batch_norm: bn.then(BatchNormSpec::default),
        }
    }

    /// Chain of layers `dims[0] → dims[1] → …`; every layer but the last
    /// uses `hidden`, the last uses `last`.
    pub fn chain(dims: &[usize], hidden: Activation, hidden_bn: bool, last: Activation, last_bn: bool) -> Vec<LayerSpec> {
        let n = dims.len().saturating_sub(1);
        (0..n)
            .map(|i| {
                if i + 1 == n {
                    LayerSpec::new(dims[i], dims[i + 1], last, last_bn)
                } else {
                    LayerSpec::new(dims[i], dims[i + 1], hidden, hidden_bn)
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Trained by the optimizer.
    Weight,
    /// State carried alongside (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor2<T>,
}

/// Flat, ordered parameter storage. Declaration order is the checkpoint
/// order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor2<T>) -> usize {
        self.params.push(Param {
            name: name.into(),
            kind,
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: usize) -> &Tensor2<T> {
        &self.params[id].value
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor2<T> {
        &mut self.params[id].value
    }

    pub fn name(&self, id: usize) -> &str {
        &self.params[id].name
    }

    pub fn kind(&self, id: usize) -> ParamKind {
        self.params[id].kind
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Ids of optimizer-trained parameters.
    pub fn weight_ids(&self) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.params[i].kind == ParamKind::Weight)
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .map(|p| p.value.len())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BnIds {
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    spec: LayerSpec,
    weight: usize,
    bias: usize,
    bn: Option<BnIds>,
}

/// How an [`Mlp`]'s parameters enter a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    /// Recorded as constants; no gradient is produced.
    Frozen,
    /// Recorded as parameters with slot `offset + id`, so that several
    /// stores can share one tape.
    Trainable { offset: usize },
}

impl Default for Binding {
    fn default() -> Self {
        Binding::Trainable { offset: 0 }
    }
}

/// Stack of point-wise layers whose parameters live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Result of [`Mlp::forward`]: the output node plus per-layer batch
/// statistics (mean, variance) for layers that normalized in training mode.
pub struct MlpForward<T> {
    pub output: Var,
    pub batch_stats: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl Mlp {
    /// Registers the layers in `store`, initialized uniformly in
    /// `±1/sqrt(fan_in)`.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        specs: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Mlp> {
        for (i, pair) in specs.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::LayerShape {
                    layer: i + 1,
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let bound = 1.0 / (spec.inputs.max(1) as f64).sqrt();
            let mut w = Tensor2::zeros(spec.inputs, spec.outputs);
            for v in w.data_mut() {
                *v = T::from_f64(rng.random_range(-bound..bound));
            }
            let mut b = Tensor2::zeros(1, spec.outputs);
            for v in b.data_mut() {
                *v = T::from_f64(rng.random_range(-bound..bound));
            }
            let weight = store.add(format!("{name}.{i}.weight"), ParamKind::Weight, w);
            let bias = store.add(format!("{name}.{i}.bias"), ParamKind::Weight, b);
            let bn = spec.batch_norm.map(|_| BnIds {
                gamma: store.add(
                    format!("{name}.{i}.bn.gamma"),
                    ParamKind::Weight,
                    Tensor2::filled(1, spec.outputs, T::one()),
                ),
                beta: store.add(
                    format!("{name}.{i}.bn.beta"),
                    ParamKind::Weight,
                    Tensor2::zeros(1, spec.outputs),
                ),
                running_mean: store.add(
                    format!("{name}.{i}.bn.running_mean"),
                    ParamKind::Buffer,
                    Tensor2::zeros(1, spec.outputs),
                ),
                running_var: store.add(
                    format!("{name}.{i}.bn.running_var"),
                    ParamKind::Buffer,
                    Tensor2::filled(1, spec.outputs, T::one()),
                ),
            });
            layers.push(Layer {
                spec: spec.clone(),
                weight,
                bias,
                bn,
            });
        }
        Ok(Mlp { layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.outputs)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Parameter ids of layer `i`: (weight, bias).
    pub fn layer_params(&self, i: usize) -> (usize, usize) {
        (self.layers[i].weight, self.layers[i].bias)
    }

    pub fn layer_spec(&self, i: usize) -> &LayerSpec {
        &self.layers[i].spec
    }

    /// Every parameter id owned by this MLP, buffers included.
    pub fn param_ids(&self) -> Vec<usize> {
        let mut ids = Vec::new();
        for l in &self.layers {
            ids.push(l.weight);
            ids.push(l.bias);
            if let Some(bn) = &l.bn {
                ids.extend([bn.gamma, bn.beta, bn.running_mean, bn.running_var]);
            }
        }
        ids
    }

    /// Applies the layers row-wise. In training mode batch normalization
    /// uses statistics of the rows of `x`; otherwise the running averages.
    pub fn forward<'a, T: Real>(
        &self,
        store: &'a ParamStore<T>,
        tape: &mut Tape<'a, T>,
        x: Var,
        train: bool,
        binding: Binding,
    ) -> Result<MlpForward<T>> {
        let mut h = x;
        let mut stats = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let cols = tape.value(h).cols();
            if cols != layer.spec.inputs {
                return Err(Error::LayerShape {
                    layer: i,
                    expected: layer.spec.inputs,
                    got: cols,
                });
            }
            let bind = |tape: &mut Tape<'a, T>, id: usize| match binding {
                Binding::Frozen => tape.input_ref(store.get(id)),
                Binding::Trainable { offset } => tape.param(offset + id, store.get(id)),
            };
            let w = bind(tape, layer.weight);
            let b = bind(tape, layer.bias);
            h = tape.linear(h, w, Some(b))?;
            h = match layer.spec.activation {
                Activation::None => h,
                Activation::Relu => tape.relu(h),
                Activation::LeakyRelu(s) => tape.leaky_relu(h, T::from_f64(s)),
            };
            match (&layer.bn, layer.spec.batch_norm) {
                (Some(bn), Some(cfg)) => {
                    let eps = T::from_f64(cfg.eps);
                    if train {
                        let gamma = bind(tape, bn.gamma);
                        let beta = bind(tape, bn.beta);
                        let (out, mean, var) = tape.batch_norm(h, gamma, beta, eps)?;
                        h = out;
                        stats.push(Some((mean, var)));
                    } else {
                        let (g, b) = (store.get(bn.gamma), store.get(bn.beta));
                        let (m, v) = (store.get(bn.running_mean), store.get(bn.running_var));
                        let scale: Vec<T> = (0..layer.spec.outputs)
                            .map(|j| g.data()[j] / (v.data()[j] + eps).sqrt())
                            .collect();
                        let shift: Vec<T> = (0..layer.spec.outputs)
                            .map(|j| b.data()[j] - m.data()[j] * scale[j])
                            .collect();
                        h = tape.column_affine(h, scale, &shift)?;
                        stats.push(None);
                    }
                }
                _ => stats.push(None),
            }
        }
        Ok(MlpForward {
            output: h,
            batch_stats: stats,
        })
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running_stats<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        stats: &[Option<(Vec<T>, Vec<T>)>],
    ) {
        for (layer, st) in self.layers.iter().zip(stats) {
            let (Some(bn), Some(cfg), Some((mean, var))) = (&layer.bn, layer.spec.batch_norm, st)
            else {
                continue;
            };
            let mom = T::from_f64(cfg.momentum);
            let keep = T::one() - mom;
            for (r, &m) in store.get_mut(bn.running_mean).data_mut().iter_mut().zip(mean) {
                *r = mom * *r + keep * m;
            }
            for (r, &v) in store.get_mut(bn.running_var).data_mut().iter_mut().zip(var) {
                *r = mom * *r + keep * v;
            }
        }
    }
}

/// Shared-weight MLP applied identically to each input row.
pub fn forward_pointwise_mlp<'a, T: Real>(
    mlp: &Mlp,
    store: &'a ParamStore<T>,
    input: Var,
    tape: &mut Tape<'a, T>,
    train: bool,
) -> Result<MlpForward<T>> {
    if tape.value(input).rows() == 0 {
        return Err(Error::Empty("point-wise MLP input has no rows".into()));
    }
    mlp.forward(store, tape, input, train, Binding::default())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identity_layer_then_relu() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(
            &mut store,
            "m",
            &[LayerSpec::new(3, 3, Activation::Relu, false)],
            &mut rng,
        )
        .unwrap();
        let (w, b) = mlp.layer_params(0);
        *store.get_mut(w) = Tensor2::identity(3);
        *store.get_mut(b) = Tensor2::zeros(1, 3);
        let mut tape = Tape::new();
        let x = tape.input(Tensor2::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap());
        let out = forward_pointwise_mlp(&mlp, &store, x, &mut tape, false).unwrap();
        assert_eq!(tape.value(out.output).data(), &[1.0, 0.0, 3.0]);
    }

    #[test]
    fn shape_error_names_layer() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(
            &mut store,
            "m",
            &LayerSpec::chain(&[3, 4, 2], Activation::Relu, false, Activation::None, false),
            &mut rng,
        )
        .unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor2::zeros(2, 5));
        match forward_pointwise_mlp(&mlp, &store, x, &mut tape, false) {
            Err(Error::LayerShape { layer, expected, got }) => {
                assert_eq!((layer, expected, got), (0, 3, 5));
            }
            other => panic!("unexpected {:?}", other.map(|o| o.output)),
        }
    }

    #[test]
    fn inconsistent_chain_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let specs = [
            LayerSpec::new(3, 4, Activation::Relu, false),
            LayerSpec::new(5, 2, Activation::None, false),
        ];
        assert!(matches!(
            Mlp::new(&mut store, "m", &specs, &mut rng),
            Err(Error::LayerShape { layer: 1, .. })
        ));
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(
            &mut store,
            "m",
            &[LayerSpec::new(3, 5, Activation::Relu, false)],
            &mut rng,
        )
        .unwrap();
        let input: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut tape = Tape::new();
        let x = tape.input(Tensor2::from_rows(&input).unwrap());
        let out = forward_pointwise_mlp(&mlp, &store, x, &mut tape, false).unwrap();
        let out = tape.value(out.output);
        let (w, b) = mlp.layer_params(0);
        let (w, b) = (store.get(w), store.get(b));
        for (i, row) in input.iter().enumerate() {
            for j in 0..5 {
                let mut acc = b.get(0, j);
                for (d, &xv) in row.iter().enumerate() {
                    acc += xv * w.get(d, j);
                }
                let expect = acc.max(0.0);
                assert!((out.get(i, j) - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(
            &mut store,
            "m",
            &[LayerSpec::new(1, 1, Activation::None, true)],
            &mut rng,
        )
        .unwrap();
        mlp.update_running_stats(&mut store, &[Some((vec![2.0], vec![3.0]))]);
        let ids = mlp.param_ids();
        assert!((store.get(ids[4]).data()[0] - 0.2).abs() < 1e-12);
        assert!((store.get(ids[5]).data()[0] - 1.2).abs() < 1e-12);
    }
}
