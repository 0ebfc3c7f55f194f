//! Full forward and reverse passes: masked GRU stack, tanh bottleneck, sigmoid head.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::gru::{sigmoid, GruCache, SeqBatch};
use super::params::NetworkParams;
use crate::error::{Error, Result};

/// Network input for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum NetInput {
    Sequence(SeqBatch),
    /// `batch x features` rows for bottleneck-only networks.
    Vector(Array2<f64>),
}

impl NetInput {
    pub fn batch(&self) -> usize {
        match self {
            NetInput::Sequence(s) => s.batch(),
            NetInput::Vector(v) => v.nrows(),
        }
    }

    pub fn vectors(rows: &[&[f64]]) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.is_empty() || rows.iter().any(|r| r.len() != width) {
            return Err(Error::ShapeMismatch("ragged or empty vector batch".into()));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(NetInput::Vector(
            Array2::from_shape_vec((rows.len(), width), flat).expect("checked shape"),
        ))
    }

    pub fn sequences(seqs: &[ArrayView2<'_, f64>], lens: &[usize]) -> Result<Self> {
        Ok(NetInput::Sequence(SeqBatch::from_prefixes(seqs, lens)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Cached activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mask: Option<Array2<bool>>,
    gru: Vec<GruCache>,
    /// Input to each dense layer.
    dense_inputs: Vec<Array2<f64>>,
    /// tanh outputs of each hidden dense layer, before dropout.
    dense_acts: Vec<Array2<f64>>,
    dropout_mask: Option<Array2<f64>>,
    /// Sigmoid outputs.
    outputs: Array1<f64>,
}

impl ForwardTrace {
    pub fn predictions(&self) -> &Array1<f64> {
        &self.outputs
    }

    pub fn dropout_mask(&self) -> Option<&Array2<f64>> {
        self.dropout_mask.as_ref()
    }

    /// Branch pattern of every piecewise-linear point (ReLU signs) in this pass.
    /// Two passes with equal signatures lie on the same smooth piece.
    pub fn relu_signature(&self) -> Vec<bool> {
        self.gru
            .iter()
            .flat_map(|c| c.candidate_preactivations().iter().map(|&a| a > 0.0))
            .collect()
    }
}

/// Draw an inverted-dropout mask: entries are `0` or `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut R,
) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

impl NetworkParams {
    /// Forward pass. In `Train` mode a dropout mask is drawn from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &NetInput,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        let mask = match mode {
            Mode::Eval => None,
            Mode::Train if self.spec.dropout > 0.0 && !self.spec.dense_units.is_empty() => {
                let width = self.dense[0].w.ncols();
                Some(dropout_mask(input.batch(), width, self.spec.dropout, rng))
            }
            Mode::Train => None,
        };
        self.forward_with_dropout(input, mask)
    }

    /// Forward pass with an explicit dropout mask (`None` disables dropout).
    pub fn forward_with_dropout(
        &self,
        input: &NetInput,
        dropout: Option<Array2<f64>>,
    ) -> Result<ForwardTrace> {
        let batch = input.batch();
        let (bottleneck_in, gru_caches, mask) = match input {
            NetInput::Sequence(seq) => {
                if self.gru.is_empty() {
                    return Err(Error::ShapeMismatch(
                        "sequence input given to a bottleneck-only network".into(),
                    ));
                }
                if seq.features() != self.spec.input_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "input has {} features, network expects {}",
                        seq.features(),
                        self.spec.input_dim
                    )));
                }
                let mut caches = Vec::with_capacity(self.gru.len());
                let mut x = seq.inputs().clone();
                for (i, layer) in self.gru.iter().enumerate() {
                    let (out, cache) = layer.forward_seq(x, seq.mask(), i)?;
                    caches.push(cache);
                    x = out;
                }
                // State at the final step equals the state at each sample's last valid
                // step, since masked steps carry it through.
                let last = (seq.steps() - 1) * batch;
                let v = x.slice(s![last.., ..]).to_owned();
                (v, caches, Some(seq.mask().clone()))
            }
            NetInput::Vector(v) => {
                if !self.gru.is_empty() {
                    return Err(Error::ShapeMismatch(
                        "vector input given to a recurrent network".into(),
                    ));
                }
                if v.ncols() != self.spec.input_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "input has {} features, network expects {}",
                        v.ncols(),
                        self.spec.input_dim
                    )));
                }
                (v.clone(), Vec::new(), None)
            }
        };
        if let Some(m) = &dropout {
            if m.dim() != (batch, self.dense[0].w.ncols()) {
                return Err(Error::ShapeMismatch(format!(
                    "dropout mask {:?} does not match ({batch}, {})",
                    m.dim(),
                    self.dense[0].w.ncols()
                )));
            }
        }

        let n_dense = self.dense.len();
        let mut dense_inputs = Vec::with_capacity(n_dense);
        let mut dense_acts = Vec::with_capacity(n_dense - 1);
        let mut x = bottleneck_in;
        for (i, layer) in self.dense.iter().enumerate() {
            let mut a = Array2::zeros((batch, layer.w.ncols()));
            general_mat_mul(1.0, &x, &layer.w, 0.0, &mut a);
            a += &layer.b;
            dense_inputs.push(x);
            if i + 1 == n_dense {
                x = a;
                break;
            }
            a.mapv_inplace(f64::tanh);
            let mut next = a.clone();
            if i == 0 {
                if let Some(m) = &dropout {
                    next *= m;
                }
            }
            dense_acts.push(a);
            x = next;
        }
        let outputs = x.column(0).mapv(sigmoid);
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                location: "network output".into(),
            });
        }
        Ok(ForwardTrace {
            mask,
            gru: gru_caches,
            dense_inputs,
            dense_acts,
            dropout_mask: dropout,
            outputs,
        })
    }

    /// Predictions in eval mode.
    pub fn predict(&self, input: &NetInput) -> Result<Array1<f64>> {
        Ok(self.forward_with_dropout(input, None)?.outputs)
    }

    /// Gradients of the batch-mean absolute error w.r.t. every parameter.
    pub fn backward(&self, trace: &ForwardTrace, targets: &[f64]) -> Result<(f64, NetworkParams)> {
        let batch = trace.outputs.len();
        if targets.len() != batch {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for a batch of {batch}",
                targets.len()
            )));
        }
        let loss = mae_batch(trace.outputs.as_slice().expect("contiguous"), targets);
        let mut grads = self.zeros_like();

        // d loss / d logit
        let mut delta = Array2::from_shape_fn((batch, 1), |(b, _)| {
            let y = trace.outputs[b];
            mae_subgradient(y, targets[b]) / batch as f64 * y * (1.0 - y)
        });

        for i in (0..self.dense.len()).rev() {
            let layer = &self.dense[i];
            let input = &trace.dense_inputs[i];
            general_mat_mul(1.0, &input.t(), &delta, 0.0, &mut grads.dense[i].w);
            grads.dense[i].b = delta.sum_axis(Axis(0));
            let mut d_in = delta.dot(&layer.w.t());
            if i == 0 {
                delta = d_in;
                break;
            }
            // input of layer i is the (dropped-out) tanh output of layer i - 1
            let act = &trace.dense_acts[i - 1];
            if i == 1 {
                if let Some(m) = &trace.dropout_mask {
                    d_in *= m;
                }
            }
            Zip::from(&mut d_in)
                .and(act)
                .for_each(|d, &a| *d *= 1.0 - a * a);
            delta = d_in;
        }

        if !self.gru.is_empty() {
            let mask = trace.mask.as_ref().expect("sequence trace carries its mask");
            let (steps, _) = mask.dim();
            let last = self.gru.len() - 1;
            let mut d_out = Array2::zeros((steps * batch, self.gru[last].units()));
            d_out.slice_mut(s![(steps - 1) * batch.., ..]).assign(&delta);
            for i in (0..self.gru.len()).rev() {
                let (g, d_in) =
                    self.gru[i].backward_seq(&trace.gru[i], &d_out, mask, i > 0, i)?;
                grads.gru[i] = g;
                if let Some(d) = d_in {
                    d_out = d;
                }
            }
        }

        if !grads.is_finite() {
            return Err(Error::Divergence {
                location: "gradient".into(),
            });
        }
        Ok((loss, grads))
    }
}

pub fn mae_loss(y_hat: f64, y: f64) -> f64 {
    (y_hat - y).abs()
}

pub fn mae_batch(y_hat: &[f64], y: &[f64]) -> f64 {
    if y_hat.is_empty() {
        return 0.0;
    }
    y_hat
        .iter()
        .zip(y)
        .map(|(&a, &b)| mae_loss(a, b))
        .sum::<f64>()
        / y_hat.len() as f64
}

/// d|y_hat - y| / d y_hat, taken as 0 at equality.
pub fn mae_subgradient(y_hat: f64, y: f64) -> f64 {
    if y_hat > y {
        1.0
    } else if y_hat < y {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::NetworkSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 4,
            gru_units: vec![3, 4],
            dense_units: vec![5],
            dropout: 0.05,
        }
    }

    #[test]
    fn zero_params_predict_half() {
        let params = NetworkParams::zeros(&NetworkSpec::drift_regressor(16)).unwrap();
        let x = Array2::from_elem((10, 16), 0.3);
        let input = NetInput::sequences(&[x.view()], &[7]).unwrap();
        let y = params.predict(&input).unwrap();
        assert_eq!(y[0], 0.5);
    }

    #[test]
    fn padding_does_not_change_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = NetworkParams::init(&tiny_spec(), &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
        let mut padded = Array2::zeros((500, 4));
        padded.slice_mut(s![..6, ..]).assign(&x);
        let a = params
            .predict(&NetInput::sequences(&[x.view()], &[6]).unwrap())
            .unwrap();
        let b = params
            .predict(&NetInput::sequences(&[padded.view()], &[6]).unwrap())
            .unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn all_masked_rejected() {
        let x = Array2::<f64>::zeros((5, 4));
        assert!(NetInput::sequences(&[x.view()], &[0]).is_err());
    }

    #[test]
    fn mae_values() {
        assert_eq!(mae_loss(0.4, 0.4), 0.0);
        assert!((mae_loss(0.5, 0.2) - 0.3).abs() < 1e-15);
        assert_eq!(mae_subgradient(0.4, 0.4), 0.0);
        assert!((mae_batch(&[0.5, 0.1], &[0.2, 0.2]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = NetworkParams::init(&tiny_spec(), &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.2);
        let input = NetInput::sequences(&[x.view()], &[3]).unwrap();
        let trace = params.forward(&input, Mode::Train, &mut rng).unwrap();
        let y = trace.predictions()[0];
        let (loss, grads) = params.backward(&trace, &[y]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_sample_leaves_gradient_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = NetworkParams::init(&tiny_spec(), &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 + j as f64) * 0.1);
        let single = NetInput::sequences(&[x.view()], &[3]).unwrap();
        let double = NetInput::sequences(&[x.view(), x.view()], &[3, 3]).unwrap();
        let t1 = params.forward_with_dropout(&single, None).unwrap();
        let t2 = params.forward_with_dropout(&double, None).unwrap();
        let (l1, g1) = params.backward(&t1, &[0.9]).unwrap();
        let (l2, g2) = params.backward(&t2, &[0.9, 0.9]).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn eval_is_deterministic_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = NetworkParams::init(&tiny_spec(), &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i * j) as f64 - 3.0);
        let input = NetInput::sequences(&[x.view()], &[5]).unwrap();
        let a = params.predict(&input).unwrap();
        let b = params.predict(&input).unwrap();
        assert_eq!(a, b);
        assert!(a[0] > 0.0 && a[0] < 1.0);
    }

    #[test]
    fn input_kind_must_match_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let seq_net = NetworkParams::init(&tiny_spec(), &mut rng).unwrap();
        let vec_input = NetInput::vectors(&[&[0.0; 4]]).unwrap();
        assert!(seq_net.predict(&vec_input).is_err());
        let flat = NetworkParams::init(
            &NetworkSpec {
                input_dim: 4,
                gru_units: vec![],
                dense_units: vec![5],
                dropout: 0.0,
            },
            &mut rng,
        )
        .unwrap();
        let x = Array2::<f64>::zeros((2, 4));
        let seq = NetInput::sequences(&[x.view()], &[2]).unwrap();
        assert!(flat.predict(&seq).is_err());
        assert!(flat.predict(&vec_input).is_ok());
    }
}
