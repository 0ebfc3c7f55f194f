//! Masked GRU layers with a ReLU candidate activation.
//!
//! `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
//! `c = relu(x W_h + (r ⊙ h) U_h + b_h)`, `h' = (1 - z) ⊙ h + z ⊙ c`.
//! At masked steps the state passes through unchanged.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::params::GruLayer;
use crate::error::{Error, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Time-major batch of sequences: `x` is `(T * B) x F` with row `t * B + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    x: Array2<f64>,
    mask: Array2<bool>,
    batch: usize,
}

impl SeqBatch {
    /// Build from per-sample `(frames x features)` matrices and per-frame masks.
    ///
    /// Time is truncated after the last valid frame of the batch; trailing padding
    /// never reaches the recurrence.
    pub fn new(sequences: &[ArrayView2<'_, f64>], masks: &[&[bool]]) -> Result<Self> {
        if sequences.is_empty() || sequences.len() != masks.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sequences with {} masks",
                sequences.len(),
                masks.len()
            )));
        }
        let features = sequences[0].ncols();
        let mut steps = 0;
        for (i, (seq, mask)) in sequences.iter().zip(masks).enumerate() {
            if seq.ncols() != features || mask.len() != seq.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "sequence {i} is {:?} with a mask of {}, expected {features} features",
                    seq.dim(),
                    mask.len()
                )));
            }
            let last = mask.iter().rposition(|&m| m).ok_or_else(|| {
                Error::InvalidArgument(format!("sequence {i} is fully masked"))
            })?;
            steps = steps.max(last + 1);
        }
        let batch = sequences.len();
        let mut x = Array2::zeros((steps * batch, features));
        let mut m = Array2::from_elem((steps, batch), false);
        for (b, (seq, mask)) in sequences.iter().zip(masks).enumerate() {
            for t in 0..steps.min(seq.nrows()) {
                x.row_mut(t * batch + b).assign(&seq.row(t));
                m[[t, b]] = mask[t];
            }
        }
        Ok(Self { x, mask: m, batch })
    }

    /// Sequences whose first `lens[b]` frames are valid.
    pub fn from_prefixes(sequences: &[ArrayView2<'_, f64>], lens: &[usize]) -> Result<Self> {
        let masks: Vec<Vec<bool>> = sequences
            .iter()
            .zip(lens)
            .map(|(s, &n)| (0..s.nrows()).map(|i| i < n).collect())
            .collect();
        let refs: Vec<&[bool]> = masks.iter().map(|m| m.as_slice()).collect();
        Self::new(sequences, &refs)
    }

    pub fn steps(&self) -> usize {
        self.mask.nrows()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn features(&self) -> usize {
        self.x.ncols()
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.x
    }

    /// `steps x batch` validity mask.
    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }
}

/// Per-step values kept for the backward pass, all `(T * B) x h`.
#[derive(Debug, Clone)]
pub struct GruCache {
    input: Array2<f64>,
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    cand_pre: Array2<f64>,
    rh: Array2<f64>,
}

impl GruCache {
    /// Candidate pre-activations; their signs decide the ReLU branch.
    pub fn candidate_preactivations(&self) -> &Array2<f64> {
        &self.cand_pre
    }
}

impl GruLayer {
    /// One step for a single sample.
    pub fn cell(&self, x: ArrayView1<'_, f64>, h_prev: ArrayView1<'_, f64>) -> Array1<f64> {
        let h = self.units();
        let xw = x.dot(&self.w) + &self.b;
        let hu_zr = h_prev.dot(&self.u.slice(s![.., ..2 * h]));
        let z = (&xw.slice(s![..h]) + &hu_zr.slice(s![..h])).mapv(sigmoid);
        let r = (&xw.slice(s![h..2 * h]) + &hu_zr.slice(s![h..])).mapv(sigmoid);
        let rh = &r * &h_prev;
        let cand = (&xw.slice(s![2 * h..]) + &rh.dot(&self.u.slice(s![.., 2 * h..]))).mapv(relu);
        Zip::from(&h_prev)
            .and(&z)
            .and(&cand)
            .map_collect(|&hp, &zz, &c| (1.0 - zz) * hp + zz * c)
    }

    /// Run the layer over a time-major input `(T * B) x in`; returns the `(T * B) x h`
    /// state sequence and the backward cache.
    pub fn forward_seq(
        &self,
        input: Array2<f64>,
        mask: &Array2<bool>,
        layer_index: usize,
    ) -> Result<(Array2<f64>, GruCache)> {
        let h = self.units();
        let (steps, batch) = mask.dim();
        if input.nrows() != steps * batch || input.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "GRU layer {layer_index}: input {:?}, expected ({}, {})",
                input.dim(),
                steps * batch,
                self.input_dim()
            )));
        }
        let rows = steps * batch;
        let mut xw = input.dot(&self.w);
        xw += &self.b;

        let u_zr = self.u.slice(s![.., ..2 * h]);
        let u_h = self.u.slice(s![.., 2 * h..]);

        let mut out = Array2::zeros((rows, h));
        let mut h_prev_all = Array2::zeros((rows, h));
        let mut z_all = Array2::zeros((rows, h));
        let mut r_all = Array2::zeros((rows, h));
        let mut cand_all = Array2::zeros((rows, h));
        let mut rh_all = Array2::zeros((rows, h));

        let mut state = Array2::<f64>::zeros((batch, h));
        let mut gates = Array2::<f64>::zeros((batch, 2 * h));
        let mut cand = Array2::<f64>::zeros((batch, h));

        for t in 0..steps {
            let block = t * batch..(t + 1) * batch;
            let xw_t = xw.slice(s![block.clone(), ..]);

            gates.assign(&xw_t.slice(s![.., ..2 * h]));
            general_mat_mul(1.0, &state, &u_zr, 1.0, &mut gates);
            gates.mapv_inplace(sigmoid);
            let z = gates.slice(s![.., ..h]);
            let r = gates.slice(s![.., h..]);

            let rh = &r * &state;
            cand.assign(&xw_t.slice(s![.., 2 * h..]));
            general_mat_mul(1.0, &rh, &u_h, 1.0, &mut cand);

            h_prev_all.slice_mut(s![block.clone(), ..]).assign(&state);
            z_all.slice_mut(s![block.clone(), ..]).assign(&z);
            r_all.slice_mut(s![block.clone(), ..]).assign(&r);
            cand_all.slice_mut(s![block.clone(), ..]).assign(&cand);
            rh_all.slice_mut(s![block.clone(), ..]).assign(&rh);

            for b in 0..batch {
                if !mask[[t, b]] {
                    continue;
                }
                let mut s_row = state.row_mut(b);
                Zip::from(&mut s_row)
                    .and(z.row(b))
                    .and(cand.row(b))
                    .for_each(|s, &zz, &a| *s = (1.0 - zz) * *s + zz * relu(a));
            }
            out.slice_mut(s![block, ..]).assign(&state);
        }

        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                location: format!("GRU layer {layer_index} forward"),
            });
        }

        Ok((
            out,
            GruCache {
                input,
                h_prev: h_prev_all,
                z: z_all,
                r: r_all,
                cand_pre: cand_all,
                rh: rh_all,
            },
        ))
    }

    /// Reverse pass. `d_out` is the loss gradient w.r.t. each step's output state.
    /// Returns parameter gradients and the gradient w.r.t. the layer input.
    pub fn backward_seq(
        &self,
        cache: &GruCache,
        d_out: &Array2<f64>,
        mask: &Array2<bool>,
        need_input_grad: bool,
        layer_index: usize,
    ) -> Result<(GruLayer, Option<Array2<f64>>)> {
        let h = self.units();
        let (steps, batch) = mask.dim();
        let rows = steps * batch;
        let u_zr_t = self.u.slice(s![.., ..2 * h]).reversed_axes();
        let u_h_t = self.u.slice(s![.., 2 * h..]).reversed_axes();

        let mut d_pre = Array2::<f64>::zeros((rows, 3 * h));
        let mut d_next = Array2::<f64>::zeros((batch, h));
        let mut d_gates = Array2::<f64>::zeros((batch, 2 * h));
        let mut d_cand = Array2::<f64>::zeros((batch, h));
        let mut d_rh = Array2::<f64>::zeros((batch, h));

        for t in (0..steps).rev() {
            let block = t * batch..(t + 1) * batch;
            let g = &d_out.slice(s![block.clone(), ..]) + &d_next;
            let hp = cache.h_prev.slice(s![block.clone(), ..]);
            let z = cache.z.slice(s![block.clone(), ..]);
            let r = cache.r.slice(s![block.clone(), ..]);
            let a = cache.cand_pre.slice(s![block.clone(), ..]);

            // d_cand = g * z * relu'(a); dz_pre = g * (c - hp) * z(1-z)
            Zip::from(&mut d_cand)
                .and(&g)
                .and(&z)
                .and(&a)
                .for_each(|dc, &gg, &zz, &aa| *dc = if aa > 0.0 { gg * zz } else { 0.0 });
            general_mat_mul(1.0, &d_cand, &u_h_t, 0.0, &mut d_rh);

            {
                let (mut dz, mut dr) = d_gates.view_mut().split_at(Axis(1), h);
                Zip::from(&mut dz)
                    .and(&g)
                    .and(&z)
                    .and(&a)
                    .and(&hp)
                    .for_each(|d, &gg, &zz, &aa, &hh| {
                        *d = gg * (relu(aa) - hh) * zz * (1.0 - zz);
                    });
                Zip::from(&mut dr)
                    .and(&d_rh)
                    .and(&hp)
                    .and(&r)
                    .for_each(|d, &drh, &hh, &rr| *d = drh * hh * rr * (1.0 - rr));
            }

            // d_hp = g (1 - z) + d_rh * r + d_gates U_zr^T
            let mut d_hp = Zip::from(&g)
                .and(&z)
                .and(&d_rh)
                .and(&r)
                .map_collect(|&gg, &zz, &drh, &rr| gg * (1.0 - zz) + drh * rr);
            general_mat_mul(1.0, &d_gates, &u_zr_t, 1.0, &mut d_hp);

            for b in 0..batch {
                if mask[[t, b]] {
                    let row = t * batch + b;
                    d_pre.slice_mut(s![row, ..2 * h]).assign(&d_gates.row(b));
                    d_pre.slice_mut(s![row, 2 * h..]).assign(&d_cand.row(b));
                } else {
                    d_hp.row_mut(b).assign(&g.row(b));
                }
            }
            d_next = d_hp;
        }

        let mut grad = GruLayer::zeros(self.input_dim(), h);
        general_mat_mul(1.0, &cache.input.t(), &d_pre, 0.0, &mut grad.w);
        grad.b = d_pre.sum_axis(Axis(0));
        {
            let mut gu_zr = grad.u.slice_mut(s![.., ..2 * h]);
            general_mat_mul(
                1.0,
                &cache.h_prev.t(),
                &d_pre.slice(s![.., ..2 * h]),
                0.0,
                &mut gu_zr,
            );
        }
        {
            let mut gu_h = grad.u.slice_mut(s![.., 2 * h..]);
            general_mat_mul(
                1.0,
                &cache.rh.t(),
                &d_pre.slice(s![.., 2 * h..]),
                0.0,
                &mut gu_h,
            );
        }

        let d_input = need_input_grad.then(|| d_pre.dot(&self.w.t()));

        let finite = grad.w.iter().chain(grad.u.iter()).chain(grad.b.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Divergence {
                location: format!("GRU layer {layer_index} backward"),
            });
        }
        Ok((grad, d_input))
    }
}
