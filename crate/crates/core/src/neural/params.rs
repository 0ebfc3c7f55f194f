use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths of a masked GRU stack followed by a tanh bottleneck and a sigmoid head.
///
/// An empty `gru_units` gives a bottleneck-only network fed by flat feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub gru_units: Vec<usize>,
    pub dense_units: Vec<usize>,
    /// Dropout rate applied after the first dense layer in training mode.
    pub dropout: f64,
}

impl NetworkSpec {
    /// Six GRUs (50..100 units), two Dense(2000) layers, 5% dropout.
    pub fn drift_regressor(input_dim: usize) -> Self {
        Self {
            input_dim,
            gru_units: vec![50, 60, 70, 80, 90, 100],
            dense_units: vec![2000, 2000],
            dropout: 0.05,
        }
    }

    /// The bottleneck part alone, for features that carry no time axis.
    pub fn bottleneck_only(input_dim: usize) -> Self {
        Self {
            input_dim,
            gru_units: Vec::new(),
            dense_units: vec![2000, 2000],
            dropout: 0.05,
        }
    }

    pub fn is_sequential(&self) -> bool {
        !self.gru_units.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if self.gru_units.iter().chain(&self.dense_units).any(|&u| u == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    fn bottleneck_input(&self) -> usize {
        self.gru_units.last().copied().unwrap_or(self.input_dim)
    }

    /// Learnable parameter count.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut fan_in = self.input_dim;
        for &h in &self.gru_units {
            total += 3 * (fan_in * h + h * h + h);
            fan_in = h;
        }
        for &d in self.dense_units.iter().chain(std::iter::once(&1)) {
            total += fan_in * d + d;
            fan_in = d;
        }
        total
    }

    /// Parameters belonging to the recurrent part.
    pub fn temporal_param_count(&self) -> usize {
        let mut total = 0;
        let mut fan_in = self.input_dim;
        for &h in &self.gru_units {
            total += 3 * (fan_in * h + h * h + h);
            fan_in = h;
        }
        total
    }
}

/// One GRU layer. Gate blocks are laid out `[z | r | h]` along the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    /// Input kernel, `in x 3h`.
    pub w: Array2<f64>,
    /// Recurrent kernel, `h x 3h`.
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl GruLayer {
    pub fn zeros(input: usize, units: usize) -> Self {
        Self {
            w: Array2::zeros((input, 3 * units)),
            u: Array2::zeros((units, 3 * units)),
            b: Array1::zeros(3 * units),
        }
    }

    pub fn units(&self) -> usize {
        self.u.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `in x out`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }
}

/// All learnable weights. The last dense layer is the scalar sigmoid head.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub gru: Vec<GruLayer>,
    pub dense: Vec<DenseLayer>,
}

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut gru = Vec::with_capacity(spec.gru_units.len());
        let mut fan_in = spec.input_dim;
        for &h in &spec.gru_units {
            gru.push(GruLayer::zeros(fan_in, h));
            fan_in = h;
        }
        let mut dense = Vec::with_capacity(spec.dense_units.len() + 1);
        fan_in = spec.bottleneck_input();
        for &d in spec.dense_units.iter().chain(std::iter::once(&1)) {
            dense.push(DenseLayer::zeros(fan_in, d));
            fan_in = d;
        }
        Ok(Self {
            spec: spec.clone(),
            gru,
            dense,
        })
    }

    /// Glorot-uniform input and dense kernels, orthogonal recurrent kernels, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(spec)?;
        for layer in &mut params.gru {
            glorot_uniform(&mut layer.w, rng);
            let h = layer.units();
            for gate in 0..3 {
                let q = orthogonal(h, rng);
                layer.u.slice_mut(s![.., gate * h..(gate + 1) * h]).assign(&q);
            }
        }
        for layer in &mut params.dense {
            glorot_uniform(&mut layer.w, rng);
        }
        Ok(params)
    }

    /// Same shapes, every value zero.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.spec).expect("spec already validated")
    }

    /// Parameter tensors in declaration order: per GRU `w, u, b`, then per dense `w, b`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * self.gru.len() + 2 * self.dense.len());
        for l in &self.gru {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.u.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        for l in &self.dense {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> =
            Vec::with_capacity(3 * self.gru.len() + 2 * self.dense.len());
        for l in &mut self.gru {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.u.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        for l in &mut self.dense {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.len(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn get(&self, index: usize) -> f64 {
        let mut offset = index;
        for t in self.tensors() {
            if offset < t.len() {
                return t[offset];
            }
            offset -= t.len();
        }
        panic!("parameter index {index} out of range")
    }

    pub fn set(&mut self, index: usize, value: f64) {
        let mut offset = index;
        for t in self.tensors_mut() {
            if offset < t.len() {
                t[offset] = value;
                return;
            }
            offset -= t.len();
        }
        panic!("parameter index {index} out of range")
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other * scale`, elementwise.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s * scale);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= c);
        }
    }
}

fn glorot_uniform<R: Rng + ?Sized>(w: &mut Array2<f64>, rng: &mut R) {
    let (fan_in, fan_out) = w.dim();
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    w.iter_mut().for_each(|v| *v = dist.sample(rng));
}

/// Square orthogonal matrix from the QR factorization of a Gaussian draw.
fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let q = qr.q();
    let r = qr.r();
    // Sign fix so the distribution is uniform over the orthogonal group.
    Array2::from_shape_fn((n, n), |(i, j)| {
        let d = r[(j, j)];
        let sign = if d < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * sign
    })
}
