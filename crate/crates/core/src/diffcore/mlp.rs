use std::cell::Cell;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::params::{Parameters, TensorView};
use super::Scalar;
use crate::error::{Error, Result};

/// ELU with alpha = 1.
#[inline]
pub fn elu<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
fn elu_grad<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        T::one()
    } else {
        z.exp()
    }
}

/// One affine layer, `y = W x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameters of a fully connected network: ELU between layers, identity on
/// the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    layers: Vec<Linear<T>>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn new(layers: Vec<Linear<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("mlp.layers", "at least one layer required"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    format!("mlp layer {} input", i + 1),
                    &[pair[0].output_dim()],
                    &[pair[1].input_dim()],
                ));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::shape(
                    format!("mlp layer {i} bias"),
                    &[l.output_dim()],
                    &[l.bias.len()],
                ));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Zero network with layer widths `dims = [in, h1, ..., out]`.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let layers = dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        MlpParams { layers }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases; the
    /// last layer is additionally multiplied by `output_scale`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], output_scale: f64, rng: &mut R) -> Self {
        let mut params = Self::zeros(dims);
        let n = params.layers.len();
        for (i, layer) in params.layers.iter_mut().enumerate() {
            let bound = 1.0 / (layer.input_dim() as f64).sqrt();
            let scale = if i + 1 == n { output_scale } else { 1.0 };
            for w in layer.weight.iter_mut() {
                *w = T::of(rng.random_range(-bound..bound) * scale);
            }
            for b in layer.bias.iter_mut() {
                *b = T::of(rng.random_range(-bound..bound) * scale);
            }
        }
        params
    }

    /// Single square layer with identity weights and zero bias.
    pub fn identity(dim: usize) -> Self {
        let mut p = Self::zeros(&[dim, dim]);
        p.layers[0].weight = Array2::eye(dim);
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims())
    }

    pub fn layers(&self) -> &[Linear<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear<T>] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.output_dim()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: l.weight.mapv(|x| U::of(x.as_f64())),
                    bias: l.bias.mapv(|x| U::of(x.as_f64())),
                })
                .collect(),
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::shape("mlp input", &[self.input_dim()], &[cols]));
        }
        Ok(())
    }

    /// Batched forward pass without recording; rows are samples.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(x.ncols())?;
        let n = self.layers.len();
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight.t()) + &layer.bias;
            if i + 1 < n {
                h.mapv_inplace(elu);
            }
        }
        Ok(h)
    }

    /// Batched forward pass that records what backprop needs.
    pub fn forward_taped(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, MlpTape<'_, T>)> {
        self.check_input(x.ncols())?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(h);
            h = if i + 1 < n { z.mapv(elu) } else { z.clone() };
            pre.push(z);
        }
        Ok((
            h,
            MlpTape {
                params: self,
                inputs,
                pre,
                single_use: true,
                consumed: Cell::new(false),
            },
        ))
    }

    /// Forward a single vector.
    pub fn apply(&self, x: &[T]) -> Result<(Vec<T>, MlpTape<'_, T>)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let (y, tape) = self.forward_taped(view)?;
        Ok((y.into_iter().collect(), tape))
    }

    /// In-place `self += other * factor`.
    pub fn add_scaled(&mut self, other: &MlpParams<T>, factor: T) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(factor, &b.weight);
            a.bias.scaled_add(factor, &b.bias);
        }
    }
}

impl<T: Scalar> Parameters<T> for MlpParams<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, l) in self.layers.iter().enumerate() {
            out.push(TensorView {
                name: format!("{i}.weight"),
                shape: l.weight.shape().to_vec(),
                data: l.weight.as_slice().expect("standard layout"),
            });
            out.push(TensorView {
                name: format!("{i}.bias"),
                shape: vec![l.bias.len()],
                data: l.bias.as_slice().expect("standard layout"),
            });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in self.layers.iter_mut() {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

/// Forward record of one MLP application.
///
/// Tapes are single-use by default: a second [`MlpTape::backprop`] returns
/// [`Error::TapeConsumed`]. Call [`MlpTape::replayable`] to lift that.
#[derive(Debug)]
pub struct MlpTape<'p, T> {
    params: &'p MlpParams<T>,
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    single_use: bool,
    consumed: Cell<bool>,
}

impl<'p, T: Scalar> MlpTape<'p, T> {
    pub fn replayable(mut self) -> Self {
        self.single_use = false;
        self
    }

    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.batch_size(), self.params.output_dim())
    }

    /// Reverse pass for upstream gradient `dy` (same shape as the output).
    pub fn backprop(&self, dy: ArrayView2<'_, T>) -> Result<(MlpParams<T>, Array2<T>)> {
        if self.single_use && self.consumed.replace(true) {
            return Err(Error::TapeConsumed);
        }
        let mut grads = self.params.zeros_like();
        let dx = self.accumulate(dy, &mut grads, true)?;
        Ok((grads, dx.expect("input gradient requested")))
    }

    /// Add parameter gradients into `grads`; optionally return the input
    /// gradient. Does not touch the single-use flag.
    pub(crate) fn accumulate(
        &self,
        dy: ArrayView2<'_, T>,
        grads: &mut MlpParams<T>,
        want_input_grad: bool,
    ) -> Result<Option<Array2<T>>> {
        let (rows, cols) = self.output_shape();
        if dy.dim() != (rows, cols) {
            return Err(Error::shape(
                "mlp backprop upstream",
                &[rows, cols],
                dy.shape(),
            ));
        }
        let n = self.params.layers.len();
        let mut delta = dy.to_owned();
        for i in (0..n).rev() {
            if i + 1 < n {
                ndarray::Zip::from(&mut delta)
                    .and(&self.pre[i])
                    .for_each(|d, &z| *d *= elu_grad(z));
            }
            let g = &mut grads.layers[i];
            ndarray::linalg::general_mat_mul(
                T::one(),
                &delta.t(),
                &self.inputs[i],
                T::one(),
                &mut g.weight,
            );
            g.bias += &delta.sum_axis(Axis(0));
            if i > 0 || want_input_grad {
                delta = delta.dot(&self.params.layers[i].weight);
            }
        }
        Ok(want_input_grad.then_some(delta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let p = MlpParams::<f64>::identity(2);
        let (y, _) = p.apply(&[3.0, 4.0]).unwrap();
        assert_eq!(y, vec![3.0, 4.0]);
    }

    #[test]
    fn elu_on_negative_preactivation() {
        // Two-layer net so the ELU sits on the hidden unit; the output layer
        // is the identity.
        let hidden = Linear {
            weight: array![[2.0]],
            bias: array![1.0],
        };
        let out = Linear {
            weight: array![[1.0]],
            bias: array![0.0],
        };
        let p = MlpParams::new(vec![hidden, out]).unwrap();
        let (y, _) = p.apply(&[-1.0]).unwrap();
        assert!((y[0] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((y[0] + 0.6321).abs() < 1e-4);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::<f32>::zeros(&[5, 7, 3]);
        let (y, _) = p.apply(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = MlpParams::<f32>::zeros(&[4, 2]);
        assert!(matches!(p.apply(&[1.0, 2.0]), Err(Error::Shape { .. })));
        let bad = MlpParams::<f32>::new(vec![Linear::zeros(3, 4), Linear::zeros(5, 1)]);
        assert!(bad.is_err());
    }

    #[test]
    fn linear_adjoint_is_weight_row() {
        let w = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let p = MlpParams::new(vec![Linear {
            weight: w.clone(),
            bias: array![0.0, 0.0],
        }])
        .unwrap();
        for i in 0..2 {
            let (_, tape) = p.apply(&[0.3, -0.1, 0.7]).unwrap();
            let mut e = Array2::zeros((1, 2));
            e[[0, i]] = 1.0;
            let (_, dx) = tape.backprop(e.view()).unwrap();
            assert_eq!(dx.row(0), w.row(i));
        }
    }

    #[test]
    fn half_squared_norm_through_identity() {
        let p = MlpParams::<f64>::identity(3);
        let x = [0.5, -1.5, 2.0];
        let (y, tape) = p.apply(&x).unwrap();
        // dL/dy = y for L = |y|^2 / 2
        let dy = Array2::from_shape_vec((1, 3), y).unwrap();
        let (_, dx) = tape.backprop(dy.view()).unwrap();
        assert_eq!(dx.row(0).to_vec(), x.to_vec());
    }

    #[test]
    fn single_use_tape_rejects_second_backprop() {
        let p = MlpParams::<f64>::identity(2);
        let (_, tape) = p.apply(&[1.0, 2.0]).unwrap();
        let dy = array![[1.0, 1.0]];
        tape.backprop(dy.view()).unwrap();
        assert!(matches!(tape.backprop(dy.view()), Err(Error::TapeConsumed)));
    }

    #[test]
    fn replayed_backprop_is_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::<f64>::init(&[4, 6, 2], 1.0, &mut rng);
        let (_, tape) = p.apply(&[0.1, -0.4, 0.9, 0.2]).unwrap();
        let tape = tape.replayable();
        let dy = array![[0.7, -1.1]];
        let a = tape.backprop(dy.view()).unwrap();
        let b = tape.backprop(dy.view()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn forward_matches_taped_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = MlpParams::<f32>::init(&[5, 8, 8, 3], 0.5, &mut rng);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i as f32 - j as f32) * 0.3);
        let y1 = p.forward(x.view()).unwrap();
        let (y2, _) = p.forward_taped(x.view()).unwrap();
        assert_eq!(y1, y2);
    }
}
