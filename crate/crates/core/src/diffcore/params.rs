use super::Scalar;

/// Borrowed view of one named parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

/// A fixed, ordered collection of named tensors.
///
/// Optimizers, gradient clipping, EMA and checkpoints all walk parameters
/// through this trait, so the order of `tensors` and `tensors_mut` must agree.
pub trait Parameters<T: Scalar> {
    fn tensors(&self) -> Vec<TensorView<'_, T>>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| {
                let x = x.as_f64();
                x * x
            })
            .sum()
    }

    fn scale_all(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Copy of every entry in manifest order.
    fn flatten(&self) -> Vec<T> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    /// Inverse of [`Parameters::flatten`]. Panics on length mismatch.
    fn assign_flat(&mut self, flat: &[T]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }
}

/// Prefix each tensor name, used when nesting parameter groups.
pub fn prefixed<'a, T>(prefix: &str, views: Vec<TensorView<'a, T>>) -> Vec<TensorView<'a, T>> {
    views
        .into_iter()
        .map(|mut v| {
            v.name = format!("{prefix}/{}", v.name);
            v
        })
        .collect()
}

/// Global L2 norm over several parameter groups.
pub fn global_norm<T: Scalar>(groups: &[&dyn Parameters<T>]) -> f64 {
    groups.iter().map(|g| g.squared_norm()).sum::<f64>().sqrt()
}

/// Rescale all groups jointly so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(groups: &mut [&mut dyn Parameters<T>], max_norm: f64) -> f64 {
    let norm = groups
        .iter()
        .map(|g| g.squared_norm())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let factor = T::of(max_norm / (norm + 1e-6));
        for g in groups.iter_mut() {
            g.scale_all(factor);
        }
    }
    norm
}

/// `dst += factor * src`, tensor by tensor. Panics if the layouts differ.
pub fn add_scaled_params<T: Scalar>(dst: &mut dyn Parameters<T>, src: &dyn Parameters<T>, factor: T) {
    let src = src.tensors();
    let dst = dst.tensors_mut();
    assert_eq!(dst.len(), src.len(), "parameter group mismatch");
    for (d, s) in dst.into_iter().zip(src) {
        assert_eq!(d.len(), s.data.len(), "tensor `{}` length mismatch", s.name);
        for (a, &b) in d.iter_mut().zip(s.data) {
            *a += factor * b;
        }
    }
}

/// A single named vector of free parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    pub name: &'static str,
    pub values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(name: &'static str, values: Vec<T>) -> Self {
        ParamVector { name, values }
    }

    pub fn cast<U: Scalar>(&self) -> ParamVector<U> {
        ParamVector {
            name: self.name,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> Parameters<T> for ParamVector<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        vec![TensorView {
            name: self.name.to_string(),
            shape: vec![self.values.len()],
            data: &self.values,
        }]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.values]
    }
}
