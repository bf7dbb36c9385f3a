use super::mlp::MlpParams;
use super::params::Parameters;
use super::Scalar;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: Parameters<T> + ?Sized>(params: &P) -> Self {
        Self::with_constants(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants<P: Parameters<T> + ?Sized>(
        params: &P,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.data.len()])
            .collect();
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// Restore from serialized state; moment lengths must match.
    pub fn restore(&mut self, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<()> {
        let lens = |xs: &[Vec<T>]| xs.iter().map(Vec::len).collect::<Vec<_>>();
        if lens(&m) != lens(&self.m) || lens(&v) != lens(&self.v) {
            return Err(Error::shape("adam moments", &lens(&self.m), &lens(&m)));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One update. A non-finite gradient leaves parameters and state untouched
    /// and returns [`Error::NonFinite`].
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G, lr: f64) -> Result<()>
    where
        P: Parameters<T> + ?Sized,
        G: Parameters<T> + ?Sized,
    {
        if !(lr > 0.0) {
            return Err(Error::config("learning_rate", "must be > 0"));
        }
        let g = grads.tensors();
        if g.len() != self.m.len() || g.iter().zip(&self.m).any(|(t, m)| t.data.len() != m.len()) {
            return Err(Error::shape(
                "adam gradients",
                &[self.m.len()],
                &[g.len()],
            ));
        }
        if !g.iter().all(|t| t.data.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, eps) = (T::one(), T::of(self.eps));
        let bc1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::of(lr);
        for (i, p) in params.tensors_mut().into_iter().enumerate() {
            let (m, v, gd) = (&mut self.m[i], &mut self.v[i], g[i].data);
            for j in 0..p.len() {
                let gj = gd[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Slowly trailing copy of a network. The shadow never receives gradients;
/// it only moves through [`EmaShadow::update`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmaShadow<T> {
    shadow: MlpParams<T>,
    tau: f64,
}

impl<T: Scalar> EmaShadow<T> {
    pub fn new(online: &MlpParams<T>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::config("srl.ema_tau", "must lie in (0, 1)"));
        }
        Ok(EmaShadow {
            shadow: online.clone(),
            tau,
        })
    }

    pub fn from_parts(shadow: MlpParams<T>, tau: f64) -> Result<Self> {
        let mut s = Self::new(&shadow, tau)?;
        s.shadow = shadow;
        Ok(s)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn params(&self) -> &MlpParams<T> {
        &self.shadow
    }

    /// `shadow <- tau * shadow + (1 - tau) * online`.
    pub fn update(&mut self, online: &MlpParams<T>) -> Result<()> {
        if self.shadow.dims() != online.dims() {
            return Err(Error::shape("ema online", &self.shadow.dims(), &online.dims()));
        }
        let tau = T::of(self.tau);
        let rest = T::one() - tau;
        let src = online.tensors();
        for (s, o) in self.shadow.tensors_mut().into_iter().zip(src) {
            for (a, &b) in s.iter_mut().zip(o.data) {
                *a = tau * *a + rest * b;
            }
        }
        Ok(())
    }
}
