//! State-representation-learning objectives behind one interface: PvP
//! (proprioceptive vs. privileged contrast), SimSiam, SPR and VAE.

mod augment;
mod losses;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{prefixed, Gradients, Graph, MlpParams, NodeId, ParamRef, Parameters, Scalar, TensorView};
use crate::error::{Error, Result};

pub use augment::{augment, AugmentParams, Augmentation};
pub use losses::{
    d_ncs, embedding_dim_stds, embedding_std, pvp_loss, simsiam_loss, spr_loss, vae_loss, zero_masking, VaeLoss,
    NCS_EPS, VAE_LOG_SIGMA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SrlMethod {
    None,
    Pvp,
    Simsiam,
    Spr,
    Vae,
}

impl SrlMethod {
    pub fn name(self) -> &'static str {
        match self {
            SrlMethod::None => "none",
            SrlMethod::Pvp => "pvp",
            SrlMethod::Simsiam => "simsiam",
            SrlMethod::Spr => "spr",
            SrlMethod::Vae => "vae",
        }
    }

    pub fn default_lambda(self) -> f64 {
        match self {
            SrlMethod::Vae => 0.1,
            SrlMethod::None => 0.0,
            _ => 0.5,
        }
    }

    pub fn default_augmentations(self) -> Vec<Augmentation> {
        match self {
            SrlMethod::Simsiam => vec![Augmentation::RandomMasking, Augmentation::IdentityMapping],
            SrlMethod::Spr => vec![Augmentation::GaussianNoise],
            _ => vec![],
        }
    }
}

/// Which encoder the SRL loss shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderTarget {
    PolicyEncoder,
    ValueEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrlConfig {
    pub method: SrlMethod,
    /// Loss weight; `None` picks the method default.
    pub lambda: Option<f64>,
    /// Augmentation ops; `None` picks the method default.
    pub augmentations: Option<Vec<Augmentation>>,
    pub augment: AugmentParams,
    pub spr_steps: usize,
    pub ema_tau: f64,
    pub target: EncoderTarget,
    pub vae_latent: usize,
}

impl Default for SrlConfig {
    fn default() -> Self {
        SrlConfig {
            method: SrlMethod::None,
            lambda: None,
            augmentations: None,
            augment: AugmentParams::default(),
            spr_steps: 5,
            ema_tau: 0.99,
            target: EncoderTarget::PolicyEncoder,
            vae_latent: 16,
        }
    }
}

impl SrlConfig {
    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| self.method.default_lambda())
    }

    pub fn augmentations(&self) -> Vec<Augmentation> {
        self.augmentations
            .clone()
            .unwrap_or_else(|| self.method.default_augmentations())
    }

    /// Replace omitted optional values by the method defaults.
    pub fn resolve(&mut self) {
        self.lambda = Some(self.lambda());
        self.augmentations = Some(self.augmentations());
    }

    pub fn validate(&self) -> Result<()> {
        let lambda = self.lambda();
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config("srl.lambda", "must be finite and >= 0"));
        }
        if self.spr_steps < 1 {
            return Err(Error::config("srl.spr_steps", "must be >= 1"));
        }
        if !(self.ema_tau > 0.0 && self.ema_tau < 1.0) {
            return Err(Error::config("srl.ema_tau", "must lie in (0, 1)"));
        }
        if self.vae_latent < 1 {
            return Err(Error::config("srl.vae_latent", "must be >= 1"));
        }
        if self.method == SrlMethod::Spr && self.target == EncoderTarget::ValueEncoder {
            return Err(Error::config(
                "srl.target",
                "value_encoder is not allowed with method spr: SPR requires state-action pairs for training",
            ));
        }
        let augs = self.augmentations();
        match self.method {
            SrlMethod::Simsiam if augs.len() != 2 => {
                return Err(Error::config("srl.augmentations", "simsiam needs exactly two views"))
            }
            SrlMethod::Spr if augs.len() > 1 => {
                return Err(Error::config("srl.augmentations", "spr takes at most one augmentation"))
            }
            _ => {}
        }
        self.augment.validate()
    }
}

/// Trainable parameters owned by an SRL method (the shared encoder is not
/// owned).
#[derive(Debug, Clone, PartialEq)]
pub enum SrlModules<T> {
    None,
    /// Predictor `h`, used by PvP and SimSiam.
    Predictor(MlpParams<T>),
    /// Latent dynamics for SPR, `(latent + k) -> latent`.
    Dynamics(MlpParams<T>),
    Vae {
        mu: MlpParams<T>,
        log_sigma: MlpParams<T>,
        decoder: MlpParams<T>,
    },
}

/// Graph handles of registered [`SrlModules`].
#[derive(Debug, Clone, Copy)]
pub enum SrlRefs {
    None,
    Predictor(ParamRef),
    Dynamics(ParamRef),
    Vae {
        mu: ParamRef,
        log_sigma: ParamRef,
        decoder: ParamRef,
    },
}

impl<T: Scalar> SrlModules<T> {
    /// `input_dim` is the width of the encoder input the method reconstructs.
    pub fn init<R: Rng + ?Sized>(
        config: &SrlConfig,
        latent: usize,
        input_dim: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Self {
        match config.method {
            SrlMethod::None => SrlModules::None,
            SrlMethod::Pvp | SrlMethod::Simsiam => {
                SrlModules::Predictor(MlpParams::init(&[latent, (latent / 2).max(1), latent], 1.0, rng))
            }
            SrlMethod::Spr => {
                SrlModules::Dynamics(MlpParams::init(&[latent + action_dim, latent, latent], 1.0, rng))
            }
            SrlMethod::Vae => SrlModules::Vae {
                mu: MlpParams::init(&[latent, config.vae_latent], 1.0, rng),
                log_sigma: MlpParams::init(&[latent, config.vae_latent], 1.0, rng),
                decoder: MlpParams::init(&[config.vae_latent, latent, input_dim], 1.0, rng),
            },
        }
    }

    pub fn register<'p>(&'p self, g: &mut Graph<'p, T>) -> SrlRefs {
        match self {
            SrlModules::None => SrlRefs::None,
            SrlModules::Predictor(p) => SrlRefs::Predictor(g.register(p)),
            SrlModules::Dynamics(p) => SrlRefs::Dynamics(g.register(p)),
            SrlModules::Vae {
                mu,
                log_sigma,
                decoder,
            } => SrlRefs::Vae {
                mu: g.register(mu),
                log_sigma: g.register(log_sigma),
                decoder: g.register(decoder),
            },
        }
    }

    pub fn gradients(refs: &SrlRefs, grads: &mut Gradients<T>) -> Self {
        match *refs {
            SrlRefs::None => SrlModules::None,
            SrlRefs::Predictor(p) => SrlModules::Predictor(grads.take_param(p)),
            SrlRefs::Dynamics(p) => SrlModules::Dynamics(grads.take_param(p)),
            SrlRefs::Vae {
                mu,
                log_sigma,
                decoder,
            } => SrlModules::Vae {
                mu: grads.take_param(mu),
                log_sigma: grads.take_param(log_sigma),
                decoder: grads.take_param(decoder),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            SrlModules::None => SrlModules::None,
            SrlModules::Predictor(p) => SrlModules::Predictor(p.zeros_like()),
            SrlModules::Dynamics(p) => SrlModules::Dynamics(p.zeros_like()),
            SrlModules::Vae {
                mu,
                log_sigma,
                decoder,
            } => SrlModules::Vae {
                mu: mu.zeros_like(),
                log_sigma: log_sigma.zeros_like(),
                decoder: decoder.zeros_like(),
            },
        }
    }

    pub fn cast<U: Scalar>(&self) -> SrlModules<U> {
        match self {
            SrlModules::None => SrlModules::None,
            SrlModules::Predictor(p) => SrlModules::Predictor(p.cast()),
            SrlModules::Dynamics(p) => SrlModules::Dynamics(p.cast()),
            SrlModules::Vae {
                mu,
                log_sigma,
                decoder,
            } => SrlModules::Vae {
                mu: mu.cast(),
                log_sigma: log_sigma.cast(),
                decoder: decoder.cast(),
            },
        }
    }
}

impl<T: Scalar> Parameters<T> for SrlModules<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        match self {
            SrlModules::None => vec![],
            SrlModules::Predictor(p) => prefixed("predictor", p.tensors()),
            SrlModules::Dynamics(p) => prefixed("dynamics", p.tensors()),
            SrlModules::Vae {
                mu,
                log_sigma,
                decoder,
            } => {
                let mut v = prefixed("mu", mu.tensors());
                v.extend(prefixed("log_sigma", log_sigma.tensors()));
                v.extend(prefixed("decoder", decoder.tensors()));
                v
            }
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            SrlModules::None => vec![],
            SrlModules::Predictor(p) | SrlModules::Dynamics(p) => p.tensors_mut(),
            SrlModules::Vae {
                mu,
                log_sigma,
                decoder,
            } => {
                let mut v = mu.tensors_mut();
                v.extend(log_sigma.tensors_mut());
                v.extend(decoder.tensors_mut());
                v
            }
        }
    }
}

/// Consecutive-step windows for SPR: `obs[k]` is `[W, d]` for `k = 0..=K`,
/// `actions[k]` is `[W, action_dim]` for `k < K`.
#[derive(Debug, Clone)]
pub struct SprWindows<T> {
    pub obs: Vec<Array2<T>>,
    pub actions: Vec<Array2<T>>,
}

/// Data for one SRL loss evaluation.
#[derive(Debug, Clone)]
pub struct SrlBatch<T> {
    /// Rows the shaped encoder normally sees: policy inputs for the policy
    /// target, privileged states for the value target.
    pub inputs: Array2<T>,
    /// Privileged states, used for PvP pairs.
    pub states: Array2<T>,
    pub windows: Option<SprWindows<T>>,
}

/// Build the SRL loss node for `config.method`.
///
/// `encoder` is the shared encoder chosen by `config.target`; `target_encoder`
/// is the SPR EMA copy. Randomness (augmentations, VAE noise) comes from
/// `rng` only.
#[allow(clippy::too_many_arguments)]
pub fn srl_loss<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<'_, T>,
    config: &SrlConfig,
    encoder: ParamRef,
    modules: &SrlRefs,
    target_encoder: Option<ParamRef>,
    mask: &[usize],
    batch: &SrlBatch<T>,
    rng: &mut R,
) -> Result<NodeId> {
    let augs = config.augmentations();
    match (config.method, *modules) {
        (SrlMethod::None, _) => Err(Error::Runtime(
            "srl_loss called with method none; the trainer must skip it".into(),
        )),
        (SrlMethod::Pvp, SrlRefs::Predictor(pred)) => {
            let masked = zero_masking(&batch.states, mask)?;
            let s = g.constant(batch.states.clone());
            let st = g.constant(masked);
            pvp_loss(g, encoder, pred, s, st)
        }
        (SrlMethod::Simsiam, SrlRefs::Predictor(pred)) => {
            let x1 = augment(&batch.inputs, augs[0], &config.augment, rng);
            let x2 = augment(&batch.inputs, augs[1], &config.augment, rng);
            let a = g.constant(x1);
            let b = g.constant(x2);
            simsiam_loss(g, encoder, pred, a, b)
        }
        (SrlMethod::Spr, SrlRefs::Dynamics(dynamics)) => {
            let w = batch
                .windows
                .as_ref()
                .ok_or_else(|| Error::Runtime("spr loss needs step windows".into()))?;
            let target = target_encoder
                .ok_or_else(|| Error::Runtime("spr loss needs a target encoder".into()))?;
            let mut obs = Vec::with_capacity(w.obs.len());
            let first = match augs.first() {
                Some(&op) => augment(&w.obs[0], op, &config.augment, rng),
                None => w.obs[0].clone(),
            };
            obs.push(g.constant(first));
            for o in &w.obs[1..] {
                obs.push(g.constant(o.clone()));
            }
            let acts: Vec<NodeId> = w.actions.iter().map(|a| g.constant(a.clone())).collect();
            spr_loss(g, encoder, target, dynamics, &obs, &acts)
        }
        (SrlMethod::Vae, SrlRefs::Vae { mu, log_sigma, decoder }) => {
            let eps = Array2::from_shape_fn((batch.inputs.nrows(), config.vae_latent), |_| {
                T::of(rng.sample::<f64, _>(StandardNormal))
            });
            let o = g.constant(batch.inputs.clone());
            Ok(vae_loss(g, encoder, mu, log_sigma, decoder, o, eps)?.total)
        }
        (m, _) => Err(Error::Runtime(format!(
            "srl modules do not match method {}",
            m.name()
        ))),
    }
}
