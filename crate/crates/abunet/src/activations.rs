//! The activation family under study: six base functions, adaptively scaled
//! versions (one trainable weight per layer), and adaptive blending units
//! (one trainable weight per member function per layer) with four
//! normalization schemes applied inside the differentiable graph.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{swish, swish_grad, Tape, UnaryFn, ValueId};
use crate::tensor::Tensor;

pub use crate::tape::{ELU_ALPHA, SELU_ALPHA, SELU_LAMBDA};

/// Members of every blending unit, in fixed order.
pub const ABU_MEMBERS: [BaseKind; 5] = [
    BaseKind::Tanh,
    BaseKind::Elu,
    BaseKind::Relu,
    BaseKind::Identity,
    BaseKind::Swish,
];

/// Normalization denominators at or below this magnitude abort the step
/// instead of silently clamping.
pub const DEGENERACY_TAU: f64 = 1e-8;

/// Default initial value of a scaling weight.
pub const SCALE_INIT: f64 = 1.0;
/// Default initial value of each blending weight: 1/m for m = 5 members.
pub const BLEND_INIT: f64 = 0.2;
/// Default initial value of the Swish shape parameter.
pub const SWISH_BETA_INIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    Identity,
    Tanh,
    Relu,
    Elu,
    Selu,
    Swish,
}

impl BaseKind {
    pub const ALL: [BaseKind; 6] = [
        BaseKind::Identity,
        BaseKind::Tanh,
        BaseKind::Relu,
        BaseKind::Elu,
        BaseKind::Selu,
        BaseKind::Swish,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Identity => "identity",
            BaseKind::Tanh => "tanh",
            BaseKind::Relu => "relu",
            BaseKind::Elu => "elu",
            BaseKind::Selu => "selu",
            BaseKind::Swish => "swish",
        }
    }

    pub fn needs_beta(self) -> bool {
        self == BaseKind::Swish
    }

    fn unary(self) -> Option<UnaryFn> {
        match self {
            BaseKind::Tanh => Some(UnaryFn::Tanh),
            BaseKind::Relu => Some(UnaryFn::Relu),
            BaseKind::Elu => Some(UnaryFn::Elu),
            BaseKind::Selu => Some(UnaryFn::Selu),
            BaseKind::Identity | BaseKind::Swish => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    None,
    Nrm,
    Abs,
    Pos,
    Soft,
}

impl NormMode {
    pub fn suffix(self) -> &'static str {
        match self {
            NormMode::None => "",
            NormMode::Nrm => "_nrm",
            NormMode::Abs => "_abs",
            NormMode::Pos => "_pos",
            NormMode::Soft => "_soft",
        }
    }
}

/// One layer's activation choice, parsed from its run-file name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationConfig {
    Fixed(BaseKind),
    Scaled(BaseKind),
    Abu(NormMode),
}

impl ActivationConfig {
    /// Every recognized configuration, in a stable order (6 fixed, 6 scaled,
    /// 5 blending variants).
    pub fn all() -> Vec<ActivationConfig> {
        let mut v: Vec<ActivationConfig> =
            BaseKind::ALL.iter().map(|&b| ActivationConfig::Fixed(b)).collect();
        v.extend(BaseKind::ALL.iter().map(|&b| ActivationConfig::Scaled(b)));
        v.extend([
            ActivationConfig::Abu(NormMode::None),
            ActivationConfig::Abu(NormMode::Nrm),
            ActivationConfig::Abu(NormMode::Abs),
            ActivationConfig::Abu(NormMode::Pos),
            ActivationConfig::Abu(NormMode::Soft),
        ]);
        v
    }

    pub fn parse(name: &str) -> Result<Self> {
        let cfg = match name {
            "identity" => ActivationConfig::Fixed(BaseKind::Identity),
            "tanh" => ActivationConfig::Fixed(BaseKind::Tanh),
            "relu" => ActivationConfig::Fixed(BaseKind::Relu),
            "elu" => ActivationConfig::Fixed(BaseKind::Elu),
            "selu" => ActivationConfig::Fixed(BaseKind::Selu),
            "swish" => ActivationConfig::Fixed(BaseKind::Swish),
            "a_identity" => ActivationConfig::Scaled(BaseKind::Identity),
            "a_tanh" => ActivationConfig::Scaled(BaseKind::Tanh),
            "a_relu" => ActivationConfig::Scaled(BaseKind::Relu),
            "a_elu" => ActivationConfig::Scaled(BaseKind::Elu),
            "a_selu" => ActivationConfig::Scaled(BaseKind::Selu),
            "a_swish" => ActivationConfig::Scaled(BaseKind::Swish),
            "abu" => ActivationConfig::Abu(NormMode::None),
            "abu_nrm" => ActivationConfig::Abu(NormMode::Nrm),
            "abu_abs" => ActivationConfig::Abu(NormMode::Abs),
            "abu_pos" => ActivationConfig::Abu(NormMode::Pos),
            "abu_soft" => ActivationConfig::Abu(NormMode::Soft),
            other => {
                return Err(Error::Config(format!(
                    "unknown activation {other:?} (expected one of identity, tanh, relu, elu, \
                     selu, swish, a_<base>, abu, abu_nrm, abu_abs, abu_pos, abu_soft)"
                )))
            }
        };
        Ok(cfg)
    }

    pub fn name(self) -> String {
        match self {
            ActivationConfig::Fixed(b) => b.name().to_string(),
            ActivationConfig::Scaled(b) => format!("a_{}", b.name()),
            ActivationConfig::Abu(m) => format!("abu{}", m.suffix()),
        }
    }

    /// Number of trainable activation parameters this config adds per layer.
    pub fn extra_params(self) -> usize {
        match self {
            ActivationConfig::Fixed(b) => usize::from(b.needs_beta()),
            ActivationConfig::Scaled(b) => 1 + usize::from(b.needs_beta()),
            ActivationConfig::Abu(_) => ABU_MEMBERS.len() + 1,
        }
    }
}

impl std::str::FromStr for ActivationConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ActivationConfig::parse(s)
    }
}

// ── Closed forms ────────────────────────────────────────────────────

/// f(x) for one base function. β must be supplied exactly for Swish.
pub fn eval_base<S: Scalar>(kind: BaseKind, x: S, beta: Option<S>) -> Result<S> {
    match kind {
        BaseKind::Identity => Ok(x),
        BaseKind::Swish => {
            let b = beta.ok_or_else(|| Error::Config("swish needs a β parameter".into()))?;
            Ok(swish(x, b))
        }
        _ => Ok(kind.unary().unwrap().eval(x)),
    }
}

/// (df/dx, df/dβ); the second component is present only for Swish.
pub fn grad_base<S: Scalar>(kind: BaseKind, x: S, beta: Option<S>) -> Result<(S, Option<S>)> {
    match kind {
        BaseKind::Identity => Ok((S::one(), None)),
        BaseKind::Swish => {
            let b = beta.ok_or_else(|| Error::Config("swish needs a β parameter".into()))?;
            let (dx, db) = swish_grad(x, b);
            Ok((dx, Some(db)))
        }
        _ => Ok((kind.unary().unwrap().grad(x), None)),
    }
}

/// Blending weights after normalization (plain arithmetic; the in-graph
/// version lives in `AbuGraph`).
pub fn effective_weights(raw: &[f64], mode: NormMode, layer: usize) -> Result<Vec<f64>> {
    let guard = |denom: f64| -> Result<f64> {
        if denom.abs() <= DEGENERACY_TAU {
            Err(Error::DegenerateNormalization {
                layer,
                denom,
                threshold: DEGENERACY_TAU,
            })
        } else {
            Ok(denom)
        }
    };
    match mode {
        NormMode::None => Ok(raw.to_vec()),
        NormMode::Nrm => {
            let s = guard(raw.iter().sum())?;
            Ok(raw.iter().map(|r| r / s).collect())
        }
        NormMode::Abs => {
            let s = guard(raw.iter().map(|r| r.abs()).sum())?;
            Ok(raw.iter().map(|r| r / s).collect())
        }
        NormMode::Pos => {
            let clipped: Vec<f64> = raw.iter().map(|&r| r.max(0.0)).collect();
            let s = guard(clipped.iter().sum())?;
            Ok(clipped.iter().map(|c| c / s).collect())
        }
        NormMode::Soft => {
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
            let s: f64 = exps.iter().sum();
            Ok(exps.iter().map(|e| e / s).collect())
        }
    }
}

/// g(x) = Σ_j w_j·f_j(x) over the fixed member set, with already-normalized
/// weights. Scalar reference path for shape exports and oracles.
pub fn abu_value<S: Scalar>(effective: &[S], x: S, beta: S) -> S {
    let mut acc = S::zero();
    for (&w, &kind) in effective.iter().zip(ABU_MEMBERS.iter()) {
        acc = acc + w * eval_base(kind, x, Some(beta)).expect("members take β");
    }
    acc
}

// ── Layer instances ─────────────────────────────────────────────────

/// A built activation for one layer: the config plus its registered
/// parameters.
#[derive(Debug, Clone)]
pub struct ActivationInstance {
    pub config: ActivationConfig,
    pub layer_index: usize,
    /// Scaling weight α_i (scaled configs only).
    pub alpha: Option<ParamId>,
    /// Blending weights α_i1..α_im (blending units only).
    pub blend: Vec<ParamId>,
    /// Swish shape β_i, wherever a Swish appears.
    pub beta: Option<ParamId>,
}

/// Register the parameters for `config` at 1-based layer `index`.
/// Names follow the "act{i}/alpha", "act{i}/alpha{j}", "act{i}/beta" scheme.
pub fn make_activation<S: Scalar>(
    store: &mut ParamStore<S>,
    config: ActivationConfig,
    layer_index: usize,
) -> Result<ActivationInstance> {
    let mut inst = ActivationInstance {
        config,
        layer_index,
        alpha: None,
        blend: Vec::new(),
        beta: None,
    };
    let scalar = |v: f64| Tensor::<S>::scalar(S::from_f64(v));
    match config {
        ActivationConfig::Fixed(base) => {
            if base.needs_beta() {
                inst.beta =
                    Some(store.register(format!("act{layer_index}/beta"), scalar(SWISH_BETA_INIT))?);
            }
        }
        ActivationConfig::Scaled(base) => {
            inst.alpha =
                Some(store.register(format!("act{layer_index}/alpha"), scalar(SCALE_INIT))?);
            if base.needs_beta() {
                inst.beta =
                    Some(store.register(format!("act{layer_index}/beta"), scalar(SWISH_BETA_INIT))?);
            }
        }
        ActivationConfig::Abu(_) => {
            for j in 1..=ABU_MEMBERS.len() {
                inst.blend.push(
                    store.register(format!("act{layer_index}/alpha{j}"), scalar(BLEND_INIT))?,
                );
            }
            inst.beta =
                Some(store.register(format!("act{layer_index}/beta"), scalar(SWISH_BETA_INIT))?);
        }
    }
    Ok(inst)
}

impl ActivationInstance {
    /// All parameter ids owned by this activation.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if let Some(a) = self.alpha {
            ids.push(a);
        }
        ids.extend(self.blend.iter().copied());
        if let Some(b) = self.beta {
            ids.push(b);
        }
        ids
    }

    /// Record the activation on the tape. `param_vid` maps each ParamId to
    /// the tape leaf created for it by the caller.
    pub fn apply<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        x: ValueId,
        param_vid: &dyn Fn(ParamId) -> ValueId,
    ) -> Result<ValueId> {
        match self.config {
            ActivationConfig::Fixed(base) => self.apply_base(tape, base, x, param_vid),
            ActivationConfig::Scaled(base) => {
                let f = self.apply_base(tape, base, x, param_vid)?;
                tape.scalar_mul(param_vid(self.alpha.unwrap()), f)
            }
            ActivationConfig::Abu(mode) => {
                let raw_ids: Vec<ValueId> =
                    self.blend.iter().map(|&p| param_vid(p)).collect();
                let raw = tape.stack_scalars(&raw_ids)?;
                let weights = self.normalized_weights(tape, raw, mode)?;
                let beta = param_vid(self.beta.unwrap());
                let terms: Vec<ValueId> = ABU_MEMBERS
                    .iter()
                    .map(|&m| match m {
                        BaseKind::Identity => Ok(x),
                        BaseKind::Swish => tape.swish(x, beta),
                        other => tape.unary(other.unary().unwrap(), x),
                    })
                    .collect::<Result<_>>()?;
                tape.weighted_sum(weights, &terms)
            }
        }
    }

    fn apply_base<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        base: BaseKind,
        x: ValueId,
        param_vid: &dyn Fn(ParamId) -> ValueId,
    ) -> Result<ValueId> {
        match base {
            BaseKind::Identity => Ok(x),
            BaseKind::Swish => tape.swish(x, param_vid(self.beta.unwrap())),
            other => tape.unary(other.unary().unwrap(), x),
        }
    }

    /// Normalization as part of the graph: gradients flow through it to the
    /// raw blending weights.
    fn normalized_weights<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        raw: ValueId,
        mode: NormMode,
    ) -> Result<ValueId> {
        let guard = |tape: &Tape<S>, denom_vid: ValueId| -> Result<()> {
            let denom = tape.value(denom_vid)[0].as_f64();
            if denom.abs() <= DEGENERACY_TAU {
                Err(Error::DegenerateNormalization {
                    layer: self.layer_index,
                    denom,
                    threshold: DEGENERACY_TAU,
                })
            } else {
                Ok(())
            }
        };
        match mode {
            NormMode::None => Ok(raw),
            NormMode::Nrm => {
                let s = tape.sum(raw)?;
                guard(tape, s)?;
                tape.scalar_div(raw, s)
            }
            NormMode::Abs => {
                let a = tape.unary(UnaryFn::Abs, raw)?;
                let s = tape.sum(a)?;
                guard(tape, s)?;
                tape.scalar_div(raw, s)
            }
            NormMode::Pos => {
                let clipped = tape.unary(UnaryFn::Relu, raw)?;
                let s = tape.sum(clipped)?;
                guard(tape, s)?;
                tape.scalar_div(clipped, s)
            }
            NormMode::Soft => tape.softmax1d(raw),
        }
    }
}
