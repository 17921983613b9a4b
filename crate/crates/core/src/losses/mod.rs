//! Training objectives: cross-entropy, label smoothing, focal loss, the
//! explicit confidence penalty, spatially-smoothed labels, soft Dice, and the
//! margin hinge on logit distances — each with value and closed-form gradient
//! with respect to the logits.
//!
//! Pixel-wise losses report the mean over all pixels, so trade-off weights
//! stay scale-free across image sizes. Gradients use the same layout as
//! [`LogitField`]: `(y * width + x) * num_classes + k`.

mod ce;
mod dice;
mod entropy;
mod margin;
mod svls;

pub use ce::{ce_loss, ls_loss, ls_transform, Target};
pub use dice::dice_loss;
pub use entropy::{ecp_loss, focal_loss};
pub use margin::{margin_loss, margin_penalty};
pub use svls::svls_transform;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, LabelField, LogitField};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("invalid {name}: {value} ({reason})")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("svls kernel size must be odd, got {0}")]
    EvenKernel(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub(crate) fn require(
    ok: bool,
    name: &'static str,
    value: f64,
    reason: &'static str,
) -> Result<(), LossError> {
    if ok {
        Ok(())
    } else {
        Err(LossError::InvalidParam {
            name,
            value,
            reason,
        })
    }
}

/// Which hinge the margin penalty applies to constraint violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    L1,
    L2,
}

/// The loss families the trainer and harness can dispatch to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    CeDice,
    Ls,
    Fl,
    Ecp,
    Svls,
    MblsL1,
    MblsL2,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::CeDice => "ce_dice",
            LossKind::Ls => "ls",
            LossKind::Fl => "fl",
            LossKind::Ecp => "ecp",
            LossKind::Svls => "svls",
            LossKind::MblsL1 => "mbls_l1",
            LossKind::MblsL2 => "mbls_l2",
        }
    }
}

/// Full parameter set for any loss kind.
///
/// Parameters irrelevant to `kind` are stored but ignored; only the relevant
/// ones are validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Label-smoothing weight, in `[0, 1)`.
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    /// Focusing exponent of the focal loss, `>= 0`.
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    /// Penalty trade-off weight, `>= 0`.
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    /// Logit-distance margin, `>= 0`.
    #[serde(default = "defaults::margin")]
    pub margin: f64,
    /// Side length of the Gaussian label-smoothing kernel (odd).
    #[serde(default = "defaults::svls_kernel_size")]
    pub svls_kernel_size: usize,
    /// Width of the Gaussian label-smoothing kernel.
    #[serde(default = "defaults::svls_sigma")]
    pub svls_sigma: f64,
    /// Weight of the Dice term in the compound CE+Dice loss.
    #[serde(default = "defaults::dice_weight")]
    pub dice_weight: f64,
    /// Dice smoothing constant, `> 0`.
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
}

mod defaults {
    pub fn alpha() -> f64 {
        0.1
    }
    pub fn gamma() -> f64 {
        1.0
    }
    pub fn lambda() -> f64 {
        0.1
    }
    pub fn margin() -> f64 {
        10.0
    }
    pub fn svls_kernel_size() -> usize {
        3
    }
    pub fn svls_sigma() -> f64 {
        1.0
    }
    pub fn dice_weight() -> f64 {
        1.0
    }
    pub fn epsilon() -> f64 {
        1e-5
    }
}

impl LossConfig {
    /// A config of the given kind with every parameter at its default.
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            alpha: defaults::alpha(),
            gamma: defaults::gamma(),
            lambda: defaults::lambda(),
            margin: defaults::margin(),
            svls_kernel_size: defaults::svls_kernel_size(),
            svls_sigma: defaults::svls_sigma(),
            dice_weight: defaults::dice_weight(),
            epsilon: defaults::epsilon(),
        }
    }

    /// Validate the parameters relevant to this config's kind.
    pub fn validate(&self) -> Result<(), LossError> {
        match self.kind {
            LossKind::Ce => Ok(()),
            LossKind::CeDice => {
                require(
                    self.dice_weight.is_finite() && self.dice_weight >= 0.0,
                    "dice_weight",
                    self.dice_weight,
                    "must be finite and >= 0",
                )?;
                require(
                    self.epsilon.is_finite() && self.epsilon > 0.0,
                    "epsilon",
                    self.epsilon,
                    "must be finite and > 0",
                )
            }
            LossKind::Ls => require(
                self.alpha.is_finite() && (0.0..1.0).contains(&self.alpha),
                "alpha",
                self.alpha,
                "must lie in [0, 1)",
            ),
            LossKind::Fl => require(
                self.gamma.is_finite() && self.gamma >= 0.0,
                "gamma",
                self.gamma,
                "must be finite and >= 0",
            ),
            LossKind::Ecp => require(
                self.lambda.is_finite() && self.lambda >= 0.0,
                "lambda",
                self.lambda,
                "must be finite and >= 0",
            ),
            LossKind::Svls => {
                if self.svls_kernel_size % 2 == 0 {
                    return Err(LossError::EvenKernel(self.svls_kernel_size));
                }
                require(
                    self.svls_sigma.is_finite() && self.svls_sigma > 0.0,
                    "svls_sigma",
                    self.svls_sigma,
                    "must be finite and > 0",
                )
            }
            LossKind::MblsL1 | LossKind::MblsL2 => {
                require(
                    self.margin.is_finite() && self.margin >= 0.0,
                    "margin",
                    self.margin,
                    "must be finite and >= 0",
                )?;
                require(
                    self.lambda.is_finite() && self.lambda >= 0.0,
                    "lambda",
                    self.lambda,
                    "must be finite and >= 0",
                )
            }
        }
    }

    /// Short slug naming the configured method, used for output files.
    pub fn method_name(&self) -> String {
        match self.kind {
            LossKind::Ce => "ce".to_string(),
            LossKind::CeDice => format!("ce_dice_w{}", self.dice_weight),
            LossKind::Ls => format!("ls_a{}", self.alpha),
            LossKind::Fl => format!("fl_g{}", self.gamma),
            LossKind::Ecp => format!("ecp_l{}", self.lambda),
            LossKind::Svls => format!("svls_k{}", self.svls_kernel_size),
            LossKind::MblsL1 => format!("mbls_l1_m{}", self.margin),
            LossKind::MblsL2 => format!("mbls_l2_m{}", self.margin),
        }
    }
}

/// Scalar loss value together with its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// dL/dl, laid out like the logit field it was evaluated on.
    pub grad: Vec<f64>,
}

impl LossEval {
    pub(crate) fn zeros(len: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; len],
        }
    }

    /// `self + weight * other`, element-wise on the gradient.
    pub(crate) fn add_scaled(mut self, weight: f64, other: &LossEval) -> Self {
        self.value += weight * other.value;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += weight * o;
        }
        self
    }
}

/// Evaluate the configured loss on hard labels.
///
/// Label-transforming kinds (label smoothing, spatial smoothing) apply their
/// transform internally; the compound CE+Dice kind sums both terms.
pub fn compound_loss(
    config: &LossConfig,
    logits: &LogitField,
    labels: &LabelField,
) -> Result<LossEval, LossError> {
    config.validate()?;
    match config.kind {
        LossKind::Ce => ce_loss(logits, Target::Hard(labels)),
        LossKind::CeDice => {
            let ce = ce_loss(logits, Target::Hard(labels))?;
            let dice = dice_loss(logits, labels, config.epsilon)?;
            Ok(ce.add_scaled(config.dice_weight, &dice))
        }
        LossKind::Ls => ls_loss(logits, labels, config.alpha),
        LossKind::Fl => focal_loss(logits, labels, config.gamma),
        LossKind::Ecp => ecp_loss(logits, labels, config.lambda),
        LossKind::Svls => {
            let soft = svls_transform(labels, config.svls_kernel_size, config.svls_sigma)?;
            ce_loss(logits, Target::Soft(&soft))
        }
        LossKind::MblsL1 => {
            margin_loss(logits, labels, config.margin, config.lambda, PenaltyKind::L1)
        }
        LossKind::MblsL2 => {
            margin_loss(logits, labels, config.margin, config.lambda, PenaltyKind::L2)
        }
    }
}
