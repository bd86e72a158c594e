use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Gaussian negative log-likelihood over both heads.
    #[default]
    Nll,
    /// Squared error on the mean head only; the variance head is not trained.
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nll" => Ok(Self::Nll),
            "mse" => Ok(Self::Mse),
            _ => Err(Error::invalid("loss", format!("unknown loss `{s}` (expected nll or mse)"))),
        }
    }
}

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: g.shape(a).to_vec(),
            rhs: g.shape(b).to_vec(),
        });
    }
    Ok(())
}

/// Mean over the batch of `log σ² + (μ − y)² / σ²`.
pub fn nll_loss(g: &mut Graph, mu: Var, var: Var, y: Var) -> Result<Var> {
    same_shape(g, "nll_loss", mu, y)?;
    same_shape(g, "nll_loss", mu, var)?;
    if let Some(bad) = g.value(var).data().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::invalid("variance", format!("must be > 0, got {bad}")));
    }
    let diff = g.sub(mu, y)?;
    let sq = g.square(diff);
    let scaled = g.div(sq, var)?;
    let log_var = g.log(var);
    let per_example = g.add(log_var, scaled)?;
    Ok(g.mean(per_example))
}

pub fn mse_loss(g: &mut Graph, mu: Var, y: Var) -> Result<Var> {
    same_shape(g, "mse_loss", mu, y)?;
    let diff = g.sub(mu, y)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

pub fn loss(g: &mut Graph, kind: LossKind, mu: Var, var: Var, y: Var) -> Result<Var> {
    match kind {
        LossKind::Nll => nll_loss(g, mu, var, y),
        LossKind::Mse => mse_loss(g, mu, y),
    }
}
