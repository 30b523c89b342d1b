//! Time-frequency attention.
//!
//! Given features `Y: [L × d]`, the frequency branch pools over time to a
//! `1 × d` descriptor and the time branch pools over features to an `L × 1`
//! descriptor. Each descriptor goes through two centred 1-D convolutions
//! (ReLU between, sigmoid after) to give `F_A` and `T_A`. Their outer product
//! `TF_A(l, k) = T_A(l) · F_A(k)` rescales `Y` elementwise.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use tfa_autodiff::{Graph, ParamSet, Real, Var};

use crate::error::{Error, Result};
use crate::layers::{global_avg_pool, Conv1d, Conv1dSpec, PoolAxis};

/// Which attention branches a block runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TfaVariant {
    Tfa,
    TaOnly,
    FaOnly,
    Off,
}

impl TfaVariant {
    pub const ALL: [TfaVariant; 4] = [TfaVariant::Off, TfaVariant::TaOnly, TfaVariant::FaOnly, TfaVariant::Tfa];

    pub fn uses_ta(self) -> bool {
        matches!(self, TfaVariant::Tfa | TfaVariant::TaOnly)
    }

    pub fn uses_fa(self) -> bool {
        matches!(self, TfaVariant::Tfa | TfaVariant::FaOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TfaVariant::Tfa => "tfa",
            TfaVariant::TaOnly => "ta",
            TfaVariant::FaOnly => "fa",
            TfaVariant::Off => "off",
        }
    }
}

impl fmt::Display for TfaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TfaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tfa" => Ok(TfaVariant::Tfa),
            "ta" | "ta_only" => Ok(TfaVariant::TaOnly),
            "fa" | "fa_only" => Ok(TfaVariant::FaOnly),
            "off" | "none" => Ok(TfaVariant::Off),
            other => Err(Error::invalid(
                "TfaVariant",
                format!("unknown variant `{other}` (expected off, ta, fa or tfa)"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TfaSpec {
    pub d_model: usize,
    pub k_tfa: usize,
    pub c_mid: usize,
    pub variant: TfaVariant,
}

impl Default for TfaSpec {
    fn default() -> Self {
        Self {
            d_model: 256,
            k_tfa: 17,
            c_mid: 1,
            variant: TfaVariant::Tfa,
        }
    }
}

impl TfaSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_tfa.is_multiple_of(2) {
            return Err(Error::invalid(
                "TfaSpec",
                format!("k_tfa must be odd, got {}", self.k_tfa),
            ));
        }
        if self.c_mid == 0 || self.d_model == 0 {
            return Err(Error::invalid("TfaSpec", "c_mid and d_model must be ≥ 1"));
        }
        Ok(())
    }

    fn conv_specs(&self) -> [Conv1dSpec; 2] {
        let base = Conv1dSpec {
            in_channels: 1,
            out_channels: self.c_mid,
            kernel_size: self.k_tfa,
            dilation: 1,
            causal: false,
            bias: true,
        };
        [
            base,
            Conv1dSpec {
                in_channels: self.c_mid,
                out_channels: 1,
                ..base
            },
        ]
    }

    /// Learned scalars of one branch.
    pub fn branch_params(&self) -> usize {
        self.conv_specs().iter().map(Conv1dSpec::num_params).sum()
    }

    /// Learned scalars of one attention module under this variant.
    pub fn num_params(&self) -> usize {
        let branches = self.variant.uses_ta() as usize + self.variant.uses_fa() as usize;
        branches * self.branch_params()
    }
}

/// Two stacked centred convolutions over a one-channel descriptor.
#[derive(Clone, Debug)]
pub struct AttentionBranch {
    conv1: Conv1d,
    conv2: Conv1d,
}

impl AttentionBranch {
    pub fn new<T: Real>(params: &mut ParamSet<T>, prefix: &str, spec: &TfaSpec, rng: &mut impl Rng) -> Result<Self> {
        let [s1, s2] = spec.conv_specs();
        Ok(Self {
            conv1: Conv1d::new(params, &format!("{prefix}.conv1"), s1, rng)?,
            conv2: Conv1d::new(params, &format!("{prefix}.conv2"), s2, rng)?,
        })
    }

    pub fn convs(&self) -> [&Conv1d; 2] {
        [&self.conv1, &self.conv2]
    }

    /// `σ(f₂(ReLU(f₁(z))))` for a descriptor `z: [n × 1]`.
    fn transform<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, z: Var) -> Result<Var> {
        let h = self.conv1.forward(g, params, z)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, params, h)?;
        Ok(g.sigmoid(h))
    }
}

fn check_input<T: Real>(g: &Graph<T>, y: Var, d_model: usize, op: &'static str) -> Result<usize> {
    match g.shape(y) {
        [l, d] if *l >= 1 && *d == d_model => Ok(*l),
        s => Err(Error::invalid(
            op,
            format!("expected [L × {d_model}] with L ≥ 1, got {s:?}"),
        )),
    }
}

/// Frequency attention `F_A: [1 × d]` from the time-averaged features.
pub fn fa_branch<T: Real>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    branch: &AttentionBranch,
    y: Var,
    d_model: usize,
) -> Result<Var> {
    check_input(g, y, d_model, "fa_branch")?;
    let z = global_avg_pool(g, y, PoolAxis::Time)?;
    let z = g.reshape(z, &[d_model, 1])?;
    let a = branch.transform(g, params, z)?;
    Ok(g.reshape(a, &[1, d_model])?)
}

/// Time attention `T_A: [L × 1]` from the feature-averaged frames.
pub fn ta_branch<T: Real>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    branch: &AttentionBranch,
    y: Var,
    d_model: usize,
) -> Result<Var> {
    check_input(g, y, d_model, "ta_branch")?;
    let z = global_avg_pool(g, y, PoolAxis::Frequency)?;
    branch.transform(g, params, z)
}

/// Outer product `T_A ⊗ F_A: [L × d]`.
pub fn combine<T: Real>(g: &mut Graph<T>, t_map: Var, f_map: Var) -> Result<Var> {
    match (g.shape(t_map), g.shape(f_map)) {
        ([_, 1], [1, _]) => Ok(g.matmul(t_map, f_map)?),
        (a, b) => Err(Error::invalid(
            "combine",
            format!("expected [L × 1] and [1 × d], got {a:?} and {b:?}"),
        )),
    }
}

/// Graph handles of the maps computed by one [`TfaModule::apply`].
#[derive(Clone, Copy, Debug, Default)]
pub struct AttentionVars {
    pub t_map: Option<Var>,
    pub f_map: Option<Var>,
    pub tf_map: Option<Var>,
}

/// Concrete attention maps of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps {
    /// `L` values, absent when the time branch is disabled.
    pub t_map: Option<Vec<f64>>,
    /// `d_model` values, absent when the frequency branch is disabled.
    pub f_map: Option<Vec<f64>>,
    pub frames: usize,
    pub d_model: usize,
}

impl AttentionMaps {
    pub fn from_vars<T: Real>(g: &Graph<T>, vars: &AttentionVars, frames: usize, d_model: usize) -> Self {
        let grab = |v: Option<Var>| v.map(|v| g.value(v).iter().map(|x| x.as_f64()).collect());
        Self {
            t_map: grab(vars.t_map),
            f_map: grab(vars.f_map),
            frames,
            d_model,
        }
    }

    /// Effective multiplier at `(l, k)`; a disabled branch contributes 1.
    pub fn weight(&self, l: usize, k: usize) -> f64 {
        let t = self.t_map.as_ref().map_or(1.0, |t| t[l]);
        let f = self.f_map.as_ref().map_or(1.0, |f| f[k]);
        t * f
    }
}

/// One attention unit with independent time and frequency branches.
#[derive(Clone, Debug)]
pub struct TfaModule {
    pub spec: TfaSpec,
    ta: Option<AttentionBranch>,
    fa: Option<AttentionBranch>,
}

impl TfaModule {
    /// Registers `{prefix}.ta.*` and/or `{prefix}.fa.*` as the variant requires.
    pub fn new<T: Real>(params: &mut ParamSet<T>, prefix: &str, spec: TfaSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let ta = spec
            .variant
            .uses_ta()
            .then(|| AttentionBranch::new(params, &format!("{prefix}.ta"), &spec, rng))
            .transpose()?;
        let fa = spec
            .variant
            .uses_fa()
            .then(|| AttentionBranch::new(params, &format!("{prefix}.fa"), &spec, rng))
            .transpose()?;
        Ok(Self { spec, ta, fa })
    }

    pub fn ta(&self) -> Option<&AttentionBranch> {
        self.ta.as_ref()
    }

    pub fn fa(&self) -> Option<&AttentionBranch> {
        self.fa.as_ref()
    }

    /// `Y ⊙ TF_A` (or the single-branch broadcast); identity when off.
    pub fn apply<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, y: Var) -> Result<(Var, AttentionVars)> {
        let d = self.spec.d_model;
        let frames = check_input(g, y, d, "tfa apply")?;
        let mut vars = AttentionVars::default();
        if let Some(ta) = &self.ta {
            vars.t_map = Some(ta_branch(g, params, ta, y, d)?);
        }
        if let Some(fa) = &self.fa {
            vars.f_map = Some(fa_branch(g, params, fa, y, d)?);
        }
        let weights = match (vars.t_map, vars.f_map) {
            (Some(t), Some(f)) => {
                let tf = combine(g, t, f)?;
                vars.tf_map = Some(tf);
                tf
            }
            (Some(t), None) => g.broadcast(t, &[frames, d])?,
            (None, Some(f)) => g.broadcast(f, &[frames, d])?,
            (None, None) => return Ok((y, vars)),
        };
        Ok((g.mul(y, weights)?, vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_parsing() {
        assert_eq!("TFA".parse::<TfaVariant>().unwrap(), TfaVariant::Tfa);
        assert_eq!("ta".parse::<TfaVariant>().unwrap(), TfaVariant::TaOnly);
        assert_eq!("fa_only".parse::<TfaVariant>().unwrap(), TfaVariant::FaOnly);
        assert_eq!("off".parse::<TfaVariant>().unwrap(), TfaVariant::Off);
        assert!("sa".parse::<TfaVariant>().is_err());
    }

    #[test]
    fn one_module_has_72_parameters() {
        let spec = TfaSpec::default();
        assert_eq!(spec.branch_params(), 36);
        assert_eq!(spec.num_params(), 72);
        assert_eq!(
            TfaSpec {
                variant: TfaVariant::TaOnly,
                ..spec
            }
            .num_params(),
            36
        );
        assert_eq!(
            TfaSpec {
                variant: TfaVariant::Off,
                ..spec
            }
            .num_params(),
            0
        );
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(TfaSpec {
            k_tfa: 16,
            ..TfaSpec::default()
        }
        .validate()
        .is_err());
    }
}
