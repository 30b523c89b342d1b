//! Frame-wise building blocks over `[frames × features]` sequences.

use rand::Rng;
use tfa_autodiff::{ConvPadding, Graph, ParamId, ParamSet, Real, Tensor, Var};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-8;

/// Zero-mean uniform draw with bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub causal: bool,
    pub bias: bool,
}

impl Conv1dSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.dilation == 0 {
            return Err(Error::invalid("Conv1dSpec", "kernel size and dilation must be ≥ 1"));
        }
        if !self.causal && self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid(
                "Conv1dSpec",
                format!("non-causal kernel must be odd, got {}", self.kernel_size),
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("Conv1dSpec", "channel counts must be ≥ 1"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_size + if self.bias { self.out_channels } else { 0 }
    }
}

/// 1-D convolution along the frame axis, length preserving.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub spec: Conv1dSpec,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Conv1d {
    /// Registers `{prefix}.W` (`[out × in × k]`) and, with bias, `{prefix}.b`.
    pub fn new<T: Real>(params: &mut ParamSet<T>, prefix: &str, spec: Conv1dSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let k = spec.kernel_size;
        let w = xavier_uniform(
            &[spec.out_channels, spec.in_channels, k],
            spec.in_channels * k,
            spec.out_channels * k,
            rng,
        );
        let weight = params.add(format!("{prefix}.W"), w)?;
        let bias = if spec.bias {
            Some(params.add(format!("{prefix}.b"), Tensor::zeros([spec.out_channels]))?)
        } else {
            None
        };
        Ok(Self { spec, weight, bias })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.spec.in_channels {
            return Err(Error::invalid(
                "conv1d",
                format!("expected [L × {}] input, got {:?}", self.spec.in_channels, g.shape(x)),
            ));
        }
        let w = g.param(params, self.weight);
        let b = self.bias.map(|b| g.param(params, b));
        let padding = if self.spec.causal {
            ConvPadding::Causal
        } else {
            ConvPadding::Same
        };
        Ok(g.conv1d(x, w, b, self.spec.dilation, padding)?)
    }
}

/// Layer normalization over the feature axis of every frame.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub feature_dim: usize,
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    /// Registers `{prefix}.gain` (ones) and `{prefix}.bias` (zeros).
    pub fn new<T: Real>(params: &mut ParamSet<T>, prefix: &str, feature_dim: usize) -> Result<Self> {
        let gain = params.add(format!("{prefix}.gain"), Tensor::full([feature_dim], T::one()))?;
        let bias = params.add(format!("{prefix}.bias"), Tensor::zeros([feature_dim]))?;
        Ok(Self {
            feature_dim,
            gain,
            bias,
        })
    }

    pub fn num_params(feature_dim: usize) -> usize {
        2 * feature_dim
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.feature_dim {
            return Err(Error::invalid(
                "layer_norm",
                format!("expected [L × {}] input, got {:?}", self.feature_dim, g.shape(x)),
            ));
        }
        let gain = g.param(params, self.gain);
        let bias = g.param(params, self.bias);
        Ok(g.layer_norm(x, gain, bias, T::lit(LAYER_NORM_EPS))?)
    }
}

/// Fully connected map applied to every frame independently.
#[derive(Clone, Debug)]
pub struct Affine {
    pub in_features: usize,
    pub out_features: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Affine {
    /// Registers `{prefix}.W` (`[in × out]`) and `{prefix}.b`.
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        prefix: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = xavier_uniform(&[in_features, out_features], in_features, out_features, rng);
        let weight = params.add(format!("{prefix}.W"), w)?;
        let bias = params.add(format!("{prefix}.b"), Tensor::zeros([out_features]))?;
        Ok(Self {
            in_features,
            out_features,
            weight,
            bias,
        })
    }

    pub fn num_params(in_features: usize, out_features: usize) -> usize {
        in_features * out_features + out_features
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        affine_framewise(g, x, w, b)
    }
}

/// `y[l] = x[l] · W + b` for every frame `l`.
pub fn affine_framewise<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let frames = match g.shape(x) {
        [l, _] => *l,
        s => {
            return Err(Error::invalid(
                "affine_framewise",
                format!("expected 2-D input, got {s:?}"),
            ))
        }
    };
    let y = g.matmul(x, w)?;
    let out = g.shape(y)[1];
    if g.shape(b) != [out] {
        return Err(Error::invalid(
            "affine_framewise",
            format!("bias shape {:?} does not match {out} outputs", g.shape(b)),
        ));
    }
    let b = g.reshape(b, &[1, out])?;
    let b = g.broadcast(b, &[frames, out])?;
    Ok(g.add(y, b)?)
}

/// Axis a global average is taken over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolAxis {
    /// Average over frames: `[L × F] → [1 × F]`.
    Time,
    /// Average over features: `[L × F] → [L × 1]`.
    Frequency,
}

pub fn global_avg_pool<T: Real>(g: &mut Graph<T>, x: Var, axis: PoolAxis) -> Result<Var> {
    let shape = g.shape(x);
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(Error::invalid(
            "global_avg_pool",
            format!("expected non-empty [L × F] input, got {shape:?}"),
        ));
    }
    let axis = match axis {
        PoolAxis::Time => 0,
        PoolAxis::Frequency => 1,
    };
    Ok(g.mean_axis(x, axis)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_validation() {
        let good = Conv1dSpec {
            in_channels: 1,
            out_channels: 1,
            kernel_size: 3,
            dilation: 1,
            causal: false,
            bias: true,
        };
        assert!(good.validate().is_ok());
        assert!(Conv1dSpec { kernel_size: 4, ..good }.validate().is_err());
        assert!(Conv1dSpec {
            kernel_size: 4,
            causal: true,
            ..good
        }
        .validate()
        .is_ok());
        assert!(Conv1dSpec { dilation: 0, ..good }.validate().is_err());
        assert!(Conv1dSpec {
            kernel_size: 0,
            causal: true,
            ..good
        }
        .validate()
        .is_err());
    }

    #[test]
    fn init_bounds_and_zero_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::<f64>::new();
        let a = Affine::new(&mut p, "fc", 10, 6, &mut rng).unwrap();
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(p.get(a.weight()).data().iter().all(|v| v.abs() <= bound));
        assert!(p.get(a.bias()).data().iter().all(|v| *v == 0.0));
        let ln = LayerNorm::new(&mut p, "ln", 4).unwrap();
        assert_eq!(p.get(ln.gain).data(), &[1.0; 4]);
        assert_eq!(p.get(ln.bias).data(), &[0.0; 4]);
        assert!(p.id_of("fc.W").is_some() && p.id_of("ln.bias").is_some());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::<f64>::new();
        let spec = Conv1dSpec {
            in_channels: 3,
            out_channels: 2,
            kernel_size: 1,
            dilation: 1,
            causal: true,
            bias: false,
        };
        let conv = Conv1d::new(&mut p, "c", spec, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([4, 2]));
        assert!(conv.forward(&mut g, &p, x).is_err());
        let ln = LayerNorm::new(&mut p, "ln", 3).unwrap();
        assert!(ln.forward(&mut g, &p, x).is_err());
    }
}
