//! Residual temporal convolutional network mask estimator.
//!
//! `|X| [L × 257]` → frame-wise affine to `d_model` → `B` pre-activated
//! bottleneck blocks with cycled dilation → LN + ReLU → frame-wise affine to
//! 257 → sigmoid. Each block computes three units `conv(ReLU(LN(·)))`
//! (1×1 down to `d_f`, `k`-tap dilated causal, 1×1 back up to `d_model`),
//! optionally rescales the branch with time-frequency attention, and adds the
//! block input back.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tfa_autodiff::{load_checkpoint, save_checkpoint, Graph, ParamSet, Real, Tensor, Var};

use crate::attention::{AttentionMaps, AttentionVars, TfaModule, TfaSpec, TfaVariant};
use crate::error::{Error, Result};
use crate::layers::{Affine, Conv1d, Conv1dSpec, LayerNorm};
use crate::stft::{Grid, NUM_BINS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub blocks: usize,
    pub d_model: usize,
    pub d_f: usize,
    pub kernel: usize,
    pub max_dilation: usize,
    pub k_tfa: usize,
    pub c_mid: usize,
    pub variant: TfaVariant,
    pub input_bins: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            blocks: 40,
            d_model: 256,
            d_f: 64,
            kernel: 3,
            max_dilation: 16,
            k_tfa: 17,
            c_mid: 1,
            variant: TfaVariant::Tfa,
            input_bins: NUM_BINS,
        }
    }
}

impl ModelConfig {
    /// Four-block, 32-wide configuration for desk-scale experiments.
    pub fn toy() -> Self {
        Self {
            blocks: 4,
            d_model: 32,
            d_f: 16,
            ..Self::default()
        }
    }

    pub fn with_variant(self, variant: TfaVariant) -> Self {
        Self { variant, ..self }
    }

    pub fn tfa_spec(&self) -> TfaSpec {
        TfaSpec {
            d_model: self.d_model,
            k_tfa: self.k_tfa,
            c_mid: self.c_mid,
            variant: self.variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.d_model == 0 || self.d_f == 0 || self.kernel == 0 || self.input_bins == 0 {
            return Err(Error::invalid(
                "ModelConfig",
                "block count, widths and kernel must be ≥ 1",
            ));
        }
        dilation_for_block(1, self.max_dilation)?;
        self.tfa_spec().validate()
    }
}

/// Dilation of block `b` (1-based): `2^((b − 1) mod (log2(D) + 1))`.
pub fn dilation_for_block(b: usize, max_dilation: usize) -> Result<usize> {
    if b == 0 {
        return Err(Error::invalid("dilation_for_block", "block index starts at 1"));
    }
    if !max_dilation.is_power_of_two() {
        return Err(Error::invalid(
            "dilation_for_block",
            format!("maximum dilation {max_dilation} is not a power of two"),
        ));
    }
    let cycle = max_dilation.trailing_zeros() as usize + 1;
    Ok(1 << ((b - 1) % cycle))
}

/// Learned scalars of a model built from `cfg`, from the layer arithmetic alone.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let (dm, df) = (cfg.d_model, cfg.d_f);
    let unit = |c_in: usize, c_out: usize, k: usize| LayerNorm::num_params(c_in) + c_out * c_in * k + c_out;
    let block = unit(dm, df, 1) + unit(df, df, cfg.kernel) + unit(df, dm, 1) + cfg.tfa_spec().num_params();
    Affine::num_params(cfg.input_bins, dm)
        + cfg.blocks * block
        + LayerNorm::num_params(dm)
        + Affine::num_params(dm, NUM_BINS)
}

/// Parameters added by attention over the plain backbone.
pub fn attention_overhead(cfg: &ModelConfig) -> usize {
    count_params(cfg) - count_params(&cfg.with_variant(TfaVariant::Off))
}

#[derive(Clone, Debug)]
struct Unit {
    ln: LayerNorm,
    conv: Conv1d,
}

impl Unit {
    fn forward<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let h = self.ln.forward(g, params, x)?;
        let h = g.relu(h);
        self.conv.forward(g, params, h)
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub index: usize,
    pub dilation: usize,
    d_model: usize,
    units: [Unit; 3],
    tfa: Option<TfaModule>,
}

impl Block {
    fn new<T: Real>(params: &mut ParamSet<T>, cfg: &ModelConfig, index: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let dilation = dilation_for_block(index, cfg.max_dilation)?;
        let widths = [
            (cfg.d_model, cfg.d_f, 1, 1),
            (cfg.d_f, cfg.d_f, cfg.kernel, dilation),
            (cfg.d_f, cfg.d_model, 1, 1),
        ];
        let mut make_unit = |u: usize| -> Result<Unit> {
            let (c_in, c_out, k, d) = widths[u - 1];
            let prefix = format!("block{index}.unit{u}");
            let ln = LayerNorm::new(params, &format!("{prefix}.ln"), c_in)?;
            let spec = Conv1dSpec {
                in_channels: c_in,
                out_channels: c_out,
                kernel_size: k,
                dilation: d,
                causal: true,
                bias: true,
            };
            let conv = Conv1d::new(params, &format!("{prefix}.conv"), spec, rng)?;
            Ok(Unit { ln, conv })
        };
        let units = [make_unit(1)?, make_unit(2)?, make_unit(3)?];
        let tfa = match cfg.variant {
            TfaVariant::Off => None,
            _ => Some(TfaModule::new(
                params,
                &format!("block{index}.tfa"),
                cfg.tfa_spec(),
                rng,
            )?),
        };
        Ok(Self {
            index,
            dilation,
            d_model: cfg.d_model,
            units,
            tfa,
        })
    }

    pub fn tfa(&self) -> Option<&TfaModule> {
        self.tfa.as_ref()
    }

    pub fn conv(&self, unit: usize) -> &Conv1d {
        &self.units[unit].conv
    }

    /// `x + TFA(unit₃(unit₂(unit₁(x))))`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<(Var, AttentionVars)> {
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.d_model {
            return Err(Error::invalid(
                "block_forward",
                format!(
                    "block {} expects width {}, got {:?}",
                    self.index,
                    self.d_model,
                    g.shape(x)
                ),
            ));
        }
        let mut u = x;
        for unit in &self.units {
            u = unit.forward(g, params, u)?;
        }
        let mut vars = AttentionVars::default();
        if let Some(tfa) = &self.tfa {
            (u, vars) = tfa.apply(g, params, u)?;
        }
        Ok((g.add(x, u)?, vars))
    }
}

#[derive(Clone, Debug)]
pub struct ResTcn {
    pub cfg: ModelConfig,
    in_proj: Affine,
    blocks: Vec<Block>,
    out_ln: LayerNorm,
    out: Affine,
}

impl ResTcn {
    /// Registers all parameters in `params`, initialised from `seed`.
    pub fn new<T: Real>(cfg: ModelConfig, params: &mut ParamSet<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_proj = Affine::new(params, "in_proj", cfg.input_bins, cfg.d_model, &mut rng)?;
        let blocks = (1..=cfg.blocks)
            .map(|b| Block::new(params, &cfg, b, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let out_ln = LayerNorm::new(params, "out.ln", cfg.d_model)?;
        let out = Affine::new(params, "out", cfg.d_model, NUM_BINS, &mut rng)?;
        Ok(Self {
            cfg,
            in_proj,
            blocks,
            out_ln,
            out,
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn in_proj(&self) -> &Affine {
        &self.in_proj
    }

    pub fn output_layer(&self) -> &Affine {
        &self.out
    }

    /// Mask logits passed through a sigmoid, `[L × 257]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, mag: Var) -> Result<Var> {
        self.forward_traced(g, params, mag).map(|(m, _)| m)
    }

    /// Like [`ResTcn::forward`], also returning each block's attention handles.
    pub fn forward_traced<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        mag: Var,
    ) -> Result<(Var, Vec<AttentionVars>)> {
        match g.shape(mag) {
            [l, k] if *l >= 1 && *k == self.cfg.input_bins => {}
            s => {
                return Err(Error::invalid(
                    "network_forward",
                    format!("expected [L × {}] magnitudes, got {s:?}", self.cfg.input_bins),
                ))
            }
        }
        let mut x = self.in_proj.forward(g, params, mag)?;
        let mut trace = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, vars) = block.forward(g, params, x)?;
            x = y;
            trace.push(vars);
        }
        let h = self.out_ln.forward(g, params, x)?;
        let h = g.relu(h);
        let logits = self.out.forward(g, params, h)?;
        Ok((g.sigmoid(logits), trace))
    }
}

/// Network plus its parameters, in training precision.
#[derive(Clone, Debug)]
pub struct EnhancementModel {
    pub net: ResTcn,
    pub params: ParamSet<f32>,
}

impl EnhancementModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let net = ResTcn::new(cfg, &mut params, seed)?;
        Ok(Self { net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    /// Builds the network for `cfg` and fills it from a checkpoint file.
    pub fn load(cfg: ModelConfig, path: &Path) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        let records = load_checkpoint(path)?;
        model.params.load_records(&records)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(save_checkpoint(path, &self.params)?)
    }

    /// Mask for a magnitude spectrum, evaluated without gradient bookkeeping.
    pub fn predict(&self, mag: &Grid<f64>) -> Result<Grid<f64>> {
        self.predict_traced(mag).map(|(m, _)| m)
    }

    /// Mask plus per-block attention maps.
    pub fn predict_traced(&self, mag: &Grid<f64>) -> Result<(Grid<f64>, Vec<AttentionMaps>)> {
        let mut g = Graph::<f32>::inference();
        let input = Tensor::new(
            [mag.frames(), mag.bins()],
            mag.data().iter().map(|v| *v as f32).collect(),
        )?;
        let x = g.constant(input);
        let (mask, trace) = self.net.forward_traced(&mut g, &self.params, x)?;
        let maps = trace
            .iter()
            .map(|v| AttentionMaps::from_vars(&g, v, mag.frames(), self.net.cfg.d_model))
            .collect();
        let values = g.value(mask).iter().map(|v| *v as f64).collect();
        Ok((Grid::from_vec(mag.frames(), NUM_BINS, values)?, maps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_cycle_for_default_max() {
        assert_eq!(dilation_for_block(1, 16).unwrap(), 1);
        assert_eq!(dilation_for_block(5, 16).unwrap(), 16);
        assert_eq!(dilation_for_block(6, 16).unwrap(), 1);
        assert_eq!(dilation_for_block(40, 16).unwrap(), 16);
        assert!((1..=10).all(|b| dilation_for_block(b, 1).unwrap() == 1));
        assert!(dilation_for_block(3, 12).is_err());
        assert!(dilation_for_block(0, 16).is_err());
    }

    #[test]
    fn arithmetic_count_matches_registered_parameters() {
        for variant in TfaVariant::ALL {
            let cfg = ModelConfig::toy().with_variant(variant);
            let mut p = ParamSet::<f32>::new();
            ResTcn::new(cfg, &mut p, 0).unwrap();
            assert_eq!(p.num_scalars(), count_params(&cfg), "{variant}");
        }
    }

    #[test]
    fn checkpoint_names_follow_convention() {
        let mut p = ParamSet::<f32>::new();
        ResTcn::new(ModelConfig::toy(), &mut p, 0).unwrap();
        for name in [
            "in_proj.W",
            "in_proj.b",
            "block1.unit1.conv.W",
            "block1.unit2.conv.b",
            "block4.unit3.ln.gain",
            "block2.unit1.ln.bias",
            "block3.tfa.ta.conv1.W",
            "block3.tfa.fa.conv2.b",
            "out.ln.gain",
            "out.ln.bias",
            "out.W",
            "out.b",
        ] {
            assert!(p.id_of(name).is_some(), "missing {name}");
        }
    }
}
