//! Finite-difference verification of every layer and the composed toy network.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfa_autodiff::{grad_check, AutodiffError, Coords, GradCheckReport, Graph, ParamSet, Tensor, Var};
use tfa_core::attention::{fa_branch, ta_branch, AttentionBranch, TfaModule, TfaSpec, TfaVariant};
use tfa_core::layers::{global_avg_pool, Affine, Conv1d, Conv1dSpec, LayerNorm, PoolAxis};
use tfa_core::restcn::{ModelConfig, ResTcn};
use tfa_core::stft::NUM_BINS;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

type Loss<'a> = Box<dyn Fn(&mut Graph<f64>, &ParamSet<f64>) -> tfa_autodiff::Result<Var> + 'a>;

fn lift<A>(r: tfa_core::Result<A>) -> tfa_autodiff::Result<A> {
    r.map_err(|e| match e {
        tfa_core::Error::Autodiff(e) => e,
        other => AutodiffError::InvalidArgument {
            op: "gradcheck",
            msg: other.to_string(),
        },
    })
}

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Replaces every parameter with uniform noise so no coordinate sits at a special value.
fn scramble(params: &mut ParamSet<f64>, scale: f64, rng: &mut ChaCha8Rng) {
    for t in params.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = scale * rng.random_range(-1.0..1.0));
    }
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output entry gets a distinct weight.
fn probe(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> tfa_autodiff::Result<Var> {
    let r = g.constant(weights.clone());
    let prod = g.mul(out, r)?;
    Ok(g.sum(prod))
}

/// One parameterised layer under test: parameters (input included) and its loss.
struct Setup<'a> {
    params: ParamSet<f64>,
    loss: Loss<'a>,
    coords: Coords,
}

fn with_input(params: &mut ParamSet<f64>, shape: &[usize], rng: &mut ChaCha8Rng) -> tfa_autodiff::ParamId {
    params.add("x", random(shape, 1.0, rng)).expect("fresh name")
}

fn conv_case(kernel: usize, dilation: usize, causal: bool, seed: u64) -> Setup<'static> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let spec = Conv1dSpec {
        in_channels: 3,
        out_channels: 4,
        kernel_size: kernel,
        dilation,
        causal,
        bias: true,
    };
    let conv = Conv1d::new(&mut params, "conv", spec, &mut rng).expect("valid spec");
    scramble(&mut params, 1.0, &mut rng);
    let frames = 13;
    let x = with_input(&mut params, &[frames, 3], &mut rng);
    let r = random(&[frames, 4], 1.0, &mut rng);
    Setup {
        params,
        loss: Box::new(move |g, p| {
            let xv = g.param(p, x);
            let y = lift(conv.forward(g, p, xv))?;
            probe(g, y, &r)
        }),
        coords: Coords::All,
    }
}

fn layer_norm_case(seed: u64) -> Setup<'static> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let ln = LayerNorm::new(&mut params, "ln", 6).expect("valid");
    scramble(&mut params, 1.0, &mut rng);
    let x = with_input(&mut params, &[5, 6], &mut rng);
    let r = random(&[5, 6], 1.0, &mut rng);
    Setup {
        params,
        loss: Box::new(move |g, p| {
            let xv = g.param(p, x);
            let y = lift(ln.forward(g, p, xv))?;
            probe(g, y, &r)
        }),
        coords: Coords::All,
    }
}

fn affine_case(seed: u64, broken: bool) -> Setup<'static> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let aff = Affine::new(&mut params, "aff", 7, 5, &mut rng).expect("valid");
    scramble(&mut params, 1.0, &mut rng);
    let x = with_input(&mut params, &[4, 7], &mut rng);
    let r = random(&[4, 5], 1.0, &mut rng);
    Setup {
        params,
        loss: Box::new(move |g, p| {
            let xv = g.param(p, x);
            let mut y = lift(aff.forward(g, p, xv))?;
            if broken {
                // Severs the backward path while leaving the forward value intact.
                y = g.detach(y);
            }
            probe(g, y, &r)
        }),
        coords: Coords::All,
    }
}

fn pool_case(axis: PoolAxis, seed: u64) -> Setup<'static> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let x = with_input(&mut params, &[6, 5], &mut rng);
    let r = match axis {
        PoolAxis::Time => random(&[1, 5], 1.0, &mut rng),
        PoolAxis::Frequency => random(&[6, 1], 1.0, &mut rng),
    };
    Setup {
        params,
        loss: Box::new(move |g, p| {
            let xv = g.param(p, x);
            let y = lift(global_avg_pool(g, xv, axis))?;
            probe(g, y, &r)
        }),
        coords: Coords::All,
    }
}

const TFA_CHECK: TfaSpec = TfaSpec {
    d_model: 20,
    k_tfa: 17,
    c_mid: 1,
    variant: TfaVariant::Tfa,
};

#[derive(Clone, Copy)]
enum BranchKind {
    Time,
    Frequency,
}

fn branch_case(kind: BranchKind, seed: u64) -> Setup<'static> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let branch = AttentionBranch::new(&mut params, "branch", &TFA_CHECK, &mut rng).expect("valid");
    scramble(&mut params, 0.5, &mut rng);
    let frames = 9;
    let d = TFA_CHECK.d_model;
    let x = with_input(&mut params, &[frames, d], &mut rng);
    let r = match kind {
        BranchKind::Time => random(&[frames, 1], 1.0, &mut rng),
        BranchKind::Frequency => random(&[1, d], 1.0, &mut rng),
    };
    Setup {
        params,
        loss: Box::new(move |g, p| {
            let xv = g.param(p, x);
            let y = lift(match kind {
                BranchKind::Time => ta_branch(g, p, &branch, xv, d),
                BranchKind::Frequency => fa_branch(g, p, &branch, xv, d),
            })?;
            probe(g, y, &r)
        }),
        coords: Coords::All,
    }
}

fn tfa_case(seed: u64) -> Setup<'static> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let tfa = TfaModule::new(&mut params, "tfa", TFA_CHECK, &mut rng).expect("valid");
    scramble(&mut params, 0.5, &mut rng);
    let (frames, d) = (9, TFA_CHECK.d_model);
    let x = with_input(&mut params, &[frames, d], &mut rng);
    let r = random(&[frames, d], 1.0, &mut rng);
    Setup {
        params,
        loss: Box::new(move |g, p| {
            let xv = g.param(p, x);
            let (y, _) = lift(tfa.apply(g, p, xv))?;
            probe(g, y, &r)
        }),
        coords: Coords::All,
    }
}

fn network_case(variant: TfaVariant, seed: u64) -> Setup<'static> {
    let cfg = ModelConfig::toy().with_variant(variant);
    let mut params = ParamSet::new();
    let net = ResTcn::new(cfg, &mut params, seed).expect("valid toy config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    // Non-zero biases and gains away from 1 so every parameter has a live gradient.
    let offsets: Vec<_> = params
        .iter()
        .filter(|(_, name, _)| name.ends_with(".b") || name.ends_with(".bias") || name.ends_with(".gain"))
        .map(|(id, _, _)| id)
        .collect();
    for id in offsets {
        let t = params.get_mut(id);
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v += 0.2 * rng.random_range(-1.0..1.0));
    }
    let frames = 7;
    let mut mag = random(&[frames, NUM_BINS], 1.0, &mut rng);
    mag.data_mut().iter_mut().for_each(|v| *v = v.abs());
    let r = random(&[frames, NUM_BINS], 1.0, &mut rng);
    Setup {
        params,
        loss: Box::new(move |g, p| {
            let xv = g.constant(mag.clone());
            let y = lift(net.forward(g, p, xv))?;
            probe(g, y, &r)
        }),
        coords: Coords::Sample { per_tensor: 3, seed },
    }
}

/// Every case of the suite, in report order.
pub const CASES: &[&str] = &[
    "conv1d_causal",
    "conv1d_dilated",
    "conv1d_same",
    "layer_norm",
    "affine",
    "pool_time",
    "pool_frequency",
    "ta_branch",
    "fa_branch",
    "tfa_module",
    "restcn_toy_off",
    "restcn_toy_tfa",
];

fn setup(name: &str, seed: u64, fault: bool) -> Setup<'static> {
    match name {
        "conv1d_causal" => conv_case(3, 1, true, seed),
        "conv1d_dilated" => conv_case(3, 4, true, seed),
        "conv1d_same" => conv_case(5, 2, false, seed),
        "layer_norm" => layer_norm_case(seed),
        "affine" => affine_case(seed, fault),
        "pool_time" => pool_case(PoolAxis::Time, seed),
        "pool_frequency" => pool_case(PoolAxis::Frequency, seed),
        "ta_branch" => branch_case(BranchKind::Time, seed),
        "fa_branch" => branch_case(BranchKind::Frequency, seed),
        "tfa_module" => tfa_case(seed),
        "restcn_toy_off" => network_case(TfaVariant::Off, seed),
        "restcn_toy_tfa" => network_case(TfaVariant::Tfa, seed),
        _ => unreachable!("unknown case {name}"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub draws: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    /// Set when a draw could not be evaluated at all.
    pub error: Option<String>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checked > 0 && self.max_rel_error < TOLERANCE
    }
}

/// Runs one case over `draws` independent random instantiations.
pub fn run_case(name: &str, draws: usize, seed: u64, fault: bool) -> CaseResult {
    let mut result = CaseResult {
        name: if fault {
            format!("{name} (fault injected)")
        } else {
            name.to_string()
        },
        draws,
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        error: None,
    };
    for draw in 0..draws as u64 {
        let s = setup(name, seed.wrapping_mul(1000).wrapping_add(draw), fault);
        match grad_check(&s.loss, &s.params, EPS, s.coords) {
            Ok(GradCheckReport {
                max_rel_error,
                checked,
                skipped_kinks,
                ..
            }) => {
                result.checked += checked;
                result.skipped_kinks += skipped_kinks;
                result.max_rel_error = result.max_rel_error.max(max_rel_error);
            }
            Err(e) => {
                result.error = Some(format!("draw {draw}: {e}"));
                break;
            }
        }
    }
    result
}

/// The full suite; with `fault`, the affine case is rerun with a severed gradient.
pub fn run_suite(draws: usize, seed: u64, fault: bool) -> Vec<CaseResult> {
    let mut rows: Vec<CaseResult> = CASES.iter().map(|c| run_case(c, draws, seed, false)).collect();
    if fault {
        rows.push(run_case("affine", draws, seed, true));
    }
    rows
}

pub fn format_table(rows: &[CaseResult]) -> String {
    let mut out = format!(
        "{:<28} {:>5} {:>8} {:>6} {:>12}  status\n",
        "case", "draws", "checked", "kinks", "max_rel_err"
    );
    for r in rows {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        let _ = write!(
            out,
            "{:<28} {:>5} {:>8} {:>6} {:>12.3e}  {status}",
            r.name, r.draws, r.checked, r.skipped_kinks, r.max_rel_error
        );
        if let Some(e) = &r.error {
            let _ = write!(out, "  ({e})");
        }
        out.push('\n');
    }
    out
}
