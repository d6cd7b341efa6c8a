//! Central finite-difference verification of tape gradients (64-bit).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{Model, NetworkConfig};
use crate::data::disk_mask;
use crate::error::{Error, Result};
use crate::kernels::ConvSpec;
use crate::nn::{
    AgResidual, BatchNorm, BlockOptions, Builder, ChannelAttention, Conv, Forward, GatingSignal, Mkrc, Mode,
    SeAspp, SeBlock, SpatialAttention, Tag, Tam,
};
use crate::params::ParamStore;
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::train::training_loss;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Coordinates sampled per parameter tensor; smaller tensors are checked in full.
    pub coords_per_param: usize,
    /// Gradients below this magnitude are compared on an absolute scale.
    pub abs_floor: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Skip coordinates whose perturbation crosses a ReLU or max kink,
    /// detected by comparing difference quotients with each other (never with
    /// the analytic gradient), and score the rest against the Richardson
    /// extrapolation of the central differences at `step` and `step / 2`.
    pub kink_check: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            coords_per_param: 10,
            abs_floor: 1e-6,
            mode: Mode::Train,
            seed: 0,
            kink_check: true,
        }
    }
}

impl GradCheckOptions {
    /// Defaults for a whole network: the loss passes through dozens of
    /// layers, so central differences carry up to ~1e-7 of rounding noise
    /// and gradients below 1e-4 are judged on an absolute scale.
    pub fn model() -> Self {
        GradCheckOptions { tol: 1e-3, abs_floor: 1e-4, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates skipped because a kink lies within one step.
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare tape gradients of `loss_fn` against central differences for
/// every trainable parameter in `store`. Batch-norm running statistics are
/// never updated during the check.
pub fn grad_check<F>(
    store: &ParamStore<f64>,
    mut loss_fn: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Forward<f64>) -> Result<Var>,
{
    let analytic = {
        let mut s = store.clone();
        let mut f = Forward::new(&mut s, opts.mode).frozen_stats();
        let l = loss_fn(&mut f)?;
        f.tape.backward(l)?.into_params()
    };

    let mut work = store.clone();
    let mut eval = |s: &mut ParamStore<f64>| -> Result<f64> {
        let mut f = Forward::new(s, opts.mode).frozen_stats();
        let l = loss_fn(&mut f)?;
        let v = f.value(l);
        if v.numel() != 1 {
            return Err(Error::Value("grad_check loss must be scalar".into()));
        }
        Ok(v.item())
    };

    let f0 = eval(&mut work)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = Vec::new();
    let ids: Vec<_> = store.trainable_ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        let want = opts.coords_per_param.min(n);
        // Oversample so coordinates that straddle a kink can be replaced.
        let mut pool = sample(&mut rng, n, (4 * want).min(n)).into_vec();
        pool.truncate(if opts.kink_check { pool.len() } else { want });
        let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
        for &i in &pool {
            if checked == want {
                break;
            }
            let orig = work.get(id).data()[i];
            let mut diff = |h: f64| -> Result<(f64, f64)> {
                work.get_mut(id).data_mut()[i] = orig + h;
                let up = eval(&mut work)?;
                work.get_mut(id).data_mut()[i] = orig - h;
                let down = eval(&mut work)?;
                work.get_mut(id).data_mut()[i] = orig;
                Ok((up, down))
            };
            let (up, down) = diff(opts.step)?;
            let mut numeric = (up - down) / (2.0 * opts.step);
            if opts.kink_check {
                // One-sided quotients extrapolated from h and h/2 agree to
                // O(h^2) on smooth ground; a kink within one step on either
                // side breaks that agreement.
                let (up2, down2) = diff(opts.step / 2.0)?;
                let h = opts.step;
                let fwd = 2.0 * (up2 - f0) / (h / 2.0) - (up - f0) / h;
                let bwd = 2.0 * (f0 - down2) / (h / 2.0) - (f0 - down) / h;
                let half = (up2 - down2) / h;
                if relative_error(fwd, bwd, opts.abs_floor) > opts.tol
                    || relative_error(numeric, half, opts.abs_floor) > opts.tol
                {
                    skipped += 1;
                    continue;
                }
                numeric = (4.0 * half - numeric) / 3.0;
            }
            let a = analytic.get(&id).map_or(0.0, |g| g.data()[i]);
            worst = worst.max(relative_error(a, numeric, opts.abs_floor));
            checked += 1;
        }
        report.push(ParamCheck {
            name: store.name(id).to_string(),
            checked,
            skipped,
            max_rel_err: worst,
        });
    }
    let checked = report.iter().map(|p| p.checked).sum();
    let skipped = report.iter().map(|p| p.skipped).sum();
    let max_rel_err = report.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: report,
        max_rel_err,
        tol: opts.tol,
        checked,
        skipped,
        // A check that skips most of its coordinates proves nothing.
        passed: max_rel_err < opts.tol && checked > 0 && 4 * skipped <= checked + skipped,
    })
}

fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Move every trainable value off its initial point. Zero-initialised
/// biases otherwise leave many pre-activations exactly on a ReLU kink.
fn jitter(store: &mut ParamStore<f64>, scale: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.trainable_ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += scale * z;
        }
    }
}

const JITTER: f64 = 0.05;

/// Check the full two-network model under its training loss on one
/// random image with a disk-shaped target.
pub fn model_grad_check(cfg: &NetworkConfig, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let model = Model::build(cfg)?;
    let mut store = model.params.cast::<f64>();
    let (h, w) = cfg.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    jitter(&mut store, JITTER, &mut rng);
    let x = Tensor::from_fn(&[1, cfg.in_channels, h, w], |_| rng.gen_range(0.0..1.0));
    let r = h.min(w) as f64 / 4.0;
    let y = disk_mask(h, w, w as f64 / 2.0, h as f64 / 2.0, r).cast::<f64>().reshape(&[1, 1, h, w])?;
    let lambda = cfg.deep_supervision_weight;
    grad_check(
        &store,
        |f| {
            let xv = f.input(x.clone());
            let out = model.network.forward(f, xv)?;
            training_loss(f, &out, &y, lambda)
        },
        opts,
    )
}

type BlockFn = Box<dyn Fn(&mut Forward<f64>, &[Var]) -> Result<Var>>;

/// Each building block checked in isolation under `sum(block(x) ⊙ r)`.
pub fn block_grad_checks(opts: GradCheckOptions) -> Result<Vec<(String, GradCheckReport)>> {
    let bo = BlockOptions {
        se_reduction: 4,
        spatial_kernel: 7,
        tam_on: true,
    };
    type Make = fn(&mut Builder, BlockOptions) -> Result<BlockFn>;
    let cases: Vec<(&str, Vec<Vec<usize>>, Make)> = vec![
        ("conv_dilated", vec![vec![2, 3, 8, 8]], |b, _| {
            let c = Conv::new(b, "conv", ConvSpec::new(3, 4, 3).with_dilation(2))?;
            Ok(Box::new(move |f, x| c.forward(f, x[0])))
        }),
        ("conv_strided", vec![vec![2, 3, 8, 8]], |b, _| {
            let c = Conv::new(b, "conv", ConvSpec::new(3, 4, 1).with_stride(2))?;
            Ok(Box::new(move |f, x| c.forward(f, x[0])))
        }),
        ("batch_norm", vec![vec![2, 3, 4, 4]], |b, _| {
            let n = BatchNorm::new(b, "bn", 3)?;
            Ok(Box::new(move |f, x| n.forward(f, x[0])))
        }),
        ("se_block", vec![vec![2, 8, 4, 4]], |b, o| {
            let m = SeBlock::new(b, "se", 8, o.se_reduction)?;
            Ok(Box::new(move |f, x| m.forward(f, x[0])))
        }),
        ("channel_attention", vec![vec![2, 8, 4, 4]], |b, o| {
            let m = ChannelAttention::new(b, "ca", 8, o.se_reduction)?;
            Ok(Box::new(move |f, x| m.forward(f, x[0])))
        }),
        ("spatial_attention", vec![vec![2, 4, 8, 8]], |b, o| {
            let m = SpatialAttention::new(b, "sa", o.spatial_kernel)?;
            Ok(Box::new(move |f, x| m.forward(f, x[0])))
        }),
        ("tam", vec![vec![2, 4, 8, 8]], |b, o| {
            let m = Tam::new(b, "tam", 4, 4, o.se_reduction, o.spatial_kernel, true)?;
            Ok(Box::new(move |f, x| m.forward(f, x[0])))
        }),
        ("ag_residual", vec![vec![2, 3, 8, 8]], |b, o| {
            let m = AgResidual::new(b, "agres", 3, 4, o)?;
            Ok(Box::new(move |f, x| m.forward(f, x[0])))
        }),
        ("mkrc", vec![vec![2, 4, 8, 8]], |b, _| {
            let m = Mkrc::new(b, "mkrc", 4, 8, true)?;
            Ok(Box::new(move |f, x| m.forward(f, x[0])))
        }),
        ("se_aspp", vec![vec![2, 8, 8, 8]], |b, o| {
            let m = SeAspp::new(b, "aspp", 8, 8, o.se_reduction)?;
            Ok(Box::new(move |f, x| m.forward(f, x[0])))
        }),
        ("gating_signal", vec![vec![2, 8, 4, 4]], |b, _| {
            let m = GatingSignal::new(b, "gate", 8, 4)?;
            Ok(Box::new(move |f, x| m.forward(f, x[0])))
        }),
        ("tag", vec![vec![2, 4, 8, 8], vec![2, 4, 4, 4]], |b, o| {
            let m = Tag::new(b, "tag", 4, 4, o)?;
            Ok(Box::new(move |f, x| m.forward(f, x[0], x[1])))
        }),
    ];
    let mut out = Vec::with_capacity(cases.len());
    for (i, (name, shapes, make)) in cases.into_iter().enumerate() {
        let mut s = ParamStore::new();
        let block = make(&mut Builder::new(&mut s, opts.seed.wrapping_add(i as u64)), bo)?;
        let mut store = s.cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1000 + i as u64));
        jitter(&mut store, JITTER, &mut rng);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|sh| gaussian(sh, &mut rng)).collect();
        let out_shape = {
            let mut f = Forward::shared(&store, opts.mode);
            let xs: Vec<Var> = inputs.iter().map(|t| f.input(t.clone())).collect();
            let y = block(&mut f, &xs)?;
            f.value(y).shape().to_vec()
        };
        let r = gaussian(&out_shape, &mut rng);
        let report = grad_check(
            &store,
            |f| {
                let xs: Vec<Var> = inputs.iter().map(|t| f.input(t.clone())).collect();
                let y = block(f, &xs)?;
                let rv = f.input(r.clone());
                let p = f.tape.mul(y, rv)?;
                Ok(f.tape.sum(p))
            },
            opts,
        )?;
        out.push((name.to_string(), report));
    }
    Ok(out)
}
