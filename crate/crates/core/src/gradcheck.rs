//! Central finite-difference checks of every backward rule and of the loss
//! functions assembled from them, plus a suite of closed-form loss identities.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::ConvParams;
use crate::error::CoreError;
use crate::flow::FlowField;
use crate::math;
use crate::metrics;
use crate::models::{build_discriminator, build_feature_extractor, build_sr_net, SrConfig, SrModel};
use crate::sosr::{self, SosrWeights};
use crate::tape::{Elementwise, Fault, Tape, Var};
use crate::tensor::{Shape, Tensor};
use crate::tosr::{self, TosrWeights, WarpBorder};
use crate::train::PairBatch;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub instances: usize,
    /// Central-difference half step.
    pub step: f32,
    pub tolerance: f64,
    /// Coordinates probed per instance; smaller inputs are probed exhaustively.
    pub max_coords: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { instances: 20, step: 4e-2, tolerance: 1e-3, max_coords: 48, seed: 0x6eed, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// One evaluation: loss value, the gradient of every input tensor, and the
/// tape's activation pattern.
struct Probe {
    value: f64,
    grads: Vec<Tensor>,
    pattern: u64,
}

type Eval<'a> = dyn Fn(&[Tensor]) -> Result<Probe, CoreError> + 'a;

/// Halvings of the step tried before a coordinate sitting on a kink is skipped.
const STEP_HALVINGS: usize = 4;

/// Norm-wise relative error `|a - n| / max(|a|, |n|)` over the probed
/// coordinates. A coordinate is probed at the largest step (halving from
/// `step`) for which both evaluations stay on the linear piece of the
/// unperturbed point; coordinates that never do are skipped.
fn compare(inputs: &[Tensor], eval: &Eval, step: f32, max_coords: usize, rng: &mut ChaCha8Rng) -> Result<f64, CoreError> {
    let base = eval(inputs)?;
    let total: usize = inputs.iter().map(Tensor::len).sum();
    let probes: Vec<usize> = if total <= max_coords { (0..total).collect() } else { sample(rng, total, max_coords).into_vec() };

    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    let mut work = inputs.to_vec();
    for flat in probes {
        let (mut t, mut i) = (0, flat);
        while i >= work[t].len() {
            i -= work[t].len();
            t += 1;
        }
        let orig = work[t].data()[i];
        let mut h = step;
        let mut numeric = None;
        for _ in 0..=STEP_HALVINGS {
            work[t].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[t].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[t].data_mut()[i] = orig;
            if plus.pattern == base.pattern && minus.pattern == base.pattern {
                // divide by the step actually represented in f32
                let span = ((orig + h) as f64) - ((orig - h) as f64);
                numeric = Some((plus.value - minus.value) / span);
                break;
            }
            h *= 0.5;
        }
        let Some(n) = numeric else { continue };
        let a = base.grads[t].data()[i] as f64;
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let denom = math::sqrt64(na.max(nn));
    let err = math::sqrt64(diff);
    Ok(if denom == 0.0 { err } else { err / denom })
}

/// Evaluates `f` on a fresh tape with every input marked differentiable.
fn tape_eval<'a>(fault: Option<Fault>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var, CoreError> + 'a) -> Box<Eval<'a>> {
    Box::new(move |inputs: &[Tensor]| {
        let mut tape = Tape::with_fault(fault);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss).item() as f64;
        let pattern = tape.activation_pattern();
        let g = tape.backward(loss)?;
        let grads = vars.iter().zip(inputs).map(|(&v, t)| g.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))).collect();
        Ok(Probe { value, grads, pattern })
    })
}

/// `sum(r * out)` for a fixed random `r`, turning any op into a scalar loss.
fn project(tape: &mut Tape, out: Var, r: &Tensor) -> Result<Var, CoreError> {
    let rv = tape.constant(r.clone());
    let p = tape.mul(out, rv)?;
    Ok(tape.sum(p))
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Values with magnitude in `[margin, 1]` and random sign, kept off the origin.
fn off_zero(rng: &mut ChaCha8Rng, shape: Shape, margin: f32) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.gen_range(margin..1.0);
        if rng.gen_bool(0.5) { m } else { -m }
    })
}

fn random_flow(rng: &mut ChaCha8Rng, w: usize, h: usize, reach: f32) -> FlowField {
    let mut f = || (0..w * h).map(|_| rng.gen_range(-reach..reach)).collect::<Vec<f32>>();
    let (u, v) = (f(), f());
    FlowField::new(w, h, u, v).expect("finite flow")
}

struct Suite {
    cfg: GradCheckConfig,
    rng: ChaCha8Rng,
    results: Vec<OpCheck>,
}

impl Suite {
    fn run(&mut self, op: &'static str, mut instance: impl FnMut(&mut ChaCha8Rng, Option<Fault>) -> (Vec<Tensor>, Box<Eval<'static>>)) -> Result<(), CoreError> {
        let mut worst = 0.0f64;
        for _ in 0..self.cfg.instances {
            let (inputs, eval) = instance(&mut self.rng, self.cfg.fault);
            let e = compare(&inputs, &*eval, self.cfg.step, self.cfg.max_coords, &mut self.rng)?;
            worst = worst.max(e);
        }
        let passed = worst <= self.cfg.tolerance && worst.is_finite();
        self.results.push(OpCheck { op, instances: self.cfg.instances, max_rel_error: worst, passed });
        Ok(())
    }
}

fn small_sr(rng: &mut ChaCha8Rng) -> SrModel {
    let mut model = build_sr_net(SrConfig::new(3, 4, 1), rng.gen()).expect("valid config");
    // replace the zero-initialised last layer so every parameter sees gradient
    let n = model.params().len();
    for p in model.params_mut().iter_mut().skip(n - 2) {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
    model
}

/// Discriminator with all weights drawn from `±0.5`, so its logits respond
/// strongly enough to the input for differences to rise above f32 rounding.
fn lively_discriminator(rng: &mut ChaCha8Rng) -> crate::models::Discriminator {
    let mut d = build_discriminator(1, 4, rng.gen());
    for p in d.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    d
}

fn tosr_eval(model: SrModel, pair: PairBatch, weights: TosrWeights, fault: Option<Fault>) -> Box<Eval<'static>> {
    Box::new(move |inputs: &[Tensor]| {
        let mut m = model.clone();
        for (p, v) in m.params_mut().iter_mut().zip(inputs) {
            p.value = v.clone();
        }
        let mut tape = Tape::with_fault(fault);
        let terms = tosr::tosr_losses(&mut tape, &m, &pair, WarpBorder::Include)?;
        let total = tosr::tosr_total_var(&mut tape, &terms, weights)?;
        let value = tape.value(total).item() as f64;
        let pattern = tape.activation_pattern();
        let g = tape.backward(total)?;
        m.params_mut().zero_grad();
        m.params_mut().accumulate(&g);
        Ok(Probe { value, grads: m.params().iter().map(|p| p.grad.clone()).collect(), pattern })
    })
}

/// Runs the finite-difference suite over every differentiable op and loss.
pub fn gradient_suite(cfg: GradCheckConfig) -> Result<Vec<OpCheck>, CoreError> {
    let mut s = Suite { cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed), results: Vec::new() };

    s.run("conv2d", |rng, fault| {
        let (n, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let k = if rng.gen_bool(0.7) { 3 } else { 1 };
        let p = ConvParams { stride: rng.gen_range(1..=2), pad: rng.gen_range(0..=k / 2) };
        let (h, w) = (rng.gen_range(4..=7), rng.gen_range(4..=7));
        let x = uniform(rng, Shape::new(n, cin, h, w), -1.0, 1.0);
        let wt = uniform(rng, Shape::new(cout, cin, k, k), -1.0, 1.0);
        let b = uniform(rng, Shape::new(1, cout, 1, 1), -1.0, 1.0);
        let os = crate::conv::output_shape(x.shape(), wt.shape(), b.len(), p).expect("valid conv");
        let r = uniform(rng, os, -1.0, 1.0);
        (vec![x, wt, b], tape_eval(fault, move |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], p)?;
            project(t, y, &r)
        }))
    })?;

    s.run("leaky_relu", |rng, fault| {
        let shape = Shape::new(1, 2, 3, 4);
        let slope = rng.gen_range(0.0..=1.0);
        let x = off_zero(rng, shape, 0.05);
        let r = uniform(rng, shape, -1.0, 1.0);
        (vec![x], tape_eval(fault, move |t, v| {
            let y = t.leaky_relu(v[0], slope)?;
            project(t, y, &r)
        }))
    })?;

    for (name, kind) in [("add", Elementwise::Add), ("sub", Elementwise::Sub), ("mul", Elementwise::Mul)] {
        s.run(name, |rng, fault| {
            let shape = Shape::new(2, 1, 3, 3);
            let (a, b, r) = (uniform(rng, shape, -1.0, 1.0), uniform(rng, shape, -1.0, 1.0), uniform(rng, shape, -1.0, 1.0));
            (vec![a, b], tape_eval(fault, move |t, v| {
                let y = t.elementwise(v[0], v[1], kind)?;
                project(t, y, &r)
            }))
        })?;
    }

    s.run("scale", |rng, fault| {
        let shape = Shape::new(1, 3, 2, 2);
        let k = rng.gen_range(-3.0..3.0);
        let (x, r) = (uniform(rng, shape, -1.0, 1.0), uniform(rng, shape, -1.0, 1.0));
        (vec![x], tape_eval(fault, move |t, v| {
            let y = t.scale(v[0], k);
            project(t, y, &r)
        }))
    })?;

    s.run("bilinear_warp", |rng, fault| {
        let n = rng.gen_range(1..=2);
        let shape = Shape::new(n, rng.gen_range(1..=2), 6, 6);
        let flows: Vec<FlowField> = (0..n).map(|_| random_flow(rng, 6, 6, 2.5)).collect();
        let (x, r) = (uniform(rng, shape, -1.0, 1.0), uniform(rng, shape, -1.0, 1.0));
        (vec![x], tape_eval(fault, move |t, v| {
            let y = t.bilinear_warp(v[0], &flows)?;
            project(t, y, &r)
        }))
    })?;

    s.run("sum", |rng, fault| {
        let x = uniform(rng, Shape::new(2, 1, 3, 2), -1.0, 1.0);
        let k = rng.gen_range(-2.0..2.0);
        (vec![x], tape_eval(fault, move |t, v| {
            let y = t.sum(v[0]);
            Ok(t.scale(y, k))
        }))
    })?;

    s.run("mean", |rng, fault| {
        let x = uniform(rng, Shape::new(1, 2, 3, 3), -1.0, 1.0);
        let k = rng.gen_range(-2.0..2.0);
        (vec![x], tape_eval(fault, move |t, v| {
            let y = t.mean(v[0]);
            Ok(t.scale(y, k))
        }))
    })?;

    s.run("spatial_mean", |rng, fault| {
        let x = uniform(rng, Shape::new(2, 2, 3, 4), -1.0, 1.0);
        let r = uniform(rng, Shape::new(2, 2, 1, 1), -1.0, 1.0);
        (vec![x], tape_eval(fault, move |t, v| {
            let y = t.spatial_mean(v[0]);
            project(t, y, &r)
        }))
    })?;

    s.run("softplus", |rng, fault| {
        let shape = Shape::new(1, 1, 4, 4);
        let (x, r) = (uniform(rng, shape, -4.0, 4.0), uniform(rng, shape, -1.0, 1.0));
        (vec![x], tape_eval(fault, move |t, v| {
            let y = t.softplus(v[0]);
            project(t, y, &r)
        }))
    })?;

    s.run("mse", |rng, fault| {
        let shape = Shape::new(2, 1, 3, 3);
        let (a, b) = (uniform(rng, shape, -1.0, 1.0), uniform(rng, shape, -1.0, 1.0));
        (vec![a, b], tape_eval(fault, |t, v| t.mse(v[0], v[1])))
    })?;

    s.run("wmse", |rng, fault| {
        let (n, c) = (rng.gen_range(1..=2), if rng.gen_bool(0.5) { 1 } else { 3 });
        let shape = Shape::new(n, c, 5, 4);
        let (sr, hr) = (uniform(rng, shape, 0.0, 1.0), uniform(rng, shape, 0.0, 1.0));
        let w = uniform(rng, Shape::new(n, 1, 5, 4), 0.0, 3.0);
        (vec![sr, hr], tape_eval(fault, move |t, v| sosr::wmse(t, v[0], v[1], &w)))
    })?;

    s.run("feature_loss", |rng, fault| {
        let ext = build_feature_extractor(1, rng.gen());
        let shape = Shape::new(1, 1, 6, 6);
        let (sr, hr) = (uniform(rng, shape, 0.0, 1.0), uniform(rng, shape, 0.0, 1.0));
        (vec![sr, hr], tape_eval(fault, move |t, v| sosr::feature_loss(t, v[0], v[1], &ext)))
    })?;

    s.run("generator_adversarial_loss", |rng, fault| {
        let disc = lively_discriminator(rng);
        let sr = uniform(rng, Shape::new(2, 1, 8, 8), 0.0, 1.0);
        (vec![sr], tape_eval(fault, move |t, v| sosr::generator_adversarial_loss(t, &disc, v[0])))
    })?;

    s.run("discriminator_loss", |rng, fault| {
        let disc = lively_discriminator(rng);
        let shape = Shape::new(2, 1, 8, 8);
        let (sr, hr) = (uniform(rng, shape, 0.0, 1.0), uniform(rng, shape, 0.0, 1.0));
        (vec![sr, hr], tape_eval(fault, move |t, v| sosr::discriminator_loss(t, &disc, v[0], v[1])))
    })?;

    s.run("sosr_total", |rng, fault| {
        let disc = lively_discriminator(rng);
        let ext = build_feature_extractor(1, rng.gen());
        let shape = Shape::new(1, 1, 8, 8);
        let (sr, hr) = (uniform(rng, shape, 0.0, 1.0), uniform(rng, shape, 0.0, 1.0));
        let w = uniform(rng, Shape::new(1, 1, 8, 8), 0.0, 3.0);
        let k = SosrWeights::DEFAULT;
        (vec![sr], tape_eval(fault, move |t, v| {
            let h = t.constant(hr.clone());
            let a = sosr::wmse(t, v[0], h, &w)?;
            let b = sosr::feature_loss(t, v[0], h, &ext)?;
            let c = sosr::generator_adversarial_loss(t, &disc, v[0])?;
            let (a, b, c) = (t.scale(a, k.alpha), t.scale(b, k.beta), t.scale(c, k.gamma));
            let ab = t.add(a, b)?;
            t.add(ab, c)
        }))
    })?;

    s.run("tosr_total", |rng, fault| {
        let model = small_sr(rng);
        let shape = Shape::new(1, 1, 6, 6);
        let pair = PairBatch {
            hr_t: uniform(rng, shape, 0.0, 1.0),
            hr_t1: uniform(rng, shape, 0.0, 1.0),
            lr_up_t: uniform(rng, shape, 0.0, 1.0),
            lr_up_t1: uniform(rng, shape, 0.0, 1.0),
            flows: vec![random_flow(rng, 6, 6, 1.5)],
        };
        let inputs = model.params().iter().map(|p| p.value.clone()).collect();
        (inputs, tosr_eval(model, pair, TosrWeights::DEFAULT, fault))
    })?;

    Ok(s.results)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn identity(name: &'static str, got: f64, want: f64, tol: f64) -> IdentityCheck {
    let passed = (got - want).abs() <= tol;
    IdentityCheck { name, passed, detail: format!("got {got}, expected {want} (tolerance {tol})") }
}

/// Closed-form values of the losses, warp and metrics.
pub fn identity_suite() -> Result<Vec<IdentityCheck>, CoreError> {
    let mut out = Vec::new();
    let img = |v: &[f32], h: usize, w: usize| Tensor::from_vec(Shape::new(1, 1, h, w), v.to_vec());

    let sr = img(&[1.0, 0.0, 0.0, 2.0], 2, 2)?;
    let zero = Tensor::zeros(sr.shape());
    let five = Tensor::full(Shape::new(1, 1, 2, 2), 5.0);
    out.push(identity("wmse hand case", sosr::wmse_value(&sr, &zero, &five)? as f64, 6.25, 1e-6));
    out.push(identity("wmse zero flow", sosr::wmse_value(&sr, &zero, &Tensor::zeros(five.shape()))? as f64, 0.0, 0.0));
    let unit = sosr::wmse_value(&sr, &zero, &Tensor::ones(five.shape()))? as f64;
    out.push(identity("wmse unit flow equals mse", unit, 1.25, 1e-6));
    out.push(identity("sosr total", sosr::sosr_total(2.0, 3.0, 100.0, SosrWeights::DEFAULT) as f64, 5.5, 1e-6));
    out.push(identity("tosr total", tosr::tosr_total(1.0, 1.0, 1.0, TosrWeights::DEFAULT) as f64, 1.9, 1e-6));

    let still = img(&[0.1, 0.5, 0.9, 0.3, 0.2, 0.8, 0.4, 0.6, 0.7], 3, 3)?;
    let pair = PairBatch { hr_t: still.clone(), hr_t1: still.clone(), lr_up_t: still.clone(), lr_up_t1: still, flows: vec![FlowField::zeros(3, 3)] };
    let identity_model = build_sr_net(SrConfig::new(2, 2, 1), 0)?;
    let (a, b, c) = tosr::tosr_loss_values(&identity_model, &pair, WarpBorder::Include)?;
    out.push(identity("tosr fixed point", (a.abs() + b.abs() + c.abs()) as f64, 0.0, 1e-7));

    let mut tape = Tape::new();
    let row = tape.constant(img(&[0.0, 2.0, 4.0], 1, 3)?);
    let warped = tape.bilinear_warp(row, &[FlowField::uniform(3, 1, 0.5, 0.0)])?;
    let got = tape.value(warped).data().to_vec();
    let passed = got == [1.0, 3.0, 4.0];
    out.push(IdentityCheck { name: "half-pixel warp", passed, detail: format!("got {got:?}, expected [1.0, 3.0, 4.0]") });

    let p = metrics::psnr(&Tensor::zeros(Shape::new(1, 1, 2, 2)), &Tensor::ones(Shape::new(1, 1, 2, 2)), 255.0)?;
    out.push(identity("psnr at mse 1, peak 255", p, 48.1308, 1e-3));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities_hold() {
        for c in identity_suite().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn compare_catches_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = vec![Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, -0.2, 0.9]).unwrap()];
        // f = sum x^2, reported gradient 2.1 x instead of 2 x
        let eval = |t: &[Tensor]| {
            let value = t[0].data().iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>();
            Ok(Probe { value, grads: vec![t[0].map(|a| 2.1 * a)], pattern: 0 })
        };
        let e = compare(&x, &eval, 1e-2, 8, &mut rng).unwrap();
        assert!(e > 0.04 && e < 0.06, "{e}");
    }
}
