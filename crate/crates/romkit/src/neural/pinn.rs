//! Physics-informed training: the loss is a weighted sum of mean squared
//! residuals of an interior operator, a boundary operator, and (for unsteady
//! problems) an initial-condition operator, each evaluated at freshly
//! resampled Monte Carlo collocation points every epoch.
//!
//! Residual evaluators see the network only through a [`NetProbe`], which
//! supplies values and central-finite-difference derivatives of the network
//! output. The probe records every underlying network evaluation on a tape,
//! so the trainer can recover `d(residual)/d(parameters)` for a black-box
//! evaluator: it measures the residual's sensitivity to each taped value by
//! replaying the evaluator with that value nudged, then backpropagates each
//! sensitivity through the corresponding network evaluation. The sensitivity
//! step is exact for residuals that combine probed values linearly and
//! second-order accurate otherwise. Evaluators must therefore be
//! deterministic: the same probe values must produce the same sequence of
//! probe calls.

use super::train::{TrainConfig, Trainer};
use super::{mlp_backward, Activation, ForwardCache, Gradients, Mlp, OutputMap};
use crate::error::{Result, RomError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;

pub type ResidualFn = Box<dyn Fn(&NetProbe, &[f64], f64, &[f64]) -> f64>;
pub type SpaceSampler = Box<dyn Fn(&mut ChaCha8Rng, &[f64]) -> Vec<f64>>;
pub type MuSampler = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<f64>>;
pub type DomainPredicate = Box<dyn Fn(&[f64], &[f64]) -> bool>;

struct TapeEntry {
    comp: usize,
    value: f64,
    cache: ForwardCache,
}

enum ProbeState {
    Passive,
    Record(Vec<TapeEntry>),
    Replay { values: Vec<f64>, bump: usize, delta: f64, cursor: usize },
}

/// Network view handed to residual evaluators. Inputs are assembled as
/// `[x, t, mu]` (the time slot is dropped for steady problems); derivatives
/// use central differences with the step passed at construction.
pub struct NetProbe<'a> {
    net: &'a Mlp,
    h: f64,
    steady: bool,
    x_dim: usize,
    mu_dim: usize,
    state: RefCell<ProbeState>,
}

impl<'a> NetProbe<'a> {
    pub fn new(net: &'a Mlp, h_fd: f64, steady: bool, x_dim: usize, mu_dim: usize) -> NetProbe<'a> {
        let want = x_dim + usize::from(!steady) + mu_dim;
        assert_eq!(
            net.input_dim(),
            want,
            "probe: network input width {} does not match x_dim + time + mu_dim = {}",
            net.input_dim(),
            want
        );
        assert!(h_fd > 0.0, "probe: finite-difference step must be positive");
        NetProbe { net, h: h_fd, steady, x_dim, mu_dim, state: RefCell::new(ProbeState::Passive) }
    }

    pub fn h_step(&self) -> f64 {
        self.h
    }

    fn input_vec(&self, mu: &[f64], t: f64, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.x_dim, "probe: spatial point has the wrong dimension");
        assert_eq!(mu.len(), self.mu_dim, "probe: parameter vector has the wrong dimension");
        let mut input = Vec::with_capacity(self.net.input_dim());
        input.extend_from_slice(x);
        if !self.steady {
            input.push(t);
        }
        input.extend_from_slice(mu);
        input
    }

    /// One raw network evaluation — the unit the tape records and replays.
    fn eval_comp(&self, input: Vec<f64>, comp: usize) -> f64 {
        let mut state = self.state.borrow_mut();
        match &mut *state {
            ProbeState::Passive => self.net.forward(&input)[comp],
            ProbeState::Record(tape) => {
                let cache = self.net.forward_cached(&input);
                let value = cache.post.last().unwrap()[comp];
                tape.push(TapeEntry { comp, value, cache });
                value
            }
            ProbeState::Replay { values, bump, delta, cursor } => {
                assert!(
                    *cursor < values.len(),
                    "probe replay overran the tape; residual evaluators must make the same \
                     probe calls on every invocation"
                );
                let v = values[*cursor] + if *cursor == *bump { *delta } else { 0.0 };
                *cursor += 1;
                v
            }
        }
    }

    pub fn value(&self, mu: &[f64], t: f64, x: &[f64], comp: usize) -> f64 {
        self.eval_comp(self.input_vec(mu, t, x), comp)
    }

    /// Central difference in time; only meaningful for unsteady problems.
    pub fn time_derivative(&self, mu: &[f64], t: f64, x: &[f64], comp: usize) -> f64 {
        assert!(!self.steady, "probe: time derivative requested on a steady problem");
        let hi = self.eval_comp(self.input_vec(mu, t + self.h, x), comp);
        let lo = self.eval_comp(self.input_vec(mu, t - self.h, x), comp);
        (hi - lo) / (2.0 * self.h)
    }

    pub fn space_derivative(&self, mu: &[f64], t: f64, x: &[f64], dim: usize, comp: usize) -> f64 {
        assert!(dim < self.x_dim, "probe: derivative direction out of range");
        let mut xp = x.to_vec();
        xp[dim] += self.h;
        let mut xm = x.to_vec();
        xm[dim] -= self.h;
        let hi = self.eval_comp(self.input_vec(mu, t, &xp), comp);
        let lo = self.eval_comp(self.input_vec(mu, t, &xm), comp);
        (hi - lo) / (2.0 * self.h)
    }

    pub fn second_space_derivative(
        &self,
        mu: &[f64],
        t: f64,
        x: &[f64],
        dim: usize,
        comp: usize,
    ) -> f64 {
        assert!(dim < self.x_dim, "probe: derivative direction out of range");
        let mut xp = x.to_vec();
        xp[dim] += self.h;
        let mut xm = x.to_vec();
        xm[dim] -= self.h;
        let hi = self.eval_comp(self.input_vec(mu, t, &xp), comp);
        let mid = self.eval_comp(self.input_vec(mu, t, x), comp);
        let lo = self.eval_comp(self.input_vec(mu, t, &xm), comp);
        (hi - 2.0 * mid + lo) / (self.h * self.h)
    }

    pub fn laplacian(&self, mu: &[f64], t: f64, x: &[f64], comp: usize) -> f64 {
        (0..self.x_dim)
            .map(|d| self.second_space_derivative(mu, t, x, d, comp))
            .sum()
    }

    fn begin_record(&self) {
        *self.state.borrow_mut() = ProbeState::Record(Vec::new());
    }

    fn take_tape(&self) -> Vec<TapeEntry> {
        match std::mem::replace(&mut *self.state.borrow_mut(), ProbeState::Passive) {
            ProbeState::Record(tape) => tape,
            _ => panic!("probe: take_tape without begin_record"),
        }
    }

    fn begin_replay(&self, values: Vec<f64>, bump: usize, delta: f64) {
        *self.state.borrow_mut() = ProbeState::Replay { values, bump, delta, cursor: 0 };
    }

    /// Ends a replay and reports whether the evaluator consumed the whole
    /// tape (anything else means it is not deterministic).
    fn end_replay(&self) -> bool {
        match std::mem::replace(&mut *self.state.borrow_mut(), ProbeState::Passive) {
            ProbeState::Replay { values, cursor, .. } => cursor == values.len(),
            _ => panic!("probe: end_replay without begin_replay"),
        }
    }
}

/// Residual loss at one collocation point, plus its parameter gradient scaled
/// by `scale * r` (callers pass `scale = 2 w / N` so the accumulated gradient
/// is that of `w * mean(r^2)`). Returns the residual value.
fn residual_point_gradient(
    net: &Mlp,
    probe: &NetProbe,
    residual: &ResidualFn,
    mu: &[f64],
    t: f64,
    x: &[f64],
    scale: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    probe.begin_record();
    let r = residual(probe, mu, t, x);
    let tape = probe.take_tape();
    if !r.is_finite() {
        return Err(RomError::NonFinite("pinn: residual evaluated to NaN or infinity".into()));
    }
    let values: Vec<f64> = tape.iter().map(|e| e.value).collect();
    for (j, entry) in tape.iter().enumerate() {
        let delta = 1e-6 * (1.0 + entry.value.abs());
        probe.begin_replay(values.clone(), j, delta);
        let rp = residual(probe, mu, t, x);
        if !probe.end_replay() {
            return Err(RomError::Invalid(
                "pinn: residual evaluator changed its probe-call sequence between \
                 invocations; evaluators must be deterministic"
                    .into(),
            ));
        }
        probe.begin_replay(values.clone(), j, -delta);
        let rm = residual(probe, mu, t, x);
        probe.end_replay();
        let s = (rp - rm) / (2.0 * delta);
        if s == 0.0 {
            continue;
        }
        let mut grad_out = vec![0.0; net.output_dim()];
        grad_out[entry.comp] = scale * r * s;
        grads.axpy(1.0, &mlp_backward(net, &entry.cache, &grad_out));
    }
    Ok(r)
}

/// Problem description: residual evaluators, point samplers, loss weights.
/// `domain_diameter` sets the probe's finite-difference step to
/// `1e-4 * diameter`.
pub struct PinnProblem {
    pub x_dim: usize,
    pub mu_dim: usize,
    pub steady: bool,
    /// Final time for unsteady problems; interior and boundary times are
    /// drawn uniformly from `(0, t_final]`, initial points sit at `t = 0`.
    pub t_final: f64,
    pub domain_diameter: f64,
    pub interior_residual: ResidualFn,
    pub boundary_residual: Option<ResidualFn>,
    pub initial_residual: Option<ResidualFn>,
    pub sample_interior: SpaceSampler,
    pub sample_boundary: Option<SpaceSampler>,
    pub sample_mu: MuSampler,
    pub interior_predicate: Option<DomainPredicate>,
    pub boundary_predicate: Option<DomainPredicate>,
    /// `(w_interior, w_boundary, w_initial)`, all nonnegative, not all zero.
    pub weights: (f64, f64, f64),
}

impl PinnProblem {
    /// Steady scalar problem skeleton; optional pieces start unset and the
    /// loss weights at `(1, 1, 1)`.
    pub fn steady(
        x_dim: usize,
        mu_dim: usize,
        domain_diameter: f64,
        interior_residual: ResidualFn,
        sample_interior: SpaceSampler,
        sample_mu: MuSampler,
    ) -> PinnProblem {
        PinnProblem {
            x_dim,
            mu_dim,
            steady: true,
            t_final: 0.0,
            domain_diameter,
            interior_residual,
            boundary_residual: None,
            initial_residual: None,
            sample_interior,
            sample_boundary: None,
            sample_mu,
            interior_predicate: None,
            boundary_predicate: None,
            weights: (1.0, 1.0, 1.0),
        }
    }

    pub fn unsteady(
        x_dim: usize,
        mu_dim: usize,
        domain_diameter: f64,
        t_final: f64,
        interior_residual: ResidualFn,
        sample_interior: SpaceSampler,
        sample_mu: MuSampler,
    ) -> PinnProblem {
        let mut p = Self::steady(x_dim, mu_dim, domain_diameter, interior_residual, sample_interior, sample_mu);
        p.steady = false;
        p.t_final = t_final;
        p
    }

    fn validate(&self) -> Result<()> {
        let (wl, wb, wt) = self.weights;
        if !(wl >= 0.0 && wb >= 0.0 && wt >= 0.0) {
            return Err(RomError::Invalid("pinn: loss weights must be nonnegative".into()));
        }
        let wt_eff = if self.steady { 0.0 } else { wt };
        if wl == 0.0 && (wb == 0.0 || self.boundary_residual.is_none()) && wt_eff == 0.0 {
            return Err(RomError::Invalid("pinn: every loss term is switched off".into()));
        }
        if wb > 0.0 && self.boundary_residual.is_some() && self.sample_boundary.is_none() {
            return Err(RomError::Invalid(
                "pinn: boundary residual set but no boundary sampler".into(),
            ));
        }
        if !(self.domain_diameter.is_finite() && self.domain_diameter > 0.0) {
            return Err(RomError::Invalid(format!(
                "pinn: domain diameter must be positive, got {}",
                self.domain_diameter
            )));
        }
        if !self.steady && !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(RomError::Invalid(format!(
                "pinn: unsteady problems need a positive final time, got {}",
                self.t_final
            )));
        }
        if self.x_dim == 0 {
            return Err(RomError::Invalid("pinn: spatial dimension must be at least 1".into()));
        }
        Ok(())
    }
}

/// Collocation points drawn per epoch for each active loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollocationCounts {
    pub interior: usize,
    pub boundary: usize,
    pub initial: usize,
}

/// Loss decomposition recorded once per epoch, at the pre-update parameters
/// on that epoch's collocation sample. `total` is exactly
/// `w_interior * interior + w_boundary * boundary + w_initial * initial`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinnLoss {
    pub interior: f64,
    pub boundary: f64,
    pub initial: f64,
    pub total: f64,
}

type SampledPoint = (Vec<f64>, f64, Vec<f64>); // (mu, t, x)

fn sample_term(
    rng: &mut ChaCha8Rng,
    problem: &PinnProblem,
    sampler: &SpaceSampler,
    predicate: Option<&DomainPredicate>,
    count: usize,
    time_mode: TimeMode,
    label: &str,
) -> Result<Vec<SampledPoint>> {
    let mut pts = Vec::with_capacity(count);
    for _ in 0..count {
        let mu = (problem.sample_mu)(rng);
        if mu.len() != problem.mu_dim {
            return Err(RomError::Shape(format!(
                "pinn: parameter sampler produced dimension {} instead of {}",
                mu.len(),
                problem.mu_dim
            )));
        }
        let x = sampler(rng, &mu);
        if x.len() != problem.x_dim {
            return Err(RomError::Shape(format!(
                "pinn: {label} sampler produced dimension {} instead of {}",
                x.len(),
                problem.x_dim
            )));
        }
        if let Some(pred) = predicate {
            if !pred(&x, &mu) {
                return Err(RomError::Invalid(format!(
                    "pinn: {label} sampler produced a point outside its domain: {x:?}"
                )));
            }
        }
        let t = match time_mode {
            TimeMode::SteadyZero => 0.0,
            TimeMode::OpenInterval => problem.t_final * (1.0 - rng.gen::<f64>()),
            TimeMode::InitialZero => 0.0,
        };
        pts.push((mu, t, x));
    }
    Ok(pts)
}

#[derive(Clone, Copy)]
enum TimeMode {
    SteadyZero,
    OpenInterval,
    InitialZero,
}

/// Train a network against the physics residuals. The network input width is
/// `x_dim + 1 (time, unsteady only) + mu_dim`; hidden sizes and the output
/// width are given by the caller. Collocation points are redrawn from the
/// seeded stream every epoch; the returned history holds one loss
/// decomposition per epoch. Training is single-threaded; `config.batch_size`
/// is ignored (every epoch is one full-collocation step).
pub fn pinn_fit(
    problem: &PinnProblem,
    hidden: &[usize],
    output_dim: usize,
    activation: Activation,
    config: &TrainConfig,
    counts: CollocationCounts,
) -> Result<(Mlp, Vec<PinnLoss>)> {
    problem.validate()?;
    config.validate()?;
    let (wl, wb, wt) = problem.weights;
    let interior_active = wl > 0.0;
    let boundary_active = wb > 0.0 && problem.boundary_residual.is_some();
    let initial_active = !problem.steady && wt > 0.0 && problem.initial_residual.is_some();
    if interior_active && counts.interior == 0 {
        return Err(RomError::Invalid("pinn: interior term active but zero points".into()));
    }
    if boundary_active && counts.boundary == 0 {
        return Err(RomError::Invalid("pinn: boundary term active but zero points".into()));
    }
    if initial_active && counts.initial == 0 {
        return Err(RomError::Invalid("pinn: initial term active but zero points".into()));
    }

    let input_dim = problem.x_dim + usize::from(!problem.steady) + problem.mu_dim;
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input_dim);
    sizes.extend_from_slice(hidden);
    sizes.push(output_dim);
    let mut net = Mlp::new(&sizes, activation, OutputMap::Identity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    net.init_glorot(&mut rng);

    let h_fd = 1e-4 * problem.domain_diameter;
    let interior_time = if problem.steady { TimeMode::SteadyZero } else { TimeMode::OpenInterval };
    let mut trainer = Trainer::new(config);
    let mut history = Vec::with_capacity(config.epochs);

    let mut lr = config.learning_rate;
    for epoch in 0..config.epochs {
        let interior_pts = if interior_active {
            sample_term(
                &mut rng,
                problem,
                &problem.sample_interior,
                problem.interior_predicate.as_ref(),
                counts.interior,
                interior_time,
                "interior",
            )?
        } else {
            Vec::new()
        };
        let boundary_pts = if boundary_active {
            sample_term(
                &mut rng,
                problem,
                problem.sample_boundary.as_ref().unwrap(),
                problem.boundary_predicate.as_ref(),
                counts.boundary,
                interior_time,
                "boundary",
            )?
        } else {
            Vec::new()
        };
        let initial_pts = if initial_active {
            sample_term(
                &mut rng,
                problem,
                &problem.sample_interior,
                problem.interior_predicate.as_ref(),
                counts.initial,
                TimeMode::InitialZero,
                "initial",
            )?
        } else {
            Vec::new()
        };

        let mut grads = Gradients::zeros_like(&net);
        let (mut term_l, mut term_b, mut term_t) = (0.0, 0.0, 0.0);
        {
            let probe = NetProbe::new(&net, h_fd, problem.steady, problem.x_dim, problem.mu_dim);
            let mut run_term = |pts: &[SampledPoint],
                                residual: &ResidualFn,
                                w: f64,
                                term: &mut f64|
             -> Result<()> {
                let n = pts.len() as f64;
                let scale = 2.0 * w / n;
                for (mu, t, x) in pts {
                    let r =
                        residual_point_gradient(&net, &probe, residual, mu, *t, x, scale, &mut grads)?;
                    *term += r * r / n;
                }
                Ok(())
            };
            if interior_active {
                run_term(&interior_pts, &problem.interior_residual, wl, &mut term_l)?;
            }
            if boundary_active {
                run_term(
                    &boundary_pts,
                    problem.boundary_residual.as_ref().unwrap(),
                    wb,
                    &mut term_b,
                )?;
            }
            if initial_active {
                run_term(
                    &initial_pts,
                    problem.initial_residual.as_ref().unwrap(),
                    wt,
                    &mut term_t,
                )?;
            }
        }
        let total = wl * term_l + wb * term_b + wt * term_t;
        if !total.is_finite() || !grads.is_finite() {
            return Err(RomError::Convergence(format!(
                "pinn_fit: loss diverged at epoch {epoch}"
            )));
        }
        history.push(PinnLoss { interior: term_l, boundary: term_b, initial: term_t, total });
        trainer.step(&mut net, &grads, lr);
        lr *= config.lr_decay;
        if !net.is_finite() {
            return Err(RomError::Convergence(format!(
                "pinn_fit: parameters diverged at epoch {epoch}"
            )));
        }
    }
    Ok((net, history))
}
