//! Known-probe object reconstruction by nonlinear conjugate gradients (Dai–Yuan) on the
//! amplitude least-squares objective
//!
//! ```text
//! f(O) = ½ Σ_j Σ_q ( |ψ_j(q)| − √D_j(q) )²,   ψ_j = F{P · O_j} / √(rows·cols)
//! ```
//!
//! where `O_j` is the object window of frame `j`. With `A_j = F∘P∘extract_j / √(rows·cols)`
//! the Wirtinger gradient with respect to `conj(O)` is
//!
//! ```text
//! ∇f = ½ Σ_j A_jᴴ ( ψ_j − √D_j · ψ_j / |ψ_j| ),
//! ```
//!
//! so that a perturbation `δ` changes the objective by `2·Re⟨∇f, δ⟩`.

use ndarray::{s, Array2};
use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fft::{ifftshift, Fft2};
use crate::forward::DiffractionDataset;
use crate::scalar::Real;
use crate::wavefield::ComplexField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig<T: Real> {
    /// Backtracking factor in (0, 1).
    pub shrink: T,
    /// Armijo sufficient-decrease constant.
    pub armijo: T,
    pub max_halvings: usize,
    /// Trial step of the first iteration; later iterations start from the previous step.
    pub initial_step: T,
    /// After an accepted step, also try the minimizer of the quadratic through
    /// `f(0)`, `f'(0)` and `f(α)`, keeping it when lower.
    pub interpolate: bool,
}

impl<T: Real> Default for LineSearchConfig<T> {
    fn default() -> Self {
        Self {
            shrink: T::lit(0.5),
            armijo: T::lit(1e-4),
            max_halvings: 30,
            initial_step: T::one(),
            interpolate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T: Real> {
    pub max_iterations: usize,
    /// Snapshot period in iterations; 0 disables snapshots.
    pub checkpoint_every: usize,
    pub line_search: LineSearchConfig<T>,
    pub restart_threshold: T,
    /// `ψ/|ψ|` is taken as 0 below this modulus.
    pub epsilon_mag: T,
    /// Stop once `‖∇f‖` falls below this fraction of `½·max|P|·√ΣD`.
    pub gradient_tolerance: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            checkpoint_every: 10,
            line_search: LineSearchConfig::default(),
            restart_threshold: T::lit(1e-12),
            epsilon_mag: T::lit(1e-32),
            gradient_tolerance: T::lit(1e-10),
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        let ls = &self.line_search;
        if !(ls.shrink > T::zero() && ls.shrink < T::one()) {
            return Err(invalid("line search shrink factor must lie in (0, 1)"));
        }
        if !(ls.armijo > T::zero() && ls.armijo < T::one()) {
            return Err(invalid("Armijo constant must lie in (0, 1)"));
        }
        if !(ls.initial_step > T::zero()) {
            return Err(invalid("initial step must be positive"));
        }
        if !(self.epsilon_mag > T::zero()) {
            return Err(invalid("epsilon_mag must be positive"));
        }
        if !(self.restart_threshold >= T::zero() && self.gradient_tolerance >= T::zero()) {
            return Err(invalid("thresholds must be non-negative"));
        }
        Ok(())
    }
}

/// Objective and gradient evaluator for one dataset and a fixed probe.
pub struct Problem<'a, T: Real> {
    probe: &'a Array2<Complex<T>>,
    /// `√D_j` in unshifted FFT order.
    amplitudes: Vec<Array2<T>>,
    positions: &'a [(usize, usize)],
    frame: usize,
    object_shape: (usize, usize),
    fft: Fft2<T>,
    scale: T,
    epsilon_mag: T,
}

impl<'a, T: Real> Problem<'a, T> {
    pub fn new(
        dataset: &'a DiffractionDataset<T>,
        probe: &'a ComplexField<T>,
        object_shape: (usize, usize),
        epsilon_mag: T,
    ) -> Result<Self> {
        dataset.validate()?;
        let frame = dataset.trajectory.frame_size();
        if probe.shape() != (frame, frame) {
            return Err(Error::ShapeMismatch {
                expected: (frame, frame),
                found: probe.shape(),
            });
        }
        dataset.trajectory.check_bounds(object_shape)?;
        let mut amplitudes = Vec::with_capacity(dataset.frames.len());
        for (j, f) in dataset.frames.iter().enumerate() {
            if let Some(v) = f.data().iter().find(|v| !(**v >= T::zero())) {
                return Err(invalid(format!("frame {j} holds negative intensity {v}")));
            }
            let unshifted = if f.centered() { ifftshift(f.data()) } else { f.data().clone() };
            amplitudes.push(unshifted.mapv(|v| v.sqrt()));
        }
        Ok(Self {
            probe: probe.data(),
            amplitudes,
            positions: dataset.trajectory.positions(),
            frame,
            object_shape,
            fft: Fft2::new(frame, frame),
            scale: T::one() / T::from_usize_lossy(frame * frame).sqrt(),
            epsilon_mag,
        })
    }

    pub fn object_shape(&self) -> (usize, usize) {
        self.object_shape
    }

    fn check(&self, object: &ComplexField<T>) {
        assert_eq!(object.shape(), self.object_shape, "object shape differs from the problem");
    }

    /// `ψ_j` for one frame (unshifted order).
    fn exit_spectrum(&self, object: &Array2<Complex<T>>, j: usize) -> Array2<Complex<T>> {
        let (r, c) = self.positions[j];
        let f = self.frame;
        let mut psi = self.probe.clone();
        psi.zip_mut_with(&object.slice(s![r..r + f, c..c + f]), |p, &o| *p = *p * o);
        self.fft.forward(&mut psi);
        let scale = self.scale;
        psi.mapv_inplace(|z| z * scale);
        psi
    }

    fn frame_objective(&self, object: &Array2<Complex<T>>, j: usize) -> T {
        let psi = self.exit_spectrum(object, j);
        let half = T::lit(0.5);
        psi.iter()
            .zip(self.amplitudes[j].iter())
            .map(|(z, &a)| {
                let d = z.norm() - a;
                d * d
            })
            .sum::<T>()
            * half
    }

    pub fn objective(&self, object: &ComplexField<T>) -> T {
        self.check(object);
        let o = object.data();
        let terms: Vec<T> = (0..self.positions.len())
            .into_par_iter()
            .map(|j| self.frame_objective(o, j))
            .collect();
        terms.into_iter().fold(T::zero(), |acc, t| acc + t)
    }

    pub fn objective_and_gradient(&self, object: &ComplexField<T>) -> (T, ComplexField<T>) {
        self.check(object);
        let o = object.data();
        let half = T::lit(0.5);
        let eps = self.epsilon_mag;
        let terms: Vec<(T, Array2<Complex<T>>)> = (0..self.positions.len())
            .into_par_iter()
            .map(|j| {
                let mut psi = self.exit_spectrum(o, j);
                let mut value = T::zero();
                for (z, &a) in psi.iter_mut().zip(self.amplitudes[j].iter()) {
                    let m = z.norm();
                    let d = m - a;
                    value = value + d * d;
                    *z = if m > eps { *z - *z * (a / m) } else { *z };
                }
                self.fft.inverse_unnormalized(&mut psi);
                let k = half * self.scale;
                psi.zip_mut_with(self.probe, |r, &p| *r = p.conj() * *r * k);
                (value * half, psi)
            })
            .collect();

        let mut grad = Array2::from_elem(self.object_shape, Complex::new(T::zero(), T::zero()));
        let mut total = T::zero();
        let f = self.frame;
        for (j, (value, patch)) in terms.into_iter().enumerate() {
            total = total + value;
            let (r, c) = self.positions[j];
            grad.slice_mut(s![r..r + f, c..c + f])
                .zip_mut_with(&patch, |g, &p| *g = *g + p);
        }
        (total, object.with_data(grad))
    }

    /// `½·max|P|·√ΣD`, the scale against which gradient norms are judged.
    pub fn gradient_scale(&self) -> T {
        let pmax = self.probe.iter().map(|z| z.norm()).fold(T::zero(), T::max);
        let data: T = self
            .amplitudes
            .iter()
            .map(|a| a.iter().map(|&v| v * v).sum::<T>())
            .fold(T::zero(), |acc, v| acc + v);
        T::lit(0.5) * pmax * data.sqrt()
    }
}

pub fn objective<T: Real>(
    object: &ComplexField<T>,
    probe: &ComplexField<T>,
    dataset: &DiffractionDataset<T>,
) -> Result<T> {
    let p = Problem::new(dataset, probe, object.shape(), T::lit(1e-32))?;
    Ok(p.objective(object))
}

pub fn gradient<T: Real>(
    object: &ComplexField<T>,
    probe: &ComplexField<T>,
    dataset: &DiffractionDataset<T>,
) -> Result<ComplexField<T>> {
    let p = Problem::new(dataset, probe, object.shape(), T::lit(1e-32))?;
    Ok(p.objective_and_gradient(object).1)
}

/// `Re⟨a, b⟩ = Re Σ conj(a)·b`.
pub fn inner_re<T: Real>(a: &ComplexField<T>, b: &ComplexField<T>) -> T {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .fold(T::zero(), |acc, v| acc + v)
}

pub fn norm_sqr<T: Real>(a: &ComplexField<T>) -> T {
    a.flux()
}

fn axpy<T: Real>(x: &ComplexField<T>, alpha: T, d: &ComplexField<T>) -> ComplexField<T> {
    let mut out = x.data().clone();
    out.zip_mut_with(d.data(), |o, &v| *o = *o + v * alpha);
    x.with_data(out)
}

/// Dai–Yuan search direction `−g_new + β·d_old`, `β = ‖g_new‖² / Re⟨d_old, g_new − g_old⟩`.
///
/// Falls back to steepest descent (second tuple element `true`) when the denominator is
/// below `restart_threshold·‖g_new‖²` in magnitude.
pub fn dai_yuan_direction<T: Real>(
    g_new: &ComplexField<T>,
    g_old: &ComplexField<T>,
    d_old: &ComplexField<T>,
    restart_threshold: T,
) -> (ComplexField<T>, bool) {
    let gg = norm_sqr(g_new);
    let denom = inner_re(d_old, g_new) - inner_re(d_old, g_old);
    let steepest = g_new.with_data(g_new.data().mapv(|z| -z));
    if !(denom.abs() >= restart_threshold * gg) || denom == T::zero() {
        return (steepest, true);
    }
    let beta = gg / denom;
    (axpy(&steepest, beta, d_old), false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome<T: Real> {
    pub step: T,
    pub value: T,
    pub point: ComplexField<T>,
    pub evaluations: usize,
}

/// Every backtracking step failed the sufficient-decrease test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineSearchStalled;

/// Backtracking Armijo search along `direction` from `x`, where `f(x) = value` and
/// `slope = d/dα f(x + α·direction)` at α = 0 (`2·Re⟨∇f, d⟩` for Wirtinger gradients).
pub fn line_search<T: Real>(
    f: impl Fn(&ComplexField<T>) -> T,
    x: &ComplexField<T>,
    value: T,
    slope: T,
    direction: &ComplexField<T>,
    initial_step: T,
    config: &LineSearchConfig<T>,
) -> std::result::Result<LineSearchOutcome<T>, LineSearchStalled> {
    if !(slope < T::zero()) {
        return Err(LineSearchStalled);
    }
    let mut alpha = initial_step;
    let mut evaluations = 0;
    for _ in 0..=config.max_halvings {
        let trial = axpy(x, alpha, direction);
        let ft = f(&trial);
        evaluations += 1;
        if ft.is_finite() && ft < value && ft <= value + config.armijo * alpha * slope {
            let mut best = LineSearchOutcome {
                step: alpha,
                value: ft,
                point: trial,
                evaluations,
            };
            if config.interpolate {
                let curvature = ft - value - slope * alpha;
                if curvature > T::zero() {
                    let aq = -slope * alpha * alpha / (T::lit(2.0) * curvature);
                    let ratio = aq / alpha;
                    if aq.is_finite() && (ratio < T::lit(0.9) || ratio > T::lit(1.1)) {
                        let trial = axpy(x, aq, direction);
                        let fq = f(&trial);
                        best.evaluations += 1;
                        if fq.is_finite() && fq < best.value {
                            best.step = aq;
                            best.value = fq;
                            best.point = trial;
                        }
                    }
                }
            }
            return Ok(best);
        }
        alpha = alpha * config.shrink;
    }
    Err(LineSearchStalled)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionState<T: Real> {
    pub object_estimate: ComplexField<T>,
    /// Completed iterations.
    pub iteration: usize,
    /// Objective at the start and after every completed iteration.
    pub objective_history: Vec<T>,
    pub checkpoints: Vec<(usize, ComplexField<T>)>,
    pub gradient_norm: T,
    /// Gradient fell below tolerance.
    pub converged: bool,
    /// The line search failed even along steepest descent.
    pub stalled: bool,
    pub objective_evaluations: usize,
}

/// Minimizes the amplitude objective starting from `initial`.
pub fn reconstruct<T: Real>(
    dataset: &DiffractionDataset<T>,
    probe: &ComplexField<T>,
    config: &SolverConfig<T>,
    initial: ComplexField<T>,
) -> Result<ReconstructionState<T>> {
    config.validate()?;
    let problem = Problem::new(dataset, probe, initial.shape(), config.epsilon_mag)?;
    let tolerance = config.gradient_tolerance * problem.gradient_scale();

    let mut x = initial;
    let (mut value, mut g) = problem.objective_and_gradient(&x);
    let mut state = ReconstructionState {
        object_estimate: x.clone(),
        iteration: 0,
        objective_history: vec![value],
        checkpoints: Vec::new(),
        gradient_norm: norm_sqr(&g).sqrt(),
        converged: false,
        stalled: false,
        objective_evaluations: 1,
    };
    if config.checkpoint_every > 0 {
        state.checkpoints.push((0, x.clone()));
    }

    let mut d: Option<ComplexField<T>> = None;
    let mut g_old: Option<ComplexField<T>> = None;
    let mut step = config.line_search.initial_step;

    for it in 1..=config.max_iterations {
        if state.gradient_norm <= tolerance || value == T::zero() {
            state.converged = true;
            break;
        }
        let (mut dir, mut restarted) = match (&d, &g_old) {
            (Some(d_old), Some(g_prev)) => dai_yuan_direction(&g, g_prev, d_old, config.restart_threshold),
            _ => (g.with_data(g.data().mapv(|z| -z)), true),
        };
        let mut slope = T::lit(2.0) * inner_re(&g, &dir);
        if !(slope < T::zero()) {
            dir = g.with_data(g.data().mapv(|z| -z));
            slope = T::lit(-2.0) * norm_sqr(&g);
            restarted = true;
        }

        let objective = |o: &ComplexField<T>| problem.objective(o);
        let outcome = match line_search(objective, &x, value, slope, &dir, step, &config.line_search) {
            Ok(o) => o,
            Err(LineSearchStalled) if !restarted => {
                dir = g.with_data(g.data().mapv(|z| -z));
                slope = T::lit(-2.0) * norm_sqr(&g);
                match line_search(objective, &x, value, slope, &dir, step, &config.line_search) {
                    Ok(o) => o,
                    Err(_) => {
                        state.stalled = true;
                        break;
                    }
                }
            }
            Err(_) => {
                state.stalled = true;
                break;
            }
        };
        state.objective_evaluations += outcome.evaluations;
        step = outcome.step;
        x = outcome.point;
        let (new_value, g_new) = problem.objective_and_gradient(&x);
        state.objective_evaluations += 1;
        // The line search already evaluated this point with the same arithmetic.
        debug_assert!(new_value == outcome.value);
        value = outcome.value;
        g_old = Some(std::mem::replace(&mut g, g_new));
        d = Some(dir);

        state.iteration = it;
        state.objective_history.push(value);
        state.gradient_norm = norm_sqr(&g).sqrt();
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 {
            state.checkpoints.push((it, x.clone()));
        }
    }
    if config.checkpoint_every > 0
        && state.checkpoints.last().map(|c| c.0) != Some(state.iteration)
    {
        state.checkpoints.push((state.iteration, x.clone()));
    }
    state.object_estimate = x;
    Ok(state)
}
