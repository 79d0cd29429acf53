//! Generalized-α time stepping with a segregated predictor/multi-corrector
//! Newton iteration.
//!
//! Each corrector solves the 2×2 velocity/pressure block system for the rate
//! increments `(Δv̇, Δṗ)` and recovers the displacement-rate increment from the
//! kinematic relation `u̇ = v` as `Δu̇ = (α_f γ Δt / α_m) Δv̇ - R̄_k / α_m`.

use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::assembly::{Problem, StageState, TangentCoefficients, Tangent};
use crate::error::{Error, Result};
use crate::krylov::{norm2, BlockSystem};
use crate::precond::{solve_block_system, BlockSolverConfig, LinearSolveStats, LinearSolverKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenAlphaParams {
    pub rho_inf: f64,
    pub alpha_m: f64,
    pub alpha_f: f64,
    pub gamma: f64,
}

/// `α_m = (3 - ρ∞) / (2 (1 + ρ∞))`, `α_f = γ = 1 / (1 + ρ∞)`.
pub fn gen_alpha_params(rho_inf: f64) -> Result<GenAlphaParams> {
    if !(0.0..=1.0).contains(&rho_inf) {
        return Err(Error::InvalidInput(format!("spectral radius {rho_inf} outside [0, 1]")));
    }
    let alpha_f = 1.0 / (1.0 + rho_inf);
    Ok(GenAlphaParams { rho_inf, alpha_m: 0.5 * (3.0 - rho_inf) / (1.0 + rho_inf), alpha_f, gamma: alpha_f })
}

impl GenAlphaParams {
    pub fn coefficients(&self, dt: f64) -> TangentCoefficients {
        TangentCoefficients { alpha_m: self.alpha_m, alpha_f: self.alpha_f, gamma: self.gamma, dt }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearConfig {
    pub tol_r: f64,
    pub tol_a: f64,
    pub max_iters: usize,
    /// The iteration is abandoned once `|R|` exceeds this multiple of the
    /// initial residual.
    pub max_growth: f64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        NonlinearConfig { tol_r: 1e-6, tol_a: 1e-6, max_iters: 20, max_growth: 1e4 }
    }
}

/// Nodal unknowns and their rates at a time level.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub udot: Vec<f64>,
    pub pdot: Vec<f64>,
    pub vdot: Vec<f64>,
}

impl State {
    pub fn zeros(n_nodes: usize) -> Self {
        State {
            u: vec![0.0; 3 * n_nodes],
            p: vec![0.0; n_nodes],
            v: vec![0.0; 3 * n_nodes],
            udot: vec![0.0; 3 * n_nodes],
            pdot: vec![0.0; n_nodes],
            vdot: vec![0.0; 3 * n_nodes],
        }
    }
}

fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
}

/// Same-displacement predictor: `y₀ = y_n`, `ẏ₀ = ((γ-1)/γ) ẏ_n`.
pub fn predict(prev: &State, gamma: f64) -> State {
    let s = (gamma - 1.0) / gamma;
    let scale = |x: &[f64]| x.iter().map(|v| v * s).collect::<Vec<f64>>();
    State {
        u: prev.u.clone(),
        p: prev.p.clone(),
        v: prev.v.clone(),
        udot: scale(&prev.udot),
        pdot: scale(&prev.pdot),
        vdot: scale(&prev.vdot),
    }
}

/// Values at `n+α_f` and rates at `n+α_m`, plus `u̇` at `n+α_m`.
pub fn intermediate(prev: &State, cur: &State, ga: &GenAlphaParams) -> (StageState, Vec<f64>) {
    let (af, am) = (ga.alpha_f, ga.alpha_m);
    (
        StageState {
            u: lerp(&prev.u, &cur.u, af),
            p: lerp(&prev.p, &cur.p, af),
            v: lerp(&prev.v, &cur.v, af),
            pdot: lerp(&prev.pdot, &cur.pdot, am),
            vdot: lerp(&prev.vdot, &cur.vdot, am),
        },
        lerp(&prev.udot, &cur.udot, am),
    )
}

/// Rate increments of one corrector, over all unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct Increment {
    pub dudot: Vec<f64>,
    pub dpdot: Vec<f64>,
    pub dvdot: Vec<f64>,
}

/// `ẏ += Δẏ`, `y += γ Δt Δẏ`
pub fn apply_increment(y: &mut State, inc: &Increment, gamma: f64, dt: f64) {
    let w = gamma * dt;
    for (pairs, d) in [
        ((&mut y.udot, &mut y.u), &inc.dudot),
        ((&mut y.pdot, &mut y.p), &inc.dpdot),
        ((&mut y.vdot, &mut y.v), &inc.dvdot),
    ] {
        let (rate, val) = pairs;
        for ((r, v), di) in rate.iter_mut().zip(val.iter_mut()).zip(d) {
            *r += di;
            *v += w * di;
        }
    }
}

/// The block system for `(Δv̇, Δṗ)`: right-hand sides `-R_m` and `-R_p`
/// corrected by `(α_f γ Δt / α_m) ∂R/∂u · R̄_k`, which requires the tangent
/// to have been assembled with direction `R̄_k`.
pub fn block_system(problem: &Problem, tangent: &Tangent, k: &TangentCoefficients) -> BlockSystem {
    let w = k.value_weight() / k.alpha_m;
    let rm: Vec<f64> = tangent.residuals.r_m.iter().zip(&tangent.du_m).map(|(r, d)| -r + w * d).collect();
    let rp: Vec<f64> = tangent.residuals.r_p.iter().zip(&tangent.du_p).map(|(r, d)| -r + w * d).collect();
    BlockSystem::new(
        tangent.a.clone(),
        tangent.b.clone(),
        tangent.c.clone(),
        tangent.d.clone(),
        problem.dofs.restrict(&rm),
        rp,
    )
    .with_velocity_dofs(problem.dofs.free_dofs().to_vec())
}

/// Solves the reduced system and recovers all three rate increments.
pub fn solve_increment(
    problem: &Problem,
    tangent: &Tangent,
    rbar_k: &[f64],
    k: &TangentCoefficients,
    kind: LinearSolverKind,
    cfg: &BlockSolverConfig,
) -> Result<(Increment, LinearSolveStats)> {
    let sys = block_system(problem, tangent, k);
    let (x, stats) = solve_block_system(&sys, kind, cfg)?;
    let nv = sys.nv();
    let dvdot = problem.dofs.expand(&x[..nv]);
    let dpdot = x[nv..].to_vec();
    let w = k.value_weight() / k.alpha_m;
    let dudot = dvdot.iter().zip(rbar_k).map(|(dv, r)| w * dv - r / k.alpha_m).collect();
    Ok((Increment { dudot, dpdot, dvdot }, stats))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonIterationStats {
    pub residual_norm: f64,
    pub rbar_k_norm: f64,
    pub linear: LinearSolveStats,
    /// Tangent assembly wall time `T_A`.
    pub assembly_seconds: f64,
    /// Linear solve wall time `T_L`, setup included.
    pub linear_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub step: usize,
    /// Time at the end of the step.
    pub time: f64,
    /// Newton corrections performed (`l̂`).
    pub newton_iterations: usize,
    pub converged: bool,
    /// `‖R‖` at every residual check.
    pub residual_history: Vec<f64>,
    pub iterations: Vec<NewtonIterationStats>,
}

impl StepStats {
    pub fn linear_converged(&self) -> bool {
        self.iterations.iter().all(|it| it.linear.converged)
    }
}

/// Everything needed to march the problem in time.
pub struct Integrator<'p> {
    pub problem: &'p Problem,
    pub params: GenAlphaParams,
    pub dt: f64,
    pub nonlinear: NonlinearConfig,
    pub solver: LinearSolverKind,
    pub solver_cfg: BlockSolverConfig,
}

impl<'p> Integrator<'p> {
    pub fn new(problem: &'p Problem, rho_inf: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        Ok(Integrator {
            problem,
            params: gen_alpha_params(rho_inf)?,
            dt,
            nonlinear: NonlinearConfig::default(),
            solver: LinearSolverKind::Nested,
            solver_cfg: BlockSolverConfig::default(),
        })
    }

    fn coefficients(&self) -> TangentCoefficients {
        self.params.coefficients(self.dt)
    }

    /// `R̄_k = u̇_{n+α_m} - v_{n+α_f}` on the free unknowns, zero elsewhere.
    fn kinematic_residual(&self, udot: &[f64], stage: &StageState) -> Vec<f64> {
        let dofs = &self.problem.dofs;
        (0..udot.len()).map(|g| if dofs.is_fixed(g) { 0.0 } else { udot[g] - stage.v[g] }).collect()
    }

    fn residual_norm(&self, rbar: &[f64], r_m: &[f64], r_p: &[f64]) -> f64 {
        let dofs = &self.problem.dofs;
        let mut s: f64 = rbar.iter().map(|x| x * x).sum();
        s += dofs.free_dofs().iter().map(|&g| r_m[g] * r_m[g]).sum::<f64>();
        s += r_p.iter().map(|x| x * x).sum::<f64>();
        s.sqrt()
    }

    /// One time step from `prev` at time `t_n`.
    pub fn step(&self, prev: &State, t_n: f64, step: usize) -> Result<(State, StepStats)> {
        let k = self.coefficients();
        let t_stage = t_n + self.params.alpha_f * self.dt;
        let mut y = predict(prev, self.params.gamma);
        let mut stats = StepStats { step, time: t_n + self.dt, ..Default::default() };
        let mut r0 = None;
        for l in 0..=self.nonlinear.max_iters {
            let (stage, udot) = intermediate(prev, &y, &self.params);
            let rbar = self.kinematic_residual(&udot, &stage);
            let res = self.problem.residuals(&stage, t_stage)?;
            let norm = self.residual_norm(&rbar, &res.r_m, &res.r_p);
            stats.residual_history.push(norm);
            let r0v = *r0.get_or_insert(norm);
            debug!("step {step} iteration {l}: |R| = {norm:e}");
            if norm <= self.nonlinear.tol_a || norm <= self.nonlinear.tol_r * r0v {
                stats.converged = true;
                stats.newton_iterations = l;
                return Ok((y, stats));
            }
            if l == self.nonlinear.max_iters || !norm.is_finite() || norm > self.nonlinear.max_growth * r0v {
                break;
            }
            let ta = Instant::now();
            let rbar_norm = norm2(&rbar);
            let dir = (rbar_norm > 0.0).then_some(&rbar[..]);
            let tangent = self.problem.tangent(&stage, t_stage, &k, dir)?;
            let assembly_seconds = ta.elapsed().as_secs_f64();
            let tl = Instant::now();
            let (inc, linear) = solve_increment(self.problem, &tangent, &rbar, &k, self.solver, &self.solver_cfg)?;
            let linear_seconds = tl.elapsed().as_secs_f64();
            apply_increment(&mut y, &inc, self.params.gamma, self.dt);
            stats.iterations.push(NewtonIterationStats {
                residual_norm: norm,
                rbar_k_norm: rbar_norm,
                linear,
                assembly_seconds,
                linear_seconds,
            });
        }
        stats.newton_iterations = stats.iterations.len();
        Err(Error::NewtonNotConverged {
            step,
            iterations: stats.newton_iterations,
            residual: *stats.residual_history.last().unwrap_or(&f64::NAN),
        })
    }

    /// Runs `n_steps` steps from `initial` at `t0`. `observe` sees every
    /// accepted state.
    pub fn advance(
        &self,
        initial: State,
        t0: f64,
        n_steps: usize,
        mut observe: impl FnMut(usize, f64, &State, &StepStats),
    ) -> Result<(State, Vec<StepStats>)> {
        let mut y = initial;
        let mut t = t0;
        let mut all = Vec::with_capacity(n_steps);
        for s in 1..=n_steps {
            let (next, st) = self.step(&y, t, s)?;
            t += self.dt;
            info!(
                "step {s}: t = {t:.4e}, Newton iterations = {}, outer iterations = {:?}",
                st.newton_iterations,
                st.iterations.iter().map(|i| i.linear.outer_iterations).collect::<Vec<_>>()
            );
            observe(s, t, &next, &st);
            y = next;
            all.push(st);
        }
        Ok((y, all))
    }

    /// Like [`Self::advance`], except that a step failing with an inverted
    /// element or a stalled Newton iteration is retried as two half steps,
    /// at most `max_cutbacks` halvings deep. `observe` sees the states at the
    /// nominal step times together with the statistics of their sub-steps.
    pub fn advance_with_cutback(
        &self,
        initial: State,
        t0: f64,
        n_steps: usize,
        max_cutbacks: usize,
        mut observe: impl FnMut(usize, f64, &State, &[StepStats]),
    ) -> Result<(State, Vec<StepStats>)> {
        let mut y = initial;
        let mut all = Vec::with_capacity(n_steps);
        for s in 1..=n_steps {
            let t = t0 + (s - 1) as f64 * self.dt;
            let (next, sub) = self.cut_step(&y, t, self.dt, s, max_cutbacks)?;
            info!(
                "step {s}: t = {:.4e}, sub-steps = {}, Newton iterations = {:?}",
                t + self.dt,
                sub.len(),
                sub.iter().map(|st| st.newton_iterations).collect::<Vec<_>>()
            );
            observe(s, t0 + s as f64 * self.dt, &next, &sub);
            y = next;
            all.extend(sub);
        }
        Ok((y, all))
    }

    fn cut_step(&self, y: &State, t: f64, dt: f64, step: usize, left: usize) -> Result<(State, Vec<StepStats>)> {
        let sub = Integrator { dt, ..*self };
        match sub.step(y, t, step) {
            Ok((next, st)) => Ok((next, vec![st])),
            Err(e @ (Error::ElementInversion { .. } | Error::NewtonNotConverged { .. })) if left > 0 => {
                warn!("step {step} at t = {t:.4e} with dt = {dt:.4e} failed ({e}); halving");
                let (mid, mut first) = self.cut_step(y, t, dt / 2.0, step, left - 1)?;
                let (end, second) = self.cut_step(&mid, t + dt / 2.0, dt / 2.0, step, left - 1)?;
                first.extend(second);
                Ok((end, first))
            }
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_formulas() {
        let g = gen_alpha_params(0.5).unwrap();
        assert!((g.alpha_m - 5.0 / 6.0).abs() < 1e-15);
        assert!((g.alpha_f - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.gamma - 2.0 / 3.0).abs() < 1e-15);
        let g = gen_alpha_params(1.0).unwrap();
        assert_eq!((g.alpha_m, g.alpha_f, g.gamma), (0.5, 0.5, 0.5));
        let g = gen_alpha_params(0.0).unwrap();
        assert_eq!((g.alpha_m, g.alpha_f, g.gamma), (1.5, 1.0, 1.0));
        assert!(gen_alpha_params(1.5).is_err());
        assert!(gen_alpha_params(-0.1).is_err());
    }

    #[test]
    fn predictor_keeps_values_and_scales_rates() {
        let mut s = State::zeros(1);
        s.udot = vec![3.0; 3];
        s.u = vec![1.0, 2.0, 3.0];
        let y = predict(&s, 2.0 / 3.0);
        assert_eq!(y.u, s.u);
        assert!(y.udot.iter().all(|&v| (v + 1.5).abs() < 1e-15));
        let z = predict(&State::zeros(1), 0.5);
        assert!(z.udot.iter().all(|&v| v == 0.0));
    }
}
