use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use super::schedule::NoiseSchedule;
use super::strategy::{CandidateEval, CandidateStrategy, EvalContext};
use crate::error::{CoreError, Result};
use crate::shield::ShieldOutcome;
use crate::trajectory::{Control, ControlSequence, DynamicsModel, State};

/// Below this temperature the softmax collapses to the argmin.
pub const ARGMIN_TEMPERATURE: f64 = 1e-12;

/// Maps normalized controls in `[-1, 1]` onto the model's control box.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlScaling {
    mid: Vec<f64>,
    half: Vec<f64>,
}

impl ControlScaling {
    pub fn for_model<M: DynamicsModel + ?Sized>(model: &M) -> Self {
        let (lo, hi) = (model.control_lower(), model.control_upper());
        Self {
            mid: lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            half: lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)).collect(),
        }
    }

    pub fn to_physical(&self, y: &ControlSequence) -> ControlSequence {
        let map = |u: &Control| {
            Control::from(
                u.iter()
                    .enumerate()
                    .map(|(j, v)| self.mid[j] + self.half[j] * v)
                    .collect::<Vec<_>>(),
            )
        };
        ControlSequence::new(y.controls.iter().map(map).collect())
    }

    pub fn to_normalized(&self, u: &ControlSequence) -> ControlSequence {
        let map = |u: &Control| {
            Control::from(
                u.iter()
                    .enumerate()
                    .map(|(j, v)| if self.half[j] > 0.0 { (v - self.mid[j]) / self.half[j] } else { 0.0 })
                    .collect::<Vec<_>>(),
            )
        };
        ControlSequence::new(u.controls.iter().map(map).collect())
    }
}

/// Standard-normal sequence of shape `horizon × control_dim`.
pub fn standard_normal(horizon: usize, control_dim: usize, rng: &RngStream) -> ControlSequence {
    let mut r = rng.rng();
    let flat: Vec<f64> = (0..horizon * control_dim).map(|_| StandardNormal.sample(&mut r)).collect();
    ControlSequence::from_flat(&flat, control_dim)
}

/// `K` candidates around `Y_i/√ᾱ_i` with spread `sigma_scale·√(1/ᾱ_i − 1)`.
/// Candidate 0 is the unperturbed mean; candidate `k` draws from `rng.child(k)`.
pub fn sample_candidates(
    y: &ControlSequence,
    level: usize,
    count: usize,
    sigma_scale: f64,
    schedule: &NoiseSchedule,
    rng: &RngStream,
) -> Vec<ControlSequence> {
    let ab = schedule.alpha_bar(level);
    let mean: Vec<f64> = y.to_flat().iter().map(|v| v / ab.sqrt()).collect();
    let sigma = sigma_scale * (1.0 / ab - 1.0).max(0.0).sqrt();
    let m = y.control_dim();
    (0..count)
        .map(|k| {
            if k == 0 {
                return ControlSequence::from_flat(&mean, m);
            }
            let mut r = rng.child(k as u64).rng();
            let flat: Vec<f64> = mean
                .iter()
                .map(|mu| {
                    let eps: f64 = StandardNormal.sample(&mut r);
                    mu + sigma * eps
                })
                .collect();
            ControlSequence::from_flat(&flat, m)
        })
        .collect()
}

/// Scores every candidate (given in physical units) in parallel. Results
/// are in candidate order and the first error by index is reported, so the
/// output does not depend on the number of worker threads.
pub fn evaluate_candidates(
    x0: &State,
    candidates: &[ControlSequence],
    strategy: &dyn CandidateStrategy,
    ctx: &EvalContext,
) -> Result<Vec<CandidateEval>> {
    if candidates.is_empty() {
        return Err(CoreError::Contract("no candidates to evaluate".into()));
    }
    let results: Vec<Result<CandidateEval>> = candidates
        .par_iter()
        .map(|c| strategy.evaluate(x0, c, ctx))
        .collect();
    results.into_iter().collect()
}

/// Normalized softmax weights `exp(−(J_k − min J)/λ)`; one-hot on the
/// lowest-index minimum when `λ ≤ 1e−12`. Empty input gives empty output.
pub fn softmax_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let Some(min) = costs.iter().copied().reduce(f64::min) else {
        return Vec::new();
    };
    if lambda <= ARGMIN_TEMPERATURE {
        let best = costs.iter().position(|&c| c == min).unwrap_or(0);
        return (0..costs.len()).map(|k| if k == best { 1.0 } else { 0.0 }).collect();
    }
    let raw: Vec<f64> = costs.iter().map(|c| (-(c - min) / lambda).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// `Y_{i−1} = √ᾱ_{i−1}·Σ w_k·candidate_k` over contributing candidates
/// (`scores[k] = Some(cost)`). Returns `(Y_{i−1}, stalled)`; with no
/// contributing candidate the estimate is only rescaled.
pub fn reverse_step(
    y: &ControlSequence,
    level: usize,
    candidates: &[ControlSequence],
    scores: &[Option<f64>],
    lambda: f64,
    schedule: &NoiseSchedule,
) -> (ControlSequence, bool) {
    let next = schedule.alpha_bar(level - 1).sqrt();
    let m = y.control_dim();
    let live: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter_map(|(k, s)| s.filter(|c| c.is_finite()).map(|c| (k, c)))
        .collect();
    if live.is_empty() {
        let scale = next / schedule.alpha_bar(level).sqrt();
        let flat: Vec<f64> = y.to_flat().iter().map(|v| scale * v).collect();
        return (ControlSequence::from_flat(&flat, m), true);
    }
    let costs: Vec<f64> = live.iter().map(|&(_, c)| c).collect();
    let weights = softmax_weights(&costs, lambda);
    let mut mean = vec![0.0; y.len() * m];
    for (&(k, _), w) in live.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        for (acc, v) in mean.iter_mut().zip(candidates[k].to_flat()) {
            *acc += w * v;
        }
    }
    let flat: Vec<f64> = mean.into_iter().map(|v| next * v).collect();
    (ControlSequence::from_flat(&flat, m), false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: usize,
    /// Temperature used for this level's weights.
    pub lambda: f64,
    pub mean_cost: f64,
    pub min_cost: f64,
    /// Fraction of candidates entering the weighted average.
    pub contributing_fraction: f64,
    /// Fraction of candidates whose trajectory stays in S.
    pub safe_fraction: f64,
    /// Fraction of candidates on which the shield switched to the backup.
    pub fallback_rate: f64,
    pub stalled: bool,
}

impl LevelDiagnostics {
    fn from_evals(level: usize, lambda: f64, evals: &[CandidateEval], stalled: bool) -> Self {
        let n = evals.len() as f64;
        let frac = |f: fn(&CandidateEval) -> bool| evals.iter().filter(|e| f(e)).count() as f64 / n;
        Self {
            level,
            lambda,
            mean_cost: evals.iter().map(|e| e.cost).sum::<f64>() / n,
            min_cost: evals.iter().map(|e| e.cost).fold(f64::INFINITY, f64::min),
            contributing_fraction: frac(|e| e.contributes),
            safe_fraction: frac(|e| e.safe),
            fallback_rate: frac(|e| e.outcome.fallback_index.is_some()),
            stalled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseDiagnostics {
    /// Per level, from the starting level down to 1.
    pub levels: Vec<LevelDiagnostics>,
    pub stalls: usize,
    pub final_cost: f64,
}

/// Working state of one denoising pass.
#[derive(Clone, Debug)]
pub struct DenoiseState {
    /// Current noisy estimate in normalized units.
    pub y: ControlSequence,
    pub level: usize,
    pub best: Option<(f64, ShieldOutcome)>,
}

impl DenoiseState {
    /// Keeps the lowest cost; earlier entries win ties.
    fn offer(&mut self, eval: &CandidateEval) {
        if self.best.as_ref().is_none_or(|(c, _)| eval.cost < *c) {
            self.best = Some((eval.cost, eval.outcome.clone()));
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseResult {
    /// Controls as applied by `outcome`, in physical units.
    pub controls: ControlSequence,
    pub outcome: ShieldOutcome,
    pub cost: f64,
    /// Final estimate `Y_0`, normalized.
    pub y0: ControlSequence,
    pub diagnostics: DenoiseDiagnostics,
}

/// `0.1 ·` standard deviation of the finite contributing costs, if positive.
pub fn estimate_temperature(evals: &[CandidateEval]) -> Option<f64> {
    let costs: Vec<f64> = evals
        .iter()
        .filter(|e| e.contributes && e.cost.is_finite())
        .map(|e| e.cost)
        .collect();
    if costs.len() < 2 {
        return None;
    }
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let std = (costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n).sqrt();
    (std > 0.0).then_some(0.1 * std)
}

pub(crate) struct DenoiseSetup<'a> {
    pub schedule: &'a NoiseSchedule,
    pub strategy: &'a dyn CandidateStrategy,
    pub ctx: EvalContext<'a>,
    pub scaling: &'a ControlScaling,
    pub candidates: usize,
    pub sigma_scale: f64,
    pub lambda: Option<f64>,
}

/// Runs levels `start.level ..= 1` and evaluates the final estimate.
pub(crate) fn run_denoise(x0: &State, start: DenoiseState, setup: &DenoiseSetup, rng: &RngStream) -> Result<DenoiseResult> {
    let mut state = start;
    let mut lambda = setup.lambda.unwrap_or(1.0);
    let mut levels = Vec::with_capacity(state.level);
    let mut stalls = 0;
    let keeps_best = setup.strategy.keeps_best();

    while state.level >= 1 {
        let i = state.level;
        let cands = sample_candidates(&state.y, i, setup.candidates, setup.sigma_scale, setup.schedule, &rng.child(i as u64));
        let physical: Vec<ControlSequence> = cands.iter().map(|c| setup.scaling.to_physical(c)).collect();
        let evals = evaluate_candidates(x0, &physical, setup.strategy, &setup.ctx)?;
        if setup.lambda.is_none() {
            // keep the previous temperature when the costs carry no spread
            lambda = estimate_temperature(&evals).unwrap_or(lambda);
        }
        if keeps_best {
            evals.iter().for_each(|e| state.offer(e));
        }
        let scores: Vec<Option<f64>> = evals.iter().map(|e| e.contributes.then_some(e.cost)).collect();
        let (y, stalled) = reverse_step(&state.y, i, &cands, &scores, lambda, setup.schedule);
        stalls += usize::from(stalled);
        levels.push(LevelDiagnostics::from_evals(i, lambda, &evals, stalled));
        state.y = y;
        state.level -= 1;
    }

    let last = setup.strategy.evaluate(x0, &setup.scaling.to_physical(&state.y), &setup.ctx)?;
    let (cost, outcome) = if keeps_best {
        state.offer(&last);
        state.best.take().expect("final estimate was offered")
    } else {
        (last.cost, last.outcome)
    };
    Ok(DenoiseResult {
        controls: outcome.controls.clone(),
        outcome,
        cost,
        y0: state.y,
        diagnostics: DenoiseDiagnostics {
            levels,
            stalls,
            final_cost: cost,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_noise_schedule;

    fn seq(v: &[f64]) -> ControlSequence {
        ControlSequence::from_flat(v, 1)
    }

    #[test]
    fn weights_closed_form() {
        let lambda = 0.7;
        let w = softmax_weights(&[0.0, lambda * 3f64.ln()], lambda);
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn weights_argmin_limit() {
        assert_eq!(softmax_weights(&[3.0, 1.0, 1.0, 2.0], 1e-13), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(softmax_weights(&[3.0, 1.0, 1.0], 0.0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn tied_minima_share_weight() {
        let w = softmax_weights(&[1.0, 1.0, 5.0], 1e-3);
        assert_eq!(w[0], w[1]);
        assert!((w[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn equal_costs_average_arithmetically() {
        let s = NoiseSchedule::from_betas(vec![0.1]).unwrap();
        let cands = vec![seq(&[1.0, 2.0]), seq(&[3.0, -2.0]), seq(&[2.0, 3.0])];
        let (y, stalled) = reverse_step(&seq(&[0.0, 0.0]), 1, &cands, &[Some(4.0); 3], 0.5, &s);
        assert!(!stalled);
        assert!((y.to_flat()[0] - 2.0).abs() < 1e-12 && (y.to_flat()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reverse_step_rescales_by_previous_alpha_bar() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        let (y, _) = reverse_step(&seq(&[0.0]), 2, &[seq(&[1.0])], &[Some(0.0)], 1.0, &s);
        assert!((y.to_flat()[0] - 0.9f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn no_contributors_is_a_pure_rescale() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        let (y, stalled) = reverse_step(&seq(&[2.0]), 2, &[seq(&[9.0])], &[None], 1.0, &s);
        assert!(stalled);
        let expect = 2.0 * 0.9f64.sqrt() / 0.72f64.sqrt();
        assert!((y.to_flat()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn candidates_collapse_without_noise() {
        let s = NoiseSchedule::from_betas(vec![1e-300]).unwrap();
        assert_eq!(s.alpha_bar(1), 1.0);
        let y = seq(&[0.3, -0.4, 0.5]);
        let c = sample_candidates(&y, 1, 5, 1.0, &s, &RngStream::new(1));
        assert!(c.iter().all(|ci| *ci == y));
    }

    #[test]
    fn single_candidate_is_the_mean() {
        let s = make_noise_schedule(4, 0.01, 0.2).unwrap();
        let y = seq(&[0.3, -0.4]);
        let c = sample_candidates(&y, 3, 1, 1.0, &s, &RngStream::new(1));
        let scale = s.alpha_bar(3).sqrt();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].to_flat(), vec![0.3 / scale, -0.4 / scale]);
    }

    #[test]
    fn candidate_draws_are_reproducible_and_distinct() {
        let s = make_noise_schedule(4, 0.01, 0.2).unwrap();
        let y = seq(&[0.0; 6]);
        let a = sample_candidates(&y, 4, 4, 1.0, &s, &RngStream::new(3));
        let b = sample_candidates(&y, 4, 4, 1.0, &s, &RngStream::new(3));
        assert_eq!(a, b);
        assert_ne!(a[1], a[2]);
        assert_ne!(a[1], a[0]);
    }

    #[test]
    fn scaling_round_trips() {
        let m = crate::systems::KinematicTractorTrailer::new(0.1, Default::default());
        let sc = ControlScaling::for_model(&m);
        let u = ControlSequence::new(vec![Control::new(&[2.0, -0.6]), Control::new(&[0.0, 0.3])]);
        let y = sc.to_normalized(&u);
        assert_eq!(y.controls[0], Control::new(&[1.0, -1.0]));
        let back = sc.to_physical(&y);
        for (a, b) in back.to_flat().iter().zip(u.to_flat()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
