use crate::environment::{trajectory_cost, SafeSet, Scenario};
use crate::error::Result;
use crate::shield::{shielded_rollout, BackupPolicy, ShieldOutcome};
use crate::trajectory::{clamp_control, rollout_controls, ControlSequence, State};

/// Everything a strategy needs to score one candidate.
pub struct EvalContext<'a> {
    pub scenario: &'a Scenario,
    pub backup: &'a BackupPolicy,
    pub penalty_weight: f64,
}

/// Scored candidate. `outcome` holds the trajectory actually produced from
/// the candidate: shielded for the shielded strategy, open-loop otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateEval {
    pub cost: f64,
    pub outcome: ShieldOutcome,
    /// Whether the candidate enters the weighted average.
    pub contributes: bool,
    /// Every state of `outcome` lies in S.
    pub safe: bool,
}

/// How a candidate control sequence becomes a scored trajectory.
pub trait CandidateStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn evaluate(&self, x0: &State, nominal: &ControlSequence, ctx: &EvalContext) -> Result<CandidateEval>;

    /// Return the best candidate seen during denoising instead of the
    /// rollout of the final estimate.
    fn keeps_best(&self) -> bool {
        false
    }
}

fn all_safe(outcome: &ShieldOutcome, scenario: &Scenario) -> bool {
    outcome.states.states.iter().all(|x| scenario.in_safe_set(x))
}

fn open_loop(x0: &State, nominal: &ControlSequence, scenario: &Scenario) -> Result<(ShieldOutcome, f64)> {
    let model = &*scenario.system;
    let states = rollout_controls(x0, nominal, model)?;
    let controls = ControlSequence::new(
        nominal
            .controls
            .iter()
            .map(|u| clamp_control(u, model))
            .collect::<Result<_>>()?,
    );
    let cost = trajectory_cost(&states, &controls, scenario)?;
    let outcome = ShieldOutcome {
        states,
        controls,
        fallback_index: None,
        validity_checks: 0,
    };
    Ok((outcome, cost))
}

/// Every candidate passes through the shielded rollout.
#[derive(Clone, Copy, Debug, Default)]
pub struct Shielded;

impl CandidateStrategy for Shielded {
    fn name(&self) -> &'static str {
        "shielded"
    }

    fn evaluate(&self, x0: &State, nominal: &ControlSequence, ctx: &EvalContext) -> Result<CandidateEval> {
        let outcome = shielded_rollout(x0, nominal, ctx.backup, &*ctx.scenario.system, ctx.scenario)?;
        let cost = trajectory_cost(&outcome.states, &outcome.controls, ctx.scenario)?;
        let safe = all_safe(&outcome, ctx.scenario);
        Ok(CandidateEval {
            cost,
            outcome,
            contributes: true,
            safe,
        })
    }

    fn keeps_best(&self) -> bool {
        true
    }
}

/// Open-loop rollout; safety is recorded but not enforced.
#[derive(Clone, Copy, Debug, Default)]
pub struct Vanilla;

impl CandidateStrategy for Vanilla {
    fn name(&self) -> &'static str {
        "vanilla"
    }

    fn evaluate(&self, x0: &State, nominal: &ControlSequence, ctx: &EvalContext) -> Result<CandidateEval> {
        let (outcome, cost) = open_loop(x0, nominal, ctx.scenario)?;
        let safe = all_safe(&outcome, ctx.scenario);
        Ok(CandidateEval {
            cost,
            outcome,
            contributes: true,
            safe,
        })
    }
}

/// Open-loop rollout; unsafe candidates are dropped from the average.
#[derive(Clone, Copy, Debug, Default)]
pub struct Filtered;

impl CandidateStrategy for Filtered {
    fn name(&self) -> &'static str {
        "filtered"
    }

    fn evaluate(&self, x0: &State, nominal: &ControlSequence, ctx: &EvalContext) -> Result<CandidateEval> {
        let (outcome, cost) = open_loop(x0, nominal, ctx.scenario)?;
        let safe = all_safe(&outcome, ctx.scenario);
        Ok(CandidateEval {
            cost,
            outcome,
            contributes: safe,
            safe,
        })
    }
}

/// Open-loop rollout with `penalty_weight · Σ max(0, g(x_t))` added to the cost.
#[derive(Clone, Copy, Debug, Default)]
pub struct Penalty;

impl CandidateStrategy for Penalty {
    fn name(&self) -> &'static str {
        "penalty"
    }

    fn evaluate(&self, x0: &State, nominal: &ControlSequence, ctx: &EvalContext) -> Result<CandidateEval> {
        let (outcome, cost) = open_loop(x0, nominal, ctx.scenario)?;
        let mut excess = 0.0;
        let mut safe = true;
        for x in &outcome.states.states {
            let g = ctx.scenario.margin(x);
            if g > 0.0 {
                excess += g;
                safe = false;
            }
        }
        Ok(CandidateEval {
            cost: cost + ctx.penalty_weight * excess,
            outcome,
            contributes: true,
            safe,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::testing::{kinematic_tt, point_robot, scenario, unit_circle};
    use crate::trajectory::Control;

    fn push_into_circle() -> (Scenario, BackupPolicy, ControlSequence) {
        let s = scenario(point_robot(0.1), vec![unit_circle()], &[-3.0, 0.0, 0.0, 0.0]);
        let backup = BackupPolicy::stop_in_place(2, 1);
        let seq = ControlSequence::new(vec![Control::new(&[2.0, 0.0]); 20]);
        (s, backup, seq)
    }

    #[test]
    fn zero_controls_from_invariant_state_are_untouched() {
        let s = scenario(kinematic_tt(), vec![unit_circle()], &[-4.0, 0.0, 0.0, 0.0]);
        let backup = BackupPolicy::stop_in_place(2, 1);
        let ctx = EvalContext { scenario: &s, backup: &backup, penalty_weight: 0.0 };
        let e = Shielded.evaluate(&s.start, &ControlSequence::zeros(10, 2), &ctx).unwrap();
        assert!(e.contributes && e.safe);
        assert_eq!(e.outcome.fallback_index, None);
        assert!(e.outcome.states.states.iter().all(|x| *x == s.start));
    }

    #[test]
    fn filtered_drops_colliding_candidates() {
        let (s, backup, seq) = push_into_circle();
        let ctx = EvalContext { scenario: &s, backup: &backup, penalty_weight: 0.0 };
        let v = Vanilla.evaluate(&s.start, &seq, &ctx).unwrap();
        let f = Filtered.evaluate(&s.start, &seq, &ctx).unwrap();
        assert!(!v.safe && v.contributes);
        assert!(!f.safe && !f.contributes);
        assert_eq!(v.cost, f.cost);
    }

    #[test]
    fn zero_penalty_weight_matches_vanilla() {
        let (s, backup, seq) = push_into_circle();
        let ctx = EvalContext { scenario: &s, backup: &backup, penalty_weight: 0.0 };
        let v = Vanilla.evaluate(&s.start, &seq, &ctx).unwrap();
        let p = Penalty.evaluate(&s.start, &seq, &ctx).unwrap();
        assert_eq!(v.cost.to_bits(), p.cost.to_bits());

        let heavy = EvalContext { penalty_weight: 10.0, ..ctx };
        assert!(Penalty.evaluate(&s.start, &seq, &heavy).unwrap().cost > v.cost);
    }

    #[test]
    fn open_loop_records_clamped_controls() {
        let (s, backup, _) = push_into_circle();
        let ctx = EvalContext { scenario: &s, backup: &backup, penalty_weight: 0.0 };
        let seq = ControlSequence::new(vec![Control::new(&[9.0, -9.0])]);
        let v = Vanilla.evaluate(&s.start, &seq, &ctx).unwrap();
        assert_eq!(v.outcome.controls.controls[0], Control::new(&[2.0, -2.0]));
    }
}
