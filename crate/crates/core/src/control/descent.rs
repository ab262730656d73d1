//! Coordinate descent over joint commands with cycle-detection stopping.
//!
//! The engine is generic over [`JointObjective`], which scores a full joint
//! command from one agent's point of view. Agents take turns in ascending
//! index order; each picks its best single action given the latest choices of
//! everyone else. Iteration numbers are 1-based: `history[i]` holds the
//! command after iteration `i + 1`. The initial command is iteration 0 and is
//! kept apart from the history.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One action index per agent, ordered by agent id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiSensorCommand(pub Vec<usize>);

impl MultiSensorCommand {
    pub fn zeros(agents: usize) -> Self {
        Self(vec![0; agents])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

pub trait JointObjective {
    fn agents(&self) -> usize;
    fn action_count(&self, agent: usize) -> usize;
    /// Score of `command` for `agent`, or `None` when the command violates a
    /// constraint.
    fn evaluate(&self, agent: usize, command: &[usize]) -> Option<f64>;
}

/// Exhaustive search over `agent`'s actions with everyone else fixed.
///
/// Ties go to the lowest action index. When no action is feasible the zero
/// action is returned with score negative infinity.
pub fn best_response<O: JointObjective + ?Sized>(objective: &O, agent: usize, command: &[usize]) -> (usize, f64) {
    let mut trial = command.to_vec();
    let mut best: Option<(usize, f64)> = None;
    for a in 0..objective.action_count(agent) {
        trial[agent] = a;
        if let Some(score) = objective.evaluate(agent, &trial) {
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((a, score));
            }
        }
    }
    best.unwrap_or((0, f64::NEG_INFINITY))
}

/// First `(t_start, t_end)` with `history[t_start - 1] == history[t_end - 1]`
/// and `t_start < t_end`, scanning `t_end` upwards.
pub fn detect_cycle(history: &[MultiSensorCommand]) -> Option<(usize, usize)> {
    let mut seen: HashMap<&MultiSensorCommand, usize> = HashMap::new();
    for (i, c) in history.iter().enumerate() {
        if let Some(&first) = seen.get(c) {
            return Some((first, i + 1));
        }
        seen.insert(c, i + 1);
    }
    None
}

/// Highest-scoring command within iterations `t_start..=t_end`, earliest on
/// ties. Returns the command, its score and the chosen iteration.
pub fn select_final_command(
    history: &[MultiSensorCommand],
    scores: &[f64],
    t_start: usize,
    t_end: usize,
) -> (MultiSensorCommand, f64, usize) {
    let mut best = t_start;
    for t in t_start..=t_end {
        if scores[t - 1] > scores[best - 1] {
            best = t;
        }
    }
    (history[best - 1].clone(), scores[best - 1], best)
}

/// Bookkeeping of one descent.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentState {
    /// Last completed or in-progress iteration.
    pub iteration: usize,
    pub initial: MultiSensorCommand,
    /// Each agent's score of the initial command.
    pub initial_scores: Vec<f64>,
    /// Latest action of every agent: iteration `t` for agents already visited
    /// in the current iteration, `t - 1` for the rest.
    pub current: MultiSensorCommand,
    /// Per agent, the joint command right after its own turn, per iteration.
    pub histories: Vec<Vec<MultiSensorCommand>>,
    /// Per agent, the score of that command from its own point of view.
    pub scores: Vec<Vec<f64>>,
}

impl DescentState {
    pub fn new<O: JointObjective + ?Sized>(objective: &O, initial: MultiSensorCommand) -> Self {
        let n = objective.agents();
        let initial_scores = (0..n)
            .map(|s| objective.evaluate(s, initial.as_slice()).unwrap_or(f64::NEG_INFINITY))
            .collect();
        Self {
            iteration: 0,
            current: initial.clone(),
            initial,
            initial_scores,
            histories: vec![Vec::new(); n],
            scores: vec![Vec::new(); n],
        }
    }

    /// Runs `agent`'s turn of the current iteration and reports a cycle in
    /// its history if this turn closed one.
    pub fn take_turn<O: JointObjective + ?Sized>(&mut self, objective: &O, agent: usize) -> Option<(usize, usize)> {
        let (action, score) = best_response(objective, agent, self.current.as_slice());
        self.current.0[agent] = action;
        let history = &mut self.histories[agent];
        let repeat = history.iter().position(|c| *c == self.current);
        history.push(self.current.clone());
        self.scores[agent].push(score);
        repeat.map(|first| (first + 1, history.len()))
    }
}

/// One agent's turn in a descent, as dumped to trace files. Iteration 0 is
/// the initial command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub agent: usize,
    pub command: Vec<usize>,
    /// `None` when the command is infeasible for this agent.
    pub score: Option<f64>,
}

impl DescentState {
    /// Every recorded turn, iteration-major.
    pub fn trace(&self) -> Vec<TraceRecord> {
        let finite = |v: f64| v.is_finite().then_some(v);
        let mut out: Vec<TraceRecord> = self
            .initial_scores
            .iter()
            .enumerate()
            .map(|(agent, &v)| TraceRecord {
                iteration: 0,
                agent,
                command: self.initial.0.clone(),
                score: finite(v),
            })
            .collect();
        for t in 0..self.iteration {
            for (agent, history) in self.histories.iter().enumerate() {
                let Some(c) = history.get(t) else { break };
                out.push(TraceRecord {
                    iteration: t + 1,
                    agent,
                    command: c.0.clone(),
                    score: finite(self.scores[agent][t]),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentOutcome {
    pub command: MultiSensorCommand,
    /// Score of `command` for the stopping agent.
    pub score: f64,
    pub stopping_agent: usize,
    pub cycle: (usize, usize),
    pub best_iteration: usize,
    pub state: DescentState,
}

/// Upper bound on iterations before a repeat is forced: the number of joint
/// commands plus one.
pub fn iteration_bound<O: JointObjective + ?Sized>(objective: &O) -> usize {
    (0..objective.agents())
        .try_fold(1usize, |acc, s| acc.checked_mul(objective.action_count(s).max(1)))
        .and_then(|n| n.checked_add(1))
        .unwrap_or(usize::MAX)
}

/// Runs descent from `initial` until the first agent sees its joint command
/// repeat, then returns that agent's best command within the cycle.
pub fn coordinate_descent<O: JointObjective + ?Sized>(
    objective: &O,
    initial: MultiSensorCommand,
) -> Result<DescentOutcome> {
    let n = objective.agents();
    if initial.len() != n {
        return Err(Error::InvalidArgument(format!(
            "initial command has {} entries for {n} agents",
            initial.len()
        )));
    }
    let mut state = DescentState::new(objective, initial);
    if n == 0 {
        return Ok(DescentOutcome {
            command: state.initial.clone(),
            score: 0.0,
            stopping_agent: 0,
            cycle: (0, 0),
            best_iteration: 0,
            state,
        });
    }
    let bound = iteration_bound(objective);
    for t in 1..=bound {
        state.iteration = t;
        for s in 0..n {
            if let Some((t_start, t_end)) = state.take_turn(objective, s) {
                let (command, score, best) =
                    select_final_command(&state.histories[s], &state.scores[s], t_start, t_end);
                return Ok(DescentOutcome {
                    command,
                    score,
                    stopping_agent: s,
                    cycle: (t_start, t_end),
                    best_iteration: best,
                    state,
                });
            }
        }
    }
    Err(Error::NoCycle(bound))
}

/// Restricted descent baseline: one descent per initial command, keeping the
/// result that scores best for `owner` (first restart on ties). Returns
/// `owner`'s action and that score.
pub fn multi_start_descent<O: JointObjective + ?Sized>(
    objective: &O,
    owner: usize,
    initials: &[MultiSensorCommand],
) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for initial in initials {
        let outcome = coordinate_descent(objective, initial.clone())?;
        let score = objective
            .evaluate(owner, outcome.command.as_slice())
            .unwrap_or(f64::NEG_INFINITY);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((outcome.command.0[owner], score));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("at least one restart is required".into()))
}

/// Restarts needed to hit the global optimum with probability `p_success`
/// when each restart lands uniformly on one of `num_local_optima` optima.
pub fn dcd_runs_required(num_local_optima: u64, p_success: f64) -> Result<u64> {
    if num_local_optima < 2 {
        return Err(Error::InvalidArgument("need at least two local optima".into()));
    }
    if !(p_success > 0.0 && p_success < 1.0) {
        return Err(Error::InvalidArgument("success probability must lie in (0, 1)".into()));
    }
    let ratio = (1.0 - p_success).ln() / (1.0 - 1.0 / num_local_optima as f64).ln();
    // absorb rounding noise when the ratio is an exact integer
    Ok((ratio - 1e-9).ceil().max(1.0) as u64)
}
