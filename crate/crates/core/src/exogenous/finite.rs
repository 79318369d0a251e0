//! Exact checks on finite-state processes given as trajectory probability
//! tables.
//!
//! A vitality table lists trajectories of one process on a few time points,
//! each with a death time and a probability. An evolution table lists joint
//! trajectories of two processes. All conditional probabilities are computed
//! by enumeration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VitalTrajectory {
    pub states: Vec<String>,
    /// `None` when the patient outlives every time point.
    pub death_time: Option<f64>,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VitalitySpec {
    pub times: Vec<f64>,
    pub trajectories: Vec<VitalTrajectory>,
}

fn check_probabilities(probs: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for p in probs {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::Spec(format!("trajectory probability {p} is not a probability")));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Spec(format!("trajectory probabilities sum to {total}, not 1")));
    }
    Ok(())
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Spec("time points must be finite and strictly increasing".into()));
    }
    Ok(())
}

impl VitalitySpec {
    pub fn validate(&self) -> Result<()> {
        check_times(&self.times)?;
        for tr in &self.trajectories {
            if tr.states.len() != self.times.len() {
                return Err(Error::Spec(format!(
                    "trajectory has {} states for {} time points",
                    tr.states.len(),
                    self.times.len()
                )));
            }
            if tr.death_time.is_some_and(|d| !(d > 0.0)) {
                return Err(Error::Spec("death times must be positive".into()));
            }
        }
        check_probabilities(self.trajectories.iter().map(|t| t.probability))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VitalityWitness {
    /// `pr(T > t | Y(t) = state)` lies strictly between 0 and 1.
    IntermediateProbability { time: f64, state: String, probability: f64 },
    /// Two trajectories share `Y(t) = state` but give different survival
    /// probabilities at `t`.
    DependsOnTrajectory {
        time: f64,
        state: String,
        trajectory_a: Vec<String>,
        trajectory_b: Vec<String>,
        probability_a: f64,
        probability_b: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum VitalityVerdict {
    Vital,
    NonVital { witness: VitalityWitness },
}

/// `pr(T > t | Y) = pr(T > t | Y(t)) ∈ {0, 1}` for every listed time `t`.
pub fn vitality_check(spec: &VitalitySpec) -> Result<VitalityVerdict> {
    spec.validate()?;
    for (i, &t) in spec.times.iter().enumerate() {
        // (mass, alive mass) by current state and by whole trajectory
        let mut by_state: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        let mut by_traj: BTreeMap<&[String], (f64, f64)> = BTreeMap::new();
        for tr in spec.trajectories.iter().filter(|tr| tr.probability > 0.0) {
            let alive = tr.death_time.is_none_or(|d| d > t);
            let a = if alive { tr.probability } else { 0.0 };
            let e = by_state.entry(tr.states[i].as_str()).or_default();
            e.0 += tr.probability;
            e.1 += a;
            let e = by_traj.entry(tr.states.as_slice()).or_default();
            e.0 += tr.probability;
            e.1 += a;
        }
        for (state, (mass, alive)) in &by_state {
            let p_state = alive / mass;
            let trajs: Vec<(&[String], f64)> = by_traj
                .iter()
                .filter(|(k, _)| k[i] == *state)
                .map(|(k, (m, a))| (*k, a / m))
                .collect();
            if let Some(&(ka, pa)) = trajs.iter().find(|(_, p)| (p - p_state).abs() > TOL) {
                let &(kb, pb) = trajs
                    .iter()
                    .max_by(|x, y| (x.1 - pa).abs().total_cmp(&(y.1 - pa).abs()))
                    .expect("non-empty");
                return Ok(VitalityVerdict::NonVital {
                    witness: VitalityWitness::DependsOnTrajectory {
                        time: t,
                        state: state.to_string(),
                        trajectory_a: ka.to_vec(),
                        trajectory_b: kb.to_vec(),
                        probability_a: pa,
                        probability_b: pb,
                    },
                });
            }
            if p_state > TOL && p_state < 1.0 - TOL {
                return Ok(VitalityVerdict::NonVital {
                    witness: VitalityWitness::IntermediateProbability {
                        time: t,
                        state: state.to_string(),
                        probability: p_state,
                    },
                });
            }
        }
    }
    Ok(VitalityVerdict::Vital)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub x: Vec<String>,
    pub y: Vec<String>,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSpec {
    pub times: Vec<f64>,
    pub trajectories: Vec<JointTrajectory>,
}

impl EvolutionSpec {
    pub fn validate(&self) -> Result<()> {
        check_times(&self.times)?;
        let n = self.times.len();
        if self.trajectories.iter().any(|t| t.x.len() != n || t.y.len() != n) {
            return Err(Error::Spec("every trajectory needs one x and one y state per time point".into()));
        }
        check_probabilities(self.trajectories.iter().map(|t| t.probability))
    }

    /// The same table with the roles of `x` and `y` exchanged.
    pub fn swapped(&self) -> EvolutionSpec {
        EvolutionSpec {
            times: self.times.clone(),
            trajectories: self
                .trajectories
                .iter()
                .map(|t| JointTrajectory { x: t.y.clone(), y: t.x.clone(), probability: t.probability })
                .collect(),
        }
    }
}

/// Which process is claimed to evolve independently of the other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionWitness {
    pub time: f64,
    /// Future trajectory of the evolving process after `time`.
    pub future: Vec<String>,
    /// Two joint histories up to `time` with the same own-process part.
    pub history_a: (Vec<String>, Vec<String>),
    pub history_b: (Vec<String>, Vec<String>),
    pub probability_a: f64,
    pub probability_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum EvolutionVerdict {
    Holds,
    Fails { witness: EvolutionWitness },
}

type Hist = (Vec<String>, Vec<String>);

/// Checks that the future of `evolving` given the joint history equals its
/// future given its own history, at every time point and for every future
/// trajectory.
pub fn independent_evolution_check(spec: &EvolutionSpec, evolving: Component) -> Result<EvolutionVerdict> {
    spec.validate()?;
    let spec = match evolving {
        Component::Y => spec.clone(),
        Component::X => spec.swapped(),
    };
    let n = spec.times.len();
    for i in 0..n.saturating_sub(1) {
        // joint history -> (mass, future -> mass)
        let mut joint: BTreeMap<Hist, (f64, BTreeMap<Vec<String>, f64>)> = BTreeMap::new();
        for tr in spec.trajectories.iter().filter(|t| t.probability > 0.0) {
            let h = (tr.x[..=i].to_vec(), tr.y[..=i].to_vec());
            let e = joint.entry(h).or_default();
            e.0 += tr.probability;
            *e.1.entry(tr.y[i + 1..].to_vec()).or_default() += tr.probability;
        }
        let mut own: BTreeMap<Vec<String>, (f64, BTreeMap<Vec<String>, f64>)> = BTreeMap::new();
        for ((_, yh), (m, fut)) in &joint {
            let e = own.entry(yh.clone()).or_default();
            e.0 += m;
            for (f, v) in fut {
                *e.1.entry(f.clone()).or_default() += v;
            }
        }
        for (yh, (my, fut_y)) in &own {
            let siblings: Vec<(&Hist, f64, &BTreeMap<Vec<String>, f64>)> = joint
                .iter()
                .filter(|((_, y), _)| y == yh)
                .map(|(h, (m, f))| (h, *m, f))
                .collect();
            for (future, fy) in fut_y {
                let p_own = fy / my;
                let cond = |f: &BTreeMap<Vec<String>, f64>, m: f64| f.get(future).copied().unwrap_or(0.0) / m;
                if let Some(&(ha, ma, fa)) = siblings.iter().find(|(_, m, f)| (cond(f, *m) - p_own).abs() > TOL) {
                    let pa = cond(fa, ma);
                    let &(hb, mb, fb) = siblings
                        .iter()
                        .max_by(|a, b| (cond(a.2, a.1) - pa).abs().total_cmp(&(cond(b.2, b.1) - pa).abs()))
                        .expect("non-empty");
                    let orient = |h: &Hist| match evolving {
                        Component::Y => h.clone(),
                        Component::X => (h.1.clone(), h.0.clone()),
                    };
                    return Ok(EvolutionVerdict::Fails {
                        witness: EvolutionWitness {
                            time: spec.times[i],
                            future: future.clone(),
                            history_a: orient(ha),
                            history_b: orient(hb),
                            probability_a: pa,
                            probability_b: cond(fb, mb),
                        },
                    });
                }
            }
        }
    }
    Ok(EvolutionVerdict::Holds)
}

fn factorises<K: Ord + Clone>(cells: impl Iterator<Item = (K, Vec<String>, Vec<String>, f64)>) -> bool {
    // group -> (mass, joint, x-marginal, y-marginal)
    type Cells = (f64, BTreeMap<(Vec<String>, Vec<String>), f64>, BTreeMap<Vec<String>, f64>, BTreeMap<Vec<String>, f64>);
    let mut groups: BTreeMap<K, Cells> = BTreeMap::new();
    for (k, x, y, p) in cells {
        let g = groups.entry(k).or_default();
        g.0 += p;
        *g.1.entry((x.clone(), y.clone())).or_default() += p;
        *g.2.entry(x).or_default() += p;
        *g.3.entry(y).or_default() += p;
    }
    groups.values().all(|(m, joint, px, py)| {
        px.iter().all(|(x, a)| {
            py.iter().all(|(y, b)| {
                let j = joint.get(&(x.clone(), y.clone())).copied().unwrap_or(0.0);
                (j / m - (a / m) * (b / m)).abs() <= TOL
            })
        })
    })
}

/// Whether the two processes are independent.
pub fn processes_independent(spec: &EvolutionSpec) -> Result<bool> {
    spec.validate()?;
    Ok(factorises(
        spec.trajectories
            .iter()
            .filter(|t| t.probability > 0.0)
            .map(|t| ((), t.x.clone(), t.y.clone(), t.probability)),
    ))
}

/// Whether the two processes are independent given the initial pair `(X0, Y0)`.
pub fn conditionally_independent_given_initial(spec: &EvolutionSpec) -> Result<bool> {
    spec.validate()?;
    Ok(factorises(
        spec.trajectories
            .iter()
            .filter(|t| t.probability > 0.0)
            .map(|t| ((t.x[0].clone(), t.y[0].clone()), t.x.clone(), t.y.clone(), t.probability)),
    ))
}

/// Small worked examples of both checkers.
pub mod library {
    use super::*;

    /// Owned state labels.
    pub fn states(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn bits(n: usize) -> impl Iterator<Item = Vec<u8>> {
        (0..1usize << n).map(move |m| (0..n).map(|i| ((m >> i) & 1) as u8).collect())
    }

    /// The survival indicator `1{t < T}` with `T` uniform on `{0.5, 1.5, 2.5}`
    /// or beyond the last time point.
    pub fn recoded_survival() -> VitalitySpec {
        let times = vec![0.0, 1.0, 2.0, 3.0];
        let deaths = [Some(0.5), Some(1.5), Some(2.5), None];
        let trajectories = deaths
            .iter()
            .map(|&d| VitalTrajectory {
                states: times
                    .iter()
                    .map(|&t| if d.is_none_or(|d| t < d) { "1" } else { "0" }.to_string())
                    .collect(),
                death_time: d,
                probability: 0.25,
            })
            .collect();
        VitalitySpec { times, trajectories }
    }

    /// The survival indicator paired with an independent fair coin per time.
    pub fn vital_pair() -> VitalitySpec {
        let base = recoded_survival();
        let n = base.times.len();
        let mut trajectories = Vec::new();
        for tr in &base.trajectories {
            for coin in bits(n) {
                trajectories.push(VitalTrajectory {
                    states: tr.states.iter().zip(&coin).map(|(a, c)| format!("{a}|{c}")).collect(),
                    death_time: tr.death_time,
                    probability: tr.probability / (1u32 << n) as f64,
                });
            }
        }
        VitalitySpec { times: base.times, trajectories }
    }

    /// A state fixed at recruitment, independent of the survival time.
    pub fn constant_process() -> VitalitySpec {
        let times = vec![0.0, 1.0, 2.0];
        let mut trajectories = Vec::new();
        for state in ["a", "b"] {
            for d in [Some(0.5), Some(1.5), None] {
                trajectories.push(VitalTrajectory {
                    states: vec![state.to_string(); 3],
                    death_time: d,
                    probability: 1.0 / 6.0,
                });
            }
        }
        VitalitySpec { times, trajectories }
    }

    /// `X` independent fair coins; `Y` an independent two-state Markov chain.
    pub fn independent_pair() -> EvolutionSpec {
        let n = 3;
        let mut trajectories = Vec::new();
        for x in bits(n) {
            for y in bits(n) {
                let mut py = 0.5;
                for i in 1..n {
                    py *= if y[i] == y[i - 1] { 0.8 } else { 0.2 };
                }
                trajectories.push(JointTrajectory {
                    x: x.iter().map(|v| v.to_string()).collect(),
                    y: y.iter().map(|v| v.to_string()).collect(),
                    probability: py / (1u32 << n) as f64,
                });
            }
        }
        EvolutionSpec { times: vec![0.0, 1.0, 2.0], trajectories }
    }

    /// `Y(t) = X(t - 1)` with `Y(0) = 0` and `X` fair coins.
    pub fn lagged_copy() -> EvolutionSpec {
        let n = 3;
        let trajectories = bits(n)
            .map(|x| {
                let mut y = vec!["0".to_string()];
                y.extend(x[..n - 1].iter().map(|v| v.to_string()));
                JointTrajectory {
                    x: x.iter().map(|v| v.to_string()).collect(),
                    y,
                    probability: 1.0 / (1u32 << n) as f64,
                }
            })
            .collect();
        EvolutionSpec { times: vec![0.0, 1.0, 2.0], trajectories }
    }

    /// `X(0) = Y(0)` a fair coin; afterwards each process flips its own state
    /// with its own probability, independently of the other.
    pub fn coupled_start() -> EvolutionSpec {
        let n = 3;
        let flip = |v: &[u8], p: f64| -> f64 {
            (1..v.len()).map(|i| if v[i] != v[i - 1] { p } else { 1.0 - p }).product()
        };
        let mut trajectories = Vec::new();
        for x in bits(n) {
            for y in bits(n) {
                if x[0] != y[0] {
                    continue;
                }
                trajectories.push(JointTrajectory {
                    x: x.iter().map(|v| v.to_string()).collect(),
                    y: y.iter().map(|v| v.to_string()).collect(),
                    probability: 0.5 * flip(&x, 0.3) * flip(&y, 0.1),
                });
            }
        }
        EvolutionSpec { times: vec![0.0, 1.0, 2.0], trajectories }
    }
}
