//! Scripted mission runner. Steps run in order; a step that does not
//! complete within its timeout, a failed assertion, or a rejected or
//! aborted goal ends the mission.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::script::{parse_script, Command, Observed, ParseError, Step, Target};
use crate::action::{ActionClient, GoalHandle, GoalStatus, HandleState, Response};
use crate::firmware::messages::Telemetry;
use crate::kernel::SimTime;

const REQUEST_TIMEOUT_S: f64 = 15.0;
const WAIT_TIMEOUT_S: f64 = 900.0;
const ASSERT_TIMEOUT_S: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
pub enum MissionFailure {
    #[error("line {line} '{text}': timed out after {timeout_s} s")]
    StepTimeout { line: usize, text: String, timeout_s: f64 },
    #[error("line {line} '{text}': assertion failed on vehicle {vehicle}: {detail}")]
    AssertFailed {
        line: usize,
        text: String,
        vehicle: u16,
        detail: String,
    },
    #[error("line {line} '{text}': vehicle {vehicle} {status}: {detail}")]
    GoalFailed {
        line: usize,
        text: String,
        vehicle: u16,
        status: String,
        detail: String,
    },
    #[error("line {line} '{text}': no response from vehicle {vehicle}")]
    NoResponse { line: usize, text: String, vehicle: u16 },
    #[error("line {line}: unknown vehicle {vehicle}")]
    UnknownVehicle { line: usize, vehicle: u16 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub line: usize,
    pub text: String,
    pub started_ns: u64,
    pub finished_ns: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub passed: bool,
    pub steps: Vec<StepRecord>,
    pub failure: Option<MissionFailure>,
    pub finished_ns: u64,
}

impl MissionReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

enum Progress {
    Running,
    Done,
    Failed(MissionFailure),
}

pub struct MissionRunner {
    steps: Vec<Step>,
    idx: usize,
    started: Option<SimTime>,
    handles: Vec<GoalHandle>,
    last_goal: BTreeMap<u16, GoalHandle>,
    records: Vec<StepRecord>,
    report: Option<MissionReport>,
}

impl MissionRunner {
    pub fn new(steps: Vec<Step>) -> Self {
        MissionRunner {
            steps,
            idx: 0,
            started: None,
            handles: Vec::new(),
            last_goal: BTreeMap::new(),
            records: Vec::new(),
            report: None,
        }
    }

    pub fn from_script(text: &str) -> Result<Self, ParseError> {
        Ok(Self::new(parse_script(text)?))
    }

    pub fn report(&self) -> Option<&MissionReport> {
        self.report.as_ref()
    }

    pub fn finished(&self) -> bool {
        self.report.is_some()
    }

    fn targets(step: &Step, clients: &BTreeMap<u16, ActionClient>) -> Result<Vec<u16>, MissionFailure> {
        match step.target {
            Target::All => Ok(clients.keys().copied().collect()),
            Target::One(v) if clients.contains_key(&v) => Ok(vec![v]),
            Target::One(v) => Err(MissionFailure::UnknownVehicle { line: step.line, vehicle: v }),
        }
    }

    fn start(&mut self, clients: &mut BTreeMap<u16, ActionClient>) -> Result<(), MissionFailure> {
        let step = &self.steps[self.idx];
        let targets = Self::targets(step, clients)?;
        self.handles.clear();
        for v in targets {
            let client = clients.get_mut(&v).expect("target resolved");
            let h = match &step.command {
                Command::Goal(g) => {
                    let h = client.submit(g.clone());
                    self.last_goal.insert(v, h);
                    h
                }
                Command::Reposition(p) => client.reposition(*p),
                Command::Cancel => client.cancel(None),
                Command::Wait => match self.last_goal.get(&v) {
                    Some(h) => *h,
                    None => continue,
                },
                Command::Sleep(_) | Command::Assert(_) => GoalHandle {
                    vehicle: v,
                    client_seq: 0,
                },
            };
            self.handles.push(h);
        }
        Ok(())
    }

    fn progress(
        &self,
        clients: &BTreeMap<u16, ActionClient>,
        telemetry: &BTreeMap<u16, Telemetry>,
        now: SimTime,
        started: SimTime,
    ) -> Progress {
        let step = &self.steps[self.idx];
        let (line, text) = (step.line, step.text.clone());
        let mut all_done = true;
        for h in &self.handles {
            let v = h.vehicle;
            let state = clients.get(&v).and_then(|c| c.state(*h));
            let failed = |status: String, detail: String| {
                Progress::Failed(MissionFailure::GoalFailed {
                    line,
                    text: text.clone(),
                    vehicle: v,
                    status,
                    detail,
                })
            };
            if matches!(state, Some(HandleState::NoResponse)) {
                return Progress::Failed(MissionFailure::NoResponse {
                    line,
                    text: text.clone(),
                    vehicle: v,
                });
            }
            let done = match (&step.command, state) {
                (Command::Goal(_), Some(HandleState::Accepted { .. })) => true,
                (Command::Goal(_) | Command::Wait, Some(HandleState::Finished(r))) => {
                    if r.status != GoalStatus::Succeeded {
                        return failed(r.status.to_string(), r.detail.clone());
                    }
                    true
                }
                (Command::Reposition(_), Some(HandleState::Replied(Response::Reposition { accepted, reason }))) => {
                    if !accepted {
                        return failed("reposition rejected".into(), reason.clone());
                    }
                    true
                }
                (Command::Cancel, Some(HandleState::Replied(_))) => true,
                (Command::Sleep(s), _) => now.saturating_sub(started) as f64 >= s * 1e9,
                (Command::Assert(a), _) => match telemetry.get(&v) {
                    Some(t) => {
                        let o = Observed {
                            position: t.position,
                            velocity: t.velocity,
                            mode: t.mode,
                            armed: t.armed,
                        };
                        if let Err(detail) = a.check(&o) {
                            return Progress::Failed(MissionFailure::AssertFailed {
                                line,
                                text: text.clone(),
                                vehicle: v,
                                detail,
                            });
                        }
                        true
                    }
                    None => false,
                },
                _ => false,
            };
            all_done &= done;
        }
        if all_done {
            return Progress::Done;
        }
        let timeout_s = step.timeout_s.unwrap_or(match step.command {
            Command::Wait => WAIT_TIMEOUT_S,
            Command::Assert(_) => ASSERT_TIMEOUT_S,
            Command::Sleep(_) => f64::INFINITY,
            _ => REQUEST_TIMEOUT_S,
        });
        if now.saturating_sub(started) as f64 > timeout_s * 1e9 {
            return Progress::Failed(MissionFailure::StepTimeout { line, text, timeout_s });
        }
        Progress::Running
    }

    fn finish(&mut self, now: SimTime, failure: Option<MissionFailure>) {
        if let Some(f) = &failure {
            tracing::warn!(%f, "mission failed");
        } else {
            tracing::info!(t = now.as_secs_f64(), "mission complete");
        }
        self.report = Some(MissionReport {
            passed: failure.is_none(),
            steps: std::mem::take(&mut self.records),
            failure,
            finished_ns: now.as_nanos(),
        });
    }

    /// Advances the mission; several steps may complete in one tick.
    pub fn step(
        &mut self,
        clients: &mut BTreeMap<u16, ActionClient>,
        telemetry: &BTreeMap<u16, Telemetry>,
        now: SimTime,
    ) {
        while self.report.is_none() {
            if self.idx >= self.steps.len() {
                self.finish(now, None);
                return;
            }
            let started = match self.started {
                Some(s) => s,
                None => {
                    tracing::info!(t = now.as_secs_f64(), step = %self.steps[self.idx].text, "mission step");
                    if let Err(f) = self.start(clients) {
                        self.finish(now, Some(f));
                        return;
                    }
                    self.started = Some(now);
                    now
                }
            };
            let progress = self.progress(clients, telemetry, now, started);
            let step = &self.steps[self.idx];
            let mut record = StepRecord {
                line: step.line,
                text: step.text.clone(),
                started_ns: started.as_nanos(),
                finished_ns: now.as_nanos(),
                ok: true,
            };
            match progress {
                Progress::Running => return,
                Progress::Done => {
                    self.records.push(record);
                    self.idx += 1;
                    self.started = None;
                }
                Progress::Failed(f) => {
                    record.ok = false;
                    self.records.push(record);
                    self.finish(now, Some(f));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{event_topic, ActionResult, ServerMsg};
    use crate::firmware::FlightMode;
    use crate::netsim::payload::encode;
    use crate::netsim::{Envelope, NodeId, GROUND_DOMAIN};
    use nalgebra::Vector3;

    fn clients(n: u16) -> BTreeMap<u16, ActionClient> {
        (1..=n).map(|v| (v, ActionClient::new(v, NodeId(1), GROUND_DOMAIN))).collect()
    }

    fn reply(c: &mut ActionClient, msg: ServerMsg) {
        let env = Envelope {
            seq: 1,
            send_sim_time: SimTime::ZERO,
            src: NodeId(0x200),
            dst: NodeId::BROADCAST,
            domain: GROUND_DOMAIN,
            topic: event_topic(c.vehicle),
            payload: encode(&msg),
            flags: 0,
        };
        assert!(c.ingest(&env));
    }

    fn telem(alt: f64) -> Telemetry {
        Telemetry {
            vehicle: 1,
            stamp_ns: 0,
            position: Vector3::new(0.0, 0.0, -alt),
            velocity: Vector3::zeros(),
            yaw: 0.0,
            mode: FlightMode::Loiter,
            armed: true,
        }
    }

    #[test]
    fn sleep_and_assert_pass() {
        let mut r = MissionRunner::from_script("sleep 1\nassert alt > 10").unwrap();
        let mut c = clients(1);
        let t = BTreeMap::from([(1, telem(20.0))]);
        r.step(&mut c, &t, SimTime::from_millis(4));
        assert!(!r.finished());
        r.step(&mut c, &t, SimTime::from_millis(1004));
        let rep = r.report().unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.exit_code(), 0);
        assert_eq!(rep.steps.len(), 2);
    }

    #[test]
    fn false_assertion_fails_the_mission() {
        let mut r = MissionRunner::from_script("assert alt > 1000").unwrap();
        let mut c = clients(1);
        r.step(&mut c, &BTreeMap::from([(1, telem(30.0))]), SimTime::from_millis(4));
        let rep = r.report().unwrap();
        assert_eq!(rep.exit_code(), 1);
        assert!(matches!(rep.failure, Some(MissionFailure::AssertFailed { line: 1, .. })));
    }

    #[test]
    fn silent_vehicle_times_out() {
        let mut r = MissionRunner::from_script("takeoff 10 timeout=2").unwrap();
        let mut c = clients(1);
        let t = BTreeMap::new();
        for ms in (0..=3000).step_by(100) {
            r.step(&mut c, &t, SimTime::from_millis(ms));
        }
        assert!(matches!(
            r.report().unwrap().failure,
            Some(MissionFailure::StepTimeout { timeout_s, .. }) if timeout_s == 2.0
        ));
    }

    #[test]
    fn wait_follows_the_last_goal() {
        let mut r = MissionRunner::from_script("takeoff 10\nwait").unwrap();
        let mut c = clients(2);
        let t = BTreeMap::new();
        r.step(&mut c, &t, SimTime::from_millis(4));
        for v in 1..=2 {
            let cl = c.get_mut(&v).unwrap();
            reply(
                cl,
                ServerMsg::Response {
                    client_seq: 1,
                    response: Response::Accepted { goal_id: 7 },
                },
            );
        }
        r.step(&mut c, &t, SimTime::from_millis(8));
        assert!(!r.finished());
        for v in 1..=2 {
            let status = if v == 1 { GoalStatus::Succeeded } else { GoalStatus::Aborted };
            reply(
                c.get_mut(&v).unwrap(),
                ServerMsg::Result(ActionResult {
                    goal_id: 7,
                    status,
                    detail: "gone".into(),
                    stamp_ns: 1,
                }),
            );
        }
        r.step(&mut c, &t, SimTime::from_millis(12));
        assert!(matches!(
            r.report().unwrap().failure,
            Some(MissionFailure::GoalFailed { vehicle: 2, .. })
        ));
    }

    #[test]
    fn unknown_vehicle_is_reported() {
        let mut r = MissionRunner::from_script("@5 land").unwrap();
        r.step(&mut clients(2), &BTreeMap::new(), SimTime::from_millis(4));
        assert!(matches!(
            r.report().unwrap().failure,
            Some(MissionFailure::UnknownVehicle { vehicle: 5, .. })
        ));
    }
}
