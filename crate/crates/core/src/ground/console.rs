//! Interactive operator console. Lines arrive on a channel, replies and
//! client events leave on another, both stamped with sim time.

use std::collections::BTreeMap;
use std::sync::mpsc::{Receiver, Sender, TryRecvError};

use super::script::{parse_line, Command, Observed, Target, USAGE};
use crate::action::{ActionClient, ClientEvent, Response};
use crate::firmware::messages::Telemetry;
use crate::kernel::SimTime;

pub struct Console {
    input: Receiver<String>,
    output: Sender<String>,
    now: SimTime,
    pub quit: bool,
}

impl Console {
    pub fn new(input: Receiver<String>, output: Sender<String>) -> Self {
        Console {
            input,
            output,
            now: SimTime::ZERO,
            quit: false,
        }
    }

    fn say(&self, msg: impl AsRef<str>) {
        let _ = self.output.send(format!("[{:9.3}] {}", self.now.as_secs_f64(), msg.as_ref()));
    }

    pub fn step(
        &mut self,
        clients: &mut BTreeMap<u16, ActionClient>,
        telemetry: &BTreeMap<u16, Telemetry>,
        now: SimTime,
    ) {
        self.now = now;
        loop {
            match self.input.try_recv() {
                Ok(line) => self.command(line.trim(), clients, telemetry),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    self.quit = true;
                    break;
                }
            }
        }
    }

    fn command(
        &mut self,
        line: &str,
        clients: &mut BTreeMap<u16, ActionClient>,
        telemetry: &BTreeMap<u16, Telemetry>,
    ) {
        let line = line.split('#').next().unwrap_or("").trim();
        match line {
            "" => return,
            "help" => return self.say(USAGE),
            "quit" | "exit" => {
                self.quit = true;
                return self.say("bye");
            }
            "status" => {
                for v in clients.keys() {
                    match telemetry.get(v) {
                        Some(t) => self.say(format!(
                            "drone {v}: {} {} pos ({:.1}, {:.1}, {:.1}) alt {:.1} m speed {:.1} m/s",
                            t.mode,
                            if t.armed { "armed" } else { "disarmed" },
                            t.position.x,
                            t.position.y,
                            t.position.z,
                            -t.position.z,
                            t.velocity.norm()
                        )),
                        None => self.say(format!("drone {v}: no telemetry")),
                    }
                }
                return;
            }
            _ => {}
        }
        let step = match parse_line(0, line) {
            Ok(s) => s,
            Err(e) => return self.say(format!("error: {}", e.message)),
        };
        let targets: Vec<u16> = match step.target {
            Target::All => clients.keys().copied().collect(),
            Target::One(v) if clients.contains_key(&v) => vec![v],
            Target::One(v) => return self.say(format!("error: no drone {v}")),
        };
        for v in targets {
            let c = clients.get_mut(&v).expect("target resolved");
            match &step.command {
                Command::Goal(g) => {
                    c.submit(g.clone());
                    self.say(format!("drone {v}: {} sent", g.name()));
                }
                Command::Reposition(p) => {
                    c.reposition(*p);
                    self.say(format!("drone {v}: reposition sent"));
                }
                Command::Cancel => {
                    c.cancel(None);
                    self.say(format!("drone {v}: cancel sent"));
                }
                Command::Assert(a) => match telemetry.get(&v) {
                    Some(t) => {
                        let o = Observed {
                            position: t.position,
                            velocity: t.velocity,
                            mode: t.mode,
                            armed: t.armed,
                        };
                        match a.check(&o) {
                            Ok(()) => self.say(format!("drone {v}: ok")),
                            Err(d) => self.say(format!("drone {v}: assertion failed: {d}")),
                        }
                    }
                    None => self.say(format!("drone {v}: no telemetry")),
                },
                Command::Wait | Command::Sleep(_) => {
                    return self.say("error: wait and sleep only apply to mission files");
                }
            }
        }
    }

    pub fn on_event(&mut self, ev: &ClientEvent) {
        match ev {
            ClientEvent::Response { handle, response } => {
                let v = handle.vehicle;
                match response {
                    Response::Accepted { goal_id } => self.say(format!("drone {v}: goal {goal_id} accepted")),
                    Response::Rejected { reason } => self.say(format!("drone {v}: rejected: {reason}")),
                    Response::Canceled { goal_id } => self.say(format!("drone {v}: goal {goal_id} canceled")),
                    Response::NotActive => self.say(format!("drone {v}: nothing to cancel")),
                    Response::Reposition { accepted: true, .. } => self.say(format!("drone {v}: repositioning")),
                    Response::Reposition { reason, .. } => {
                        self.say(format!("drone {v}: reposition rejected: {reason}"))
                    }
                }
            }
            ClientEvent::Feedback { handle, feedback } => {
                let mut s = format!(
                    "drone {}: {} alt {:.1} m",
                    handle.vehicle, feedback.mode, feedback.altitude_m
                );
                if let Some(r) = feedback.radius_m {
                    s.push_str(&format!(" radius {r:.1} m"));
                }
                self.say(s);
            }
            ClientEvent::Result { handle, result } => {
                let mut s = format!("drone {}: goal {} {}", handle.vehicle, result.goal_id, result.status);
                if !result.detail.is_empty() {
                    s.push_str(&format!(" ({})", result.detail));
                }
                self.say(s);
            }
            ClientEvent::NoResponse { handle } => self.say(format!("drone {}: no response", handle.vehicle)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firmware::FlightMode;
    use crate::netsim::{NodeId, GROUND_DOMAIN};
    use nalgebra::Vector3;
    use std::sync::mpsc::channel;

    #[test]
    fn bad_input_gets_usage_and_status_reports() {
        let (tx, rx) = channel();
        let (otx, orx) = channel();
        let mut con = Console::new(rx, otx);
        let mut clients = BTreeMap::from([(1, ActionClient::new(1, NodeId(1), GROUND_DOMAIN))]);
        let telem = BTreeMap::from([(
            1,
            Telemetry {
                vehicle: 1,
                stamp_ns: 0,
                position: Vector3::new(0.0, 0.0, -12.0),
                velocity: Vector3::zeros(),
                yaw: 0.0,
                mode: FlightMode::Loiter,
                armed: true,
            },
        )]);
        tx.send("dance".into()).unwrap();
        tx.send("status".into()).unwrap();
        tx.send("takeoff 30".into()).unwrap();
        con.step(&mut clients, &telem, SimTime::from_millis(100));
        let out: Vec<String> = orx.try_iter().collect();
        assert!(out[0].contains("usage"), "{out:?}");
        assert!(out[1].contains("alt 12.0"), "{out:?}");
        assert!(out[2].contains("takeoff sent"), "{out:?}");
        assert!(!con.quit);
        drop(tx);
        con.step(&mut clients, &telem, SimTime::from_millis(104));
        assert!(con.quit);
    }
}
