pub mod client;
pub mod server;
pub mod types;
pub mod vehicle_link;

pub use client::{ActionClient, ClientEvent, GoalHandle, HandleState};
pub use server::ActionServer;
pub use types::{
    event_topic, request_topic, state_topic, ActionFeedback, ActionGoal, ActionResult, ClientRequest, GoalStatus, RequestBody, Response, ServerMsg,
    SharedState, TimedSetpoint, Tolerances,
};
pub use vehicle_link::VehicleLink;
