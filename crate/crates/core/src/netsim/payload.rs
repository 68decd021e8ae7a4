//! Typed message payloads carried inside envelopes.

use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    bincode::serialize(msg).expect("in-memory message serialization")
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Option<T> {
    bincode::deserialize(bytes).ok()
}
