//! Privacy dashboard engine running against a simulated phone.
//!
//! [`engine::Engine`] is the entry point; the other modules hold the pure
//! pieces it composes (location policies, the remote protection protocol,
//! guest mode, backup archives, settings sharing, the tour and the event feed).

pub mod backup;
pub mod device;
pub mod engine;
pub mod events;
pub mod geopriv;
pub mod guest;
pub mod rpp;
pub mod settings;
pub mod tour;

pub use engine::{Engine, EngineError, ErrorClass};
