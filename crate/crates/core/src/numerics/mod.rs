//! Shared numeric primitives: vectors, seeded RNG streams, noise schedules.

pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod vector;

pub use rng::SeededRng;
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind, ScheduleSpec};
pub use vector::Vector;
