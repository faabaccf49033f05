//! Deterministic simulation of robust adaptive event-triggered dynamic
//! average consensus over switching undirected graphs.

pub mod analysis;
pub mod consensus;
pub mod linalg;
pub mod scenario_file;
pub mod signals;
pub mod sim;
pub mod topology;
pub mod trace_io;
pub mod trigger;

pub use scenario_file::{bundled, load_scenario, ScenarioFile, ScenarioFileError};
pub use sim::{run, Engine, Scenario, SimError, Trace};
pub use trace_io::{read_trace, write_trace, LoadedTrace, TraceIoError};
