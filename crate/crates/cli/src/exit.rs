//! Exit codes.

use liahr::corpus::CorpusError;
use liahr::engine::EngineError;
use liahr::gateway::GatewayError;
use liahr::pipeline::PipelineError;
use liahr::properties::PropertyError;
use liahr::stats::StatsError;
use liahr_review::ReviewError;

pub const OTHER: u8 = 1;
pub const CONFIG: u8 = 2;
pub const TRANSPORT: u8 = 3;
pub const VALIDATION: u8 = 4;

/// Bad run file, flag value or environment.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A run stopped early because the backend could not be reached.
#[derive(Debug)]
pub struct TransportFailure(pub String);

impl std::fmt::Display for TransportFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for TransportFailure {}

fn gateway_code(e: &GatewayError) -> u8 {
    match e {
        GatewayError::Config(_) | GatewayError::MissingToken(_) => CONFIG,
        _ => TRANSPORT,
    }
}

pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return CONFIG;
        }
        if cause.is::<TransportFailure>() {
            return TRANSPORT;
        }
        if let Some(e) = cause.downcast_ref::<GatewayError>() {
            return gateway_code(e);
        }
        if let Some(e) = cause.downcast_ref::<EngineError>() {
            return match e {
                EngineError::Config(_) => CONFIG,
                EngineError::Gateway(g) => gateway_code(g),
                EngineError::Io { .. } => OTHER,
                _ => VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<PropertyError>() {
            return match e {
                PropertyError::Engine(EngineError::Io { .. }) => OTHER,
                _ => VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            return match e {
                CorpusError::Io { .. } => OTHER,
                _ => VALIDATION,
            };
        }
        if cause.is::<PipelineError>() || cause.is::<StatsError>() {
            return VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<ReviewError>() {
            return match e {
                ReviewError::Io { .. } => OTHER,
                _ => VALIDATION,
            };
        }
    }
    OTHER
}
