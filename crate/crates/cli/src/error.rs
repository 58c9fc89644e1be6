use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] csp_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("timer resolution too coarse: {0}")]
    TimerResolution(String),
}

impl CliError {
    /// 2 for anything the user can fix in the configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use csp_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(
                E::InvalidConfig(_)
                | E::IndivisibleGroups { .. }
                | E::ScheduleLength { .. }
                | E::DegeneratePowerLaw(_)
                | E::EnumerationTooLarge(_),
            ) => 2,
            _ => 1,
        }
    }
}
