use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),

    #[error("empty search space: no instance predicted as `{class}` with confidence above {tau}")]
    EmptySearchSpace { class: String, tau: f64 },

    #[error("stats undefined on empty coverage")]
    EmptyCoverage,

    #[error("pattern set does not cover the search space ({uncovered} instances uncovered)")]
    Uncoverable { uncovered: usize },

    #[error("degenerate cost range: minlength == maxlength == {0}")]
    DegenerateCostRange(f64),

    #[error("unknown instance id `{0}`")]
    UnknownInstance(String),

    #[error("query refused: budget of {0} queries is spent")]
    BudgetExhausted(usize),

    #[error("search space exhausted")]
    Exhausted,

    #[error("stale answer for step {got}, pending step is {expected:?}")]
    StaleAnswer { expected: Option<usize>, got: usize },

    #[error("malformed answer: {0}")]
    MalformedAnswer(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
