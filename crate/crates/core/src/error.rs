use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid population state: {0}")]
    InvalidState(String),

    #[error("set {set} received no accepted samples inside the sampling box")]
    EmptySet { set: usize },

    #[error("non-finite potential gradient at ({x}, {y})")]
    NonFiniteGradient { x: f64, y: f64 },

    #[error("negative rate {rate} from channel {channel}")]
    NegativeRate { channel: usize, rate: f64 },

    #[error("state component ({status}, {subpop}) became {value} at t = {time}")]
    NegativeComponent {
        status: usize,
        subpop: usize,
        value: f64,
        time: f64,
    },

    #[error("empty sample")]
    EmptySample,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
