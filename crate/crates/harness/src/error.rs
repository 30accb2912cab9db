use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] datagrad_core::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("runs come from different configs ({0} vs {1})")]
    MixedHash(String, String),
    #[error("malformed artifact {path}: {msg}")]
    Artifact { path: String, msg: String },
    #[error("{0} selftest check(s) failed")]
    Selftest(usize),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 numerical failure, 4 invariant breach.
    pub fn exit_code(&self) -> i32 {
        use datagrad_core::Error as E;
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(e) => match e {
                E::NonFinite { .. } | E::CgBreakdown { .. } | E::Diverged { .. } => 3,
                E::ReplayMismatch { .. } => 4,
                E::InvalidArgument(_) | E::DegenerateScene(_) | E::EmptyDataset => 2,
                _ => 1,
            },
            HarnessError::MixedHash(..) => 2,
            HarnessError::Selftest(_) => 4,
            HarnessError::Io { .. } | HarnessError::Artifact { .. } => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use datagrad_core::Error as E;

    #[test]
    fn exit_codes() {
        let core = |e: E| HarnessError::Core(e).exit_code();
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::MixedHash("a".into(), "b".into()).exit_code(), 2);
        assert_eq!(core(E::InvalidArgument("x".into())), 2);
        assert_eq!(core(E::NonFinite { node: 3, op: "exp" }), 3);
        assert_eq!(core(E::CgBreakdown { iter: 1, curvature: -1.0 }), 3);
        assert_eq!(core(E::Diverged { step: 2, loss: f64::NAN }), 3);
        assert_eq!(core(E::ReplayMismatch { sample: 0, pixel: 4 }), 4);
        assert_eq!(HarnessError::Selftest(1).exit_code(), 4);
        assert_eq!(HarnessError::io("p", std::io::Error::other("x")).exit_code(), 1);
    }
}
