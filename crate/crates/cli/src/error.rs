use std::fmt;

use stiction_core::evaluation::EvalError;
use stiction_core::labeling::LabelError;
use stiction_core::loopsim::SimError;
use stiction_core::models::ModelError;
use stiction_core::neural::NeuralError;
use stiction_core::series::SeriesError;
use stiction_core::windowing::WindowError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 2,
    Data = 3,
    Numeric = 4,
}

/// A failure reported as `error[<class>]: <message>` with an exit code.
#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub class: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(class: &'static str, message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Usage, class, message: message.into() }
    }

    pub fn data(class: &'static str, message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Data, class, message: message.into() }
    }

    fn from_display(kind: ExitKind, class: &'static str, err: impl fmt::Display) -> Self {
        CliError { kind, class, message: err.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.replace(['\n', '\r'], " ");
        write!(f, "error[{}]: {}", self.class, one_line)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::from_display(ExitKind::Data, "Io", e)
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::from_display(ExitKind::Usage, "InvalidConfig", e)
    }
}

impl From<SeriesError> for CliError {
    fn from(e: SeriesError) -> Self {
        let class = match e {
            SeriesError::EmptyInput => "EmptyInput",
            SeriesError::UnparseableTimestamp { .. } => "UnparseableTimestamp",
            SeriesError::Malformed(_) => "Malformed",
            SeriesError::NonUniformAxis { .. } => "NonUniformAxis",
            SeriesError::LengthMismatch { .. } => "LengthMismatch",
            SeriesError::Io(_) => "Io",
        };
        CliError::from_display(ExitKind::Data, class, e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let class = match e {
            SimError::InvalidConfig(_) => "InvalidConfig",
            SimError::InvalidStiction(_) => "InvalidStiction",
            SimError::OverlappingEpisodes { .. } => "OverlappingEpisodes",
            SimError::NoEpisodes => "NoEpisodes",
        };
        CliError::from_display(ExitKind::Usage, class, e)
    }
}

impl From<LabelError> for CliError {
    fn from(e: LabelError) -> Self {
        let (kind, class) = match e {
            LabelError::SeriesTooShort { .. } => (ExitKind::Data, "SeriesTooShort"),
            LabelError::InsufficientHistory { .. } => (ExitKind::Data, "InsufficientHistory"),
            LabelError::SingularCovariance => (ExitKind::Numeric, "SingularCovariance"),
            LabelError::TooFewWindows { .. } => (ExitKind::Data, "TooFewWindows"),
            LabelError::InvalidConfig(_) => (ExitKind::Usage, "InvalidConfig"),
            LabelError::EmptyScores => (ExitKind::Data, "EmptyScores"),
            LabelError::Malformed(_) => (ExitKind::Data, "Malformed"),
            LabelError::Io(_) => (ExitKind::Data, "Io"),
        };
        CliError::from_display(kind, class, e)
    }
}

impl From<WindowError> for CliError {
    fn from(e: WindowError) -> Self {
        let (kind, class) = match e {
            WindowError::InvalidSpec(_) => (ExitKind::Usage, "InvalidSpec"),
            WindowError::LabelMisalignment { .. } => (ExitKind::Data, "LabelMisalignment"),
            WindowError::SeriesTooShort { .. } => (ExitKind::Data, "SeriesTooShort"),
            WindowError::TooFewSamples(_) => (ExitKind::Data, "TooFewSamples"),
            WindowError::Malformed(_) => (ExitKind::Data, "Malformed"),
            WindowError::Io(_) => (ExitKind::Data, "Io"),
        };
        CliError::from_display(kind, class, e)
    }
}

fn neural_class(e: &NeuralError) -> (ExitKind, &'static str) {
    match e {
        NeuralError::ShapeMismatch(_) => (ExitKind::Data, "ShapeMismatch"),
        NeuralError::LengthMismatch { .. } => (ExitKind::Data, "LengthMismatch"),
        NeuralError::EmptySplit(_) => (ExitKind::Data, "EmptySplit"),
        NeuralError::InvalidConfig(_) => (ExitKind::Usage, "InvalidConfig"),
        NeuralError::NumericFailure(_) => (ExitKind::Numeric, "NumericFailure"),
        NeuralError::Malformed(_) => (ExitKind::Data, "Malformed"),
        NeuralError::Io(_) => (ExitKind::Data, "Io"),
    }
}

impl From<NeuralError> for CliError {
    fn from(e: NeuralError) -> Self {
        let (kind, class) = neural_class(&e);
        CliError::from_display(kind, class, e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let (kind, class) = match &e {
            ModelError::UnknownKind(_) => (ExitKind::Usage, "UnknownKind"),
            ModelError::WrongKind(_) => (ExitKind::Usage, "WrongKind"),
            ModelError::SingleClass => (ExitKind::Data, "SingleClass"),
            ModelError::InvalidInput(_) => (ExitKind::Data, "InvalidInput"),
            ModelError::Malformed(_) => (ExitKind::Data, "Malformed"),
            ModelError::Neural(inner) => neural_class(inner),
            ModelError::Io(_) => (ExitKind::Data, "Io"),
        };
        CliError::from_display(kind, class, e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let class = match e {
            EvalError::LengthMismatch { .. } => "LengthMismatch",
            EvalError::Empty => "Empty",
            EvalError::Malformed(_) => "Malformed",
            EvalError::Io(_) => "Io",
        };
        CliError::from_display(ExitKind::Data, class, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_one_line() {
        let e = CliError::data("Malformed", "bad\nrow");
        assert_eq!(e.to_string(), "error[Malformed]: bad row");
    }

    #[test]
    fn numeric_failures_map_to_exit_four() {
        let e: CliError = ModelError::Neural(NeuralError::NumericFailure("nan".into())).into();
        assert_eq!((e.kind as i32, e.class), (4, "NumericFailure"));
        let e: CliError = LabelError::SingularCovariance.into();
        assert_eq!(e.kind as i32, 4);
    }
}
