//! CSV serialization of simulated datasets: a `t,y` (or `t,y_symbol`) header
//! followed by one row per observation step.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::{Coin, Flip};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A value that can appear in a dataset column.
pub trait CsvValue: Sized {
    /// Column name used for observations of this type.
    const OBSERVATION_COLUMN: &'static str;
    fn encode(&self) -> String;
    fn decode(text: &str) -> Result<Self, String>;
}

impl CsvValue for f64 {
    const OBSERVATION_COLUMN: &'static str = "y";
    fn encode(&self) -> String {
        format!("{self:.16e}")
    }
    fn decode(text: &str) -> Result<Self, String> {
        text.parse().map_err(|_| format!("invalid real `{text}`"))
    }
}

impl CsvValue for usize {
    const OBSERVATION_COLUMN: &'static str = "y_symbol";
    fn encode(&self) -> String {
        self.to_string()
    }
    fn decode(text: &str) -> Result<Self, String> {
        text.parse().map_err(|_| format!("invalid symbol `{text}`"))
    }
}

impl CsvValue for Flip {
    const OBSERVATION_COLUMN: &'static str = "y_symbol";
    fn encode(&self) -> String {
        match self {
            Flip::Heads => "H".into(),
            Flip::Tails => "T".into(),
        }
    }
    fn decode(text: &str) -> Result<Self, String> {
        match text {
            "H" => Ok(Flip::Heads),
            "T" => Ok(Flip::Tails),
            _ => Err(format!("invalid flip `{text}`")),
        }
    }
}

impl CsvValue for Coin {
    const OBSERVATION_COLUMN: &'static str = "x_symbol";
    fn encode(&self) -> String {
        match self {
            Coin::Fair => "F".into(),
            Coin::Biased => "B".into(),
        }
    }
    fn decode(text: &str) -> Result<Self, String> {
        match text {
            "F" => Ok(Coin::Fair),
            "B" => Ok(Coin::Biased),
            _ => Err(format!("invalid coin `{text}`")),
        }
    }
}

pub fn write_dataset<Y: CsvValue, W: Write>(mut out: W, observations: &[Y]) -> io::Result<()> {
    writeln!(out, "t,{}", Y::OBSERVATION_COLUMN)?;
    for (t, y) in (1..).zip(observations) {
        writeln!(out, "{t},{}", y.encode())?;
    }
    out.flush()
}

/// States `x_0..=x_T` for debugging, header `t,x`.
pub fn write_states<S: CsvValue, W: Write>(mut out: W, states: &[S]) -> io::Result<()> {
    writeln!(out, "t,x")?;
    for (t, x) in states.iter().enumerate() {
        writeln!(out, "{t},{}", x.encode())?;
    }
    out.flush()
}

pub fn read_dataset<Y: CsvValue, R: BufRead>(input: R) -> Result<Vec<Y>, DatasetError> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let expected = format!("t,{}", Y::OBSERVATION_COLUMN);
    if header.trim() != expected {
        return Err(DatasetError::Parse {
            line: 1,
            message: format!("expected header `{expected}`, found `{}`", header.trim()),
        });
    }
    let mut observations = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| DatasetError::Parse {
            line: line_no,
            message,
        };
        let (t, value) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected two columns in `{line}`")))?;
        let t: usize = t.trim().parse().map_err(|_| err(format!("invalid step `{t}`")))?;
        if t != observations.len() + 1 {
            return Err(err(format!("expected step {}, found {t}", observations.len() + 1)));
        }
        observations.push(Y::decode(value.trim()).map_err(err)?);
    }
    Ok(observations)
}
