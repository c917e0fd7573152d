//! Rejection-control threshold schedules.
//!
//! Fixed schedules (`Constant`, `PerStep`) keep the marginal-likelihood
//! estimator unbiased. Dynamic schedules compute `c_t` from the first-pass
//! candidate weights of the running sweep and do not. A dynamic pilot sweep
//! can be frozen into a `PerStep` schedule with [`pilot_record`] and saved
//! with [`save_schedule`] for unbiased production runs.

use std::fmt::Write as _;

use thiserror::Error;

use crate::filters::SweepResult;
use crate::logspace::ln_weight;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("invalid threshold {0}")]
    InvalidThreshold(f64),
    #[error("quantile {0} outside (0, 1)")]
    InvalidQuantile(f64),
    #[error("mixture weights {0:?} must be nonnegative and sum to 1")]
    InvalidMixture([f64; 3]),
    #[error("dynamic schedule needs first-pass weights")]
    MissingFirstPass,
    #[error("expected {expected} first-pass weights, got {got}")]
    FirstPassLength { expected: usize, got: usize },
    #[error("per-step schedule has {len} entries, step {t} requested")]
    StepOutOfRange { t: usize, len: usize },
    #[error("pilot sweep recorded no thresholds")]
    NoPilotThresholds,
    #[error("line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("invalid threshold `{0}`")]
    InvalidThreshold(String),
    #[error("malformed line `{0}`")]
    Malformed(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("steps must be numbered consecutively from 1, found {0}")]
    StepOrder(usize),
    #[error("missing `variant:` header")]
    MissingVariant,
    #[error("missing parameter `{0}`")]
    MissingParameter(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A realized threshold for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `c_t > 0`
    Value(f64),
    /// Fallback used when a threshold evaluates to zero: every candidate is
    /// accepted with its own weight.
    AcceptAll,
}

impl Threshold {
    /// `ln c_t`, or `None` for [`Threshold::AcceptAll`].
    pub fn log_value(&self) -> Option<f64> {
        match *self {
            Threshold::Value(c) => Some(c.ln()),
            Threshold::AcceptAll => None,
        }
    }

    fn from_log(log_c: f64) -> Threshold {
        let c = log_c.exp();
        if c > 0.0 {
            Threshold::Value(c)
        } else {
            Threshold::AcceptAll
        }
    }

    fn validate(&self) -> Result<(), ScheduleError> {
        match *self {
            Threshold::Value(c) if !(c.is_finite() && c > 0.0) => {
                Err(ScheduleError::InvalidThreshold(c))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSchedule {
    Constant(f64),
    PerStep(Vec<Threshold>),
    /// Quantile `q ∈ (0, 1)` of the first-pass weights, linear interpolation
    /// between order statistics.
    DynamicQuantile(f64),
    /// `p1·min + p2·mean + p3·max` of the first-pass weights.
    DynamicWeightedMma([f64; 3]),
}

impl ThresholdSchedule {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        match self {
            ThresholdSchedule::Constant(c) => Threshold::Value(*c).validate(),
            ThresholdSchedule::PerStep(values) => values.iter().try_for_each(Threshold::validate),
            ThresholdSchedule::DynamicQuantile(q) => {
                if *q > 0.0 && *q < 1.0 {
                    Ok(())
                } else {
                    Err(ScheduleError::InvalidQuantile(*q))
                }
            }
            ThresholdSchedule::DynamicWeightedMma(p) => {
                let ok = p.iter().all(|v| v.is_finite() && *v >= 0.0)
                    && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
                if ok {
                    Ok(())
                } else {
                    Err(ScheduleError::InvalidMixture(*p))
                }
            }
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(
            self,
            ThresholdSchedule::DynamicQuantile(_) | ThresholdSchedule::DynamicWeightedMma(_)
        )
    }

    /// Whether a PF-RC sweep under this schedule yields an unbiased estimate.
    pub fn is_unbiased(&self) -> bool {
        !self.is_dynamic()
    }

    /// Short label used in summary tables.
    pub fn label(&self) -> String {
        match self {
            ThresholdSchedule::Constant(c) => format!("{c:e}"),
            ThresholdSchedule::PerStep(_) => "per-step".to_string(),
            ThresholdSchedule::DynamicQuantile(q) => format!("q={q}"),
            ThresholdSchedule::DynamicWeightedMma([a, b, c]) => format!("mma={a}/{b}/{c}"),
        }
    }
}

/// Threshold `c_t` for step `t` (1-based), in linear units.
///
/// Dynamic variants require the `N + 1` first-pass candidate weights; a
/// computed threshold of zero yields [`Threshold::AcceptAll`].
pub fn threshold_for_step(
    schedule: &ThresholdSchedule,
    t: usize,
    first_pass_weights: Option<&[f64]>,
) -> Result<Threshold, ScheduleError> {
    let logs = first_pass_weights.map(|ws| ws.iter().map(|&w| ln_weight(w)).collect::<Vec<_>>());
    let expected = first_pass_weights.map(|ws| ws.len());
    log_threshold_for_step(schedule, t, logs.as_deref(), expected)
}

/// Log-domain variant of [`threshold_for_step`] used by the filters.
///
/// `expected_len`, when given, is the required number of first-pass weights.
pub(crate) fn log_threshold_for_step(
    schedule: &ThresholdSchedule,
    t: usize,
    first_pass_log_weights: Option<&[f64]>,
    expected_len: Option<usize>,
) -> Result<Threshold, ScheduleError> {
    match schedule {
        ThresholdSchedule::Constant(c) => Ok(Threshold::Value(*c)),
        ThresholdSchedule::PerStep(values) => values
            .get(t.wrapping_sub(1))
            .copied()
            .ok_or(ScheduleError::StepOutOfRange {
                t,
                len: values.len(),
            }),
        ThresholdSchedule::DynamicQuantile(q) => {
            let lw = dynamic_input(first_pass_log_weights, expected_len)?;
            Ok(Threshold::from_log(log_quantile(lw, *q)))
        }
        ThresholdSchedule::DynamicWeightedMma(p) => {
            let lw = dynamic_input(first_pass_log_weights, expected_len)?;
            Ok(Threshold::from_log(log_weighted_mma(lw, *p)))
        }
    }
}

fn dynamic_input(
    weights: Option<&[f64]>,
    expected_len: Option<usize>,
) -> Result<&[f64], ScheduleError> {
    let weights = weights.ok_or(ScheduleError::MissingFirstPass)?;
    if weights.is_empty() {
        return Err(ScheduleError::MissingFirstPass);
    }
    if let Some(expected) = expected_len {
        if expected != weights.len() {
            return Err(ScheduleError::FirstPassLength {
                expected,
                got: weights.len(),
            });
        }
    }
    Ok(weights)
}

/// `ln(a + f·(b − a))` for `a ≤ b` given `ln a`, `ln b`.
fn log_lerp(log_a: f64, log_b: f64, frac: f64) -> f64 {
    if frac == 0.0 || log_a == log_b {
        return log_a;
    }
    if log_a == f64::NEG_INFINITY {
        return frac.ln() + log_b;
    }
    log_a + (frac * (log_b - log_a).exp_m1()).ln_1p()
}

fn log_quantile(log_weights: &[f64], q: f64) -> f64 {
    let mut sorted = log_weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    log_lerp(sorted[lo], sorted[hi], h - lo as f64)
}

fn log_weighted_mma(log_weights: &[f64], p: [f64; 3]) -> f64 {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let min = log_weights.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = crate::logspace::log_mean_exp(log_weights);
    let scaled = p[0] * (min - max).exp() + p[1] * (mean - max).exp() + p[2];
    max + scaled.ln()
}

/// Freeze the thresholds realized by a pilot sweep into a fixed schedule.
pub fn pilot_record<S>(
    schedule: &ThresholdSchedule,
    sweep: &SweepResult<S>,
) -> Result<ThresholdSchedule, ScheduleError> {
    schedule.validate()?;
    if sweep.thresholds.is_empty() {
        return Err(ScheduleError::NoPilotThresholds);
    }
    Ok(ThresholdSchedule::PerStep(sweep.thresholds.clone()))
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serialize a schedule to the line-oriented text format: a `variant:` line,
/// then parameter lines or, for per-step schedules, one tab-separated
/// `t value` line per step where value is a real or `accept-all`.
pub fn save_schedule(schedule: &ThresholdSchedule) -> String {
    let mut out = String::new();
    match schedule {
        ThresholdSchedule::Constant(c) => {
            out.push_str("variant: constant\n");
            let _ = writeln!(out, "c_t: {}", fmt_real(*c));
        }
        ThresholdSchedule::PerStep(values) => {
            out.push_str("variant: per-step\n");
            for (i, v) in values.iter().enumerate() {
                let value = match v {
                    Threshold::Value(c) => fmt_real(*c),
                    Threshold::AcceptAll => "accept-all".to_string(),
                };
                let _ = writeln!(out, "{}\t{}", i + 1, value);
            }
        }
        ThresholdSchedule::DynamicQuantile(q) => {
            out.push_str("variant: dynamic-quantile\n");
            let _ = writeln!(out, "q: {}", fmt_real(*q));
        }
        ThresholdSchedule::DynamicWeightedMma(p) => {
            out.push_str("variant: dynamic-mma\n");
            let _ = writeln!(
                out,
                "p: {} {} {}",
                fmt_real(p[0]),
                fmt_real(p[1]),
                fmt_real(p[2])
            );
        }
    }
    out
}

fn parse_threshold_value(text: &str, line: usize) -> Result<Threshold, ScheduleError> {
    if text == "accept-all" {
        return Ok(Threshold::AcceptAll);
    }
    let invalid = || ScheduleError::Parse {
        line,
        kind: ParseErrorKind::InvalidThreshold(text.to_string()),
    };
    let c: f64 = text.parse().map_err(|_| invalid())?;
    if c.is_finite() && c > 0.0 {
        Ok(Threshold::Value(c))
    } else {
        Err(invalid())
    }
}

fn parse_param(text: &str, line: usize) -> Result<f64, ScheduleError> {
    text.parse().map_err(|_| ScheduleError::Parse {
        line,
        kind: ParseErrorKind::InvalidParameter(text.to_string()),
    })
}

/// Parse the text format written by [`save_schedule`].
///
/// Blank lines and `#` comments are ignored. A bare `c_t:` line without a
/// `variant:` header is read as a constant schedule.
pub fn load_schedule(text: &str) -> Result<ThresholdSchedule, ScheduleError> {
    let mut variant: Option<(String, usize)> = None;
    let mut constant: Option<f64> = None;
    let mut quantile: Option<f64> = None;
    let mut mixture: Option<[f64; 3]> = None;
    let mut steps: Vec<Threshold> = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let malformed = || ScheduleError::Parse {
            line,
            kind: ParseErrorKind::Malformed(content.to_string()),
        };
        if let Some((key, value)) = content.split_once(':') {
            let value = value.trim();
            match key.trim() {
                "variant" => variant = Some((value.to_string(), line)),
                "c_t" => match parse_threshold_value(value, line)? {
                    Threshold::Value(c) => constant = Some(c),
                    Threshold::AcceptAll => {
                        return Err(ScheduleError::Parse {
                            line,
                            kind: ParseErrorKind::InvalidThreshold(value.to_string()),
                        })
                    }
                },
                "q" => quantile = Some(parse_param(value, line)?),
                "p" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(malformed());
                    }
                    mixture = Some([
                        parse_param(parts[0], line)?,
                        parse_param(parts[1], line)?,
                        parse_param(parts[2], line)?,
                    ]);
                }
                _ => return Err(malformed()),
            }
        } else {
            let (t, value) = content.split_once('\t').ok_or_else(malformed)?;
            let t: usize = t.trim().parse().map_err(|_| malformed())?;
            if t != steps.len() + 1 {
                return Err(ScheduleError::Parse {
                    line,
                    kind: ParseErrorKind::StepOrder(t),
                });
            }
            steps.push(parse_threshold_value(value.trim(), line)?);
        }
    }

    let (name, header_line) = match variant {
        Some(v) => v,
        None if constant.is_some() => ("constant".to_string(), 1),
        None => {
            return Err(ScheduleError::Parse {
                line: last_line.max(1),
                kind: ParseErrorKind::MissingVariant,
            })
        }
    };
    let missing = |name: &'static str| ScheduleError::Parse {
        line: header_line,
        kind: ParseErrorKind::MissingParameter(name),
    };
    let schedule = match name.as_str() {
        "constant" => ThresholdSchedule::Constant(constant.ok_or_else(|| missing("c_t"))?),
        "per-step" => ThresholdSchedule::PerStep(steps),
        "dynamic-quantile" => ThresholdSchedule::DynamicQuantile(quantile.ok_or_else(|| missing("q"))?),
        "dynamic-mma" => ThresholdSchedule::DynamicWeightedMma(mixture.ok_or_else(|| missing("p"))?),
        other => {
            return Err(ScheduleError::Parse {
                line: header_line,
                kind: ParseErrorKind::UnknownVariant(other.to_string()),
            })
        }
    };
    schedule.validate().map_err(|e| ScheduleError::Parse {
        line: header_line,
        kind: ParseErrorKind::InvalidParameter(e.to_string()),
    })?;
    Ok(schedule)
}
