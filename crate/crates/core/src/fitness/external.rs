//! Adapter to an external RNAfold-compatible folding program.
//!
//! Protocol: one sequence per line on the program's stdin; the reply is a
//! line of the form `<dot-bracket> (<energy>)`, optionally preceded by an
//! echo of the sequence. Internal padding spaces around the energy are
//! tolerated, e.g. `(((...))) ( -9.10)`.

use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::OnceLock;

use regex::Regex;

use super::{FitnessError, FitnessModel, FoldResult, SecondaryStructure};
use crate::seq::RnaSequence;

fn structure_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^([.()]+)\s+\(\s*([-+]?\d+(?:\.\d+)?)\s*\)\s*$").unwrap()
    })
}

/// Parses one structure/energy reply line against an expected length.
pub fn parse_fold_line(line: &str, expected_len: usize) -> Result<FoldResult, FitnessError> {
    let caps = structure_line_re()
        .captures(line.trim_end())
        .ok_or_else(|| FitnessError::ProtocolError { line: line.to_string() })?;
    let bracket = caps.get(1).unwrap().as_str();
    if bracket.len() != expected_len {
        return Err(FitnessError::LengthMismatch {
            expected: expected_len,
            got: bracket.len(),
        });
    }
    let energy: f64 = caps
        .get(2)
        .unwrap()
        .as_str()
        .parse()
        .map_err(|_| FitnessError::ProtocolError { line: line.to_string() })?;
    let structure = SecondaryStructure::from_dot_bracket(bracket)
        .map_err(|_| FitnessError::ProtocolError { line: line.to_string() })?;
    Ok(FoldResult { structure, energy })
}

/// Folds sequences by piping them through an external program. One
/// subprocess per call, so evaluation is serialized per instance.
#[derive(Debug, Clone)]
pub struct ExternalModel {
    program: String,
    args: Vec<String>,
}

impl ExternalModel {
    /// Splits a command string on whitespace into program + arguments.
    pub fn from_command(command: &str) -> Result<Self, FitnessError> {
        let mut parts = command.split_whitespace().map(String::from);
        let program = parts.next().ok_or_else(|| FitnessError::ProgramUnavailable {
            reason: "empty command".to_string(),
        })?;
        Ok(ExternalModel { program, args: parts.collect() })
    }

    pub fn command_line(&self) -> String {
        let mut out = self.program.clone();
        for a in &self.args {
            out.push(' ');
            out.push_str(a);
        }
        out
    }

    /// Checks that the program can be spawned at all.
    pub fn probe(&self) -> Result<(), FitnessError> {
        let child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| FitnessError::ProgramUnavailable { reason: e.to_string() })?;
        // Closing stdin lets well-behaved programs exit on their own.
        let _ = child.wait_with_output();
        Ok(())
    }

    /// Sends the sequence and parses the structure/energy reply.
    pub fn fold(&self, s: &RnaSequence) -> Result<FoldResult, FitnessError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| FitnessError::ProgramUnavailable { reason: e.to_string() })?;

        let text = s.to_string();
        {
            let stdin = child.stdin.as_mut().expect("stdin was piped");
            stdin
                .write_all(format!("{text}\n").as_bytes())
                .map_err(|e| FitnessError::ProgramUnavailable { reason: e.to_string() })?;
        }
        let output = child
            .wait_with_output()
            .map_err(|e| FitnessError::ProgramUnavailable { reason: e.to_string() })?;
        let stdout = String::from_utf8_lossy(&output.stdout);

        let mut first_candidate: Option<&str> = None;
        for line in stdout.lines() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.eq_ignore_ascii_case(&text) {
                continue; // echoed sequence line
            }
            if first_candidate.is_none() {
                first_candidate = Some(line);
            }
            match parse_fold_line(line, s.len()) {
                Ok(result) => return Ok(result),
                Err(e @ FitnessError::LengthMismatch { .. }) => return Err(e),
                Err(_) => continue,
            }
        }
        Err(FitnessError::ProtocolError {
            line: first_candidate.unwrap_or("").to_string(),
        })
    }
}

impl FitnessModel for ExternalModel {
    fn fitness(&self, s: &RnaSequence) -> Result<f64, FitnessError> {
        Ok(0.0 - self.fold(s)?.energy)
    }
}
