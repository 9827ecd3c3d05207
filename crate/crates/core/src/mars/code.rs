//! Four-stage code reward: extraction, syntax check, per-case execution,
//! output comparison.

use std::io::Write;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lang, MarsError};
use crate::data::CodeTestCase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeScheme {
    Staged,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeStage {
    Extraction,
    Syntax,
    Execution,
    Comparison,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeExecResult {
    pub stage_reached: CodeStage,
    pub per_case: Vec<CaseResult>,
    pub syntax_ok: bool,
}

impl CodeExecResult {
    pub fn pass_rate(&self) -> f64 {
        if self.per_case.is_empty() {
            return 0.0;
        }
        self.per_case.iter().filter(|c| c.pass).count() as f64 / self.per_case.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Completed { stdout: String, success: bool },
    TimedOut,
}

/// Executes untrusted programs. `Err` means the runner itself broke, not
/// that the program failed.
pub trait CodeRunner: Send + Sync {
    fn check_syntax(&self, program: &str) -> Result<Result<(), String>, MarsError>;
    fn run(&self, program: &str, stdin: &str, timeout: Duration) -> Result<RunOutcome, MarsError>;
}

/// In-process interpreter for the built-in integer language. Timeouts are
/// a step budget proportional to the case timeout.
#[derive(Debug, Clone, Copy)]
pub struct BuiltinRunner {
    pub steps_per_ms: u64,
}

impl Default for BuiltinRunner {
    fn default() -> Self {
        Self { steps_per_ms: 1_000 }
    }
}

impl CodeRunner for BuiltinRunner {
    fn check_syntax(&self, program: &str) -> Result<Result<(), String>, MarsError> {
        Ok(lang::parse(program).map(|_| ()))
    }

    fn run(&self, program: &str, stdin: &str, timeout: Duration) -> Result<RunOutcome, MarsError> {
        let prog = lang::parse(program).map_err(|e| MarsError::Runner(format!("unparsable program: {e}")))?;
        let budget = self.steps_per_ms.saturating_mul(timeout.as_millis().max(1) as u64);
        Ok(match prog.run(stdin, budget) {
            lang::Outcome::Finished { stdout } => RunOutcome::Completed { stdout, success: true },
            lang::Outcome::RuntimeError { stdout, .. } => RunOutcome::Completed { stdout, success: false },
            lang::Outcome::StepLimit { .. } => RunOutcome::TimedOut,
        })
    }
}

/// Runs programs with an external interpreter: the program is written to a
/// temporary file passed as the last argument, the test input goes to
/// stdin, and the verdict comes from the exit status and stdout.
#[derive(Debug, Clone)]
pub struct ProcessRunner {
    pub command: String,
    pub args: Vec<String>,
    /// Arguments for a syntax-only invocation; `None` skips the check.
    pub syntax_args: Option<Vec<String>>,
    pub extension: String,
}

impl ProcessRunner {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            args: Vec::new(),
            syntax_args: None,
            extension: "txt".into(),
        }
    }

    fn invoke(&self, args: &[String], program: &str, stdin: &str, timeout: Duration) -> Result<RunOutcome, MarsError> {
        let crash = |e: std::io::Error| MarsError::Runner(format!("{}: {e}", self.command));
        let mut file = tempfile::Builder::new()
            .suffix(&format!(".{}", self.extension))
            .tempfile()
            .map_err(crash)?;
        file.write_all(program.as_bytes()).map_err(crash)?;
        file.flush().map_err(crash)?;
        let mut child = Command::new(&self.command)
            .args(args)
            .arg(file.path())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(crash)?;
        if let Some(mut pipe) = child.stdin.take() {
            // a program that exits without reading closes the pipe early
            let _ = pipe.write_all(stdin.as_bytes());
        }
        let mut stdout_pipe = child.stdout.take().expect("stdout is piped");
        let reader = std::thread::spawn(move || {
            let mut buf = String::new();
            let _ = std::io::Read::read_to_string(&mut stdout_pipe, &mut buf);
            buf
        });
        let deadline = Instant::now() + timeout;
        let status = loop {
            if let Some(status) = child.try_wait().map_err(crash)? {
                break Some(status);
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            std::thread::sleep(Duration::from_millis(2));
        };
        let stdout = reader
            .join()
            .map_err(|_| MarsError::Runner("stdout reader panicked".into()))?;
        Ok(match status {
            Some(s) => RunOutcome::Completed {
                stdout,
                success: s.success(),
            },
            None => RunOutcome::TimedOut,
        })
    }
}

impl CodeRunner for ProcessRunner {
    fn check_syntax(&self, program: &str) -> Result<Result<(), String>, MarsError> {
        let Some(args) = &self.syntax_args else {
            return Ok(Ok(()));
        };
        match self.invoke(args, program, "", Duration::from_secs(10))? {
            RunOutcome::Completed { success: true, .. } => Ok(Ok(())),
            RunOutcome::Completed { .. } => Ok(Err("syntax check failed".into())),
            RunOutcome::TimedOut => Err(MarsError::Runner("syntax check timed out".into())),
        }
    }

    fn run(&self, program: &str, stdin: &str, timeout: Duration) -> Result<RunOutcome, MarsError> {
        self.invoke(&self.args, program, stdin, timeout)
    }
}

/// Body of the last fenced block (```lang ... ```), if any.
pub fn extract_code(response: &str) -> Option<String> {
    let mut blocks = Vec::new();
    let mut rest = response;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let Some(close) = after[body_start..].find("```") else {
            break;
        };
        blocks.push(&after[body_start..body_start + close]);
        rest = &after[body_start + close + 3..];
    }
    blocks
        .last()
        .map(|b| b.trim().to_string())
        .filter(|b| !b.is_empty())
}

fn outputs_match(actual: &str, expected: &str) -> bool {
    let lines = |s: &str| -> Vec<String> {
        s.trim_end()
            .lines()
            .map(|l| l.trim_end().to_string())
            .collect()
    };
    lines(actual) == lines(expected)
}

pub fn execute_code(
    response: &str,
    cases: &[CodeTestCase],
    runner: &dyn CodeRunner,
) -> Result<CodeExecResult, MarsError> {
    let Some(program) = extract_code(response) else {
        return Ok(CodeExecResult {
            stage_reached: CodeStage::Extraction,
            per_case: Vec::new(),
            syntax_ok: false,
        });
    };
    if runner.check_syntax(&program)?.is_err() {
        return Ok(CodeExecResult {
            stage_reached: CodeStage::Syntax,
            per_case: Vec::new(),
            syntax_ok: false,
        });
    }
    let per_case = cases
        .par_iter()
        .map(|case| {
            let timeout = Duration::from_millis(case.timeout_ms);
            Ok(CaseResult {
                pass: match runner.run(&program, &case.input, timeout)? {
                    RunOutcome::Completed { stdout, success } => {
                        success && outputs_match(&stdout, &case.expected_output)
                    }
                    RunOutcome::TimedOut => false,
                },
            })
        })
        .collect::<Result<Vec<_>, MarsError>>()?;
    Ok(CodeExecResult {
        stage_reached: CodeStage::Comparison,
        per_case,
        syntax_ok: true,
    })
}

pub const SYNTAX_ERROR_REWARD: f64 = -0.8;
pub const ALL_FAIL_REWARD: f64 = -0.5;
pub const PARTIAL_REWARD: f64 = 0.1;
pub const FULL_PASS_REWARD: f64 = 1.0;

/// Maps an execution result to a reward. Programs that cannot be extracted
/// are scored like syntax errors.
pub fn code_reward_from(result: &CodeExecResult, scheme: CodeScheme) -> f64 {
    if !result.syntax_ok {
        return SYNTAX_ERROR_REWARD;
    }
    let rate = result.pass_rate();
    match scheme {
        _ if rate >= 1.0 => FULL_PASS_REWARD,
        CodeScheme::Staged if rate == 0.0 => ALL_FAIL_REWARD,
        CodeScheme::Staged => PARTIAL_REWARD,
        CodeScheme::Continuous => ALL_FAIL_REWARD + rate,
    }
}

pub fn reward_code(
    response: &str,
    cases: &[CodeTestCase],
    scheme: CodeScheme,
    runner: &dyn CodeRunner,
) -> Result<f64, MarsError> {
    if cases.is_empty() {
        return Err(MarsError::Config("code task has no test cases".into()));
    }
    Ok(code_reward_from(&execute_code(response, cases, runner)?, scheme))
}
