use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{AblationEvent, AblationReport, DistillReport, HarnessError, IterationReport, Result, RlReport};

/// One row of a phase's metric table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub phase: String,
    pub step: u64,
    pub values: BTreeMap<String, f64>,
}

/// Append-only metric store. Wall-clock durations are kept apart so the
/// CSVs stay reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    records: Vec<MetricsRecord>,
    pub wall_clock_secs: BTreeMap<String, f64>,
}

impl MetricsLog {
    /// Steps must strictly increase within a phase, and every row of a
    /// phase must carry the same metric names.
    pub fn push<'a>(&mut self, phase: &str, step: u64, values: impl IntoIterator<Item = (&'a str, f64)>) -> Result<()> {
        let values: BTreeMap<String, f64> = values.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        if let Some(last) = self.records.iter().rev().find(|r| r.phase == phase) {
            if step <= last.step {
                return Err(HarnessError::Metrics(format!(
                    "{phase}: step {step} does not follow {}",
                    last.step
                )));
            }
            if !last.values.keys().eq(values.keys()) {
                return Err(HarnessError::Metrics(format!("{phase}: metric names changed at step {step}")));
            }
        }
        self.records.push(MetricsRecord {
            phase: phase.to_string(),
            step,
            values,
        });
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn phase(&self, phase: &str) -> Vec<&MetricsRecord> {
        self.records.iter().filter(|r| r.phase == phase).collect()
    }

    /// Phase names in first-seen order.
    pub fn phases(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.phase.as_str()) {
                out.push(&r.phase);
            }
        }
        out
    }

    fn push_iterations(&mut self, phase: &str, rows: &[IterationReport]) -> Result<()> {
        for r in rows {
            let mut values = vec![
                ("selected", r.selected as f64),
                ("few_shot", r.few_shot as f64),
                ("mean_complexity", r.mean_complexity),
                ("teacher_rejected", r.teacher_rejected as f64),
                ("sft_sequences", r.sft_sequences as f64),
                ("checkpoints", r.checkpoints as f64),
                ("accuracy", r.eval.accuracy),
                ("stderr", r.eval.stderr),
                ("eval_runs", r.eval.runs as f64),
            ];
            const BINS: [&str; 10] = [
                "bin_0", "bin_1", "bin_2", "bin_3", "bin_4", "bin_5", "bin_6", "bin_7", "bin_8", "bin_9",
            ];
            values.extend(BINS.iter().zip(r.complexity_bins).map(|(k, c)| (*k, c as f64)));
            self.push(phase, r.iteration as u64, values)?;
        }
        Ok(())
    }

    pub fn add_distillation(&mut self, report: &DistillReport) -> Result<()> {
        let e = report.iteration0;
        self.push(
            "distill_baseline",
            0,
            [("accuracy", e.accuracy), ("stderr", e.stderr), ("eval_runs", e.runs as f64)],
        )?;
        self.push_iterations("distill", &report.iterations)?;
        self.push_iterations("distill_control", &report.control)
    }

    pub fn add_rl(&mut self, report: &RlReport) -> Result<()> {
        for s in &report.steps {
            self.push(
                "rl",
                s.step,
                [
                    ("mean_reward", s.mean_reward),
                    ("masked_fraction", s.masked_fraction),
                    ("mean_kl", s.mean_kl),
                    ("mean_abs_adv", s.mean_abs_adv),
                    ("mean_response_len", s.mean_response_len),
                    ("truncated_fraction", s.truncated_fraction),
                    ("easy", s.easy as f64),
                    ("medium", s.medium as f64),
                    ("hard", s.hard as f64),
                    ("flagged", s.flagged as f64),
                    ("injected", s.injected as f64),
                ],
            )?;
        }
        for (step, e) in &report.evals {
            self.push(
                "rl_eval",
                *step,
                [("accuracy", e.accuracy), ("stderr", e.stderr), ("eval_runs", e.runs as f64)],
            )?;
        }
        Ok(())
    }

    pub fn add_ablation(&mut self, report: &AblationReport) -> Result<()> {
        for (i, r) in report.runs.iter().enumerate() {
            self.push(
                "repetition",
                i as u64,
                [
                    ("self_repair", f64::from(u8::from(r.setting == "self_repair"))),
                    ("sequences", r.sequences as f64),
                    ("flagged", r.flagged as f64),
                    ("injected", r.injected as f64),
                    ("truncated", r.truncated as f64),
                    ("mean_length", r.mean_length),
                ],
            )?;
        }
        Ok(())
    }
}

pub fn write_metrics_csv(records: &[&MetricsRecord], path: &Path) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| HarnessError::Metrics("no records to write".into()))?;
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Metrics(e.to_string()))?;
    let mut header = vec!["step".to_string()];
    header.extend(first.values.keys().cloned());
    w.write_record(&header).map_err(|e| HarnessError::Metrics(e.to_string()))?;
    for r in records {
        let mut row = vec![r.step.to_string()];
        row.extend(r.values.values().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| HarnessError::Metrics(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(phase: &str, path: &Path) -> Result<Vec<MetricsRecord>> {
    let err = |e: csv::Error| HarnessError::Metrics(e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header: Vec<String> = r.headers().map_err(err)?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("step") {
        return Err(HarnessError::Metrics(format!("{}: first column must be step", path.display())));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(err)?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| HarnessError::Metrics(format!("{s:?}: {e}")));
        let step = row[0]
            .parse::<u64>()
            .map_err(|e| HarnessError::Metrics(format!("step {:?}: {e}", &row[0])))?;
        let values = header[1..]
            .iter()
            .zip(row.iter().skip(1))
            .map(|(k, v)| Ok((k.clone(), parse(v)?)))
            .collect::<Result<_>>()?;
        out.push(MetricsRecord {
            phase: phase.to_string(),
            step,
            values,
        });
    }
    Ok(out)
}

pub fn write_ablation_events(events: &[AblationEvent], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Metrics(e.to_string()))?;
    for e in events {
        w.serialize(e).map_err(|e| HarnessError::Metrics(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ablation_events(path: &Path) -> Result<Vec<AblationEvent>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Metrics(e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| HarnessError::Metrics(e.to_string()))
}

fn value(r: &MetricsRecord, key: &str) -> f64 {
    r.values.get(key).copied().unwrap_or(f64::NAN)
}

fn summary(log: &MetricsLog) -> String {
    let mut s = String::from("# Run summary\n");
    if let Some(base) = log.phase("distill_baseline").first() {
        let merged = log.phase("distill");
        let control = log.phase("distill_control");
        let _ = writeln!(s, "\n## Iterative distillation\n");
        let _ = writeln!(s, "| iteration | selected | few-shot | mean complexity | accuracy (merged) | accuracy (no merge) |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        let _ = writeln!(s, "| 0 | - | - | - | {:.4} | {:.4} |", value(base, "accuracy"), value(base, "accuracy"));
        for r in &merged {
            let c = control
                .iter()
                .find(|c| c.step == r.step)
                .map_or("-".to_string(), |c| format!("{:.4}", value(c, "accuracy")));
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.3} | {:.4} ± {:.4} | {c} |",
                r.step,
                value(r, "selected"),
                value(r, "few_shot"),
                value(r, "mean_complexity"),
                value(r, "accuracy"),
                value(r, "stderr"),
            );
        }
        let _ = writeln!(s, "\n## Selected samples by complexity\n");
        let _ = writeln!(s, "| iteration | 0.0 | 0.1 | 0.2 | 0.3 | 0.4 | 0.5 | 0.6 | 0.7 | 0.8 | 0.9 |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|");
        for r in &merged {
            let bins: Vec<String> = (0..10).map(|i| value(r, &format!("bin_{i}")).to_string()).collect();
            let _ = writeln!(s, "| {} | {} |", r.step, bins.join(" | "));
        }
    }
    let rl = log.phase("rl");
    if !rl.is_empty() {
        let w = rl.len().min(20);
        let mean = |rows: &[&MetricsRecord]| rows.iter().map(|r| value(r, "mean_reward")).sum::<f64>() / rows.len() as f64;
        let (first, last) = (mean(&rl[..w]), mean(&rl[rl.len() - w..]));
        let _ = writeln!(s, "\n## Reinforcement learning\n");
        let _ = writeln!(s, "| steps | first-{w} reward | last-{w} reward | gain | final masked fraction | final KL |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        let end = rl[rl.len() - 1];
        let _ = writeln!(
            s,
            "| {} | {first:.4} | {last:.4} | {:.4} | {:.4} | {:.5} |",
            rl.len(),
            last - first,
            value(end, "masked_fraction"),
            value(end, "mean_kl"),
        );
    }
    let rep = log.phase("repetition");
    if !rep.is_empty() {
        let _ = writeln!(s, "\n## Repetition self-repair\n");
        let _ = writeln!(s, "| setting | sequences | flagged | injected | truncated | mean length |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for r in rep {
            let name = if value(r, "self_repair") == 1.0 { "self-repair" } else { "baseline" };
            let _ = writeln!(
                s,
                "| {name} | {} | {} | {} | {} | {:.1} |",
                value(r, "sequences"),
                value(r, "flagged"),
                value(r, "injected"),
                value(r, "truncated"),
                value(r, "mean_length"),
            );
        }
    }
    if !log.wall_clock_secs.is_empty() {
        let _ = writeln!(s, "\n## Wall clock\n");
        for (phase, secs) in &log.wall_clock_secs {
            let _ = writeln!(s, "- {phase}: {secs:.2} s");
        }
    }
    s
}

/// Writes `<phase>.csv` for every phase with records, the ablation event
/// log when given, and `summary.md`. Returns the paths written.
pub fn emit_report(log: &MetricsLog, ablation: Option<&AblationReport>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if log.is_empty() {
        return Err(HarnessError::Metrics("nothing to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for phase in log.phases() {
        let path = out_dir.join(format!("{phase}.csv"));
        write_metrics_csv(&log.phase(phase), &path)?;
        written.push(path);
    }
    if let Some(a) = ablation {
        let path = out_dir.join("repetition_events.csv");
        write_ablation_events(&a.events, &path)?;
        written.push(path);
    }
    let path = out_dir.join("summary.md");
    fs::write(&path, summary(log))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_must_increase_and_names_stay_fixed() {
        let mut log = MetricsLog::default();
        log.push("a", 1, [("x", 1.0)]).unwrap();
        assert!(log.push("a", 1, [("x", 2.0)]).is_err());
        assert!(log.push("a", 2, [("y", 2.0)]).is_err());
        log.push("b", 0, [("y", 2.0)]).unwrap();
        assert_eq!(log.phases(), vec!["a", "b"]);
    }

    #[test]
    fn csv_round_trip_and_empty_phase() {
        let mut log = MetricsLog::default();
        for i in 0..5u64 {
            log.push("p", i, [("v", 0.1 * i as f64 + 1e-17), ("w", -(i as f64) / 3.0)]).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&log, None, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        assert!(!dir.path().join("rl.csv").exists());
        let back = read_metrics_csv("p", &dir.path().join("p.csv")).unwrap();
        let orig: Vec<MetricsRecord> = log.phase("p").into_iter().cloned().collect();
        assert_eq!(back, orig);
    }
}
