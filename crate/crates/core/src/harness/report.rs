use super::plot::{line_chart, Line};
use super::{create_file, Group, RunOutput};
use crate::error::{Error, Result};
use crate::models::Architecture;
use crate::stats::{format_test, Metric, TTestResult};
use crate::training::{format_float, MetricSeries};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Number of leading logged steps kept as the early-curve extract.
pub const EARLY_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub metrics_file: String,
    pub final_loss: f64,
    pub final_perplexity: f64,
    pub min_perplexity: f64,
    pub heldout_loss: f64,
    pub heldout_perplexity: f64,
    /// Median successive loss change over the early extract; negative means
    /// the curve is falling.
    pub early_median_delta: Option<f64>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { (xs[n / 2 - 1] + xs[n / 2]) / 2.0 })
}

impl RunSummary {
    pub(super) fn new(run: &RunOutput, metrics_file: String) -> Result<RunSummary> {
        let last = run
            .metrics
            .records
            .last()
            .ok_or_else(|| Error::BadMetrics(format!("{metrics_file} has no records")))?;
        let early = run.metrics.losses().into_iter().take(EARLY_STEPS).collect::<Vec<_>>();
        Ok(RunSummary {
            seed: run.seed,
            metrics_file,
            final_loss: last.loss,
            final_perplexity: last.perplexity,
            min_perplexity: run.metrics.min_perplexity().unwrap_or(last.perplexity),
            heldout_loss: run.heldout.loss,
            heldout_perplexity: run.heldout.perplexity,
            early_median_delta: median(early.windows(2).map(|w| w[1] - w[0]).collect()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: Group,
    /// Mean over the pooled stabilized-window losses of all seeds.
    pub mean_stabilized_loss: f64,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub comparison: String,
    pub metric: Metric,
    #[serde(flatten)]
    pub result: TTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub architecture: Architecture,
    pub vocab_size: usize,
    pub parameter_count: usize,
    pub seeds: Vec<u64>,
    pub total_steps: usize,
    pub window_start: f64,
    pub groups: Vec<GroupSummary>,
    pub comparisons: Vec<Comparison>,
    /// Full series, in group then seed order. Stored as CSV, not in JSON.
    #[serde(skip)]
    pub series: Vec<MetricSeries>,
}

impl RunReport {
    pub fn group(&self, group: Group) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.group == group)
    }

    pub fn comparison(&self, other: Group, metric: Metric) -> Option<&Comparison> {
        let name = format!("{} vs {}", Group::Natural, other);
        self.comparisons.iter().find(|c| c.comparison == name && c.metric == metric)
    }

    fn series_of(&self, group: Group) -> Vec<&MetricSeries> {
        self.series.iter().filter(|s| s.group == group.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearitySummary {
    /// Groups by ascending mean stabilized loss, ties broken by name.
    pub ranking: Vec<(Group, f64)>,
    pub parity_below_reversed: bool,
}

pub fn linearity_gradient_summary(report: &RunReport) -> Result<LinearitySummary> {
    let impossible = report.groups.iter().filter(|g| g.group.is_impossible()).count();
    if impossible < 2 {
        return Err(Error::TooFewImpossibleGroups(impossible));
    }
    let mut ranking: Vec<(Group, f64)> = report.groups.iter().map(|g| (g.group, g.mean_stabilized_loss)).collect();
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.as_str().cmp(b.0.as_str())));
    let pos = |g: Group| ranking.iter().position(|(x, _)| *x == g);
    let parity_below_reversed = pos(Group::ParityNegation) < pos(Group::Reversed);
    Ok(LinearitySummary {
        ranking,
        parity_below_reversed,
    })
}

/// Human-readable report: perplexity table, test lines, group ordering.
pub fn render_text(report: &RunReport) -> String {
    let mut s = String::new();
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(
        s,
        "Experiment {} ({}, {} parameters, vocabulary {}, seeds {}, {} steps)",
        report.experiment,
        report.architecture,
        report.parameter_count,
        report.vocab_size,
        seeds.join(", "),
        report.total_steps
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "Final and minimum perplexities");
    let _ = writeln!(s, "{:<16} {:>5} {:>12} {:>12} {:>12}", "group", "seed", "final", "minimum", "held-out");
    for g in &report.groups {
        for r in &g.runs {
            let _ = writeln!(
                s,
                "{:<16} {:>5} {:>12.4} {:>12.4} {:>12.4}",
                g.group.as_str(),
                r.seed,
                r.final_perplexity,
                r.min_perplexity,
                r.heldout_perplexity
            );
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Mean stabilized loss (window from {:.0}% of each run)", report.window_start * 100.0);
    for g in &report.groups {
        let _ = writeln!(s, "{:<16} {:.4}", g.group.as_str(), g.mean_stabilized_loss);
    }
    if !report.comparisons.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Welch's t-tests");
        for c in &report.comparisons {
            let _ = writeln!(s, "{}, {}: {}", c.comparison, c.metric.as_str(), format_test(&c.result));
        }
    }
    if let Ok(lin) = linearity_gradient_summary(report) {
        let order: Vec<&str> = lin.ranking.iter().map(|(g, _)| g.as_str()).collect();
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "Ordering by mean stabilized loss: {} (parity-negation below reversed: {})",
            order.join(" < "),
            if lin.parity_below_reversed { "yes" } else { "no" }
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            other => Err(format!("unknown report format {other:?} (expected json or text)")),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = create_file(path)?;
    f.write_all(contents.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|source| Error::Unwritable {
            path: path.to_path_buf(),
            source,
        })
}

/// Mean over seeds at each logged step (seeds share the step grid).
fn mean_curve(series: &[&MetricSeries], take: usize) -> Vec<(usize, f64, f64)> {
    let Some(first) = series.first() else {
        return Vec::new();
    };
    let n = series.len() as f64;
    first
        .records
        .iter()
        .take(take)
        .enumerate()
        .map(|(i, r)| {
            let loss = series.iter().map(|s| s.records[i].loss).sum::<f64>() / n;
            let ppl = series.iter().map(|s| s.records[i].perplexity).sum::<f64>() / n;
            (r.step, loss, ppl)
        })
        .collect()
}

/// Writes the report in `format` under `dir` and returns the files written.
/// The text format also writes the perplexity table, curve data and plots.
pub fn emit_report(report: &RunReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };
    match format {
        ReportFormat::Json => {
            let mut json = serde_json::to_string_pretty(report)?;
            json.push('\n');
            put("report.json", json)?;
        }
        ReportFormat::Text => {
            put("report.txt", render_text(report))?;
            let mut table = String::from("group,seed,final_loss,final_perplexity,min_perplexity,heldout_perplexity\n");
            for g in &report.groups {
                for r in &g.runs {
                    let _ = writeln!(
                        table,
                        "{},{},{},{},{},{}",
                        g.group,
                        r.seed,
                        format_float(r.final_loss),
                        format_float(r.final_perplexity),
                        format_float(r.min_perplexity),
                        format_float(r.heldout_perplexity)
                    );
                }
            }
            put("perplexities.csv", table)?;
            let mut overall = Vec::new();
            let mut early = Vec::new();
            let mut ppl = Vec::new();
            for g in &report.groups {
                let series = report.series_of(g.group);
                for (suffix, take) in [("overall", usize::MAX), ("first50", EARLY_STEPS)] {
                    let mut csv = String::from("step,mean_loss,mean_perplexity\n");
                    for (step, loss, p) in mean_curve(&series, take) {
                        let _ = writeln!(csv, "{step},{},{}", format_float(loss), format_float(p));
                    }
                    put(&format!("curves/{}_{suffix}.csv", g.group), csv)?;
                }
                let label = g.group.as_str().to_string();
                let full = mean_curve(&series, usize::MAX);
                overall.push(Line::new(&label, full.iter().map(|&(s, l, _)| (s as f64, l))));
                ppl.push(Line::new(&label, full.iter().map(|&(s, _, p)| (s as f64, p))));
                early.push(Line::new(
                    &label,
                    mean_curve(&series, EARLY_STEPS).iter().map(|&(s, l, _)| (s as f64, l)),
                ));
            }
            put("plots/loss.svg", line_chart("Training loss (mean over seeds)", "step", "loss", &overall))?;
            put("plots/first50.svg", line_chart("First 50 logged steps", "step", "loss", &early))?;
            put("plots/perplexity.svg", line_chart("Training perplexity", "step", "perplexity", &ppl))?;
        }
    }
    Ok(written)
}

/// Reads `report.json` from an experiment directory together with the
/// metric CSVs it references.
pub fn load_report(dir: &Path) -> Result<RunReport> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingCorpus(path.clone()),
        _ => Error::Io(e),
    })?;
    let mut report: RunReport = serde_json::from_str(&text)?;
    let mut series = Vec::new();
    for g in &report.groups {
        for r in &g.runs {
            let f = fs::File::open(dir.join(&r.metrics_file))
                .map_err(|_| Error::BadMetrics(format!("cannot open {}", r.metrics_file)))?;
            series.push(MetricSeries::read_csv(f)?);
        }
    }
    report.series = series;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(p: f64, t: f64, df: f64, d: f64) -> TTestResult {
        TTestResult {
            t,
            df,
            p_two_sided: p,
            cohen_d: d,
            n1: 150,
            n2: 150,
            means: [1.0, 2.0],
            variances: [0.5, 0.5],
        }
    }

    fn group(g: Group, loss: f64) -> GroupSummary {
        GroupSummary {
            group: g,
            mean_stabilized_loss: loss,
            runs: vec![RunSummary {
                seed: 0,
                metrics_file: format!("metrics/{g}_seed0.csv"),
                final_loss: loss,
                final_perplexity: loss.exp(),
                min_perplexity: loss.exp() * 0.99,
                heldout_loss: loss,
                heldout_perplexity: loss.exp(),
                early_median_delta: Some(-0.1),
            }],
        }
    }

    fn report(groups: Vec<GroupSummary>, comparisons: Vec<Comparison>) -> RunReport {
        RunReport {
            experiment: "1".into(),
            architecture: Architecture::Transformer,
            vocab_size: 246,
            parameter_count: 1000,
            seeds: vec![0],
            total_steps: 10,
            window_start: 0.5,
            groups,
            comparisons,
            series: Vec::new(),
        }
    }

    #[test]
    fn linearity_ranking_and_flag() {
        let r = report(
            vec![
                group(Group::Reversed, 3.1),
                group(Group::Natural, 1.2),
                group(Group::ParityNegation, 2.0),
            ],
            vec![],
        );
        let lin = linearity_gradient_summary(&r).unwrap();
        let order: Vec<Group> = lin.ranking.iter().map(|x| x.0).collect();
        assert_eq!(order, vec![Group::Natural, Group::ParityNegation, Group::Reversed]);
        assert!(lin.parity_below_reversed);
    }

    #[test]
    fn linearity_ties_fall_back_to_name() {
        let r = report(
            vec![
                group(Group::Reversed, 2.0),
                group(Group::ParityNegation, 2.0),
                group(Group::Natural, 2.0),
            ],
            vec![],
        );
        let lin = linearity_gradient_summary(&r).unwrap();
        let order: Vec<Group> = lin.ranking.iter().map(|x| x.0).collect();
        assert_eq!(order, vec![Group::Natural, Group::ParityNegation, Group::Reversed]);
        let two = report(vec![group(Group::Natural, 1.0), group(Group::Reversed, 2.0)], vec![]);
        assert!(matches!(linearity_gradient_summary(&two), Err(Error::TooFewImpossibleGroups(1))));
    }

    #[test]
    fn text_golden() {
        let r = report(
            vec![
                group(Group::Natural, 1.0),
                group(Group::Reversed, 2.0),
                group(Group::ParityNegation, 1.5),
            ],
            vec![
                Comparison {
                    comparison: "natural vs reversed".into(),
                    metric: Metric::Loss,
                    result: result(0.0004, -19.66, 305.0, -2.2),
                },
                Comparison {
                    comparison: "natural vs parity-negation".into(),
                    metric: Metric::Perplexity,
                    result: result(0.223, 1.22, 799.9, 0.09),
                },
            ],
        );
        let expected = "\
Experiment 1 (transformer, 1000 parameters, vocabulary 246, seeds 0, 10 steps)

Final and minimum perplexities
group             seed        final      minimum     held-out
natural              0       2.7183       2.6911       2.7183
reversed             0       7.3891       7.3152       7.3891
parity-negation      0       4.4817       4.4369       4.4817

Mean stabilized loss (window from 50% of each run)
natural          1.0000
reversed         2.0000
parity-negation  1.5000

Welch's t-tests
natural vs reversed, loss: p<.001, t(305.0)=-19.66, Cohen's d=-2.20
natural vs parity-negation, perplexity: p=.223, t(799.9)=1.22, Cohen's d=0.09

Ordering by mean stabilized loss: natural < parity-negation < reversed (parity-negation below reversed: yes)
";
        assert_eq!(render_text(&r), expected);
    }

    #[test]
    fn empty_comparisons_render_tables_only() {
        let text = render_text(&report(vec![group(Group::Natural, 1.0)], vec![]));
        assert!(text.contains("Final and minimum perplexities"));
        assert!(!text.contains("t("));
        assert!(!text.contains("Ordering"));
    }

    #[test]
    fn json_records_carry_test_fields() {
        let c = Comparison {
            comparison: "natural vs reversed".into(),
            metric: Metric::Loss,
            result: result(0.5, 1.0, 8.0, 0.5),
        };
        let v = serde_json::to_value(&c).unwrap();
        for key in ["comparison", "metric", "t", "df", "p", "d", "n1", "n2", "means", "variances"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
