use std::collections::BTreeMap;

use super::benchmark::Scenario;
use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Noise,
    Generation,
    Intervention,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Noise, Task::Generation, Task::Intervention];

    pub fn name(self) -> &'static str {
        match self {
            Task::Noise => "noise",
            Task::Generation => "generation",
            Task::Intervention => "intervention",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// Scores of the model and the zero baseline on one test dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetResult {
    pub task: Task,
    pub scenario: Scenario,
    pub d: usize,
    pub dataset: usize,
    pub rmse: f64,
    pub baseline: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub task: Task,
    pub scenario: Scenario,
    pub d: usize,
    pub mean: f64,
    /// Standard error over datasets.
    pub stderr: f64,
    pub count: usize,
    pub baseline_mean: f64,
    pub baseline_stderr: f64,
}

/// Mean and standard error of the mean (sample standard deviation over √count).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub meta: Vec<(String, String)>,
    pub rows: Vec<DatasetResult>,
    pub aggregates: Vec<Aggregate>,
}

type Key = (Task, Scenario, usize);

impl EvalReport {
    pub fn from_rows(meta: Vec<(String, String)>, rows: Vec<DatasetResult>) -> Self {
        let aggregates = aggregate(&rows);
        Self { meta, rows, aggregates }
    }

    pub fn aggregate(&self, task: Task, scenario: Scenario, d: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.task == task && a.scenario == scenario && a.d == d)
    }

    /// Mean RMSE and baseline over every dataset of `task` matching `filter`.
    pub fn pooled(&self, task: Task, filter: impl Fn(&DatasetResult) -> bool) -> Option<(f64, f64)> {
        let sel: Vec<&DatasetResult> = self.rows.iter().filter(|r| r.task == task && filter(r)).collect();
        if sel.is_empty() {
            return None;
        }
        let n = sel.len() as f64;
        Some((sel.iter().map(|r| r.rmse).sum::<f64>() / n, sel.iter().map(|r| r.baseline).sum::<f64>() / n))
    }

    pub fn node_counts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.rows.iter().map(|r| r.d).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut v: Vec<Scenario> = self.rows.iter().map(|r| r.scenario).collect();
        v.sort();
        v.dedup();
        v
    }

    /// `# key=value` header lines (metadata, then one per aggregate), then a
    /// tab-separated table of per-dataset results.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        for a in &self.aggregates {
            out.push_str(&format!(
                "# aggregate.{}.{}.{}={},{},{},{},{}\n",
                a.task.name(),
                a.scenario.name(),
                a.d,
                a.mean,
                a.stderr,
                a.count,
                a.baseline_mean,
                a.baseline_stderr
            ));
        }
        out.push_str("task\tscenario\td\tdataset\trmse\tbaseline\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.task.name(),
                r.scenario.name(),
                r.d,
                r.dataset,
                r.rmse,
                r.baseline
            ));
        }
        out
    }

    /// Reads a rendered report back; aggregates are taken from the header as written.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let bad = |line: &str| EvalError::Report(format!("cannot parse `{line}`"));
        let mut meta = Vec::new();
        let mut aggregates = Vec::new();
        let mut rows = Vec::new();
        let mut seen_header = false;
        for line in text.lines().filter(|l| !l.is_empty()) {
            if let Some(h) = line.strip_prefix("# ") {
                let (k, v) = h.split_once('=').ok_or_else(|| bad(line))?;
                if let Some(key) = k.strip_prefix("aggregate.") {
                    let parts: Vec<&str> = key.split('.').collect();
                    let vals: Vec<&str> = v.split(',').collect();
                    if parts.len() != 3 || vals.len() != 5 {
                        return Err(bad(line));
                    }
                    let f = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
                    aggregates.push(Aggregate {
                        task: Task::from_name(parts[0]).ok_or_else(|| bad(line))?,
                        scenario: Scenario::from_name(parts[1]).ok_or_else(|| bad(line))?,
                        d: parts[2].parse().map_err(|_| bad(line))?,
                        mean: f(vals[0])?,
                        stderr: f(vals[1])?,
                        count: vals[2].parse().map_err(|_| bad(line))?,
                        baseline_mean: f(vals[3])?,
                        baseline_stderr: f(vals[4])?,
                    });
                } else {
                    meta.push((k.to_string(), v.to_string()));
                }
            } else if !seen_header {
                seen_header = true;
            } else {
                let c: Vec<&str> = line.split('\t').collect();
                if c.len() != 6 {
                    return Err(bad(line));
                }
                rows.push(DatasetResult {
                    task: Task::from_name(c[0]).ok_or_else(|| bad(line))?,
                    scenario: Scenario::from_name(c[1]).ok_or_else(|| bad(line))?,
                    d: c[2].parse().map_err(|_| bad(line))?,
                    dataset: c[3].parse().map_err(|_| bad(line))?,
                    rmse: c[4].parse().map_err(|_| bad(line))?,
                    baseline: c[5].parse().map_err(|_| bad(line))?,
                });
            }
        }
        Ok(Self { meta, rows, aggregates })
    }

    /// Aggregates recomputed from the per-dataset rows.
    pub fn recompute_aggregates(&self) -> Vec<Aggregate> {
        aggregate(&self.rows)
    }
}

fn aggregate(rows: &[DatasetResult]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<Key, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let g = groups.entry((r.task, r.scenario, r.d)).or_default();
        g.0.push(r.rmse);
        g.1.push(r.baseline);
    }
    groups
        .into_iter()
        .map(|((task, scenario, d), (vals, base))| {
            let (mean, stderr) = mean_stderr(&vals);
            let (baseline_mean, baseline_stderr) = mean_stderr(&base);
            Aggregate { task, scenario, d, mean, stderr, count: vals.len(), baseline_mean, baseline_stderr }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<DatasetResult> {
        let s = Scenario::all();
        let mut v = Vec::new();
        for (k, x) in [0.1, 0.25, 0.4].into_iter().enumerate() {
            v.push(DatasetResult { task: Task::Noise, scenario: s[0], d: 5, dataset: k, rmse: x, baseline: 1.0 + x });
            v.push(DatasetResult { task: Task::Generation, scenario: s[3], d: 8, dataset: k, rmse: x / 3.0, baseline: 2.0 });
        }
        v
    }

    #[test]
    fn stderr_uses_dataset_count() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn rendered_report_round_trips_and_aggregates_recompute_exactly() {
        let r = EvalReport::from_rows(vec![("seed".into(), "3".into())], rows());
        let back = EvalReport::parse(&r.render()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.recompute_aggregates(), back.aggregates);
        assert_eq!(r.aggregates.len(), 2);
        assert_eq!(r.node_counts(), vec![5, 8]);
    }
}
