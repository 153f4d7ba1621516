//! Percentile summaries and the report a benchmark run emits.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use dynflow::inspect::{Format, Rows};
use dynflow::ClusterConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub mean: f64,
    pub unit: &'static str,
}

impl Summary {
    /// Nearest-rank percentiles. Panics on an empty sample.
    pub fn from_samples(samples: &[f64], unit: &'static str) -> Summary {
        assert!(!samples.is_empty(), "no samples");
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let r = (p * s.len() as f64).ceil() as usize;
            s[r.clamp(1, s.len()) - 1]
        };
        Summary {
            count: s.len(),
            p50: rank(0.50),
            p90: rank(0.90),
            p99: rank(0.99),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            unit,
        }
    }

    pub fn single(value: f64, unit: &'static str) -> Summary {
        Summary::from_samples(&[value], unit)
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub workload: String,
    pub config: ClusterConfig,
    pub started_unix_ms: u128,
    pub metrics: BTreeMap<String, Summary>,
}

impl BenchReport {
    pub fn new(workload: &str, config: &ClusterConfig) -> Self {
        BenchReport {
            workload: workload.to_owned(),
            config: config.clone(),
            started_unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0),
            metrics: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, summary: Summary) -> &mut Self {
        self.metrics.insert(name.to_owned(), summary);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Summary> {
        self.metrics.get(name)
    }

    pub fn p50(&self, name: &str) -> f64 {
        self.metrics[name].p50
    }

    pub fn rows(&self) -> Rows {
        let f = |x: f64| format!("{x:.1}");
        Rows {
            header: vec!["metric", "unit", "count", "p50", "p90", "p99", "mean"],
            rows: self
                .metrics
                .iter()
                .map(|(k, s)| vec![k.clone(), s.unit.into(), s.count.to_string(), f(s.p50), f(s.p90), f(s.p99), f(s.mean)])
                .collect(),
        }
    }

    /// Text output leads with one line of run metadata; CSV is the table only.
    pub fn render(&self, format: Format) -> String {
        let table = self.rows().render(format);
        match format {
            Format::Csv => table,
            Format::Text => format!(
                "{} mode={} nodes={} shards={} seed={} started_unix_ms={}\n{table}",
                self.workload,
                self.config.mode,
                self.config.num_nodes,
                self.config.num_control_shards,
                self.config.seed,
                self.started_unix_ms
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_on_one_to_hundred() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let sum = Summary::from_samples(&s, "us");
        assert_eq!((sum.p50, sum.p90, sum.p99), (50.0, 90.0, 99.0));
        assert_eq!(sum.mean, 50.5);
        assert_eq!(sum.count, 100);
    }

    #[test]
    fn single_sample() {
        let s = Summary::single(7.0, "us");
        assert_eq!((s.p50, s.p99, s.count), (7.0, 7.0, 1));
    }

    #[test]
    fn renders_csv_without_metadata() {
        let mut r = BenchReport::new("micro", &ClusterConfig::default());
        r.add("creation", Summary::from_samples(&[1.0, 2.0, 3.0], "us"));
        assert_eq!(r.render(Format::Csv), "metric,unit,count,p50,p90,p99,mean\ncreation,us,3,2.0,3.0,3.0,2.0\n");
        assert!(r.render(Format::Text).starts_with("micro mode=SIMULATED"));
    }
}
