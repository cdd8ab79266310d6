use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use psreg::net::RoutingMode;
use psreg::pce::CodingScheme;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::report::{cmd_register, Aggregates, BenchmarkReport};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    TauO,
    Coding,
    Routing,
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "tau_o" => Ok(Axis::TauO),
            "coding" => Ok(Axis::Coding),
            "routing" => Ok(Axis::Routing),
            other => Err(CliError::Config(format!("unknown ablation axis {other:?} (tau_o, coding, routing)"))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::TauO => "tau_o",
            Axis::Coding => "coding",
            Axis::Routing => "routing",
        }
    }

    /// Values swept when none are given.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            Axis::TauO => &["0", "0.1", "0.3"],
            Axis::Coding => &["none", "binary", "ordered"],
            Axis::Routing => &["dense", "vanilla", "prior"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// `base` with this axis set to `value`. Coding `none` means vanilla
    /// routing, which ignores the prior embeddings altogether.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig, CliError> {
        let mut config = base.clone();
        let bad = || CliError::Config(format!("invalid {} value {value:?}", self.name()));
        match self {
            Axis::TauO => config.pipeline.prior.tau_o = value.parse().map_err(|_| bad())?,
            Axis::Coding => match value {
                "ordered" => config.pipeline.coding = CodingScheme::Ordered,
                "binary" => config.pipeline.coding = CodingScheme::Binary,
                "none" => config.pipeline.net.routing = RoutingMode::Vanilla,
                _ => return Err(bad()),
            },
            Axis::Routing => {
                config.pipeline.net.routing = match value {
                    "prior" => RoutingMode::Prior,
                    "vanilla" => RoutingMode::Vanilla,
                    "dense" => RoutingMode::Dense,
                    _ => return Err(bad()),
                }
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Fixed-width text in row order, percentages with one decimal.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>6} {:>7} {:>7} {:>7} {:>9} {:>9}", self.axis.name(), "pairs", "FMR%", "IR%", "RR%", "RRE(deg)", "RTE(m)");
        for row in &self.rows {
            let a = &row.aggregates;
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>7.1} {:>7.1} {:>7.1} {:>9.3} {:>9.4}",
                row.value,
                a.pairs,
                100.0 * a.feature_matching_recall,
                100.0 * a.inlier_ratio,
                100.0 * a.registration_recall,
                a.mean_rre,
                a.mean_rte
            );
        }
        out
    }
}

/// Runs [`cmd_register`] once per value and tabulates the aggregates.
pub fn cmd_ablate(
    base: &ExperimentConfig,
    axis: Axis,
    values: &[String],
    data_dir: Option<&Path>,
    jobs: usize,
) -> Result<(AblationTable, Vec<BenchmarkReport>), CliError> {
    if values.is_empty() {
        return Err(CliError::Config("ablation needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    let mut reports = Vec::with_capacity(values.len());
    for value in values {
        let config = axis.apply(base, value)?;
        let report = cmd_register(&config, data_dir, jobs)?;
        log::info!("{}={value}: IR {:.4}", axis.name(), report.aggregates.inlier_ratio);
        rows.push(AblationRow { value: value.clone(), aggregates: report.aggregates.clone() });
        reports.push(report);
    }
    Ok((AblationTable { axis, rows }, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_names_round_trip() {
        for axis in [Axis::TauO, Axis::Coding, Axis::Routing] {
            assert_eq!(axis.name().parse::<Axis>().unwrap(), axis);
        }
        assert!("depth".parse::<Axis>().is_err());
    }

    #[test]
    fn tau_axis_default_sweep() {
        assert_eq!(Axis::TauO.default_values(), ["0", "0.1", "0.3"]);
    }

    #[test]
    fn apply_sets_exactly_one_knob() {
        let base = ExperimentConfig::default();
        let c = Axis::Coding.apply(&base, "none").unwrap();
        assert_eq!(c.pipeline.net.routing, RoutingMode::Vanilla);
        assert_eq!(c.pipeline.coding, base.pipeline.coding);
        let t = Axis::TauO.apply(&base, "0.3").unwrap();
        assert_eq!(t.pipeline.prior.tau_o, 0.3);
        assert_eq!(t.pipeline.net, base.pipeline.net);
        assert!(Axis::TauO.apply(&base, "1.5").is_err());
        assert!(Axis::Routing.apply(&base, "sparse").is_err());
    }

    #[test]
    fn text_table_is_fixed_width() {
        let agg = Aggregates::from_rows(&[], &Default::default());
        let t = AblationTable {
            axis: Axis::TauO,
            rows: vec![AblationRow { value: "0".into(), aggregates: agg.clone() }, AblationRow { value: "0.3".into(), aggregates: agg }],
        };
        let text = t.to_text();
        let widths: Vec<usize> = text.lines().map(str::len).collect();
        assert_eq!(widths.len(), 3);
        assert!(widths.iter().all(|&w| w == widths[0]));
    }
}
