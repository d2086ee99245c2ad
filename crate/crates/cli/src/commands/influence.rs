use clap::{Args, ValueEnum};
use gst_ppca::influence::{parameter_labels, SIGMA2_AND_W};
use gst_ppca::scenarios::{
    matched_scenario, mismatched_scenario, reference_params, spread, Measure, ScenarioEntry,
};

use crate::error::{usage, Result};
use crate::report::{csv_bytes, emit};
use crate::{EmArgs, Outcome, OutputArg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    /// Each estimator on data from its own model; one summary table.
    S1,
    /// Every estimator on Grouped-t data; long format over data models.
    S2,
}

#[derive(Debug, Args)]
pub struct InfluenceArgs {
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    /// Draws per data model.
    #[arg(long, default_value_t = 1000)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArg,
    #[command(flatten)]
    pub em: EmArgs,
}

/// Short parameter names `sigma2, w1, ..., w6`, loadings numbered row by row.
fn short_names() -> Vec<(String, String)> {
    parameter_labels(&reference_params(), SIGMA2_AND_W)
        .into_iter()
        .enumerate()
        .map(|(j, label)| {
            let short = if j == 0 {
                label.clone()
            } else {
                format!("w{j}")
            };
            (label, short)
        })
        .collect()
}

fn short_name(label: &str) -> String {
    short_names()
        .into_iter()
        .find(|(l, _)| l == label)
        .map_or_else(|| label.to_string(), |(_, s)| s)
}

/// Summary table: one row per measure and parameter, Gaussian value and
/// median with interquartile range across data models for the others.
pub fn summary_table(entries: &[ScenarioEntry]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "measure",
        "parameter",
        "gaussian",
        "student-t",
        "student-t_iqr",
        "grouped-t",
        "grouped-t_iqr",
    ])?;
    for measure in Measure::ALL {
        for (label, short) in short_names() {
            let g = spread(entries, "gaussian", &label, measure)?;
            let s = spread(entries, "student-t", &label, measure)?;
            let t = spread(entries, "grouped-t", &label, measure)?;
            writer.write_record([
                measure.name().to_string(),
                short,
                format!("{}", g.median),
                format!("{}", s.median),
                format!("{}", s.iqr),
                format!("{}", t.median),
                format!("{}", t.iqr),
            ])?;
        }
    }
    csv_bytes(writer)
}

/// One row per estimator, estimator degrees of freedom, data model and
/// parameter.
pub fn long_table(entries: &[ScenarioEntry]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "estimator",
        "estimator_nu",
        "nu_eps",
        "nu_x",
        "parameter",
        "asy_var",
        "gross_error",
        "local_shift",
    ])?;
    for e in entries {
        writer.write_record([
            e.estimator.clone(),
            e.estimator_nu.clone(),
            e.nu_eps.clone(),
            e.nu_x.clone(),
            short_name(&e.parameter),
            format!("{}", e.asy_var),
            format!("{}", e.gross_error),
            format!("{}", e.local_shift),
        ])?;
    }
    csv_bytes(writer)
}

pub fn run(args: &InfluenceArgs) -> Result<Outcome> {
    if args.m < 2 {
        return usage("--m must be at least 2");
    }
    let config = args.em.config()?;
    let bytes = match args.scenario {
        Scenario::S1 => summary_table(&matched_scenario(args.m, args.seed, &config)?)?,
        Scenario::S2 => long_table(&mismatched_scenario(args.m, args.seed, &config)?)?,
    };
    emit(args.output.output.as_deref(), &bytes)?;
    Ok(Outcome::Done)
}
