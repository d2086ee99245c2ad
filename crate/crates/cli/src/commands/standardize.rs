use std::path::PathBuf;

use clap::Args;

use crate::error::Result;
use crate::panel::{read_panel, write_panel, Panel};
use crate::report::{emit, to_json, ColumnScale, ScaleReport, SCHEMA_VERSION};
use crate::{Outcome, OutputArg};

#[derive(Debug, Args)]
pub struct StandardizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Standardized panel; standard output when absent.
    #[command(flatten)]
    pub output: OutputArg,
    /// JSON with the location and scale of every column. Printed to
    /// standard output when absent and `--output` is a file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run(args: &StandardizeArgs) -> Result<Outcome> {
    let panel = read_panel(&args.input)?;
    let (data, scales) = gst_ppca::standardize(&panel.data)?;
    let report = ScaleReport {
        schema_version: SCHEMA_VERSION,
        columns: panel
            .columns
            .iter()
            .zip(scales)
            .map(|(c, s)| ColumnScale::new(c, s))
            .collect(),
    };
    let out = Panel { data, ..panel };
    let mut bytes = Vec::new();
    write_panel(&mut bytes, &out)?;
    emit(args.output.output.as_deref(), &bytes)?;
    let json = to_json(&report)?;
    match (&args.report, &args.output.output) {
        (Some(path), _) => emit(Some(path), json.as_bytes())?,
        (None, Some(_)) => emit(None, json.as_bytes())?,
        (None, None) => {}
    }
    Ok(Outcome::Done)
}
