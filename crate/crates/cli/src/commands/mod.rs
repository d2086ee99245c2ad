pub mod decompose;
pub mod fit;
pub mod influence;
pub mod mse;
pub mod simulate;
pub mod standardize;

use gst_ppca::ModelKind;

/// Parses a model kind by its CLI name.
pub fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse::<ModelKind>().map_err(|_| {
        let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown kind '{s}', expected one of {}", names.join(", "))
    })
}

/// Default column names `y1..yd`.
pub fn default_columns(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("y{i}")).collect()
}
