//! Diagnostics CSV export. One row per time node (the step-0 row leaves the
//! dissipation and identity-residual cells empty); every float is rendered
//! with 17 significant digits so files round-trip exactly and reruns are
//! byte-identical.

use std::io::Write;
use std::path::Path;

use vpsfem::model::DiagnosticsRecord;

use crate::CliError;

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn render_diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::from("step,t,mass,energy,dissipation,identity_residual,newton_iters\n");
    for r in records {
        let diss = r.dissipation.map(fmt).unwrap_or_default();
        let ident = r.identity_residual.map(fmt).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step,
            fmt(r.t),
            fmt(r.mass),
            fmt(r.energy),
            diss,
            ident,
            r.newton_iterations
        ));
    }
    out
}

pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(render_diagnostics_csv(records).as_bytes())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: usize) -> DiagnosticsRecord {
        DiagnosticsRecord {
            step,
            t: step as f64 * 0.5,
            mass: 0.5,
            energy: 1.0 / (step + 1) as f64,
            dissipation: (step > 0).then_some(0.25),
            identity_residual: (step > 0).then_some(1e-12),
            newton_iterations: if step > 0 { 3 } else { 0 },
        }
    }

    #[test]
    fn header_and_row_count() {
        let records: Vec<_> = (0..=2).map(record).collect();
        let text = render_diagnostics_csv(&records);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,t,mass,energy,dissipation,identity_residual,newton_iters"
        );
        assert_eq!(lines.count(), 3);
        // Step-0 row has empty dissipation and residual cells.
        let row0 = text.lines().nth(1).unwrap();
        let cells: Vec<_> = row0.split(',').collect();
        assert_eq!(cells[0], "0");
        assert_eq!(cells[4], "");
        assert_eq!(cells[5], "");
    }

    #[test]
    fn rendering_is_deterministic() {
        let records: Vec<_> = (0..=4).map(record).collect();
        assert_eq!(
            render_diagnostics_csv(&records),
            render_diagnostics_csv(&records)
        );
    }

    #[test]
    fn floats_round_trip() {
        let v = 0.1 + 0.2;
        let s = fmt(v);
        let back: f64 = s.parse().unwrap();
        assert_eq!(v.to_bits(), back.to_bits());
    }
}
