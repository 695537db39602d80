//! Columnar text dump of a decomposition for plotting.

use std::io::Write;

use super::ImfSet;
use crate::scalar::Scalar;

/// Writes `step, imf_0 … imf_{M−1}, residual` rows, then nothing else.
/// Center frequencies go in a leading `#` comment line.
pub fn write_imfs<T: Scalar, W: Write>(set: &ImfSet<T>, out: W) -> csv::Result<()> {
    let mut out = out;
    let freqs: Vec<String> = set.center_freqs.iter().map(|f| format!("{f}")).collect();
    writeln!(out, "# center_freqs={}", freqs.join(";"))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend((0..set.num_modes()).map(|i| format!("imf_{i}")));
    header.push("residual".into());
    w.write_record(&header)?;
    for t in 0..set.len() {
        let mut row = vec![t.to_string()];
        row.extend(set.modes.iter().map(|m| format!("{}", m[t])));
        row.push(format!("{}", set.residual[t]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
