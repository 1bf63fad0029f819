//! CSV writers for frontiers, percentiles, heat maps and training logs.

use std::io::Write;

use crate::error::Result;
use crate::objective::{FrontierPoint, Heatmap, PercentileTable};
use crate::trainer::TrainLogRow;

fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

pub fn write_frontier_csv<W: Write>(points: &[FrontierPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["kappa", "EW_per_event", "ES", "median_WT", "objective", "w_star"])?;
    for p in points {
        out.write_record([
            p.kappa.to_string(),
            num(p.ew_per_event),
            num(p.es),
            num(p.median_wt),
            num(p.objective),
            num(p.w_star),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_percentile_csv<W: Write>(table: &PercentileTable, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(table.levels.iter().map(|l| format!("p{l}")));
    out.write_record(&header)?;
    for (t, row) in table.times.iter().zip(&table.values) {
        let mut rec = vec![num(*t)];
        rec.extend(row.iter().map(|v| num(*v)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// First row holds the wealth grid, first column the times.
pub fn write_heatmap_csv<W: Write>(h: &Heatmap, values: &[Vec<f64>], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![String::new()];
    header.extend(h.wealth.iter().map(|x| num(*x)));
    out.write_record(&header)?;
    for (t, row) in h.times.iter().zip(values) {
        let mut rec = vec![num(*t)];
        rec.extend(row.iter().map(|v| num(*v)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_train_log_csv<W: Write>(rows: &[TrainLogRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iter", "batch_obj", "full_obj_if_evaluated", "lr", "w_star"])?;
    for r in rows {
        out.write_record([
            r.iter.to_string(),
            num(r.batch_obj),
            r.full_obj.map(num).unwrap_or_default(),
            num(r.lr),
            num(r.w_star),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Kappa;

    #[test]
    fn frontier_csv_marks_infinite_kappa() {
        let p = FrontierPoint { kappa: Kappa::Infinite, ew_per_event: 35.0, es: 30.0, median_wt: 900.0, objective: 30.0, w_star: 31.0 };
        let mut buf = Vec::new();
        write_frontier_csv(&[p], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "kappa,EW_per_event,ES,median_WT,objective,w_star\ninf,35.0,30.0,900.0,30.0,31.0\n");
    }
}
