//! File formats: norm CSVs, field snapshots (CSV or flat little-endian
//! `f64`), stored trajectories, and report CSVs. Every file is written to a
//! temporary sibling first and renamed into place.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::comparison::PairedRunReport;
use crate::error::{Error, Result};
use crate::estimates::DiagnosticsReport;
use crate::field::{Field, Grid, SpaceTimeSeries};
use crate::solver::{BlowUpReason, NormSeries, RunStatus, Trajectory};

/// Write `path` atomically: the closure fills a temporary file in the same
/// directory, which is then renamed over `path`.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        Ok(())
    })();
    match result {
        Ok(()) => fs::rename(&tmp, path).map_err(Error::from),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Shortest round-trip representation, so CSVs reload bit for bit.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn csv_rows(w: &mut dyn Write, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(&r)?;
    }
    out.flush()?;
    Ok(())
}

/// `t,dt,L1,L2,Lm,Linf,lin_iters`, one row per step.
pub fn write_norms_csv(w: &mut dyn Write, norms: &NormSeries) -> Result<()> {
    csv_rows(
        w,
        &["t", "dt", "L1", "L2", "Lm", "Linf", "lin_iters"],
        norms.records.iter().map(|r| {
            vec![
                num(r.t),
                num(r.dt),
                num(r.l1),
                num(r.l2),
                num(r.lm),
                num(r.linf),
                r.lin_iters.to_string(),
            ]
        }),
    )
}

/// `t,L1,L2,Lm,Linf` from stored snapshots.
pub fn write_series_norms_csv(w: &mut dyn Write, series: &SpaceTimeSeries, m: f64) -> Result<()> {
    let rows = series
        .times()
        .iter()
        .zip(series.snapshots())
        .map(|(t, s)| {
            Ok(vec![
                num(*t),
                num(s.l1_norm()?),
                num(s.lp_norm(2.0)?),
                num(s.lp_norm(m)?),
                num(s.linf_norm()?),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    csv_rows(w, &["t", "L1", "L2", "Lm", "Linf"], rows.into_iter())
}

/// `cell,value`.
pub fn write_field_csv(w: &mut dyn Write, field: &Field) -> Result<()> {
    csv_rows(
        w,
        &["cell", "value"],
        field.values().iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]),
    )
}

pub fn read_field_csv(grid: Arc<Grid>, text: &str) -> Result<Field> {
    let mut values = vec![f64::NAN; grid.n_cells()];
    let mut seen = vec![false; grid.n_cells()];
    for rec in csv::Reader::from_reader(text.as_bytes()).records() {
        let rec = rec?;
        let parse = |k: usize| rec.get(k).map(str::trim).ok_or_else(|| Error::Parse(format!("short row {rec:?}")));
        let cell: usize = parse(0)?.parse().map_err(|_| Error::Parse(format!("bad cell index in {rec:?}")))?;
        let value: f64 = parse(1)?.parse().map_err(|_| Error::Parse(format!("bad value in {rec:?}")))?;
        if cell >= values.len() {
            return Err(Error::GridMismatch(format!("cell {cell} out of range")));
        }
        values[cell] = value;
        seen[cell] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::GridMismatch(format!("no value for cell {i}")));
    }
    Field::new(grid, values)
}

/// Raw little-endian `f64`, one per cell.
pub fn field_to_bytes(field: &Field) -> Vec<u8> {
    field.values().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn field_from_bytes(grid: Arc<Grid>, bytes: &[u8]) -> Result<Field> {
    if bytes.len() != 8 * grid.n_cells() {
        return Err(Error::GridMismatch(format!("{} bytes for {} cells", bytes.len(), grid.n_cells())));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Field::new(grid, values)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotFormat {
    #[default]
    Bin,
    Csv,
}

impl std::str::FromStr for SnapshotFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bin" | "binary" => Ok(SnapshotFormat::Bin),
            "csv" => Ok(SnapshotFormat::Csv),
            other => Err(Error::Parse(format!("snapshot format must be bin or csv, got {other:?}"))),
        }
    }
}

/// Everything of a trajectory except the snapshot values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub status: RunStatus,
    pub blowup: Option<BlowUpReason>,
    pub failure: Option<String>,
    pub snapshot_format: SnapshotFormat,
    pub snapshot_times: Vec<f64>,
    pub norms: NormSeries,
}

pub const NORMS_FILE: &str = "norms.csv";
pub const META_FILE: &str = "trajectory.json";
pub const SNAPSHOTS_BIN: &str = "snapshots.bin";
pub const SNAPSHOTS_CSV: &str = "snapshots.csv";
pub const FINAL_FIELD: &str = "final.csv";

/// Store `traj` under `dir`; returns the files written.
///
/// Blown-up snapshots carry non-finite values and are written as they are.
pub fn save_trajectory(dir: &Path, traj: &Trajectory, format: SnapshotFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let norms = dir.join(NORMS_FILE);
    write_atomic(&norms, |w| write_norms_csv(w, &traj.norms))?;
    written.push(norms);

    let snaps = traj.series.snapshots();
    let path = match format {
        SnapshotFormat::Bin => {
            let p = dir.join(SNAPSHOTS_BIN);
            write_atomic(&p, |w| {
                for s in snaps {
                    w.write_all(&field_to_bytes(s))?;
                }
                Ok(())
            })?;
            p
        }
        SnapshotFormat::Csv => {
            let p = dir.join(SNAPSHOTS_CSV);
            write_atomic(&p, |w| {
                let rows = traj.series.times().iter().zip(snaps).flat_map(|(t, s)| {
                    s.values()
                        .iter()
                        .enumerate()
                        .map(move |(i, v)| vec![num(*t), i.to_string(), num(*v)])
                });
                csv_rows(w, &["t", "cell", "value"], rows)
            })?;
            p
        }
    };
    written.push(path);

    let last = dir.join(FINAL_FIELD);
    write_atomic(&last, |w| write_field_csv(w, traj.series.last()))?;
    written.push(last);

    let meta = TrajectoryMeta {
        status: traj.status,
        blowup: traj.blowup,
        failure: traj.failure.clone(),
        snapshot_format: format,
        snapshot_times: traj.series.times().to_vec(),
        norms: traj.norms.clone(),
    };
    let meta_path = dir.join(META_FILE);
    write_json_atomic(&meta_path, &meta)?;
    written.push(meta_path);
    Ok(written)
}

fn snapshot_field(grid: &Arc<Grid>, values: Vec<f64>) -> Field {
    Field::new(grid.clone(), values.clone()).unwrap_or_else(|_| Field::blown_up(grid.clone(), values))
}

/// Reload a trajectory stored by [`save_trajectory`] on `grid`.
pub fn load_trajectory(dir: &Path, grid: Arc<Grid>) -> Result<Trajectory> {
    let meta: TrajectoryMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    let n = grid.n_cells();
    let count = meta.snapshot_times.len();
    let snapshots: Vec<Field> = match meta.snapshot_format {
        SnapshotFormat::Bin => {
            let bytes = fs::read(dir.join(SNAPSHOTS_BIN))?;
            if bytes.len() != 8 * n * count {
                return Err(Error::GridMismatch(format!(
                    "{} snapshot bytes for {count} snapshots of {n} cells",
                    bytes.len()
                )));
            }
            bytes
                .chunks_exact(8 * n)
                .map(|c| {
                    snapshot_field(
                        &grid,
                        c.chunks_exact(8)
                            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                            .collect(),
                    )
                })
                .collect()
        }
        SnapshotFormat::Csv => {
            let mut values = vec![vec![f64::NAN; n]; count];
            let mut reader = csv::Reader::from_path(dir.join(SNAPSHOTS_CSV))?;
            let mut k = 0usize;
            let mut last_t = None;
            for rec in reader.records() {
                let rec = rec?;
                let field = |i: usize| rec.get(i).map(str::trim).ok_or_else(|| Error::Parse(format!("short row {rec:?}")));
                let t: f64 = field(0)?.parse().map_err(|_| Error::Parse(format!("bad time in {rec:?}")))?;
                let cell: usize = field(1)?.parse().map_err(|_| Error::Parse(format!("bad cell in {rec:?}")))?;
                let v: f64 = field(2)?.parse().map_err(|_| Error::Parse(format!("bad value in {rec:?}")))?;
                if last_t.is_some_and(|lt: f64| lt != t) {
                    k += 1;
                }
                last_t = Some(t);
                if k >= count || cell >= n || meta.snapshot_times[k] != t {
                    return Err(Error::GridMismatch(format!("unexpected snapshot row {rec:?}")));
                }
                values[k][cell] = v;
            }
            values.into_iter().map(|v| snapshot_field(&grid, v)).collect()
        }
    };
    Ok(Trajectory {
        series: SpaceTimeSeries::from_parts(meta.snapshot_times, snapshots)?,
        norms: meta.norms,
        status: meta.status,
        blowup: meta.blowup,
        failure: meta.failure,
    })
}

/// `t,lhs,rhs,gap`.
pub fn write_gap_csv(w: &mut dyn Write, report: &PairedRunReport) -> Result<()> {
    csv_rows(
        w,
        &["t", "lhs", "rhs", "gap"],
        (0..report.times.len()).map(|k| vec![num(report.times[k]), num(report.lhs[k]), num(report.rhs[k]), num(report.gap[k])]),
    )
}

/// `t,mass_slack,ineq_m<m>...`; empty cells where a slack is undefined.
pub fn write_diagnostics_csv(w: &mut dyn Write, report: &DiagnosticsReport) -> Result<()> {
    let mut header = vec!["t".to_string(), "mass_slack".to_string()];
    header.extend(report.diff_ineq.iter().map(|c| format!("ineq_m{}", c.m)));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_rows(
        w,
        &header,
        report.per_time.iter().map(|r| {
            let mut row = vec![num(r.t), num(r.mass)];
            row.extend(r.ineq.iter().map(|s| s.map(num).unwrap_or_default()));
            row
        }),
    )
}
