//! CSV series for plotting layer sizes, unit norms and unit lifetimes of a finished run.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::train::{EVENTS, METRICS, NORMS, REWINDS};
use crate::{io_error, CliError, Emit};

type Records = (Vec<String>, Vec<csv::StringRecord>);

fn read_csv(path: &Path) -> Result<Records, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("no such file {}", path.display())));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let rows = reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

fn nonempty(path: &Path) -> Result<Records, CliError> {
    let (header, rows) = read_csv(path)?;
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{} has no rows", path.display())));
    }
    Ok((header, rows))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T, CliError> {
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| {
        let line = rec.position().map_or(0, |p| p.line());
        CliError::Runtime(format!(
            "{}: bad value in column {} on line {line}",
            path.display(),
            i + 1
        ))
    })
}

/// Rewinds as `(epoch, to_epoch)`: epochs in `(to_epoch, epoch]` belong to an abandoned branch.
fn rewinds(dir: &Path) -> Result<Vec<(u64, u64)>, CliError> {
    let path = dir.join(REWINDS);
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let (_, rows) = read_csv(&path)?;
    rows.iter()
        .map(|r| Ok((field(r, 0, &path)?, field(r, 1, &path)?)))
        .collect()
}

fn survives(epoch: u64, rewinds: &[(u64, u64)]) -> bool {
    rewinds.iter().all(|&(at, to)| !(to < epoch && epoch <= at))
}

fn sizes(dir: &Path) -> Result<String, CliError> {
    let path = dir.join(METRICS);
    let (header, rows) = nonempty(&path)?;
    let dims: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("d_")).collect();
    let mut out = String::from("epoch,phase");
    for &i in &dims {
        out.push(',');
        out.push_str(&header[i]);
    }
    out.push('\n');
    for r in &rows {
        let epoch: u64 = field(r, 0, &path)?;
        out.push_str(&format!("{epoch},{}", &r[1]));
        for &i in &dims {
            let d: usize = field(r, i, &path)?;
            out.push_str(&format!(",{d}"));
        }
        out.push('\n');
    }
    Ok(out)
}

fn norms(dir: &Path) -> Result<String, CliError> {
    let path = dir.join(NORMS);
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "{} not found; train with log_unit_norms = true",
            path.display()
        )));
    }
    let (_, rows) = nonempty(&path)?;
    let mut out = String::from("epoch,layer,unit_id,fan_in,fan_out\n");
    for r in &rows {
        let (e, l, u): (u64, usize, u64) = (field(r, 0, &path)?, field(r, 1, &path)?, field(r, 2, &path)?);
        let (fi, fo): (f64, f64) = (field(r, 3, &path)?, field(r, 4, &path)?);
        out.push_str(&format!("{e},{l},{u},{fi:?},{fo:?}\n"));
    }
    Ok(out)
}

#[derive(Default)]
struct Life {
    layer: usize,
    birth: u64,
    death: Option<u64>,
}

fn lifetimes(dir: &Path) -> Result<String, CliError> {
    let metrics = dir.join(METRICS);
    let (_, rows) = nonempty(&metrics)?;
    let rewinds = rewinds(dir)?;
    let mut final_epoch = 0;
    for r in &rows {
        let e: u64 = field(r, 0, &metrics)?;
        if survives(e, &rewinds) {
            final_epoch = final_epoch.max(e);
        }
    }
    let path = dir.join(EVENTS);
    let (_, events) = read_csv(&path)?;
    let mut units: BTreeMap<u64, Life> = BTreeMap::new();
    for r in &events {
        let epoch: u64 = field(r, 0, &path)?;
        if !survives(epoch, &rewinds) {
            continue;
        }
        let layer: usize = field(r, 1, &path)?;
        let id: u64 = field(r, 2, &path)?;
        match &r[3] {
            "added" => {
                units.insert(
                    id,
                    Life {
                        layer,
                        birth: epoch,
                        death: None,
                    },
                );
            }
            "removed" => units.entry(id).or_default().death = Some(epoch),
            other => {
                return Err(CliError::Runtime(format!(
                    "{}: unknown event kind `{other}`",
                    path.display()
                )))
            }
        }
    }
    let mut out = String::from("unit_id,layer,birth,death,lifetime,survived\n");
    for (id, u) in &units {
        let end = u.death.unwrap_or(final_epoch);
        let death = u.death.map_or(String::new(), |d| d.to_string());
        out.push_str(&format!(
            "{id},{},{},{death},{},{}\n",
            u.layer,
            u.birth,
            end.saturating_sub(u.birth),
            u.death.is_none()
        ));
    }
    Ok(out)
}

pub fn cmd_inspect(metrics: &Path, emit: Emit, out: Option<&Path>) -> Result<(), CliError> {
    let dir: PathBuf = if metrics.is_dir() {
        metrics.to_path_buf()
    } else if metrics.is_file() {
        metrics.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    } else {
        return Err(CliError::Usage(format!(
            "no such file or directory {}",
            metrics.display()
        )));
    };
    let text = match emit {
        Emit::Sizes => sizes(&dir)?,
        Emit::Norms => norms(&dir)?,
        Emit::Lifetimes => lifetimes(&dir)?,
    };
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| io_error(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(e.to_string())),
    }
}
