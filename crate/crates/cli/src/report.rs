use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// First line of every CSV report: the command and the effective config,
/// so a report alone is enough to rerun it.
pub fn header_line(command: &str, cfg: &RunConfig) -> String {
    format!("# {command} config: {}\n", cfg.echo())
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e))
}

/// Serializes `rows` as CSV under the config header line. Field names of
/// `T` become the column header.
pub fn write_rows<T: Serialize>(path: &Path, command: &str, cfg: &RunConfig, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(header_line(command, cfg).into_bytes());
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// Like [`write_rows`] for rows given as string records.
pub fn write_records(
    path: &Path,
    command: &str,
    cfg: &RunConfig,
    header: &[&str],
    rows: &[Vec<String>],
) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(header_line(command, cfg).into_bytes());
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

fn finish(path: &Path, w: csv::Writer<Vec<u8>>) -> CliResult<()> {
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::io(path, std::io::Error::other(e.to_string())))?;
    write_file(path, &bytes)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Appends a wall-clock line to `<report>.log`. Kept apart from the report
/// so reports stay byte-identical across reruns.
pub fn log_run(report: &Path, command: &str, elapsed: std::time::Duration) -> CliResult<()> {
    let mut name = report.as_os_str().to_owned();
    name.push(".log");
    let log = Path::new(&name);
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let line = format!("{command} finished at unix {stamp} in {:.3}s\n", elapsed.as_secs_f64());
    use std::io::Write;
    fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(log)
        .and_then(|mut f| f.write_all(line.as_bytes()))
        .map_err(|e| CliError::io(log, e))
}

/// Reads a report back into its header and rows, skipping `#` lines.
pub fn read_report(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok((header, rows))
}
