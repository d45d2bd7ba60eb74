//! On-disk formats: `.session.ndjson` session files, `.traj.json`
//! trajectory files and their CSV exports.
//!
//! A session file is one header object, one object per sample row with keys
//! `t`, `u_pos`, `u_vel`, `y_pos`, `y_vel`, `f` (one entry per channel,
//! positions then rotations) and a terminal footer marking completion.
//! Floats are written in shortest round-trip form, so loading a saved record
//! reproduces every numeric payload bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use follower_lab_core::record::{AxesDescriptor, OutputSamples, SyntheticTruth, SCHEMA_VERSION};
use follower_lab_core::trajectory::Provenance;
use follower_lab_core::{EnvParams, SessionRecord, Source, Trajectory};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const SESSION_EXTENSION: &str = "session.ndjson";
pub const TRAJECTORY_EXTENSION: &str = "traj.json";

/// Capture bookkeeping stored next to the record in the header.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptureMeta {
    /// Wall-clock start of the capture, seconds since the Unix epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_unix_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client: Option<String>,
    #[serde(default)]
    pub targets_sent: u64,
    #[serde(default)]
    pub samples_received: u64,
    #[serde(default)]
    pub samples_rejected: u64,
    /// Largest interpolation gap of the alignment, in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_gap_s: Option<f64>,
    /// Server minus client clock, from the least-delayed sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_offset_s: Option<f64>,
    /// Receive delay beyond the least-delayed sample (jitter), mean and maximum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_receive_delay_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_receive_delay_s: Option<f64>,
}

/// A session record together with its capture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionFile {
    pub record: SessionRecord,
    pub capture: Option<CaptureMeta>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(rename = "type")]
    kind: String,
    schema_version: u32,
    session_id: String,
    rate_hz: f64,
    axes: AxesDescriptor,
    env: EnvParams,
    source: Source,
    #[serde(default)]
    notes: String,
    #[serde(default)]
    aborted: bool,
    input_rate_hz: f64,
    input_provenance: Provenance,
    #[serde(default)]
    synthetic: Option<SyntheticTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capture: Option<CaptureMeta>,
}

#[derive(Serialize)]
struct RowOut<'a> {
    t: f64,
    /// Input timestamp, only when it differs from the output timestamp.
    #[serde(skip_serializing_if = "Option::is_none")]
    u_t: Option<f64>,
    u_pos: &'a [f64],
    u_vel: &'a [f64],
    y_pos: &'a [f64],
    y_vel: &'a [f64],
    f: &'a [f64],
}

#[derive(Deserialize)]
struct RowIn {
    t: Option<f64>,
    #[serde(default)]
    u_t: Option<f64>,
    u_pos: Vec<Option<f64>>,
    u_vel: Vec<Option<f64>>,
    y_pos: Vec<Option<f64>>,
    y_vel: Vec<Option<f64>>,
    f: Vec<Option<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Footer {
    #[serde(rename = "type")]
    kind: String,
    rows: usize,
    complete: bool,
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub(crate) fn write_atomically(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).map_err(|e| LabError::io(&tmp, e))?;
    let mut out = BufWriter::new(file);
    write(&mut out).and_then(|_| out.flush()).map_err(|e| LabError::io(&tmp, e))?;
    drop(out);
    std::fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

fn to_line<T: Serialize>(out: &mut impl Write, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

/// Validates `record` and writes it as a session file.
pub fn save_session(path: &Path, record: &SessionRecord) -> Result<()> {
    save_session_file(path, &SessionFile { record: record.clone(), capture: None })
}

pub fn save_session_file(path: &Path, file: &SessionFile) -> Result<()> {
    let r = &file.record;
    r.validate()?;
    let header = Header {
        kind: "header".into(),
        schema_version: r.schema_version,
        session_id: r.session_id.clone(),
        rate_hz: r.rate_hz,
        axes: r.axes,
        env: r.env,
        source: r.source,
        notes: r.notes.clone(),
        aborted: r.aborted,
        input_rate_hz: r.input.rate_hz,
        input_provenance: r.input.provenance.clone(),
        synthetic: r.synthetic.clone(),
        capture: file.capture.clone(),
    };
    let k = r.n_channels();
    write_atomically(path, |out| {
        to_line(out, &header)?;
        let mut buf = [Vec::with_capacity(k), Vec::with_capacity(k), Vec::new(), Vec::new(), Vec::new()];
        for i in 0..r.len() {
            for b in buf.iter_mut() {
                b.clear();
            }
            for c in 0..k {
                let (up, uv) = r.input.channel(c);
                buf[0].push(up[i]);
                buf[1].push(uv[i]);
                buf[2].push(r.output.pos[c][i]);
                buf[3].push(r.output.vel[c][i]);
                buf[4].push(r.output.force[c][i]);
            }
            let (t, ut) = (r.output.t[i], r.input.t[i]);
            let row = RowOut {
                t,
                u_t: (ut.to_bits() != t.to_bits()).then_some(ut),
                u_pos: &buf[0],
                u_vel: &buf[1],
                y_pos: &buf[2],
                y_vel: &buf[3],
                f: &buf[4],
            };
            to_line(out, &row)?;
        }
        to_line(out, &Footer { kind: "footer".into(), rows: r.len(), complete: true })
    })
}

pub fn load_session(path: &Path) -> Result<SessionRecord> {
    Ok(load_session_file(path)?.record)
}

/// Reads and validates a session file. Errors name the sample row and field
/// of the first missing or non-finite value.
pub fn load_session_file(path: &Path) -> Result<SessionFile> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| LabError::io(path, e))?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    let first = lines.first().ok_or_else(|| LabError::parse(path, 1, "empty session file"))?;
    let probe: serde_json::Value =
        serde_json::from_str(first).map_err(|e| LabError::parse(path, 1, format!("bad header: {e}")))?;
    match probe.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(LabError::parse(
                path,
                1,
                format!("unsupported schema_version {v}; this reader supports version {SCHEMA_VERSION}"),
            ))
        }
        None => return Err(LabError::parse(path, 1, "header has no schema_version")),
    }
    let header: Header =
        serde_json::from_value(probe).map_err(|e| LabError::parse(path, 1, format!("bad header: {e}")))?;
    if header.kind != "header" {
        return Err(LabError::parse(path, 1, "first line is not a header"));
    }
    if lines.len() < 2 {
        return Err(LabError::parse(path, 1, "missing footer: session is incomplete or truncated"));
    }
    let last = lines.len();
    let footer: Footer = serde_json::from_str(&lines[last - 1])
        .ok()
        .filter(|f: &Footer| f.kind == "footer")
        .ok_or_else(|| LabError::parse(path, last, "missing footer: session is incomplete or truncated"))?;
    let body = &lines[1..last - 1];
    if footer.rows != body.len() {
        return Err(LabError::parse(
            path,
            last,
            format!("footer counts {} rows but the file holds {}", footer.rows, body.len()),
        ));
    }

    let k = header.axes.channels();
    let n = body.len();
    let series = || vec![Vec::with_capacity(n); k];
    let (mut u_pos, mut u_vel, mut y_pos, mut y_vel, mut force) = (series(), series(), series(), series(), series());
    let (mut t_out, mut t_in) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (row, text) in body.iter().enumerate() {
        let line = row + 2;
        let parsed: RowIn = serde_json::from_str(text)
            .map_err(|e| LabError::parse(path, line, format!("row {row}: corrupted payload: {e}")))?;
        let bad = |field: String| LabError::parse(path, line, format!("row {row}: field `{field}` is missing or not finite"));
        let t = parsed.t.filter(|v| v.is_finite()).ok_or_else(|| bad("t".into()))?;
        t_out.push(t);
        t_in.push(match parsed.u_t {
            Some(v) if v.is_finite() => v,
            Some(_) => return Err(bad("u_t".into())),
            None => t,
        });
        for (name, values, dest) in [
            ("u_pos", &parsed.u_pos, &mut u_pos),
            ("u_vel", &parsed.u_vel, &mut u_vel),
            ("y_pos", &parsed.y_pos, &mut y_pos),
            ("y_vel", &parsed.y_vel, &mut y_vel),
            ("f", &parsed.f, &mut force),
        ] {
            if values.len() != k {
                return Err(LabError::parse(
                    path,
                    line,
                    format!("row {row}: field `{name}` has {} entries, expected {k}", values.len()),
                ));
            }
            for (c, v) in values.iter().enumerate() {
                let v = v.filter(|v| v.is_finite()).ok_or_else(|| bad(format!("{name}[{c}]")))?;
                dest[c].push(v);
            }
        }
    }

    let np = header.axes.positions;
    let split = |mut all: Vec<Vec<f64>>| {
        let rot = all.split_off(np.min(all.len()));
        (all, rot)
    };
    let (pos, rot) = split(u_pos);
    let (vel, ang_vel) = split(u_vel);
    let record = SessionRecord {
        session_id: header.session_id,
        schema_version: header.schema_version,
        rate_hz: header.rate_hz,
        axes: header.axes,
        input: Trajectory {
            rate_hz: header.input_rate_hz,
            t: t_in,
            pos,
            vel,
            rot,
            ang_vel,
            provenance: header.input_provenance,
        },
        output: OutputSamples { t: t_out, pos: y_pos, vel: y_vel, force },
        env: header.env,
        source: header.source,
        notes: header.notes,
        aborted: header.aborted,
        synthetic: header.synthetic,
    };
    record.validate()?;
    Ok(SessionFile { record, capture: header.capture })
}

/// CSV export with columns `t`, then per channel `c`: `u_pos_c`, `u_vel_c`,
/// `y_pos_c`, `y_vel_c`, `f_c`.
pub fn export_session_csv(path: &Path, record: &SessionRecord) -> Result<()> {
    let k = record.n_channels();
    let mut columns = vec!["t".to_string()];
    for c in 0..k {
        for name in ["u_pos", "u_vel", "y_pos", "y_vel", "f"] {
            columns.push(format!("{name}_{c}"));
        }
    }
    write_csv(path, &columns, record.len(), |i, row| {
        row.push(record.output.t[i]);
        for c in 0..k {
            let (up, uv) = record.input.channel(c);
            row.extend([up[i], uv[i], record.output.pos[c][i], record.output.vel[c][i], record.output.force[c][i]]);
        }
    })
}

/// CSV export with columns `t`, `pos_i`… , `vel_i`…, `rot_j`…, `ang_vel_j`….
pub fn export_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut columns = vec!["t".to_string()];
    for (prefix, count) in [("pos", traj.pos.len()), ("vel", traj.vel.len()), ("rot", traj.rot.len()), ("ang_vel", traj.ang_vel.len())] {
        columns.extend((0..count).map(|i| format!("{prefix}_{i}")));
    }
    write_csv(path, &columns, traj.len(), |i, row| {
        row.push(traj.t[i]);
        for group in [&traj.pos, &traj.vel, &traj.rot, &traj.ang_vel] {
            row.extend(group.iter().map(|ch| ch[i]));
        }
    })
}

/// Writes `rows` numeric rows produced by `fill` under `columns`.
pub fn write_csv(path: &Path, columns: &[String], rows: usize, mut fill: impl FnMut(usize, &mut Vec<f64>)) -> Result<()> {
    write_atomically(path, |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(columns)?;
        let mut row = Vec::with_capacity(columns.len());
        for i in 0..rows {
            row.clear();
            fill(i, &mut row);
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()
    })
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    schema_version: u32,
    trajectory: Trajectory,
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    traj.validate()?;
    let file = TrajectoryFile { schema_version: SCHEMA_VERSION, trajectory: traj.clone() };
    write_atomically(path, |out| {
        serde_json::to_writer(&mut *out, &file)?;
        out.write_all(b"\n")
    })
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let probe: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| LabError::parse(path, e.line(), format!("corrupted payload: {e}")))?;
    match probe.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        other => {
            return Err(LabError::parse(
                path,
                1,
                format!("unsupported schema_version {other:?}; this reader supports version {SCHEMA_VERSION}"),
            ))
        }
    }
    let file: TrajectoryFile =
        serde_json::from_value(probe).map_err(|e| LabError::parse(path, 1, format!("corrupted payload: {e}")))?;
    file.trajectory.validate()?;
    Ok(file.trajectory)
}
