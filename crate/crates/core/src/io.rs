//! On-disk formats of the pipeline artifacts.
//!
//! Numbers are written in Rust's shortest round-trip notation, so reading a
//! file back reproduces every value exactly and equal runs give equal bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BoxSet, Interval};
use crate::quantize::{QuantizeError, TransitionTable, UniformGrid, DEFAULT_CELL_CAP};
use crate::scenario::SampleBatch;
use crate::synthesize::{ControllerTable, FiniteTransitionSystem, Trajectory};

const ABSTRACTION_FORMAT: &str = "netabs-abstraction";
const SEPARATOR: &str = "---";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("cannot serialize {what}: {source}")]
    Serialize {
        what: &'static str,
        source: toml::ser::Error,
    },
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes `contents`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    fs::write(path, contents).map_err(file_err(path))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(file_err(path))
}

pub fn write_toml<T: Serialize>(path: &Path, what: &'static str, value: &T) -> Result<(), IoError> {
    let text = toml::to_string(value).map_err(|source| IoError::Serialize { what, source })?;
    write_text(path, &text)
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    toml::from_str(&read_text(path)?).map_err(|e| format_err(path, e.to_string()))
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_f64(path: &Path, s: &str) -> Result<f64, IoError> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| format_err(path, format!("bad number {s:?}: {e}")))
}

fn parse_usize(path: &Path, s: &str) -> Result<usize, IoError> {
    s.trim()
        .parse::<usize>()
        .map_err(|e| format_err(path, format!("bad index {s:?}: {e}")))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, IoError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err(path))
}

/// Samples as CSV: a `# seed = …` line, then `state_k…` and `disturbance_k…` columns.
pub fn write_samples(path: &Path, batch: &SampleBatch) -> Result<(), IoError> {
    let n = batch.states.first().map_or(0, Vec::len);
    let p = batch.disturbances.first().map_or(0, Vec::len);
    let mut text = format!("# seed = {}\n", batch.seed);
    let header: Vec<String> = (0..n)
        .map(|k| format!("state_{k}"))
        .chain((0..p).map(|k| format!("disturbance_{k}")))
        .collect();
    text.push_str(&header.join(","));
    text.push('\n');
    for (x, d) in batch.states.iter().zip(&batch.disturbances) {
        let row: Vec<String> = x.iter().chain(d).map(f64::to_string).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_samples(path: &Path) -> Result<SampleBatch, IoError> {
    let text = read_text(path)?;
    let first = text.lines().next().unwrap_or("");
    let seed = first
        .strip_prefix("# seed = ")
        .ok_or_else(|| format_err(path, "missing seed line"))
        .and_then(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|e| format_err(path, e.to_string()))
        })?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    let n = header.iter().filter(|h| h.starts_with("state_")).count();
    let mut states = Vec::new();
    let mut disturbances = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let vals = rec
            .iter()
            .map(|s| parse_f64(path, s))
            .collect::<Result<Vec<_>, _>>()?;
        states.push(vals[..n].to_vec());
        disturbances.push(vals[n..].to_vec());
    }
    Ok(SampleBatch {
        seed,
        states,
        disturbances,
    })
}

/// Plain description of a grid for file headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells_per_dim: Vec<usize>,
    pub sigma: f64,
}

impl GridHeader {
    pub fn of(grid: &UniformGrid) -> Self {
        Self {
            lo: grid.bounds().intervals().iter().map(|i| i.lo).collect(),
            hi: grid.bounds().intervals().iter().map(|i| i.hi).collect(),
            cells_per_dim: grid.cells_per_dim().to_vec(),
            sigma: grid.sigma(),
        }
    }

    pub fn grid(&self) -> Result<UniformGrid, QuantizeError> {
        if self.lo.len() != self.hi.len() {
            return Err(QuantizeError::Precondition(
                "grid header bounds differ in length".into(),
            ));
        }
        let bounds = BoxSet::new(
            self.lo
                .iter()
                .zip(&self.hi)
                .map(|(&l, &h)| Interval::new(l, h))
                .collect(),
        );
        UniformGrid::new(bounds, self.cells_per_dim.clone(), DEFAULT_CELL_CAP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionHeader {
    pub format: String,
    pub version: u32,
    pub system: String,
    pub states: usize,
    pub inputs: usize,
    pub disturbances: usize,
    pub sink: usize,
    pub input_values: Vec<Vec<f64>>,
    pub state_grid: GridHeader,
    pub disturbance_grid: GridHeader,
}

/// Abstraction file: a TOML header, a `---` line, then CSV rows
/// `state,input,disturbance,next,nearest` in table order.
pub fn write_abstraction(
    path: &Path,
    system: &str,
    input_values: &[Vec<f64>],
    fts: &FiniteTransitionSystem,
) -> Result<(), IoError> {
    let (sg, dg) = match (fts.state_grid(), fts.disturbance_grid()) {
        (Some(s), Some(d)) => (s, d),
        _ => return Err(format_err(path, "abstraction carries no grids")),
    };
    let header = AbstractionHeader {
        format: ABSTRACTION_FORMAT.into(),
        version: 1,
        system: system.into(),
        states: fts.states(),
        inputs: fts.inputs(),
        disturbances: fts.disturbances(),
        sink: fts.sink(),
        input_values: input_values.to_vec(),
        state_grid: GridHeader::of(sg),
        disturbance_grid: GridHeader::of(dg),
    };
    let mut text = toml::to_string(&header).map_err(|source| IoError::Serialize {
        what: "abstraction header",
        source,
    })?;
    text.push_str(SEPARATOR);
    text.push_str("\nstate,input,disturbance,next,nearest\n");
    let t = fts.table();
    for s in 0..fts.states() {
        for u in 0..fts.inputs() {
            for k in 0..fts.disturbances() {
                text.push_str(&format!(
                    "{s},{u},{k},{},{}\n",
                    t.next(s, u, k),
                    t.nearest(s, u, k)
                ));
            }
        }
    }
    write_text(path, &text)
}

pub fn read_abstraction(
    path: &Path,
) -> Result<(AbstractionHeader, FiniteTransitionSystem), IoError> {
    let text = read_text(path)?;
    let marker = format!("\n{SEPARATOR}\n");
    let at = text
        .find(&marker)
        .ok_or_else(|| format_err(path, "missing header separator"))?;
    let header: AbstractionHeader =
        toml::from_str(&text[..at]).map_err(|e| format_err(path, format!("bad header: {e}")))?;
    if header.format != ABSTRACTION_FORMAT || header.version != 1 {
        return Err(format_err(
            path,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let total = header.states * header.inputs * header.disturbances;
    let mut next = vec![usize::MAX; total];
    let mut nearest = vec![usize::MAX; total];
    let mut rdr = csv::Reader::from_reader(&text.as_bytes()[at + marker.len()..]);
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != 5 {
            return Err(format_err(
                path,
                format!("row has {} fields, expected 5", rec.len()),
            ));
        }
        let f = rec
            .iter()
            .map(|s| parse_usize(path, s))
            .collect::<Result<Vec<_>, _>>()?;
        if f[0] >= header.states || f[1] >= header.inputs || f[2] >= header.disturbances {
            return Err(format_err(path, format!("row {f:?} out of range")));
        }
        let slot = (f[0] * header.inputs + f[1]) * header.disturbances + f[2];
        next[slot] = f[3];
        nearest[slot] = f[4];
    }
    if next.contains(&usize::MAX) {
        return Err(format_err(path, "transition table is incomplete"));
    }
    let table = TransitionTable::from_parts(
        header.states,
        header.inputs,
        header.disturbances,
        next,
        nearest,
    )?;
    let sg = header.state_grid.grid()?;
    let dg = header.disturbance_grid.grid()?;
    if sg.len() != header.states || dg.len() != header.disturbances {
        return Err(format_err(path, "grid sizes do not match the table"));
    }
    Ok((
        header,
        FiniteTransitionSystem::from_transitions(table, sg, dg),
    ))
}

/// Controller as CSV `state,input`; losing states have an empty input.
pub fn write_controller(path: &Path, ctrl: &ControllerTable) -> Result<(), IoError> {
    let mut text = String::from("state,input\n");
    for (s, u) in ctrl.inputs.iter().enumerate() {
        match u {
            Some(u) if ctrl.winning[s] => text.push_str(&format!("{s},{u}\n")),
            _ => text.push_str(&format!("{s},\n")),
        }
    }
    write_text(path, &text)
}

pub fn read_controller(path: &Path) -> Result<ControllerTable, IoError> {
    let mut rdr = csv_reader(path)?;
    let mut winning = Vec::new();
    let mut inputs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let s = parse_usize(path, rec.get(0).unwrap_or(""))?;
        if s != winning.len() {
            return Err(format_err(path, format!("state {s} out of order")));
        }
        let u = match rec.get(1).map(str::trim) {
            None | Some("") => None,
            Some(v) => Some(parse_usize(path, v)?),
        };
        winning.push(u.is_some());
        inputs.push(u);
    }
    Ok(ControllerTable {
        winning,
        inputs,
        iterations: 0,
    })
}

/// Trajectories as CSV `time,subsystem,state,input,safe`. Vector entries are
/// joined with `;`; `input` holds the applied input value and is empty at the
/// last recorded step.
pub fn write_trajectories(
    path: &Path,
    trajs: &[Trajectory],
    input_values: &[Vec<Vec<f64>>],
) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["time", "subsystem", "state", "input", "safe"])
        .map_err(csv_err(path))?;
    let steps = trajs.iter().map(|t| t.states.len()).max().unwrap_or(0);
    for t in 0..steps {
        for tr in trajs {
            let Some(x) = tr.states.get(t) else { continue };
            let input = tr
                .inputs
                .get(t)
                .and_then(|&u| input_values.get(tr.subsystem).and_then(|v| v.get(u)))
                .map(|v| join(v))
                .unwrap_or_default();
            w.write_record([
                t.to_string(),
                tr.subsystem.to_string(),
                join(x),
                input,
                tr.safe[t].to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(file_err(path))
}

/// One row of a trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub time: usize,
    pub subsystem: usize,
    pub state: Vec<f64>,
    pub input: Option<Vec<f64>>,
    pub safe: bool,
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRow>, IoError> {
    let mut rdr = csv_reader(path)?;
    let split = |s: &str| -> Result<Vec<f64>, IoError> {
        s.split(';').map(|v| parse_f64(path, v)).collect()
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != 5 {
            return Err(format_err(
                path,
                format!("row has {} fields, expected 5", rec.len()),
            ));
        }
        rows.push(TrajectoryRow {
            time: parse_usize(path, &rec[0])?,
            subsystem: parse_usize(path, &rec[1])?,
            state: split(&rec[2])?,
            input: if rec[3].is_empty() {
                None
            } else {
                Some(split(&rec[3])?)
            },
            safe: match &rec[4] {
                "true" => true,
                "false" => false,
                other => return Err(format_err(path, format!("bad flag {other:?}"))),
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_room_network, RoomNetworkParams};
    use crate::quantize::make_grid;
    use crate::scenario::draw_samples;
    use crate::synthesize::{enumerate_abstraction, safe_cells, safety_synthesis};

    #[test]
    fn samples_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let net = build_room_network(&RoomNetworkParams::with_rooms(3)).unwrap();
        let batch = draw_samples(net.rooms[0].signature(), 50, 9).unwrap();
        let path = dir.path().join("s.csv");
        write_samples(&path, &batch).unwrap();
        assert_eq!(read_samples(&path).unwrap(), batch);
    }

    #[test]
    fn abstraction_and_controller_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = build_room_network(&RoomNetworkParams::with_rooms(3)).unwrap();
        let room = &net.rooms[0];
        let sg = make_grid(&room.signature().state_box, 0.05).unwrap();
        let dg = make_grid(&room.signature().disturbance_box, 0.1).unwrap();
        let fts = enumerate_abstraction(room, &sg, &dg).unwrap();
        let inputs: Vec<Vec<f64>> = room.signature().inputs.iter().collect();
        let path = dir.path().join("a.txt");
        write_abstraction(&path, room.name(), &inputs, &fts).unwrap();
        let (header, back) = read_abstraction(&path).unwrap();
        assert_eq!(back, fts);
        assert_eq!(header.input_values, inputs);
        assert_eq!(header.state_grid.grid().unwrap(), sg);

        let ctrl = safety_synthesis(&fts, &safe_cells(&sg, &room.signature().state_box)).unwrap();
        let cpath = dir.path().join("c.csv");
        write_controller(&cpath, &ctrl).unwrap();
        let read = read_controller(&cpath).unwrap();
        assert_eq!(read.winning, ctrl.winning);
        assert_eq!(
            read.inputs
                .iter()
                .zip(&ctrl.winning)
                .filter(|(_, w)| **w)
                .count(),
            ctrl.winning_count()
        );
        read.verify(&back).unwrap();
    }

    #[test]
    fn truncated_abstraction_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_text(&path, "format = \"x\"\n").unwrap();
        assert!(matches!(
            read_abstraction(&path),
            Err(IoError::Format { .. })
        ));
    }

    #[test]
    fn trajectories_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let trajs = vec![
            Trajectory {
                subsystem: 0,
                states: vec![vec![0.1], vec![0.2], vec![0.3]],
                inputs: vec![1, 0],
                safe: vec![true, true, false],
                truncated: None,
            },
            Trajectory {
                subsystem: 1,
                states: vec![vec![-0.1], vec![0.25]],
                inputs: vec![1],
                safe: vec![true, true],
                truncated: Some("stopped".into()),
            },
        ];
        let values = vec![vec![vec![0.0], vec![0.05]]; 2];
        let path = dir.path().join("t.csv");
        write_trajectories(&path, &trajs, &values).unwrap();
        let rows = read_trajectories(&path).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].input, Some(vec![0.05]));
        assert_eq!(rows[1].subsystem, 1);
        assert_eq!(rows[4].state, vec![0.3]);
        assert_eq!(rows[4].input, None);
        assert!(!rows[4].safe);
        let text = read_text(&path).unwrap();
        assert!(text.starts_with("time,subsystem,state,input,safe\n0,0,0.1,0.05,true\n"));
    }
}
