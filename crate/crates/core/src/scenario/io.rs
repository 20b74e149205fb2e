//! Binary container format (canonical) and the line-delimited JSON mirror.
//!
//! ```text
//! header  : "ZSIM" | version u16 | dt f64 | 2 reserved zero bytes   (16 bytes, little endian)
//! record  : body_len u32 | body
//! body    : id        u32 byte count, utf-8
//!           num_steps u32
//!           ego_log   f32 array [x, y, heading, v] * num_steps
//!           agents    u32 count, each: id u32, dims f32[2], poses f32[4n], valid f32[n]
//!           route     u32 lane count, each: lane_id u32, left f32[2m], right f32[2m], interval f32[2]
//!           features  u32 count, each: kind u8, directionality u8, points f32[2m]
//!           signals   u32 count, each: id u32, stop_point f32[2], states u8[n]
//!           stop_lines u32 count, each: points f32[2m], position f32[2]
//!           speed_limit f32[1]
//!           goal      f32[2]
//! ```
//! Every array (`f32[..]`, `u8[..]`) is preceded by its u32 element count.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::*;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ZSIM";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

/// Writes scenarios to the binary container. All scenarios must share one `dt`.
pub fn write_scenario_file(scenarios: &[Scenario], path: impl AsRef<Path>) -> Result<()> {
    let dt = check_all(scenarios)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u16::<LE>(FORMAT_VERSION)?;
    w.write_f64::<LE>(dt)?;
    w.write_all(&[0, 0])?;
    let mut body = Vec::new();
    for s in scenarios {
        body.clear();
        encode_scenario(s, &mut body)?;
        w.write_u32::<LE>(body.len() as u32)?;
        w.write_all(&body)?;
    }
    w.flush()?;
    Ok(())
}

fn check_all(scenarios: &[Scenario]) -> Result<f64> {
    let dt = scenarios.first().map(|s| s.dt).unwrap_or(DEFAULT_DT);
    for (index, s) in scenarios.iter().enumerate() {
        s.validate()
            .map_err(|what| Error::Invariant { index, what })?;
        if s.dt != dt {
            return Err(Error::Invariant {
                index,
                what: format!("dt matches the file dt {dt} (got {})", s.dt),
            });
        }
    }
    Ok(dt)
}

pub fn read_scenario_file(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    let file = ScenarioFile::open(path)?;
    (0..file.len()).map(|i| file.read(i)).collect()
}

/// An opened container with its record offsets indexed for random access.
#[derive(Clone, Debug)]
pub struct ScenarioFile {
    bytes: std::sync::Arc<Vec<u8>>,
    dt: f64,
    records: Vec<(usize, usize)>,
}

impl ScenarioFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing ZSIM header".into()));
        }
        let mut c = Cursor::new(&bytes[4..HEADER_LEN]);
        let version = c.read_u16::<LE>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}"
            )));
        }
        let dt = c.read_f64::<LE>()?;
        let mut records = Vec::new();
        let mut pos = HEADER_LEN;
        while pos < bytes.len() {
            if pos + 4 > bytes.len() {
                return Err(Error::Format(format!(
                    "truncated record length at byte {pos}"
                )));
            }
            let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            if pos + len > bytes.len() {
                return Err(Error::Format(format!(
                    "record {} claims {len} bytes past end of file",
                    records.len()
                )));
            }
            records.push((pos, len));
            pos += len;
        }
        Ok(Self {
            bytes: std::sync::Arc::new(bytes),
            dt,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn read(&self, index: usize) -> Result<Scenario> {
        let &(start, len) = self.records.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.records.len(),
        })?;
        let mut c = Cursor::new(&self.bytes[start..start + len]);
        let s = decode_scenario(&mut c, self.dt)
            .map_err(|e| Error::Format(format!("record {index}: {e}")))?;
        if c.position() as usize != len {
            return Err(Error::Format(format!("record {index}: trailing bytes")));
        }
        Ok(s)
    }
}

/// Loads the scenarios at `indices`, in that order, padded to `horizon` steps.
pub fn load_batch(
    path: impl AsRef<Path>,
    indices: &[usize],
    horizon: usize,
) -> Result<ScenarioBatch> {
    let file = ScenarioFile::open(path)?;
    let scenarios = indices
        .iter()
        .map(|&i| file.read(i))
        .collect::<Result<Vec<_>>>()?;
    ScenarioBatch::new(scenarios, horizon)
}

fn put_f32s(out: &mut Vec<u8>, vals: impl ExactSizeIterator<Item = f32>) -> Result<()> {
    out.write_u32::<LE>(vals.len() as u32)?;
    for v in vals {
        out.write_f32::<LE>(v)?;
    }
    Ok(())
}

fn put_points(out: &mut Vec<u8>, pts: &[Point]) -> Result<()> {
    put_f32s(
        out,
        pts.iter()
            .flat_map(|p| [p.x, p.y])
            .collect::<Vec<_>>()
            .into_iter(),
    )
}

fn encode_scenario(s: &Scenario, out: &mut Vec<u8>) -> Result<()> {
    out.write_u32::<LE>(s.id.len() as u32)?;
    out.extend_from_slice(s.id.as_bytes());
    out.write_u32::<LE>(s.num_steps as u32)?;
    put_f32s(
        out,
        s.ego_log
            .iter()
            .flat_map(pose_arr)
            .collect::<Vec<_>>()
            .into_iter(),
    )?;

    out.write_u32::<LE>(s.agents.len() as u32)?;
    for a in &s.agents {
        out.write_u32::<LE>(a.id)?;
        put_f32s(out, [a.length, a.width].into_iter())?;
        put_f32s(
            out,
            a.poses
                .iter()
                .flat_map(pose_arr)
                .collect::<Vec<_>>()
                .into_iter(),
        )?;
        put_f32s(out, a.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }))?;
    }

    out.write_u32::<LE>(s.route.lanes.len() as u32)?;
    for l in &s.route.lanes {
        out.write_u32::<LE>(l.lane_id)?;
        put_points(out, &l.left_border)?;
        put_points(out, &l.right_border)?;
        put_f32s(out, [l.valid_interval.0, l.valid_interval.1].into_iter())?;
    }

    out.write_u32::<LE>(s.road_features.len() as u32)?;
    for f in &s.road_features {
        out.write_u8(f.kind.index() as u8)?;
        out.write_u8(f.directionality.index() as u8)?;
        put_points(out, &f.points)?;
    }

    out.write_u32::<LE>(s.traffic_lights.len() as u32)?;
    for sig in &s.traffic_lights {
        out.write_u32::<LE>(sig.id)?;
        put_points(out, &[sig.stop_point])?;
        out.write_u32::<LE>(sig.states.len() as u32)?;
        out.extend(sig.states.iter().map(|st| st.index() as u8));
    }

    out.write_u32::<LE>(s.stop_lines.len() as u32)?;
    for l in &s.stop_lines {
        put_points(out, &l.points)?;
        put_points(out, &[l.position])?;
    }

    put_f32s(out, [s.speed_limit].into_iter())?;
    put_points(out, &[s.goal])?;
    Ok(())
}

fn pose_arr(p: &LoggedPose) -> [f32; 4] {
    [p.x, p.y, p.heading, p.v]
}

type DecodeResult<T> = std::result::Result<T, String>;

fn get_u32(c: &mut Cursor<&[u8]>) -> DecodeResult<u32> {
    c.read_u32::<LE>().map_err(|e| e.to_string())
}

fn get_u8(c: &mut Cursor<&[u8]>) -> DecodeResult<u8> {
    c.read_u8().map_err(|e| e.to_string())
}

fn get_f32s(c: &mut Cursor<&[u8]>, expect: Option<usize>) -> DecodeResult<Vec<f32>> {
    let n = get_u32(c)? as usize;
    if let Some(e) = expect {
        if n != e {
            return Err(format!("expected {e} elements, found {n}"));
        }
    }
    let remaining = c.get_ref().len() - c.position() as usize;
    if n * 4 > remaining {
        return Err(format!("array of {n} f32 overruns record"));
    }
    let mut v = vec![0f32; n];
    c.read_f32_into::<LE>(&mut v).map_err(|e| e.to_string())?;
    Ok(v)
}

fn get_points(c: &mut Cursor<&[u8]>, expect: Option<usize>) -> DecodeResult<Vec<Point>> {
    let flat = get_f32s(c, expect.map(|n| 2 * n))?;
    if flat.len() % 2 != 0 {
        return Err("odd point array".into());
    }
    Ok(flat
        .chunks_exact(2)
        .map(|p| Vec2::new(p[0], p[1]))
        .collect())
}

fn get_poses(c: &mut Cursor<&[u8]>, n: usize) -> DecodeResult<Vec<LoggedPose>> {
    let flat = get_f32s(c, Some(4 * n))?;
    Ok(flat
        .chunks_exact(4)
        .map(|p| LoggedPose {
            x: p[0],
            y: p[1],
            heading: p[2],
            v: p[3],
        })
        .collect())
}

fn decode_scenario(c: &mut Cursor<&[u8]>, dt: f64) -> DecodeResult<Scenario> {
    let id_len = get_u32(c)? as usize;
    let mut id = vec![0u8; id_len];
    c.read_exact(&mut id).map_err(|e| e.to_string())?;
    let id = String::from_utf8(id).map_err(|e| e.to_string())?;
    let num_steps = get_u32(c)? as usize;
    let ego_log = get_poses(c, num_steps)?;

    let n_agents = get_u32(c)?;
    let mut agents = Vec::new();
    for _ in 0..n_agents {
        let id = get_u32(c)?;
        let dims = get_f32s(c, Some(2))?;
        let poses = get_poses(c, num_steps)?;
        let valid = get_f32s(c, Some(num_steps))?
            .into_iter()
            .map(|v| v != 0.0)
            .collect();
        agents.push(LoggedAgent {
            id,
            length: dims[0],
            width: dims[1],
            poses,
            valid,
        });
    }

    let n_lanes = get_u32(c)?;
    let mut lanes = Vec::new();
    for _ in 0..n_lanes {
        let lane_id = get_u32(c)?;
        let left_border = get_points(c, None)?;
        let right_border = get_points(c, None)?;
        let iv = get_f32s(c, Some(2))?;
        lanes.push(RouteLane {
            lane_id,
            left_border,
            right_border,
            valid_interval: (iv[0], iv[1]),
        });
    }

    let n_features = get_u32(c)?;
    let mut road_features = Vec::new();
    for _ in 0..n_features {
        let k = get_u8(c)?;
        let d = get_u8(c)?;
        let kind = FeatureKind::from_index(k).ok_or(format!("bad feature kind {k}"))?;
        let directionality =
            Directionality::from_index(d).ok_or(format!("bad directionality {d}"))?;
        road_features.push(RoadFeature {
            points: get_points(c, None)?,
            kind,
            directionality,
        });
    }

    let n_signals = get_u32(c)?;
    let mut traffic_lights = Vec::new();
    for _ in 0..n_signals {
        let id = get_u32(c)?;
        let stop_point = get_points(c, Some(1))?[0];
        let n = get_u32(c)? as usize;
        let mut states = Vec::with_capacity(n);
        for _ in 0..n {
            let b = get_u8(c)?;
            states.push(LightState::from_index(b).ok_or(format!("bad light state {b}"))?);
        }
        traffic_lights.push(TrafficSignal {
            id,
            stop_point,
            states,
        });
    }

    let n_stop = get_u32(c)?;
    let mut stop_lines = Vec::new();
    for _ in 0..n_stop {
        let points = get_points(c, None)?;
        let position = get_points(c, Some(1))?[0];
        stop_lines.push(StopLine { points, position });
    }

    let speed_limit = get_f32s(c, Some(1))?[0];
    let goal = get_points(c, Some(1))?[0];
    Ok(Scenario {
        id,
        num_steps,
        dt,
        ego_log,
        agents,
        route: Route { lanes },
        road_features,
        traffic_lights,
        stop_lines,
        speed_limit,
        goal,
    })
}

/// Debug mirror: one JSON scenario per line.
pub fn write_scenarios_json(scenarios: &[Scenario], path: impl AsRef<Path>) -> Result<()> {
    check_all(scenarios)?;
    let mut w = BufWriter::new(File::create(path)?);
    for s in scenarios {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scenarios_json(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Scenario = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::straight_scenario;
    use super::*;

    fn rich_scenario() -> Scenario {
        let mut s = straight_scenario(12, 4.0);
        s.id = "rich-1".into();
        s.agents.push(LoggedAgent {
            id: 9,
            length: 4.5,
            width: 1.9,
            poses: (0..12)
                .map(|t| LoggedPose {
                    x: 30.0 + t as f32,
                    y: 0.1,
                    heading: 0.01,
                    v: 10.0,
                })
                .collect(),
            valid: (0..12).map(|t| t % 3 != 0).collect(),
        });
        s.road_features.push(RoadFeature {
            points: vec![Vec2::new(0.0, 1.75), Vec2::new(200.0, 1.75)],
            kind: FeatureKind::RoadEdge,
            directionality: Directionality::Both,
        });
        s.traffic_lights.push(TrafficSignal {
            id: 4,
            stop_point: Vec2::new(80.0, 0.0),
            states: (0..12).map(|t| LightState::ALL[t % 4]).collect(),
        });
        s.stop_lines.push(StopLine {
            points: vec![Vec2::new(60.0, -1.75), Vec2::new(60.0, 1.75)],
            position: Vec2::new(60.0, 0.0),
        });
        s
    }

    #[test]
    fn round_trip_single() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.zsim");
        let s = rich_scenario();
        write_scenario_file(std::slice::from_ref(&s), &p).unwrap();
        let back = read_scenario_file(&p).unwrap();
        assert_eq!(back, vec![s]);
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.zsim");
        write_scenario_file(&[rich_scenario()], &p).unwrap();
        let b = std::fs::read(&p).unwrap();
        assert_eq!(&b[..4], b"ZSIM");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), FORMAT_VERSION);
        assert_eq!(f64::from_le_bytes(b[6..14].try_into().unwrap()), DEFAULT_DT);
        assert_eq!(&b[14..16], &[0, 0]);
    }

    #[test]
    fn invalid_scenario_names_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = straight_scenario(2, 1.0);
        bad.num_steps = 1;
        bad.ego_log.truncate(1);
        let err = write_scenario_file(&[rich_scenario(), bad], dir.path().join("x")).unwrap_err();
        match err {
            Error::Invariant { index, what } => {
                assert_eq!(index, 1);
                assert!(what.contains("num_steps"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.zsim");
        write_scenario_file(&[rich_scenario()], &p).unwrap();
        let mut b = std::fs::read(&p).unwrap();
        b.truncate(b.len() - 3);
        assert!(matches!(ScenarioFile::from_bytes(b), Err(Error::Format(_))));
    }

    #[test]
    fn json_mirror_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let s = vec![rich_scenario(), straight_scenario(7, 2.0)];
        write_scenarios_json(&s, &p).unwrap();
        assert_eq!(read_scenarios_json(&p).unwrap(), s);
    }

    #[test]
    fn out_of_range_index() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.zsim");
        write_scenario_file(&[rich_scenario()], &p).unwrap();
        assert!(matches!(
            load_batch(&p, &[1], 40),
            Err(Error::IndexOutOfRange { index: 1, len: 1 })
        ));
    }
}
