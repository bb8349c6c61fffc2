use std::path::Path;

use super::scenario::{DatasetSplit, Lane, Point, Scenario, ScenarioKind};
use super::{DataError, DEFAULT_OBS_LEN, DEFAULT_PRED_LEN};

pub const CONTAINER_MAGIC: &[u8; 8] = b"DYTTPSCN";
pub const CONTAINER_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn points(&mut self, pts: &[Point]) {
        for p in pts {
            self.0.extend_from_slice(&(p[0] as f32).to_le_bytes());
            self.0.extend_from_slice(&(p[1] as f32).to_le_bytes());
        }
    }
    fn flags(&mut self, flags: &[bool]) {
        self.0.extend(flags.iter().map(|&f| f as u8));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.buf.len() - self.pos < n {
            return Err(DataError::Truncated(format!(
                "{} needs {n} bytes at offset {}, {} left",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String, DataError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DataError::Format(format!("{}: string is not UTF-8", self.what)))
    }
    fn points(&mut self, n: usize) -> Result<Vec<Point>, DataError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| DataError::Format("point count overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| {
                let x = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
                let y = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
                [x as f64, y as f64]
            })
            .collect())
    }
    fn flags(&mut self, n: usize) -> Result<Vec<bool>, DataError> {
        self.take(n)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(DataError::Format(format!("{}: invalid flag byte {b}", self.what))),
            })
            .collect()
    }
}

fn encode_record(s: &Scenario) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.str(&s.id);
    w.u8(s.kind.code());
    w.u32(s.focal);
    w.u32(s.num_agents());
    w.points(&s.histories);
    w.flags(&s.history_valid);
    w.points(&s.futures);
    w.flags(&s.future_valid);
    w.u32(s.lanes.len());
    for lane in &s.lanes {
        w.str(&lane.id);
        w.u32(lane.points.len());
        w.points(&lane.points);
    }
    w.0
}

fn decode_record(buf: &[u8], obs_len: usize, pred_len: usize) -> Result<Scenario, DataError> {
    let mut r = Reader {
        buf,
        pos: 0,
        what: "scenario record",
    };
    let id = r.str()?;
    let code = r.u8()?;
    let kind = ScenarioKind::from_code(code).ok_or_else(|| DataError::Format(format!("scenario {id}: unknown kind code {code}")))?;
    let focal = r.u32()?;
    let n = r.u32()?;
    let histories = r.points(n * obs_len)?;
    let history_valid = r.flags(n * obs_len)?;
    let futures = r.points(n * pred_len)?;
    let future_valid = r.flags(n * pred_len)?;
    let lane_count = r.u32()?;
    let mut lanes = Vec::with_capacity(lane_count.min(buf.len()));
    for _ in 0..lane_count {
        let id = r.str()?;
        let len = r.u32()?;
        lanes.push(Lane {
            id,
            points: r.points(len)?,
        });
    }
    if r.pos != buf.len() {
        return Err(DataError::Format(format!(
            "scenario {id}: {} trailing bytes in record",
            buf.len() - r.pos
        )));
    }
    let s = Scenario {
        id,
        obs_len,
        pred_len,
        histories,
        history_valid,
        futures,
        future_valid,
        lanes,
        focal,
        kind,
    };
    s.validate()?;
    Ok(s)
}

/// Serialize a split. Coordinates are stored as little-endian f32.
pub fn encode_scenarios(split: &DatasetSplit) -> Result<Vec<u8>, DataError> {
    let (obs_len, pred_len) = split
        .iter()
        .next()
        .map_or((DEFAULT_OBS_LEN, DEFAULT_PRED_LEN), |s| (s.obs_len, s.pred_len));
    let mut w = Writer(CONTAINER_MAGIC.to_vec());
    w.u32(CONTAINER_VERSION as usize);
    w.u32(obs_len);
    w.u32(pred_len);
    w.u32(split.train.len());
    w.u32(split.val.len());
    w.u64(split.seed);
    for s in split.iter() {
        if (s.obs_len, s.pred_len) != (obs_len, pred_len) {
            return Err(DataError::InvalidScenario {
                id: s.id.clone(),
                msg: format!(
                    "horizons {}/{} differ from the container's {obs_len}/{pred_len}",
                    s.obs_len, s.pred_len
                ),
            });
        }
        s.validate()?;
        let record = encode_record(s);
        w.u32(record.len());
        w.0.extend_from_slice(&record);
    }
    Ok(w.0)
}

pub fn decode_scenarios(buf: &[u8]) -> Result<DatasetSplit, DataError> {
    let mut r = Reader {
        buf,
        pos: 0,
        what: "container header",
    };
    let magic = r.take(CONTAINER_MAGIC.len())?;
    if magic != CONTAINER_MAGIC {
        return Err(DataError::BadMagic {
            expected: CONTAINER_MAGIC.to_vec(),
            found: magic.to_vec(),
        });
    }
    let version = r.u32()? as u32;
    if version != CONTAINER_VERSION {
        return Err(DataError::BadVersion {
            found: version,
            supported: CONTAINER_VERSION,
        });
    }
    let obs_len = r.u32()?;
    let pred_len = r.u32()?;
    let train = r.u32()?;
    let val = r.u32()?;
    let seed = r.u64()?;
    r.what = "scenario record";
    let mut split = DatasetSplit {
        seed,
        ..DatasetSplit::default()
    };
    for i in 0..train + val {
        let len = r.u32()?;
        let s = decode_record(r.take(len)?, obs_len, pred_len)?;
        if i < train {
            split.train.push(s);
        } else {
            split.val.push(s);
        }
    }
    if r.pos != buf.len() {
        return Err(DataError::Format(format!(
            "{} trailing bytes after the last record",
            buf.len() - r.pos
        )));
    }
    Ok(split)
}

pub fn save_scenarios(split: &DatasetSplit, path: &Path) -> Result<(), DataError> {
    let bytes = encode_scenarios(split)?;
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn load_scenarios(path: &Path) -> Result<DatasetSplit, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_scenarios(&bytes)
}
