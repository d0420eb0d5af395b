//! Text and binary file formats for traces, picks, labels and stations.
//!
//! Trace CSV: one metadata line `station,rate_hz,start_us` (optionally preceded
//! by that literal header), then one `e,n,z` row per sample. An empty field ends
//! that channel, which is how a short channel shows up.
//!
//! Trace bin: `QPK1`, u32 station-id length, id bytes, f64 rate, i64 start_us,
//! i64 n, then 3·n f32 samples channel-major (E, N, Z). All little endian.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};

use super::{sort_picks, LabeledArrival, Pick, Stage, Station, StationCatalog, Timestamp, TriTrace};

const MAGIC: &[u8; 4] = b"QPK1";
const PICK_HEADER: [&str; 4] = ["station", "time_us", "confidence", "stage"];
const REFINED_EXTRA: [&str; 3] = ["event_id", "n_stations", "low_contrast"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Bin,
}

impl TraceFormat {
    /// `.bin` and `.qpk` are binary; everything else is CSV.
    pub fn from_path(path: &std::path::Path) -> TraceFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("qpk") => TraceFormat::Bin,
            _ => TraceFormat::Csv,
        }
    }
}

pub fn parse_trace<R: Read>(reader: R, format: TraceFormat) -> Result<TriTrace> {
    match format {
        TraceFormat::Csv => parse_trace_csv(reader),
        TraceFormat::Bin => parse_trace_bin(reader),
    }
}

pub fn write_trace<W: Write>(trace: &TriTrace, format: TraceFormat, mut sink: W) -> Result<()> {
    match format {
        TraceFormat::Csv => {
            let mut w = std::io::BufWriter::new(&mut sink);
            writeln!(w, "{},{},{}", trace.station_id(), trace.sample_rate_hz(), trace.start_time())?;
            let (e, n, z) = (trace.e().samples(), trace.n().samples(), trace.z().samples());
            for i in 0..trace.len() {
                writeln!(w, "{},{},{}", e[i], n[i], z[i])?;
            }
            w.flush()?;
        }
        TraceFormat::Bin => {
            let id = trace.station_id().as_bytes();
            let mut buf = Vec::with_capacity(32 + id.len() + 12 * trace.len());
            buf.extend_from_slice(MAGIC);
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id);
            buf.extend_from_slice(&trace.sample_rate_hz().to_le_bytes());
            buf.extend_from_slice(&trace.start_time().micros().to_le_bytes());
            buf.extend_from_slice(&(trace.len() as i64).to_le_bytes());
            for ch in [trace.e(), trace.n(), trace.z()] {
                for &v in ch.samples() {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            sink.write_all(&buf)?;
        }
    }
    Ok(())
}

fn parse_trace_csv<R: Read>(reader: R) -> Result<TriTrace> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let next_nonempty = |lines: &mut dyn Iterator<Item = (usize, std::io::Result<String>)>| -> Result<Option<(usize, String)>> {
        for (i, l) in lines {
            let l = l?;
            if !l.trim().is_empty() {
                return Ok(Some((i + 1, l)));
            }
        }
        Ok(None)
    };

    let (_, mut meta) = next_nonempty(&mut lines)?.ok_or_else(|| Error::MalformedHeader("empty input".into()))?;
    if meta.trim() == "station,rate_hz,start_us" {
        meta = next_nonempty(&mut lines)?
            .ok_or_else(|| Error::MalformedHeader("missing metadata line".into()))?
            .1;
    }
    let fields: Vec<&str> = meta.split(',').map(str::trim).collect();
    if fields.len() != 3 || fields[0].is_empty() {
        return Err(Error::MalformedHeader(format!("expected station,rate_hz,start_us; got {meta:?}")));
    }
    let station = fields[0].to_string();
    let rate: f64 = fields[1]
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad rate {:?}", fields[1])))?;
    let start: i64 = fields[2]
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad start_us {:?}", fields[2])))?;
    if rate.is_finite() && rate <= 0.0 {
        return Err(Error::NonMonotonicTime(format!("sample rate {rate} does not advance time")));
    }

    let mut chans: [Vec<f64>; 3] = Default::default();
    let mut ended = [false; 3];
    let mut first_row = true;
    while let Some((line_no, line)) = next_nonempty(&mut lines)? {
        if first_row && line.trim() == "e,n,z" {
            first_row = false;
            continue;
        }
        first_row = false;
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() > 3 {
            return Err(Error::MalformedRow { line: line_no, msg: format!("{} fields", parts.len()) });
        }
        for c in 0..3 {
            match parts.get(c).copied().filter(|s| !s.is_empty()) {
                None => ended[c] = true,
                Some(s) => {
                    if ended[c] {
                        return Err(Error::MalformedRow {
                            line: line_no,
                            msg: "value after channel ended".into(),
                        });
                    }
                    let v: f64 = s
                        .parse()
                        .map_err(|_| Error::MalformedRow { line: line_no, msg: format!("bad number {s:?}") })?;
                    chans[c].push(v);
                }
            }
        }
    }
    let [e, n, z] = chans;
    if e.len() != n.len() || e.len() != z.len() {
        return Err(Error::ChannelLengthMismatch { e: e.len(), n: n.len(), z: z.len() });
    }
    TriTrace::from_channels(&station, rate, Timestamp(start), e, n, z)
}

fn parse_trace_bin<R: Read>(mut reader: R) -> Result<TriTrace> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut cur = Cursor { buf: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    let id_len = u32::from_le_bytes(cur.array()?) as usize;
    let id = std::str::from_utf8(cur.take(id_len)?)
        .map_err(|_| Error::MalformedHeader("station id is not utf-8".into()))?
        .to_string();
    let rate = f64::from_le_bytes(cur.array()?);
    let start = i64::from_le_bytes(cur.array()?);
    let n = i64::from_le_bytes(cur.array()?);
    if n < 0 {
        return Err(Error::MalformedHeader(format!("negative sample count {n}")));
    }
    if rate.is_finite() && rate <= 0.0 {
        return Err(Error::NonMonotonicTime(format!("sample rate {rate} does not advance time")));
    }
    let n = n as usize;
    let remaining = bytes.len() - cur.pos;
    if remaining != 12 * n {
        return Err(Error::MalformedHeader(format!("expected {} sample bytes, found {remaining}", 12 * n)));
    }
    let mut chan = || -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f32::from_le_bytes(cur.array()?) as f64)).collect()
    };
    let e = chan()?;
    let nn = chan()?;
    let z = chan()?;
    TriTrace::from_channels(&id, rate, Timestamp(start), e, nn, z)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.buf.len() {
            return Err(Error::MalformedHeader("truncated input".into()));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Write picks as `station,time_us,confidence,stage`.
pub fn write_picks<W: Write>(picks: &[Pick], sink: W) -> Result<()> {
    write_picks_impl(picks, sink, false)
}

/// Write picks with the association columns `event_id,n_stations,low_contrast`.
pub fn write_refined_picks<W: Write>(picks: &[Pick], sink: W) -> Result<()> {
    write_picks_impl(picks, sink, true)
}

fn write_picks_impl<W: Write>(picks: &[Pick], sink: W, refined: bool) -> Result<()> {
    let mut sorted = picks.to_vec();
    sort_picks(&mut sorted);
    let mut w = csv::Writer::from_writer(sink);
    if refined {
        w.write_record(PICK_HEADER.iter().chain(REFINED_EXTRA.iter()))?;
    } else {
        w.write_record(PICK_HEADER)?;
    }
    for p in &sorted {
        let mut rec = vec![
            p.station_id.clone(),
            p.time.to_string(),
            p.confidence.to_string(),
            p.stage.as_str().to_string(),
        ];
        if refined {
            match p.event {
                Some(tag) => {
                    rec.push(tag.event_id.to_string());
                    rec.push(tag.n_stations.to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
            rec.push(p.low_contrast.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read either pick CSV layout.
pub fn read_picks<R: Read>(source: R) -> Result<Vec<Pick>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = r.headers()?.clone();
    let refined = header.len() == 7;
    let expected: Vec<&str> = if refined {
        PICK_HEADER.iter().chain(REFINED_EXTRA.iter()).copied().collect()
    } else {
        PICK_HEADER.to_vec()
    };
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::MalformedHeader(format!("unexpected pick header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| Error::MalformedRow { line, msg };
        let time: i64 = rec[1].parse().map_err(|_| bad(format!("bad time_us {:?}", &rec[1])))?;
        let confidence: f64 = rec[2].parse().map_err(|_| bad(format!("bad confidence {:?}", &rec[2])))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(bad(format!("confidence {confidence} outside [0,1]")));
        }
        let stage: Stage = rec[3].parse().map_err(|_| bad(format!("bad stage {:?}", &rec[3])))?;
        let mut pick = Pick::new(&rec[0], Timestamp(time), confidence, stage);
        if refined {
            if !rec[4].is_empty() {
                let event_id = rec[4].parse().map_err(|_| bad(format!("bad event_id {:?}", &rec[4])))?;
                let n_stations = rec[5].parse().map_err(|_| bad(format!("bad n_stations {:?}", &rec[5])))?;
                pick.event = Some(super::EventTag { event_id, n_stations });
            }
            pick.low_contrast = rec[6].parse().map_err(|_| bad(format!("bad low_contrast {:?}", &rec[6])))?;
        }
        out.push(pick);
    }
    Ok(out)
}

/// Read `station,time_us` labels, sorted by (station, time); exact duplicates are rejected.
pub fn load_labels<R: Read>(source: R) -> Result<Vec<LabeledArrival>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["station", "time_us"] {
        return Err(Error::MalformedHeader(format!("unexpected label header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 || rec[0].is_empty() {
            return Err(Error::MalformedRow { line: i + 2, msg: format!("{rec:?}") });
        }
        let time: i64 = rec[1]
            .parse()
            .map_err(|_| Error::MalformedRow { line: i + 2, msg: format!("bad time_us {:?}", &rec[1]) })?;
        out.push(LabeledArrival { station_id: rec[0].to_string(), time: Timestamp(time) });
    }
    out.sort();
    if let Some(w) = out.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Duplicate(format!("label {} at {}", w[0].station_id, w[0].time)));
    }
    Ok(out)
}

pub fn write_labels<W: Write>(labels: &[LabeledArrival], sink: W) -> Result<()> {
    let mut sorted = labels.to_vec();
    sorted.sort();
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["station", "time_us"])?;
    for l in &sorted {
        w.write_record([l.station_id.as_str(), &l.time.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_stations<R: Read>(source: R) -> Result<StationCatalog> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["station", "lat", "lon"] {
        return Err(Error::MalformedHeader(format!("unexpected station header {header:?}")));
    }
    let mut stations = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::MalformedRow { line: i + 2, msg: format!("bad {what}") };
        let lat: f64 = rec.get(1).ok_or_else(|| bad("lat"))?.parse().map_err(|_| bad("lat"))?;
        let lon: f64 = rec.get(2).ok_or_else(|| bad("lon"))?.parse().map_err(|_| bad("lon"))?;
        stations.push(Station::new(&rec[0], lat, lon)?);
    }
    StationCatalog::new(stations)
}

pub fn write_stations<W: Write>(catalog: &StationCatalog, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["station", "lat", "lon"])?;
    for s in catalog.iter() {
        w.write_record([s.station_id.clone(), s.latitude_deg.to_string(), s.longitude_deg.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
