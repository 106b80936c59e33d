//! Trace ingestion: packet-event parsing, connection aggregation, ADU
//! segmentation and the flow-summary / ADU CSV formats.
//!
//! Packet-event lines look like `conn_id,timestamp,direction,payload_bytes,dst_port`
//! with `direction` one of `A` / `B`. Flow-summary lines are
//! `conn_id,size_bytes,duration_s,is_http` and ADU lines are
//! `conn_id,adu_index,direction,size_bytes,duration_s,is_http`. None of the
//! formats has a header; lines starting with `#` and blank lines are skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::Serialize;

/// Errors raised while reading traces or configuring segmentation.
#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("invalid {field} at line {line}: {detail}")]
    Field {
        line: usize,
        field: &'static str,
        detail: String,
    },
    #[error("wrong field count at line {line}: expected {expected}, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-positive duration at line {line}")]
    NonPositiveDuration { line: usize },
    #[error("invalid quiet threshold {0}: must be positive and finite")]
    QuietThreshold(f64),
    #[error("invalid port list `{0}`")]
    PortList(String),
    #[error("unrecognised summary layout at line {line}: {found} fields (expected 4 or 6)")]
    UnknownLayout { line: usize, found: usize },
    #[error("read error at line {line}: {source}")]
    Io {
        line: usize,
        #[source]
        source: io::Error,
    },
}

fn field_err(line: usize, field: &'static str, detail: impl Into<String>) -> IngestError {
    IngestError::Field {
        line,
        field,
        detail: detail.into(),
    }
}

/// Packet direction relative to the connection initiator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Direction {
    AtoB,
    BtoA,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AtoB => "A",
            Direction::BtoA => "B",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Absolute time held as integer nanoseconds since the epoch.
///
/// Decimal timestamps are parsed digit by digit so that microsecond (and
/// finer) precision survives until the first/last subtraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(u64);

impl Timestamp {
    const NANOS_PER_SEC: u64 = 1_000_000_000;

    pub fn from_nanos(nanos: u64) -> Self {
        Timestamp(nanos)
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / Self::NANOS_PER_SEC as f64
    }

    /// Seconds elapsed from `earlier` to `self` (saturating at zero).
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        self.0.saturating_sub(earlier.0) as f64 / Self::NANOS_PER_SEC as f64
    }
}

impl FromStr for Timestamp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("`{s}` is not a non-negative decimal number"));
        }
        if !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("`{s}` is not a non-negative decimal number"));
        }
        if frac_part.len() > 9 {
            return Err(format!("`{s}` has more than 9 fractional digits"));
        }
        let secs: u64 = int_part
            .parse()
            .map_err(|_| format!("`{s}` is out of range"))?;
        let mut frac: u64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().unwrap()
        };
        for _ in frac_part.len()..9 {
            frac *= 10;
        }
        secs.checked_mul(Self::NANOS_PER_SEC)
            .and_then(|n| n.checked_add(frac))
            .map(Timestamp)
            .ok_or_else(|| format!("`{s}` is out of range"))
    }
}

/// One data-carrying packet observed within a connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketEvent {
    pub conn_id: String,
    pub timestamp: Timestamp,
    pub direction: Direction,
    pub payload_bytes: u64,
    pub dst_port: u16,
}

/// Set of destination ports treated as HTTP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpPorts(BTreeSet<u16>);

impl HttpPorts {
    pub fn new(ports: impl IntoIterator<Item = u16>) -> Self {
        HttpPorts(ports.into_iter().collect())
    }

    pub fn contains(&self, port: u16) -> bool {
        self.0.contains(&port)
    }

    pub fn iter(&self) -> impl Iterator<Item = u16> + '_ {
        self.0.iter().copied()
    }
}

impl Default for HttpPorts {
    fn default() -> Self {
        HttpPorts::new([80, 8080])
    }
}

impl FromStr for HttpPorts {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|p| p.trim().parse::<u16>())
            .collect::<Result<BTreeSet<_>, _>>()
            .map(HttpPorts)
            .map_err(|_| IngestError::PortList(s.to_string()))
    }
}

/// True iff any observed destination port of a connection is an HTTP port.
pub fn classify_http<I>(observed_ports: I, http_ports: &HttpPorts) -> bool
where
    I: IntoIterator<Item = u16>,
{
    observed_ports.into_iter().any(|p| http_ports.contains(p))
}

/// Common view over connection and ADU summaries.
pub trait Transfer {
    fn id(&self) -> &str;
    fn size_bytes(&self) -> u64;
    fn duration_s(&self) -> f64;
    fn is_http(&self) -> bool;
}

/// Aggregated record of one TCP connection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectionSummary {
    pub conn_id: String,
    /// Payload bytes in both directions.
    pub size_bytes: u64,
    /// Last minus first packet timestamp, always > 0.
    pub duration_s: f64,
    /// Unknown for pre-aggregated input.
    pub packet_count: Option<u64>,
    pub is_http: bool,
}

impl Transfer for ConnectionSummary {
    fn id(&self) -> &str {
        &self.conn_id
    }
    fn size_bytes(&self) -> u64 {
        self.size_bytes
    }
    fn duration_s(&self) -> f64 {
        self.duration_s
    }
    fn is_http(&self) -> bool {
        self.is_http
    }
}

/// One application data unit carved out of a connection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AduSummary {
    pub conn_id: String,
    pub adu_index: u32,
    pub direction: Direction,
    pub size_bytes: u64,
    pub duration_s: f64,
    pub is_http: bool,
}

impl Transfer for AduSummary {
    fn id(&self) -> &str {
        &self.conn_id
    }
    fn size_bytes(&self) -> u64 {
        self.size_bytes
    }
    fn duration_s(&self) -> f64 {
        self.duration_s
    }
    fn is_http(&self) -> bool {
        self.is_http
    }
}

/// Iterator over the data lines of a text stream, yielding the 1-based line
/// number with the trimmed content. Comment and blank lines are skipped.
struct DataLines<R> {
    reader: R,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> DataLines<R> {
    fn new(reader: R) -> Self {
        DataLines {
            reader,
            line_no: 0,
            buf: String::new(),
        }
    }

    fn next_line(&mut self) -> Option<Result<(usize, &str), IngestError>> {
        loop {
            self.buf.clear();
            self.line_no += 1;
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(source) => {
                    return Some(Err(IngestError::Io {
                        line: self.line_no,
                        source,
                    }))
                }
            }
            let trimmed = self.buf.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            // Re-borrow to satisfy the borrow checker across loop iterations.
            let trimmed = self.buf.trim();
            return Some(Ok((self.line_no, trimmed)));
        }
    }
}

fn split_fields(line_no: usize, line: &str, expected: usize) -> Result<Vec<&str>, IngestError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != expected {
        return Err(IngestError::FieldCount {
            line: line_no,
            expected,
            found: fields.len(),
        });
    }
    Ok(fields)
}

fn parse_conn_id(line: usize, s: &str) -> Result<String, IngestError> {
    if s.is_empty() {
        return Err(field_err(line, "conn_id", "empty connection id"));
    }
    Ok(s.to_string())
}

fn parse_direction(line: usize, s: &str) -> Result<Direction, IngestError> {
    match s {
        "A" => Ok(Direction::AtoB),
        "B" => Ok(Direction::BtoA),
        other => Err(field_err(
            line,
            "direction",
            format!("expected A or B, found `{other}`"),
        )),
    }
}

fn parse_u64(line: usize, field: &'static str, s: &str) -> Result<u64, IngestError> {
    s.parse()
        .map_err(|_| field_err(line, field, format!("`{s}` is not a non-negative integer")))
}

fn parse_flag(line: usize, s: &str) -> Result<bool, IngestError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(field_err(
            line,
            "is_http",
            format!("expected 0 or 1, found `{other}`"),
        )),
    }
}

fn parse_duration(line: usize, s: &str) -> Result<f64, IngestError> {
    let d: f64 = s
        .parse()
        .map_err(|_| field_err(line, "duration_s", format!("`{s}` is not a number")))?;
    if d.is_nan() || d.is_infinite() {
        return Err(field_err(
            line,
            "duration_s",
            format!("`{s}` is not finite"),
        ));
    }
    if d <= 0.0 {
        return Err(IngestError::NonPositiveDuration { line });
    }
    Ok(d)
}

fn parse_size(line: usize, s: &str) -> Result<u64, IngestError> {
    let size = parse_u64(line, "size_bytes", s)?;
    if size == 0 {
        return Err(field_err(
            line,
            "size_bytes",
            "size must be at least 1 byte",
        ));
    }
    Ok(size)
}

fn parse_event_line(line: usize, text: &str) -> Result<PacketEvent, IngestError> {
    let f = split_fields(line, text, 5)?;
    Ok(PacketEvent {
        conn_id: parse_conn_id(line, f[0])?,
        timestamp: f[1]
            .parse()
            .map_err(|detail| field_err(line, "timestamp", detail))?,
        direction: parse_direction(line, f[2])?,
        payload_bytes: parse_u64(line, "payload_bytes", f[3])?,
        dst_port: f[4].parse().map_err(|_| {
            field_err(
                line,
                "dst_port",
                format!("`{}` is not a port in 0-65535", f[4]),
            )
        })?,
    })
}

/// Streaming reader of the packet-event format.
pub struct PacketEventReader<R> {
    lines: DataLines<R>,
}

impl<R: BufRead> PacketEventReader<R> {
    pub fn new(reader: R) -> Self {
        PacketEventReader {
            lines: DataLines::new(reader),
        }
    }
}

impl<R: BufRead> Iterator for PacketEventReader<R> {
    type Item = Result<PacketEvent, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = self.lines.next_line()?;
        Some(item.and_then(|(line, text)| parse_event_line(line, text)))
    }
}

/// Parses a complete packet-event stream. Empty input yields no events.
pub fn parse_packet_events<R: BufRead>(reader: R) -> Result<Vec<PacketEvent>, IngestError> {
    PacketEventReader::new(reader).collect()
}

pub fn write_packet_events<W: Write>(mut w: W, events: &[PacketEvent]) -> io::Result<()> {
    for ev in events {
        let ns = ev.timestamp.as_nanos();
        writeln!(
            w,
            "{},{}.{:09},{},{},{}",
            ev.conn_id,
            ns / 1_000_000_000,
            ns % 1_000_000_000,
            ev.direction,
            ev.payload_bytes,
            ev.dst_port
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct ConnAccum {
    first: Timestamp,
    last: Timestamp,
    bytes: u64,
    packets: u64,
    ports: BTreeSet<u16>,
}

/// Incremental connection aggregator. Memory is one small accumulator per
/// connection, so events can be streamed straight from a reader.
#[derive(Debug, Default)]
pub struct ConnectionAggregator {
    conns: HashMap<String, ConnAccum>,
}

impl ConnectionAggregator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ev: &PacketEvent) {
        match self.conns.get_mut(&ev.conn_id) {
            Some(acc) => {
                acc.first = acc.first.min(ev.timestamp);
                acc.last = acc.last.max(ev.timestamp);
                acc.bytes += ev.payload_bytes;
                acc.packets += 1;
                acc.ports.insert(ev.dst_port);
            }
            None => {
                self.conns.insert(
                    ev.conn_id.clone(),
                    ConnAccum {
                        first: ev.timestamp,
                        last: ev.timestamp,
                        bytes: ev.payload_bytes,
                        packets: 1,
                        ports: BTreeSet::from([ev.dst_port]),
                    },
                );
            }
        }
    }

    pub fn len(&self) -> usize {
        self.conns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conns.is_empty()
    }

    /// Emits summaries sorted by `conn_id`. Connections with zero duration
    /// or zero payload bytes are dropped.
    pub fn finish(self, http_ports: &HttpPorts) -> Vec<ConnectionSummary> {
        let total = self.conns.len();
        let mut out: Vec<ConnectionSummary> = self
            .conns
            .into_iter()
            .filter(|(_, acc)| acc.last > acc.first && acc.bytes > 0)
            .map(|(conn_id, acc)| ConnectionSummary {
                conn_id,
                size_bytes: acc.bytes,
                duration_s: acc.last.secs_since(acc.first),
                packet_count: Some(acc.packets),
                is_http: classify_http(acc.ports.iter().copied(), http_ports),
            })
            .collect();
        out.sort_by(|a, b| a.conn_id.cmp(&b.conn_id));
        if out.len() < total {
            log::debug!(
                "dropped {} zero-duration or empty connections",
                total - out.len()
            );
        }
        out
    }
}

/// Aggregates packet events (any order, any interleaving) into one summary
/// per connection, sorted by `conn_id`.
pub fn aggregate_connections(
    events: &[PacketEvent],
    http_ports: &HttpPorts,
) -> Vec<ConnectionSummary> {
    let mut agg = ConnectionAggregator::new();
    for ev in events {
        agg.push(ev);
    }
    agg.finish(http_ports)
}

/// A run of same-direction data packets before the zero-duration filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AduCandidate {
    pub conn_id: String,
    pub direction: Direction,
    pub size_bytes: u64,
    pub first: Timestamp,
    pub last: Timestamp,
    pub packet_count: u64,
}

impl AduCandidate {
    pub fn duration_s(&self) -> f64 {
        self.last.secs_since(self.first)
    }
}

fn quiet_threshold_nanos(quiet_threshold_s: f64) -> Result<u64, IngestError> {
    if !(quiet_threshold_s.is_finite() && quiet_threshold_s > 0.0) {
        return Err(IngestError::QuietThreshold(quiet_threshold_s));
    }
    Ok((quiet_threshold_s * 1e9).round() as u64)
}

fn group_sorted(events: &[PacketEvent]) -> BTreeMap<&str, Vec<&PacketEvent>> {
    let mut groups: BTreeMap<&str, Vec<&PacketEvent>> = BTreeMap::new();
    for ev in events {
        groups.entry(ev.conn_id.as_str()).or_default().push(ev);
    }
    for group in groups.values_mut() {
        group.sort_by_key(|e| (e.timestamp, e.direction, e.payload_bytes, e.dst_port));
    }
    groups
}

fn segment_group(
    conn_id: &str,
    packets: &[&PacketEvent],
    quiet_ns: u64,
    out: &mut Vec<AduCandidate>,
) {
    let mut current: Option<AduCandidate> = None;
    // Zero-payload packets (pure ACKs) carry no application data.
    for ev in packets.iter().filter(|e| e.payload_bytes > 0) {
        let starts_new = match &current {
            None => true,
            Some(adu) => {
                adu.direction != ev.direction
                    || ev.timestamp.as_nanos() - adu.last.as_nanos() > quiet_ns
            }
        };
        if starts_new {
            if let Some(done) = current.take() {
                out.push(done);
            }
            current = Some(AduCandidate {
                conn_id: conn_id.to_string(),
                direction: ev.direction,
                size_bytes: ev.payload_bytes,
                first: ev.timestamp,
                last: ev.timestamp,
                packet_count: 1,
            });
        } else if let Some(adu) = current.as_mut() {
            adu.size_bytes += ev.payload_bytes;
            adu.last = ev.timestamp;
            adu.packet_count += 1;
        }
    }
    out.extend(current);
}

/// Splits every connection into candidate ADUs: a new ADU starts when the
/// data direction flips or when the gap to the previous data packet exceeds
/// `quiet_threshold_s`. Output is grouped by `conn_id` (sorted) and ordered
/// by time within a connection.
pub fn segment_candidates(
    events: &[PacketEvent],
    quiet_threshold_s: f64,
) -> Result<Vec<AduCandidate>, IngestError> {
    let quiet_ns = quiet_threshold_nanos(quiet_threshold_s)?;
    let mut out = Vec::new();
    for (conn_id, packets) in group_sorted(events) {
        segment_group(conn_id, &packets, quiet_ns, &mut out);
    }
    Ok(out)
}

/// Segments connections into ADUs and drops single-packet (zero-duration)
/// candidates. Indices are renumbered from 0 within each connection over
/// the surviving ADUs; `is_http` is inherited from the parent connection.
pub fn segment_adus(
    events: &[PacketEvent],
    quiet_threshold_s: f64,
    http_ports: &HttpPorts,
) -> Result<Vec<AduSummary>, IngestError> {
    let quiet_ns = quiet_threshold_nanos(quiet_threshold_s)?;
    let mut out = Vec::new();
    let mut candidates = Vec::new();
    for (conn_id, packets) in group_sorted(events) {
        let is_http = classify_http(packets.iter().map(|e| e.dst_port), http_ports);
        candidates.clear();
        segment_group(conn_id, &packets, quiet_ns, &mut candidates);
        let kept = candidates.iter().filter(|c| c.last > c.first);
        for (idx, c) in kept.enumerate() {
            out.push(AduSummary {
                conn_id: c.conn_id.clone(),
                adu_index: idx as u32,
                direction: c.direction,
                size_bytes: c.size_bytes,
                duration_s: c.duration_s(),
                is_http,
            });
        }
    }
    Ok(out)
}

/// Writes the flow-summary format. Durations use the shortest decimal form
/// that parses back to the same `f64`.
pub fn write_flow_summaries<W: Write>(mut w: W, summaries: &[ConnectionSummary]) -> io::Result<()> {
    for s in summaries {
        writeln!(
            w,
            "{},{},{},{}",
            s.conn_id,
            s.size_bytes,
            s.duration_s,
            u8::from(s.is_http)
        )?;
    }
    Ok(())
}

/// Parses the flow-summary format. When a `conn_id` repeats, the last line
/// wins and keeps the position of the first occurrence.
pub fn parse_flow_summaries<R: BufRead>(reader: R) -> Result<Vec<ConnectionSummary>, IngestError> {
    let mut lines = DataLines::new(reader);
    let mut out: Vec<ConnectionSummary> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    while let Some(item) = lines.next_line() {
        let (line, text) = item?;
        let f = split_fields(line, text, 4)?;
        let summary = ConnectionSummary {
            conn_id: parse_conn_id(line, f[0])?,
            size_bytes: parse_size(line, f[1])?,
            duration_s: parse_duration(line, f[2])?,
            packet_count: None,
            is_http: parse_flag(line, f[3])?,
        };
        match seen.get(&summary.conn_id) {
            Some(&idx) => {
                log::warn!(
                    "duplicate conn_id `{}` at line {line}; last line wins",
                    summary.conn_id
                );
                out[idx] = summary;
            }
            None => {
                seen.insert(summary.conn_id.clone(), out.len());
                out.push(summary);
            }
        }
    }
    Ok(out)
}

pub fn write_adu_summaries<W: Write>(mut w: W, adus: &[AduSummary]) -> io::Result<()> {
    for a in adus {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            a.conn_id,
            a.adu_index,
            a.direction,
            a.size_bytes,
            a.duration_s,
            u8::from(a.is_http)
        )?;
    }
    Ok(())
}

fn parse_adu_line(line: usize, text: &str) -> Result<AduSummary, IngestError> {
    let f = split_fields(line, text, 6)?;
    let adu_index = parse_u64(line, "adu_index", f[1])?;
    Ok(AduSummary {
        conn_id: parse_conn_id(line, f[0])?,
        adu_index: u32::try_from(adu_index)
            .map_err(|_| field_err(line, "adu_index", "index too large"))?,
        direction: parse_direction(line, f[2])?,
        size_bytes: parse_size(line, f[3])?,
        duration_s: parse_duration(line, f[4])?,
        is_http: parse_flag(line, f[5])?,
    })
}

pub fn parse_adu_summaries<R: BufRead>(reader: R) -> Result<Vec<AduSummary>, IngestError> {
    let mut lines = DataLines::new(reader);
    let mut out = Vec::new();
    while let Some(item) = lines.next_line() {
        let (line, text) = item?;
        out.push(parse_adu_line(line, text)?);
    }
    Ok(out)
}

/// Summary records of either granularity.
#[derive(Debug, Clone, PartialEq)]
pub enum SummaryRecords {
    Connections(Vec<ConnectionSummary>),
    Adus(Vec<AduSummary>),
}

impl SummaryRecords {
    pub fn len(&self) -> usize {
        match self {
            SummaryRecords::Connections(v) => v.len(),
            SummaryRecords::Adus(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keeps only HTTP records.
    pub fn retain_http(&mut self) {
        match self {
            SummaryRecords::Connections(v) => v.retain(|s| s.is_http),
            SummaryRecords::Adus(v) => v.retain(|s| s.is_http),
        }
    }

    pub fn transfers(&self) -> Vec<&dyn Transfer> {
        match self {
            SummaryRecords::Connections(v) => v.iter().map(|s| s as &dyn Transfer).collect(),
            SummaryRecords::Adus(v) => v.iter().map(|s| s as &dyn Transfer).collect(),
        }
    }
}

/// Parses flow-summary or ADU input, picking the layout from the field count
/// of the first data line (4 = connections, 6 = ADUs).
pub fn parse_summaries_auto(input: &[u8]) -> Result<SummaryRecords, IngestError> {
    let mut lines = DataLines::new(input);
    let layout = match lines.next_line() {
        None => return Ok(SummaryRecords::Connections(Vec::new())),
        Some(item) => {
            let (line, text) = item?;
            (line, text.split(',').count())
        }
    };
    match layout {
        (_, 4) => parse_flow_summaries(input).map(SummaryRecords::Connections),
        (_, 6) => parse_adu_summaries(input).map(SummaryRecords::Adus),
        (line, found) => Err(IngestError::UnknownLayout { line, found }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(conn: &str, ts: &str, dir: Direction, bytes: u64, port: u16) -> PacketEvent {
        PacketEvent {
            conn_id: conn.to_string(),
            timestamp: ts.parse().unwrap(),
            direction: dir,
            payload_bytes: bytes,
            dst_port: port,
        }
    }

    #[test]
    fn parses_single_event_line() {
        let events = parse_packet_events("c1,100.000000,A,1460,80\n".as_bytes()).unwrap();
        assert_eq!(events, vec![ev("c1", "100", Direction::AtoB, 1460, 80)]);
        assert_eq!(events[0].timestamp.as_secs_f64(), 100.0);
    }

    #[test]
    fn rejects_bad_direction_with_line_number() {
        let err = parse_packet_events("c1,100.0,X,1460,80\n".as_bytes()).unwrap_err();
        assert!(
            err.to_string().starts_with("invalid direction at line 1"),
            "{err}"
        );
    }

    #[test]
    fn reports_offending_field_and_line() {
        let input = "# header comment\nc1,1.0,A,10,80\n\nc1,2.0,B,-5,80\n";
        let err = parse_packet_events(input.as_bytes()).unwrap_err();
        match err {
            IngestError::Field { line, field, .. } => {
                assert_eq!(line, 4);
                assert_eq!(field, "payload_bytes");
            }
            other => panic!("unexpected error {other:?}"),
        }
        let err = parse_packet_events("c1,1.0,A,10\n".as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            IngestError::FieldCount {
                line: 1,
                expected: 5,
                found: 4
            }
        ));
        let err = parse_packet_events("c1,1.0,A,10,70000\n".as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            IngestError::Field {
                field: "dst_port",
                ..
            }
        ));
        let err = parse_packet_events(",1.0,A,10,80\n".as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            IngestError::Field {
                field: "conn_id",
                ..
            }
        ));
    }

    #[test]
    fn empty_input_is_not_an_error() {
        assert!(parse_packet_events("".as_bytes()).unwrap().is_empty());
        assert!(parse_packet_events("# only a comment\n\n".as_bytes())
            .unwrap()
            .is_empty());
        assert!(parse_flow_summaries("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn timestamp_parsing_is_exact() {
        let t: Timestamp = "1034445312.123456".parse().unwrap();
        assert_eq!(t.as_nanos(), 1_034_445_312_123_456_000);
        let u: Timestamp = "1034445312.123457".parse().unwrap();
        assert_eq!(u.as_nanos() - t.as_nanos(), 1_000);
        assert_eq!("7".parse::<Timestamp>().unwrap().as_nanos(), 7_000_000_000);
        for bad in [
            "",
            "-1.0",
            "1e3",
            "1.2.3",
            "abc",
            ".5",
            "1.0000000001",
            "nan",
        ] {
            assert!(
                bad.parse::<Timestamp>().is_err(),
                "{bad} should be rejected"
            );
        }
    }

    #[test]
    fn two_packet_connection() {
        let events = vec![
            ev("c1", "1.0", Direction::AtoB, 1000, 80),
            ev("c1", "3.5", Direction::BtoA, 500, 80),
        ];
        let conns = aggregate_connections(&events, &HttpPorts::default());
        assert_eq!(conns.len(), 1);
        assert_eq!(conns[0].size_bytes, 1500);
        assert_eq!(conns[0].duration_s, 2.5);
        assert_eq!(conns[0].packet_count, Some(2));
        assert!(conns[0].is_http);
    }

    #[test]
    fn single_packet_connection_is_dropped() {
        let events = vec![
            ev("c2", "9.0", Direction::AtoB, 40, 80),
            ev("c1", "1.0", Direction::AtoB, 1, 22),
            ev("c1", "2.0", Direction::AtoB, 1, 22),
        ];
        let conns = aggregate_connections(&events, &HttpPorts::default());
        assert_eq!(conns.len(), 1);
        assert_eq!(conns[0].conn_id, "c1");
        assert!(!conns[0].is_http);
    }

    #[test]
    fn empty_payload_connection_is_dropped() {
        let events = vec![
            ev("c1", "1.0", Direction::AtoB, 0, 80),
            ev("c1", "2.0", Direction::BtoA, 0, 80),
        ];
        assert!(aggregate_connections(&events, &HttpPorts::default()).is_empty());
    }

    #[test]
    fn http_classification_by_port_membership() {
        let ports = HttpPorts::default();
        assert!(classify_http([80], &ports));
        assert!(!classify_http([22], &ports));
        assert!(classify_http([443, 80], &HttpPorts::new([80])));
        assert!(!classify_http(std::iter::empty(), &ports));
        assert_eq!("80, 8080".parse::<HttpPorts>().unwrap(), ports);
        assert!("80,http".parse::<HttpPorts>().is_err());
    }

    #[test]
    fn direction_flip_splits_adus() {
        let events = vec![
            ev("c", "1.0", Direction::AtoB, 100, 80),
            ev("c", "1.2", Direction::AtoB, 100, 80),
            ev("c", "1.3", Direction::BtoA, 100, 80),
            ev("c", "1.5", Direction::BtoA, 100, 80),
        ];
        let adus = segment_adus(&events, 0.5, &HttpPorts::default()).unwrap();
        assert_eq!(adus.len(), 2);
        assert_eq!(adus[0].direction, Direction::AtoB);
        assert_eq!(adus[1].direction, Direction::BtoA);
        assert!((adus[0].duration_s - 0.2).abs() < 1e-12);
        assert!((adus[1].duration_s - 0.2).abs() < 1e-12);
        assert_eq!((adus[0].adu_index, adus[1].adu_index), (0, 1));
    }

    #[test]
    fn quiet_gap_then_zero_duration_filter() {
        let events = vec![
            ev("c", "1.0", Direction::AtoB, 100, 80),
            ev("c", "10.0", Direction::AtoB, 100, 80),
        ];
        let cands = segment_candidates(&events, 5.0).unwrap();
        assert_eq!(cands.len(), 2);
        assert!(segment_adus(&events, 5.0, &HttpPorts::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn gap_equal_to_threshold_does_not_split() {
        let events = vec![
            ev("c", "1.0", Direction::AtoB, 100, 80),
            ev("c", "1.5", Direction::AtoB, 100, 80),
        ];
        assert_eq!(segment_candidates(&events, 0.5).unwrap().len(), 1);
    }

    #[test]
    fn non_positive_quiet_threshold_is_rejected() {
        for q in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                segment_candidates(&[], q),
                Err(IngestError::QuietThreshold(_))
            ));
        }
    }

    #[test]
    fn flow_summary_line() {
        let s = parse_flow_summaries("c9,150000,2.25,1\n".as_bytes()).unwrap();
        assert_eq!(
            s,
            vec![ConnectionSummary {
                conn_id: "c9".into(),
                size_bytes: 150000,
                duration_s: 2.25,
                packet_count: None,
                is_http: true,
            }]
        );
    }

    #[test]
    fn flow_summary_zero_duration_rejected() {
        let err = parse_flow_summaries("c9,150000,0.0,0\n".as_bytes()).unwrap_err();
        assert!(
            err.to_string().starts_with("non-positive duration"),
            "{err}"
        );
        assert!(parse_flow_summaries("c9,150000,-1,0\n".as_bytes()).is_err());
        assert!(parse_flow_summaries("c9,0,1.0,0\n".as_bytes()).is_err());
        assert!(parse_flow_summaries("c9,10,1.0,2\n".as_bytes()).is_err());
        assert!(parse_flow_summaries("c9,10,inf,0\n".as_bytes()).is_err());
    }

    #[test]
    fn duplicate_conn_id_last_wins() {
        let input = "a,10,1,0\nb,20,2,0\na,30,3,1\n";
        let s = parse_flow_summaries(input.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].conn_id, "a");
        assert_eq!(s[0].size_bytes, 30);
        assert!(s[0].is_http);
        assert_eq!(s[1].conn_id, "b");
    }

    #[test]
    fn auto_detects_layout() {
        let flows = parse_summaries_auto(b"# c\nc1,10,1.5,0\n").unwrap();
        assert!(matches!(flows, SummaryRecords::Connections(ref v) if v.len() == 1));
        let adus = parse_summaries_auto(b"c1,0,A,10,1.5,1\nc1,1,B,5,0.5,1\n").unwrap();
        assert!(matches!(adus, SummaryRecords::Adus(ref v) if v.len() == 2));
        assert!(matches!(
            parse_summaries_auto(b"c1,10,1.5\n"),
            Err(IngestError::UnknownLayout { line: 1, found: 3 })
        ));
    }

    #[test]
    fn adu_format_round_trip() {
        let input = "c1,0,A,10,1.5,1\nc1,1,B,5,0.25,1\n";
        let adus = parse_adu_summaries(input.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_adu_summaries(&mut buf, &adus).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), input);
    }

    #[test]
    fn packet_events_round_trip() {
        let input = "c1,100.000001000,A,1460,80\nc2,5.250000000,B,0,22\n";
        let events = parse_packet_events(input.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_packet_events(&mut buf, &events).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), input);
    }
}
