//! Measurement ingestion: node roles, record parsing, grid alignment,
//! lost-packet imputation and reciprocal link lookup.
//!
//! Raw measurements arrive as one row per decoded packet
//! (`time_ms,tx,rx,rssi_dbm`). With 0 dBm transmit power the RSSI is the
//! channel gain in dB. Rows are bucketed onto a uniform grid (15 ms by
//! default: three transceivers each transmitting for 5 ms in turn), slots
//! with no decoded packet are marked missing, and missing slots are later
//! replaced by a floor value below the receive sensitivity.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELTA_MS: u32 = 15;
pub const DEFAULT_FLOOR_DB: f64 = -102.0;

/// Lowest and highest gain accepted on parse.
pub const MIN_GAIN_DB: f64 = -110.0;
pub const MAX_GAIN_DB: f64 = 0.0;

/// Imputation floors must sit below this (the radio's nominal sensitivity).
pub const NOMINAL_SENSITIVITY_DB: f64 = -100.0;

const RECORD_HEADER: [&str; 4] = ["time_ms", "tx", "rx", "rssi_dbm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Transceiver,
    Receiver,
}

/// Radio position. Declaration order is the measurement table order and
/// drives every deterministic ordering in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Node {
    /// Next to bed, head end.
    #[serde(rename = "NTB_h")]
    NtbH,
    /// Left wrist.
    #[serde(rename = "L_w")]
    Lw,
    /// Hip, front.
    #[serde(rename = "H_f")]
    Hf,
    /// Right wrist.
    #[serde(rename = "R_w")]
    Rw,
    /// Hip, back.
    #[serde(rename = "H_b")]
    Hb,
    /// Left ankle.
    #[serde(rename = "L_a")]
    La,
    /// Next to bed, foot end.
    #[serde(rename = "NTB_f")]
    NtbF,
}

impl Node {
    pub const ALL: [Node; 7] = [
        Node::NtbH,
        Node::Lw,
        Node::Hf,
        Node::Rw,
        Node::Hb,
        Node::La,
        Node::NtbF,
    ];

    pub const TRANSCEIVERS: [Node; 3] = [Node::NtbH, Node::Lw, Node::Hf];

    pub fn label(self) -> &'static str {
        match self {
            Node::NtbH => "NTB_h",
            Node::Lw => "L_w",
            Node::Hf => "H_f",
            Node::Rw => "R_w",
            Node::Hb => "H_b",
            Node::La => "L_a",
            Node::NtbF => "NTB_f",
        }
    }

    pub fn role(self) -> Role {
        match self {
            Node::NtbH | Node::Lw | Node::Hf => Role::Transceiver,
            Node::Rw | Node::Hb | Node::La | Node::NtbF => Role::Receiver,
        }
    }

    pub fn is_transceiver(self) -> bool {
        self.role() == Role::Transceiver
    }

    /// Placed next to the bed rather than on the body.
    pub fn is_off_body(self) -> bool {
        matches!(self, Node::NtbH | Node::NtbF)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownNode(pub String);

impl fmt::Display for UnknownNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown node label '{}'", self.0)
    }
}

impl std::error::Error for UnknownNode {}

impl FromStr for Node {
    type Err = UnknownNode;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Node::ALL
            .into_iter()
            .find(|n| n.label() == s)
            .ok_or_else(|| UnknownNode(s.to_string()))
    }
}

/// A measured (transmitter, receiver) direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkKey {
    tx: Node,
    rx: Node,
}

impl LinkKey {
    pub fn new(tx: Node, rx: Node) -> Result<Self> {
        if !tx.is_transceiver() {
            return Err(Error::Role {
                node: tx,
                what: "a transmitter",
            });
        }
        if tx == rx {
            return Err(Error::Config(format!(
                "link {tx}-{rx} has identical endpoints"
            )));
        }
        Ok(LinkKey { tx, rx })
    }

    pub fn tx(&self) -> Node {
        self.tx
    }

    pub fn rx(&self) -> Node {
        self.rx
    }

    pub fn class(&self) -> LinkClass {
        LinkClass::of(self.tx, self.rx)
    }

    /// Every direction the measurement topology can record: each
    /// transceiver to each other node.
    pub fn measurable() -> Vec<LinkKey> {
        Node::TRANSCEIVERS
            .into_iter()
            .flat_map(|tx| {
                Node::ALL
                    .into_iter()
                    .filter(move |&rx| rx != tx)
                    .map(move |rx| LinkKey { tx, rx })
            })
            .collect()
    }
}

impl fmt::Display for LinkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.tx, self.rx)
    }
}

impl FromStr for LinkKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (tx, rx) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("link '{s}' is not of the form <tx>-<rx>")))?;
        let tx = tx
            .parse()
            .map_err(|e: UnknownNode| Error::Config(e.to_string()))?;
        let rx = rx
            .parse()
            .map_err(|e: UnknownNode| Error::Config(e.to_string()))?;
        LinkKey::new(tx, rx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkClass {
    OnBody,
    OffBody,
}

impl LinkClass {
    pub const ALL: [LinkClass; 2] = [LinkClass::OnBody, LinkClass::OffBody];

    /// Off-body iff either endpoint is one of the bedside nodes.
    pub fn of(a: Node, b: Node) -> LinkClass {
        if a.is_off_body() || b.is_off_body() {
            LinkClass::OffBody
        } else {
            LinkClass::OnBody
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LinkClass::OnBody => "on_body",
            LinkClass::OffBody => "off_body",
        }
    }
}

impl fmt::Display for LinkClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for LinkClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on_body" | "on-body" => Ok(LinkClass::OnBody),
            "off_body" | "off-body" => Ok(LinkClass::OffBody),
            other => Err(Error::Config(format!("unknown link class '{other}'"))),
        }
    }
}

/// One decoded packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub time_ms: f64,
    pub link: LinkKey,
    pub gain_db: f64,
}

/// Reads the record CSV format. Lines starting with `#` are comments.
/// Records come back sorted by time; rows sharing a timestamp keep file order.
pub fn parse_records<R: Read>(input: R) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);

    let mut rows = reader.records();
    match rows.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
        Some(header) => {
            let header = header.map_err(csv_error)?;
            let line = line_of(&header);
            if header.iter().ne(RECORD_HEADER) {
                return Err(Error::Parse {
                    line,
                    msg: format!(
                        "expected header '{}', found '{}'",
                        RECORD_HEADER.join(","),
                        header.iter().collect::<Vec<_>>().join(",")
                    ),
                });
            }
        }
    }

    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(csv_error)?;
        let line = line_of(&row);
        if row.len() != 4 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 4 fields, found {}", row.len()),
            });
        }
        let time_ms: f64 = row[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid time '{}'", &row[0]),
        })?;
        if !time_ms.is_finite() || time_ms < 0.0 {
            return Err(Error::Parse {
                line,
                msg: format!("time {time_ms} must be a non-negative number"),
            });
        }
        let tx: Node = row[1].parse().map_err(|e: UnknownNode| Error::Schema {
            line,
            msg: e.to_string(),
        })?;
        let rx: Node = row[2].parse().map_err(|e: UnknownNode| Error::Schema {
            line,
            msg: e.to_string(),
        })?;
        if !tx.is_transceiver() {
            return Err(Error::Schema {
                line,
                msg: format!("{tx} is receive-only and cannot appear in the tx column"),
            });
        }
        if tx == rx {
            return Err(Error::Schema {
                line,
                msg: format!("tx and rx are both {tx}"),
            });
        }
        let gain_db: f64 = row[3].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid rssi '{}'", &row[3]),
        })?;
        if !(MIN_GAIN_DB..=MAX_GAIN_DB).contains(&gain_db) {
            return Err(Error::Parse {
                line,
                msg: format!("gain {gain_db} dB outside [{MIN_GAIN_DB}, {MAX_GAIN_DB}]"),
            });
        }
        records.push(Record {
            time_ms,
            link: LinkKey { tx, rx },
            gain_db,
        });
    }

    records.sort_by(|a, b| a.time_ms.total_cmp(&b.time_ms));
    Ok(records)
}

fn line_of(row: &csv::StringRecord) -> u64 {
    row.position().map_or(0, |p| p.line())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

/// Per-link gain series on a uniform grid, with lost packets as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTraceSet {
    delta_ms: u32,
    len: usize,
    subject: String,
    traces: BTreeMap<LinkKey, Vec<Option<f64>>>,
}

/// Buckets records onto the grid. Slot = floor(time / delta); the last
/// record in a slot wins. Every link is padded to the common length set by
/// the latest record overall.
pub fn align_to_grid(records: &[Record], delta_ms: u32) -> Result<ChannelTraceSet> {
    if delta_ms == 0 {
        return Err(Error::Config("sample period must be positive".into()));
    }
    let slot_of = |t: f64| (t / f64::from(delta_ms)).floor() as usize;
    let len = records
        .iter()
        .map(|r| slot_of(r.time_ms) + 1)
        .max()
        .unwrap_or(0);

    let mut traces: BTreeMap<LinkKey, Vec<Option<f64>>> = BTreeMap::new();
    for r in records {
        let trace = traces.entry(r.link).or_insert_with(|| vec![None; len]);
        trace[slot_of(r.time_ms)] = Some(r.gain_db);
    }
    Ok(ChannelTraceSet {
        delta_ms,
        len,
        subject: String::new(),
        traces,
    })
}

impl ChannelTraceSet {
    pub fn new(
        delta_ms: u32,
        subject: impl Into<String>,
        traces: BTreeMap<LinkKey, Vec<Option<f64>>>,
    ) -> Result<Self> {
        if delta_ms == 0 {
            return Err(Error::Config("sample period must be positive".into()));
        }
        let len = common_len(traces.values().map(Vec::len))?;
        Ok(ChannelTraceSet {
            delta_ms,
            len,
            subject: subject.into(),
            traces,
        })
    }

    pub fn with_subject(mut self, subject: impl Into<String>) -> Self {
        self.subject = subject.into();
        self
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn delta_ms(&self) -> u32 {
        self.delta_ms
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn duration_ms(&self) -> u64 {
        self.len as u64 * u64::from(self.delta_ms)
    }

    pub fn links(&self) -> impl Iterator<Item = LinkKey> + '_ {
        self.traces.keys().copied()
    }

    pub fn trace(&self, link: LinkKey) -> Option<&[Option<f64>]> {
        self.traces.get(&link).map(Vec::as_slice)
    }

    pub fn missing_count(&self) -> usize {
        self.traces
            .values()
            .flatten()
            .filter(|s| s.is_none())
            .count()
    }

    /// Replaces every lost packet with `floor_db`, which must lie below the
    /// nominal receive sensitivity so imputed slots always count as outage.
    pub fn impute(&self, floor_db: f64) -> Result<DenseTraceSet> {
        if !floor_db.is_finite() || floor_db >= NOMINAL_SENSITIVITY_DB {
            return Err(Error::Config(format!(
                "imputation floor {floor_db} dB must be below {NOMINAL_SENSITIVITY_DB} dB"
            )));
        }
        let traces = self
            .traces
            .iter()
            .map(|(&k, v)| (k, v.iter().map(|s| s.unwrap_or(floor_db)).collect()))
            .collect();
        Ok(DenseTraceSet {
            delta_ms: self.delta_ms,
            len: self.len,
            subject: self.subject.clone(),
            traces,
        })
    }

    /// Emits one record row per recorded sample, at time `slot * delta`.
    /// Values use the shortest exact representation so re-ingestion is lossless.
    pub fn write_records_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", RECORD_HEADER.join(","))?;
        for slot in 0..self.len {
            let t = slot as u64 * u64::from(self.delta_ms);
            for (link, trace) in &self.traces {
                if let Some(g) = trace[slot] {
                    writeln!(out, "{t},{},{},{g}", link.tx, link.rx)?;
                }
            }
        }
        Ok(())
    }
}

/// Trace set with no missing samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTraceSet {
    delta_ms: u32,
    len: usize,
    subject: String,
    traces: BTreeMap<LinkKey, Vec<f64>>,
}

impl DenseTraceSet {
    pub fn new(
        delta_ms: u32,
        subject: impl Into<String>,
        traces: BTreeMap<LinkKey, Vec<f64>>,
    ) -> Result<Self> {
        if delta_ms == 0 {
            return Err(Error::Config("sample period must be positive".into()));
        }
        let len = common_len(traces.values().map(Vec::len))?;
        Ok(DenseTraceSet {
            delta_ms,
            len,
            subject: subject.into(),
            traces,
        })
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn delta_ms(&self) -> u32 {
        self.delta_ms
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn duration_ms(&self) -> u64 {
        self.len as u64 * u64::from(self.delta_ms)
    }

    pub fn links(&self) -> impl Iterator<Item = LinkKey> + '_ {
        self.traces.keys().copied()
    }

    pub fn trace(&self, link: LinkKey) -> Option<&[f64]> {
        self.traces.get(&link).map(Vec::as_slice)
    }

    /// Gain series between two nodes, using the measured `a -> b` direction
    /// when present and the reverse direction otherwise.
    pub fn series(&self, a: Node, b: Node) -> Result<&[f64]> {
        let forward = LinkKey { tx: a, rx: b };
        let reverse = LinkKey { tx: b, rx: a };
        self.traces
            .get(&forward)
            .or_else(|| self.traces.get(&reverse))
            .map(Vec::as_slice)
            .ok_or(Error::MissingLink { a, b })
    }

    pub fn gain_at(&self, a: Node, b: Node, slot: usize) -> Result<f64> {
        let s = self.series(a, b)?;
        s.get(slot)
            .copied()
            .ok_or(Error::SlotOutOfRange { slot, len: s.len() })
    }

    /// Dense grid CSV: `slot,<tx>-<rx>,...`, gains with two decimals.
    pub fn write_grid_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "slot")?;
        for link in self.traces.keys() {
            write!(out, ",{link}")?;
        }
        writeln!(out)?;
        for slot in 0..self.len {
            write!(out, "{slot}")?;
            for trace in self.traces.values() {
                write!(out, ",{:.2}", trace[slot])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_grid_csv<R: Read>(
        input: R,
        delta_ms: u32,
        subject: impl Into<String>,
    ) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(input);
        let mut rows = reader.records();
        let header = rows
            .next()
            .ok_or(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })?
            .map_err(csv_error)?;
        if header.get(0) != Some("slot") {
            return Err(Error::Parse {
                line: line_of(&header),
                msg: "first column must be 'slot'".into(),
            });
        }
        let links = header
            .iter()
            .skip(1)
            .map(|h| {
                h.parse::<LinkKey>().map_err(|e| Error::Schema {
                    line: line_of(&header),
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); links.len()];
        for (expected_slot, row) in rows.enumerate() {
            let row = row.map_err(csv_error)?;
            let line = line_of(&row);
            if row.len() != links.len() + 1 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} fields, found {}", links.len() + 1, row.len()),
                });
            }
            if row[0].parse::<usize>().ok() != Some(expected_slot) {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected slot {expected_slot}"),
                });
            }
            for (col, field) in columns.iter_mut().zip(row.iter().skip(1)) {
                let g: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("invalid gain '{field}'"),
                })?;
                col.push(g);
            }
        }
        let traces = links.into_iter().zip(columns).collect();
        DenseTraceSet::new(delta_ms, subject, traces)
    }
}

fn common_len(mut lens: impl Iterator<Item = usize>) -> Result<usize> {
    let Some(first) = lens.next() else {
        return Ok(0);
    };
    if lens.all(|l| l == first) {
        Ok(first)
    } else {
        Err(Error::Config("trace sequences differ in length".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Vec<Record>> {
        parse_records(s.as_bytes())
    }

    fn link(tx: Node, rx: Node) -> LinkKey {
        LinkKey::new(tx, rx).unwrap()
    }

    #[test]
    fn roles_follow_table() {
        for n in [Node::NtbH, Node::Lw, Node::Hf] {
            assert_eq!(n.role(), Role::Transceiver);
        }
        for n in [Node::Rw, Node::Hb, Node::La, Node::NtbF] {
            assert_eq!(n.role(), Role::Receiver);
        }
        for n in Node::ALL {
            assert_eq!(n.label().parse::<Node>().unwrap(), n);
        }
        assert_eq!(LinkKey::measurable().len(), 18);
    }

    #[test]
    fn parses_single_row() {
        let recs = parse("time_ms,tx,rx,rssi_dbm\n0,H_f,L_a,-72.5\n").unwrap();
        assert_eq!(
            recs,
            vec![Record {
                time_ms: 0.0,
                link: link(Node::Hf, Node::La),
                gain_db: -72.5
            }]
        );
    }

    #[test]
    fn rejects_receiver_in_tx_column() {
        let err = parse("time_ms,tx,rx,rssi_dbm\n0,L_a,H_f,-72.5\n").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_body_is_empty_list() {
        assert!(parse("time_ms,tx,rx,rssi_dbm\n").unwrap().is_empty());
        assert!(matches!(parse(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn malformed_rows_report_line() {
        let input = "# capture 1\ntime_ms,tx,rx,rssi_dbm\n0,H_f,L_a,-70\n15,H_f,L_a,abc\n";
        match parse(input).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(
            parse("time_ms,tx,rx,rssi_dbm\n0,H_f,L_a\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse("time_ms,tx,rx,rssi_dbm\n0,H_f,L_a,-120\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse("time_ms,tx,rx,rssi_dbm\n0,H_f,Foot,-70\n"),
            Err(Error::Schema { line: 2, .. })
        ));
        assert!(matches!(
            parse("t,tx,rx,rssi\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn records_sorted_by_time() {
        let recs =
            parse("time_ms,tx,rx,rssi_dbm\n30,H_f,L_a,-1\n0,H_f,L_a,-2\n15,L_w,R_w,-3\n").unwrap();
        let times: Vec<f64> = recs.iter().map(|r| r.time_ms).collect();
        assert_eq!(times, vec![0.0, 15.0, 30.0]);
    }

    fn one_link(times_gains: &[(f64, f64)]) -> Vec<Record> {
        times_gains
            .iter()
            .map(|&(time_ms, gain_db)| Record {
                time_ms,
                link: link(Node::Hf, Node::La),
                gain_db,
            })
            .collect()
    }

    #[test]
    fn align_exact_grid() {
        let set =
            align_to_grid(&one_link(&[(0.0, -70.0), (15.0, -71.0), (30.0, -72.0)]), 15).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.missing_count(), 0);
        assert_eq!(set.duration_ms(), 45);
    }

    #[test]
    fn align_gap_is_missing() {
        let set = align_to_grid(&one_link(&[(0.0, -70.0), (30.0, -72.0)]), 15).unwrap();
        assert_eq!(
            set.trace(link(Node::Hf, Node::La)).unwrap(),
            &[Some(-70.0), None, Some(-72.0)]
        );
    }

    #[test]
    fn align_last_write_wins() {
        let set = align_to_grid(&one_link(&[(2.0, -70.0), (9.0, -75.0)]), 15).unwrap();
        assert_eq!(set.trace(link(Node::Hf, Node::La)).unwrap(), &[Some(-75.0)]);
    }

    #[test]
    fn align_pads_short_links() {
        let mut recs = one_link(&[(0.0, -70.0)]);
        recs.push(Record {
            time_ms: 45.0,
            link: link(Node::Lw, Node::Rw),
            gain_db: -60.0,
        });
        let set = align_to_grid(&recs, 15).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(
            set.trace(link(Node::Hf, Node::La)).unwrap(),
            &[Some(-70.0), None, None, None]
        );
        assert!(matches!(align_to_grid(&recs, 0), Err(Error::Config(_))));
    }

    #[test]
    fn impute_fills_floor() {
        let raw = ChannelTraceSet::new(
            15,
            "s",
            BTreeMap::from([(
                link(Node::Hf, Node::La),
                vec![Some(-80.0), None, Some(-90.0)],
            )]),
        )
        .unwrap();
        let dense = raw.impute(-102.0).unwrap();
        assert_eq!(
            dense.trace(link(Node::Hf, Node::La)).unwrap(),
            &[-80.0, -102.0, -90.0]
        );

        let lost = ChannelTraceSet::new(
            15,
            "s",
            BTreeMap::from([(link(Node::Hf, Node::La), vec![None; 4])]),
        )
        .unwrap();
        assert_eq!(
            lost.impute(-105.0)
                .unwrap()
                .trace(link(Node::Hf, Node::La))
                .unwrap(),
            &[-105.0; 4]
        );

        assert!(matches!(raw.impute(-100.0), Err(Error::Config(_))));
        assert!(matches!(raw.impute(-90.0), Err(Error::Config(_))));
    }

    fn dense_pair() -> DenseTraceSet {
        DenseTraceSet::new(
            15,
            "s",
            BTreeMap::from([
                (link(Node::Hf, Node::La), vec![-70.0, -71.0]),
                (link(Node::Hf, Node::Lw), vec![-50.0, -51.0]),
                (link(Node::Lw, Node::Hf), vec![-52.0, -53.0]),
            ]),
        )
        .unwrap()
    }

    #[test]
    fn gain_at_uses_reciprocity() {
        let set = dense_pair();
        assert_eq!(set.gain_at(Node::Hf, Node::La, 0).unwrap(), -70.0);
        assert_eq!(set.gain_at(Node::La, Node::Hf, 0).unwrap(), -70.0);
        // both directions measured: requested direction wins
        assert_eq!(set.gain_at(Node::Hf, Node::Lw, 1).unwrap(), -51.0);
        assert_eq!(set.gain_at(Node::Lw, Node::Hf, 1).unwrap(), -53.0);
        assert!(matches!(
            set.gain_at(Node::Rw, Node::La, 0),
            Err(Error::MissingLink { .. })
        ));
        assert!(matches!(
            set.gain_at(Node::Hf, Node::La, 2),
            Err(Error::SlotOutOfRange { .. })
        ));
    }

    #[test]
    fn classify() {
        assert_eq!(LinkClass::of(Node::Hf, Node::La), LinkClass::OnBody);
        assert_eq!(LinkClass::of(Node::NtbH, Node::Hb), LinkClass::OffBody);
        assert_eq!(LinkClass::of(Node::NtbH, Node::NtbF), LinkClass::OffBody);
        assert_eq!(link(Node::Lw, Node::NtbF).class(), LinkClass::OffBody);
    }

    #[test]
    fn grid_csv_format() {
        let mut buf = Vec::new();
        dense_pair().write_grid_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "slot,L_w-H_f,H_f-L_w,H_f-L_a\n0,-52.00,-50.00,-70.00\n1,-53.00,-51.00,-71.00\n"
        );
    }

    fn arb_raw_set() -> impl Strategy<Value = ChannelTraceSet> {
        let links = LinkKey::measurable();
        (1usize..40, proptest::sample::subsequence(links, 1..6)).prop_flat_map(|(len, links)| {
            let n = links.len();
            proptest::collection::vec(
                proptest::collection::vec(proptest::option::weighted(0.8, -11000i32..=0), len),
                n,
            )
            .prop_map(move |cols| {
                let mut traces: BTreeMap<LinkKey, Vec<Option<f64>>> = links
                    .iter()
                    .copied()
                    .zip(cols.into_iter().map(|c| {
                        c.into_iter()
                            .map(|v| v.map(|c| f64::from(c) / 100.0))
                            .collect()
                    }))
                    .collect();
                // keep the last slot populated so the re-aligned length matches
                let first = traces.values_mut().next().unwrap();
                let last = first.len() - 1;
                first[last].get_or_insert(-50.0);
                // a link is only present if it has at least one record
                for t in traces.values_mut() {
                    t[0].get_or_insert(-60.0);
                }
                ChannelTraceSet::new(15, "", traces).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn align_is_idempotent(set in arb_raw_set()) {
            let mut buf = Vec::new();
            set.write_records_csv(&mut buf).unwrap();
            let again = align_to_grid(&parse_records(buf.as_slice()).unwrap(), 15).unwrap();
            prop_assert_eq!(again, set);
        }

        #[test]
        fn impute_preserves_values(set in arb_raw_set(), floor in -110.0f64..-100.001) {
            let dense = set.impute(floor).unwrap();
            prop_assert_eq!(dense.len(), set.len());
            for link in set.links() {
                for (raw, d) in set.trace(link).unwrap().iter().zip(dense.trace(link).unwrap()) {
                    prop_assert_eq!(raw.unwrap_or(floor), *d);
                }
            }
        }

        #[test]
        fn grid_csv_round_trips(set in arb_raw_set()) {
            let dense = set.impute(DEFAULT_FLOOR_DB).unwrap();
            let mut buf = Vec::new();
            dense.write_grid_csv(&mut buf).unwrap();
            let back = DenseTraceSet::read_grid_csv(buf.as_slice(), 15, "").unwrap();
            prop_assert_eq!(&back, &dense);
            let mut again = Vec::new();
            back.write_grid_csv(&mut again).unwrap();
            prop_assert_eq!(again, buf);
        }

        #[test]
        fn reciprocal_lookup_symmetric(set in arb_raw_set(), slot in 0usize..40) {
            let dense = set.impute(DEFAULT_FLOOR_DB).unwrap();
            let slot = slot % dense.len();
            for link in dense.links() {
                let reverse_measured = dense.trace(LinkKey { tx: link.rx(), rx: link.tx() }).is_some();
                if !reverse_measured {
                    prop_assert_eq!(
                        dense.gain_at(link.tx(), link.rx(), slot).unwrap(),
                        dense.gain_at(link.rx(), link.tx(), slot).unwrap()
                    );
                }
            }
        }
    }
}
