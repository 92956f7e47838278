//! Binary on-air traces and their dissector.
//!
//! A trace is the simulator-world equivalent of a sniffer capture: every
//! emission, every successful reception with its ToA decision, and one
//! summary per exchange. Files start with the 8-byte magic `GPKTRACE` and a
//! little-endian `u16` version; each record is a type byte, a `u32` payload
//! length, and fixed-width little-endian fields (strings are u16
//! length-prefixed). Timestamps are femtoseconds so that multiples of the
//! 15.65 ps sniffer tick stay exact integers; the event collector keeps them
//! strictly increasing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::phy::{HrpPacketSpec, PacketField, StsSource};

pub const TRACE_MAGIC: &[u8; 8] = b"GPKTRACE";
pub const TRACE_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryStatus {
    Ok,
    PacketLost,
    NoDetection,
}

impl SummaryStatus {
    fn to_byte(self) -> u8 {
        match self {
            SummaryStatus::Ok => 0,
            SummaryStatus::PacketLost => 1,
            SummaryStatus::NoDetection => 2,
        }
    }

    fn from_byte(b: u8, offset: u64) -> Result<Self> {
        match b {
            0 => Ok(SummaryStatus::Ok),
            1 => Ok(SummaryStatus::PacketLost),
            2 => Ok(SummaryStatus::NoDetection),
            _ => Err(Error::TraceParse { offset, message: format!("unknown status {b}") }),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SummaryStatus::Ok => "ok",
            SummaryStatus::PacketLost => "packet-lost",
            SummaryStatus::NoDetection => "no-detection",
        }
    }
}

/// One emission on the medium.
#[derive(Debug, Clone, PartialEq)]
pub struct TxRecord {
    pub timestamp_fs: u64,
    pub device_id: u16,
    pub packet_digest: u64,
    /// On-air duration of the packet, femtoseconds.
    pub duration_fs: u64,
    pub preamble_gain: f64,
    pub sfd_gain: f64,
    pub sts_gain: f64,
    pub data_gain: f64,
    pub is_injection: bool,
}

/// One successful reception (packet-start arrival time).
#[derive(Debug, Clone, PartialEq)]
pub struct RxRecord {
    pub timestamp_fs: u64,
    pub device_id: u16,
    pub source_id: u16,
    pub packet_digest: u64,
}

/// The leading-edge decision behind one reception.
#[derive(Debug, Clone, PartialEq)]
pub struct ToaDecisionRecord {
    /// Decision instant (end of the receive window).
    pub timestamp_fs: u64,
    pub device_id: u16,
    /// Estimated arrival of the packet, femtoseconds.
    pub toa_fs: u64,
    pub peak_index: u32,
    pub accepted_index: u32,
    pub peak_magnitude: f64,
    pub noise_floor: f64,
    pub leading_edge_used: bool,
    pub sts_quality: Option<f64>,
}

/// Closing record of one ranging exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeSummaryRecord {
    pub timestamp_fs: u64,
    pub device_id: u16,
    pub exchange_index: u32,
    pub status: SummaryStatus,
    /// Bit 0: packet 2 targeted, bit 1: packet 3 targeted.
    pub attack_targets: u8,
    pub true_distance_m: f64,
    pub distance_full_m: Option<f64>,
    pub distance_simple_m: Option<f64>,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    Tx(TxRecord),
    Rx(RxRecord),
    ToaDecision(ToaDecisionRecord),
    ExchangeSummary(ExchangeSummaryRecord),
}

impl TraceRecord {
    pub fn timestamp_fs(&self) -> u64 {
        match self {
            TraceRecord::Tx(r) => r.timestamp_fs,
            TraceRecord::Rx(r) => r.timestamp_fs,
            TraceRecord::ToaDecision(r) => r.timestamp_fs,
            TraceRecord::ExchangeSummary(r) => r.timestamp_fs,
        }
    }

    /// Shifts the record onto a global timeline.
    pub fn offset_by(&self, offset_fs: u64) -> TraceRecord {
        let mut r = self.clone();
        match &mut r {
            TraceRecord::Tx(x) => x.timestamp_fs += offset_fs,
            TraceRecord::Rx(x) => x.timestamp_fs += offset_fs,
            TraceRecord::ToaDecision(x) => {
                x.timestamp_fs += offset_fs;
                x.toa_fs += offset_fs;
            }
            TraceRecord::ExchangeSummary(x) => x.timestamp_fs += offset_fs,
        }
        r
    }
}

/// FNV-1a digest of the on-air content of a packet spec.
pub fn packet_digest(spec: &HrpPacketSpec) -> u64 {
    let mut h = Fnv1a::new();
    for &s in &spec.preamble_code {
        h.byte(s as u8);
    }
    h.u64(spec.preamble_repetitions as u64);
    for &s in &spec.sfd {
        h.byte(s as u8);
    }
    match &spec.sts {
        None => h.byte(0),
        Some(src) => {
            h.byte(1);
            h.u64(src.len_bits() as u64);
            if let StsSource::Raw(bits) = src {
                for &b in bits {
                    h.byte(b);
                }
            } else if let Ok(bits) = src.bits() {
                for &b in &bits {
                    h.byte(b);
                }
            }
        }
    }
    if let Some(bits) = &spec.data_bits {
        h.byte(2);
        for &b in bits {
            h.byte(b);
        }
    }
    for field in [PacketField::Preamble, PacketField::Sfd, PacketField::Sts, PacketField::Data] {
        h.u64(spec.field_slots(field) as u64);
    }
    for g in [spec.gains.preamble, spec.gains.sfd, spec.gains.sts, spec.gains.data] {
        h.u64(g.to_bits());
    }
    h.finish()
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }
    fn byte(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }
    fn u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.byte(b);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

// --- encoding ---------------------------------------------------------

const TYPE_TX: u8 = 1;
const TYPE_RX: u8 = 2;
const TYPE_TOA: u8 = 3;
const TYPE_SUMMARY: u8 = 4;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn opt_f64(&mut self, v: Option<f64>) {
        match v {
            Some(x) => {
                self.u8(1);
                self.f64(x);
            }
            None => self.u8(0),
        }
    }
    fn string(&mut self, s: &str) {
        let bytes = s.as_bytes();
        self.u16(bytes.len() as u16);
        self.buf.extend_from_slice(bytes);
    }
}

/// Serializes records to the GPKTRACE byte format.
pub fn encode_records(records: &[TraceRecord]) -> Vec<u8> {
    let mut out = Writer { buf: Vec::new() };
    out.buf.extend_from_slice(TRACE_MAGIC);
    out.u16(TRACE_VERSION);
    for record in records {
        let mut body = Writer { buf: Vec::new() };
        let ty = match record {
            TraceRecord::Tx(r) => {
                body.u64(r.timestamp_fs);
                body.u16(r.device_id);
                body.u64(r.packet_digest);
                body.u64(r.duration_fs);
                body.f64(r.preamble_gain);
                body.f64(r.sfd_gain);
                body.f64(r.sts_gain);
                body.f64(r.data_gain);
                body.u8(r.is_injection as u8);
                TYPE_TX
            }
            TraceRecord::Rx(r) => {
                body.u64(r.timestamp_fs);
                body.u16(r.device_id);
                body.u16(r.source_id);
                body.u64(r.packet_digest);
                TYPE_RX
            }
            TraceRecord::ToaDecision(r) => {
                body.u64(r.timestamp_fs);
                body.u16(r.device_id);
                body.u64(r.toa_fs);
                body.u32(r.peak_index);
                body.u32(r.accepted_index);
                body.f64(r.peak_magnitude);
                body.f64(r.noise_floor);
                body.u8(r.leading_edge_used as u8);
                body.opt_f64(r.sts_quality);
                TYPE_TOA
            }
            TraceRecord::ExchangeSummary(r) => {
                body.u64(r.timestamp_fs);
                body.u16(r.device_id);
                body.u32(r.exchange_index);
                body.u8(r.status.to_byte());
                body.u8(r.attack_targets);
                body.f64(r.true_distance_m);
                body.opt_f64(r.distance_full_m);
                body.opt_f64(r.distance_simple_m);
                body.string(&r.notes);
                TYPE_SUMMARY
            }
        };
        out.u8(ty);
        out.u32(body.buf.len() as u32);
        out.buf.extend_from_slice(&body.buf);
    }
    out.buf
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::TraceParse { offset: self.pos as u64, message: message.into() })
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return self.fail(format!(
                "truncated: need {n} bytes, {} remain",
                self.data.len() - self.pos
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn opt_f64(&mut self) -> Result<Option<f64>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.f64()?)),
            other => self.fail(format!("bad optional flag {other}")),
        }
    }
    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).or_else(|_| self.fail("invalid utf-8 in string"))
    }
}

/// Parses the GPKTRACE byte format; errors carry the failing byte offset.
pub fn decode_records(data: &[u8]) -> Result<Vec<TraceRecord>> {
    let mut r = Reader { data, pos: 0 };
    let magic = r.take(8).map_err(|_| Error::TraceParse {
        offset: 0,
        message: "file shorter than the 8-byte magic".into(),
    })?;
    if magic != TRACE_MAGIC {
        return Err(Error::TraceParse { offset: 0, message: "bad magic".into() });
    }
    let version = r.u16()?;
    if version != TRACE_VERSION {
        return Err(Error::TraceParse {
            offset: 8,
            message: format!("unsupported version {version}"),
        });
    }
    let mut records = Vec::new();
    while r.pos < data.len() {
        let record_offset = r.pos as u64;
        let ty = r.u8()?;
        let len = r.u32()? as usize;
        let body_start = r.pos;
        if body_start + len > data.len() {
            return Err(Error::TraceParse {
                offset: record_offset + 1,
                message: format!(
                    "length prefix {len} overruns file ({} bytes remain)",
                    data.len() - body_start
                ),
            });
        }
        let record = match ty {
            TYPE_TX => TraceRecord::Tx(TxRecord {
                timestamp_fs: r.u64()?,
                device_id: r.u16()?,
                packet_digest: r.u64()?,
                duration_fs: r.u64()?,
                preamble_gain: r.f64()?,
                sfd_gain: r.f64()?,
                sts_gain: r.f64()?,
                data_gain: r.f64()?,
                is_injection: r.u8()? != 0,
            }),
            TYPE_RX => TraceRecord::Rx(RxRecord {
                timestamp_fs: r.u64()?,
                device_id: r.u16()?,
                source_id: r.u16()?,
                packet_digest: r.u64()?,
            }),
            TYPE_TOA => TraceRecord::ToaDecision(ToaDecisionRecord {
                timestamp_fs: r.u64()?,
                device_id: r.u16()?,
                toa_fs: r.u64()?,
                peak_index: r.u32()?,
                accepted_index: r.u32()?,
                peak_magnitude: r.f64()?,
                noise_floor: r.f64()?,
                leading_edge_used: r.u8()? != 0,
                sts_quality: r.opt_f64()?,
            }),
            TYPE_SUMMARY => {
                let timestamp_fs = r.u64()?;
                let device_id = r.u16()?;
                let exchange_index = r.u32()?;
                let status_byte = r.u8()?;
                let status = SummaryStatus::from_byte(status_byte, r.pos as u64 - 1)?;
                TraceRecord::ExchangeSummary(ExchangeSummaryRecord {
                    timestamp_fs,
                    device_id,
                    exchange_index,
                    status,
                    attack_targets: r.u8()?,
                    true_distance_m: r.f64()?,
                    distance_full_m: r.opt_f64()?,
                    distance_simple_m: r.opt_f64()?,
                    notes: r.string()?,
                })
            }
            other => {
                return Err(Error::TraceParse {
                    offset: record_offset,
                    message: format!("unknown record type {other}"),
                })
            }
        };
        if r.pos != body_start + len {
            return Err(Error::TraceParse {
                offset: r.pos as u64,
                message: format!(
                    "record body length mismatch: declared {len}, consumed {}",
                    r.pos - body_start
                ),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_trace(records: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_records(records))?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let data = fs::read(path)?;
    decode_records(&data)
}

// --- dissection -------------------------------------------------------

fn fmt_us(ts_fs: u64) -> String {
    format!("{:14.4} us", ts_fs as f64 / 1e9)
}

/// Renders a trace human-readably: one line per record, grouped by
/// exchange, with overlap flags on injected emissions and a ghost-peak
/// annotation on exchanges whose distance was reduced via an accepted
/// leading edge.
pub fn dissect_records(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    out.push_str(&format!("GPKTRACE v{TRACE_VERSION}: {} records\n", records.len()));

    // Split into exchange groups; each summary closes a group.
    let mut groups: Vec<&[TraceRecord]> = Vec::new();
    let mut start = 0;
    for (i, rec) in records.iter().enumerate() {
        if matches!(rec, TraceRecord::ExchangeSummary(_)) {
            groups.push(&records[start..=i]);
            start = i + 1;
        }
    }
    if start < records.len() {
        groups.push(&records[start..]);
    }

    for group in groups {
        let txs: Vec<&TxRecord> = group
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Tx(t) => Some(t),
                _ => None,
            })
            .collect();
        let leading_edge_seen = group.iter().any(|r| {
            matches!(r, TraceRecord::ToaDecision(d) if d.leading_edge_used)
        });
        if let Some(TraceRecord::ExchangeSummary(s)) =
            group.iter().find(|r| matches!(r, TraceRecord::ExchangeSummary(_)))
        {
            out.push_str(&format!("exchange {}:\n", s.exchange_index));
        } else {
            out.push_str("exchange (open):\n");
        }
        for rec in group {
            match rec {
                TraceRecord::Tx(t) => {
                    let mut line = format!(
                        "  [{}] tx  dev={} pkt={:016x} gains p/s/S/d={:.3}/{:.3}/{:.3}/{:.3}{}",
                        fmt_us(t.timestamp_fs),
                        t.device_id,
                        t.packet_digest,
                        t.preamble_gain,
                        t.sfd_gain,
                        t.sts_gain,
                        t.data_gain,
                        if t.is_injection { " INJECTION" } else { "" },
                    );
                    for other in &txs {
                        if other.device_id != t.device_id
                            && t.timestamp_fs < other.timestamp_fs + other.duration_fs
                            && other.timestamp_fs < t.timestamp_fs + t.duration_fs
                        {
                            line.push_str(&format!(" ** overlaps dev={} **", other.device_id));
                        }
                    }
                    line.push('\n');
                    out.push_str(&line);
                }
                TraceRecord::Rx(rx) => {
                    out.push_str(&format!(
                        "  [{}] rx  dev={} src={} pkt={:016x}\n",
                        fmt_us(rx.timestamp_fs),
                        rx.device_id,
                        rx.source_id,
                        rx.packet_digest,
                    ));
                }
                TraceRecord::ToaDecision(d) => {
                    let quality = match d.sts_quality {
                        Some(q) => format!("{q:.3}"),
                        None => "-".into(),
                    };
                    out.push_str(&format!(
                        "  [{}] toa dev={} toa={} peak@{} acc@{} mag={:.3e} floor={:.3e} \
                         leading_edge={} sts_quality={}\n",
                        fmt_us(d.timestamp_fs),
                        d.device_id,
                        fmt_us(d.toa_fs),
                        d.peak_index,
                        d.accepted_index,
                        d.peak_magnitude,
                        d.noise_floor,
                        d.leading_edge_used,
                        quality,
                    ));
                }
                TraceRecord::ExchangeSummary(s) => {
                    let dist = |d: Option<f64>| match d {
                        Some(v) => format!("{v:.3} m"),
                        None => "-".into(),
                    };
                    let mut targets = Vec::new();
                    if s.attack_targets & 1 != 0 {
                        targets.push("packet2");
                    }
                    if s.attack_targets & 2 != 0 {
                        targets.push("packet3");
                    }
                    let ghost = leading_edge_seen
                        && s.distance_full_m.map_or(false, |d| d < s.true_distance_m);
                    out.push_str(&format!(
                        "  [{}] summary status={} d_full={} d_simple={} true={:.3} m \
                         targets=[{}]{}{}\n",
                        fmt_us(s.timestamp_fs),
                        s.status.as_str(),
                        dist(s.distance_full_m),
                        dist(s.distance_simple_m),
                        s.true_distance_m,
                        targets.join("+"),
                        if s.notes.is_empty() { String::new() } else { format!(" note={}", s.notes) },
                        if ghost { " GHOST PEAK" } else { "" },
                    ));
                }
            }
        }
    }
    out
}

/// Reads and renders a trace file.
pub fn dissect(path: impl AsRef<Path>) -> Result<String> {
    Ok(dissect_records(&read_trace(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<TraceRecord> {
        vec![
            TraceRecord::Tx(TxRecord {
                timestamp_fs: 15_650,
                device_id: 0,
                packet_digest: 0xdead_beef,
                duration_fs: 10_000_000,
                preamble_gain: 1.0,
                sfd_gain: 1.0,
                sts_gain: 1.0,
                data_gain: 0.0,
                is_injection: false,
            }),
            TraceRecord::Rx(RxRecord {
                timestamp_fs: 31_300,
                device_id: 1,
                source_id: 0,
                packet_digest: 0xdead_beef,
            }),
            TraceRecord::ToaDecision(ToaDecisionRecord {
                timestamp_fs: 46_950,
                device_id: 1,
                toa_fs: 31_300,
                peak_index: 2081,
                accepted_index: 2070,
                peak_magnitude: 12.5,
                noise_floor: 0.25,
                leading_edge_used: true,
                sts_quality: Some(0.97),
            }),
            TraceRecord::ExchangeSummary(ExchangeSummaryRecord {
                timestamp_fs: 62_600,
                device_id: 0,
                exchange_index: 7,
                status: SummaryStatus::Ok,
                attack_targets: 1,
                true_distance_m: 15.0,
                distance_full_m: Some(13.2),
                distance_simple_m: None,
                notes: "demo".into(),
            }),
        ]
    }

    #[test]
    fn empty_trace_is_exactly_ten_bytes() {
        let bytes = encode_records(&[]);
        assert_eq!(bytes.len(), 10);
        assert_eq!(&bytes[..8], TRACE_MAGIC);
        assert_eq!(decode_records(&bytes).unwrap(), Vec::new());
    }

    #[test]
    fn round_trip_is_exact() {
        let records = sample_records();
        let bytes = encode_records(&records);
        assert_eq!(decode_records(&bytes).unwrap(), records);
        // Byte-level: re-encoding the decoded records is identical.
        assert_eq!(encode_records(&decode_records(&bytes).unwrap()), bytes);
    }

    #[test]
    fn bad_magic_is_rejected_at_offset_zero() {
        let mut bytes = encode_records(&[]);
        bytes[0] = b'X';
        match decode_records(&bytes) {
            Err(Error::TraceParse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_length_prefix_names_the_offset() {
        let mut bytes = encode_records(&sample_records());
        // Length prefix of the first record lives right after the type byte.
        bytes[11] = 0xff;
        bytes[12] = 0xff;
        match decode_records(&bytes) {
            Err(Error::TraceParse { offset, message }) => {
                assert_eq!(offset, 11);
                assert!(message.contains("overruns"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode_records(&sample_records());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_records(cut), Err(Error::TraceParse { .. })));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode_records(&[]);
        bytes[8] = 9;
        match decode_records(&bytes) {
            Err(Error::TraceParse { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dissect_empty_trace_is_header_only() {
        let text = dissect_records(&[]);
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("0 records"));
    }

    #[test]
    fn dissect_flags_overlap_and_ghost_peak() {
        let mut records = sample_records();
        records.insert(
            1,
            TraceRecord::Tx(TxRecord {
                timestamp_fs: 20_000,
                device_id: 100,
                packet_digest: 0x1234,
                duration_fs: 9_000_000,
                preamble_gain: 0.25,
                sfd_gain: 0.25,
                sts_gain: 1.5,
                data_gain: 0.0,
                is_injection: true,
            }),
        );
        let text = dissect_records(&records);
        assert!(text.contains("INJECTION"));
        assert!(text.contains("** overlaps dev=0 **"));
        assert!(text.contains("GHOST PEAK"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.gpk");
        let records = sample_records();
        write_trace(&records, &path).unwrap();
        assert_eq!(read_trace(&path).unwrap(), records);
    }

    #[test]
    fn digest_tracks_content() {
        let a = HrpPacketSpec::default();
        let mut b = a.clone();
        assert_eq!(packet_digest(&a), packet_digest(&b));
        b.gains.sts = 0.5;
        assert_ne!(packet_digest(&a), packet_digest(&b));
    }
}
