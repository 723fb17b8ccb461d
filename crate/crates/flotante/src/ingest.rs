//! CDR shard parsing and per-phone aggregate profiles.
//!
//! Shards are UTF-8 comma-delimited text, one call per line:
//! `phone_id,iso8601_local_timestamp,tower_id,direction(O|R)` with an optional
//! `#cdr v1` header. Dirty lines are never fatal: they increment typed
//! quarantine counters so `accepted + quarantined == total` always holds.
//!
//! Profiles are mergeable. Building per-shard stores in parallel and merging
//! them yields exactly the same store as a single pass, which is what lets
//! billion-record corpora ingest shard by shard.

use std::collections::HashMap;
use std::io::BufRead;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geo::TowerRegistry;
use crate::model::{
    classify_instant, CallRecord, DayType, Direction, ObservationWindow, PhoneId, TimeSlot, UnitId,
};
use crate::stats::{ols, LinearFit};

/// Why a line was quarantined instead of accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum QuarantineReason {
    Malformed,
    BadTimestamp,
    BadDirection,
    UnknownTower,
    OutOfWindow,
}

impl QuarantineReason {
    pub const ALL: [QuarantineReason; 5] = [
        QuarantineReason::Malformed,
        QuarantineReason::BadTimestamp,
        QuarantineReason::BadDirection,
        QuarantineReason::UnknownTower,
        QuarantineReason::OutOfWindow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuarantineReason::Malformed => "malformed",
            QuarantineReason::BadTimestamp => "bad_timestamp",
            QuarantineReason::BadDirection => "bad_direction",
            QuarantineReason::UnknownTower => "unknown_tower",
            QuarantineReason::OutOfWindow => "out_of_window",
        }
    }
}

/// Typed quarantine counters. Dropping a record without bumping one of these
/// is a bug.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QuarantineCounters {
    pub malformed: u64,
    pub bad_timestamp: u64,
    pub bad_direction: u64,
    pub unknown_tower: u64,
    pub out_of_window: u64,
}

impl QuarantineCounters {
    pub fn bump(&mut self, reason: QuarantineReason) {
        match reason {
            QuarantineReason::Malformed => self.malformed += 1,
            QuarantineReason::BadTimestamp => self.bad_timestamp += 1,
            QuarantineReason::BadDirection => self.bad_direction += 1,
            QuarantineReason::UnknownTower => self.unknown_tower += 1,
            QuarantineReason::OutOfWindow => self.out_of_window += 1,
        }
    }

    pub fn get(&self, reason: QuarantineReason) -> u64 {
        match reason {
            QuarantineReason::Malformed => self.malformed,
            QuarantineReason::BadTimestamp => self.bad_timestamp,
            QuarantineReason::BadDirection => self.bad_direction,
            QuarantineReason::UnknownTower => self.unknown_tower,
            QuarantineReason::OutOfWindow => self.out_of_window,
        }
    }

    pub fn total(&self) -> u64 {
        self.malformed + self.bad_timestamp + self.bad_direction + self.unknown_tower
            + self.out_of_window
    }

    pub fn merge(&mut self, other: &QuarantineCounters) {
        self.malformed += other.malformed;
        self.bad_timestamp += other.bad_timestamp;
        self.bad_direction += other.bad_direction;
        self.unknown_tower += other.unknown_tower;
        self.out_of_window += other.out_of_window;
    }
}

/// Per-shard ingest statistics, merged across shards for corpus diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShardStats {
    pub quarantine: QuarantineCounters,
    pub accepted: u64,
    /// Accepted records per window day index.
    pub calls_per_day: Vec<u64>,
}

impl ShardStats {
    fn new(num_days: usize) -> ShardStats {
        ShardStats {
            quarantine: QuarantineCounters::default(),
            accepted: 0,
            calls_per_day: vec![0; num_days],
        }
    }

    pub fn merge(&mut self, other: &ShardStats) {
        self.quarantine.merge(&other.quarantine);
        self.accepted += other.accepted;
        if self.calls_per_day.len() < other.calls_per_day.len() {
            self.calls_per_day.resize(other.calls_per_day.len(), 0);
        }
        for (d, n) in other.calls_per_day.iter().enumerate() {
            self.calls_per_day[d] += n;
        }
    }
}

/// A parsed call with registry- and window-resolved fields, borrowed from the
/// line buffer. This is what the ingest hot path hands to sinks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallView<'a> {
    pub phone: &'a str,
    /// Dense index into the tower registry.
    pub tower: u32,
    /// Day index within the observation window.
    pub day: u16,
    pub slot: TimeSlot,
    pub day_type: DayType,
    pub direction: Direction,
}

/// Packed profile cell key: tower, window day, slot and direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey(u64);

impl CellKey {
    const DAY_BITS: u32 = 13;

    pub fn new(tower: u32, day: u16, slot: TimeSlot, direction: Direction) -> CellKey {
        debug_assert!(u32::from(day) < (1 << Self::DAY_BITS));
        let dir = match direction {
            Direction::Originated => 0u64,
            Direction::Received => 1u64,
        };
        CellKey(
            (u64::from(tower) << (Self::DAY_BITS + 3))
                | (u64::from(day) << 3)
                | ((slot.index() as u64) << 1)
                | dir,
        )
    }

    pub fn tower(self) -> u32 {
        (self.0 >> (Self::DAY_BITS + 3)) as u32
    }

    pub fn day(self) -> u16 {
        ((self.0 >> 3) & ((1 << Self::DAY_BITS) - 1)) as u16
    }

    pub fn slot(self) -> TimeSlot {
        TimeSlot::from_index(((self.0 >> 1) & 0b11) as usize)
    }

    pub fn direction(self) -> Direction {
        if self.0 & 1 == 0 {
            Direction::Originated
        } else {
            Direction::Received
        }
    }
}

/// Per-phone aggregate: call counts per (tower, day, slot, direction) plus
/// direction totals. The sum of all cells equals the two totals combined.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhoneProfile {
    pub cells: HashMap<CellKey, u32>,
    pub originated_total: u64,
    pub received_total: u64,
}

impl PhoneProfile {
    pub fn record(&mut self, tower: u32, day: u16, slot: TimeSlot, direction: Direction) {
        *self.cells.entry(CellKey::new(tower, day, slot, direction)).or_insert(0) += 1;
        match direction {
            Direction::Originated => self.originated_total += 1,
            Direction::Received => self.received_total += 1,
        }
    }

    pub fn merge_from(&mut self, other: &PhoneProfile) {
        for (key, count) in &other.cells {
            *self.cells.entry(*key).or_insert(0) += count;
        }
        self.originated_total += other.originated_total;
        self.received_total += other.received_total;
    }

    pub fn cell_sum(&self) -> u64 {
        self.cells.values().map(|&c| u64::from(c)).sum()
    }

    /// Originated calls per tower, restricted to the off-working-hours slots
    /// (Leisure and Night, all days of the week).
    pub fn offhours_by_tower(&self) -> HashMap<u32, u64> {
        let mut counts = HashMap::new();
        for (key, &n) in &self.cells {
            if key.direction() == Direction::Originated && key.slot() != TimeSlot::WorkingHour {
                *counts.entry(key.tower()).or_insert(0) += u64::from(n);
            }
        }
        counts
    }

    /// All originated calls per tower, any slot.
    pub fn originated_by_tower(&self) -> HashMap<u32, u64> {
        let mut counts = HashMap::new();
        for (key, &n) in &self.cells {
            if key.direction() == Direction::Originated {
                *counts.entry(key.tower()).or_insert(0) += u64::from(n);
            }
        }
        counts
    }

    /// Originated calls grouped by window day: (tower, slot) -> count.
    pub fn originated_by_day(&self) -> HashMap<u16, Vec<(u32, TimeSlot, u32)>> {
        let mut days: HashMap<u16, Vec<(u32, TimeSlot, u32)>> = HashMap::new();
        for (key, &n) in &self.cells {
            if key.direction() == Direction::Originated {
                days.entry(key.day()).or_default().push((key.tower(), key.slot(), n));
            }
        }
        days
    }
}

/// All profiles of one corpus (or one shard of it), keyed by phone id.
#[derive(Debug, Clone, Default)]
pub struct ProfileStore {
    ids: Vec<Box<str>>,
    index: HashMap<Box<str>, u32>,
    profiles: Vec<PhoneProfile>,
}

impl ProfileStore {
    pub fn new() -> ProfileStore {
        ProfileStore::default()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    fn phone_index(&mut self, phone: &str) -> u32 {
        if let Some(&i) = self.index.get(phone) {
            return i;
        }
        let i = self.ids.len() as u32;
        let boxed: Box<str> = phone.into();
        self.ids.push(boxed.clone());
        self.index.insert(boxed, i);
        self.profiles.push(PhoneProfile::default());
        i
    }

    pub fn observe(&mut self, call: CallView<'_>) {
        let i = self.phone_index(call.phone);
        self.profiles[i as usize].record(call.tower, call.day, call.slot, call.direction);
    }

    pub fn get(&self, phone: &str) -> Option<&PhoneProfile> {
        self.index.get(phone).map(|&i| &self.profiles[i as usize])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PhoneProfile)> {
        self.ids.iter().map(|s| s.as_ref()).zip(self.profiles.iter())
    }

    pub fn phone_ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(|s| s.as_ref())
    }

    /// Merge another store into this one. Associative and commutative up to
    /// internal index order; exports sort by phone id so merged output is
    /// identical to a single-pass build.
    pub fn merge(&mut self, other: &ProfileStore) {
        for (phone, profile) in other.iter() {
            let i = self.phone_index(phone);
            self.profiles[i as usize].merge_from(profile);
        }
    }

    /// Keep only phones that both originated and received at least
    /// `min_calls` calls over the window.
    pub fn activity_filter(self, min_calls: u64) -> ProfileStore {
        let mut retained = ProfileStore::new();
        for (phone, profile) in self.iter() {
            if profile.originated_total >= min_calls && profile.received_total >= min_calls {
                let i = retained.phone_index(phone);
                retained.profiles[i as usize] = profile.clone();
            }
        }
        retained
    }

    /// Canonical deterministic dump, used to prove shard-merge equivalence:
    /// phones sorted by id, cells sorted by (tower, day, slot, direction).
    pub fn export_csv(&self, registry: &TowerRegistry) -> String {
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        let mut out = String::with_capacity(self.len() * 64);
        out.push_str("phone_id,tower_id,day,slot,direction,count\n");
        let mut cells: Vec<(CellKey, u32)> = Vec::new();
        for i in order {
            let profile = &self.profiles[i];
            cells.clear();
            cells.extend(profile.cells.iter().map(|(k, v)| (*k, *v)));
            cells.sort_by(|a, b| {
                let ka = (registry.tower(a.0.tower()).id.as_str(), a.0.day(), a.0.slot(), a.0.direction() == Direction::Received);
                let kb = (registry.tower(b.0.tower()).id.as_str(), b.0.day(), b.0.slot(), b.0.direction() == Direction::Received);
                ka.cmp(&kb)
            });
            for (key, count) in &cells {
                use std::fmt::Write;
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    self.ids[i],
                    registry.tower(key.tower()).id,
                    key.day(),
                    key.slot(),
                    key.direction().code(),
                    count
                )
                .unwrap();
            }
        }
        out
    }
}

/// Parse one shard, feeding every accepted call to `sink`.
///
/// The first line may be the `#cdr v1` header; any other `#` line is a
/// format error. Malformed lines, unknown towers and out-of-window
/// timestamps are counted, never silently dropped.
pub fn parse_cdr_shard<R: BufRead>(
    mut reader: R,
    registry: &TowerRegistry,
    window: &ObservationWindow,
    mut sink: impl FnMut(CallView<'_>),
) -> Result<ShardStats> {
    let mut stats = ShardStats::new(window.num_days() as usize);
    let mut buf = String::with_capacity(128);
    let mut first = true;
    loop {
        buf.clear();
        let n = reader
            .read_line(&mut buf)
            .map_err(|e| Error::io("<cdr shard>", e))?;
        if n == 0 {
            break;
        }
        let line = buf.trim_end_matches(['\n', '\r']);
        if first {
            first = false;
            if let Some(rest) = line.strip_prefix('#') {
                if rest.trim() != "cdr v1" {
                    return Err(Error::Format {
                        path: "<cdr shard>".into(),
                        reason: format!("unsupported header {line:?}"),
                    });
                }
                continue;
            }
        } else if line.starts_with('#') {
            return Err(Error::Format {
                path: "<cdr shard>".into(),
                reason: "header line after data".into(),
            });
        }
        if line.is_empty() {
            continue;
        }
        match parse_line(line, registry, window) {
            Ok(view) => {
                stats.accepted += 1;
                stats.calls_per_day[view.day as usize] += 1;
                sink(view);
            }
            Err(reason) => stats.quarantine.bump(reason),
        }
    }
    Ok(stats)
}

/// Convenience wrapper yielding owned [`CallRecord`]s; fine for fixtures and
/// small corpora, too allocation-heavy for the bulk path.
pub fn parse_cdr_records<R: BufRead>(
    reader: R,
    registry: &TowerRegistry,
    window: &ObservationWindow,
) -> Result<(Vec<CallRecord>, ShardStats)> {
    let mut records = Vec::new();
    let stats = parse_cdr_shard(reader, registry, window, |view| {
        let date = window.date_of_index(view.day);
        // Recover a representative timestamp at slot start; the owned record
        // keeps civil-time semantics without re-parsing the line.
        let hour = match view.slot {
            TimeSlot::Night => 0,
            TimeSlot::WorkingHour => 7,
            TimeSlot::Leisure => 20,
        };
        let naive = date.and_time(NaiveTime::from_hms_opt(hour, 0, 0).unwrap());
        records.push(CallRecord {
            phone: PhoneId::new(view.phone),
            timestamp: naive.and_local_timezone(window.offset).unwrap(),
            tower: registry.tower(view.tower).id.clone(),
            direction: view.direction,
        });
    })?;
    Ok((records, stats))
}

/// Build (or extend) a profile store from one shard.
pub fn build_profiles<R: BufRead>(
    reader: R,
    registry: &TowerRegistry,
    window: &ObservationWindow,
    store: &mut ProfileStore,
) -> Result<ShardStats> {
    parse_cdr_shard(reader, registry, window, |view| store.observe(view))
}

fn parse_line<'a>(
    line: &'a str,
    registry: &TowerRegistry,
    window: &ObservationWindow,
) -> std::result::Result<CallView<'a>, QuarantineReason> {
    let bytes = line.as_bytes();
    let c1 = memchr(bytes, 0, b',').ok_or(QuarantineReason::Malformed)?;
    let c2 = memchr(bytes, c1 + 1, b',').ok_or(QuarantineReason::Malformed)?;
    let c3 = memchr(bytes, c2 + 1, b',').ok_or(QuarantineReason::Malformed)?;
    if memchr(bytes, c3 + 1, b',').is_some() {
        return Err(QuarantineReason::Malformed);
    }
    let phone = &line[..c1];
    if phone.is_empty() {
        return Err(QuarantineReason::Malformed);
    }
    let ts = &line[c1 + 1..c2];
    let tower_id = &line[c2 + 1..c3];
    let dir_text = &line[c3 + 1..];

    let direction = match dir_text {
        "O" => Direction::Originated,
        "R" => Direction::Received,
        _ => return Err(QuarantineReason::BadDirection),
    };
    let local = parse_local_timestamp(ts, window).ok_or(QuarantineReason::BadTimestamp)?;
    let day = window
        .day_index(local.date())
        .ok_or(QuarantineReason::OutOfWindow)?;
    let tower = registry
        .resolve(tower_id)
        .ok_or(QuarantineReason::UnknownTower)?;
    let (slot, day_type) = classify_instant(local);
    Ok(CallView {
        phone,
        tower,
        day,
        slot,
        day_type,
        direction,
    })
}

fn memchr(haystack: &[u8], from: usize, needle: u8) -> Option<usize> {
    haystack[from..].iter().position(|&b| b == needle).map(|p| p + from)
}

/// Parse `YYYY-MM-DDTHH:MM:SS` with an optional `Z`/`±HH:MM` suffix. A bare
/// timestamp is already local civil time; suffixed ones are converted into
/// the window's configured zone.
fn parse_local_timestamp(text: &str, window: &ObservationWindow) -> Option<NaiveDateTime> {
    let b = text.as_bytes();
    if b.len() < 19 || b[4] != b'-' || b[7] != b'-' || (b[10] != b'T' && b[10] != b' ')
        || b[13] != b':' || b[16] != b':'
    {
        return None;
    }
    let year = digits(&b[0..4])?;
    let month = digits(&b[5..7])?;
    let day = digits(&b[8..10])?;
    let hour = digits(&b[11..13])?;
    let minute = digits(&b[14..16])?;
    let second = digits(&b[17..19])?;
    let date = NaiveDate::from_ymd_opt(year as i32, month, day)?;
    let time = NaiveTime::from_hms_opt(hour, minute, second)?;
    let naive = date.and_time(time);
    match &text[19..] {
        "" => Some(naive),
        suffix => {
            // Convert an explicit offset into the configured civil zone.
            let source = if suffix == "Z" {
                chrono::FixedOffset::east_opt(0)?
            } else {
                crate::model::parse_utc_offset(suffix).ok()?
            };
            let instant = naive.and_local_timezone(source).single()?;
            Some(instant.with_timezone(&window.offset).naive_local())
        }
    }
}

fn digits(b: &[u8]) -> Option<u32> {
    let mut v = 0u32;
    for &c in b {
        if !c.is_ascii_digit() {
            return None;
        }
        v = v * 10 + u32::from(c - b'0');
    }
    Some(v)
}

/// Corpus-level diagnostics assembled after ingest.
#[derive(Debug, Clone, Serialize)]
pub struct CorpusDiagnostics {
    /// Accepted calls per window date.
    pub calls_per_day: Vec<(NaiveDate, u64)>,
    pub distinct_phones: u64,
    pub accepted_records: u64,
    pub quarantined: QuarantineCounters,
    pub towers_per_municipality: std::collections::BTreeMap<UnitId, u32>,
}

impl CorpusDiagnostics {
    pub fn assemble(
        stats: &ShardStats,
        store: &ProfileStore,
        registry: &TowerRegistry,
        window: &ObservationWindow,
    ) -> CorpusDiagnostics {
        let calls_per_day = stats
            .calls_per_day
            .iter()
            .enumerate()
            .map(|(i, &n)| (window.date_of_index(i as u16), n))
            .collect();
        CorpusDiagnostics {
            calls_per_day,
            distinct_phones: store.len() as u64,
            accepted_records: stats.accepted,
            quarantined: stats.quarantine,
            towers_per_municipality: registry.towers_per_municipality(),
        }
    }

    /// `date,count` CSV of the daily call series.
    pub fn write_calls_per_day(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "date,count")?;
        for (date, count) in &self.calls_per_day {
            writeln!(out, "{date},{count}")?;
        }
        Ok(())
    }
}

/// Elasticity of tower count with respect to municipality population:
/// the OLS slope of log tower count on log population. Municipalities with
/// no towers or unknown population are excluded.
pub fn tower_elasticity(
    registry: &TowerRegistry,
    populations: &std::collections::BTreeMap<UnitId, u64>,
) -> Result<LinearFit> {
    let counts = registry.towers_per_municipality();
    let points: Vec<(f64, f64)> = counts
        .iter()
        .filter_map(|(muni, &towers)| {
            let pop = populations.get(muni).copied().filter(|&p| p > 0)?;
            Some(((pop as f64).ln(), f64::from(towers).ln()))
        })
        .collect();
    if points.len() < 3 {
        return Err(Error::Fit(format!(
            "tower elasticity needs at least 3 municipalities with towers and population, got {}",
            points.len()
        )));
    }
    ols(&points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_utc_offset, LatLon, Tower, TowerId};
    use std::collections::BTreeMap;
    use std::io::Cursor;

    fn registry() -> TowerRegistry {
        TowerRegistry::from_towers(vec![
            Tower {
                id: TowerId::new("T042"),
                location: LatLon::new(4.6, -74.1).unwrap(),
                municipality: UnitId::new("CITY"),
                antenna_count: 3,
            },
            Tower {
                id: TowerId::new("T100"),
                location: LatLon::new(4.9, -74.3).unwrap(),
                municipality: UnitId::new("SUB"),
                antenna_count: 1,
            },
        ])
        .unwrap()
    }

    fn window() -> ObservationWindow {
        ObservationWindow::new(
            NaiveDate::from_ymd_opt(2014, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2014, 5, 31).unwrap(),
            parse_utc_offset("-05:00").unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn well_formed_line_maps_directly() {
        let (records, stats) = parse_cdr_records(
            Cursor::new("a1b2,2014-01-07T09:15:00,T042,O\n"),
            &registry(),
            &window(),
        )
        .unwrap();
        assert_eq!(stats.accepted, 1);
        assert_eq!(stats.quarantine.total(), 0);
        assert_eq!(records[0].phone, PhoneId::new("a1b2"));
        assert_eq!(records[0].tower, TowerId::new("T042"));
        assert_eq!(records[0].direction, Direction::Originated);
    }

    #[test]
    fn unknown_tower_is_quarantined() {
        let mut store = ProfileStore::new();
        let stats = build_profiles(
            Cursor::new("a1b2,2014-01-07T09:15:00,T999,O\n"),
            &registry(),
            &window(),
            &mut store,
        )
        .unwrap();
        assert_eq!(stats.accepted, 0);
        assert_eq!(stats.quarantine.unknown_tower, 1);
        assert!(store.is_empty());
    }

    #[test]
    fn three_line_fixture_accepts_two() {
        let shard = "#cdr v1\n\
                     a,2014-01-07T09:15:00,T042,O\n\
                     b,not-a-timestamp,T042,O\n\
                     c,2014-01-07T22:00:00,T100,R\n";
        let mut store = ProfileStore::new();
        let stats = build_profiles(Cursor::new(shard), &registry(), &window(), &mut store).unwrap();
        assert_eq!(stats.accepted, 2);
        assert_eq!(stats.quarantine.total(), 1);
        assert_eq!(stats.quarantine.bad_timestamp, 1);
        assert_eq!(store.len(), 2);
        // Conservation: accepted + quarantined = data lines.
        assert_eq!(stats.accepted + stats.quarantine.total(), 3);
    }

    #[test]
    fn header_mismatch_is_format_error() {
        let mut store = ProfileStore::new();
        let err = build_profiles(
            Cursor::new("#cdr v9\na,2014-01-07T09:15:00,T042,O\n"),
            &registry(),
            &window(),
            &mut store,
        );
        assert!(matches!(err, Err(Error::Format { .. })));
    }

    #[test]
    fn out_of_window_and_bad_direction_quarantined() {
        let shard = "a,2013-11-30T09:15:00,T042,O\nb,2014-01-07T09:15:00,T042,X\n";
        let mut store = ProfileStore::new();
        let stats = build_profiles(Cursor::new(shard), &registry(), &window(), &mut store).unwrap();
        assert_eq!(stats.quarantine.out_of_window, 1);
        assert_eq!(stats.quarantine.bad_direction, 1);
    }

    #[test]
    fn offset_suffix_normalizes_to_window_zone() {
        // 14:15 UTC == 09:15 at -05:00.
        let (records, _) = parse_cdr_records(
            Cursor::new("a,2014-01-07T14:15:00Z,T042,O\n"),
            &registry(),
            &window(),
        )
        .unwrap();
        use chrono::Timelike;
        assert_eq!(records[0].timestamp.hour(), 7); // slot-start representative
        let mut store = ProfileStore::new();
        build_profiles(
            Cursor::new("a,2014-01-07T14:15:00Z,T042,O\n"),
            &registry(),
            &window(),
            &mut store,
        )
        .unwrap();
        let cell = store.get("a").unwrap().cells.keys().next().unwrap();
        assert_eq!(cell.slot(), TimeSlot::WorkingHour);
    }

    #[test]
    fn single_call_profile() {
        let mut store = ProfileStore::new();
        build_profiles(
            Cursor::new("a,2014-01-07T09:15:00,T042,O\n"),
            &registry(),
            &window(),
            &mut store,
        )
        .unwrap();
        let p = store.get("a").unwrap();
        assert_eq!(p.cells.len(), 1);
        assert_eq!(p.originated_total, 1);
        assert_eq!(p.received_total, 0);
        assert_eq!(p.cell_sum(), 1);
    }

    #[test]
    fn shard_split_merge_equals_single_pass() {
        let lines: Vec<String> = (0..200)
            .map(|i| {
                format!(
                    "p{},2014-01-{:02}T{:02}:10:00,{},{}",
                    i % 17,
                    1 + (i % 28),
                    i % 24,
                    if i % 3 == 0 { "T100" } else { "T042" },
                    if i % 2 == 0 { "O" } else { "R" }
                )
            })
            .collect();
        let reg = registry();
        let win = window();
        let mut single = ProfileStore::new();
        build_profiles(Cursor::new(lines.join("\n")), &reg, &win, &mut single).unwrap();

        for chunk_size in [1usize, 7, 50, 200] {
            let mut merged = ProfileStore::new();
            for chunk in lines.chunks(chunk_size) {
                let mut local = ProfileStore::new();
                build_profiles(Cursor::new(chunk.join("\n")), &reg, &win, &mut local).unwrap();
                merged.merge(&local);
            }
            assert_eq!(merged.export_csv(&reg), single.export_csv(&reg));
        }
    }

    #[test]
    fn activity_filter_boundary() {
        let mut store = ProfileStore::new();
        let mut lines = String::new();
        for i in 0..6 {
            lines.push_str(&format!("six,2014-01-07T0{}:10:00,T042,O\n", i + 1));
            lines.push_str(&format!("six,2014-01-08T0{}:10:00,T042,R\n", i + 1));
        }
        for i in 0..100 {
            lines.push_str(&format!(
                "lopsided,2014-01-{:02}T09:10:00,T042,O\n",
                1 + (i % 28)
            ));
        }
        for i in 0..5 {
            lines.push_str(&format!("lopsided,2014-01-07T1{i}:10:00,T042,R\n"));
        }
        build_profiles(Cursor::new(lines), &registry(), &window(), &mut store).unwrap();
        let retained = store.activity_filter(6);
        assert!(retained.get("six").is_some());
        assert!(retained.get("lopsided").is_none());
    }

    #[test]
    fn elasticity_recovers_planted_exponent() {
        // Towers laid out as round(0.01 * pop^0.85) across three decades.
        let mut towers = Vec::new();
        let mut populations = BTreeMap::new();
        for (i, pop) in [10_000u64, 100_000, 1_000_000].iter().enumerate() {
            let muni = UnitId::new(format!("M{i}"));
            let count = (0.01 * (*pop as f64).powf(0.85)).round() as usize;
            for t in 0..count {
                towers.push(Tower {
                    id: TowerId::new(format!("M{i}-T{t}")),
                    location: LatLon::new(4.0 + i as f64, -74.0).unwrap(),
                    municipality: muni.clone(),
                    antenna_count: 1,
                });
            }
            populations.insert(muni, *pop);
        }
        let reg = TowerRegistry::from_towers(towers).unwrap();
        let fit = tower_elasticity(&reg, &populations).unwrap();
        assert!((fit.slope - 0.85).abs() < 0.01, "slope {}", fit.slope);
    }

    #[test]
    fn elasticity_slope_one_when_proportional() {
        let mut towers = Vec::new();
        let mut populations = BTreeMap::new();
        for (i, pop) in [1_000u64, 10_000, 100_000].iter().enumerate() {
            let muni = UnitId::new(format!("M{i}"));
            for t in 0..(*pop / 1_000) {
                towers.push(Tower {
                    id: TowerId::new(format!("M{i}-T{t}")),
                    location: LatLon::new(4.0, -74.0).unwrap(),
                    municipality: muni.clone(),
                    antenna_count: 1,
                });
            }
            populations.insert(muni, *pop);
        }
        let reg = TowerRegistry::from_towers(towers).unwrap();
        let fit = tower_elasticity(&reg, &populations).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-9);
        assert!(fit.slope_se < 1e-9);
    }
}
