//! Shared domain types: identifiers, call records, the time-slot calendar and
//! the geographic containment hierarchy levels.
//!
//! Everything here is an immutable value type, cheap to clone and safe to send
//! across worker threads.

use std::fmt;

use chrono::{DateTime, Datelike, FixedOffset, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

id_type!(
    /// Anonymized phone identifier. Opaque: equality only, no arithmetic.
    PhoneId
);
id_type!(
    /// Cell tower identifier.
    TowerId
);
id_type!(
    /// Identifier of a geographic unit at any hierarchy level.
    UnitId
);

/// Whether the phone originated or received the call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Originated,
    Received,
}

impl Direction {
    pub fn from_code(code: &str) -> Option<Direction> {
        match code {
            "O" => Some(Direction::Originated),
            "R" => Some(Direction::Received),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Direction::Originated => "O",
            Direction::Received => "R",
        }
    }
}

/// One anonymized call event.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub phone: PhoneId,
    /// Civil time in the configured observation timezone.
    pub timestamp: DateTime<FixedOffset>,
    pub tower: TowerId,
    pub direction: Direction,
}

/// The three slots that partition every day.
///
/// Intervals are half-open so each second of the day belongs to exactly one
/// slot: `Night` is [00:00, 07:00), `WorkingHour` is [07:00, 20:00) and
/// `Leisure` is [20:00, 24:00).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimeSlot {
    WorkingHour,
    Leisure,
    Night,
}

impl TimeSlot {
    pub const ALL: [TimeSlot; 3] = [TimeSlot::WorkingHour, TimeSlot::Leisure, TimeSlot::Night];

    /// Slots in the order they begin within a civil day.
    pub const BY_START: [TimeSlot; 3] = [TimeSlot::Night, TimeSlot::WorkingHour, TimeSlot::Leisure];

    pub fn of_hour(hour: u32) -> TimeSlot {
        debug_assert!(hour < 24);
        match hour {
            7..=19 => TimeSlot::WorkingHour,
            20..=23 => TimeSlot::Leisure,
            _ => TimeSlot::Night,
        }
    }

    /// Hours of the day covered by this slot.
    pub fn hours(self) -> u32 {
        match self {
            TimeSlot::WorkingHour => 13,
            TimeSlot::Leisure => 4,
            TimeSlot::Night => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TimeSlot::WorkingHour => "working_hour",
            TimeSlot::Leisure => "leisure",
            TimeSlot::Night => "night",
        }
    }

    pub fn from_name(name: &str) -> Option<TimeSlot> {
        match name {
            "working_hour" => Some(TimeSlot::WorkingHour),
            "leisure" => Some(TimeSlot::Leisure),
            "night" => Some(TimeSlot::Night),
            _ => None,
        }
    }

    /// Dense index used by counting structures.
    pub fn index(self) -> usize {
        match self {
            TimeSlot::WorkingHour => 0,
            TimeSlot::Leisure => 1,
            TimeSlot::Night => 2,
        }
    }

    pub fn from_index(i: usize) -> TimeSlot {
        Self::ALL[i]
    }
}

impl fmt::Display for TimeSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Weekday (Monday through Friday) or weekend (Saturday and Sunday).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DayType {
    Weekday,
    Weekend,
}

impl DayType {
    pub const ALL: [DayType; 2] = [DayType::Weekday, DayType::Weekend];

    pub fn of_date(date: NaiveDate) -> DayType {
        match date.weekday() {
            Weekday::Sat | Weekday::Sun => DayType::Weekend,
            _ => DayType::Weekday,
        }
    }

    /// Days of the week covered by this day type.
    pub fn days(self) -> u32 {
        match self {
            DayType::Weekday => 5,
            DayType::Weekend => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DayType::Weekday => "weekday",
            DayType::Weekend => "weekend",
        }
    }

    pub fn from_name(name: &str) -> Option<DayType> {
        match name {
            "weekday" => Some(DayType::Weekday),
            "weekend" => Some(DayType::Weekend),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            DayType::Weekday => 0,
            DayType::Weekend => 1,
        }
    }

    pub fn from_index(i: usize) -> DayType {
        Self::ALL[i]
    }
}

impl fmt::Display for DayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classify a local civil instant into its time slot and day type.
///
/// Pure: the result depends only on the wall-clock value.
pub fn classify_instant(local: NaiveDateTime) -> (TimeSlot, DayType) {
    (
        TimeSlot::of_hour(local.hour()),
        DayType::of_date(local.date()),
    )
}

/// Selector for [`expected_uniform_share`]: a day type, a slot, or one
/// (day type, slot) cell of the week.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShareSelector {
    Day(DayType),
    Slot(TimeSlot),
    Cell(DayType, TimeSlot),
}

/// Fraction of a uniformly spread week covered by the selector.
///
/// Day types are measured in days out of 7, slots in hours out of 24, and a
/// cell is the product of the two independent fractions.
pub fn expected_uniform_share(selector: ShareSelector) -> f64 {
    match selector {
        ShareSelector::Day(d) => f64::from(d.days()) / 7.0,
        ShareSelector::Slot(s) => f64::from(s.hours()) / 24.0,
        ShareSelector::Cell(d, s) => {
            (f64::from(d.days()) / 7.0) * (f64::from(s.hours()) / 24.0)
        }
    }
}

/// Levels of the geographic containment forest, finest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoLevel {
    Block,
    Upz,
    Locality,
    Municipality,
}

impl GeoLevel {
    pub const ALL: [GeoLevel; 4] = [
        GeoLevel::Block,
        GeoLevel::Upz,
        GeoLevel::Locality,
        GeoLevel::Municipality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeoLevel::Block => "block",
            GeoLevel::Upz => "upz",
            GeoLevel::Locality => "locality",
            GeoLevel::Municipality => "municipality",
        }
    }

    pub fn from_name(name: &str) -> Option<GeoLevel> {
        match name {
            "block" => Some(GeoLevel::Block),
            "upz" => Some(GeoLevel::Upz),
            "locality" => Some(GeoLevel::Locality),
            "municipality" => Some(GeoLevel::Municipality),
            _ => None,
        }
    }
}

impl fmt::Display for GeoLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// WGS84 coordinate in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<LatLon> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::data(format!(
                "coordinate out of range: ({lat}, {lon})"
            )));
        }
        Ok(LatLon { lat, lon })
    }
}

/// One unit of the geographic hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoUnit {
    pub id: UnitId,
    pub level: GeoLevel,
    /// Parent unit; municipalities are roots.
    pub parent: Option<UnitId>,
    pub centroid: LatLon,
    pub population: Option<u64>,
}

/// A physical cell site. Multiple antennas may share one tower; the tower is
/// the spatial unit and `antenna_count` is metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub id: TowerId,
    pub location: LatLon,
    pub municipality: UnitId,
    pub antenna_count: u32,
}

/// Closed date range plus the civil timezone all timestamps are normalized to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Offset from UTC of the focal city's single civil timezone.
    #[serde(with = "offset_serde")]
    pub offset: FixedOffset,
}

impl ObservationWindow {
    pub fn new(start: NaiveDate, end: NaiveDate, offset: FixedOffset) -> Result<Self> {
        if start > end {
            return Err(Error::config(format!(
                "observation window starts after it ends: {start} > {end}"
            )));
        }
        Ok(ObservationWindow { start, end, offset })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && date <= self.end
    }

    /// Number of calendar days in the window (inclusive bounds).
    pub fn num_days(&self) -> u32 {
        (self.end - self.start).num_days() as u32 + 1
    }

    /// Dense index of a date within the window.
    pub fn day_index(&self, date: NaiveDate) -> Option<u16> {
        if self.contains(date) {
            Some((date - self.start).num_days() as u16)
        } else {
            None
        }
    }

    pub fn date_of_index(&self, index: u16) -> NaiveDate {
        self.start + chrono::Duration::days(i64::from(index))
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.num_days() as u16).map(|i| self.date_of_index(i))
    }
}

/// Parse a `±HH:MM` UTC offset, e.g. `-05:00` for the Andean zone.
pub fn parse_utc_offset(text: &str) -> Result<FixedOffset> {
    let bad = || Error::config(format!("unresolvable timezone offset {text:?}"));
    let (sign, rest) = match text.as_bytes().first() {
        Some(b'+') => (1i32, &text[1..]),
        Some(b'-') => (-1i32, &text[1..]),
        _ => return Err(bad()),
    };
    let (h, m) = rest.split_once(':').ok_or_else(bad)?;
    let hours: i32 = h.parse().map_err(|_| bad())?;
    let minutes: i32 = m.parse().map_err(|_| bad())?;
    if hours > 14 || minutes > 59 {
        return Err(bad());
    }
    FixedOffset::east_opt(sign * (hours * 3600 + minutes * 60)).ok_or_else(bad)
}

pub fn format_utc_offset(offset: FixedOffset) -> String {
    let total = offset.local_minus_utc();
    let sign = if total < 0 { '-' } else { '+' };
    let total = total.abs();
    format!("{}{:02}:{:02}", sign, total / 3600, (total % 3600) / 60)
}

mod offset_serde {
    use chrono::FixedOffset;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(offset: &FixedOffset, ser: S) -> Result<S::Ok, S::Error> {
        super::format_utc_offset(*offset).serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<FixedOffset, D::Error> {
        let text = String::deserialize(de)?;
        super::parse_utc_offset(&text).map_err(serde::de::Error::custom)
    }
}
