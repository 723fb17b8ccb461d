//! Origin–destination trip matrices keyed by day type and time slot.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{DayType, GeoLevel, TimeSlot, UnitId};

/// One cell coordinate of a [`TripMatrix`].
pub type TripKey = (UnitId, UnitId, DayType, TimeSlot);

/// Counts of trips keyed by (origin, destination, day type, slot).
///
/// Raw matrices carry integral counts (one unit per classified phone-day);
/// expanded matrices carry population-scaled reals. Keys are held in a sorted
/// map so every iteration and export is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct TripMatrix {
    counts: BTreeMap<TripKey, f64>,
    pub origin_level: GeoLevel,
    pub dest_level: GeoLevel,
    pub expanded: bool,
}

impl TripMatrix {
    pub fn raw(origin_level: GeoLevel, dest_level: GeoLevel) -> TripMatrix {
        TripMatrix {
            counts: BTreeMap::new(),
            origin_level,
            dest_level,
            expanded: false,
        }
    }

    pub fn expanded_like(other: &TripMatrix) -> TripMatrix {
        TripMatrix {
            counts: BTreeMap::new(),
            origin_level: other.origin_level,
            dest_level: other.dest_level,
            expanded: true,
        }
    }

    pub fn with_levels(origin_level: GeoLevel, dest_level: GeoLevel, expanded: bool) -> TripMatrix {
        TripMatrix {
            counts: BTreeMap::new(),
            origin_level,
            dest_level,
            expanded,
        }
    }

    /// Record one classified trip.
    pub fn increment(&mut self, origin: UnitId, dest: UnitId, day_type: DayType, slot: TimeSlot) {
        debug_assert!(!self.expanded, "raw increments on an expanded matrix");
        *self
            .counts
            .entry((origin, dest, day_type, slot))
            .or_insert(0.0) += 1.0;
    }

    pub fn add(&mut self, key: TripKey, amount: f64) {
        debug_assert!(amount >= 0.0);
        *self.counts.entry(key).or_insert(0.0) += amount;
    }

    /// Merge another matrix of identical shape into this one.
    pub fn merge(&mut self, other: &TripMatrix) {
        debug_assert_eq!(self.origin_level, other.origin_level);
        debug_assert_eq!(self.dest_level, other.dest_level);
        for (key, v) in &other.counts {
            *self.counts.entry(key.clone()).or_insert(0.0) += v;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TripKey, f64)> {
        self.counts.iter().map(|(k, v)| (k, *v))
    }

    pub fn get(&self, key: &TripKey) -> f64 {
        self.counts.get(key).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.counts.values().sum()
    }

    pub fn origins(&self) -> BTreeSet<UnitId> {
        self.counts.keys().map(|k| k.0.clone()).collect()
    }

    pub fn destinations(&self) -> BTreeSet<UnitId> {
        self.counts.keys().map(|k| k.1.clone()).collect()
    }

    pub fn origin_totals(&self) -> BTreeMap<UnitId, f64> {
        let mut totals = BTreeMap::new();
        for (k, v) in self.iter() {
            *totals.entry(k.0.clone()).or_insert(0.0) += v;
        }
        totals
    }

    pub fn destination_totals(&self) -> BTreeMap<UnitId, f64> {
        let mut totals = BTreeMap::new();
        for (k, v) in self.iter() {
            *totals.entry(k.1.clone()).or_insert(0.0) += v;
        }
        totals
    }

    /// Destination totals restricted to one day type.
    pub fn destination_totals_for(&self, day_type: DayType) -> BTreeMap<UnitId, f64> {
        let mut totals = BTreeMap::new();
        for (k, v) in self.iter() {
            if k.2 == day_type {
                *totals.entry(k.1.clone()).or_insert(0.0) += v;
            }
        }
        totals
    }

    /// Trip mass per (day type, slot) cell, indexed `[day][slot]`.
    pub fn day_slot_totals(&self) -> [[f64; 3]; 2] {
        let mut grid = [[0.0; 3]; 2];
        for (k, v) in self.iter() {
            grid[k.2.index()][k.3.index()] += v;
        }
        grid
    }

    /// Collapse to (origin, destination) pair totals.
    pub fn pair_totals(&self) -> BTreeMap<(UnitId, UnitId), f64> {
        let mut totals = BTreeMap::new();
        for (k, v) in self.iter() {
            *totals.entry((k.0.clone(), k.1.clone())).or_insert(0.0) += v;
        }
        totals
    }

    /// Multiply every cell of one origin row by `factor`.
    pub fn scale_origin(&mut self, origin: &UnitId, factor: f64) {
        for (k, v) in self.counts.iter_mut() {
            if &k.0 == origin {
                *v *= factor;
            }
        }
    }

    /// Multiply every cell by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for v in self.counts.values_mut() {
            *v *= factor;
        }
    }

    /// Write the documented CSV: `origin_id,dest_id,day_type,slot,count`.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "origin_id,dest_id,day_type,slot,count")?;
        for (k, v) in self.iter() {
            if self.expanded {
                writeln!(out, "{},{},{},{},{:.6}", k.0, k.1, k.2, k.3, v)?;
            } else {
                writeln!(out, "{},{},{},{},{}", k.0, k.1, k.2, k.3, v as u64)?;
            }
        }
        Ok(())
    }

    /// Read back a matrix written by [`TripMatrix::write_csv`].
    pub fn read_csv(
        path: &Path,
        origin_level: GeoLevel,
        dest_level: GeoLevel,
        expanded: bool,
    ) -> Result<TripMatrix> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut matrix = TripMatrix {
            counts: BTreeMap::new(),
            origin_level,
            dest_level,
            expanded,
        };
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if lineno == 0 || line.is_empty() {
                continue;
            }
            let ctx = |what: &str| Error::Format {
                path: path.to_owned(),
                reason: format!("line {}: {what}", lineno + 1),
            };
            let mut f = line.split(',');
            let origin = f.next().ok_or_else(|| ctx("missing origin"))?;
            let dest = f.next().ok_or_else(|| ctx("missing dest"))?;
            let day = f
                .next()
                .and_then(DayType::from_name)
                .ok_or_else(|| ctx("bad day_type"))?;
            let slot = f
                .next()
                .and_then(TimeSlot::from_name)
                .ok_or_else(|| ctx("bad slot"))?;
            let count: f64 = f
                .next()
                .and_then(|s| s.parse().ok())
                .filter(|c| *c >= 0.0)
                .ok_or_else(|| ctx("bad count"))?;
            matrix.add((UnitId::new(origin), UnitId::new(dest), day, slot), count);
        }
        Ok(matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_are_conserved_across_views() {
        let mut m = TripMatrix::raw(GeoLevel::Municipality, GeoLevel::Upz);
        for _ in 0..3 {
            m.increment(
                UnitId::new("A"),
                UnitId::new("U1"),
                DayType::Weekday,
                TimeSlot::WorkingHour,
            );
        }
        m.increment(
            UnitId::new("B"),
            UnitId::new("U2"),
            DayType::Weekend,
            TimeSlot::Night,
        );
        assert_eq!(m.total(), 4.0);
        assert_eq!(m.origin_totals()[&UnitId::new("A")], 3.0);
        assert_eq!(m.destination_totals()[&UnitId::new("U2")], 1.0);
        let grid = m.day_slot_totals();
        assert_eq!(grid[DayType::Weekday.index()][TimeSlot::WorkingHour.index()], 3.0);
        assert_eq!(grid[DayType::Weekend.index()][TimeSlot::Night.index()], 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let mut m = TripMatrix::raw(GeoLevel::Municipality, GeoLevel::Upz);
        m.increment(
            UnitId::new("A"),
            UnitId::new("U1"),
            DayType::Weekday,
            TimeSlot::WorkingHour,
        );
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, &buf).unwrap();
        let back =
            TripMatrix::read_csv(&path, GeoLevel::Municipality, GeoLevel::Upz, false).unwrap();
        assert_eq!(m, back);
    }
}
