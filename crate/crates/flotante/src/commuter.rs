//! Phone-day trip classification.
//!
//! A commuter-day is a phone-day on which a phone homed outside the focal
//! city placed strictly more working-hours calls inside the city than
//! outside it. One commuter-day is one trip; the trip matrix counts nothing
//! else. The same machinery classifies residents' intra-city days, which feed
//! the survey calibration.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{GeoHierarchy, TowerRegistry};
use crate::ingest::ProfileStore;
use crate::model::{DayType, GeoLevel, ObservationWindow, TimeSlot, TowerId, UnitId};
use crate::trips::TripMatrix;

/// How the trip's time slot is attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SlotAttribution {
    /// Slot of the phone's first inside-city call of the day. Slots are
    /// disjoint intervals, so the first call sits in the earliest slot (by
    /// start hour) that saw an inside call.
    #[default]
    FirstCall,
    /// Slot with the most inside-city calls that day; ties go to the earlier
    /// slot.
    Modal,
}

/// One classified commuting trip.
#[derive(Debug, Clone, PartialEq)]
pub struct CommuterDay {
    pub phone: String,
    /// Day index within the observation window.
    pub day: u16,
    /// Home municipality (never the focal city).
    pub origin: UnitId,
    /// Modal inside-city tower of the day.
    pub dest_tower: TowerId,
    pub slot: TimeSlot,
    /// Working-hours originated calls inside the city that day.
    pub inside_wh: u32,
    /// Working-hours originated calls outside the city that day.
    pub outside_wh: u32,
}

/// One intra-city day of a resident phone: home UPZ to the day's modal
/// working-hours tower.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidentDay {
    pub phone: String,
    pub day: u16,
    pub origin_upz: UnitId,
    pub dest_tower: TowerId,
}

/// Classify one phone-day from its originated (tower, slot, count) cells.
///
/// Returns the destination tower, attributed slot and the working-hours
/// inside/outside split, or `None` when the strict majority test fails.
/// `window_totals` carries the phone's all-window call counts per tower for
/// tie-breaking.
pub fn classify_commuter_day(
    day_cells: &[(u32, TimeSlot, u32)],
    is_city_tower: impl Fn(u32) -> bool,
    window_totals: &HashMap<u32, u64>,
    registry: &TowerRegistry,
    attribution: SlotAttribution,
) -> Option<(TowerId, TimeSlot, u32, u32)> {
    let mut inside_wh = 0u32;
    let mut outside_wh = 0u32;
    let mut inside_by_tower: HashMap<u32, u32> = HashMap::new();
    let mut inside_by_slot = [0u32; 3];
    for &(tower, slot, count) in day_cells {
        let inside = is_city_tower(tower);
        if slot == TimeSlot::WorkingHour {
            if inside {
                inside_wh += count;
            } else {
                outside_wh += count;
            }
        }
        if inside {
            *inside_by_tower.entry(tower).or_insert(0) += count;
            inside_by_slot[slot.index()] += count;
        }
    }
    if inside_wh <= outside_wh {
        return None;
    }
    let dest = inside_by_tower
        .iter()
        .map(|(&tower, &count)| {
            (
                count,
                window_totals.get(&tower).copied().unwrap_or(0),
                &registry.tower(tower).id,
            )
        })
        .max_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(b.2.cmp(a.2)))
        .map(|(_, _, id)| id.clone())?;
    let slot = match attribution {
        SlotAttribution::FirstCall => *TimeSlot::BY_START
            .iter()
            .find(|s| inside_by_slot[s.index()] > 0)
            .expect("at least one inside call"),
        SlotAttribution::Modal => *TimeSlot::BY_START
            .iter()
            .max_by_key(|s| inside_by_slot[s.index()])
            .expect("three slots"),
    };
    Some((dest, slot, inside_wh, outside_wh))
}

/// Classify every phone-day of every catchment-homed phone, in parallel.
/// Output is sorted by (phone, day) so downstream accumulation is
/// deterministic.
pub fn classify_commuter_days(
    store: &ProfileStore,
    homes: &crate::home::HomeAssignments,
    registry: &TowerRegistry,
    focal_city: &UnitId,
    catchment: &BTreeSet<UnitId>,
    attribution: SlotAttribution,
) -> Vec<CommuterDay> {
    let entries: Vec<_> = store.iter().collect();
    let mut days: Vec<CommuterDay> = entries
        .par_iter()
        .flat_map_iter(|(phone, profile)| {
            let home = homes.get(phone);
            let mut out = Vec::new();
            if let Some(home) = home {
                if &home.municipality != focal_city && catchment.contains(&home.municipality) {
                    let window_totals = profile.originated_by_tower();
                    for (day, cells) in profile.originated_by_day() {
                        if let Some((dest, slot, inside_wh, outside_wh)) = classify_commuter_day(
                            &cells,
                            |t| &registry.tower(t).municipality == focal_city,
                            &window_totals,
                            registry,
                            attribution,
                        ) {
                            out.push(CommuterDay {
                                phone: phone.to_string(),
                                day,
                                origin: home.municipality.clone(),
                                dest_tower: dest,
                                slot,
                                inside_wh,
                                outside_wh,
                            });
                        }
                    }
                }
            }
            out
        })
        .collect();
    days.sort_by(|a, b| a.phone.cmp(&b.phone).then(a.day.cmp(&b.day)));
    days
}

/// Classify intra-city days for phones homed inside the focal city: any day
/// with at least one working-hours call inside the city yields a trip from
/// the home UPZ to the UPZ of the day's modal working-hours tower.
pub fn classify_resident_days(
    store: &ProfileStore,
    homes: &crate::home::HomeAssignments,
    registry: &TowerRegistry,
    focal_city: &UnitId,
) -> Vec<ResidentDay> {
    let entries: Vec<_> = store.iter().collect();
    let mut days: Vec<ResidentDay> = entries
        .par_iter()
        .flat_map_iter(|(phone, profile)| {
            let mut out = Vec::new();
            if let Some(home) = homes.get(phone) {
                if let (true, Some(origin_upz)) =
                    (&home.municipality == focal_city, home.city_upz.clone())
                {
                    let window_totals = profile.originated_by_tower();
                    for (day, cells) in profile.originated_by_day() {
                        let mut wh_by_tower: HashMap<u32, u32> = HashMap::new();
                        for &(tower, slot, count) in &cells {
                            if slot == TimeSlot::WorkingHour
                                && &registry.tower(tower).municipality == focal_city
                            {
                                *wh_by_tower.entry(tower).or_insert(0) += count;
                            }
                        }
                        let dest = wh_by_tower
                            .iter()
                            .map(|(&tower, &count)| {
                                (
                                    count,
                                    window_totals.get(&tower).copied().unwrap_or(0),
                                    &registry.tower(tower).id,
                                )
                            })
                            .max_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(b.2.cmp(a.2)));
                        if let Some((_, _, dest_tower)) = dest {
                            out.push(ResidentDay {
                                phone: phone.to_string(),
                                day,
                                origin_upz: origin_upz.clone(),
                                dest_tower: dest_tower.clone(),
                            });
                        }
                    }
                }
            }
            out
        })
        .collect();
    days.sort_by(|a, b| a.phone.cmp(&b.phone).then(a.day.cmp(&b.day)));
    days
}

/// Outcome of the catchment restriction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CatchmentDecision {
    pub retained: BTreeSet<UnitId>,
    /// Excluded origins with the duration that disqualified them.
    pub excluded: BTreeMap<UnitId, u32>,
}

/// Keep origins whose center-to-center commute duration is at most
/// `max_minutes` (inclusive). A candidate origin without a duration is a
/// hard data error, never a silent decision.
pub fn catchment_filter(
    origins: impl IntoIterator<Item = UnitId>,
    durations: &BTreeMap<UnitId, u32>,
    max_minutes: u32,
) -> Result<CatchmentDecision> {
    let mut decision = CatchmentDecision::default();
    for origin in origins {
        match durations.get(&origin) {
            Some(&minutes) if minutes <= max_minutes => {
                decision.retained.insert(origin);
            }
            Some(&minutes) => {
                decision.excluded.insert(origin, minutes);
            }
            None => {
                return Err(Error::data(format!(
                    "no commute duration available for origin {origin}"
                )));
            }
        }
    }
    Ok(decision)
}

/// Accumulate commuter-days into a trip matrix at (municipality origin,
/// `dest_level` destination). Destination towers map through their covering
/// UPZ; requesting `Locality` rolls that UPZ up one level.
pub fn build_trip_matrix(
    days: &[CommuterDay],
    zones: &BTreeMap<TowerId, UnitId>,
    hierarchy: &GeoHierarchy,
    window: &ObservationWindow,
    dest_level: GeoLevel,
) -> Result<TripMatrix> {
    let mut matrix = TripMatrix::raw(GeoLevel::Municipality, dest_level);
    for day in days {
        let upz = zones.get(&day.dest_tower).ok_or_else(|| {
            Error::data(format!(
                "destination tower {} has no covering UPZ",
                day.dest_tower
            ))
        })?;
        let dest = match dest_level {
            GeoLevel::Upz => upz.clone(),
            level => hierarchy
                .ancestor_at(upz, level)
                .cloned()
                .ok_or_else(|| Error::data(format!("UPZ {upz} has no ancestor at {level}")))?,
        };
        let date = window.date_of_index(day.day);
        matrix.increment(day.origin.clone(), dest, DayType::of_date(date), day.slot);
    }
    debug_assert_eq!(matrix.total(), days.len() as f64);
    Ok(matrix)
}

/// The intra-city UPZ-to-UPZ matrix of resident days.
pub fn build_resident_matrix(
    days: &[ResidentDay],
    zones: &BTreeMap<TowerId, UnitId>,
    window: &ObservationWindow,
) -> Result<TripMatrix> {
    let mut matrix = TripMatrix::raw(GeoLevel::Upz, GeoLevel::Upz);
    for day in days {
        let dest = zones.get(&day.dest_tower).ok_or_else(|| {
            Error::data(format!(
                "destination tower {} has no covering UPZ",
                day.dest_tower
            ))
        })?;
        let date = window.date_of_index(day.day);
        matrix.increment(
            day.origin_upz.clone(),
            dest.clone(),
            DayType::of_date(date),
            TimeSlot::WorkingHour,
        );
    }
    Ok(matrix)
}

/// Daily distinct commuting phones plus weekday/weekend means.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub counts: Vec<(NaiveDate, u64)>,
    pub weekday_mean: f64,
    pub weekend_mean: f64,
}

/// Count distinct commuting phones per window date. Dates without a single
/// commuter appear as zero; the means average over all window dates of each
/// day type.
pub fn daily_commuter_series(days: &[CommuterDay], window: &ObservationWindow) -> DailySeries {
    let mut per_day = vec![0u64; window.num_days() as usize];
    for day in days {
        // classify_commuter_days yields at most one entry per (phone, day)
        per_day[day.day as usize] += 1;
    }
    let counts: Vec<(NaiveDate, u64)> = per_day
        .iter()
        .enumerate()
        .map(|(i, &n)| (window.date_of_index(i as u16), n))
        .collect();
    let mut sums = [0.0f64; 2];
    let mut days_of_type = [0u32; 2];
    for (date, n) in &counts {
        let idx = DayType::of_date(*date).index();
        sums[idx] += *n as f64;
        days_of_type[idx] += 1;
    }
    let mean = |i: usize| {
        if days_of_type[i] > 0 {
            sums[i] / f64::from(days_of_type[i])
        } else {
            0.0
        }
    };
    DailySeries {
        counts,
        weekday_mean: mean(DayType::Weekday.index()),
        weekend_mean: mean(DayType::Weekend.index()),
    }
}

impl DailySeries {
    /// `date,distinct_phones` CSV.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "date,distinct_phones")?;
        for (date, n) in &self.counts {
            writeln!(out, "{date},{n}")?;
        }
        Ok(())
    }
}

/// Per-phone-day detail export used by synthetic validation:
/// `phone_id,day,origin_id,dest_tower,slot,inside_wh,outside_wh`.
pub fn write_phone_days_csv(days: &[CommuterDay], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "phone_id,day,origin_id,dest_tower,slot,inside_wh,outside_wh")?;
    for d in days {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            d.phone, d.day, d.origin, d.dest_tower, d.slot, d.inside_wh, d.outside_wh
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LatLon, Tower};

    fn registry() -> TowerRegistry {
        let mk = |id: &str, muni: &str| Tower {
            id: TowerId::new(id),
            location: LatLon::new(4.6, -74.1).unwrap(),
            municipality: UnitId::new(muni),
            antenna_count: 1,
        };
        TowerRegistry::from_towers(vec![
            mk("C1", "CITY"),
            mk("C2", "CITY"),
            mk("S1", "SUB"),
        ])
        .unwrap()
    }

    fn classify(
        cells: &[(u32, TimeSlot, u32)],
        attribution: SlotAttribution,
    ) -> Option<(TowerId, TimeSlot, u32, u32)> {
        let reg = registry();
        classify_commuter_day(
            cells,
            |t| reg.tower(t).municipality == UnitId::new("CITY"),
            &HashMap::new(),
            &reg,
            attribution,
        )
    }

    #[test]
    fn strict_majority_emits() {
        let got = classify(
            &[
                (0, TimeSlot::WorkingHour, 3),
                (2, TimeSlot::WorkingHour, 1),
            ],
            SlotAttribution::FirstCall,
        );
        let (dest, slot, inside, outside) = got.unwrap();
        assert_eq!(dest, TowerId::new("C1"));
        assert_eq!(slot, TimeSlot::WorkingHour);
        assert_eq!((inside, outside), (3, 1));
    }

    #[test]
    fn equal_counts_do_not_emit() {
        let got = classify(
            &[
                (0, TimeSlot::WorkingHour, 2),
                (2, TimeSlot::WorkingHour, 2),
            ],
            SlotAttribution::FirstCall,
        );
        assert!(got.is_none());
    }

    #[test]
    fn zero_outside_calls_still_qualify() {
        let got = classify(&[(0, TimeSlot::WorkingHour, 1)], SlotAttribution::FirstCall);
        assert!(got.is_some());
    }

    #[test]
    fn first_call_slot_precedes_working_hours() {
        // A night arrival call precedes the working-hours activity.
        let got = classify(
            &[
                (0, TimeSlot::Night, 1),
                (0, TimeSlot::WorkingHour, 5),
            ],
            SlotAttribution::FirstCall,
        );
        assert_eq!(got.unwrap().1, TimeSlot::Night);
        // Modal attribution picks the busiest slot instead.
        let got = classify(
            &[
                (0, TimeSlot::Night, 1),
                (0, TimeSlot::WorkingHour, 5),
            ],
            SlotAttribution::Modal,
        );
        assert_eq!(got.unwrap().1, TimeSlot::WorkingHour);
    }

    #[test]
    fn modal_inside_tower_wins_destination() {
        let got = classify(
            &[
                (0, TimeSlot::WorkingHour, 2),
                (1, TimeSlot::WorkingHour, 3),
                (2, TimeSlot::WorkingHour, 1),
            ],
            SlotAttribution::FirstCall,
        );
        assert_eq!(got.unwrap().0, TowerId::new("C2"));
    }

    #[test]
    fn catchment_boundary_is_inclusive() {
        let durations: BTreeMap<UnitId, u32> = [
            ("A", 43u32),
            ("B", 61),
            ("C", 165),
            ("D", 181),
            ("E", 300),
        ]
        .into_iter()
        .map(|(id, d)| (UnitId::new(id), d))
        .collect();
        let origins: Vec<UnitId> = durations.keys().cloned().collect();
        let decision = catchment_filter(origins, &durations, 180).unwrap();
        assert_eq!(decision.retained.len(), 3);
        assert_eq!(decision.excluded.len(), 2);
        assert_eq!(decision.excluded[&UnitId::new("D")], 181);

        let exact: BTreeMap<UnitId, u32> = [(UnitId::new("X"), 180u32)].into_iter().collect();
        let d = catchment_filter(vec![UnitId::new("X")], &exact, 180).unwrap();
        assert!(d.retained.contains(&UnitId::new("X")));
    }

    #[test]
    fn missing_duration_is_a_named_error() {
        let durations = BTreeMap::new();
        let err = catchment_filter(vec![UnitId::new("GHOST")], &durations, 180).unwrap_err();
        assert!(err.to_string().contains("GHOST"));
    }

    fn city_hierarchy() -> GeoHierarchy {
        use crate::model::{GeoUnit, LatLon};
        let unit = |id: &str, level: GeoLevel, parent: Option<&str>| GeoUnit {
            id: UnitId::new(id),
            level,
            parent: parent.map(UnitId::new),
            centroid: LatLon::new(4.6, -74.1).unwrap(),
            population: None,
        };
        GeoHierarchy::from_units(vec![
            unit("CITY", GeoLevel::Municipality, None),
            unit("LOC1", GeoLevel::Locality, Some("CITY")),
            unit("U1", GeoLevel::Upz, Some("LOC1")),
            unit("U2", GeoLevel::Upz, Some("LOC1")),
            unit("SUB", GeoLevel::Municipality, None),
            unit("FAR", GeoLevel::Municipality, None),
        ])
        .unwrap()
    }

    fn window() -> ObservationWindow {
        ObservationWindow::new(
            NaiveDate::from_ymd_opt(2014, 1, 6).unwrap(),
            NaiveDate::from_ymd_opt(2014, 1, 19).unwrap(),
            crate::model::parse_utc_offset("-05:00").unwrap(),
        )
        .unwrap()
    }

    fn zones() -> BTreeMap<TowerId, UnitId> {
        [
            (TowerId::new("C1"), UnitId::new("U1")),
            (TowerId::new("C2"), UnitId::new("U2")),
        ]
        .into_iter()
        .collect()
    }

    fn commuter_day(phone: &str, day: u16, origin: &str, tower: &str) -> CommuterDay {
        CommuterDay {
            phone: phone.into(),
            day,
            origin: UnitId::new(origin),
            dest_tower: TowerId::new(tower),
            slot: TimeSlot::WorkingHour,
            inside_wh: 3,
            outside_wh: 0,
        }
    }

    #[test]
    fn single_day_single_cell() {
        let days = vec![commuter_day("p1", 1, "SUB", "C1")];
        let m = build_trip_matrix(&days, &zones(), &city_hierarchy(), &window(), GeoLevel::Upz)
            .unwrap();
        assert_eq!(m.total(), 1.0);
        assert_eq!(
            m.get(&(
                UnitId::new("SUB"),
                UnitId::new("U1"),
                DayType::Weekday,
                TimeSlot::WorkingHour
            )),
            1.0
        );
    }

    #[test]
    fn row_sums_conserve_trips() {
        let mut days = Vec::new();
        for i in 0..7 {
            days.push(commuter_day(&format!("a{i}"), 0, "SUB", "C1"));
        }
        for i in 0..3 {
            days.push(commuter_day(&format!("b{i}"), 0, "FAR", "C2"));
        }
        let m = build_trip_matrix(&days, &zones(), &city_hierarchy(), &window(), GeoLevel::Upz)
            .unwrap();
        assert_eq!(m.total(), 10.0);
        let rows = m.origin_totals();
        assert_eq!(rows[&UnitId::new("SUB")], 7.0);
        assert_eq!(rows[&UnitId::new("FAR")], 3.0);
    }

    #[test]
    fn unknown_zone_is_an_error() {
        let days = vec![commuter_day("p1", 1, "SUB", "S1")];
        assert!(
            build_trip_matrix(&days, &zones(), &city_hierarchy(), &window(), GeoLevel::Upz)
                .is_err()
        );
    }

    #[test]
    fn series_counts_distinct_phones() {
        let w = window();
        let empty = daily_commuter_series(&[], &w);
        assert!(empty.counts.iter().all(|(_, n)| *n == 0));

        let days = vec![
            commuter_day("p1", 0, "SUB", "C1"),
            commuter_day("p1", 3, "SUB", "C1"),
            commuter_day("p1", 5, "SUB", "C1"),
        ];
        let series = daily_commuter_series(&days, &w);
        let nonzero: Vec<u64> = series.counts.iter().map(|(_, n)| *n).filter(|n| *n > 0).collect();
        assert_eq!(nonzero, vec![1, 1, 1]);
        // 2014-01-06 is a Monday: days 0..5 are weekdays, 5 is Saturday.
        assert!(series.weekday_mean > 0.0);
        assert!(series.weekend_mean > 0.0);
    }
}
