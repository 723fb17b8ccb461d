//! Home-location inference from off-working-hours calling patterns.
//!
//! A phone's home municipality is the one whose towers received the most of
//! its Leisure- and Night-slot originated calls. Phones homed inside the
//! focal city are additionally refined to the UPZ covering their modal
//! off-hours tower, which is what the survey calibration counts.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;

use crate::geo::{GeoHierarchy, TowerRegistry};
use crate::ingest::{PhoneProfile, ProfileStore};
use crate::model::{GeoLevel, TowerId, UnitId};

/// Result of home inference for one phone.
#[derive(Debug, Clone, PartialEq)]
pub struct HomeAssignment {
    pub municipality: UnitId,
    /// Off-hours originated calls attributed to the home municipality.
    pub support: u64,
    /// Off-hours calls of the strongest competing municipality.
    pub runner_up: u64,
    /// All off-hours originated calls of the phone, any municipality.
    pub offhours_total: u64,
    /// UPZ refinement for phones homed inside the focal city.
    pub city_upz: Option<UnitId>,
}

/// Home assignments for a whole corpus, keyed by phone id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HomeAssignments {
    map: BTreeMap<String, HomeAssignment>,
}

impl HomeAssignments {
    pub fn get(&self, phone: &str) -> Option<&HomeAssignment> {
        self.map.get(phone)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &HomeAssignment)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, phone: impl Into<String>, assignment: HomeAssignment) {
        self.map.insert(phone.into(), assignment);
    }

    /// `phone_id,municipality_id,support,runner_up,offhours_total` CSV.
    /// Off by default in pipeline runs; synthetic-validation runs enable it.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "phone_id,municipality_id,support,runner_up,offhours_total")?;
        for (phone, a) in &self.map {
            writeln!(
                out,
                "{phone},{},{},{},{}",
                a.municipality, a.support, a.runner_up, a.offhours_total
            )?;
        }
        Ok(())
    }
}

/// Infer one phone's home municipality.
///
/// Off-hours calls are summed per municipality; the argmax wins. Ties break
/// toward the municipality with more of the phone's calls over all slots,
/// then toward the lexicographically smallest id. Returns `None` for phones
/// with zero off-hours calls.
pub fn infer_home(profile: &PhoneProfile, registry: &TowerRegistry) -> Option<HomeAssignment> {
    let offhours = profile.offhours_by_tower();
    if offhours.is_empty() {
        return None;
    }
    let mut by_muni: BTreeMap<&UnitId, u64> = BTreeMap::new();
    for (&tower, &count) in &offhours {
        *by_muni.entry(&registry.tower(tower).municipality).or_insert(0) += count;
    }
    let totals = profile.originated_by_tower();
    let mut total_by_muni: HashMap<&UnitId, u64> = HashMap::new();
    for (&tower, &count) in &totals {
        *total_by_muni.entry(&registry.tower(tower).municipality).or_insert(0) += count;
    }
    let mut best: Option<(&UnitId, u64)> = None;
    let mut runner_up = 0u64;
    for (muni, &count) in &by_muni {
        match best {
            None => best = Some((muni, count)),
            Some((best_muni, best_count)) => {
                let better = count > best_count
                    || (count == best_count && {
                        let t_new = total_by_muni.get(muni).copied().unwrap_or(0);
                        let t_best = total_by_muni.get(best_muni).copied().unwrap_or(0);
                        t_new > t_best || (t_new == t_best && *muni < best_muni)
                    });
                if better {
                    runner_up = best_count;
                    best = Some((muni, count));
                } else {
                    runner_up = runner_up.max(count);
                }
            }
        }
    }
    let (municipality, support) = best?;
    Some(HomeAssignment {
        municipality: municipality.clone(),
        support,
        runner_up,
        offhours_total: offhours.values().sum(),
        city_upz: None,
    })
}

/// The phone's modal off-hours tower, restricted to towers of `municipality`.
/// Ties break toward the tower with more calls over the whole window, then
/// toward the lowest tower id.
fn modal_offhours_tower(
    profile: &PhoneProfile,
    registry: &TowerRegistry,
    municipality: &UnitId,
) -> Option<TowerId> {
    let offhours = profile.offhours_by_tower();
    let totals = profile.originated_by_tower();
    let mut candidates: Vec<(&TowerId, u64, u64)> = offhours
        .iter()
        .filter(|(&tower, _)| &registry.tower(tower).municipality == municipality)
        .map(|(&tower, &count)| {
            (
                &registry.tower(tower).id,
                count,
                totals.get(&tower).copied().unwrap_or(0),
            )
        })
        .collect();
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(b.0)));
    candidates.first().map(|(id, _, _)| (*id).clone())
}

/// Infer homes for every phone in the store, in parallel, refining in-city
/// homes to the UPZ covering the modal off-hours tower.
pub fn infer_homes(
    store: &ProfileStore,
    registry: &TowerRegistry,
    tower_upz: &BTreeMap<TowerId, UnitId>,
    focal_city: &UnitId,
) -> HomeAssignments {
    let entries: Vec<(&str, &PhoneProfile)> = store.iter().collect();
    let assigned: Vec<(String, HomeAssignment)> = entries
        .par_iter()
        .filter_map(|(phone, profile)| {
            let mut assignment = infer_home(profile, registry)?;
            if &assignment.municipality == focal_city {
                assignment.city_upz = modal_offhours_tower(profile, registry, focal_city)
                    .and_then(|tower| tower_upz.get(&tower).cloned());
            }
            Some((phone.to_string(), assignment))
        })
        .collect();
    let mut homes = HomeAssignments::default();
    for (phone, assignment) in assigned {
        homes.map.insert(phone, assignment);
    }
    homes
}

/// Number of phones whose home resolves within `unit`.
///
/// Municipalities count matching homes directly; sub-municipal units count
/// phones whose refined home UPZ lies within the unit.
pub fn resident_phone_count(
    homes: &HomeAssignments,
    hierarchy: &GeoHierarchy,
    unit: &UnitId,
) -> u64 {
    let level = match hierarchy.get(unit) {
        Some(u) => u.level,
        None => return 0,
    };
    homes
        .iter()
        .filter(|(_, a)| match level {
            GeoLevel::Municipality => &a.municipality == unit,
            _ => a
                .city_upz
                .as_ref()
                .is_some_and(|upz| hierarchy.is_within(upz, unit)),
        })
        .count() as u64
}

/// Resident phone counts for every unit at one level, computed in one pass.
pub fn resident_counts_at(
    homes: &HomeAssignments,
    hierarchy: &GeoHierarchy,
    level: GeoLevel,
) -> BTreeMap<UnitId, u64> {
    let mut counts = BTreeMap::new();
    for (_, a) in homes.iter() {
        let unit = match level {
            GeoLevel::Municipality => Some(&a.municipality),
            _ => a
                .city_upz
                .as_ref()
                .and_then(|upz| hierarchy.ancestor_at(upz, level)),
        };
        if let Some(unit) = unit {
            *counts.entry(unit.clone()).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Direction, LatLon, TimeSlot, Tower};

    fn registry() -> TowerRegistry {
        TowerRegistry::from_towers(vec![
            tower("T-A1", "M-A"),
            tower("T-A2", "M-A"),
            tower("T-B1", "M-B"),
        ])
        .unwrap()
    }

    fn tower(id: &str, muni: &str) -> Tower {
        Tower {
            id: TowerId::new(id),
            location: LatLon::new(4.6, -74.1).unwrap(),
            municipality: UnitId::new(muni),
            antenna_count: 1,
        }
    }

    fn profile(calls: &[(u32, TimeSlot, u32)]) -> PhoneProfile {
        let mut p = PhoneProfile::default();
        for &(tower, slot, n) in calls {
            for _ in 0..n {
                p.record(tower, 3, slot, Direction::Originated);
            }
        }
        p
    }

    #[test]
    fn unanimous_offhours_pick_the_municipality() {
        let p = profile(&[(0, TimeSlot::Night, 4), (1, TimeSlot::Leisure, 2)]);
        let home = infer_home(&p, &registry()).unwrap();
        assert_eq!(home.municipality, UnitId::new("M-A"));
        assert_eq!(home.support, 6);
        assert_eq!(home.runner_up, 0);
        assert_eq!(home.offhours_total, 6);
    }

    #[test]
    fn majority_with_runner_up() {
        let p = profile(&[(0, TimeSlot::Night, 10), (2, TimeSlot::Night, 3)]);
        let home = infer_home(&p, &registry()).unwrap();
        assert_eq!(home.municipality, UnitId::new("M-A"));
        assert_eq!(home.support, 10);
        assert_eq!(home.runner_up, 3);
    }

    #[test]
    fn zero_offhours_gives_none() {
        let p = profile(&[(0, TimeSlot::WorkingHour, 50)]);
        assert!(infer_home(&p, &registry()).is_none());
    }

    #[test]
    fn tie_breaks_on_total_calls_then_id() {
        // Equal off-hours counts, but M-B has more total calls.
        let mut p = profile(&[(0, TimeSlot::Night, 5), (2, TimeSlot::Night, 5)]);
        for _ in 0..20 {
            p.record(2, 3, TimeSlot::WorkingHour, Direction::Originated);
        }
        let home = infer_home(&p, &registry()).unwrap();
        assert_eq!(home.municipality, UnitId::new("M-B"));
        assert_eq!(home.support, 5);
        assert_eq!(home.runner_up, 5);

        // Fully symmetric: lexicographically smaller id wins.
        let p = profile(&[(0, TimeSlot::Night, 5), (2, TimeSlot::Night, 5)]);
        let home = infer_home(&p, &registry()).unwrap();
        assert_eq!(home.municipality, UnitId::new("M-A"));
    }

    #[test]
    fn municipality_aggregation_beats_single_tower_argmax() {
        // M-A strictly dominates in aggregate even though the single busiest
        // tower belongs to M-B.
        let p = profile(&[
            (0, TimeSlot::Night, 4),
            (1, TimeSlot::Night, 4),
            (2, TimeSlot::Night, 5),
        ]);
        let reg = registry();
        let home = infer_home(&p, &reg).unwrap();
        assert_eq!(home.municipality, UnitId::new("M-A"));
        let offhours = p.offhours_by_tower();
        let top_tower = offhours.iter().max_by_key(|(_, &n)| n).map(|(&t, _)| t).unwrap();
        assert_eq!(reg.tower(top_tower).municipality, UnitId::new("M-B"));
    }
}
