//! Geographic registries: the block → UPZ → locality → municipality
//! containment forest and the tower registry.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{GeoLevel, GeoUnit, LatLon, Tower, TowerId, UnitId};

/// The containment forest over geographic units.
///
/// Municipalities are roots. In-city units chain Block → UPZ → Locality →
/// Municipality; a parent must sit at a strictly coarser level than its child.
#[derive(Debug, Clone, Default)]
pub struct GeoHierarchy {
    units: Vec<GeoUnit>,
    by_id: HashMap<UnitId, usize>,
    children: Vec<Vec<usize>>,
}

impl GeoHierarchy {
    pub fn from_units(units: Vec<GeoUnit>) -> Result<GeoHierarchy> {
        let mut by_id = HashMap::with_capacity(units.len());
        for (i, unit) in units.iter().enumerate() {
            if by_id.insert(unit.id.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate geography unit {}", unit.id)));
            }
        }
        let mut children = vec![Vec::new(); units.len()];
        for (i, unit) in units.iter().enumerate() {
            match (&unit.parent, unit.level) {
                (None, GeoLevel::Municipality) => {}
                (None, level) => {
                    return Err(Error::data(format!(
                        "unit {} at level {level} has no parent; only municipalities are roots",
                        unit.id
                    )));
                }
                (Some(parent_id), _) => {
                    let p = *by_id.get(parent_id).ok_or_else(|| {
                        Error::data(format!("unit {} names unknown parent {parent_id}", unit.id))
                    })?;
                    if units[p].level <= unit.level {
                        return Err(Error::data(format!(
                            "unit {} at level {} has parent {} at level {}; containment must coarsen",
                            unit.id, unit.level, parent_id, units[p].level
                        )));
                    }
                    children[p].push(i);
                }
            }
        }
        Ok(GeoHierarchy {
            units,
            by_id,
            children,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn get(&self, id: &UnitId) -> Option<&GeoUnit> {
        self.by_id.get(id).map(|&i| &self.units[i])
    }

    pub fn contains(&self, id: &UnitId) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn units(&self) -> impl Iterator<Item = &GeoUnit> {
        self.units.iter()
    }

    pub fn units_at(&self, level: GeoLevel) -> impl Iterator<Item = &GeoUnit> {
        self.units.iter().filter(move |u| u.level == level)
    }

    pub fn children_of(&self, id: &UnitId) -> Result<Vec<&GeoUnit>> {
        let i = self
            .by_id
            .get(id)
            .ok_or_else(|| Error::data(format!("unknown geography unit {id}")))?;
        Ok(self.children[*i].iter().map(|&c| &self.units[c]).collect())
    }

    pub fn parent_of(&self, id: &UnitId) -> Option<&GeoUnit> {
        let unit = self.get(id)?;
        unit.parent.as_ref().and_then(|p| self.get(p))
    }

    /// Walk up the parent chain to the ancestor at `level` (the unit itself
    /// when already at that level).
    pub fn ancestor_at(&self, id: &UnitId, level: GeoLevel) -> Option<&UnitId> {
        let mut current = self.get(id)?;
        loop {
            if current.level == level {
                return Some(&current.id);
            }
            if current.level > level {
                return None;
            }
            current = self.get(current.parent.as_ref()?)?;
        }
    }

    /// True when `id` lies inside `ancestor` (or is `ancestor` itself).
    pub fn is_within(&self, id: &UnitId, ancestor: &UnitId) -> bool {
        let mut current = match self.get(id) {
            Some(u) => u,
            None => return false,
        };
        loop {
            if &current.id == ancestor {
                return true;
            }
            match current.parent.as_ref().and_then(|p| self.get(p)) {
                Some(p) => current = p,
                None => return false,
            }
        }
    }

    /// Load from the documented CSV:
    /// `unit_id,level,parent_id,centroid_lat,centroid_lon,population`
    /// with an empty parent for roots and an empty population where unknown.
    pub fn load(path: &Path) -> Result<GeoHierarchy> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut units = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let ctx = |what: &str| {
                Error::Format {
                    path: path.to_owned(),
                    reason: format!("line {}: {what}", lineno + 1),
                }
            };
            let id = fields.next().filter(|s| !s.is_empty()).ok_or_else(|| ctx("missing unit_id"))?;
            let level = fields
                .next()
                .and_then(GeoLevel::from_name)
                .ok_or_else(|| ctx("bad level"))?;
            let parent = fields.next().ok_or_else(|| ctx("missing parent_id"))?;
            let lat: f64 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ctx("bad centroid_lat"))?;
            let lon: f64 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ctx("bad centroid_lon"))?;
            let population = match fields.next() {
                None | Some("") => None,
                Some(s) => Some(s.parse::<u64>().map_err(|_| ctx("bad population"))?),
            };
            units.push(GeoUnit {
                id: UnitId::new(id),
                level,
                parent: if parent.is_empty() {
                    None
                } else {
                    Some(UnitId::new(parent))
                },
                centroid: LatLon::new(lat, lon)?,
                population,
            });
        }
        GeoHierarchy::from_units(units)
    }
}

/// All known towers, indexed densely for the ingest hot path.
#[derive(Debug, Clone, Default)]
pub struct TowerRegistry {
    towers: Vec<Tower>,
    by_id: HashMap<TowerId, u32>,
}

impl TowerRegistry {
    pub fn from_towers(towers: Vec<Tower>) -> Result<TowerRegistry> {
        let mut by_id = HashMap::with_capacity(towers.len());
        for (i, tower) in towers.iter().enumerate() {
            if by_id.insert(tower.id.clone(), i as u32).is_some() {
                return Err(Error::data(format!("duplicate tower {}", tower.id)));
            }
        }
        Ok(TowerRegistry { towers, by_id })
    }

    pub fn len(&self) -> usize {
        self.towers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.towers.is_empty()
    }

    pub fn resolve(&self, id: &str) -> Option<u32> {
        self.by_id.get(&TowerId::new(id)).copied()
    }

    pub fn tower(&self, index: u32) -> &Tower {
        &self.towers[index as usize]
    }

    pub fn towers(&self) -> impl Iterator<Item = &Tower> {
        self.towers.iter()
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> {
        0..self.towers.len() as u32
    }

    /// Tower counts per hosting municipality.
    pub fn towers_per_municipality(&self) -> std::collections::BTreeMap<UnitId, u32> {
        let mut counts = std::collections::BTreeMap::new();
        for t in &self.towers {
            *counts.entry(t.municipality.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Load from the documented CSV:
    /// `tower_id,lat,lon,municipality_id,antenna_count`.
    pub fn load(path: &Path) -> Result<TowerRegistry> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut towers = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ctx = |what: &str| Error::Format {
                path: path.to_owned(),
                reason: format!("line {}: {what}", lineno + 1),
            };
            let mut fields = line.split(',');
            let id = fields.next().filter(|s| !s.is_empty()).ok_or_else(|| ctx("missing tower_id"))?;
            let lat: f64 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ctx("bad lat"))?;
            let lon: f64 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ctx("bad lon"))?;
            let municipality = fields
                .next()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| ctx("missing municipality_id"))?;
            let antenna_count: u32 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .filter(|&n| n > 0)
                .ok_or_else(|| ctx("bad antenna_count"))?;
            towers.push(Tower {
                id: TowerId::new(id),
                location: LatLon::new(lat, lon)?,
                municipality: UnitId::new(municipality),
                antenna_count,
            });
        }
        TowerRegistry::from_towers(towers)
    }

    /// Every tower must sit in a municipality known to the hierarchy.
    pub fn validate_against(&self, hierarchy: &GeoHierarchy) -> Result<()> {
        for t in &self.towers {
            match hierarchy.get(&t.municipality) {
                Some(unit) if unit.level == GeoLevel::Municipality => {}
                Some(unit) => {
                    return Err(Error::data(format!(
                        "tower {} names {} which is a {} not a municipality",
                        t.id, t.municipality, unit.level
                    )));
                }
                None => {
                    return Err(Error::data(format!(
                        "tower {} names unknown municipality {}",
                        t.id, t.municipality
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(id: &str, level: GeoLevel, parent: Option<&str>, lat: f64, lon: f64) -> GeoUnit {
        GeoUnit {
            id: UnitId::new(id),
            level,
            parent: parent.map(UnitId::new),
            centroid: LatLon::new(lat, lon).unwrap(),
            population: None,
        }
    }

    fn small_city() -> GeoHierarchy {
        GeoHierarchy::from_units(vec![
            unit("CITY", GeoLevel::Municipality, None, 4.6, -74.1),
            unit("LOC1", GeoLevel::Locality, Some("CITY"), 4.61, -74.11),
            unit("UPZ1", GeoLevel::Upz, Some("LOC1"), 4.62, -74.12),
            unit("B1", GeoLevel::Block, Some("UPZ1"), 4.621, -74.121),
            unit("OTHER", GeoLevel::Municipality, None, 4.9, -74.3),
        ])
        .unwrap()
    }

    #[test]
    fn ancestor_walks_to_requested_level() {
        let h = small_city();
        assert_eq!(
            h.ancestor_at(&UnitId::new("B1"), GeoLevel::Municipality),
            Some(&UnitId::new("CITY"))
        );
        assert_eq!(
            h.ancestor_at(&UnitId::new("B1"), GeoLevel::Upz),
            Some(&UnitId::new("UPZ1"))
        );
        assert_eq!(h.ancestor_at(&UnitId::new("CITY"), GeoLevel::Upz), None);
        assert!(h.is_within(&UnitId::new("B1"), &UnitId::new("CITY")));
        assert!(!h.is_within(&UnitId::new("B1"), &UnitId::new("OTHER")));
    }

    #[test]
    fn orphan_and_inverted_levels_rejected() {
        let orphan = GeoHierarchy::from_units(vec![unit(
            "UPZ9",
            GeoLevel::Upz,
            None,
            4.6,
            -74.1,
        )]);
        assert!(orphan.is_err());
        let inverted = GeoHierarchy::from_units(vec![
            unit("B1", GeoLevel::Block, None, 4.6, -74.1),
            unit("UPZ1", GeoLevel::Upz, Some("B1"), 4.6, -74.1),
        ]);
        assert!(inverted.is_err());
    }

    #[test]
    fn duplicate_tower_rejected() {
        let t = Tower {
            id: TowerId::new("T1"),
            location: LatLon::new(4.6, -74.1).unwrap(),
            municipality: UnitId::new("CITY"),
            antenna_count: 1,
        };
        assert!(TowerRegistry::from_towers(vec![t.clone(), t]).is_err());
    }
}
