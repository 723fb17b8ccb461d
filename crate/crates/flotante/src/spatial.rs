//! Geometry utilities: great-circle distance, nearest-tower partitioning of
//! city blocks, centers of mass and geographic roll-ups of trip matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::geo::{GeoHierarchy, TowerRegistry};
use crate::model::{GeoLevel, LatLon, TowerId, UnitId};
use crate::trips::TripMatrix;

/// Mean Earth radius in kilometers (IUGG R1).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Kilometers per degree of latitude on the reference sphere.
const KM_PER_DEG: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// Haversine distance in kilometers between two WGS84 points.
pub fn great_circle_distance(a: LatLon, b: LatLon) -> f64 {
    let lat_a = a.lat.to_radians();
    let lat_b = b.lat.to_radians();
    let d_lat = (b.lat - a.lat).to_radians();
    let d_lon = (b.lon - a.lon).to_radians();
    let h = (d_lat / 2.0).sin().powi(2) + lat_a.cos() * lat_b.cos() * (d_lon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Validated variant for external callers feeding raw coordinate pairs.
pub fn checked_distance(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    Ok(great_circle_distance(
        LatLon::new(a.0, a.1)?,
        LatLon::new(b.0, b.1)?,
    ))
}

/// The nearest-tower partition of city blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoverageAssignment {
    block_to_tower: BTreeMap<UnitId, TowerId>,
    tower_to_blocks: BTreeMap<TowerId, BTreeSet<UnitId>>,
}

impl CoverageAssignment {
    pub fn tower_of(&self, block: &UnitId) -> Option<&TowerId> {
        self.block_to_tower.get(block)
    }

    pub fn blocks_of(&self, tower: &TowerId) -> Option<&BTreeSet<UnitId>> {
        self.tower_to_blocks.get(tower)
    }

    pub fn assigned_blocks(&self) -> usize {
        self.block_to_tower.len()
    }

    /// Towers whose coverage area is non-empty.
    pub fn covering_towers(&self) -> usize {
        self.tower_to_blocks.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&UnitId, &TowerId)> {
        self.block_to_tower.iter()
    }

    /// Map each covering tower to the UPZ hosting the majority of its blocks
    /// (ties broken by the lexicographically smallest UPZ id).
    pub fn tower_upz_map(&self, hierarchy: &GeoHierarchy) -> Result<BTreeMap<TowerId, UnitId>> {
        let mut map = BTreeMap::new();
        for (tower, blocks) in &self.tower_to_blocks {
            let mut counts: BTreeMap<&UnitId, usize> = BTreeMap::new();
            for block in blocks {
                let upz = hierarchy.ancestor_at(block, GeoLevel::Upz).ok_or_else(|| {
                    Error::data(format!("block {block} has no UPZ ancestor"))
                })?;
                *counts.entry(upz).or_insert(0) += 1;
            }
            if let Some((upz, _)) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
                map.insert(tower.clone(), (*upz).clone());
            }
        }
        Ok(map)
    }

    /// `block_id,tower_id` CSV.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "block_id,tower_id")?;
        for (block, tower) in &self.block_to_tower {
            writeln!(out, "{block},{tower}")?;
        }
        Ok(())
    }

    /// GeoJSON FeatureCollection of tower points with assigned-block counts.
    pub fn to_geojson(&self, registry: &TowerRegistry) -> serde_json::Value {
        let features: Vec<_> = self
            .tower_to_blocks
            .iter()
            .filter_map(|(tower, blocks)| {
                let idx = registry.resolve(tower.as_str())?;
                let t = registry.tower(idx);
                Some(json!({
                    "type": "Feature",
                    "geometry": {
                        "type": "Point",
                        "coordinates": [t.location.lon, t.location.lat],
                    },
                    "properties": {
                        "tower_id": tower.as_str(),
                        "block_count": blocks.len(),
                    },
                }))
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }
}

/// Assign every block to the tower nearest to its centroid.
///
/// Ties (exactly equal distances) go to the lexicographically smallest tower
/// id so runs are reproducible. The scan is pruned with a latitude lower
/// bound: the great-circle distance can never be smaller than the
/// latitude-only separation.
pub fn assign_blocks_to_towers(
    blocks: &[(UnitId, LatLon)],
    towers: &[(TowerId, LatLon)],
) -> Result<CoverageAssignment> {
    if towers.is_empty() {
        return Err(Error::config("cannot assign blocks: no towers supplied"));
    }
    let mut sorted: Vec<(TowerId, LatLon)> = towers.to_vec();
    sorted.sort_by(|a, b| {
        a.1.lat
            .partial_cmp(&b.1.lat)
            .expect("non-finite tower latitude")
            .then_with(|| a.0.cmp(&b.0))
    });

    let assignments: Vec<(UnitId, TowerId)> = blocks
        .par_iter()
        .map(|(block, centroid)| {
            let nearest = nearest_tower(*centroid, &sorted);
            (block.clone(), nearest)
        })
        .collect();

    let mut coverage = CoverageAssignment::default();
    for (block, tower) in assignments {
        coverage
            .tower_to_blocks
            .entry(tower.clone())
            .or_default()
            .insert(block.clone());
        coverage.block_to_tower.insert(block, tower);
    }
    debug_assert_eq!(coverage.assigned_blocks(), blocks.len());
    Ok(coverage)
}

fn nearest_tower(point: LatLon, sorted_by_lat: &[(TowerId, LatLon)]) -> TowerId {
    let start = sorted_by_lat
        .partition_point(|(_, loc)| loc.lat < point.lat)
        .min(sorted_by_lat.len() - 1);
    let mut best_dist = f64::INFINITY;
    let mut best: Option<&TowerId> = None;
    // Walk outward from the latitude insertion point in both directions until
    // the latitude-only bound exceeds the best distance found so far.
    let (mut lo, mut hi) = (start as isize - 1, start);
    while lo >= 0 || hi < sorted_by_lat.len() {
        let lo_bound = if lo >= 0 {
            (point.lat - sorted_by_lat[lo as usize].1.lat).abs() * KM_PER_DEG
        } else {
            f64::INFINITY
        };
        let hi_bound = if hi < sorted_by_lat.len() {
            (sorted_by_lat[hi].1.lat - point.lat).abs() * KM_PER_DEG
        } else {
            f64::INFINITY
        };
        if lo_bound > best_dist && hi_bound > best_dist {
            break;
        }
        let entry = if lo_bound <= hi_bound {
            let e = &sorted_by_lat[lo as usize];
            lo -= 1;
            e
        } else {
            let e = &sorted_by_lat[hi];
            hi += 1;
            e
        };
        let d = great_circle_distance(point, entry.1);
        if d < best_dist || (d == best_dist && best.is_none_or(|b| entry.0 < *b)) {
            best_dist = d;
            best = Some(&entry.0);
        }
    }
    best.expect("at least one tower").clone()
}

/// Center of mass of a geographic unit.
///
/// Units with children average the child centroids, weighted by population
/// when every child carries one; leaves return their own centroid.
pub fn center_of_mass(hierarchy: &GeoHierarchy, id: &UnitId) -> Result<LatLon> {
    let unit = hierarchy
        .get(id)
        .ok_or_else(|| Error::data(format!("unknown geography unit {id}")))?;
    let children = hierarchy.children_of(id)?;
    if children.is_empty() {
        return Ok(unit.centroid);
    }
    let weighted = children.iter().all(|c| c.population.is_some());
    let mut lat = 0.0;
    let mut lon = 0.0;
    let mut mass = 0.0;
    for child in &children {
        let w = if weighted {
            child.population.unwrap() as f64
        } else {
            1.0
        };
        lat += child.centroid.lat * w;
        lon += child.centroid.lon * w;
        mass += w;
    }
    if mass <= 0.0 {
        // All-zero populations: fall back to the unweighted mean.
        return center_of_mass_unweighted(&children);
    }
    Ok(LatLon {
        lat: lat / mass,
        lon: lon / mass,
    })
}

fn center_of_mass_unweighted(children: &[&crate::model::GeoUnit]) -> Result<LatLon> {
    let n = children.len() as f64;
    Ok(LatLon {
        lat: children.iter().map(|c| c.centroid.lat).sum::<f64>() / n,
        lon: children.iter().map(|c| c.centroid.lon).sum::<f64>() / n,
    })
}

/// Which side(s) of the matrix a roll-up applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RollupSide {
    Origins,
    Destinations,
    Both,
}

/// Aggregate a trip matrix to a coarser hierarchy level.
///
/// Every affected unit must have an ancestor at the target level; cell sums
/// are preserved exactly (the roll-up only re-keys additions).
pub fn rollup(
    matrix: &TripMatrix,
    hierarchy: &GeoHierarchy,
    target: GeoLevel,
    side: RollupSide,
) -> Result<TripMatrix> {
    let map_unit = |unit: &UnitId| -> Result<UnitId> {
        hierarchy
            .ancestor_at(unit, target)
            .cloned()
            .ok_or_else(|| Error::data(format!("unit {unit} has no ancestor at level {target}")))
    };
    let mut out = TripMatrix::with_levels(
        if matches!(side, RollupSide::Origins | RollupSide::Both) {
            target
        } else {
            matrix.origin_level
        },
        if matches!(side, RollupSide::Destinations | RollupSide::Both) {
            target
        } else {
            matrix.dest_level
        },
        matrix.expanded,
    );
    for (key, count) in matrix.iter() {
        let origin = if matches!(side, RollupSide::Origins | RollupSide::Both) {
            map_unit(&key.0)?
        } else {
            key.0.clone()
        };
        let dest = if matches!(side, RollupSide::Destinations | RollupSide::Both) {
            map_unit(&key.1)?
        } else {
            key.1.clone()
        };
        out.add((origin, dest, key.2, key.3), count);
    }
    Ok(out)
}
