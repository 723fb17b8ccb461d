//! The inter-municipality mobility network: construction from home
//! assignments and daily presence, statistical backbone filtering, and
//! community detection with a two-level map-equation optimizer.

mod infomap;
mod significance;

pub use infomap::{evaluate_codelength, two_level_partition, FlowGraph, IndexPartition, TELEPORTATION};
pub use significance::binomial_upper_tail;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::geo::{GeoHierarchy, TowerRegistry};
use crate::home::HomeAssignments;
use crate::ingest::ProfileStore;
use crate::model::{Direction, UnitId};

/// Weight and significance of one directed edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStats {
    /// Distinct (phone, day) observations of home-side phones in the
    /// destination municipality.
    pub weight: u64,
    /// One-sided binomial tail p-value under the marginal-preserving null;
    /// present once significance has been computed.
    pub p_value: Option<f64>,
}

/// Directed mobility network between municipalities. No self-loops.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MobilityNetwork {
    edges: BTreeMap<(UnitId, UnitId), EdgeStats>,
}

impl MobilityNetwork {
    pub fn add_edge(&mut self, src: UnitId, dst: UnitId, weight: u64) {
        debug_assert_ne!(src, dst, "self-loops are excluded by construction");
        self.edges
            .entry((src, dst))
            .or_insert(EdgeStats {
                weight: 0,
                p_value: None,
            })
            .weight += weight;
    }

    pub fn edge(&self, src: &UnitId, dst: &UnitId) -> Option<&EdgeStats> {
        self.edges.get(&(src.clone(), dst.clone()))
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(UnitId, UnitId), &EdgeStats)> {
        self.edges.iter()
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.values().map(|e| e.weight).sum()
    }

    /// Nodes appearing on either end of an edge, sorted.
    pub fn nodes(&self) -> Vec<UnitId> {
        let mut set: HashSet<&UnitId> = HashSet::new();
        for (src, dst) in self.edges.keys() {
            set.insert(src);
            set.insert(dst);
        }
        let mut nodes: Vec<UnitId> = set.into_iter().cloned().collect();
        nodes.sort();
        nodes
    }

    /// One-sided upper-tail p-value per edge under the null that each of the
    /// `W` observed trips picks its endpoints independently with probability
    /// (out-strength share of the source) x (in-strength share of the
    /// destination).
    pub fn compute_p_values(&self) -> BTreeMap<(UnitId, UnitId), f64> {
        let total = self.total_weight();
        let mut out_strength: HashMap<&UnitId, u64> = HashMap::new();
        let mut in_strength: HashMap<&UnitId, u64> = HashMap::new();
        for ((src, dst), e) in &self.edges {
            *out_strength.entry(src).or_insert(0) += e.weight;
            *in_strength.entry(dst).or_insert(0) += e.weight;
        }
        self.edges
            .iter()
            .map(|((src, dst), e)| {
                let p_null = if total == 0 {
                    0.0
                } else {
                    (out_strength[src] as f64 / total as f64)
                        * (in_strength[dst] as f64 / total as f64)
                };
                let p = binomial_upper_tail(total, p_null, e.weight);
                ((src.clone(), dst.clone()), p)
            })
            .collect()
    }

    /// Keep edges whose p-value is at or below `threshold`; retained edges
    /// carry their p-value.
    pub fn significance_filter(&self, threshold: f64) -> Result<MobilityNetwork> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::config(format!(
                "significance threshold must lie in (0, 1), got {threshold}"
            )));
        }
        let p_values = self.compute_p_values();
        let mut filtered = MobilityNetwork::default();
        for ((src, dst), e) in &self.edges {
            let p = p_values[&(src.clone(), dst.clone())];
            if p <= threshold {
                filtered.edges.insert(
                    (src.clone(), dst.clone()),
                    EdgeStats {
                        weight: e.weight,
                        p_value: Some(p),
                    },
                );
            }
        }
        Ok(filtered)
    }

    /// `src,dst,weight,p_value` CSV.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "src,dst,weight,p_value")?;
        for ((src, dst), e) in &self.edges {
            match e.p_value {
                Some(p) => writeln!(out, "{src},{dst},{},{:e}", e.weight, p)?,
                None => writeln!(out, "{src},{dst},{},", e.weight)?,
            }
        }
        Ok(())
    }
}

/// Build the unfiltered network: an edge home -> observed municipality for
/// every distinct (phone, day) on which a phone originated a call outside
/// its home municipality.
pub fn build_network(
    store: &ProfileStore,
    homes: &HomeAssignments,
    registry: &TowerRegistry,
) -> MobilityNetwork {
    let entries: Vec<_> = store.iter().collect();
    let partials: Vec<HashMap<(UnitId, UnitId), u64>> = entries
        .par_iter()
        .filter_map(|(phone, profile)| {
            let home = &homes.get(phone)?.municipality;
            let mut local: HashMap<(UnitId, UnitId), u64> = HashMap::new();
            let mut seen_days: HashMap<u16, HashSet<&UnitId>> = HashMap::new();
            for (key, _) in profile.cells.iter() {
                if key.direction() != Direction::Originated {
                    continue;
                }
                let muni = &registry.tower(key.tower()).municipality;
                if muni != home {
                    seen_days.entry(key.day()).or_default().insert(muni);
                }
            }
            for (_, munis) in seen_days {
                for muni in munis {
                    *local.entry((home.clone(), muni.clone())).or_insert(0) += 1;
                }
            }
            Some(local)
        })
        .collect();
    let mut network = MobilityNetwork::default();
    for partial in partials {
        for ((src, dst), w) in partial {
            network.add_edge(src, dst, w);
        }
    }
    network
}

/// Community assignment of the mobility network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPartition {
    pub modules: BTreeMap<UnitId, u32>,
    pub codelength: f64,
    pub num_modules: usize,
    pub seed: u64,
}

/// Minimize the two-level map equation over the network's nodes.
///
/// Node-visit rates come from a teleporting random walk
/// ([`TELEPORTATION`] = 0.15); the optimizer runs node-moving passes with
/// module aggregation and is deterministic for a fixed seed.
pub fn infomap_partition(
    network: &MobilityNetwork,
    seed: u64,
    max_passes: usize,
) -> Result<NetworkPartition> {
    if network.is_empty() {
        return Err(Error::data("cannot partition an empty network"));
    }
    let nodes = network.nodes();
    let index: HashMap<&UnitId, u32> = nodes.iter().zip(0u32..).collect();
    let edges: Vec<(u32, u32, f64)> = network
        .iter()
        .map(|((src, dst), e)| (index[src], index[dst], e.weight as f64))
        .collect();
    let graph = FlowGraph::build(nodes.len(), &edges, TELEPORTATION);
    let partition = two_level_partition(&graph, seed, max_passes)?;
    let modules = nodes
        .iter()
        .cloned()
        .zip(partition.assignment.iter().copied())
        .collect();
    Ok(NetworkPartition {
        modules,
        codelength: partition.codelength,
        num_modules: partition.num_modules,
        seed,
    })
}

impl NetworkPartition {
    /// `municipality_id,module_id` CSV.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "municipality_id,module_id")?;
        for (unit, module) in &self.modules {
            writeln!(out, "{unit},{module}")?;
        }
        Ok(())
    }

    /// GeoJSON FeatureCollection with one point per municipality carrying its
    /// module id.
    pub fn to_geojson(&self, hierarchy: &GeoHierarchy) -> serde_json::Value {
        let features: Vec<_> = self
            .modules
            .iter()
            .filter_map(|(unit, module)| {
                let u = hierarchy.get(unit)?;
                Some(json!({
                    "type": "Feature",
                    "geometry": {
                        "type": "Point",
                        "coordinates": [u.centroid.lon, u.centroid.lat],
                    },
                    "properties": {
                        "municipality_id": unit.as_str(),
                        "module_id": module,
                    },
                }))
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uid(s: &str) -> UnitId {
        UnitId::new(s)
    }

    #[test]
    fn single_remote_observation_is_one_edge() {
        let mut n = MobilityNetwork::default();
        n.add_edge(uid("M1"), uid("M2"), 1);
        assert_eq!(n.num_edges(), 1);
        assert_eq!(n.edge(&uid("M1"), &uid("M2")).unwrap().weight, 1);
        assert_eq!(n.total_weight(), 1);
    }

    #[test]
    fn zero_weight_edge_is_never_significant() {
        let mut n = MobilityNetwork::default();
        n.add_edge(uid("A"), uid("B"), 10);
        n.add_edge(uid("B"), uid("A"), 0);
        let p = n.compute_p_values();
        assert_eq!(p[&(uid("B"), uid("A"))], 1.0);
        let filtered = n.significance_filter(0.01).unwrap();
        assert!(filtered.edge(&uid("B"), &uid("A")).is_none());
    }

    #[test]
    fn threshold_monotonicity() {
        let mut n = MobilityNetwork::default();
        let ids = ["A", "B", "C", "D"];
        let mut w = 1;
        for s in ids {
            for d in ids {
                if s != d {
                    n.add_edge(uid(s), uid(d), w);
                    w = (w * 7) % 23 + 1;
                }
            }
        }
        n.add_edge(uid("A"), uid("B"), 200);
        let mut prev: Option<HashSet<(UnitId, UnitId)>> = None;
        for threshold in [0.001, 0.01, 0.05] {
            let kept: HashSet<(UnitId, UnitId)> = n
                .significance_filter(threshold)
                .unwrap()
                .iter()
                .map(|(k, _)| k.clone())
                .collect();
            if let Some(prev) = &prev {
                assert!(prev.is_subset(&kept));
            }
            prev = Some(kept);
        }
    }

    #[test]
    fn symmetric_uniform_network_has_no_significant_edge() {
        let mut n = MobilityNetwork::default();
        let ids = ["A", "B", "C", "D"];
        for s in ids {
            for d in ids {
                if s != d {
                    n.add_edge(uid(s), uid(d), 10);
                }
            }
        }
        let filtered = n.significance_filter(0.01).unwrap();
        assert!(filtered.is_empty());
    }

    #[test]
    fn planted_heavy_edge_is_the_only_survivor() {
        let mut n = MobilityNetwork::default();
        let ids = ["A", "B", "C", "D"];
        for s in ids {
            for d in ids {
                if s != d {
                    n.add_edge(uid(s), uid(d), 10);
                }
            }
        }
        n.add_edge(uid("A"), uid("C"), 30);
        let filtered = n.significance_filter(0.01).unwrap();
        let kept: Vec<_> = filtered.iter().map(|(k, _)| k.clone()).collect();
        assert_eq!(kept, vec![(uid("A"), uid("C"))]);
        // Frozen from the exhaustive tail sum over Binomial(150, 0.16).
        let p = filtered.edge(&uid("A"), &uid("C")).unwrap().p_value.unwrap();
        assert!((p - 5.990168603e-4).abs() < 1e-12, "got {p}");
    }

    #[test]
    fn bad_threshold_rejected() {
        let mut n = MobilityNetwork::default();
        n.add_edge(uid("A"), uid("B"), 3);
        assert!(n.significance_filter(0.0).is_err());
        assert!(n.significance_filter(1.0).is_err());
    }
}
