use std::collections::BTreeMap;

use crate::world::{RoadGeometry, VehicleId, VehicleState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleEntry {
    pub id: VehicleId,
    pub state: VehicleState,
    /// On-ramp vehicle; selects the progress mix used in its reward.
    pub merging: bool,
}

/// States of all vehicles at one time step plus lanes and adjacency sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSnapshot {
    pub time_index: usize,
    vehicles: Vec<VehicleEntry>,
    lanes: Vec<u32>,
    adjacency: BTreeMap<VehicleId, Vec<VehicleId>>,
}

impl TrafficSnapshot {
    /// Builds a snapshot with adjacency by the radius/lane rule.
    pub fn new(
        time_index: usize,
        mut vehicles: Vec<VehicleEntry>,
        road: &RoadGeometry,
        radius: f64,
    ) -> Result<Self> {
        vehicles.sort_by_key(|v| v.id);
        if vehicles.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidConfig("duplicate vehicle id".into()));
        }
        let lanes: Vec<u32> = vehicles.iter().map(|v| road.lane_index(v.state.y)).collect();
        let adjacency = adjacency_of(&vehicles, &lanes, radius);
        Ok(Self {
            time_index,
            vehicles,
            lanes,
            adjacency,
        })
    }

    /// Builds a snapshot with explicit adjacency sets, which must be symmetric
    /// and free of self-loops.
    pub fn with_adjacency(
        time_index: usize,
        mut vehicles: Vec<VehicleEntry>,
        road: &RoadGeometry,
        adjacency: BTreeMap<VehicleId, Vec<VehicleId>>,
    ) -> Result<Self> {
        vehicles.sort_by_key(|v| v.id);
        let lanes = vehicles.iter().map(|v| road.lane_index(v.state.y)).collect();
        let mut full: BTreeMap<VehicleId, Vec<VehicleId>> =
            vehicles.iter().map(|v| (v.id, Vec::new())).collect();
        for (id, list) in adjacency {
            let Some(slot) = full.get_mut(&id) else {
                return Err(Error::UnknownVehicle(id));
            };
            *slot = list;
            slot.sort();
            slot.dedup();
        }
        for (id, list) in &full {
            for j in list {
                if j == id {
                    return Err(Error::InvalidConfig(format!("vehicle {id} adjacent to itself")));
                }
                if !full.get(j).is_some_and(|back| back.contains(id)) {
                    return Err(Error::InvalidConfig(format!(
                        "adjacency between {id} and {j} is not symmetric"
                    )));
                }
            }
        }
        Ok(Self {
            time_index,
            vehicles,
            lanes,
            adjacency: full,
        })
    }

    pub fn vehicles(&self) -> &[VehicleEntry] {
        &self.vehicles
    }

    pub fn ids(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.vehicles.iter().map(|v| v.id)
    }

    pub fn entry(&self, id: VehicleId) -> Result<&VehicleEntry> {
        self.position(id).map(|p| &self.vehicles[p])
    }

    pub fn state(&self, id: VehicleId) -> Result<VehicleState> {
        self.entry(id).map(|e| e.state)
    }

    pub fn lane(&self, id: VehicleId) -> Result<u32> {
        self.position(id).map(|p| self.lanes[p])
    }

    /// Adjacent vehicles `A(id)`, sorted by id.
    pub fn neighbors(&self, id: VehicleId) -> Result<&[VehicleId]> {
        self.adjacency
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownVehicle(id))
    }

    pub fn adjacency(&self) -> &BTreeMap<VehicleId, Vec<VehicleId>> {
        &self.adjacency
    }

    fn position(&self, id: VehicleId) -> Result<usize> {
        self.vehicles
            .binary_search_by_key(&id, |v| v.id)
            .map_err(|_| Error::UnknownVehicle(id))
    }
}

/// `j ∈ A(i)` iff the vehicles are within `radius` longitudinally and their
/// lanes are identical or adjacent.
pub fn adjacency(
    snapshot: &TrafficSnapshot,
    radius: f64,
) -> BTreeMap<VehicleId, Vec<VehicleId>> {
    adjacency_of(&snapshot.vehicles, &snapshot.lanes, radius)
}

fn adjacency_of(
    vehicles: &[VehicleEntry],
    lanes: &[u32],
    radius: f64,
) -> BTreeMap<VehicleId, Vec<VehicleId>> {
    let mut map: BTreeMap<VehicleId, Vec<VehicleId>> =
        vehicles.iter().map(|v| (v.id, Vec::new())).collect();
    for (a, va) in vehicles.iter().enumerate() {
        for (b, vb) in vehicles.iter().enumerate().skip(a + 1) {
            let near = (va.state.x - vb.state.x).abs() <= radius;
            if near && lanes[a].abs_diff(lanes[b]) <= 1 {
                map.get_mut(&va.id).unwrap().push(vb.id);
                map.get_mut(&vb.id).unwrap().push(va.id);
            }
        }
    }
    map
}
