//! Backhaul network of a congested base station (BS1), its IAB donors
//! (BS2..BSN) and the core network (node 0).
//!
//! Every BS has a wired link to the core. BS1 additionally has a wireless
//! link to each donor. A donor shares its wireless and wired capacity with
//! its own access traffic, so the residual on a donor hop is what is left
//! after the donor's access load and any backhaul already routed over it.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub type NodeId = usize;

/// Node id of the core network.
pub const CORE: NodeId = 0;
/// Node id of the congested base station whose slices are being backhauled.
pub const CONGESTED_BS: NodeId = 1;

/// A downlink/uplink pair of rates in Mbps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub dl: f64,
    pub ul: f64,
}

impl Throughput {
    pub const ZERO: Throughput = Throughput { dl: 0.0, ul: 0.0 };

    pub const fn new(dl: f64, ul: f64) -> Self {
        Self { dl, ul }
    }

    pub fn get(&self, dir: Direction) -> f64 {
        match dir {
            Direction::Dl => self.dl,
            Direction::Ul => self.ul,
        }
    }

    pub fn set(&mut self, dir: Direction, v: f64) {
        match dir {
            Direction::Dl => self.dl = v,
            Direction::Ul => self.ul = v,
        }
    }

    pub fn is_non_negative(&self) -> bool {
        self.dl >= 0.0 && self.ul >= 0.0
    }

    /// `true` when both directions of `self` are at least those of `demand`.
    pub fn covers(&self, demand: Throughput) -> bool {
        self.dl >= demand.dl && self.ul >= demand.ul
    }

    pub fn min(self, other: Throughput) -> Throughput {
        Throughput::new(self.dl.min(other.dl), self.ul.min(other.ul))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Dl,
    Ul,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Dl, Direction::Ul];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    Wired,
    Wireless,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    /// Planar position in meters, when known.
    pub location: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub kind: LinkKind,
    pub source: NodeId,
    pub target: NodeId,
    pub capacity: Throughput,
}

/// Index of a link inside its [`Topology`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub slice_id: usize,
    pub path: Vec<LinkId>,
    pub demand: Throughput,
    pub interval: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationResult {
    Accepted,
    Rejected,
}

impl AllocationResult {
    pub fn is_accepted(self) -> bool {
        self == AllocationResult::Accepted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<Link>,
    allocations: Vec<Allocation>,
    /// Access load per node id; entries 0 and 1 stay zero.
    loads: Vec<Throughput>,
}

impl Topology {
    /// Builds the star-plus-donor graph: one wired link per BS to the core
    /// and one wireless link from BS1 to each of BS2..BSn.
    pub fn build(n_bs: usize, wired_mbps: f64, wireless_mbps: f64) -> Result<Self> {
        if n_bs < 2 {
            return Err(Error::InvalidTopology(format!(
                "need at least 2 base stations, got {n_bs}"
            )));
        }
        for (what, v) in [("wired", wired_mbps), ("wireless", wireless_mbps)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidTopology(format!(
                    "{what} capacity must be finite and non-negative, got {v}"
                )));
            }
        }

        let mut nodes = vec![Node {
            id: CORE,
            name: "core".into(),
            location: None,
        }];
        nodes.extend((1..=n_bs).map(|k| Node {
            id: k,
            name: format!("BS{k}"),
            location: None,
        }));

        let wired = Throughput::new(wired_mbps, wired_mbps);
        let wireless = Throughput::new(wireless_mbps, wireless_mbps);
        let mut links: Vec<Link> = (1..=n_bs)
            .map(|k| Link {
                kind: LinkKind::Wired,
                source: k,
                target: CORE,
                capacity: wired,
            })
            .collect();
        links.extend((2..=n_bs).map(|k| Link {
            kind: LinkKind::Wireless,
            source: CONGESTED_BS,
            target: k,
            capacity: wireless,
        }));

        Ok(Self {
            nodes,
            links,
            allocations: Vec::new(),
            loads: vec![Throughput::ZERO; n_bs + 1],
        })
    }

    pub fn n_bs(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn allocations(&self) -> &[Allocation] {
        &self.allocations
    }

    pub fn set_location(&mut self, node: NodeId, xy: (f64, f64)) -> Result<()> {
        let n = self
            .nodes
            .get_mut(node)
            .ok_or_else(|| domain(format!("unknown node {node}")))?;
        n.location = Some(xy);
        Ok(())
    }

    /// Wired link from BS `bs` to the core.
    pub fn wired_link(&self, bs: NodeId) -> Result<LinkId> {
        self.check_bs(bs)?;
        Ok(LinkId(bs - 1))
    }

    /// Wireless link from BS1 to donor `bs`.
    pub fn wireless_link(&self, bs: NodeId) -> Result<LinkId> {
        self.check_bs(bs)?;
        if bs == CONGESTED_BS {
            return Err(domain("BS1 has no wireless link to itself"));
        }
        Ok(LinkId(self.n_bs() + bs - 2))
    }

    fn check_bs(&self, bs: NodeId) -> Result<()> {
        if bs == CORE || bs > self.n_bs() {
            return Err(domain(format!(
                "unknown base station {bs} (valid: 1..={})",
                self.n_bs()
            )));
        }
        Ok(())
    }

    pub fn bs_load(&self, bs: NodeId) -> Throughput {
        self.loads.get(bs).copied().unwrap_or_default()
    }

    /// Replaces the access loads of the donors. BSs absent from `loads` are
    /// reset to zero.
    pub fn set_bs_loads<I>(&mut self, loads: I) -> Result<()>
    where
        I: IntoIterator<Item = (NodeId, Throughput)>,
    {
        let mut next = vec![Throughput::ZERO; self.n_bs() + 1];
        for (bs, load) in loads {
            self.check_bs(bs)?;
            if bs == CONGESTED_BS {
                return Err(domain("BS1 traffic is carried by slice allocations, not a load"));
            }
            if !(load.dl.is_finite() && load.ul.is_finite()) || !load.is_non_negative() {
                return Err(domain(format!(
                    "load of BS{bs} must be finite and non-negative, got ({}, {})",
                    load.dl, load.ul
                )));
            }
            let cap = self.link(self.wired_link(bs)?).capacity;
            if !cap.covers(load) {
                return Err(domain(format!(
                    "load of BS{bs} ({}, {}) exceeds its link capacity",
                    load.dl, load.ul
                )));
            }
            next[bs] = load;
        }
        self.loads = next;
        Ok(())
    }

    /// Links a slice of BS1 traverses when backhauled through `choice`:
    /// BS1's own wired link for choice 1, otherwise the wireless hop to the
    /// donor followed by the donor's wired link.
    pub fn candidate_path(&self, choice: NodeId) -> Result<Vec<LinkId>> {
        self.check_bs(choice)?;
        if choice == CONGESTED_BS {
            Ok(vec![self.wired_link(CONGESTED_BS)?])
        } else {
            Ok(vec![self.wireless_link(choice)?, self.wired_link(choice)?])
        }
    }

    /// Access load charged against `link`: the load of the donor the link
    /// touches, or nothing for BS1's wired link.
    fn access_load(&self, link: &Link) -> Throughput {
        let owner = match link.kind {
            LinkKind::Wired => link.source,
            LinkKind::Wireless => link.target,
        };
        if owner == CONGESTED_BS {
            Throughput::ZERO
        } else {
            self.bs_load(owner)
        }
    }

    pub fn residual(&self, id: LinkId, dir: Direction) -> f64 {
        self.residuals(id).get(dir)
    }

    /// Capacity left on `id` in both directions, clamped at zero.
    pub fn residuals(&self, id: LinkId) -> Throughput {
        let link = self.link(id);
        let load = self.access_load(link);
        let mut dl = link.capacity.dl - load.dl;
        let mut ul = link.capacity.ul - load.ul;
        for a in self.allocations.iter().filter(|a| a.path.contains(&id)) {
            dl -= a.demand.dl;
            ul -= a.demand.ul;
        }
        Throughput::new(dl.max(0.0), ul.max(0.0))
    }

    /// Bottleneck residual along the candidate path of `choice`.
    pub fn path_residual(&self, choice: NodeId) -> Result<Throughput> {
        let path = self.candidate_path(choice)?;
        Ok(path
            .iter()
            .map(|&l| self.residuals(l))
            .reduce(Throughput::min)
            .expect("candidate paths are never empty"))
    }

    /// Whether `demand` fits every hop of `choice`'s path in both directions.
    pub fn can_allocate(&self, choice: NodeId, demand: Throughput) -> Result<bool> {
        Ok(self.path_residual(choice)?.covers(demand))
    }

    /// Routes `demand` for `slice_id` over the path of `choice` if every hop
    /// has room in both directions. A rejection leaves the topology untouched.
    pub fn try_allocate(
        &mut self,
        slice_id: usize,
        choice: NodeId,
        demand: Throughput,
        interval: usize,
    ) -> Result<AllocationResult> {
        if !(demand.dl.is_finite() && demand.ul.is_finite()) || !demand.is_non_negative() {
            return Err(domain(format!(
                "demand must be finite and non-negative, got ({}, {})",
                demand.dl, demand.ul
            )));
        }
        if !self.can_allocate(choice, demand)? {
            return Ok(AllocationResult::Rejected);
        }
        let path = self.candidate_path(choice)?;
        self.allocations.push(Allocation {
            slice_id,
            path,
            demand,
            interval,
        });
        Ok(AllocationResult::Accepted)
    }

    /// Drops every active allocation; loads are kept.
    pub fn release_interval(&mut self) {
        self.allocations.clear();
    }

    /// Capacity conservation: on every link and direction, access load plus
    /// routed demand stays within capacity.
    pub fn conserves_capacity(&self) -> bool {
        self.links.iter().enumerate().all(|(i, link)| {
            let id = LinkId(i);
            let load = self.access_load(link);
            let routed = self
                .allocations
                .iter()
                .filter(|a| a.path.contains(&id))
                .fold(Throughput::ZERO, |acc, a| {
                    Throughput::new(acc.dl + a.demand.dl, acc.ul + a.demand.ul)
                });
            let used = Throughput::new(load.dl + routed.dl, load.ul + routed.ul);
            link.capacity.covers(used)
        })
    }
}
