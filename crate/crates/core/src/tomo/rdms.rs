use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LadderGraph;
use crate::mpo::Mpo;
use crate::sites::SiteLabel;
use crate::state::{DenseJson, DensityMatrix};

/// States from which reduced density matrices can be taken.
pub trait LocalSource {
    fn photon_sites(&self) -> &[SiteLabel];
    fn reduced_to(&self, keep: &[SiteLabel]) -> Result<DensityMatrix>;
}

impl LocalSource for DensityMatrix {
    fn photon_sites(&self) -> &[SiteLabel] {
        self.sites()
    }
    fn reduced_to(&self, keep: &[SiteLabel]) -> Result<DensityMatrix> {
        self.partial_trace(keep)
    }
}

impl LocalSource for Mpo {
    fn photon_sites(&self) -> &[SiteLabel] {
        self.sites()
    }
    fn reduced_to(&self, keep: &[SiteLabel]) -> Result<DensityMatrix> {
        self.reduced(keep)
    }
}

/// Support of the rdm for vertex `v`: the vertex and its neighbours, with
/// the corner vertices widened to the four photons of the end plaquette.
pub fn support(g: &LadderGraph, v: usize) -> Result<Vec<usize>> {
    g.check_vertex(v)?;
    if g.n == 1 {
        return Ok(vec![1, 2]);
    }
    let mut s = g.neighbors(v);
    s.push(v);
    if s.len() < 4 {
        let (col, _) = LadderGraph::position(v);
        let first = if col == 1 { 1 } else { 2 * g.n - 3 };
        s = (first..first + 4).collect();
    }
    s.sort_unstable();
    Ok(s)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Rdm {
    pub vertex: usize,
    pub support: Vec<SiteLabel>,
    #[serde(with = "dense_serde")]
    pub rdm: DensityMatrix,
}

mod dense_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rho: &DensityMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        rho.to_json().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DensityMatrix, D::Error> {
        let j = DenseJson::deserialize(d)?;
        DensityMatrix::from_json(&j).map_err(serde::de::Error::custom)
    }
}

/// Reduced density matrices on the Hamiltonian-term supports, one per vertex.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RdmSet {
    pub n: usize,
    pub entries: Vec<Rdm>,
}

impl RdmSet {
    pub fn new(n: usize, entries: Vec<Rdm>) -> Result<Self> {
        let g = LadderGraph::new(n)?;
        let mut covered = vec![false; g.num_vertices()];
        for e in &entries {
            if e.rdm.sites() != e.support.as_slice() {
                return Err(Error::param("rdm", format!("vertex {}: sites do not match support", e.vertex)));
            }
            for s in &e.support {
                match s {
                    SiteLabel::Photon(p) if *p >= 1 && *p <= g.num_vertices() => covered[p - 1] = true,
                    _ => return Err(Error::UnknownSite(*s)),
                }
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::param("rdms", "supports do not cover every photon"));
        }
        Ok(RdmSet { n, entries })
    }

    /// Largest trace distance between two rdms reduced to their common sites.
    pub fn compatibility_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, a) in self.entries.iter().enumerate() {
            for b in &self.entries[i + 1..] {
                let common: Vec<SiteLabel> = a.support.iter().filter(|s| b.support.contains(s)).copied().collect();
                if common.is_empty() {
                    continue;
                }
                let ra = a.rdm.partial_trace(&common)?;
                let rb = b.rdm.partial_trace(&common)?;
                worst = worst.max(ra.trace_distance(&rb)?);
            }
        }
        Ok(worst)
    }
}

/// Reduced density matrices of `state` on every vertex support.
pub fn local_rdms_from_state<S: LocalSource + Sync>(state: &S, g: &LadderGraph) -> Result<RdmSet> {
    if state.photon_sites() != g.sites().as_slice() {
        return Err(Error::param("state", format!("expected photons P1..P{}", g.num_vertices())));
    }
    let entries = g
        .vertices()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&v| {
            let sup: Vec<SiteLabel> = support(g, v)?.into_iter().map(SiteLabel::Photon).collect();
            Ok(Rdm {
                vertex: v,
                rdm: state.reduced_to(&sup)?,
                support: sup,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RdmSet::new(g.n, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ideal_cluster_state;

    #[test]
    fn supports_have_four_sites() {
        let g = LadderGraph::new(4).unwrap();
        assert_eq!(support(&g, 1).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(support(&g, 2).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(support(&g, 3).unwrap(), vec![1, 3, 4, 5]);
        assert_eq!(support(&g, 4).unwrap(), vec![2, 3, 4, 6]);
        assert_eq!(support(&g, 8).unwrap(), vec![5, 6, 7, 8]);
    }

    #[test]
    fn ideal_rdms_are_compatible() {
        let g = LadderGraph::new(3).unwrap();
        let rho = ideal_cluster_state(&g).to_density();
        let set = local_rdms_from_state(&rho, &g).unwrap();
        assert_eq!(set.entries.len(), 6);
        assert!(set.compatibility_residual().unwrap() < 1e-12);
    }
}
