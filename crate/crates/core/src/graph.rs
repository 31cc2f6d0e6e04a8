//! Ladder graphs, ideal cluster states, stabilizers and local energies.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, C64, ONE, ZERO};
use crate::mpo::{Mpo, Mps, Tensor3};
use crate::sites::{self, SiteLabel};
use crate::state::{DensityMatrix, PureState};

/// The 2×n ladder. Vertex `v` (1-based) is photon `P_v`; odd vertices form
/// the S₁ row and even vertices the S₂ row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LadderGraph {
    pub n: usize,
}

#[derive(Serialize)]
struct EdgeListJson {
    n: usize,
    vertices: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl LadderGraph {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "ladder needs at least one rung"));
        }
        Ok(LadderGraph { n })
    }

    pub fn num_vertices(&self) -> usize {
        2 * self.n
    }

    pub fn vertices(&self) -> std::ops::RangeInclusive<usize> {
        1..=2 * self.n
    }

    pub fn sites(&self) -> Vec<SiteLabel> {
        sites::photons(1..=2 * self.n)
    }

    /// Rungs first, then rails, each edge with the smaller vertex first.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = (1..=self.n).map(|k| (2 * k - 1, 2 * k)).collect();
        for k in 1..self.n {
            e.push((2 * k - 1, 2 * k + 1));
            e.push((2 * k, 2 * k + 2));
        }
        e
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(3);
        let partner = if v % 2 == 1 { v + 1 } else { v - 1 };
        if v >= 3 {
            out.push(v - 2);
        }
        out.push(partner);
        if v + 2 <= 2 * self.n {
            out.push(v + 2);
        }
        out.sort_unstable();
        out
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).contains(&b)
    }

    /// Column (1-based) and row (0 for the S₁ row, 1 for the S₂ row).
    pub fn position(v: usize) -> (usize, usize) {
        (v.div_ceil(2), (v + 1) % 2)
    }

    pub fn vertex_at(column: usize, row: usize) -> usize {
        2 * column - 1 + row
    }

    pub fn check_vertex(&self, v: usize) -> Result<()> {
        if v == 0 || v > 2 * self.n {
            return Err(Error::param("vertex", format!("{v} outside 1..={}", 2 * self.n)));
        }
        Ok(())
    }

    pub fn edge_list_json(&self) -> String {
        let doc = EdgeListJson {
            n: self.n,
            vertices: self.vertices().collect(),
            edges: self.edges(),
        };
        serde_json::to_string_pretty(&doc).expect("edge list serializes")
    }

    /// Stabilizer generator `K_v = X_v Π_{u∈N(v)} Z_u` as (vertex, Pauli index) pairs.
    pub fn stabilizer(&self, v: usize) -> Vec<(usize, usize)> {
        let mut ops = vec![(v, 1)];
        ops.extend(self.neighbors(v).into_iter().map(|u| (u, 3)));
        ops.sort_unstable();
        ops
    }
}

/// Expectation values of Pauli strings on photonic states.
pub trait PauliExpectation {
    /// `⟨Π P_k⟩` with `(photon index, Pauli index)` pairs.
    fn pauli_expectation(&self, ops: &[(usize, usize)]) -> Result<f64>;
}

impl PauliExpectation for DensityMatrix {
    fn pauli_expectation(&self, ops: &[(usize, usize)]) -> Result<f64> {
        let labels: Vec<SiteLabel> = ops.iter().map(|&(v, _)| SiteLabel::Photon(v)).collect();
        let mats: Vec<CMat> = ops.iter().map(|&(_, p)| linalg::pauli(p)).collect();
        let refs: Vec<&CMat> = mats.iter().collect();
        Ok(self.expectation_local(&labels, &linalg::kron_sites(&refs))?.re)
    }
}

impl PauliExpectation for PureState {
    fn pauli_expectation(&self, ops: &[(usize, usize)]) -> Result<f64> {
        let labels: Vec<SiteLabel> = ops.iter().map(|&(v, _)| SiteLabel::Photon(v)).collect();
        let mats: Vec<CMat> = ops.iter().map(|&(_, p)| linalg::pauli(p)).collect();
        let refs: Vec<&CMat> = mats.iter().collect();
        Ok(self.expectation_local(&labels, &linalg::kron_sites(&refs))?.re)
    }
}

fn chain_ops(sites_: &[SiteLabel], ops: &[(usize, usize)]) -> Result<Vec<Option<CMat>>> {
    let mut out = vec![None; sites_.len()];
    for &(v, p) in ops {
        let pos = sites_
            .iter()
            .position(|s| *s == SiteLabel::Photon(v))
            .ok_or(Error::UnknownSite(SiteLabel::Photon(v)))?;
        out[pos] = Some(linalg::pauli(p));
    }
    Ok(out)
}

impl PauliExpectation for Mpo {
    fn pauli_expectation(&self, ops: &[(usize, usize)]) -> Result<f64> {
        let o = chain_ops(self.sites(), ops)?;
        Ok((self.expectation_product(&o)? / self.trace()).re)
    }
}

impl PauliExpectation for Mps {
    fn pauli_expectation(&self, ops: &[(usize, usize)]) -> Result<f64> {
        let o = chain_ops(self.sites(), ops)?;
        Ok(self.expectation_product(&o)?.re / self.norm_sq())
    }
}

/// Dense ideal cluster state `Π CZ |+⟩^{⊗2n}` on `P_1..P_2n`.
pub fn ideal_cluster_state(g: &LadderGraph) -> PureState {
    let nv = g.num_vertices();
    let edges = g.edges();
    let amp = (0.5f64).powf(nv as f64 / 2.0);
    let amps = (0..1usize << nv)
        .map(|x| {
            let parity = edges
                .iter()
                .filter(|&&(a, b)| (x >> (a - 1)) & 1 == 1 && (x >> (b - 1)) & 1 == 1)
                .count();
            c(if parity % 2 == 0 { amp } else { -amp }, 0.0)
        })
        .collect();
    PureState::normalized(g.sites(), amps).expect("cluster state is normalizable")
}

/// Ideal cluster state as an MPS with bond dimension 4; the bond after
/// vertex `v` carries `(x_{v−1}, x_v)`.
pub fn ideal_cluster_mps(g: &LadderGraph) -> Mps {
    let nv = g.num_vertices();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut tensors = Vec::with_capacity(nv);
    for v in 1..=nv {
        let dl = if v == 1 { 1 } else { 4 };
        let dr = if v == nv { 1 } else { 4 };
        let mut t = Tensor3::zeros(dl, 2, dr);
        let earlier: Vec<usize> = g.neighbors(v).into_iter().filter(|&u| u < v).collect();
        for l in 0..dl {
            let (x2, x1) = (l & 1, l >> 1);
            for x in 0..2 {
                let mut s = 0;
                for &u in &earlier {
                    let xu = if u + 1 == v { x1 } else { x2 };
                    s += x * xu;
                }
                let val = if s % 2 == 0 { h } else { -h };
                let r = if v == nv { 0 } else { x1 + 2 * x };
                *t.at_mut(l, x, r) = c(val, 0.0);
            }
        }
        tensors.push(t);
    }
    Mps::new(g.sites(), tensors).expect("cluster MPS is well formed")
}

pub fn stabilizer_expectations<S: PauliExpectation>(state: &S, g: &LadderGraph) -> Result<Vec<f64>> {
    g.vertices().map(|v| state.pauli_expectation(&g.stabilizer(v))).collect()
}

/// Local energy `E_v = ½ − ½⟨K_v⟩`.
pub fn local_energy<S: PauliExpectation>(state: &S, g: &LadderGraph, v: usize) -> Result<f64> {
    g.check_vertex(v)?;
    Ok(0.5 - 0.5 * state.pauli_expectation(&g.stabilizer(v))?)
}

pub fn local_energies<S: PauliExpectation>(state: &S, g: &LadderGraph) -> Result<Vec<f64>> {
    g.vertices().map(|v| local_energy(state, g, v)).collect()
}

/// Mean local energy of the first and last photon pairs and, when the
/// ladder has inner columns, of the remaining photons.
pub fn edge_bulk_means(energies: &[f64], g: &LadderGraph) -> (f64, Option<f64>) {
    let (mut edge, mut bulk) = (Vec::new(), Vec::new());
    for (v, e) in g.vertices().zip(energies) {
        let col = LadderGraph::position(v).0;
        if col == 1 || col == g.n { edge.push(*e) } else { bulk.push(*e) }
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    (mean(&edge), (!bulk.is_empty()).then(|| mean(&bulk)))
}

/// Dense cluster Hamiltonian `−Σ K_v`.
pub fn cluster_hamiltonian(g: &LadderGraph) -> CMat {
    let nv = g.num_vertices();
    let d = 1usize << nv;
    let mut hmat = faer::Mat::<C64>::zeros(d, d);
    for v in g.vertices() {
        let mut ops: Vec<CMat> = (0..nv).map(|_| linalg::identity(2)).collect();
        for (u, p) in g.stabilizer(v) {
            ops[u - 1] = linalg::pauli(p);
        }
        let refs: Vec<&CMat> = ops.iter().collect();
        hmat -= linalg::kron_sites(&refs);
    }
    hmat
}

/// The 24 single-qubit Cliffords modulo phase; index 0 is the identity.
pub fn single_qubit_cliffords() -> Vec<CMat> {
    fn canonical(m: &CMat) -> CMat {
        let mut best = ZERO;
        'outer: for i in 0..2 {
            for j in 0..2 {
                if m[(i, j)].norm() > 1e-9 {
                    best = m[(i, j)];
                    break 'outer;
                }
            }
        }
        let ph = best.conj() / best.norm();
        linalg::scale(m, ph)
    }
    let s = linalg::from_rows(&[&[ONE, ZERO], &[ZERO, linalg::I]]);
    let gens = [linalg::hadamard(), s];
    let mut group = vec![linalg::identity(2)];
    let mut frontier = group.clone();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for m in &frontier {
            for g in &gens {
                let p = canonical(&(g * m));
                if !group.iter().any(|q| linalg::max_abs_diff(q, &p) < 1e-9) {
                    group.push(p.clone());
                    next.push(p);
                }
            }
        }
        frontier = next;
    }
    group
}

/// Local-Clifford frame relating the emitted photons to the target cluster,
/// as indices into [`single_qubit_cliffords`]. Entries are
/// `[CNOT-emitted S₁ row, CNOT-emitted S₂ row, SWAP-emitted S₁ row, SWAP-emitted S₂ row]`.
pub const EMISSION_FRAME: [usize; 4] = [0, 0, 0, 0];

/// Brute-force search over product Cliffords on the four photons of an
/// n = 2 emission, maximizing fidelity of `C ρ C†` with the ideal cluster.
/// Returns the frame in the layout of [`EMISSION_FRAME`] and its fidelity.
pub fn determine_frame(rho: &DensityMatrix) -> Result<([usize; 4], f64)> {
    let g = LadderGraph::new(2)?;
    if rho.sites() != g.sites().as_slice() {
        return Err(Error::param("rho", "expected a state on P1..P4"));
    }
    let target = ideal_cluster_state(&g);
    let cl = single_qubit_cliffords();
    let daggers: Vec<CMat> = cl.iter().map(linalg::dagger).collect();
    let psi = target.amplitudes();
    let m = rho.data();
    let mut best = ([0usize; 4], -1.0f64);
    let mut phi = vec![ZERO; 16];
    for a in 0..24 {
        for b in 0..24 {
            for cc in 0..24 {
                for d in 0..24 {
                    let u = [&daggers[a], &daggers[b], &daggers[cc], &daggers[d]];
                    // φ = (⊗ C†) ψ, site k on bit k
                    for (x, slot) in phi.iter_mut().enumerate() {
                        let mut acc = ZERO;
                        for (y, &py) in psi.iter().enumerate() {
                            let mut w = ONE;
                            for (k, uk) in u.iter().enumerate() {
                                w *= uk[((x >> k) & 1, (y >> k) & 1)];
                                if w == ZERO {
                                    break;
                                }
                            }
                            acc += w * py;
                        }
                        *slot = acc;
                    }
                    let mut f = ZERO;
                    for j in 0..16 {
                        let mut col = ZERO;
                        for i in 0..16 {
                            col += phi[i].conj() * m[(i, j)];
                        }
                        f += col * phi[j];
                    }
                    if f.re > best.1 + 1e-12 {
                        best = ([a, b, cc, d], f.re);
                    }
                }
            }
        }
    }
    Ok(best)
}

/// The frame unitary for vertex `v` of an `n`-rung emission.
pub fn frame_unitary(n: usize, v: usize) -> CMat {
    let (col, row) = LadderGraph::position(v);
    let slot = if col < n { row } else { 2 + row };
    single_qubit_cliffords().swap_remove(EMISSION_FRAME[slot])
}

fn frame_is_trivial() -> bool {
    EMISSION_FRAME.iter().all(|&i| i == 0)
}

/// Applies the frozen frame correction to a dense photonic state.
pub fn apply_frame_dense(rho: &DensityMatrix, n: usize) -> Result<DensityMatrix> {
    if frame_is_trivial() {
        return Ok(rho.clone());
    }
    let dims = sites::dims_of(rho.sites());
    let mut data = rho.data().clone();
    for (k, s) in rho.sites().iter().enumerate() {
        if let SiteLabel::Photon(v) = *s {
            let u = frame_unitary(n, v);
            data = linalg::conjugate_local(&data, &linalg::LocalIndex::new(&dims, &[k]), &u);
        }
    }
    DensityMatrix::from_channel_output(rho.sites().to_vec(), data)
}

/// Applies the frozen frame correction to an MPO state.
pub fn apply_frame_mpo(mpo: &Mpo, n: usize) -> Result<Mpo> {
    if frame_is_trivial() {
        return Ok(mpo.clone());
    }
    let mut tensors = mpo.tensors().to_vec();
    for (t, s) in tensors.iter_mut().zip(mpo.sites()) {
        if let SiteLabel::Photon(v) = *s {
            let u = frame_unitary(n, v);
            let old = t.clone();
            for l in 0..t.dl {
                for r in 0..t.dr {
                    for k in 0..2 {
                        for b in 0..2 {
                            let mut acc = ZERO;
                            for k2 in 0..2 {
                                for b2 in 0..2 {
                                    acc += u[(k, k2)] * old.at(l, 2 * k2 + b2, r) * u[(b, b2)].conj();
                                }
                            }
                            *t.at_mut(l, 2 * k + b, r) = acc;
                        }
                    }
                }
            }
        }
    }
    let mut out = Mpo::new(mpo.sites().to_vec(), tensors, mpo.truncation())?;
    out.set_truncation_error(mpo.truncation_error());
    Ok(out)
}

/// Pauli operator `i^r X^x Z^z` on up to 64 qubits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pauli {
    x: u64,
    z: u64,
    r: u8,
}

impl Pauli {
    fn mul(self, o: Pauli) -> Pauli {
        let extra = 2 * ((self.z & o.x).count_ones() as u8 % 2);
        Pauli {
            x: self.x ^ o.x,
            z: self.z ^ o.z,
            r: (self.r + o.r + extra) % 4,
        }
    }

    fn anticommutes(self, o: Pauli) -> bool {
        ((self.x & o.z).count_ones() + (self.z & o.x).count_ones()) % 2 == 1
    }

    fn single(q: usize, basis: Basis, negative: bool) -> Pauli {
        let bit = 1u64 << q;
        let (x, z) = match basis {
            Basis::X => (bit, 0),
            Basis::Z => (0, bit),
        };
        Pauli {
            x,
            z,
            r: if negative { 2 } else { 0 },
        }
    }

    fn key(self) -> u128 {
        self.x as u128 | ((self.z as u128) << 64)
    }

    /// Dense matrix on the listed qubits (little-endian), which must cover the support.
    fn to_matrix(self, qubits: &[usize]) -> CMat {
        let mut m = linalg::identity(1);
        for &q in qubits {
            let mut f = linalg::identity(2);
            if (self.x >> q) & 1 == 1 {
                f = linalg::pauli(1);
            }
            if (self.z >> q) & 1 == 1 {
                f = &f * &linalg::pauli(3);
            }
            m = linalg::kron(&f, &m);
        }
        let ph = [ONE, linalg::I, -ONE, -linalg::I][self.r as usize];
        linalg::scale(&m, ph)
    }
}

/// Single-qubit measurement basis for projections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
pub enum Basis {
    X,
    Z,
}

/// Stabilizer tableau of a pure stabilizer state.
#[derive(Clone, Debug)]
struct Tableau {
    gens: Vec<Pauli>,
}

impl Tableau {
    fn cluster(g: &LadderGraph) -> Self {
        let gens = g
            .vertices()
            .map(|v| {
                let mut z = 0u64;
                for u in g.neighbors(v) {
                    z |= 1 << (u - 1);
                }
                Pauli {
                    x: 1 << (v - 1),
                    z,
                    r: 0,
                }
            })
            .collect();
        Tableau { gens }
    }

    /// Expresses `p` (up to sign) as a product of generators, if possible.
    fn decompose(&self, p: Pauli) -> Option<Pauli> {
        let mut rows: Vec<(u128, u64)> = self
            .gens
            .iter()
            .enumerate()
            .map(|(i, g)| (g.key(), 1u64 << i))
            .collect();
        let mut target = (p.key(), 0u64);
        let mut pivot_row = 0;
        for bit in 0..128 {
            let mask = 1u128 << bit;
            let Some(k) = (pivot_row..rows.len()).find(|&k| rows[k].0 & mask != 0) else {
                continue;
            };
            rows.swap(pivot_row, k);
            let piv = rows[pivot_row];
            for (k, row) in rows.iter_mut().enumerate() {
                if k != pivot_row && row.0 & mask != 0 {
                    row.0 ^= piv.0;
                    row.1 ^= piv.1;
                }
            }
            if target.0 & mask != 0 {
                target.0 ^= piv.0;
                target.1 ^= piv.1;
            }
            pivot_row += 1;
        }
        if target.0 != 0 {
            return None;
        }
        let mut prod = Pauli { x: 0, z: 0, r: 0 };
        for (i, g) in self.gens.iter().enumerate() {
            if (target.1 >> i) & 1 == 1 {
                prod = prod.mul(*g);
            }
        }
        Some(prod)
    }

    /// Projects onto outcome `negative` of `p`; returns the Born probability.
    fn measure(&mut self, p: Pauli, negative: bool) -> Result<f64> {
        let signed = Pauli {
            r: (p.r + if negative { 2 } else { 0 }) % 4,
            ..p
        };
        match self.gens.iter().position(|g| g.anticommutes(p)) {
            Some(a) => {
                let ga = self.gens[a];
                for (k, g) in self.gens.iter_mut().enumerate() {
                    if k != a && g.anticommutes(p) {
                        *g = g.mul(ga);
                    }
                }
                self.gens[a] = signed;
                Ok(0.5)
            }
            None => {
                let prod = self
                    .decompose(p)
                    .ok_or_else(|| Error::Numerical("commuting Pauli outside stabilizer group".into()))?;
                Ok(if prod.r == signed.r { 1.0 } else { 0.0 })
            }
        }
    }
}

/// Reduced endpoint state after measuring all other vertices of the ideal
/// cluster, predicted by stabilizer (graph) rules.
#[derive(Clone, Debug)]
pub struct ProjectionOutcome {
    pub state: DensityMatrix,
    pub probability: f64,
}

/// Measures `x_set` in X and `z_set` in Z on the ideal cluster; `outcomes`
/// pairs each measured vertex with its result (`true` = −1 eigenvalue).
pub fn graph_projection_oracle(
    g: &LadderGraph,
    x_set: &[usize],
    z_set: &[usize],
    outcomes: &[(usize, bool)],
) -> Result<ProjectionOutcome> {
    let nv = g.num_vertices();
    if nv > 64 {
        return Err(Error::Capacity("stabilizer oracle supports at most 64 qubits".into()));
    }
    for v in x_set.iter().chain(z_set) {
        g.check_vertex(*v)?;
    }
    if x_set.iter().any(|v| z_set.contains(v)) {
        return Err(Error::param("x_set/z_set", "measurement sets overlap"));
    }
    let measured: Vec<usize> = x_set.iter().chain(z_set).copied().collect();
    let endpoints: Vec<usize> = g.vertices().filter(|v| !measured.contains(v)).collect();
    if endpoints.len() != 2 {
        return Err(Error::param("x_set/z_set", "must leave exactly two unmeasured vertices"));
    }
    let mut tab = Tableau::cluster(g);
    let mut prob = 1.0;
    let mut signed_meas = Vec::new();
    for &v in &measured {
        let basis = if x_set.contains(&v) { Basis::X } else { Basis::Z };
        let neg = outcomes
            .iter()
            .find(|(u, _)| *u == v)
            .map(|o| o.1)
            .ok_or_else(|| Error::param("outcomes", format!("missing outcome for vertex {v}")))?;
        let p = Pauli::single(v - 1, basis, false);
        prob *= tab.measure(p, neg)?;
        signed_meas.push(Pauli::single(v - 1, basis, neg));
        if prob == 0.0 {
            return Err(Error::ZeroProbability);
        }
    }
    let emask: u64 = endpoints.iter().map(|v| 1u64 << (v - 1)).sum();
    let mut local = Vec::new();
    for g0 in &tab.gens {
        if signed_meas.iter().any(|m| m == g0) {
            continue;
        }
        let mut gcur = *g0;
        for m in &signed_meas {
            let bit = m.x | m.z;
            if (gcur.x | gcur.z) & bit != 0 {
                gcur = gcur.mul(*m);
            }
        }
        if (gcur.x | gcur.z) & !emask != 0 {
            return Err(Error::Numerical("residual generator outside endpoints".into()));
        }
        local.push(gcur);
    }
    let qubits: Vec<usize> = endpoints.iter().map(|v| v - 1).collect();
    let mut rho = faer::Mat::<C64>::zeros(4, 4);
    for mask in 0..(1usize << local.len()) {
        let mut p = Pauli { x: 0, z: 0, r: 0 };
        for (i, l) in local.iter().enumerate() {
            if (mask >> i) & 1 == 1 {
                p = p.mul(*l);
            }
        }
        rho += p.to_matrix(&qubits);
    }
    let rho = linalg::scale(&rho, c(0.25, 0.0));
    let labels = endpoints.iter().map(|&v| SiteLabel::Photon(v)).collect();
    Ok(ProjectionOutcome {
        state: DensityMatrix::new(labels, rho)?,
        probability: prob,
    })
}
