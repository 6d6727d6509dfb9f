//! Pointwise market clearing.
//!
//! At a space-time point each agent `i` has a local valuation rate
//! `ell_i = b_i v_x + ½σ_i² v_xx`, and its rate of expected price change is
//! `ell_i + θ` where `θ = ∂t v`. Agent `i` demands `ψ_i(ell_i + θ)` with
//!
//! ```text
//! ψ_i(z) = α₊ⁱ (z − β₊ⁱ)⁺ − α₋ⁱ (z + β₋ⁱ)⁻
//! ```
//!
//! and `θ` is fixed by `Σ ψ_i(ell_i + θ) = s`. The Hamiltonian is `H = −θ`.
//! Two independent routes compute it: an exact piecewise-linear root solve and
//! a brute-force maximization over agent subsets.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::market::{AgentCosts, CostStructure, MarketSpec, MAX_AGENTS};

pub const DEFAULT_ENUMERATION_CAP: usize = 16;

/// Relative slack used when comparing subset values against the maximum.
const ARGMAX_SLACK: f64 = 1e-12;

/// Which Hamiltonian the kernel evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Finite costs on both sides.
    Full,
    /// No cost for long positions: the most optimistic agent sets the rate.
    LimitLong,
    /// Short selling prohibited.
    LimitShort,
}

/// A set of agent indices stored as a bit mask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentSet(u64);

impl AgentSet {
    pub const EMPTY: AgentSet = AgentSet(0);

    pub fn from_bits(bits: u64) -> Self {
        AgentSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn all(n: usize) -> Self {
        assert!(n <= MAX_AGENTS);
        if n == 64 {
            AgentSet(u64::MAX)
        } else {
            AgentSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        AgentSet(1u64 << i)
    }

    #[inline]
    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        self.0 |= 1u64 << i;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn complement(self, n: usize) -> Self {
        AgentSet(!self.0 & AgentSet::all(n).0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |i| self.contains(*i))
    }
}

impl FromIterator<usize> for AgentSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        let mut set = AgentSet::EMPTY;
        for i in iter {
            set.insert(i);
        }
        set
    }
}

impl fmt::Debug for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

impl Serialize for AgentSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalValuations {
    pub ell: Vec<f64>,
    pub supply_here: f64,
}

impl LocalValuations {
    pub fn new(ell: Vec<f64>, supply_here: f64) -> Self {
        LocalValuations { ell, supply_here }
    }
}

/// Drift, variance rate and running cost of the planner's controlled state
/// when `shorts` carry the short-side weights and `longs` the long-side ones.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsetCoefficients {
    pub mu: f64,
    pub sigma_sq: f64,
    pub kappa: f64,
    pub shorts: AgentSet,
    pub longs: AgentSet,
}

/// Shorts, longs and flat agents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub shorts: AgentSet,
    pub longs: AgentSet,
    pub flat: AgentSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClearingResult {
    pub theta: f64,
    pub hamiltonian: f64,
    /// The maximizing partition; `None` when every agent is flat and no
    /// subset value is defined.
    pub optimizer: Option<Partition>,
    pub demands: Vec<f64>,
    /// Set in the long limit when several agents share the maximal rate.
    pub tie: bool,
}

#[derive(Clone, Debug, PartialEq)]
enum Costs {
    Shared {
        n: usize,
        am: f64,
        ap: f64,
        bm: f64,
        bp: f64,
    },
    PerAgent(AgentCosts),
}

/// The clearing kernel for a fixed cost structure.
#[derive(Clone, Debug, PartialEq)]
pub struct ClearingKernel {
    costs: Costs,
    linear: bool,
    cap: usize,
}

impl ClearingKernel {
    /// Kernel for `n` agents. Uniform and linear costs use shared scalars;
    /// heterogeneous costs use per-agent sums.
    pub fn new(costs: &CostStructure, n: usize) -> Result<Self> {
        if n == 0 || n > MAX_AGENTS {
            return Err(Error::invalid(format!("the kernel needs between 1 and {MAX_AGENTS} agents (got {n})")));
        }
        let kernel = match costs {
            CostStructure::Uniform {
                alpha_minus,
                alpha_plus,
            } => ClearingKernel::shared(n, *alpha_minus, *alpha_plus, 0.0, 0.0),
            CostStructure::Linear {
                alpha_minus,
                alpha_plus,
                beta_minus,
                beta_plus,
            } => ClearingKernel::shared(n, *alpha_minus, *alpha_plus, *beta_minus, *beta_plus),
            CostStructure::Heterogeneous { .. } => ClearingKernel::from_agent_costs(costs.per_agent(n)),
        };
        kernel.check()?;
        Ok(kernel)
    }

    pub fn for_spec(spec: &MarketSpec) -> Result<Self> {
        ClearingKernel::new(&spec.costs, spec.n_agents())
    }

    fn shared(n: usize, am: f64, ap: f64, bm: f64, bp: f64) -> Self {
        ClearingKernel {
            costs: Costs::Shared { n, am, ap, bm, bp },
            linear: bm != 0.0 || bp != 0.0,
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    /// Kernel that treats every agent's coefficients separately, even when they coincide.
    pub fn from_agent_costs(costs: AgentCosts) -> Self {
        let linear = costs.beta_minus.iter().chain(&costs.beta_plus).any(|b| *b != 0.0);
        ClearingKernel {
            costs: Costs::PerAgent(costs),
            linear,
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    fn check(&self) -> Result<()> {
        for i in 0..self.n() {
            let (am, ap, bm, bp) = (self.am(i), self.ap(i), self.bm(i), self.bp(i));
            if !(am > 0.0 && ap > 0.0 && am.is_finite() && ap.is_finite()) {
                return Err(Error::invalid(format!("agent {i}: alpha coefficients must be finite and > 0")));
            }
            if !(bm >= 0.0 && bp >= 0.0) {
                return Err(Error::invalid(format!("agent {i}: beta coefficients must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        match &self.costs {
            Costs::Shared { n, .. } => *n,
            Costs::PerAgent(c) => c.len(),
        }
    }

    /// Whether any linear cost term is nonzero.
    pub fn is_linear(&self) -> bool {
        self.linear
    }

    #[inline]
    pub fn am(&self, i: usize) -> f64 {
        match &self.costs {
            Costs::Shared { am, .. } => *am,
            Costs::PerAgent(c) => c.alpha_minus[i],
        }
    }

    #[inline]
    pub fn ap(&self, i: usize) -> f64 {
        match &self.costs {
            Costs::Shared { ap, .. } => *ap,
            Costs::PerAgent(c) => c.alpha_plus[i],
        }
    }

    #[inline]
    pub fn bm(&self, i: usize) -> f64 {
        match &self.costs {
            Costs::Shared { bm, .. } => *bm,
            Costs::PerAgent(c) => c.beta_minus[i],
        }
    }

    #[inline]
    pub fn bp(&self, i: usize) -> f64 {
        match &self.costs {
            Costs::Shared { bp, .. } => *bp,
            Costs::PerAgent(c) => c.beta_plus[i],
        }
    }

    /// Agent `i`'s demand `ψ_i(z)` at local rate `z`.
    #[inline]
    pub fn demand(&self, i: usize, z: f64) -> f64 {
        let (bm, bp) = (self.bm(i), self.bp(i));
        if z > bp {
            self.ap(i) * (z - bp)
        } else if z < -bm {
            self.am(i) * (z + bm)
        } else {
            0.0
        }
    }

    /// Agent `i`'s demand at valuation `l` and time derivative `theta`.
    ///
    /// The side is decided by comparing `theta` with the agent's kinks
    /// `−β₋ − l` and `β₊ − l`, so that evaluating exactly at a kink is
    /// classified consistently with the root solve.
    #[inline]
    fn rate_demand(&self, i: usize, l: f64, theta: f64) -> f64 {
        let (bm, bp) = (self.bm(i), self.bp(i));
        if theta > bp - l {
            self.ap(i) * (l + theta - bp)
        } else if theta < -bm - l {
            self.am(i) * (l + theta + bm)
        } else {
            0.0
        }
    }

    /// Excess demand `g(θ) = Σ ψ_i(ell_i + θ) − s`.
    pub fn excess(&self, ell: &[f64], s: f64, theta: f64) -> f64 {
        match &self.costs {
            Costs::Shared { am, ap, bm, bp, .. } => {
                let (mut long, mut short) = (0.0, 0.0);
                for l in ell {
                    if theta > bp - l {
                        long += l + theta - bp;
                    } else if theta < -bm - l {
                        short += l + theta + bm;
                    }
                }
                ap * long + am * short - s
            }
            Costs::PerAgent(_) => {
                let mut total = 0.0;
                for (i, l) in ell.iter().enumerate() {
                    total += self.rate_demand(i, *l, theta);
                }
                total - s
            }
        }
    }

    /// Excess demand when short selling is prohibited.
    fn excess_no_short(&self, ell: &[f64], s: f64, theta: f64) -> f64 {
        let mut total = 0.0;
        for (i, l) in ell.iter().enumerate() {
            let bp = self.bp(i);
            if theta > bp - l {
                total += self.ap(i) * (l + theta - bp);
            }
        }
        total - s
    }

    /// Clearing value of `θ` for `mode`, via the exact root solve.
    ///
    /// When the root set is an interval the lower end is returned (the
    /// highest Hamiltonian). The short limit with zero supply returns the
    /// upper end, which is the limit of the full mode as `α₋ → 0`.
    pub fn theta(&self, mode: Mode, ell: &[f64], s: f64, scratch: &mut Vec<f64>) -> f64 {
        match mode {
            Mode::Full => self.theta_full(ell, s, scratch),
            Mode::LimitShort => self.theta_no_short(ell, s, scratch),
            Mode::LimitLong => {
                let mut best = f64::NEG_INFINITY;
                for (i, l) in ell.iter().enumerate() {
                    best = best.max(l - self.bp(i));
                }
                -best
            }
        }
    }

    fn theta_full(&self, ell: &[f64], s: f64, bps: &mut Vec<f64>) -> f64 {
        bps.clear();
        for (i, l) in ell.iter().enumerate() {
            bps.push(-self.bm(i) - l);
            bps.push(self.bp(i) - l);
        }
        bps.sort_unstable_by(f64::total_cmp);
        let g = |theta: f64| self.excess(ell, s, theta);
        let k = bps.partition_point(|b| g(*b) < 0.0);
        if k == 0 {
            let slope: f64 = (0..ell.len()).map(|i| self.am(i)).sum();
            let g0 = g(bps[0]);
            return if g0 == 0.0 { bps[0] } else { bps[0] - g0 / slope };
        }
        if k == bps.len() {
            let slope: f64 = (0..ell.len()).map(|i| self.ap(i)).sum();
            let last = bps[k - 1];
            return last - g(last) / slope;
        }
        segment_root(bps[k - 1], g(bps[k - 1]), bps[k], g(bps[k]))
    }

    fn theta_no_short(&self, ell: &[f64], s: f64, bps: &mut Vec<f64>) -> f64 {
        bps.clear();
        for (i, l) in ell.iter().enumerate() {
            bps.push(self.bp(i) - l);
        }
        bps.sort_unstable_by(f64::total_cmp);
        if s <= 0.0 {
            return bps[0];
        }
        let g = |theta: f64| self.excess_no_short(ell, s, theta);
        let k = bps.partition_point(|b| g(*b) < 0.0);
        if k == bps.len() {
            let slope: f64 = (0..ell.len()).map(|i| self.ap(i)).sum();
            let last = bps[k - 1];
            return last - g(last) / slope;
        }
        // g(bps[0]) = −s < 0, so k ≥ 1 here.
        segment_root(bps[k - 1], g(bps[k - 1]), bps[k], g(bps[k]))
    }

    /// Normalized subset value `N_{I,J}`: the planner Hamiltonian when
    /// agents in `shorts` carry short-side weights and those in `longs`
    /// long-side weights. `None` if both sets are empty.
    pub fn subset_value(&self, shorts: AgentSet, longs: AgentSet, ell: &[f64], s: f64) -> Option<f64> {
        let (num, den) = match &self.costs {
            Costs::Shared { am, ap, bm, bp, .. } => {
                let (mut sum_i, mut sum_j) = (0.0, 0.0);
                for (i, l) in ell.iter().enumerate() {
                    if shorts.contains(i) {
                        sum_i += l;
                    } else if longs.contains(i) {
                        sum_j += l;
                    }
                }
                let (ni, nj) = (shorts.len() as f64, longs.len() as f64);
                (
                    am * (sum_i + ni * bm) + ap * (sum_j - nj * bp) - s,
                    ni * am + nj * ap,
                )
            }
            Costs::PerAgent(_) => {
                let (mut num, mut den) = (-s, 0.0);
                for (i, l) in ell.iter().enumerate() {
                    if shorts.contains(i) {
                        num += self.am(i) * (l + self.bm(i));
                        den += self.am(i);
                    } else if longs.contains(i) {
                        num += self.ap(i) * (l - self.bp(i));
                        den += self.ap(i);
                    }
                }
                (num, den)
            }
        };
        (den > 0.0).then(|| num / den)
    }

    /// Subset value with the long set taken as the complement of `shorts`.
    pub fn quadratic_value(&self, shorts: AgentSet, ell: &[f64], s: f64) -> f64 {
        let longs = shorts.complement(ell.len());
        self.subset_value(shorts, longs, ell, s)
            .expect("a subset and its complement cannot both be empty")
    }

    /// `(μ, Σ², κ)` for the given short and long groups at a point with
    /// drifts `b`, variance rates `sigma_sq` and supply `s`.
    pub fn coefficients(
        &self,
        shorts: AgentSet,
        longs: AgentSet,
        b: &[f64],
        sigma_sq: &[f64],
        s: f64,
    ) -> Result<SubsetCoefficients> {
        let n = self.n();
        if b.len() != n || sigma_sq.len() != n {
            return Err(Error::invalid(format!("expected {n} drift and variance values")));
        }
        let (mut den, mut mu, mut var, mut offset) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let (w, shift) = if shorts.contains(i) {
                (self.am(i), self.am(i) * self.bm(i))
            } else if longs.contains(i) {
                (self.ap(i), -self.ap(i) * self.bp(i))
            } else {
                continue;
            };
            den += w;
            mu += w * b[i];
            var += w * sigma_sq[i];
            offset += shift;
        }
        if !(den > 0.0) {
            return Err(Error::invalid("subset coefficients need at least one non-flat agent"));
        }
        Ok(SubsetCoefficients {
            mu: mu / den,
            sigma_sq: var / den,
            kappa: (s - offset) / den,
            shorts,
            longs,
        })
    }

    /// Partition induced by the local rates `ell_i + θ`. Agents with zero
    /// rate and no linear costs count as long.
    pub fn optimal_partition(&self, ell: &[f64], theta: f64) -> Partition {
        let mut p = Partition {
            shorts: AgentSet::EMPTY,
            longs: AgentSet::EMPTY,
            flat: AgentSet::EMPTY,
        };
        for (i, l) in ell.iter().enumerate() {
            let (bm, bp) = (self.bm(i), self.bp(i));
            if theta < -bm - l {
                p.shorts.insert(i);
            } else if theta > bp - l || (bm == 0.0 && bp == 0.0) {
                p.longs.insert(i);
            } else {
                p.flat.insert(i);
            }
        }
        p
    }

    /// Writes every agent's position for the clearing `θ` into `out` and
    /// reports whether the long limit had to split the supply among ties.
    pub fn allocate(&self, mode: Mode, ell: &[f64], theta: f64, s: f64, out: &mut [f64]) -> bool {
        match mode {
            Mode::Full => {
                for (i, l) in ell.iter().enumerate() {
                    out[i] = self.rate_demand(i, *l, theta);
                }
                false
            }
            Mode::LimitShort => {
                for (i, l) in ell.iter().enumerate() {
                    let bp = self.bp(i);
                    out[i] = if theta > bp - l { self.ap(i) * (l + theta - bp) } else { 0.0 };
                }
                false
            }
            Mode::LimitLong => {
                let best = ell
                    .iter()
                    .enumerate()
                    .map(|(i, l)| l - self.bp(i))
                    .fold(f64::NEG_INFINITY, f64::max);
                let tol = ARGMAX_SLACK * (1.0 + best.abs());
                let mut absorbed = s;
                let mut weight = 0.0;
                let mut count = 0;
                for (i, l) in ell.iter().enumerate() {
                    if l - self.bp(i) >= best - tol {
                        weight += self.ap(i);
                        count += 1;
                        out[i] = 0.0;
                    } else {
                        let z = l + theta + self.bm(i);
                        out[i] = self.am(i) * z.min(0.0);
                        absorbed -= out[i];
                    }
                }
                for (i, l) in ell.iter().enumerate() {
                    if l - self.bp(i) >= best - tol {
                        out[i] = absorbed * self.ap(i) / weight;
                    }
                }
                count > 1
            }
        }
    }

    /// Clears the market by the exact root solve.
    pub fn clear_root(&self, vals: &LocalValuations) -> Result<ClearingResult> {
        self.clear_mode(Mode::Full, vals)
    }

    /// Clears the market in any mode using the root solve.
    pub fn clear_mode(&self, mode: Mode, vals: &LocalValuations) -> Result<ClearingResult> {
        self.check_input(vals)?;
        let mut scratch = Vec::with_capacity(2 * vals.ell.len());
        let theta = self.theta(mode, &vals.ell, vals.supply_here, &mut scratch);
        Ok(self.finish(mode, vals, theta, None))
    }

    /// Clears the market by maximizing over agent subsets. Quadratic costs
    /// use all `2ⁿ` subsets; linear costs use `max_J min_{I ⊆ Jᶜ} N_{I,J}`
    /// over disjoint pairs, which selects the same root as [`Self::clear_root`].
    pub fn clear_enumerate(&self, vals: &LocalValuations) -> Result<ClearingResult> {
        self.check_input(vals)?;
        let n = vals.ell.len();
        if n > self.cap {
            return Err(Error::EnumerationCap { n, cap: self.cap });
        }
        let (ell, s) = (&vals.ell[..], vals.supply_here);
        let all = AgentSet::all(n);
        let mut best = f64::NEG_INFINITY;
        let mut arg = None;
        if !self.linear {
            for mask in 0..=all.0 {
                let shorts = AgentSet(mask);
                let value = self.quadratic_value(shorts, ell, s);
                if value > best {
                    best = value;
                    arg = Some((shorts, shorts.complement(n)));
                }
            }
        } else {
            for jmask in 0..=all.0 {
                let longs = AgentSet(jmask);
                let rest = longs.complement(n).0;
                let mut inner = f64::INFINITY;
                let mut inner_arg = None;
                // every submask of `rest`, including the empty one
                let mut sub = rest;
                loop {
                    let shorts = AgentSet(sub);
                    let value = match self.subset_value(shorts, longs, ell, s) {
                        Some(v) => Some(v),
                        None if s > 0.0 => Some(f64::NEG_INFINITY),
                        None => None,
                    };
                    if let Some(v) = value {
                        if v < inner {
                            inner = v;
                            inner_arg = Some((shorts, longs));
                        }
                    }
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & rest;
                }
                if inner > best && inner_arg.is_some() {
                    best = inner;
                    arg = inner_arg;
                }
            }
        }
        let theta = -best;
        Ok(self.finish(Mode::Full, vals, theta, arg))
    }

    fn finish(
        &self,
        mode: Mode,
        vals: &LocalValuations,
        theta: f64,
        fallback: Option<(AgentSet, AgentSet)>,
    ) -> ClearingResult {
        let (ell, s) = (&vals.ell[..], vals.supply_here);
        let mut demands = vec![0.0; ell.len()];
        let tie = self.allocate(mode, ell, theta, s, &mut demands);
        let hamiltonian = -theta;
        let sign = self.optimal_partition(ell, theta);
        let optimizer = match mode {
            Mode::Full => {
                let matches = self
                    .subset_value(sign.shorts, sign.longs, ell, s)
                    .is_some_and(|v| (v - hamiltonian).abs() <= 1e-9 * (1.0 + hamiltonian.abs()));
                if matches {
                    Some(sign)
                } else {
                    fallback.map(|(shorts, longs)| Partition {
                        shorts,
                        longs,
                        flat: AgentSet(!(shorts.0 | longs.0) & AgentSet::all(ell.len()).0),
                    })
                }
            }
            _ => Some(sign),
        };
        ClearingResult {
            theta,
            hamiltonian,
            optimizer,
            demands,
            tie,
        }
    }

    fn check_input(&self, vals: &LocalValuations) -> Result<()> {
        if vals.ell.len() != self.n() {
            return Err(Error::invalid(format!(
                "expected {} local valuations, got {}",
                self.n(),
                vals.ell.len()
            )));
        }
        if vals.ell.iter().any(|l| !l.is_finite()) || !vals.supply_here.is_finite() {
            return Err(Error::invalid("local valuations and supply must be finite"));
        }
        if vals.supply_here < 0.0 {
            return Err(Error::invalid("supply must be >= 0"));
        }
        Ok(())
    }
}

/// Root of the affine function through `(lo, g_lo)` and `(hi, g_hi)`, with `g_lo < 0 ≤ g_hi`.
#[inline]
fn segment_root(lo: f64, g_lo: f64, hi: f64, g_hi: f64) -> f64 {
    if g_hi == 0.0 {
        return hi;
    }
    let root = lo - g_lo * (hi - lo) / (g_hi - g_lo);
    root.clamp(lo, hi)
}

/// `(μ_I, Σ_I², κ_I)` for the short group `shorts` at `(t, x)`, with every other agent long.
pub fn subset_coefficients(shorts: AgentSet, t: f64, x: f64, spec: &MarketSpec) -> Result<SubsetCoefficients> {
    let kernel = ClearingKernel::for_spec(spec)?;
    let n = spec.n_agents();
    if shorts.0 & !AgentSet::all(n).0 != 0 {
        return Err(Error::invalid(format!("agent set {shorts} is not a subset of 0..{n}")));
    }
    let b: Vec<f64> = (0..n).map(|i| spec.drift(i, t, x)).collect();
    let var: Vec<f64> = (0..n).map(|i| spec.vol(i, t, x).powi(2)).collect();
    kernel.coefficients(shorts, shorts.complement(n), &b, &var, spec.supply_at(t, x))
}
