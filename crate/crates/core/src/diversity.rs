//! Three-branch cooperative receive diversity for one source -> hub pair.
//!
//! Branches are the direct link and two decode-and-forward relay paths.
//! A relay path is only as good as its weaker hop, so its gain is the
//! minimum of the two hop gains.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{DenseTraceSet, LinkClass, Node};

/// Default switching threshold for switch-and-examine combining, in dB.
pub const DEFAULT_SWITCH_THRESHOLD_DB: f64 = -86.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Direct = 0,
    Relay1 = 1,
    Relay2 = 2,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Direct, Branch::Relay1, Branch::Relay2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Branch {
        Branch::ALL[i % 3]
    }

    /// Next branch in cyclic examination order.
    pub fn next(self) -> Branch {
        Branch::from_index(self.index() + 1)
    }

    pub fn label(self) -> &'static str {
        match self {
            Branch::Direct => "direct",
            Branch::Relay1 => "relay1",
            Branch::Relay2 => "relay2",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Policy {
    /// Direct link only.
    #[serde(rename = "DL")]
    Direct,
    /// Selection combining.
    #[serde(rename = "SC")]
    Selection,
    /// Switch-and-examine combining.
    #[serde(rename = "SwC")]
    SwitchExamine,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Direct, Policy::Selection, Policy::SwitchExamine];

    pub fn label(self) -> &'static str {
        match self {
            Policy::Direct => "DL",
            Policy::Selection => "SC",
            Policy::SwitchExamine => "SwC",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DL" | "dl" => Ok(Policy::Direct),
            "SC" | "sc" => Ok(Policy::Selection),
            "SwC" | "swc" | "SWC" => Ok(Policy::SwitchExamine),
            other => Err(Error::Config(format!(
                "unknown policy '{other}' (expected DL, SC or SwC)"
            ))),
        }
    }
}

/// Gain of a two-hop relay path.
pub fn two_hop_gain(h_sr: f64, h_rd: f64) -> f64 {
    h_sr.min(h_rd)
}

/// The two transceivers other than `source`, in table order.
pub fn relays_for(source: Node) -> Result<(Node, Node)> {
    if !source.is_transceiver() {
        return Err(Error::Role {
            node: source,
            what: "a source",
        });
    }
    let mut others = Node::TRANSCEIVERS.into_iter().filter(|&n| n != source);
    Ok((others.next().unwrap(), others.next().unwrap()))
}

/// Every (source, destination) pair that supports three branches: a
/// transceiver source and a receive-only destination. A transceiver
/// destination would double as one of the source's relays. `class`
/// filters on the direct link.
pub fn candidate_pairs(class: Option<LinkClass>) -> Vec<(Node, Node)> {
    Node::TRANSCEIVERS
        .into_iter()
        .flat_map(|s| {
            Node::ALL
                .into_iter()
                .filter(|d| !d.is_transceiver())
                .map(move |d| (s, d))
        })
        .filter(|&(s, d)| class.is_none_or(|c| LinkClass::of(s, d) == c))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchSet {
    source: Node,
    dest: Node,
    relays: [Node; 2],
    gains: [Vec<f64>; 3],
    delta_ms: u32,
}

impl BranchSet {
    /// Builds the direct and relayed branch series from measured traces,
    /// resolving unmeasured directions by reciprocity.
    pub fn build(traces: &DenseTraceSet, source: Node, dest: Node) -> Result<Self> {
        let (relay1, relay2) = relays_for(source)?;
        if dest == source {
            return Err(Error::Config(format!(
                "source and destination are both {source}"
            )));
        }
        if dest == relay1 || dest == relay2 {
            return Err(Error::RelayIsDestination { src: source, dest });
        }
        let direct = traces.series(source, dest)?.to_vec();
        let relayed = |relay: Node| -> Result<Vec<f64>> {
            let first = traces.series(source, relay)?;
            let second = traces.series(relay, dest)?;
            Ok(first
                .iter()
                .zip(second)
                .map(|(&a, &b)| two_hop_gain(a, b))
                .collect())
        };
        let via1 = relayed(relay1)?;
        let via2 = relayed(relay2)?;
        Ok(BranchSet {
            source,
            dest,
            relays: [relay1, relay2],
            gains: [direct, via1, via2],
            delta_ms: traces.delta_ms(),
        })
    }

    /// Assembles a branch set from precomputed series. Relays are derived
    /// from `source`.
    pub fn from_series(
        source: Node,
        dest: Node,
        direct: Vec<f64>,
        via_relay1: Vec<f64>,
        via_relay2: Vec<f64>,
        delta_ms: u32,
    ) -> Result<Self> {
        let (relay1, relay2) = relays_for(source)?;
        if direct.len() != via_relay1.len() || direct.len() != via_relay2.len() {
            return Err(Error::Config("branch series differ in length".into()));
        }
        if delta_ms == 0 {
            return Err(Error::Config("sample period must be positive".into()));
        }
        Ok(BranchSet {
            source,
            dest,
            relays: [relay1, relay2],
            gains: [direct, via_relay1, via_relay2],
            delta_ms,
        })
    }

    pub fn source(&self) -> Node {
        self.source
    }

    pub fn dest(&self) -> Node {
        self.dest
    }

    pub fn relay1(&self) -> Node {
        self.relays[0]
    }

    pub fn relay2(&self) -> Node {
        self.relays[1]
    }

    pub fn delta_ms(&self) -> u32 {
        self.delta_ms
    }

    pub fn len(&self) -> usize {
        self.gains[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn series(&self, branch: Branch) -> &[f64] {
        &self.gains[branch.index()]
    }

    fn at(&self, slot: usize) -> [f64; 3] {
        [
            self.gains[0][slot],
            self.gains[1][slot],
            self.gains[2][slot],
        ]
    }

    pub fn combine(&self, policy: Policy, threshold_db: f64) -> CombinedSeries {
        match policy {
            Policy::Direct => combine_dl(self),
            Policy::Selection => combine_sc(self),
            Policy::SwitchExamine => combine_swc(self, threshold_db),
        }
    }
}

/// Output of a combining policy: per-slot gain and the branch it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedSeries {
    pub policy: Policy,
    pub threshold_db: Option<f64>,
    pub gains: Vec<f64>,
    pub branches: Vec<Branch>,
    pub delta_ms: u32,
}

impl CombinedSeries {
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn switch_count(&self) -> usize {
        self.branches.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// CSV `slot,gain_db,branch`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "slot,gain_db,branch")?;
        for (slot, (g, b)) in self.gains.iter().zip(&self.branches).enumerate() {
            writeln!(out, "{slot},{g:.2},{b}")?;
        }
        Ok(())
    }
}

pub fn combine_dl(branches: &BranchSet) -> CombinedSeries {
    CombinedSeries {
        policy: Policy::Direct,
        threshold_db: None,
        gains: branches.series(Branch::Direct).to_vec(),
        branches: vec![Branch::Direct; branches.len()],
        delta_ms: branches.delta_ms,
    }
}

/// Per-slot maximum over the three branches. Ties go to the earlier
/// branch (direct, then relay 1, then relay 2).
pub fn combine_sc(branches: &BranchSet) -> CombinedSeries {
    let n = branches.len();
    let mut gains = Vec::with_capacity(n);
    let mut chosen = Vec::with_capacity(n);
    for slot in 0..n {
        let g = branches.at(slot);
        let mut best = Branch::Direct;
        for b in [Branch::Relay1, Branch::Relay2] {
            if g[b.index()] > g[best.index()] {
                best = b;
            }
        }
        gains.push(g[best.index()]);
        chosen.push(best);
    }
    CombinedSeries {
        policy: Policy::Selection,
        threshold_db: None,
        gains,
        branches: chosen,
        delta_ms: branches.delta_ms,
    }
}

/// Switch-and-examine state: the branch currently connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwcState {
    pub current: Branch,
}

impl Default for SwcState {
    fn default() -> Self {
        SwcState {
            current: Branch::Direct,
        }
    }
}

impl SwcState {
    /// One step of switch-and-examine. Stay while the current branch is at
    /// or above threshold; otherwise examine the next two branches in
    /// cyclic order and take the first that qualifies. When none does, the
    /// receiver ends on relay 2.
    pub fn step(&mut self, gains: [f64; 3], threshold_db: f64) -> Branch {
        let ok = |b: Branch| gains[b.index()] >= threshold_db;
        let b = self.current;
        self.current = if ok(b) {
            b
        } else if ok(b.next()) {
            b.next()
        } else if ok(b.next().next()) {
            b.next().next()
        } else {
            Branch::Relay2
        };
        self.current
    }
}

pub fn combine_swc(branches: &BranchSet, threshold_db: f64) -> CombinedSeries {
    let n = branches.len();
    let mut state = SwcState::default();
    let mut gains = Vec::with_capacity(n);
    let mut chosen = Vec::with_capacity(n);
    for slot in 0..n {
        let g = branches.at(slot);
        let b = state.step(g, threshold_db);
        gains.push(g[b.index()]);
        chosen.push(b);
    }
    CombinedSeries {
        policy: Policy::SwitchExamine,
        threshold_db: Some(threshold_db),
        gains,
        branches: chosen,
        delta_ms: branches.delta_ms,
    }
}

/// Branch switches per second of observed time.
pub fn switching_rate(series: &CombinedSeries) -> Result<f64> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Undefined(
            "switching rate needs at least two samples",
        ));
    }
    let span_s = (n - 1) as f64 * f64::from(series.delta_ms) / 1000.0;
    Ok(series.switch_count() as f64 / span_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::LinkKey;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    const T: f64 = DEFAULT_SWITCH_THRESHOLD_DB;

    fn set(d: Vec<f64>, r1: Vec<f64>, r2: Vec<f64>) -> BranchSet {
        BranchSet::from_series(Node::Hf, Node::La, d, r1, r2, 15).unwrap()
    }

    #[test]
    fn two_hop_is_min() {
        assert_eq!(two_hop_gain(-60.0, -75.0), -75.0);
        assert_eq!(two_hop_gain(-90.0, -90.0), -90.0);
        assert_eq!(two_hop_gain(-102.0, -50.0), -102.0);
    }

    #[test]
    fn relay_selection_in_table_order() {
        assert_eq!(relays_for(Node::Hf).unwrap(), (Node::NtbH, Node::Lw));
        assert_eq!(relays_for(Node::Lw).unwrap(), (Node::NtbH, Node::Hf));
        assert_eq!(relays_for(Node::NtbH).unwrap(), (Node::Lw, Node::Hf));
        assert!(matches!(
            relays_for(Node::Rw),
            Err(Error::Role { node: Node::Rw, .. })
        ));
    }

    fn full_traces(len: usize) -> DenseTraceSet {
        let traces: BTreeMap<LinkKey, Vec<f64>> = LinkKey::measurable()
            .into_iter()
            .enumerate()
            .map(|(i, k)| (k, (0..len).map(|t| -50.0 - i as f64 - t as f64).collect()))
            .collect();
        DenseTraceSet::new(15, "s", traces).unwrap()
    }

    #[test]
    fn build_branches_composes_hops() {
        let traces = full_traces(3);
        let b = BranchSet::build(&traces, Node::Hf, Node::La).unwrap();
        assert_eq!((b.relay1(), b.relay2()), (Node::NtbH, Node::Lw));
        let g = |a, c, t| traces.gain_at(a, c, t).unwrap();
        for t in 0..3 {
            assert_eq!(b.series(Branch::Direct)[t], g(Node::Hf, Node::La, t));
            assert_eq!(
                b.series(Branch::Relay1)[t],
                g(Node::Hf, Node::NtbH, t).min(g(Node::NtbH, Node::La, t))
            );
            assert_eq!(
                b.series(Branch::Relay2)[t],
                g(Node::Hf, Node::Lw, t).min(g(Node::Lw, Node::La, t))
            );
        }

        let b = BranchSet::build(&traces, Node::Lw, Node::NtbF).unwrap();
        assert_eq!((b.relay1(), b.relay2()), (Node::NtbH, Node::Hf));
        assert!(matches!(
            BranchSet::build(&traces, Node::Rw, Node::La),
            Err(Error::Role { .. })
        ));
        assert!(matches!(
            BranchSet::build(&traces, Node::Hf, Node::Lw),
            Err(Error::RelayIsDestination { .. })
        ));
    }

    #[test]
    fn build_branches_missing_hop() {
        let mut traces: BTreeMap<LinkKey, Vec<f64>> = BTreeMap::new();
        traces.insert(LinkKey::new(Node::Hf, Node::La).unwrap(), vec![-70.0]);
        let traces = DenseTraceSet::new(15, "s", traces).unwrap();
        assert!(matches!(
            BranchSet::build(&traces, Node::Hf, Node::La),
            Err(Error::MissingLink { .. })
        ));
    }

    #[test]
    fn candidate_pair_split() {
        let on = candidate_pairs(Some(LinkClass::OnBody));
        let off = candidate_pairs(Some(LinkClass::OffBody));
        assert_eq!(on.len(), 6);
        assert_eq!(off.len(), 6);
        assert_eq!(candidate_pairs(None).len(), 12);
        assert!(on.contains(&(Node::Hf, Node::La)));
        assert!(off.contains(&(Node::NtbH, Node::Hb)));
        assert!(off.contains(&(Node::Lw, Node::NtbF)));
        assert!(candidate_pairs(None)
            .iter()
            .all(|&(s, d)| s.is_transceiver() && !d.is_transceiver()));
    }

    #[test]
    fn dl_is_direct() {
        let b = set(vec![-80.0, -90.0], vec![-10.0, -10.0], vec![-10.0, -10.0]);
        let c = combine_dl(&b);
        assert_eq!(c.gains, vec![-80.0, -90.0]);
        assert_eq!(c.branches, vec![Branch::Direct; 2]);
        assert!(combine_dl(&set(vec![], vec![], vec![])).is_empty());
    }

    #[test]
    fn sc_takes_max_with_tie_order() {
        let b = set(
            vec![-80.0, -70.0, -102.0],
            vec![-90.0, -70.0, -102.0],
            vec![-70.0, -75.0, -102.0],
        );
        let c = combine_sc(&b);
        assert_eq!(c.gains, vec![-70.0, -70.0, -102.0]);
        assert_eq!(
            c.branches,
            vec![Branch::Relay2, Branch::Direct, Branch::Direct]
        );
    }

    #[test]
    fn swc_examples() {
        let mut s = SwcState::default();
        assert_eq!(s.step([-80.0, -70.0, -90.0], T), Branch::Direct);

        let mut s = SwcState {
            current: Branch::Direct,
        };
        assert_eq!(s.step([-90.0, -70.0, -90.0], T), Branch::Relay1);

        let mut s = SwcState {
            current: Branch::Relay1,
        };
        assert_eq!(s.step([-90.0, -88.0, -89.0], T), Branch::Relay2);

        // threshold is inclusive
        let mut s = SwcState::default();
        assert_eq!(s.step([-86.0, -50.0, -50.0], T), Branch::Direct);
    }

    #[test]
    fn swc_extreme_thresholds() {
        let b = set(
            vec![-100.0, -60.0, -90.0],
            vec![-50.0, -95.0, -70.0],
            vec![-70.0, -80.0, -99.0],
        );
        let never = combine_swc(&b, f64::NEG_INFINITY);
        assert_eq!(never.branches, vec![Branch::Direct; 3]);
        assert_eq!(never.gains, b.series(Branch::Direct));
        let always = combine_swc(&b, f64::INFINITY);
        assert_eq!(always.branches, vec![Branch::Relay2; 3]);
        assert_eq!(always.threshold_db, Some(f64::INFINITY));
    }

    #[test]
    fn switching_rate_counts() {
        use Branch::*;
        let mk = |branches: Vec<Branch>| CombinedSeries {
            policy: Policy::SwitchExamine,
            threshold_db: Some(T),
            gains: vec![0.0; branches.len()],
            branches,
            delta_ms: 15,
        };
        assert_eq!(switching_rate(&mk(vec![Direct; 4])).unwrap(), 0.0);
        let r = switching_rate(&mk(vec![Direct, Relay1, Direct, Relay1])).unwrap();
        assert!((r - 3.0 / 0.045).abs() < 1e-9, "{r}");
        assert!(matches!(
            switching_rate(&mk(vec![Direct])),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn combined_csv() {
        let b = set(vec![-80.0], vec![-70.0], vec![-90.0]);
        let mut buf = Vec::new();
        combine_sc(&b).write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "slot,gain_db,branch\n0,-70.00,relay1\n"
        );
    }

    fn arb_branches() -> impl Strategy<Value = BranchSet> {
        (1usize..60).prop_flat_map(|n| {
            let col = || {
                proptest::collection::vec(
                    prop_oneof![(-110i32..=0).prop_map(f64::from), Just(-86.0)],
                    n,
                )
            };
            (col(), col(), col()).prop_map(|(d, r1, r2)| set(d, r1, r2))
        })
    }

    proptest! {
        #[test]
        fn combining_invariants(b in arb_branches(), threshold in -100.0f64..-60.0) {
            let sc = combine_sc(&b);
            let swc = combine_swc(&b, threshold);
            let dl = combine_dl(&b);
            for t in 0..b.len() {
                let g = b.at(t);
                prop_assert_eq!(sc.gains[t], g[0].max(g[1]).max(g[2]));
                prop_assert!(swc.gains[t] <= sc.gains[t]);
                prop_assert!(dl.gains[t] <= sc.gains[t]);
                for c in [&sc, &swc, &dl] {
                    prop_assert_eq!(c.gains[t], b.series(c.branches[t])[t]);
                }
            }
        }

        #[test]
        fn two_hop_properties(a in -110.0f64..0.0, b in -110.0f64..0.0) {
            prop_assert_eq!(two_hop_gain(a, b), two_hop_gain(b, a));
            prop_assert_eq!(two_hop_gain(a, a), a);
            prop_assert!(two_hop_gain(a, b) <= a && two_hop_gain(a, b) <= b);
        }
    }
}
