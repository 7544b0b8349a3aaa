//! Shortest register-initialization search.
//!
//! Breadth-first worklist over gadget sequences: pop a chain, try appending
//! every eligible gadget, keep the new chain iff its controlled register set
//! is new or the chain improves on the stored one. The result maps register
//! sets to the shortest chains that initialize them.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::regs::RegSet;
use crate::semantics::NextSource;

use super::compose::{ChainState, ControlledRegs};
use super::{ChainError, CompileCtx};

#[derive(Debug, Clone)]
pub struct SetRegChain {
    pub gadgets: Vec<usize>,
    pub controlled: ControlledRegs,
}

#[derive(Debug, Clone, Default)]
pub struct SetRegSearch {
    pub by_set: BTreeMap<RegSet, SetRegChain>,
}

impl SetRegSearch {
    /// Shortest stored chain whose controlled set covers `targets`.
    pub fn best_cover(&self, targets: RegSet) -> Option<&SetRegChain> {
        self.by_set
            .iter()
            .filter(|(set, _)| set.is_superset(targets))
            .map(|(_, chain)| chain)
            .min_by_key(|c| (c.gadgets.len(), c.controlled.set.len(), c.controlled.set))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SearchLimits {
    pub max_len: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits { max_len: 6 }
    }
}

/// Run the worklist over the whole catalog and keep every set relevant to
/// `targets`: subsets of the target set plus any supersets that cover it.
/// The search stops expanding once no chain could improve on the best cover
/// already found, which keeps the common compile path cheap.
pub fn shortest_setreg_chains(
    ctx: &CompileCtx,
    targets: RegSet,
    limits: SearchLimits,
) -> Result<SetRegSearch, ChainError> {
    let full = search_inner(ctx, limits, Some(targets))?;
    let covered = full.by_set.keys().any(|s| s.is_superset(targets));
    if !covered {
        return Err(ChainError::Unsatisfiable(targets));
    }
    let by_set = full
        .by_set
        .into_iter()
        .filter(|(set, _)| targets.is_superset(*set) || set.is_superset(targets))
        .collect();
    Ok(SetRegSearch { by_set })
}

/// The unrestricted map from register sets to shortest initializing chains.
///
/// The worklist is deduplicated by the chain's slot signature rather than by
/// the controlled set alone: two chains can control the same registers while
/// holding different slot-sharing residue, and only one of them may extend
/// to a larger set. Keying on the signature keeps the search exhaustive; the
/// result map still keeps one shortest chain per register set.
pub fn search_all(ctx: &CompileCtx, limits: SearchLimits) -> Result<SetRegSearch, ChainError> {
    search_inner(ctx, limits, None)
}

fn search_inner(
    ctx: &CompileCtx,
    limits: SearchLimits,
    stop_at_cover: Option<RegSet>,
) -> Result<SetRegSearch, ChainError> {
    // Appending is restricted to gadgets whose next address comes off the
    // stack; anything else cannot continue a ret chain. Gadgets that store
    // through registers stay out too: mid-chain their address registers
    // hold junk, and a wild write crashes the target.
    let candidates: Vec<usize> = ctx
        .gadget_order
        .iter()
        .copied()
        .filter(|&i| {
            matches!(ctx.gadgets[i].frame.next, NextSource::StackOffset(_))
                && !ctx.gadgets[i].writes_memory
        })
        .collect();
    if candidates.is_empty() {
        return Err(ChainError::MissingGadget("stack-linked gadgets".into()));
    }

    let mut by_set: BTreeMap<RegSet, SetRegChain> = BTreeMap::new();
    let mut seen_sig: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
    let mut cover_len: Option<usize> = None;
    queue.push_back(Vec::new());

    while let Some(chain) = queue.pop_front() {
        if chain.len() >= limits.max_len {
            continue;
        }
        // breadth-first order: once a covering chain exists, no strictly
        // longer chain can beat it
        if let Some(best) = cover_len {
            if chain.len() + 1 > best {
                break;
            }
        }
        for &g in &candidates {
            let mut new_chain = chain.clone();
            new_chain.push(g);

            let mut state = ChainState::new();
            for &gi in &new_chain {
                state.apply(ctx, gi)?;
            }
            let controlled = state.controlled();
            let sig = state.signature();

            let set = controlled.set;
            if let Some(targets) = stop_at_cover {
                if set.is_superset(targets) {
                    let len = new_chain.len();
                    cover_len = Some(cover_len.map_or(len, |b| b.min(len)));
                }
            }
            match by_set.get(&set) {
                Some(existing) if new_chain.len() >= existing.gadgets.len() => {}
                _ => {
                    by_set.insert(
                        set,
                        SetRegChain {
                            gadgets: new_chain.clone(),
                            controlled,
                        },
                    );
                }
            }
            let explore = match seen_sig.get(&sig) {
                None => true,
                Some(len) => new_chain.len() < *len,
            };
            if explore {
                seen_sig.insert(sig, new_chain.len());
                queue.push_back(new_chain);
            }
        }
    }

    Ok(SetRegSearch { by_set })
}
